#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "pagoda/distill.hpp"

namespace pagoda {

/// One resolution doubling: two residual conv blocks followed by a stride-2
/// transposed-conv upsampler, all at the shared feature width. The residual
/// blocks start as exact identities (zero second conv) and the upsampler as
/// exact nearest-neighbor replication, so a freshly grown generator matches
/// its parent through the downsampler.
struct GrowthStage {
    Var r1_k1, r1_b1, r1_k2, r1_b2;
    Var r2_k1, r2_b1, r2_k2, r2_b2;
    Var up_k, up_b;
};

struct Stage3Config {
    double lambda = 1.0; // fixed adversarial weight; no adaptive weighting in Stage 3
    bool use_recon = true; // false ablates the reconstruction anchor
    std::size_t steps = 1500;
    std::size_t batch = 64;
    OptConfig opt_g = {OptKind::adam, 1e-3};
    OptConfig opt_d = {OptKind::adam, 1e-3};
    double ema_decay = 0.999;
    DiscriminatorConfig disc;
    bool near_identity_init = true;
    bool cosine_lr_decay = true;
    bool reuse_discriminator = false;
    std::size_t eval_every = 0;
    bool log_wallclock = false;
};

class GrowableGenerator {
public:
    explicit GrowableGenerator(std::shared_ptr<Generator> base);

    /// Appends log2(factor) growth stages (factor in {2,4,8}). Freezes
    /// everything except the new stages, the previously highest-resolution
    /// block (last stage, or the Stage-2 head at first growth) and the head.
    void grow(std::size_t factor);

    Var forward(const Var& z, const std::vector<int>& c = {},
                const std::vector<double>& omega = {}) const;
    Tensor generate(const Tensor& z, const std::vector<int>& c = {},
                    const std::vector<double>& omega = {}) const;
    /// Output of the Stage-2 generator as it was at the first grow() call
    /// (frozen trunk + head snapshot); reference for consistency checks.
    Tensor base_output(const Tensor& z, const std::vector<int>& c = {},
                       const std::vector<double>& omega = {}) const;

    Generator& base() { return *base_; }
    const Generator& base() const { return *base_; }
    std::size_t n_stages() const { return stages_.size(); }
    std::size_t out_dim() const;
    std::size_t out_h() const; // grid layout only
    std::size_t out_w() const;
    /// Downsampling operator mapping the grown output back to base resolution.
    DownsampleOp to_base_op() const;

    ParamSet& stage_params() { return stage_params_; }
    const ParamSet& stage_params() const { return stage_params_; }

    /// Serialized bytes of the frozen trunk parameters; must be invariant
    /// under any amount of Stage-3 training.
    std::string trunk_bytes() const;

    std::size_t flops_per_sample() const;
    /// Cost of a monolithic generator of equal width built directly at the
    /// grown resolution (same trunk hidden widths).
    std::size_t monolithic_flops_per_sample() const;

    nlohmann::json arch_json() const;

    void save(const std::string& path, const nlohmann::json& extra_meta = {}) const;
    static GrowableGenerator load(const std::string& path, Rng& rng);
    /// Restore weights into this architecture; a checkpoint with more stage
    /// manifests than this generator has stages is rejected.
    void restore(const struct Checkpoint& ck);

private:
    GrowthStage make_stage(std::size_t idx);
    Var apply_stage(const GrowthStage& s, const Var& feats, std::size_t len_h,
                    std::size_t len_w) const;

    std::shared_ptr<Generator> base_;
    std::vector<GrowthStage> stages_;
    ParamSet stage_params_;
    std::optional<Tensor> head_w_snapshot_, head_b_snapshot_;
    Rng init_rng_{0xC0FFEE};
};

Var stage3_recon_loss(const GrowableGenerator& g, const Tensor& z, const Tensor& x_high,
                      const std::vector<int>& c = {});
Var stage3_adv_loss(const GrowableGenerator& g, const Discriminator& d_high, const Tensor& real_high,
                    const Tensor& prior, const std::vector<int>& c_real = {},
                    const std::vector<int>& c_fake = {});

/// Pearson correlation between downsample(G'(z)) and the pre-growth base
/// output over a latent batch (the object-consistency diagnostic).
double consistency_correlation(const GrowableGenerator& g, const Tensor& z);

struct Stage3Result {
    std::vector<Stage2StepStats> history; // loss_rec/loss_adv/lambda reused
    std::vector<double> consistency_trace;
};

Stage3Result train_stage3(GrowableGenerator& g, const ScoreModel& teacher, const PairSet& pairs,
                          const ToyDataset& data, const Stage3Config& cfg, Rng& rng,
                          MetricsLog* log = nullptr, Discriminator* reuse_d = nullptr);

} // namespace pagoda
