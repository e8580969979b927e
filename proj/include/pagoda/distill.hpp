#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pagoda/datasets.hpp"
#include "pagoda/diffusion.hpp"
#include "pagoda/metrics.hpp"
#include "pagoda/optim.hpp"
#include "pagoda/pairs.hpp"

namespace pagoda {

// ---------------------------------------------------------------------------
// One-step generator: z -> trunk MLP -> per-position features -> linear head.
// Latent dimension equals the base data dimension. The trunk/head split and
// the multi-channel feature output are what Stage 3 growing relies on.
// ---------------------------------------------------------------------------

struct GeneratorConfig {
    std::vector<std::size_t> hidden = {64, 64};
    std::size_t feat_width = 8; // channels carried between trunk, stages and head
    Activation act = Activation::silu;
    std::size_t cond_vocab = 0;
    std::size_t cond_embed = 4;
    bool omega_cond = false;

    nlohmann::json to_json() const;
    static GeneratorConfig from_json(const nlohmann::json& j);
};

class Generator {
public:
    Generator(std::size_t dim, Layout layout, std::size_t grid_h, std::size_t grid_w,
              GeneratorConfig cfg, Rng& rng);

    /// (B, dim) latent -> (B, dim) sample. `omega` empty unless omega_cond.
    Var forward(const Var& z, const std::vector<int>& c = {},
                const std::vector<double>& omega = {}) const;
    Tensor generate(const Tensor& z, const std::vector<int>& c = {},
                    const std::vector<double>& omega = {}) const;
    /// Trunk output as (B, positions*feat_width), before the head.
    Var features(const Var& z, const std::vector<int>& c = {},
                 const std::vector<double>& omega = {}) const;
    Var apply_head(const Var& feats, std::size_t positions) const;

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    std::size_t dim() const { return dim_; }
    std::size_t positions() const { return positions_; }
    std::size_t channels() const { return channels_; }
    std::size_t feat_width() const { return cfg_.feat_width; }
    Layout layout() const { return layout_; }
    std::size_t grid_h() const { return grid_h_; }
    std::size_t grid_w() const { return grid_w_; }
    const GeneratorConfig& config() const { return cfg_; }

    Var head_w() const { return head_w_; }
    Var head_b() const { return head_b_; }

    /// Overwrite weights so the generator computes exactly x = M z + b
    /// (requires a trunk with no hidden layers). Test/oracle hook.
    void set_linear(const Tensor& M, const std::vector<double>& bias);

    /// Copy teacher tensors into same-shaped generator tensors (by layer
    /// position). Layers that do not match stay at their random init.
    std::size_t init_from_teacher(const ParamSet& teacher);

    std::size_t flops_per_sample() const;
    nlohmann::json arch_json() const;
    static Generator from_arch(const nlohmann::json& arch, Rng& rng);

private:
    std::size_t dim_, positions_, channels_;
    Layout layout_;
    std::size_t grid_h_ = 0, grid_w_ = 0;
    GeneratorConfig cfg_;
    ParamSet params_;
    Mlp trunk_;
    Var head_w_, head_b_;
    Var cond_embed_;
};

// ---------------------------------------------------------------------------
// Discriminator with the vanilla-GAN link f(u) = -log(1+e^-u). The link's
// f'(0) > 0, f''(0) < 0 signs are checked at construction.
// ---------------------------------------------------------------------------

struct DiscriminatorConfig {
    std::vector<std::size_t> hidden = {64, 64};
    Activation act = Activation::silu;
    std::size_t cond_vocab = 0;
    std::size_t cond_embed = 4;
    bool omega_cond = false;
};

class Discriminator {
public:
    Discriminator(std::size_t dim, DiscriminatorConfig cfg, Rng& rng);

    /// Raw logits (B,).
    Var logits(const Var& x, const std::vector<int>& c = {},
               const std::vector<double>& omega = {}) const;

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    std::size_t dim() const { return dim_; }

    static double link(double u);        // f(u) = -log(1+e^-u)
    static double link_d1(double u);     // f'
    static double link_d2(double u);     // f''

private:
    std::size_t dim_;
    DiscriminatorConfig cfg_;
    ParamSet params_;
    Mlp mlp_;
    Var cond_embed_;
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean over the batch of squared L2 reconstruction errors ||x - G(z)||^2.
Var recon_loss(const Generator& g, const Tensor& z, const Tensor& x,
               const std::vector<int>& c = {}, const std::vector<double>& omega = {});

/// E_data[log D(x)] + E_prior[log(1 - D(G(z)))] with D = sigmoid(logit).
Var adv_loss(const Generator& g, const Discriminator& d, const Tensor& real, const Tensor& prior,
             const std::vector<int>& c_real = {}, const std::vector<int>& c_fake = {},
             const std::vector<double>& omega_real = {}, const std::vector<double>& omega_fake = {});

/// Noise-to-data distillation baseline: mean ||DDIM(teacher, z) - G(z)||^2.
Var noise_to_data_distill_loss(const Generator& g, const ScoreModel& teacher, const Tensor& prior,
                               const TimeGrid& grid);

/// lambda = coeff * grad_rec_sq / grad_adv_sq clamped to [min,max]; the
/// degenerate grad_adv_sq < 1e-12 case returns the clamp max.
double adaptive_lambda(double grad_rec_sq, double grad_adv_sq, double coeff, double clamp_min = 1e-6,
                       double clamp_max = 10.0);

// ---------------------------------------------------------------------------
// Stage-2 training
// ---------------------------------------------------------------------------

enum class UpdateOrder { disc_first, gen_first };

struct Stage2Config {
    std::size_t steps = 2000;
    std::size_t batch = 64;
    double adaptive_coeff = 0.2;
    double lambda_clamp_min = 1e-6;
    double lambda_clamp_max = 10.0;
    std::optional<double> lambda_fixed; // overrides adaptive weighting when set
    OptConfig opt_g = {OptKind::adam, 1e-3};
    OptConfig opt_d = {OptKind::adam, 1e-3};
    double ema_decay = 0.999;
    double pair_fraction = 1.0;
    UpdateOrder update_order = UpdateOrder::disc_first;
    GeneratorConfig gen;
    DiscriminatorConfig disc;
    bool init_from_teacher = true;
    bool cosine_lr_decay = true;
    std::size_t eval_every = 0;    // 0 disables W1 eval rows
    std::size_t eval_samples = 2000;
    bool log_wallclock = false;    // keeps metrics byte-reproducible by default
};

struct Stage2StepStats {
    double loss_rec = 0.0;
    double loss_adv = 0.0;
    double lambda = 0.0;
    double grad_rec_sq = 0.0;
    double grad_adv_sq = 0.0;
};

/// One alternating update. Default order: D ascends L_adv against the
/// pre-step generator, then G descends L_rec + lambda * L_adv.
Stage2StepStats stage2_step(Generator& g, Discriminator& d, const Tensor& pair_z,
                            const Tensor& pair_x, const std::vector<int>& pair_c,
                            const Tensor& real, const std::vector<int>& real_c, const Tensor& prior,
                            const std::vector<int>& prior_c, const Stage2Config& cfg,
                            OptimizerState& opt_g, OptimizerState& opt_d);

struct Stage2Result {
    std::shared_ptr<Generator> generator;
    std::vector<Stage2StepStats> history;
};

Stage2Result train_stage2(const ScoreModel& teacher, const PairSet& pairs, const ToyDataset& data,
                          const Stage2Config& cfg, Rng& rng, MetricsLog* log = nullptr,
                          const ParamSet* teacher_params = nullptr);

// Generator checkpoint io (PGDA format with the architecture in the meta).
void save_generator(const std::string& path, const Generator& g, const nlohmann::json& extra_meta = {});
struct LoadedGenerator {
    std::shared_ptr<Generator> generator;
    nlohmann::json meta;
};
LoadedGenerator load_generator(const std::string& path);

} // namespace pagoda
