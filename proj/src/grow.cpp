#include "pagoda/grow.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "pagoda/checkpoint.hpp"

namespace pagoda {

GrowableGenerator::GrowableGenerator(std::shared_ptr<Generator> base) : base_(std::move(base)) {}

namespace {

Tensor identity_conv_kernel_1d(std::size_t f) {
    // (3,F,F), center tap = identity
    Tensor k({3, f, f});
    for (std::size_t c = 0; c < f; ++c) k.data[(1 * f + c) * f + c] = 1.0;
    return k;
}

Tensor nn_up_kernel_1d(std::size_t f) {
    // (4,F,F): taps 1 and 2 identity -> exact nearest-neighbor replication
    Tensor k({4, f, f});
    for (std::size_t c = 0; c < f; ++c) {
        k.data[(1 * f + c) * f + c] = 1.0;
        k.data[(2 * f + c) * f + c] = 1.0;
    }
    return k;
}

Tensor identity_conv_kernel_2d(std::size_t f) {
    Tensor k({3, 3, f, f});
    for (std::size_t c = 0; c < f; ++c) k.data[((1 * 3 + 1) * f + c) * f + c] = 1.0;
    return k;
}

Tensor nn_up_kernel_2d(std::size_t f) {
    Tensor k({4, 4, f, f});
    for (std::size_t kh = 1; kh <= 2; ++kh)
        for (std::size_t kw = 1; kw <= 2; ++kw)
            for (std::size_t c = 0; c < f; ++c) k.data[((kh * 4 + kw) * f + c) * f + c] = 1.0;
    return k;
}

} // namespace

GrowthStage GrowableGenerator::make_stage(std::size_t idx) {
    std::size_t f = base_->feat_width();
    bool grid = base_->layout() == Layout::grid_2d;
    std::string p = "stage" + std::to_string(idx) + ".";
    auto conv_shape = grid ? std::vector<std::size_t>{3, 3, f, f} : std::vector<std::size_t>{3, f, f};
    auto up_shape = grid ? std::vector<std::size_t>{4, 4, f, f} : std::vector<std::size_t>{4, f, f};

    // The second conv of each residual block is zero, so the block is an
    // exact identity at init no matter how the first conv starts; a noisy
    // identity there gives the block a live gradient path from step 0.
    auto first_kernel = [&]() {
        Tensor t = init_rng_.normal_tensor(conv_shape, 0.0, 0.2 / std::sqrt(static_cast<double>(f)));
        Tensor id = grid ? identity_conv_kernel_2d(f) : identity_conv_kernel_1d(f);
        t += id;
        return t;
    };

    GrowthStage s;
    s.r1_k1 = stage_params_.add(p + "r1.k1", first_kernel());
    s.r1_b1 = stage_params_.add(p + "r1.b1", Tensor({f}));
    s.r1_k2 = stage_params_.add(p + "r1.k2", Tensor(conv_shape)); // zero: block starts as identity
    s.r1_b2 = stage_params_.add(p + "r1.b2", Tensor({f}));
    s.r2_k1 = stage_params_.add(p + "r2.k1", first_kernel());
    s.r2_b1 = stage_params_.add(p + "r2.b1", Tensor({f}));
    s.r2_k2 = stage_params_.add(p + "r2.k2", Tensor(conv_shape));
    s.r2_b2 = stage_params_.add(p + "r2.b2", Tensor({f}));
    s.up_k = stage_params_.add(p + "up.k", grid ? nn_up_kernel_2d(f) : nn_up_kernel_1d(f));
    s.up_b = stage_params_.add(p + "up.b", Tensor({f}));
    return s;
}

void GrowableGenerator::grow(std::size_t factor) {
    std::size_t doublings;
    switch (factor) {
        case 2: doublings = 1; break;
        case 4: doublings = 2; break;
        case 8: doublings = 3; break;
        default: throw std::invalid_argument("grow: factor must be one of 2, 4, 8");
    }
    if (stages_.empty()) {
        head_w_snapshot_ = base_->head_w()->value;
        head_b_snapshot_ = base_->head_b()->value;
    }

    // Freeze everything, then unfreeze the new blocks, the previously
    // highest-resolution block, and the output head.
    base_->params().set_all_trainable(false);
    stage_params_.set_all_trainable(false);
    std::size_t prev_last = stages_.size();
    if (prev_last > 0)
        stage_params_.set_trainable_by_prefix("stage" + std::to_string(prev_last - 1) + ".", true);
    base_->params().set_trainable_by_prefix("head.", true);
    for (std::size_t i = 0; i < doublings; ++i) {
        std::size_t idx = stages_.size();
        stages_.push_back(make_stage(idx));
        stage_params_.set_trainable_by_prefix("stage" + std::to_string(idx) + ".", true);
    }
}

std::size_t GrowableGenerator::out_dim() const {
    std::size_t scale = std::size_t{1} << stages_.size();
    if (base_->layout() == Layout::grid_2d) return base_->dim() * scale * scale;
    return base_->dim() * scale;
}

std::size_t GrowableGenerator::out_h() const { return base_->grid_h() << stages_.size(); }
std::size_t GrowableGenerator::out_w() const { return base_->grid_w() << stages_.size(); }

DownsampleOp GrowableGenerator::to_base_op() const {
    DownsampleOp op;
    op.kind = DownsampleOp::Kind::average_pool;
    op.layout = base_->layout();
    if (op.layout == Layout::grid_2d) {
        op.factor = std::size_t{1} << stages_.size();
        op.grid_h = out_h();
        op.grid_w = out_w();
        op.channels = base_->channels();
    } else {
        op.factor = std::size_t{1} << stages_.size();
    }
    return op;
}

Var GrowableGenerator::apply_stage(const GrowthStage& s, const Var& feats, std::size_t len_h,
                                   std::size_t len_w) const {
    Activation act = base_->config().act;
    if (base_->layout() == Layout::grid_2d) {
        Var h = feats;
        h = add(h, conv2d(apply_activation(act, conv2d(h, s.r1_k1, s.r1_b1)), s.r1_k2, s.r1_b2));
        h = add(h, conv2d(apply_activation(act, conv2d(h, s.r2_k1, s.r2_b1)), s.r2_k2, s.r2_b2));
        return conv_transpose2d_x2(h, s.up_k, s.up_b);
    }
    (void)len_h;
    (void)len_w;
    Var h = feats;
    h = add(h, conv1d(apply_activation(act, conv1d(h, s.r1_k1, s.r1_b1)), s.r1_k2, s.r1_b2));
    h = add(h, conv1d(apply_activation(act, conv1d(h, s.r2_k1, s.r2_b1)), s.r2_k2, s.r2_b2));
    return conv_transpose1d_x2(h, s.up_k, s.up_b);
}

Var GrowableGenerator::forward(const Var& z, const std::vector<int>& c,
                               const std::vector<double>& omega) const {
    std::size_t b = z->value.dim(0);
    std::size_t f = base_->feat_width();
    Var h = base_->features(z, c, omega);
    if (base_->layout() == Layout::grid_2d) {
        std::size_t hh = base_->grid_h(), ww = base_->grid_w();
        h = reshape(h, {b, hh, ww, f});
        for (const auto& s : stages_) {
            h = apply_stage(s, h, hh, ww);
            hh *= 2;
            ww *= 2;
        }
        h = reshape(h, {b, hh * ww, f});
        return base_->apply_head(h, hh * ww);
    }
    std::size_t len = base_->positions();
    h = reshape(h, {b, len, f});
    for (const auto& s : stages_) {
        h = apply_stage(s, h, len, 1);
        len *= 2;
    }
    h = reshape(h, {b, len, f});
    return base_->apply_head(h, len);
}

Tensor GrowableGenerator::generate(const Tensor& z, const std::vector<int>& c,
                                   const std::vector<double>& omega) const {
    return forward(constant(z), c, omega)->value;
}

Tensor GrowableGenerator::base_output(const Tensor& z, const std::vector<int>& c,
                                      const std::vector<double>& omega) const {
    Var feats = base_->features(constant(z), c, omega);
    std::size_t b = z.dim(0), n = base_->positions(), f = base_->feat_width();
    const Tensor& hw = head_w_snapshot_ ? *head_w_snapshot_ : base_->head_w()->value;
    const Tensor& hb = head_b_snapshot_ ? *head_b_snapshot_ : base_->head_b()->value;
    Tensor out({b, n * base_->channels()});
    for (std::size_t r = 0; r < b; ++r)
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t ch = 0; ch < base_->channels(); ++ch) {
                double s = hb[ch];
                for (std::size_t j = 0; j < f; ++j)
                    s += feats->value.data[(r * n + p) * f + j] * hw.data[j * base_->channels() + ch];
                out.data[r * n * base_->channels() + p * base_->channels() + ch] = s;
            }
    return out;
}

std::string GrowableGenerator::trunk_bytes() const {
    std::string out;
    for (const auto& e : base_->params().entries()) {
        if (e.name.rfind("trunk.", 0) != 0) continue;
        out += e.name;
        out.append(reinterpret_cast<const char*>(e.var->value.data.data()),
                   8 * e.var->value.data.size());
    }
    return out;
}

std::size_t GrowableGenerator::flops_per_sample() const {
    std::size_t f = base_->feat_width();
    std::size_t flops = base_->flops_per_sample() - 2 * base_->positions() * f * base_->channels();
    bool grid = base_->layout() == Layout::grid_2d;
    std::size_t n = base_->positions();
    for (std::size_t s = 0; s < stages_.size(); ++s) {
        std::size_t taps = grid ? 9 : 3, up_taps = grid ? 16 : 4;
        flops += 4 * taps * f * f * n * 2; // two residual blocks, two convs each
        flops += 2 * up_taps * f * f * n;  // upsampler
        n *= grid ? 4 : 2;
    }
    flops += 2 * n * f * base_->channels(); // head at the final resolution
    return flops;
}

std::size_t GrowableGenerator::monolithic_flops_per_sample() const {
    // Equal width and depth, but every block evaluated at the final
    // resolution: trunk producing n_high * F features plus the same number
    // of residual blocks, all at n_high positions.
    std::size_t scale = std::size_t{1} << stages_.size();
    std::size_t n_high = base_->layout() == Layout::grid_2d
                             ? base_->positions() * scale * scale
                             : base_->positions() * scale;
    std::size_t d_out = n_high * base_->channels();
    std::size_t f = base_->feat_width();
    bool grid = base_->layout() == Layout::grid_2d;
    std::size_t taps = grid ? 9 : 3;
    std::size_t flops = 0, prev = d_out;
    for (auto h : base_->config().hidden) {
        flops += 2 * prev * h;
        prev = h;
    }
    flops += 2 * prev * n_high * f;
    flops += stages_.size() * 4 * taps * f * f * n_high * 2; // residual blocks at full res
    flops += 2 * n_high * f * base_->channels();
    return flops;
}

nlohmann::json GrowableGenerator::arch_json() const {
    nlohmann::json j;
    j["base"] = base_->arch_json();
    j["n_stages"] = stages_.size();
    return j;
}

void GrowableGenerator::save(const std::string& path, const nlohmann::json& extra_meta) const {
    // Base params plus per-stage manifests in one PGDA container.
    ParamSet merged;
    for (const auto& e : base_->params().entries()) {
        merged.add(e.name, e.var->value, e.trainable);
        if (e.ema) merged.at(e.name).ema = e.ema;
    }
    for (const auto& e : stage_params_.entries()) {
        merged.add(e.name, e.var->value, e.trainable);
        if (e.ema) merged.at(e.name).ema = e.ema;
    }
    nlohmann::json meta = {{"kind", "growable_generator"}, {"arch", arch_json()}};
    if (head_w_snapshot_) {
        meta["head_snapshot_w"] = head_w_snapshot_->data;
        meta["head_snapshot_b"] = head_b_snapshot_->data;
    }
    if (!extra_meta.is_null() && !extra_meta.empty())
        for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it) meta[it.key()] = it.value();
    save_checkpoint(path, merged, meta);
}

void GrowableGenerator::restore(const Checkpoint& ck) {
    for (const auto& [name, t] : ck.tensors) {
        (void)t;
        if (name.rfind("stage", 0) != 0 || name.find(".ema") != std::string::npos) continue;
        if (!stage_params_.has(name))
            throw std::runtime_error(
                "checkpoint stage manifest '" + name +
                "' does not fit this architecture: the file was grown further (" +
                std::to_string(ck.meta["arch"]["n_stages"].get<std::size_t>()) +
                " stages) than this generator (" + std::to_string(stages_.size()) + ")");
    }
    restore_params(base_->params(), ck);
    restore_params(stage_params_, ck);
    if (ck.meta.contains("head_snapshot_w")) {
        auto w = ck.meta["head_snapshot_w"].get<std::vector<double>>();
        auto b = ck.meta["head_snapshot_b"].get<std::vector<double>>();
        head_w_snapshot_ = Tensor(base_->head_w()->value.shape, std::move(w));
        head_b_snapshot_ = Tensor(base_->head_b()->value.shape, std::move(b));
    }
}

GrowableGenerator GrowableGenerator::load(const std::string& path, Rng& rng) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.meta.value("kind", "") != "growable_generator")
        throw std::runtime_error("not a growable generator checkpoint: " + path);
    auto base = std::make_shared<Generator>(Generator::from_arch(ck.meta["arch"]["base"], rng));
    GrowableGenerator g(std::move(base));
    std::size_t n_stages = ck.meta["arch"]["n_stages"];
    for (std::size_t i = 0; i < n_stages; ++i) g.stages_.push_back(g.make_stage(i));
    g.restore(ck);
    return g;
}

Var stage3_recon_loss(const GrowableGenerator& g, const Tensor& z, const Tensor& x_high,
                      const std::vector<int>& c) {
    if (z.rank() != 2 || z.dim(0) == 0) throw std::invalid_argument("stage3_recon_loss: empty batch");
    if (x_high.rank() != 2 || x_high.dim(1) != g.out_dim())
        throw std::invalid_argument("stage3_recon_loss: x_high dim " +
                                    std::to_string(x_high.rank() == 2 ? x_high.dim(1) : 0) +
                                    " != generator output dim " + std::to_string(g.out_dim()));
    Var xhat = g.forward(constant(z), c);
    Var diff = sub(constant(x_high), xhat);
    return mean(sum_rows(square(diff)));
}

Var stage3_adv_loss(const GrowableGenerator& g, const Discriminator& d_high, const Tensor& real_high,
                    const Tensor& prior, const std::vector<int>& c_real,
                    const std::vector<int>& c_fake) {
    if (real_high.rank() != 2 || real_high.dim(0) == 0 || prior.rank() != 2 || prior.dim(0) == 0)
        throw std::invalid_argument("stage3_adv_loss: empty batch");
    if (d_high.dim() != g.out_dim())
        throw std::invalid_argument("stage3_adv_loss: discriminator dim != high-res dim");
    Var real_term = mean(neg(softplus(neg(d_high.logits(constant(real_high), c_real)))));
    Var fake = g.forward(constant(prior), c_fake);
    Var fake_term = mean(neg(softplus(d_high.logits(fake, c_fake))));
    return add(real_term, fake_term);
}

double consistency_correlation(const GrowableGenerator& g, const Tensor& z) {
    Tensor high = g.generate(z);
    Tensor low = downsample(g.to_base_op(), high);
    Tensor ref = g.base_output(z);
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < low.size(); ++i) {
        ma += low[i];
        mb += ref[i];
    }
    ma /= static_cast<double>(low.size());
    mb /= static_cast<double>(ref.size());
    double cab = 0, ca = 0, cb = 0;
    for (std::size_t i = 0; i < low.size(); ++i) {
        cab += (low[i] - ma) * (ref[i] - mb);
        ca += (low[i] - ma) * (low[i] - ma);
        cb += (ref[i] - mb) * (ref[i] - mb);
    }
    if (ca <= 0 || cb <= 0) return 0.0;
    return cab / std::sqrt(ca * cb);
}

Stage3Result train_stage3(GrowableGenerator& g, const ScoreModel& teacher, const PairSet& pairs,
                          const ToyDataset& data, const Stage3Config& cfg, Rng& rng,
                          MetricsLog* log, Discriminator* reuse_d) {
    if (g.n_stages() == 0) throw std::logic_error("train_stage3: grow() must be called first");
    if (pairs.dim_high != g.out_dim())
        throw std::invalid_argument("train_stage3: pair x_high dim != grown output dim");

    Stage3Result res;
    std::optional<Discriminator> local_d;
    Discriminator* d = reuse_d;
    if (!d || !cfg.reuse_discriminator) {
        local_d.emplace(g.out_dim(), cfg.disc, rng);
        d = &*local_d;
    }
    OptimizerState opt_g(cfg.opt_g), opt_d(cfg.opt_d);

    Rng probe_rng(271828);
    Tensor probe_z = prior_sample(teacher.process, g.base().dim(), 100, probe_rng);

    std::size_t n_pairs = pairs.records.size();
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        auto t0 = std::chrono::steady_clock::now();
        if (cfg.cosine_lr_decay) {
            double f = 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                             static_cast<double>(cfg.steps)));
            opt_g.set_lr(cfg.opt_g.lr * f);
            opt_d.set_lr(cfg.opt_d.lr * f);
        }
        std::size_t b = std::min(cfg.batch, n_pairs);
        Tensor pz({b, pairs.dim_low}), px({b, pairs.dim_high});
        for (std::size_t i = 0; i < b; ++i) {
            std::size_t idx = rng.index(n_pairs);
            const auto& r = pairs.records[idx];
            std::copy(r.z.begin(), r.z.end(), pz.data.begin() + i * pairs.dim_low);
            std::copy(r.x_high.begin(), r.x_high.end(), px.data.begin() + i * pairs.dim_high);
        }
        Tensor real = data.sample_high(rng, cfg.batch);
        Tensor prior = prior_sample(teacher.process, g.base().dim(), cfg.batch, rng);

        Stage2StepStats st;
        st.lambda = cfg.lambda;
        // D ascends, then G descends L_rec + lambda * L_adv
        {
            d->params().zero_grads();
            Var adv = stage3_adv_loss(g, *d, real, prior);
            st.loss_adv = adv->value.item();
            if (!std::isfinite(st.loss_adv))
                throw std::runtime_error("train_stage3: non-finite adversarial loss at step " +
                                         std::to_string(step));
            backward(neg(adv));
            opt_d.step_from_tape(d->params());
        }
        {
            g.base().params().zero_grads();
            g.stage_params().zero_grads();
            Var rec = stage3_recon_loss(g, pz, px);
            st.loss_rec = rec->value.item();
            if (!std::isfinite(st.loss_rec))
                throw std::runtime_error("train_stage3: non-finite reconstruction loss at step " +
                                         std::to_string(step));
            Var adv = stage3_adv_loss(g, *d, real, prior);
            Var total = cfg.use_recon ? (cfg.lambda > 0.0 ? add(rec, scale(adv, cfg.lambda)) : rec)
                                      : scale(adv, cfg.lambda > 0.0 ? cfg.lambda : 1.0);
            backward(total);
            opt_g.step_from_tape({&g.base().params(), &g.stage_params()});
        }
        res.history.push_back(st);
        ema_update(g.base().params(), cfg.ema_decay);
        ema_update(g.stage_params(), cfg.ema_decay);

        if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0)
            res.consistency_trace.push_back(consistency_correlation(g, probe_z));
        if (log) {
            double ms = 0.0;
            if (cfg.log_wallclock)
                ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                         .count();
            double w1 = std::numeric_limits<double>::quiet_NaN();
            log->append("stage3", step, {st.loss_rec, st.loss_adv, st.lambda, 0.0, 0.0, w1, ms});
        }
    }
    return res;
}

} // namespace pagoda
