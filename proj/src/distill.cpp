#include "pagoda/distill.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "pagoda/checkpoint.hpp"

namespace pagoda {

nlohmann::json GeneratorConfig::to_json() const {
    return {{"hidden", hidden},         {"feat_width", feat_width}, {"act", to_string(act)},
            {"cond_vocab", cond_vocab}, {"cond_embed", cond_embed}, {"omega_cond", omega_cond}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
    GeneratorConfig c;
    c.hidden = j.value("hidden", c.hidden);
    c.feat_width = j.value("feat_width", c.feat_width);
    c.act = activation_from_string(j.value("act", std::string("silu")));
    c.cond_vocab = j.value("cond_vocab", c.cond_vocab);
    c.cond_embed = j.value("cond_embed", c.cond_embed);
    c.omega_cond = j.value("omega_cond", c.omega_cond);
    return c;
}

Generator::Generator(std::size_t dim, Layout layout, std::size_t grid_h, std::size_t grid_w,
                     GeneratorConfig cfg, Rng& rng)
    : dim_(dim), layout_(layout), grid_h_(grid_h), grid_w_(grid_w), cfg_(cfg) {
    channels_ = 1;
    if (layout_ == Layout::grid_2d) {
        if (grid_h_ * grid_w_ != dim) throw std::invalid_argument("generator: grid dims != dim");
        positions_ = grid_h_ * grid_w_;
    } else {
        positions_ = dim;
    }
    std::vector<std::size_t> widths;
    std::size_t in = dim_ + (cfg_.cond_vocab ? cfg_.cond_embed : 0) +
                     (cfg_.omega_cond ? kScalarFeatureDim : 0);
    widths.push_back(in);
    for (auto h : cfg_.hidden) widths.push_back(h);
    widths.push_back(positions_ * cfg_.feat_width);
    trunk_ = build_mlp(params_, "trunk", widths, cfg_.act, rng);
    double std = std::sqrt(1.0 / static_cast<double>(cfg_.feat_width));
    head_w_ = params_.add("head.w", rng.normal_tensor({cfg_.feat_width, channels_}, 0.0, std));
    head_b_ = params_.add("head.b", Tensor({channels_}));
    if (cfg_.cond_vocab)
        cond_embed_ = params_.add("trunk.cond_embed",
                                  rng.normal_tensor({cfg_.cond_vocab + 1, cfg_.cond_embed}, 0.0, 0.3));
}

Var Generator::features(const Var& z, const std::vector<int>& c,
                        const std::vector<double>& omega) const {
    if (z->value.rank() != 2 || z->value.dim(1) != dim_)
        throw std::invalid_argument("generator: z must be (B," + std::to_string(dim_) + ")");
    std::size_t n = z->value.dim(0);
    Var in = z;
    if (cfg_.cond_vocab) {
        std::vector<std::size_t> ids(n, cfg_.cond_vocab);
        if (!c.empty()) {
            if (c.size() != n) throw std::invalid_argument("generator: one cond per row");
            for (std::size_t i = 0; i < n; ++i)
                ids[i] = c[i] < 0 ? cfg_.cond_vocab : static_cast<std::size_t>(c[i]);
        }
        in = concat_cols(in, gather_rows(cond_embed_, ids));
    }
    if (cfg_.omega_cond) {
        if (omega.size() != n) throw std::invalid_argument("generator: one omega per row required");
        std::vector<double> scaled(n);
        for (std::size_t i = 0; i < n; ++i) scaled[i] = 100.0 * omega[i]; // same scalar path as t
        in = concat_cols(in, constant(scalar_features(scaled)));
    }
    return trunk_.forward(in);
}

Var Generator::apply_head(const Var& feats, std::size_t positions) const {
    std::size_t b = feats->value.dim(0);
    Var flat = reshape(feats, {b * positions, cfg_.feat_width});
    Var out = add_row(matmul(flat, head_w_), head_b_);
    return reshape(out, {b, positions * channels_});
}

Var Generator::forward(const Var& z, const std::vector<int>& c,
                       const std::vector<double>& omega) const {
    return apply_head(features(z, c, omega), positions_);
}

Tensor Generator::generate(const Tensor& z, const std::vector<int>& c,
                           const std::vector<double>& omega) const {
    return forward(constant(z), c, omega)->value;
}

void Generator::set_linear(const Tensor& M, const std::vector<double>& bias) {
    if (!cfg_.hidden.empty())
        throw std::logic_error("set_linear requires a trunk without hidden layers");
    if (M.rank() != 2 || M.dim(0) != positions_ || M.dim(1) != dim_ || bias.size() != positions_)
        throw std::invalid_argument("set_linear: M must be (positions, dim)");
    Tensor& w = trunk_.weights[0]->value; // (dim, positions*F)
    Tensor& bb = trunk_.biases[0]->value;
    std::fill(w.data.begin(), w.data.end(), 0.0);
    std::fill(bb.data.begin(), bb.data.end(), 0.0);
    std::size_t f = cfg_.feat_width;
    for (std::size_t p = 0; p < positions_; ++p) {
        for (std::size_t j = 0; j < dim_; ++j) w.data[j * (positions_ * f) + p * f] = M.data[p * dim_ + j];
        bb.data[p * f] = bias[p];
    }
    Tensor& hw = head_w_->value;
    std::fill(hw.data.begin(), hw.data.end(), 0.0);
    hw.data[0] = 1.0;
    std::fill(head_b_->value.data.begin(), head_b_->value.data.end(), 0.0);
}

std::size_t Generator::init_from_teacher(const ParamSet& teacher) {
    std::size_t copied = 0;
    const auto& src = teacher.entries();
    auto& dst = params_.entries();
    for (std::size_t i = 0; i < std::min(src.size(), dst.size()); ++i) {
        if (src[i].var->value.same_shape(dst[i].var->value)) {
            dst[i].var->value = src[i].var->value;
            ++copied;
        }
    }
    return copied;
}

std::size_t Generator::flops_per_sample() const {
    return trunk_.flops_per_sample() + 2 * positions_ * cfg_.feat_width * channels_;
}

nlohmann::json Generator::arch_json() const {
    nlohmann::json j = cfg_.to_json();
    j["dim"] = dim_;
    j["layout"] = to_string(layout_);
    j["grid_h"] = grid_h_;
    j["grid_w"] = grid_w_;
    return j;
}

Generator Generator::from_arch(const nlohmann::json& arch, Rng& rng) {
    return Generator(arch["dim"].get<std::size_t>(), layout_from_string(arch["layout"]),
                     arch.value("grid_h", std::size_t{0}), arch.value("grid_w", std::size_t{0}),
                     GeneratorConfig::from_json(arch), rng);
}

Discriminator::Discriminator(std::size_t dim, DiscriminatorConfig cfg, Rng& rng)
    : dim_(dim), cfg_(cfg) {
    // Link sanity per the stability analysis: f'(0) > 0 and f''(0) < 0.
    if (!(link_d1(0.0) > 0.0) || !(link_d2(0.0) < 0.0))
        throw std::logic_error("discriminator link must satisfy f'(0)>0, f''(0)<0");
    std::vector<std::size_t> widths;
    widths.push_back(dim_ + (cfg_.cond_vocab ? cfg_.cond_embed : 0) +
                     (cfg_.omega_cond ? kScalarFeatureDim : 0));
    for (auto h : cfg_.hidden) widths.push_back(h);
    widths.push_back(1);
    mlp_ = build_mlp(params_, "disc", widths, cfg_.act, rng);
    if (cfg_.cond_vocab)
        cond_embed_ = params_.add("disc.cond_embed",
                                  rng.normal_tensor({cfg_.cond_vocab + 1, cfg_.cond_embed}, 0.0, 0.3));
}

double Discriminator::link(double u) { return -(std::max(-u, 0.0) + std::log1p(std::exp(-std::fabs(u)))); }
double Discriminator::link_d1(double u) { return 1.0 / (1.0 + std::exp(u)); }
double Discriminator::link_d2(double u) {
    double e = std::exp(-std::fabs(u));
    return -e / ((1.0 + e) * (1.0 + e));
}

Var Discriminator::logits(const Var& x, const std::vector<int>& c,
                          const std::vector<double>& omega) const {
    if (x->value.rank() != 2 || x->value.dim(1) != dim_)
        throw std::invalid_argument("discriminator: x must be (B," + std::to_string(dim_) + ")");
    std::size_t n = x->value.dim(0);
    Var in = x;
    if (cfg_.cond_vocab) {
        std::vector<std::size_t> ids(n, cfg_.cond_vocab);
        if (!c.empty()) {
            if (c.size() != n) throw std::invalid_argument("discriminator: one cond per row");
            for (std::size_t i = 0; i < n; ++i)
                ids[i] = c[i] < 0 ? cfg_.cond_vocab : static_cast<std::size_t>(c[i]);
        }
        in = concat_cols(in, gather_rows(cond_embed_, ids));
    }
    if (cfg_.omega_cond) {
        if (omega.size() != n) throw std::invalid_argument("discriminator: one omega per row required");
        std::vector<double> scaled(n);
        for (std::size_t i = 0; i < n; ++i) scaled[i] = 100.0 * omega[i];
        in = concat_cols(in, constant(scalar_features(scaled)));
    }
    Var out = mlp_.forward(in);
    return reshape(out, {n});
}

Var recon_loss(const Generator& g, const Tensor& z, const Tensor& x, const std::vector<int>& c,
               const std::vector<double>& omega) {
    if (z.rank() != 2 || z.dim(0) == 0) throw std::invalid_argument("recon_loss: empty batch");
    if (x.rank() != 2 || x.dim(0) != z.dim(0) || x.dim(1) != g.dim())
        throw std::invalid_argument("recon_loss: x batch shape mismatch");
    Var xhat = g.forward(constant(z), c, omega);
    Var diff = sub(constant(x), xhat);
    return mean(sum_rows(square(diff)));
}

namespace {

Var log_d(const Var& logits) { return neg(softplus(neg(logits))); }       // log sigmoid(u)
Var log_one_minus_d(const Var& logits) { return neg(softplus(logits)); }  // log(1-sigmoid(u))

} // namespace

Var adv_loss(const Generator& g, const Discriminator& d, const Tensor& real, const Tensor& prior,
             const std::vector<int>& c_real, const std::vector<int>& c_fake,
             const std::vector<double>& omega_real, const std::vector<double>& omega_fake) {
    if (real.rank() != 2 || real.dim(0) == 0 || prior.rank() != 2 || prior.dim(0) == 0)
        throw std::invalid_argument("adv_loss: empty batch");
    Var real_term = mean(log_d(d.logits(constant(real), c_real, omega_real)));
    Var fake = g.forward(constant(prior), c_fake, omega_fake);
    Var fake_term = mean(log_one_minus_d(d.logits(fake, c_fake, omega_fake)));
    return add(real_term, fake_term);
}

Var noise_to_data_distill_loss(const Generator& g, const ScoreModel& teacher, const Tensor& prior,
                               const TimeGrid& grid) {
    if (prior.rank() != 2 || prior.dim(0) == 0)
        throw std::invalid_argument("noise_to_data_distill_loss: empty batch");
    Tensor target = ddim_generate(teacher, prior, grid);
    Var diff = sub(constant(target), g.forward(constant(prior)));
    return mean(sum_rows(square(diff)));
}

double adaptive_lambda(double grad_rec_sq, double grad_adv_sq, double coeff, double clamp_min,
                       double clamp_max) {
    if (grad_rec_sq < 0.0 || grad_adv_sq < 0.0)
        throw std::invalid_argument("adaptive_lambda: gradient norms must be nonnegative");
    if (coeff <= 0.0) throw std::invalid_argument("adaptive_lambda: coeff must be positive");
    if (grad_adv_sq < 1e-12) return clamp_max;
    return std::clamp(coeff * grad_rec_sq / grad_adv_sq, clamp_min, clamp_max);
}

namespace {

double head_grad_sq(const Generator& g) {
    return sq_norm(g.head_w()->grad.data) + sq_norm(g.head_b()->grad.data);
}

std::unordered_map<std::string, Tensor> tape_grads(const ParamSet& ps) {
    std::unordered_map<std::string, Tensor> out;
    for (const auto& e : ps.entries())
        if (e.trainable) out.emplace(e.name, e.var->grad);
    return out;
}

void check_finite(double v, const char* component) {
    if (!std::isfinite(v))
        throw std::runtime_error(std::string("stage2_step: non-finite loss in ") + component);
}

} // namespace

Stage2StepStats stage2_step(Generator& g, Discriminator& d, const Tensor& pair_z,
                            const Tensor& pair_x, const std::vector<int>& pair_c,
                            const Tensor& real, const std::vector<int>& real_c, const Tensor& prior,
                            const std::vector<int>& prior_c, const Stage2Config& cfg,
                            OptimizerState& opt_g, OptimizerState& opt_d) {
    Stage2StepStats st;
    bool have_pairs = pair_z.rank() == 2 && pair_z.dim(0) > 0;

    auto disc_update = [&]() {
        d.params().zero_grads();
        Var adv = adv_loss(g, d, real, prior, real_c, prior_c);
        check_finite(adv->value.item(), "adversarial (discriminator)");
        st.loss_adv = adv->value.item();
        backward(neg(adv)); // ascend
        opt_d.step_from_tape(d.params());
    };

    auto gen_update = [&]() {
        std::unordered_map<std::string, Tensor> grads;
        g.params().zero_grads();
        if (have_pairs) {
            Var rec = recon_loss(g, pair_z, pair_x, pair_c);
            check_finite(rec->value.item(), "reconstruction");
            st.loss_rec = rec->value.item();
            backward(rec);
            st.grad_rec_sq = head_grad_sq(g);
            grads = tape_grads(g.params());
        }
        g.params().zero_grads();
        Var adv = adv_loss(g, d, real, prior, real_c, prior_c);
        check_finite(adv->value.item(), "adversarial (generator)");
        if (!have_pairs) st.loss_adv = adv->value.item();
        backward(adv);
        st.grad_adv_sq = head_grad_sq(g);
        st.lambda = cfg.lambda_fixed
                        ? *cfg.lambda_fixed
                        : adaptive_lambda(st.grad_rec_sq, st.grad_adv_sq, cfg.adaptive_coeff,
                                          cfg.lambda_clamp_min, cfg.lambda_clamp_max);
        // lambda is a constant within the step; no gradient flows through it
        for (auto& e : g.params().entries()) {
            if (!e.trainable) continue;
            auto [it, fresh] = grads.try_emplace(e.name, Tensor(e.var->grad.shape));
            Tensor& acc = it->second;
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += st.lambda * e.var->grad[i];
        }
        opt_g.step(g.params(), grads);
    };

    if (cfg.update_order == UpdateOrder::disc_first) {
        disc_update();
        gen_update();
    } else {
        gen_update();
        disc_update();
    }
    return st;
}

Stage2Result train_stage2(const ScoreModel& teacher, const PairSet& pairs, const ToyDataset& data,
                          const Stage2Config& cfg, Rng& rng, MetricsLog* log,
                          const ParamSet* teacher_params) {
    (void)teacher;
    Stage2Result res;
    if (pairs.dim_low == 0 && !pairs.records.empty())
        throw std::invalid_argument("train_stage2: pair set has no base-resolution data");

    std::size_t dim = data.base_dim;
    Layout layout = data.layout;
    std::size_t base_h = data.grid_h / 2, base_w = data.grid_w / 2;
    res.generator = std::make_shared<Generator>(dim, layout, base_h, base_w, cfg.gen, rng);
    if (cfg.init_from_teacher && teacher_params) res.generator->init_from_teacher(*teacher_params);
    Discriminator disc(dim, cfg.disc, rng);

    OptimizerState opt_g(cfg.opt_g), opt_d(cfg.opt_d);
    std::size_t n_pairs = static_cast<std::size_t>(cfg.pair_fraction * pairs.records.size());
    n_pairs = std::min(n_pairs, pairs.records.size());

    auto eval_w1 = [&](bool use_ema) {
        Rng eval_rng(314159);
        Tensor z = prior_sample(teacher.process, dim, cfg.eval_samples, eval_rng);
        Tensor samples;
        if (use_ema) {
            auto shadow = snapshot(res.generator->params(), true);
            auto live = snapshot(res.generator->params(), false);
            for (auto& [name, t] : shadow) res.generator->params().at(name).var->value = t;
            samples = res.generator->generate(z);
            for (auto& [name, t] : live) res.generator->params().at(name).var->value = t;
        } else {
            samples = res.generator->generate(z);
        }
        Tensor ref = sample_base(data, eval_rng, cfg.eval_samples);
        if (dim == 1) {
            std::vector<double> a(samples.data), b(ref.data);
            return w1_sorted(std::move(a), std::move(b));
        }
        return sliced_wasserstein(samples, ref);
    };

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        auto t0 = std::chrono::steady_clock::now();
        if (cfg.cosine_lr_decay) {
            double f = 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                             static_cast<double>(cfg.steps)));
            opt_g.set_lr(cfg.opt_g.lr * f);
            opt_d.set_lr(cfg.opt_d.lr * f);
        }
        Tensor pz, px;
        std::vector<int> pc;
        if (n_pairs > 0) {
            std::size_t b = std::min(cfg.batch, n_pairs);
            pz = Tensor({b, pairs.dim_low});
            px = Tensor({b, pairs.dim_low});
            bool has_c = !pairs.records.empty() && pairs.records[0].c >= 0;
            if (has_c) pc.resize(b);
            for (std::size_t i = 0; i < b; ++i) {
                std::size_t idx = rng.index(n_pairs);
                const auto& r = pairs.records[idx];
                std::copy(r.z.begin(), r.z.end(), pz.data.begin() + i * pairs.dim_low);
                std::copy(r.x_low.begin(), r.x_low.end(), px.data.begin() + i * pairs.dim_low);
                if (has_c) pc[i] = r.c;
            }
        }
        Tensor real = sample_base(data, rng, cfg.batch);
        Tensor prior = prior_sample(teacher.process, dim, cfg.batch, rng);

        try {
            res.history.push_back(stage2_step(*res.generator, disc, pz, px, pc, real, {}, prior, {},
                                              cfg, opt_g, opt_d));
        } catch (const std::exception& e) {
            throw std::runtime_error(std::string(e.what()) + " at step " + std::to_string(step));
        }
        ema_update(res.generator->params(), cfg.ema_decay);

        if (log) {
            const auto& st = res.history.back();
            bool scheduled = cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0;
            double w1 = scheduled ? eval_w1(false) : std::numeric_limits<double>::quiet_NaN();
            double ms = 0.0;
            if (cfg.log_wallclock)
                ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                         .count();
            log->append("stage2", step,
                        {st.loss_rec, st.loss_adv, st.lambda, st.grad_rec_sq, st.grad_adv_sq, w1, ms});
            if (scheduled)
                log->append("stage2_ema", step,
                            {st.loss_rec, st.loss_adv, st.lambda, st.grad_rec_sq, st.grad_adv_sq,
                             eval_w1(true), ms});
        }
    }
    return res;
}

void save_generator(const std::string& path, const Generator& g, const nlohmann::json& extra_meta) {
    nlohmann::json meta = {{"kind", "generator"}, {"arch", g.arch_json()}};
    if (!extra_meta.is_null() && !extra_meta.empty())
        for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it) meta[it.key()] = it.value();
    save_checkpoint(path, g.params(), meta);
}

LoadedGenerator load_generator(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    Rng tmp(0);
    LoadedGenerator out;
    out.generator = std::make_shared<Generator>(Generator::from_arch(ck.meta["arch"], tmp));
    restore_params(out.generator->params(), ck);
    out.meta = ck.meta;
    return out;
}

} // namespace pagoda
