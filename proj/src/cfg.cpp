#include "pagoda/cfg.hpp"

#include <cmath>
#include <stdexcept>

namespace pagoda {

Gaussian1 guided_gaussian(const Gaussian1& cond, const Gaussian1& marg, double omega) {
    if (cond.var <= 0.0 || marg.var <= 0.0)
        throw std::invalid_argument("guided_gaussian: variances must be positive");
    double prec = omega / cond.var + (1.0 - omega) / marg.var;
    if (prec <= 0.0)
        throw std::invalid_argument("guided_gaussian: combined precision must be positive "
                                    "(omega too large for these variances)");
    Gaussian1 g;
    g.var = 1.0 / prec;
    g.mean = g.var * (omega * cond.mean / cond.var + (1.0 - omega) * marg.mean / marg.var);
    return g;
}

double gaussian_pdf(double x, const Gaussian1& g) {
    double d = x - g.mean;
    return std::exp(-0.5 * d * d / g.var) / std::sqrt(2.0 * M_PI * g.var);
}

Tensor guided_score(const ScoreFn& s_cond, const ScoreFn& s_marg, double omega, const Tensor& x,
                    double t, const std::vector<int>& c) {
    Tensor sc = s_cond.eval(x, t, c);
    Tensor sm = s_marg.eval(x, t, {});
    Tensor out(x.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = omega * sc[i] + (1.0 - omega) * sm[i];
    return out;
}

Tensor GuidedScoreFn::eval(const Tensor& x, double t, const std::vector<int>& c) const {
    Tensor sc = cond_->eval(x, t, c);
    Tensor sm = marg_->eval(x, t, {});
    std::size_t n = x.dim(0), d = x.dim(1);
    if (omegas_.size() != 1 && omegas_.size() != n)
        throw std::invalid_argument("GuidedScoreFn: need one omega, or one per row");
    Tensor out(x.shape);
    for (std::size_t r = 0; r < n; ++r) {
        double w = omegas_.size() == 1 ? omegas_[0] : omegas_[r];
        for (std::size_t j = 0; j < d; ++j)
            out.data[r * d + j] = w * sc.data[r * d + j] + (1.0 - w) * sm.data[r * d + j];
    }
    return out;
}

ScoreModel guided_model(const ScoreModel& cond, const ScoreModel& marg, std::vector<double> omegas) {
    if (cond.process.kind != marg.process.kind || cond.process.T != marg.process.T)
        throw std::invalid_argument("guided_model: conditional/marginal processes differ");
    ScoreModel m;
    m.process = cond.process;
    m.dim = cond.dim;
    m.cond_vocab = cond.cond_vocab;
    m.fn = std::make_shared<GuidedScoreFn>(cond.fn, marg.fn, std::move(omegas));
    return m;
}

Tensor guided_invert(const ScoreModel& cond, const ScoreModel& marg, const Tensor& x_low,
                     const std::vector<int>& c, double omega, const TimeGrid& grid) {
    return ddim_invert(guided_model(cond, marg, {omega}), x_low, grid, c);
}

PairSet build_pairs_guided(const Tensor& dataset_high, const std::vector<int>& conds,
                           const std::vector<double>& omegas, const ScoreModel& cond_model,
                           const ScoreModel& marg_model, const DownsampleOp& op, const TimeGrid& grid,
                           const BuildPairsConfig& cfg) {
    std::size_t n = dataset_high.dim(0);
    if (omegas.size() != n) throw std::invalid_argument("build_pairs_guided: one omega per row");
    ScoreModel guided = guided_model(cond_model, marg_model, omegas);
    PairSet set = build_pairs(dataset_high, conds, guided, op, grid, cfg);
    for (std::size_t i = 0; i < set.records.size(); ++i) set.records[i].omega = omegas[i];
    return set;
}

double OmegaPrior::sample(Rng& rng) const {
    switch (kind) {
        case Kind::uniform: return rng.uniform(a, b);
        case Kind::point: return value;
        case Kind::truncnorm: {
            for (;;) {
                double v = center + scale * rng.normal();
                if (v >= a && v <= b) return v;
            }
        }
        case Kind::grid: {
            double u = rng.uniform();
            double acc = 0.0;
            for (std::size_t i = 0; i < grid_points.size(); ++i) {
                acc += grid_weights[i];
                if (u <= acc) return grid_points[i];
            }
            return grid_points.back();
        }
    }
    return value;
}

OmegaPrior OmegaPrior::parse(const std::string& spec) {
    OmegaPrior p;
    auto colon = spec.find(':');
    std::string head = spec.substr(0, colon);
    std::vector<double> args;
    if (colon != std::string::npos) {
        std::string rest = spec.substr(colon + 1);
        std::size_t pos = 0;
        while (pos < rest.size()) {
            auto comma = rest.find(',', pos);
            args.push_back(std::stod(rest.substr(pos, comma - pos)));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
    }
    if (head == "uniform") {
        if (args.size() != 2) throw std::invalid_argument("omega prior: uniform:a,b");
        p.kind = Kind::uniform;
        p.a = args[0];
        p.b = args[1];
    } else if (head == "truncnorm") {
        if (args.size() != 4) throw std::invalid_argument("omega prior: truncnorm:c,s,a,b");
        p.kind = Kind::truncnorm;
        p.center = args[0];
        p.scale = args[1];
        p.a = args[2];
        p.b = args[3];
    } else if (head == "point") {
        if (args.size() != 1) throw std::invalid_argument("omega prior: point:v");
        p.kind = Kind::point;
        p.value = args[0];
    } else {
        throw std::invalid_argument("unknown omega prior: " + spec);
    }
    return p;
}

nlohmann::json OmegaPrior::to_json() const {
    switch (kind) {
        case Kind::uniform: return {{"kind", "uniform"}, {"a", a}, {"b", b}};
        case Kind::truncnorm:
            return {{"kind", "truncnorm"}, {"center", center}, {"scale", scale}, {"a", a}, {"b", b}};
        case Kind::point: return {{"kind", "point"}, {"value", value}};
        case Kind::grid: return {{"kind", "grid"}, {"points", grid_points}, {"weights", grid_weights}};
    }
    return {};
}

std::vector<double> omega_posterior(const GuidedGaussianToy& toy, double x, int c) {
    std::vector<double> post(toy.omega_grid.size());
    double total = 0.0;
    for (std::size_t i = 0; i < post.size(); ++i) {
        post[i] = toy.omega_prior[i] * gaussian_pdf(x, toy.guided(c, toy.omega_grid[i]));
        total += post[i];
    }
    if (total <= 0.0) throw std::runtime_error("omega_posterior: zero likelihood on the whole grid");
    for (auto& v : post) v /= total;
    return post;
}

double omega_posterior_mean(const GuidedGaussianToy& toy, double x, int c) {
    auto post = omega_posterior(toy, x, c);
    double m = 0.0;
    for (std::size_t i = 0; i < post.size(); ++i) m += post[i] * toy.omega_grid[i];
    return m;
}

double omega_posterior_map(const GuidedGaussianToy& toy, double x, int c) {
    auto post = omega_posterior(toy, x, c);
    std::size_t best = 0;
    for (std::size_t i = 1; i < post.size(); ++i)
        if (post[i] > post[best]) best = i;
    return toy.omega_grid[best];
}

std::vector<double> TabularCfgInstance::marginal() const {
    std::vector<double> m(x_values.size(), 0.0);
    for (std::size_t c = 0; c < class_probs.size(); ++c)
        for (std::size_t x = 0; x < m.size(); ++x) m[x] += class_probs[c] * cond[c][x];
    return m;
}

std::vector<double> TabularCfgInstance::guided(int c, double omega) const {
    auto marg = marginal();
    std::vector<double> g(x_values.size());
    double total = 0.0;
    for (std::size_t x = 0; x < g.size(); ++x) {
        // a zero conditional atom has zero guided mass for any omega > 0
        // (and marg == 0 implies cond == 0 for every class)
        g[x] = cond[c][x] <= 0.0 ? 0.0 : std::pow(cond[c][x], omega) * std::pow(marg[x], 1.0 - omega);
        total += g[x];
    }
    if (total <= 0.0) throw std::runtime_error("tabular guided distribution is degenerate");
    for (auto& v : g) v /= total;
    return g;
}

double TabularCfgInstance::joint(int c, int wi, int xi) const {
    return class_probs[c] * omega_prior[wi] * guided(c, omega_grid[wi])[xi];
}

double TabularCfgInstance::joint_xc(int xi, int c) const {
    double s = 0.0;
    for (std::size_t wi = 0; wi < omega_grid.size(); ++wi) s += joint(c, static_cast<int>(wi), xi);
    return s;
}

std::vector<double> TabularCfgInstance::omega_posterior(int xi, int c) const {
    std::vector<double> post(omega_grid.size());
    double total = 0.0;
    for (std::size_t wi = 0; wi < post.size(); ++wi) {
        post[wi] = omega_prior[wi] * guided(c, omega_grid[wi])[xi];
        total += post[wi];
    }
    if (total <= 0.0) throw std::runtime_error("omega_posterior: zero likelihood on the whole grid");
    for (auto& v : post) v /= total;
    return post;
}

double TabularCfgInstance::posterior_mean(int xi, int c) const {
    auto post = omega_posterior(xi, c);
    double m = 0.0;
    for (std::size_t wi = 0; wi < post.size(); ++wi) m += post[wi] * omega_grid[wi];
    return m;
}

OmegaEstimator::OmegaEstimator(std::size_t dim, std::size_t vocab, std::vector<std::size_t> hidden,
                               Activation act, std::size_t cond_embed, Rng& rng)
    : dim_(dim), vocab_(vocab) {
    std::vector<std::size_t> widths;
    widths.push_back(dim + (vocab ? cond_embed : 0));
    for (auto h : hidden) widths.push_back(h);
    widths.push_back(1);
    mlp_ = build_mlp(params_, "omega", widths, act, rng);
    if (vocab)
        embed_ = params_.add("omega.cond_embed", rng.normal_tensor({vocab + 1, cond_embed}, 0.0, 0.3));
}

Var OmegaEstimator::forward(const Var& x, const std::vector<int>& c) const {
    std::size_t n = x->value.dim(0);
    Var in = x;
    if (vocab_) {
        std::vector<std::size_t> ids(n, vocab_);
        if (!c.empty())
            for (std::size_t i = 0; i < n; ++i)
                ids[i] = c[i] < 0 ? vocab_ : static_cast<std::size_t>(c[i]);
        in = concat_cols(in, gather_rows(embed_, ids));
    }
    return reshape(mlp_.forward(in), {n});
}

std::vector<double> OmegaEstimator::predict(const Tensor& x, const std::vector<int>& c) const {
    return forward(constant(x), c)->value.data;
}

GuidedSampler guided_ddim_sampler(const ScoreModel& cond, const ScoreModel& marg,
                                  const TimeGrid& grid) {
    return [cond, marg, grid](const Tensor& z, const std::vector<int>& c,
                              const std::vector<double>& omega) {
        return ddim_generate(guided_model(cond, marg, omega), z, grid, c);
    };
}

OmegaTrainResult train_omega_estimator(const GuidedSampler& sampler, const ForwardProcess& process,
                                       std::size_t dim, const std::vector<double>& class_probs,
                                       const OmegaPrior& prior, const OmegaTrainConfig& cfg, Rng& rng) {
    OmegaTrainResult res;
    res.estimator = std::make_shared<OmegaEstimator>(dim, class_probs.size(), cfg.hidden, cfg.act,
                                                     cfg.cond_embed, rng);
    OptimizerState opt(cfg.opt);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        if (cfg.cosine_lr_decay)
            opt.set_lr(cfg.opt.lr * 0.5 *
                       (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                       static_cast<double>(cfg.steps))));
        Tensor z = prior_sample(process, dim, cfg.batch, rng);
        std::vector<int> c(cfg.batch);
        std::vector<double> w(cfg.batch);
        for (std::size_t i = 0; i < cfg.batch; ++i) {
            double u = rng.uniform(), acc = 0.0;
            c[i] = static_cast<int>(class_probs.size()) - 1;
            for (std::size_t k = 0; k < class_probs.size(); ++k) {
                acc += class_probs[k];
                if (u <= acc) {
                    c[i] = static_cast<int>(k);
                    break;
                }
            }
            w[i] = prior.sample(rng);
        }
        Tensor xhat = sampler(z, c, w);
        Var pred = res.estimator->forward(constant(xhat), c);
        Var err = sub(pred, constant(Tensor::vector(w)));
        Var loss = mean(square(err));
        if (!std::isfinite(loss->value.item()))
            throw std::runtime_error("train_omega_estimator: non-finite loss at step " +
                                     std::to_string(step));
        res.mse_trajectory.push_back(loss->value.item());
        backward(loss);
        opt.step_from_tape(res.estimator->params());
    }
    return res;
}

Var cfg_adv_loss(const Generator& g, const Discriminator& d, const Tensor& x_real,
                 const std::vector<int>& c_real, const OmegaEstimator& est, const Tensor& prior,
                 const std::vector<int>& c_fake, const std::vector<double>& omega_fake) {
    if (x_real.dim(0) == 0 || prior.dim(0) == 0) throw std::invalid_argument("cfg_adv_loss: empty batch");
    std::vector<double> omega_hat = est.predict(x_real, c_real);
    Var real_term = mean(neg(softplus(neg(d.logits(constant(x_real), c_real, omega_hat)))));
    Var fake = g.forward(constant(prior), c_fake, omega_fake);
    Var fake_term = mean(neg(softplus(d.logits(fake, c_fake, omega_fake))));
    return add(real_term, fake_term);
}

} // namespace pagoda
