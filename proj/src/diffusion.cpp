#include "pagoda/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "pagoda/checkpoint.hpp"

namespace pagoda {

ProcessKind process_kind_from_string(const std::string& s) {
    if (s == "ve" || s == "VE") return ProcessKind::VE;
    if (s == "vp" || s == "VP") return ProcessKind::VP;
    throw std::invalid_argument("unknown process kind: " + s);
}

std::string to_string(ProcessKind k) { return k == ProcessKind::VE ? "ve" : "vp"; }

std::pair<double, double> marginal_params(const ForwardProcess& p, double t) {
    if (t < 0.0 || t > p.T)
        throw std::domain_error("marginal_params: t=" + std::to_string(t) + " outside [0, T]");
    if (p.kind == ProcessKind::VE) return {1.0, t};
    double e = std::exp(-t);
    return {e, std::sqrt(1.0 - e * e)};
}

double prior_std(const ForwardProcess& p) {
    if (p.kind == ProcessKind::VE) return p.T;
    return std::sqrt(1.0 - std::exp(-2.0 * p.T));
}

nlohmann::json GridConfig::to_json() const {
    return {{"steps", steps}, {"t_min", t_min}, {"rho", rho}, {"kind", kind}};
}

GridConfig GridConfig::from_json(const nlohmann::json& j) {
    GridConfig c;
    c.steps = j.value("steps", c.steps);
    c.t_min = j.value("t_min", c.t_min);
    c.rho = j.value("rho", c.rho);
    c.kind = j.value("kind", c.kind);
    return c;
}

TimeGrid TimeGrid::edm(double T, std::size_t steps, double t_min, double rho) {
    if (steps < 1 || t_min <= 0.0 || t_min >= T) throw std::invalid_argument("TimeGrid::edm: bad arguments");
    TimeGrid g;
    g.times.resize(steps + 1);
    double a = std::pow(T, 1.0 / rho), b = std::pow(t_min, 1.0 / rho);
    for (std::size_t i = 0; i <= steps; ++i) {
        double f = static_cast<double>(i) / static_cast<double>(steps);
        g.times[i] = std::pow(a + f * (b - a), rho);
    }
    g.times.front() = T;
    g.times.back() = t_min;
    return g;
}

TimeGrid TimeGrid::uniform(double T, std::size_t steps, double t_min) {
    if (steps < 1 || t_min <= 0.0 || t_min >= T)
        throw std::invalid_argument("TimeGrid::uniform: bad arguments");
    TimeGrid g;
    g.times.resize(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i)
        g.times[i] = T + (t_min - T) * static_cast<double>(i) / static_cast<double>(steps);
    return g;
}

TimeGrid TimeGrid::make(const ForwardProcess& p, const GridConfig& cfg) {
    if (cfg.kind == "uniform") return uniform(p.T, cfg.steps, cfg.t_min);
    return edm(p.T, cfg.steps, cfg.t_min, cfg.rho);
}

AnalyticGaussianScore::AnalyticGaussianScore(GaussianData data, ForwardProcess process)
    : data_(std::move(data)), process_(process) {
    if (data_.mean.size() != data_.var.size())
        throw std::invalid_argument("gaussian data: mean/var size mismatch");
    for (double v : data_.var)
        if (v <= 0.0) throw std::invalid_argument("gaussian data: variance must be > 0");
}

Tensor AnalyticGaussianScore::eval(const Tensor& x, double t, const std::vector<int>&) const {
    marginal_params(process_, t); // domain check
    std::size_t d = data_.dim();
    if (x.rank() != 2 || x.dim(1) != d)
        throw std::invalid_argument("analytic score: x must be (n," + std::to_string(d) + ")");
    Tensor out(x.shape);
    for (std::size_t r = 0; r < x.dim(0); ++r)
        for (std::size_t i = 0; i < d; ++i) {
            double xi = x.data[r * d + i];
            if (process_.kind == ProcessKind::VE) {
                out.data[r * d + i] = -(xi - data_.mean[i]) / (data_.var[i] + t * t);
            } else {
                double e = std::exp(-t);
                double v = e * e * data_.var[i] + 1.0 - e * e;
                out.data[r * d + i] = -(xi - e * data_.mean[i]) / v;
            }
        }
    return out;
}

NetScore::NetScore(std::size_t dim, std::vector<std::size_t> hidden, Activation act,
                   std::size_t cond_vocab, std::size_t cond_embed, Rng& rng)
    : dim_(dim), hidden_(std::move(hidden)), act_(act), cond_vocab_(cond_vocab),
      cond_embed_(cond_vocab ? cond_embed : 0) {
    std::vector<std::size_t> widths;
    widths.push_back(dim_ + kScalarFeatureDim + cond_embed_);
    for (auto h : hidden_) widths.push_back(h);
    widths.push_back(dim_);
    mlp_ = build_mlp(params_, "score", widths, act_, rng);
    if (cond_vocab_ > 0)
        embed_ = params_.add("score.cond_embed",
                             rng.normal_tensor({cond_vocab_ + 1, cond_embed_}, 0.0, 0.3));
}

Var NetScore::forward_rows(const Var& x, const std::vector<double>& ts,
                           const std::vector<int>& cond) const {
    std::size_t n = x->value.dim(0);
    if (ts.size() != n) throw std::invalid_argument("NetScore: one t per row required");
    Var in = concat_cols(x, constant(scalar_features(ts)));
    if (cond_vocab_ > 0) {
        std::vector<std::size_t> ids(n, cond_vocab_); // null row by default
        if (!cond.empty()) {
            if (cond.size() != n) throw std::invalid_argument("NetScore: one cond per row required");
            for (std::size_t i = 0; i < n; ++i)
                ids[i] = cond[i] < 0 ? cond_vocab_ : static_cast<std::size_t>(cond[i]);
        }
        in = concat_cols(in, gather_rows(embed_, ids));
    }
    return mlp_.forward(in);
}

Tensor NetScore::eval(const Tensor& x, double t, const std::vector<int>& cond) const {
    Var xv = constant(x);
    std::vector<double> ts(x.dim(0), t);
    return forward_rows(xv, ts, cond)->value;
}

nlohmann::json NetScore::arch_json() const {
    return {{"dim", dim_},        {"hidden", hidden_},         {"act", to_string(act_)},
            {"cond_vocab", cond_vocab_}, {"cond_embed", cond_embed_}, {"layers", mlp_.weights.size()}};
}

std::unique_ptr<NetScore> NetScore::from_arch(const nlohmann::json& arch, Rng& rng) {
    return std::make_unique<NetScore>(arch["dim"].get<std::size_t>(),
                                      arch["hidden"].get<std::vector<std::size_t>>(),
                                      activation_from_string(arch["act"].get<std::string>()),
                                      arch["cond_vocab"].get<std::size_t>(),
                                      std::max<std::size_t>(arch["cond_embed"].get<std::size_t>(), 1),
                                      rng);
}

Tensor pf_ode_rhs(const ScoreModel& m, const Tensor& x, double t, const std::vector<int>& cond) {
    Tensor s = m.fn->eval(x, t, cond);
    Tensor out(x.shape);
    if (m.process.kind == ProcessKind::VE) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = -t * s[i];
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = -x[i] - s[i];
    }
    return out;
}

Tensor solve_pf_ode(const ScoreModel& m, const Tensor& x_start, double t_start, double t_end,
                    const TimeGrid& grid, OdeMethod method, const std::vector<int>& cond) {
    double lo = std::min(t_start, t_end), hi = std::max(t_start, t_end);
    if (grid.t_min() > lo + 1e-12 || grid.t_max() < hi - 1e-12)
        throw std::invalid_argument("solve_pf_ode: grid does not span the requested interval");

    std::vector<double> ts = grid.times; // decreasing
    if (t_start < t_end) std::reverse(ts.begin(), ts.end());

    Tensor x = x_start;
    for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
        double t0 = ts[i], t1 = ts[i + 1], h = t1 - t0;
        Tensor k1 = pf_ode_rhs(m, x, t0, cond);
        if (method == OdeMethod::euler) {
            for (std::size_t j = 0; j < x.size(); ++j) x[j] += h * k1[j];
        } else {
            Tensor xe = x;
            for (std::size_t j = 0; j < x.size(); ++j) xe[j] += h * k1[j];
            Tensor k2 = pf_ode_rhs(m, xe, t1, cond);
            for (std::size_t j = 0; j < x.size(); ++j) x[j] += 0.5 * h * (k1[j] + k2[j]);
        }
        if (!x.all_finite())
            throw std::runtime_error("solve_pf_ode: non-finite state at t=" + std::to_string(t1));
    }
    return x;
}

Tensor ddim_invert(const ScoreModel& m, const Tensor& x0, const TimeGrid& grid,
                   const std::vector<int>& cond) {
    return solve_pf_ode(m, x0, grid.t_min(), grid.t_max(), grid, OdeMethod::heun, cond);
}

Tensor ddim_generate(const ScoreModel& m, const Tensor& z, const TimeGrid& grid,
                     const std::vector<int>& cond) {
    return solve_pf_ode(m, z, grid.t_max(), grid.t_min(), grid, OdeMethod::heun, cond);
}

Tensor prior_sample(const ForwardProcess& p, std::size_t dim, std::size_t n, Rng& rng) {
    if (n < 1) throw std::invalid_argument("prior_sample: n must be >= 1");
    return rng.normal_tensor({n, dim}, 0.0, prior_std(p));
}

DsmResult train_dsm(const DataSampler& data, const ForwardProcess& process, std::size_t dim,
                    const DsmConfig& cfg, Rng& rng) {
    DsmResult res;
    res.net = std::make_shared<NetScore>(dim, cfg.hidden, cfg.act, cfg.cond_vocab,
                                         cfg.cond_vocab ? cfg.cond_embed : 1, rng);
    res.model = ScoreModel{process, res.net, dim, cfg.cond_vocab};

    OptimizerState opt(cfg.opt);
    double log_lo = std::log(cfg.t_min), log_hi = std::log(process.T);

    Tensor xbatch({cfg.batch, dim});
    std::vector<int> cond;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        if (cfg.cosine_lr_decay)
            opt.set_lr(cfg.opt.lr * 0.5 *
                       (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                       static_cast<double>(cfg.steps))));
        data(rng, cfg.batch, xbatch, cond);
        if (cfg.cond_vocab > 0 && cfg.cond_dropout > 0.0)
            for (auto& c : cond)
                if (rng.uniform() < cfg.cond_dropout) c = -1;

        std::vector<double> ts(cfg.batch);
        Tensor xt({cfg.batch, dim});
        Tensor target({cfg.batch, dim});
        std::vector<double> w(cfg.batch, 1.0);
        for (std::size_t r = 0; r < cfg.batch; ++r) {
            ts[r] = std::exp(rng.uniform(log_lo, log_hi));
            auto [scale, std] = marginal_params(process, ts[r]);
            for (std::size_t j = 0; j < dim; ++j) {
                double xi = rng.normal();
                xt.data[r * dim + j] = scale * xbatch.data[r * dim + j] + std * xi;
                target.data[r * dim + j] = -xi / std;
            }
            if (cfg.weighting == "snr") w[r] = std * std;
        }

        Var pred = res.net->forward_rows(constant(xt), ts, cond);
        Var diff = sub(pred, constant(target));
        Var per_row = sum_rows(square(diff)); // (batch,)
        Var loss = mean(mul(per_row, constant(Tensor::vector(w))));

        if (!std::isfinite(loss->value.item()))
            throw std::runtime_error("train_dsm: divergent (non-finite) loss at step " +
                                     std::to_string(step));
        res.loss_trajectory.push_back(loss->value.item());

        backward(loss);
        opt.step_from_tape(res.net->params());

        if (cfg.eval_every > 0 && cfg.eval_fn && (step + 1) % cfg.eval_every == 0)
            res.eval_trajectory.push_back(cfg.eval_fn(*res.net));
    }
    return res;
}

void save_score_model(const std::string& path, const NetScore& net, const ForwardProcess& process,
                      const GridConfig& grid) {
    nlohmann::json sidecar = {{"process", to_string(process.kind)},
                              {"T", process.T},
                              {"grid", grid.to_json()},
                              {"dim", net.dim()}};
    nlohmann::json meta = sidecar;
    meta["arch"] = net.arch_json();
    save_checkpoint(path, net.params(), meta);
    write_file_atomic(path + ".json", sidecar.dump(2) + "\n");
}

LoadedScoreModel load_score_model(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    Rng tmp(0);
    LoadedScoreModel out;
    out.net = std::shared_ptr<NetScore>(NetScore::from_arch(ck.meta["arch"], tmp).release());
    restore_params(out.net->params(), ck);
    ForwardProcess p{process_kind_from_string(ck.meta["process"].get<std::string>()),
                     ck.meta["T"].get<double>()};
    out.model = ScoreModel{p, out.net, out.net->dim(), out.net->cond_vocab()};
    out.grid = GridConfig::from_json(ck.meta["grid"]);
    return out;
}

} // namespace pagoda
