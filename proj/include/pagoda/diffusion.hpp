#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pagoda/nn.hpp"
#include "pagoda/optim.hpp"
#include "pagoda/rng.hpp"

namespace pagoda {

// ---------------------------------------------------------------------------
// Forward processes. VE: dx = sqrt(2t) dw, marginal std t. VP: the OU process
// dx = -x dt + sqrt(2) dw, marginal transform x_t = e^-t x0 + sqrt(1-e^-2t) xi.
// ---------------------------------------------------------------------------

enum class ProcessKind { VE, VP };

ProcessKind process_kind_from_string(const std::string& s);
std::string to_string(ProcessKind k);

struct ForwardProcess {
    ProcessKind kind = ProcessKind::VE;
    double T = 1.0;
};

/// Marginal transform coefficients (scale, std) of x_t | x_0 at time t.
std::pair<double, double> marginal_params(const ForwardProcess& p, double t);

/// Prior std of the process at horizon T (VE: T, VP: sqrt(1-e^-2T)).
double prior_std(const ForwardProcess& p);

// ---------------------------------------------------------------------------
// Time grids. EDM power schedule with rho=7, t_min=0.002 by default.
// ---------------------------------------------------------------------------

struct GridConfig {
    std::size_t steps = 40;    // integration intervals; the grid has steps+1 points
    double t_min = 0.002;
    double rho = 7.0;
    std::string kind = "edm";  // edm | uniform

    nlohmann::json to_json() const;
    static GridConfig from_json(const nlohmann::json& j);
};

struct TimeGrid {
    std::vector<double> times; // strictly decreasing, times.front()==T, times.back()==t_min

    static TimeGrid edm(double T, std::size_t steps, double t_min = 0.002, double rho = 7.0);
    static TimeGrid uniform(double T, std::size_t steps, double t_min);
    static TimeGrid make(const ForwardProcess& p, const GridConfig& cfg);

    std::size_t steps() const { return times.size() - 1; }
    double t_max() const { return times.front(); }
    double t_min() const { return times.back(); }
};

// ---------------------------------------------------------------------------
// Score models
// ---------------------------------------------------------------------------

/// Batched score evaluator s(x, t[, c]). `cond` is one id per row, or empty
/// for unconditional evaluation.
struct ScoreFn {
    virtual ~ScoreFn() = default;
    virtual Tensor eval(const Tensor& x, double t, const std::vector<int>& cond) const = 0;
};

struct GaussianData {
    std::vector<double> mean;
    std::vector<double> var; // diagonal, elementwise > 0
    std::size_t dim() const { return mean.size(); }
};

/// Exact score of a diagonal-Gaussian data distribution under the process
/// marginal: VE -(x-mu)/(var+t^2), VP -(x - e^-t mu)/(e^-2t var + 1 - e^-2t).
class AnalyticGaussianScore : public ScoreFn {
public:
    AnalyticGaussianScore(GaussianData data, ForwardProcess process);
    Tensor eval(const Tensor& x, double t, const std::vector<int>& cond) const override;
    const GaussianData& data() const { return data_; }

private:
    GaussianData data_;
    ForwardProcess process_;
};

/// Arbitrary callable score, used by labs and tests.
class FunctionScore : public ScoreFn {
public:
    using Fn = std::function<Tensor(const Tensor&, double)>;
    explicit FunctionScore(Fn fn) : fn_(std::move(fn)) {}
    Tensor eval(const Tensor& x, double t, const std::vector<int>&) const override { return fn_(x, t); }

private:
    Fn fn_;
};

/// MLP score network over [x, scalar_features(t), embedding(c)]. Condition
/// ids index a learned table; id -1 (or empty cond) selects the null row,
/// which doubles as the marginal/unconditional branch for CFG-style training.
class NetScore : public ScoreFn {
public:
    NetScore(std::size_t dim, std::vector<std::size_t> hidden, Activation act, std::size_t cond_vocab,
             std::size_t cond_embed, Rng& rng);

    Tensor eval(const Tensor& x, double t, const std::vector<int>& cond) const override;
    /// Training-path forward with per-row times; participates in the tape.
    Var forward_rows(const Var& x, const std::vector<double>& ts, const std::vector<int>& cond) const;

    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }
    std::size_t dim() const { return dim_; }
    std::size_t cond_vocab() const { return cond_vocab_; }
    nlohmann::json arch_json() const;
    static std::unique_ptr<NetScore> from_arch(const nlohmann::json& arch, Rng& rng);

private:
    std::size_t dim_;
    std::vector<std::size_t> hidden_;
    Activation act_;
    std::size_t cond_vocab_; // 0 = unconditional net
    std::size_t cond_embed_;
    ParamSet params_;
    Mlp mlp_;
    Var embed_; // (vocab+1, embed); last row is the null condition
};

/// A score function together with its forward-process description.
struct ScoreModel {
    ForwardProcess process;
    std::shared_ptr<ScoreFn> fn;
    std::size_t dim = 1;
    std::size_t cond_vocab = 0;

    Tensor score(const Tensor& x, double t, const std::vector<int>& cond = {}) const {
        return fn->eval(x, t, cond);
    }
};

// ---------------------------------------------------------------------------
// PF-ODE solving and DDIM maps
// ---------------------------------------------------------------------------

enum class OdeMethod { euler, heun };

/// PF-ODE right-hand side: VE dx/dt = -t s(x,t); VP dx/dt = -x - s(x,t).
Tensor pf_ode_rhs(const ScoreModel& m, const Tensor& x, double t, const std::vector<int>& cond);

/// Integrates along the grid between t_start and t_end (direction inferred).
/// Throws on a non-finite state, reporting the time stamp.
Tensor solve_pf_ode(const ScoreModel& m, const Tensor& x_start, double t_start, double t_end,
                    const TimeGrid& grid, OdeMethod method, const std::vector<int>& cond = {});

/// Deterministic latent of x0: forward-time solve from t_min to T.
Tensor ddim_invert(const ScoreModel& m, const Tensor& x0, const TimeGrid& grid,
                   const std::vector<int>& cond = {});
/// Generation: backward solve from T to t_min.
Tensor ddim_generate(const ScoreModel& m, const Tensor& z, const TimeGrid& grid,
                     const std::vector<int>& cond = {});

/// n i.i.d. prior draws with the process-appropriate covariance.
Tensor prior_sample(const ForwardProcess& p, std::size_t dim, std::size_t n, Rng& rng);

// ---------------------------------------------------------------------------
// Denoising score matching (Stage 1)
// ---------------------------------------------------------------------------

/// Data sampler: fills x (n, dim) and per-row condition ids (empty if the
/// dataset is unconditional).
using DataSampler = std::function<void(Rng&, std::size_t, Tensor&, std::vector<int>&)>;

struct DsmConfig {
    std::size_t steps = 4000;
    std::size_t batch = 64;
    std::vector<std::size_t> hidden = {64, 64};
    Activation act = Activation::silu;
    OptConfig opt = {OptKind::adam, 1e-3};
    double t_min = 0.002;
    std::size_t cond_vocab = 0;
    std::size_t cond_embed = 8;
    double cond_dropout = 0.1; // probability of replacing c by the null id
    // snr scales the score residual by std(t)^2 (noise-prediction form, same
    // minimizer, bounded targets); uniform weighting is kept as an option but
    // is unusably noisy near t_min at toy scale.
    std::string weighting = "snr";
    bool cosine_lr_decay = true;
    std::size_t eval_every = 0; // 0 disables the eval trajectory
    std::function<double(const ScoreFn&)> eval_fn; // recorded when eval_every > 0
};

struct DsmResult {
    std::shared_ptr<NetScore> net;
    ScoreModel model;
    std::vector<double> loss_trajectory;
    std::vector<double> eval_trajectory;
};

/// Trains a score network by denoising score matching: t log-uniform on
/// [t_min, T], target the conditional score of the perturbation kernel.
/// Throws (with the step index) if the loss goes non-finite.
DsmResult train_dsm(const DataSampler& data, const ForwardProcess& process, std::size_t dim,
                    const DsmConfig& cfg, Rng& rng);

// Score checkpoint io: nd-substrate format plus a JSON sidecar with
// {process kind, T, grid config, data dimension}.
void save_score_model(const std::string& path, const NetScore& net, const ForwardProcess& process,
                      const GridConfig& grid);
struct LoadedScoreModel {
    std::shared_ptr<NetScore> net;
    ScoreModel model;
    GridConfig grid;
};
LoadedScoreModel load_score_model(const std::string& path);

} // namespace pagoda
