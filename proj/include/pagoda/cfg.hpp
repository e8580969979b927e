#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pagoda/distill.hpp"

namespace pagoda {

struct Gaussian1 {
    double mean = 0.0;
    double var = 1.0;
};

/// Complete-the-square for p(x|c)^w p(x)^{1-w} with 1-D Gaussians.
/// Throws when the combined precision w/var_c + (1-w)/var_0 is not positive.
Gaussian1 guided_gaussian(const Gaussian1& cond, const Gaussian1& marg, double omega);

double gaussian_pdf(double x, const Gaussian1& g);

/// w * s_cond(x,t,c) + (1-w) * s_marg(x,t).
Tensor guided_score(const ScoreFn& s_cond, const ScoreFn& s_marg, double omega, const Tensor& x,
                    double t, const std::vector<int>& c);

/// Score evaluator combining a conditional and a marginal model with a
/// per-row (or broadcast) guidance weight; plugs into the PF-ODE solver.
class GuidedScoreFn : public ScoreFn {
public:
    GuidedScoreFn(std::shared_ptr<ScoreFn> cond, std::shared_ptr<ScoreFn> marg,
                  std::vector<double> omegas)
        : cond_(std::move(cond)), marg_(std::move(marg)), omegas_(std::move(omegas)) {}
    Tensor eval(const Tensor& x, double t, const std::vector<int>& c) const override;

private:
    std::shared_ptr<ScoreFn> cond_, marg_;
    std::vector<double> omegas_; // size 1 broadcasts
};

ScoreModel guided_model(const ScoreModel& cond, const ScoreModel& marg, std::vector<double> omegas);

/// DDIM inversion under the guided score at weight omega.
Tensor guided_invert(const ScoreModel& cond, const ScoreModel& marg, const Tensor& x_low,
                     const std::vector<int>& c, double omega, const TimeGrid& grid);

/// Pair building with guided inversion; omega (per record) is stored in the
/// records' omega field.
PairSet build_pairs_guided(const Tensor& dataset_high, const std::vector<int>& conds,
                           const std::vector<double>& omegas, const ScoreModel& cond_model,
                           const ScoreModel& marg_model, const DownsampleOp& op, const TimeGrid& grid,
                           const BuildPairsConfig& cfg);

// ---------------------------------------------------------------------------
// Guidance-weight prior pi(omega)
// ---------------------------------------------------------------------------

struct OmegaPrior {
    enum class Kind { uniform, truncnorm, point, grid };
    Kind kind = Kind::uniform;
    double a = 2.0, b = 10.0;        // support bounds (uniform / truncnorm)
    double center = 2.0, scale = 3.0; // truncnorm
    double value = 1.0;               // point
    std::vector<double> grid_points;  // discrete grid
    std::vector<double> grid_weights; // normalized alongside grid_points

    double sample(Rng& rng) const;
    /// "uniform:a,b" | "truncnorm:c,s,a,b" | "point:v"
    static OmegaPrior parse(const std::string& spec);
    nlohmann::json to_json() const;
};

// ---------------------------------------------------------------------------
// Closed-form toys: per-class Gaussian conditionals with a shared-variance
// Gaussian marginal stand-in, and a discrete omega grid. Equal variances keep
// the guided family closed under the diffusion, so guided DDIM sampling and
// the Bayes posterior refer to the same distribution.
// ---------------------------------------------------------------------------

struct GuidedGaussianToy {
    std::vector<Gaussian1> cond;   // per class
    Gaussian1 marg;
    std::vector<double> class_probs;
    std::vector<double> omega_grid;
    std::vector<double> omega_prior; // normalized weights

    Gaussian1 guided(int c, double omega) const { return guided_gaussian(cond.at(c), marg, omega); }
};

/// p(omega | x, c) over the toy's omega grid; sums to one. Throws if every
/// grid point has zero likelihood.
std::vector<double> omega_posterior(const GuidedGaussianToy& toy, double x, int c);
double omega_posterior_mean(const GuidedGaussianToy& toy, double x, int c);
/// MAP alternative ("most likely omega"); posterior mean is the default used
/// by the estimator objective.
double omega_posterior_map(const GuidedGaussianToy& toy, double x, int c);

// ---------------------------------------------------------------------------
// Tabular instance for the exact Bayes-identity and enumeration oracles.
// ---------------------------------------------------------------------------

struct TabularCfgInstance {
    std::vector<double> x_values;
    std::vector<double> class_probs;
    std::vector<std::vector<double>> cond; // [c][x] = p(x|c), rows normalized
    std::vector<double> omega_grid;
    std::vector<double> omega_prior;

    std::vector<double> marginal() const;                       // p(x)
    std::vector<double> guided(int c, double omega) const;      // p(x|c,w) normalized
    /// p(c) pi(w) p(x|c,w)
    double joint(int c, int wi, int xi) const;
    /// (x,c) marginal of the joint
    double joint_xc(int xi, int c) const;
    std::vector<double> omega_posterior(int xi, int c) const;
    double posterior_mean(int xi, int c) const;
};

// ---------------------------------------------------------------------------
// CFG weight estimator: MLP over (x, embedding(c)) -> omega.
// ---------------------------------------------------------------------------

class OmegaEstimator {
public:
    OmegaEstimator(std::size_t dim, std::size_t vocab, std::vector<std::size_t> hidden,
                   Activation act, std::size_t cond_embed, Rng& rng);

    Var forward(const Var& x, const std::vector<int>& c) const; // (B,)
    std::vector<double> predict(const Tensor& x, const std::vector<int>& c) const;
    ParamSet& params() { return params_; }

private:
    std::size_t dim_, vocab_;
    ParamSet params_;
    Mlp mlp_;
    Var embed_;
};

/// Teacher sampler producing clean base samples x_hat(z, c, omega).
using GuidedSampler =
    std::function<Tensor(const Tensor& z, const std::vector<int>& c, const std::vector<double>& omega)>;

GuidedSampler guided_ddim_sampler(const ScoreModel& cond, const ScoreModel& marg, const TimeGrid& grid);

struct OmegaTrainConfig {
    std::size_t steps = 1500;
    std::size_t batch = 64;
    std::vector<std::size_t> hidden = {48, 48};
    Activation act = Activation::silu;
    std::size_t cond_embed = 4;
    OptConfig opt = {OptKind::adam, 2e-3};
    bool cosine_lr_decay = true;
};

struct OmegaTrainResult {
    std::shared_ptr<OmegaEstimator> estimator;
    std::vector<double> mse_trajectory;
};

/// Minimizes E || omega - est(x_hat(z,c,omega), c) ||^2 with z from the
/// process prior, c from class_probs and omega from the prior.
OmegaTrainResult train_omega_estimator(const GuidedSampler& sampler, const ForwardProcess& process,
                                       std::size_t dim, const std::vector<double>& class_probs,
                                       const OmegaPrior& prior, const OmegaTrainConfig& cfg, Rng& rng);

/// E[log D(x, c, est(x,c))] + E[log(1 - D(G(z,c,w), c, w))]. The estimator
/// output enters as a constant (no gradient through it). G and D must be
/// omega-conditioned.
Var cfg_adv_loss(const Generator& g, const Discriminator& d, const Tensor& x_real,
                 const std::vector<int>& c_real, const OmegaEstimator& est, const Tensor& prior,
                 const std::vector<int>& c_fake, const std::vector<double>& omega_fake);

} // namespace pagoda
