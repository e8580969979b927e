#pragma once

#include <complex>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pagoda/tensor.hpp"

namespace pagoda::theory {

// ---------------------------------------------------------------------------
// Expectations in the lab are weighted sums over finite supports or
// Gauss-Hermite quadrature nodes; nothing is Monte Carlo.
// ---------------------------------------------------------------------------

struct WeightedPoints {
    std::vector<double> points;
    std::vector<double> weights; // sum to one
};

WeightedPoints dirac(double x);
WeightedPoints two_points(double a, double b); // equal mass
WeightedPoints gauss_hermite(double mean, double stddev, std::size_t n = 64);

// Vanilla-GAN link f(u) = -log(1+e^-u) and its derivatives.
double link_f(double u);
double link_f1(double u);
double link_f2(double u);

// ---------------------------------------------------------------------------
// Stability instances: scalar data/prior, G_theta(z) = sum_j theta_j g_j(z),
// D_psi(x) = sum_k psi_k d_k(x), fixed encoder E, reconstruction weight eta.
// ---------------------------------------------------------------------------

struct Basis {
    std::vector<std::function<double(double)>> f;  // basis values
    std::vector<std::function<double(double)>> d1; // first derivatives
    std::vector<std::function<double(double)>> d2; // second derivatives
    std::size_t size() const { return f.size(); }
};

struct StabilityInstance {
    std::string name;
    WeightedPoints data, prior;
    Basis g_basis, d_basis;
    std::function<double(double)> encoder;
    double eta = 1.0;
    std::vector<double> theta_star, psi_star;
    // Normal-space bases of the equilibrium manifolds at the equilibrium
    // (unit vectors; empty when the manifold fills the whole space).
    std::vector<std::vector<double>> mg_normal, md_normal;
    bool expect_stable = true;

    double G(const std::vector<double>& theta, double z) const;
    double D(const std::vector<double>& psi, double x) const;
    double D_dx(const std::vector<double>& psi, double x) const;
    double D_dxx(const std::vector<double>& psi, double x) const;
};

// Shipped instances.
StabilityInstance linear_instance(double eta);                  // E=x/2, G=theta z, data delta_1, D=psi (x-1)
StabilityInstance dirac_gan_instance();                         // eta=0, G=theta, D=psi x, data delta_0
StabilityInstance curved_disc_instance(double eta, double psi_star); // D=psi (x-1)^2, nonzero eta_min
StabilityInstance mixture_instance(double eta);                 // data {-1,+1}, 2-parameter G and D
StabilityInstance gaussian_instance(double eta, double mean, double stddev);

/// Rejects instances violating the standing assumptions (encoder identity,
/// link signs, equilibrium residual, and the numeric transversality check on
/// the discriminator coupling) with a diagnostic message.
void validate_instance(const StabilityInstance& inst);

/// Exact gradient-flow field (-grad_theta L, +grad_psi L) of the
/// eta-weighted reconstruction + adversarial objective.
std::vector<double> velocity_field(const StabilityInstance& inst, const std::vector<double>& theta,
                                   const std::vector<double>& psi);

struct JacobianBlocks {
    std::size_t n_theta = 0, n_psi = 0;
    std::vector<double> k_gg; // (n_theta x n_theta) row-major
    std::vector<double> k_dg; // (n_psi x n_theta)
    std::vector<double> k_dd; // (n_psi x n_psi)
    std::vector<double> assembled() const; // [[K_GG, -K_DG^T], [K_DG, K_DD]]
    std::size_t dim() const { return n_theta + n_psi; }
};

JacobianBlocks jacobian_blocks_analytic(const StabilityInstance& inst,
                                        const std::vector<double>& theta,
                                        const std::vector<double>& psi);
std::vector<double> jacobian_fd(const StabilityInstance& inst, const std::vector<double>& theta,
                                const std::vector<double>& psi, double eps = 1e-5);

/// Analytic blocks cross-checked against finite differences of the velocity
/// field (rel. error < 1e-5). Throws when (theta, psi) is not an equilibrium
/// (velocity norm > 1e-9) or when the cross-check fails.
JacobianBlocks jacobian_at(const StabilityInstance& inst, const std::vector<double>& theta,
                           const std::vector<double>& psi);

struct HurwitzReport {
    bool is_hurwitz = false;
    double max_real_part = 0.0;
    std::vector<std::complex<double>> spectrum;
};

/// Dense eigensolve (QR iteration via Eigen). is_hurwitz iff the largest
/// real part is below `threshold` (default -1e-10, configurable).
HurwitzReport hurwitz_check(const std::vector<double>& j, std::size_t n, double threshold = -1e-10);

/// eta_min = lambda_max(B) / lambda_min(A) with A = 2 E_data[gg^T] and
/// B = f'(0) E_prior[D'' gg^T]; K_GG = -eta A + B is negative definite for
/// every eta above it.
double eta_min(const StabilityInstance& inst);

/// Jacobian restricted to the normal coordinates of M_G x M_D.
std::vector<double> restricted_jacobian(const JacobianBlocks& jb, const StabilityInstance& inst,
                                        std::size_t* out_dim);

enum class AltGdOrder { gen_first, disc_first };

struct AltGdResult {
    std::vector<double> distances; // to the equilibrium manifold, per step
    std::vector<double> theta_final, psi_final;
    double fitted_rate = 0.0; // continuous-time rate from a log-linear fit
    bool converged = false;
};

/// Alternating gradient descent/ascent with learning rate h. Throws when the
/// iterate diverges beyond 1e6.
AltGdResult simulate_altgd(const StabilityInstance& inst, std::vector<double> theta,
                           std::vector<double> psi, double h, std::size_t steps,
                           AltGdOrder order = AltGdOrder::gen_first);

// ---------------------------------------------------------------------------
// Optimality (tabular, exhaustive)
// ---------------------------------------------------------------------------

struct TabularOptInstance {
    std::vector<double> data_values;
    std::vector<double> data_probs;
    std::vector<double> latent_probs;
    std::vector<std::size_t> encoder;     // data index -> latent index
    std::vector<std::size_t> teacher_map; // latent index -> data index (may be wrong)
    double lambda = 1.0;
};

enum class OptimalityMode { pagoda, kd_gan };

using GenTable = std::vector<std::size_t>; // latent index -> data index

std::vector<double> pushforward(const TabularOptInstance& inst, const GenTable& table);
double tabular_recon_loss(const TabularOptInstance& inst, const GenTable& table);
double tabular_kd_loss(const TabularOptInstance& inst, const GenTable& table);
/// Value of the adversarial loss at the analytic optimal discriminator
/// D* = p_data / (p_data + p_G).
double optimal_adv_value(const std::vector<double>& p_data, const std::vector<double>& p_g);
double tv_distance(const std::vector<double>& p, const std::vector<double>& q);

struct OptimalitySearchResult {
    double best_value = 0.0;
    std::vector<GenTable> best_tables; // all global minimizers
    std::vector<double> tv_gaps;       // per best table
    double min_tv = 0.0, max_tv = 0.0;
};

/// Exhaustive minimization of L_rec + lambda L_adv* (pagoda) or
/// L_KD + lambda L_adv* (kd_gan) over all generator tables. Throws when the
/// search space exceeds ~1e6 candidates.
OptimalitySearchResult optimality_search(const TabularOptInstance& inst, OptimalityMode mode);

// ---------------------------------------------------------------------------
// Wasserstein bound checks (1-D Gaussian data, VP process, closed forms)
// ---------------------------------------------------------------------------

struct BoundInstance {
    double sigma = 0.5;   // data std; gamma = 1/sigma^2 must exceed 3/2
    double T = 2.0;       // horizon
    double eps_dm = 0.0;  // uniform score error (constant shift on the score)
    double gen_scale = 1.0; // G(z) = a z + b
    double gen_bias = 0.0;
    std::optional<double> delta; // defaults to half the admissible maximum

    double gamma() const { return 1.0 / (sigma * sigma); }
    double delta_max() const;
    double delta_value() const;
    double h_value() const; // h(gamma, T) with the chosen delta
};

/// Exact generator slopes for reference: prior -> data (zero W2 lhs) and the
/// true inverse flow map slope sigma / sqrt(v(T)).
double exact_prior_to_data_scale(const BoundInstance& inst);
double true_inverse_scale(const BoundInstance& inst);

struct BoundReport {
    double lhs = 0.0;
    double rhs = 0.0;
    bool holds = false;
    std::map<std::string, double> terms;
};

BoundReport w2_bound_check(const BoundInstance& inst);
/// nu = oracle data distribution when empirical_n is empty, otherwise the
/// empirical law of n draws (seeded).
BoundReport w1_bound_check(const BoundInstance& inst, std::optional<std::size_t> empirical_n = {},
                           std::uint64_t seed = 7);

} // namespace pagoda::theory
