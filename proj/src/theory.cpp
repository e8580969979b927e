#include "pagoda/theory.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pagoda/rng.hpp"

namespace pagoda::theory {

namespace {

// Golub-Welsch: nodes/weights from the symmetric Jacobi matrix.
void golub_welsch(const std::vector<double>& offdiag, std::vector<double>& nodes,
                  std::vector<double>& weights) {
    std::size_t n = offdiag.size() + 1;
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        j(i, i + 1) = offdiag[i];
        j(i + 1, i) = offdiag[i];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
    nodes.resize(n);
    weights.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        nodes[i] = es.eigenvalues()(i);
        double v0 = es.eigenvectors()(0, i);
        weights[i] = v0 * v0; // relative weights; caller normalizes
    }
}

std::pair<std::vector<double>, std::vector<double>> gauss_legendre(std::size_t n, double a, double b) {
    std::vector<double> off(n - 1);
    for (std::size_t i = 1; i < n; ++i) {
        double di = static_cast<double>(i);
        off[i - 1] = di / std::sqrt(4.0 * di * di - 1.0);
    }
    std::vector<double> nodes, weights;
    golub_welsch(off, nodes, weights);
    // weights sum to 1 over [-1,1] after normalization; total mass is 2
    double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    for (std::size_t i = 0; i < n; ++i) {
        nodes[i] = mid + half * nodes[i];
        weights[i] *= 2.0 * half;
    }
    return {nodes, weights};
}

double norm2(const std::vector<double>& v) { return std::sqrt(sq_norm(v)); }

} // namespace

WeightedPoints dirac(double x) { return {{x}, {1.0}}; }
WeightedPoints two_points(double a, double b) { return {{a, b}, {0.5, 0.5}}; }

WeightedPoints gauss_hermite(double mean, double stddev, std::size_t n) {
    std::vector<double> off(n - 1);
    for (std::size_t i = 1; i < n; ++i) off[i - 1] = std::sqrt(static_cast<double>(i) / 2.0);
    WeightedPoints wp;
    golub_welsch(off, wp.points, wp.weights);
    double total = 0.0;
    for (double w : wp.weights) total += w;
    for (std::size_t i = 0; i < n; ++i) {
        wp.points[i] = mean + std::sqrt(2.0) * stddev * wp.points[i];
        wp.weights[i] /= total;
    }
    return wp;
}

double link_f(double u) { return -(std::max(-u, 0.0) + std::log1p(std::exp(-std::fabs(u)))); }
double link_f1(double u) { return 1.0 / (1.0 + std::exp(u)); }
double link_f2(double u) {
    double e = std::exp(-std::fabs(u));
    return -e / ((1.0 + e) * (1.0 + e));
}

double StabilityInstance::G(const std::vector<double>& theta, double z) const {
    double s = 0.0;
    for (std::size_t j = 0; j < theta.size(); ++j) s += theta[j] * g_basis.f[j](z);
    return s;
}
double StabilityInstance::D(const std::vector<double>& psi, double x) const {
    double s = 0.0;
    for (std::size_t k = 0; k < psi.size(); ++k) s += psi[k] * d_basis.f[k](x);
    return s;
}
double StabilityInstance::D_dx(const std::vector<double>& psi, double x) const {
    double s = 0.0;
    for (std::size_t k = 0; k < psi.size(); ++k) s += psi[k] * d_basis.d1[k](x);
    return s;
}
double StabilityInstance::D_dxx(const std::vector<double>& psi, double x) const {
    double s = 0.0;
    for (std::size_t k = 0; k < psi.size(); ++k) s += psi[k] * d_basis.d2[k](x);
    return s;
}

StabilityInstance linear_instance(double eta) {
    StabilityInstance in;
    in.name = "linear";
    in.data = dirac(1.0);
    in.prior = dirac(0.5);
    in.g_basis.f = {[](double z) { return z; }};
    in.g_basis.d1 = {[](double) { return 1.0; }};
    in.g_basis.d2 = {[](double) { return 0.0; }};
    in.d_basis.f = {[](double x) { return x - 1.0; }};
    in.d_basis.d1 = {[](double) { return 1.0; }};
    in.d_basis.d2 = {[](double) { return 0.0; }};
    in.encoder = [](double x) { return 0.5 * x; };
    in.eta = eta;
    in.theta_star = {2.0};
    in.psi_star = {0.0};
    in.mg_normal = {{1.0}};
    in.md_normal = {{1.0}};
    in.expect_stable = eta > 0.0;
    return in;
}

StabilityInstance dirac_gan_instance() {
    StabilityInstance in;
    in.name = "dirac_gan";
    in.data = dirac(0.0);
    in.prior = dirac(0.0); // generator ignores z
    in.g_basis.f = {[](double) { return 1.0; }};
    in.g_basis.d1 = {[](double) { return 0.0; }};
    in.g_basis.d2 = {[](double) { return 0.0; }};
    in.d_basis.f = {[](double x) { return x; }};
    in.d_basis.d1 = {[](double) { return 1.0; }};
    in.d_basis.d2 = {[](double) { return 0.0; }};
    in.encoder = [](double x) { return 0.5 * x; };
    in.eta = 0.0;
    in.theta_star = {0.0};
    in.psi_star = {0.0};
    in.mg_normal = {{1.0}};
    in.md_normal = {{1.0}};
    in.expect_stable = false;
    return in;
}

StabilityInstance curved_disc_instance(double eta, double psi_star) {
    StabilityInstance in;
    in.name = "curved_disc";
    in.data = dirac(1.0);
    in.prior = dirac(0.5);
    in.g_basis.f = {[](double z) { return z; }};
    in.g_basis.d1 = {[](double) { return 1.0; }};
    in.g_basis.d2 = {[](double) { return 0.0; }};
    in.d_basis.f = {[](double x) { return (x - 1.0) * (x - 1.0); }};
    in.d_basis.d1 = {[](double x) { return 2.0 * (x - 1.0); }};
    in.d_basis.d2 = {[](double) { return 2.0; }};
    in.encoder = [](double x) { return 0.5 * x; };
    in.eta = eta;
    in.theta_star = {2.0};
    in.psi_star = {psi_star};
    in.mg_normal = {{1.0}};
    in.md_normal = {}; // D and grad D vanish on the support for every psi
    in.expect_stable = eta > eta_min(in);
    return in;
}

StabilityInstance mixture_instance(double eta) {
    StabilityInstance in;
    in.name = "mixture";
    in.data = two_points(-1.0, 1.0);
    in.prior = two_points(-0.5, 0.5);
    in.g_basis.f = {[](double z) { return z; }, [](double) { return 1.0; }};
    in.g_basis.d1 = {[](double) { return 1.0; }, [](double) { return 0.0; }};
    in.g_basis.d2 = {[](double) { return 0.0; }, [](double) { return 0.0; }};
    in.d_basis.f = {[](double x) { return x; }, [](double x) { return x * x; }};
    in.d_basis.d1 = {[](double) { return 1.0; }, [](double x) { return 2.0 * x; }};
    in.d_basis.d2 = {[](double) { return 0.0; }, [](double) { return 2.0; }};
    in.encoder = [](double x) { return 0.5 * x; };
    in.eta = eta;
    in.theta_star = {2.0, 0.0};
    in.psi_star = {0.0, 0.0};
    in.mg_normal = {{1.0, 0.0}, {0.0, 1.0}};
    in.md_normal = {{1.0, 0.0}, {0.0, 1.0}};
    in.expect_stable = eta > 0.0;
    return in;
}

StabilityInstance gaussian_instance(double eta, double mean, double stddev) {
    StabilityInstance in;
    in.name = "gaussian";
    in.data = gauss_hermite(mean, stddev, 64);
    in.prior = gauss_hermite(0.5 * mean, 0.5 * stddev, 64);
    in.g_basis = mixture_instance(eta).g_basis;
    in.d_basis = mixture_instance(eta).d_basis;
    in.encoder = [](double x) { return 0.5 * x; };
    in.eta = eta;
    in.theta_star = {2.0, 0.0};
    in.psi_star = {0.0, 0.0};
    in.mg_normal = {{1.0, 0.0}, {0.0, 1.0}};
    in.md_normal = {{1.0, 0.0}, {0.0, 1.0}};
    in.expect_stable = eta > 0.0;
    return in;
}

std::vector<double> velocity_field(const StabilityInstance& inst, const std::vector<double>& theta,
                                   const std::vector<double>& psi) {
    std::size_t nt = inst.g_basis.size(), np = inst.d_basis.size();
    std::vector<double> grad_theta(nt, 0.0), grad_psi(np, 0.0);

    for (std::size_t i = 0; i < inst.data.points.size(); ++i) {
        double x = inst.data.points[i], w = inst.data.weights[i];
        double ex = inst.encoder(x);
        double gex = inst.G(theta, ex);
        for (std::size_t j = 0; j < nt; ++j)
            grad_theta[j] += w * (-2.0 * inst.eta * (x - gex) * inst.g_basis.f[j](ex));
        double f1 = link_f1(inst.D(psi, x));
        for (std::size_t k = 0; k < np; ++k) grad_psi[k] += w * f1 * inst.d_basis.f[k](x);
    }
    for (std::size_t i = 0; i < inst.prior.points.size(); ++i) {
        double z = inst.prior.points[i], w = inst.prior.weights[i];
        double gz = inst.G(theta, z);
        double f1 = link_f1(-inst.D(psi, gz));
        double ddx = inst.D_dx(psi, gz);
        for (std::size_t j = 0; j < nt; ++j) grad_theta[j] += w * (-f1 * ddx * inst.g_basis.f[j](z));
        for (std::size_t k = 0; k < np; ++k) grad_psi[k] -= w * f1 * inst.d_basis.f[k](gz);
    }

    std::vector<double> v(nt + np);
    for (std::size_t j = 0; j < nt; ++j) v[j] = -grad_theta[j];
    for (std::size_t k = 0; k < np; ++k) v[nt + k] = grad_psi[k];
    for (double x : v)
        if (!std::isfinite(x)) throw std::runtime_error("velocity_field: non-finite component");
    return v;
}

std::vector<double> JacobianBlocks::assembled() const {
    std::size_t n = dim();
    std::vector<double> j(n * n, 0.0);
    for (std::size_t a = 0; a < n_theta; ++a)
        for (std::size_t b = 0; b < n_theta; ++b) j[a * n + b] = k_gg[a * n_theta + b];
    for (std::size_t k = 0; k < n_psi; ++k)
        for (std::size_t b = 0; b < n_theta; ++b) {
            j[(n_theta + k) * n + b] = k_dg[k * n_theta + b];
            j[b * n + n_theta + k] = -k_dg[k * n_theta + b];
        }
    for (std::size_t k = 0; k < n_psi; ++k)
        for (std::size_t l = 0; l < n_psi; ++l) j[(n_theta + k) * n + n_theta + l] = k_dd[k * n_psi + l];
    return j;
}

JacobianBlocks jacobian_blocks_analytic(const StabilityInstance& inst,
                                        const std::vector<double>& theta,
                                        const std::vector<double>& psi) {
    std::size_t nt = inst.g_basis.size(), np = inst.d_basis.size();
    JacobianBlocks jb;
    jb.n_theta = nt;
    jb.n_psi = np;
    jb.k_gg.assign(nt * nt, 0.0);
    jb.k_dg.assign(np * nt, 0.0);
    jb.k_dd.assign(np * np, 0.0);
    double f1 = link_f1(0.0), f2 = link_f2(0.0);

    // K_GG = -2 eta E_data[g g^T at E(x)] + f'(0) E_prior[D''(G(z)) g g^T at z]
    for (std::size_t i = 0; i < inst.data.points.size(); ++i) {
        double ex = inst.encoder(inst.data.points[i]);
        double w = inst.data.weights[i];
        for (std::size_t a = 0; a < nt; ++a)
            for (std::size_t b = 0; b < nt; ++b)
                jb.k_gg[a * nt + b] +=
                    -2.0 * inst.eta * w * inst.g_basis.f[a](ex) * inst.g_basis.f[b](ex);
    }
    for (std::size_t i = 0; i < inst.prior.points.size(); ++i) {
        double z = inst.prior.points[i], w = inst.prior.weights[i];
        double gz = inst.G(theta, z);
        double curv = inst.D_dxx(psi, gz);
        for (std::size_t a = 0; a < nt; ++a)
            for (std::size_t b = 0; b < nt; ++b)
                jb.k_gg[a * nt + b] += f1 * w * curv * inst.g_basis.f[a](z) * inst.g_basis.f[b](z);
        // K_DG[k][j] = -f'(0) E_prior[d_k'(G(z)) g_j(z)]
        for (std::size_t k = 0; k < np; ++k)
            for (std::size_t j = 0; j < nt; ++j)
                jb.k_dg[k * nt + j] += -f1 * w * inst.d_basis.d1[k](gz) * inst.g_basis.f[j](z);
    }
    // K_DD = 2 f''(0) E_data[d d^T]
    for (std::size_t i = 0; i < inst.data.points.size(); ++i) {
        double x = inst.data.points[i], w = inst.data.weights[i];
        for (std::size_t k = 0; k < np; ++k)
            for (std::size_t l = 0; l < np; ++l)
                jb.k_dd[k * np + l] += 2.0 * f2 * w * inst.d_basis.f[k](x) * inst.d_basis.f[l](x);
    }
    return jb;
}

std::vector<double> jacobian_fd(const StabilityInstance& inst, const std::vector<double>& theta,
                                const std::vector<double>& psi, double eps) {
    std::size_t nt = theta.size(), np = psi.size(), n = nt + np;
    std::vector<double> j(n * n);
    auto eval = [&](const std::vector<double>& xi) {
        std::vector<double> th(xi.begin(), xi.begin() + nt), ps(xi.begin() + nt, xi.end());
        return velocity_field(inst, th, ps);
    };
    std::vector<double> xi(n);
    std::copy(theta.begin(), theta.end(), xi.begin());
    std::copy(psi.begin(), psi.end(), xi.begin() + nt);
    for (std::size_t col = 0; col < n; ++col) {
        std::vector<double> hi = xi, lo = xi;
        hi[col] += eps;
        lo[col] -= eps;
        auto vh = eval(hi), vl = eval(lo);
        for (std::size_t row = 0; row < n; ++row) j[row * n + col] = (vh[row] - vl[row]) / (2.0 * eps);
    }
    return j;
}

JacobianBlocks jacobian_at(const StabilityInstance& inst, const std::vector<double>& theta,
                           const std::vector<double>& psi) {
    auto v = velocity_field(inst, theta, psi);
    if (norm2(v) > 1e-9)
        throw std::invalid_argument("jacobian_at: (theta, psi) is not an equilibrium (|v| = " +
                                    std::to_string(norm2(v)) + ")");
    JacobianBlocks jb = jacobian_blocks_analytic(inst, theta, psi);
    auto analytic = jb.assembled();
    auto fd = jacobian_fd(inst, theta, psi);
    double scale = 1.0;
    for (double x : analytic) scale = std::max(scale, std::fabs(x));
    for (std::size_t i = 0; i < analytic.size(); ++i)
        if (std::fabs(analytic[i] - fd[i]) > 1e-5 * scale)
            throw std::runtime_error("jacobian_at: analytic/finite-difference mismatch at entry " +
                                     std::to_string(i));
    return jb;
}

HurwitzReport hurwitz_check(const std::vector<double>& j, std::size_t n, double threshold) {
    if (j.size() != n * n) throw std::invalid_argument("hurwitz_check: matrix must be square");
    Eigen::MatrixXd m(n, n);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) m(r, c) = j[r * n + c];
    Eigen::EigenSolver<Eigen::MatrixXd> es(m);
    HurwitzReport rep;
    rep.max_real_part = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        std::complex<double> ev = es.eigenvalues()(i);
        rep.spectrum.push_back(ev);
        rep.max_real_part = std::max(rep.max_real_part, ev.real());
    }
    rep.is_hurwitz = rep.max_real_part < threshold;
    return rep;
}

double eta_min(const StabilityInstance& inst) {
    std::size_t nt = inst.g_basis.size();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(nt, nt), b = Eigen::MatrixXd::Zero(nt, nt);
    for (std::size_t i = 0; i < inst.data.points.size(); ++i) {
        double ex = inst.encoder(inst.data.points[i]);
        double w = inst.data.weights[i];
        for (std::size_t r = 0; r < nt; ++r)
            for (std::size_t c = 0; c < nt; ++c)
                a(r, c) += 2.0 * w * inst.g_basis.f[r](ex) * inst.g_basis.f[c](ex);
    }
    for (std::size_t i = 0; i < inst.prior.points.size(); ++i) {
        double z = inst.prior.points[i], w = inst.prior.weights[i];
        double gz = inst.G(inst.theta_star, z);
        double curv = inst.D_dxx(inst.psi_star, gz);
        for (std::size_t r = 0; r < nt; ++r)
            for (std::size_t c = 0; c < nt; ++c)
                b(r, c) += link_f1(0.0) * w * curv * inst.g_basis.f[r](z) * inst.g_basis.f[c](z);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a), eb(b);
    double amin = ea.eigenvalues().minCoeff();
    if (amin <= 0.0)
        throw std::runtime_error("eta_min: E[grad G grad G^T] must be positive definite");
    double bmax = std::max(0.0, eb.eigenvalues().maxCoeff());
    return bmax / amin;
}

std::vector<double> restricted_jacobian(const JacobianBlocks& jb, const StabilityInstance& inst,
                                        std::size_t* out_dim) {
    auto full = jb.assembled();
    std::size_t nt = jb.n_theta, n = jb.dim();
    std::vector<std::vector<double>> dirs;
    for (const auto& w : inst.mg_normal) {
        std::vector<double> v(n, 0.0);
        std::copy(w.begin(), w.end(), v.begin());
        dirs.push_back(v);
    }
    for (const auto& w : inst.md_normal) {
        std::vector<double> v(n, 0.0);
        std::copy(w.begin(), w.end(), v.begin() + nt);
        dirs.push_back(v);
    }
    std::size_t m = dirs.size();
    if (out_dim) *out_dim = m;
    std::vector<double> r(m * m, 0.0);
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = 0; b < m; ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double ji = 0.0;
                for (std::size_t k = 0; k < n; ++k) ji += full[i * n + k] * dirs[b][k];
                s += dirs[a][i] * ji;
            }
            r[a * m + b] = s;
        }
    return r;
}

void validate_instance(const StabilityInstance& inst) {
    // Assumption C(i): f'(0) > 0, f''(0) < 0 for the fixed link.
    if (!(link_f1(0.0) > 0.0 && link_f2(0.0) < 0.0))
        throw std::logic_error("instance link violates f'(0)>0, f''(0)<0");
    // Assumption B: E is not the identity map (probe a few points).
    bool differs = false;
    for (double p : {-1.0, 0.3, 1.0, 2.0})
        if (std::fabs(inst.encoder(p) - p) > 1e-12) differs = true;
    if (!differs) throw std::logic_error("instance '" + inst.name + "': encoder is the identity map");
    // Equilibrium residual.
    auto v = velocity_field(inst, inst.theta_star, inst.psi_star);
    if (norm2(v) > 1e-9)
        throw std::logic_error("instance '" + inst.name + "': stored equilibrium is not stationary");
    if (!inst.expect_stable) return;
    // Assumption C(iv): the discriminator coupling must act on every normal
    // direction of M_D (numeric transversality check).
    auto jb = jacobian_blocks_analytic(inst, inst.theta_star, inst.psi_star);
    for (const auto& w : inst.md_normal) {
        double best = 0.0;
        for (std::size_t j = 0; j < jb.n_theta; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < jb.n_psi; ++k) s += jb.k_dg[k * jb.n_theta + j] * w[k];
            best = std::max(best, std::fabs(s));
        }
        if (best < 1e-12)
            throw std::logic_error("instance '" + inst.name +
                                   "': assumption C(iv) fails along a normal direction of M_D");
    }
}

AltGdResult simulate_altgd(const StabilityInstance& inst, std::vector<double> theta,
                           std::vector<double> psi, double h, std::size_t steps, AltGdOrder order) {
    if (h < 0.0) throw std::invalid_argument("simulate_altgd: h must be >= 0");
    std::size_t nt = theta.size();
    auto distance = [&]() {
        double s = 0.0;
        for (const auto& w : inst.mg_normal) {
            double p = 0.0;
            for (std::size_t j = 0; j < nt; ++j) p += w[j] * (theta[j] - inst.theta_star[j]);
            s += p * p;
        }
        for (const auto& w : inst.md_normal) {
            double p = 0.0;
            for (std::size_t k = 0; k < psi.size(); ++k) p += w[k] * (psi[k] - inst.psi_star[k]);
            s += p * p;
        }
        return std::sqrt(s);
    };

    AltGdResult res;
    res.distances.push_back(distance());
    auto gen_step = [&]() {
        auto v = velocity_field(inst, theta, psi);
        for (std::size_t j = 0; j < nt; ++j) theta[j] += h * v[j];
    };
    auto disc_step = [&]() {
        auto v = velocity_field(inst, theta, psi);
        for (std::size_t k = 0; k < psi.size(); ++k) psi[k] += h * v[nt + k];
    };
    for (std::size_t s = 0; s < steps; ++s) {
        if (order == AltGdOrder::gen_first) {
            gen_step();
            disc_step();
        } else {
            disc_step();
            gen_step();
        }
        double d = distance();
        if (d > 1e6)
            throw std::runtime_error("simulate_altgd: diverged at step " + std::to_string(s));
        res.distances.push_back(d);
    }
    res.theta_final = theta;
    res.psi_final = psi;

    // Log-linear rate fit over the tail, above the floating noise floor.
    std::size_t lo = res.distances.size() / 5, hi = res.distances.size();
    std::vector<std::pair<double, double>> pts;
    for (std::size_t k = lo; k < hi; ++k)
        if (res.distances[k] > 1e-12) pts.push_back({static_cast<double>(k), std::log(res.distances[k])});
    if (pts.size() >= 2) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (auto [x, y] : pts) {
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        double nps = static_cast<double>(pts.size());
        double slope = (nps * sxy - sx * sy) / (nps * sxx - sx * sx);
        res.fitted_rate = h > 0.0 ? -slope / h : 0.0;
    }
    double d0 = std::max(res.distances.front(), 1e-12);
    res.converged = res.distances.back() <= std::max(1e-3 * d0, 1e-11);
    return res;
}

// ---------------------------------------------------------------------------
// Optimality
// ---------------------------------------------------------------------------

std::vector<double> pushforward(const TabularOptInstance& inst, const GenTable& table) {
    std::vector<double> p(inst.data_values.size(), 0.0);
    for (std::size_t z = 0; z < table.size(); ++z) p[table[z]] += inst.latent_probs[z];
    return p;
}

double tabular_recon_loss(const TabularOptInstance& inst, const GenTable& table) {
    double s = 0.0;
    for (std::size_t x = 0; x < inst.data_values.size(); ++x) {
        double ghat = inst.data_values[table[inst.encoder[x]]];
        double d = inst.data_values[x] - ghat;
        s += inst.data_probs[x] * d * d;
    }
    return s;
}

double tabular_kd_loss(const TabularOptInstance& inst, const GenTable& table) {
    double s = 0.0;
    for (std::size_t z = 0; z < table.size(); ++z) {
        double d = inst.data_values[inst.teacher_map[z]] - inst.data_values[table[z]];
        s += inst.latent_probs[z] * d * d;
    }
    return s;
}

double optimal_adv_value(const std::vector<double>& p_data, const std::vector<double>& p_g) {
    double s = 0.0;
    for (std::size_t x = 0; x < p_data.size(); ++x) {
        double pd = p_data[x], pg = p_g[x], tot = pd + pg;
        if (pd > 0.0) s += pd * std::log(pd / tot);
        if (pg > 0.0) s += pg * std::log(pg / tot);
    }
    return s;
}

double tv_distance(const std::vector<double>& p, const std::vector<double>& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::fabs(p[i] - q[i]);
    return 0.5 * s;
}

OptimalitySearchResult optimality_search(const TabularOptInstance& inst, OptimalityMode mode) {
    std::size_t nx = inst.data_values.size(), nz = inst.latent_probs.size();
    double candidates = std::pow(static_cast<double>(nx), static_cast<double>(nz));
    if (candidates > 1e6)
        throw std::invalid_argument("optimality_search: " + std::to_string(candidates) +
                                    " candidate tables; use smaller alphabets (limit 1e6)");

    OptimalitySearchResult res;
    res.best_value = std::numeric_limits<double>::infinity();
    GenTable table(nz, 0);
    for (;;) {
        double base = mode == OptimalityMode::pagoda ? tabular_recon_loss(inst, table)
                                                     : tabular_kd_loss(inst, table);
        double value = base + inst.lambda * optimal_adv_value(inst.data_probs, pushforward(inst, table));
        if (value < res.best_value - 1e-12) {
            res.best_value = value;
            res.best_tables.clear();
            res.best_tables.push_back(table);
        } else if (value <= res.best_value + 1e-12) {
            res.best_tables.push_back(table);
        }
        // odometer
        std::size_t i = 0;
        while (i < nz && ++table[i] == nx) table[i++] = 0;
        if (i == nz) break;
    }
    res.min_tv = std::numeric_limits<double>::infinity();
    res.max_tv = 0.0;
    for (const auto& t : res.best_tables) {
        double tv = tv_distance(inst.data_probs, pushforward(inst, t));
        res.tv_gaps.push_back(tv);
        res.min_tv = std::min(res.min_tv, tv);
        res.max_tv = std::max(res.max_tv, tv);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Wasserstein bounds
// ---------------------------------------------------------------------------

namespace {

double v_of_t(double sigma, double t) { return 1.0 - (1.0 - sigma * sigma) * std::exp(-2.0 * t); }

// Homogeneous solution factor of the forward (inversion) PF-ODE at time t.
double phi_of_t(double sigma, double t) { return std::sqrt(v_of_t(sigma, t)) / sigma; }

// Constant-shift response: x(T) = phi(T) x0 + psi_shift, for score error eps.
double psi_shift(double sigma, double T, double eps) {
    if (eps == 0.0) return 0.0;
    auto [nodes, weights] = gauss_legendre(64, 0.0, T);
    double phit = phi_of_t(sigma, T);
    double integral = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        integral += weights[i] * phit / phi_of_t(sigma, nodes[i]);
    return -eps * integral;
}

double w2_gaussians(double m1, double s1, double m2, double s2) {
    double dm = m1 - m2, ds = s1 - s2;
    return std::sqrt(dm * dm + ds * ds);
}

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// E |a + b Z| for Z ~ N(0,1): folded-normal mean.
double folded_mean(double a, double b) {
    double ab = std::fabs(b);
    if (ab < 1e-300) return std::fabs(a);
    return ab * std::sqrt(2.0 / M_PI) * std::exp(-a * a / (2.0 * b * b)) +
           a * std::erf(a / (std::sqrt(2.0) * ab));
}

// Acklam's inverse normal CDF with one Halley refinement.
double std_normal_quantile(double p) {
    if (p <= 0.0 || p >= 1.0) throw std::domain_error("quantile: p in (0,1) required");
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                               1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                               6.680131188771972e+01,  -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                               -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                               3.754408661907416e+00};
    double q, r, x;
    if (p < 0.02425) {
        q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 0.97575) {
        q = p - 0.5;
        r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    double e = std_normal_cdf(x) - p;
    double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
    return x - u / (1.0 + x * u / 2.0);
}

// W1 between an empirical law (atoms) and N(mean, std^2), via the quantile
// coupling integral, 8-point Gauss-Legendre per atom interval.
double w1_empirical_vs_gaussian(std::vector<double> atoms, double mean, double stddev) {
    std::sort(atoms.begin(), atoms.end());
    std::size_t n = atoms.size();
    auto [nodes, weights] = gauss_legendre(8, 0.0, 1.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double lo = static_cast<double>(i) / n, hi = static_cast<double>(i + 1) / n;
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            double u = lo + (hi - lo) * nodes[k];
            double q = mean + stddev * std_normal_quantile(u);
            total += (hi - lo) * weights[k] * std::fabs(atoms[i] - q);
        }
    }
    return total;
}

void check_bound_assumptions(const BoundInstance& in) {
    if (in.gamma() <= 1.5)
        throw std::invalid_argument("bound: Assumption (iv) violated: gamma = " +
                                    std::to_string(in.gamma()) + " must exceed 3/2");
    double dmax = in.delta_max();
    double d = in.delta_value();
    if (d <= 0.0 || d >= dmax)
        throw std::invalid_argument("bound: delta = " + std::to_string(d) +
                                    " outside the admissible range (0, e^{-2T}/(3-e^{-2T}) = " +
                                    std::to_string(dmax) + ")");
    if (in.h_value() <= 0.0)
        throw std::invalid_argument("bound: h(gamma, T) must be positive");
}

} // namespace

double BoundInstance::delta_max() const {
    double e = std::exp(-2.0 * T);
    return e / (3.0 - e);
}

double BoundInstance::delta_value() const { return delta ? *delta : 0.5 * delta_max(); }

double BoundInstance::h_value() const {
    double e = std::exp(-2.0 * T);
    double g = gamma();
    return g / (e + g * (1.0 - e)) - (1.0 + delta_value());
}

double exact_prior_to_data_scale(const BoundInstance& in) {
    return in.sigma / std::sqrt(1.0 - std::exp(-2.0 * in.T));
}

double true_inverse_scale(const BoundInstance& in) {
    return in.sigma / std::sqrt(v_of_t(in.sigma, in.T));
}

BoundReport w2_bound_check(const BoundInstance& in) {
    check_bound_assumptions(in);
    BoundReport rep;
    double sigma = in.sigma, T = in.T, a = in.gen_scale, b = in.gen_bias;
    double lambda = std::fabs(a);
    double h = in.h_value(), delta = in.delta_value();
    double phi = phi_of_t(sigma, T);
    double psi = psi_shift(sigma, T, in.eps_dm);
    double prior_std = std::sqrt(1.0 - std::exp(-2.0 * T));
    double vT_std = std::sqrt(v_of_t(sigma, T));
    double m2 = sigma; // sqrt(E x^2), centered data

    rep.lhs = w2_gaussians(b, std::fabs(a) * prior_std, 0.0, sigma);

    auto recon_sqrt = [&](double aa, double bb) {
        double c1 = (1.0 - aa * phi) * sigma;
        double c0 = aa * psi + bb;
        return std::sqrt(c1 * c1 + c0 * c0);
    };
    rep.terms["recon"] = recon_sqrt(a, b);
    rep.terms["teacher_gap"] = recon_sqrt(true_inverse_scale(in), 0.0);
    double w2_pt = w2_gaussians(psi, phi * sigma, 0.0, vT_std); // stds match; reduces to |psi|
    rep.terms["w2_pT"] = w2_pt;
    rep.terms["w2_coeff"] = lambda + std::exp(-0.5 * h * T);
    rep.terms["score_term"] =
        in.eps_dm / std::sqrt(2.0 * delta * h) * std::sqrt(1.0 - std::exp(-h * T));
    rep.terms["prior_term"] = std::exp(-0.5 * T) * m2 * lambda;

    rep.rhs = rep.terms["recon"] + rep.terms["teacher_gap"] + rep.terms["w2_coeff"] * w2_pt +
              rep.terms["score_term"] + rep.terms["prior_term"];
    rep.holds = rep.lhs <= rep.rhs + 1e-9;
    return rep;
}

BoundReport w1_bound_check(const BoundInstance& in, std::optional<std::size_t> empirical_n,
                           std::uint64_t seed) {
    check_bound_assumptions(in);
    BoundReport rep;
    double sigma = in.sigma, T = in.T, a = in.gen_scale, b = in.gen_bias;
    double lambda = std::fabs(a);
    double phi = phi_of_t(sigma, T);
    double psi = psi_shift(sigma, T, in.eps_dm);
    double prior_std = std::sqrt(1.0 - std::exp(-2.0 * T));
    double vT_std = std::sqrt(v_of_t(sigma, T));
    double c_t = std::sqrt(std::exp(2.0 * T) - 1.0 + sigma * sigma) / sigma; // exp(int 1/v)
    double m1 = sigma * std::sqrt(2.0 / M_PI);
    double a_true = true_inverse_scale(in);

    if (!empirical_n) {
        rep.lhs = folded_mean(b, std::fabs(a) * prior_std - sigma);
        rep.terms["recon"] = folded_mean(-(a * psi + b), (1.0 - a * phi) * sigma);
        rep.terms["teacher_gap"] = folded_mean(a_true * psi, (1.0 - a_true * phi) * sigma);
        rep.terms["w1_pT"] = folded_mean(psi, phi * sigma - vT_std); // = |psi|
    } else {
        std::size_t n = *empirical_n;
        Rng rng(seed);
        std::vector<double> xs(n), gen(n), pushed(n);
        for (auto& x : xs) x = sigma * rng.normal();
        for (auto& g : gen) g = a * (prior_std * rng.normal()) + b;
        double recon = 0.0, gap = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double z = phi * xs[i] + psi;
            pushed[i] = z;
            recon += std::fabs(xs[i] - (a * z + b));
            gap += std::fabs(xs[i] - a_true * z);
        }
        rep.terms["recon"] = recon / static_cast<double>(n);
        rep.terms["teacher_gap"] = gap / static_cast<double>(n);
        rep.terms["w1_pT"] = w1_empirical_vs_gaussian(pushed, 0.0, vT_std);
        std::vector<double> xs_sorted = xs;
        rep.lhs = [&] {
            std::vector<double> g2 = gen;
            std::sort(xs_sorted.begin(), xs_sorted.end());
            std::sort(g2.begin(), g2.end());
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += std::fabs(xs_sorted[i] - g2[i]);
            return s / static_cast<double>(n);
        }();
    }
    rep.terms["score_term"] = c_t * T * in.eps_dm;
    rep.terms["w1_coeff"] = c_t + lambda;
    rep.terms["prior_term"] = std::exp(-T) * m1 * lambda;
    rep.rhs = rep.terms["recon"] + rep.terms["teacher_gap"] + rep.terms["score_term"] +
              rep.terms["w1_coeff"] * rep.terms["w1_pT"] + rep.terms["prior_term"];
    rep.holds = rep.lhs <= rep.rhs + 1e-9;
    return rep;
}

} // namespace pagoda::theory
