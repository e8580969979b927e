#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "pagoda/diffusion.hpp"
#include "pagoda/optim.hpp"
#include "pagoda/pairs.hpp"

namespace pagoda {

/// Known linear measurement operator A : R^d -> R^m, m <= d. Stored as an
/// explicit matrix so application is exactly linear in both eval paths.
class LinearMeasurement {
public:
    enum class Kind { identity, mask, downsample };

    static LinearMeasurement identity(std::size_t dim);
    static LinearMeasurement mask(std::size_t dim, std::vector<std::size_t> keep);
    static LinearMeasurement downsampling(const DownsampleOp& op, std::size_t in_dim);

    Kind kind() const { return kind_; }
    std::size_t in_dim() const { return in_dim_; }
    std::size_t out_dim() const { return out_dim_; }
    const Tensor& matrix() const { return matrix_; } // (in_dim, out_dim)

    Tensor apply(const Tensor& x) const; // (B,in) -> (B,out)
    Var apply(const Var& x) const;

private:
    Kind kind_ = Kind::identity;
    std::size_t in_dim_ = 0, out_dim_ = 0;
    Tensor matrix_;
};

/// Differentiable decoder hook: latent batch -> sample batch.
using DecoderFn = std::function<Var(const Var&)>;

struct EditRequest {
    Tensor y;                 // observation, (out_dim,)
    LinearMeasurement op;
    std::size_t steps = 500;
    double lr = 1e-2;         // Adam on the latent
    std::optional<Tensor> init_z; // (dim,); default: a prior draw
    double noise_std = 0.0;   // optional observation noise added to y
};

struct LatentOptResult {
    Tensor z_star;               // best-so-far latent
    Tensor x_star;               // decoded best latent
    double residual = 0.0;       // ||y - A x_star||^2 at the best latent
    std::vector<double> best_trace; // best-so-far residual per step (non-increasing)
};

/// z* = argmin_z ||y - A(G(z))||^2 by Adam; returns the best iterate seen.
LatentOptResult latent_optimize(const DecoderFn& decode, std::size_t latent_dim,
                                const ForwardProcess& prior_process, const EditRequest& req, Rng& rng);

enum class EditMode { superres, class_transfer };

/// Training-free editing: DDIM-invert the (optionally downsampled)
/// observation under the teacher, then decode, under c' for class transfer.
Tensor invert_edit(const ScoreModel& teacher, const TimeGrid& grid,
                   const std::function<Tensor(const Tensor&, const std::vector<int>&)>& decode,
                   const Tensor& y, EditMode mode, const std::optional<DownsampleOp>& pre_down,
                   int c = -1, int c_prime = -1);

/// Spherical interpolation; parallel inputs fall back to linear
/// interpolation, zero vectors are rejected.
std::vector<double> slerp(const std::vector<double>& a, const std::vector<double>& b, double t);

} // namespace pagoda
