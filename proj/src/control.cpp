#include "pagoda/control.hpp"

#include <cmath>
#include <stdexcept>

namespace pagoda {

LinearMeasurement LinearMeasurement::identity(std::size_t dim) {
    LinearMeasurement m;
    m.kind_ = Kind::identity;
    m.in_dim_ = m.out_dim_ = dim;
    m.matrix_ = Tensor({dim, dim});
    for (std::size_t i = 0; i < dim; ++i) m.matrix_.data[i * dim + i] = 1.0;
    return m;
}

LinearMeasurement LinearMeasurement::mask(std::size_t dim, std::vector<std::size_t> keep) {
    if (keep.empty() || keep.size() > dim) throw std::invalid_argument("mask: bad index count");
    LinearMeasurement m;
    m.kind_ = Kind::mask;
    m.in_dim_ = dim;
    m.out_dim_ = keep.size();
    m.matrix_ = Tensor({dim, keep.size()});
    for (std::size_t j = 0; j < keep.size(); ++j) {
        if (keep[j] >= dim) throw std::invalid_argument("mask: index out of range");
        m.matrix_.data[keep[j] * keep.size() + j] = 1.0;
    }
    return m;
}

LinearMeasurement LinearMeasurement::downsampling(const DownsampleOp& op, std::size_t in_dim) {
    LinearMeasurement m;
    m.kind_ = Kind::downsample;
    m.in_dim_ = in_dim;
    m.out_dim_ = op.out_dim(in_dim);
    m.matrix_ = Tensor({in_dim, m.out_dim_});
    // column j of the matrix is the operator applied to basis vector e_i
    for (std::size_t i = 0; i < in_dim; ++i) {
        Tensor e({1, in_dim});
        e.data[i] = 1.0;
        Tensor row = downsample(op, e);
        for (std::size_t j = 0; j < m.out_dim_; ++j) m.matrix_.data[i * m.out_dim_ + j] = row.data[j];
    }
    return m;
}

Tensor LinearMeasurement::apply(const Tensor& x) const {
    return matmul(constant(x), constant(matrix_))->value;
}

Var LinearMeasurement::apply(const Var& x) const { return matmul(x, constant(matrix_)); }

LatentOptResult latent_optimize(const DecoderFn& decode, std::size_t latent_dim,
                                const ForwardProcess& prior_process, const EditRequest& req,
                                Rng& rng) {
    if (req.y.size() != req.op.out_dim())
        throw std::invalid_argument("latent_optimize: observation size != operator output dim");

    Tensor y = req.y;
    if (req.noise_std > 0.0)
        for (auto& v : y.data) v += req.noise_std * rng.normal();

    Tensor z0 = req.init_z ? *req.init_z
                           : Tensor({latent_dim},
                                    prior_sample(prior_process, latent_dim, 1, rng).data);
    Var z = leaf(Tensor({1, latent_dim}, z0.data));
    Var y_row = constant(Tensor({1, y.size()}, y.data));

    OptimizerState opt({OptKind::adam, req.lr});
    ParamSet zset;
    // register the latent as the single trainable "parameter"
    zset.add("z", Tensor({1, latent_dim}));
    zset.at("z").var = z;

    auto residual_of = [&](const Var& zv) {
        Var x = decode(zv);
        Var r = sub(y_row, req.op.apply(x));
        return mean(sum_rows(square(r))); // single row: plain squared norm
    };

    LatentOptResult res;
    res.z_star = z->value;
    {
        Var r0 = residual_of(z);
        res.residual = r0->value.item();
    }
    res.best_trace.push_back(res.residual);

    for (std::size_t step = 0; step < req.steps; ++step) {
        Var loss = residual_of(z);
        double val = loss->value.item();
        if (!std::isfinite(val)) throw std::runtime_error("latent_optimize: non-finite residual");
        if (val < res.residual) {
            res.residual = val;
            res.z_star = z->value;
        }
        backward(loss);
        opt.step_from_tape(zset);
        res.best_trace.push_back(res.residual);
    }
    // final candidate after the last update
    Var last = residual_of(z);
    if (last->value.item() < res.residual) {
        res.residual = last->value.item();
        res.z_star = z->value;
    }
    res.best_trace.push_back(res.residual);

    Var xbest = decode(constant(res.z_star));
    res.x_star = Tensor({xbest->value.dim(1)},
                        std::vector<double>(xbest->value.data.begin(), xbest->value.data.end()));
    res.z_star = Tensor({latent_dim},
                        std::vector<double>(res.z_star.data.begin(), res.z_star.data.end()));
    return res;
}

Tensor invert_edit(const ScoreModel& teacher, const TimeGrid& grid,
                   const std::function<Tensor(const Tensor&, const std::vector<int>&)>& decode,
                   const Tensor& y, EditMode mode, const std::optional<DownsampleOp>& pre_down,
                   int c, int c_prime) {
    Tensor obs = y.rank() == 2 ? y : Tensor({1, y.size()}, y.data);
    Tensor low = pre_down ? downsample(*pre_down, obs) : obs;
    if (low.dim(1) != teacher.dim)
        throw std::invalid_argument("invert_edit: observation dim " + std::to_string(low.dim(1)) +
                                    " != teacher dim " + std::to_string(teacher.dim));
    std::vector<int> cs;
    if (c >= 0) cs.assign(low.dim(0), c);
    Tensor z = ddim_invert(teacher, low, grid, cs);
    std::vector<int> decode_c;
    int target = mode == EditMode::class_transfer ? c_prime : c;
    if (target >= 0) decode_c.assign(low.dim(0), target);
    return decode(z, decode_c);
}

std::vector<double> slerp(const std::vector<double>& a, const std::vector<double>& b, double t) {
    if (a.size() != b.size()) throw std::invalid_argument("slerp: size mismatch");
    double na = std::sqrt(sq_norm(a)), nb = std::sqrt(sq_norm(b));
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("slerp: zero vector input");
    double cosw = dot(a, b) / (na * nb);
    cosw = std::clamp(cosw, -1.0, 1.0);
    double omega = std::acos(cosw);
    std::vector<double> out(a.size());
    if (omega < 1e-9 || M_PI - omega < 1e-9) {
        // (anti)parallel: slerp is degenerate, fall back to lerp
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - t) * a[i] + t * b[i];
        return out;
    }
    double s = std::sin(omega);
    double ca = std::sin((1.0 - t) * omega) / s, cb = std::sin(t * omega) / s;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ca * a[i] + cb * b[i];
    return out;
}

} // namespace pagoda
