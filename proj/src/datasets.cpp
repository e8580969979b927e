#include "pagoda/datasets.hpp"

#include <cmath>
#include <stdexcept>

namespace pagoda {

namespace {

// High-res details are deterministic smooth functions of the base values, so
// the upscaler has something learnable and avg-pooling recovers the base
// exactly.
double detail(double v) { return 0.3 * std::tanh(v); }

Tensor lift_1d(const std::vector<double>& base, std::size_t n) {
    Tensor out({n, 2 * base.size() / n});
    std::size_t d = base.size() / n;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) {
            double v = base[r * d + j];
            double partner = base[r * d + (j + 1) % d];
            double g = detail(d > 1 ? partner : v);
            out.data[r * 2 * d + 2 * j] = v + g;
            out.data[r * 2 * d + 2 * j + 1] = v - g;
        }
    return out;
}

} // namespace

ToyDataset make_dataset(const std::string& name) {
    ToyDataset d;
    d.name = name;
    if (name == "gauss1d") {
        d.base_dim = 1;
        d.high_dim = 2;
        d.sample_high = [](Rng& rng, std::size_t n) {
            std::vector<double> base(n);
            for (auto& v : base) v = rng.normal();
            return lift_1d(base, n);
        };
        return d;
    }
    if (name == "bimodal1d") {
        d.base_dim = 1;
        d.high_dim = 2;
        d.mode_centers = {{-2.0}, {2.0}};
        d.sample_high = [](Rng& rng, std::size_t n) {
            std::vector<double> base(n);
            for (auto& v : base) {
                double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
                v = 2.0 * sign + 0.25 * rng.normal();
            }
            return lift_1d(base, n);
        };
        return d;
    }
    if (name == "eight-gaussians-2d") {
        d.base_dim = 2;
        d.high_dim = 4;
        for (int k = 0; k < 8; ++k) {
            double a = 2.0 * M_PI * k / 8.0;
            d.mode_centers.push_back({2.0 * std::cos(a), 2.0 * std::sin(a)});
        }
        d.sample_high = [centers = d.mode_centers](Rng& rng, std::size_t n) {
            std::vector<double> base(2 * n);
            for (std::size_t r = 0; r < n; ++r) {
                const auto& c = centers[rng.index(centers.size())];
                base[2 * r] = c[0] + 0.1 * rng.normal();
                base[2 * r + 1] = c[1] + 0.1 * rng.normal();
            }
            return lift_1d(base, n);
        };
        return d;
    }
    if (name == "rings-2d") {
        d.base_dim = 2;
        d.high_dim = 4;
        d.sample_high = [](Rng& rng, std::size_t n) {
            std::vector<double> base(2 * n);
            for (std::size_t r = 0; r < n; ++r) {
                double radius = rng.uniform() < 0.5 ? 0.7 : 1.6;
                double a = rng.uniform(0.0, 2.0 * M_PI);
                base[2 * r] = radius * std::cos(a) + 0.05 * rng.normal();
                base[2 * r + 1] = radius * std::sin(a) + 0.05 * rng.normal();
            }
            return lift_1d(base, n);
        };
        return d;
    }
    if (name == "smooth1d") {
        // Random low-order Fourier signal on 8 points; base is the 4-point
        // average-pool. The base determines the coefficients, so super-
        // resolution has an exact target.
        d.base_dim = 4;
        d.high_dim = 8;
        d.sample_high = [](Rng& rng, std::size_t n) {
            Tensor out({n, 8});
            for (std::size_t r = 0; r < n; ++r) {
                double c0 = rng.normal(), c1 = rng.normal(), c2 = rng.normal();
                for (std::size_t j = 0; j < 8; ++j) {
                    double u = (static_cast<double>(j) + 0.5) / 8.0;
                    out.data[r * 8 + j] =
                        c0 + 0.8 * c1 * std::sin(2.0 * M_PI * u) + 0.8 * c2 * std::cos(2.0 * M_PI * u);
                }
            }
            return out;
        };
        return d;
    }
    if (name == "synthetic-grid-images") {
        d.base_dim = 16;
        d.high_dim = 64;
        d.layout = Layout::grid_2d;
        d.grid_h = 8;
        d.grid_w = 8;
        d.channels = 1;
        d.sample_high = [](Rng& rng, std::size_t n) {
            Tensor out({n, 64});
            for (std::size_t r = 0; r < n; ++r) {
                double ch = rng.uniform(2.0, 6.0), cw = rng.uniform(2.0, 6.0);
                double amp = rng.uniform(0.5, 1.5);
                for (std::size_t h = 0; h < 8; ++h)
                    for (std::size_t w = 0; w < 8; ++w) {
                        double dh = static_cast<double>(h) - ch, dw = static_cast<double>(w) - cw;
                        out.data[r * 64 + h * 8 + w] = amp * std::exp(-(dh * dh + dw * dw) / (2.0 * 1.44));
                    }
            }
            return out;
        };
        return d;
    }
    throw std::invalid_argument("unknown dataset: " + name);
}

std::vector<std::string> dataset_names() {
    return {"gauss1d", "bimodal1d", "eight-gaussians-2d", "rings-2d", "synthetic-grid-images", "smooth1d"};
}

DownsampleOp dataset_downsample_op(const ToyDataset& d) {
    DownsampleOp op;
    op.kind = DownsampleOp::Kind::average_pool;
    op.factor = 2;
    op.layout = d.layout;
    op.grid_h = d.grid_h;
    op.grid_w = d.grid_w;
    op.channels = d.channels;
    return op;
}

Tensor sample_base(const ToyDataset& d, Rng& rng, std::size_t n) {
    return downsample(dataset_downsample_op(d), d.sample_high(rng, n));
}

} // namespace pagoda
