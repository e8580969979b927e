#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "pagoda/tensor.hpp"

namespace pagoda {

/// Single seeded 64-bit PRNG. Every stochastic draw in a run flows through
/// one instance of this, which is what makes whole runs bit-reproducible.
/// Normal variates use an explicit Box-Muller so the byte stream does not
/// depend on the standard library's distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t raw() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() {
        return (engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    Tensor normal_tensor(std::vector<std::size_t> shape, double mean = 0.0, double std = 1.0) {
        Tensor t(std::move(shape));
        for (auto& v : t.data) v = mean + std * normal();
        return t;
    }

    Tensor uniform_tensor(std::vector<std::size_t> shape, double lo, double hi) {
        Tensor t(std::move(shape));
        for (auto& v : t.data) v = uniform(lo, hi);
        return t;
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace pagoda
