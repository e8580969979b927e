#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "pagoda/rng.hpp"
#include "pagoda/tensor.hpp"

namespace pagoda {

/// Exact 1-D empirical W1: mean absolute difference of sorted samples.
/// Requires equal sample counts.
double w1_sorted(std::vector<double> a, std::vector<double> b);

/// Sliced Wasserstein between (n,d) sample sets: average 1-D W1 over
/// `n_proj` fixed unit projections drawn from a dedicated seed.
double sliced_wasserstein(const Tensor& x, const Tensor& y, std::size_t n_proj = 64,
                          std::uint64_t proj_seed = 1234);

struct ModeReport {
    std::vector<std::size_t> counts; // per-center sample counts
    std::size_t hit_modes = 0;       // centers with >= threshold fraction
    double recall = 0.0;
};

/// Nearest-center assignment of samples; a mode counts as hit when it
/// receives at least `threshold` fraction of the samples.
ModeReport mode_recall(const Tensor& samples, const std::vector<std::vector<double>>& centers,
                       double threshold = 0.02);

/// Append-only CSV keyed by (stage, step). Header written once; steps must
/// be nondecreasing per stage. Numbers are printed with %.17g so identical
/// runs give identical bytes.
class MetricsLog {
public:
    MetricsLog(std::string path, std::vector<std::string> columns); // columns after stage,step
    void append(const std::string& stage, std::size_t step, const std::vector<double>& values);
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::vector<std::string> columns_;
    std::map<std::string, std::size_t> last_step_;
    std::ofstream out_;
};

std::string format_double(double v); // %.17g

} // namespace pagoda
