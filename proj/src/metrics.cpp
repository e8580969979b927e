#include "pagoda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

namespace pagoda {

double w1_sorted(std::vector<double> a, std::vector<double> b) {
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("w1_sorted: need equal nonzero sample counts");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

double sliced_wasserstein(const Tensor& x, const Tensor& y, std::size_t n_proj,
                          std::uint64_t proj_seed) {
    if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(1))
        throw std::invalid_argument("sliced_wasserstein: need (n,d) inputs with equal d");
    std::size_t d = x.dim(1);
    Rng rng(proj_seed);
    double total = 0.0;
    std::vector<double> px(x.dim(0)), py(y.dim(0)), dir(d);
    for (std::size_t p = 0; p < n_proj; ++p) {
        double norm = 0.0;
        for (auto& v : dir) {
            v = rng.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (auto& v : dir) v /= norm;
        for (std::size_t r = 0; r < x.dim(0); ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += x.data[r * d + j] * dir[j];
            px[r] = s;
        }
        for (std::size_t r = 0; r < y.dim(0); ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += y.data[r * d + j] * dir[j];
            py[r] = s;
        }
        total += w1_sorted(px, py);
    }
    return total / static_cast<double>(n_proj);
}

ModeReport mode_recall(const Tensor& samples, const std::vector<std::vector<double>>& centers,
                       double threshold) {
    if (samples.rank() != 2 || centers.empty())
        throw std::invalid_argument("mode_recall: need (n,d) samples and centers");
    std::size_t n = samples.dim(0), d = samples.dim(1);
    ModeReport rep;
    rep.counts.assign(centers.size(), 0);
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < centers.size(); ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                double diff = samples.data[r * d + j] - centers[k][j];
                s += diff * diff;
            }
            if (s < best_d) {
                best_d = s;
                best = k;
            }
        }
        ++rep.counts[best];
    }
    double min_count = threshold * static_cast<double>(n);
    for (auto c : rep.counts)
        if (static_cast<double>(c) >= min_count) ++rep.hit_modes;
    rep.recall = static_cast<double>(rep.hit_modes) / static_cast<double>(centers.size());
    return rep;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

MetricsLog::MetricsLog(std::string path, std::vector<std::string> columns)
    : path_(std::move(path)), columns_(std::move(columns)) {
    namespace fs = std::filesystem;
    fs::path p(path_);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    bool fresh = !fs::exists(p) || fs::file_size(p) == 0;
    out_.open(path_, std::ios::app);
    if (!out_) throw std::runtime_error("cannot open metrics log: " + path_);
    if (fresh) {
        out_ << "stage,step";
        for (const auto& c : columns_) out_ << "," << c;
        out_ << "\n";
    }
}

void MetricsLog::append(const std::string& stage, std::size_t step, const std::vector<double>& values) {
    if (values.size() != columns_.size())
        throw std::invalid_argument("metrics row width mismatch for " + path_);
    auto it = last_step_.find(stage);
    if (it != last_step_.end() && step < it->second)
        throw std::logic_error("metrics steps must be nondecreasing per stage");
    last_step_[stage] = step;
    out_ << stage << "," << step;
    for (double v : values) out_ << "," << format_double(v);
    out_ << "\n";
    out_.flush();
}

} // namespace pagoda
