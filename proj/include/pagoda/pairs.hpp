#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "pagoda/diffusion.hpp"
#include "pagoda/tensor.hpp"

namespace pagoda {

enum class Layout { vector_1d, grid_2d };

Layout layout_from_string(const std::string& s);
std::string to_string(Layout l);

/// Linear dimension-reduction operator between resolutions. average_pool
/// takes block means (exactly linear, which keeps oracle checks exact);
/// subsample takes every factor-th element starting at index 0.
struct DownsampleOp {
    enum class Kind { average_pool, subsample };
    Kind kind = Kind::average_pool;
    std::size_t factor = 2;
    Layout layout = Layout::vector_1d;
    // grid layout: input is (h, w, channels) flattened row-major
    std::size_t grid_h = 0, grid_w = 0, channels = 1;

    nlohmann::json to_json() const;
    static DownsampleOp from_json(const nlohmann::json& j);
    std::size_t out_dim(std::size_t in_dim) const;
};

/// Applies the operator to one flat sample (d,) or a batch (n, d).
Tensor downsample(const DownsampleOp& op, const Tensor& x);

struct PairRecord {
    std::vector<double> x_high;
    std::vector<double> x_low;
    std::vector<double> z;
    int c = -1;                // condition id, -1 = none
    double omega = std::numeric_limits<double>::quiet_NaN(); // guidance weight, NaN = none
};

struct PairSet {
    std::vector<PairRecord> records;
    nlohmann::json provenance; // teacher hash, grid config, downsample op, seed
    std::size_t dim_high = 0;
    std::size_t dim_low = 0;

    bool operator==(const PairSet& o) const;
};

struct BuildPairsConfig {
    double fraction = 1.0;      // keep this fraction of the dataset (leading records)
    std::uint64_t seed = 0;     // recorded in provenance
    std::string teacher_hash;   // recorded in provenance
};

/// Encodes every dataset row: x_low = downsample(x_high), z = DDIM inversion
/// of x_low under the teacher. Output order equals dataset order.
PairSet build_pairs(const Tensor& dataset_high, const std::vector<int>& conds,
                    const ScoreModel& teacher, const DownsampleOp& op, const TimeGrid& grid,
                    const BuildPairsConfig& cfg);

std::string encode_pairs(const PairSet& set);
void save_pairs(const PairSet& set, const std::string& path);
PairSet load_pairs(const std::string& path);

/// Batch views over a record range; z and x_low as (n, dim_low), x_high as
/// (n, dim_high).
Tensor pairs_z(const PairSet& s, std::size_t begin, std::size_t count);
Tensor pairs_x_low(const PairSet& s, std::size_t begin, std::size_t count);
Tensor pairs_x_high(const PairSet& s, std::size_t begin, std::size_t count);
std::vector<int> pairs_c(const PairSet& s, std::size_t begin, std::size_t count);

} // namespace pagoda
