#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pagoda/pairs.hpp"
#include "pagoda/rng.hpp"
#include "pagoda/tensor.hpp"

namespace pagoda {

/// Built-in toy datasets. Every dataset is defined at a "high" resolution
/// with the base resolution obtained by average-pooling (factor 2), so the
/// three-stage pipeline runs end to end on each of them.
struct ToyDataset {
    std::string name;
    std::size_t base_dim = 1;
    std::size_t high_dim = 2;
    Layout layout = Layout::vector_1d;
    std::size_t grid_h = 0, grid_w = 0, channels = 1; // high-res grid dims
    std::function<Tensor(Rng&, std::size_t)> sample_high; // (n, high_dim)
    std::vector<std::vector<double>> mode_centers;        // base-res, for recall
};

/// Names: gauss1d, bimodal1d, eight-gaussians-2d, rings-2d,
/// synthetic-grid-images, smooth1d.
ToyDataset make_dataset(const std::string& name);
std::vector<std::string> dataset_names();

DownsampleOp dataset_downsample_op(const ToyDataset& d);
Tensor sample_base(const ToyDataset& d, Rng& rng, std::size_t n);

} // namespace pagoda
