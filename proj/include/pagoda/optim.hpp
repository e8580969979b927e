#pragma once

#include <string>
#include <unordered_map>

#include "pagoda/nn.hpp"

namespace pagoda {

enum class OptKind { sgd, adam, radam };

OptKind opt_kind_from_string(const std::string& s);

struct OptConfig {
    OptKind kind = OptKind::adam;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment state per parameter plus the step counter.
/// Updates are pure functions of (state, grads); repeated calls with
/// identical inputs produce identical outputs.
class OptimizerState {
public:
    explicit OptimizerState(OptConfig cfg = {}) : cfg_(cfg) {}

    const OptConfig& config() const { return cfg_; }
    std::size_t step_count() const { return step_; }
    void set_lr(double lr) { cfg_.lr = lr; }

    /// Applies one update to every trainable parameter using the grads map.
    /// Grad shapes must match parameter shapes.
    void step(ParamSet& params, const std::unordered_map<std::string, Tensor>& grads);

    /// Convenience: reads the grads left on the tape by backward().
    void step_from_tape(ParamSet& params);
    /// Same, across several registries as one optimizer step.
    void step_from_tape(std::initializer_list<ParamSet*> sets);

private:
    void apply(const std::string& name, Tensor& w, const Tensor& g);

    OptConfig cfg_;
    std::size_t step_ = 0;
    std::unordered_map<std::string, Tensor> m_, v_;
};

} // namespace pagoda
