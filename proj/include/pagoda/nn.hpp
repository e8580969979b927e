#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pagoda/autograd.hpp"
#include "pagoda/rng.hpp"
#include "pagoda/tensor.hpp"

namespace pagoda {

enum class Activation { relu, silu, tanh, identity };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

struct ParamEntry {
    std::string name;
    Var var;
    bool trainable = true;
    std::optional<Tensor> ema;
};

/// Named parameter registry. Names are unique; EMA shadows, when present,
/// mirror parameter shapes.
class ParamSet {
public:
    Var add(const std::string& name, Tensor init, bool trainable = true);
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    ParamEntry& at(const std::string& name);
    const ParamEntry& at(const std::string& name) const;

    std::vector<ParamEntry>& entries() { return entries_; }
    const std::vector<ParamEntry>& entries() const { return entries_; }

    std::vector<std::string> trainable_names() const;
    std::size_t trainable_count() const;

    void set_trainable(const std::string& name, bool flag) { at(name).trainable = flag; }
    void set_all_trainable(bool flag);
    /// Freeze/unfreeze every parameter whose name starts with prefix.
    void set_trainable_by_prefix(const std::string& prefix, bool flag);
    /// backward() only clears grads of nodes reachable from its root; call
    /// this before a backward whose graph may not touch every parameter.
    void zero_grads();

private:
    std::vector<ParamEntry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Reverse-mode gradients of a scalar expression with respect to every
/// trainable parameter, in registry order.
std::vector<Tensor> grad(const Var& f, ParamSet& params);

/// shadow' = decay*shadow + (1-decay)*param. First call copies parameters.
void ema_update(ParamSet& params, double decay);
/// Read parameters (or their EMA shadows) as plain tensors keyed by name.
std::unordered_map<std::string, Tensor> snapshot(const ParamSet& params, bool use_ema);

struct Mlp {
    std::vector<Var> weights; // (in,out) each
    std::vector<Var> biases;  // (out,)
    Activation act = Activation::silu;

    std::size_t in_dim() const { return weights.front()->value.dim(0); }
    std::size_t out_dim() const { return weights.back()->value.dim(1); }
    Var forward(const Var& x) const; // (B,in) -> (B,out)
    std::size_t flops_per_sample() const;
};

/// Registers an MLP's parameters under "<prefix>.wK"/"<prefix>.bK".
/// Hidden layers use `act`; the output layer is linear.
Mlp build_mlp(ParamSet& params, const std::string& prefix, const std::vector<std::size_t>& widths,
              Activation act, Rng& rng);

/// Rebuild the forward view of an MLP from an existing registry (after
/// loading a checkpoint). Widths must match what was registered.
Mlp attach_mlp(ParamSet& params, const std::string& prefix, std::size_t n_layers, Activation act);

Var apply_activation(Activation a, const Var& x);

/// Fixed featurization for scalar conditioning inputs (diffusion time, CFG
/// weight). Produces 4 columns per scalar.
Tensor scalar_features(const std::vector<double>& values);
constexpr std::size_t kScalarFeatureDim = 4;

} // namespace pagoda
