#include "pagoda/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace pagoda {

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "silu") return Activation::silu;
    if (s == "tanh") return Activation::tanh;
    if (s == "identity") return Activation::identity;
    throw std::invalid_argument("unknown activation: " + s);
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::silu: return "silu";
        case Activation::tanh: return "tanh";
        case Activation::identity: return "identity";
    }
    return "?";
}

Var ParamSet::add(const std::string& name, Tensor init, bool trainable) {
    if (has(name)) throw std::invalid_argument("param name already registered: " + name);
    auto v = leaf(std::move(init));
    index_[name] = entries_.size();
    entries_.push_back({name, v, trainable, std::nullopt});
    return v;
}

ParamEntry& ParamSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no such param: " + name);
    return entries_[it->second];
}

const ParamEntry& ParamSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no such param: " + name);
    return entries_[it->second];
}

std::vector<std::string> ParamSet::trainable_names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
        if (e.trainable) out.push_back(e.name);
    return out;
}

std::size_t ParamSet::trainable_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
        if (e.trainable) n += e.var->value.size();
    return n;
}

void ParamSet::set_all_trainable(bool flag) {
    for (auto& e : entries_) e.trainable = flag;
}

void ParamSet::set_trainable_by_prefix(const std::string& prefix, bool flag) {
    for (auto& e : entries_)
        if (e.name.rfind(prefix, 0) == 0) e.trainable = flag;
}

void ParamSet::zero_grads() {
    for (auto& e : entries_)
        std::fill(e.var->grad.data.begin(), e.var->grad.data.end(), 0.0);
}

std::vector<Tensor> grad(const Var& f, ParamSet& params) {
    backward(f);
    std::vector<Tensor> out;
    for (const auto& e : params.entries())
        if (e.trainable) out.push_back(e.var->grad);
    return out;
}

void ema_update(ParamSet& params, double decay) {
    if (decay < 0.0 || decay >= 1.0)
        throw std::invalid_argument("ema_update: decay must lie in [0,1)");
    for (auto& e : params.entries()) {
        if (!e.ema) {
            e.ema = e.var->value;
            continue;
        }
        if (!e.ema->same_shape(e.var->value)) throw std::logic_error("ema shadow shape drifted");
        for (std::size_t i = 0; i < e.ema->size(); ++i)
            e.ema->data[i] = decay * e.ema->data[i] + (1.0 - decay) * e.var->value[i];
    }
}

std::unordered_map<std::string, Tensor> snapshot(const ParamSet& params, bool use_ema) {
    std::unordered_map<std::string, Tensor> out;
    for (const auto& e : params.entries())
        out.emplace(e.name, use_ema && e.ema ? *e.ema : e.var->value);
    return out;
}

Var apply_activation(Activation a, const Var& x) {
    switch (a) {
        case Activation::relu: return relu(x);
        case Activation::silu: return silu(x);
        case Activation::tanh: return tanh_v(x);
        case Activation::identity: return x;
    }
    return x;
}

Var Mlp::forward(const Var& x) const {
    Var h = x;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        h = add_row(matmul(h, weights[i]), biases[i]);
        if (i + 1 < weights.size()) h = apply_activation(act, h);
    }
    return h;
}

std::size_t Mlp::flops_per_sample() const {
    std::size_t f = 0;
    for (const auto& w : weights) f += 2 * w->value.dim(0) * w->value.dim(1);
    return f;
}

Mlp build_mlp(ParamSet& params, const std::string& prefix, const std::vector<std::size_t>& widths,
              Activation act, Rng& rng) {
    if (widths.size() < 2) throw std::invalid_argument("build_mlp: need at least [in, out] widths");
    for (auto w : widths)
        if (w < 1) throw std::invalid_argument("build_mlp: widths must be >= 1");
    Mlp m;
    m.act = act;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        double std = std::sqrt(1.0 / static_cast<double>(widths[i]));
        m.weights.push_back(
            params.add(prefix + ".w" + std::to_string(i), rng.normal_tensor({widths[i], widths[i + 1]}, 0.0, std)));
        m.biases.push_back(params.add(prefix + ".b" + std::to_string(i), Tensor({widths[i + 1]})));
    }
    return m;
}

Mlp attach_mlp(ParamSet& params, const std::string& prefix, std::size_t n_layers, Activation act) {
    Mlp m;
    m.act = act;
    for (std::size_t i = 0; i < n_layers; ++i) {
        m.weights.push_back(params.at(prefix + ".w" + std::to_string(i)).var);
        m.biases.push_back(params.at(prefix + ".b" + std::to_string(i)).var);
    }
    return m;
}

Tensor scalar_features(const std::vector<double>& values) {
    Tensor out({values.size(), kScalarFeatureDim});
    for (std::size_t i = 0; i < values.size(); ++i) {
        double v = values[i];
        out.data[i * kScalarFeatureDim + 0] = std::log(std::max(v, 1e-12));
        out.data[i * kScalarFeatureDim + 1] = 0.01 * v;
        out.data[i * kScalarFeatureDim + 2] = std::sin(0.1 * v);
        out.data[i * kScalarFeatureDim + 3] = std::cos(0.1 * v);
    }
    return out;
}

} // namespace pagoda
