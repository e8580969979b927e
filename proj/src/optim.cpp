#include "pagoda/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace pagoda {

OptKind opt_kind_from_string(const std::string& s) {
    if (s == "sgd") return OptKind::sgd;
    if (s == "adam") return OptKind::adam;
    if (s == "radam") return OptKind::radam;
    throw std::invalid_argument("unknown optimizer kind: " + s);
}

void OptimizerState::step(ParamSet& params, const std::unordered_map<std::string, Tensor>& grads) {
    ++step_;
    for (auto& e : params.entries()) {
        if (!e.trainable) continue;
        auto it = grads.find(e.name);
        if (it == grads.end()) continue; // no gradient flowed to this parameter
        if (!it->second.same_shape(e.var->value))
            throw std::invalid_argument("optimizer_step: grad shape mismatch for " + e.name);
        apply(e.name, e.var->value, it->second);
    }
}

void OptimizerState::step_from_tape(ParamSet& params) {
    ++step_;
    for (auto& e : params.entries()) {
        if (!e.trainable) continue;
        apply(e.name, e.var->value, e.var->grad);
    }
}

void OptimizerState::step_from_tape(std::initializer_list<ParamSet*> sets) {
    ++step_;
    for (ParamSet* ps : sets)
        for (auto& e : ps->entries()) {
            if (!e.trainable) continue;
            apply(e.name, e.var->value, e.var->grad);
        }
}

void OptimizerState::apply(const std::string& name, Tensor& w, const Tensor& g) {
    const double t = static_cast<double>(step_);
    switch (cfg_.kind) {
        case OptKind::sgd: {
            for (std::size_t i = 0; i < w.size(); ++i) w[i] -= cfg_.lr * g[i];
            return;
        }
        case OptKind::adam: {
            auto& m = m_.try_emplace(name, Tensor(w.shape)).first->second;
            auto& v = v_.try_emplace(name, Tensor(w.shape)).first->second;
            double bc1 = 1.0 - std::pow(cfg_.beta1, t);
            double bc2 = 1.0 - std::pow(cfg_.beta2, t);
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                w[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
            }
            return;
        }
        case OptKind::radam: {
            auto& m = m_.try_emplace(name, Tensor(w.shape)).first->second;
            auto& v = v_.try_emplace(name, Tensor(w.shape)).first->second;
            double bc1 = 1.0 - std::pow(cfg_.beta1, t);
            double bc2 = 1.0 - std::pow(cfg_.beta2, t);
            double rho_inf = 2.0 / (1.0 - cfg_.beta2) - 1.0;
            double rho_t = rho_inf - 2.0 * t * std::pow(cfg_.beta2, t) / bc2;
            bool rectified = rho_t > 4.0;
            double r_t = 1.0;
            if (rectified)
                r_t = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                                ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                double mhat = m[i] / bc1;
                if (rectified)
                    w[i] -= cfg_.lr * r_t * mhat / (std::sqrt(v[i] / bc2) + cfg_.eps);
                else
                    w[i] -= cfg_.lr * mhat;
            }
            return;
        }
    }
}

} // namespace pagoda
