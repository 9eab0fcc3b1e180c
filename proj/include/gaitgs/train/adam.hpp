#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaitgs/core/autodiff.hpp"
#include "gaitgs/core/tensor.hpp"
#include "gaitgs/nn/params.hpp"

// Adaptive-moment optimizer with two learning-rate groups: the per-branch
// transformer encoder stacks run at a reduced rate, everything else at the
// base rate. Weight decay is decoupled (applied directly to the parameter,
// not folded into the gradient).

namespace gaitgs::train {

using gaitgs::ad::Tape;

struct AdamConfig {
    double base_lr = 1e-4;
    double transformer_lr_multiplier = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-4;
};

/// True for parameters of the layered encoder stacks (and their final norm),
/// i.e. names under a ".catm." scope. Position-encoding kernels, class
/// tokens, and the per-part FC banks live outside that scope and train at
/// the base rate.
inline bool in_transformer_group(const std::string& name) {
    return name.find(".catm.") != std::string::npos;
}

template <typename T>
class AdamOptimizer {
public:
    struct Slot {
        std::string name;
        Tensor<T>* param;
        Tensor<T> m, v;
        bool transformer;
    };

    static AdamOptimizer create(nn::ParamStore<T>& ps, const AdamConfig& cfg) {
        if (ps.size() == 0)
            throw std::invalid_argument("optimizer needs at least one parameter");
        AdamOptimizer opt;
        opt.cfg_ = cfg;
        for (const auto& name : ps.names()) {
            Tensor<T>& p = ps.get(name);
            opt.slots_.push_back({name, &p, Tensor<T>::zeros(p.shape()),
                                  Tensor<T>::zeros(p.shape()), in_transformer_group(name)});
        }
        return opt;
    }

    /// One update from the gradients accumulated on `tape` by a backward
    /// pass. Parameters that did not participate in the graph carry no
    /// gradient and are skipped entirely (no decay, no moment update).
    void step(Tape<T>& tape, T lr_base) {
        ++step_count_;
        const T bc1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, static_cast<double>(step_count_)));
        const T bc2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, static_cast<double>(step_count_)));
        const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
        const T eps = static_cast<T>(cfg_.eps), wd = static_cast<T>(cfg_.weight_decay);
        for (auto& s : slots_) {
            const Tensor<T>& g = tape.leaf_for(s.param)->grad;
            if (g.empty()) continue;
            const T lr = s.transformer
                             ? lr_base * static_cast<T>(cfg_.transformer_lr_multiplier)
                             : lr_base;
            Tensor<T>& p = *s.param;
            for (std::int64_t i = 0; i < p.numel(); ++i) {
                s.m[i] = b1 * s.m[i] + (T(1) - b1) * g[i];
                s.v[i] = b2 * s.v[i] + (T(1) - b2) * g[i] * g[i];
                // Decoupled decay first, then the moment step.
                p[i] -= lr * wd * p[i];
                p[i] -= lr * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + eps);
            }
        }
        // Domain projection: the generalized-mean exponent must stay in its
        // valid range, enforced here rather than inside the pooling op.
        for (auto& s : slots_) {
            if (s.name.size() >= 6 && s.name.compare(s.name.size() - 6, 6, ".gem.p") == 0)
                for (auto& v : *s.param) v = std::clamp(v, T(1), T(64));
        }
    }

    std::int64_t step_count() const { return step_count_; }
    const std::vector<Slot>& slots() const { return slots_; }
    std::vector<Slot>& slots() { return slots_; }

    std::vector<std::string> transformer_group() const {
        std::vector<std::string> names;
        for (const auto& s : slots_)
            if (s.transformer) names.push_back(s.name);
        return names;
    }

    /// Moment tensors and step counter as named entries for checkpointing.
    template <typename Fn>
    void for_each_state(Fn&& fn) const {
        for (const auto& s : slots_) {
            fn("optim.m." + s.name, s.m);
            fn("optim.v." + s.name, s.v);
        }
    }

    void restore_state(const std::string& name, const Tensor<T>& value) {
        for (auto& s : slots_) {
            const bool is_m = name == "optim.m." + s.name;
            const bool is_v = name == "optim.v." + s.name;
            if (!is_m && !is_v) continue;
            Tensor<T>& dst = is_m ? s.m : s.v;
            if (!dst.same_shape(value))
                throw std::runtime_error("optimizer state shape mismatch for " + name);
            dst = value;
            return;
        }
        throw std::runtime_error("optimizer state entry " + name + " matches no parameter");
    }

    void set_step_count(std::int64_t n) { step_count_ = n; }

private:
    AdamConfig cfg_;
    std::vector<Slot> slots_;
    std::int64_t step_count_ = 0;
};

}  // namespace gaitgs::train
