#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "gaitgs/core/rng.hpp"
#include "gaitgs/core/tensor.hpp"

namespace gaitgs::nn {

/// How a parameter tensor is filled at initialization time.
///  - FanInUniform: U(-b, b) with b = 1/sqrt(fan_in); arg = fan_in.
///  - Zero / One: constants (biases, norm offsets / norm gains).
///  - NormalTiny: N(0, 0.02) for embeddings and class tokens.
///  - Const: arg verbatim (e.g. the GeM exponent).
enum class Init { FanInUniform, Zero, One, NormalTiny, Const };

/// Named parameter tensors in declaration order. Tensor addresses are stable
/// after add() (node-based map), so layers can hold raw pointers and the tape
/// can key shared weights by address.
template <typename T>
class ParamStore {
public:
    Tensor<T>& add(const std::string& name, Shape shape, Init kind, double arg = 0.0) {
        if (tensors_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
        order_.push_back(name);
        specs_.push_back({kind, arg});
        auto [it, inserted] = tensors_.emplace(name, Tensor<T>(std::move(shape)));
        (void)inserted;
        return it->second;
    }

    Tensor<T>& get(const std::string& name) {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw std::out_of_range("unknown parameter: " + name);
        return it->second;
    }
    const Tensor<T>& get(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw std::out_of_range("unknown parameter: " + name);
        return it->second;
    }
    bool has(const std::string& name) const { return tensors_.count(name) != 0; }

    const std::vector<std::string>& names() const { return order_; }
    std::size_t size() const { return order_.size(); }

    std::int64_t total_elements() const {
        std::int64_t n = 0;
        for (const auto& name : order_) n += tensors_.at(name).numel();
        return n;
    }

    /// Deterministic fill: each parameter draws from its own child stream of
    /// the master seed, so values do not depend on other parameters' sizes.
    void init_all(std::uint64_t seed) {
        Rng master = Rng::seeded(seed);
        for (std::size_t i = 0; i < order_.size(); ++i) {
            Rng rng = master.child(static_cast<std::uint64_t>(i));
            Tensor<T>& t = tensors_.at(order_[i]);
            const Spec& spec = specs_[i];
            switch (spec.kind) {
                case Init::FanInUniform: {
                    const double b = 1.0 / std::sqrt(spec.arg);
                    for (auto& v : t) v = static_cast<T>(rng.uniform(-b, b));
                    break;
                }
                case Init::Zero:
                    t.fill(T(0));
                    break;
                case Init::One:
                    t.fill(T(1));
                    break;
                case Init::NormalTiny:
                    for (auto& v : t) v = static_cast<T>(rng.normal(0.0, 0.02));
                    break;
                case Init::Const:
                    t.fill(static_cast<T>(spec.arg));
                    break;
            }
        }
    }

    /// Apply fn(name, tensor) over parameters in declaration order.
    template <typename Fn>
    void for_each(Fn&& fn) {
        for (const auto& name : order_) fn(name, tensors_.at(name));
    }
    template <typename Fn>
    void for_each(Fn&& fn) const {
        for (const auto& name : order_) fn(name, tensors_.at(name));
    }

private:
    struct Spec {
        Init kind;
        double arg;
    };
    std::vector<std::string> order_;
    std::vector<Spec> specs_;
    std::unordered_map<std::string, Tensor<T>> tensors_;
};

}  // namespace gaitgs::nn
