#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaitgs/core/ops.hpp"
#include "gaitgs/nn/params.hpp"

// Pre-norm transformer encoder over per-part token sequences. Input layout is
// [batch, parts, tokens, channels]; all parts share the encoder weights and
// are processed as extra batch entries inside the attention.

namespace gaitgs::nn {

using gaitgs::ad::Node;
using gaitgs::ad::Tape;

template <typename T>
struct EncoderLayer {
    Tensor<T>*ln1_g = nullptr, *ln1_b = nullptr, *qkv_w = nullptr, *qkv_b = nullptr,
        *proj_w = nullptr, *proj_b = nullptr;
    Tensor<T>*ln2_g = nullptr, *ln2_b = nullptr, *ff1_w = nullptr, *ff1_b = nullptr,
        *ff2_w = nullptr, *ff2_b = nullptr;
    std::int64_t heads = 1;
    T slope = T(0.01);

    static EncoderLayer create(ParamStore<T>& ps, const std::string& path, std::int64_t c,
                               std::int64_t heads, T slope) {
        if (c % heads != 0)
            throw std::invalid_argument("channel width " + std::to_string(c) +
                                        " not divisible by " + std::to_string(heads) + " heads");
        EncoderLayer l;
        l.heads = heads;
        l.slope = slope;
        l.ln1_g = &ps.add(path + ".ln1.g", {c}, Init::One);
        l.ln1_b = &ps.add(path + ".ln1.b", {c}, Init::Zero);
        l.qkv_w = &ps.add(path + ".qkv.w", {3 * c, c}, Init::FanInUniform, static_cast<double>(c));
        l.qkv_b = &ps.add(path + ".qkv.b", {3 * c}, Init::Zero);
        l.proj_w = &ps.add(path + ".proj.w", {c, c}, Init::FanInUniform, static_cast<double>(c));
        l.proj_b = &ps.add(path + ".proj.b", {c}, Init::Zero);
        l.ln2_g = &ps.add(path + ".ln2.g", {c}, Init::One);
        l.ln2_b = &ps.add(path + ".ln2.b", {c}, Init::Zero);
        l.ff1_w = &ps.add(path + ".ff1.w", {4 * c, c}, Init::FanInUniform, static_cast<double>(c));
        l.ff1_b = &ps.add(path + ".ff1.b", {4 * c}, Init::Zero);
        l.ff2_w = &ps.add(path + ".ff2.w", {c, 4 * c}, Init::FanInUniform,
                          static_cast<double>(4 * c));
        l.ff2_b = &ps.add(path + ".ff2.b", {c}, Init::Zero);
        return l;
    }

    /// x: [B, P, T, C] -> same shape.
    Node<T>* forward(Tape<T>& tape, Node<T>* x) const {
        const std::int64_t b = x->value.dim(0), p = x->value.dim(1);
        const std::int64_t t = x->value.dim(2), c = x->value.dim(3);
        const std::int64_t hd = c / heads;

        // Attention sub-block with pre-normalization.
        auto* h = ops::layer_norm_lastdim(tape, x, tape.leaf_for(ln1_g), tape.leaf_for(ln1_b),
                                          T(1e-5));
        auto* qkv = ops::linear(tape, h, tape.leaf_for(qkv_w), tape.leaf_for(qkv_b));
        auto split_heads = [&](Node<T>* part) {
            // [B,P,T,C] -> [B*P*heads, T, hd]
            auto* r = ops::reshape(tape, part, {b * p, t, heads, hd});
            auto* m = ops::permute(tape, r, {0, 2, 1, 3});
            return ops::reshape(tape, m, {b * p * heads, t, hd});
        };
        auto* q = split_heads(ops::slice(tape, qkv, 3, 0, c));
        auto* k = split_heads(ops::slice(tape, qkv, 3, c, c));
        auto* v = split_heads(ops::slice(tape, qkv, 3, 2 * c, c));
        auto* scores = ops::scale(tape, ops::bmm(tape, q, k, true),
                                  static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd))));
        auto* attn = ops::softmax_lastdim(tape, scores);
        auto* ctx = ops::bmm(tape, attn, v);  // [B*P*heads, T, hd]
        auto* merged = ops::reshape(
            tape, ops::permute(tape, ops::reshape(tape, ctx, {b * p, heads, t, hd}),
                               {0, 2, 1, 3}),
            {b, p, t, c});
        auto* proj = ops::linear(tape, merged, tape.leaf_for(proj_w), tape.leaf_for(proj_b));
        x = ops::add(tape, x, proj);

        // Feed-forward sub-block with pre-normalization.
        auto* h2 = ops::layer_norm_lastdim(tape, x, tape.leaf_for(ln2_g), tape.leaf_for(ln2_b),
                                           T(1e-5));
        auto* f = ops::linear(tape, h2, tape.leaf_for(ff1_w), tape.leaf_for(ff1_b));
        f = ops::leaky_relu(tape, f, slope);
        f = ops::linear(tape, f, tape.leaf_for(ff2_w), tape.leaf_for(ff2_b));
        return ops::add(tape, x, f);
    }
};

template <typename T>
struct TransformerEncoder {
    std::vector<EncoderLayer<T>> layers;
    Tensor<T>*final_g = nullptr, *final_b = nullptr;

    static TransformerEncoder create(ParamStore<T>& ps, const std::string& path, std::int64_t c,
                                     std::int64_t num_layers, std::int64_t heads, T slope) {
        TransformerEncoder enc;
        for (std::int64_t l = 0; l < num_layers; ++l)
            enc.layers.push_back(
                EncoderLayer<T>::create(ps, path + ".layer" + std::to_string(l + 1), c, heads,
                                        slope));
        enc.final_g = &ps.add(path + ".final_ln.g", {c}, Init::One);
        enc.final_b = &ps.add(path + ".final_ln.b", {c}, Init::Zero);
        return enc;
    }

    Node<T>* forward(Tape<T>& tape, Node<T>* x) const {
        for (const auto& l : layers) x = l.forward(tape, x);
        return ops::layer_norm_lastdim(tape, x, tape.leaf_for(final_g), tape.leaf_for(final_b),
                                       T(1e-5));
    }
};

}  // namespace gaitgs::nn
