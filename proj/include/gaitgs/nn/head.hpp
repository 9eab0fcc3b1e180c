#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaitgs/core/conv.hpp"
#include "gaitgs/core/ops.hpp"
#include "gaitgs/nn/params.hpp"
#include "gaitgs/nn/transformer.hpp"

// Temporal head blocks. Token layout throughout is [batch, parts, time,
// channels]: per-part channel vectors produced by horizontal pooling of a
// feature volume, refined by a short-window motion template (MCM), and
// aggregated over time either by a class-token transformer (global span)
// or by a plain max over frames (local span).

namespace gaitgs::nn {

using gaitgs::ad::Node;
using gaitgs::ad::Tape;

// ---------------------------------------------------------------------------
// Position-encoding strategy selection.
// ---------------------------------------------------------------------------

enum class PeStrategy { None, Sinusoidal, Conv1dShared, ChannelGrouped };

inline PeStrategy parse_pe_strategy(const std::string& s) {
    if (s == "none") return PeStrategy::None;
    if (s == "sinusoidal") return PeStrategy::Sinusoidal;
    if (s == "conv1d-shared") return PeStrategy::Conv1dShared;
    if (s == "channel-grouped") return PeStrategy::ChannelGrouped;
    throw std::invalid_argument("unknown position-encoding strategy '" + s +
                                "' (expected none | sinusoidal | conv1d-shared | channel-grouped)");
}

inline std::string pe_strategy_name(PeStrategy s) {
    switch (s) {
        case PeStrategy::None: return "none";
        case PeStrategy::Sinusoidal: return "sinusoidal";
        case PeStrategy::Conv1dShared: return "conv1d-shared";
        case PeStrategy::ChannelGrouped: return "channel-grouped";
    }
    throw std::logic_error("bad PeStrategy");
}

// ---------------------------------------------------------------------------
// MCM: per-part short-window motion template. Each frame token is replaced by
// channel attention (logistic of a width-3 temporal conv) gating a 3-frame
// running max. Edge frames are handled by replication, so any T >= 1 works.
// ---------------------------------------------------------------------------

template <typename T>
struct McmBlock {
    Tensor<T>*w = nullptr, *b = nullptr;  // conv weights [C, C, 3], bias [C]
    std::int64_t window = 3;

    static McmBlock create(ParamStore<T>& ps, const std::string& path, std::int64_t c,
                           std::int64_t window = 3) {
        McmBlock m;
        m.window = window;
        m.w = &ps.add(path + ".conv.w", {c, c, 3}, Init::FanInUniform, static_cast<double>(c * 3));
        m.b = &ps.add(path + ".conv.b", {c}, Init::Zero);
        return m;
    }

    /// tokens: [B, P, T, C] -> same shape.
    Node<T>* forward(Tape<T>& tape, Node<T>* tokens) const {
        auto* att = ops::logistic(
            tape, ops::conv1d_time(tape, tokens, tape.leaf_for(w), tape.leaf_for(b),
                                   ops::PadMode::Replicate));
        auto* mx = ops::window_max_time(tape, tokens, window);
        return ops::mul(tape, att, mx);
    }
};

// ---------------------------------------------------------------------------
// Position encoding over frame tokens. The learnable variants are residual
// (output = tokens + conv(tokens)) with zero-initialized kernels, so encoding
// starts as the identity map. The sinusoidal variant adds the fixed
// sin/cos table (base 10000); `none` is the identity.
// ---------------------------------------------------------------------------

template <typename T>
struct PositionEncoder {
    PeStrategy strategy = PeStrategy::ChannelGrouped;
    Tensor<T>* kernel = nullptr;  // [C, K] grouped / [K] shared; null otherwise

    static PositionEncoder create(ParamStore<T>& ps, const std::string& path, std::int64_t c,
                                  std::int64_t k, PeStrategy strategy) {
        if (k % 2 == 0)
            throw std::invalid_argument("position-encoding kernel width must be odd, got " +
                                        std::to_string(k));
        PositionEncoder pe;
        pe.strategy = strategy;
        if (strategy == PeStrategy::ChannelGrouped)
            pe.kernel = &ps.add(path + ".grouped.w", {c, k}, Init::Zero);
        else if (strategy == PeStrategy::Conv1dShared)
            pe.kernel = &ps.add(path + ".shared.w", {k}, Init::Zero);
        return pe;
    }

    /// tokens: [B, P, T, C] -> same shape.
    Node<T>* forward(Tape<T>& tape, Node<T>* tokens) const {
        switch (strategy) {
            case PeStrategy::None:
                return tokens;
            case PeStrategy::ChannelGrouped:
                return ops::add(tape, tokens,
                                ops::grouped_conv1d_time(tape, tokens, tape.leaf_for(kernel)));
            case PeStrategy::Conv1dShared:
                return ops::add(tape, tokens,
                                ops::shared_conv1d_time(tape, tokens, tape.leaf_for(kernel)));
            case PeStrategy::Sinusoidal:
                return ops::add(tape, tokens, tape.constant(sin_table(tokens->value.shape())));
        }
        throw std::logic_error("bad PeStrategy");
    }

    static Tensor<T> sin_table(const Shape& s) {
        const std::int64_t b = s[0], p = s[1], t = s[2], c = s[3];
        Tensor<T> table(s);
        for (std::int64_t ti = 0; ti < t; ++ti) {
            for (std::int64_t ci = 0; ci < c; ++ci) {
                const double expo = static_cast<double>(2 * (ci / 2)) / static_cast<double>(c);
                const double angle = static_cast<double>(ti) / std::pow(10000.0, expo);
                const T v = static_cast<T>(ci % 2 == 0 ? std::sin(angle) : std::cos(angle));
                for (std::int64_t bi = 0; bi < b; ++bi)
                    for (std::int64_t pi = 0; pi < p; ++pi)
                        table.at({bi, pi, ti, ci}) = v;
            }
        }
        return table;
    }
};

// ---------------------------------------------------------------------------
// Attribute-prior head: pools the branch feature volumes down to one vector
// per sample, classifies a non-gait attribute (viewpoint or walking
// condition), and looks up a learnable embedding for the predicted class.
// The embedding table is per branch so the injected vector matches the
// branch token width.
// ---------------------------------------------------------------------------

template <typename T>
struct PriorHead {
    Tensor<T>* w = nullptr;                 // logits map [M, in_width], no bias
    std::vector<Tensor<T>*> tables;         // one [M, C2] table per enabled branch
    std::int64_t num_classes = 0;

    static PriorHead create(ParamStore<T>& ps, const std::string& path, std::int64_t m,
                            std::int64_t in_width, const std::vector<std::string>& branches,
                            std::int64_t c2) {
        if (m < 2)
            throw std::invalid_argument("prior head needs at least 2 classes, got " +
                                        std::to_string(m));
        PriorHead h;
        h.num_classes = m;
        h.w = &ps.add(path + ".w", {m, in_width}, Init::FanInUniform,
                      static_cast<double>(in_width));
        for (const auto& br : branches)
            h.tables.push_back(&ps.add(path + ".table." + br, {m, c2}, Init::NormalTiny));
        return h;
    }
};

template <typename T>
struct PriorOut {
    Node<T>* logits = nullptr;            // [B, M]
    std::vector<std::int64_t> predicted;  // argmax per sample, lowest index wins
    std::vector<Node<T>*> embeddings;     // per branch: [B, C2]
};

template <typename T>
struct PiegBlock {
    Tensor<T>* gem_p = nullptr;     // learnable pooling exponent, clamped to [1, 64] by the optimizer
    std::vector<PriorHead<T>> heads;

    static PiegBlock create(ParamStore<T>& ps, const std::string& path, std::int64_t c2,
                            const std::vector<std::string>& branches,
                            const std::vector<std::pair<std::string, std::int64_t>>& head_specs,
                            double gem_p_init = 3.0) {
        PiegBlock pg;
        pg.gem_p = &ps.add(path + ".gem.p", {1}, Init::Const, gem_p_init);
        const std::int64_t in_width = static_cast<std::int64_t>(branches.size()) * c2;
        for (const auto& [name, m] : head_specs)
            pg.heads.push_back(PriorHead<T>::create(ps, path + "." + name, m, in_width,
                                                    branches, c2));
        return pg;
    }

    /// volumes: one [B, C2, T, H, W] per enabled branch (same H, W; T may
    /// differ across branches). Returns one PriorOut per head; embeddings of
    /// multiple heads are meant to be summed by the caller.
    std::vector<PriorOut<T>> forward(Tape<T>& tape, const std::vector<Node<T>*>& volumes) const {
        if (volumes.empty()) throw std::invalid_argument("prior head needs at least one branch");
        std::vector<Node<T>*> pooled;
        for (auto* v : volumes) pooled.push_back(ops::max_time_bcthw(tape, v));
        auto* cat = pooled.size() == 1 ? pooled[0] : ops::concat(tape, pooled, 1);
        auto* sp = ops::gem_pool(tape, cat, tape.leaf_for(gem_p));  // [B, in_width]

        std::vector<PriorOut<T>> outs;
        for (const auto& head : heads) {
            PriorOut<T> o;
            o.logits = ops::linear(tape, sp, tape.leaf_for(head.w),
                                   static_cast<Node<T>*>(nullptr));
            if (!gaitgs::all_finite(o.logits->value)) throw std::runtime_error("prior head diverged");
            const std::int64_t bsz = o.logits->value.dim(0), m = head.num_classes;
            o.predicted.resize(bsz);
            for (std::int64_t bi = 0; bi < bsz; ++bi) {
                const T* row = o.logits->value.data() + bi * m;
                std::int64_t best = 0;
                for (std::int64_t j = 1; j < m; ++j)
                    if (row[j] > row[best]) best = j;  // strict >: lowest index wins ties
                o.predicted[bi] = best;
            }
            for (auto* table : head.tables)
                o.embeddings.push_back(
                    ops::embedding_select(tape, tape.leaf_for(table), o.predicted));
            outs.push_back(std::move(o));
        }
        return outs;
    }
};

// ---------------------------------------------------------------------------
// Class-token transformer over one branch's tokens: position-encode, append
// the learnable class token as the final frame, broadcast-add the prior
// embedding to every token, run the encoder, read out the class-token slot,
// and apply the per-part FC bank.
// ---------------------------------------------------------------------------

template <typename T>
struct CatmBlock {
    PositionEncoder<T> pe;
    Tensor<T>* cls = nullptr;  // [C], shared across parts
    TransformerEncoder<T> encoder;
    Tensor<T>*sfc_w = nullptr, *sfc_b = nullptr;  // [P, C, C], [P, C]

    static CatmBlock create(ParamStore<T>& ps, const std::string& path, std::int64_t c,
                            std::int64_t parts, std::int64_t pe_kernel, PeStrategy strategy,
                            std::int64_t layers, std::int64_t heads, T slope) {
        CatmBlock cb;
        cb.pe = PositionEncoder<T>::create(ps, path + ".pe", c, pe_kernel, strategy);
        cb.cls = &ps.add(path + ".cls", {c}, Init::NormalTiny);
        cb.encoder = TransformerEncoder<T>::create(ps, path + ".catm", c, layers, heads, slope);
        cb.sfc_w = &ps.add(path + ".sfc.w", {parts, c, c}, Init::FanInUniform,
                           static_cast<double>(c));
        cb.sfc_b = &ps.add(path + ".sfc.b", {parts, c}, Init::Zero);
        return cb;
    }

    /// tokens: [B, P, T, C]; e_prior: [B, C] or null. Returns [B, P, C].
    Node<T>* forward(Tape<T>& tape, Node<T>* tokens, Node<T>* e_prior) const {
        auto* x = pe.forward(tape, tokens);
        x = ops::append_token(tape, x, tape.leaf_for(cls));
        if (e_prior != nullptr) x = ops::add_vector_bpc(tape, x, e_prior);
        x = encoder.forward(tape, x);
        const std::int64_t b = x->value.dim(0), p = x->value.dim(1);
        const std::int64_t t1 = x->value.dim(2), c = x->value.dim(3);
        auto* cls_out = ops::reshape(tape, ops::slice(tape, x, 2, t1 - 1, 1), {b, p, c});
        return ops::separate_fc(tape, cls_out, tape.leaf_for(sfc_w), tape.leaf_for(sfc_b));
    }
};

/// Plain temporal pooling of motion tokens: [B, P, T, C] -> [B, P, C].
template <typename T>
Node<T>* local_feature(Tape<T>& tape, Node<T>* tokens) {
    return ops::max_over_time(tape, tokens);
}

/// Final descriptor assembly: per-branch halves (each [B, P, C]) are placed
/// side by side on the channel axis, fine half first. A branch disabled by
/// ablation passes null and the descriptor shrinks accordingly.
template <typename T>
Node<T>* fuse_parts(Tape<T>& tape, Node<T>* fine_half, Node<T>* coarse_half) {
    if (fine_half != nullptr && coarse_half != nullptr) {
        if (!fine_half->value.same_shape(coarse_half->value))
            throw std::invalid_argument("fusion shape mismatch: " +
                                        gaitgs::shape_str(fine_half->value.shape()) + " vs " +
                                        gaitgs::shape_str(coarse_half->value.shape()));
        return ops::concat(tape, {fine_half, coarse_half}, 2);
    }
    if (fine_half == nullptr && coarse_half == nullptr)
        throw std::invalid_argument("fusion needs at least one branch");
    return fine_half != nullptr ? fine_half : coarse_half;
}

}  // namespace gaitgs::nn
