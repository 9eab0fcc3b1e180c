#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaitgs/core/conv.hpp"
#include "gaitgs/core/ops.hpp"
#include "gaitgs/nn/params.hpp"

// Dual-granularity 3-D convolutional feature extractor: a shallow stem, then
// two towers over the same stage schedule — a fine tower at frame rate and a
// coarse tower at one-third rate fed through unit temporal aggregation, with
// additive injections of aggregated fine features at each stage boundary.

namespace gaitgs::nn {

using gaitgs::ad::Node;
using gaitgs::ad::Tape;

/// Output length of the stride-3 / kernel-3 temporal aggregation.
inline std::int64_t uta_length(std::int64_t t) { return (t - 3) / 3 + 1; }

/// Three parallel 3-D convolutions — kernels (3,3,3), (3,1,1), (1,3,3),
/// stride 1, zero same-padding — summed and passed through the activation.
template <typename T>
struct B3DBlock {
    Tensor<T>*w333, *b333, *w311, *b311, *w133, *b133;
    T slope;

    static B3DBlock create(ParamStore<T>& ps, const std::string& path, std::int64_t cin,
                           std::int64_t cout, T slope) {
        B3DBlock b;
        b.slope = slope;
        b.w333 = &ps.add(path + ".k333.w", {cout, cin, 3, 3, 3}, Init::FanInUniform,
                         static_cast<double>(cin * 27));
        b.b333 = &ps.add(path + ".k333.b", {cout}, Init::Zero);
        b.w311 = &ps.add(path + ".k311.w", {cout, cin, 3, 1, 1}, Init::FanInUniform,
                         static_cast<double>(cin * 3));
        b.b311 = &ps.add(path + ".k311.b", {cout}, Init::Zero);
        b.w133 = &ps.add(path + ".k133.w", {cout, cin, 1, 3, 3}, Init::FanInUniform,
                         static_cast<double>(cin * 9));
        b.b133 = &ps.add(path + ".k133.b", {cout}, Init::Zero);
        return b;
    }

    Node<T>* forward(Tape<T>& tape, Node<T>* x) const {
        if (x->value.dim(1) != w333->dim(1))
            throw std::invalid_argument("B3D channel mismatch: input has " +
                                        std::to_string(x->value.dim(1)) + ", weights expect " +
                                        std::to_string(w333->dim(1)));
        auto* y1 = ops::conv3d_same(tape, x, tape.leaf_for(w333), tape.leaf_for(b333));
        auto* y2 = ops::conv3d_same(tape, x, tape.leaf_for(w311), tape.leaf_for(b311));
        auto* y3 = ops::conv3d_same(tape, x, tape.leaf_for(w133), tape.leaf_for(b133));
        return ops::leaky_relu(tape, ops::add(tape, ops::add(tape, y1, y2), y3), slope);
    }
};

/// Height-split enhancement block: the same B3D weights applied to each of
/// `parts` equal height strips (concatenated back), plus a full-frame B3D
/// shortcut added on top.
template <typename T>
struct StemBlock {
    B3DBlock<T> part;  // shared across all strips
    B3DBlock<T> full;  // full-frame shortcut
    std::int64_t parts;

    static StemBlock create(ParamStore<T>& ps, const std::string& path, std::int64_t cin,
                            std::int64_t cout, std::int64_t parts, T slope) {
        StemBlock s;
        s.part = B3DBlock<T>::create(ps, path + ".part", cin, cout, slope);
        s.full = B3DBlock<T>::create(ps, path + ".full", cin, cout, slope);
        s.parts = parts;
        return s;
    }

    Node<T>* forward(Tape<T>& tape, Node<T>* x) const {
        const std::int64_t h = x->value.dim(3);
        if (h % parts != 0) throw std::invalid_argument("height not partitionable");
        const std::int64_t hs = h / parts;
        std::vector<Node<T>*> strips;
        strips.reserve(static_cast<std::size_t>(parts));
        for (std::int64_t p = 0; p < parts; ++p)
            strips.push_back(part.forward(tape, ops::slice(tape, x, 3, p * hs, hs)));
        auto* tower = ops::concat(tape, strips, 3);
        return ops::add(tape, tower, full.forward(tape, x));
    }
};

/// Unit temporal aggregation: kernel-3, stride-3 temporal convolution with no
/// temporal padding (channels preserved), then the activation. Collapses each
/// disjoint 3-frame unit into one output frame.
template <typename T>
struct UtaBlock {
    Tensor<T>*w, *b;
    T slope;

    static UtaBlock create(ParamStore<T>& ps, const std::string& path, std::int64_t channels,
                           T slope) {
        UtaBlock u;
        u.slope = slope;
        u.w = &ps.add(path + ".k311.w", {channels, channels, 3, 1, 1}, Init::FanInUniform,
                      static_cast<double>(channels * 3));
        u.b = &ps.add(path + ".k311.b", {channels}, Init::Zero);
        return u;
    }

    Node<T>* forward(Tape<T>& tape, Node<T>* x) const {
        if (x->value.dim(2) < 3)
            throw std::invalid_argument("sequence too short for unit aggregation");
        auto* y = ops::conv3d(tape, x, tape.leaf_for(w), tape.leaf_for(b), {3, 1, 1}, {0, 0, 0});
        return ops::leaky_relu(tape, y, slope);
    }
};

struct BackboneConfig {
    std::int64_t in_channels = 1;
    std::int64_t stem_channels = 32;              // shallow 3x3x3 output width
    std::vector<std::int64_t> stage_channels = {64, 64, 128};
    std::vector<int> pool_positions = {1};        // 2x2 spatial max-pool after stage i (0 = before stage 1)
    std::int64_t stem_parts = 4;
    double slope = 0.01;
    bool coarse_injections = true;

    std::int64_t out_channels() const { return stage_channels.back(); }
};

/// The full extractor. Fine tower output keeps the input frame rate; the
/// coarse tower runs at one-third rate: its entry is uta(fine entry) and each
/// later stage input adds uta(previous fine stage output).
template <typename T>
struct Backbone {
    BackboneConfig cfg;
    Tensor<T>*shallow_w, *shallow_b;
    std::vector<StemBlock<T>> fine_stages;
    UtaBlock<T> entry_uta;
    std::vector<StemBlock<T>> coarse_stages;
    std::vector<UtaBlock<T>> inj_utas;  // one per stage boundary, stages 2..n

    static Backbone create(ParamStore<T>& ps, const BackboneConfig& cfg) {
        if (cfg.stage_channels.empty())
            throw std::invalid_argument("backbone needs at least one stage");
        Backbone bb;
        bb.cfg = cfg;
        const T slope = static_cast<T>(cfg.slope);
        bb.shallow_w = &ps.add("shallow.s0.conv.k333.w",
                               {cfg.stem_channels, cfg.in_channels, 3, 3, 3}, Init::FanInUniform,
                               static_cast<double>(cfg.in_channels * 27));
        bb.shallow_b = &ps.add("shallow.s0.conv.k333.b", {cfg.stem_channels}, Init::Zero);
        std::int64_t cin = cfg.stem_channels;
        for (std::size_t i = 0; i < cfg.stage_channels.size(); ++i) {
            const std::string idx = std::to_string(i + 1);
            bb.fine_stages.push_back(StemBlock<T>::create(ps, "fine.s" + idx, cin,
                                                          cfg.stage_channels[i], cfg.stem_parts,
                                                          slope));
            cin = cfg.stage_channels[i];
        }
        bb.entry_uta = UtaBlock<T>::create(ps, "coarse.entry.uta", cfg.stem_channels, slope);
        cin = cfg.stem_channels;
        for (std::size_t i = 0; i < cfg.stage_channels.size(); ++i) {
            const std::string idx = std::to_string(i + 1);
            bb.coarse_stages.push_back(StemBlock<T>::create(ps, "coarse.s" + idx, cin,
                                                            cfg.stage_channels[i],
                                                            cfg.stem_parts, slope));
            if (i >= 1)
                bb.inj_utas.push_back(UtaBlock<T>::create(ps, "coarse.s" + idx + ".inj.uta",
                                                          cin, slope));
            cin = cfg.stage_channels[i];
        }
        return bb;
    }

    /// Shallow stem: one 3x3x3 same-padded convolution plus activation.
    Node<T>* shallow(Tape<T>& tape, Node<T>* x) const {
        auto* y = ops::conv3d_same(tape, x, tape.leaf_for(shallow_w), tape.leaf_for(shallow_b));
        return ops::leaky_relu(tape, y, static_cast<T>(cfg.slope));
    }

    bool pool_at(int position) const {
        for (int p : cfg.pool_positions)
            if (p == position) return true;
        return false;
    }

    struct FineOut {
        Node<T>* final_out;            // S_f
        std::vector<Node<T>*> flows;   // flows[i] = input to stage i+1 (flows[0] = entry)
    };

    /// Fine tower over the shallow features. flows[i] records the value
    /// flowing into stage i+1 (after any pooling), which is what the coarse
    /// tower aggregates and injects.
    FineOut fine_branch(Tape<T>& tape, Node<T>* s_hat) const {
        FineOut out;
        Node<T>* x = s_hat;
        if (pool_at(0)) x = ops::maxpool_hw(tape, x);
        out.flows.push_back(x);
        for (std::size_t i = 0; i < fine_stages.size(); ++i) {
            x = fine_stages[i].forward(tape, x);
            if (pool_at(static_cast<int>(i) + 1)) x = ops::maxpool_hw(tape, x);
            out.flows.push_back(x);
        }
        out.final_out = x;
        return out;
    }

    /// Coarse tower: entry is uta(fine entry); stage i >= 2 additionally adds
    /// uta(fine stage i-1 output) before convolving. Pooling mirrors the fine
    /// schedule so the injected volumes always align spatially.
    Node<T>* coarse_branch(Tape<T>& tape, const FineOut& fine) const {
        Node<T>* x = entry_uta.forward(tape, fine.flows[0]);
        for (std::size_t i = 0; i < coarse_stages.size(); ++i) {
            if (i >= 1 && cfg.coarse_injections) {
                Node<T>* inj = inj_utas[i - 1].forward(tape, fine.flows[i]);
                if (inj->value.dim(2) != x->value.dim(2))
                    throw std::logic_error("temporal misalignment after uta");
                x = ops::add(tape, x, inj);
            }
            x = coarse_stages[i].forward(tape, x);
            if (pool_at(static_cast<int>(i) + 1)) x = ops::maxpool_hw(tape, x);
        }
        return x;
    }

    struct Out {
        Node<T>* s_f = nullptr;
        Node<T>* s_c = nullptr;
    };

    /// x: [B, in_channels, T, H, W]. Either tower can be skipped (ablations).
    Out forward(Tape<T>& tape, Node<T>* x, bool want_fine = true, bool want_coarse = true) const {
        Node<T>* s_hat = shallow(tape, x);
        Out out;
        FineOut fine = fine_branch(tape, s_hat);
        if (want_fine) out.s_f = fine.final_out;
        if (want_coarse) out.s_c = coarse_branch(tape, fine);
        return out;
    }
};

}  // namespace gaitgs::nn
