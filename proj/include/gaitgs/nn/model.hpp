#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gaitgs/core/conv.hpp"
#include "gaitgs/core/ops.hpp"
#include "gaitgs/nn/backbone.hpp"
#include "gaitgs/nn/head.hpp"
#include "gaitgs/nn/params.hpp"

// Whole-network assembly: dual-granularity extractor, per-branch motion
// tokens, attribute-prior head, global (class-token transformer) and local
// (max-over-time) spans, and channel-concatenated fusion into the final
// per-part descriptor.

namespace gaitgs::nn {

struct ModelConfig {
    BackboneConfig backbone;
    std::int64_t parts = 32;
    std::int64_t pe_kernel = 7;
    PeStrategy pe_strategy = PeStrategy::ChannelGrouped;
    std::int64_t tf_layers = 3;
    std::int64_t tf_heads = 8;
    std::int64_t mcm_window = 3;
    bool use_fine = true;
    bool use_coarse = true;
    bool use_global = true;
    bool use_local = true;
    std::int64_t num_views = 11;      // view prior head classes
    std::int64_t num_conditions = 0;  // 0 disables the condition prior head
    double gem_p_init = 3.0;

    std::int64_t c2() const { return backbone.out_channels(); }
    std::int64_t descriptor_dim() const {
        return ((use_fine ? 1 : 0) + (use_coarse ? 1 : 0)) * c2();
    }

    void validate() const {
        if (!use_fine && !use_coarse)
            throw std::invalid_argument("config error: at least one branch must be enabled");
        if (!use_global && !use_local)
            throw std::invalid_argument("config error: at least one span must be enabled");
        if (use_global && c2() % tf_heads != 0)
            throw std::invalid_argument("config error: channel width " + std::to_string(c2()) +
                                        " not divisible by " + std::to_string(tf_heads) +
                                        " attention heads");
        if (use_global && num_views < 2)
            throw std::invalid_argument("config error: view prior head needs >= 2 classes");
        if (parts < 1) throw std::invalid_argument("config error: parts must be >= 1");
    }
};

template <typename T>
struct Model {
    ModelConfig cfg;
    Backbone<T> backbone;
    McmBlock<T> mcm_fine, mcm_coarse;
    CatmBlock<T> catm_fine, catm_coarse;
    PiegBlock<T> pieg;

    static Model create(ParamStore<T>& ps, const ModelConfig& cfg) {
        cfg.validate();
        Model m;
        m.cfg = cfg;
        m.backbone = Backbone<T>::create(ps, cfg.backbone);
        const std::int64_t c2 = cfg.c2();
        const T slope = static_cast<T>(cfg.backbone.slope);
        if (cfg.use_fine) {
            m.mcm_fine = McmBlock<T>::create(ps, "head.fine.mcm", c2, cfg.mcm_window);
            if (cfg.use_global)
                m.catm_fine = CatmBlock<T>::create(ps, "head.fine", c2, cfg.parts,
                                                   cfg.pe_kernel, cfg.pe_strategy, cfg.tf_layers,
                                                   cfg.tf_heads, slope);
        }
        if (cfg.use_coarse) {
            m.mcm_coarse = McmBlock<T>::create(ps, "head.coarse.mcm", c2, cfg.mcm_window);
            if (cfg.use_global)
                m.catm_coarse = CatmBlock<T>::create(ps, "head.coarse", c2, cfg.parts,
                                                     cfg.pe_kernel, cfg.pe_strategy,
                                                     cfg.tf_layers, cfg.tf_heads, slope);
        }
        if (cfg.use_global) {
            std::vector<std::string> branches;
            if (cfg.use_fine) branches.push_back("fine");
            if (cfg.use_coarse) branches.push_back("coarse");
            std::vector<std::pair<std::string, std::int64_t>> heads;
            heads.emplace_back("view", cfg.num_views);
            if (cfg.num_conditions > 0) heads.emplace_back("cond", cfg.num_conditions);
            m.pieg = PiegBlock<T>::create(ps, "head.pieg", c2, branches, heads, cfg.gem_p_init);
        }
        return m;
    }

    struct Out {
        Node<T>* descriptor = nullptr;     // [B, P, D]
        Node<T>* view_logits = nullptr;    // [B, num_views] when the global span is on
        std::vector<std::int64_t> view_pred;
        Node<T>* cond_logits = nullptr;    // [B, num_conditions] when enabled
        std::vector<std::int64_t> cond_pred;
        Node<T>* tokens_fine = nullptr;    // [B, P, T, C2] motion tokens
        Node<T>* tokens_coarse = nullptr;  // [B, P, T', C2]
        Node<T>* s_f = nullptr;            // [B, C2, T, H', W'] branch volumes
        Node<T>* s_c = nullptr;
    };

    /// x: [B, in_channels, T, H, W] silhouette clip.
    Out forward(Tape<T>& tape, Node<T>* x) const {
        auto bb = backbone.forward(tape, x, cfg.use_fine, cfg.use_coarse);
        Out out;
        out.s_f = bb.s_f;
        out.s_c = bb.s_c;

        std::vector<Node<T>*> prior_volumes;
        if (cfg.use_fine) {
            out.tokens_fine =
                mcm_fine.forward(tape, ops::horizontal_pool(tape, bb.s_f, cfg.parts));
            prior_volumes.push_back(bb.s_f);
        }
        if (cfg.use_coarse) {
            out.tokens_coarse =
                mcm_coarse.forward(tape, ops::horizontal_pool(tape, bb.s_c, cfg.parts));
            prior_volumes.push_back(bb.s_c);
        }

        Node<T>* e_fine = nullptr;
        Node<T>* e_coarse = nullptr;
        if (cfg.use_global) {
            auto priors = pieg.forward(tape, prior_volumes);
            out.view_logits = priors[0].logits;
            out.view_pred = priors[0].predicted;
            if (priors.size() > 1) {
                out.cond_logits = priors[1].logits;
                out.cond_pred = priors[1].predicted;
            }
            // Per-branch prior embedding; when both heads are enabled their
            // embeddings are summed.
            std::size_t bi = 0;
            auto branch_embed = [&](std::size_t idx) {
                Node<T>* e = priors[0].embeddings[idx];
                for (std::size_t h = 1; h < priors.size(); ++h)
                    e = ops::add(tape, e, priors[h].embeddings[idx]);
                return e;
            };
            if (cfg.use_fine) e_fine = branch_embed(bi++);
            if (cfg.use_coarse) e_coarse = branch_embed(bi++);
        }

        auto span_sum = [&](Node<T>* tokens, const CatmBlock<T>& catm,
                            Node<T>* e_prior) -> Node<T>* {
            Node<T>* g = cfg.use_global ? catm.forward(tape, tokens, e_prior) : nullptr;
            Node<T>* l = cfg.use_local ? local_feature(tape, tokens) : nullptr;
            if (g != nullptr && l != nullptr) return ops::add(tape, g, l);
            return g != nullptr ? g : l;
        };
        Node<T>* half_f =
            cfg.use_fine ? span_sum(out.tokens_fine, catm_fine, e_fine) : nullptr;
        Node<T>* half_c =
            cfg.use_coarse ? span_sum(out.tokens_coarse, catm_coarse, e_coarse) : nullptr;
        out.descriptor = fuse_parts(tape, half_f, half_c);
        return out;
    }
};

/// CASIA-B-scale default configuration.
inline ModelConfig default_model_config() { return ModelConfig{}; }

/// Desk-scale micro configuration used by the fast tests.
inline ModelConfig micro_model_config() {
    ModelConfig cfg;
    cfg.backbone.stem_channels = 4;
    cfg.backbone.stage_channels = {4, 8};
    cfg.parts = 4;
    cfg.tf_layers = 1;
    cfg.tf_heads = 2;
    cfg.num_views = 4;
    return cfg;
}

}  // namespace gaitgs::nn
