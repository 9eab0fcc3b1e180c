#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gaitgs/core/rng.hpp"
#include "gaitgs/core/tensor.hpp"
#include "gaitgs/data/manifest.hpp"
#include "gaitgs/data/preprocess.hpp"
#include "gaitgs/data/silhouette.hpp"

// Clip sampling and identity-balanced batch construction: each batch holds P
// distinct subjects and K clips per subject, the sampling scheme the
// all-triplet loss expects.

namespace gaitgs::data {

/// Fixed-length training clip: a contiguous window at a uniformly random
/// offset when the sequence is long enough, otherwise the whole sequence
/// repeated cyclically until T frames are gathered (order-preserving).
inline FrameClip sample_clip(const SilhouetteSequence& seq, std::int64_t T, Rng& rng) {
    if (T < 1) throw std::invalid_argument("clip length must be >= 1");
    if (seq.frames.empty()) throw std::invalid_argument("cannot sample from an empty sequence");
    const auto t_raw = static_cast<std::int64_t>(seq.frames.size());
    FrameClip clip;
    clip.meta = seq.meta;
    clip.frames.reserve(static_cast<std::size_t>(T));
    if (t_raw >= T) {
        const std::int64_t off = rng.uniform_int(0, t_raw - T);
        for (std::int64_t i = 0; i < T; ++i)
            clip.frames.push_back(seq.frames[static_cast<std::size_t>(off + i)]);
    } else {
        for (std::int64_t i = 0; i < T; ++i)
            clip.frames.push_back(seq.frames[static_cast<std::size_t>(i % t_raw)]);
    }
    return clip;
}

/// Stack clips into the model input layout [N, 1, T, H, W] with 0/1 values.
template <typename T>
Tensor<T> clips_to_tensor(const std::vector<FrameClip>& clips) {
    if (clips.empty()) throw std::invalid_argument("no clips to batch");
    const auto n = static_cast<std::int64_t>(clips.size());
    const auto t_len = static_cast<std::int64_t>(clips[0].frames.size());
    const std::int64_t h = clips[0].frames[0].dim(0), w = clips[0].frames[0].dim(1);
    Tensor<T> out(Shape{n, 1, t_len, h, w});
    T* dst = out.data();
    for (const auto& clip : clips) {
        if (static_cast<std::int64_t>(clip.frames.size()) != t_len)
            throw std::invalid_argument("clips in one batch must share T");
        for (const auto& f : clip.frames) {
            if (f.dim(0) != h || f.dim(1) != w)
                throw std::invalid_argument("clips in one batch must share frame size");
            for (std::int64_t i = 0; i < f.numel(); ++i) *dst++ = static_cast<T>(f[i]);
        }
    }
    return out;
}

/// Manifest plus its sequences loaded into memory, in entry order.
struct Dataset {
    DatasetManifest manifest;
    std::vector<SilhouetteSequence> sequences;

    static Dataset load(const std::filesystem::path& root, DatasetManifest m) {
        Dataset d;
        d.sequences.reserve(m.entries.size());
        for (const auto& e : m.entries)
            d.sequences.push_back(load_sequence(root / e.path, e.meta));
        d.manifest = std::move(m);
        return d;
    }
};

/// Yields batches of P distinct subjects x K sequence draws each. Subjects
/// are drawn without replacement per batch (uniformly via a full shuffle);
/// a subject's sequences are drawn without replacement when it has at least
/// K of them, with replacement otherwise.
class BatchSampler {
public:
    struct Draw {
        std::size_t entry_index;   ///< into the manifest used to build the sampler
        int subject_label;         ///< dense label in [0, num_subjects)
    };

    BatchSampler(const DatasetManifest& manifest, int subjects_per_batch, int clips_per_subject,
                 Rng rng)
        : p_(subjects_per_batch), k_(clips_per_subject), rng_(std::move(rng)) {
        if (p_ < 1 || k_ < 1) throw std::invalid_argument("batch spec infeasible: P, K must be >= 1");
        std::map<std::string, std::vector<std::size_t>> by_subject;
        for (std::size_t i = 0; i < manifest.entries.size(); ++i)
            by_subject[manifest.entries[i].meta.subject_id].push_back(i);
        for (auto& [id, idxs] : by_subject) groups_.push_back(std::move(idxs));
        if (static_cast<int>(groups_.size()) < p_)
            throw std::runtime_error("batch spec infeasible: need " + std::to_string(p_) +
                                     " subjects, manifest has " + std::to_string(groups_.size()));
    }

    int num_subjects() const { return static_cast<int>(groups_.size()); }

    std::vector<Draw> next() {
        std::vector<int> order(groups_.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        shuffle(order);
        std::vector<Draw> batch;
        batch.reserve(static_cast<std::size_t>(p_ * k_));
        for (int s = 0; s < p_; ++s) {
            const int label = order[static_cast<std::size_t>(s)];
            const auto& seqs = groups_[static_cast<std::size_t>(label)];
            if (static_cast<int>(seqs.size()) >= k_) {
                std::vector<std::size_t> pick(seqs.begin(), seqs.end());
                shuffle(pick);
                for (int k = 0; k < k_; ++k) batch.push_back({pick[static_cast<std::size_t>(k)], label});
            } else {
                for (int k = 0; k < k_; ++k) {
                    const auto j = static_cast<std::size_t>(
                        rng_.uniform_int(0, static_cast<std::int64_t>(seqs.size()) - 1));
                    batch.push_back({seqs[j], label});
                }
            }
        }
        return batch;
    }

    std::string rng_state() const { return rng_.serialize(); }
    void restore_rng(const std::string& s) { rng_.deserialize(s); }

private:
    template <typename V>
    void shuffle(std::vector<V>& v) {
        // Fisher-Yates on our own engine so draws are seed-reproducible
        // across standard library implementations.
        for (auto i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
            const auto j = static_cast<std::size_t>(rng_.uniform_int(0, i));
            std::swap(v[static_cast<std::size_t>(i)], v[j]);
        }
    }

    int p_, k_;
    Rng rng_;
    std::vector<std::vector<std::size_t>> groups_;  ///< entry indices per subject, sorted by id
};

}  // namespace gaitgs::data
