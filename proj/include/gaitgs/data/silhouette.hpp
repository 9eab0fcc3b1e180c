#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gaitgs/core/tensor.hpp"

// Core value types for silhouette data: grayscale images as read from disk,
// binary silhouette frames after preprocessing, and the labels that ride
// along with each sequence.

namespace gaitgs::data {

/// Grayscale image, [H, W], values 0..255.
using Image = Tensor<std::uint8_t>;

/// Binary silhouette frame, [H, W], every pixel exactly 0 or 1.
using Silhouette = Tensor<std::uint8_t>;

/// Normalized frame size all sequences are brought to before batching.
inline constexpr std::int64_t kFrameH = 64;
inline constexpr std::int64_t kFrameW = 44;

/// Foreground threshold: a pixel is silhouette if strictly above this.
inline constexpr std::uint8_t kBinarizeThreshold = 127;

struct SampleMeta {
    std::string subject_id;
    std::string condition;  ///< e.g. "nm" / "bg" / "cl"
    int condition_index = 0;
    std::string view;  ///< degrees as zero-padded string, e.g. "090"
    int view_index = 0;
    int sequence_index = 0;
};

inline bool same_sample(const SampleMeta& a, const SampleMeta& b) {
    return a.subject_id == b.subject_id && a.condition == b.condition && a.view == b.view &&
           a.sequence_index == b.sequence_index;
}

/// Ordered frames of one capture plus its labels. Frame order equals capture
/// order; loaders must sort filenames lexicographically to guarantee that.
struct SilhouetteSequence {
    std::vector<Silhouette> frames;
    SampleMeta meta;
};

/// A fixed-length training clip is just a sequence with exactly T frames.
using FrameClip = SilhouetteSequence;

}  // namespace gaitgs::data
