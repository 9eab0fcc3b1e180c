#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaitgs/data/image_io.hpp"
#include "gaitgs/data/silhouette.hpp"

// Silhouette normalization: binarize, crop to the vertical foreground
// bounding box, scale to frame height with nearest-neighbor sampling, and
// center the frame horizontally on the foreground centroid. The pipeline is
// a fixed point on frames already in canonical form, so pre-normalized data
// passes through bit-unchanged.

namespace gaitgs::data {

inline Silhouette binarize(const Image& img) {
    Silhouette out(img.shape());
    for (std::int64_t i = 0; i < img.numel(); ++i)
        out[i] = img[i] > kBinarizeThreshold ? 1 : 0;
    return out;
}

namespace detail {

/// Nearest-neighbor resample with pixel-center alignment: output pixel i
/// samples input pixel floor((i+0.5)*src/dst), which is the identity map
/// when src == dst.
inline std::int64_t nn_src(std::int64_t i, std::int64_t dst, std::int64_t src) {
    auto s = static_cast<std::int64_t>((static_cast<double>(i) + 0.5) * static_cast<double>(src) /
                                       static_cast<double>(dst));
    return std::clamp<std::int64_t>(s, 0, src - 1);
}

}  // namespace detail

/// One crop/scale/center pass. See normalize_frame for the public contract.
inline std::optional<Silhouette> normalize_core(const Silhouette& bin) {
    const std::int64_t h = bin.dim(0), w = bin.dim(1);

    std::int64_t rmin = -1, rmax = -1;
    for (std::int64_t r = 0; r < h; ++r) {
        for (std::int64_t c = 0; c < w; ++c) {
            if (bin.at({r, c})) {
                if (rmin < 0) rmin = r;
                rmax = r;
                break;
            }
        }
    }
    if (rmin < 0) return std::nullopt;

    // Vertical crop + uniform scale so the foreground spans the full frame
    // height; width scales by the same factor to preserve aspect ratio.
    const std::int64_t hc = rmax - rmin + 1;
    const auto ws = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::nearbyint(static_cast<double>(w) * kFrameH /
                                                    static_cast<double>(hc))));
    Silhouette scaled(Shape{kFrameH, ws});
    for (std::int64_t r = 0; r < kFrameH; ++r) {
        const std::int64_t sr = rmin + detail::nn_src(r, kFrameH, hc);
        for (std::int64_t c = 0; c < ws; ++c)
            scaled.at({r, c}) = bin.at({sr, detail::nn_src(c, ws, w)});
    }

    // Horizontal centroid -> frame center, rounded to whole pixels so a
    // frame already within half a pixel of center does not move.
    double col_sum = 0.0;
    std::int64_t count = 0;
    for (std::int64_t r = 0; r < kFrameH; ++r)
        for (std::int64_t c = 0; c < ws; ++c)
            if (scaled.at({r, c})) {
                col_sum += static_cast<double>(c);
                ++count;
            }
    if (count == 0) return std::nullopt;  // foreground lost in downsampling
    const double centroid = col_sum / static_cast<double>(count);
    const auto offset = static_cast<std::int64_t>(
        std::nearbyint(static_cast<double>(kFrameW - 1) / 2.0 - centroid));

    Silhouette out = Silhouette::zeros(Shape{kFrameH, kFrameW});
    for (std::int64_t r = 0; r < kFrameH; ++r)
        for (std::int64_t c = 0; c < ws; ++c) {
            if (!scaled.at({r, c})) continue;
            const std::int64_t oc = c + offset;
            if (oc >= 0 && oc < kFrameW) out.at({r, oc}) = 1;
        }
    return out;
}

/// Normalize one frame to a binary kFrameH x kFrameW silhouette. Returns
/// nothing when the frame has no foreground pixels (caller decides whether
/// to drop or fail).
///
/// The core transform is iterated until its output stops changing, so the
/// result is an exact fixed point: normalizing an already-normalized frame
/// returns it bit-for-bit. One pass alone does not guarantee that —
/// downscaling a tall frame can drop the only foreground pixel of an
/// extreme row (output no longer spans the full height), and clipping
/// during the centering paste can shift the centroid after the offset was
/// chosen. Each repair pass sees a frame at most kFrameH tall (scaling
/// only duplicates pixels) with ever less clipped mass, so in practice the
/// loop settles within two or three passes; the cap only bounds
/// pathological inputs.
inline std::optional<Silhouette> normalize_frame(const Image& raw) {
    auto cur = normalize_core(binarize(raw));
    if (!cur) return std::nullopt;
    for (int pass = 0; pass < 6; ++pass) {
        auto next = normalize_core(*cur);
        if (!next) return std::nullopt;
        if (std::equal(next->begin(), next->end(), cur->begin())) return cur;
        cur = std::move(next);
    }
    return cur;
}

/// Load every supported image under `dir` (non-recursive), normalize each,
/// and return them in lexicographic filename order.
inline SilhouetteSequence load_sequence(const std::filesystem::path& dir, SampleMeta meta = {}) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw std::runtime_error("no frames: " + dir.string());

    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && supported_image_ext(e.path().filename().string()))
            files.push_back(e.path());
    if (files.empty()) throw std::runtime_error("no frames: " + dir.string());
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

    SilhouetteSequence seq;
    seq.meta = std::move(meta);
    for (const auto& f : files) {
        auto frame = normalize_frame(read_image(f.string()));
        if (!frame) {
            std::cerr << "warning: dropping frame with no foreground: " << f.string() << "\n";
            continue;
        }
        seq.frames.push_back(std::move(*frame));
    }
    if (seq.frames.empty()) throw std::runtime_error("empty sequence: " + dir.string());
    return seq;
}

}  // namespace gaitgs::data
