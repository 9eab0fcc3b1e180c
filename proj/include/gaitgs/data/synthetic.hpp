#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gaitgs/core/rng.hpp"
#include "gaitgs/data/image_io.hpp"
#include "gaitgs/data/manifest.hpp"
#include "gaitgs/data/silhouette.hpp"

// Procedural gait data: a 2-D articulated walker (torso + head ellipses, two
// swinging legs, two counter-swinging arms half a period out of phase)
// rasterized to binary frames. Identity lives in body proportions AND in
// dynamics (gait period, stride amplitude), so both spatial and temporal
// model components have signal to pick up. Camera view is a horizontal
// shear + width scaling of the rendered silhouette; condition modifiers are
// a 2 px outline dilation ("cl") or an elliptical blob at hip height ("bg");
// per-pixel flip noise is applied last.

namespace gaitgs::data {

/// Raw render canvas; frames are normalized to kFrameH x kFrameW at load.
inline constexpr std::int64_t kCanvasH = 72;
inline constexpr std::int64_t kCanvasW = 56;
inline constexpr double kGroundY = 66.0;
inline constexpr double kCanvasCx = (kCanvasW - 1) / 2.0;

/// Limb sizes in canvas pixels. Proportions (not absolute height, which
/// normalization removes) carry the identity signal.
struct WalkerGeometry {
    double height;     ///< head top to ground
    double leg_len;    ///< hip to foot
    double torso_len;  ///< hip to shoulder line
    double head_r;     ///< head radius
    double torso_w;    ///< torso ellipse semi-axis (width)
    double leg_thick;  ///< leg capsule diameter
    double arm_thick;  ///< arm capsule diameter
    double arm_len;    ///< shoulder to hand

    std::vector<double> as_vector() const {
        return {height, leg_len, torso_len, head_r, torso_w, leg_thick, arm_thick, arm_len};
    }
};

struct SyntheticGaitParams {
    std::uint64_t subject_seed = 0;
    double period = 20.0;  ///< frames per gait cycle
    WalkerGeometry geometry{};
    double stride_amplitude = 0.45;  ///< leg swing half-angle, radians
    double view_deg = 90.0;          ///< 0 = frontal, 90 = side, 180 = rear
    std::string condition = "nm";    ///< "nm" | "cl" (dilated) | "bg" (blob)
    double noise_level = 0.0;        ///< per-pixel flip probability
    double phase0 = 0.0;             ///< initial gait phase, cycles
    std::uint64_t noise_seed = 0;
};

/// Deterministic body plan + dynamics for a subject seed. Draws are
/// independent per seed; distinct seeds give distinct geometry vectors.
inline SyntheticGaitParams subject_traits(std::uint64_t subject_seed) {
    Rng rng = Rng::seeded(subject_seed);
    SyntheticGaitParams p;
    p.subject_seed = subject_seed;
    WalkerGeometry& g = p.geometry;
    g.height = rng.uniform(46.0, 58.0);
    const double leg_frac = rng.uniform(0.46, 0.52);
    const double head_frac = rng.uniform(0.060, 0.075);
    g.leg_len = leg_frac * g.height;
    g.head_r = head_frac * g.height;
    g.torso_len = g.height - g.leg_len - 2.0 * g.head_r;
    g.torso_w = rng.uniform(0.10, 0.14) * g.height;
    g.leg_thick = rng.uniform(2.2, 3.2);
    g.arm_thick = rng.uniform(1.6, 2.4);
    g.arm_len = rng.uniform(0.34, 0.42) * g.height;
    p.period = rng.uniform(14.0, 26.0);
    p.stride_amplitude = rng.uniform(0.35, 0.55);
    return p;
}

namespace detail {

struct P2 {
    double x, y;
};

inline void fill_ellipse(Silhouette& img, P2 c, double rx, double ry) {
    const auto r0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(c.y - ry)));
    const auto r1 = std::min<std::int64_t>(img.dim(0) - 1, static_cast<std::int64_t>(std::ceil(c.y + ry)));
    const auto c0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(c.x - rx)));
    const auto c1 = std::min<std::int64_t>(img.dim(1) - 1, static_cast<std::int64_t>(std::ceil(c.x + rx)));
    for (std::int64_t r = r0; r <= r1; ++r)
        for (std::int64_t cc = c0; cc <= c1; ++cc) {
            const double dx = (static_cast<double>(cc) - c.x) / rx;
            const double dy = (static_cast<double>(r) - c.y) / ry;
            if (dx * dx + dy * dy <= 1.0) img.at({r, cc}) = 1;
        }
}

/// Thick segment: all pixels within `thick/2` of the p0-p1 line segment.
inline void fill_capsule(Silhouette& img, P2 p0, P2 p1, double thick) {
    const double rad = thick / 2.0;
    const auto r0 = std::max<std::int64_t>(
        0, static_cast<std::int64_t>(std::floor(std::min(p0.y, p1.y) - rad)));
    const auto r1 = std::min<std::int64_t>(
        img.dim(0) - 1, static_cast<std::int64_t>(std::ceil(std::max(p0.y, p1.y) + rad)));
    const auto c0 = std::max<std::int64_t>(
        0, static_cast<std::int64_t>(std::floor(std::min(p0.x, p1.x) - rad)));
    const auto c1 = std::min<std::int64_t>(
        img.dim(1) - 1, static_cast<std::int64_t>(std::ceil(std::max(p0.x, p1.x) + rad)));
    const double vx = p1.x - p0.x, vy = p1.y - p0.y;
    const double len2 = vx * vx + vy * vy;
    for (std::int64_t r = r0; r <= r1; ++r)
        for (std::int64_t cc = c0; cc <= c1; ++cc) {
            const double px = static_cast<double>(cc) - p0.x, py = static_cast<double>(r) - p0.y;
            double t = len2 > 0.0 ? (px * vx + py * vy) / len2 : 0.0;
            t = std::clamp(t, 0.0, 1.0);
            const double dx = px - t * vx, dy = py - t * vy;
            if (dx * dx + dy * dy <= rad * rad) img.at({r, cc}) = 1;
        }
}

/// Chebyshev dilation by `rad` pixels (square structuring element).
inline Silhouette dilate(const Silhouette& in, std::int64_t rad) {
    Silhouette out = Silhouette::zeros(in.shape());
    const std::int64_t h = in.dim(0), w = in.dim(1);
    for (std::int64_t r = 0; r < h; ++r)
        for (std::int64_t c = 0; c < w; ++c) {
            if (!in.at({r, c})) continue;
            const std::int64_t rl = std::max<std::int64_t>(0, r - rad);
            const std::int64_t rh = std::min<std::int64_t>(h - 1, r + rad);
            const std::int64_t cl = std::max<std::int64_t>(0, c - rad);
            const std::int64_t ch = std::min<std::int64_t>(w - 1, c + rad);
            for (std::int64_t rr = rl; rr <= rh; ++rr)
                for (std::int64_t oc = cl; oc <= ch; ++oc) out.at({rr, oc}) = 1;
        }
    return out;
}

}  // namespace detail

/// Width compression and lean for a camera azimuth: side views (90) show the
/// full body width, frontal/rear views compress it and tilt the figure.
inline double view_width_scale(double view_deg) {
    return 0.55 + 0.45 * std::sin(view_deg * M_PI / 180.0);
}
inline double view_shear(double view_deg) { return 0.15 * std::cos(view_deg * M_PI / 180.0); }

/// Render one raw canvas frame (binary, kCanvasH x kCanvasW).
inline Silhouette render_raw_frame(const SyntheticGaitParams& p, std::int64_t t) {
    using detail::P2;
    const WalkerGeometry& g = p.geometry;
    const double phi = 2.0 * M_PI * (p.phase0 + static_cast<double>(t) / p.period);
    const double hip_y = kGroundY - g.leg_len;
    const double shoulder_y = hip_y - 0.88 * g.torso_len;
    const P2 hip{kCanvasCx, hip_y};
    const P2 shoulder{kCanvasCx, shoulder_y};

    Silhouette body = Silhouette::zeros(Shape{kCanvasH, kCanvasW});
    // Legs, half a period apart; arms counter-swing their same-side leg.
    for (int side = 0; side < 2; ++side) {
        const double leg_a = p.stride_amplitude * std::sin(phi + (side ? M_PI : 0.0));
        const P2 foot{hip.x + g.leg_len * std::sin(leg_a), hip.y + g.leg_len * std::cos(leg_a)};
        detail::fill_capsule(body, hip, foot, g.leg_thick);
        const double arm_a = 0.6 * p.stride_amplitude * std::sin(phi + (side ? 0.0 : M_PI));
        const P2 hand{shoulder.x + g.arm_len * std::sin(arm_a),
                      shoulder.y + g.arm_len * std::cos(arm_a)};
        detail::fill_capsule(body, shoulder, hand, g.arm_thick);
    }
    detail::fill_ellipse(body, {kCanvasCx, hip_y - g.torso_len / 2.0}, g.torso_w,
                         g.torso_len / 2.0 + 1.0);
    detail::fill_ellipse(body, {kCanvasCx, hip_y - g.torso_len - g.head_r}, g.head_r, g.head_r);

    // Camera view: inverse-mapped horizontal shear + width scaling about the
    // hip line, so the figure stays anchored to the ground.
    const double ws = view_width_scale(p.view_deg);
    const double sh = view_shear(p.view_deg);
    Silhouette frame = Silhouette::zeros(body.shape());
    for (std::int64_t r = 0; r < kCanvasH; ++r) {
        const double row_shift = sh * (static_cast<double>(r) - hip_y);
        for (std::int64_t c = 0; c < kCanvasW; ++c) {
            const double xs = (static_cast<double>(c) - kCanvasCx - row_shift) / ws + kCanvasCx;
            const auto sc = static_cast<std::int64_t>(std::llround(xs));
            if (sc >= 0 && sc < kCanvasW && body.at({r, sc})) frame.at({r, c}) = 1;
        }
    }

    if (p.condition == "cl") {
        frame = detail::dilate(frame, 2);
    } else if (p.condition == "bg") {
        // Fixed blob hanging at hip height on the +x side, sheared and
        // scaled with the view like the rest of the silhouette.
        const double bx = 0.17 * g.height, by = 0.02 * g.height;
        const P2 c{kCanvasCx + ws * bx + sh * by, hip_y + by};
        detail::fill_ellipse(frame, c, 0.10 * g.height * ws, 0.08 * g.height);
    } else if (p.condition != "nm") {
        throw std::runtime_error("unknown condition modifier: " + p.condition);
    }

    if (p.noise_level > 0.0) {
        Rng noise = Rng::seeded(p.noise_seed).child(static_cast<std::uint64_t>(t));
        for (std::int64_t i = 0; i < frame.numel(); ++i)
            if (noise.bernoulli(p.noise_level)) frame[i] ^= 1;
    }
    return frame;
}

inline std::vector<Silhouette> render_raw_sequence(const SyntheticGaitParams& p,
                                                   std::int64_t frames) {
    if (static_cast<double>(frames) < p.period)
        throw std::runtime_error("sequence shorter than one cycle: " + std::to_string(frames) +
                                 " frames vs period " + std::to_string(p.period));
    std::vector<Silhouette> out;
    out.reserve(static_cast<std::size_t>(frames));
    for (std::int64_t t = 0; t < frames; ++t) out.push_back(render_raw_frame(p, t));
    return out;
}

struct SynthOptions {
    int num_subjects = 16;
    std::vector<int> views = {0, 54, 90, 144};
    std::vector<std::string> conditions = {"nm", "cl"};
    int seqs_per_cell = 2;
    int frames_per_seq = 40;
    std::uint64_t master_seed = 7;
    double noise_level = 0.002;
};

struct SynthResult {
    DatasetManifest all;    ///< every sequence, entries tagged by split
    DatasetManifest train;  ///< disjoint-subject views under the desk protocol
    DatasetManifest test;
    std::vector<SyntheticGaitParams> params;  ///< parallel to all.entries
};

namespace detail {

inline std::string zero_pad(int v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

inline nlohmann::json params_json(const SyntheticGaitParams& p) {
    const WalkerGeometry& g = p.geometry;
    return {{"subject_seed", p.subject_seed},
            {"period", p.period},
            {"geometry",
             {{"height", g.height},
              {"leg_len", g.leg_len},
              {"torso_len", g.torso_len},
              {"head_r", g.head_r},
              {"torso_w", g.torso_w},
              {"leg_thick", g.leg_thick},
              {"arm_thick", g.arm_thick},
              {"arm_len", g.arm_len}}},
            {"stride_amplitude", p.stride_amplitude},
            {"view_deg", p.view_deg},
            {"condition", p.condition},
            {"noise_level", p.noise_level},
            {"phase0", p.phase0},
            {"noise_seed", p.noise_seed}};
}

inline SyntheticGaitParams params_from_json(const nlohmann::json& j) {
    SyntheticGaitParams p;
    p.subject_seed = j.at("subject_seed").get<std::uint64_t>();
    p.period = j.at("period").get<double>();
    const auto& g = j.at("geometry");
    p.geometry = {g.at("height").get<double>(),     g.at("leg_len").get<double>(),
                  g.at("torso_len").get<double>(),  g.at("head_r").get<double>(),
                  g.at("torso_w").get<double>(),    g.at("leg_thick").get<double>(),
                  g.at("arm_thick").get<double>(),  g.at("arm_len").get<double>()};
    p.stride_amplitude = j.at("stride_amplitude").get<double>();
    p.view_deg = j.at("view_deg").get<double>();
    p.condition = j.at("condition").get<std::string>();
    p.noise_level = j.at("noise_level").get<double>();
    p.phase0 = j.at("phase0").get<double>();
    p.noise_seed = j.at("noise_seed").get<std::uint64_t>();
    return p;
}

}  // namespace detail

/// Render a full dataset tree under `root`:
///   root/<subject>/<condition>-<idx>/<view>/<frame>.png
/// plus manifest.json (all entries, desk-protocol split tags) and
/// synthetic.json (per-sequence parameters; enough to re-render bit-exactly).
inline SynthResult generate_synthetic(const std::filesystem::path& root, const SynthOptions& opt) {
    namespace fs = std::filesystem;
    if (opt.num_subjects < 2) throw std::invalid_argument("need at least two subjects");
    if (opt.views.empty() || opt.conditions.empty() || opt.seqs_per_cell < 1)
        throw std::invalid_argument("views, conditions, and seqs_per_cell must be nonempty");
    for (const auto& c : opt.conditions)
        if (c != "nm" && c != "cl" && c != "bg")
            throw std::invalid_argument("unknown condition modifier: " + c);

    const Rng master = Rng::seeded(opt.master_seed);
    SynthResult res;
    res.all.split = "all";
    res.all.protocol_name = "desk";
    nlohmann::json desc;
    desc["master_seed"] = opt.master_seed;
    desc["frames_per_seq"] = opt.frames_per_seq;
    desc["canvas"] = {kCanvasH, kCanvasW};
    auto& seq_list = desc["sequences"] = nlohmann::json::array();

    std::uint64_t uid = 0;
    for (int si = 0; si < opt.num_subjects; ++si) {
        const std::string subject = detail::zero_pad(si + 1, 3);
        const std::uint64_t subject_seed = master.child(1000 + static_cast<std::uint64_t>(si)).next_u64();
        const SyntheticGaitParams traits = subject_traits(subject_seed);
        for (const auto& cond : opt.conditions) {
            for (int qi = 0; qi < opt.seqs_per_cell; ++qi) {
                for (int view : opt.views) {
                    SyntheticGaitParams p = traits;
                    p.view_deg = static_cast<double>(view);
                    p.condition = cond;
                    p.noise_level = opt.noise_level;
                    Rng seq_rng = master.child(0x5E900000ULL + uid);
                    p.phase0 = seq_rng.uniform();
                    p.noise_seed = seq_rng.next_u64();
                    ++uid;

                    const std::string rel = subject + "/" + cond + "-" +
                                            detail::zero_pad(qi + 1, 2) + "/" +
                                            detail::zero_pad(view, 3);
                    const fs::path dir = root / rel;
                    fs::create_directories(dir);
                    const auto frames = render_raw_sequence(p, opt.frames_per_seq);
                    for (std::size_t t = 0; t < frames.size(); ++t) {
                        Image img(frames[t].shape());
                        for (std::int64_t i = 0; i < img.numel(); ++i)
                            img[i] = frames[t][i] ? 255 : 0;
                        write_png((dir / (detail::zero_pad(static_cast<int>(t), 3) + ".png")).string(),
                                  img);
                    }

                    ManifestEntry e;
                    e.path = rel;
                    e.meta.subject_id = subject;
                    e.meta.condition = cond;
                    e.meta.view = detail::zero_pad(view, 3);
                    e.meta.sequence_index = qi;
                    res.all.entries.push_back(e);
                    res.params.push_back(p);
                    auto pj = detail::params_json(p);
                    pj["path"] = rel;
                    seq_list.push_back(std::move(pj));
                }
            }
        }
    }

    res.all.reindex();
    res.all.validate();
    auto [train, test] = split_protocol(res.all, "desk");
    // Keep the split tags on the full manifest too.
    for (auto& e : res.all.entries) {
        const bool in_test = std::any_of(test.entries.begin(), test.entries.end(),
                                         [&](const ManifestEntry& t) {
                                             return same_sample(t.meta, e.meta);
                                         });
        e.split = in_test ? "test" : "train";
    }
    res.train = std::move(train);
    res.test = std::move(test);

    save_manifest((root / "manifest.json").string(), res.all);
    std::ofstream f(root / "synthetic.json", std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open synthetic descriptor for writing");
    f << desc.dump(1) << "\n";
    return res;
}

/// Parse synthetic.json back into renderable per-sequence parameters.
inline std::vector<std::pair<std::string, SyntheticGaitParams>> load_synthetic_descriptor(
    const std::filesystem::path& path, int* frames_per_seq = nullptr) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    nlohmann::json desc;
    f >> desc;
    if (frames_per_seq) *frames_per_seq = desc.at("frames_per_seq").get<int>();
    std::vector<std::pair<std::string, SyntheticGaitParams>> out;
    for (const auto& j : desc.at("sequences"))
        out.emplace_back(j.at("path").get<std::string>(), detail::params_from_json(j));
    return out;
}

}  // namespace gaitgs::data
