#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gaitgs/core/rng.hpp"
#include "gaitgs/core/tensor.hpp"

namespace testsupport {

using gaitgs::Rng;
using gaitgs::Shape;
using gaitgs::Tensor;

/// Uniform random tensor in [lo, hi).
inline Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(std::move(s));
    for (auto& v : t) v = rng.uniform(lo, hi);
    return t;
}

/// Uniform random tensor bounded away from zero: |v| in [margin, hi).
/// Used around ops with a kink at zero (absolute values, rectifiers) so
/// finite differences never straddle the kink.
inline Tensor<double> random_tensor_nonzero(Shape s, Rng& rng, double margin, double hi) {
    Tensor<double> t(std::move(s));
    for (auto& v : t) v = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(margin, hi);
    return t;
}

/// Tensor whose entries are a shuffled arithmetic grid: all values distinct
/// with gap 2/numel and bounded away from zero by 1/numel. Keeps max-style
/// ops away from ties so a finite-difference step cannot flip an argmax.
/// Caller keeps numel below ~400 so the gap stays above 2x the FD step.
inline Tensor<double> distinct_tensor(Shape s, Rng& rng) {
    Tensor<double> t(std::move(s));
    const std::int64_t n = t.numel();
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    for (std::int64_t i = n - 1; i > 0; --i)
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(rng.uniform_int(0, i))]);
    const double step = 2.0 / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i)
        t[i] = -1.0 + step * (static_cast<double>(order[static_cast<std::size_t>(i)]) + 0.5);
    return t;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
    double m = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Silhouette-like clip for finite-difference checks through deep stacks.
/// Values are positive, rise along height+width, and rise monotonically over
/// time. Under positive convolution weights this keeps every rectifier
/// preactivation bounded away from zero, every spatial max decisively ordered
/// by the height/width ramp, and every temporal max decisively ordered by the
/// time ramp (running maxima repeat values across neighboring frames, so
/// without a monotone trend the frame choice can sit within a probe step of a
/// tie). A +-1e-3 parameter perturbation therefore never moves a kink or
/// flips an argmax — the regime where central differences are trustworthy at
/// tight tolerances. (Both branches of the kinked ops and interior argmax
/// routing are exercised by the dedicated op-level checks.)
inline Tensor<double> structured_clip(std::int64_t b, std::int64_t c, std::int64_t t,
                                      std::int64_t h, std::int64_t w, Rng& rng) {
    Tensor<double> x({b, c, t, h, w});
    const double inc = 0.5 / static_cast<double>(h + w);
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t ci = 0; ci < c; ++ci)
            for (std::int64_t ti = 0; ti < t; ++ti) {
                // Distinct per-channel scales keep the channel spread of any
                // downstream normalization healthy; a near-constant channel
                // vector would make its variance denominator ill-conditioned
                // for finite differences.
                const double tmod = (1.0 + 0.12 * static_cast<double>(ti)) *
                                    (1.0 + 0.15 * static_cast<double>(ci) +
                                     0.03 * static_cast<double>(bi));
                for (std::int64_t hi = 0; hi < h; ++hi)
                    for (std::int64_t wi = 0; wi < w; ++wi) {
                        const double base =
                            0.2 + inc * static_cast<double>(hi + wi) + rng.uniform(0.0, 0.3 * inc);
                        x.at({bi, ci, ti, hi, wi}) = base * tmod;
                    }
            }
    return x;
}

/// Parameter fill for the same finite-difference regime: weights small and
/// positive, rectifier-feeding biases comfortably positive, attention-gate
/// kernels scaled so their logistic stays in its responsive range.
template <typename ParamStoreT>
void fill_positive_regime(ParamStoreT& ps, Rng& rng) {
    ps.for_each([&](const std::string& name, auto& t) {
        auto ends_with = [&](const char* suffix) {
            const std::string s(suffix);
            return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
        };
        auto contains = [&](const char* sub) { return name.find(sub) != std::string::npos; };
        if (ends_with(".gem.p")) {
            t.fill(3.0);
        } else if (ends_with(".g")) {  // norm gains
            for (auto& v : t) v = rng.uniform(0.9, 1.1);
        } else if (contains(".ln") && ends_with(".b")) {  // norm offsets
            for (auto& v : t) v = rng.uniform(0.0, 0.1);
        } else if (contains(".mcm.conv") && ends_with(".w")) {
            // Moderate positive attention weights keep the gate's logistic in
            // its responsive range (healthy gradient signal) while the gated
            // tokens inherit the input's monotone time trend, so the
            // max-over-time frame choice stays decisively pinned.
            for (auto& v : t) v = rng.uniform(0.02, 0.05);
        } else if (contains(".mcm.conv") && ends_with(".b")) {
            for (auto& v : t) v = rng.uniform(0.1, 0.2);
        } else if (contains(".ff1") && ends_with(".b")) {
            for (auto& v : t) v = rng.uniform(1.0, 1.5);
        } else if (contains(".ff1") && ends_with(".w")) {
            // Layer norm recenters its input, so roughly half the normalized
            // entries are negative with magnitude up to sqrt(C-1). Keep the
            // feed-forward weights small enough that |w . x| stays below the
            // bias floor above and every rectifier preactivation is positive.
            for (auto& v : t) v = rng.uniform(0.002, 0.01);
        } else if (contains(".pieg.") && ends_with(".w")) {
            // Scale classifier rows by distinct factors so logit gaps are
            // O(1) and the hard class prediction cannot flip under the
            // finite-difference probes.
            const std::int64_t cols = t.dim(static_cast<int>(t.shape().size()) - 1);
            for (std::int64_t i = 0; i < t.numel(); ++i)
                t[i] = rng.uniform(0.02, 0.08) * (1.0 + 0.5 * static_cast<double>(i / cols));
        } else if (contains(".pe.") && ends_with(".w")) {
            for (auto& v : t) v = rng.uniform(0.0, 0.02);
        } else if (ends_with(".cls")) {
            for (auto& v : t) v = rng.uniform(0.1, 0.3);
        } else if (contains(".table.")) {
            for (auto& v : t) v = rng.uniform(0.05, 0.15);
        } else if (ends_with(".w")) {
            for (auto& v : t) v = rng.uniform(0.02, 0.08);
        } else if (ends_with(".b")) {
            for (auto& v : t) v = rng.uniform(0.2, 0.4);
        } else {
            for (auto& v : t) v = rng.uniform(0.05, 0.15);
        }
    });
}

}  // namespace testsupport
