#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaitgs/core/autodiff.hpp"
#include "gaitgs/core/ops.hpp"
#include "gaitgs/core/tensor.hpp"

// Training objective: Batch-All triplet loss over part-wise descriptors plus
// cross-entropy supervision of the attribute-prior logits, combined as
// total = triplet + alpha * ce.

namespace gaitgs::train {

using gaitgs::ad::Node;
using gaitgs::ad::Tape;

/// Pairwise per-part Euclidean distances.
/// descriptors: [B, P, D] -> [B, B, P]; symmetric with zero diagonal.
template <typename T>
Node<T>* part_distances(Tape<T>& tape, Node<T>* descriptors) {
    const Shape& s = descriptors->value.shape();
    if (s.size() != 3)
        throw std::invalid_argument("part_distances expects [B,P,D] descriptors, got " +
                                    shape_str(s));
    const std::int64_t B = s[0], P = s[1], D = s[2];

    Tensor<T> out({B, B, P});
    const T* x = descriptors->value.data();
    auto vec = [&](std::int64_t b, std::int64_t p) { return x + (b * P + p) * D; };
    for (std::int64_t i = 0; i < B; ++i) {
        for (std::int64_t j = 0; j <= i; ++j) {
            for (std::int64_t p = 0; p < P; ++p) {
                T acc = T(0);
                const T *xi = vec(i, p), *xj = vec(j, p);
                for (std::int64_t d = 0; d < D; ++d) {
                    const T diff = xi[d] - xj[d];
                    acc += diff * diff;
                }
                const T dist = std::sqrt(acc);
                out.at({i, j, p}) = dist;
                out.at({j, i, p}) = dist;
            }
        }
    }

    return tape.record(std::move(out), {descriptors}, [descriptors, B, P, D](Node<T>& self) {
        if (!descriptors->needs_grad) return;
        Tensor<T>& gx = descriptors->ensure_grad();
        const T* x = descriptors->value.data();
        for (std::int64_t i = 0; i < B; ++i)
            for (std::int64_t j = 0; j < i; ++j)
                for (std::int64_t p = 0; p < P; ++p) {
                    const T dist = self.value.at({i, j, p});
                    if (dist == T(0)) continue;  // subgradient 0 at coincident points
                    const T g =
                        (self.grad.at({i, j, p}) + self.grad.at({j, i, p})) / dist;
                    const T *xi = x + (i * P + p) * D, *xj = x + (j * P + p) * D;
                    T *gi = gx.data() + (i * P + p) * D, *gj = gx.data() + (j * P + p) * D;
                    for (std::int64_t d = 0; d < D; ++d) {
                        const T v = g * (xi[d] - xj[d]);
                        gi[d] += v;
                        gj[d] -= v;
                    }
                }
    });
}

template <typename T>
struct TripletOut {
    Node<T>* loss = nullptr;        // scalar
    double active_fraction = 0.0;   // positive-hinge triplets / valid triplets
    std::int64_t valid_triplets = 0;  // label-valid (a,p,n) count, one part
};

/// Batch-All triplet loss with the nonzero-mean convention: per part, every
/// (anchor, positive, negative) with label(a) = label(p), a != p,
/// label(a) != label(n) contributes max(d(a,p) - d(a,n) + m, 0); the part
/// loss averages over the strictly positive terms only, and parts average
/// uniformly. No label-valid triplet at all yields loss 0 and a warning.
template <typename T>
TripletOut<T> triplet_loss_ba(Tape<T>& tape, Node<T>* dist,
                              const std::vector<std::int64_t>& labels, T margin) {
    const Shape& s = dist->value.shape();
    if (s.size() != 3 || s[0] != s[1])
        throw std::invalid_argument("triplet_loss_ba expects [B,B,P] distances, got " +
                                    shape_str(s));
    const std::int64_t B = s[0], P = s[2];
    if (static_cast<std::int64_t>(labels.size()) != B)
        throw std::invalid_argument("triplet_loss_ba: " + std::to_string(labels.size()) +
                                    " labels for batch " + std::to_string(B));

    // Label-valid (a, p, n) triples; identical for every part.
    std::vector<std::array<std::int64_t, 3>> triples;
    for (std::int64_t a = 0; a < B; ++a)
        for (std::int64_t p = 0; p < B; ++p) {
            if (p == a || labels[p] != labels[a]) continue;
            for (std::int64_t n = 0; n < B; ++n)
                if (labels[n] != labels[a]) triples.push_back({a, p, n});
        }

    TripletOut<T> out;
    out.valid_triplets = static_cast<std::int64_t>(triples.size());
    if (triples.empty()) {
        std::cerr << "warning: batch contains no valid triplet "
                     "(need two samples of one subject and one of another)\n";
        out.loss = tape.constant(Tensor<T>({1}, T(0)));
        return out;
    }

    // Active sets are recomputed from values on every forward pass; the
    // per-part active count enters the backward pass as a constant.
    T total = T(0);
    std::int64_t active_total = 0;
    std::vector<std::vector<std::int64_t>> active(P);  // indices into `triples`
    for (std::int64_t pp = 0; pp < P; ++pp) {
        T part_sum = T(0);
        for (std::size_t ti = 0; ti < triples.size(); ++ti) {
            const auto& tr = triples[ti];
            const T hinge = dist->value.at({tr[0], tr[1], pp}) -
                            dist->value.at({tr[0], tr[2], pp}) + margin;
            if (hinge > T(0)) {
                part_sum += hinge;
                active[pp].push_back(static_cast<std::int64_t>(ti));
            }
        }
        if (!active[pp].empty())
            total += part_sum / static_cast<T>(active[pp].size());
        active_total += static_cast<std::int64_t>(active[pp].size());
    }
    total /= static_cast<T>(P);
    out.active_fraction = static_cast<double>(active_total) /
                          static_cast<double>(out.valid_triplets * P);

    out.loss = tape.record(
        Tensor<T>({1}, total), {dist},
        [dist, triples, active = std::move(active), P](Node<T>& self) {
            if (!dist->needs_grad) return;
            Tensor<T>& gd = dist->ensure_grad();
            const T g0 = self.grad[0] / static_cast<T>(P);
            for (std::int64_t pp = 0; pp < P; ++pp) {
                if (active[pp].empty()) continue;
                const T g = g0 / static_cast<T>(active[pp].size());
                for (std::int64_t ti : active[pp]) {
                    const auto& tr = triples[static_cast<std::size_t>(ti)];
                    gd.at({tr[0], tr[1], pp}) += g;
                    gd.at({tr[0], tr[2], pp}) -= g;
                }
            }
        });
    return out;
}

/// Mean softmax cross-entropy of one prior head over the batch.
/// logits: [B, M]; labels in [0, M).
template <typename T>
Node<T>* prior_ce(Tape<T>& tape, Node<T>* logits, const std::vector<std::int64_t>& labels) {
    const Shape& s = logits->value.shape();
    if (s.size() != 2)
        throw std::invalid_argument("prior_ce expects [B,M] logits, got " + shape_str(s));
    const std::int64_t B = s[0], M = s[1];
    if (static_cast<std::int64_t>(labels.size()) != B)
        throw std::invalid_argument("prior_ce: " + std::to_string(labels.size()) +
                                    " labels for batch " + std::to_string(B));
    for (std::int64_t y : labels)
        if (y < 0 || y >= M)
            throw std::out_of_range("prior_ce: label " + std::to_string(y) +
                                    " outside [0, " + std::to_string(M) + ")");

    T total = T(0);
    for (std::int64_t b = 0; b < B; ++b) {
        const T* row = logits->value.data() + b * M;
        T mx = row[0];
        for (std::int64_t j = 1; j < M; ++j) mx = std::max(mx, row[j]);
        T lse = T(0);
        for (std::int64_t j = 0; j < M; ++j) lse += std::exp(row[j] - mx);
        total += std::log(lse) + mx - row[labels[static_cast<std::size_t>(b)]];
    }
    total /= static_cast<T>(B);

    return tape.record(Tensor<T>({1}, total), {logits}, [logits, labels, B, M](Node<T>& self) {
        if (!logits->needs_grad) return;
        Tensor<T>& gl = logits->ensure_grad();
        const T g = self.grad[0] / static_cast<T>(B);
        for (std::int64_t b = 0; b < B; ++b) {
            const T* row = logits->value.data() + b * M;
            T mx = row[0];
            for (std::int64_t j = 1; j < M; ++j) mx = std::max(mx, row[j]);
            T z = T(0);
            for (std::int64_t j = 0; j < M; ++j) z += std::exp(row[j] - mx);
            T* grow = gl.data() + b * M;
            for (std::int64_t j = 0; j < M; ++j)
                grow[j] += g * std::exp(row[j] - mx) / z;
            grow[labels[static_cast<std::size_t>(b)]] -= g;
        }
    });
}

/// One supervised prior head: logits straight from the model plus the true
/// attribute labels for the batch.
template <typename T>
struct PriorSupervision {
    Node<T>* logits = nullptr;
    std::vector<std::int64_t> labels;
};

template <typename T>
struct LossReport {
    Node<T>* total = nullptr;  // scalar node for backprop
    T total_value = T(0);
    T triplet = T(0);
    T ce = T(0);
    double active_fraction = 0.0;
    double prior_accuracy = 0.0;
};

/// Combined objective over one batch. `heads` may be empty (ablated prior
/// supervision); ce is then 0 and prior accuracy reported as 0.
template <typename T>
LossReport<T> total_loss(Tape<T>& tape, Node<T>* descriptors,
                         const std::vector<std::int64_t>& subject_labels,
                         const std::vector<PriorSupervision<T>>& heads, T margin, T alpha) {
    // A NaN distance would silently fail every hinge comparison and drop out
    // of the active set, so non-finite inputs must be rejected up front.
    if (!gaitgs::all_finite(descriptors->value)) throw std::runtime_error("loss diverged");
    auto* dist = part_distances(tape, descriptors);
    auto trip = triplet_loss_ba(tape, dist, subject_labels, margin);

    LossReport<T> report;
    report.triplet = trip.loss->value[0];
    report.active_fraction = trip.active_fraction;

    Node<T>* ce_node = nullptr;
    std::int64_t correct = 0, predictions = 0;
    for (const auto& head : heads) {
        auto* ce_h = prior_ce(tape, head.logits, head.labels);
        ce_node = ce_node == nullptr ? ce_h : ops::add(tape, ce_node, ce_h);
        const std::int64_t B = head.logits->value.dim(0), M = head.logits->value.dim(1);
        for (std::int64_t b = 0; b < B; ++b) {
            const T* row = head.logits->value.data() + b * M;
            std::int64_t best = 0;
            for (std::int64_t j = 1; j < M; ++j)
                if (row[j] > row[best]) best = j;
            correct += best == head.labels[static_cast<std::size_t>(b)] ? 1 : 0;
            ++predictions;
        }
    }
    if (predictions > 0)
        report.prior_accuracy = static_cast<double>(correct) / static_cast<double>(predictions);

    if (ce_node != nullptr) {
        report.ce = ce_node->value[0];
        report.total = ops::add(tape, trip.loss, ops::scale(tape, ce_node, alpha));
    } else {
        report.total = trip.loss;
    }
    report.total_value = report.total->value[0];
    if (!std::isfinite(static_cast<double>(report.total_value)))
        throw std::runtime_error("loss diverged");
    return report;
}

}  // namespace gaitgs::train
