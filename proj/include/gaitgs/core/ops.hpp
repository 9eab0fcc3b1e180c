#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gaitgs/core/autodiff.hpp"
#include "gaitgs/core/gemm.hpp"
#include "gaitgs/core/tensor.hpp"

// Differentiable building blocks. Each op records its backward pass on the
// tape; shapes are the concrete layouts used by the model (documented per op).

namespace gaitgs::ops {

using gaitgs::ad::Node;
using gaitgs::ad::Tape;

namespace detail {

template <typename T>
void accumulate(Node<T>* parent, const Tensor<T>& contribution) {
    if (!parent->needs_grad) return;
    Tensor<T>& g = parent->ensure_grad();
    const T* src = contribution.data();
    T* dst = g.data();
    for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Node<T>* add(Tape<T>& tape, Node<T>* a, Node<T>* b) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument("ops::add shape mismatch " + shape_str(a->value.shape()) +
                                    " vs " + shape_str(b->value.shape()));
    Tensor<T> out = a->value;
    const T* bv = b->value.data();
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return tape.record(std::move(out), {a, b}, [a, b](Node<T>& self) {
        detail::accumulate(a, self.grad);
        detail::accumulate(b, self.grad);
    });
}

template <typename T>
Node<T>* mul(Tape<T>& tape, Node<T>* a, Node<T>* b) {
    if (!a->value.same_shape(b->value)) throw std::invalid_argument("ops::mul shape mismatch");
    Tensor<T> out = a->value;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
    return tape.record(std::move(out), {a, b}, [a, b](Node<T>& self) {
        if (a->needs_grad) {
            Tensor<T>& ga = a->ensure_grad();
            for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i] * b->value[i];
        }
        if (b->needs_grad) {
            Tensor<T>& gb = b->ensure_grad();
            for (std::int64_t i = 0; i < gb.numel(); ++i) gb[i] += self.grad[i] * a->value[i];
        }
    });
}

template <typename T>
Node<T>* scale(Tape<T>& tape, Node<T>* a, T factor) {
    Tensor<T> out = a->value;
    for (auto& v : out) v *= factor;
    return tape.record(std::move(out), {a}, [a, factor](Node<T>& self) {
        if (!a->needs_grad) return;
        Tensor<T>& ga = a->ensure_grad();
        for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += factor * self.grad[i];
    });
}

template <typename T>
Node<T>* leaky_relu(Tape<T>& tape, Node<T>* a, T slope) {
    Tensor<T> out = a->value;
    for (auto& v : out)
        if (v < T(0)) v *= slope;
    return tape.record(std::move(out), {a}, [a, slope](Node<T>& self) {
        if (!a->needs_grad) return;
        Tensor<T>& ga = a->ensure_grad();
        for (std::int64_t i = 0; i < ga.numel(); ++i)
            ga[i] += self.grad[i] * (a->value[i] < T(0) ? slope : T(1));
    });
}

template <typename T>
Node<T>* logistic(Tape<T>& tape, Node<T>* a) {
    Tensor<T> out = a->value;
    for (auto& v : out) v = T(1) / (T(1) + std::exp(-v));
    return tape.record(std::move(out), {a}, [a](Node<T>& self) {
        if (!a->needs_grad) return;
        Tensor<T>& ga = a->ensure_grad();
        for (std::int64_t i = 0; i < ga.numel(); ++i) {
            T s = self.value[i];
            ga[i] += self.grad[i] * s * (T(1) - s);
        }
    });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename T>
Node<T>* reshape(Tape<T>& tape, Node<T>* a, Shape shape) {
    Tensor<T> out = a->value.reshaped(std::move(shape));
    return tape.record(std::move(out), {a}, [a](Node<T>& self) {
        if (!a->needs_grad) return;
        Tensor<T>& ga = a->ensure_grad();
        for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i];
    });
}

namespace detail {

inline std::vector<std::int64_t> row_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

// out[idx] = in[perm applied]; fills `map` with flat source index per output slot
inline void permute_index_map(const Shape& in_shape, const std::vector<int>& perm,
                              std::vector<std::int64_t>& map, Shape& out_shape) {
    const std::size_t r = in_shape.size();
    out_shape.resize(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[perm[i]];
    auto in_st = row_strides(in_shape);
    std::int64_t n = shape_numel(in_shape);
    map.resize(static_cast<std::size_t>(n));
    std::vector<std::int64_t> idx(r, 0);
    for (std::int64_t flat = 0; flat < n; ++flat) {
        std::int64_t src = 0;
        for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_st[perm[i]];
        map[static_cast<std::size_t>(flat)] = src;
        for (int i = static_cast<int>(r) - 1; i >= 0; --i) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
}

}  // namespace detail

template <typename T>
Node<T>* permute(Tape<T>& tape, Node<T>* a, std::vector<int> perm) {
    std::vector<std::int64_t> map;
    Shape out_shape;
    detail::permute_index_map(a->value.shape(), perm, map, out_shape);
    Tensor<T> out(out_shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a->value[map[static_cast<std::size_t>(i)]];
    return tape.record(std::move(out), {a}, [a, map = std::move(map)](Node<T>& self) {
        if (!a->needs_grad) return;
        Tensor<T>& ga = a->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.numel(); ++i)
            ga[map[static_cast<std::size_t>(i)]] += self.grad[i];
    });
}

template <typename T>
Node<T>* concat(Tape<T>& tape, std::vector<Node<T>*> parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("ops::concat: no inputs");
    Shape out_shape = parts[0]->value.shape();
    std::int64_t total = 0;
    for (auto* p : parts) {
        const Shape& s = p->value.shape();
        for (std::size_t i = 0; i < s.size(); ++i)
            if (static_cast<int>(i) != axis && s[i] != out_shape[i])
                throw std::invalid_argument("ops::concat shape mismatch");
        total += s[axis];
    }
    out_shape[axis] = total;
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= out_shape[i];
    for (std::size_t i = axis + 1; i < out_shape.size(); ++i) inner *= out_shape[i];

    Tensor<T> out(out_shape);
    std::vector<std::int64_t> offsets;  // element offset of each part within a row block
    std::int64_t pos = 0;
    for (auto* p : parts) {
        offsets.push_back(pos);
        std::int64_t pa = p->value.dim(axis);
        for (std::int64_t o = 0; o < outer; ++o) {
            const T* src = p->value.data() + o * pa * inner;
            T* dst = out.data() + o * total * inner + pos * inner;
            std::copy(src, src + pa * inner, dst);
        }
        pos += pa;
    }
    return tape.record(std::move(out), parts,
                       [parts, offsets, outer, inner, total](Node<T>& self) {
                           for (std::size_t k = 0; k < parts.size(); ++k) {
                               Node<T>* p = parts[k];
                               if (!p->needs_grad) continue;
                               Tensor<T>& gp = p->ensure_grad();
                               std::int64_t len = gp.numel() / (outer * inner);
                               for (std::int64_t o = 0; o < outer; ++o) {
                                   const T* src = self.grad.data() + o * total * inner + offsets[k] * inner;
                                   T* dst = gp.data() + o * len * inner;
                                   for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                               }
                           }
                       });
}

template <typename T>
Node<T>* slice(Tape<T>& tape, Node<T>* a, int axis, std::int64_t start, std::int64_t len) {
    const Shape& s = a->value.shape();
    if (start < 0 || start + len > s[axis]) throw std::out_of_range("ops::slice out of range");
    Shape out_shape = s;
    out_shape[axis] = len;
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    std::int64_t full = s[axis];

    Tensor<T> out(out_shape);
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy(a->value.data() + (o * full + start) * inner,
                  a->value.data() + (o * full + start + len) * inner, out.data() + o * len * inner);
    return tape.record(std::move(out), {a}, [a, outer, inner, full, start, len](Node<T>& self) {
        if (!a->needs_grad) return;
        Tensor<T>& ga = a->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o) {
            const T* src = self.grad.data() + o * len * inner;
            T* dst = ga.data() + (o * full + start) * inner;
            for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// y[..., n] = sum_k x[..., k] * w[n, k] + b[n]. Leading dims are folded.
template <typename T>
Node<T>* linear(Tape<T>& tape, Node<T>* x, Node<T>* w, Node<T>* b) {
    const Shape& xs = x->value.shape();
    std::int64_t k = xs.back();
    std::int64_t n = w->value.dim(0);
    if (w->value.dim(1) != k) throw std::invalid_argument("ops::linear weight shape mismatch");
    std::int64_t m = x->value.numel() / k;
    Shape out_shape = xs;
    out_shape.back() = n;

    Tensor<T> out(out_shape);
    as_matrix(out, m, n).noalias() = as_matrix(x->value, m, k) * as_matrix(w->value, n, k).transpose();
    if (b) {
        T* od = out.data();
        const T* bd = b->value.data();
        for (std::int64_t r = 0; r < m; ++r)
            for (std::int64_t c = 0; c < n; ++c) od[r * n + c] += bd[c];
    }
    std::vector<Node<T>*> parents{x, w};
    if (b) parents.push_back(b);
    return tape.record(std::move(out), parents, [x, w, b, m, n, k](Node<T>& self) {
        ConstMatMap<T> gy(self.grad.data(), m, n);
        if (x->needs_grad)
            as_matrix(x->ensure_grad(), m, k).noalias() += gy * as_matrix(w->value, n, k);
        if (w->needs_grad)
            as_matrix(w->ensure_grad(), n, k).noalias() += gy.transpose() * as_matrix(x->value, m, k);
        if (b && b->needs_grad) {
            Tensor<T>& gb = b->ensure_grad();
            for (std::int64_t r = 0; r < m; ++r)
                for (std::int64_t c = 0; c < n; ++c) gb[c] += self.grad[r * n + c];
        }
    });
}

/// Batched matmul: a [s, m, k] x b [s, k, n] -> [s, m, n].
/// With transpose_b, b is [s, n, k] and the product is a . b^T.
template <typename T>
Node<T>* bmm(Tape<T>& tape, Node<T>* a, Node<T>* b, bool transpose_b = false) {
    std::int64_t s = a->value.dim(0), m = a->value.dim(1), k = a->value.dim(2);
    std::int64_t n = transpose_b ? b->value.dim(1) : b->value.dim(2);
    std::int64_t bk = transpose_b ? b->value.dim(2) : b->value.dim(1);
    if (b->value.dim(0) != s || bk != k) throw std::invalid_argument("ops::bmm shape mismatch");

    Tensor<T> out(Shape{s, m, n});
    for (std::int64_t i = 0; i < s; ++i) {
        ConstMatMap<T> A(a->value.data() + i * m * k, m, k);
        MatMap<T> Y(out.data() + i * m * n, m, n);
        if (transpose_b) {
            ConstMatMap<T> B(b->value.data() + i * n * k, n, k);
            Y.noalias() = A * B.transpose();
        } else {
            ConstMatMap<T> B(b->value.data() + i * k * n, k, n);
            Y.noalias() = A * B;
        }
    }
    return tape.record(std::move(out), {a, b}, [a, b, s, m, n, k, transpose_b](Node<T>& self) {
        for (std::int64_t i = 0; i < s; ++i) {
            ConstMatMap<T> GY(self.grad.data() + i * m * n, m, n);
            ConstMatMap<T> A(a->value.data() + i * m * k, m, k);
            if (transpose_b) {
                ConstMatMap<T> B(b->value.data() + i * n * k, n, k);
                if (a->needs_grad)
                    MatMap<T>(a->ensure_grad().data() + i * m * k, m, k).noalias() += GY * B;
                if (b->needs_grad)
                    MatMap<T>(b->ensure_grad().data() + i * n * k, n, k).noalias() +=
                        GY.transpose() * A;
            } else {
                ConstMatMap<T> B(b->value.data() + i * k * n, k, n);
                if (a->needs_grad)
                    MatMap<T>(a->ensure_grad().data() + i * m * k, m, k).noalias() +=
                        GY * B.transpose();
                if (b->needs_grad)
                    MatMap<T>(b->ensure_grad().data() + i * k * n, k, n).noalias() +=
                        A.transpose() * GY;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Normalization and attention pieces
// ---------------------------------------------------------------------------

template <typename T>
Node<T>* softmax_lastdim(Tape<T>& tape, Node<T>* x) {
    std::int64_t c = x->value.shape().back();
    std::int64_t rows = x->value.numel() / c;
    Tensor<T> out = x->value;
    for (std::int64_t r = 0; r < rows; ++r) {
        T* row = out.data() + r * c;
        T mx = row[0];
        for (std::int64_t i = 1; i < c; ++i) mx = std::max(mx, row[i]);
        T sum = T(0);
        for (std::int64_t i = 0; i < c; ++i) {
            row[i] = std::exp(row[i] - mx);
            sum += row[i];
        }
        for (std::int64_t i = 0; i < c; ++i) row[i] /= sum;
    }
    return tape.record(std::move(out), {x}, [x, rows, c](Node<T>& self) {
        if (!x->needs_grad) return;
        Tensor<T>& gx = x->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* y = self.value.data() + r * c;
            const T* gy = self.grad.data() + r * c;
            T dot = T(0);
            for (std::int64_t i = 0; i < c; ++i) dot += gy[i] * y[i];
            for (std::int64_t i = 0; i < c; ++i) gx[r * c + i] += y[i] * (gy[i] - dot);
        }
    });
}

template <typename T>
Node<T>* layer_norm_lastdim(Tape<T>& tape, Node<T>* x, Node<T>* gamma, Node<T>* beta, T eps) {
    std::int64_t c = x->value.shape().back();
    std::int64_t rows = x->value.numel() / c;
    Tensor<T> out(x->value.shape());
    Tensor<T> inv_std(Shape{rows});
    Tensor<T> mean(Shape{rows});
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* row = x->value.data() + r * c;
        T mu = T(0);
        for (std::int64_t i = 0; i < c; ++i) mu += row[i];
        mu /= T(c);
        T var = T(0);
        for (std::int64_t i = 0; i < c; ++i) var += (row[i] - mu) * (row[i] - mu);
        var /= T(c);
        T is = T(1) / std::sqrt(var + eps);
        mean[r] = mu;
        inv_std[r] = is;
        for (std::int64_t i = 0; i < c; ++i)
            out[r * c + i] = (row[i] - mu) * is * gamma->value[i] + beta->value[i];
    }
    return tape.record(std::move(out), {x, gamma, beta},
                       [x, gamma, beta, rows, c, mean = std::move(mean),
                        inv_std = std::move(inv_std)](Node<T>& self) {
                           for (std::int64_t r = 0; r < rows; ++r) {
                               const T* xr = x->value.data() + r * c;
                               const T* gy = self.grad.data() + r * c;
                               T mu = mean[r], is = inv_std[r];
                               if (gamma->needs_grad || beta->needs_grad) {
                                   Tensor<T>& gg = gamma->ensure_grad();
                                   Tensor<T>& gb = beta->ensure_grad();
                                   for (std::int64_t i = 0; i < c; ++i) {
                                       gg[i] += gy[i] * (xr[i] - mu) * is;
                                       gb[i] += gy[i];
                                   }
                               }
                               if (x->needs_grad) {
                                   // dL/dx through xhat = (x - mu) * inv_std
                                   T sum_g = T(0), sum_gx = T(0);
                                   for (std::int64_t i = 0; i < c; ++i) {
                                       T gh = gy[i] * gamma->value[i];
                                       sum_g += gh;
                                       sum_gx += gh * (xr[i] - mu) * is;
                                   }
                                   Tensor<T>& gx = x->ensure_grad();
                                   for (std::int64_t i = 0; i < c; ++i) {
                                       T gh = gy[i] * gamma->value[i];
                                       T xh = (xr[i] - mu) * is;
                                       gx[r * c + i] +=
                                           is * (gh - sum_g / T(c) - xh * sum_gx / T(c));
                                   }
                               }
                           }
                       });
}

// ---------------------------------------------------------------------------
// Token-stream helpers (shapes [batch, parts, time, channels])
// ---------------------------------------------------------------------------

/// Appends one learnable token at the end of the time axis.
template <typename T>
Node<T>* append_token(Tape<T>& tape, Node<T>* x, Node<T>* token) {
    std::int64_t b = x->value.dim(0), p = x->value.dim(1), t = x->value.dim(2), c = x->value.dim(3);
    if (token->value.numel() != c) throw std::invalid_argument("ops::append_token dim mismatch");
    Tensor<T> out(Shape{b, p, t + 1, c});
    for (std::int64_t i = 0; i < b * p; ++i) {
        std::copy(x->value.data() + i * t * c, x->value.data() + (i + 1) * t * c,
                  out.data() + i * (t + 1) * c);
        std::copy(token->value.data(), token->value.data() + c, out.data() + (i * (t + 1) + t) * c);
    }
    return tape.record(std::move(out), {x, token}, [x, token, b, p, t, c](Node<T>& self) {
        if (x->needs_grad) {
            Tensor<T>& gx = x->ensure_grad();
            for (std::int64_t i = 0; i < b * p; ++i) {
                const T* src = self.grad.data() + i * (t + 1) * c;
                T* dst = gx.data() + i * t * c;
                for (std::int64_t j = 0; j < t * c; ++j) dst[j] += src[j];
            }
        }
        if (token->needs_grad) {
            Tensor<T>& gt = token->ensure_grad();
            for (std::int64_t i = 0; i < b * p; ++i) {
                const T* src = self.grad.data() + (i * (t + 1) + t) * c;
                for (std::int64_t j = 0; j < c; ++j) gt[j] += src[j];
            }
        }
    });
}

/// x [b, p, t, c] + e [b, c] broadcast over parts and time.
template <typename T>
Node<T>* add_vector_bpc(Tape<T>& tape, Node<T>* x, Node<T>* e) {
    std::int64_t b = x->value.dim(0), p = x->value.dim(1), t = x->value.dim(2), c = x->value.dim(3);
    if (e->value.dim(0) != b || e->value.dim(1) != c)
        throw std::invalid_argument("ops::add_vector_bpc shape mismatch");
    Tensor<T> out = x->value;
    for (std::int64_t bi = 0; bi < b; ++bi)
        for (std::int64_t i = 0; i < p * t; ++i)
            for (std::int64_t ci = 0; ci < c; ++ci)
                out[(bi * p * t + i) * c + ci] += e->value[bi * c + ci];
    return tape.record(std::move(out), {x, e}, [x, e, b, p, t, c](Node<T>& self) {
        detail::accumulate(x, self.grad);
        if (e->needs_grad) {
            Tensor<T>& ge = e->ensure_grad();
            for (std::int64_t bi = 0; bi < b; ++bi)
                for (std::int64_t i = 0; i < p * t; ++i)
                    for (std::int64_t ci = 0; ci < c; ++ci)
                        ge[bi * c + ci] += self.grad[(bi * p * t + i) * c + ci];
        }
    });
}

/// Elementwise max over the time axis: [b, p, t, c] -> [b, p, c].
template <typename T>
Node<T>* max_over_time(Tape<T>& tape, Node<T>* x) {
    std::int64_t b = x->value.dim(0), p = x->value.dim(1), t = x->value.dim(2), c = x->value.dim(3);
    Tensor<T> out(Shape{b, p, c});
    std::vector<std::int32_t> arg(static_cast<std::size_t>(b * p * c));
    for (std::int64_t i = 0; i < b * p; ++i) {
        const T* base = x->value.data() + i * t * c;
        for (std::int64_t ci = 0; ci < c; ++ci) {
            T best = base[ci];
            std::int32_t bt = 0;
            for (std::int64_t ti = 1; ti < t; ++ti) {
                T v = base[ti * c + ci];
                if (v > best) {
                    best = v;
                    bt = static_cast<std::int32_t>(ti);
                }
            }
            out[i * c + ci] = best;
            arg[static_cast<std::size_t>(i * c + ci)] = bt;
        }
    }
    return tape.record(std::move(out), {x}, [x, arg = std::move(arg), t, c, bp = b * p](Node<T>& self) {
        if (!x->needs_grad) return;
        Tensor<T>& gx = x->ensure_grad();
        for (std::int64_t i = 0; i < bp; ++i)
            for (std::int64_t ci = 0; ci < c; ++ci)
                gx[(i * t + arg[static_cast<std::size_t>(i * c + ci)]) * c + ci] +=
                    self.grad[i * c + ci];
    });
}

// ---------------------------------------------------------------------------
// Classification heads
// ---------------------------------------------------------------------------

/// rows of `table` [m, c] selected by fixed indices -> [b, c].
template <typename T>
Node<T>* embedding_select(Tape<T>& tape, Node<T>* table, std::vector<std::int64_t> idx) {
    std::int64_t m = table->value.dim(0), c = table->value.dim(1);
    std::int64_t b = static_cast<std::int64_t>(idx.size());
    Tensor<T> out(Shape{b, c});
    for (std::int64_t i = 0; i < b; ++i) {
        if (idx[static_cast<std::size_t>(i)] < 0 || idx[static_cast<std::size_t>(i)] >= m)
            throw std::out_of_range("ops::embedding_select index out of range");
        std::copy(table->value.data() + idx[static_cast<std::size_t>(i)] * c,
                  table->value.data() + (idx[static_cast<std::size_t>(i)] + 1) * c,
                  out.data() + i * c);
    }
    return tape.record(std::move(out), {table}, [table, idx = std::move(idx), c](Node<T>& self) {
        if (!table->needs_grad) return;
        Tensor<T>& gt = table->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::int64_t j = 0; j < c; ++j)
                gt[idx[i] * c + j] += self.grad[static_cast<std::int64_t>(i) * c + j];
    });
}

/// Mean softmax cross-entropy over the batch; logits [b, m].
template <typename T>
Node<T>* cross_entropy_mean(Tape<T>& tape, Node<T>* logits, const std::vector<std::int64_t>& labels) {
    std::int64_t b = logits->value.dim(0), m = logits->value.dim(1);
    if (static_cast<std::int64_t>(labels.size()) != b)
        throw std::invalid_argument("ops::cross_entropy_mean label count mismatch");
    T loss = T(0);
    Tensor<T> probs(Shape{b, m});
    for (std::int64_t i = 0; i < b; ++i) {
        const T* row = logits->value.data() + i * m;
        T mx = row[0];
        for (std::int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (std::int64_t j = 0; j < m; ++j) {
            probs[i * m + j] = std::exp(row[j] - mx);
            sum += probs[i * m + j];
        }
        for (std::int64_t j = 0; j < m; ++j) probs[i * m + j] /= sum;
        loss += (mx + std::log(sum)) - row[labels[static_cast<std::size_t>(i)]];
    }
    loss /= T(b);
    return tape.record(Tensor<T>::scalar(loss), {logits},
                       [logits, labels, probs = std::move(probs), b, m](Node<T>& self) {
                           if (!logits->needs_grad) return;
                           T g = self.grad[0] / T(b);
                           Tensor<T>& gl = logits->ensure_grad();
                           for (std::int64_t i = 0; i < b; ++i)
                               for (std::int64_t j = 0; j < m; ++j) {
                                   T onehot = (labels[static_cast<std::size_t>(i)] == j) ? T(1) : T(0);
                                   gl[i * m + j] += g * (probs[i * m + j] - onehot);
                               }
                       });
}

/// Per-part fully connected bank: x [b, p, c], w [p, out, c], bias [p, out].
template <typename T>
Node<T>* separate_fc(Tape<T>& tape, Node<T>* x, Node<T>* w, Node<T>* bias) {
    std::int64_t b = x->value.dim(0), p = x->value.dim(1), c = x->value.dim(2);
    std::int64_t out_c = w->value.dim(1);
    if (w->value.dim(0) != p || w->value.dim(2) != c)
        throw std::invalid_argument("ops::separate_fc weight shape mismatch");
    Tensor<T> out(Shape{b, p, out_c});
    for (std::int64_t pi = 0; pi < p; ++pi) {
        ConstMatMap<T> W(w->value.data() + pi * out_c * c, out_c, c);
        for (std::int64_t bi = 0; bi < b; ++bi) {
            ConstMatMap<T> X(x->value.data() + (bi * p + pi) * c, 1, c);
            MatMap<T> Y(out.data() + (bi * p + pi) * out_c, 1, out_c);
            Y.noalias() = X * W.transpose();
            if (bias)
                for (std::int64_t j = 0; j < out_c; ++j) Y(0, j) += bias->value[pi * out_c + j];
        }
    }
    std::vector<Node<T>*> parents{x, w};
    if (bias) parents.push_back(bias);
    return tape.record(std::move(out), parents, [x, w, bias, b, p, c, out_c](Node<T>& self) {
        for (std::int64_t pi = 0; pi < p; ++pi) {
            ConstMatMap<T> W(w->value.data() + pi * out_c * c, out_c, c);
            for (std::int64_t bi = 0; bi < b; ++bi) {
                ConstMatMap<T> GY(self.grad.data() + (bi * p + pi) * out_c, 1, out_c);
                if (x->needs_grad) {
                    MatMap<T> GX(x->ensure_grad().data() + (bi * p + pi) * c, 1, c);
                    GX.noalias() += GY * W;
                }
                if (w->needs_grad) {
                    ConstMatMap<T> X(x->value.data() + (bi * p + pi) * c, 1, c);
                    MatMap<T> GW(w->ensure_grad().data() + pi * out_c * c, out_c, c);
                    GW.noalias() += GY.transpose() * X;
                }
                if (bias && bias->needs_grad) {
                    Tensor<T>& gb = bias->ensure_grad();
                    for (std::int64_t j = 0; j < out_c; ++j)
                        gb[pi * out_c + j] += self.grad[(bi * p + pi) * out_c + j];
                }
            }
        }
    });
}

template <typename T>
Node<T>* sum_all(Tape<T>& tape, Node<T>* x) {
    T s = T(0);
    for (auto v : x->value) s += v;
    return tape.record(Tensor<T>::scalar(s), {x}, [x](Node<T>& self) {
        if (!x->needs_grad) return;
        Tensor<T>& gx = x->ensure_grad();
        for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += self.grad[0];
    });
}

/// Fixed-weight scalar readout; handy for gradient checks.
template <typename T>
Node<T>* weighted_sum(Tape<T>& tape, Node<T>* x, Tensor<T> weights) {
    if (!x->value.same_shape(weights)) throw std::invalid_argument("ops::weighted_sum shape mismatch");
    T s = T(0);
    for (std::int64_t i = 0; i < weights.numel(); ++i) s += x->value[i] * weights[i];
    return tape.record(Tensor<T>::scalar(s), {x}, [x, weights = std::move(weights)](Node<T>& self) {
        if (!x->needs_grad) return;
        Tensor<T>& gx = x->ensure_grad();
        for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += self.grad[0] * weights[i];
    });
}

}  // namespace gaitgs::ops
