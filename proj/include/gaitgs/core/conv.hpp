#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gaitgs/core/autodiff.hpp"
#include "gaitgs/core/gemm.hpp"
#include "gaitgs/core/ops.hpp"
#include "gaitgs/core/tensor.hpp"

// Convolution and pooling ops on the two activation layouts used by the
// model: video volumes [B, C, T, H, W] and part-token streams [B, P, T, C].

namespace gaitgs::ops {

using Dims3 = std::array<std::int64_t, 3>;

namespace detail {

// Column matrix for one (batch, output-time) slice of a 3-D convolution:
// rows index (c_in, dt, dh, dw) in weight order, columns index (ho, wo).
// Out-of-range taps read as zero (zero padding).
template <typename T>
void conv3d_fill_col(const Tensor<T>& x, std::int64_t b, std::int64_t to, const Shape& ks,
                     const Dims3& stride, const Dims3& pad, std::int64_t Ho, std::int64_t Wo,
                     T* col) {
    const std::int64_t Ci = x.dim(1), Ti = x.dim(2), Hi = x.dim(3), Wi = x.dim(4);
    const std::int64_t kt = ks[2], kh = ks[3], kw = ks[4];
    const std::int64_t cols = Ho * Wo;
    const T* xb = x.data() + b * Ci * Ti * Hi * Wi;
    std::int64_t r = 0;
    for (std::int64_t ci = 0; ci < Ci; ++ci)
        for (std::int64_t dt = 0; dt < kt; ++dt) {
            const std::int64_t ti = to * stride[0] - pad[0] + dt;
            const bool t_ok = ti >= 0 && ti < Ti;
            for (std::int64_t dh = 0; dh < kh; ++dh)
                for (std::int64_t dw = 0; dw < kw; ++dw, ++r) {
                    T* row = col + r * cols;
                    if (!t_ok) {
                        std::fill(row, row + cols, T(0));
                        continue;
                    }
                    const T* xt = xb + (ci * Ti + ti) * Hi * Wi;
                    for (std::int64_t ho = 0; ho < Ho; ++ho) {
                        const std::int64_t hi = ho * stride[1] - pad[1] + dh;
                        T* seg = row + ho * Wo;
                        if (hi < 0 || hi >= Hi) {
                            std::fill(seg, seg + Wo, T(0));
                            continue;
                        }
                        const T* xr = xt + hi * Wi;
                        for (std::int64_t wo = 0; wo < Wo; ++wo) {
                            const std::int64_t wi = wo * stride[2] - pad[2] + dw;
                            seg[wo] = (wi >= 0 && wi < Wi) ? xr[wi] : T(0);
                        }
                    }
                }
        }
}

// Scatter-add the column-matrix gradient back onto the input gradient —
// the exact adjoint of conv3d_fill_col.
template <typename T>
void conv3d_scatter_col(Tensor<T>& gx, std::int64_t b, std::int64_t to, const Shape& ks,
                        const Dims3& stride, const Dims3& pad, std::int64_t Ho, std::int64_t Wo,
                        const T* col) {
    const std::int64_t Ci = gx.dim(1), Ti = gx.dim(2), Hi = gx.dim(3), Wi = gx.dim(4);
    const std::int64_t kt = ks[2], kh = ks[3], kw = ks[4];
    const std::int64_t cols = Ho * Wo;
    T* gb = gx.data() + b * Ci * Ti * Hi * Wi;
    std::int64_t r = 0;
    for (std::int64_t ci = 0; ci < Ci; ++ci)
        for (std::int64_t dt = 0; dt < kt; ++dt) {
            const std::int64_t ti = to * stride[0] - pad[0] + dt;
            if (ti < 0 || ti >= Ti) {
                r += kh * kw;
                continue;
            }
            T* gt = gb + (ci * Ti + ti) * Hi * Wi;
            for (std::int64_t dh = 0; dh < kh; ++dh)
                for (std::int64_t dw = 0; dw < kw; ++dw, ++r) {
                    const T* row = col + r * cols;
                    for (std::int64_t ho = 0; ho < Ho; ++ho) {
                        const std::int64_t hi = ho * stride[1] - pad[1] + dh;
                        if (hi < 0 || hi >= Hi) continue;
                        T* gr = gt + hi * Wi;
                        const T* seg = row + ho * Wo;
                        for (std::int64_t wo = 0; wo < Wo; ++wo) {
                            const std::int64_t wi = wo * stride[2] - pad[2] + dw;
                            if (wi >= 0 && wi < Wi) gr[wi] += seg[wo];
                        }
                    }
                }
        }
}

}  // namespace detail

/// 3-D convolution. x: [B, C_in, T, H, W]; w: [C_out, C_in, kt, kh, kw];
/// bias: [C_out] or nullptr. Zero padding. Output [B, C_out, T', H', W'].
/// Implemented as im2col + GEMM per (batch, output frame) so the column
/// buffer stays small; the backward pass rebuilds each column block.
template <typename T>
Node<T>* conv3d(Tape<T>& tape, Node<T>* x, Node<T>* w, Node<T>* bias, const Dims3& stride,
                const Dims3& pad) {
    const Shape& xs = x->value.shape();
    const Shape& ws = w->value.shape();
    if (xs.size() != 5 || ws.size() != 5)
        throw std::invalid_argument("ops::conv3d expects rank-5 input and weight");
    if (xs[1] != ws[1])
        throw std::invalid_argument("ops::conv3d channel mismatch: input " + shape_str(xs) +
                                    " vs weight " + shape_str(ws));
    const std::int64_t B = xs[0], Co = ws[0];
    const std::int64_t To = (xs[2] + 2 * pad[0] - ws[2]) / stride[0] + 1;
    const std::int64_t Ho = (xs[3] + 2 * pad[1] - ws[3]) / stride[1] + 1;
    const std::int64_t Wo = (xs[4] + 2 * pad[2] - ws[4]) / stride[2] + 1;
    if (To < 1 || Ho < 1 || Wo < 1)
        throw std::invalid_argument("ops::conv3d kernel larger than padded input " + shape_str(xs));
    if (bias && bias->value.numel() != Co)
        throw std::invalid_argument("ops::conv3d bias length mismatch");

    const std::int64_t krows = ws[1] * ws[2] * ws[3] * ws[4];
    const std::int64_t cols = Ho * Wo;
    const Shape ks = ws;
    Tensor<T> out({B, Co, To, Ho, Wo});
    {
        std::vector<T> col(static_cast<std::size_t>(krows * cols));
        ConstMatMap<T> wm(w->value.data(), Co, krows);
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t to = 0; to < To; ++to) {
                detail::conv3d_fill_col(x->value, b, to, ks, stride, pad, Ho, Wo, col.data());
                ConstMatMap<T> cm(col.data(), krows, cols);
                StridedMatMap<T> om(out.data() + (b * Co * To + to) * cols, Co, cols,
                                    Eigen::OuterStride<>(To * cols));
                om.noalias() = wm * cm;
                if (bias)
                    for (std::int64_t co = 0; co < Co; ++co)
                        om.row(co).array() += bias->value[co];
            }
    }
    return tape.record(
        std::move(out), {x, w, bias},
        [x, w, bias, B, Co, To, Ho, Wo, krows, cols, ks, stride, pad](Node<T>& self) {
            if (bias && bias->needs_grad) {
                Tensor<T>& gb = bias->ensure_grad();
                const T* g = self.grad.data();
                for (std::int64_t b = 0; b < B; ++b)
                    for (std::int64_t co = 0; co < Co; ++co) {
                        T s = T(0);
                        const T* gp = g + (b * Co + co) * To * cols;
                        for (std::int64_t i = 0; i < To * cols; ++i) s += gp[i];
                        gb[co] += s;
                    }
            }
            if (!x->needs_grad && !w->needs_grad) return;
            std::vector<T> col(static_cast<std::size_t>(krows * cols));
            Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dcol;
            if (x->needs_grad) dcol.resize(krows, cols);
            ConstMatMap<T> wm(w->value.data(), Co, krows);
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t to = 0; to < To; ++to) {
                    ConstStridedMatMap<T> gm(self.grad.data() + (b * Co * To + to) * cols, Co,
                                             cols, Eigen::OuterStride<>(To * cols));
                    detail::conv3d_fill_col(x->value, b, to, ks, stride, pad, Ho, Wo, col.data());
                    ConstMatMap<T> cm(col.data(), krows, cols);
                    if (w->needs_grad) {
                        MatMap<T> gw(w->ensure_grad().data(), Co, krows);
                        gw.noalias() += gm * cm.transpose();
                    }
                    if (x->needs_grad) {
                        dcol.noalias() = wm.transpose() * gm;
                        detail::conv3d_scatter_col(x->ensure_grad(), b, to, ks, stride, pad, Ho,
                                                   Wo, dcol.data());
                    }
                }
        });
}

/// Stride-1 3-D convolution with zero "same" padding (odd kernels only).
template <typename T>
Node<T>* conv3d_same(Tape<T>& tape, Node<T>* x, Node<T>* w, Node<T>* bias) {
    const Shape& ws = w->value.shape();
    return conv3d(tape, x, w, bias, {1, 1, 1}, {ws[2] / 2, ws[3] / 2, ws[4] / 2});
}

enum class PadMode { Zero, Replicate };

/// Dense 1-D convolution over the time axis of a token stream.
/// x: [B, P, T, C_in]; w: [C_out, C_in, K]; bias: [C_out] or nullptr.
/// Stride 1, same-length output; K odd.
template <typename T>
Node<T>* conv1d_time(Tape<T>& tape, Node<T>* x, Node<T>* w, Node<T>* bias, PadMode mode) {
    const Shape& xs = x->value.shape();
    const Shape& ws = w->value.shape();
    if (xs.size() != 4 || ws.size() != 3)
        throw std::invalid_argument("ops::conv1d_time expects [B,P,T,C] input and [Co,Ci,K] weight");
    if (xs[3] != ws[1]) throw std::invalid_argument("ops::conv1d_time channel mismatch");
    if (ws[2] % 2 == 0) throw std::invalid_argument("ops::conv1d_time kernel width must be odd");
    const std::int64_t B = xs[0], P = xs[1], Tn = xs[2], Ci = xs[3];
    const std::int64_t Co = ws[0], K = ws[2], off = K / 2;

    // Source frame for tap k at output frame t, or -1 for a zero-padded tap.
    // Captures by value: the backward pass outlives this stack frame.
    auto src = [Tn, off, mode](std::int64_t t, std::int64_t k) -> std::int64_t {
        std::int64_t s = t - off + k;
        if (mode == PadMode::Replicate) return std::clamp<std::int64_t>(s, 0, Tn - 1);
        return (s >= 0 && s < Tn) ? s : -1;
    };

    Tensor<T> out({B, P, Tn, Co});
    {
        std::vector<T> col(static_cast<std::size_t>(Ci * K * Tn));
        Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> tmp(Co, Tn);
        ConstMatMap<T> wm(w->value.data(), Co, Ci * K);
        for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t p = 0; p < P; ++p) {
                const T* xp = x->value.data() + (b * P + p) * Tn * Ci;
                for (std::int64_t ci = 0; ci < Ci; ++ci)
                    for (std::int64_t k = 0; k < K; ++k) {
                        T* row = col.data() + (ci * K + k) * Tn;
                        for (std::int64_t t = 0; t < Tn; ++t) {
                            std::int64_t s = src(t, k);
                            row[t] = s < 0 ? T(0) : xp[s * Ci + ci];
                        }
                    }
                tmp.noalias() = wm * ConstMatMap<T>(col.data(), Ci * K, Tn);
                T* op = out.data() + (b * P + p) * Tn * Co;
                for (std::int64_t t = 0; t < Tn; ++t)
                    for (std::int64_t co = 0; co < Co; ++co)
                        op[t * Co + co] = tmp(co, t) + (bias ? bias->value[co] : T(0));
            }
    }
    return tape.record(
        std::move(out), {x, w, bias}, [x, w, bias, B, P, Tn, Ci, Co, K, src](Node<T>& self) {
            if (bias && bias->needs_grad) {
                Tensor<T>& gb = bias->ensure_grad();
                const T* g = self.grad.data();
                for (std::int64_t i = 0; i < B * P * Tn; ++i)
                    for (std::int64_t co = 0; co < Co; ++co) gb[co] += g[i * Co + co];
            }
            if (!x->needs_grad && !w->needs_grad) return;
            std::vector<T> col(static_cast<std::size_t>(Ci * K * Tn));
            Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gt(Co, Tn);
            Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dcol;
            if (x->needs_grad) dcol.resize(Ci * K, Tn);
            ConstMatMap<T> wm(w->value.data(), Co, Ci * K);
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t p = 0; p < P; ++p) {
                    const T* gp = self.grad.data() + (b * P + p) * Tn * Co;
                    for (std::int64_t t = 0; t < Tn; ++t)
                        for (std::int64_t co = 0; co < Co; ++co) gt(co, t) = gp[t * Co + co];
                    const T* xp = x->value.data() + (b * P + p) * Tn * Ci;
                    for (std::int64_t ci = 0; ci < Ci; ++ci)
                        for (std::int64_t k = 0; k < K; ++k) {
                            T* row = col.data() + (ci * K + k) * Tn;
                            for (std::int64_t t = 0; t < Tn; ++t) {
                                std::int64_t s = src(t, k);
                                row[t] = s < 0 ? T(0) : xp[s * Ci + ci];
                            }
                        }
                    if (w->needs_grad) {
                        MatMap<T> gw(w->ensure_grad().data(), Co, Ci * K);
                        gw.noalias() += gt * ConstMatMap<T>(col.data(), Ci * K, Tn).transpose();
                    }
                    if (x->needs_grad) {
                        dcol.noalias() = wm.transpose() * gt;
                        T* gxp = x->ensure_grad().data() + (b * P + p) * Tn * Ci;
                        for (std::int64_t ci = 0; ci < Ci; ++ci)
                            for (std::int64_t k = 0; k < K; ++k)
                                for (std::int64_t t = 0; t < Tn; ++t) {
                                    std::int64_t s = src(t, k);
                                    if (s >= 0) gxp[s * Ci + ci] += dcol(ci * K + k, t);
                                }
                    }
                }
        });
}

/// Channel-grouped 1-D convolution over time: each channel has its own
/// width-K kernel. x: [B, P, T, C]; w: [C, K]. Zero same-padding, no bias.
template <typename T>
Node<T>* grouped_conv1d_time(Tape<T>& tape, Node<T>* x, Node<T>* w) {
    const Shape& xs = x->value.shape();
    const Shape& ws = w->value.shape();
    if (xs.size() != 4 || ws.size() != 2 || xs[3] != ws[0])
        throw std::invalid_argument("ops::grouped_conv1d_time expects [B,P,T,C] and [C,K]");
    if (ws[1] % 2 == 0) throw std::invalid_argument("ops::grouped_conv1d_time kernel width must be odd");
    const std::int64_t BP = xs[0] * xs[1], Tn = xs[2], C = xs[3], K = ws[1], off = K / 2;
    Tensor<T> out(xs, T(0));
    for (std::int64_t i = 0; i < BP; ++i) {
        const T* xp = x->value.data() + i * Tn * C;
        T* op = out.data() + i * Tn * C;
        for (std::int64_t t = 0; t < Tn; ++t)
            for (std::int64_t k = 0; k < K; ++k) {
                const std::int64_t s = t - off + k;
                if (s < 0 || s >= Tn) continue;
                const T* xr = xp + s * C;
                T* orow = op + t * C;
                const T* wc = w->value.data();
                for (std::int64_t c = 0; c < C; ++c) orow[c] += wc[c * K + k] * xr[c];
            }
    }
    return tape.record(std::move(out), {x, w}, [x, w, BP, Tn, C, K, off](Node<T>& self) {
        for (std::int64_t i = 0; i < BP; ++i) {
            const T* gp = self.grad.data() + i * Tn * C;
            const T* xp = x->value.data() + i * Tn * C;
            for (std::int64_t t = 0; t < Tn; ++t)
                for (std::int64_t k = 0; k < K; ++k) {
                    const std::int64_t s = t - off + k;
                    if (s < 0 || s >= Tn) continue;
                    const T* grow = gp + t * C;
                    if (w->needs_grad) {
                        T* gw = w->ensure_grad().data();
                        const T* xr = xp + s * C;
                        for (std::int64_t c = 0; c < C; ++c) gw[c * K + k] += grow[c] * xr[c];
                    }
                    if (x->needs_grad) {
                        T* gx = x->ensure_grad().data() + i * Tn * C + s * C;
                        const T* wc = w->value.data();
                        for (std::int64_t c = 0; c < C; ++c) gx[c] += grow[c] * wc[c * K + k];
                    }
                }
        }
    });
}

/// Single width-K kernel shared by every channel. x: [B, P, T, C]; w: [K].
/// Zero same-padding, no bias.
template <typename T>
Node<T>* shared_conv1d_time(Tape<T>& tape, Node<T>* x, Node<T>* w) {
    const Shape& xs = x->value.shape();
    if (xs.size() != 4 || w->value.rank() != 1)
        throw std::invalid_argument("ops::shared_conv1d_time expects [B,P,T,C] and [K]");
    const std::int64_t K = w->value.dim(0), off = K / 2;
    if (K % 2 == 0) throw std::invalid_argument("ops::shared_conv1d_time kernel width must be odd");
    const std::int64_t BP = xs[0] * xs[1], Tn = xs[2], C = xs[3];
    Tensor<T> out(xs, T(0));
    for (std::int64_t i = 0; i < BP; ++i) {
        const T* xp = x->value.data() + i * Tn * C;
        T* op = out.data() + i * Tn * C;
        for (std::int64_t t = 0; t < Tn; ++t)
            for (std::int64_t k = 0; k < K; ++k) {
                const std::int64_t s = t - off + k;
                if (s < 0 || s >= Tn) continue;
                const T wk = w->value[k];
                const T* xr = xp + s * C;
                T* orow = op + t * C;
                for (std::int64_t c = 0; c < C; ++c) orow[c] += wk * xr[c];
            }
    }
    return tape.record(std::move(out), {x, w}, [x, w, BP, Tn, C, K, off](Node<T>& self) {
        for (std::int64_t i = 0; i < BP; ++i) {
            const T* gp = self.grad.data() + i * Tn * C;
            const T* xp = x->value.data() + i * Tn * C;
            for (std::int64_t t = 0; t < Tn; ++t)
                for (std::int64_t k = 0; k < K; ++k) {
                    const std::int64_t s = t - off + k;
                    if (s < 0 || s >= Tn) continue;
                    const T* grow = gp + t * C;
                    const T* xr = xp + s * C;
                    if (w->needs_grad) {
                        T acc = T(0);
                        for (std::int64_t c = 0; c < C; ++c) acc += grow[c] * xr[c];
                        w->ensure_grad()[k] += acc;
                    }
                    if (x->needs_grad) {
                        T* gx = x->ensure_grad().data() + i * Tn * C + s * C;
                        const T wk = w->value[k];
                        for (std::int64_t c = 0; c < C; ++c) gx[c] += grow[c] * wk;
                    }
                }
        }
    });
}

/// Sliding maximum over time with an odd window, edges clamped (replicate).
/// x: [B, P, T, C]; output the same shape. Ties break toward the earliest frame.
template <typename T>
Node<T>* window_max_time(Tape<T>& tape, Node<T>* x, std::int64_t window) {
    const Shape& xs = x->value.shape();
    if (xs.size() != 4) throw std::invalid_argument("ops::window_max_time expects [B,P,T,C]");
    if (window < 1 || window % 2 == 0)
        throw std::invalid_argument("ops::window_max_time window must be odd and positive");
    const std::int64_t BP = xs[0] * xs[1], Tn = xs[2], C = xs[3], off = window / 2;
    Tensor<T> out(xs);
    std::vector<std::int32_t> arg(static_cast<std::size_t>(out.numel()));
    for (std::int64_t i = 0; i < BP; ++i) {
        const T* xp = x->value.data() + i * Tn * C;
        T* op = out.data() + i * Tn * C;
        std::int32_t* ap = arg.data() + i * Tn * C;
        for (std::int64_t t = 0; t < Tn; ++t) {
            const std::int64_t lo = std::max<std::int64_t>(0, t - off);
            const std::int64_t hi = std::min<std::int64_t>(Tn - 1, t + off);
            for (std::int64_t c = 0; c < C; ++c) {
                T best = xp[lo * C + c];
                std::int64_t bs = lo;
                for (std::int64_t s = lo + 1; s <= hi; ++s)
                    if (xp[s * C + c] > best) {
                        best = xp[s * C + c];
                        bs = s;
                    }
                op[t * C + c] = best;
                ap[t * C + c] = static_cast<std::int32_t>(bs);
            }
        }
    }
    return tape.record(std::move(out), {x},
                       [x, BP, Tn, C, arg = std::move(arg)](Node<T>& self) {
                           if (!x->needs_grad) return;
                           Tensor<T>& gx = x->ensure_grad();
                           for (std::int64_t i = 0; i < BP; ++i) {
                               const T* gp = self.grad.data() + i * Tn * C;
                               const std::int32_t* ap = arg.data() + i * Tn * C;
                               T* gxp = gx.data() + i * Tn * C;
                               for (std::int64_t t = 0; t < Tn; ++t)
                                   for (std::int64_t c = 0; c < C; ++c)
                                       gxp[ap[t * C + c] * C + c] += gp[t * C + c];
                           }
                       });
}

/// Horizontal pooling: split the height axis into `parts` equal strips and
/// pool each strip to one token per frame and channel as max + mean.
/// x: [B, C, T, H, W] -> [B, parts, T, C].
template <typename T>
Node<T>* horizontal_pool(Tape<T>& tape, Node<T>* x, std::int64_t parts) {
    const Shape& xs = x->value.shape();
    if (xs.size() != 5) throw std::invalid_argument("ops::horizontal_pool expects [B,C,T,H,W]");
    const std::int64_t B = xs[0], C = xs[1], Tn = xs[2], H = xs[3], W = xs[4];
    if (parts < 1 || H % parts != 0)
        throw std::invalid_argument("ops::horizontal_pool height " + std::to_string(H) +
                                    " not divisible by " + std::to_string(parts) + " parts");
    const std::int64_t Hs = H / parts, strip = Hs * W;
    Tensor<T> out({B, parts, Tn, C});
    std::vector<std::int32_t> arg(static_cast<std::size_t>(out.numel()));
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t t = 0; t < Tn; ++t) {
                const T* base = x->value.data() + ((b * C + c) * Tn + t) * H * W;
                for (std::int64_t p = 0; p < parts; ++p) {
                    const T* sp = base + p * strip;
                    T best = sp[0], sum = T(0);
                    std::int32_t bi = 0;
                    for (std::int64_t i = 0; i < strip; ++i) {
                        sum += sp[i];
                        if (sp[i] > best) {
                            best = sp[i];
                            bi = static_cast<std::int32_t>(i);
                        }
                    }
                    const std::int64_t oi = ((b * parts + p) * Tn + t) * C + c;
                    out[oi] = best + sum / T(strip);
                    arg[static_cast<std::size_t>(oi)] = bi;
                }
            }
    return tape.record(
        std::move(out), {x}, [x, B, C, Tn, parts, Hs, W, arg = std::move(arg)](Node<T>& self) {
            if (!x->needs_grad) return;
            const std::int64_t strip = Hs * W;
            Tensor<T>& gx = x->ensure_grad();
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t c = 0; c < C; ++c)
                    for (std::int64_t t = 0; t < Tn; ++t) {
                        T* base = gx.data() + ((b * C + c) * Tn + t) * parts * strip;
                        for (std::int64_t p = 0; p < parts; ++p) {
                            const std::int64_t oi = ((b * parts + p) * Tn + t) * C + c;
                            const T g = self.grad[oi];
                            T* sp = base + p * strip;
                            const T gm = g / T(strip);
                            for (std::int64_t i = 0; i < strip; ++i) sp[i] += gm;
                            sp[arg[static_cast<std::size_t>(oi)]] += g;
                        }
                    }
        });
}

/// Spatial 2x2 max-pool per frame (kernel and stride 1x2x2).
/// x: [B, C, T, H, W] -> [B, C, T, H/2, W/2] (floor).
template <typename T>
Node<T>* maxpool_hw(Tape<T>& tape, Node<T>* x) {
    const Shape& xs = x->value.shape();
    if (xs.size() != 5) throw std::invalid_argument("ops::maxpool_hw expects [B,C,T,H,W]");
    const std::int64_t BCT = xs[0] * xs[1] * xs[2], H = xs[3], W = xs[4];
    const std::int64_t Ho = H / 2, Wo = W / 2;
    if (Ho < 1 || Wo < 1) throw std::invalid_argument("ops::maxpool_hw input smaller than window");
    Tensor<T> out({xs[0], xs[1], xs[2], Ho, Wo});
    std::vector<std::int32_t> arg(static_cast<std::size_t>(out.numel()));
    for (std::int64_t i = 0; i < BCT; ++i) {
        const T* xp = x->value.data() + i * H * W;
        T* op = out.data() + i * Ho * Wo;
        std::int32_t* ap = arg.data() + i * Ho * Wo;
        for (std::int64_t ho = 0; ho < Ho; ++ho)
            for (std::int64_t wo = 0; wo < Wo; ++wo) {
                T best = xp[(2 * ho) * W + 2 * wo];
                std::int32_t bi = static_cast<std::int32_t>((2 * ho) * W + 2 * wo);
                for (std::int64_t dh = 0; dh < 2; ++dh)
                    for (std::int64_t dw = 0; dw < 2; ++dw) {
                        const std::int64_t idx = (2 * ho + dh) * W + 2 * wo + dw;
                        if (xp[idx] > best) {
                            best = xp[idx];
                            bi = static_cast<std::int32_t>(idx);
                        }
                    }
                op[ho * Wo + wo] = best;
                ap[ho * Wo + wo] = bi;
            }
    }
    return tape.record(std::move(out), {x},
                       [x, BCT, H, W, Ho, Wo, arg = std::move(arg)](Node<T>& self) {
                           if (!x->needs_grad) return;
                           Tensor<T>& gx = x->ensure_grad();
                           for (std::int64_t i = 0; i < BCT; ++i) {
                               const T* gp = self.grad.data() + i * Ho * Wo;
                               const std::int32_t* ap = arg.data() + i * Ho * Wo;
                               T* gxp = gx.data() + i * H * W;
                               for (std::int64_t j = 0; j < Ho * Wo; ++j) gxp[ap[j]] += gp[j];
                           }
                       });
}

/// Element-wise maximum over the time axis of a video volume.
/// x: [B, C, T, H, W] -> [B, C, H, W]. Ties break toward the earliest frame.
template <typename T>
Node<T>* max_time_bcthw(Tape<T>& tape, Node<T>* x) {
    const Shape& xs = x->value.shape();
    if (xs.size() != 5) throw std::invalid_argument("ops::max_time_bcthw expects [B,C,T,H,W]");
    const std::int64_t BC = xs[0] * xs[1], Tn = xs[2], HW = xs[3] * xs[4];
    Tensor<T> out({xs[0], xs[1], xs[3], xs[4]});
    std::vector<std::int32_t> arg(static_cast<std::size_t>(out.numel()));
    for (std::int64_t i = 0; i < BC; ++i) {
        const T* xp = x->value.data() + i * Tn * HW;
        T* op = out.data() + i * HW;
        std::int32_t* ap = arg.data() + i * HW;
        for (std::int64_t j = 0; j < HW; ++j) {
            T best = xp[j];
            std::int32_t bt = 0;
            for (std::int64_t t = 1; t < Tn; ++t)
                if (xp[t * HW + j] > best) {
                    best = xp[t * HW + j];
                    bt = static_cast<std::int32_t>(t);
                }
            op[j] = best;
            ap[j] = bt;
        }
    }
    return tape.record(std::move(out), {x},
                       [x, BC, Tn, HW, arg = std::move(arg)](Node<T>& self) {
                           if (!x->needs_grad) return;
                           Tensor<T>& gx = x->ensure_grad();
                           for (std::int64_t i = 0; i < BC; ++i) {
                               const T* gp = self.grad.data() + i * HW;
                               const std::int32_t* ap = arg.data() + i * HW;
                               T* gxp = gx.data() + i * Tn * HW;
                               for (std::int64_t j = 0; j < HW; ++j)
                                   gxp[ap[j] * HW + j] += gp[j];
                           }
                       });
}

/// Generalized-mean pooling over the spatial axes with a learnable exponent.
/// x: [B, C, H, W]; p: scalar node -> [B, C] with y = (mean |x|^p)^(1/p).
/// Computed in the max-factored form m * (mean (|x|/m)^p)^(1/p), which is
/// algebraically identical but cannot overflow for large p.
template <typename T>
Node<T>* gem_pool(Tape<T>& tape, Node<T>* x, Node<T>* p) {
    const Shape& xs = x->value.shape();
    if (xs.size() != 4) throw std::invalid_argument("ops::gem_pool expects [B,C,H,W]");
    if (p->value.numel() != 1) throw std::invalid_argument("ops::gem_pool exponent must be scalar");
    const std::int64_t BC = xs[0] * xs[1], n = xs[2] * xs[3];
    const T pv = p->value[0];
    if (!(pv >= T(1))) throw std::invalid_argument("ops::gem_pool exponent must be >= 1");
    Tensor<T> out({xs[0], xs[1]});
    // Cache the per-slice max and normalized power mean for the backward pass.
    std::vector<T> mcache(static_cast<std::size_t>(BC)), ucache(static_cast<std::size_t>(BC));
    for (std::int64_t i = 0; i < BC; ++i) {
        const T* xp = x->value.data() + i * n;
        T m = T(0);
        for (std::int64_t j = 0; j < n; ++j) m = std::max(m, std::abs(xp[j]));
        if (m == T(0)) {
            out[i] = T(0);
            mcache[static_cast<std::size_t>(i)] = T(0);
            ucache[static_cast<std::size_t>(i)] = T(0);
            continue;
        }
        T u = T(0);
        for (std::int64_t j = 0; j < n; ++j) u += std::pow(std::abs(xp[j]) / m, pv);
        u /= T(n);
        out[i] = m * std::pow(u, T(1) / pv);
        mcache[static_cast<std::size_t>(i)] = m;
        ucache[static_cast<std::size_t>(i)] = u;
    }
    return tape.record(
        std::move(out), {x, p},
        [x, p, BC, n, pv, mcache = std::move(mcache), ucache = std::move(ucache)](Node<T>& self) {
            for (std::int64_t i = 0; i < BC; ++i) {
                const T g = self.grad[i];
                if (g == T(0)) continue;
                const T m = mcache[static_cast<std::size_t>(i)];
                if (m == T(0)) continue;
                const T u = ucache[static_cast<std::size_t>(i)];
                const T* xp = x->value.data() + i * n;
                if (x->needs_grad) {
                    // d y / d x_j = sign(x_j) * r_j^(p-1) * u^(1/p - 1) / n.
                    const T c1 = std::pow(u, T(1) / pv - T(1)) / T(n);
                    T* gx = x->ensure_grad().data() + i * n;
                    for (std::int64_t j = 0; j < n; ++j) {
                        if (xp[j] == T(0)) continue;
                        const T r = std::abs(xp[j]) / m;
                        const T d = c1 * std::pow(r, pv - T(1));
                        gx[j] += g * (xp[j] > T(0) ? d : -d);
                    }
                }
                if (p->needs_grad) {
                    // d y / d p = y * ( (du/dp)/(p u) - ln(u)/p^2 ),
                    // du/dp = mean r^p ln r (terms with r^p underflowed drop out).
                    T du = T(0);
                    for (std::int64_t j = 0; j < n; ++j) {
                        const T r = std::abs(xp[j]) / m;
                        if (r <= T(0) || r >= T(1)) continue;
                        const T rp = std::pow(r, pv);
                        if (rp > T(0)) du += rp * std::log(r);
                    }
                    du /= T(n);
                    const T y = self.value[i];
                    p->ensure_grad()[0] += g * y * (du / (pv * u) - std::log(u) / (pv * pv));
                }
            }
        });
}

}  // namespace gaitgs::ops
