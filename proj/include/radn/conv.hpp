// SPDX-License-Identifier: Apache-2.0
//
// 2-d convolution (cross-correlation convention) as an explicit patch
// gather (im2col) feeding a matrix product. Accepts [C,H,W] or [B,C,H,W].
#pragma once

#include "radn/tensor.hpp"

namespace radn {

namespace detail {

// col is [C*k*k, ld] with one column per output position; ld >= OH*OW lets
// several samples share one matrix side by side.
template <typename T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t OH, std::size_t OW, T* col,
            std::size_t ld) {
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                T* dst = col + ((c * k + ky) * k + kx) * ld;
                for (std::size_t oy = 0; oy < OH; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                    for (std::size_t ox = 0; ox < OW; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                        T v = 0;
                        if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(H) && ix >= 0 &&
                            ix < static_cast<std::ptrdiff_t>(W))
                            v = x[(c * H + iy) * W + ix];
                        dst[oy * OW + ox] = v;
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const T* col, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t OH, std::size_t OW, T* x,
            std::size_t ld) {
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                const T* src = col + ((c * k + ky) * k + kx) * ld;
                for (std::size_t oy = 0; oy < OH; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t ox = 0; ox < OW; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                        x[(c * H + iy) * W + ix] += src[oy * OW + ox];
                    }
                }
            }
        }
    }
}

// C[MxP] += A[MxK]*B[KxP]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t M, std::size_t K, std::size_t P) {
    for (std::size_t i = 0; i < M; ++i) {
        T* crow = c + i * P;
        for (std::size_t k = 0; k < K; ++k) {
            const T aik = a[i * K + k];
            const T* brow = b + k * P;
            for (std::size_t j = 0; j < P; ++j) crow[j] += aik * brow[j];
        }
    }
}

// C[MxP] += A^T[KxM]^T * B ... a is [KxM] stored row-major, used as A^T.
template <typename T>
void gemm_at_b_acc(const T* a, const T* b, T* c, std::size_t M, std::size_t K, std::size_t P) {
    for (std::size_t k = 0; k < K; ++k) {
        const T* arow = a + k * M;
        const T* brow = b + k * P;
        for (std::size_t i = 0; i < M; ++i) {
            const T aki = arow[i];
            T* crow = c + i * P;
            for (std::size_t j = 0; j < P; ++j) crow[j] += aki * brow[j];
        }
    }
}

// C[MxP] += A[MxK] * B^T where b is [PxK] row-major. The dot product is
// accumulated in fixed lanes so it vectorizes without reassociating a
// single serial sum.
template <typename T>
void gemm_a_bt_acc(const T* a, const T* b, T* c, std::size_t M, std::size_t K, std::size_t P) {
    constexpr std::size_t L = 8;
    for (std::size_t i = 0; i < M; ++i) {
        const T* arow = a + i * K;
        T* crow = c + i * P;
        for (std::size_t j = 0; j < P; ++j) {
            const T* brow = b + j * K;
            T lane[L] = {};
            std::size_t k = 0;
            for (; k + L <= K; k += L)
                for (std::size_t l = 0; l < L; ++l) lane[l] += arow[k + l] * brow[k + l];
            T acc = 0;
            for (; k < K; ++k) acc += arow[k] * brow[k];
            for (std::size_t l = 0; l < L; ++l) acc += lane[l];
            crow[j] += acc;
        }
    }
}

}  // namespace detail

// x: [C,H,W] or [B,C,H,W]; w: [C_out,C_in,k,k]. Output spatial size
// OH = (H + 2*pad - k)/stride + 1.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, std::size_t stride = 1,
                  std::size_t pad = 0) {
    const bool batched = x.ndim() == 4;
    if (!batched && x.ndim() != 3)
        throw ShapeError("conv2d expects [C,H,W] or [B,C,H,W], got " + shape_str(x.shape()));
    if (w.ndim() != 4) throw ShapeError("conv2d weight must be 4-d, got " + shape_str(w.shape()));
    const std::size_t B = batched ? x.dim(0) : 1;
    const std::size_t C = x.dim(batched ? 1 : 0);
    const std::size_t H = x.dim(batched ? 2 : 1);
    const std::size_t W = x.dim(batched ? 3 : 2);
    const std::size_t Cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != C)
        throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) + ", weight " +
                         shape_str(w.shape()));
    if (w.dim(3) != k) throw ShapeError("conv2d kernel must be square, got " + shape_str(w.shape()));
    if (stride == 0) throw ShapeError("conv2d stride must be positive");
    const std::ptrdiff_t oh = (static_cast<std::ptrdiff_t>(H) + 2 * static_cast<std::ptrdiff_t>(pad) -
                               static_cast<std::ptrdiff_t>(k)) /
                                  static_cast<std::ptrdiff_t>(stride) +
                              1;
    if (oh <= 0 || static_cast<std::ptrdiff_t>(W + 2 * pad) < static_cast<std::ptrdiff_t>(k))
        throw ShapeError("conv2d: non-positive output size for input " + shape_str(x.shape()) +
                         " with kernel " + std::to_string(k) + " stride " + std::to_string(stride) +
                         " pad " + std::to_string(pad));
    const std::size_t OH = static_cast<std::size_t>(oh);
    const std::size_t OW = (W + 2 * pad - k) / stride + 1;
    const std::size_t K = C * k * k;
    const std::size_t cols = OH * OW;

    Shape oshape = batched ? Shape{B, Cout, OH, OW} : Shape{Cout, OH, OW};
    TensorT<T> out(oshape);
    // all samples side by side in one [K, B*cols] matrix, so the product's
    // inner dimension stays long even on small feature maps
    const std::size_t ld = B * cols;
    std::vector<T> col(K * ld);
    for (std::size_t n = 0; n < B; ++n)
        detail::im2col(x.data().data() + n * C * H * W, C, H, W, k, stride, pad, OH, OW,
                       col.data() + n * cols, ld);
    std::vector<T> prod(Cout * ld, T(0));
    detail::gemm_acc(w.data().data(), col.data(), prod.data(), Cout, K, ld);
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t co = 0; co < Cout; ++co)
            std::copy_n(prod.data() + co * ld + n * cols, cols,
                        out.data().data() + (n * Cout + co) * cols);
    detail::check_finite(out, "conv2d");

    if (x.requires_grad() || w.requires_grad()) {
        auto xn = x.node();
        auto wn = w.node();
        auto on = out.node();
        on->requires_grad = true;
        on->parents = {xn, wn};
        on->backward = [xn, wn, B, C, H, W, Cout, k, stride, pad, OH, OW](Node<T>& o) {
            const std::size_t K2 = C * k * k;
            const std::size_t cols2 = OH * OW;
            const std::size_t ld = B * cols2;
            // dOut rearranged to the same side-by-side layout as col
            std::vector<T> gbig(Cout * ld);
            for (std::size_t n = 0; n < B; ++n)
                for (std::size_t co = 0; co < Cout; ++co)
                    std::copy_n(o.grad.data() + (n * Cout + co) * cols2, cols2,
                                gbig.data() + co * ld + n * cols2);
            if (wn->requires_grad) {
                wn->ensure_grad();
                std::vector<T> col(K2 * ld);
                for (std::size_t n = 0; n < B; ++n)
                    detail::im2col(xn->value.data() + n * C * H * W, C, H, W, k, stride, pad, OH,
                                   OW, col.data() + n * cols2, ld);
                // dW += dOut * col^T
                detail::gemm_a_bt_acc(gbig.data(), col.data(), wn->grad.data(), Cout, ld, K2);
            }
            if (xn->requires_grad) {
                xn->ensure_grad();
                std::vector<T> dcol(K2 * ld, T(0));
                // dcol = W^T * dOut
                detail::gemm_at_b_acc(wn->value.data(), gbig.data(), dcol.data(), K2, Cout, ld);
                for (std::size_t n = 0; n < B; ++n)
                    detail::col2im(dcol.data() + n * cols2, C, H, W, k, stride, pad, OH, OW,
                                   xn->grad.data() + n * C * H * W, ld);
            }
        };
    }
    return out;
}

// Reference oracle: direct 6-loop convolution, unbatched, forward only.
// Kept alongside the im2col path as the auditable definition.
template <typename T>
TensorT<T> conv2d_naive(const TensorT<T>& x, const TensorT<T>& w, std::size_t stride = 1,
                        std::size_t pad = 0) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t Cout = w.dim(0), k = w.dim(2);
    const std::size_t OH = (H + 2 * pad - k) / stride + 1;
    const std::size_t OW = (W + 2 * pad - k) / stride + 1;
    TensorT<T> out({Cout, OH, OW});
    for (std::size_t co = 0; co < Cout; ++co)
        for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ox = 0; ox < OW; ++ox) {
                T acc = 0;
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                      static_cast<std::ptrdiff_t>(pad);
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                      static_cast<std::ptrdiff_t>(pad);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H) || ix < 0 ||
                                ix >= static_cast<std::ptrdiff_t>(W))
                                continue;
                            acc += x.data()[(c * H + iy) * W + ix] *
                                   w.data()[((co * C + c) * k + ky) * k + kx];
                        }
                out.data()[(co * OH + oy) * OW + ox] = acc;
            }
    return out;
}

}  // namespace radn
