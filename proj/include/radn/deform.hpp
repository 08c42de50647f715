// SPDX-License-Identifier: Apache-2.0
//
// Bilinear sampling and deformable convolution. The deformable kernel keeps
// the output on the input grid (stride 1, pad k/2) and samples every tap at
// a fractional position displaced by a learned offset field. Offsets are
// predicted from the reference branch and shared by both branches; see
// ref_deform_conv.
#pragma once

#include "radn/conv.hpp"
#include "radn/tensor.hpp"

namespace radn {

namespace detail {

// Up to four in-bounds corners of a fractional sample position, with the
// interpolation weight and its derivatives w.r.t. the sample coordinates.
// Corners outside [0,H-1]x[0,W-1] contribute zero (zero-padding semantics).
template <typename T>
struct Corners {
    int count = 0;
    std::size_t idx[4];   // iy*W+ix
    T w[4];
    T dwdy[4];
    T dwdx[4];
};

template <typename T>
Corners<T> bilinear_corners(std::size_t H, std::size_t W, T y, T x) {
    Corners<T> c;
    const T fy0 = std::floor(y);
    const T fx0 = std::floor(x);
    const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(fy0);
    const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(fx0);
    const T ry = y - fy0;
    const T rx = x - fx0;
    const std::ptrdiff_t ys[2] = {y0, y0 + 1};
    const std::ptrdiff_t xs[2] = {x0, x0 + 1};
    const T wy[2] = {T(1) - ry, ry};
    const T dwy[2] = {T(-1), T(1)};
    const T wx[2] = {T(1) - rx, rx};
    const T dwx[2] = {T(-1), T(1)};
    for (int a = 0; a < 2; ++a) {
        if (ys[a] < 0 || ys[a] >= static_cast<std::ptrdiff_t>(H)) continue;
        for (int b = 0; b < 2; ++b) {
            if (xs[b] < 0 || xs[b] >= static_cast<std::ptrdiff_t>(W)) continue;
            c.idx[c.count] = static_cast<std::size_t>(ys[a]) * W + static_cast<std::size_t>(xs[b]);
            c.w[c.count] = wy[a] * wx[b];
            c.dwdy[c.count] = dwy[a] * wx[b];
            c.dwdx[c.count] = wy[a] * dwx[b];
            ++c.count;
        }
    }
    return c;
}

}  // namespace detail

// Plain bilinear read of one channel plane; no tape participation.
template <typename T>
T bilinear_at(const T* plane, std::size_t H, std::size_t W, T y, T x) {
    auto c = detail::bilinear_corners<T>(H, W, y, x);
    T acc = 0;
    for (int i = 0; i < c.count; ++i) acc += c.w[i] * plane[c.idx[i]];
    return acc;
}

// Differentiable sample of all channels of fmap [C,H,W] at scalar tensors
// (y, x). Gradients flow to the map values and to both coordinates.
template <typename T>
TensorT<T> bilinear_sample(const TensorT<T>& fmap, const TensorT<T>& y, const TensorT<T>& x) {
    if (fmap.ndim() != 3)
        throw ShapeError("bilinear_sample expects [C,H,W], got " + shape_str(fmap.shape()));
    const std::size_t C = fmap.dim(0), H = fmap.dim(1), W = fmap.dim(2);
    const T yv = y.item(), xv = x.item();
    auto corners = detail::bilinear_corners<T>(H, W, yv, xv);
    TensorT<T> out({C});
    for (std::size_t c = 0; c < C; ++c) {
        const T* plane = fmap.data().data() + c * H * W;
        T acc = 0;
        for (int i = 0; i < corners.count; ++i) acc += corners.w[i] * plane[corners.idx[i]];
        out.data()[c] = acc;
    }
    if (fmap.requires_grad() || y.requires_grad() || x.requires_grad()) {
        auto fn = fmap.node();
        auto yn = y.node();
        auto xn = x.node();
        auto on = out.node();
        on->requires_grad = true;
        on->parents = {fn, yn, xn};
        on->backward = [fn, yn, xn, corners, C, H, W](Node<T>& o) {
            const std::size_t HW = H * W;
            if (fn->requires_grad) {
                fn->ensure_grad();
                for (std::size_t c = 0; c < C; ++c)
                    for (int i = 0; i < corners.count; ++i)
                        fn->grad[c * HW + corners.idx[i]] += o.grad[c] * corners.w[i];
            }
            if (yn->requires_grad || xn->requires_grad) {
                T gy = 0, gx = 0;
                for (std::size_t c = 0; c < C; ++c) {
                    const T* plane = fn->value.data() + c * HW;
                    for (int i = 0; i < corners.count; ++i) {
                        gy += o.grad[c] * corners.dwdy[i] * plane[corners.idx[i]];
                        gx += o.grad[c] * corners.dwdx[i] * plane[corners.idx[i]];
                    }
                }
                if (yn->requires_grad) {
                    yn->ensure_grad();
                    yn->grad[0] += gy;
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    xn->grad[0] += gx;
                }
            }
        };
    }
    return out;
}

// Convenience overload for fixed coordinates.
template <typename T>
TensorT<T> bilinear_sample(const TensorT<T>& fmap, T y, T x) {
    return bilinear_sample(fmap, TensorT<T>::scalar(y), TensorT<T>::scalar(x));
}

// Deformable convolution over one branch.
//   x:       [C,H,W] or [B,C,H,W]
//   offsets: [2*k*k,H,W] or [B,2*k*k,H,W], interleaved (dy,dx) per tap
//   w:       [Cout,C,k,k]
// Output stays on the input grid. Tap t of the kernel reads
// x at (oy + py_t + dy_t, ox + px_t + dx_t) with py/px in [-k/2, k/2].
// Gradients flow to x, offsets and w. An optional max_offset clamps the
// offset magnitude per component (0 disables clamping).
template <typename T>
TensorT<T> deform_conv(const TensorT<T>& x, const TensorT<T>& offsets, const TensorT<T>& w,
                       T max_offset = T(0)) {
    const bool batched = x.ndim() == 4;
    if (!batched && x.ndim() != 3)
        throw ShapeError("deform_conv expects [C,H,W] or [B,C,H,W], got " + shape_str(x.shape()));
    const std::size_t B = batched ? x.dim(0) : 1;
    const std::size_t C = x.dim(batched ? 1 : 0);
    const std::size_t H = x.dim(batched ? 2 : 1);
    const std::size_t W = x.dim(batched ? 3 : 2);
    const std::size_t Cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != C)
        throw ShapeError("deform_conv channel mismatch: input " + shape_str(x.shape()) +
                         ", weight " + shape_str(w.shape()));
    const std::size_t N = k * k;
    const std::size_t off_ch = offsets.dim(batched ? 1 : 0);
    if (off_ch != 2 * N)
        throw ShapeError("deform_conv offset field has " + std::to_string(off_ch) +
                         " channels, kernel needs " + std::to_string(2 * N));
    if (offsets.dim(batched ? 2 : 1) != H || offsets.dim(batched ? 3 : 2) != W ||
        (batched && offsets.dim(0) != B))
        throw ShapeError("deform_conv offset field " + shape_str(offsets.shape()) +
                         " does not match input " + shape_str(x.shape()));
    const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(k) / 2;
    const std::size_t HW = H * W;
    const std::size_t K = C * N;

    Shape oshape = batched ? Shape{B, Cout, H, W} : Shape{Cout, H, W};
    TensorT<T> out(oshape);

    auto clampoff = [max_offset](T v) {
        return max_offset > T(0) ? std::clamp(v, -max_offset, max_offset) : v;
    };

    // fractional im2col: col[(c*N+t), p0] = bilinear sample of channel c at tap t
    std::vector<T> col(K * HW);
    for (std::size_t n = 0; n < B; ++n) {
        const T* xb = x.data().data() + n * C * HW;
        const T* ob = offsets.data().data() + n * 2 * N * HW;
        for (std::size_t t = 0; t < N; ++t) {
            const std::ptrdiff_t py = static_cast<std::ptrdiff_t>(t / k) - r;
            const std::ptrdiff_t px = static_cast<std::ptrdiff_t>(t % k) - r;
            for (std::size_t oy = 0; oy < H; ++oy)
                for (std::size_t ox = 0; ox < W; ++ox) {
                    const std::size_t p0 = oy * W + ox;
                    const T sy = static_cast<T>(static_cast<std::ptrdiff_t>(oy) + py) +
                                 clampoff(ob[(2 * t) * HW + p0]);
                    const T sx = static_cast<T>(static_cast<std::ptrdiff_t>(ox) + px) +
                                 clampoff(ob[(2 * t + 1) * HW + p0]);
                    auto corners = detail::bilinear_corners<T>(H, W, sy, sx);
                    for (std::size_t c = 0; c < C; ++c) {
                        const T* plane = xb + c * HW;
                        T acc = 0;
                        for (int i = 0; i < corners.count; ++i)
                            acc += corners.w[i] * plane[corners.idx[i]];
                        col[(c * N + t) * HW + p0] = acc;
                    }
                }
        }
        detail::gemm_acc(w.data().data(), col.data(), out.data().data() + n * Cout * HW, Cout, K, HW);
    }
    detail::check_finite(out, "deform_conv");

    if (x.requires_grad() || offsets.requires_grad() || w.requires_grad()) {
        auto xn = x.node();
        auto on2 = offsets.node();
        auto wn = w.node();
        auto onode = out.node();
        onode->requires_grad = true;
        onode->parents = {xn, on2, wn};
        onode->backward = [xn, on2, wn, B, C, H, W, Cout, k, max_offset](Node<T>& o) {
            const std::size_t N2 = k * k;
            const std::size_t HW2 = H * W;
            const std::size_t K2 = C * N2;
            const std::ptrdiff_t r2 = static_cast<std::ptrdiff_t>(k) / 2;
            auto clampoff = [max_offset](T v) {
                return max_offset > T(0) ? std::clamp(v, -max_offset, max_offset) : v;
            };
            if (xn->requires_grad) xn->ensure_grad();
            if (on2->requires_grad) on2->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            std::vector<T> col(K2 * HW2);
            std::vector<T> dcol(K2 * HW2);
            for (std::size_t n = 0; n < B; ++n) {
                const T* xb = xn->value.data() + n * C * HW2;
                const T* ob = on2->value.data() + n * 2 * N2 * HW2;
                const T* gout = o.grad.data() + n * Cout * HW2;

                // rebuild the fractional patch matrix, then dW += g * col^T
                if (wn->requires_grad) {
                    for (std::size_t t = 0; t < N2; ++t) {
                        const std::ptrdiff_t py = static_cast<std::ptrdiff_t>(t / k) - r2;
                        const std::ptrdiff_t px = static_cast<std::ptrdiff_t>(t % k) - r2;
                        for (std::size_t p0 = 0; p0 < HW2; ++p0) {
                            const std::size_t oy = p0 / W, ox = p0 % W;
                            const T sy = static_cast<T>(static_cast<std::ptrdiff_t>(oy) + py) +
                                         clampoff(ob[(2 * t) * HW2 + p0]);
                            const T sx = static_cast<T>(static_cast<std::ptrdiff_t>(ox) + px) +
                                         clampoff(ob[(2 * t + 1) * HW2 + p0]);
                            auto corners = detail::bilinear_corners<T>(H, W, sy, sx);
                            for (std::size_t c = 0; c < C; ++c) {
                                const T* plane = xb + c * HW2;
                                T acc = 0;
                                for (int i = 0; i < corners.count; ++i)
                                    acc += corners.w[i] * plane[corners.idx[i]];
                                col[(c * N2 + t) * HW2 + p0] = acc;
                            }
                        }
                    }
                    detail::gemm_a_bt_acc(gout, col.data(), wn->grad.data(), Cout, HW2, K2);
                }

                if (xn->requires_grad || on2->requires_grad) {
                    std::fill(dcol.begin(), dcol.end(), T(0));
                    detail::gemm_at_b_acc(wn->value.data(), gout, dcol.data(), K2, Cout, HW2);
                    T* gx = xn->requires_grad ? xn->grad.data() + n * C * HW2 : nullptr;
                    T* go = on2->requires_grad ? on2->grad.data() + n * 2 * N2 * HW2 : nullptr;
                    for (std::size_t t = 0; t < N2; ++t) {
                        const std::ptrdiff_t py = static_cast<std::ptrdiff_t>(t / k) - r2;
                        const std::ptrdiff_t px = static_cast<std::ptrdiff_t>(t % k) - r2;
                        for (std::size_t p0 = 0; p0 < HW2; ++p0) {
                            const std::size_t oy = p0 / W, ox = p0 % W;
                            const T rawdy = ob[(2 * t) * HW2 + p0];
                            const T rawdx = ob[(2 * t + 1) * HW2 + p0];
                            const T sy =
                                static_cast<T>(static_cast<std::ptrdiff_t>(oy) + py) + clampoff(rawdy);
                            const T sx =
                                static_cast<T>(static_cast<std::ptrdiff_t>(ox) + px) + clampoff(rawdx);
                            auto corners = detail::bilinear_corners<T>(H, W, sy, sx);
                            T gy = 0, gxx = 0;
                            for (std::size_t c = 0; c < C; ++c) {
                                const T g = dcol[(c * N2 + t) * HW2 + p0];
                                if (g == T(0)) continue;
                                const T* plane = xb + c * HW2;
                                for (int i = 0; i < corners.count; ++i) {
                                    if (gx) gx[c * HW2 + corners.idx[i]] += g * corners.w[i];
                                    gy += g * corners.dwdy[i] * plane[corners.idx[i]];
                                    gxx += g * corners.dwdx[i] * plane[corners.idx[i]];
                                }
                            }
                            if (go) {
                                const bool dy_active =
                                    max_offset <= T(0) || std::abs(rawdy) < max_offset;
                                const bool dx_active =
                                    max_offset <= T(0) || std::abs(rawdx) < max_offset;
                                if (dy_active) go[(2 * t) * HW2 + p0] += gy;
                                if (dx_active) go[(2 * t + 1) * HW2 + p0] += gxx;
                            }
                        }
                    }
                }
            }
        };
    }
    return out;
}

// Reference-oriented deformable stage: one learned offset field (predicted
// upstream from the reference branch) drives sampling in both branches,
// each with its own weights.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> ref_deform_conv(const TensorT<T>& f_rm, const TensorT<T>& f_dm,
                                                  const TensorT<T>& offsets, const TensorT<T>& w_r,
                                                  const TensorT<T>& w_d, T max_offset = T(0)) {
    if (f_rm.shape() != f_dm.shape())
        throw ShapeError("ref_deform_conv branch shapes differ: " + shape_str(f_rm.shape()) +
                         " vs " + shape_str(f_dm.shape()));
    return {deform_conv(f_rm, offsets, w_r, max_offset),
            deform_conv(f_dm, offsets, w_d, max_offset)};
}

}  // namespace radn
