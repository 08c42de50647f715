// SPDX-License-Identifier: Apache-2.0
//
// Patch-level attention: single-head scaled dot-product attention across
// the N patch feature vectors of one image, wrapped in a residual block.
#pragma once

#include "radn/tensor.hpp"

namespace radn {

template <typename T>
struct AttentionWeightsT {
    TensorT<T> wq, wk, wv, wz;  // each [d_k, d_k]

    std::size_t width() const { return wq.dim(0); }
};

using AttentionWeights = AttentionWeightsT<float>;

// x: [N, d_k], rows are patch feature vectors. Per row i (column-vector
// convention): q_i = Wq x_i, k_i = Wk x_i, v_i = Wv x_i,
// Y = softmax(QK^T / sqrt(d_k)) V, Z = Y Wz^T + X.
template <typename T>
TensorT<T> patch_attention(const TensorT<T>& x, const AttentionWeightsT<T>& w) {
    if (x.ndim() != 2)
        throw ShapeError("patch_attention expects [N,d_k], got " + shape_str(x.shape()));
    const std::size_t d = x.dim(1);
    if (w.wq.shape() != Shape{d, d} || w.wk.shape() != Shape{d, d} ||
        w.wv.shape() != Shape{d, d} || w.wz.shape() != Shape{d, d})
        throw ShapeError("patch_attention: weight width does not match feature width " +
                         std::to_string(d));
    auto q = matmul(x, transpose2d(w.wq));
    auto k = matmul(x, transpose2d(w.wk));
    auto v = matmul(x, transpose2d(w.wv));
    auto logits = scalar_mul(matmul(q, transpose2d(k)), T(1) / std::sqrt(static_cast<T>(d)));
    auto attn = softmax_rows(logits);  // [N,N], rows sum to 1
    auto y = matmul(attn, v);
    return add(matmul(y, transpose2d(w.wz)), x);
}

// The row-stochastic attention matrix alone, for inspection and tests.
template <typename T>
TensorT<T> attention_matrix(const TensorT<T>& x, const AttentionWeightsT<T>& w) {
    const std::size_t d = x.dim(1);
    auto q = matmul(x, transpose2d(w.wq));
    auto k = matmul(x, transpose2d(w.wk));
    return softmax_rows(scalar_mul(matmul(q, transpose2d(k)), T(1) / std::sqrt(static_cast<T>(d))));
}

}  // namespace radn
