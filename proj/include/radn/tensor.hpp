// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense-tensor engine with reverse-mode automatic differentiation.
// Tensors are cheap handles onto graph nodes; every op that sees a
// grad-requiring input records a backward closure, and backward() runs the
// recorded tape in reverse topological order.
#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <numeric>
#include <unordered_set>
#include <vector>

#include "radn/common.hpp"

namespace radn {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // allocated lazily, same size as value
    bool requires_grad = false;
    std::function<void(Node&)> backward;
    std::vector<std::shared_ptr<Node>> parents;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

template <typename T>
class TensorT {
public:
    TensorT() : n_(std::make_shared<Node<T>>()) {}

    explicit TensorT(Shape shape, bool requires_grad = false)
        : n_(std::make_shared<Node<T>>()) {
        n_->shape = std::move(shape);
        n_->value.assign(shape_numel(n_->shape), T(0));
        n_->requires_grad = requires_grad;
    }

    TensorT(Shape shape, std::vector<T> data, bool requires_grad = false)
        : n_(std::make_shared<Node<T>>()) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("tensor data size " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        n_->shape = std::move(shape);
        n_->value = std::move(data);
        n_->requires_grad = requires_grad;
    }

    static TensorT scalar(T v, bool requires_grad = false) {
        return TensorT({1}, {v}, requires_grad);
    }

    static TensorT full(Shape shape, T v, bool requires_grad = false) {
        TensorT t(std::move(shape), requires_grad);
        std::fill(t.data().begin(), t.data().end(), v);
        return t;
    }

    const Shape& shape() const { return n_->shape; }
    std::size_t numel() const { return n_->value.size(); }
    std::size_t dim(std::size_t i) const { return n_->shape.at(i); }
    std::size_t ndim() const { return n_->shape.size(); }

    std::vector<T>& data() { return n_->value; }
    const std::vector<T>& data() const { return n_->value; }

    bool requires_grad() const { return n_->requires_grad; }

    std::vector<T>& grad() {
        n_->ensure_grad();
        return n_->grad;
    }
    const std::vector<T>& grad() const {
        n_->ensure_grad();
        return n_->grad;
    }

    void zero_grad() {
        n_->ensure_grad();
        std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }

    T item() const {
        if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
        return n_->value[0];
    }

    std::shared_ptr<Node<T>> node() const { return n_; }

    // New tensor with the same elements in a different shape; gradients
    // flow through unchanged.
    TensorT reshape(Shape shape) const {
        if (shape_numel(shape) != numel())
            throw ShapeError("reshape " + shape_str(this->shape()) + " -> " + shape_str(shape) +
                             ": element count mismatch");
        TensorT out(std::move(shape), n_->value, false);
        if (n_->requires_grad) {
            out.n_->requires_grad = true;
            auto p = n_;
            out.n_->parents = {p};
            out.n_->backward = [p](Node<T>& o) {
                p->ensure_grad();
                for (std::size_t i = 0; i < o.grad.size(); ++i) p->grad[i] += o.grad[i];
            };
        }
        return out;
    }

    // Value copy that does not participate in the tape.
    TensorT detach() const { return TensorT(n_->shape, n_->value, false); }

private:
    std::shared_ptr<Node<T>> n_;
};

using Tensor = TensorT<float>;

namespace detail {

template <typename T>
void check_finite(const TensorT<T>& t, const char* op) {
    if (!debug_checks()) return;
    for (T v : t.data())
        if (!std::isfinite(static_cast<double>(v)))
            throw NumericError(std::string("non-finite value produced by ") + op);
}

// True when `small` equals the trailing dimensions of `big` (or is scalar).
inline bool trailing_broadcastable(const Shape& big, const Shape& small) {
    if (shape_numel(small) == 1) return true;
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace detail

// Elementwise binary op with scalar / trailing-dimension broadcasting of the
// smaller operand. fwd(a,b) -> out; da(a,b,g) and db(a,b,g) give the two
// input gradients per element.
template <typename T, typename Fwd, typename Da, typename Db>
TensorT<T> elementwise_binary(const TensorT<T>& a, const TensorT<T>& b, const char* name,
                              Fwd fwd, Da da, Db db) {
    const bool b_small = detail::trailing_broadcastable(a.shape(), b.shape());
    const bool a_small = detail::trailing_broadcastable(b.shape(), a.shape());
    if (!b_small && !a_small)
        throw ShapeError(std::string(name) + ": incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    const TensorT<T>& big = b_small ? a : b;
    const TensorT<T>& small = b_small ? b : a;
    const std::size_t n = big.numel();
    const std::size_t m = small.numel();

    TensorT<T> out(big.shape());
    auto& ov = out.data();
    const auto& bv = big.data();
    const auto& sv = small.data();
    if (b_small) {
        for (std::size_t i = 0; i < n; ++i) ov[i] = fwd(bv[i], sv[i % m]);
    } else {
        for (std::size_t i = 0; i < n; ++i) ov[i] = fwd(sv[i % m], bv[i]);
    }
    detail::check_finite(out, name);

    if (a.requires_grad() || b.requires_grad()) {
        auto an = a.node();
        auto bn = b.node();
        auto on = out.node();
        on->requires_grad = true;
        on->parents = {an, bn};
        on->backward = [an, bn, da, db, b_small, n, m](Node<T>& o) {
            const auto& bigv = b_small ? an->value : bn->value;
            const auto& smallv = b_small ? bn->value : an->value;
            auto* bigp = b_small ? an.get() : bn.get();
            auto* smallp = b_small ? bn.get() : an.get();
            bool big_needs = b_small ? an->requires_grad : bn->requires_grad;
            bool small_needs = b_small ? bn->requires_grad : an->requires_grad;
            if (big_needs) bigp->ensure_grad();
            if (small_needs) smallp->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                T av = b_small ? bigv[i] : smallv[i % m];
                T bvv = b_small ? smallv[i % m] : bigv[i];
                T g = o.grad[i];
                T ga = da(av, bvv, g);
                T gb = db(av, bvv, g);
                if (b_small) {
                    if (big_needs) bigp->grad[i] += ga;
                    if (small_needs) smallp->grad[i % m] += gb;
                } else {
                    if (small_needs) smallp->grad[i % m] += ga;
                    if (big_needs) bigp->grad[i] += gb;
                }
            }
        };
    }
    return out;
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    return elementwise_binary(
        a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T g) { return g; },
        [](T, T, T g) { return g; });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return elementwise_binary(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T g) { return g; },
        [](T, T, T g) { return -g; });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    return elementwise_binary(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T g) { return g * y; },
        [](T x, T, T g) { return g * x; });
}

template <typename T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
    return elementwise_binary(
        a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T g) { return g / y; },
        [](T x, T y, T g) { return -g * x / (y * y); });
}

template <typename T>
TensorT<T> scalar_mul(const TensorT<T>& a, T s) {
    TensorT<T> out(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] * s;
    detail::check_finite(out, "scalar_mul");
    if (a.requires_grad()) {
        auto an = a.node();
        auto on = out.node();
        on->requires_grad = true;
        on->parents = {an};
        on->backward = [an, s](Node<T>& o) {
            an->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i] * s;
        };
    }
    return out;
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
    TensorT<T> out(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] + s;
    if (a.requires_grad()) {
        auto an = a.node();
        auto on = out.node();
        on->requires_grad = true;
        on->parents = {an};
        on->backward = [an](Node<T>& o) {
            an->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i) an->grad[i] += o.grad[i];
        };
    }
    return out;
}

template <typename T>
TensorT<T> operator+(const TensorT<T>& a, const TensorT<T>& b) { return add(a, b); }
template <typename T>
TensorT<T> operator-(const TensorT<T>& a, const TensorT<T>& b) { return sub(a, b); }
template <typename T>
TensorT<T> operator*(const TensorT<T>& a, const TensorT<T>& b) { return mul(a, b); }

// C[MxP] = A[MxK] * B[KxP]; dA = dC*B^T, dB = A^T*dC.
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2)
        throw ShapeError("matmul expects 2-d tensors, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::size_t M = a.dim(0), K = a.dim(1), P = b.dim(1);
    if (b.dim(0) != K)
        throw ShapeError("matmul inner dimension mismatch: " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
    TensorT<T> out({M, P});
    const T* av = a.data().data();
    const T* bv = b.data().data();
    T* ov = out.data().data();
    for (std::size_t i = 0; i < M; ++i) {
        T* orow = ov + i * P;
        for (std::size_t k = 0; k < K; ++k) {
            const T aik = av[i * K + k];
            const T* brow = bv + k * P;
            for (std::size_t j = 0; j < P; ++j) orow[j] += aik * brow[j];
        }
    }
    detail::check_finite(out, "matmul");
    if (a.requires_grad() || b.requires_grad()) {
        auto an = a.node();
        auto bn = b.node();
        auto on = out.node();
        on->requires_grad = true;
        on->parents = {an, bn};
        on->backward = [an, bn, M, K, P](Node<T>& o) {
            const T* g = o.grad.data();
            if (an->requires_grad) {
                an->ensure_grad();
                T* ga = an->grad.data();
                const T* bv2 = bn->value.data();
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t j = 0; j < P; ++j) {
                        const T gij = g[i * P + j];
                        for (std::size_t k = 0; k < K; ++k) ga[i * K + k] += gij * bv2[k * P + j];
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                T* gb = bn->grad.data();
                const T* av2 = an->value.data();
                for (std::size_t i = 0; i < M; ++i)
                    for (std::size_t k = 0; k < K; ++k) {
                        const T aik = av2[i * K + k];
                        const T* grow = g + i * P;
                        T* gbrow = gb + k * P;
                        for (std::size_t j = 0; j < P; ++j) gbrow[j] += aik * grow[j];
                    }
            }
        };
    }
    return out;
}

template <typename T>
TensorT<T> transpose2d(const TensorT<T>& a) {
    if (a.ndim() != 2) throw ShapeError("transpose2d expects a 2-d tensor, got " + shape_str(a.shape()));
    const std::size_t M = a.dim(0), N = a.dim(1);
    TensorT<T> out({N, M});
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) out.data()[j * M + i] = a.data()[i * N + j];
    if (a.requires_grad()) {
        auto an = a.node();
        auto on = out.node();
        on->requires_grad = true;
        on->parents = {an};
        on->backward = [an, M, N](Node<T>& o) {
            an->ensure_grad();
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t j = 0; j < N; ++j) an->grad[i * N + j] += o.grad[j * M + i];
        };
    }
    return out;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& a) {
    TensorT<T> out(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = av[i] > T(0) ? av[i] : T(0);
    if (a.requires_grad()) {
        auto an = a.node();
        auto on = out.node();
        on->requires_grad = true;
        on->parents = {an};
        on->backward = [an](Node<T>& o) {
            an->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i)
                if (an->value[i] > T(0)) an->grad[i] += o.grad[i];
        };
    }
    return out;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& a) {
    TensorT<T> out(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i)
        ov[i] = T(1) / (T(1) + std::exp(-av[i]));
    detail::check_finite(out, "sigmoid");
    if (a.requires_grad()) {
        auto an = a.node();
        auto on = out.node();
        on->requires_grad = true;
        on->parents = {an};
        on->backward = [an, ov = out.data()](Node<T>& o) {
            an->ensure_grad();
            for (std::size_t i = 0; i < o.grad.size(); ++i)
                an->grad[i] += o.grad[i] * ov[i] * (T(1) - ov[i]);
        };
    }
    return out;
}

// Row-wise softmax over the last axis of a 2-d tensor.
template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& a) {
    if (a.ndim() != 2) throw ShapeError("softmax expects a 2-d tensor, got " + shape_str(a.shape()));
    const std::size_t R = a.dim(0), C = a.dim(1);
    if (R == 0 || C == 0) throw ShapeError("softmax on empty tensor " + shape_str(a.shape()));
    TensorT<T> out(a.shape());
    for (std::size_t r = 0; r < R; ++r) {
        const T* in = a.data().data() + r * C;
        T* o = out.data().data() + r * C;
        T mx = in[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, in[c]);
        T sum = 0;
        for (std::size_t c = 0; c < C; ++c) {
            o[c] = std::exp(in[c] - mx);
            sum += o[c];
        }
        for (std::size_t c = 0; c < C; ++c) o[c] /= sum;
    }
    detail::check_finite(out, "softmax");
    if (a.requires_grad()) {
        auto an = a.node();
        auto on = out.node();
        on->requires_grad = true;
        on->parents = {an};
        on->backward = [an, R, C](Node<T>& o) {
            an->ensure_grad();
            for (std::size_t r = 0; r < R; ++r) {
                const T* y = o.value.data() + r * C;
                const T* gy = o.grad.data() + r * C;
                T dot = 0;
                for (std::size_t c = 0; c < C; ++c) dot += y[c] * gy[c];
                T* gx = an->grad.data() + r * C;
                for (std::size_t c = 0; c < C; ++c) gx[c] += y[c] * (gy[c] - dot);
            }
        };
    }
    return out;
}

template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
    if (a.numel() == 0) throw ShapeError("sum of empty tensor");
    T s = std::accumulate(a.data().begin(), a.data().end(), T(0));
    TensorT<T> out = TensorT<T>::scalar(s);
    if (a.requires_grad()) {
        auto an = a.node();
        auto on = out.node();
        on->requires_grad = true;
        on->parents = {an};
        on->backward = [an](Node<T>& o) {
            an->ensure_grad();
            for (auto& g : an->grad) g += o.grad[0];
        };
    }
    return out;
}

template <typename T>
TensorT<T> mean(const TensorT<T>& a) {
    return scalar_mul(sum(a), T(1) / static_cast<T>(a.numel()));
}

// Mean squared error over all elements.
template <typename T>
TensorT<T> l2_loss(const TensorT<T>& pred, const TensorT<T>& target) {
    if (pred.shape() != target.shape())
        throw ShapeError("l2_loss shape mismatch: " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
    auto d = sub(pred, target);
    return mean(mul(d, d));
}

// -(y log p + (1-y) log(1-p)), averaged; p clamped to [eps, 1-eps].
template <typename T>
TensorT<T> binary_cross_entropy(const TensorT<T>& p, const TensorT<T>& label) {
    if (p.shape() != label.shape())
        throw ShapeError("binary_cross_entropy shape mismatch: " + shape_str(p.shape()) + " vs " +
                         shape_str(label.shape()));
    if (p.numel() == 0) throw ShapeError("binary_cross_entropy on empty tensor");
    constexpr T eps = T(1e-7);
    const std::size_t n = p.numel();
    TensorT<T> out({1});
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        T pc = std::clamp(p.data()[i], eps, T(1) - eps);
        T y = label.data()[i];
        acc += -(y * std::log(pc) + (T(1) - y) * std::log(T(1) - pc));
    }
    out.data()[0] = acc / static_cast<T>(n);
    detail::check_finite(out, "binary_cross_entropy");
    if (p.requires_grad() || label.requires_grad()) {
        auto pn = p.node();
        auto ln = label.node();
        auto on = out.node();
        on->requires_grad = true;
        on->parents = {pn, ln};
        on->backward = [pn, ln, n](Node<T>& o) {
            constexpr T eps = T(1e-7);
            const T g = o.grad[0] / static_cast<T>(n);
            if (pn->requires_grad) {
                pn->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    T pc = std::clamp(pn->value[i], eps, T(1) - eps);
                    if (pn->value[i] > eps && pn->value[i] < T(1) - eps) {
                        T y = ln->value[i];
                        pn->grad[i] += g * (-(y / pc) + (T(1) - y) / (T(1) - pc));
                    }
                }
            }
            if (ln->requires_grad) {
                ln->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) {
                    T pc = std::clamp(pn->value[i], eps, T(1) - eps);
                    ln->grad[i] += g * (std::log(T(1) - pc) - std::log(pc));
                }
            }
        };
    }
    return out;
}

// Column-wise concatenation of 2-d tensors with equal row counts.
template <typename T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols of zero tensors");
    const std::size_t R = parts[0].dim(0);
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != R)
            throw ShapeError("concat_cols: row count mismatch at " + shape_str(p.shape()));
        total += p.dim(1);
    }
    TensorT<T> out({R, total});
    std::size_t col = 0;
    bool needs = false;
    for (const auto& p : parts) {
        const std::size_t C = p.dim(1);
        for (std::size_t r = 0; r < R; ++r)
            std::copy_n(p.data().begin() + r * C, C, out.data().begin() + r * total + col);
        col += C;
        needs = needs || p.requires_grad();
    }
    if (needs) {
        auto on = out.node();
        on->requires_grad = true;
        std::vector<std::shared_ptr<Node<T>>> nodes;
        for (const auto& p : parts) nodes.push_back(p.node());
        on->parents = nodes;
        on->backward = [nodes, R, total](Node<T>& o) {
            std::size_t col2 = 0;
            for (auto& n : nodes) {
                const std::size_t C = n->value.size() / R;
                if (n->requires_grad) {
                    n->ensure_grad();
                    for (std::size_t r = 0; r < R; ++r)
                        for (std::size_t c = 0; c < C; ++c)
                            n->grad[r * C + c] += o.grad[r * total + col2 + c];
                }
                col2 += C;
            }
        };
    }
    return out;
}

// Per-channel bias for [C,H,W] or [B,C,H,W] activations.
template <typename T>
TensorT<T> add_channel_bias(const TensorT<T>& x, const TensorT<T>& b) {
    if (x.ndim() != 3 && x.ndim() != 4)
        throw ShapeError("add_channel_bias expects 3-d or 4-d input, got " + shape_str(x.shape()));
    const std::size_t C = x.dim(x.ndim() - 3);
    if (b.numel() != C)
        throw ShapeError("add_channel_bias: bias " + shape_str(b.shape()) + " vs channels " +
                         std::to_string(C));
    const std::size_t HW = x.dim(x.ndim() - 2) * x.dim(x.ndim() - 1);
    const std::size_t B = x.numel() / (C * HW);
    TensorT<T> out(x.shape());
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const T bc = b.data()[c];
            const std::size_t base = (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) out.data()[base + i] = x.data()[base + i] + bc;
        }
    if (x.requires_grad() || b.requires_grad()) {
        auto xn = x.node();
        auto bn = b.node();
        auto on = out.node();
        on->requires_grad = true;
        on->parents = {xn, bn};
        on->backward = [xn, bn, B, C, HW](Node<T>& o) {
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t n = 0; n < B; ++n)
                    for (std::size_t c = 0; c < C; ++c) {
                        const std::size_t base = (n * C + c) * HW;
                        T acc = 0;
                        for (std::size_t i = 0; i < HW; ++i) acc += o.grad[base + i];
                        bn->grad[c] += acc;
                    }
            }
        };
    }
    return out;
}

// Reverse-mode sweep from a scalar loss. Gradients accumulate across calls
// until explicitly zeroed; the optimizer zeroes them after each step.
template <typename T>
void backward(const TensorT<T>& loss) {
    if (loss.numel() != 1)
        throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    auto root = loss.node();
    if (!root->backward && !root->requires_grad)
        throw Error("backward on a detached loss (no recorded operations reach it)");

    // iterative post-order DFS
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
}

}  // namespace radn
