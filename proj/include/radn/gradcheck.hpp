// SPDX-License-Identifier: Apache-2.0
//
// Central-difference gradient verification on double-precision tensors.
// Every differentiable op gets a suite row; the same machinery backs the
// unit tests and the `gradcheck` CLI command.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "radn/model.hpp"
#include "radn/train.hpp"

namespace radn {

// Max relative error between analytic gradients and central differences over
// every element of every listed input. `make_loss` must rebuild the graph
// from the inputs' current values and return a scalar.
template <typename F>
double check_gradients(const std::vector<TensorT<double>*>& inputs, F&& make_loss,
                       double h = 1e-5) {
    for (auto* t : inputs) t->zero_grad();
    {
        auto loss = make_loss();
        backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    for (auto* t : inputs) analytic.push_back(t->node()->grad);

    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto& data = inputs[i]->data();
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double saved = data[j];
            data[j] = saved + h;
            const double fp = make_loss().item();
            data[j] = saved - h;
            const double fm = make_loss().item();
            data[j] = saved;
            const double fd = (fp - fm) / (2.0 * h);
            const double g = analytic[i][j];
            const double denom = std::max({1.0, std::abs(fd), std::abs(g)});
            worst = std::max(worst, std::abs(fd - g) / denom);
        }
    }
    return worst;
}

struct GradCheckRow {
    std::string op;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

namespace detail {

inline TensorT<double> gc_random(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    TensorT<double> t(std::move(shape), true);
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

inline ModelConfig gc_toy_config(Variant v) {
    ModelConfig cfg;
    cfg.variant = v;
    cfg.stage_channels = {4, 8};
    cfg.patch_size = 4;
    cfg.d_k = 8;
    cfg.deform_stage = 1;
    cfg.head_hidden = 8;
    return cfg;
}

}  // namespace detail

// Finite-difference suite at toy width. Per-op tolerance 1e-4, end-to-end
// 1e-3.
inline std::vector<GradCheckRow> run_gradcheck(Variant variant, std::uint64_t seed) {
    std::vector<GradCheckRow> rows;
    Rng rng(seed);
    auto add_row = [&](const std::string& op, double err, double tol) {
        rows.push_back({op, err, tol, err < tol});
    };

    {
        auto a = detail::gc_random({3, 4}, rng);
        auto b = detail::gc_random({4, 5}, rng);
        auto c = detail::gc_random({3, 5}, rng);
        auto err = check_gradients({&a, &b, &c}, [&] {
            auto y = mul(relu(matmul(a, b)), c);
            return sum(add(y, sigmoid(div(c, add_scalar(mul(c, c), 1.0)))));
        });
        add_row("elementwise+matmul", err, 1e-4);
    }
    {
        auto x = detail::gc_random({2, 3, 6, 6}, rng);
        auto w = detail::gc_random({4, 3, 3, 3}, rng);
        auto err = check_gradients({&x, &w}, [&] {
            auto y = conv2d(x, w, 2, 1);
            return sum(mul(y, y));
        });
        add_row("conv2d", err, 1e-4);
    }
    {
        auto fmap = detail::gc_random({3, 5, 5}, rng);
        std::vector<TensorT<double>> ys, xs;
        std::vector<TensorT<double>*> inputs{&fmap};
        for (int i = 0; i < 4; ++i) {
            ys.push_back(TensorT<double>::scalar(rng.uniform(0.3, 3.4), true));
            xs.push_back(TensorT<double>::scalar(rng.uniform(0.3, 3.4), true));
        }
        for (auto& t : ys) inputs.push_back(&t);
        for (auto& t : xs) inputs.push_back(&t);
        auto err = check_gradients(inputs, [&] {
            TensorT<double> acc = TensorT<double>::scalar(0.0);
            for (int i = 0; i < 4; ++i) {
                auto s = bilinear_sample(fmap, ys[i], xs[i]);
                acc = add(acc, sum(mul(s, s)));
            }
            return acc;
        });
        add_row("bilinear_sample", err, 1e-4);
    }
    {
        auto fr = detail::gc_random({1, 2, 5, 5}, rng);
        auto fd = detail::gc_random({1, 2, 5, 5}, rng);
        auto ow = detail::gc_random({18, 2, 3, 3}, rng, -0.1, 0.1);
        auto wr = detail::gc_random({2, 2, 3, 3}, rng);
        auto wd = detail::gc_random({2, 2, 3, 3}, rng);
        auto err = check_gradients({&fr, &fd, &ow, &wr, &wd}, [&] {
            auto offsets = conv2d(fr, ow, 1, 1);
            auto [or_, od] = ref_deform_conv(fr, fd, offsets, wr, wd, 0.0);
            return add(sum(mul(or_, or_)), sum(mul(od, od)));
        });
        add_row("ref_deform_conv", err, 1e-4);
    }
    {
        auto x = detail::gc_random({3, 4}, rng);
        auto wq = detail::gc_random({4, 4}, rng);
        auto wk = detail::gc_random({4, 4}, rng);
        auto wv = detail::gc_random({4, 4}, rng);
        auto wz = detail::gc_random({4, 4}, rng);
        auto err = check_gradients({&x, &wq, &wk, &wv, &wz}, [&] {
            AttentionWeightsT<double> aw{wq, wk, wv, wz};
            auto z = patch_attention(x, aw);
            return sum(mul(z, z));
        });
        add_row("patch_attention", err, 1e-4);
    }
    {
        const auto cfg = detail::gc_toy_config(Variant::wresnet);
        auto params = build_model<double>(cfg, rng.next_u64());
        auto fr = detail::gc_random({3, cfg.d_k}, rng);
        auto fd = detail::gc_random({3, cfg.d_k}, rng);
        std::vector<TensorT<double>*> inputs{&fr, &fd};
        for (auto& [name, t] : params.entries())
            if (name.rfind("head.", 0) == 0) inputs.push_back(&t);
        auto err = check_gradients(inputs, [&] {
            auto ps = score_head(params, cfg, fr, fd);
            return mul(ps.qhat, ps.qhat);
        });
        add_row("score_head", err, 1e-4);
    }
    {
        auto x = detail::gc_random({6}, rng);
        auto labels = detail::gc_random({6}, rng, 0.05, 0.95);
        auto err = check_gradients({&x, &labels}, [&] {
            return add(binary_cross_entropy(sigmoid(x), labels), l2_loss(x, labels));
        });
        add_row("losses", err, 1e-4);
    }
    {
        const auto cfg = detail::gc_toy_config(variant);
        auto params = build_model<double>(cfg, rng.next_u64());
        // move the zero-initialized offsets off the bilinear kernel's integer
        // grid points, where its derivative is discontinuous and central
        // differences are invalid
        for (const char* name : {"deform.offset.w", "deform.offset.b"})
            if (params.has(name))
                for (auto& v : params.at(name).data()) v = rng.uniform(-0.05, 0.05);
        auto pr = detail::gc_random({2, 3, cfg.patch_size, cfg.patch_size}, rng, 0.0, 1.0);
        auto pd = detail::gc_random({2, 3, cfg.patch_size, cfg.patch_size}, rng, 0.0, 1.0);
        std::vector<TensorT<double>*> inputs{&pr, &pd};
        for (auto& [_, t] : params.entries()) inputs.push_back(&t);
        auto err = check_gradients(inputs, [&] {
            auto [fr, fd] = extract_features(params, cfg, pr, pd);
            auto ps = score_head(params, cfg, fr, fd);
            auto d = sub(ps.qhat, TensorT<double>::scalar(0.7));
            return mul(d, d);
        }, 1e-6);
        add_row(std::string("end_to_end(") + variant_name(variant) + ")", err, 1e-3);
    }
    return rows;
}

}  // namespace radn
