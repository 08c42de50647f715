// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "radn/attention.hpp"
#include "radn/gradcheck.hpp"

using radn::Tensor;

namespace {

radn::AttentionWeightsT<float> random_weights(std::size_t d, radn::Rng& rng) {
    auto make = [&] {
        Tensor t({d, d});
        for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1, 1));
        return t;
    };
    return {make(), make(), make(), make()};
}

}  // namespace

TEST_CASE("attention rows are stochastic over 100 random inputs") {
    radn::Rng rng(1);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 1 + rng.below(6);
        const std::size_t d = 2 + rng.below(5);
        Tensor x({n, d});
        for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-2, 2));
        auto w = random_weights(d, rng);
        auto att = radn::attention_matrix(x, w);
        REQUIRE(att.shape() == radn::Shape{n, n});
        for (std::size_t i = 0; i < n; ++i) {
            float row = 0;
            for (std::size_t j = 0; j < n; ++j) {
                const float v = att.data()[i * n + j];
                CHECK(v > 0.0f);
                row += v;
            }
            CHECK(row == Catch::Approx(1.0f).margin(1e-6));
        }
    }
}

TEST_CASE("permutation equivariance") {
    radn::Rng rng(2);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = 2 + rng.below(5);
        const std::size_t d = 3;
        Tensor x({n, d});
        for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-2, 2));
        auto w = random_weights(d, rng);
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        Tensor px({n, d});
        for (std::size_t i = 0; i < n; ++i)
            std::copy_n(x.data().data() + perm[i] * d, d, px.data().data() + i * d);
        auto z = radn::patch_attention(x, w);
        auto pz = radn::patch_attention(px, w);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
                CHECK(std::abs(pz.data()[i * d + j] - z.data()[perm[i] * d + j]) < 1e-5f);
    }
}

TEST_CASE("N=1 closed form: Z = W_Z W_V x + x") {
    radn::Rng rng(3);
    const std::size_t d = 4;
    Tensor x({1, d});
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
    auto w = random_weights(d, rng);
    auto z = radn::patch_attention(x, w);
    // attention matrix is [[1]], so Y = V = x W_V^T, Z = Y W_Z^T + x
    auto expect =
        radn::add(radn::matmul(radn::matmul(x, radn::transpose2d(w.wv)), radn::transpose2d(w.wz)),
                  x);
    for (std::size_t i = 0; i < d; ++i)
        CHECK(std::abs(z.data()[i] - expect.data()[i]) < 1e-6f);
}

TEST_CASE("N=2 hand oracle evaluates the three equations step by step") {
    const std::size_t d = 2;
    Tensor x({2, d});
    x.data() = {1.0f, 0.0f, 0.0f, 2.0f};
    Tensor wq({d, d}), wk({d, d}), wv({d, d}), wz({d, d});
    wq.data() = {1, 0, 0, 1};
    wk.data() = {0, 1, 1, 0};
    wv.data() = {2, 0, 0, 2};
    wz.data() = {1, 1, 0, 1};
    radn::AttentionWeightsT<float> w{wq, wk, wv, wz};

    // hand evaluation (double):
    // Q = X Wq^T = [[1,0],[0,2]]; K = X Wk^T = [[0,1],[2,0]]; V = 2X
    // logits = Q K^T / sqrt(2) = [[0,2],[2,0]] / sqrt(2)
    const double l = 2.0 / std::sqrt(2.0);
    const double e0 = std::exp(0.0), el = std::exp(l);
    const double a01 = el / (e0 + el);  // row 0: [1-a01, a01]
    const double a00 = 1.0 - a01;
    // row 1 mirrors: [a01, a00]
    // V rows: v0 = (2,0), v1 = (0,4)
    const double y00 = a00 * 2.0, y01 = a01 * 4.0;
    const double y10 = a01 * 2.0, y11 = a00 * 4.0;
    // Z = Y Wz^T + X with Wz = [[1,1],[0,1]] -> z_i = (y0 + y1, y1) + x_i
    const double z00 = y00 + y01 + 1.0, z01 = y01 + 0.0;
    const double z10 = y10 + y11 + 0.0, z11 = y11 + 2.0;

    auto z = radn::patch_attention(x, w);
    CHECK(z.data()[0] == Catch::Approx(z00).margin(1e-5));
    CHECK(z.data()[1] == Catch::Approx(z01).margin(1e-5));
    CHECK(z.data()[2] == Catch::Approx(z10).margin(1e-5));
    CHECK(z.data()[3] == Catch::Approx(z11).margin(1e-5));
}

TEST_CASE("zero W_Z makes the block an exact identity") {
    radn::Rng rng(5);
    Tensor x({3, 4});
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
    auto w = random_weights(4, rng);
    w.wz = Tensor({4, 4});  // zeros
    auto z = radn::patch_attention(x, w);
    CHECK(z.data() == x.data());
}

TEST_CASE("d_k mismatch is rejected") {
    Tensor x({2, 3});
    radn::Rng rng(6);
    auto w = random_weights(4, rng);
    CHECK_THROWS_AS(radn::patch_attention(x, w), radn::ShapeError);
}

TEST_CASE("attention gradients match finite differences") {
    radn::Rng rng(7);
    using D = radn::TensorT<double>;
    D x({3, 3}, true), wq({3, 3}, true), wk({3, 3}, true), wv({3, 3}, true), wz({3, 3}, true);
    for (auto* t : {&x, &wq, &wk, &wv, &wz})
        for (auto& v : t->data()) v = rng.uniform(-1, 1);
    const double err = radn::check_gradients({&x, &wq, &wk, &wv, &wz}, [&] {
        radn::AttentionWeightsT<double> w{wq, wk, wv, wz};
        auto z = radn::patch_attention(x, w);
        return radn::sum(radn::mul(z, z));
    });
    CHECK(err < 1e-4);
}
