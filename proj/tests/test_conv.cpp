// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include "radn/conv.hpp"
#include "radn/gradcheck.hpp"

using radn::Tensor;
using D = radn::TensorT<double>;

TEST_CASE("all-ones 3x3 kernel on all-ones input: center value 9") {
    Tensor x = Tensor::full({1, 3, 3}, 1.0f);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
    auto y = radn::conv2d(x, w, 1, 1);
    REQUIRE(y.shape() == radn::Shape{1, 3, 3});
    CHECK(y.data()[4] == 9.0f);  // center
    CHECK(y.data()[0] == 4.0f);  // corner sees a 2x2 window
}

TEST_CASE("Dirac kernel reproduces the input") {
    radn::Rng rng(2);
    Tensor x({2, 5, 5});
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
    Tensor w({2, 2, 3, 3});
    // each output channel passes through its own input channel
    w.data()[(0 * 2 + 0) * 9 + 4] = 1.0f;
    w.data()[(1 * 2 + 1) * 9 + 4] = 1.0f;
    auto y = radn::conv2d(x, w, 1, 1);
    CHECK(y.data() == x.data());
}

TEST_CASE("forward matches the naive 6-loop oracle on 100 random cases") {
    radn::Rng rng(42);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t C = 1 + rng.below(3);
        const std::size_t Cout = 1 + rng.below(3);
        const std::size_t k = rng.below(2) ? 3 : 1;
        const std::size_t H = k + rng.below(5);
        const std::size_t W = k + rng.below(5);
        const std::size_t stride = 1 + rng.below(2);
        const std::size_t pad = rng.below(k == 3 ? 2 : 1);
        Tensor x({C, H, W});
        for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
        Tensor w({Cout, C, k, k});
        for (auto& v : w.data()) v = static_cast<float>(rng.uniform(-1, 1));
        auto fast = radn::conv2d(x, w, stride, pad);
        auto naive = radn::conv2d_naive(x, w, stride, pad);
        REQUIRE(fast.shape() == naive.shape());
        for (std::size_t i = 0; i < fast.numel(); ++i)
            CHECK(std::abs(fast.data()[i] - naive.data()[i]) < 1e-6f);
    }
}

TEST_CASE("random 2x5x5 input, 3 output channels: oracle + finite differences") {
    radn::Rng rng(7);
    D x({2, 5, 5}, true), w({3, 2, 3, 3}, true);
    for (auto& v : x.data()) v = rng.uniform(-1, 1);
    for (auto& v : w.data()) v = rng.uniform(-1, 1);
    auto fast = radn::conv2d(x, w, 1, 1);
    auto naive = radn::conv2d_naive(x.detach(), w.detach(), 1, 1);
    for (std::size_t i = 0; i < fast.numel(); ++i)
        CHECK(std::abs(fast.data()[i] - naive.data()[i]) < 1e-6);
    const double err = radn::check_gradients({&x, &w}, [&] {
        auto y = radn::conv2d(x, w, 1, 1);
        return radn::sum(radn::mul(y, y));
    });
    CHECK(err < 1e-4);
}

TEST_CASE("batched conv equals per-sample conv") {
    radn::Rng rng(9);
    Tensor x({3, 2, 6, 6});
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
    Tensor w({4, 2, 3, 3});
    for (auto& v : w.data()) v = static_cast<float>(rng.uniform(-1, 1));
    auto y = radn::conv2d(x, w, 2, 1);
    REQUIRE(y.shape() == radn::Shape{3, 4, 3, 3});
    for (std::size_t n = 0; n < 3; ++n) {
        Tensor xn({2, 6, 6});
        std::copy_n(x.data().data() + n * 72, 72, xn.data().data());
        auto yn = radn::conv2d(xn, w, 2, 1);
        for (std::size_t i = 0; i < yn.numel(); ++i)
            CHECK(std::abs(y.data()[n * yn.numel() + i] - yn.data()[i]) < 1e-6f);
    }
}

TEST_CASE("stride-2 output sizing and non-positive output error") {
    Tensor x({1, 8, 8});
    Tensor w({1, 1, 3, 3});
    auto y = radn::conv2d(x, w, 2, 1);
    CHECK(y.shape() == radn::Shape{1, 4, 4});
    Tensor tiny({1, 1, 1});
    Tensor big({1, 1, 3, 3});
    CHECK_THROWS_AS(radn::conv2d(tiny, big, 1, 0), radn::ShapeError);
    CHECK_THROWS_AS(radn::conv2d(x, w, 0, 1), radn::ShapeError);
}

TEST_CASE("channel mismatch error") {
    Tensor x({2, 4, 4});
    Tensor w({1, 3, 3, 3});
    CHECK_THROWS_AS(radn::conv2d(x, w, 1, 1), radn::ShapeError);
}
