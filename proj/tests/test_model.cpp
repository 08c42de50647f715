// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "radn/checkpoint.hpp"
#include "radn/gradcheck.hpp"
#include "radn/model.hpp"

using radn::Tensor;

namespace {

radn::ModelConfig toy(radn::Variant v = radn::Variant::radn) {
    auto cfg = radn::detail::gc_toy_config(v);
    return cfg;
}

radn::ImageBuffer random_image(std::size_t w, std::size_t h, std::uint64_t seed) {
    radn::Rng rng(seed);
    auto img = radn::make_image(w, h);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform(0, 1));
    return img;
}

}  // namespace

TEST_CASE("same seed builds bit-identical parameters") {
    auto a = radn::build_model<float>(toy(), 7);
    auto b = radn::build_model<float>(toy(), 7);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.entries()[i].first == b.entries()[i].first);
        CHECK(a.entries()[i].second.data() == b.entries()[i].second.data());
    }
    auto c = radn::build_model<float>(toy(), 8);
    CHECK(a.entries()[0].second.data() != c.entries()[0].second.data());
}

TEST_CASE("variant parameter sets nest by name") {
    auto w = radn::build_model<float>(toy(radn::Variant::wresnet), 1);
    auto wd = radn::build_model<float>(toy(radn::Variant::wresnet_d), 1);
    auto r = radn::build_model<float>(toy(radn::Variant::radn), 1);
    for (const auto& [name, _] : w.entries()) CHECK(wd.has(name));
    for (const auto& [name, _] : wd.entries()) CHECK(r.has(name));
    CHECK(!w.has("deform.wr"));
    CHECK(wd.has("deform.wr"));
    CHECK(!wd.has("attn.wq"));
    CHECK(r.has("attn.wq"));
}

TEST_CASE("default config trunk collapses a 32x32 patch to d_k x 1 x 1") {
    radn::ModelConfig cfg;  // [32,64,128,256,512], patch 32
    cfg.validate();
    auto p = radn::build_model<float>(cfg, 3);
    Tensor pr({1, 3, 32, 32}), pd({1, 3, 32, 32});
    radn::Rng rng(5);
    for (auto& v : pr.data()) v = static_cast<float>(rng.uniform(0, 1));
    for (auto& v : pd.data()) v = static_cast<float>(rng.uniform(0, 1));
    // trace the trunk stage by stage: each stage halves the spatial size
    radn::TensorT<float> f = pr;
    std::size_t spatial = 32;
    for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s) {
        f = radn::detail::residual_block(p, "stage" + std::to_string(s + 1) + ".", f, 2);
        spatial /= 2;
        REQUIRE(f.shape() == radn::Shape{1, cfg.stage_channels[s], spatial, spatial});
    }
    CHECK(f.shape() == radn::Shape{1, 512, 1, 1});

    radn::ModelConfig bad;
    bad.patch_size = 48;  // not a power-of-two multiple
    CHECK_THROWS_AS(bad.validate(), radn::DataError);
    radn::ModelConfig bad2;
    bad2.d_k = 256;
    CHECK_THROWS_AS(bad2.validate(), radn::DataError);
}

TEST_CASE("identical inputs through the shared trunk give identical features") {
    auto cfg = toy(radn::Variant::wresnet);
    auto p = radn::build_model<float>(cfg, 11);
    Tensor x({3, 3, cfg.patch_size, cfg.patch_size});
    radn::Rng rng(6);
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform(0, 1));
    auto [fr, fd] = radn::extract_features(p, cfg, x, x);
    CHECK(fr.data() == fd.data());

    // swapping ref and dist swaps the outputs for the symmetric variant
    Tensor y({3, 3, cfg.patch_size, cfg.patch_size});
    for (auto& v : y.data()) v = static_cast<float>(rng.uniform(0, 1));
    auto [a, b] = radn::extract_features(p, cfg, x, y);
    auto [c, d] = radn::extract_features(p, cfg, y, x);
    CHECK(a.data() == d.data());
    CHECK(b.data() == c.data());
}

TEST_CASE("zero-init deform and attention leave init features equal to wresnet's") {
    Tensor x({2, 3, 4, 4}), y({2, 3, 4, 4});
    radn::Rng rng(8);
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform(0, 1));
    for (auto& v : y.data()) v = static_cast<float>(rng.uniform(0, 1));

    // wresnet_d with zero offsets behaves as a plain conv at the deform
    // stage; radn additionally starts with W_Z = 0, so at init the features
    // only differ by the deform stage convolution itself
    auto cfg_d = toy(radn::Variant::wresnet_d);
    auto p_d = radn::build_model<float>(cfg_d, 13);
    auto [fr_d, fd_d] = radn::extract_features(p_d, cfg_d, x, y);

    auto cfg_r = toy(radn::Variant::radn);
    auto p_r = radn::build_model<float>(cfg_r, 13);
    auto [fr_r, fd_r] = radn::extract_features(p_r, cfg_r, x, y);
    CHECK(fr_r.data() == fr_d.data());  // attention starts as identity
    CHECK(fd_r.data() == fd_d.data());

    // zero offsets: deform stage equals conv2d with the same weights
    Tensor maps({4, 5, 5}), w({4, 4, 3, 3});
    for (auto& v : maps.data()) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : w.data()) v = static_cast<float>(rng.uniform(-1, 1));
    Tensor zero_off({18, 5, 5});
    auto dc = radn::deform_conv(maps, zero_off, w);
    auto cc = radn::conv2d(maps, w, 1, 1);
    for (std::size_t i = 0; i < dc.numel(); ++i)
        CHECK(std::abs(dc.data()[i] - cc.data()[i]) < 1e-6f);
}

TEST_CASE("score head implements the weighted average") {
    // uniform weights -> mean; asymmetric hand case; N=1 passthrough
    auto qhat = [](std::vector<float> w, std::vector<float> s) {
        double num = 0, den = 0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            num += w[i] * s[i];
            den += w[i];
        }
        return num / den;
    };
    CHECK(qhat({2, 2, 2}, {1, 5, 9}) == Catch::Approx(5.0));
    CHECK(qhat({1, 3}, {2, 4}) == Catch::Approx(3.5));
    CHECK(qhat({0.123f}, {7.5f}) == Catch::Approx(7.5));

    // the network head obeys the same identities: craft features so the
    // weight branch is constant (uniform weights) and verify qhat == mean(s)
    auto cfg = toy();
    auto p = radn::build_model<float>(cfg, 17);
    // zero the weight-branch so raw weights are the bias: uniform across patches
    for (auto& v : p.at("head.weight.fc1.w").data()) v = 0.0f;
    Tensor fr({3, cfg.d_k}), fd({3, cfg.d_k});
    radn::Rng rng(18);
    for (auto& v : fr.data()) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : fd.data()) v = static_cast<float>(rng.uniform(-1, 1));
    auto ps = radn::score_head(p, cfg, fr, fd);
    double mean_s = 0;
    for (float s : ps.scores.data()) mean_s += s;
    mean_s /= 3.0;
    CHECK(ps.qhat.item() == Catch::Approx(mean_s).margin(1e-6));
    // weights strictly positive with the epsilon floor
    for (float w : ps.weights.data()) CHECK(w >= cfg.weight_epsilon);

    // N=1: qhat equals the single score regardless of its weight
    Tensor fr1({1, cfg.d_k}), fd1({1, cfg.d_k});
    for (auto& v : fr1.data()) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : fd1.data()) v = static_cast<float>(rng.uniform(-1, 1));
    auto p2 = radn::build_model<float>(cfg, 19);
    auto ps1 = radn::score_head(p2, cfg, fr1, fd1);
    CHECK(ps1.qhat.item() == Catch::Approx(ps1.scores.data()[0]).margin(1e-6));
}

TEST_CASE("predict_image grid and determinism") {
    auto cfg = toy();
    auto p = radn::build_model<float>(cfg, 23);
    auto ref = random_image(64, 64, 1);
    auto dist = random_image(64, 64, 2);
    auto rec = radn::predict_image(p, cfg, ref, dist, radn::PredictMode::eval_grid);
    // 64/4 = 16x16 grid of 4-pixel patches at toy patch size
    CHECK(rec.coords.size() == (64 / cfg.patch_size) * (64 / cfg.patch_size));
    auto rec2 = radn::predict_image(p, cfg, ref, dist, radn::PredictMode::eval_grid);
    CHECK(rec.qhat == rec2.qhat);  // bit-exact repeat

    auto r3 = radn::predict_image(p, cfg, ref, dist, radn::PredictMode::train_random, 5, 8);
    auto r4 = radn::predict_image(p, cfg, ref, dist, radn::PredictMode::train_random, 5, 8);
    CHECK(r3.coords == r4.coords);

    // patch-order invariance of the weighted mean: evaluate twice with
    // shuffled random coords drawn from different seeds - not comparable;
    // instead check the head directly under row permutation
    Tensor fr({4, cfg.d_k}), fd({4, cfg.d_k});
    radn::Rng rng(31);
    for (auto& v : fr.data()) v = static_cast<float>(rng.uniform(-1, 1));
    for (auto& v : fd.data()) v = static_cast<float>(rng.uniform(-1, 1));
    auto base = radn::score_head(p, cfg, fr, fd).qhat.item();
    std::vector<std::size_t> perm{2, 0, 3, 1};
    Tensor pfr({4, cfg.d_k}), pfd({4, cfg.d_k});
    for (std::size_t i = 0; i < 4; ++i) {
        std::copy_n(fr.data().data() + perm[i] * cfg.d_k, cfg.d_k,
                    pfr.data().data() + i * cfg.d_k);
        std::copy_n(fd.data().data() + perm[i] * cfg.d_k, cfg.d_k,
                    pfd.data().data() + i * cfg.d_k);
    }
    CHECK(radn::score_head(p, cfg, pfr, pfd).qhat.item() == Catch::Approx(base).margin(1e-5));
}

TEST_CASE("weight map quartile coloring") {
    radn::ScoreRecord rec;
    rec.patch_size = 32;
    rec.image_width = rec.image_height = 64;
    rec.coords = {{0, 0}, {0, 32}, {32, 0}, {32, 32}};
    rec.weights = {1, 2, 3, 4};
    rec.scores = {0, 0, 0, 0};
    auto img = radn::render_weight_map(rec);
    REQUIRE(img.width == 64);
    REQUIRE(img.height == 64);
    auto color_at = [&](std::size_t y, std::size_t x) {
        return std::array<float, 3>{img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)};
    };
    CHECK(color_at(0, 0) == std::array<float, 3>{0, 0, 1});    // blue lowest
    CHECK(color_at(0, 40) == std::array<float, 3>{0, 1, 0});   // green
    CHECK(color_at(40, 0) == std::array<float, 3>{1, 1, 0});   // yellow
    CHECK(color_at(40, 40) == std::array<float, 3>{1, 0, 0});  // red highest

    rec.weights = {5, 5, 5, 5};  // uniform -> single color, lowest
    auto uni = radn::render_weight_map(rec);
    for (std::size_t y = 0; y < 64; y += 16)
        for (std::size_t x = 0; x < 64; x += 16)
            CHECK(std::array<float, 3>{uni.at(y, x, 0), uni.at(y, x, 1), uni.at(y, x, 2)} ==
                  std::array<float, 3>{0, 0, 1});

    radn::ScoreRecord empty;
    CHECK_THROWS_AS(radn::render_weight_map(empty), radn::DataError);
}

TEST_CASE("checkpoint round-trip reproduces inference byte-exactly") {
    auto cfg = toy();
    radn::RunConfig rc;
    rc.stage_channels = cfg.stage_channels;
    rc.patch_size = cfg.patch_size;
    rc.d_k = cfg.d_k;
    rc.head_hidden = cfg.head_hidden;
    rc.deform_stage = cfg.deform_stage;
    auto p = radn::build_model<float>(cfg, 29);
    radn::Checkpoint ck;
    ck.epoch = 17;
    ck.phase = radn::TrainPhase::regression;
    ck.config_text = radn::serialize_config(rc);
    ck.params = p.detached();

    const std::string path =
        (std::filesystem::temp_directory_path() / ("radn_ck_" + std::to_string(::getpid()) + ".ckpt"))
            .string();
    radn::save_checkpoint(ck, path);
    auto back = radn::load_checkpoint(path);
    CHECK(back.epoch == 17);
    CHECK(back.phase == radn::TrainPhase::regression);
    CHECK(back.config_text == ck.config_text);
    REQUIRE(back.params.size() == p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(back.params.entries()[i].first == p.entries()[i].first);
        CHECK(back.params.entries()[i].second.data() == p.entries()[i].second.data());
    }

    // byte-identical re-save
    const std::string path2 = path + "2";
    radn::save_checkpoint(back, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    // identical predictions from the reloaded parameters
    auto ref = random_image(64, 64, 3);
    auto dist = random_image(64, 64, 4);
    auto r1 = radn::predict_image(p, cfg, ref, dist, radn::PredictMode::eval_grid);
    auto r2 = radn::predict_image(back.params, cfg, ref, dist, radn::PredictMode::eval_grid);
    CHECK(r1.qhat == r2.qhat);
    CHECK(r1.weights == r2.weights);

    std::filesystem::remove(path);
    std::filesystem::remove(path2);

    CHECK_THROWS_AS(radn::load_checkpoint("/nonexistent/x.ckpt"), radn::DataError);
}

TEST_CASE("end-to-end gradients at toy width match finite differences") {
    for (auto v : {radn::Variant::wresnet, radn::Variant::radn}) {
        auto rows = radn::run_gradcheck(v, 5);
        for (const auto& r : rows) {
            INFO(r.op);
            CHECK(r.pass);
        }
    }
}
