// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <unistd.h>

#include "radn/dataset.hpp"
#include "radn/image.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("radn_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string str(const std::string& name = "") const { return (path / name).string(); }
};

radn::ImageBuffer random_image(std::size_t w, std::size_t h, std::uint64_t seed) {
    radn::Rng rng(seed);
    auto img = radn::make_image(w, h);
    // quantized to 8-bit levels so PPM round-trips are exact
    for (auto& v : img.pixels) v = static_cast<float>(rng.below(256)) / 255.0f;
    return img;
}

double mse(const radn::ImageBuffer& a, const radn::ImageBuffer& b) {
    double acc = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.pixels.size());
}

}  // namespace

TEST_CASE("PPM round-trip is bit-identical") {
    TempDir tmp;
    auto img = random_image(64, 64, 5);
    radn::save_ppm(img, tmp.str("a.ppm"));
    auto back = radn::load_image(tmp.str("a.ppm"));
    REQUIRE(back.width == 64);
    REQUIRE(back.height == 64);
    CHECK(back.pixels == img.pixels);
}

TEST_CASE("PNG round-trip and unsupported formats") {
    TempDir tmp;
    auto img = random_image(33, 17, 6);
    radn::save_png(img, tmp.str("a.png"));
    auto back = radn::load_image(tmp.str("a.png"));
    CHECK(back.pixels == img.pixels);

    // grayscale 8-bit PNG: signature + IHDR color type 0
    {
        std::ofstream f(tmp.str("gray.png"), std::ios::binary);
        const unsigned char sig[] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
        f.write(reinterpret_cast<const char*>(sig), 8);
        const unsigned char ihdr[] = {0, 0, 0, 13, 'I', 'H', 'D', 'R', 0, 0, 0, 1, 0, 0,
                                      0, 1, 8, 0 /* gray */, 0, 0, 0, 0, 0, 0, 0};
        f.write(reinterpret_cast<const char*>(ihdr), sizeof ihdr);
    }
    CHECK_THROWS_AS(radn::load_image(tmp.str("gray.png")), radn::DataError);

    std::ofstream(tmp.str("junk.img")) << "not an image";
    CHECK_THROWS_AS(radn::load_image(tmp.str("junk.img")), radn::DataError);
    CHECK_THROWS_AS(radn::load_image(tmp.str("missing.ppm")), radn::DataError);
}

TEST_CASE("31x64 image loads but fails dataset validation") {
    TempDir tmp;
    auto small = random_image(31, 64, 7);
    radn::save_ppm(small, tmp.str("small.ppm"));
    auto ok = random_image(64, 64, 8);
    radn::save_ppm(ok, tmp.str("ok.ppm"));
    auto loaded = radn::load_image(tmp.str("small.ppm"));
    CHECK(loaded.width == 31);

    radn::DatasetManifest m;
    m.base_dir = tmp.str();
    m.records.push_back({"ok.ppm", "small.ppm", 50.0f, "g", "t"});
    CHECK_THROWS_AS(radn::validate_manifest(m), radn::DataError);
    m.records[0].dist_path = "ok.ppm";
    CHECK_NOTHROW(radn::validate_manifest(m));
}

TEST_CASE("patch sampling: alignment, counts, determinism") {
    auto ref = random_image(80, 60, 9);
    auto dist = random_image(80, 60, 10);
    auto b1 = radn::sample_patches(ref, dist, radn::SampleMode::train_random, 32, 123);
    REQUIRE(b1.count == 32);
    REQUIRE(b1.coords.size() == 32);
    auto b2 = radn::sample_patches(ref, dist, radn::SampleMode::train_random, 32, 123);
    CHECK(b1.coords == b2.coords);
    auto b3 = radn::sample_patches(ref, dist, radn::SampleMode::train_random, 32, 124);
    CHECK(b1.coords != b3.coords);

    // aligned cutting: ref patch equals manual crop at the same coordinate
    for (std::size_t i = 0; i < 3; ++i) {
        const auto c = b1.coords[i];
        for (std::size_t ch = 0; ch < 3; ++ch)
            for (std::size_t y = 0; y < 32; ++y)
                for (std::size_t x = 0; x < 32; ++x) {
                    CHECK(b1.ref[((i * 3 + ch) * 32 + y) * 32 + x] ==
                          ref.at(c.y + y, c.x + x, ch));
                    CHECK(b1.dist[((i * 3 + ch) * 32 + y) * 32 + x] ==
                          dist.at(c.y + y, c.x + x, ch));
                }
    }

    auto one = random_image(32, 32, 11);
    auto b4 = radn::sample_patches(one, one, radn::SampleMode::train_random, 5, 1);
    for (const auto& c : b4.coords) CHECK(c == radn::PatchCoord{0, 0});

    auto big = random_image(64, 32, 12);
    CHECK_THROWS_AS(radn::sample_patches(ref, big, radn::SampleMode::train_random, 4, 1),
                    radn::DataError);
}

TEST_CASE("train-mode corners are uniform (chi-square over 4 bins)") {
    auto ref = random_image(2 * 32 + 1, 2 * 32 + 1, 13);  // 2x2 corner bins of 33x33... use quadrants
    // valid corners: 34x34 grid; quadrant bins by (y<17, x<17)
    std::size_t bins[4] = {0, 0, 0, 0};
    const std::size_t draws = 10000;
    auto batch = radn::sample_patches(ref, ref, radn::SampleMode::train_random, draws, 321);
    std::size_t expect_lo_y = 17, expect_lo_x = 17;  // of 34 positions
    for (const auto& c : batch.coords) bins[(c.y < expect_lo_y ? 0 : 2) + (c.x < expect_lo_x ? 0 : 1)]++;
    const double e = draws / 4.0;
    double chi2 = 0;
    for (auto b : bins) chi2 += (b - e) * (b - e) / e;
    // chi-square with 3 dof: p > 0.001 <=> chi2 < 16.27
    CHECK(chi2 < 16.27);
}

TEST_CASE("eval grid tiling") {
    auto a = random_image(100, 100, 14);
    auto b100 = radn::sample_patches(a, a, radn::SampleMode::eval_grid, 0, 0);
    CHECK(b100.count == 9);
    auto c = random_image(64, 64, 15);
    auto b64 = radn::sample_patches(c, c, radn::SampleMode::eval_grid, 0, 0);
    REQUIRE(b64.count == 4);
    CHECK(b64.coords == std::vector<radn::PatchCoord>{{0, 0}, {0, 32}, {32, 0}, {32, 32}});
}

TEST_CASE("manifest parse-serialize identity and error reporting") {
    radn::DatasetManifest m;
    m.base_dir = ".";
    m.records.push_back({"ref/a.ppm", "dist/a_blur_1.ppm", 72.25f, "a_blur", "gaussian_blur"});
    m.records.push_back({"ref/b.ppm", "dist/b_noise_5.ppm", 23.5f, "b_noise", "gaussian_noise"});
    const std::string text = radn::serialize_manifest(m);
    auto parsed = radn::parse_manifest(text, ".");
    CHECK(radn::serialize_manifest(parsed) == text);
    REQUIRE(parsed.records.size() == 2);
    CHECK(parsed.records[1].mos == 23.5f);
    CHECK(parsed.records[0].group_id == "a_blur");

    CHECK_THROWS_AS(radn::parse_manifest("#fields: ref\tdist\tmos\tgroup\ttag\na\tb\n", "."),
                    radn::DataError);
    CHECK_THROWS_AS(radn::parse_manifest("no header\n", "."), radn::DataError);
}

TEST_CASE("distortions: determinism, severity monotonicity, warp bound") {
    auto ref = radn::synth_reference(64, 64, 21);
    for (int k = 0; k < radn::kDistortKindCount; ++k) {
        const auto kind = static_cast<radn::DistortKind>(k);
        auto [d1, m1] = radn::synth_distort(ref, kind, 3, 555);
        auto [d2, m2] = radn::synth_distort(ref, kind, 3, 555);
        CHECK(d1.pixels == d2.pixels);
        CHECK(m1 == m2);
        double prev = -1;
        for (int sev = 1; sev <= 5; ++sev) {
            auto [d, mos] = radn::synth_distort(ref, kind, sev, 555);
            const double e = mse(ref, d);
            CHECK(e >= prev);
            prev = e;
        }
    }
    CHECK_THROWS_AS(radn::synth_distort(ref, radn::DistortKind::gaussian_blur, 0, 1),
                    radn::DataError);
    CHECK_THROWS_AS(radn::synth_distort(ref, radn::DistortKind::gaussian_blur, 6, 1),
                    radn::DataError);

    // pseudo-MOS separation: worst severity always scores below best
    auto [d5, mos5] = radn::synth_distort(ref, radn::DistortKind::local_warp, 5, 77);
    auto [d1b, mos1] = radn::synth_distort(ref, radn::DistortKind::local_warp, 1, 77);
    CHECK(mos5 < mos1);
}

TEST_CASE("generator writes the documented layout, deterministically") {
    TempDir tmp;
    fs::create_directories(tmp.str("refs"));
    for (int i = 0; i < 3; ++i)
        radn::save_ppm(radn::synth_reference(64, 64, 100 + i),
                       tmp.str("refs/im" + std::to_string(i) + ".ppm"));
    auto m1 = radn::build_synthetic_manifest(tmp.str("refs"), tmp.str("out"), 10, 9);
    CHECK(m1.records.size() == 30);
    CHECK(fs::exists(tmp.str("out/manifest.tsv")));
    CHECK(fs::exists(tmp.str("out/ref/im0.ppm")));
    CHECK(fs::exists(tmp.str("out/dist/im0_gaussian_noise_1.ppm")));
    for (const auto& r : m1.records) {
        CHECK(fs::exists(fs::path(tmp.str()) / "out" / r.ref_path));
        CHECK(fs::exists(fs::path(tmp.str()) / "out" / r.dist_path));
    }
    // every group has >= 2 members at per_ref = 2 * kind count
    std::map<std::string, int> sizes;
    for (const auto& r : m1.records) sizes[r.group_id]++;
    for (const auto& [g, n] : sizes) CHECK(n >= 2);

    std::ifstream f1(tmp.str("out/manifest.tsv"));
    std::string text1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    auto m2 = radn::build_synthetic_manifest(tmp.str("refs"), tmp.str("out2"), 10, 9);
    std::ifstream f2(tmp.str("out2/manifest.tsv"));
    std::string text2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(text1 == text2);

    CHECK_THROWS_AS(radn::build_synthetic_manifest(tmp.str("nowhere"), tmp.str("o3"), 5, 1),
                    radn::DataError);
}

TEST_CASE("split by reference keeps each reference on one side") {
    TempDir tmp;
    fs::create_directories(tmp.str("refs"));
    for (int i = 0; i < 5; ++i)
        radn::save_ppm(radn::synth_reference(64, 64, 200 + i),
                       tmp.str("refs/im" + std::to_string(i) + ".ppm"));
    auto m = radn::build_synthetic_manifest(tmp.str("refs"), tmp.str("out"), 10, 3);
    auto [train, test] = radn::split_manifest_by_ref(m, 0.2, 11);
    CHECK(train.records.size() + test.records.size() == m.records.size());
    CHECK(!test.records.empty());
    for (const auto& tr : train.records)
        for (const auto& te : test.records) CHECK(tr.ref_path != te.ref_path);
}

TEST_CASE("rng uniformity and determinism") {
    radn::Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    radn::Rng c(43);
    std::size_t bins[4] = {0, 0, 0, 0};
    for (int i = 0; i < 10000; ++i) bins[c.below(4)]++;
    const double e = 2500.0;
    double chi2 = 0;
    for (auto n : bins) chi2 += (n - e) * (n - e) / e;
    CHECK(chi2 < 16.27);
}
