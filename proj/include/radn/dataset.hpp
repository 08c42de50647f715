// SPDX-License-Identifier: Apache-2.0
//
// Dataset plumbing: manifests, paired patch sampling and the synthetic
// distortion generator that stands in for a real IQA corpus at desk scale.
#pragma once

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "radn/image.hpp"

namespace radn {

constexpr std::size_t kPatchSize = 32;

struct ManifestRecord {
    std::string ref_path;   // relative to the manifest directory
    std::string dist_path;
    float mos = 0.0f;
    std::string group_id;
    std::string distortion_tag;
};

struct DatasetManifest {
    std::string base_dir;  // directory the paths are relative to
    std::vector<ManifestRecord> records;

    std::string resolve_ref(std::size_t i) const {
        return (std::filesystem::path(base_dir) / records[i].ref_path).string();
    }
    std::string resolve_dist(std::size_t i) const {
        return (std::filesystem::path(base_dir) / records[i].dist_path).string();
    }
};

struct PatchCoord {
    std::size_t y = 0;
    std::size_t x = 0;
    bool operator==(const PatchCoord&) const = default;
};

// N aligned reference/distorted patch pairs, channel-planar (CHW) per patch.
struct PatchBatch {
    std::size_t count = 0;
    std::size_t patch_size = kPatchSize;
    std::vector<float> ref;   // count*3*ps*ps
    std::vector<float> dist;
    std::vector<PatchCoord> coords;
    std::string source_id;
};

enum class SampleMode { train_random, eval_grid };

namespace detail {

inline void cut_patch(const ImageBuffer& img, std::size_t y0, std::size_t x0, std::size_t ps,
                      float* dst /* 3*ps*ps, CHW */) {
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < ps; ++y)
            for (std::size_t x = 0; x < ps; ++x)
                dst[(c * ps + y) * ps + x] = img.at(y0 + y, x0 + x, c);
}

}  // namespace detail

// Patch positions are drawn once and applied identically to both images.
// train_random draws `count` top-left corners uniformly with replacement;
// eval_grid tiles non-overlapping patches and discards remainders.
inline PatchBatch sample_patches(const ImageBuffer& ref, const ImageBuffer& dist, SampleMode mode,
                                 std::size_t count, std::uint64_t seed,
                                 std::size_t ps = kPatchSize) {
    if (ref.width != dist.width || ref.height != dist.height)
        throw DataError("patch sampling: image dimensions differ (" + std::to_string(ref.width) +
                        "x" + std::to_string(ref.height) + " vs " + std::to_string(dist.width) +
                        "x" + std::to_string(dist.height) + ")");
    if (ref.width < ps || ref.height < ps)
        throw DataError("image smaller than one " + std::to_string(ps) + "x" + std::to_string(ps) +
                        " patch");
    PatchBatch batch;
    batch.patch_size = ps;
    if (mode == SampleMode::train_random) {
        Rng rng(seed);
        const std::size_t ymax = ref.height - ps + 1;
        const std::size_t xmax = ref.width - ps + 1;
        for (std::size_t i = 0; i < count; ++i)
            batch.coords.push_back({rng.below(ymax), rng.below(xmax)});
    } else {
        for (std::size_t y = 0; y + ps <= ref.height; y += ps)
            for (std::size_t x = 0; x + ps <= ref.width; x += ps) batch.coords.push_back({y, x});
    }
    batch.count = batch.coords.size();
    batch.ref.resize(batch.count * 3 * ps * ps);
    batch.dist.resize(batch.count * 3 * ps * ps);
    for (std::size_t i = 0; i < batch.count; ++i) {
        detail::cut_patch(ref, batch.coords[i].y, batch.coords[i].x, ps,
                          batch.ref.data() + i * 3 * ps * ps);
        detail::cut_patch(dist, batch.coords[i].y, batch.coords[i].x, ps,
                          batch.dist.data() + i * 3 * ps * ps);
    }
    return batch;
}

// Split by reference image: every record of one reference lands on the same
// side, so test references are never seen in training.
inline std::pair<DatasetManifest, DatasetManifest> split_manifest_by_ref(
    const DatasetManifest& m, double test_fraction, std::uint64_t seed) {
    if (test_fraction <= 0.0 || test_fraction >= 1.0)
        throw DataError("split fraction must be in (0,1)");
    std::vector<std::string> refs;
    for (const auto& r : m.records)
        if (std::find(refs.begin(), refs.end(), r.ref_path) == refs.end())
            refs.push_back(r.ref_path);
    Rng rng(seed);
    for (std::size_t i = refs.size(); i > 1; --i) std::swap(refs[i - 1], refs[rng.below(i)]);
    std::size_t n_test = static_cast<std::size_t>(test_fraction * static_cast<double>(refs.size()));
    n_test = std::clamp<std::size_t>(n_test, 1, refs.size() - 1);
    std::vector<std::string> test_refs(refs.begin(), refs.begin() + n_test);
    DatasetManifest train, test;
    train.base_dir = test.base_dir = m.base_dir;
    for (const auto& r : m.records) {
        const bool is_test =
            std::find(test_refs.begin(), test_refs.end(), r.ref_path) != test_refs.end();
        (is_test ? test : train).records.push_back(r);
    }
    return {std::move(train), std::move(test)};
}

// ---- manifest text format -------------------------------------------------

inline const char* kManifestHeader = "#fields: ref\tdist\tmos\tgroup\ttag";

inline std::string format_mos(float mos) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(mos));
    return buf;
}

inline std::string serialize_manifest(const DatasetManifest& m) {
    std::string out = kManifestHeader;
    out += '\n';
    for (const auto& r : m.records) {
        out += r.ref_path;
        out += '\t';
        out += r.dist_path;
        out += '\t';
        out += format_mos(r.mos);
        out += '\t';
        out += r.group_id;
        out += '\t';
        out += r.distortion_tag;
        out += '\n';
    }
    return out;
}

inline DatasetManifest parse_manifest(const std::string& text, const std::string& base_dir) {
    DatasetManifest m;
    m.base_dir = base_dir;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line.rfind("#fields:", 0) == 0) {
            header_seen = true;
            continue;
        }
        if (line[0] == '#') continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (;;) {
            const std::size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() != 5)
            throw DataError("manifest line " + std::to_string(lineno) + ": expected 5 tab-separated fields, got " +
                            std::to_string(fields.size()));
        ManifestRecord r;
        r.ref_path = fields[0];
        r.dist_path = fields[1];
        try {
            r.mos = std::stof(fields[2]);
        } catch (const std::exception&) {
            throw DataError("manifest line " + std::to_string(lineno) + ": bad MOS value '" +
                            fields[2] + "'");
        }
        if (!std::isfinite(r.mos))
            throw DataError("manifest line " + std::to_string(lineno) + ": non-finite MOS");
        r.group_id = fields[3];
        r.distortion_tag = fields[4];
        m.records.push_back(std::move(r));
    }
    if (!header_seen) throw DataError("manifest missing '#fields:' header line");
    return m;
}

inline DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open manifest: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_manifest(text, std::filesystem::path(path).parent_path().string());
}

inline void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write manifest: " + path);
    f << serialize_manifest(m);
}

// Checks path resolvability, member image sizes and group/reference
// consistency. Throws DataError naming the offending record.
inline void validate_manifest(const DatasetManifest& m) {
    std::map<std::string, std::string> group_ref;
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        const auto& r = m.records[i];
        for (const std::string& p : {m.resolve_ref(i), m.resolve_dist(i)}) {
            if (!std::filesystem::exists(p))
                throw DataError("manifest record " + std::to_string(i) + ": missing file " + p);
            ImageBuffer img = load_image(p);
            if (img.width < kPatchSize || img.height < kPatchSize)
                throw DataError("manifest record " + std::to_string(i) + ": image " + p +
                                " smaller than 32x32 (" + std::to_string(img.width) + "x" +
                                std::to_string(img.height) + ")");
        }
        auto [it, inserted] = group_ref.emplace(r.group_id, r.ref_path);
        if (!inserted && it->second != r.ref_path)
            throw DataError("manifest record " + std::to_string(i) + ": group '" + r.group_id +
                            "' mixes reference images");
    }
}

// ---- synthetic distortions --------------------------------------------------

enum class DistortKind { gaussian_noise, gaussian_blur, block_jpegish, contrast_shift, local_warp };

inline const char* distort_kind_name(DistortKind k) {
    switch (k) {
        case DistortKind::gaussian_noise: return "gaussian_noise";
        case DistortKind::gaussian_blur: return "gaussian_blur";
        case DistortKind::block_jpegish: return "block_jpegish";
        case DistortKind::contrast_shift: return "contrast_shift";
        case DistortKind::local_warp: return "local_warp";
    }
    return "?";
}

inline std::optional<DistortKind> distort_kind_from_name(const std::string& s) {
    for (int i = 0; i < 5; ++i) {
        auto k = static_cast<DistortKind>(i);
        if (s == distort_kind_name(k)) return k;
    }
    return std::nullopt;
}

constexpr int kDistortKindCount = 5;

namespace detail {

inline float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

inline ImageBuffer distort_noise(const ImageBuffer& ref, int severity, Rng rng) {
    // unit noise drawn once, scaled by severity: MSE is monotone by construction
    ImageBuffer out = ref;
    const float sigma = 0.03f * static_cast<float>(severity);
    for (auto& p : out.pixels) p = clamp01(p + sigma * static_cast<float>(rng.normal()));
    return out;
}

inline ImageBuffer distort_blur(const ImageBuffer& ref, int severity, Rng) {
    const double sigma = 0.5 * severity;
    const int radius = static_cast<int>(std::ceil(2.5 * sigma));
    std::vector<float> kern(2 * radius + 1);
    float norm = 0;
    for (int i = -radius; i <= radius; ++i) {
        kern[i + radius] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
        norm += kern[i + radius];
    }
    for (auto& v : kern) v /= norm;
    const auto W = static_cast<std::ptrdiff_t>(ref.width);
    const auto H = static_cast<std::ptrdiff_t>(ref.height);
    ImageBuffer tmp = ref, out = ref;
    for (std::ptrdiff_t y = 0; y < H; ++y)
        for (std::ptrdiff_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                float acc = 0;
                for (int i = -radius; i <= radius; ++i) {
                    const std::ptrdiff_t xx = std::clamp(x + i, std::ptrdiff_t(0), W - 1);
                    acc += kern[i + radius] * ref.at(y, xx, c);
                }
                tmp.at(y, x, c) = acc;
            }
    for (std::ptrdiff_t y = 0; y < H; ++y)
        for (std::ptrdiff_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < 3; ++c) {
                float acc = 0;
                for (int i = -radius; i <= radius; ++i) {
                    const std::ptrdiff_t yy = std::clamp(y + i, std::ptrdiff_t(0), H - 1);
                    acc += kern[i + radius] * tmp.at(yy, x, c);
                }
                out.at(y, x, c) = acc;
            }
    return out;
}

// 8x8 block DCT with a severity-scaled quantization step.
inline ImageBuffer distort_jpegish(const ImageBuffer& ref, int severity, Rng) {
    constexpr std::size_t B = 8;
    static const double pi = 3.14159265358979323846;
    ImageBuffer out = ref;
    double coef[B][B], q[B][B];
    for (std::size_t by = 0; by < ref.height; by += B)
        for (std::size_t bx = 0; bx < ref.width; bx += B)
            for (std::size_t c = 0; c < 3; ++c) {
                auto px = [&](std::size_t y, std::size_t x) {
                    return static_cast<double>(ref.at(std::min(by + y, ref.height - 1),
                                                      std::min(bx + x, ref.width - 1), c));
                };
                for (std::size_t u = 0; u < B; ++u)
                    for (std::size_t v = 0; v < B; ++v) {
                        double acc = 0;
                        for (std::size_t y = 0; y < B; ++y)
                            for (std::size_t x = 0; x < B; ++x)
                                acc += px(y, x) * std::cos((2 * y + 1) * u * pi / (2.0 * B)) *
                                       std::cos((2 * x + 1) * v * pi / (2.0 * B));
                        const double cu = u == 0 ? std::sqrt(1.0 / B) : std::sqrt(2.0 / B);
                        const double cv = v == 0 ? std::sqrt(1.0 / B) : std::sqrt(2.0 / B);
                        coef[u][v] = cu * cv * acc;
                        const double step = 0.02 * severity * (1.0 + 0.5 * (u + v));
                        q[u][v] = (u == 0 && v == 0) ? coef[u][v]
                                                     : std::round(coef[u][v] / step) * step;
                    }
                for (std::size_t y = 0; y < B; ++y)
                    for (std::size_t x = 0; x < B; ++x) {
                        if (by + y >= ref.height || bx + x >= ref.width) continue;
                        double acc = 0;
                        for (std::size_t u = 0; u < B; ++u)
                            for (std::size_t v = 0; v < B; ++v) {
                                const double cu = u == 0 ? std::sqrt(1.0 / B) : std::sqrt(2.0 / B);
                                const double cv = v == 0 ? std::sqrt(1.0 / B) : std::sqrt(2.0 / B);
                                acc += cu * cv * q[u][v] *
                                       std::cos((2 * y + 1) * u * pi / (2.0 * B)) *
                                       std::cos((2 * x + 1) * v * pi / (2.0 * B));
                            }
                        out.at(by + y, bx + x, c) = clamp01(static_cast<float>(acc));
                    }
            }
    return out;
}

inline ImageBuffer distort_contrast(const ImageBuffer& ref, int severity, Rng rng) {
    const float gamma = 1.0f - 0.12f * static_cast<float>(severity);
    const float shift = static_cast<float>(rng.uniform(-0.02, 0.02)) * static_cast<float>(severity);
    ImageBuffer out = ref;
    for (auto& p : out.pixels) p = clamp01(0.5f + (p - 0.5f) * gamma + shift);
    return out;
}

// Smooth random displacement field, bilinearly upsampled from a coarse grid.
// Per-component bound 2*sev/sqrt(2) keeps displacement magnitude <= 2*sev.
inline ImageBuffer distort_warp(const ImageBuffer& ref, int severity, Rng rng) {
    const std::size_t spacing = 8;
    const std::size_t gw = ref.width / spacing + 2;
    const std::size_t gh = ref.height / spacing + 2;
    const float amp = 2.0f * static_cast<float>(severity) / std::sqrt(2.0f);
    std::vector<float> fy(gw * gh), fx(gw * gh);
    for (std::size_t i = 0; i < gw * gh; ++i) {
        fy[i] = amp * static_cast<float>(rng.uniform(-1.0, 1.0));
        fx[i] = amp * static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    auto field = [&](const std::vector<float>& f, float y, float x) {
        const float gy = y / spacing, gx = x / spacing;
        const std::size_t y0 = std::min(static_cast<std::size_t>(gy), gh - 2);
        const std::size_t x0 = std::min(static_cast<std::size_t>(gx), gw - 2);
        const float ry = gy - y0, rx = gx - x0;
        return (1 - ry) * ((1 - rx) * f[y0 * gw + x0] + rx * f[y0 * gw + x0 + 1]) +
               ry * ((1 - rx) * f[(y0 + 1) * gw + x0] + rx * f[(y0 + 1) * gw + x0 + 1]);
    };
    ImageBuffer out = ref;
    const float H = static_cast<float>(ref.height), W = static_cast<float>(ref.width);
    for (std::size_t y = 0; y < ref.height; ++y)
        for (std::size_t x = 0; x < ref.width; ++x) {
            const float fy0 = static_cast<float>(y), fx0 = static_cast<float>(x);
            float sy = std::clamp(fy0 + field(fy, fy0, fx0), 0.0f, H - 1.0f);
            float sx = std::clamp(fx0 + field(fx, fy0, fx0), 0.0f, W - 1.0f);
            const std::size_t y0 = std::min(static_cast<std::size_t>(sy), ref.height - 2 + (ref.height == 1));
            const std::size_t x0 = std::min(static_cast<std::size_t>(sx), ref.width - 2 + (ref.width == 1));
            const float ry = sy - y0, rx = sx - x0;
            const std::size_t y1 = std::min(y0 + 1, ref.height - 1);
            const std::size_t x1 = std::min(x0 + 1, ref.width - 1);
            for (std::size_t c = 0; c < 3; ++c)
                out.at(y, x, c) = (1 - ry) * ((1 - rx) * ref.at(y0, x0, c) + rx * ref.at(y0, x1, c)) +
                                  ry * ((1 - rx) * ref.at(y1, x0, c) + rx * ref.at(y1, x1, c));
        }
    return out;
}

}  // namespace detail

// Deterministic in (kind, severity, seed). The random draws depend on the
// seed only, and severity scales them, so distortion strength (and MSE to
// the reference) is monotone in severity for a fixed seed.
inline std::pair<ImageBuffer, float> synth_distort(const ImageBuffer& ref, DistortKind kind,
                                                   int severity, std::uint64_t seed) {
    if (severity < 1 || severity > 5)
        throw DataError("distortion severity must be in 1..5, got " + std::to_string(severity));
    Rng base(seed);
    Rng draw = base.fork(1);
    Rng label = base.fork(2);
    ImageBuffer out;
    switch (kind) {
        case DistortKind::gaussian_noise: out = detail::distort_noise(ref, severity, draw); break;
        case DistortKind::gaussian_blur: out = detail::distort_blur(ref, severity, draw); break;
        case DistortKind::block_jpegish: out = detail::distort_jpegish(ref, severity, draw); break;
        case DistortKind::contrast_shift: out = detail::distort_contrast(ref, severity, draw); break;
        case DistortKind::local_warp: out = detail::distort_warp(ref, severity, draw); break;
    }
    const float pseudo_mos =
        100.0f - 15.0f * static_cast<float>(severity) + static_cast<float>(label.uniform(-2.0, 2.0));
    return {std::move(out), pseudo_mos};
}

// Procedural reference image with structure at several scales, so that every
// distortion family produces a visible, learnable signature.
inline ImageBuffer synth_reference(std::size_t w, std::size_t h, std::uint64_t seed) {
    Rng rng(seed);
    ImageBuffer img = make_image(w, h);
    // low-frequency color gradient
    float base[3], gxc[3], gyc[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = static_cast<float>(rng.uniform(0.2, 0.8));
        gxc[c] = static_cast<float>(rng.uniform(-0.3, 0.3));
        gyc[c] = static_cast<float>(rng.uniform(-0.3, 0.3));
    }
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                img.at(y, x, c) = base[c] + gxc[c] * (static_cast<float>(x) / w) +
                                  gyc[c] * (static_cast<float>(y) / h);
    // random rectangles and discs (edges and flat regions)
    const int nshapes = 6 + static_cast<int>(rng.below(6));
    for (int s = 0; s < nshapes; ++s) {
        const bool disc = rng.below(2) == 0;
        const float cy = static_cast<float>(rng.uniform(0, h));
        const float cx = static_cast<float>(rng.uniform(0, w));
        const float ry = static_cast<float>(rng.uniform(h / 16.0, h / 3.0));
        const float rx = static_cast<float>(rng.uniform(w / 16.0, w / 3.0));
        float col[3];
        for (int c = 0; c < 3; ++c) col[c] = static_cast<float>(rng.uniform(0.05, 0.95));
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const float dy = (y - cy) / ry, dx = (x - cx) / rx;
                const bool inside = disc ? (dy * dy + dx * dx < 1.0f)
                                         : (std::abs(dy) < 1.0f && std::abs(dx) < 1.0f);
                if (inside)
                    for (std::size_t c = 0; c < 3; ++c)
                        img.at(y, x, c) = 0.7f * col[c] + 0.3f * img.at(y, x, c);
            }
    }
    // sinusoidal texture plus fine noise
    const float tfy = static_cast<float>(rng.uniform(0.2, 0.9));
    const float tfx = static_cast<float>(rng.uniform(0.2, 0.9));
    const float phase = static_cast<float>(rng.uniform(0, 6.28));
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const float t = 0.08f * std::sin(tfy * y + tfx * x + phase) +
                            0.05f * static_cast<float>(rng.uniform(-1.0, 1.0));
            for (std::size_t c = 0; c < 3; ++c)
                img.at(y, x, c) = detail::clamp01(img.at(y, x, c) + t);
        }
    return img;
}

// Generates per_ref distorted images per reference, cycling through the
// five kinds and severities 1..5, and writes everything under out_dir:
//   out_dir/ref/<id>.ppm, out_dir/dist/<id>_<kind>_<sev>.ppm, out_dir/manifest.tsv
inline DatasetManifest build_synthetic_manifest(const std::string& ref_dir,
                                                const std::string& out_dir, std::size_t per_ref,
                                                std::uint64_t seed) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(ref_dir)) throw DataError("reference directory not found: " + ref_dir);
    std::vector<fs::path> refs;
    for (const auto& e : fs::directory_iterator(ref_dir)) {
        const auto ext = e.path().extension().string();
        if (ext == ".ppm" || ext == ".png") refs.push_back(e.path());
    }
    std::sort(refs.begin(), refs.end());
    if (refs.empty()) throw DataError("no .ppm or .png reference images in " + ref_dir);

    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "ref", ec);
    fs::create_directories(fs::path(out_dir) / "dist", ec);
    if (!fs::is_directory(fs::path(out_dir) / "dist"))
        throw DataError("cannot create output directory: " + out_dir);

    DatasetManifest m;
    m.base_dir = out_dir;
    Rng rng(seed);
    for (std::size_t ri = 0; ri < refs.size(); ++ri) {
        ImageBuffer ref = load_image(refs[ri].string());
        if (ref.width < kPatchSize || ref.height < kPatchSize)
            throw DataError("reference image smaller than 32x32: " + refs[ri].string());
        const std::string id = refs[ri].stem().string();
        const std::string ref_rel = "ref/" + id + ".ppm";
        save_ppm(ref, (fs::path(out_dir) / ref_rel).string());
        for (std::size_t j = 0; j < per_ref; ++j) {
            const auto kind = static_cast<DistortKind>(j % kDistortKindCount);
            const int severity = static_cast<int>((j / kDistortKindCount) % 5) + 1;
            const std::uint64_t dseed = rng.fork(ri * 1000003 + j).next_u64();
            auto [dist, mos] = synth_distort(ref, kind, severity, dseed);
            std::string name =
                id + "_" + distort_kind_name(kind) + "_" + std::to_string(severity);
            if (j >= static_cast<std::size_t>(kDistortKindCount) * 5)
                name += "_" + std::to_string(j);
            const std::string dist_rel = "dist/" + name + ".ppm";
            save_ppm(dist, (fs::path(out_dir) / dist_rel).string());
            ManifestRecord r;
            r.ref_path = ref_rel;
            r.dist_path = dist_rel;
            r.mos = mos;
            r.group_id = id + "_" + distort_kind_name(kind);
            r.distortion_tag = distort_kind_name(kind);
            m.records.push_back(std::move(r));
        }
    }
    save_manifest(m, (fs::path(out_dir) / "manifest.tsv").string());
    return m;
}

}  // namespace radn
