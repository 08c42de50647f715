// SPDX-License-Identifier: Apache-2.0
//
// Model assembly: the modified-residual-block trunk (WResNet), the
// deformable variant, the full model with patch-level attention, and the
// weighted-average scoring head.
#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "radn/attention.hpp"
#include "radn/conv.hpp"
#include "radn/dataset.hpp"
#include "radn/deform.hpp"
#include "radn/tensor.hpp"

namespace radn {

enum class Variant { wresnet, wresnet_d, radn };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::wresnet: return "wresnet";
        case Variant::wresnet_d: return "wresnet_d";
        case Variant::radn: return "radn";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "wresnet") return Variant::wresnet;
    if (s == "wresnet_d") return Variant::wresnet_d;
    if (s == "radn") return Variant::radn;
    throw DataError("unknown model variant '" + s + "' (wresnet|wresnet_d|radn)");
}

struct ModelConfig {
    Variant variant = Variant::radn;
    std::vector<std::size_t> stage_channels = {32, 64, 128, 256, 512};
    std::size_t patch_size = 32;
    std::size_t d_k = 512;          // feature width after the trunk
    std::size_t deform_stage = 3;   // deformable block sits after this stage (1-based)
    std::size_t head_hidden = 512;
    float weight_epsilon = 1e-6f;
    float max_offset = 0.0f;        // 0 = unclamped offsets

    void validate() const {
        if (stage_channels.empty()) throw DataError("model config: no stages");
        std::size_t spatial = patch_size;
        for (std::size_t s = 0; s < stage_channels.size(); ++s) {
            if (spatial % 2 != 0)
                throw DataError("model config: patch size " + std::to_string(patch_size) +
                                " is not divisible by 2^" + std::to_string(stage_channels.size()) +
                                " stride-2 stages");
            spatial /= 2;
        }
        if (spatial != 1)
            throw DataError("model config: trunk must end at 1x1 spatial size, patch " +
                            std::to_string(patch_size) + " with " +
                            std::to_string(stage_channels.size()) + " stages ends at " +
                            std::to_string(spatial) + "x" + std::to_string(spatial));
        if (d_k != stage_channels.back())
            throw DataError("model config: d_k (" + std::to_string(d_k) +
                            ") must equal the final stage width (" +
                            std::to_string(stage_channels.back()) + ")");
        if (variant != Variant::wresnet &&
            (deform_stage < 1 || deform_stage > stage_channels.size()))
            throw DataError("model config: deform_stage out of range");
    }
};

// Named, ordered collection of learnable tensors.
template <typename T>
class ModelParamsT {
public:
    TensorT<T>& add(const std::string& name, TensorT<T> t) {
        if (index_.count(name)) throw DataError("duplicate parameter name: " + name);
        index_[name] = entries_.size();
        entries_.emplace_back(name, std::move(t));
        return entries_.back().second;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    TensorT<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw DataError("no such parameter: " + name);
        return entries_[it->second].second;
    }
    const TensorT<T>& at(const std::string& name) const {
        return const_cast<ModelParamsT*>(this)->at(name);
    }

    std::size_t size() const { return entries_.size(); }
    std::vector<std::pair<std::string, TensorT<T>>>& entries() { return entries_; }
    const std::vector<std::pair<std::string, TensorT<T>>>& entries() const { return entries_; }

    void zero_grads() {
        for (auto& [_, t] : entries_) t.zero_grad();
    }

    // Non-trainable value copy (fresh nodes, requires_grad off).
    ModelParamsT detached() const {
        ModelParamsT out;
        for (const auto& [name, t] : entries_) out.add(name, t.detach());
        return out;
    }

private:
    std::vector<std::pair<std::string, TensorT<T>>> entries_;
    std::map<std::string, std::size_t> index_;
};

using ModelParams = ModelParamsT<float>;

namespace detail {

// He-style uniform init: without normalization layers the trunk is 20
// convolutions deep, and a smaller scale makes activations vanish before
// they reach the head.
template <typename T>
TensorT<T> init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    TensorT<T> t(std::move(shape), true);
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

}  // namespace detail

// Deterministic parameter construction. wresnet_d adds the deformable stage
// on top of wresnet, radn adds patch-level attention on top of wresnet_d;
// parameter names of a smaller variant are a subset of the larger one's.
template <typename T>
ModelParamsT<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParamsT<T> p;
    Rng rng(seed);
    const std::size_t k = 3;

    std::size_t cin = 3;
    for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s) {
        const std::size_t cout = cfg.stage_channels[s];
        const std::string prefix = "stage" + std::to_string(s + 1) + ".";
        std::size_t c = cin;
        for (std::size_t j = 0; j < 4; ++j) {
            p.add(prefix + "conv" + std::to_string(j) + ".w",
                  detail::init_uniform<T>({cout, c, k, k}, c * k * k, rng));
            p.add(prefix + "conv" + std::to_string(j) + ".b", TensorT<T>({cout}, true));
            c = cout;
        }
        // stride-2 stage always needs a projected shortcut
        p.add(prefix + "shortcut.w", detail::init_uniform<T>({cout, cin, 1, 1}, cin, rng));
        p.add(prefix + "shortcut.b", TensorT<T>({cout}, true));
        cin = cout;
    }

    if (cfg.variant != Variant::wresnet) {
        const std::size_t c = cfg.stage_channels[cfg.deform_stage - 1];
        // zero init: the deformable stage starts exactly as a regular convolution
        p.add("deform.offset.w", TensorT<T>({2 * k * k, c, k, k}, true));
        p.add("deform.offset.b", TensorT<T>({2 * k * k}, true));
        p.add("deform.wr", detail::init_uniform<T>({c, c, k, k}, c * k * k, rng));
        p.add("deform.wd", detail::init_uniform<T>({c, c, k, k}, c * k * k, rng));
    }

    if (cfg.variant == Variant::radn) {
        const std::size_t d = cfg.d_k;
        p.add("attn.wq", detail::init_uniform<T>({d, d}, d, rng));
        p.add("attn.wk", detail::init_uniform<T>({d, d}, d, rng));
        p.add("attn.wv", detail::init_uniform<T>({d, d}, d, rng));
        p.add("attn.wz", TensorT<T>({d, d}, true));  // zero: block starts as identity
    }

    const std::size_t fin = 3 * cfg.d_k;
    for (const char* branch : {"score", "weight"}) {
        const std::string prefix = std::string("head.") + branch + ".";
        p.add(prefix + "fc1.w", detail::init_uniform<T>({cfg.head_hidden, fin}, fin, rng));
        p.add(prefix + "fc1.b", TensorT<T>({cfg.head_hidden}, true));
        p.add(prefix + "fc2.w", detail::init_uniform<T>({1, cfg.head_hidden}, cfg.head_hidden, rng));
        p.add(prefix + "fc2.b", TensorT<T>({1}, true));
    }
    return p;
}

namespace detail {

template <typename T>
TensorT<T> residual_block(const ModelParamsT<T>& p, const std::string& prefix,
                          const TensorT<T>& x, std::size_t stride) {
    auto y = relu(add_channel_bias(conv2d(x, p.at(prefix + "conv0.w"), stride, 1),
                                   p.at(prefix + "conv0.b")));
    y = relu(add_channel_bias(conv2d(y, p.at(prefix + "conv1.w"), 1, 1), p.at(prefix + "conv1.b")));
    y = relu(add_channel_bias(conv2d(y, p.at(prefix + "conv2.w"), 1, 1), p.at(prefix + "conv2.b")));
    y = add_channel_bias(conv2d(y, p.at(prefix + "conv3.w"), 1, 1), p.at(prefix + "conv3.b"));
    auto sc = add_channel_bias(conv2d(x, p.at(prefix + "shortcut.w"), stride, 0),
                               p.at(prefix + "shortcut.b"));
    return relu(add(y, sc));
}

// [N,d] linear layer: x * W^T + b
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    return add(matmul(x, transpose2d(w)), b);
}

}  // namespace detail

// Twin trunks over paired patch tensors [N,3,ps,ps]. Parameters are shared
// between the branches; the deformable stage's per-branch weights are the
// exception, and its offsets come from the reference branch only.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> extract_features(const ModelParamsT<T>& p,
                                                   const ModelConfig& cfg,
                                                   const TensorT<T>& patches_ref,
                                                   const TensorT<T>& patches_dist) {
    if (patches_ref.shape() != patches_dist.shape())
        throw ShapeError("extract_features: patch tensors differ: " +
                         shape_str(patches_ref.shape()) + " vs " + shape_str(patches_dist.shape()));
    const std::size_t n = patches_ref.dim(0);
    TensorT<T> fr = patches_ref;
    TensorT<T> fd = patches_dist;
    for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s) {
        const std::string prefix = "stage" + std::to_string(s + 1) + ".";
        fr = detail::residual_block(p, prefix, fr, 2);
        fd = detail::residual_block(p, prefix, fd, 2);
        if (cfg.variant != Variant::wresnet && s + 1 == cfg.deform_stage) {
            auto offsets = add_channel_bias(conv2d(fr, p.at("deform.offset.w"), 1, 1),
                                            p.at("deform.offset.b"));
            auto [frm, fdm] = ref_deform_conv(fr, fd, offsets, p.at("deform.wr"),
                                              p.at("deform.wd"), static_cast<T>(cfg.max_offset));
            fr = relu(frm);
            fd = relu(fdm);
        }
    }
    fr = fr.reshape({n, cfg.d_k});
    fd = fd.reshape({n, cfg.d_k});
    if (cfg.variant == Variant::radn) {
        AttentionWeightsT<T> aw{p.at("attn.wq"), p.at("attn.wk"), p.at("attn.wv"), p.at("attn.wz")};
        fr = patch_attention(fr, aw);
        fd = patch_attention(fd, aw);
    }
    return {fr, fd};
}

template <typename T>
struct PatchScoresT {
    TensorT<T> weights;  // [N], each >= weight_epsilon
    TensorT<T> scores;   // [N]
    TensorT<T> qhat;     // scalar: sum(w*s)/sum(w)
};

using PatchScores = PatchScoresT<float>;

// F_concat = concat(F_D - F_R, F_D, F_R) per patch, two small MLP branches
// for score and (positive) weight, then the weighted average.
template <typename T>
PatchScoresT<T> score_head(const ModelParamsT<T>& p, const ModelConfig& cfg, const TensorT<T>& fr,
                           const TensorT<T>& fd) {
    if (fr.shape() != fd.shape())
        throw ShapeError("score_head: feature shapes differ: " + shape_str(fr.shape()) + " vs " +
                         shape_str(fd.shape()));
    const std::size_t n = fr.dim(0);
    auto fdiff = sub(fd, fr);
    auto fcat = concat_cols<T>({fdiff, fd, fr});  // [N, 3*d_k]

    auto s_h = relu(detail::linear(fcat, p.at("head.score.fc1.w"), p.at("head.score.fc1.b")));
    auto s = detail::linear(s_h, p.at("head.score.fc2.w"), p.at("head.score.fc2.b")).reshape({n});

    auto w_h = relu(detail::linear(fcat, p.at("head.weight.fc1.w"), p.at("head.weight.fc1.b")));
    auto w_raw = detail::linear(w_h, p.at("head.weight.fc2.w"), p.at("head.weight.fc2.b")).reshape({n});
    auto w = add_scalar(relu(w_raw), static_cast<T>(cfg.weight_epsilon));

    auto qhat = div(sum(mul(w, s)), sum(w));
    return {w, s, qhat};
}

struct ScoreRecord {
    float qhat = 0.0f;
    std::vector<float> weights;
    std::vector<float> scores;
    std::vector<PatchCoord> coords;
    std::size_t patch_size = kPatchSize;
    std::size_t image_width = 0;
    std::size_t image_height = 0;
};

template <typename T>
TensorT<T> patches_to_tensor(const std::vector<float>& data, std::size_t n, std::size_t ps) {
    TensorT<T> t({n, 3, ps, ps});
    for (std::size_t i = 0; i < data.size(); ++i) t.data()[i] = static_cast<T>(data[i]);
    return t;
}

enum class PredictMode { train_random, eval_grid };

template <typename T>
ScoreRecord predict_image(const ModelParamsT<T>& p, const ModelConfig& cfg, const ImageBuffer& ref,
                          const ImageBuffer& dist, PredictMode mode, std::uint64_t seed = 0,
                          std::size_t train_patch_count = 32) {
    const auto smode =
        mode == PredictMode::train_random ? SampleMode::train_random : SampleMode::eval_grid;
    PatchBatch batch = sample_patches(ref, dist, smode, train_patch_count, seed, cfg.patch_size);
    auto tr = patches_to_tensor<T>(batch.ref, batch.count, cfg.patch_size);
    auto td = patches_to_tensor<T>(batch.dist, batch.count, cfg.patch_size);
    auto [fr, fd] = extract_features(p, cfg, tr, td);
    auto ps = score_head(p, cfg, fr, fd);
    ScoreRecord rec;
    rec.qhat = static_cast<float>(ps.qhat.item());
    rec.weights.assign(ps.weights.data().begin(), ps.weights.data().end());
    rec.scores.assign(ps.scores.data().begin(), ps.scores.data().end());
    rec.coords = batch.coords;
    rec.patch_size = cfg.patch_size;
    rec.image_width = ref.width;
    rec.image_height = ref.height;
    return rec;
}

// Per-patch weight visualization: each tile colored by its weight quartile
// within the image (blue, green, yellow, red from lowest to highest;
// quartile ties break toward the lower color).
inline ImageBuffer render_weight_map(const ScoreRecord& rec) {
    if (rec.coords.empty()) throw DataError("weight map: score record has no patch coordinates");
    static const float colors[4][3] = {
        {0.0f, 0.0f, 1.0f}, {0.0f, 1.0f, 0.0f}, {1.0f, 1.0f, 0.0f}, {1.0f, 0.0f, 0.0f}};
    std::size_t gw = 0, gh = 0;
    for (const auto& c : rec.coords) {
        gw = std::max(gw, c.x + rec.patch_size);
        gh = std::max(gh, c.y + rec.patch_size);
    }
    ImageBuffer out = make_image(gw, gh);
    const std::size_t n = rec.weights.size();
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t below = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (rec.weights[j] < rec.weights[i]) ++below;
        const std::size_t quartile = std::min<std::size_t>(3, 4 * below / n);
        for (std::size_t y = 0; y < rec.patch_size; ++y)
            for (std::size_t x = 0; x < rec.patch_size; ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    out.at(rec.coords[i].y + y, rec.coords[i].x + x, c) = colors[quartile][c];
    }
    return out;
}

}  // namespace radn
