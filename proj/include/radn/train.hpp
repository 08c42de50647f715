// SPDX-License-Identifier: Apache-2.0
//
// Training: l2 score regression and contrastive pretraining over contrast
// groups. Pretraining computes each member's score exactly once and forms
// all pairwise comparisons on the scores, so a group of n members costs n
// trunk forwards instead of C(n,2) recomputations; the tape accumulates
// every pair's contribution into the shared trunk gradients.
#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <thread>
#include <unordered_map>

#include "radn/checkpoint.hpp"
#include "radn/config.hpp"
#include "radn/metrics.hpp"
#include "radn/model.hpp"
#include "radn/optim.hpp"

namespace radn {

struct TrainCounters {
    std::size_t trunk_forwards = 0;
    std::size_t comparator_forwards = 0;
};

class ImageCache {
public:
    const ImageBuffer& get(const std::string& path) {
        auto it = cache_.find(path);
        if (it != cache_.end()) return it->second;
        return cache_.emplace(path, load_image(path)).first->second;
    }

private:
    std::unordered_map<std::string, ImageBuffer> cache_;
};

// Ground-truth preference for (mos_i, mos_j). Hard labels from the MOS
// ordering; exact ties carry no preference and the pair is skipped.
// With soft labels, p_ij = sigmoid((mos_i - mos_j)/tau).
inline std::optional<float> derive_preference(float mos_i, float mos_j, bool soft = false,
                                              double tau = 5.0) {
    if (soft) return static_cast<float>(1.0 / (1.0 + std::exp(-(mos_i - mos_j) / tau)));
    if (mos_i > mos_j) return 1.0f;
    if (mos_i < mos_j) return 0.0f;
    return std::nullopt;
}

// ---- comparator -------------------------------------------------------------

// Small fully-connected net on (s_i, s_j, s_i - s_j) producing a preference
// probability. Lives in the same parameter set under "cmp." and is dropped
// when pretraining hands over to regression.
template <typename T>
void add_comparator(ModelParamsT<T>& p, Rng& rng) {
    p.add("cmp.fc1.w", detail::init_uniform<T>({16, 3}, 3, rng));
    p.add("cmp.fc1.b", TensorT<T>({16}, true));
    p.add("cmp.fc2.w", detail::init_uniform<T>({1, 16}, 16, rng));
    p.add("cmp.fc2.b", TensorT<T>({1}, true));
}

template <typename T>
TensorT<T> comparator_prob(const ModelParamsT<T>& p, const TensorT<T>& s_i, const TensorT<T>& s_j) {
    auto si = s_i.reshape({1, 1});
    auto sj = s_j.reshape({1, 1});
    auto in = concat_cols<T>({si, sj, sub(si, sj)});  // [1,3]
    auto h = relu(detail::linear(in, p.at("cmp.fc1.w"), p.at("cmp.fc1.b")));
    auto logit = detail::linear(h, p.at("cmp.fc2.w"), p.at("cmp.fc2.b"));
    return sigmoid(logit).reshape({1});
}

template <typename T>
ModelParamsT<T> drop_comparator(const ModelParamsT<T>& p) {
    ModelParamsT<T> out;
    for (const auto& [name, t] : p.entries())
        if (name.rfind("cmp.", 0) != 0) out.add(name, t);
    return out;
}

// ---- forward passes ---------------------------------------------------------

struct PairedSample {
    const ImageBuffer* ref = nullptr;
    const ImageBuffer* dist = nullptr;
    float mos = 0.0f;
    std::uint64_t patch_seed = 0;
};

// One trunk+head forward over randomly sampled aligned patches; the result
// stays on the tape.
template <typename T>
TensorT<T> image_pair_score(const ModelParamsT<T>& p, const ModelConfig& cfg,
                            const PairedSample& s, std::size_t patches_per_image,
                            TrainCounters* counters = nullptr) {
    PatchBatch batch = sample_patches(*s.ref, *s.dist, SampleMode::train_random, patches_per_image,
                                      s.patch_seed, cfg.patch_size);
    auto tr = patches_to_tensor<T>(batch.ref, batch.count, cfg.patch_size);
    auto td = patches_to_tensor<T>(batch.dist, batch.count, cfg.patch_size);
    auto [fr, fd] = extract_features(p, cfg, tr, td);
    if (counters) ++counters->trunk_forwards;
    return score_head(p, cfg, fr, fd).qhat;
}

// One l2 regression step over a mini-batch; loss = mean (qhat - target)^2,
// followed by an ADAM update.
template <typename T>
T regression_step(ModelParamsT<T>& p, const ModelConfig& cfg, const std::vector<PairedSample>& batch,
                  std::size_t patches_per_image, T mos_scale, AdamStateT<T>& opt, T lr,
                  TrainCounters* counters = nullptr) {
    if (batch.empty()) throw DataError("regression step on an empty batch");
    TensorT<T> total = TensorT<T>::scalar(T(0));
    for (const auto& s : batch) {
        auto qhat = image_pair_score(p, cfg, s, patches_per_image, counters);
        auto d = sub(qhat, TensorT<T>::scalar(static_cast<T>(s.mos) / mos_scale));
        total = add(total, mul(d, d));
    }
    auto loss = scalar_mul(total, T(1) / static_cast<T>(batch.size()));
    backward(loss);
    adam_step(p, opt, lr);
    return loss.item();
}

// Pairwise-pretraining gradient computation (no optimizer update), shared
// between the training step and the equivalence tests. Scores each member
// once, forms all non-tied canonical pairs, averages the BCE terms and
// backpropagates. Returns nullopt when every pair is tied.
template <typename T>
std::optional<T> pairwise_pretrain_backward(ModelParamsT<T>& p, const ModelConfig& cfg,
                                            const std::vector<PairedSample>& members,
                                            std::size_t patches_per_image, bool soft_labels,
                                            double tau, TrainCounters* counters = nullptr) {
    if (members.size() < 2)
        throw DataError("contrast group needs at least 2 members, got " +
                        std::to_string(members.size()));
    std::vector<TensorT<T>> scores;
    scores.reserve(members.size());
    for (const auto& m : members)
        scores.push_back(image_pair_score(p, cfg, m, patches_per_image, counters));

    TensorT<T> total = TensorT<T>::scalar(T(0));
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < members.size(); ++i)
        for (std::size_t j = i + 1; j < members.size(); ++j) {
            const auto pref = derive_preference(members[i].mos, members[j].mos, soft_labels, tau);
            if (!pref) continue;  // tied MOS: preference undefined
            auto prob = comparator_prob(p, scores[i], scores[j]);
            if (counters) ++counters->comparator_forwards;
            total = add(total, binary_cross_entropy(prob, TensorT<T>::scalar(*pref)));
            ++pairs;
        }
    if (pairs == 0) return std::nullopt;
    auto loss = scalar_mul(total, T(1) / static_cast<T>(pairs));
    backward(loss);
    return loss.item();
}

template <typename T>
std::optional<T> pairwise_pretrain_step(ModelParamsT<T>& p, const ModelConfig& cfg,
                                        const std::vector<PairedSample>& members,
                                        std::size_t patches_per_image, bool soft_labels, double tau,
                                        AdamStateT<T>& opt, T lr,
                                        TrainCounters* counters = nullptr) {
    auto loss = pairwise_pretrain_backward(p, cfg, members, patches_per_image, soft_labels, tau,
                                           counters);
    if (!loss) {
        p.zero_grads();
        return std::nullopt;
    }
    adam_step(p, opt, lr);
    return loss;
}

// ---- evaluation -------------------------------------------------------------

struct EvalOutput {
    EvalSeries series;
    std::vector<ScoreRecord> records;
};

// Non-overlapping grid inference over every manifest entry. Parameters are
// read-only; entries are scored on `threads` workers.
inline EvalOutput evaluate_manifest(const ModelParams& params, const ModelConfig& cfg,
                                    const DatasetManifest& manifest, std::size_t threads = 1) {
    EvalOutput out;
    const std::size_t n = manifest.records.size();
    out.records.resize(n);
    out.series.ground_truth.resize(n);
    out.series.predicted.resize(n);
    out.series.ids.resize(n);
    const ModelParams frozen = params.detached();
    threads = std::max<std::size_t>(1, std::min(threads, n ? n : 1));
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        ImageCache cache;  // per-thread
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) break;
            try {
                const ImageBuffer& ref = cache.get(manifest.resolve_ref(i));
                const ImageBuffer& dist = cache.get(manifest.resolve_dist(i));
                out.records[i] = predict_image(frozen, cfg, ref, dist, PredictMode::eval_grid);
                out.series.predicted[i] = out.records[i].qhat;
                out.series.ground_truth[i] = manifest.records[i].mos;
                out.series.ids[i] = manifest.records[i].dist_path;
            } catch (...) {
                if (!first_error) first_error = std::current_exception();
                break;
            }
        }
    };
    if (threads == 1) {
        worker();
    } else {
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);
    return out;
}

// Fraction of held-out non-tied pairs whose preference the model orders
// correctly: by the comparator when present, otherwise by the raw scores.
inline double preference_accuracy(const ModelParams& params, const ModelConfig& cfg,
                                  const DatasetManifest& manifest) {
    // group members by group_id, first-appearance order
    std::vector<std::string> order;
    std::unordered_map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        auto& v = groups[manifest.records[i].group_id];
        if (v.empty()) order.push_back(manifest.records[i].group_id);
        v.push_back(i);
    }
    const ModelParams frozen = params.detached();
    const bool has_cmp = frozen.has("cmp.fc1.w");
    ImageCache cache;
    std::size_t correct = 0, total = 0;
    for (const auto& gid : order) {
        const auto& idx = groups[gid];
        std::vector<float> scores(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const ImageBuffer& ref = cache.get(manifest.resolve_ref(idx[k]));
            const ImageBuffer& dist = cache.get(manifest.resolve_dist(idx[k]));
            scores[k] = predict_image(frozen, cfg, ref, dist, PredictMode::eval_grid).qhat;
        }
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = i + 1; j < idx.size(); ++j) {
                const auto pref = derive_preference(manifest.records[idx[i]].mos,
                                                    manifest.records[idx[j]].mos);
                if (!pref) continue;
                double prob;
                if (has_cmp) {
                    prob = comparator_prob(frozen, Tensor::scalar(scores[i]),
                                           Tensor::scalar(scores[j]))
                               .item();
                } else {
                    prob = scores[i] > scores[j] ? 1.0 : 0.0;
                }
                correct += ((prob > 0.5) == (*pref > 0.5f)) ? 1 : 0;
                ++total;
            }
    }
    if (total == 0) throw DataError("preference accuracy: no comparable pairs in manifest");
    return static_cast<double>(correct) / static_cast<double>(total);
}

// ---- training driver --------------------------------------------------------

struct TrainOptions {
    RunConfig cfg;
    std::string manifest_path;
    std::string out_dir;
    std::string val_manifest_path;  // optional
    std::string resume_path;        // optional
    bool pretrain_only = false;
    std::ostream* log = &std::cout;
};

struct TrainResult {
    std::string final_checkpoint;
    double last_loss = 0.0;
    double last_val_srocc = 0.0;
    double last_val_plcc = 0.0;
};

class Trainer {
public:
    explicit Trainer(TrainOptions opts) : o_(std::move(opts)), mcfg_(o_.cfg.model_config()) {}

    TrainResult run() {
        manifest_ = load_manifest(o_.manifest_path);
        if (manifest_.records.empty()) throw DataError("empty manifest: " + o_.manifest_path);
        if (!o_.val_manifest_path.empty()) val_manifest_ = load_manifest(o_.val_manifest_path);
        std::filesystem::create_directories(o_.out_dir);

        std::uint32_t start_epoch = 0;  // last completed epoch of start_phase
        TrainPhase start_phase =
            (o_.cfg.pretrain || o_.pretrain_only) ? TrainPhase::pretrain : TrainPhase::regression;

        if (!o_.resume_path.empty()) {
            Checkpoint ckpt = load_checkpoint(o_.resume_path, /*trainable=*/true);
            params_ = std::move(ckpt.params);
            if (ckpt.has_optimizer) opt_ = std::move(ckpt.optimizer);
            start_phase = ckpt.phase == TrainPhase::none ? start_phase : ckpt.phase;
            start_epoch = ckpt.epoch;
        } else {
            params_ = build_model<float>(mcfg_, o_.cfg.seed);
            if (start_phase == TrainPhase::pretrain) {
                Rng rng(o_.cfg.seed + 0xc0117a57ull);
                add_comparator(params_, rng);
            }
        }
        opt_init_if_needed();

        TrainResult result;
        if (start_phase == TrainPhase::pretrain) {
            result = run_phase(TrainPhase::pretrain, start_epoch, o_.cfg.pretrain_epochs);
            start_epoch = 0;
            if (!o_.pretrain_only) {
                // hand over trunk+head; the comparator and its moments are dropped
                params_ = drop_comparator(params_);
                opt_ = AdamState{};
                opt_init_if_needed();
                result = run_phase(TrainPhase::regression, 0, o_.cfg.epochs);
            }
        } else {
            result = run_phase(TrainPhase::regression, start_epoch, o_.cfg.epochs);
        }
        return result;
    }

    ModelParams& params() { return params_; }

private:
    void opt_init_if_needed() {
        if (opt_.m.size() != params_.size()) opt_.init(params_);
    }

    std::string ckpt_path(TrainPhase phase, std::uint32_t epoch) const {
        return (std::filesystem::path(o_.out_dir) /
                (std::string(phase_name(phase)) + "-epoch" + std::to_string(epoch) + ".ckpt"))
            .string();
    }

    void save(TrainPhase phase, std::uint32_t epoch) {
        Checkpoint ckpt;
        ckpt.epoch = epoch;
        ckpt.phase = phase;
        ckpt.config_text = serialize_config(o_.cfg);
        ckpt.params = params_.detached();
        ckpt.has_optimizer = true;
        ckpt.optimizer = opt_;
        // write to a temp name first so an interrupted run keeps the last
        // complete checkpoint intact
        const std::string path = ckpt_path(phase, epoch);
        const std::string tmp = path + ".tmp";
        save_checkpoint(ckpt, tmp);
        std::filesystem::rename(tmp, path);
    }

    TrainResult run_phase(TrainPhase phase, std::uint32_t done_epochs, std::size_t total_epochs) {
        TrainResult result;
        for (std::uint32_t epoch = done_epochs + 1; epoch <= total_epochs; ++epoch) {
            const float lr = static_cast<float>(
                lr_at_epoch(o_.cfg.lr, o_.cfg.lr_decay, o_.cfg.lr_decay_every, epoch - 1));
            const double loss = phase == TrainPhase::pretrain ? pretrain_epoch(epoch, lr)
                                                              : regression_epoch(epoch, lr);
            double vs = std::nan(""), vp = std::nan("");
            if (!val_manifest_.records.empty()) {
                auto ev = evaluate_manifest(params_, mcfg_, val_manifest_);
                try {
                    vs = srocc(ev.series);
                    vp = plcc(ev.series);
                } catch (const DataError&) {
                    // constant predictions early in training: leave metrics undefined
                }
            }
            (*o_.log) << epoch << '\t' << phase_name(phase) << '\t' << loss << '\t' << vs << '\t'
                      << vp << '\t' << lr << '\n';
            o_.log->flush();
            if (o_.cfg.checkpoint_every && (epoch % o_.cfg.checkpoint_every == 0))
                save(phase, epoch);
            result.last_loss = loss;
            result.last_val_srocc = vs;
            result.last_val_plcc = vp;
        }
        const std::uint32_t last = static_cast<std::uint32_t>(total_epochs);
        save(phase, last);
        result.final_checkpoint = ckpt_path(phase, last);
        return result;
    }

    Rng epoch_rng(TrainPhase phase, std::uint32_t epoch) const {
        return Rng(o_.cfg.seed).fork(static_cast<std::uint64_t>(phase) * 0x10000000ull + epoch);
    }

    double regression_epoch(std::uint32_t epoch, float lr) {
        Rng rng = epoch_rng(TrainPhase::regression, epoch);
        std::vector<std::size_t> order(manifest_.records.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);

        double loss_sum = 0;
        std::size_t steps = 0;
        for (std::size_t pos = 0; pos < order.size(); pos += o_.cfg.batch) {
            std::vector<PairedSample> batch;
            for (std::size_t b = 0; b < o_.cfg.batch && pos + b < order.size(); ++b) {
                const std::size_t i = order[pos + b];
                batch.push_back(make_sample(i, rng.fork(1000 + i)));
            }
            loss_sum += regression_step(params_, mcfg_, batch, o_.cfg.patches_per_image,
                                        static_cast<float>(o_.cfg.mos_scale), opt_, lr);
            ++steps;
        }
        return loss_sum / static_cast<double>(steps);
    }

    double pretrain_epoch(std::uint32_t epoch, float lr) {
        // groups in first-appearance order, then shuffled per epoch
        std::vector<std::string> gorder;
        std::unordered_map<std::string, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < manifest_.records.size(); ++i) {
            auto& v = groups[manifest_.records[i].group_id];
            if (v.empty()) gorder.push_back(manifest_.records[i].group_id);
            v.push_back(i);
        }
        Rng rng = epoch_rng(TrainPhase::pretrain, epoch);
        for (std::size_t i = gorder.size(); i > 1; --i)
            std::swap(gorder[i - 1], gorder[rng.below(i)]);

        double loss_sum = 0;
        std::size_t steps = 0;
        for (const auto& gid : gorder) {
            const auto& idx = groups[gid];
            if (idx.size() < 2) continue;
            // subsample to group_max members, cycling the window across epochs
            std::vector<std::size_t> take;
            if (idx.size() <= o_.cfg.group_max) {
                take = idx;
            } else {
                const std::size_t offset = ((epoch - 1) * o_.cfg.group_max) % idx.size();
                for (std::size_t k = 0; k < o_.cfg.group_max; ++k)
                    take.push_back(idx[(offset + k) % idx.size()]);
            }
            std::vector<PairedSample> members;
            for (std::size_t i : take) members.push_back(make_sample(i, rng.fork(2000 + i)));
            auto loss = pairwise_pretrain_step(params_, mcfg_, members, o_.cfg.patches_per_image,
                                               o_.cfg.soft_labels, o_.cfg.tau, opt_, lr);
            if (loss) {
                loss_sum += *loss;
                ++steps;
            }
        }
        return steps ? loss_sum / static_cast<double>(steps) : 0.0;
    }

    PairedSample make_sample(std::size_t i, Rng item_rng) {
        PairedSample s;
        try {
            s.ref = &cache_.get(manifest_.resolve_ref(i));
            s.dist = &cache_.get(manifest_.resolve_dist(i));
        } catch (const DataError& e) {
            throw DataError("manifest record " + std::to_string(i) + " (" +
                            manifest_.records[i].dist_path + "): " + e.what());
        }
        s.mos = manifest_.records[i].mos;
        s.patch_seed = item_rng.next_u64();
        return s;
    }

    TrainOptions o_;
    ModelConfig mcfg_;
    DatasetManifest manifest_;
    DatasetManifest val_manifest_;
    ModelParams params_;
    AdamState opt_;
    ImageCache cache_;
};

}  // namespace radn
