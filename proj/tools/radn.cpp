// SPDX-License-Identifier: Apache-2.0
//
// radn command-line tool: dataset generation, training, evaluation,
// single-pair scoring, weight-map rendering and gradient checking.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "radn/gradcheck.hpp"
#include "radn/train.hpp"

namespace {

constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::size_t env_threads() {
    const char* v = std::getenv("RADN_THREADS");
    if (!v || !*v) return 1;
    const long n = std::strtol(v, nullptr, 10);
    return n > 0 ? static_cast<std::size_t>(n) : 1;
}

// config file, then --set overrides, then explicit flags (flags win)
struct ConfigArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::string variant;
    long epochs = -1;
    long seed = -1;
    double lr = -1.0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "config file (key=value lines)");
        cmd->add_option("--set", sets, "override one config key (key=value, repeatable)");
        cmd->add_option("--variant", variant, "model variant: wresnet|wresnet_d|radn");
        cmd->add_option("--epochs", epochs, "number of epochs");
        cmd->add_option("--seed", seed, "run seed");
        cmd->add_option("--lr", lr, "initial learning rate");
    }

    radn::RunConfig resolve() const {
        radn::RunConfig cfg =
            config_path.empty() ? radn::RunConfig{} : radn::load_config(config_path);
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos)
                throw radn::DataError("--set expects key=value, got '" + kv + "'");
            radn::apply_config_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (!variant.empty()) radn::apply_config_kv(cfg, "variant", variant);
        if (epochs >= 0) cfg.epochs = static_cast<std::size_t>(epochs);
        if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
        if (lr >= 0) cfg.lr = lr;
        return cfg;
    }
};

void echo_config(const radn::RunConfig& cfg) {
    std::istringstream lines(radn::serialize_config(cfg));
    std::string line;
    while (std::getline(lines, line)) std::cout << "# " << line << '\n';
}

int run_training(const ConfigArgs& cargs, const std::string& manifest, const std::string& out_dir,
                 const std::string& val_manifest, const std::string& resume, bool pretrain_only) {
    radn::TrainOptions opts;
    opts.cfg = cargs.resolve();
    if (pretrain_only) opts.cfg.pretrain = true;
    opts.manifest_path = manifest;
    opts.out_dir = out_dir;
    opts.val_manifest_path = val_manifest;
    opts.resume_path = resume;
    opts.pretrain_only = pretrain_only;
    echo_config(opts.cfg);
    radn::Trainer trainer(std::move(opts));
    auto result = trainer.run();
    std::cout << "final checkpoint: " << result.final_checkpoint << '\n';
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& manifest_path,
             const std::string& scores_path, std::size_t threads) {
    auto ckpt = radn::load_checkpoint(ckpt_path);
    auto cfg = radn::parse_config(ckpt.config_text);
    auto manifest = radn::load_manifest(manifest_path);
    auto out = radn::evaluate_manifest(ckpt.params, cfg.model_config(), manifest, threads);
    if (!scores_path.empty()) {
        std::ofstream f(scores_path);
        if (!f) throw radn::DataError("cannot write score dump: " + scores_path);
        f << "#fields: dist\tmos\tpredicted\n";
        for (std::size_t i = 0; i < out.series.size(); ++i)
            f << out.series.ids[i] << '\t' << out.series.ground_truth[i] << '\t'
              << out.series.predicted[i] * cfg.mos_scale << '\n';
    }
    const std::size_t n = out.series.size();
    std::string srocc_str = "nan";
    if (n >= 3) {
        srocc_str = std::to_string(radn::srocc(out.series));
    } else {
        std::cerr << "warning: SROCC requires at least 3 images, got " << n << "\n";
    }
    std::cout << srocc_str << '\t' << radn::plcc(out.series) << '\t' << n << '\n';
    return 0;
}

int cmd_gradcheck(const std::string& variant, std::uint64_t seed) {
    const auto rows = radn::run_gradcheck(radn::variant_from_name(variant), seed);
    bool ok = true;
    std::printf("%-24s %-12s %-10s %s\n", "op", "max_rel_err", "tolerance", "status");
    for (const auto& r : rows) {
        std::printf("%-24s %-12.3e %-10.0e %s\n", r.op.c_str(), r.max_rel_err, r.tolerance,
                    r.pass ? "pass" : "FAIL");
        ok = ok && r.pass;
    }
    return ok ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RADN full-reference image quality assessment"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic distortion dataset");
    std::string gen_ref_dir, gen_out_dir;
    std::size_t gen_per_ref = 25, gen_synth_refs = 0, gen_ref_size = 64;
    std::uint64_t gen_seed = 1;
    gen->add_option("ref_dir", gen_ref_dir, "directory of reference images (.ppm/.png)")
        ->required();
    gen->add_option("out_dir", gen_out_dir, "output dataset directory")->required();
    gen->add_option("--per-ref", gen_per_ref, "distorted images per reference");
    gen->add_option("--seed", gen_seed, "generation seed");
    gen->add_option("--synth-refs", gen_synth_refs,
                    "first synthesize this many procedural references into ref_dir");
    gen->add_option("--ref-size", gen_ref_size, "side length of synthesized references");

    // pretrain / train
    auto* pretrain = app.add_subcommand("pretrain", "contrastive pretraining on contrast groups");
    auto* train = app.add_subcommand("train", "train score regression (optional pretrain phase)");
    struct TrainArgs {
        ConfigArgs cargs;
        std::string manifest, out_dir, val_manifest, resume;
    } pre_a, trn_a;
    for (auto [cmd, a] : {std::pair{pretrain, &pre_a}, std::pair{train, &trn_a}}) {
        a->cargs.attach(cmd);
        cmd->add_option("manifest", a->manifest, "training manifest")->required();
        cmd->add_option("out_dir", a->out_dir, "run directory for checkpoints")->required();
        cmd->add_option("--val-manifest", a->val_manifest, "validation manifest for per-epoch metrics");
        cmd->add_option("--resume", a->resume, "checkpoint to resume from");
    }

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint over a manifest");
    std::string ev_ckpt, ev_manifest, ev_scores;
    std::size_t ev_threads = env_threads();
    eval->add_option("checkpoint", ev_ckpt)->required();
    eval->add_option("manifest", ev_manifest)->required();
    eval->add_option("--scores", ev_scores, "write per-image scores to this file");
    eval->add_option("--threads", ev_threads, "worker count (default: RADN_THREADS or 1)");

    // score
    auto* score = app.add_subcommand("score", "score one reference/distorted pair");
    std::string sc_ckpt, sc_ref, sc_dist;
    score->add_option("checkpoint", sc_ckpt)->required();
    score->add_option("ref", sc_ref)->required();
    score->add_option("dist", sc_dist)->required();

    // vis
    auto* vis = app.add_subcommand("vis", "render the patch weight map for one pair");
    std::string vi_ckpt, vi_ref, vi_dist, vi_out;
    vis->add_option("checkpoint", vi_ckpt)->required();
    vis->add_option("ref", vi_ref)->required();
    vis->add_option("dist", vi_dist)->required();
    vis->add_option("out_png", vi_out)->required();

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    std::string gc_variant = "radn";
    std::uint64_t gc_seed = 1;
    gradcheck->add_option("--variant", gc_variant, "model variant for the end-to-end row");
    gradcheck->add_option("--seed", gc_seed, "suite seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            if (gen_synth_refs > 0) {
                std::filesystem::create_directories(gen_ref_dir);
                radn::Rng rng(gen_seed ^ 0x5eedu);
                for (std::size_t i = 0; i < gen_synth_refs; ++i) {
                    char name[32];
                    std::snprintf(name, sizeof name, "r%03zu.ppm", i);
                    auto img = radn::synth_reference(gen_ref_size, gen_ref_size, rng.next_u64());
                    radn::save_ppm(img, (std::filesystem::path(gen_ref_dir) / name).string());
                }
            }
            auto m = radn::build_synthetic_manifest(gen_ref_dir, gen_out_dir, gen_per_ref, gen_seed);
            std::cout << m.records.size() << " records\n"
                      << (std::filesystem::path(gen_out_dir) / "manifest.tsv").string() << '\n';
        } else if (pretrain->parsed()) {
            return run_training(pre_a.cargs, pre_a.manifest, pre_a.out_dir, pre_a.val_manifest,
                                pre_a.resume, /*pretrain_only=*/true);
        } else if (train->parsed()) {
            return run_training(trn_a.cargs, trn_a.manifest, trn_a.out_dir, trn_a.val_manifest,
                                trn_a.resume, /*pretrain_only=*/false);
        } else if (eval->parsed()) {
            return cmd_eval(ev_ckpt, ev_manifest, ev_scores, ev_threads);
        } else if (score->parsed()) {
            auto ckpt = radn::load_checkpoint(sc_ckpt);
            auto cfg = radn::parse_config(ckpt.config_text);
            auto ref = radn::load_image(sc_ref);
            auto dist = radn::load_image(sc_dist);
            auto rec = radn::predict_image(ckpt.params, cfg.model_config(), ref, dist,
                                           radn::PredictMode::eval_grid);
            std::printf("%.6f\n", rec.qhat * cfg.mos_scale);
        } else if (vis->parsed()) {
            auto ckpt = radn::load_checkpoint(vi_ckpt);
            auto cfg = radn::parse_config(ckpt.config_text);
            auto ref = radn::load_image(vi_ref);
            auto dist = radn::load_image(vi_dist);
            auto rec = radn::predict_image(ckpt.params, cfg.model_config(), ref, dist,
                                           radn::PredictMode::eval_grid);
            radn::save_image(radn::render_weight_map(rec), vi_out);
            std::cout << "wrote " << vi_out << '\n';
        } else if (gradcheck->parsed()) {
            return cmd_gradcheck(gc_variant, gc_seed);
        }
    } catch (const radn::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const radn::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return 0;
}
