// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: key=value text, unknown keys rejected, fully
// serializable for checkpoint provenance. Defaults reproduce the training
// protocol this project targets (32 random patches, batch 2, ADAM with
// beta1 0.9 / beta2 0.999, lr 1e-4 decayed x0.8 every 100 epochs).
#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "radn/model.hpp"

namespace radn {

struct RunConfig {
    // model
    std::string variant = "radn";
    std::vector<std::size_t> stage_channels = {32, 64, 128, 256, 512};
    std::size_t patch_size = 32;
    std::size_t d_k = 512;
    std::size_t deform_stage = 3;
    std::size_t head_hidden = 512;
    double weight_epsilon = 1e-6;
    double max_offset = 0.0;
    // optimization
    std::uint64_t seed = 1;
    std::size_t epochs = 200;
    double lr = 1e-4;
    double lr_decay = 0.8;
    std::size_t lr_decay_every = 100;
    std::size_t batch = 2;
    std::size_t patches_per_image = 32;
    double mos_scale = 100.0;
    std::size_t checkpoint_every = 50;
    // contrastive pretraining
    bool pretrain = false;
    std::size_t pretrain_epochs = 50;
    std::size_t group_max = 8;
    bool soft_labels = false;
    double tau = 5.0;

    ModelConfig model_config() const {
        ModelConfig m;
        m.variant = variant_from_name(variant);
        m.stage_channels = stage_channels;
        m.patch_size = patch_size;
        m.d_k = d_k;
        m.deform_stage = deform_stage;
        m.head_hidden = head_hidden;
        m.weight_epsilon = static_cast<float>(weight_epsilon);
        m.max_offset = static_cast<float>(max_offset);
        m.validate();
        return m;
    }
};

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string fmt_channels(const std::vector<std::size_t>& cs) {
    std::string s;
    for (std::size_t i = 0; i < cs.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(cs[i]);
    }
    return s;
}

}  // namespace detail

inline std::string serialize_config(const RunConfig& c) {
    std::ostringstream os;
    os << "variant=" << c.variant << '\n'
       << "stage_channels=" << detail::fmt_channels(c.stage_channels) << '\n'
       << "patch_size=" << c.patch_size << '\n'
       << "d_k=" << c.d_k << '\n'
       << "deform_stage=" << c.deform_stage << '\n'
       << "head_hidden=" << c.head_hidden << '\n'
       << "weight_epsilon=" << detail::fmt_double(c.weight_epsilon) << '\n'
       << "max_offset=" << detail::fmt_double(c.max_offset) << '\n'
       << "seed=" << c.seed << '\n'
       << "epochs=" << c.epochs << '\n'
       << "lr=" << detail::fmt_double(c.lr) << '\n'
       << "lr_decay=" << detail::fmt_double(c.lr_decay) << '\n'
       << "lr_decay_every=" << c.lr_decay_every << '\n'
       << "batch=" << c.batch << '\n'
       << "patches_per_image=" << c.patches_per_image << '\n'
       << "mos_scale=" << detail::fmt_double(c.mos_scale) << '\n'
       << "checkpoint_every=" << c.checkpoint_every << '\n'
       << "pretrain=" << (c.pretrain ? 1 : 0) << '\n'
       << "pretrain_epochs=" << c.pretrain_epochs << '\n'
       << "group_max=" << c.group_max << '\n'
       << "soft_labels=" << (c.soft_labels ? 1 : 0) << '\n'
       << "tau=" << detail::fmt_double(c.tau) << '\n';
    return os.str();
}

// Applies one key=value assignment; throws DataError for unknown keys or
// unparsable values.
inline void apply_config_kv(RunConfig& c, const std::string& key, const std::string& value) {
    auto to_u = [&](const std::string& v) -> std::uint64_t {
        std::size_t pos = 0;
        const auto r = std::stoull(v, &pos);
        if (pos != v.size()) throw DataError("config: bad integer for " + key + ": '" + v + "'");
        return r;
    };
    auto to_d = [&](const std::string& v) -> double {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw DataError("config: bad number for " + key + ": '" + v + "'");
        return r;
    };
    auto to_b = [&](const std::string& v) -> bool {
        if (v == "1" || v == "true" || v == "on") return true;
        if (v == "0" || v == "false" || v == "off") return false;
        throw DataError("config: bad boolean for " + key + ": '" + v + "'");
    };
    if (key == "variant") {
        variant_from_name(value);  // validates
        c.variant = value;
    } else if (key == "stage_channels") {
        std::vector<std::size_t> cs;
        std::istringstream in(value);
        std::string tok;
        while (std::getline(in, tok, ',')) cs.push_back(to_u(tok));
        if (cs.empty()) throw DataError("config: empty stage_channels");
        c.stage_channels = cs;
    } else if (key == "patch_size") c.patch_size = to_u(value);
    else if (key == "d_k") c.d_k = to_u(value);
    else if (key == "deform_stage") c.deform_stage = to_u(value);
    else if (key == "head_hidden") c.head_hidden = to_u(value);
    else if (key == "weight_epsilon") c.weight_epsilon = to_d(value);
    else if (key == "max_offset") c.max_offset = to_d(value);
    else if (key == "seed") c.seed = to_u(value);
    else if (key == "epochs") c.epochs = to_u(value);
    else if (key == "lr") c.lr = to_d(value);
    else if (key == "lr_decay") c.lr_decay = to_d(value);
    else if (key == "lr_decay_every") c.lr_decay_every = to_u(value);
    else if (key == "batch") c.batch = to_u(value);
    else if (key == "patches_per_image") c.patches_per_image = to_u(value);
    else if (key == "mos_scale") c.mos_scale = to_d(value);
    else if (key == "checkpoint_every") c.checkpoint_every = to_u(value);
    else if (key == "pretrain") c.pretrain = to_b(value);
    else if (key == "pretrain_epochs") c.pretrain_epochs = to_u(value);
    else if (key == "group_max") c.group_max = to_u(value);
    else if (key == "soft_labels") c.soft_labels = to_b(value);
    else if (key == "tau") c.tau = to_d(value);
    else throw DataError("config: unknown key '" + key + "'");
}

// Parses key=value lines ('#' comments allowed). All offending keys are
// reported together.
inline RunConfig parse_config(const std::string& text) {
    RunConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::string> errors;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
        std::size_t start = 0;
        while (start < line.size() && std::isspace(static_cast<unsigned char>(line[start]))) ++start;
        line.erase(0, start);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            errors.push_back("line " + std::to_string(lineno) + ": expected key=value");
            continue;
        }
        try {
            apply_config_kv(c, line.substr(0, eq), line.substr(eq + 1));
        } catch (const DataError& e) {
            errors.push_back("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!errors.empty()) {
        std::string msg = "config parse errors:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw DataError(msg);
    }
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_config(text);
}

}  // namespace radn
