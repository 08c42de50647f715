// SPDX-License-Identifier: Apache-2.0
//
// Versioned checkpoint container: magic, format version, epoch/phase,
// config echo, then ordered (name, shape, raw little-endian f32) entries,
// optionally followed by optimizer state. Round-trips byte-exactly.
#pragma once

#include <cstring>
#include <fstream>
#include <string>

#include "radn/config.hpp"
#include "radn/optim.hpp"

namespace radn {

enum class TrainPhase : std::uint32_t { none = 0, pretrain = 1, regression = 2 };

inline const char* phase_name(TrainPhase p) {
    switch (p) {
        case TrainPhase::none: return "none";
        case TrainPhase::pretrain: return "pretrain";
        case TrainPhase::regression: return "regression";
    }
    return "?";
}

struct Checkpoint {
    std::uint32_t epoch = 0;
    TrainPhase phase = TrainPhase::none;
    std::string config_text;
    ModelParams params;
    bool has_optimizer = false;
    AdamState optimizer;
};

namespace detail {

constexpr char kCkptMagic[8] = {'R', 'A', 'D', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename V>
void put(std::ostream& os, V v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
V get(std::istream& is) {
    V v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw DataError("truncated checkpoint file");
    return v;
}

inline void put_floats(std::ostream& os, const std::vector<float>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(float)));
}

inline void get_floats(std::istream& is, std::vector<float>& v) {
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(float)));
    if (!is) throw DataError("truncated checkpoint file");
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write checkpoint: " + path);
    f.write(detail::kCkptMagic, 8);
    detail::put(f, detail::kCkptVersion);
    detail::put(f, ckpt.epoch);
    detail::put(f, static_cast<std::uint32_t>(ckpt.phase));
    detail::put(f, static_cast<std::uint64_t>(ckpt.config_text.size()));
    f.write(ckpt.config_text.data(), static_cast<std::streamsize>(ckpt.config_text.size()));
    detail::put(f, static_cast<std::uint64_t>(ckpt.params.size()));
    for (const auto& [name, t] : ckpt.params.entries()) {
        detail::put(f, static_cast<std::uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put(f, static_cast<std::uint32_t>(t.ndim()));
        for (auto d : t.shape()) detail::put(f, static_cast<std::uint64_t>(d));
        detail::put_floats(f, t.data());
    }
    detail::put(f, static_cast<std::uint8_t>(ckpt.has_optimizer ? 1 : 0));
    if (ckpt.has_optimizer) {
        detail::put(f, static_cast<std::uint64_t>(ckpt.optimizer.step));
        for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
            detail::put_floats(f, ckpt.optimizer.m[i]);
            detail::put_floats(f, ckpt.optimizer.v[i]);
        }
    }
    if (!f) throw DataError("checkpoint write failed: " + path);
}

// trainable: load parameters with gradient participation (for resuming).
inline Checkpoint load_checkpoint(const std::string& path, bool trainable = false) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
        throw DataError("not a checkpoint file: " + path);
    const auto version = detail::get<std::uint32_t>(f);
    if (version != detail::kCkptVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
    Checkpoint ckpt;
    ckpt.epoch = detail::get<std::uint32_t>(f);
    ckpt.phase = static_cast<TrainPhase>(detail::get<std::uint32_t>(f));
    const auto cfg_len = detail::get<std::uint64_t>(f);
    ckpt.config_text.resize(cfg_len);
    f.read(ckpt.config_text.data(), static_cast<std::streamsize>(cfg_len));
    if (!f) throw DataError("truncated checkpoint file: " + path);
    const auto nparams = detail::get<std::uint64_t>(f);
    for (std::uint64_t i = 0; i < nparams; ++i) {
        const auto name_len = detail::get<std::uint32_t>(f);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        const auto ndim = detail::get<std::uint32_t>(f);
        Shape shape(ndim);
        for (auto& d : shape) d = detail::get<std::uint64_t>(f);
        Tensor t(shape, trainable);
        detail::get_floats(f, t.data());
        ckpt.params.add(name, std::move(t));
    }
    ckpt.has_optimizer = detail::get<std::uint8_t>(f) != 0;
    if (ckpt.has_optimizer) {
        ckpt.optimizer.init(ckpt.params);
        ckpt.optimizer.step = detail::get<std::uint64_t>(f);
        for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
            detail::get_floats(f, ckpt.optimizer.m[i]);
            detail::get_floats(f, ckpt.optimizer.v[i]);
        }
    }
    return ckpt;
}

}  // namespace radn
