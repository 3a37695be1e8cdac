#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "driftlearn/data.hpp"
#include "driftlearn/engine.hpp"
#include "driftlearn/memory.hpp"
#include "driftlearn/model.hpp"

namespace driftlearn {

// Versioned binary checkpoint: model parameters, optimizer state,
// normalization stats, memory-queue contents, and the fused/projected tails
// needed for exact online resume. Doubles are written raw, so a save/load
// cycle is bit-exact.
inline constexpr char kCheckpointMagic[8] = {'D', 'L', 'C', 'K', 'P', 'T', '0', '1'};

namespace detail {

inline void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

inline void write_f64(std::ostream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline double read_f64(std::istream& in) {
    double v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

inline void write_vec(std::ostream& out, const Vec& v) {
    write_u64(out, v.size());
    if (!v.empty()) {
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
}

inline Vec read_vec(std::istream& in) {
    const std::uint64_t n = read_u64(in);
    Vec v(n);
    if (n > 0) {
        in.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint: truncated file");
    }
    return v;
}

inline void write_params(std::ostream& out, const ModelParams& p) {
    write_u64(out, p.dims.F);
    write_u64(out, p.dims.C);
    write_u64(out, p.dims.L);
    write_u64(out, p.dims.K);
    write_u64(out, p.dims.ks_short);
    write_u64(out, p.dims.ks_long);
    for_each_tensor(p, [&](ParamGroup, const char*, const Vec& v) { write_vec(out, v); });
}

inline ModelParams read_params(std::istream& in) {
    ModelDims d;
    d.F = read_u64(in);
    d.C = read_u64(in);
    d.L = read_u64(in);
    d.K = read_u64(in);
    d.ks_short = read_u64(in);
    d.ks_long = read_u64(in);
    ModelParams p;
    p.resize(d);
    for_each_tensor(p, [&](ParamGroup, const char* name, Vec& v) {
        Vec loaded = read_vec(in);
        if (loaded.size() != v.size()) {
            throw std::runtime_error(std::string("checkpoint: tensor size mismatch for ") + name);
        }
        v = std::move(loaded);
    });
    return p;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const OfflineResult& state,
                            const NormStats& stats) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));

    detail::write_params(out, state.params);

    detail::write_f64(out, state.opt_state.base_lr);
    detail::write_f64(out, state.opt_state.weight_decay);
    detail::write_f64(out, state.opt_state.beta1);
    detail::write_f64(out, state.opt_state.beta2);
    detail::write_f64(out, state.opt_state.eps);
    detail::write_u64(out, static_cast<std::uint64_t>(state.opt_state.step));
    detail::write_params(out, state.opt_state.m);
    detail::write_params(out, state.opt_state.v);

    detail::write_vec(out, stats.feat_min);
    detail::write_vec(out, stats.feat_max);
    detail::write_vec(out, stats.target_mean);
    detail::write_vec(out, stats.target_std);
    detail::write_vec(out, stats.target_min);
    detail::write_vec(out, stats.target_max);

    detail::write_u64(out, state.queue.capacity());
    detail::write_u64(out, state.queue.item_dim());
    detail::write_u64(out, state.queue.size());
    for (std::size_t i = 0; i < state.queue.size(); ++i) {
        detail::write_vec(out, state.queue.entry(i).item);
        detail::write_vec(out, state.queue.entry(i).pooled);
    }

    detail::write_u64(out, state.fused_tail.size());
    for (const Vec& v : state.fused_tail) detail::write_vec(out, v);
    detail::write_u64(out, state.z_tail.size());
    for (const Vec& v : state.z_tail) detail::write_vec(out, v);
}

inline void load_checkpoint(const std::string& path, OfflineResult& state, NormStats& stats) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
    char magic[sizeof(kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }

    state.params = detail::read_params(in);

    state.opt_state.base_lr = detail::read_f64(in);
    state.opt_state.weight_decay = detail::read_f64(in);
    state.opt_state.beta1 = detail::read_f64(in);
    state.opt_state.beta2 = detail::read_f64(in);
    state.opt_state.eps = detail::read_f64(in);
    state.opt_state.step = static_cast<std::int64_t>(detail::read_u64(in));
    state.opt_state.m = detail::read_params(in);
    state.opt_state.v = detail::read_params(in);

    stats.feat_min = detail::read_vec(in);
    stats.feat_max = detail::read_vec(in);
    stats.target_mean = detail::read_vec(in);
    stats.target_std = detail::read_vec(in);
    stats.target_min = detail::read_vec(in);
    stats.target_max = detail::read_vec(in);

    const std::uint64_t cap = detail::read_u64(in);
    const std::uint64_t dim = detail::read_u64(in);
    const std::uint64_t n = detail::read_u64(in);
    state.queue = MemoryQueue(cap, dim);
    for (std::uint64_t i = 0; i < n; ++i) {
        Vec item = detail::read_vec(in);
        Vec pooled = detail::read_vec(in);
        state.queue.push(std::move(item), std::move(pooled));
    }

    state.fused_tail.clear();
    const std::uint64_t nf = detail::read_u64(in);
    for (std::uint64_t i = 0; i < nf; ++i) state.fused_tail.push_back(detail::read_vec(in));
    state.z_tail.clear();
    const std::uint64_t nz = detail::read_u64(in);
    for (std::uint64_t i = 0; i < nz; ++i) state.z_tail.push_back(detail::read_vec(in));
}

}  // namespace driftlearn
