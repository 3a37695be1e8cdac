#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "driftlearn/rng.hpp"
#include "driftlearn/tensor.hpp"

namespace driftlearn {

// Parameter groups. Every scalar parameter belongs to exactly one group;
// freezing and learning-rate layering operate at this granularity.
enum class ParamGroup : int {
    kProjection = 0,
    kLower = 1,   // first conv layer of each branch
    kUpper = 2,   // second conv layers + channel-mixing layer
    kHead = 3,
    kMemory = 4,  // memory-space projection
    kGate = 5,    // gated fusion
};
inline constexpr int kNumGroups = 6;

inline const char* group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::kProjection: return "projection";
        case ParamGroup::kLower: return "lower";
        case ParamGroup::kUpper: return "upper";
        case ParamGroup::kHead: return "head";
        case ParamGroup::kMemory: return "memory";
        case ParamGroup::kGate: return "gate";
    }
    return "?";
}

struct ModelDims {
    std::size_t F = 0;  // raw feature dimension
    std::size_t C = 32; // projected/representation dimension
    std::size_t L = 12; // input window length
    std::size_t K = 5;  // number of targets
    std::size_t ks_short = 3;
    std::size_t ks_long = 7;

    std::size_t hidden() const { return 2 * C; }  // concatenated branch width

    bool operator==(const ModelDims&) const = default;
};

// 1-D convolution over channels, weights indexed [out][in][tap].
struct Conv1d {
    std::size_t in_ch = 0, out_ch = 0, k = 0;
    Vec w;  // out_ch*in_ch*k
    Vec b;  // out_ch

    void resize(std::size_t ic, std::size_t oc, std::size_t kk) {
        in_ch = ic;
        out_ch = oc;
        k = kk;
        w.assign(ic * oc * kk, 0.0);
        b.assign(oc, 0.0);
    }
    double& wat(std::size_t o, std::size_t i, std::size_t t) {
        return w[(o * in_ch + i) * k + t];
    }
    double wat(std::size_t o, std::size_t i, std::size_t t) const {
        return w[(o * in_ch + i) * k + t];
    }
};

struct ModelParams {
    ModelDims dims;

    Mat w_proj;  // C x F
    Vec b_proj;  // C

    Conv1d conv_s1, conv_l1;          // lower
    Conv1d conv_s2, conv_l2, mix;     // upper (mix is 1x1 over 2C channels)

    Mat w_head;  // K x 2C
    Vec b_head;  // K

    Mat w_mem;  // C x 2C
    Vec b_mem;  // C

    Mat w_gate;  // C x 2C  (input [z; mbar])
    Vec b_gate;  // C

    void resize(const ModelDims& d) {
        dims = d;
        w_proj = Mat(d.C, d.F);
        b_proj.assign(d.C, 0.0);
        conv_s1.resize(d.C, d.C, d.ks_short);
        conv_s2.resize(d.C, d.C, d.ks_short);
        conv_l1.resize(d.C, d.C, d.ks_long);
        conv_l2.resize(d.C, d.C, d.ks_long);
        mix.resize(d.hidden(), d.hidden(), 1);
        w_head = Mat(d.K, d.hidden());
        b_head.assign(d.K, 0.0);
        w_mem = Mat(d.C, d.hidden());
        b_mem.assign(d.C, 0.0);
        w_gate = Mat(d.C, 2 * d.C);
        b_gate.assign(d.C, 0.0);
    }
};

// Visits every parameter tensor in a fixed order (the order defines the
// optimizer-state and checkpoint layouts).
template <typename P, typename Fn>
void for_each_tensor(P& p, Fn&& fn) {
    fn(ParamGroup::kProjection, "w_proj", p.w_proj.data);
    fn(ParamGroup::kProjection, "b_proj", p.b_proj);
    fn(ParamGroup::kLower, "conv_s1.w", p.conv_s1.w);
    fn(ParamGroup::kLower, "conv_s1.b", p.conv_s1.b);
    fn(ParamGroup::kLower, "conv_l1.w", p.conv_l1.w);
    fn(ParamGroup::kLower, "conv_l1.b", p.conv_l1.b);
    fn(ParamGroup::kUpper, "conv_s2.w", p.conv_s2.w);
    fn(ParamGroup::kUpper, "conv_s2.b", p.conv_s2.b);
    fn(ParamGroup::kUpper, "conv_l2.w", p.conv_l2.w);
    fn(ParamGroup::kUpper, "conv_l2.b", p.conv_l2.b);
    fn(ParamGroup::kUpper, "mix.w", p.mix.w);
    fn(ParamGroup::kUpper, "mix.b", p.mix.b);
    fn(ParamGroup::kHead, "w_head", p.w_head.data);
    fn(ParamGroup::kHead, "b_head", p.b_head);
    fn(ParamGroup::kMemory, "w_mem", p.w_mem.data);
    fn(ParamGroup::kMemory, "b_mem", p.b_mem);
    fn(ParamGroup::kGate, "w_gate", p.w_gate.data);
    fn(ParamGroup::kGate, "b_gate", p.b_gate);
}

inline std::size_t num_scalars(const ModelParams& p) {
    std::size_t n = 0;
    for_each_tensor(p, [&](ParamGroup, const char*, const Vec& v) { n += v.size(); });
    return n;
}

// Uniform fan-in init, biases zero. Deterministic given the seed.
inline ModelParams init_params(const ModelDims& d, std::uint64_t seed) {
    ModelParams p;
    p.resize(d);
    Rng rng = Rng::seeded(seed);
    auto fill = [&](Vec& v, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& x : v) x = rng.uniform(-bound, bound);
    };
    fill(p.w_proj.data, d.F);
    fill(p.conv_s1.w, d.C * d.ks_short);
    fill(p.conv_s2.w, d.C * d.ks_short);
    fill(p.conv_l1.w, d.C * d.ks_long);
    fill(p.conv_l2.w, d.C * d.ks_long);
    fill(p.mix.w, d.hidden());
    fill(p.w_head.data, d.hidden());
    fill(p.w_mem.data, d.hidden());
    fill(p.w_gate.data, 2 * d.C);
    return p;
}

inline ModelParams zero_like(const ModelParams& p) {
    ModelParams g;
    g.resize(p.dims);
    return g;
}

inline void scale_params(ModelParams& p, double s) {
    for_each_tensor(p, [&](ParamGroup, const char*, Vec& v) {
        for (double& x : v) x *= s;
    });
}

inline void accumulate(ModelParams& dst, const ModelParams& src, double scale = 1.0) {
    auto it = [&](Vec& a, const Vec& b) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
    };
    it(dst.w_proj.data, src.w_proj.data);
    it(dst.b_proj, src.b_proj);
    it(dst.conv_s1.w, src.conv_s1.w);
    it(dst.conv_s1.b, src.conv_s1.b);
    it(dst.conv_l1.w, src.conv_l1.w);
    it(dst.conv_l1.b, src.conv_l1.b);
    it(dst.conv_s2.w, src.conv_s2.w);
    it(dst.conv_s2.b, src.conv_s2.b);
    it(dst.conv_l2.w, src.conv_l2.w);
    it(dst.conv_l2.b, src.conv_l2.b);
    it(dst.mix.w, src.mix.w);
    it(dst.mix.b, src.mix.b);
    it(dst.w_head.data, src.w_head.data);
    it(dst.b_head, src.b_head);
    it(dst.w_mem.data, src.w_mem.data);
    it(dst.b_mem, src.b_mem);
    it(dst.w_gate.data, src.w_gate.data);
    it(dst.b_gate, src.b_gate);
}

// FNV-1a over the raw bytes of one group's tensors; used by freeze-contract
// checks ("bit-identical" really means bit-identical).
inline std::uint64_t group_hash(const ModelParams& p, ParamGroup g) {
    std::uint64_t h = 1469598103934665603ULL;
    for_each_tensor(p, [&](ParamGroup pg, const char*, const Vec& v) {
        if (pg != g) return;
        const unsigned char* bytes = reinterpret_cast<const unsigned char*>(v.data());
        for (std::size_t i = 0; i < v.size() * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    });
    return h;
}

// --- freezing ----------------------------------------------------------------

struct FreezeMask {
    std::array<bool, kNumGroups> trainable{};

    bool is_trainable(ParamGroup g) const { return trainable[static_cast<int>(g)]; }
    void set(ParamGroup g, bool v) { trainable[static_cast<int>(g)] = v; }
};

// Severity-level masks. Level 1 and the stable branch update the head only;
// level 2 unfreezes the upper-tier groups (stage-2 convolutions + channel
// mixing, with the gate and memory projections riding the same tier); level 3
// unfreezes everything.
inline FreezeMask set_trainable(int level) {
    FreezeMask m;
    switch (level) {
        case 1:
            m.set(ParamGroup::kHead, true);
            break;
        case 2:
            m.set(ParamGroup::kHead, true);
            m.set(ParamGroup::kUpper, true);
            m.set(ParamGroup::kMemory, true);
            m.set(ParamGroup::kGate, true);
            break;
        case 3:
            for (int i = 0; i < kNumGroups; ++i) m.trainable[i] = true;
            break;
        default:
            throw std::invalid_argument("set_trainable: unknown level " + std::to_string(level));
    }
    return m;
}

inline FreezeMask set_trainable_stable() { return set_trainable(1); }

// --- forward / backward -------------------------------------------------------

// z = W_p x + b_p
inline Vec project(const ModelParams& p, const Vec& x) {
    return affine(p.w_proj, p.b_proj, x);
}

namespace detail {

// pre[o][t] = b[o] + sum_i sum_k w[o][i][k] * in[i][t+k-pad], zero padded.
inline void conv_forward(const Conv1d& c, const Mat& in, Mat& pre) {
    const std::size_t L = in.cols;
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((c.k - 1) / 2);
    pre = Mat(c.out_ch, L);
    for (std::size_t o = 0; o < c.out_ch; ++o) {
        double* out_row = pre.row(o);
        for (std::size_t t = 0; t < L; ++t) out_row[t] = c.b[o];
        for (std::size_t i = 0; i < c.in_ch; ++i) {
            const double* in_row = in.row(i);
            const double* w = &c.w[(o * c.in_ch + i) * c.k];
            for (std::size_t t = 0; t < L; ++t) {
                double acc = 0.0;
                for (std::size_t kk = 0; kk < c.k; ++kk) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + kk) - pad;
                    if (src >= 0 && src < static_cast<std::ptrdiff_t>(L)) {
                        acc += w[kk] * in_row[src];
                    }
                }
                out_row[t] += acc;
            }
        }
    }
}

// Given d(pre), accumulate weight/bias grads and input grads.
inline void conv_backward(const Conv1d& c, const Mat& in, const Mat& d_pre, Conv1d& grad,
                          Mat& d_in) {
    const std::size_t L = in.cols;
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((c.k - 1) / 2);
    for (std::size_t o = 0; o < c.out_ch; ++o) {
        const double* dp = d_pre.row(o);
        for (std::size_t t = 0; t < L; ++t) grad.b[o] += dp[t];
        for (std::size_t i = 0; i < c.in_ch; ++i) {
            const double* in_row = in.row(i);
            double* d_in_row = d_in.row(i);
            const double* w = &c.w[(o * c.in_ch + i) * c.k];
            double* gw = &grad.w[(o * c.in_ch + i) * c.k];
            for (std::size_t t = 0; t < L; ++t) {
                const double g = dp[t];
                if (g == 0.0) continue;
                for (std::size_t kk = 0; kk < c.k; ++kk) {
                    const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + kk) - pad;
                    if (src >= 0 && src < static_cast<std::ptrdiff_t>(L)) {
                        gw[kk] += g * in_row[src];
                        d_in_row[src] += g * w[kk];
                    }
                }
            }
        }
    }
}

inline void relu_inplace(const Mat& pre, Mat& act) {
    act = pre;
    for (double& x : act.data) x = relu(x);
}

}  // namespace detail

struct BackboneCache {
    Mat zwin;                       // C x L input
    Mat pre_s1, a_s1, pre_s2, a_s2; // short branch
    Mat pre_l1, a_l1, pre_l2, a_l2; // long branch
    Mat h_cat;                      // 2C x L concatenation
    Mat pre_mix, h;                 // 2C x L mixed feature
    Vec pooled;                     // 2C, GAP over time
    Vec yhat;                       // K
};

// Branch ablation switches (mirrors the dual-branch ablation variants).
struct BranchMode {
    bool use_short = true;
    bool use_long = true;
};

// Backbone + head on an already-fused window.
inline void forward_backbone(const ModelParams& p, const Mat& zwin, BackboneCache& cache,
                             const BranchMode& branches = {}) {
    const ModelDims& d = p.dims;
    check_dim(zwin.rows == d.C && zwin.cols == d.L, "forward_backbone window");
    cache.zwin = zwin;

    detail::conv_forward(p.conv_s1, zwin, cache.pre_s1);
    detail::relu_inplace(cache.pre_s1, cache.a_s1);
    detail::conv_forward(p.conv_s2, cache.a_s1, cache.pre_s2);
    detail::relu_inplace(cache.pre_s2, cache.a_s2);

    detail::conv_forward(p.conv_l1, zwin, cache.pre_l1);
    detail::relu_inplace(cache.pre_l1, cache.a_l1);
    detail::conv_forward(p.conv_l2, cache.a_l1, cache.pre_l2);
    detail::relu_inplace(cache.pre_l2, cache.a_l2);

    cache.h_cat = Mat(d.hidden(), d.L);
    for (std::size_t c = 0; c < d.C; ++c) {
        for (std::size_t t = 0; t < d.L; ++t) {
            cache.h_cat.at(c, t) = branches.use_short ? cache.a_s2.at(c, t) : 0.0;
            cache.h_cat.at(d.C + c, t) = branches.use_long ? cache.a_l2.at(c, t) : 0.0;
        }
    }

    detail::conv_forward(p.mix, cache.h_cat, cache.pre_mix);
    detail::relu_inplace(cache.pre_mix, cache.h);

    cache.pooled.assign(d.hidden(), 0.0);
    for (std::size_t c = 0; c < d.hidden(); ++c) {
        cache.pooled[c] = mean(Vec(cache.h.row(c), cache.h.row(c) + d.L));
    }
    cache.yhat = affine(p.w_head, p.b_head, cache.pooled);
}

struct TrainCache {
    Mat xwin;                     // F x L raw (normalized) inputs
    Mat z;                        // C x L projected columns
    std::vector<Vec> mem_pooled;  // context: stored pooled features (constants)
    std::vector<Vec> mem_pre;     // C each, pre-ReLU of recomputed items
    Vec mbar;                     // C aggregated memory
    Mat gate_pre, gate;           // C x L
    bool fused = false;
    BackboneCache bb;
};

// Full differentiated path: project raw columns, rebuild memory items from
// stored pooled features, fuse every column against the aggregated memory,
// then run the backbone. This is the forward used by offline training and by
// fine-tuning; online prediction assembles its window from cached fused
// columns instead (see engine.hpp).
inline void forward_train(const ModelParams& p, const Mat& xwin,
                          const std::vector<Vec>& mem_pooled, TrainCache& cache,
                          bool fuse_enabled = true, const BranchMode& branches = {}) {
    const ModelDims& d = p.dims;
    check_dim(xwin.rows == d.F && xwin.cols == d.L, "forward_train window");
    cache.xwin = xwin;
    cache.mem_pooled = mem_pooled;

    cache.z = Mat(d.C, d.L);
    for (std::size_t t = 0; t < d.L; ++t) {
        for (std::size_t c = 0; c < d.C; ++c) {
            const double* wr = p.w_proj.row(c);
            double acc = p.b_proj[c];
            for (std::size_t f = 0; f < d.F; ++f) acc += wr[f] * xwin.at(f, t);
            cache.z.at(c, t) = acc;
        }
    }

    Mat zwin;
    cache.fused = fuse_enabled;
    if (!fuse_enabled) {
        zwin = cache.z;
        cache.mem_pre.clear();
        cache.mbar.assign(d.C, 0.0);
    } else {
        cache.mem_pre.clear();
        cache.mbar.assign(d.C, 0.0);
        for (const Vec& pooled : mem_pooled) {
            Vec pre = affine(p.w_mem, p.b_mem, pooled);
            for (std::size_t c = 0; c < d.C; ++c) cache.mbar[c] += relu(pre[c]);
            cache.mem_pre.push_back(std::move(pre));
        }
        if (!mem_pooled.empty()) {
            const double inv = 1.0 / static_cast<double>(mem_pooled.size());
            for (double& v : cache.mbar) v *= inv;
        }

        cache.gate_pre = Mat(d.C, d.L);
        cache.gate = Mat(d.C, d.L);
        zwin = Mat(d.C, d.L);
        Vec zm(2 * d.C);
        for (std::size_t t = 0; t < d.L; ++t) {
            for (std::size_t c = 0; c < d.C; ++c) zm[c] = cache.z.at(c, t);
            for (std::size_t c = 0; c < d.C; ++c) zm[d.C + c] = cache.mbar[c];
            for (std::size_t c = 0; c < d.C; ++c) {
                const double* wr = p.w_gate.row(c);
                double acc = p.b_gate[c];
                for (std::size_t j = 0; j < 2 * d.C; ++j) acc += wr[j] * zm[j];
                cache.gate_pre.at(c, t) = acc;
                const double g = sigmoid(acc);
                cache.gate.at(c, t) = g;
                zwin.at(c, t) = g * cache.z.at(c, t) + (1.0 - g) * cache.mbar[c];
            }
        }
    }
    forward_backbone(p, zwin, cache.bb, branches);
}

namespace detail {

// Backbone part of the chain; returns d(zwin) in d_in.
inline void backward_backbone(const ModelParams& p, const BackboneCache& cache,
                              const Vec& d_yhat, const Mat* d_h_extra, ModelParams& grads,
                              Mat& d_in) {
    const ModelDims& d = p.dims;

    // head
    Vec d_pooled(d.hidden(), 0.0);
    for (std::size_t k = 0; k < d.K; ++k) {
        const double gy = d_yhat[k];
        grads.b_head[k] += gy;
        double* gw = grads.w_head.row(k);
        const double* w = p.w_head.row(k);
        for (std::size_t c = 0; c < d.hidden(); ++c) {
            gw[c] += gy * cache.pooled[c];
            d_pooled[c] += gy * w[c];
        }
    }

    // GAP: dh[c][t] = d_pooled[c] / L (+ any direct gradient on h)
    Mat d_h(d.hidden(), d.L);
    const double inv_l = 1.0 / static_cast<double>(d.L);
    for (std::size_t c = 0; c < d.hidden(); ++c) {
        for (std::size_t t = 0; t < d.L; ++t) {
            d_h.at(c, t) = d_pooled[c] * inv_l;
            if (d_h_extra) d_h.at(c, t) += d_h_extra->at(c, t);
        }
    }

    // mixing layer (ReLU then 1x1 conv)
    Mat d_pre_mix = d_h;
    for (std::size_t i = 0; i < d_pre_mix.data.size(); ++i) {
        d_pre_mix.data[i] *= relu_grad(cache.pre_mix.data[i]);
    }
    Mat d_hcat(d.hidden(), d.L);
    conv_backward(p.mix, cache.h_cat, d_pre_mix, grads.mix, d_hcat);

    // split into branches
    Mat d_s2(d.C, d.L), d_l2(d.C, d.L);
    for (std::size_t c = 0; c < d.C; ++c) {
        for (std::size_t t = 0; t < d.L; ++t) {
            d_s2.at(c, t) = d_hcat.at(c, t);
            d_l2.at(c, t) = d_hcat.at(d.C + c, t);
        }
    }

    d_in = Mat(d.C, d.L);

    // short branch
    {
        Mat d_pre2 = d_s2;
        for (std::size_t i = 0; i < d_pre2.data.size(); ++i) {
            d_pre2.data[i] *= relu_grad(cache.pre_s2.data[i]);
        }
        Mat d_a1(d.C, d.L);
        conv_backward(p.conv_s2, cache.a_s1, d_pre2, grads.conv_s2, d_a1);
        Mat d_pre1 = d_a1;
        for (std::size_t i = 0; i < d_pre1.data.size(); ++i) {
            d_pre1.data[i] *= relu_grad(cache.pre_s1.data[i]);
        }
        conv_backward(p.conv_s1, cache.zwin, d_pre1, grads.conv_s1, d_in);
    }
    // long branch (accumulates into d_in)
    {
        Mat d_pre2 = d_l2;
        for (std::size_t i = 0; i < d_pre2.data.size(); ++i) {
            d_pre2.data[i] *= relu_grad(cache.pre_l2.data[i]);
        }
        Mat d_a1(d.C, d.L);
        conv_backward(p.conv_l2, cache.a_l1, d_pre2, grads.conv_l2, d_a1);
        Mat d_pre1 = d_a1;
        for (std::size_t i = 0; i < d_pre1.data.size(); ++i) {
            d_pre1.data[i] *= relu_grad(cache.pre_l1.data[i]);
        }
        conv_backward(p.conv_l1, cache.zwin, d_pre1, grads.conv_l1, d_in);
    }
}

}  // namespace detail

// Exact chain rule for the full training path. `d_yhat` is dL/dyhat;
// `d_h_extra` optionally carries a direct dL/dh term (2C x L). Gradients are
// accumulated into `grads` for every group; freezing is the optimizer's job.
inline void backward_train(const ModelParams& p, const TrainCache& cache, const Vec& d_yhat,
                           ModelParams& grads, const Mat* d_h_extra = nullptr) {
    const ModelDims& d = p.dims;
    Mat d_zwin;
    detail::backward_backbone(p, cache.bb, d_yhat, d_h_extra, grads, d_zwin);

    Mat d_z(d.C, d.L);
    if (!cache.fused) {
        d_z = d_zwin;
    } else {
        Vec d_mbar(d.C, 0.0);
        Vec zm(2 * d.C);
        for (std::size_t t = 0; t < d.L; ++t) {
            for (std::size_t c = 0; c < d.C; ++c) zm[c] = cache.z.at(c, t);
            for (std::size_t c = 0; c < d.C; ++c) zm[d.C + c] = cache.mbar[c];
            for (std::size_t c = 0; c < d.C; ++c) {
                const double dzt = d_zwin.at(c, t);
                const double g = cache.gate.at(c, t);
                const double zc = cache.z.at(c, t);
                const double mc = cache.mbar[c];
                // z~ = g*z + (1-g)*m
                const double d_g = dzt * (zc - mc);
                const double d_pre = d_g * g * (1.0 - g);
                d_z.at(c, t) += dzt * g;
                d_mbar[c] += dzt * (1.0 - g);
                grads.b_gate[c] += d_pre;
                double* gw = grads.w_gate.row(c);
                const double* w = p.w_gate.row(c);
                for (std::size_t j = 0; j < 2 * d.C; ++j) gw[j] += d_pre * zm[j];
                for (std::size_t j = 0; j < d.C; ++j) d_z.at(j, t) += d_pre * w[j];
                for (std::size_t j = 0; j < d.C; ++j) d_mbar[j] += d_pre * w[d.C + j];
            }
        }
        // memory aggregation and item recomputation
        if (!cache.mem_pre.empty()) {
            const double inv = 1.0 / static_cast<double>(cache.mem_pre.size());
            for (std::size_t i = 0; i < cache.mem_pre.size(); ++i) {
                const Vec& pre = cache.mem_pre[i];
                const Vec& pooled = cache.mem_pooled[i];
                for (std::size_t c = 0; c < d.C; ++c) {
                    const double dm = d_mbar[c] * inv * relu_grad(pre[c]);
                    if (dm == 0.0) continue;
                    grads.b_mem[c] += dm;
                    double* gw = grads.w_mem.row(c);
                    for (std::size_t j = 0; j < d.hidden(); ++j) gw[j] += dm * pooled[j];
                }
            }
        }
    }

    // projection
    for (std::size_t t = 0; t < d.L; ++t) {
        for (std::size_t c = 0; c < d.C; ++c) {
            const double dz = d_z.at(c, t);
            if (dz == 0.0) continue;
            grads.b_proj[c] += dz;
            double* gw = grads.w_proj.row(c);
            for (std::size_t f = 0; f < d.F; ++f) gw[f] += dz * cache.xwin.at(f, t);
        }
    }
}

// --- optimizer -----------------------------------------------------------------

struct OptimizerState {
    double base_lr = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    ModelParams m;  // first moments (same layout as params)
    ModelParams v;  // second moments

    static OptimizerState fresh(const ModelDims& dims, double lr, double wd) {
        OptimizerState s;
        s.base_lr = lr;
        s.weight_decay = wd;
        s.m.resize(dims);
        s.v.resize(dims);
        return s;
    }
};

// AdamW with bias-corrected moments and decoupled weight decay. Masked groups
// are skipped entirely (values and moments untouched). The effective learning
// rate per group is base_lr * lr_scale * (lower_mult for projection/lower,
// 1 otherwise).
inline void optimizer_step(ModelParams& params, const ModelParams& grads, OptimizerState& state,
                           const FreezeMask& mask, double lr_scale = 1.0,
                           double lower_mult = 1.0) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    struct TensorRef {
        ParamGroup g;
        Vec* p;
        const Vec* grad;
        Vec* m;
        Vec* v;
    };
    std::vector<TensorRef> refs;
    {
        std::vector<std::pair<ParamGroup, Vec*>> ps, ms, vs;
        std::vector<std::pair<ParamGroup, const Vec*>> gs;
        for_each_tensor(params, [&](ParamGroup g, const char*, Vec& t) { ps.push_back({g, &t}); });
        for_each_tensor(grads,
                        [&](ParamGroup g, const char*, const Vec& t) { gs.push_back({g, &t}); });
        for_each_tensor(state.m, [&](ParamGroup g, const char*, Vec& t) { ms.push_back({g, &t}); });
        for_each_tensor(state.v, [&](ParamGroup g, const char*, Vec& t) { vs.push_back({g, &t}); });
        for (std::size_t i = 0; i < ps.size(); ++i) {
            refs.push_back({ps[i].first, ps[i].second, gs[i].second, ms[i].second, vs[i].second});
        }
    }

    for (auto& r : refs) {
        if (!mask.is_trainable(r.g)) continue;
        const bool lower_tier = r.g == ParamGroup::kProjection || r.g == ParamGroup::kLower;
        const double lr = state.base_lr * lr_scale * (lower_tier ? lower_mult : 1.0);
        Vec& theta = *r.p;
        const Vec& g = *r.grad;
        Vec& m = *r.m;
        Vec& v = *r.v;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            theta[i] -= lr * (mh / (std::sqrt(vh) + state.eps) + state.weight_decay * theta[i]);
        }
    }
}

}  // namespace driftlearn
