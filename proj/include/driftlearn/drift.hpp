#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "driftlearn/tensor.hpp"

namespace driftlearn {

// A detection window is L_w projected feature vectors, chronologically
// ordered.
using DetectionWindow = std::vector<Vec>;

inline double gaussian_kernel(const Vec& a, const Vec& b, double sigma) {
    if (sigma <= 0.0) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
    return std::exp(-sq_dist(a, b) / (2.0 * sigma * sigma));
}

// Squared MMD in its biased empirical form: all three double sums normalized
// by L_w^2, diagonal terms included.
inline double mmd2(const DetectionWindow& ref, const DetectionWindow& cur, double sigma) {
    if (ref.size() != cur.size() || ref.empty()) {
        throw std::invalid_argument("mmd2: windows must be non-empty and of equal length");
    }
    const std::size_t n = ref.size();
    double kxx = 0.0, kyy = 0.0, kxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            kxx += gaussian_kernel(ref[i], ref[j], sigma);
            kyy += gaussian_kernel(cur[i], cur[j], sigma);
            kxy += gaussian_kernel(ref[i], cur[j], sigma);
        }
    }
    const double inv = 1.0 / static_cast<double>(n * n);
    return inv * kxx + inv * kyy - 2.0 * inv * kxy;
}

struct DriftThresholds {
    double mild = 0.05;
    double moderate = 0.12;
    double severe = 0.2;

    void validate() const {
        if (!(mild < moderate && moderate < severe)) {
            throw std::invalid_argument("drift thresholds must be strictly increasing");
        }
    }
};

// Severity level: left-closed intervals, 0 = no drift.
inline int categorize(double v, const DriftThresholds& th) {
    if (v < th.mild) return 0;
    if (v < th.moderate) return 1;
    if (v < th.severe) return 2;
    return 3;
}

// During the first N_init adaptation events the effective level is capped at
// mild, suppressing aggressive updates while the online loop settles.
inline int apply_initial_cap(int d, std::int64_t trigger_count, std::int64_t n_init) {
    if (trigger_count <= n_init) return std::min(d, 1);
    return d;
}

struct DriftState {
    DetectionWindow reference;  // Z_ref, promoted only at adaptation events
    std::int64_t t_last = std::numeric_limits<std::int64_t>::min() / 4;
    std::int64_t cooldown = 3;
    std::int64_t trigger_count = 0;  // C_t
    std::int64_t n_init = 3;
    DriftThresholds thresholds;
    double sigma = 0.0;
    std::size_t window_len = 5;  // L_w

    // Bandwidth rule: sigma = sqrt(C/2) for representation dimension C.
    static DriftState make(std::size_t repr_dim, std::size_t window_len,
                           std::int64_t cooldown, std::int64_t n_init,
                           const DriftThresholds& th) {
        th.validate();
        DriftState s;
        s.sigma = std::sqrt(static_cast<double>(repr_dim) / 2.0);
        if (s.sigma <= 0.0) throw std::invalid_argument("DriftState: representation dim must be > 0");
        s.window_len = window_len;
        s.cooldown = cooldown;
        s.n_init = n_init;
        s.thresholds = th;
        return s;
    }

    bool has_reference() const { return reference.size() == window_len; }
};

inline bool should_detect(std::int64_t now, const DriftState& state, std::size_t window_fill) {
    return window_fill == state.window_len && (now - state.t_last) >= state.cooldown &&
           state.has_reference();
}

// Record the current detection window as the new reference after a completed
// drift-triggered fine-tuning.
inline void promote_reference(DriftState& state, DetectionWindow current, std::int64_t now,
                              bool adaptation_completed = true) {
    assert(adaptation_completed && "promote_reference requires a completed adaptation");
    (void)adaptation_completed;
    state.reference = std::move(current);
    state.t_last = now;
    state.trigger_count += 1;
}

}  // namespace driftlearn
