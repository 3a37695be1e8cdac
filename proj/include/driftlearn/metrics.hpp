#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "driftlearn/tensor.hpp"

namespace driftlearn {

struct TargetMetrics {
    std::string name;
    double mse = 0.0;
    double mae = 0.0;
    double mape = 0.0;  // percent
    double r2 = 0.0;
    double sigma = 0.0;  // evaluation-split std (population)
    bool zero_variance = false;
};

struct RecoveryRecord {
    std::int64_t t_event = 0;
    int level = 0;
    std::int64_t steps = 0;
    bool recovered = false;
};

struct MetricsReport {
    std::size_t n_evaluated = 0;
    std::vector<TargetMetrics> per_target;
    double nmse = 0.0;
    double nmae = 0.0;
    double mean_mape = 0.0;
    double mean_r2 = 0.0;

    std::size_t drift_events = 0;    // detections with effective level >= 1
    std::size_t drift_adapted = 0;   // completed fine-tunes
    std::size_t drift_aborted = 0;
    std::map<int, std::size_t> adapted_by_level;
    std::size_t stable_events = 0;
    std::vector<RecoveryRecord> recovery;
};

// Per-target error metrics plus the scale-aware aggregates. sigma_k is the
// population std of each target over the evaluated pairs; eps_reg guards the
// normalization; the MAPE denominator is floored at 1e-6 * max|y| per target.
inline MetricsReport compute_metrics(const std::vector<Vec>& preds, const std::vector<Vec>& labels,
                                     const std::vector<std::string>& target_names,
                                     double eps_reg) {
    if (preds.size() != labels.size()) {
        throw std::invalid_argument("compute_metrics: size mismatch");
    }
    MetricsReport rep;
    rep.n_evaluated = preds.size();
    if (preds.size() < 2) {
        throw std::invalid_argument("compute_metrics: need at least 2 labeled records");
    }
    const std::size_t k = labels[0].size();
    const std::size_t n = preds.size();

    for (std::size_t j = 0; j < k; ++j) {
        TargetMetrics m;
        m.name = j < target_names.size() ? target_names[j] : "y" + std::to_string(j + 1);

        double mean_y = 0.0, max_abs = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mean_y += labels[i][j];
            max_abs = std::max(max_abs, std::abs(labels[i][j]));
        }
        mean_y /= static_cast<double>(n);

        const double mape_guard = std::max(1e-6 * max_abs, 1e-300);
        double sse = 0.0, sae = 0.0, sape = 0.0, sst = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double err = preds[i][j] - labels[i][j];
            sse += err * err;
            sae += std::abs(err);
            sape += std::abs(err) / std::max(std::abs(labels[i][j]), mape_guard);
            const double dev = labels[i][j] - mean_y;
            sst += dev * dev;
        }
        m.mse = sse / static_cast<double>(n);
        m.mae = sae / static_cast<double>(n);
        m.mape = 100.0 * sape / static_cast<double>(n);
        m.sigma = std::sqrt(sst / static_cast<double>(n));
        if (sst > 0.0) {
            m.r2 = 1.0 - sse / sst;
        } else {
            m.zero_variance = true;
            m.r2 = sse == 0.0 ? 1.0 : 0.0;
        }
        rep.per_target.push_back(m);
    }

    for (const auto& m : rep.per_target) {
        rep.nmse += m.mse / (m.sigma * m.sigma + eps_reg);
        rep.nmae += m.mae / (m.sigma + eps_reg);
        rep.mean_mape += m.mape;
        rep.mean_r2 += m.r2;
    }
    const double inv_k = 1.0 / static_cast<double>(k);
    rep.nmse *= inv_k;
    rep.nmae *= inv_k;
    rep.mean_mape *= inv_k;
    rep.mean_r2 *= inv_k;
    return rep;
}

}  // namespace driftlearn
