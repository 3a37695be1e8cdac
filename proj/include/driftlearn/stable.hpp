#pragma once

#include <cmath>
#include <cstdint>
#include <map>

#include "driftlearn/adapt.hpp"
#include "driftlearn/config.hpp"
#include "driftlearn/tensor.hpp"

namespace driftlearn {

// Error-driven calibration state for the no-drift branch. The EMA error is
// tracked on a min-max scale so the threshold tau_e is unit-free across
// heterogeneous targets.
struct StableState {
    double ema_error = 0.0;                 // e-hat, starts at 0
    int consecutive_exceed = 0;
    std::map<std::int64_t, Vec> pred_cache;  // t -> yhat, pruned after use

    void reset_count() { consecutive_exceed = 0; }
};

// Window-level MAE: mean absolute residual over L_w samples and K targets.
inline double window_error(const std::vector<Vec>& preds, const std::vector<Vec>& labels) {
    check_dim(preds.size() == labels.size() && !preds.empty(), "window_error");
    const std::size_t k = preds[0].size();
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        check_dim(preds[i].size() == k && labels[i].size() == k, "window_error row");
        for (std::size_t j = 0; j < k; ++j) acc += std::abs(preds[i][j] - labels[i][j]);
    }
    return acc / static_cast<double>(preds.size() * k);
}

// e-hat_t = (1 - lambda) e-hat_{t-1} + lambda e_t
inline double ema_update(double ema_prev, double e_t, double lambda_e) {
    return (1.0 - lambda_e) * ema_prev + lambda_e * e_t;
}

// Consecutive-exceedance trigger: counts only no-drift steps with a freshly
// updated EMA above tau_e; any other step resets the tally. Firing resets it
// too.
inline bool stable_trigger(int drift_level, double ema_error, const StableConfig& cfg,
                           StableState& state) {
    if (drift_level == 0 && ema_error > cfg.tau_e) {
        state.consecutive_exceed += 1;
        if (state.consecutive_exceed >= cfg.k_e) {
            state.consecutive_exceed = 0;
            return true;
        }
        return false;
    }
    state.consecutive_exceed = 0;
    return false;
}

struct StableFineTuneStats {
    int iterations = 0;
    double final_train_loss = 0.0;
};

// Head-only calibration: AdamW on the joint loss with the mildest (level-1)
// weights, dedicated learning rate eta_e, no anchor pull, run for exactly the
// configured minimum iteration budget. The backbone is untouched via the
// head-only mask.
inline StableFineTuneStats stable_finetune(ModelParams& params, AdaptationSet& set,
                                           const RunConfig& cfg,
                                           const std::vector<Vec>& mem_context,
                                           const TrainOptions& opt) {
    StableFineTuneStats stats;
    if (set.entries.empty()) return stats;

    const FreezeMask mask = set_trainable_stable();
    OptimizerState opt_state =
        OptimizerState::fresh(params.dims, cfg.stable.eta_e, /*weight_decay=*/0.0);
    JointLossWeights w = JointLossWeights::from_level(cfg.level1);
    if (cfg.ablation.mse_only) w = {};

    std::vector<AdaptationEntry*> ordered;
    ordered.reserve(set.size());
    for (auto& e : set.entries) ordered.push_back(&e);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const AdaptationEntry* a, const AdaptationEntry* b) { return a->t < b->t; });

    // Track the best-seen head along the way: with the dedicated learning
    // rate the loss can cross its minimum mid-budget, and the contract is to
    // leave the best calibration in place, not the last iterate.
    const std::size_t batch_size = std::max<std::size_t>(1, opt.batch);
    std::size_t cursor = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    Mat best_w_head = params.w_head;
    Vec best_b_head = params.b_head;

    auto next_batch = [&]() {
        if (cursor >= ordered.size()) cursor = 0;
        const std::size_t bend = std::min(ordered.size(), cursor + batch_size);
        std::vector<AdaptationEntry*> batch(ordered.begin() + static_cast<std::ptrdiff_t>(cursor),
                                            ordered.begin() + static_cast<std::ptrdiff_t>(bend));
        cursor = bend;
        return batch;
    };

    for (int it = 0; it < cfg.stable.t_e; ++it) {
        std::vector<AdaptationEntry*> batch = next_batch();
        detail::BatchEval ev = detail::eval_batch(params, batch, mem_context, w, opt, true);
        if (ev.loss < best_loss) {
            best_loss = ev.loss;
            best_w_head = params.w_head;
            best_b_head = params.b_head;
        }
        ModelParams grads = zero_like(params);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            Vec d_yhat(params.dims.K);
            for (std::size_t j = 0; j < params.dims.K; ++j) d_yhat[j] = ev.d_preds.at(i, j);
            backward_train(params, ev.caches[i], d_yhat, grads);
        }
        optimizer_step(params, grads, opt_state, mask, /*lr_scale=*/1.0, /*lower_mult=*/1.0);
        stats.final_train_loss = ev.loss;
        stats.iterations = it + 1;
    }
    {
        // the final iterate was never scored; keep it only if it wins
        std::vector<AdaptationEntry*> batch = next_batch();
        detail::BatchEval ev = detail::eval_batch(params, batch, mem_context, w, opt, false);
        if (ev.loss < best_loss) {
            best_loss = ev.loss;
        } else {
            params.w_head = best_w_head;
            params.b_head = best_b_head;
        }
        stats.final_train_loss = best_loss;
    }
    return stats;
}

}  // namespace driftlearn
