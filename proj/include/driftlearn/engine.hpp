#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "driftlearn/adapt.hpp"
#include "driftlearn/config.hpp"
#include "driftlearn/data.hpp"
#include "driftlearn/drift.hpp"
#include "driftlearn/losses.hpp"
#include "driftlearn/memory.hpp"
#include "driftlearn/metrics.hpp"
#include "driftlearn/model.hpp"
#include "driftlearn/stable.hpp"

namespace driftlearn {

struct OfflineResult {
    ModelParams params;
    OptimizerState opt_state;
    MemoryQueue queue;
    std::deque<Vec> fused_tail;  // the L-1 newest fused columns, oldest first
    DetectionWindow z_tail;      // the L_w newest projected features
    std::vector<double> epoch_train_loss;
    std::vector<double> epoch_val_loss;
    int epochs_run = 0;
};

struct StepRecord {
    std::int64_t t = 0;
    Vec yhat;
    bool detect_evaluated = false;
    double v = 0.0;
    int raw_level = 0;
    int effective_level = 0;
    bool drift_adapted = false;
    bool drift_aborted = false;
    bool stable_fired = false;
};

struct EventRec {
    enum class Kind { kDrift, kFinetune, kStable };
    Kind kind = Kind::kDrift;
    std::int64_t t = 0;
    // drift detection
    double v = 0.0;
    int raw_level = 0;
    int effective_level = 0;
    std::int64_t c_t = 0;
    bool adapted = false;
    // fine-tune
    int level = 0;
    std::size_t n_current = 0, n_similar = 0, n_resampled = 0, n_perturbed = 0;
    int epochs_run = 0;
    double final_train_loss = 0.0;
    double final_val_loss = 0.0;
    // stable
    double ema_error = 0.0;
    int iterations = 0;
};

struct RunResult {
    std::vector<StepRecord> records;
    std::vector<EventRec> events;
    MetricsReport report;
    DriftState drift_state;
    std::int64_t online_start = 0;
    std::int64_t online_end = 0;  // inclusive
};

namespace detail {

inline BranchMode branch_mode(const RunConfig& cfg) {
    BranchMode b;
    if (cfg.ablation.short_only) b.use_long = false;
    if (cfg.ablation.long_only) b.use_short = false;
    return b;
}

}  // namespace detail

// Offline pretraining on the first offline_size samples: MSE objective,
// chronological mini-batches with the memory queue carried through the pass,
// chronological validation holdout with early stopping, best parameters
// restored. The final state (queue, fused columns, projected tail) is rebuilt
// with a prediction-semantics pass so the online loop continues seamlessly.
inline OfflineResult offline_train(const RunConfig& cfg, const Stream& stream) {
    if (stream.size() <= cfg.offline_size + cfg.L) {
        throw std::runtime_error("offline_train: stream shorter than offline split + window");
    }
    if (cfg.offline_size < cfg.L || cfg.offline_size < cfg.l_w) {
        throw std::runtime_error(
            "offline_train: offline split must cover at least one input window and one "
            "detection window");
    }
    const bool fuse = !cfg.ablation.disable_memory;
    const BranchMode branches = detail::branch_mode(cfg);

    ModelDims dims;
    dims.F = stream.F;
    dims.C = cfg.C;
    dims.L = cfg.L;
    dims.K = stream.K;

    OfflineResult res;
    res.params = init_params(dims, cfg.seed);
    res.opt_state = OptimizerState::fresh(dims, cfg.base_lr, cfg.weight_decay);
    FreezeMask all_trainable = set_trainable(3);

    // window end indices
    std::vector<std::int64_t> window_ts;
    for (std::int64_t t = static_cast<std::int64_t>(cfg.L) - 1;
         t < static_cast<std::int64_t>(cfg.offline_size); ++t) {
        window_ts.push_back(t);
    }
    std::size_t n_val = static_cast<std::size_t>(
        std::floor(cfg.offline_val_split * static_cast<double>(window_ts.size())));
    n_val = std::min(n_val, window_ts.size() > 1 ? window_ts.size() - 1 : std::size_t{0});
    const std::size_t n_train = window_ts.size() - n_val;

    ModelParams best = res.params;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;

    const std::size_t K = dims.K;
    for (int epoch = 0; epoch < cfg.offline_epochs; ++epoch) {
        MemoryQueue queue(cfg.t_m, cfg.C);
        double train_loss = 0.0;
        std::size_t n_batches = 0;

        for (std::size_t b0 = 0; b0 < n_train; b0 += cfg.batch) {
            const std::size_t bend = std::min(n_train, b0 + cfg.batch);
            const std::size_t bsz = bend - b0;
            std::vector<TrainCache> caches(bsz);
            Mat preds(bsz, K), labels(bsz, K);
            for (std::size_t i = 0; i < bsz; ++i) {
                const std::int64_t t = window_ts[b0 + i];
                auto w = make_window(stream, t, cfg.L);
                forward_train(res.params, *w, queue.recent_pooled(cfg.r_agg), caches[i], fuse,
                              branches);
                for (std::size_t j = 0; j < K; ++j) {
                    preds.at(i, j) = caches[i].bb.yhat[j];
                    labels.at(i, j) = stream.samples[static_cast<std::size_t>(t)].y[j];
                }
                queue.push(make_memory_item(res.params, caches[i].bb.pooled),
                           caches[i].bb.pooled);
            }
            Mat d_preds;
            const double loss = batched_joint_loss(preds, labels, cfg.h_seq, {}, &d_preds);
            train_loss += loss;
            ++n_batches;

            ModelParams grads = zero_like(res.params);
            for (std::size_t i = 0; i < bsz; ++i) {
                Vec d_yhat(K);
                for (std::size_t j = 0; j < K; ++j) d_yhat[j] = d_preds.at(i, j);
                backward_train(res.params, caches[i], d_yhat, grads);
            }
            optimizer_step(res.params, grads, res.opt_state, all_trainable);
        }
        res.epoch_train_loss.push_back(n_batches ? train_loss / static_cast<double>(n_batches)
                                                 : 0.0);
        res.epochs_run = epoch + 1;

        if (n_val > 0) {
            double val_loss = 0.0;
            TrainCache cache;
            for (std::size_t i = n_train; i < window_ts.size(); ++i) {
                const std::int64_t t = window_ts[i];
                auto w = make_window(stream, t, cfg.L);
                forward_train(res.params, *w, queue.recent_pooled(cfg.r_agg), cache, fuse,
                              branches);
                double acc = 0.0;
                for (std::size_t j = 0; j < K; ++j) {
                    const double d =
                        cache.bb.yhat[j] - stream.samples[static_cast<std::size_t>(t)].y[j];
                    acc += d * d;
                }
                val_loss += acc / static_cast<double>(K);
                queue.push(make_memory_item(res.params, cache.bb.pooled), cache.bb.pooled);
            }
            val_loss /= static_cast<double>(n_val);
            res.epoch_val_loss.push_back(val_loss);
            if (val_loss < best_val) {
                best_val = val_loss;
                best = res.params;
                since_best = 0;
            } else if (++since_best >= cfg.offline_patience) {
                break;
            }
        }
    }
    if (n_val > 0 && std::isfinite(best_val)) res.params = best;

    // Final-state pass with online prediction semantics: each step fuses its
    // own column against the queue state of that step and pushes its item.
    MemoryQueue queue(cfg.t_m, cfg.C);
    std::deque<Vec> fused_cols;
    for (std::int64_t t = 0; t < static_cast<std::int64_t>(cfg.offline_size); ++t) {
        const Sample& s = stream.samples[static_cast<std::size_t>(t)];
        Vec z = project(res.params, s.x);
        Vec ztilde = fuse ? driftlearn::fuse(res.params, z, queue.aggregate(cfg.r_agg)) : z;
        fused_cols.push_back(ztilde);
        if (fused_cols.size() > cfg.L) fused_cols.pop_front();
        if (t + 1 >= static_cast<std::int64_t>(cfg.L)) {
            Mat zwin(cfg.C, cfg.L);
            for (std::size_t j = 0; j < cfg.L; ++j) {
                for (std::size_t c = 0; c < cfg.C; ++c) {
                    zwin.at(c, j) = fused_cols[fused_cols.size() - cfg.L + j][c];
                }
            }
            BackboneCache bb;
            forward_backbone(res.params, zwin, bb, branches);
            queue.push(make_memory_item(res.params, bb.pooled), bb.pooled);
        }
        if (t + static_cast<std::int64_t>(cfg.l_w) >= static_cast<std::int64_t>(cfg.offline_size)) {
            res.z_tail.push_back(z);
        }
    }
    res.queue = queue;
    while (fused_cols.size() > cfg.L - 1) fused_cols.pop_front();
    res.fused_tail = fused_cols;
    return res;
}

// Online detect -> fine-tune -> predict loop. Consumes the offline state and
// returns per-step records, the event log, and the aggregated metrics over
// every step whose label was released by the end of the run.
inline RunResult run_online(const RunConfig& cfg, const Stream& stream, const NormStats& stats,
                            OfflineResult state) {
    const bool fuse = !cfg.ablation.disable_memory;
    const BranchMode branches = detail::branch_mode(cfg);
    const std::int64_t online_start = static_cast<std::int64_t>(cfg.offline_size);
    const std::int64_t online_end = static_cast<std::int64_t>(stream.size()) - 1;

    RunResult run;
    run.online_start = online_start;
    run.online_end = online_end;

    DriftState dstate = DriftState::make(cfg.C, cfg.l_w, cfg.t_cool, cfg.n_init, cfg.thresholds);
    dstate.reference = state.z_tail;

    // Supervision available at step t is restricted to samples released by t;
    // pre-fill with the offline samples already released at the online start,
    // the rest enter at their release steps below.
    ReplayBuffer buffer(cfg.n_buf);
    for (std::int64_t t = 0; t < online_start; ++t) {
        const Sample& s = stream.samples[static_cast<std::size_t>(t)];
        if (s.label_release_t < online_start) buffer.push({s.t, s.x, s.y});
    }

    StableState stable;
    TrainOptions topt;
    topt.fuse_enabled = fuse;
    topt.branches = branches;
    topt.batch = cfg.batch;
    topt.h_seq = cfg.h_seq;

    Rng master = Rng::seeded(cfg.seed ^ 0xD1F7A5E3ULL);
    std::uint64_t event_counter = 0;

    std::deque<Vec>& fused_cols = state.fused_tail;  // maintained as the L-1 newest

    for (std::int64_t now = online_start; now <= online_end; ++now) {
        StepRecord rec;
        rec.t = now;
        const Sample& cur = stream.samples[static_cast<std::size_t>(now)];

        // (1) drift detection and adaptation, before inference
        int drift_level_now = 0;
        if (!cfg.ablation.disable_drift) {
            DetectionWindow z_cur;
            const std::int64_t w0 = now - static_cast<std::int64_t>(cfg.l_w) + 1;
            if (w0 >= 0) {
                for (std::int64_t t = w0; t <= now; ++t) {
                    z_cur.push_back(
                        project(state.params, stream.samples[static_cast<std::size_t>(t)].x));
                }
            }
            if (should_detect(now, dstate, z_cur.size())) {
                rec.detect_evaluated = true;
                rec.v = mmd2(dstate.reference, z_cur, dstate.sigma);
                rec.raw_level = categorize(rec.v, cfg.thresholds);
                rec.effective_level =
                    apply_initial_cap(rec.raw_level, dstate.trigger_count, cfg.n_init);
                drift_level_now = rec.effective_level;

                if (rec.effective_level >= 1) {
                    Rng event_rng = master.split(++event_counter);
                    const LevelConfig& level = cfg.level(rec.effective_level);
                    auto set = build_adaptation_set(now, stream, buffer, state.params, z_cur,
                                                    cfg.tau_h, dstate.sigma, cfg.n_ft, cfg.L,
                                                    level.perturb_eps, event_rng);
                    EventRec ev;
                    ev.kind = EventRec::Kind::kDrift;
                    ev.t = now;
                    ev.v = rec.v;
                    ev.raw_level = rec.raw_level;
                    ev.effective_level = rec.effective_level;
                    if (set) {
                        FineTuneStats fts =
                            fine_tune(state.params, *set, level, cfg,
                                      state.queue.recent_pooled(cfg.r_agg), topt);
                        promote_reference(dstate, z_cur, now);
                        stable.reset_count();
                        rec.drift_adapted = true;
                        ev.adapted = true;
                        ev.c_t = dstate.trigger_count;
                        run.events.push_back(ev);

                        EventRec fe;
                        fe.kind = EventRec::Kind::kFinetune;
                        fe.t = now;
                        fe.level = rec.effective_level;
                        fe.n_current = set->n_current;
                        fe.n_similar = set->n_similar;
                        fe.n_resampled = set->n_resampled;
                        fe.n_perturbed = set->n_perturbed;
                        fe.epochs_run = fts.epochs_run;
                        fe.final_train_loss = fts.final_train_loss;
                        fe.final_val_loss = fts.final_val_loss;
                        run.events.push_back(fe);
                    } else {
                        rec.drift_aborted = true;
                        ev.adapted = false;
                        ev.c_t = dstate.trigger_count;
                        run.events.push_back(ev);
                    }
                }
            }
        }

        // (2) predict
        Vec z = project(state.params, cur.x);
        Vec ztilde = fuse ? driftlearn::fuse(state.params, z, state.queue.aggregate(cfg.r_agg)) : z;
        Mat zwin(cfg.C, cfg.L);
        for (std::size_t j = 0; j + 1 < cfg.L; ++j) {
            for (std::size_t c = 0; c < cfg.C; ++c) {
                zwin.at(c, j) = fused_cols[fused_cols.size() - (cfg.L - 1) + j][c];
            }
        }
        for (std::size_t c = 0; c < cfg.C; ++c) zwin.at(c, cfg.L - 1) = ztilde[c];
        BackboneCache bb;
        forward_backbone(state.params, zwin, bb, branches);
        rec.yhat = bb.yhat;
        if (!cfg.ablation.disable_stable) stable.pred_cache[now] = bb.yhat;

        // (3) memory update
        state.queue.push(make_memory_item(state.params, bb.pooled), bb.pooled);
        fused_cols.push_back(ztilde);
        while (fused_cols.size() > cfg.L - 1) fused_cols.pop_front();

        // (4) label ingestion at release time
        const std::int64_t released = now - cfg.label_latency;
        if (released >= 0 && released <= online_end) {
            const Sample& rs = stream.samples[static_cast<std::size_t>(released)];
            buffer.push({rs.t, rs.x, rs.y});
        }

        // (5) stable-error branch on the newest fully released window
        if (!cfg.ablation.disable_stable) {
            const std::int64_t eval_t = now - cfg.label_latency;
            const std::int64_t w0 = eval_t - static_cast<std::int64_t>(cfg.l_w) + 1;
            if (w0 >= online_start && eval_t <= online_end) {
                std::vector<Vec> preds, labels;
                bool complete = true;
                for (std::int64_t t = w0; t <= eval_t; ++t) {
                    auto it = stable.pred_cache.find(t);
                    if (it == stable.pred_cache.end()) {
                        complete = false;
                        break;
                    }
                    preds.push_back(minmax_scale_targets(it->second, stats));
                    labels.push_back(minmax_scale_targets(
                        stream.samples[static_cast<std::size_t>(t)].y, stats));
                }
                if (complete) {
                    const double e = window_error(preds, labels);
                    stable.ema_error = ema_update(stable.ema_error, e, cfg.stable.lambda_e);
                    if (stable_trigger(drift_level_now, stable.ema_error, cfg.stable, stable)) {
                        DetectionWindow z_cur;
                        for (std::int64_t t = now - static_cast<std::int64_t>(cfg.l_w) + 1;
                             t <= now; ++t) {
                            z_cur.push_back(project(
                                state.params, stream.samples[static_cast<std::size_t>(t)].x));
                        }
                        Rng event_rng = master.split(++event_counter);
                        auto set = build_adaptation_set(
                            now, stream, buffer, state.params, z_cur, cfg.tau_h, dstate.sigma,
                            cfg.n_ft, cfg.L, cfg.level1.perturb_eps, event_rng);
                        if (set) {
                            StableFineTuneStats sts =
                                stable_finetune(state.params, *set, cfg,
                                                state.queue.recent_pooled(cfg.r_agg), topt);
                            rec.stable_fired = true;
                            EventRec ev;
                            ev.kind = EventRec::Kind::kStable;
                            ev.t = now;
                            ev.ema_error = stable.ema_error;
                            ev.iterations = sts.iterations;
                            ev.final_train_loss = sts.final_train_loss;
                            ev.n_current = set->n_current;
                            ev.n_similar = set->n_similar;
                            ev.n_resampled = set->n_resampled;
                            ev.n_perturbed = set->n_perturbed;
                            run.events.push_back(ev);
                        }
                    }
                }
            }
            // prune predictions no future window can consume
            const std::int64_t keep_from =
                now - cfg.label_latency - static_cast<std::int64_t>(cfg.l_w) + 1;
            while (!stable.pred_cache.empty() &&
                   stable.pred_cache.begin()->first < keep_from) {
                stable.pred_cache.erase(stable.pred_cache.begin());
            }
        }

        run.records.push_back(std::move(rec));
    }

    run.drift_state = dstate;

    // metrics over steps whose labels were released by the end of the run
    std::vector<Vec> preds, labels;
    for (const StepRecord& r : run.records) {
        const Sample& s = stream.samples[static_cast<std::size_t>(r.t)];
        if (s.label_release_t <= online_end) {
            preds.push_back(r.yhat);
            labels.push_back(s.y);
        }
    }
    if (preds.size() >= 2) {
        run.report = compute_metrics(preds, labels, stream.target_names, cfg.eps_reg);
    }
    for (const EventRec& ev : run.events) {
        switch (ev.kind) {
            case EventRec::Kind::kDrift:
                run.report.drift_events += 1;
                if (ev.adapted) {
                    run.report.drift_adapted += 1;
                    run.report.adapted_by_level[ev.effective_level] += 1;
                } else {
                    run.report.drift_aborted += 1;
                }
                break;
            case EventRec::Kind::kStable:
                run.report.stable_events += 1;
                break;
            default:
                break;
        }
    }
    return run;
}

// Windowed min-max-scaled MAE trajectory over the online steps, using the
// true labels retrospectively. Entry i corresponds to record i; steps whose
// trailing window is incomplete hold NaN.
inline Vec windowed_scaled_mae(const RunResult& run, const Stream& stream, const NormStats& stats,
                               std::size_t l_w) {
    const std::size_t n = run.records.size();
    Vec inst(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const StepRecord& r = run.records[i];
        const Sample& s = stream.samples[static_cast<std::size_t>(r.t)];
        const Vec ps = minmax_scale_targets(r.yhat, stats);
        const Vec ys = minmax_scale_targets(s.y, stats);
        double acc = 0.0;
        for (std::size_t j = 0; j < ps.size(); ++j) acc += std::abs(ps[j] - ys[j]);
        inst[i] = acc / static_cast<double>(ps.size());
    }
    Vec out(n, std::numeric_limits<double>::quiet_NaN());
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += inst[i];
        if (i >= l_w) acc -= inst[i - l_w];
        if (i + 1 >= l_w) out[i] = acc / static_cast<double>(l_w);
    }
    return out;
}

// Recovery times per adapted drift event: steps until the windowed scaled MAE
// first drops below the triggering level's threshold.
inline std::vector<RecoveryRecord> measure_recovery(const RunResult& run, const Stream& stream,
                                                    const NormStats& stats, const RunConfig& cfg) {
    const Vec wmae = windowed_scaled_mae(run, stream, stats, cfg.l_w);
    std::vector<RecoveryRecord> out;
    for (const EventRec& ev : run.events) {
        if (ev.kind != EventRec::Kind::kDrift || !ev.adapted) continue;
        double threshold = cfg.recovery_mae_level1;
        if (ev.effective_level == 2) threshold = cfg.recovery_mae_level2;
        if (ev.effective_level == 3) threshold = cfg.recovery_mae_level3;
        RecoveryRecord rr;
        rr.t_event = ev.t;
        rr.level = ev.effective_level;
        rr.recovered = false;
        const std::size_t start = static_cast<std::size_t>(ev.t - run.online_start);
        for (std::size_t i = start; i < wmae.size(); ++i) {
            if (!std::isnan(wmae[i]) && wmae[i] < threshold) {
                rr.steps = static_cast<std::int64_t>(i - start);
                rr.recovered = true;
                break;
            }
        }
        out.push_back(rr);
    }
    return out;
}

}  // namespace driftlearn
