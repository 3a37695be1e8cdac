#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "driftlearn/config.hpp"
#include "driftlearn/data.hpp"
#include "driftlearn/drift.hpp"
#include "driftlearn/losses.hpp"
#include "driftlearn/memory.hpp"
#include "driftlearn/model.hpp"
#include "driftlearn/rng.hpp"

namespace driftlearn {

// FIFO store of released labeled samples. Holds normalized feature rows plus
// labels; training windows are reconstructed from the stream on demand so
// retrieval always runs in the live projected-feature space. Distinct from
// the Dynamic Memory Queue by contract: no shared storage.
class ReplayBuffer {
public:
    struct Record {
        std::int64_t t = 0;
        Vec x;  // normalized features
        Vec y;  // original-unit label
    };

    ReplayBuffer() = default;
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

    void push(Record r) {
        records_.push_back(std::move(r));
        if (records_.size() > capacity_) records_.pop_front();
    }

    std::size_t size() const { return records_.size(); }
    std::size_t capacity() const { return capacity_; }
    const Record& operator[](std::size_t i) const { return records_[i]; }

private:
    std::size_t capacity_ = 0;
    std::deque<Record> records_;
};

// --- similarity retrieval -----------------------------------------------------

struct SimilarCandidate {
    double score = 0.0;
    std::vector<std::int64_t> sample_ts;  // the L_w member timestamps
};

// Scan the replay buffer for runs of L_w consecutive-timestamp records, score
// each run's projected features against the current detection window, and
// return the runs scoring below tau_h, ascending by score.
inline std::vector<SimilarCandidate> retrieve_similar(const ReplayBuffer& buffer,
                                                      const ModelParams& params,
                                                      const DetectionWindow& z_cur,
                                                      double tau_h, double sigma) {
    std::vector<SimilarCandidate> out;
    const std::size_t lw = z_cur.size();
    if (buffer.size() < lw || lw == 0) return out;

    // project each buffered row once
    std::vector<Vec> projected(buffer.size());
    for (std::size_t i = 0; i < buffer.size(); ++i) projected[i] = project(params, buffer[i].x);

    for (std::size_t start = 0; start + lw <= buffer.size(); ++start) {
        bool consecutive = true;
        for (std::size_t j = 1; j < lw; ++j) {
            if (buffer[start + j].t != buffer[start + j - 1].t + 1) {
                consecutive = false;
                break;
            }
        }
        if (!consecutive) continue;
        DetectionWindow cand(projected.begin() + static_cast<std::ptrdiff_t>(start),
                             projected.begin() + static_cast<std::ptrdiff_t>(start + lw));
        const double score = mmd2(cand, z_cur, sigma);
        if (score < tau_h) {
            SimilarCandidate c;
            c.score = score;
            for (std::size_t j = 0; j < lw; ++j) c.sample_ts.push_back(buffer[start + j].t);
            out.push_back(std::move(c));
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const SimilarCandidate& a, const SimilarCandidate& b) {
        return a.score < b.score;
    });
    return out;
}

// --- augmentation ---------------------------------------------------------------

enum class ResampleOp { kLinearInterp = 0, kPooling = 1, kAntialiasConv = 2 };

// Length-preserving scale variants of a 1-D series. All three operators
// preserve constant series.
inline Vec resample_series(const Vec& s, ResampleOp op, bool* degenerate = nullptr) {
    const std::size_t n = s.size();
    if (n < 2) {
        if (degenerate) *degenerate = true;
        return s;
    }
    Vec out(n);
    auto at = [&](std::ptrdiff_t i) {
        if (i < 0) return s[0];
        if (i >= static_cast<std::ptrdiff_t>(n)) return s[n - 1];
        return s[static_cast<std::size_t>(i)];
    };
    switch (op) {
        case ResampleOp::kLinearInterp:
            // upsample x2 by midpoints, decimate back phase-shifted by half a step
            for (std::size_t i = 0; i + 1 < n; ++i) out[i] = 0.5 * (s[i] + s[i + 1]);
            out[n - 1] = s[n - 1];
            break;
        case ResampleOp::kPooling:
            // width-2 neighbor mean, 'same' length via edge replication
            for (std::size_t i = 0; i < n; ++i) {
                out[i] = 0.5 * (at(static_cast<std::ptrdiff_t>(i) - 1) +
                                at(static_cast<std::ptrdiff_t>(i) + 1));
            }
            break;
        case ResampleOp::kAntialiasConv:
            for (std::size_t i = 0; i < n; ++i) {
                out[i] = 0.25 * at(static_cast<std::ptrdiff_t>(i) - 1) + 0.5 * s[i] +
                         0.25 * at(static_cast<std::ptrdiff_t>(i) + 1);
            }
            break;
    }
    return out;
}

// Apply one randomly chosen operator along time to every feature row.
inline Mat resample_window(const Mat& window, Rng& rng, ResampleOp* chosen = nullptr) {
    const ResampleOp op = static_cast<ResampleOp>(rng.uniform_index(3));
    if (chosen) *chosen = op;
    Mat out(window.rows, window.cols);
    for (std::size_t r = 0; r < window.rows; ++r) {
        Vec row(window.row(r), window.row(r) + window.cols);
        Vec v = resample_series(row, op);
        for (std::size_t c = 0; c < window.cols; ++c) out.at(r, c) = v[c];
    }
    return out;
}

// z_gen = z + eps * xi, xi ~ N(0, diag(sigma_diag)). Label is copied by the
// caller.
inline Vec perturb(const Vec& z, double eps, const Vec& sigma_diag, Rng& rng) {
    check_dim(z.size() == sigma_diag.size(), "perturb");
    Vec out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double sd = sigma_diag[i] > 0.0 ? std::sqrt(sigma_diag[i]) : 0.0;
        out[i] = z[i] + eps * sd * rng.normal();
    }
    return out;
}

// Per-feature population variance over every column of the given windows;
// identity (all ones) when fewer than 2 columns exist in total.
inline Vec estimate_feature_variance(const std::vector<Mat>& windows, std::size_t f,
                                     bool* warned = nullptr) {
    std::size_t total = 0;
    for (const Mat& w : windows) total += w.cols;
    if (total < 2) {
        if (warned) *warned = true;
        return Vec(f, 1.0);
    }
    Vec mean_v(f, 0.0);
    for (const Mat& w : windows) {
        for (std::size_t c = 0; c < w.cols; ++c) {
            for (std::size_t r = 0; r < f; ++r) mean_v[r] += w.at(r, c);
        }
    }
    for (double& v : mean_v) v /= static_cast<double>(total);
    Vec var(f, 0.0);
    for (const Mat& w : windows) {
        for (std::size_t c = 0; c < w.cols; ++c) {
            for (std::size_t r = 0; r < f; ++r) {
                const double d = w.at(r, c) - mean_v[r];
                var[r] += d * d;
            }
        }
    }
    for (double& v : var) v /= static_cast<double>(total);
    return var;
}

// --- adaptation set --------------------------------------------------------------

enum class SampleSource { kCurrentLabeled, kSimilarHistory, kResampled, kPerturbed };

inline const char* source_name(SampleSource s) {
    switch (s) {
        case SampleSource::kCurrentLabeled: return "current_labeled";
        case SampleSource::kSimilarHistory: return "similar_history";
        case SampleSource::kResampled: return "resampled";
        case SampleSource::kPerturbed: return "perturbed";
    }
    return "?";
}

struct AdaptationEntry {
    Mat window;  // F x L normalized features
    Vec label;   // K original units
    std::int64_t t = 0;
    SampleSource source = SampleSource::kCurrentLabeled;
};

struct AdaptationSet {
    std::vector<AdaptationEntry> entries;
    std::size_t n_current = 0;
    std::size_t n_similar = 0;
    std::size_t n_resampled = 0;
    std::size_t n_perturbed = 0;

    std::size_t size() const { return entries.size(); }
};

// Build the supervised adaptation set in priority order: (i) released labels
// inside the current detection window, (ii) similarity-retrieved history,
// (iii) resampled variants of the base, (iv) perturbed variants, cycling
// (iii)/(iv) with fresh randomness until the target size is reached. Returns
// nullopt when no labeled base sample exists (adaptation must abort).
inline std::optional<AdaptationSet> build_adaptation_set(
    std::int64_t now, const Stream& stream, const ReplayBuffer& buffer,
    const ModelParams& params, const DetectionWindow& z_cur, double tau_h, double sigma,
    std::size_t n_ft, std::size_t L, double perturb_eps, Rng& rng) {
    AdaptationSet set;
    const std::size_t lw = z_cur.size();

    std::vector<std::int64_t> taken;
    auto already_taken = [&](std::int64_t t) {
        return std::find(taken.begin(), taken.end(), t) != taken.end();
    };
    auto try_add = [&](std::int64_t t, SampleSource src) {
        if (t + 1 < static_cast<std::int64_t>(L)) return false;  // not windowable
        if (already_taken(t)) return false;
        auto w = make_window(stream, t, L);
        if (!w) return false;
        const Sample& s = stream.samples[static_cast<std::size_t>(t)];
        set.entries.push_back({std::move(*w), s.y, t, src});
        taken.push_back(t);
        return true;
    };

    // (i) labeled samples inside the current detection window
    for (std::int64_t t = now - static_cast<std::int64_t>(lw) + 1; t <= now; ++t) {
        if (t < 0 || t >= static_cast<std::int64_t>(stream.size())) continue;
        if (stream.samples[static_cast<std::size_t>(t)].label_release_t > now) continue;
        if (try_add(t, SampleSource::kCurrentLabeled)) ++set.n_current;
    }

    // (ii) similar historical samples, ascending score, deduplicated
    if (set.size() < n_ft) {
        const auto candidates = retrieve_similar(buffer, params, z_cur, tau_h, sigma);
        for (const auto& cand : candidates) {
            for (std::int64_t t : cand.sample_ts) {
                if (set.size() >= n_ft) break;
                if (try_add(t, SampleSource::kSimilarHistory)) ++set.n_similar;
            }
            if (set.size() >= n_ft) break;
        }
    }

    const std::size_t base = set.size();
    if (base == 0) return std::nullopt;  // cannot fine-tune unsupervised

    // (iii)/(iv) synthetic variants of the base, alternating rounds
    if (set.size() < n_ft) {
        std::vector<Mat> base_windows;
        base_windows.reserve(base);
        for (std::size_t i = 0; i < base; ++i) base_windows.push_back(set.entries[i].window);
        const Vec sigma_diag = estimate_feature_variance(base_windows, stream.F);

        bool resample_round = true;
        while (set.size() < n_ft) {
            for (std::size_t i = 0; i < base && set.size() < n_ft; ++i) {
                const AdaptationEntry& src = set.entries[i];
                if (resample_round) {
                    set.entries.push_back(
                        {resample_window(src.window, rng), src.label, src.t,
                         SampleSource::kResampled});
                    ++set.n_resampled;
                } else {
                    Mat w(src.window.rows, src.window.cols);
                    for (std::size_t c = 0; c < src.window.cols; ++c) {
                        Vec col(src.window.rows);
                        for (std::size_t r = 0; r < src.window.rows; ++r) {
                            col[r] = src.window.at(r, c);
                        }
                        Vec p = perturb(col, perturb_eps, sigma_diag, rng);
                        for (std::size_t r = 0; r < src.window.rows; ++r) w.at(r, c) = p[r];
                    }
                    set.entries.push_back({std::move(w), src.label, src.t,
                                           SampleSource::kPerturbed});
                    ++set.n_perturbed;
                }
            }
            resample_round = !resample_round;
        }
    }
    return set;
}

// --- fine-tuning ------------------------------------------------------------------

struct FineTuneStats {
    int epochs_run = 0;
    double final_train_loss = 0.0;
    double final_val_loss = 0.0;
    double best_val_loss = 0.0;
    std::vector<double> val_loss_trace;  // per epoch, for instrumentation
};

struct TrainOptions {
    bool fuse_enabled = true;
    BranchMode branches;
    std::size_t batch = 32;
    std::size_t h_seq = 8;
};

namespace detail {

struct BatchEval {
    double loss = 0.0;
    std::vector<TrainCache> caches;
    Mat preds;    // B x K
    Mat labels;   // B x K
    Mat d_preds;  // only when grads requested
};

inline BatchEval eval_batch(const ModelParams& params, const std::vector<AdaptationEntry*>& batch,
                            const std::vector<Vec>& mem_context, const JointLossWeights& w,
                            const TrainOptions& opt, bool want_grads) {
    BatchEval ev;
    const std::size_t b = batch.size();
    const std::size_t k = params.dims.K;
    ev.preds = Mat(b, k);
    ev.labels = Mat(b, k);
    if (want_grads) ev.caches.resize(b);
    std::vector<TrainCache> local;
    if (!want_grads) local.resize(1);
    for (std::size_t i = 0; i < b; ++i) {
        TrainCache& cache = want_grads ? ev.caches[i] : local[0];
        forward_train(params, batch[i]->window, mem_context, cache, opt.fuse_enabled,
                      opt.branches);
        for (std::size_t j = 0; j < k; ++j) {
            ev.preds.at(i, j) = cache.bb.yhat[j];
            ev.labels.at(i, j) = batch[i]->label[j];
        }
    }
    ev.loss = batched_joint_loss(ev.preds, ev.labels, opt.h_seq, w,
                                 want_grads ? &ev.d_preds : nullptr);
    return ev;
}

inline double dataset_loss(const ModelParams& params, std::vector<AdaptationEntry*>& entries,
                           const std::vector<Vec>& mem_context, const JointLossWeights& w,
                           const TrainOptions& opt) {
    if (entries.empty()) return 0.0;
    BatchEval ev = eval_batch(params, entries, mem_context, w, opt, false);
    return ev.loss;
}

}  // namespace detail

// Drift-level-dependent fine-tuning: mini-batch AdamW on the trend-aware
// joint loss plus an L2-SP pull toward the event-start snapshot, chronological
// validation holdout, early stopping with best-parameter restore. Frozen
// groups are untouched by construction of the optimizer mask.
inline FineTuneStats fine_tune(ModelParams& params, AdaptationSet& set, const LevelConfig& level,
                               const RunConfig& cfg, const std::vector<Vec>& mem_context,
                               const TrainOptions& opt) {
    FineTuneStats stats;
    if (set.entries.empty()) return stats;

    const FreezeMask mask = set_trainable(level.level);
    const ModelParams anchor = params;
    OptimizerState opt_state =
        OptimizerState::fresh(params.dims, level.learning_rate, /*weight_decay=*/0.0);
    JointLossWeights w = JointLossWeights::from_level(level);
    if (cfg.ablation.mse_only) w = {};

    // chronological ordering for batching and the validation holdout
    std::vector<AdaptationEntry*> ordered;
    ordered.reserve(set.size());
    for (auto& e : set.entries) ordered.push_back(&e);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const AdaptationEntry* a, const AdaptationEntry* b) { return a->t < b->t; });

    std::size_t n_val = 0;
    if (ordered.size() >= 8) {
        n_val = static_cast<std::size_t>(
            std::max(1.0, std::floor(level.val_split * static_cast<double>(ordered.size()))));
        n_val = std::min(n_val, ordered.size() - 1);
    }
    std::vector<AdaptationEntry*> train(ordered.begin(), ordered.end() - static_cast<std::ptrdiff_t>(n_val));
    std::vector<AdaptationEntry*> val(ordered.end() - static_cast<std::ptrdiff_t>(n_val), ordered.end());

    ModelParams best = params;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;

    const std::size_t batch_size = std::max<std::size_t>(1, opt.batch);
    double last_train_loss = 0.0;
    for (int epoch = 0; epoch < level.max_epochs; ++epoch) {
        double epoch_loss = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t b0 = 0; b0 < train.size(); b0 += batch_size) {
            const std::size_t bend = std::min(train.size(), b0 + batch_size);
            std::vector<AdaptationEntry*> batch(train.begin() + static_cast<std::ptrdiff_t>(b0),
                                                train.begin() + static_cast<std::ptrdiff_t>(bend));
            detail::BatchEval ev = detail::eval_batch(params, batch, mem_context, w, opt, true);
            epoch_loss += ev.loss;
            ++n_batches;

            ModelParams grads = zero_like(params);
            for (std::size_t i = 0; i < batch.size(); ++i) {
                Vec d_yhat(params.dims.K);
                for (std::size_t j = 0; j < params.dims.K; ++j) d_yhat[j] = ev.d_preds.at(i, j);
                backward_train(params, ev.caches[i], d_yhat, grads);
            }
            if (level.l2sp_coeff > 0.0) {
                // d/dtheta of l2sp * ||theta_act - anchor||^2, active groups only
                std::vector<std::pair<ParamGroup, Vec*>> gptr;
                std::vector<std::pair<ParamGroup, const Vec*>> pcur, panc;
                for_each_tensor(grads, [&](ParamGroup g, const char*, Vec& v) {
                    gptr.push_back({g, &v});
                });
                for_each_tensor(params, [&](ParamGroup g, const char*, const Vec& v) {
                    pcur.push_back({g, &v});
                });
                for_each_tensor(anchor, [&](ParamGroup g, const char*, const Vec& v) {
                    panc.push_back({g, &v});
                });
                for (std::size_t ti = 0; ti < gptr.size(); ++ti) {
                    if (!mask.is_trainable(gptr[ti].first)) continue;
                    Vec& gv = *gptr[ti].second;
                    const Vec& cv = *pcur[ti].second;
                    const Vec& av = *panc[ti].second;
                    for (std::size_t i = 0; i < gv.size(); ++i) {
                        gv[i] += 2.0 * level.l2sp_coeff * (cv[i] - av[i]);
                    }
                }
            }
            optimizer_step(params, grads, opt_state, mask, /*lr_scale=*/1.0,
                           level.lower_lr_multiplier);
        }
        last_train_loss = n_batches > 0 ? epoch_loss / static_cast<double>(n_batches) : 0.0;
        stats.epochs_run = epoch + 1;

        if (!val.empty()) {
            const double vloss = detail::dataset_loss(params, val, mem_context, w, opt);
            stats.val_loss_trace.push_back(vloss);
            if (vloss < best_val) {
                best_val = vloss;
                best = params;
                since_best = 0;
            } else {
                ++since_best;
                if (since_best >= level.patience) break;
            }
        }
    }

    if (!val.empty() && std::isfinite(best_val)) {
        params = best;
        stats.best_val_loss = best_val;
        stats.final_val_loss = best_val;
    }
    stats.final_train_loss = last_train_loss;
    return stats;
}

}  // namespace driftlearn
