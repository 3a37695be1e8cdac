#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "driftlearn/config.hpp"
#include "driftlearn/data.hpp"
#include "driftlearn/engine.hpp"
#include "driftlearn/metrics.hpp"

namespace driftlearn {

using ordered_json = nlohmann::ordered_json;

inline Schema load_schema(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("schema: cannot open file: " + path);
    ordered_json j = ordered_json::parse(in);
    Schema s;
    if (!j.contains("features") || !j.contains("targets")) {
        throw std::runtime_error("schema: must list \"features\" and \"targets\"");
    }
    for (const auto& f : j["features"]) s.features.push_back(f.get<std::string>());
    for (const auto& t : j["targets"]) s.targets.push_back(t.get<std::string>());
    if (j.contains("mask")) s.mask = j["mask"].get<std::string>();
    if (s.features.empty() || s.targets.empty()) {
        throw std::runtime_error("schema: feature and target lists must be non-empty");
    }
    return s;
}

inline void write_schema(const Schema& s, const std::string& path) {
    ordered_json j;
    j["features"] = s.features;
    j["targets"] = s.targets;
    if (!s.mask.empty()) j["mask"] = s.mask;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("schema: cannot write file: " + path);
    out << j.dump(2) << "\n";
}

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline ordered_json event_json(const EventRec& ev) {
    ordered_json j;
    switch (ev.kind) {
        case EventRec::Kind::kDrift:
            j["type"] = "drift";
            j["t"] = ev.t;
            j["V"] = ev.v;
            j["raw_level"] = ev.raw_level;
            j["effective_level"] = ev.effective_level;
            j["C_t"] = ev.c_t;
            j["adapted"] = ev.adapted;
            break;
        case EventRec::Kind::kFinetune:
            j["type"] = "finetune";
            j["t"] = ev.t;
            j["level"] = ev.level;
            j["n_current"] = ev.n_current;
            j["n_similar"] = ev.n_similar;
            j["n_resampled"] = ev.n_resampled;
            j["n_perturbed"] = ev.n_perturbed;
            j["epochs_run"] = ev.epochs_run;
            j["final_train_loss"] = ev.final_train_loss;
            j["final_val_loss"] = ev.final_val_loss;
            break;
        case EventRec::Kind::kStable:
            j["type"] = "stable";
            j["t"] = ev.t;
            j["ema_error"] = ev.ema_error;
            j["iterations"] = ev.iterations;
            j["final_train_loss"] = ev.final_train_loss;
            j["n_current"] = ev.n_current;
            j["n_similar"] = ev.n_similar;
            j["n_resampled"] = ev.n_resampled;
            j["n_perturbed"] = ev.n_perturbed;
            break;
    }
    return j;
}

}  // namespace detail

inline ordered_json metrics_json(const MetricsReport& rep,
                                 const std::vector<RecoveryRecord>& recovery) {
    ordered_json j;
    j["n_evaluated"] = rep.n_evaluated;
    ordered_json per_target = ordered_json::array();
    for (const auto& m : rep.per_target) {
        ordered_json t;
        t["name"] = m.name;
        t["mse"] = m.mse;
        t["mae"] = m.mae;
        t["mape"] = m.mape;
        t["r2"] = m.r2;
        t["sigma"] = m.sigma;
        if (m.zero_variance) t["zero_variance"] = true;
        per_target.push_back(t);
    }
    j["per_target"] = per_target;
    j["nmse"] = rep.nmse;
    j["nmae"] = rep.nmae;
    j["mean_mape"] = rep.mean_mape;
    j["mean_r2"] = rep.mean_r2;

    ordered_json drift;
    drift["events"] = rep.drift_events;
    drift["adapted"] = rep.drift_adapted;
    drift["aborted"] = rep.drift_aborted;
    ordered_json by_level;
    for (const auto& [level, count] : rep.adapted_by_level) {
        by_level[std::to_string(level)] = count;
    }
    drift["adapted_by_level"] = by_level;
    j["drift"] = drift;
    j["stable_events"] = rep.stable_events;

    ordered_json rec = ordered_json::array();
    std::map<int, std::vector<std::int64_t>> recovered_by_level;
    std::map<int, std::size_t> unrecovered_by_level;
    for (const auto& r : recovery) {
        ordered_json e;
        e["t_event"] = r.t_event;
        e["level"] = r.level;
        e["recovered"] = r.recovered;
        if (r.recovered) {
            e["steps"] = r.steps;
            recovered_by_level[r.level].push_back(r.steps);
        } else {
            unrecovered_by_level[r.level] += 1;
        }
        rec.push_back(e);
    }
    j["recovery_events"] = rec;
    ordered_json summary;
    for (const auto& [level, steps] : recovered_by_level) {
        double sum = 0.0;
        for (auto s : steps) sum += static_cast<double>(s);
        ordered_json s;
        s["count"] = steps.size();
        s["mean_steps"] = sum / static_cast<double>(steps.size());
        s["unrecovered"] = unrecovered_by_level.count(level) ? unrecovered_by_level[level] : 0;
        summary[std::to_string(level)] = s;
    }
    for (const auto& [level, count] : unrecovered_by_level) {
        if (!summary.contains(std::to_string(level))) {
            ordered_json s;
            s["count"] = 0;
            s["unrecovered"] = count;
            summary[std::to_string(level)] = s;
        }
    }
    j["recovery_summary"] = summary;
    return j;
}

// Writes predictions.csv, events.jsonl, metrics.json, error_over_time.csv and
// recovery_hist.csv into out_dir. All output is deterministic for a fixed
// seed; wall-clock timings are intentionally kept out of these files.
inline void emit_report(const RunResult& run, const Stream& stream, const NormStats& stats,
                        const RunConfig& cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) {
        throw std::runtime_error("emit_report: cannot create output directory: " + out_dir);
    }

    // predictions.csv
    {
        std::ofstream out(fs::path(out_dir) / "predictions.csv");
        if (!out) throw std::runtime_error("emit_report: cannot write predictions.csv");
        out << "t";
        for (const auto& n : stream.target_names) out << ",yhat_" << n;
        for (const auto& n : stream.target_names) out << ",y_" << n;
        out << ",released\n";
        for (const StepRecord& r : run.records) {
            const Sample& s = stream.samples[static_cast<std::size_t>(r.t)];
            const bool released = s.label_release_t <= run.online_end;
            out << r.t;
            for (double v : r.yhat) out << "," << detail::fmt_double(v);
            for (double v : s.y) {
                out << ",";
                if (released) out << detail::fmt_double(v);
            }
            out << "," << (released ? 1 : 0) << "\n";
        }
    }

    // events.jsonl
    {
        std::ofstream out(fs::path(out_dir) / "events.jsonl");
        if (!out) throw std::runtime_error("emit_report: cannot write events.jsonl");
        for (const EventRec& ev : run.events) out << detail::event_json(ev).dump() << "\n";
    }

    const auto recovery = measure_recovery(run, stream, stats, cfg);

    // metrics.json
    {
        MetricsReport rep = run.report;
        rep.recovery = recovery;
        std::ofstream out(fs::path(out_dir) / "metrics.json");
        if (!out) throw std::runtime_error("emit_report: cannot write metrics.json");
        out << metrics_json(rep, recovery).dump(2) << "\n";
    }

    // error_over_time.csv (per-step and windowed min-max-scaled MAE; rows
    // only for steps whose labels were released by the end of the run)
    {
        const Vec wmae = windowed_scaled_mae(run, stream, stats, cfg.l_w);
        std::ofstream out(fs::path(out_dir) / "error_over_time.csv");
        if (!out) throw std::runtime_error("emit_report: cannot write error_over_time.csv");
        out << "t,scaled_mae,windowed_scaled_mae,drift_event,stable_event\n";
        for (std::size_t i = 0; i < run.records.size(); ++i) {
            const StepRecord& r = run.records[i];
            const Sample& s = stream.samples[static_cast<std::size_t>(r.t)];
            if (s.label_release_t > run.online_end) continue;
            const Vec ps = minmax_scale_targets(r.yhat, stats);
            const Vec ys = minmax_scale_targets(s.y, stats);
            double acc = 0.0;
            for (std::size_t j = 0; j < ps.size(); ++j) acc += std::abs(ps[j] - ys[j]);
            acc /= static_cast<double>(ps.size());
            out << r.t << "," << detail::fmt_double(acc) << ",";
            if (!std::isnan(wmae[i])) out << detail::fmt_double(wmae[i]);
            out << "," << ((r.drift_adapted || r.drift_aborted) ? 1 : 0) << ","
                << (r.stable_fired ? 1 : 0) << "\n";
        }
    }

    // recovery_hist.csv (one row per adapted drift event)
    {
        std::ofstream out(fs::path(out_dir) / "recovery_hist.csv");
        if (!out) throw std::runtime_error("emit_report: cannot write recovery_hist.csv");
        out << "t_event,level,recovered,steps\n";
        for (const auto& r : recovery) {
            out << r.t_event << "," << r.level << "," << (r.recovered ? 1 : 0) << ",";
            if (r.recovered) out << r.steps;
            out << "\n";
        }
    }
}

// Difference of per-step mean absolute error between a baseline predictions
// CSV and the current one (baseline minus current, positive = improvement),
// joined on t over rows where both have released labels.
inline void write_delta_error_csv(const std::string& pred_csv, const std::string& baseline_csv,
                                  const std::string& out_path) {
    auto load = [](const std::string& path) {
        RawTable t = read_csv(path);
        std::map<std::int64_t, double> err;
        // columns: t, yhat_*..., y_*..., released
        const std::size_t k = (t.header.size() - 2) / 2;
        for (const auto& row : t.rows) {
            if (row.back() != "1") continue;
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                acc += std::abs(std::stod(row[1 + j]) - std::stod(row[1 + k + j]));
            }
            err[std::stoll(row[0])] = acc / static_cast<double>(k);
        }
        return err;
    };
    const auto cur = load(pred_csv);
    const auto base = load(baseline_csv);
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write delta error CSV: " + out_path);
    out << "t,delta_mae\n";
    for (const auto& [t, e] : cur) {
        auto it = base.find(t);
        if (it == base.end()) continue;
        out << t << "," << detail::fmt_double(it->second - e) << "\n";
    }
}

}  // namespace driftlearn
