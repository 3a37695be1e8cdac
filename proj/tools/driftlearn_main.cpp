// Streaming-simulation CLI: offline pretraining plus the online
// detect -> fine-tune -> predict loop over a CSV stream, synthetic stream
// generation, and standalone metrics recomputation.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "driftlearn/driftlearn.hpp"
#include "driftlearn/report.hpp"

namespace dl = driftlearn;

namespace {

int cmd_run(const std::string& config_path, const std::string& data_path,
            const std::string& schema_path, const std::string& out_dir, std::int64_t seed,
            const std::string& ablation, const std::string& checkpoint_out) {
    dl::RunConfig cfg = config_path.empty() ? dl::RunConfig{} : dl::load_config(config_path);
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.ablation = dl::parse_ablation(ablation);
    cfg.validate();

    const dl::Schema schema = dl::load_schema(schema_path);
    const dl::RawTable table = dl::read_csv(data_path);
    const dl::LoadedStream loaded =
        dl::build_stream(table, schema, cfg.offline_size, cfg.label_latency);

    std::cerr << "loaded " << loaded.stream.size() << " samples (" << loaded.stream.F
              << " features, " << loaded.stream.K << " targets)\n";
    std::cerr << "offline training on first " << cfg.offline_size << " samples...\n";
    dl::OfflineResult offline = dl::offline_train(cfg, loaded.stream);
    std::cerr << "offline done after " << offline.epochs_run << " epochs (train loss "
              << (offline.epoch_train_loss.empty() ? 0.0 : offline.epoch_train_loss.back())
              << ")\n";

    if (!checkpoint_out.empty()) {
        dl::save_checkpoint(checkpoint_out, offline, loaded.stats);
        std::cerr << "checkpoint written to " << checkpoint_out << "\n";
    }

    dl::RunResult run = dl::run_online(cfg, loaded.stream, loaded.stats, std::move(offline));
    dl::emit_report(run, loaded.stream, loaded.stats, cfg, out_dir);

    std::cerr << "online steps: " << run.records.size() << ", drift events "
              << run.report.drift_events << " (adapted " << run.report.drift_adapted
              << ", aborted " << run.report.drift_aborted << "), stable events "
              << run.report.stable_events << "\n";
    if (run.report.n_evaluated >= 2) {
        std::printf("NMSE %.6f  NMAE %.6f  mean MAPE %.4f%%  mean R2 %.6f  (n=%zu)\n",
                    run.report.nmse, run.report.nmae, run.report.mean_mape, run.report.mean_r2,
                    run.report.n_evaluated);
    } else {
        std::printf("no labels released during the online split; metrics unavailable\n");
    }
    std::cerr << "reports written to " << out_dir << "\n";
    return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_csv,
              const std::string& schema_out) {
    const dl::SynthSpec spec = dl::load_synth_spec(spec_path);
    const dl::SynthResult synth = dl::synth_stream(spec);
    dl::write_stream_csv(synth, out_csv);
    if (!schema_out.empty()) {
        dl::Schema s;
        for (std::size_t f = 0; f < spec.F; ++f) s.features.push_back("f" + std::to_string(f + 1));
        for (std::size_t k = 0; k < spec.K; ++k) s.targets.push_back("y" + std::to_string(k + 1));
        dl::write_schema(s, schema_out);
    }
    std::cerr << "wrote " << synth.size() << " samples to " << out_csv;
    if (!synth.boundaries.empty()) {
        std::cerr << " (drift points:";
        for (auto b : synth.boundaries) std::cerr << " " << b;
        std::cerr << ")";
    }
    std::cerr << "\n";
    return 0;
}

int cmd_metrics(const std::string& pred_csv, const std::string& baseline_csv, double eps_reg) {
    const dl::RawTable t = dl::read_csv(pred_csv);
    const std::size_t k = (t.header.size() - 2) / 2;
    std::vector<dl::Vec> preds, labels;
    std::vector<std::string> names;
    for (std::size_t j = 0; j < k; ++j) {
        std::string n = t.header[1 + j];
        if (n.rfind("yhat_", 0) == 0) n = n.substr(5);
        names.push_back(n);
    }
    for (const auto& row : t.rows) {
        if (row.back() != "1") continue;
        dl::Vec p(k), y(k);
        for (std::size_t j = 0; j < k; ++j) {
            p[j] = std::stod(row[1 + j]);
            y[j] = std::stod(row[1 + k + j]);
        }
        preds.push_back(std::move(p));
        labels.push_back(std::move(y));
    }
    const dl::MetricsReport rep = dl::compute_metrics(preds, labels, names, eps_reg);
    std::cout << dl::metrics_json(rep, {}).dump(2) << "\n";
    if (!baseline_csv.empty()) {
        const auto out = std::filesystem::path(pred_csv).parent_path() / "delta_error_over_time.csv";
        dl::write_delta_error_csv(pred_csv, baseline_csv, out.string());
        std::cerr << "delta-error CSV written to " << out.string() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"drift-aware online learning engine for nonstationary multivariate streams"};
    app.require_subcommand(1);

    std::string config_path, data_path, schema_path, out_dir = "out";
    std::string ablation = "none", checkpoint_out;
    std::int64_t seed = -1;
    auto* run = app.add_subcommand("run", "offline pretraining + online streaming simulation");
    run->add_option("--config", config_path, "flat key-value config file (defaults when omitted)");
    run->add_option("--data", data_path, "input CSV stream")->required();
    run->add_option("--schema", schema_path, "JSON schema naming feature/target columns")
        ->required();
    run->add_option("--out", out_dir, "output directory for reports");
    run->add_option("--seed", seed, "override the config seed");
    run->add_option("--ablation", ablation,
                    "none|no_memory|no_drift|no_stable|static|mse_only|short_only|long_only");
    run->add_option("--save-model", checkpoint_out, "write the post-offline checkpoint here");

    std::string spec_path, synth_out, schema_out;
    auto* synth = app.add_subcommand("synth", "generate a piecewise-stationary synthetic stream");
    synth->add_option("--spec", spec_path, "synthetic stream spec file")->required();
    synth->add_option("--out", synth_out, "output CSV path")->required();
    synth->add_option("--schema-out", schema_out, "also write a matching schema JSON");

    std::string pred_csv, baseline_csv;
    double eps_reg = 1e-8;
    auto* metrics = app.add_subcommand("metrics", "recompute metrics from a predictions CSV");
    metrics->add_option("--pred", pred_csv, "predictions.csv from a previous run")->required();
    metrics->add_option("--baseline", baseline_csv,
                        "baseline predictions.csv; also emits delta_error_over_time.csv");
    metrics->add_option("--eps-reg", eps_reg, "normalization guard for NMSE/NMAE");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            return cmd_run(config_path, data_path, schema_path, out_dir, seed, ablation,
                           checkpoint_out);
        }
        if (synth->parsed()) return cmd_synth(spec_path, synth_out, schema_out);
        if (metrics->parsed()) return cmd_metrics(pred_csv, baseline_csv, eps_reg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
