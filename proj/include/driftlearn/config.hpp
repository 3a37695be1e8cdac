#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "driftlearn/drift.hpp"

namespace driftlearn {

// Per-severity fine-tuning recipe.
struct LevelConfig {
    int level = 1;
    double learning_rate = 0.10;   // eta_d, the per-level Adam learning rate
    int max_epochs = 30;           // T_d
    int patience = 5;
    double val_split = 0.15;
    double lower_lr_multiplier = 0.5;
    double l2sp_coeff = 5e-5;
    double w_trend = 0.3;
    double w_diff = 0.2;
    double w_vol = 0.05;
    double perturb_eps = 0.01;

    void validate() const {
        if (learning_rate <= 0.0) {
            throw std::invalid_argument("level config: learning rate must be > 0");
        }
        if (val_split <= 0.0 || val_split >= 1.0) {
            throw std::invalid_argument("level config: val_split must be in (0,1)");
        }
        if (w_trend < 0.0 || w_diff < 0.0 || w_vol < 0.0) {
            throw std::invalid_argument("level config: loss weights must be >= 0");
        }
        if (max_epochs <= 0 || patience <= 0) {
            throw std::invalid_argument("level config: epochs/patience must be positive");
        }
    }
};

struct StableConfig {
    double lambda_e = 0.6;  // EMA smoothing coefficient
    double tau_e = 0.10;    // error threshold (min-max scale)
    int k_e = 2;            // consecutive trigger count
    double eta_e = 0.1;     // dedicated learning rate (absolute)
    int t_e = 25;           // minimum optimization iterations
};

// Pipeline ablation switches (component-wise variants).
struct AblationConfig {
    bool disable_memory = false;   // z~ := z
    bool disable_drift = false;    // no drift detection / adaptation
    bool disable_stable = false;   // no stable-error branch
    bool mse_only = false;         // trend/diff/vol weights forced to 0
    bool short_only = false;       // drop the long-kernel branch
    bool long_only = false;        // drop the short-kernel branch
};

struct RunConfig {
    // model
    std::size_t L = 12;        // input window length
    std::size_t C = 32;        // projected representation dimension
    std::size_t offline_size = 1500;
    std::size_t batch = 32;
    double base_lr = 1e-3;
    double weight_decay = 0.01;
    int offline_epochs = 200;
    int offline_patience = 20;
    double offline_val_split = 0.15;

    // memory queue
    std::size_t t_m = 4;
    std::size_t r_agg = 4;

    // drift detection
    std::size_t l_w = 5;
    std::int64_t t_cool = 3;
    DriftThresholds thresholds;
    std::int64_t n_init = 3;

    // fine-tuning
    std::size_t h_seq = 8;      // supervised short-sequence length
    std::size_t n_ft = 300;     // minimum adaptation-set size
    std::size_t n_buf = 800;    // replay-buffer capacity
    double tau_h = 0.05;        // similarity retrieval threshold
    LevelConfig level1, level2, level3;

    // stable branch
    StableConfig stable;

    // stream
    std::int64_t label_latency = 12;  // tau
    std::uint64_t seed = 1;

    // recovery measurement: windowed normalized MAE must fall below the
    // triggering level's threshold
    double recovery_mae_level1 = 0.10;
    double recovery_mae_level2 = 0.12;
    double recovery_mae_level3 = 0.15;

    // metrics
    double eps_reg = 1e-8;

    AblationConfig ablation;

    RunConfig() {
        level1 = LevelConfig{1, 0.10, 30, 5, 0.15, 0.5, 5e-5, 0.3, 0.2, 0.05, 0.01};
        level2 = LevelConfig{2, 0.15, 40, 8, 0.12, 0.5, 2e-6, 0.5, 0.3, 0.1, 0.01};
        level3 = LevelConfig{3, 0.25, 50, 10, 0.10, 0.7, 0.0, 0.7, 0.4, 0.2, 0.01};
    }

    const LevelConfig& level(int d) const {
        switch (d) {
            case 1: return level1;
            case 2: return level2;
            case 3: return level3;
        }
        throw std::invalid_argument("RunConfig::level: level must be 1, 2, or 3");
    }

    void validate() const {
        if (L == 0 || C == 0) throw std::invalid_argument("config: L and C must be positive");
        if (batch == 0) throw std::invalid_argument("config: batch must be positive");
        if (base_lr <= 0.0) throw std::invalid_argument("config: base_lr must be > 0");
        if (weight_decay < 0.0) throw std::invalid_argument("config: weight_decay must be >= 0");
        if (offline_epochs <= 0 || offline_patience <= 0) {
            throw std::invalid_argument("config: offline epochs/patience must be positive");
        }
        if (offline_val_split <= 0.0 || offline_val_split >= 1.0) {
            throw std::invalid_argument("config: offline_val_split must be in (0,1)");
        }
        if (r_agg == 0 || r_agg > t_m) {
            throw std::invalid_argument("config: aggregation length must satisfy 1 <= R <= T_m");
        }
        if (l_w == 0) throw std::invalid_argument("config: detection window length must be > 0");
        if (t_cool < 0) throw std::invalid_argument("config: cooldown must be >= 0");
        if (n_init < 0) throw std::invalid_argument("config: N_init must be >= 0");
        thresholds.validate();
        if (h_seq == 0 || n_ft == 0 || n_buf == 0) {
            throw std::invalid_argument("config: H, N_ft, and N_buf must be positive");
        }
        if (tau_h <= 0.0) throw std::invalid_argument("config: tau_h must be > 0");
        if (stable.lambda_e <= 0.0 || stable.lambda_e > 1.0) {
            throw std::invalid_argument("config: lambda_e must be in (0,1]");
        }
        if (stable.tau_e < 0.0 || stable.k_e < 1 || stable.eta_e <= 0.0 || stable.t_e < 1) {
            throw std::invalid_argument("config: invalid stable-branch settings");
        }
        if (label_latency < 0) throw std::invalid_argument("config: latency must be >= 0");
        if (eps_reg <= 0.0) throw std::invalid_argument("config: eps_reg must be > 0");
        level1.validate();
        level2.validate();
        level3.validate();
        if (ablation.short_only && ablation.long_only) {
            throw std::invalid_argument("config: short_only and long_only are mutually exclusive");
        }
    }
};

// Flat key-value config file: `key = value`, '#' comments, unknown keys are
// an error so typos do not silently fall back to defaults.
inline RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    auto set_level = [](LevelConfig& lc, const std::string& field, const std::string& value) {
        if (field == "lr") lc.learning_rate = std::stod(value);
        else if (field == "epochs") lc.max_epochs = std::stoi(value);
        else if (field == "patience") lc.patience = std::stoi(value);
        else if (field == "val_split") lc.val_split = std::stod(value);
        else if (field == "lower_lr_multiplier") lc.lower_lr_multiplier = std::stod(value);
        else if (field == "l2sp") lc.l2sp_coeff = std::stod(value);
        else if (field == "w_trend") lc.w_trend = std::stod(value);
        else if (field == "w_diff") lc.w_diff = std::stod(value);
        else if (field == "w_vol") lc.w_vol = std::stod(value);
        else if (field == "perturb_eps") lc.perturb_eps = std::stod(value);
        else throw std::invalid_argument("config: unknown level field '" + field + "'");
    };
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos) {
                throw std::invalid_argument("config: malformed line " + std::to_string(lineno));
            }
            continue;
        }
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw std::invalid_argument("config: malformed line " + std::to_string(lineno));
        }

        if (key == "L") cfg.L = std::stoul(value);
        else if (key == "C") cfg.C = std::stoul(value);
        else if (key == "offline_size") cfg.offline_size = std::stoul(value);
        else if (key == "batch") cfg.batch = std::stoul(value);
        else if (key == "base_lr") cfg.base_lr = std::stod(value);
        else if (key == "weight_decay") cfg.weight_decay = std::stod(value);
        else if (key == "offline_epochs") cfg.offline_epochs = std::stoi(value);
        else if (key == "offline_patience") cfg.offline_patience = std::stoi(value);
        else if (key == "offline_val_split") cfg.offline_val_split = std::stod(value);
        else if (key == "T_m") cfg.t_m = std::stoul(value);
        else if (key == "R") cfg.r_agg = std::stoul(value);
        else if (key == "L_w") cfg.l_w = std::stoul(value);
        else if (key == "T_cool") cfg.t_cool = std::stoll(value);
        else if (key == "lambda_mild") cfg.thresholds.mild = std::stod(value);
        else if (key == "lambda_mod") cfg.thresholds.moderate = std::stod(value);
        else if (key == "lambda_sev") cfg.thresholds.severe = std::stod(value);
        else if (key == "N_init") cfg.n_init = std::stoll(value);
        else if (key == "H") cfg.h_seq = std::stoul(value);
        else if (key == "N_ft") cfg.n_ft = std::stoul(value);
        else if (key == "N_buf") cfg.n_buf = std::stoul(value);
        else if (key == "tau_h") cfg.tau_h = std::stod(value);
        else if (key == "tau") cfg.label_latency = std::stoll(value);
        else if (key == "seed") cfg.seed = std::stoull(value);
        else if (key == "eps_reg") cfg.eps_reg = std::stod(value);
        else if (key == "stable.lambda_e") cfg.stable.lambda_e = std::stod(value);
        else if (key == "stable.tau_e") cfg.stable.tau_e = std::stod(value);
        else if (key == "stable.K_e") cfg.stable.k_e = std::stoi(value);
        else if (key == "stable.eta_e") cfg.stable.eta_e = std::stod(value);
        else if (key == "stable.T_e") cfg.stable.t_e = std::stoi(value);
        else if (key == "recovery.mae_level1") cfg.recovery_mae_level1 = std::stod(value);
        else if (key == "recovery.mae_level2") cfg.recovery_mae_level2 = std::stod(value);
        else if (key == "recovery.mae_level3") cfg.recovery_mae_level3 = std::stod(value);
        else if (key.rfind("level1.", 0) == 0) set_level(cfg.level1, key.substr(7), value);
        else if (key.rfind("level2.", 0) == 0) set_level(cfg.level2, key.substr(7), value);
        else if (key.rfind("level3.", 0) == 0) set_level(cfg.level3, key.substr(7), value);
        else throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

// Named ablation variants reachable from the CLI.
inline AblationConfig parse_ablation(const std::string& name) {
    AblationConfig a;
    if (name.empty() || name == "none") return a;
    if (name == "no_memory") a.disable_memory = true;
    else if (name == "no_drift") a.disable_drift = true;
    else if (name == "no_stable") a.disable_stable = true;
    else if (name == "static") a.disable_drift = a.disable_stable = true;
    else if (name == "mse_only") a.mse_only = true;
    else if (name == "short_only") a.short_only = true;
    else if (name == "long_only") a.long_only = true;
    else throw std::invalid_argument("unknown ablation '" + name + "'");
    return a;
}

}  // namespace driftlearn
