#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "driftlearn/tensor.hpp"

namespace driftlearn {

// One aligned production cycle. `y` is stored for every row; visibility under
// label latency is enforced by consumers via `label_release_t`.
struct Sample {
    std::int64_t t = 0;
    Vec x;  // length F, normalized
    Vec y;  // length K, original target units
    std::int64_t label_release_t = 0;
};

struct NormStats {
    Vec feat_min, feat_max;              // per feature, offline split
    Vec target_mean, target_std;         // per target, offline split
    Vec target_min, target_max;          // per target, offline split (trigger scaling)

    std::size_t num_features() const { return feat_min.size(); }
    std::size_t num_targets() const { return target_mean.size(); }
};

struct Stream {
    std::vector<Sample> samples;
    std::size_t F = 0;
    std::size_t K = 0;
    std::vector<std::string> feature_names;
    std::vector<std::string> target_names;

    std::size_t size() const { return samples.size(); }
    const Sample& operator[](std::size_t i) const { return samples[i]; }
};

struct Schema {
    std::vector<std::string> features;
    std::vector<std::string> targets;
    std::string mask;  // optional row-mask column; empty = none
};

// --- preprocessing ----------------------------------------------------------

// Fill NaN gaps in a per-feature sequence: interior gaps by linear
// interpolation between nearest observed neighbors, boundary gaps by nearest
// observed value. Throws if every entry is missing.
inline Vec interpolate_missing(const Vec& series, const std::string& name = "") {
    const std::size_t n = series.size();
    Vec out = series;
    std::ptrdiff_t first = -1, last = -1;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isnan(series[i])) {
            if (first < 0) first = static_cast<std::ptrdiff_t>(i);
            last = static_cast<std::ptrdiff_t>(i);
        }
    }
    if (first < 0) {
        throw std::runtime_error("ingest: feature '" + name + "' has no observed values");
    }
    for (std::ptrdiff_t i = 0; i < first; ++i) out[i] = series[first];
    for (std::size_t i = static_cast<std::size_t>(last) + 1; i < n; ++i) out[i] = series[last];
    std::size_t i = static_cast<std::size_t>(first);
    while (i <= static_cast<std::size_t>(last)) {
        if (!std::isnan(out[i])) {
            ++i;
            continue;
        }
        // run of NaNs inside [first, last]; find bracketing observations
        const std::size_t lo = i - 1;
        std::size_t hi = i;
        while (std::isnan(out[hi])) ++hi;
        const double step = (out[hi] - out[lo]) / static_cast<double>(hi - lo);
        for (std::size_t k = i; k < hi; ++k) {
            out[k] = out[lo] + step * static_cast<double>(k - lo);
        }
        i = hi + 1;
    }
    return out;
}

// (x - min) / (max - min); constant features map to 0.
inline Vec minmax_normalize(const Vec& x, const NormStats& stats) {
    check_dim(x.size() == stats.feat_min.size(), "minmax_normalize");
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double range = stats.feat_max[i] - stats.feat_min[i];
        out[i] = range > 0.0 ? (x[i] - stats.feat_min[i]) / range : 0.0;
    }
    return out;
}

// Min-max scale a target vector with offline target stats (used for the
// stable-branch trigger, which needs a unit-free error scale).
inline Vec minmax_scale_targets(const Vec& y, const NormStats& stats) {
    check_dim(y.size() == stats.target_min.size(), "minmax_scale_targets");
    Vec out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double range = stats.target_max[i] - stats.target_min[i];
        out[i] = range > 0.0 ? (y[i] - stats.target_min[i]) / range : 0.0;
    }
    return out;
}

// Columns for times t-L+1 .. t, oldest first; nullopt when history is short.
inline std::optional<Mat> make_window(const Stream& stream, std::int64_t t, std::size_t L) {
    if (t + 1 < static_cast<std::int64_t>(L) || t >= static_cast<std::int64_t>(stream.size())) {
        return std::nullopt;
    }
    Mat w(stream.F, L);
    for (std::size_t j = 0; j < L; ++j) {
        const Sample& s = stream.samples[static_cast<std::size_t>(t) - L + 1 + j];
        for (std::size_t i = 0; i < stream.F; ++i) w.at(i, j) = s.x[i];
    }
    return w;
}

// Exactly the (t, y) pairs whose labels have been released by `now`.
inline std::vector<std::pair<std::int64_t, Vec>> visible_labels(const Stream& stream,
                                                                std::int64_t now) {
    std::vector<std::pair<std::int64_t, Vec>> out;
    for (const Sample& s : stream.samples) {
        if (s.label_release_t <= now) out.emplace_back(s.t, s.y);
    }
    return out;
}

// Offline-split stats only; frozen afterwards.
inline NormStats fit_norm_stats(const std::vector<Vec>& raw_x, const std::vector<Vec>& raw_y,
                                std::size_t offline_size) {
    if (raw_x.empty() || offline_size == 0) {
        throw std::runtime_error("ingest: empty offline split for normalization stats");
    }
    const std::size_t n = std::min(offline_size, raw_x.size());
    const std::size_t F = raw_x[0].size();
    const std::size_t K = raw_y[0].size();
    NormStats st;
    st.feat_min.assign(F, std::numeric_limits<double>::infinity());
    st.feat_max.assign(F, -std::numeric_limits<double>::infinity());
    st.target_min.assign(K, std::numeric_limits<double>::infinity());
    st.target_max.assign(K, -std::numeric_limits<double>::infinity());
    st.target_mean.assign(K, 0.0);
    st.target_std.assign(K, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < F; ++f) {
            st.feat_min[f] = std::min(st.feat_min[f], raw_x[i][f]);
            st.feat_max[f] = std::max(st.feat_max[f], raw_x[i][f]);
        }
        for (std::size_t k = 0; k < K; ++k) {
            st.target_min[k] = std::min(st.target_min[k], raw_y[i][k]);
            st.target_max[k] = std::max(st.target_max[k], raw_y[i][k]);
            st.target_mean[k] += raw_y[i][k];
        }
    }
    for (std::size_t k = 0; k < K; ++k) st.target_mean[k] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
            const double d = raw_y[i][k] - st.target_mean[k];
            st.target_std[k] += d * d;
        }
    }
    for (std::size_t k = 0; k < K; ++k) {
        st.target_std[k] = std::sqrt(st.target_std[k] / static_cast<double>(n));
    }
    return st;
}

// --- file loading ------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

inline bool is_missing(const std::string& cell) {
    if (cell.empty()) return true;
    std::string low;
    for (char c : cell) low += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return low == "nan" || low == "na" || low == "null";
}

}  // namespace detail

// Raw CSV table; the JSON schema loader lives in report.hpp with the rest of
// the file-format code.
struct RawTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline RawTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("ingest: cannot open CSV file: " + path);
    RawTable t;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("ingest: empty CSV file: " + path);
    t.header = detail::split_csv_line(line);
    for (auto& h : t.header) h = detail::trim(h);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        t.rows.push_back(detail::split_csv_line(line));
        if (t.rows.back().size() != t.header.size()) {
            throw std::runtime_error("ingest: ragged CSV row " + std::to_string(t.rows.size()) +
                                     " in " + path);
        }
    }
    return t;
}

// Assemble a normalized stream from a raw table. Rows where the mask column
// evaluates to 0/false are dropped before indexing. Feature and target gaps
// are interpolated per column; normalization stats are fitted on the first
// `offline_size` surviving rows only.
struct LoadedStream {
    Stream stream;
    NormStats stats;
    std::vector<Vec> raw_x;  // pre-normalization feature rows (after interpolation)
};

inline LoadedStream build_stream(const RawTable& table, const Schema& schema,
                                 std::size_t offline_size, std::int64_t label_latency) {
    auto col_index = [&](const std::string& name) {
        auto it = std::find(table.header.begin(), table.header.end(), name);
        if (it == table.header.end()) {
            throw std::runtime_error("ingest: column '" + name + "' not found in CSV header");
        }
        return static_cast<std::size_t>(it - table.header.begin());
    };

    std::vector<std::size_t> fcols, tcols;
    for (const auto& f : schema.features) fcols.push_back(col_index(f));
    for (const auto& t : schema.targets) tcols.push_back(col_index(t));
    std::ptrdiff_t mcol = -1;
    if (!schema.mask.empty()) mcol = static_cast<std::ptrdiff_t>(col_index(schema.mask));

    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<Vec> xcols(fcols.size()), ycols(tcols.size());
    for (const auto& row : table.rows) {
        if (mcol >= 0) {
            const std::string m = detail::trim(row[static_cast<std::size_t>(mcol)]);
            if (m == "0" || m == "false" || m.empty()) continue;
        }
        for (std::size_t i = 0; i < fcols.size(); ++i) {
            const std::string& cell = row[fcols[i]];
            xcols[i].push_back(detail::is_missing(detail::trim(cell)) ? nan
                                                                      : std::stod(cell));
        }
        for (std::size_t i = 0; i < tcols.size(); ++i) {
            const std::string& cell = row[tcols[i]];
            ycols[i].push_back(detail::is_missing(detail::trim(cell)) ? nan
                                                                      : std::stod(cell));
        }
    }
    const std::size_t n = xcols.empty() ? 0 : xcols[0].size();
    if (n == 0) throw std::runtime_error("ingest: no usable rows after masking");

    for (std::size_t i = 0; i < xcols.size(); ++i) {
        xcols[i] = interpolate_missing(xcols[i], schema.features[i]);
    }
    for (std::size_t i = 0; i < ycols.size(); ++i) {
        ycols[i] = interpolate_missing(ycols[i], schema.targets[i]);
    }

    std::vector<Vec> raw_x(n, Vec(fcols.size()));
    std::vector<Vec> raw_y(n, Vec(tcols.size()));
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < fcols.size(); ++i) raw_x[r][i] = xcols[i][r];
        for (std::size_t i = 0; i < tcols.size(); ++i) raw_y[r][i] = ycols[i][r];
    }

    LoadedStream out;
    out.stats = fit_norm_stats(raw_x, raw_y, offline_size);
    out.raw_x = raw_x;
    out.stream.F = fcols.size();
    out.stream.K = tcols.size();
    out.stream.feature_names = schema.features;
    out.stream.target_names = schema.targets;
    out.stream.samples.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
        Sample& s = out.stream.samples[r];
        s.t = static_cast<std::int64_t>(r);
        s.x = minmax_normalize(raw_x[r], out.stats);
        s.y = raw_y[r];
        s.label_release_t = s.t + label_latency;
    }
    return out;
}

}  // namespace driftlearn
