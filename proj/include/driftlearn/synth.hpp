#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "driftlearn/data.hpp"
#include "driftlearn/rng.hpp"
#include "driftlearn/tensor.hpp"

namespace driftlearn {

// Piecewise-stationary synthetic stream: per segment, features are i.i.d.
// Gaussian and targets follow a linear map of the trailing window-mean of the
// raw features plus Gaussian noise. Segment boundaries are the ground-truth
// drift points.
struct SynthSegment {
    std::size_t length = 0;
    double feat_mean = 0.0;
    double feat_std = 1.0;
    double noise_std = 0.1;
    std::uint64_t map_seed = 1;
    double bias = 0.0;
};

struct SynthSpec {
    std::uint64_t seed = 42;
    std::size_t F = 8;
    std::size_t K = 2;
    std::size_t summary_len = 12;
    double map_scale = 1.0;  // multiplies every segment map (sets target scale)
    std::vector<SynthSegment> segments;

    void validate() const {
        if (F == 0 || K == 0 || summary_len == 0) {
            throw std::invalid_argument("synth: features/targets/summary_len must be positive");
        }
        if (segments.empty()) throw std::invalid_argument("synth: at least one segment required");
        for (const auto& s : segments) {
            if (s.length == 0) throw std::invalid_argument("synth: segment length must be positive");
            if (s.feat_std < 0.0 || s.noise_std < 0.0) {
                throw std::invalid_argument("synth: stds must be nonnegative");
            }
        }
    }
};

struct SynthResult {
    std::vector<Vec> raw_x;             // n x F, pre-normalization
    std::vector<Vec> y;                 // n x K
    std::vector<std::size_t> boundaries;  // start index of each segment after the first
    std::vector<Mat> maps;              // per segment, K x F
    std::vector<double> biases;         // per segment
    std::vector<int> segment_of;        // n, segment index per sample
    SynthSpec spec;

    std::size_t size() const { return raw_x.size(); }

    // Noise-free generator output at t (the Bayes-optimal prediction).
    Vec bayes_predict(std::size_t t) const {
        const int seg = segment_of[t];
        Vec xbar(spec.F, 0.0);
        const std::size_t lo = t + 1 >= spec.summary_len ? t + 1 - spec.summary_len : 0;
        for (std::size_t i = lo; i <= t; ++i) {
            for (std::size_t f = 0; f < spec.F; ++f) xbar[f] += raw_x[i][f];
        }
        const double inv = 1.0 / static_cast<double>(t - lo + 1);
        for (double& v : xbar) v *= inv;
        Vec out(spec.K, biases[static_cast<std::size_t>(seg)]);
        for (std::size_t k = 0; k < spec.K; ++k) {
            const double* row = maps[static_cast<std::size_t>(seg)].row(k);
            for (std::size_t f = 0; f < spec.F; ++f) out[k] += row[f] * xbar[f];
        }
        return out;
    }
};

// Positive maps: entries uniform in [0.5, 1.5]/F so a feature-mean shift
// moves every target deterministically.
inline Mat draw_segment_map(std::size_t k, std::size_t f, std::uint64_t map_seed,
                            double map_scale = 1.0) {
    Mat a(k, f);
    Rng rng = Rng::seeded(map_seed * 0x9e3779b97f4a7c15ULL + 13);
    for (double& v : a.data) {
        v = map_scale * rng.uniform(0.5, 1.5) / static_cast<double>(f);
    }
    return a;
}

inline SynthResult synth_stream(const SynthSpec& spec) {
    spec.validate();
    SynthResult out;
    out.spec = spec;
    Rng rng = Rng::seeded(spec.seed);

    std::size_t total = 0;
    for (const auto& s : spec.segments) total += s.length;
    out.raw_x.reserve(total);
    out.y.reserve(total);
    out.segment_of.reserve(total);

    for (std::size_t si = 0; si < spec.segments.size(); ++si) {
        const SynthSegment& seg = spec.segments[si];
        out.maps.push_back(draw_segment_map(spec.K, spec.F, seg.map_seed, spec.map_scale));
        out.biases.push_back(seg.bias);
        if (si > 0) out.boundaries.push_back(out.raw_x.size());
        for (std::size_t i = 0; i < seg.length; ++i) {
            Vec x(spec.F);
            for (double& v : x) v = rng.normal(seg.feat_mean, seg.feat_std);
            out.raw_x.push_back(std::move(x));
            out.segment_of.push_back(static_cast<int>(si));
            const std::size_t t = out.raw_x.size() - 1;
            Vec target = out.bayes_predict(t);
            for (double& v : target) v += rng.normal(0.0, seg.noise_std);
            out.y.push_back(std::move(target));
        }
    }
    return out;
}

// Normalize and window the generated stream exactly as the CSV path would.
inline LoadedStream to_loaded_stream(const SynthResult& synth, std::size_t offline_size,
                                     std::int64_t label_latency) {
    LoadedStream ls;
    ls.stats = fit_norm_stats(synth.raw_x, synth.y, offline_size);
    ls.raw_x = synth.raw_x;
    ls.stream.F = synth.spec.F;
    ls.stream.K = synth.spec.K;
    for (std::size_t f = 0; f < synth.spec.F; ++f) {
        ls.stream.feature_names.push_back("f" + std::to_string(f + 1));
    }
    for (std::size_t k = 0; k < synth.spec.K; ++k) {
        ls.stream.target_names.push_back("y" + std::to_string(k + 1));
    }
    ls.stream.samples.resize(synth.size());
    for (std::size_t i = 0; i < synth.size(); ++i) {
        Sample& s = ls.stream.samples[i];
        s.t = static_cast<std::int64_t>(i);
        s.x = minmax_normalize(synth.raw_x[i], ls.stats);
        s.y = synth.y[i];
        s.label_release_t = s.t + label_latency;
    }
    return ls;
}

// Spec file: flat key-value plus one `segment = length mean std noise map_seed
// [bias]` line per segment.
inline SynthSpec parse_synth_spec_text(const std::string& text) {
    SynthSpec spec;
    spec.segments.clear();
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos) {
                throw std::invalid_argument("synth spec: malformed line " + std::to_string(lineno));
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
        if (key == "seed") spec.seed = std::stoull(value);
        else if (key == "features") spec.F = std::stoul(value);
        else if (key == "targets") spec.K = std::stoul(value);
        else if (key == "summary_len") spec.summary_len = std::stoul(value);
        else if (key == "map_scale") spec.map_scale = std::stod(value);
        else if (key == "segment") {
            std::istringstream ss(value);
            SynthSegment seg;
            if (!(ss >> seg.length >> seg.feat_mean >> seg.feat_std >> seg.noise_std >>
                  seg.map_seed)) {
                throw std::invalid_argument("synth spec: bad segment on line " +
                                            std::to_string(lineno));
            }
            ss >> seg.bias;  // optional
            spec.segments.push_back(seg);
        } else {
            throw std::invalid_argument("synth spec: unknown key '" + key + "'");
        }
    }
    spec.validate();
    return spec;
}

inline SynthSpec load_synth_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("synth spec: cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_synth_spec_text(ss.str());
}

inline void write_stream_csv(const SynthResult& synth, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("synth: cannot write CSV: " + path);
    for (std::size_t f = 0; f < synth.spec.F; ++f) {
        out << "f" << (f + 1) << ",";
    }
    for (std::size_t k = 0; k < synth.spec.K; ++k) {
        out << "y" << (k + 1) << (k + 1 == synth.spec.K ? "" : ",");
    }
    out << "\n";
    char buf[64];
    for (std::size_t i = 0; i < synth.size(); ++i) {
        for (std::size_t f = 0; f < synth.spec.F; ++f) {
            std::snprintf(buf, sizeof(buf), "%.17g", synth.raw_x[i][f]);
            out << buf << ",";
        }
        for (std::size_t k = 0; k < synth.spec.K; ++k) {
            std::snprintf(buf, sizeof(buf), "%.17g", synth.y[i][k]);
            out << buf << (k + 1 == synth.spec.K ? "" : ",");
        }
        out << "\n";
    }
}

}  // namespace driftlearn
