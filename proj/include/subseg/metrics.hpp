#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "dataset.hpp"

namespace subseg {

// ---------------------------------------------------------------------------
// Per-slice pixel metrics. All three ratios use the 0/0 -> 1 convention: a
// slice with empty ground truth and empty prediction is a correct negative
// and scores perfectly.
// ---------------------------------------------------------------------------

struct SliceMetrics {
    long long tp = 0;
    long long fp = 0;
    long long fn = 0;
    double precision = 1.0;
    double recall = 1.0;
    double dice = 1.0;
};

inline SliceMetrics make_slice_metrics(long long tp, long long fp, long long fn) {
    if (tp < 0 || fp < 0 || fn < 0) throw ValidationError("metrics: negative pixel count");
    SliceMetrics m;
    m.tp = tp;
    m.fp = fp;
    m.fn = fn;
    m.precision = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    m.recall = tp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    m.dice = 2 * tp + fp + fn == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    return m;
}

inline SliceMetrics slice_metrics(const Mask2D& pred, const Mask2D& gt) {
    if (pred.width != gt.width || pred.height != gt.height) {
        throw ShapeError("metrics: prediction and ground truth shapes differ");
    }
    long long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const std::uint8_t p = pred.data[i];
        const std::uint8_t g = gt.data[i];
        if (p > 1 || g > 1) throw DomainError("metrics: mask is not binary");
        tp += p & g;
        fp += p & (g ^ 1);
        fn += (p ^ 1) & g;
    }
    return make_slice_metrics(tp, fp, fn);
}

// ---------------------------------------------------------------------------
// Aggregation: unweighted arithmetic mean over slices. skip_empty_gt drops
// slices whose ground truth is empty (tp + fn = 0) before averaging.
// ---------------------------------------------------------------------------

struct MetricsReport {
    std::size_t n_slices = 0;
    double mean_precision = 0.0;
    double mean_recall = 0.0;
    double mean_dice = 0.0;
    std::vector<std::pair<SampleKey, SliceMetrics>> per_slice;
    std::string config_fingerprint;
};

inline MetricsReport aggregate(const std::vector<std::pair<SampleKey, SliceMetrics>>& per_slice, bool skip_empty_gt) {
    MetricsReport report;
    double sum_p = 0.0, sum_r = 0.0, sum_d = 0.0;
    for (const auto& [key, m] : per_slice) {
        if (skip_empty_gt && m.tp + m.fn == 0) continue;
        report.per_slice.emplace_back(key, m);
        sum_p += m.precision;
        sum_r += m.recall;
        sum_d += m.dice;
    }
    report.n_slices = report.per_slice.size();
    if (report.n_slices == 0) throw EmptyAggregateError("no slices left to aggregate");
    report.mean_precision = sum_p / static_cast<double>(report.n_slices);
    report.mean_recall = sum_r / static_cast<double>(report.n_slices);
    report.mean_dice = sum_d / static_cast<double>(report.n_slices);
    return report;
}

// Pooled-pixel (micro) metrics over the same slices; a side output, never the
// aggregation default.
inline SliceMetrics pooled_metrics(const std::vector<std::pair<SampleKey, SliceMetrics>>& per_slice) {
    long long tp = 0, fp = 0, fn = 0;
    for (const auto& [key, m] : per_slice) {
        tp += m.tp;
        fp += m.fp;
        fn += m.fn;
    }
    return make_slice_metrics(tp, fp, fn);
}

// ---------------------------------------------------------------------------
// Report file: "SUBSEGREPORT v1", n_slices=, mean_precision=, mean_recall=,
// mean_dice= (6 decimals), optional further key=value metadata (config=),
// then optional per-slice lines "<case_id>,<slice_index>,<tp>,<fp>,<fn>".
// ---------------------------------------------------------------------------

inline void write_report(const MetricsReport& report, std::ostream& out, bool include_per_slice = true) {
    char buf[64];
    out << "SUBSEGREPORT v1\n";
    out << "n_slices=" << report.n_slices << '\n';
    std::snprintf(buf, sizeof(buf), "%.6f", report.mean_precision);
    out << "mean_precision=" << buf << '\n';
    std::snprintf(buf, sizeof(buf), "%.6f", report.mean_recall);
    out << "mean_recall=" << buf << '\n';
    std::snprintf(buf, sizeof(buf), "%.6f", report.mean_dice);
    out << "mean_dice=" << buf << '\n';
    if (!report.config_fingerprint.empty()) out << "config=" << report.config_fingerprint << '\n';
    if (include_per_slice) {
        auto sorted = report.per_slice;
        std::sort(sorted.begin(), sorted.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        for (const auto& [key, m] : sorted) {
            out << key.case_id << ',' << key.slice_index << ',' << m.tp << ',' << m.fp << ',' << m.fn << '\n';
        }
    }
}

inline void write_report(const MetricsReport& report, const std::filesystem::path& path,
                         bool include_per_slice = true) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open file for writing: " + path.string());
    write_report(report, out, include_per_slice);
    if (!out) throw DataError("write failed: " + path.string());
}

inline MetricsReport read_report(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "SUBSEGREPORT v1") throw FormatError("bad report header");

    MetricsReport report;
    bool have_n = false, have_p = false, have_r = false, have_d = false;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = "report line " + std::to_string(line_no);
        const auto eq = line.find('=');
        const auto comma = line.find(',');
        if (eq != std::string::npos && (comma == std::string::npos || eq < comma)) {
            const std::string key = line.substr(0, eq);
            const std::string value = line.substr(eq + 1);
            try {
                if (key == "n_slices") {
                    report.n_slices = std::stoull(value);
                    have_n = true;
                } else if (key == "mean_precision") {
                    report.mean_precision = std::stod(value);
                    have_p = true;
                } else if (key == "mean_recall") {
                    report.mean_recall = std::stod(value);
                    have_r = true;
                } else if (key == "mean_dice") {
                    report.mean_dice = std::stod(value);
                    have_d = true;
                } else if (key == "config") {
                    report.config_fingerprint = value;
                }
                // other metadata keys are tolerated
            } catch (const std::exception&) {
                throw ParseError(where + ": bad value for " + key);
            }
            continue;
        }
        // per-slice line: case,slice,tp,fp,fn
        std::istringstream fields(line);
        std::string case_id, slice_s, tp_s, fp_s, fn_s;
        if (!std::getline(fields, case_id, ',') || !std::getline(fields, slice_s, ',') ||
            !std::getline(fields, tp_s, ',') || !std::getline(fields, fp_s, ',') || !std::getline(fields, fn_s)) {
            throw ParseError(where + ": expected 5 comma-separated fields");
        }
        try {
            SampleKey key{case_id, std::stoi(slice_s)};
            report.per_slice.emplace_back(key,
                                          make_slice_metrics(std::stoll(tp_s), std::stoll(fp_s), std::stoll(fn_s)));
        } catch (const Error&) {
            throw;
        } catch (const std::exception&) {
            throw ParseError(where + ": bad numeric field");
        }
    }
    if (!have_n || !have_p || !have_r || !have_d) throw FormatError("report missing required summary lines");
    if (!report.per_slice.empty() && report.per_slice.size() != report.n_slices) {
        throw FormatError("report per-slice count disagrees with n_slices");
    }
    return report;
}

inline MetricsReport read_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path.string());
    return read_report(in);
}

// ---------------------------------------------------------------------------
// Run comparison: fixed-width table of both runs plus a delta row (a - b).
// Runs must cover identical sample keys; reports that recorded different
// metric conventions refuse to compare.
// ---------------------------------------------------------------------------

inline std::string compare_runs(const MetricsReport& a, const MetricsReport& b, const std::string& label_a,
                                const std::string& label_b) {
    std::set<SampleKey> keys_a, keys_b;
    for (const auto& [k, m] : a.per_slice) keys_a.insert(k);
    for (const auto& [k, m] : b.per_slice) keys_b.insert(k);
    if (keys_a != keys_b) {
        std::vector<SampleKey> diff;
        std::set_symmetric_difference(keys_a.begin(), keys_a.end(), keys_b.begin(), keys_b.end(),
                                      std::back_inserter(diff));
        throw IncomparableRunsError("runs cover different sample keys (symmetric difference: " +
                                    std::to_string(diff.size()) + " keys)");
    }
    if (!a.config_fingerprint.empty() && !b.config_fingerprint.empty() &&
        a.config_fingerprint != b.config_fingerprint) {
        throw IncomparableRunsError("runs used different metric conventions: '" + a.config_fingerprint + "' vs '" +
                                    b.config_fingerprint + "'");
    }

    const int label_w = static_cast<int>(std::max({label_a.size(), label_b.size(), std::size_t{5}}));
    char buf[256];
    std::string out;
    std::snprintf(buf, sizeof(buf), "%-*s  %10s  %10s  %10s\n", label_w, "run", "precision", "recall", "dice");
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-*s  %10.6f  %10.6f  %10.6f\n", label_w, label_a.c_str(), a.mean_precision,
                  a.mean_recall, a.mean_dice);
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-*s  %10.6f  %10.6f  %10.6f\n", label_w, label_b.c_str(), b.mean_precision,
                  b.mean_recall, b.mean_dice);
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-*s  %+10.6f  %+10.6f  %+10.6f\n", label_w, "delta",
                  a.mean_precision - b.mean_precision, a.mean_recall - b.mean_recall, a.mean_dice - b.mean_dice);
    out += buf;
    return out;
}

}  // namespace subseg
