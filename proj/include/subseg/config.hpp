#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "core.hpp"
#include "dataset.hpp"
#include "ensemble.hpp"
#include "phantom.hpp"
#include "segmenter.hpp"

namespace subseg {

// Every knob of the batch pipeline, with working defaults. Files use the
// "key = value" format with '#' comments and dotted keys; unknown keys are
// hard errors so typos cannot silently fall back to defaults.
struct PipelineConfig {
    std::filesystem::path dataset_root = "data";
    std::filesystem::path output_root = "out";
    std::uint64_t seed = 42;
    int threads = 0;  // 0 = hardware concurrency
    SplitRatios split;
    std::set<int> positive_labels = {1, 2, 4};
    double normalize_lo_pct = 1.0;
    double normalize_hi_pct = 99.0;
    SegmenterParams segmenter;
    FusionStrategy fusion;
    bool metrics_skip_empty_gt = false;
    bool metrics_micro = false;
    bool dataset_skip_empty = false;
    bool dataset_group_by_case = false;
    PhantomParams phantom;

    void validate() const {
        if (std::abs(split.train + split.val + split.test - 1.0) > 1e-9) {
            throw ConfigError("split ratios must sum to 1");
        }
        if (split.train < 0.0 || split.val < 0.0 || split.test < 0.0) {
            throw ConfigError("split ratios must be non-negative");
        }
        if (!(normalize_lo_pct >= 0.0 && normalize_lo_pct < normalize_hi_pct && normalize_hi_pct <= 100.0)) {
            throw ConfigError("normalize percentiles must satisfy 0 <= lo < hi <= 100");
        }
        if (threads < 0) throw ConfigError("threads must be >= 0");
        if (phantom.cases < 1) throw ConfigError("phantom.cases must be >= 1");
        if (phantom.width < 8 || phantom.height < 8 || phantom.depth < 4) {
            throw ConfigError("phantom extents too small");
        }
        // Sub-structure failures surface as configuration errors here.
        try {
            segmenter.validate();
            fusion.validate();
        } catch (const ValidationError& e) {
            throw ConfigError(e.what());
        }
    }

    std::string metrics_fingerprint() const {
        return std::string("skip_empty_gt=") + (metrics_skip_empty_gt ? "1" : "0");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

inline long long config_int(const std::string& value, std::size_t line_no) {
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(value, &used);
    } catch (const std::exception&) {
        throw ConfigError("line " + std::to_string(line_no) + ": expected an integer, got '" + value + "'");
    }
    if (used != value.size()) {
        throw ConfigError("line " + std::to_string(line_no) + ": expected an integer, got '" + value + "'");
    }
    return v;
}

inline std::uint64_t config_u64(const std::string& value, std::size_t line_no) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(value, &used);
    } catch (const std::exception&) {
        throw ConfigError("line " + std::to_string(line_no) + ": expected an unsigned integer, got '" + value + "'");
    }
    if (used != value.size() || (!value.empty() && value[0] == '-')) {
        throw ConfigError("line " + std::to_string(line_no) + ": expected an unsigned integer, got '" + value + "'");
    }
    return v;
}

inline double config_double(const std::string& value, std::size_t line_no) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &used);
    } catch (const std::exception&) {
        throw ConfigError("line " + std::to_string(line_no) + ": expected a number, got '" + value + "'");
    }
    if (used != value.size()) {
        throw ConfigError("line " + std::to_string(line_no) + ": expected a number, got '" + value + "'");
    }
    return v;
}

inline bool config_bool(const std::string& value, std::size_t line_no) {
    if (value == "true") return true;
    if (value == "false") return false;
    throw ConfigError("line " + std::to_string(line_no) + ": expected true or false, got '" + value + "'");
}

inline std::set<int> config_int_set(const std::string& value, std::size_t line_no) {
    std::set<int> out;
    std::istringstream iss(value);
    std::string item;
    while (std::getline(iss, item, ',')) {
        const std::string t = trim(item);
        if (t.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty entry in integer list");
        out.insert(static_cast<int>(config_int(t, line_no)));
    }
    if (out.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty integer list");
    return out;
}

}  // namespace detail

inline PipelineConfig parse_config_text(const std::string& text) {
    PipelineConfig cfg;
    std::istringstream in(text);
    std::string raw_line;
    std::size_t line_no = 0;
    while (std::getline(in, raw_line)) {
        ++line_no;
        const auto hash = raw_line.find('#');
        const std::string line = detail::trim(hash == std::string::npos ? raw_line : raw_line.substr(0, hash));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        }

        if (key == "dataset_root") {
            cfg.dataset_root = value;
        } else if (key == "output_root") {
            cfg.output_root = value;
        } else if (key == "seed") {
            cfg.seed = detail::config_u64(value, line_no);
        } else if (key == "threads") {
            cfg.threads = static_cast<int>(detail::config_int(value, line_no));
        } else if (key == "split.train") {
            cfg.split.train = detail::config_double(value, line_no);
        } else if (key == "split.val") {
            cfg.split.val = detail::config_double(value, line_no);
        } else if (key == "split.test") {
            cfg.split.test = detail::config_double(value, line_no);
        } else if (key == "labels.positive") {
            cfg.positive_labels = detail::config_int_set(value, line_no);
        } else if (key == "normalize.lo_pct") {
            cfg.normalize_lo_pct = detail::config_double(value, line_no);
        } else if (key == "normalize.hi_pct") {
            cfg.normalize_hi_pct = detail::config_double(value, line_no);
        } else if (key == "segmenter.threshold_mode") {
            if (value == "otsu") {
                cfg.segmenter.threshold_mode = ThresholdMode::Otsu;
            } else if (value == "percentile") {
                cfg.segmenter.threshold_mode = ThresholdMode::Percentile;
            } else {
                throw ConfigError("line " + std::to_string(line_no) + ": threshold_mode must be otsu or percentile");
            }
        } else if (key == "segmenter.percentile") {
            cfg.segmenter.percentile = detail::config_double(value, line_no);
        } else if (key == "segmenter.min_area") {
            cfg.segmenter.min_area = static_cast<int>(detail::config_int(value, line_no));
        } else if (key == "segmenter.connectivity") {
            cfg.segmenter.connectivity = static_cast<int>(detail::config_int(value, line_no));
        } else if (key == "segmenter.max_instances") {
            cfg.segmenter.max_instances = static_cast<int>(detail::config_int(value, line_no));
        } else if (key == "segmenter.nms_iou") {
            cfg.segmenter.nms_iou = detail::config_double(value, line_no);
        } else if (key == "fusion.strategy") {
            try {
                cfg.fusion.kind = parse_fusion_kind(value);
            } catch (const ParseError& e) {
                throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
            }
        } else if (key == "fusion.vote_threshold") {
            cfg.fusion.vote_threshold = detail::config_double(value, line_no);
        } else if (key == "metrics.skip_empty_gt") {
            cfg.metrics_skip_empty_gt = detail::config_bool(value, line_no);
        } else if (key == "metrics.micro") {
            cfg.metrics_micro = detail::config_bool(value, line_no);
        } else if (key == "dataset.skip_empty") {
            cfg.dataset_skip_empty = detail::config_bool(value, line_no);
        } else if (key == "dataset.group_by_case") {
            cfg.dataset_group_by_case = detail::config_bool(value, line_no);
        } else if (key == "phantom.cases") {
            cfg.phantom.cases = static_cast<int>(detail::config_int(value, line_no));
        } else if (key == "phantom.width") {
            cfg.phantom.width = static_cast<int>(detail::config_int(value, line_no));
        } else if (key == "phantom.height") {
            cfg.phantom.height = static_cast<int>(detail::config_int(value, line_no));
        } else if (key == "phantom.depth") {
            cfg.phantom.depth = static_cast<int>(detail::config_int(value, line_no));
        } else {
            throw ConfigError("unknown config key '" + key + "' (line " + std::to_string(line_no) + ")");
        }
    }
    cfg.validate();
    return cfg;
}

inline PipelineConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

}  // namespace subseg
