#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "dataset.hpp"
#include "kernels.hpp"

namespace subseg {

enum class ThresholdMode { Otsu, Percentile };

struct SegmenterParams {
    ThresholdMode threshold_mode = ThresholdMode::Otsu;
    double percentile = 95.0;  // used when threshold_mode == Percentile
    int min_area = 10;
    int connectivity = 8;
    int max_instances = 100;
    double nms_iou = 0.5;

    void validate() const {
        if (min_area < 1) throw ValidationError("segmenter: min_area must be >= 1");
        if (max_instances < 1) throw ValidationError("segmenter: max_instances must be >= 1");
        if (connectivity != 4 && connectivity != 8) throw ValidationError("segmenter: connectivity must be 4 or 8");
        if (percentile <= 0.0 || percentile >= 100.0) throw ValidationError("segmenter: percentile must be in (0,100)");
        if (nms_iou < 0.0 || nms_iou > 1.0) throw ValidationError("segmenter: nms_iou must be in [0,1]");
    }
};

struct PredictionSet {
    std::string case_id;
    int slice_index = 0;
    StreamId stream_id = StreamId::T1Stream;
    std::vector<Instance> instances;
};

namespace detail {

// Otsu's threshold over a 256-bin histogram of values assumed in [0,1].
// Maximizes between-class variance; ties resolve to the lowest bin. The
// returned threshold is the center of the winning bin.
inline double otsu_threshold(const std::vector<float>& values) {
    double hist[256] = {0.0};
    for (float v : values) {
        int bin = static_cast<int>(static_cast<double>(v) * 256.0);
        bin = std::clamp(bin, 0, 255);
        hist[bin] += 1.0;
    }
    const double total = static_cast<double>(values.size());
    double sum_all = 0.0;
    for (int i = 0; i < 256; ++i) sum_all += hist[i] * i;

    double best_sb = -1.0;
    int best_k = 0;
    double w0 = 0.0;
    double sum0 = 0.0;
    for (int k = 0; k < 256; ++k) {
        w0 += hist[k];
        sum0 += hist[k] * k;
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double mu0 = sum0 / w0;
        const double mu1 = (sum_all - sum0) / w1;
        const double sb = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (sb > best_sb) {
            best_sb = sb;
            best_k = k;
        }
    }
    return (best_k + 0.5) / 256.0;
}

}  // namespace detail

// Classical stand-in for a trained per-slice model: threshold (Otsu or a
// fixed percentile, both over nonzero pixels), connected components, minimum
// area filter, confidence = mean intensity inside the component, NMS, then
// truncation to max_instances. A blank slice yields an empty set.
inline PredictionSet baseline_segment(const SliceSample& slice, const SegmenterParams& params) {
    params.validate();
    PredictionSet out;
    out.case_id = slice.case_id;
    out.slice_index = slice.slice_index;
    out.stream_id = slice.stream_id;

    std::vector<float> nonzero;
    nonzero.reserve(slice.image.size());
    for (float v : slice.image.data) {
        if (v != 0.0f) nonzero.push_back(v);
    }
    if (nonzero.empty()) return out;

    double threshold;
    if (params.threshold_mode == ThresholdMode::Otsu) {
        threshold = detail::otsu_threshold(nonzero);
    } else {
        std::sort(nonzero.begin(), nonzero.end());
        threshold = percentile_sorted(nonzero, params.percentile);
    }

    Mask2D fg(slice.image.width, slice.image.height);
    for (std::size_t i = 0; i < fg.size(); ++i) {
        fg.data[i] = static_cast<double>(slice.image.data[i]) > threshold ? 1 : 0;
    }

    std::vector<Instance> candidates;
    for (auto& comp : connected_components(fg, params.connectivity)) {
        if (comp.area < params.min_area) continue;
        double sum = 0.0;
        for (std::size_t i = 0; i < comp.mask.size(); ++i) {
            if (comp.mask.data[i]) sum += slice.image.data[i];
        }
        Instance inst;
        inst.box = comp.bbox;
        inst.score = sum / comp.area;
        inst.mask = std::move(comp.mask);
        candidates.push_back(std::move(inst));
    }

    out.instances = nms(candidates, params.nms_iou);
    if (out.instances.size() > static_cast<std::size_t>(params.max_instances)) {
        out.instances.resize(static_cast<std::size_t>(params.max_instances));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Run-length encoding, row-major, alternating zero-run then one-run, always
// starting with the zero-run (possibly 0). Canonical output never emits a
// zero-length run after the first and never a trailing empty run.
// ---------------------------------------------------------------------------

inline std::vector<long> rle_encode(const Mask2D& mask) {
    std::vector<long> counts;
    if (mask.size() == 0) return counts;
    std::uint8_t current = 0;
    long run = 0;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            const std::uint8_t v = mask.at(x, y);
            if (v > 1) throw DomainError("rle_encode: mask is not binary");
            if (v == current) {
                ++run;
            } else {
                counts.push_back(run);
                current = v;
                run = 1;
            }
        }
    }
    counts.push_back(run);
    return counts;
}

inline Mask2D rle_decode(const std::vector<long>& counts, int height, int width) {
    if (height < 0 || width < 0) throw ValidationError("rle_decode: negative extents");
    long total = 0;
    for (long c : counts) {
        if (c < 0) throw LengthError("rle_decode: negative run length");
        total += c;
    }
    const long expected = static_cast<long>(height) * width;
    if (total != expected) {
        throw LengthError("rle_decode: counts sum to " + std::to_string(total) + ", expected " +
                          std::to_string(expected));
    }
    Mask2D mask(width, height);
    std::size_t pos = 0;
    std::uint8_t value = 0;
    for (long c : counts) {
        for (long i = 0; i < c; ++i) {
            mask.data[pos++] = value;
        }
        value = value ? 0 : 1;
    }
    return mask;
}

using PredictionKey = std::tuple<std::string, int, StreamId>;
using PredictionMap = std::map<PredictionKey, PredictionSet>;

// ---------------------------------------------------------------------------
// Prediction interchange: one JSON object per line with fields case_id,
// slice_index, stream, instances[{box, score, size, counts}]. Masks travel in
// run-length form. The writer emits records sorted by key so output bytes do
// not depend on production order; the reader accepts any line order.
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json prediction_to_json(const PredictionSet& p) {
    nlohmann::json rec;
    rec["case_id"] = p.case_id;
    rec["slice_index"] = p.slice_index;
    rec["stream"] = to_string(p.stream_id);
    auto& arr = rec["instances"] = nlohmann::json::array();
    for (const auto& inst : p.instances) {
        nlohmann::json j;
        j["box"] = {inst.box.x0, inst.box.y0, inst.box.x1, inst.box.y1};
        j["score"] = inst.score;
        j["size"] = {inst.mask.height, inst.mask.width};
        j["counts"] = rle_encode(inst.mask);
        arr.push_back(std::move(j));
    }
    return rec;
}

}  // namespace detail

inline void write_predictions(std::vector<PredictionSet> sets, std::ostream& out) {
    std::sort(sets.begin(), sets.end(), [](const PredictionSet& a, const PredictionSet& b) {
        return std::tie(a.case_id, a.slice_index, a.stream_id) < std::tie(b.case_id, b.slice_index, b.stream_id);
    });
    for (const auto& p : sets) {
        out << detail::prediction_to_json(p).dump() << '\n';
    }
}

inline PredictionMap load_predictions(std::istream& in) {
    PredictionMap out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = "predictions line " + std::to_string(line_no);

        const nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.is_object()) throw ParseError(where + ": not a JSON object");
        if (!rec.contains("case_id") || !rec["case_id"].is_string()) throw ParseError(where + ": bad case_id");
        if (!rec.contains("slice_index") || !rec["slice_index"].is_number_integer()) {
            throw ParseError(where + ": bad slice_index");
        }
        if (!rec.contains("stream") || !rec["stream"].is_string()) throw ParseError(where + ": bad stream");
        if (!rec.contains("instances") || !rec["instances"].is_array()) throw ParseError(where + ": bad instances");

        PredictionSet p;
        p.case_id = rec["case_id"].get<std::string>();
        p.slice_index = rec["slice_index"].get<int>();
        try {
            p.stream_id = parse_stream(rec["stream"].get<std::string>());
        } catch (const ParseError& e) {
            throw ParseError(where + ": " + e.what());
        }

        for (const auto& j : rec["instances"]) {
            if (!j.is_object() || !j.contains("box") || !j.contains("score") || !j.contains("size") ||
                !j.contains("counts")) {
                throw ParseError(where + ": instance missing box/score/size/counts");
            }
            const auto& box = j["box"];
            const auto& size = j["size"];
            if (!box.is_array() || box.size() != 4 || !size.is_array() || size.size() != 2 ||
                !j["score"].is_number() || !j["counts"].is_array()) {
                throw ParseError(where + ": malformed instance fields");
            }
            Instance inst;
            inst.box = Box{box[0].get<double>(), box[1].get<double>(), box[2].get<double>(), box[3].get<double>()};
            inst.score = j["score"].get<double>();
            if (!std::isfinite(inst.score) || inst.score < 0.0 || inst.score > 1.0) {
                throw ParseError(where + ": score outside [0,1]");
            }
            std::vector<long> counts;
            for (const auto& c : j["counts"]) {
                if (!c.is_number_integer()) throw ParseError(where + ": non-integer run length");
                counts.push_back(c.get<long>());
            }
            try {
                inst.mask = rle_decode(counts, size[0].get<int>(), size[1].get<int>());
            } catch (const LengthError& e) {
                throw LengthError(where + ": " + e.what());
            }
            p.instances.push_back(std::move(inst));
        }

        const PredictionKey key{p.case_id, p.slice_index, p.stream_id};
        if (!out.emplace(key, std::move(p)).second) throw ParseError(where + ": duplicate record key");
    }
    return out;
}

inline void write_predictions(const std::vector<PredictionSet>& sets, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open file for writing: " + path.string());
    write_predictions(sets, out);
    if (!out) throw DataError("write failed: " + path.string());
}

inline PredictionMap load_predictions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path.string());
    return load_predictions(in);
}

}  // namespace subseg
