#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "config.hpp"
#include "core.hpp"
#include "dataset.hpp"
#include "ensemble.hpp"
#include "log.hpp"
#include "metrics.hpp"
#include "phantom.hpp"
#include "segmenter.hpp"
#include "subtraction.hpp"
#include "volume_io.hpp"

namespace subseg {

// ---------------------------------------------------------------------------
// Artifact layout under output_root. Every stage reads its prerequisites from
// here and writes its own outputs atomically (temp file + rename), so an
// interrupted run never leaves a partial artifact in place.
// ---------------------------------------------------------------------------

struct Layout {
    std::filesystem::path root;

    explicit Layout(std::filesystem::path output_root) : root(std::move(output_root)) {}

    std::filesystem::path normalized_dir() const { return root / "normalized"; }
    std::filesystem::path normalized_file(const std::string& case_id, const std::string& name) const {
        return normalized_dir() / case_id / (name + ".raw");
    }
    std::filesystem::path streams_dir() const { return root / "streams"; }
    std::filesystem::path stream_file(const std::string& case_id, StreamId s) const {
        return streams_dir() / case_id / (std::string(to_string(s)) + "_stream.raw");
    }
    std::filesystem::path slice_index() const { return root / "slices.idx"; }
    std::filesystem::path split_manifest() const { return root / "split.manifest"; }
    std::filesystem::path predictions_dir(bool raw_inputs) const {
        return root / (raw_inputs ? "predictions_raw" : "predictions");
    }
    std::filesystem::path prediction_file(StreamId s, bool raw_inputs) const {
        return predictions_dir(raw_inputs) / (std::string(to_string(s)) + ".jsonl");
    }
    std::filesystem::path reports_dir() const { return root / "reports"; }
    std::filesystem::path report_file(const std::string& stem) const { return reports_dir() / (stem + ".report"); }
};

template <typename Writer>
void atomic_write(const std::filesystem::path& target, Writer&& writer) {
    const auto parent = target.parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::filesystem::path tmp = target;
    tmp += ".tmp";
    try {
        writer(tmp);
        std::filesystem::rename(tmp, target);
    } catch (...) {
        std::error_code ec;
        std::filesystem::remove(tmp, ec);
        throw;
    }
}

// Runs body(0..n-1) on a worker pool. Results must not depend on execution
// order; callers collect into pre-sized slots and serialize afterwards, which
// keeps output bytes identical for any thread count.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body) {
    int workers = threads <= 0 ? static_cast<int>(std::thread::hardware_concurrency()) : threads;
    if (workers < 1) workers = 1;
    if (n > 0 && static_cast<std::size_t>(workers) > n) workers = static_cast<int>(n);
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Slice index: "SUBSEGSLICEIDX v1" then "<case_id>,<slice_index>,<gt_pixels>"
// per depth plane, sorted by key. Records the ground-truth pixel count so the
// split stage can drop empty slices without re-reading volumes.
// ---------------------------------------------------------------------------

struct SliceIndexRow {
    std::string case_id;
    int slice_index = 0;
    long gt_pixels = 0;
};

inline void write_slice_index(const std::vector<SliceIndexRow>& rows, std::ostream& out) {
    out << "SUBSEGSLICEIDX v1\n";
    for (const auto& r : rows) {
        out << r.case_id << ',' << r.slice_index << ',' << r.gt_pixels << '\n';
    }
}

inline std::vector<SliceIndexRow> read_slice_index(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "SUBSEGSLICEIDX v1") {
        throw FormatError("bad slice index header: " + path.string());
    }
    std::vector<SliceIndexRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string case_id, slice_s, count_s;
        if (!std::getline(fields, case_id, ',') || !std::getline(fields, slice_s, ',') ||
            !std::getline(fields, count_s)) {
            throw ParseError("slice index line " + std::to_string(line_no) + ": expected 3 fields");
        }
        try {
            rows.push_back(SliceIndexRow{case_id, std::stoi(slice_s), std::stol(count_s)});
        } catch (const std::exception&) {
            throw ParseError("slice index line " + std::to_string(line_no) + ": bad numeric field");
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Stage helpers.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> sorted_case_dirs(const std::filesystem::path& root, const char* what) {
    if (!std::filesystem::is_directory(root)) {
        throw DataError(std::string(what) + " directory not found: " + root.string());
    }
    std::vector<std::string> cases;
    for (const auto& entry : std::filesystem::directory_iterator(root)) {
        if (entry.is_directory()) cases.push_back(entry.path().filename().string());
    }
    if (cases.empty()) throw DataError(std::string("no cases found under ") + root.string());
    std::sort(cases.begin(), cases.end());
    return cases;
}

inline Image2D extract_plane(const Volume& v, int z) {
    Image2D img(v.width, v.height);
    const std::size_t offset = static_cast<std::size_t>(v.width) * v.height * static_cast<std::size_t>(z);
    std::copy(v.voxels.begin() + offset, v.voxels.begin() + offset + img.size(), img.data.begin());
    return img;
}

inline Mask2D extract_plane_mask(const Volume& binary, int z) {
    Mask2D mask(binary.width, binary.height);
    const std::size_t offset = static_cast<std::size_t>(binary.width) * binary.height * static_cast<std::size_t>(z);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const float g = binary.voxels[offset + i];
        if (g != 0.0f && g != 1.0f) throw DomainError("label volume is not binary");
        mask.data[i] = g != 0.0f ? 1 : 0;
    }
    return mask;
}

inline std::optional<Box> mask_bbox(const Mask2D& mask) {
    int min_x = mask.width, min_y = mask.height, max_x = -1, max_y = -1;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            min_x = std::min(min_x, x);
            min_y = std::min(min_y, y);
            max_x = std::max(max_x, x);
            max_y = std::max(max_y, y);
        }
    }
    if (max_x < 0) return std::nullopt;
    return Box{static_cast<double>(min_x), static_cast<double>(min_y), static_cast<double>(max_x + 1),
               static_cast<double>(max_y + 1)};
}

// "train" | "val" | "test" | "all" -> split filter (nullopt = all).
inline std::optional<SplitClass> parse_split_selector(const std::string& s) {
    if (s == "all") return std::nullopt;
    if (s == "train") return SplitClass::Train;
    if (s == "val") return SplitClass::Val;
    if (s == "test") return SplitClass::Test;
    throw ValidationError("unknown split selector: " + s + " (expected train|val|test|all)");
}

inline std::map<std::string, std::vector<int>> keys_by_case(const SplitSpec& spec,
                                                            const std::optional<SplitClass>& filter) {
    std::map<std::string, std::vector<int>> grouped;
    for (const auto& [key, cls] : spec.assignments) {
        if (filter && cls != *filter) continue;
        grouped[key.case_id].push_back(key.slice_index);
    }
    return grouped;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stages. Each throws on failure; run_cli_action maps exceptions to exit
// codes at the command boundary.
// ---------------------------------------------------------------------------

// Generate the synthetic fixture set as single-file volumes under
// dataset_root/<case>/<modality>.nii.
inline void run_phantom(const PipelineConfig& cfg) {
    char name[32];
    for (int i = 0; i < cfg.phantom.cases; ++i) {
        std::snprintf(name, sizeof(name), "case_%03d", i);
        const std::string case_id = name;
        const CaseVolumes c = make_phantom_case(cfg.phantom, case_id, cfg.seed);
        const auto dir = cfg.dataset_root / case_id;
        const std::pair<const char*, const Volume*> files[] = {
            {"t1", &*c.t1}, {"t1gd", &*c.t1gd}, {"t2", &*c.t2}, {"flair", &*c.flair}, {"label", &*c.label}};
        for (const auto& [mod, vol] : files) {
            atomic_write(dir / (std::string(mod) + ".nii"),
                         [vol](const std::filesystem::path& tmp) { write_nifti(*vol, tmp); });
        }
    }
    log::info("phantom: wrote " + std::to_string(cfg.phantom.cases) + " cases to " + cfg.dataset_root.string());
}

// Ingest dataset_root/<case>/<modality>.nii[.gz], normalize the four image
// modalities, pass label codes through unchanged.
inline void run_convert(const PipelineConfig& cfg) {
    const Layout layout(cfg.output_root);
    const auto cases = detail::sorted_case_dirs(cfg.dataset_root, "dataset");
    parallel_for(cases.size(), cfg.threads, [&](std::size_t i) {
        const std::string& case_id = cases[i];
        const auto case_dir = cfg.dataset_root / case_id;

        std::optional<Volume> reference;
        for (const auto& [name, modality] :
             {std::pair<const char*, Modality>{"t1", Modality::T1},
              {"t1gd", Modality::T1GD},
              {"t2", Modality::T2},
              {"flair", Modality::FLAIR},
              {"label", Modality::LABEL}}) {
            std::filesystem::path src = case_dir / (std::string(name) + ".nii");
            if (!std::filesystem::exists(src)) src += ".gz";
            if (!std::filesystem::exists(src)) {
                throw MissingModalityError("case '" + case_id + "' is missing " + name + " (" + src.string() + ")");
            }
            Volume v = read_nifti(src, modality);
            v.case_id = case_id;
            if (reference && !v.same_shape(*reference)) {
                throw ShapeError("case '" + case_id + "': " + name + " shape differs from other modalities");
            }
            if (!reference) reference = v;
            if (modality != Modality::LABEL) v = normalize_intensity(v, cfg.normalize_lo_pct, cfg.normalize_hi_pct);
            atomic_write(layout.normalized_file(case_id, name),
                         [&v](const std::filesystem::path& tmp) { write_raw(v, tmp); });
        }
    });
    log::info("convert: normalized " + std::to_string(cases.size()) + " cases");
}

// Build the two subtraction streams per case from the normalized volumes.
inline void run_subtract(const PipelineConfig& cfg) {
    const Layout layout(cfg.output_root);
    const auto cases = detail::sorted_case_dirs(layout.normalized_dir(), "normalized");
    parallel_for(cases.size(), cfg.threads, [&](std::size_t i) {
        const std::string& case_id = cases[i];
        CaseVolumes c;
        c.case_id = case_id;
        c.t1 = read_raw(layout.normalized_file(case_id, "t1"));
        c.t1gd = read_raw(layout.normalized_file(case_id, "t1gd"));
        c.t2 = read_raw(layout.normalized_file(case_id, "t2"));
        c.flair = read_raw(layout.normalized_file(case_id, "flair"));
        auto [s1, s2] = build_streams(c);
        atomic_write(layout.stream_file(case_id, StreamId::T1Stream),
                     [&s1](const std::filesystem::path& tmp) { write_raw(s1.volume, tmp); });
        atomic_write(layout.stream_file(case_id, StreamId::T2Stream),
                     [&s2](const std::filesystem::path& tmp) { write_raw(s2.volume, tmp); });
    });
    log::info("subtract: built streams for " + std::to_string(cases.size()) + " cases");
}

// Enumerate every (case, slice) with its ground-truth positive pixel count.
inline void run_slice(const PipelineConfig& cfg) {
    const Layout layout(cfg.output_root);
    const auto cases = detail::sorted_case_dirs(layout.normalized_dir(), "normalized");
    std::vector<SliceIndexRow> rows;
    for (const std::string& case_id : cases) {
        const Volume label = read_raw(layout.normalized_file(case_id, "label"));
        const Volume binary = binarize_labels(label, cfg.positive_labels);
        for (int z = 0; z < binary.depth; ++z) {
            long count = 0;
            const std::size_t offset = static_cast<std::size_t>(binary.width) * binary.height * z;
            for (std::size_t k = 0; k < static_cast<std::size_t>(binary.width) * binary.height; ++k) {
                if (binary.voxels[offset + k] != 0.0f) ++count;
            }
            rows.push_back(SliceIndexRow{case_id, z, count});
        }
    }
    atomic_write(layout.slice_index(), [&rows](const std::filesystem::path& tmp) {
        std::ofstream out(tmp);
        if (!out) throw DataError("cannot open file for writing: " + tmp.string());
        write_slice_index(rows, out);
        if (!out) throw DataError("write failed: " + tmp.string());
    });
    log::info("slice: indexed " + std::to_string(rows.size()) + " slices");
}

// Deterministic train/val/test assignment over the slice index.
inline void run_split(const PipelineConfig& cfg) {
    const Layout layout(cfg.output_root);
    std::vector<SampleKey> keys;
    for (const auto& row : read_slice_index(layout.slice_index())) {
        if (cfg.dataset_skip_empty && row.gt_pixels == 0) continue;
        keys.push_back(SampleKey{row.case_id, row.slice_index});
    }
    const SplitSpec spec = cfg.dataset_group_by_case ? split_dataset_grouped(keys, cfg.split, cfg.seed)
                                                     : split_dataset(keys, cfg.split, cfg.seed);
    atomic_write(layout.split_manifest(),
                 [&spec](const std::filesystem::path& tmp) { write_split_manifest(spec, tmp); });
    log::info("split: " + std::to_string(spec.count(SplitClass::Train)) + " train, " +
              std::to_string(spec.count(SplitClass::Val)) + " val, " + std::to_string(spec.count(SplitClass::Test)) +
              " test");
}

// Run the baseline segmenter over both streams for every slice in the chosen
// split. With raw_inputs the normalized enhanced volumes (t1gd, flair) stand
// in for the streams; records still carry stream tags t1/t2 so downstream
// stages treat both prediction sets uniformly.
inline void run_predict(const PipelineConfig& cfg, const std::string& split_selector = "test",
                        bool raw_inputs = false) {
    const Layout layout(cfg.output_root);
    const auto filter = detail::parse_split_selector(split_selector);
    const SplitSpec spec = read_split_manifest(layout.split_manifest());
    const auto grouped = detail::keys_by_case(spec, filter);

    std::vector<std::pair<std::string, std::vector<int>>> cases(grouped.begin(), grouped.end());
    std::vector<std::vector<PredictionSet>> results(cases.size());

    parallel_for(cases.size(), cfg.threads, [&](std::size_t i) {
        const auto& [case_id, slice_list] = cases[i];
        const Volume label = read_raw(layout.normalized_file(case_id, "label"));
        const Volume binary = binarize_labels(label, cfg.positive_labels);
        const Volume input1 = read_raw(raw_inputs ? layout.normalized_file(case_id, "t1gd")
                                                  : layout.stream_file(case_id, StreamId::T1Stream));
        const Volume input2 = read_raw(raw_inputs ? layout.normalized_file(case_id, "flair")
                                                  : layout.stream_file(case_id, StreamId::T2Stream));
        if (!input1.same_shape(binary) || !input2.same_shape(binary)) {
            throw ShapeError("case '" + case_id + "': input and label shapes differ");
        }
        for (int z : slice_list) {
            if (z < 0 || z >= binary.depth) {
                throw DataError("case '" + case_id + "': slice " + std::to_string(z) + " out of range");
            }
            for (const auto& [vol, sid] : {std::pair<const Volume*, StreamId>{&input1, StreamId::T1Stream},
                                           {&input2, StreamId::T2Stream}}) {
                SliceSample s;
                s.case_id = case_id;
                s.slice_index = z;
                s.stream_id = sid;
                s.image = detail::extract_plane(*vol, z);
                s.gt_mask = detail::extract_plane_mask(binary, z);
                results[i].push_back(baseline_segment(s, cfg.segmenter));
            }
        }
    });

    std::vector<PredictionSet> t1_sets, t2_sets;
    for (const auto& case_results : results) {
        for (const auto& p : case_results) {
            (p.stream_id == StreamId::T1Stream ? t1_sets : t2_sets).push_back(p);
        }
    }
    for (const auto& [sets, sid] : {std::pair<const std::vector<PredictionSet>*, StreamId>{&t1_sets,
                                                                                           StreamId::T1Stream},
                                    {&t2_sets, StreamId::T2Stream}}) {
        atomic_write(layout.prediction_file(sid, raw_inputs),
                     [sets](const std::filesystem::path& tmp) { write_predictions(*sets, tmp); });
    }
    log::info("predict: wrote " + std::to_string(t1_sets.size()) + " slice records per stream");
}

// Fuse per-slice t1/t2 predictions into single-mask records tagged "fused".
inline void run_fuse(const PipelineConfig& cfg, bool raw_inputs = false) {
    const Layout layout(cfg.output_root);
    const PredictionMap t1 = load_predictions(layout.prediction_file(StreamId::T1Stream, raw_inputs));
    const PredictionMap t2 = load_predictions(layout.prediction_file(StreamId::T2Stream, raw_inputs));

    std::set<std::pair<std::string, int>> keys;
    for (const auto& [k, p] : t1) keys.emplace(std::get<0>(k), std::get<1>(k));
    for (const auto& [k, p] : t2) keys.emplace(std::get<0>(k), std::get<1>(k));

    std::map<std::string, std::pair<int, int>> shapes;  // case -> (width, height)
    auto slice_shape = [&](const std::string& case_id) {
        auto it = shapes.find(case_id);
        if (it == shapes.end()) {
            const Volume label = read_raw(layout.normalized_file(case_id, "label"));
            it = shapes.emplace(case_id, std::pair<int, int>{label.width, label.height}).first;
        }
        return it->second;
    };

    std::vector<PredictionSet> fused_sets;
    for (const auto& [case_id, z] : keys) {
        PredictionSet p1{case_id, z, StreamId::T1Stream, {}};
        PredictionSet p2{case_id, z, StreamId::T2Stream, {}};
        if (auto it = t1.find({case_id, z, StreamId::T1Stream}); it != t1.end()) p1 = it->second;
        if (auto it = t2.find({case_id, z, StreamId::T2Stream}); it != t2.end()) p2 = it->second;
        const auto [w, h] = slice_shape(case_id);
        const Mask2D mask = fuse(p1, p2, cfg.fusion, h, w);

        PredictionSet f;
        f.case_id = case_id;
        f.slice_index = z;
        f.stream_id = StreamId::Fused;
        if (const auto bbox = detail::mask_bbox(mask)) {
            double score = 1.0;
            if (cfg.fusion.kind == FusionKind::MaxScore) {
                std::vector<Instance> pool(p1.instances);
                pool.insert(pool.end(), p2.instances.begin(), p2.instances.end());
                score = select_top_instance(pool)->score;
            }
            f.instances.push_back(Instance{*bbox, score, mask});
        }
        fused_sets.push_back(std::move(f));
    }
    atomic_write(layout.prediction_file(StreamId::Fused, raw_inputs),
                 [&fused_sets](const std::filesystem::path& tmp) { write_predictions(fused_sets, tmp); });
    log::info("fuse: wrote " + std::to_string(fused_sets.size()) + " fused records");
}

// Score predictions against ground truth over the chosen split. Prediction
// masks reduce to the top-confidence instance per slice; slices with no
// prediction record score against an empty mask. Prints the summary to `echo`
// and writes the full report file.
inline MetricsReport run_evaluate(const PipelineConfig& cfg, const std::string& split_selector = "test",
                                  const std::string& stream_name = "fused",
                                  const std::optional<std::filesystem::path>& pred_override = std::nullopt,
                                  const std::optional<std::filesystem::path>& report_override = std::nullopt,
                                  std::ostream* echo = nullptr) {
    const Layout layout(cfg.output_root);
    const StreamId stream = parse_stream(stream_name);
    const auto filter = detail::parse_split_selector(split_selector);
    const SplitSpec spec = read_split_manifest(layout.split_manifest());
    const auto grouped = detail::keys_by_case(spec, filter);

    const std::filesystem::path pred_path = pred_override ? *pred_override : layout.prediction_file(stream, false);
    const PredictionMap predictions = load_predictions(pred_path);

    std::vector<std::pair<std::string, std::vector<int>>> cases(grouped.begin(), grouped.end());
    std::vector<std::vector<std::pair<SampleKey, SliceMetrics>>> results(cases.size());

    parallel_for(cases.size(), cfg.threads, [&](std::size_t i) {
        const auto& [case_id, slice_list] = cases[i];
        const Volume label = read_raw(layout.normalized_file(case_id, "label"));
        const Volume binary = binarize_labels(label, cfg.positive_labels);
        for (int z : slice_list) {
            if (z < 0 || z >= binary.depth) {
                throw DataError("case '" + case_id + "': slice " + std::to_string(z) + " out of range");
            }
            const Mask2D gt = detail::extract_plane_mask(binary, z);
            Mask2D pred(binary.width, binary.height);
            if (auto it = predictions.find({case_id, z, stream}); it != predictions.end()) {
                if (auto top = select_top_instance(it->second.instances)) pred = top->mask;
            }
            results[i].emplace_back(SampleKey{case_id, z}, slice_metrics(pred, gt));
        }
    });

    std::vector<std::pair<SampleKey, SliceMetrics>> per_slice;
    for (const auto& case_results : results) {
        per_slice.insert(per_slice.end(), case_results.begin(), case_results.end());
    }
    MetricsReport report = aggregate(per_slice, cfg.metrics_skip_empty_gt);
    report.config_fingerprint = cfg.metrics_fingerprint();

    const std::filesystem::path report_path =
        report_override ? *report_override
                        : layout.report_file(pred_override ? pred_override->stem().string() : stream_name);
    atomic_write(report_path, [&report](const std::filesystem::path& tmp) { write_report(report, tmp, true); });

    if (echo) {
        write_report(report, *echo, false);
        if (cfg.metrics_micro) {
            const SliceMetrics pooled = pooled_metrics(report.per_slice);
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.6f", pooled.precision);
            *echo << "micro_precision=" << buf << '\n';
            std::snprintf(buf, sizeof(buf), "%.6f", pooled.recall);
            *echo << "micro_recall=" << buf << '\n';
            std::snprintf(buf, sizeof(buf), "%.6f", pooled.dice);
            *echo << "micro_dice=" << buf << '\n';
        }
    }
    return report;
}

// Compare two report files; returns (and optionally prints) the table.
inline std::string run_compare(const std::filesystem::path& report_a, const std::filesystem::path& report_b,
                               std::string label_a = "", std::string label_b = "", std::ostream* echo = nullptr) {
    if (label_a.empty()) label_a = report_a.stem().string();
    if (label_b.empty()) label_b = report_b.stem().string();
    const MetricsReport a = read_report(report_a);
    const MetricsReport b = read_report(report_b);
    const std::string table = compare_runs(a, b, label_a, label_b);
    if (echo) *echo << table;
    return table;
}

// Maps library errors to process exit codes: 0 success, 1 validation or
// configuration, 2 data or environment.
inline int run_cli_action(const std::function<void()>& action) {
    try {
        action();
        return 0;
    } catch (const ValidationError& e) {
        log::error(e.what());
        return 1;
    } catch (const DataError& e) {
        log::error(e.what());
        return 2;
    } catch (const std::exception& e) {
        log::error(e.what());
        return 2;
    }
}

}  // namespace subseg
