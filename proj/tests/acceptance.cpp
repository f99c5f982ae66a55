// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Each check is verified against an independent reference
// implementation or a pre-registered numeric gate, never against the code
// under test.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <subseg/pipeline.hpp>

using namespace subseg;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(const std::string& name, bool ok, const std::string& detail = "") {
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << name;
    if (!detail.empty()) std::cout << " (" << detail << ")";
    std::cout << std::endl;
    if (!ok) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path scratch_dir(const std::string& tag) {
    static int counter = 0;
    const auto dir = fs::temp_directory_path() /
                     ("subseg_accept_" + std::to_string(::getpid()) + "_" + tag + "_" + std::to_string(counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string case_name(int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "case_%03d", i);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. Split arithmetic at full-dataset scale.
// ---------------------------------------------------------------------------

void check_split_scale() {
    const char* name = "split handles 369 cases x 155 slices with exact class sizes";
    try {
        const auto t0 = Clock::now();
        std::vector<SampleKey> keys;
        keys.reserve(369 * 155);
        for (int c = 0; c < 369; ++c) {
            const std::string id = case_name(c);
            const Volume stream(16, 16, 155, Modality::SUBTRACTION, id);
            const Volume label(16, 16, 155, Modality::LABEL, id);
            for (const auto& s : slice_volume(stream, label, StreamId::T1Stream)) {
                keys.push_back({s.case_id, s.slice_index});
            }
        }
        bool ok = keys.size() == 57195;

        const std::uint64_t seed = 20260819ull;
        const SplitSpec spec = split_dataset(keys, SplitRatios{}, seed);
        ok = ok && spec.assignments.size() == 57195;
        ok = ok && spec.count(SplitClass::Test) == 5719;
        ok = ok && spec.count(SplitClass::Val) == 5147;
        ok = ok && spec.count(SplitClass::Train) == 46329;

        const SplitSpec again = split_dataset(keys, SplitRatios{}, seed);
        ok = ok && again.assignments == spec.assignments;
        const SplitSpec other = split_dataset(keys, SplitRatios{}, seed + 1);
        ok = ok && other.assignments != spec.assignments;

        const double dt = seconds_since(t0);
        ok = ok && dt < 60.0;
        char detail[128];
        std::snprintf(detail, sizeof(detail), "test=%zu val=%zu train=%zu, %.1fs", spec.count(SplitClass::Test),
                      spec.count(SplitClass::Val), spec.count(SplitClass::Train), dt);
        report(name, ok, detail);
    } catch (const std::exception& e) {
        report(name, false, e.what());
    }
}

// ---------------------------------------------------------------------------
// 2. Slice metrics against brute-force pixel counting.
// ---------------------------------------------------------------------------

void check_metrics_oracle() {
    const char* name = "slice metrics match brute-force counting on 1000 random pairs";
    try {
        SplitMix64 rng(0x5eedf00dull);
        bool ok = true;
        for (int round = 0; round < 1000 && ok; ++round) {
            const int w = 1 + static_cast<int>(rng.next_below(32));
            const int h = 1 + static_cast<int>(rng.next_below(32));
            const double dp = rng.next_double();
            const double dg = rng.next_double();
            Mask2D pred(w, h), gt(w, h);
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    pred.at(x, y) = rng.next_double() < dp ? 1 : 0;
                    gt.at(x, y) = rng.next_double() < dg ? 1 : 0;
                }
            }

            long long tp = 0, fp = 0, fn = 0;
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const bool p = pred.at(x, y) != 0;
                    const bool g = gt.at(x, y) != 0;
                    if (p && g) ++tp;
                    if (p && !g) ++fp;
                    if (!p && g) ++fn;
                }
            }

            const SliceMetrics m = slice_metrics(pred, gt);
            ok = ok && m.tp == tp && m.fp == fp && m.fn == fn;

            const double ep = tp + fp == 0 ? 1.0 : static_cast<double>(tp) / (tp + fp);
            const double er = tp + fn == 0 ? 1.0 : static_cast<double>(tp) / (tp + fn);
            const double ed = 2 * tp + fp + fn == 0 ? 1.0 : 2.0 * tp / (2 * tp + fp + fn);
            ok = ok && std::abs(m.precision - ep) <= 1e-12;
            ok = ok && std::abs(m.recall - er) <= 1e-12;
            ok = ok && std::abs(m.dice - ed) <= 1e-12;
            if (m.precision + m.recall > 0.0) {
                const double harmonic = 2.0 * m.precision * m.recall / (m.precision + m.recall);
                ok = ok && std::abs(m.dice - harmonic) <= 1e-12;
            }
        }
        report(name, ok);
    } catch (const std::exception& e) {
        report(name, false, e.what());
    }
}

// ---------------------------------------------------------------------------
// 3. Greedy suppression against a quadratic reference.
// ---------------------------------------------------------------------------

double reference_iou(const Box& a, const Box& b) {
    const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = (a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

// Repeated max-scan instead of a sort: same order (score desc, index asc),
// different algorithm.
std::vector<std::size_t> reference_nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                                       double thr) {
    const std::size_t n = boxes.size();
    std::vector<char> used(n, 0);
    std::vector<std::size_t> kept;
    for (;;) {
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (!used[i] && (best == n || scores[i] > scores[best])) best = i;
        }
        if (best == n) break;
        used[best] = 1;
        bool suppressed = false;
        for (std::size_t k : kept) {
            if (reference_iou(boxes[k], boxes[best]) > thr) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(best);
    }
    return kept;
}

void check_nms_oracle() {
    const char* name = "greedy suppression matches the quadratic reference on 1000 sets";
    try {
        SplitMix64 rng(0xb0c5e5ull);
        bool ok = true;
        for (int round = 0; round < 1000 && ok; ++round) {
            const std::size_t n = rng.next_below(51);
            std::vector<Box> boxes(n);
            std::vector<double> scores(n);
            for (std::size_t i = 0; i < n; ++i) {
                if (i > 0 && rng.next_double() < 0.10) {
                    boxes[i] = boxes[rng.next_below(i)];  // exact duplicate geometry
                } else {
                    const double x0 = rng.next_double() * 90.0;
                    const double y0 = rng.next_double() * 90.0;
                    boxes[i] = Box{x0, y0, x0 + rng.next_double() * 15.0, y0 + rng.next_double() * 15.0};
                }
                if (i > 0 && rng.next_double() < 0.25) {
                    scores[i] = scores[rng.next_below(i)];  // forced score tie
                } else {
                    scores[i] = rng.next_double();
                }
            }
            for (double thr : {0.3, 0.5, 0.7}) {
                if (nms_keep(boxes, scores, thr) != reference_nms(boxes, scores, thr)) {
                    ok = false;
                    break;
                }
            }
        }
        report(name, ok);
    } catch (const std::exception& e) {
        report(name, false, e.what());
    }
}

// ---------------------------------------------------------------------------
// 4. Pooling: constant preservation, linearity, oversampling agreement.
// ---------------------------------------------------------------------------

// Classic four-weight bilinear with floor/clamp indexing; zero outside the
// sample grid. Structurally different from the production interpolator.
double oracle_bilinear(const Image2D& f, double x, double y) {
    if (x < 0.0 || y < 0.0 || x > f.width - 1.0 || y > f.height - 1.0) return 0.0;
    int ix = static_cast<int>(std::floor(x));
    int iy = static_cast<int>(std::floor(y));
    ix = std::min(ix, f.width - 2);
    iy = std::min(iy, f.height - 2);
    ix = std::max(ix, 0);
    iy = std::max(iy, 0);
    const double fx = x - ix;
    const double fy = y - iy;
    const int jx = std::min(ix + 1, f.width - 1);
    const int jy = std::min(iy + 1, f.height - 1);
    return (1.0 - fx) * (1.0 - fy) * f.at(ix, iy) + fx * (1.0 - fy) * f.at(jx, iy) +
           (1.0 - fx) * fy * f.at(ix, jy) + fx * fy * f.at(jx, jy);
}

Image2D oracle_roi(const Image2D& f, const Box& box, int out_h, int out_w, int s) {
    Image2D out(out_w, out_h);
    const double bw = (box.x1 - box.x0) / out_w;
    const double bh = (box.y1 - box.y0) / out_h;
    for (int i = 0; i < out_h; ++i) {
        for (int j = 0; j < out_w; ++j) {
            double acc = 0.0;
            for (int ky = 0; ky < s; ++ky) {
                for (int kx = 0; kx < s; ++kx) {
                    const double sx = box.x0 + (j + (kx + 0.5) / s) * bw;
                    const double sy = box.y0 + (i + (ky + 0.5) / s) * bh;
                    acc += oracle_bilinear(f, sx, sy);
                }
            }
            out.at(j, i) = static_cast<float>(acc / (static_cast<double>(s) * s));
        }
    }
    return out;
}

void check_roi_align() {
    const char* name = "pooling preserves constants, is linear, and matches 32x32 oversampling";
    try {
        SplitMix64 rng(0xa119ull);
        bool ok = true;

        // Constant fields pool to the constant exactly when every sample
        // lands on the grid.
        for (int round = 0; round < 40 && ok; ++round) {
            const float c = static_cast<float>(rng.next_double());
            Image2D f(13, 9, c);
            const double x0 = rng.next_double() * 10.0;
            const double y0 = rng.next_double() * 6.0;
            const Box box{x0, y0, x0 + 0.5 + rng.next_double() * (12.0 - 0.5 - x0),
                          y0 + 0.5 + rng.next_double() * (8.0 - 0.5 - y0)};
            const int oh = 1 + static_cast<int>(rng.next_below(5));
            const int ow = 1 + static_cast<int>(rng.next_below(5));
            const int s = 1 + static_cast<int>(rng.next_below(7));
            const Image2D out = roi_align(f, box, oh, ow, s);
            for (float v : out.data) ok = ok && v == c;
        }

        // Linearity over random fields, boxes allowed to leave the grid.
        for (int round = 0; round < 100 && ok; ++round) {
            Image2D f(12, 10), g(12, 10);
            for (auto& v : f.data) v = static_cast<float>(rng.next_double());
            for (auto& v : g.data) v = static_cast<float>(rng.next_double());
            const double a = rng.next_double() * 3.0 - 1.5;
            const double b = rng.next_double() * 3.0 - 1.5;
            Image2D combo(12, 10);
            for (std::size_t i = 0; i < combo.data.size(); ++i) {
                combo.data[i] = static_cast<float>(a * f.data[i] + b * g.data[i]);
            }
            const double x0 = rng.next_double() * 18.0 - 4.0;
            const double y0 = rng.next_double() * 16.0 - 4.0;
            const Box box{x0, y0, x0 + 0.5 + rng.next_double() * 9.5, y0 + 0.5 + rng.next_double() * 9.5};
            const Image2D oc = roi_align(combo, box, 3, 3, 2);
            const Image2D of = roi_align(f, box, 3, 3, 2);
            const Image2D og = roi_align(g, box, 3, 3, 2);
            for (std::size_t i = 0; i < oc.data.size(); ++i) {
                ok = ok && std::abs(oc.data[i] - (a * of.data[i] + b * og.data[i])) <= 1e-6;
            }
        }

        // Independent oversampling oracle at the same 32x32 density.
        for (int round = 0; round < 200 && ok; ++round) {
            Image2D f(16, 16);
            for (auto& v : f.data) v = static_cast<float>(rng.next_double());
            const double x0 = rng.next_double() * 15.0 - 2.0;
            const double y0 = rng.next_double() * 15.0 - 2.0;
            const Box box{x0, y0, x0 + 0.5 + rng.next_double() * 5.5, y0 + 0.5 + rng.next_double() * 5.5};
            const int oh = 1 + static_cast<int>(rng.next_below(6));
            const int ow = 1 + static_cast<int>(rng.next_below(6));
            const Image2D got = roi_align(f, box, oh, ow, 32);
            const Image2D want = oracle_roi(f, box, oh, ow, 32);
            for (std::size_t i = 0; i < got.data.size(); ++i) {
                ok = ok && std::abs(got.data[i] - want.data[i]) <= 1e-3;
            }
        }
        report(name, ok);
    } catch (const std::exception& e) {
        report(name, false, e.what());
    }
}

// ---------------------------------------------------------------------------
// 5. Round-trips: run-length masks and raw volumes, bit for bit.
// ---------------------------------------------------------------------------

void check_round_trips() {
    const char* name = "RLE and raw-volume round-trips are bit-exact over 1000 cases";
    try {
        SplitMix64 rng(0x0ff1ceull);
        bool ok = true;

        for (int round = 0; round < 1000 && ok; ++round) {
            const int w = 1 + static_cast<int>(rng.next_below(32));
            const int h = 1 + static_cast<int>(rng.next_below(32));
            const double density = rng.next_double();
            Mask2D mask(w, h);
            for (auto& v : mask.data) v = rng.next_double() < density ? 1 : 0;
            const std::vector<long> counts = rle_encode(mask);
            ok = ok && rle_decode(counts, h, w) == mask;
            long total = 0;
            for (std::size_t i = 0; i < counts.size(); ++i) {
                ok = ok && counts[i] >= 0 && (i == 0 || counts[i] > 0);
                total += counts[i];
            }
            ok = ok && total == static_cast<long>(w) * h;
        }

        const auto dir = scratch_dir("raw");
        const fs::path path = dir / "cycle.raw";
        const float specials[] = {0.0f, -0.0f, 1.0f, 0.1f, 1e-30f, 1e-42f, 3.4e38f, 1.17549435e-38f};
        const Modality mods[] = {Modality::T1, Modality::T1GD, Modality::T2, Modality::FLAIR, Modality::LABEL,
                                 Modality::SUBTRACTION};
        for (int round = 0; round < 1000 && ok; ++round) {
            const int w = 1 + static_cast<int>(rng.next_below(6));
            const int h = 1 + static_cast<int>(rng.next_below(6));
            const int d = 1 + static_cast<int>(rng.next_below(6));
            Volume v(w, h, d, mods[rng.next_below(6)], "cycle_" + std::to_string(round));
            for (auto& x : v.voxels) {
                x = rng.next_double() < 0.15 ? specials[rng.next_below(8)]
                                             : static_cast<float>(rng.next_double() * 2.0 - 1.0);
            }
            write_raw(v, path);
            const Volume back = read_raw(path);
            ok = ok && back.same_shape(v) && back.modality == v.modality;
            ok = ok && std::memcmp(back.voxels.data(), v.voxels.data(), v.voxels.size() * sizeof(float)) == 0;
        }
        fs::remove_all(dir);
        report(name, ok);
    } catch (const std::exception& e) {
        report(name, false, e.what());
    }
}

// ---------------------------------------------------------------------------
// 6. Determinism across thread counts on the full pipeline.
// ---------------------------------------------------------------------------

void run_full_pipeline(const PipelineConfig& cfg) {
    run_phantom(cfg);
    run_convert(cfg);
    run_subtract(cfg);
    run_slice(cfg);
    run_split(cfg);
    run_predict(cfg, "all");
    run_fuse(cfg);
    run_evaluate(cfg, "all", "fused");
}

void check_thread_determinism() {
    const char* name = "pipeline outputs are byte-identical for 1 and 8 threads";
    try {
        const auto dir_a = scratch_dir("thr1");
        const auto dir_b = scratch_dir("thr8");
        PipelineConfig a;
        a.dataset_root = dir_a / "data";
        a.output_root = dir_a / "out";
        a.threads = 1;
        PipelineConfig b = a;
        b.dataset_root = dir_b / "data";
        b.output_root = dir_b / "out";
        b.threads = 8;

        run_full_pipeline(a);
        run_full_pipeline(b);

        const Layout la(a.output_root), lb(b.output_root);
        bool ok = true;
        ok = ok && slurp(la.slice_index()) == slurp(lb.slice_index());
        ok = ok && slurp(la.split_manifest()) == slurp(lb.split_manifest());
        for (StreamId s : {StreamId::T1Stream, StreamId::T2Stream, StreamId::Fused}) {
            ok = ok && slurp(la.prediction_file(s, false)) == slurp(lb.prediction_file(s, false));
        }
        ok = ok && slurp(la.report_file("fused")) == slurp(lb.report_file("fused"));
        fs::remove_all(dir_a);
        fs::remove_all(dir_b);
        report(name, ok);
    } catch (const std::exception& e) {
        report(name, false, e.what());
    }
}

// ---------------------------------------------------------------------------
// 7 and 8. Segmentation quality gates on the generated cohort.
// ---------------------------------------------------------------------------

double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

Mask2D top_mask_of(const PredictionSet& set, int w, int h) {
    if (auto top = select_top_instance(set.instances)) return top->mask;
    return Mask2D(w, h);
}

void check_quality_gates() {
    const char* name7 = "subtraction streams beat raw enhanced slices by at least 0.10 dice";
    const char* name8 = "fusion is idempotent, empty-neutral, and within 0.02 of the best stream";
    try {
        const auto t0 = Clock::now();
        const PhantomParams pp;  // 64x64x24
        const SegmenterParams sp;
        const int n_cases = 24;
        const std::uint64_t seed = 4242;
        const int W = pp.width, H = pp.height;

        const FusionStrategy fuse_max{FusionKind::MaxScore, 0.5};
        const FusionStrategy fuse_union{FusionKind::MaskUnion, 0.5};
        const FusionStrategy fuse_vote{FusionKind::ScoreWeightedVote, 0.5};

        std::vector<double> sub_d, raw_d, t1_d, t2_d, fused_d;
        bool props_ok = true;

        for (int ci = 0; ci < n_cases; ++ci) {
            const std::string id = case_name(ci);
            const CaseVolumes c = make_phantom_case(pp, id, seed);
            CaseVolumes norm;
            norm.case_id = id;
            norm.t1 = normalize_intensity(*c.t1);
            norm.t1gd = normalize_intensity(*c.t1gd);
            norm.t2 = normalize_intensity(*c.t2);
            norm.flair = normalize_intensity(*c.flair);
            norm.label = c.label;
            const auto [s1, s2] = build_streams(norm);
            const Volume bin = binarize_labels(*c.label, {1, 2, 4});

            const auto sub1 = slice_volume(s1.volume, bin, StreamId::T1Stream);
            const auto sub2 = slice_volume(s2.volume, bin, StreamId::T2Stream);
            const auto raw1 = slice_volume(*norm.t1gd, bin, StreamId::T1Stream);
            const auto raw2 = slice_volume(*norm.flair, bin, StreamId::T2Stream);

            for (int z = 0; z < pp.depth; ++z) {
                const Mask2D& gt = sub1[static_cast<std::size_t>(z)].gt_mask;
                const PredictionSet p1 = baseline_segment(sub1[static_cast<std::size_t>(z)], sp);
                const PredictionSet p2 = baseline_segment(sub2[static_cast<std::size_t>(z)], sp);
                const Mask2D m1 = top_mask_of(p1, W, H);
                const Mask2D m2 = top_mask_of(p2, W, H);
                const double d1 = slice_metrics(m1, gt).dice;
                const double d2 = slice_metrics(m2, gt).dice;
                t1_d.push_back(d1);
                t2_d.push_back(d2);
                sub_d.push_back(d1);
                sub_d.push_back(d2);

                const PredictionSet q1 = baseline_segment(raw1[static_cast<std::size_t>(z)], sp);
                const PredictionSet q2 = baseline_segment(raw2[static_cast<std::size_t>(z)], sp);
                raw_d.push_back(slice_metrics(top_mask_of(q1, W, H), gt).dice);
                raw_d.push_back(slice_metrics(top_mask_of(q2, W, H), gt).dice);

                const Mask2D fused = fuse(p1, p2, fuse_max, H, W);
                fused_d.push_back(slice_metrics(fused, gt).dice);

                // Self-fusion must reproduce the stream's own top mask and an
                // empty partner must be neutral. These hold for the
                // top-instance strategies; the vote divides by total score
                // mass, so only its all-empty case is pinned here.
                PredictionSet mirror = p1;
                mirror.stream_id = StreamId::T2Stream;
                PredictionSet empty1, empty2;
                empty1.case_id = empty2.case_id = p1.case_id;
                empty1.slice_index = empty2.slice_index = p1.slice_index;
                empty1.stream_id = StreamId::T1Stream;
                empty2.stream_id = StreamId::T2Stream;
                for (const auto& strat : {fuse_max, fuse_union}) {
                    props_ok = props_ok && fuse(p1, mirror, strat, H, W) == m1;
                    props_ok = props_ok && fuse(p1, empty2, strat, H, W) == m1;
                    props_ok = props_ok && fuse(empty1, p2, strat, H, W) == m2;
                }
                for (const auto& strat : {fuse_max, fuse_union, fuse_vote}) {
                    props_ok = props_ok && fuse(empty1, empty2, strat, H, W) == Mask2D(W, H);
                }

                // Every strategy's output stays inside the union of inputs.
                Mask2D all_union(W, H);
                for (const auto* set : {&p1, &p2}) {
                    for (const auto& inst : set->instances) {
                        for (std::size_t i = 0; i < all_union.data.size(); ++i) {
                            all_union.data[i] |= inst.mask.data[i];
                        }
                    }
                }
                for (const auto& strat : {fuse_max, fuse_union, fuse_vote}) {
                    const Mask2D f = fuse(p1, p2, strat, H, W);
                    for (std::size_t i = 0; i < f.data.size(); ++i) {
                        props_ok = props_ok && !(f.data[i] && !all_union.data[i]);
                    }
                }
            }
        }

        const double margin = mean_of(sub_d) - mean_of(raw_d);
        const double dt = seconds_since(t0);
        char detail7[160];
        std::snprintf(detail7, sizeof(detail7), "subtraction=%.4f raw=%.4f margin=%+.4f, %.1fs", mean_of(sub_d),
                      mean_of(raw_d), margin, dt);
        report(name7, margin >= 0.10 && dt < 300.0, detail7);

        const double best_stream = std::max(mean_of(t1_d), mean_of(t2_d));
        const double fused_mean = mean_of(fused_d);
        char detail8[160];
        std::snprintf(detail8, sizeof(detail8), "fused=%.4f best stream=%.4f, properties %s", fused_mean,
                      best_stream, props_ok ? "hold" : "violated");
        report(name8, props_ok && fused_mean >= best_stream - 0.02, detail8);
    } catch (const std::exception& e) {
        report(name7, false, e.what());
        report(name8, false, e.what());
    }
}

}  // namespace

int main() {
    log::set_sink([](log::Level, const std::string&) {});  // keep criterion lines clean
    check_split_scale();
    check_metrics_oracle();
    check_nms_oracle();
    check_roi_align();
    check_round_trips();
    check_thread_determinism();
    check_quality_gates();
    return g_failures == 0 ? 0 : 1;
}
