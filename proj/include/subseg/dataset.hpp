#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"

namespace subseg {

struct SliceSample {
    std::string case_id;
    int slice_index = 0;
    StreamId stream_id = StreamId::T1Stream;
    Image2D image;
    Mask2D gt_mask;
};

// ---------------------------------------------------------------------------
// Slicing and label binarization.
// ---------------------------------------------------------------------------

// One sample per depth plane; plane k is copied bit-exactly.
inline std::vector<SliceSample> slice_volume(const Volume& stream, const Volume& binary_label, StreamId stream_id) {
    if (!stream.same_shape(binary_label)) throw ShapeError("slice: stream and label dimensions differ");
    std::vector<SliceSample> out;
    out.reserve(static_cast<std::size_t>(stream.depth));
    for (int z = 0; z < stream.depth; ++z) {
        SliceSample s;
        s.case_id = stream.case_id;
        s.slice_index = z;
        s.stream_id = stream_id;
        s.image = Image2D(stream.width, stream.height);
        s.gt_mask = Mask2D(stream.width, stream.height);
        for (int y = 0; y < stream.height; ++y) {
            for (int x = 0; x < stream.width; ++x) {
                s.image.at(x, y) = stream.at(x, y, z);
                const float g = binary_label.at(x, y, z);
                if (g != 0.0f && g != 1.0f) throw DomainError("slice: label volume is not binary");
                s.gt_mask.at(x, y) = g != 0.0f ? 1 : 0;
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

// Voxel becomes 1 iff its integer code is in positive_set; anything else 0.
inline Volume binarize_labels(const Volume& label, const std::set<int>& positive_set) {
    Volume out(label.width, label.height, label.depth, Modality::LABEL, label.case_id);
    for (std::size_t i = 0; i < label.size(); ++i) {
        const long code = std::lround(label.voxels[i]);
        out.voxels[i] = positive_set.count(static_cast<int>(code)) ? 1.0f : 0.0f;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splitting. Keys are sorted, shuffled with a seeded Fisher-Yates, then cut:
// test takes floor(n*test_ratio), val takes floor(remaining*val_share), train
// the rest. The tiny epsilon guards the floor against FP dust only.
// ---------------------------------------------------------------------------

enum class SplitClass { Train, Val, Test };

inline const char* to_string(SplitClass c) {
    switch (c) {
        case SplitClass::Train: return "TRAIN";
        case SplitClass::Val: return "VAL";
        case SplitClass::Test: return "TEST";
    }
    throw ValidationError("unknown split class");
}

inline SplitClass parse_split_class(const std::string& s) {
    if (s == "TRAIN") return SplitClass::Train;
    if (s == "VAL") return SplitClass::Val;
    if (s == "TEST") return SplitClass::Test;
    throw ParseError("unknown split class: " + s);
}

struct SampleKey {
    std::string case_id;
    int slice_index = 0;

    auto operator<=>(const SampleKey&) const = default;
};

struct SplitRatios {
    double train = 0.81;
    double val = 0.09;
    double test = 0.10;
};

struct SplitSpec {
    std::uint64_t seed = 0;
    std::map<SampleKey, SplitClass> assignments;

    std::size_t count(SplitClass c) const {
        std::size_t n = 0;
        for (const auto& [k, v] : assignments) {
            if (v == c) ++n;
        }
        return n;
    }
};

namespace detail {

inline void fisher_yates(std::vector<std::size_t>& order, SplitMix64& rng) {
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = rng.next_below(i);
        std::swap(order[i - 1], order[j]);
    }
}

inline std::pair<std::size_t, std::size_t> split_counts(std::size_t n, const SplitRatios& r) {
    const auto test_n = static_cast<std::size_t>(std::floor(static_cast<double>(n) * r.test + 1e-9));
    const double val_share = r.val / (r.train + r.val);
    const auto val_n = static_cast<std::size_t>(std::floor(static_cast<double>(n - test_n) * val_share + 1e-9));
    return {test_n, val_n};
}

}  // namespace detail

inline SplitSpec split_dataset(std::vector<SampleKey> keys, const SplitRatios& ratios, std::uint64_t seed) {
    if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
        throw ValidationError("split ratios must sum to 1");
    }
    if (ratios.train < 0.0 || ratios.val < 0.0 || ratios.test < 0.0) {
        throw ValidationError("split ratios must be non-negative");
    }
    if (keys.empty()) throw EmptySplitError("no sample keys to split");

    std::sort(keys.begin(), keys.end());
    if (std::adjacent_find(keys.begin(), keys.end()) != keys.end()) {
        throw ValidationError("duplicate sample keys in split input");
    }

    std::vector<std::size_t> order(keys.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SplitMix64 rng(seed);
    detail::fisher_yates(order, rng);

    const auto [test_n, val_n] = detail::split_counts(keys.size(), ratios);
    SplitSpec spec;
    spec.seed = seed;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        SplitClass c = SplitClass::Train;
        if (pos < test_n) {
            c = SplitClass::Test;
        } else if (pos < test_n + val_n) {
            c = SplitClass::Val;
        }
        spec.assignments.emplace(keys[order[pos]], c);
    }
    return spec;
}

// Case-level variant: whole cases are assigned to one split, so no case leaks
// across partitions. The per-case shuffle and cut rule match split_dataset.
inline SplitSpec split_dataset_grouped(std::vector<SampleKey> keys, const SplitRatios& ratios, std::uint64_t seed) {
    if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
        throw ValidationError("split ratios must sum to 1");
    }
    if (ratios.train < 0.0 || ratios.val < 0.0 || ratios.test < 0.0) {
        throw ValidationError("split ratios must be non-negative");
    }
    if (keys.empty()) throw EmptySplitError("no sample keys to split");

    std::sort(keys.begin(), keys.end());
    if (std::adjacent_find(keys.begin(), keys.end()) != keys.end()) {
        throw ValidationError("duplicate sample keys in split input");
    }

    std::vector<std::string> cases;
    for (const auto& k : keys) {
        if (cases.empty() || cases.back() != k.case_id) cases.push_back(k.case_id);
    }
    std::vector<std::size_t> order(cases.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SplitMix64 rng(seed);
    detail::fisher_yates(order, rng);

    const auto [test_n, val_n] = detail::split_counts(cases.size(), ratios);
    std::map<std::string, SplitClass> by_case;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        SplitClass c = SplitClass::Train;
        if (pos < test_n) {
            c = SplitClass::Test;
        } else if (pos < test_n + val_n) {
            c = SplitClass::Val;
        }
        by_case.emplace(cases[order[pos]], c);
    }

    SplitSpec spec;
    spec.seed = seed;
    for (const auto& k : keys) spec.assignments.emplace(k, by_case.at(k.case_id));
    return spec;
}

// ---------------------------------------------------------------------------
// Split manifest: header "SUBSEGSPLIT v1 seed=<seed>" then one
// "<case_id>,<slice_index>,<TRAIN|VAL|TEST>" line per key, sorted by key.
// ---------------------------------------------------------------------------

inline void write_split_manifest(const SplitSpec& spec, std::ostream& out) {
    out << "SUBSEGSPLIT v1 seed=" << spec.seed << '\n';
    for (const auto& [key, cls] : spec.assignments) {
        out << key.case_id << ',' << key.slice_index << ',' << to_string(cls) << '\n';
    }
}

inline void write_split_manifest(const SplitSpec& spec, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open file for writing: " + path.string());
    write_split_manifest(spec, out);
    if (!out) throw DataError("write failed: " + path.string());
}

inline SplitSpec read_split_manifest(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty split manifest");
    std::istringstream header(line);
    std::string magic, version, seed_field;
    if (!(header >> magic >> version >> seed_field) || magic != "SUBSEGSPLIT" || version != "v1" ||
        seed_field.rfind("seed=", 0) != 0) {
        throw FormatError("bad split manifest header: " + line);
    }
    SplitSpec spec;
    try {
        spec.seed = std::stoull(seed_field.substr(5));
    } catch (const std::exception&) {
        throw ParseError("bad seed in split manifest header: " + seed_field);
    }

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = line.rfind(',');
        if (c1 == std::string::npos || c2 == c1) {
            throw ParseError("split manifest line " + std::to_string(line_no) + ": expected 3 fields");
        }
        SampleKey key;
        key.case_id = line.substr(0, c1);
        try {
            key.slice_index = std::stoi(line.substr(c1 + 1, c2 - c1 - 1));
        } catch (const std::exception&) {
            throw ParseError("split manifest line " + std::to_string(line_no) + ": bad slice index");
        }
        const SplitClass cls = parse_split_class(line.substr(c2 + 1));
        if (!spec.assignments.emplace(key, cls).second) {
            throw ParseError("split manifest line " + std::to_string(line_no) + ": duplicate key");
        }
    }
    return spec;
}

inline SplitSpec read_split_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path.string());
    return read_split_manifest(in);
}

// ---------------------------------------------------------------------------
// Augmentation. Parameters for a sample are drawn from a counter-based
// generator keyed by (seed, case_id, slice_index, ordinal), so results do not
// depend on processing order or thread count. The geometric transform is
// flips (exact index permutations) followed by rotation about the image
// center plus translation; images resample bilinearly, masks nearest, and
// anything mapped from outside the source grid is 0.
// ---------------------------------------------------------------------------

struct AugmentSpec {
    double hflip_prob = 0.5;
    double vflip_prob = 0.5;
    double rotation_lo_deg = -45.0;
    double rotation_hi_deg = 45.0;
    double translate_lo_frac = -0.1;
    double translate_hi_frac = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        if (hflip_prob < 0.0 || hflip_prob > 1.0 || vflip_prob < 0.0 || vflip_prob > 1.0) {
            throw ValidationError("flip probabilities must be in [0,1]");
        }
        if (rotation_lo_deg < -180.0 || rotation_hi_deg > 180.0 || rotation_lo_deg > rotation_hi_deg) {
            throw ValidationError("rotation range must be ordered and within [-180,180]");
        }
        if (translate_lo_frac > translate_hi_frac) {
            throw ValidationError("translation range must be ordered");
        }
    }
};

namespace detail {

inline double snap_trig(double v) {
    for (double target : {-1.0, 0.0, 1.0}) {
        if (std::abs(v - target) < 1e-12) return target;
    }
    return v;
}

}  // namespace detail

// Deterministic transform used by augment_sample; exposed so exact-geometry
// behavior (pure flips, quarter turns) can be exercised directly.
inline SliceSample transform_sample(const SliceSample& in, bool hflip, bool vflip, double angle_deg, double tx_frac,
                                    double ty_frac) {
    const int W = in.image.width;
    const int H = in.image.height;

    SliceSample flipped = in;
    if (hflip || vflip) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const int sx = hflip ? W - 1 - x : x;
                const int sy = vflip ? H - 1 - y : y;
                flipped.image.at(x, y) = in.image.at(sx, sy);
                flipped.gt_mask.at(x, y) = in.gt_mask.at(sx, sy);
            }
        }
    }
    if (angle_deg == 0.0 && tx_frac == 0.0 && ty_frac == 0.0) return flipped;

    const double rad = angle_deg * std::numbers::pi / 180.0;
    const double c = detail::snap_trig(std::cos(rad));
    const double s = detail::snap_trig(std::sin(rad));
    const double cx = (W - 1) / 2.0;
    const double cy = (H - 1) / 2.0;
    const double tx = tx_frac * W;
    const double ty = ty_frac * H;

    SliceSample out = flipped;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            // Inverse of q = R(p - c) + c + t.
            const double qx = x - cx - tx;
            const double qy = y - cy - ty;
            const double px = c * qx + s * qy + cx;
            const double py = -s * qx + c * qy + cy;
            out.image.at(x, y) = detail::bilinear_or_zero(flipped.image, px, py);
            out.gt_mask.at(x, y) = detail::nearest_or_zero(flipped.gt_mask, px, py);
        }
    }
    return out;
}

inline SliceSample augment_sample(const SliceSample& sample, const AugmentSpec& spec, std::uint64_t sample_ordinal) {
    spec.validate();
    std::uint64_t key = fnv1a64(spec.seed);
    key = fnv1a64(sample.case_id, key);
    key = fnv1a64(static_cast<std::uint64_t>(sample.slice_index), key);
    key = fnv1a64(sample_ordinal, key);
    SplitMix64 rng(key);

    const bool hflip = rng.next_double() < spec.hflip_prob;
    const bool vflip = rng.next_double() < spec.vflip_prob;
    const double angle = spec.rotation_lo_deg + (spec.rotation_hi_deg - spec.rotation_lo_deg) * rng.next_double();
    const double tx = spec.translate_lo_frac + (spec.translate_hi_frac - spec.translate_lo_frac) * rng.next_double();
    const double ty = spec.translate_lo_frac + (spec.translate_hi_frac - spec.translate_lo_frac) * rng.next_double();
    return transform_sample(sample, hflip, vflip, angle, tx, ty);
}

}  // namespace subseg
