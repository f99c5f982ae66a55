#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace subseg {

// ---------------------------------------------------------------------------
// Errors. ValidationError covers bad arguments and configuration (exit code 1
// at the CLI boundary); DataError covers malformed or inconsistent input data
// (exit code 2). Everything thrown by this library derives from Error.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct ConfigError : ValidationError {
    using ValidationError::ValidationError;
};

struct EmptySplitError : ValidationError {
    using ValidationError::ValidationError;
};

struct FormatError : DataError {
    using DataError::DataError;
};

struct UnsupportedTypeError : DataError {
    using DataError::DataError;
};

struct TruncationError : DataError {
    using DataError::DataError;
};

struct RankError : DataError {
    using DataError::DataError;
};

struct ShapeError : DataError {
    using DataError::DataError;
};

struct DomainError : DataError {
    using DataError::DataError;
};

struct MissingModalityError : DataError {
    using DataError::DataError;
};

struct ParseError : DataError {
    using DataError::DataError;
};

struct LengthError : DataError {
    using DataError::DataError;
};

struct FusionError : DataError {
    using DataError::DataError;
};

struct IncomparableRunsError : DataError {
    using DataError::DataError;
};

struct EmptyAggregateError : DataError {
    using DataError::DataError;
};

// ---------------------------------------------------------------------------
// Modalities and streams.
// ---------------------------------------------------------------------------

enum class Modality { T1, T1GD, T2, FLAIR, LABEL, SUBTRACTION };

inline const char* to_string(Modality m) {
    switch (m) {
        case Modality::T1: return "t1";
        case Modality::T1GD: return "t1gd";
        case Modality::T2: return "t2";
        case Modality::FLAIR: return "flair";
        case Modality::LABEL: return "label";
        case Modality::SUBTRACTION: return "subtraction";
    }
    throw ValidationError("unknown modality code");
}

inline Modality parse_modality(const std::string& s) {
    if (s == "t1") return Modality::T1;
    if (s == "t1gd") return Modality::T1GD;
    if (s == "t2") return Modality::T2;
    if (s == "flair") return Modality::FLAIR;
    if (s == "label") return Modality::LABEL;
    if (s == "subtraction") return Modality::SUBTRACTION;
    throw ParseError("unknown modality: " + s);
}

enum class StreamId { T1Stream, T2Stream, Fused };

inline const char* to_string(StreamId s) {
    switch (s) {
        case StreamId::T1Stream: return "t1";
        case StreamId::T2Stream: return "t2";
        case StreamId::Fused: return "fused";
    }
    throw ValidationError("unknown stream code");
}

inline StreamId parse_stream(const std::string& s) {
    if (s == "t1") return StreamId::T1Stream;
    if (s == "t2") return StreamId::T2Stream;
    if (s == "fused") return StreamId::Fused;
    throw ParseError("unknown stream: " + s);
}

// ---------------------------------------------------------------------------
// Grids and volumes. Grid2D is row-major (index = x + width*y). Volume voxels
// are x-fastest, then y, then z (index = x + width*(y + height*z)); the
// voxel count always equals width*height*depth.
// ---------------------------------------------------------------------------

template <typename T>
struct Grid2D {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Grid2D() = default;
    Grid2D(int w, int h, T fill = T{})
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {
        if (w < 0 || h < 0) throw ValidationError("negative grid extent");
    }

    T& at(int x, int y) { return data[static_cast<std::size_t>(x) + static_cast<std::size_t>(width) * y]; }
    const T& at(int x, int y) const {
        return data[static_cast<std::size_t>(x) + static_cast<std::size_t>(width) * y];
    }
    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    bool operator==(const Grid2D&) const = default;
};

using Image2D = Grid2D<float>;
using Mask2D = Grid2D<std::uint8_t>;

struct Volume {
    int width = 0;
    int height = 0;
    int depth = 0;
    Modality modality = Modality::T1;
    std::string case_id;
    std::vector<float> voxels;

    Volume() = default;
    Volume(int w, int h, int d, Modality m, std::string id = {})
        : width(w), height(h), depth(d), modality(m), case_id(std::move(id)),
          voxels(static_cast<std::size_t>(w) * h * d, 0.0f) {
        if (w <= 0 || h <= 0 || d <= 0) throw ValidationError("volume extents must be positive");
    }

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(width) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(height) * z);
    }
    float& at(int x, int y, int z) { return voxels[index(x, y, z)]; }
    float at(int x, int y, int z) const { return voxels[index(x, y, z)]; }
    std::size_t size() const { return voxels.size(); }

    bool same_shape(const Volume& o) const {
        return width == o.width && height == o.height && depth == o.depth;
    }
};

// ---------------------------------------------------------------------------
// Interpolation. Grids are point samples at integer coordinates; queries
// outside [0, W-1] x [0, H-1] return 0. The algebraic bilinear form keeps
// constants and linear ramps exact.
// ---------------------------------------------------------------------------

namespace detail {

inline float bilinear_or_zero(const Image2D& img, double x, double y) {
    if (x < 0.0 || y < 0.0 || x > img.width - 1.0 || y > img.height - 1.0) return 0.0f;
    const int x0 = static_cast<int>(x);
    const int y0 = static_cast<int>(y);
    const int x1 = x0 + 1 < img.width ? x0 + 1 : x0;
    const int y1 = y0 + 1 < img.height ? y0 + 1 : y0;
    const double fx = x - x0;
    const double fy = y - y0;
    const double v00 = img.at(x0, y0);
    const double v10 = img.at(x1, y0);
    const double v01 = img.at(x0, y1);
    const double v11 = img.at(x1, y1);
    return static_cast<float>(v00 + fx * (v10 - v00) + fy * (v01 - v00) + fx * fy * (v00 + v11 - v10 - v01));
}

inline std::uint8_t nearest_or_zero(const Mask2D& m, double x, double y) {
    const long xi = std::lround(x);
    const long yi = std::lround(y);
    if (xi < 0 || yi < 0 || xi >= m.width || yi >= m.height) return 0;
    return m.at(static_cast<int>(xi), static_cast<int>(yi));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Deterministic randomness. SplitMix64 plus FNV-1a keying gives streams that
// are reproducible across platforms and standard libraries; nothing here
// depends on implementation-defined distribution code.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

inline std::uint64_t fnv1a64(std::uint64_t v, std::uint64_t h = 0xcbf29ce484222325ull) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    return fnv1a64(b, 8, h);
}

struct SplitMix64 {
    std::uint64_t state;

    explicit SplitMix64(std::uint64_t seed) : state(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Unbiased draw in [0, n) by rejection.
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0) throw ValidationError("next_below requires n > 0");
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t v = next();
        while (v >= limit) v = next();
        return v % n;
    }

    // Uniform in [0, 1) with 53 bits of precision.
    double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double next_range(double lo, double hi) { return lo + (hi - lo) * next_double(); }
};

// ---------------------------------------------------------------------------
// Percentile with linear interpolation at rank pct/100 * (n-1). Input must be
// sorted ascending and non-empty.
// ---------------------------------------------------------------------------

inline double percentile_sorted(const std::vector<float>& sorted, double pct) {
    if (sorted.empty()) throw ValidationError("percentile of empty set");
    if (pct < 0.0 || pct > 100.0) throw ValidationError("percentile out of [0,100]");
    const double rank = pct / 100.0 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(rank);
    const auto hi = lo + 1 < sorted.size() ? lo + 1 : lo;
    const double frac = rank - static_cast<double>(lo);
    return static_cast<double>(sorted[lo]) + frac * (static_cast<double>(sorted[hi]) - static_cast<double>(sorted[lo]));
}

}  // namespace subseg
