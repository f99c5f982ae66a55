#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "log.hpp"

namespace subseg {

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

inline bool is_gzip(const std::vector<unsigned char>& bytes) {
    return bytes.size() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B;
}

inline std::vector<unsigned char> gunzip(const std::vector<unsigned char>& bytes) {
    z_stream strm{};
    if (inflateInit2(&strm, 16 + MAX_WBITS) != Z_OK) throw DataError("zlib initialization failed");
    std::vector<unsigned char> out;
    out.reserve(bytes.size() * 4);
    unsigned char buf[1 << 16];
    strm.next_in = const_cast<unsigned char*>(bytes.data());
    strm.avail_in = static_cast<uInt>(bytes.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        strm.next_out = buf;
        strm.avail_out = sizeof(buf);
        rc = inflate(&strm, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&strm);
            throw TruncationError("corrupt gzip stream");
        }
        out.insert(out.end(), buf, buf + (sizeof(buf) - strm.avail_out));
        if (rc == Z_OK && strm.avail_in == 0 && strm.avail_out != 0) {
            inflateEnd(&strm);
            throw TruncationError("gzip stream ended early");
        }
    }
    inflateEnd(&strm);
    return out;
}

template <typename T>
T read_le(const unsigned char* p, bool swap) {
    unsigned char b[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = swap ? p[sizeof(T) - 1 - i] : p[i];
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// NIfTI-1 subset. Single-file .nii or .nii.gz, rank-3 only, scalar datatypes
// uint8 / int16 / int32 / float32. Byte order is inferred from sizeof_hdr.
// ---------------------------------------------------------------------------

struct VolumeHeader {
    int dims[8] = {0};
    int datatype_code = 0;
    int bitpix = 0;
    long vox_offset = 0;
    float scl_slope = 0.0f;
    float scl_inter = 0.0f;
    bool big_endian = false;
};

namespace detail {

inline VolumeHeader parse_nifti_header(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 352) throw TruncationError("file shorter than a NIfTI-1 header");
    const unsigned char* p = bytes.data();

    bool swap = false;
    std::int32_t sizeof_hdr = read_le<std::int32_t>(p, false);
    if (sizeof_hdr != 348) {
        sizeof_hdr = read_le<std::int32_t>(p, true);
        if (sizeof_hdr != 348) throw FormatError("bad sizeof_hdr, not a NIfTI-1 file");
        swap = true;
    }
    if (std::memcmp(p + 344, "n+1\0", 4) != 0) throw FormatError("missing n+1 magic");

    VolumeHeader h;
    h.big_endian = swap;
    for (int i = 0; i < 8; ++i) h.dims[i] = read_le<std::int16_t>(p + 40 + 2 * i, swap);
    h.datatype_code = read_le<std::int16_t>(p + 70, swap);
    h.bitpix = read_le<std::int16_t>(p + 72, swap);
    h.vox_offset = static_cast<long>(read_le<float>(p + 108, swap));
    h.scl_slope = read_le<float>(p + 112, swap);
    h.scl_inter = read_le<float>(p + 116, swap);

    if (h.dims[0] != 3) throw RankError("expected rank-3 volume, got rank " + std::to_string(h.dims[0]));
    for (int i = 1; i <= 3; ++i) {
        if (h.dims[i] <= 0) throw FormatError("non-positive extent in dim[" + std::to_string(i) + "]");
    }
    const int expected_bitpix = [&] {
        switch (h.datatype_code) {
            case 2: return 8;
            case 4: return 16;
            case 8: return 32;
            case 16: return 32;
            default:
                throw UnsupportedTypeError("unsupported datatype code " + std::to_string(h.datatype_code));
        }
    }();
    if (h.bitpix != expected_bitpix) {
        throw FormatError("bitpix " + std::to_string(h.bitpix) + " inconsistent with datatype " +
                          std::to_string(h.datatype_code));
    }
    if (h.vox_offset < 352) throw FormatError("vox_offset below header size");
    return h;
}

}  // namespace detail

inline Volume read_nifti(const std::filesystem::path& path, Modality modality) {
    std::vector<unsigned char> bytes = detail::read_file_bytes(path);
    if (detail::is_gzip(bytes)) bytes = detail::gunzip(bytes);
    const VolumeHeader h = detail::parse_nifti_header(bytes);

    const std::size_t count =
        static_cast<std::size_t>(h.dims[1]) * static_cast<std::size_t>(h.dims[2]) * static_cast<std::size_t>(h.dims[3]);
    const std::size_t payload = count * static_cast<std::size_t>(h.bitpix / 8);
    if (bytes.size() < static_cast<std::size_t>(h.vox_offset) + payload) {
        throw TruncationError("data section truncated: need " + std::to_string(payload) + " bytes");
    }

    Volume v(h.dims[1], h.dims[2], h.dims[3], modality, path.stem().string());
    const unsigned char* d = bytes.data() + h.vox_offset;
    const bool swap = h.big_endian;
    const bool identity = h.scl_slope == 0.0f;
    for (std::size_t i = 0; i < count; ++i) {
        float raw;
        switch (h.datatype_code) {
            case 2: raw = static_cast<float>(d[i]); break;
            case 4: raw = static_cast<float>(detail::read_le<std::int16_t>(d + 2 * i, swap)); break;
            case 8: raw = static_cast<float>(detail::read_le<std::int32_t>(d + 4 * i, swap)); break;
            default: raw = detail::read_le<float>(d + 4 * i, swap); break;
        }
        const float value = identity ? raw : h.scl_slope * raw + h.scl_inter;
        if (!std::isfinite(value)) throw DomainError("non-finite voxel at index " + std::to_string(i));
        v.voxels[i] = value;
    }

    if (modality == Modality::LABEL) {
        for (std::size_t i = 0; i < count; ++i) {
            const float x = v.voxels[i];
            if (x < 0.0f || x > 255.0f || x != std::floor(x)) {
                throw DomainError("label volume has non-integer or out-of-range value " + std::to_string(x));
            }
        }
    }
    return v;
}

// Minimal single-file NIfTI-1 writer: rank-3 float32, little-endian, no
// scaling, data at offset 352. Counterpart of the reader subset above.
inline void write_nifti(const Volume& v, const std::filesystem::path& path) {
    unsigned char header[352] = {0};
    auto put_i32 = [&header](int offset, std::int32_t value) {
        for (int i = 0; i < 4; ++i) header[offset + i] = static_cast<unsigned char>(value >> (8 * i));
    };
    auto put_i16 = [&header](int offset, std::int16_t value) {
        header[offset] = static_cast<unsigned char>(value);
        header[offset + 1] = static_cast<unsigned char>(value >> 8);
    };
    auto put_f32 = [&header](int offset, float value) {
        std::uint32_t bits;
        std::memcpy(&bits, &value, 4);
        for (int i = 0; i < 4; ++i) header[offset + i] = static_cast<unsigned char>(bits >> (8 * i));
    };
    put_i32(0, 348);
    put_i16(40, 3);
    put_i16(42, static_cast<std::int16_t>(v.width));
    put_i16(44, static_cast<std::int16_t>(v.height));
    put_i16(46, static_cast<std::int16_t>(v.depth));
    for (int i = 4; i < 8; ++i) put_i16(40 + 2 * i, 1);
    put_i16(70, 16);  // float32
    put_i16(72, 32);
    put_f32(108, 352.0f);
    std::memcpy(header + 344, "n+1\0", 4);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open file for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    for (float f : v.voxels) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                              static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
    }
    if (!out) throw DataError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Raw fixture format: one ASCII line "SUBSEGRAW v1 <w> <h> <d> <modality>"
// then width*height*depth little-endian 32-bit floats. Round-trips bit-exact.
// ---------------------------------------------------------------------------

inline void write_raw(const Volume& v, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open file for writing: " + path.string());
    out << "SUBSEGRAW v1 " << v.width << ' ' << v.height << ' ' << v.depth << ' ' << to_string(v.modality) << '\n';
    for (float f : v.voxels) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                              static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
    }
    if (!out) throw DataError("write failed: " + path.string());
}

inline Volume read_raw(const std::filesystem::path& path) {
    std::vector<unsigned char> bytes = detail::read_file_bytes(path);
    const auto nl = std::find(bytes.begin(), bytes.end(), static_cast<unsigned char>('\n'));
    if (nl == bytes.end()) throw FormatError("missing header line: " + path.string());
    const std::string line(bytes.begin(), nl);

    std::istringstream iss(line);
    std::string magic, version, modality_name;
    long w = 0, h = 0, d = 0;
    if (!(iss >> magic >> version >> w >> h >> d >> modality_name) || magic != "SUBSEGRAW" || version != "v1") {
        throw FormatError("bad raw header line: " + line);
    }
    if (w <= 0 || h <= 0 || d <= 0) throw FormatError("non-positive extents in raw header");

    Volume v(static_cast<int>(w), static_cast<int>(h), static_cast<int>(d), parse_modality(modality_name));
    const std::size_t offset = static_cast<std::size_t>(nl - bytes.begin()) + 1;
    const std::size_t payload = v.size() * 4;
    if (bytes.size() - offset != payload) {
        throw TruncationError("raw payload is " + std::to_string(bytes.size() - offset) + " bytes, expected " +
                              std::to_string(payload));
    }
    const unsigned char* p = bytes.data() + offset;
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::uint32_t bits = static_cast<std::uint32_t>(p[4 * i]) | (static_cast<std::uint32_t>(p[4 * i + 1]) << 8) |
                             (static_cast<std::uint32_t>(p[4 * i + 2]) << 16) |
                             (static_cast<std::uint32_t>(p[4 * i + 3]) << 24);
        std::memcpy(&v.voxels[i], &bits, 4);
    }
    return v;
}

// ---------------------------------------------------------------------------
// Percentile normalization over nonzero voxels. Zeros are background and stay
// exactly 0; everything else maps through clamp((v - lo)/(hi - lo), 0, 1).
// A volume with no nonzero voxels, or with lo == hi, normalizes to all zeros
// with a warning.
// ---------------------------------------------------------------------------

inline Volume normalize_intensity(const Volume& v, double lo_pct = 1.0, double hi_pct = 99.0) {
    if (!(lo_pct >= 0.0 && lo_pct < hi_pct && hi_pct <= 100.0)) {
        throw ValidationError("percentile bounds must satisfy 0 <= lo < hi <= 100");
    }
    std::vector<float> nonzero;
    nonzero.reserve(v.size());
    for (float x : v.voxels) {
        if (x != 0.0f) nonzero.push_back(x);
    }

    Volume out = v;
    if (nonzero.empty()) {
        log::warn("normalize: volume '" + v.case_id + "' (" + to_string(v.modality) + ") has no nonzero voxels");
        std::fill(out.voxels.begin(), out.voxels.end(), 0.0f);
        return out;
    }
    std::sort(nonzero.begin(), nonzero.end());
    const double lo = percentile_sorted(nonzero, lo_pct);
    const double hi = percentile_sorted(nonzero, hi_pct);
    if (hi == lo) {
        log::warn("normalize: volume '" + v.case_id + "' (" + to_string(v.modality) + ") has degenerate range");
        std::fill(out.voxels.begin(), out.voxels.end(), 0.0f);
        return out;
    }
    const double scale = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float x = v.voxels[i];
        if (x == 0.0f) {
            out.voxels[i] = 0.0f;
        } else {
            out.voxels[i] = static_cast<float>(std::clamp((static_cast<double>(x) - lo) * scale, 0.0, 1.0));
        }
    }
    return out;
}

}  // namespace subseg
