#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <utility>

#include "core.hpp"

namespace subseg {

// A case's co-registered volumes. Members are optional so partially staged
// cases can be represented; build_streams reports exactly which are missing.
struct CaseVolumes {
    std::string case_id;
    std::optional<Volume> t1;
    std::optional<Volume> t1gd;
    std::optional<Volume> t2;
    std::optional<Volume> flair;
    std::optional<Volume> label;
};

struct SubtractionStream {
    StreamId stream_id = StreamId::T1Stream;
    Volume volume;
};

// Voxel-wise clamp(enhanced - base, 0, 1). Inputs must be normalized to [0,1]
// and share dimensions; only enhancement (gain over the base image) is kept.
inline Volume subtract_volumes(const Volume& enhanced, const Volume& base) {
    if (!enhanced.same_shape(base)) {
        throw ShapeError("subtract: shape mismatch " + std::to_string(enhanced.width) + "x" +
                         std::to_string(enhanced.height) + "x" + std::to_string(enhanced.depth) + " vs " +
                         std::to_string(base.width) + "x" + std::to_string(base.height) + "x" +
                         std::to_string(base.depth));
    }
    Volume out(enhanced.width, enhanced.height, enhanced.depth, Modality::SUBTRACTION, enhanced.case_id);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float e = enhanced.voxels[i];
        const float b = base.voxels[i];
        if (e < 0.0f || e > 1.0f || b < 0.0f || b > 1.0f) {
            throw DomainError("subtract: input voxel outside [0,1] at index " + std::to_string(i));
        }
        out.voxels[i] = std::clamp(e - b, 0.0f, 1.0f);
    }
    return out;
}

// T1 stream is t1gd minus t1; T2 stream is flair minus t2.
inline std::pair<SubtractionStream, SubtractionStream> build_streams(const CaseVolumes& c) {
    std::string missing;
    auto require = [&missing](const std::optional<Volume>& v, const char* name) {
        if (!v) {
            if (!missing.empty()) missing += ", ";
            missing += name;
        }
    };
    require(c.t1, "t1");
    require(c.t1gd, "t1gd");
    require(c.t2, "t2");
    require(c.flair, "flair");
    if (!missing.empty()) {
        throw MissingModalityError("case '" + c.case_id + "' is missing: " + missing);
    }
    SubtractionStream s1{StreamId::T1Stream, subtract_volumes(*c.t1gd, *c.t1)};
    SubtractionStream s2{StreamId::T2Stream, subtract_volumes(*c.flair, *c.t2)};
    s1.volume.case_id = c.case_id;
    s2.volume.case_id = c.case_id;
    return {std::move(s1), std::move(s2)};
}

}  // namespace subseg
