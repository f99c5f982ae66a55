#pragma once

#include <string>
#include <vector>

#include "core.hpp"
#include "kernels.hpp"
#include "segmenter.hpp"

namespace subseg {

enum class FusionKind { MaxScore, MaskUnion, ScoreWeightedVote };

inline const char* to_string(FusionKind k) {
    switch (k) {
        case FusionKind::MaxScore: return "max_score";
        case FusionKind::MaskUnion: return "mask_union";
        case FusionKind::ScoreWeightedVote: return "score_weighted_vote";
    }
    throw ValidationError("unknown fusion kind");
}

inline FusionKind parse_fusion_kind(const std::string& s) {
    if (s == "max_score") return FusionKind::MaxScore;
    if (s == "mask_union") return FusionKind::MaskUnion;
    if (s == "score_weighted_vote") return FusionKind::ScoreWeightedVote;
    throw ParseError("unknown fusion strategy: " + s);
}

struct FusionStrategy {
    FusionKind kind = FusionKind::MaxScore;
    double vote_threshold = 0.5;

    void validate() const {
        if (vote_threshold <= 0.0 || vote_threshold > 1.0) {
            throw ValidationError("fusion: vote_threshold must be in (0,1]");
        }
    }
};

// Decision-level fusion of the two streams' predictions for one slice into a
// single binary mask. The slice shape is passed explicitly because both
// prediction sets may be empty. Instance pooling order is t1 then t2, which
// fixes the max_score tie-break.
//   max_score:           mask of the highest-scoring pooled instance
//   mask_union:          union of the two per-stream top-instance masks
//   score_weighted_vote: pixel on iff covering-score mass / total >= threshold
inline Mask2D fuse(const PredictionSet& pred_t1, const PredictionSet& pred_t2, const FusionStrategy& strategy,
                   int height, int width) {
    strategy.validate();
    if (pred_t1.case_id != pred_t2.case_id || pred_t1.slice_index != pred_t2.slice_index) {
        throw FusionError("fuse: prediction sets refer to different slices (" + pred_t1.case_id + "#" +
                          std::to_string(pred_t1.slice_index) + " vs " + pred_t2.case_id + "#" +
                          std::to_string(pred_t2.slice_index) + ")");
    }
    for (const auto* set : {&pred_t1, &pred_t2}) {
        for (const auto& inst : set->instances) {
            if (inst.mask.width != width || inst.mask.height != height) {
                throw FusionError("fuse: instance mask shape differs from slice shape");
            }
        }
    }

    Mask2D out(width, height);
    switch (strategy.kind) {
        case FusionKind::MaxScore: {
            std::vector<Instance> pool;
            pool.reserve(pred_t1.instances.size() + pred_t2.instances.size());
            pool.insert(pool.end(), pred_t1.instances.begin(), pred_t1.instances.end());
            pool.insert(pool.end(), pred_t2.instances.begin(), pred_t2.instances.end());
            if (auto top = select_top_instance(pool)) out = top->mask;
            break;
        }
        case FusionKind::MaskUnion: {
            for (const auto* set : {&pred_t1, &pred_t2}) {
                if (auto top = select_top_instance(set->instances)) {
                    for (std::size_t i = 0; i < out.size(); ++i) {
                        out.data[i] |= top->mask.data[i];
                    }
                }
            }
            break;
        }
        case FusionKind::ScoreWeightedVote: {
            double total = 0.0;
            for (const auto* set : {&pred_t1, &pred_t2}) {
                for (const auto& inst : set->instances) total += inst.score;
            }
            if (total <= 0.0) break;  // no instances (or zero mass): empty mask
            std::vector<double> cover(out.size(), 0.0);
            for (const auto* set : {&pred_t1, &pred_t2}) {
                for (const auto& inst : set->instances) {
                    for (std::size_t i = 0; i < cover.size(); ++i) {
                        if (inst.mask.data[i]) cover[i] += inst.score;
                    }
                }
            }
            for (std::size_t i = 0; i < out.size(); ++i) {
                out.data[i] = cover[i] / total >= strategy.vote_threshold ? 1 : 0;
            }
            break;
        }
    }
    return out;
}

}  // namespace subseg
