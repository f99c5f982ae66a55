#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <optional>
#include <vector>

#include "core.hpp"

namespace subseg {

// ---------------------------------------------------------------------------
// Boxes use continuous pixel coordinates: area is (x1-x0)*(y1-y0) with no
// +1 pixel convention.
// ---------------------------------------------------------------------------

struct Box {
    double x0 = 0.0;
    double y0 = 0.0;
    double x1 = 0.0;
    double y1 = 0.0;

    double area() const { return (x1 - x0) * (y1 - y0); }
    bool valid() const { return x0 <= x1 && y0 <= y1; }
};

struct Instance {
    Box box;
    double score = 0.0;
    Mask2D mask;  // full-resolution binary mask
};

inline double iou(const Box& a, const Box& b) {
    const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    const double inter = std::max(0.0, iw) * std::max(0.0, ih);
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

// ---------------------------------------------------------------------------
// Greedy NMS: visit instances by descending score (ties by input index, lower
// first); keep an instance iff its IoU with every already-kept instance is at
// most the threshold. Returns indices into the input, in keep order.
// ---------------------------------------------------------------------------

inline std::vector<std::size_t> nms_keep(const std::vector<Box>& boxes, const std::vector<double>& scores,
                                         double iou_threshold) {
    if (boxes.size() != scores.size()) throw ValidationError("nms: boxes and scores differ in length");
    for (double s : scores) {
        if (!std::isfinite(s)) throw ValidationError("nms: non-finite score");
    }
    std::vector<std::size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&scores](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    std::vector<std::size_t> kept;
    for (std::size_t idx : order) {
        bool suppressed = false;
        for (std::size_t k : kept) {
            if (iou(boxes[idx], boxes[k]) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(idx);
    }
    return kept;
}

inline std::vector<Instance> nms(const std::vector<Instance>& instances, double iou_threshold) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    boxes.reserve(instances.size());
    scores.reserve(instances.size());
    for (const auto& inst : instances) {
        boxes.push_back(inst.box);
        scores.push_back(inst.score);
    }
    std::vector<Instance> out;
    for (std::size_t idx : nms_keep(boxes, scores, iou_threshold)) out.push_back(instances[idx]);
    return out;
}

// ---------------------------------------------------------------------------
// ROI Align, no-quantization formulation: the box is divided into out_h*out_w
// bins with continuous boundaries; each bin averages samples_per_bin^2
// regularly spaced bilinear samples. Samples outside the grid contribute 0.
// ---------------------------------------------------------------------------

inline Image2D roi_align(const Image2D& feature, const Box& box, int out_h, int out_w, int samples_per_bin = 2) {
    if (out_h < 1 || out_w < 1) throw ValidationError("roi_align: output extents must be >= 1");
    if (samples_per_bin < 1) throw ValidationError("roi_align: samples_per_bin must be >= 1");

    const double bin_w = (box.x1 - box.x0) / out_w;
    const double bin_h = (box.y1 - box.y0) / out_h;
    const int s = samples_per_bin;
    const double inv = 1.0 / (static_cast<double>(s) * s);

    Image2D out(out_w, out_h);
    for (int i = 0; i < out_h; ++i) {
        for (int j = 0; j < out_w; ++j) {
            double acc = 0.0;
            for (int ky = 0; ky < s; ++ky) {
                const double sy = box.y0 + (i + (ky + 0.5) / s) * bin_h;
                for (int kx = 0; kx < s; ++kx) {
                    const double sx = box.x0 + (j + (kx + 0.5) / s) * bin_w;
                    acc += detail::bilinear_or_zero(feature, sx, sy);
                }
            }
            out.at(j, i) = static_cast<float>(acc * inv);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Paste a soft mask onto the box footprint of a full-resolution image: the
// integer pixels covered by the box are bilinearly sampled from the soft grid
// and thresholded; everything else stays 0.
// ---------------------------------------------------------------------------

inline Mask2D paste_mask(const Image2D& soft_mask, const Box& box, int height, int width, double threshold = 0.5) {
    if (threshold <= 0.0 || threshold >= 1.0) throw ValidationError("paste_mask: threshold must be in (0,1)");
    if (soft_mask.width < 1 || soft_mask.height < 1) throw ValidationError("paste_mask: empty soft mask");

    Mask2D out(width, height);
    const int px0 = std::max(0, static_cast<int>(std::ceil(box.x0)));
    const int px1 = std::min(width - 1, static_cast<int>(std::floor(box.x1)));
    const int py0 = std::max(0, static_cast<int>(std::ceil(box.y0)));
    const int py1 = std::min(height - 1, static_cast<int>(std::floor(box.y1)));
    if (px0 > px1 || py0 > py1) return out;

    const double bw = box.x1 - box.x0;
    const double bh = box.y1 - box.y0;
    for (int py = py0; py <= py1; ++py) {
        const double v = bh > 0.0 ? (py - box.y0) / bh * (soft_mask.height - 1) : 0.5 * (soft_mask.height - 1);
        for (int px = px0; px <= px1; ++px) {
            const double u = bw > 0.0 ? (px - box.x0) / bw * (soft_mask.width - 1) : 0.5 * (soft_mask.width - 1);
            if (detail::bilinear_or_zero(soft_mask, u, v) >= threshold) out.at(px, py) = 1;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Connected components. Maximal connected foreground sets under 4- or
// 8-connectivity, ordered by (min row, min col), first-encounter order for
// exact ties.
// ---------------------------------------------------------------------------

struct Component {
    Mask2D mask;
    int area = 0;
    Box bbox;
    int min_row = 0;
    int min_col = 0;
};

inline std::vector<Component> connected_components(const Mask2D& grid, int connectivity = 8) {
    if (connectivity != 4 && connectivity != 8) throw ValidationError("connectivity must be 4 or 8");
    const int W = grid.width;
    const int H = grid.height;
    for (std::uint8_t v : grid.data) {
        if (v > 1) throw DomainError("connected_components: grid is not binary");
    }

    static constexpr int DX8[] = {1, -1, 0, 0, 1, 1, -1, -1};
    static constexpr int DY8[] = {0, 0, 1, -1, 1, -1, 1, -1};
    const int ndirs = connectivity == 4 ? 4 : 8;

    std::vector<Component> comps;
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(W) * H, 0);
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t at0 = static_cast<std::size_t>(x) + static_cast<std::size_t>(W) * y;
            if (!grid.data[at0] || seen[at0]) continue;

            Component comp;
            comp.mask = Mask2D(W, H);
            int min_x = x, max_x = x, min_y = y, max_y = y;
            seen[at0] = 1;
            queue.emplace_back(x, y);
            while (!queue.empty()) {
                const auto [cx, cy] = queue.front();
                queue.pop_front();
                comp.mask.at(cx, cy) = 1;
                ++comp.area;
                min_x = std::min(min_x, cx);
                max_x = std::max(max_x, cx);
                min_y = std::min(min_y, cy);
                max_y = std::max(max_y, cy);
                for (int d = 0; d < ndirs; ++d) {
                    const int nx = cx + DX8[d];
                    const int ny = cy + DY8[d];
                    if (nx < 0 || ny < 0 || nx >= W || ny >= H) continue;
                    const std::size_t at = static_cast<std::size_t>(nx) + static_cast<std::size_t>(W) * ny;
                    if (!grid.data[at] || seen[at]) continue;
                    seen[at] = 1;
                    queue.emplace_back(nx, ny);
                }
            }
            comp.min_row = min_y;
            comp.min_col = min_x;
            comp.bbox = Box{static_cast<double>(min_x), static_cast<double>(min_y), static_cast<double>(max_x + 1),
                            static_cast<double>(max_y + 1)};
            comps.push_back(std::move(comp));
        }
    }
    std::stable_sort(comps.begin(), comps.end(), [](const Component& a, const Component& b) {
        if (a.min_row != b.min_row) return a.min_row < b.min_row;
        return a.min_col < b.min_col;
    });
    return comps;
}

// Highest score wins; ties go to the lowest input index. Empty input -> none.
inline std::optional<Instance> select_top_instance(const std::vector<Instance>& instances) {
    if (instances.empty()) return std::nullopt;
    std::size_t best = 0;
    for (std::size_t i = 1; i < instances.size(); ++i) {
        if (instances[i].score > instances[best].score) best = i;
    }
    return instances[best];
}

}  // namespace subseg
