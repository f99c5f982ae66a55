#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "core.hpp"
#include "subtraction.hpp"

namespace subseg {

// Synthetic verification fixture: an ellipsoidal brain with a center-bright
// tissue profile, two bright confounder rods per modality pair (present in
// both members, so subtraction cancels them), and one z-elongated lesion
// brightened only in the enhanced member (t1gd / flair). Ground-truth label
// codes follow the usual nonzero-union convention: {1, 4, 2} from lesion
// core to rim, union = lesion.
struct PhantomParams {
    int width = 64;
    int height = 64;
    int depth = 24;
    int cases = 24;
};

namespace detail {

struct PhantomGeometry {
    double cx, cy, cz;    // grid center
    double rx, ry, rz;    // brain ellipsoid radii
    double lx, ly, lz;    // lesion center
    double lrx, lry, lrz; // lesion radii
};

}  // namespace detail

inline CaseVolumes make_phantom_case(const PhantomParams& p, const std::string& case_id, std::uint64_t seed) {
    constexpr double BRAIN_RX = 0.42, BRAIN_RY = 0.40, BRAIN_RZ = 0.46;
    constexpr double BASE_LO = 0.32, BASE_SPAN = 0.13;
    constexpr double CONF_VALUE = 0.95;
    constexpr double LESION_DELTA_T1 = 0.50;
    constexpr double LESION_DELTA_T2 = 0.42;
    constexpr double NOISE_AMP = 0.004;

    const int W = p.width, H = p.height, D = p.depth;
    SplitMix64 rng(fnv1a64(case_id, fnv1a64(seed)));

    detail::PhantomGeometry g;
    g.cx = (W - 1) / 2.0;
    g.cy = (H - 1) / 2.0;
    g.cz = (D - 1) / 2.0;
    g.rx = BRAIN_RX * W;
    g.ry = BRAIN_RY * H;
    g.rz = BRAIN_RZ * D;
    g.lx = g.cx + rng.next_range(-0.15, 0.15) * W;
    g.ly = g.cy + rng.next_range(-0.15, 0.15) * H;
    g.lz = g.cz + rng.next_range(-0.08, 0.08) * D;
    g.lrx = rng.next_range(0.12, 0.17) * W;
    g.lry = rng.next_range(0.12, 0.17) * H;
    g.lrz = rng.next_range(0.30, 0.42) * D;

    auto brain_r2 = [&g](int x, int y, int z) {
        const double dx = (x - g.cx) / g.rx;
        const double dy = (y - g.cy) / g.ry;
        const double dz = (z - g.cz) / g.rz;
        return dx * dx + dy * dy + dz * dz;
    };
    auto lesion_r2 = [&g](int x, int y, int z) {
        const double dx = (x - g.lx) / g.lrx;
        const double dy = (y - g.ly) / g.lry;
        const double dz = (z - g.lz) / g.lrz;
        return dx * dx + dy * dy + dz * dz;
    };

    // Two z-axis rods per modality pair, kept clear of the lesion center.
    struct Rod {
        double px, py, rr;
    };
    auto draw_rods = [&]() {
        std::vector<Rod> rods;
        while (rods.size() < 2) {
            const double ang = rng.next_range(0.0, 2.0 * std::numbers::pi);
            const double rad = rng.next_range(0.45, 0.65);
            const double px = g.cx + rad * g.rx * std::cos(ang);
            const double py = g.cy + rad * g.ry * std::sin(ang);
            if (std::hypot(px - g.lx, py - g.ly) < 0.30 * W) continue;
            rods.push_back(Rod{px, py, rng.next_range(2.5, 4.5)});
        }
        return rods;
    };
    const auto conf1 = draw_rods();
    const auto conf2 = draw_rods();

    auto in_rods = [&](const std::vector<Rod>& rods, int x, int y, int z) {
        if (z < 0.1 * D || z > 0.9 * D) return false;
        for (const Rod& r : rods) {
            const double dx = x - r.px;
            const double dy = y - r.py;
            if (dx * dx + dy * dy <= r.rr * r.rr) return true;
        }
        return false;
    };

    auto assemble = [&](double base_lo, double base_span, const std::vector<Rod>& rods, double lesion_delta,
                        Modality modality) {
        Volume v(W, H, D, modality, case_id);
        for (int z = 0; z < D; ++z) {
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    const double noise = rng.next_range(-NOISE_AMP, NOISE_AMP);
                    const double r2 = brain_r2(x, y, z);
                    if (r2 > 1.0) continue;  // outside the brain stays exactly 0
                    double value = base_lo + base_span * (1.0 - r2);
                    if (in_rods(rods, x, y, z)) value = std::max(value, CONF_VALUE);
                    if (lesion_delta > 0.0 && lesion_r2(x, y, z) <= 1.0) {
                        value = std::min(1.0, value + lesion_delta);
                    }
                    value = std::clamp(value + noise, 0.0, 1.0);
                    v.at(x, y, z) = static_cast<float>(value);
                }
            }
        }
        return v;
    };

    CaseVolumes c;
    c.case_id = case_id;
    c.t1 = assemble(BASE_LO, BASE_SPAN, conf1, 0.0, Modality::T1);
    c.t1gd = assemble(BASE_LO, BASE_SPAN, conf1, LESION_DELTA_T1, Modality::T1GD);
    c.t2 = assemble(BASE_LO - 0.02, BASE_SPAN + 0.02, conf2, 0.0, Modality::T2);
    c.flair = assemble(BASE_LO - 0.02, BASE_SPAN + 0.02, conf2, LESION_DELTA_T2, Modality::FLAIR);

    Volume label(W, H, D, Modality::LABEL, case_id);
    for (int z = 0; z < D; ++z) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                if (brain_r2(x, y, z) > 1.0) continue;
                const double r2 = lesion_r2(x, y, z);
                if (r2 > 1.0) continue;
                const double r = std::sqrt(r2);
                label.at(x, y, z) = r <= 0.35 ? 1.0f : (r <= 0.7 ? 4.0f : 2.0f);
            }
        }
    }
    c.label = std::move(label);
    return c;
}

}  // namespace subseg
