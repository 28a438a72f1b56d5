#include "pareid/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pareid {

float PlaneStack::plane_max(int p) const {
    const float* pl = plane(p);
    float mx = 0.0f;
    for (std::size_t i = 0; i < plane_size(); ++i) mx = std::max(mx, pl[i]);
    return mx;
}

void PartConfig::validate() const {
    if (parts <= 0) throw std::invalid_argument("part config: parts must be positive");
    if (int(theta.size()) != parts)
        throw std::invalid_argument("part config: " + std::to_string(theta.size()) +
                                    " thresholds for " + std::to_string(parts) + " parts");
    if (!part_names.empty() && int(part_names.size()) != parts)
        throw std::invalid_argument("part config: name count mismatch");
    if (fragment_to_part.empty())
        throw std::invalid_argument("part config: no fragments mapped");
    std::vector<int> count(parts, 0);
    for (int f : fragment_to_part) {
        if (f < 0 || f >= parts)
            throw std::invalid_argument("part config: fragment maps to part " + std::to_string(f) +
                                        " of " + std::to_string(parts));
        ++count[f];
    }
    for (int p = 0; p < parts; ++p)
        if (count[p] == 0)
            throw std::invalid_argument("part config: part " + std::to_string(p) + " has no fragments");
    for (float t : theta)
        if (t < 0.0f || t > 1.0f)
            throw std::invalid_argument("part config: threshold outside [0,1]");
}

PartConfig PartConfig::preset(const std::string& name) {
    PartConfig c;
    auto identity5 = [&](std::vector<float> th) {
        c.parts = 5;
        c.part_names = {"head", "torso", "arms", "legs", "feet"};
        c.fragment_to_part = {0, 1, 2, 3, 4};
        c.theta = std::move(th);
    };
    // The fine layout splits the torso band, giving six fragment planes:
    // head, upper torso, lower torso, arms, legs, feet.
    if (name == "synthetic") {
        identity5(std::vector<float>(5, 0.5f));
    } else if (name == "market1501") {
        identity5({0.6f, 0.7f, 0.85f, 0.8f, 0.7f});
    } else if (name == "dukemtmc" || name == "occluded-duke") {
        identity5({0.6f, 0.8f, 0.85f, 0.85f, 0.75f});
    } else if (name == "synthetic-p3") {
        c.parts = 3;
        c.part_names = {"head", "upper", "lower"};
        c.fragment_to_part = {0, 1, 1, 1, 2, 2};
        c.theta = std::vector<float>(3, 0.5f);
    } else if (name == "synthetic-p4") {
        c.parts = 4;
        c.part_names = {"head", "upper", "legs", "feet"};
        c.fragment_to_part = {0, 1, 1, 1, 2, 3};
        c.theta = std::vector<float>(4, 0.5f);
    } else if (name == "synthetic-p5") {
        c.parts = 5;
        c.part_names = {"head", "torso", "arms", "legs", "feet"};
        c.fragment_to_part = {0, 1, 1, 2, 3, 4};
        c.theta = std::vector<float>(5, 0.5f);
    } else if (name == "synthetic-p6") {
        c.parts = 6;
        c.part_names = {"head", "upper_torso", "lower_torso", "arms", "legs", "feet"};
        c.fragment_to_part = {0, 1, 2, 3, 4, 5};
        c.theta = std::vector<float>(6, 0.5f);
    } else if (name == "synthetic-split") {
        // Two detector blobs per band (generator flag), still five parts.
        c.parts = 5;
        c.part_names = {"head", "torso", "arms", "legs", "feet"};
        c.fragment_to_part = {0, 0, 1, 1, 2, 2, 3, 3, 4, 4};
        c.theta = std::vector<float>(5, 0.5f);
    } else {
        throw std::invalid_argument("part config: unknown preset '" + name + "'");
    }
    c.validate();
    return c;
}

GridRect pixel_rect_to_grid(int y0, int x0, int y1, int x1, const GridGeom& g) {
    GridRect out;
    const double cy0 = g.patch / 2.0;  // center of window (0,0)
    auto first_at_or_after = [&](double lo) {
        // smallest index i with cy0 + i*stride >= lo
        int i = int(std::max(0.0, std::ceil((lo - cy0) / g.stride)));
        return i;
    };
    auto last_before = [&](double hi, int count) {
        // smallest index past the rect, clamped
        int i = int(std::ceil((hi - cy0) / g.stride));
        return std::min(count, std::max(0, i));
    };
    out.r0 = std::min(g.rows(), first_at_or_after(y0));
    out.r1 = last_before(y1, g.rows());
    out.c0 = std::min(g.cols(), first_at_or_after(x0));
    out.c1 = last_before(x1, g.cols());
    if (out.empty()) out = GridRect{};
    return out;
}

PlaneStack downsample_to_grid(const PlaneStack& px, const GridGeom& g) {
    if (px.rows != g.image_h || px.cols != g.image_w)
        throw std::invalid_argument("downsample: pixel stack is " + std::to_string(px.rows) + "x" +
                                    std::to_string(px.cols) + ", geometry expects " +
                                    std::to_string(g.image_h) + "x" + std::to_string(g.image_w));
    PlaneStack out(px.planes, g.rows(), g.cols());
    const double inv_area = 1.0 / (double(g.patch) * g.patch);
    for (int p = 0; p < px.planes; ++p) {
        const float peak = px.plane_max(p);
        float cur_peak = 0.0f;
        for (int r = 0; r < g.rows(); ++r) {
            for (int c = 0; c < g.cols(); ++c) {
                double acc = 0.0;
                for (int y = 0; y < g.patch; ++y)
                    for (int x = 0; x < g.patch; ++x)
                        acc += px.at(p, r * g.stride + y, c * g.stride + x);
                const float v = float(acc * inv_area);
                out.at(p, r, c) = v;
                cur_peak = std::max(cur_peak, v);
            }
        }
        if (cur_peak > 0.0f) {
            const float s = peak / cur_peak;
            const float floor = 0.25f * peak;  // windows that barely graze a blob don't count
            float* pl = out.plane(p);
            for (std::size_t i = 0; i < out.plane_size(); ++i) {
                pl[i] *= s;
                if (pl[i] < floor) pl[i] = 0.0f;
            }
        }
    }
    return out;
}

PlaneStack combine_fragments(const PlaneStack& frags, const PartConfig& cfg) {
    cfg.validate();
    if (frags.planes != cfg.fragments())
        throw std::invalid_argument("combine: " + std::to_string(frags.planes) + " fragment planes, " +
                                    "config maps " + std::to_string(cfg.fragments()));
    PlaneStack out(cfg.parts, frags.rows, frags.cols);
    for (int f = 0; f < frags.planes; ++f) {
        const int p = cfg.fragment_to_part[f];
        if (frags.plane_max(f) < cfg.theta[p]) continue;  // detector noise
        const float* src = frags.plane(f);
        float* dst = out.plane(p);
        for (std::size_t i = 0; i < out.plane_size(); ++i) dst[i] = std::max(dst[i], src[i]);
    }
    return out;
}

void apply_erasure(PlaneStack& part_maps, const std::vector<GridRect>& rects) {
    for (const auto& rc : rects) {
        if (rc.empty()) continue;
        if (rc.r0 < 0 || rc.c0 < 0 || rc.r1 > part_maps.rows || rc.c1 > part_maps.cols)
            throw std::invalid_argument("erasure: rect outside the grid");
        for (int p = 0; p < part_maps.planes; ++p)
            for (int r = rc.r0; r < rc.r1; ++r)
                for (int c = rc.c0; c < rc.c1; ++c) part_maps.at(p, r, c) = 0.0f;
    }
}

void binarize_normalize(PlaneStack& part_maps) {
    for (int p = 0; p < part_maps.planes; ++p) {
        float* pl = part_maps.plane(p);
        std::size_t k = 0;
        for (std::size_t i = 0; i < part_maps.plane_size(); ++i)
            if (pl[i] > 0.0f) ++k;
        if (k == 0) continue;
        const float unit = 1.0f / float(k);
        double sum = 0.0;
        for (std::size_t i = 0; i < part_maps.plane_size(); ++i) {
            pl[i] = pl[i] > 0.0f ? unit : 0.0f;
            sum += pl[i];
        }
        // The rounded 1/K values rarely sum to exactly one; the final divide
        // (which erasure made load-bearing) pins the row sum.
        const float inv = float(1.0 / sum);
        for (std::size_t i = 0; i < part_maps.plane_size(); ++i) pl[i] *= inv;
    }
}

std::vector<float> visibility_label(const PlaneStack& frags, const PartConfig& cfg) {
    cfg.validate();
    if (frags.planes != cfg.fragments())
        throw std::invalid_argument("visibility: fragment plane count mismatch");
    std::vector<float> peak(cfg.parts, 0.0f);
    for (int f = 0; f < frags.planes; ++f) {
        const int p = cfg.fragment_to_part[f];
        peak[p] = std::max(peak[p], frags.plane_max(f));
    }
    std::vector<float> vis(cfg.parts);
    for (int p = 0; p < cfg.parts; ++p) vis[p] = peak[p] >= cfg.theta[p] ? 1.0f : 0.0f;
    return vis;
}

PartGroundTruth build_ground_truth(const PlaneStack& frags_grid, const PartConfig& cfg,
                                   const std::vector<GridRect>& erase_rects) {
    PartGroundTruth gt;
    gt.parts = cfg.parts;
    gt.cells = frags_grid.rows * frags_grid.cols;
    PlaneStack maps = combine_fragments(frags_grid, cfg);
    if (!cfg.visibility_after_erasure) gt.visibility = visibility_label(frags_grid, cfg);
    apply_erasure(maps, erase_rects);
    if (cfg.visibility_after_erasure) {
        // Labels judged on what survives erasure: a part whose entire
        // support was blanked counts as occluded.
        gt.visibility.assign(cfg.parts, 0.0f);
        std::vector<float> peak(cfg.parts, 0.0f);
        for (int p = 0; p < cfg.parts; ++p) peak[p] = maps.plane_max(p);
        for (int p = 0; p < cfg.parts; ++p)
            gt.visibility[p] = peak[p] >= cfg.theta[p] ? 1.0f : 0.0f;
    }
    binarize_normalize(maps);
    // A part with no surviving support has nothing to point at; it cannot be
    // treated as visible no matter when the labels were judged.  This keeps
    // the invariant that every visible row is a probability distribution.
    for (int p = 0; p < cfg.parts; ++p) {
        bool any = false;
        const float* row = maps.plane(p);
        for (int c = 0; c < gt.cells && !any; ++c) any = row[c] != 0.0f;
        if (!any) gt.visibility[p] = 0.0f;
    }
    gt.heatmaps = std::move(maps.data);
    return gt;
}

}  // namespace pareid
