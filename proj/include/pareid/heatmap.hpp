#pragma once

// Part supervision targets.  Fragment confidence maps (one plane per body
// fragment, values in [0,1]) are combined into per-part maps, optionally
// erased where augmentation blanked the image, then binarized into uniform
// distributions over the surviving support.  Visibility pseudo-labels come
// from peak fragment confidence against per-part thresholds.

#include <string>
#include <vector>

namespace pareid {

// Patch-grid geometry shared by the backbone and the heatmap pipeline.
struct GridGeom {
    int image_h = 64, image_w = 32;
    int patch = 8, stride = 4;
    int rows() const { return (image_h - patch) / stride + 1; }
    int cols() const { return (image_w - patch) / stride + 1; }
    int cells() const { return rows() * cols(); }
};

// Dense stack of equally sized planes, either pixel-space [planes,H,W] or
// patch-grid [planes,rows,cols].
struct PlaneStack {
    int planes = 0, rows = 0, cols = 0;
    std::vector<float> data;

    PlaneStack() = default;
    PlaneStack(int planes, int rows, int cols)
        : planes(planes), rows(rows), cols(cols),
          data(std::size_t(planes) * rows * cols, 0.0f) {}

    float& at(int p, int r, int c) { return data[(std::size_t(p) * rows + r) * cols + c]; }
    float at(int p, int r, int c) const { return data[(std::size_t(p) * rows + r) * cols + c]; }
    const float* plane(int p) const { return data.data() + std::size_t(p) * rows * cols; }
    float* plane(int p) { return data.data() + std::size_t(p) * rows * cols; }
    std::size_t plane_size() const { return std::size_t(rows) * cols; }
    float plane_max(int p) const;
};

struct PartConfig {
    int parts = 5;
    std::vector<std::string> part_names;
    std::vector<int> fragment_to_part;  // one entry per fragment plane
    std::vector<float> theta;           // per-part confidence threshold
    bool visibility_after_erasure = false;

    int fragments() const { return int(fragment_to_part.size()); }
    void validate() const;

    // Named presets: "synthetic" (five fragments, identity grouping),
    // "synthetic-p3/p4/p5/p6" (six fine fragments grouped down), and the
    // published per-dataset threshold tables "market1501", "dukemtmc",
    // "occluded-duke".
    static PartConfig preset(const std::string& name);
};

// Half-open rectangle on the patch grid.
struct GridRect {
    int r0 = 0, c0 = 0, r1 = 0, c1 = 0;
    bool empty() const { return r1 <= r0 || c1 <= c0; }
};

// Pixel rectangle [y0,y1) x [x0,x1) -> the grid cells whose window centers
// fall inside it.
GridRect pixel_rect_to_grid(int y0, int x0, int y1, int x1, const GridGeom& g);

// Area-average pixel planes onto the patch grid (each cell averages its own
// window's footprint), then rescale each plane so its peak matches the pixel
// plane's peak; confidence semantics survive the resolution change.  Cells
// below a quarter of the peak are zeroed so windows that barely graze a blob
// don't dilute its support.
PlaneStack downsample_to_grid(const PlaneStack& px, const GridGeom& g);

// Max-combine each part's fragments, skipping fragments whose peak is below
// the part's threshold (detector noise).
PlaneStack combine_fragments(const PlaneStack& frags, const PartConfig& cfg);

void apply_erasure(PlaneStack& part_maps, const std::vector<GridRect>& rects);

// Nonzero cells of each part become 1/K (K = support size), then the row is
// divided by its sum so it is exactly a distribution; rows left empty by
// erasure or filtering stay all-zero.  Idempotent.
void binarize_normalize(PlaneStack& part_maps);

// Pre-filter visibility: part visible iff any of its fragments peaks at or
// above the part threshold.
std::vector<float> visibility_label(const PlaneStack& frags, const PartConfig& cfg);

struct PartGroundTruth {
    int parts = 0, cells = 0;
    std::vector<float> heatmaps;    // [parts, cells], rows sum to 1 or are all-zero
    std::vector<float> visibility;  // [parts], each 0 or 1
};

// Full pipeline: combine -> erase -> binarize, with labels taken before or
// after erasure per cfg.visibility_after_erasure.  Either way a part whose
// final map is all-zero is forced invisible, so visible rows always sum to 1.
PartGroundTruth build_ground_truth(const PlaneStack& frags_grid, const PartConfig& cfg,
                                   const std::vector<GridRect>& erase_rects);

}  // namespace pareid
