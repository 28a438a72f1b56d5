#pragma once

// Procedural stand-in for a person re-identification benchmark.  An identity
// is a stack of colored horizontal bands (head, torso, ...), a camera is a
// fixed channel tint, an occluder is a rectangle painted over the figure.
// Every sample carries pixel-space fragment confidence planes (one Gaussian
// blob per band fragment, confidence reduced by the fraction of the band an
// occluder covers), so part supervision downstream is exact by construction.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pareid/heatmap.hpp"
#include "pareid/tensor.hpp"

namespace pareid {

struct PixelRect {
    int y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // half-open
    int area() const { return (y1 - y0) * (x1 - x0); }
    bool empty() const { return y1 <= y0 || x1 <= x0; }
};

struct SynthSpec {
    int num_ids = 40;  // training identities
    int images_per_id = 8;
    int eval_ids = 10;  // held out for query/gallery
    int eval_images_per_id = 6;
    int image_h = 64, image_w = 32;
    int cameras = 2;
    int bands = 5;               // 5 = default layout; 6 = fine layout for regrouped parts
    int fragments_per_band = 1;  // 2 = split blobs ("synthetic-split" grouping)
    int tint_groups = 8;         // identities share a coarse tint in groups of this many hues
    float occlusion_probability = 0.3f;
    float eval_occlusion_probability = 0.6f;
    float occluder_min_h = 0.15f, occluder_max_h = 0.35f;  // fraction of image height
    float occluder_min_w = 0.40f, occluder_max_w = 0.90f;  // fraction of image width
    float noise = 0.03f;
    std::uint64_t seed = 1;

    void validate(bool triplet_training = true) const;
    std::vector<float> band_fractions() const;  // heights, sum to 1
    int fragments() const { return bands * fragments_per_band; }
};

struct SynthSample {
    std::vector<float> image;  // [3,H,W] in [0,1], on the 256-level grid
    int h = 0, w = 0;
    int id = 0;      // global identity
    int camera = 0;
    int label = -1;  // contiguous train class, -1 outside the train split
    PlaneStack fragments;           // pixel-space confidence planes
    std::vector<float> confidence;  // detector confidence per fragment
    std::vector<PixelRect> occluders;
    std::vector<PixelRect> band_rects;   // where each band actually is
    std::vector<PixelRect> erase_rects;  // filled by augmentation

    float& px(int c, int y, int x) { return image[(std::size_t(c) * h + y) * w + x]; }
    float px(int c, int y, int x) const { return image[(std::size_t(c) * h + y) * w + x]; }
};

struct SynthDataset {
    SynthSpec spec;
    std::vector<SynthSample> train;
    std::vector<SynthSample> query, gallery;              // occluded eval split
    std::vector<SynthSample> query_clean, gallery_clean;  // same draws, occlusion off
};

// Deterministic under spec.seed; eval identities never appear in train, and
// the clean eval split differs from the occluded one only by occlusion.
SynthDataset generate(const SynthSpec& spec);

struct AugmentConfig {
    float p_flip = 0.5f, p_crop = 0.5f, p_gray = 0.1f, p_erase = 0.5f;
    int crop_pad = 4;
    float erase_min_area = 0.05f, erase_max_area = 0.2f;  // fraction of image
    bool enabled = true;
};

// Flip and crop/pad act on image and fragment planes together; grayscale and
// erasing touch the image only, with the erased rectangle recorded so the
// supervision target can be zeroed there.
void augment(SynthSample& s, const AugmentConfig& cfg, Rng& rng);

// Pieces exposed for direct testing.
void flip_horizontal(SynthSample& s);
void crop_pad(SynthSample& s, int pad, int dy, int dx);  // dy,dx in [0, 2*pad]
void to_grayscale(SynthSample& s);
void erase_rect(SynthSample& s, const PixelRect& r, Rng& rng);

// Grid-space ground truth for a (possibly augmented) sample.
PartGroundTruth sample_ground_truth(const SynthSample& s, const PartConfig& parts,
                                    const GridGeom& geom);

}  // namespace pareid
