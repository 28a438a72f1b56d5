#pragma once

// On-disk dataset layout.  Each split is a directory holding one PNG and one
// fragment container per sample plus a tab-separated manifest:
//
//   # pareid manifest v1
//   image<TAB>fragments<TAB>id<TAB>camera<TAB>label<TAB>bands
//
// where `bands` is a semicolon-joined list of y0,x0,y1,x1 pixel rectangles.
// A fragment container is binary: magic "FRAG", u32 version (1), u32 planes,
// u32 rows, u32 cols, then per-plane float32 confidences and plane data, all
// little-endian row-major.

#include <string>
#include <vector>

#include "pareid/synth.hpp"

namespace pareid {

void write_fragment_container(const std::string& path, const PlaneStack& planes,
                              const std::vector<float>& confidence);
// confidence_out may be null when the caller does not need it.
PlaneStack read_fragment_container(const std::string& path, std::vector<float>* confidence_out);

// Fragment planes from per-fragment grayscale images (PNG or PGM by
// extension), intensities mapped to [0,1].
PlaneStack planes_from_images(const std::vector<std::string>& paths);

void write_split(const std::string& split_dir, const std::vector<SynthSample>& samples);
std::vector<SynthSample> load_split(const std::string& split_dir);

// Writes train/query/gallery/query_clean/gallery_clean under root.
void write_dataset(const std::string& root, const SynthDataset& ds);

// Loads whichever of the five split directories exist; errors when none do.
SynthDataset load_external(const std::string& root);

}  // namespace pareid
