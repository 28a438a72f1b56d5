#pragma once

// Qualitative inspection: per-sample panels showing the input next to each
// part's averaged cross-attention map (blue = low, red = high, normalized
// per part) with the predicted visibility score printed underneath — scores
// below 0.5 in red, others in green.

#include "pareid/image_io.hpp"
#include "pareid/model.hpp"
#include "pareid/synth.hpp"

namespace pareid {

ImageU8 render_panel(const PAModel<float>& model, const SynthSample& s, int upscale = 4);

// Mean over parts of (row max / row min) of the averaged attention map; near
// 1 for an untrained model, large once attention has localized.
double attention_peak_ratio(const PAModel<float>& model, const SynthSample& s);

// One PNG (or PGM with pgm=true) per index, named sample_<index>.<ext>.
void write_visualizations(const PAModel<float>& model, const std::vector<SynthSample>& samples,
                          const std::vector<int>& indices, const std::string& dir,
                          int upscale = 4, bool pgm = false);

}  // namespace pareid
