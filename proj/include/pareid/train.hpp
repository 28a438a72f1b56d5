#pragma once

// Training loop and evaluation harness.  Batches are identity-balanced
// (batch_ids identities, instances_per_id images each), every image appears
// once per epoch, and all randomness is derived from (seed, epoch, ...) so
// a resumed run continues bit-for-bit where the original left off.

#include "pareid/checkpoint.hpp"
#include "pareid/config.hpp"
#include "pareid/dataset.hpp"
#include "pareid/losses.hpp"
#include "pareid/optim.hpp"
#include "pareid/retrieval.hpp"

namespace pareid {

struct PartLocMetrics {
    double mean_mass = 0.0;        // attention mass inside the part's own band(s)
    double argmax_accuracy = 0.0;  // argmax cell lands inside those bands
    int counted_parts = 0;         // visible (sample, part) pairs measured
};

struct EvalPoint {
    int epoch = 0;
    EvalReport clean;         // occlusion-free split, configured visibility mode
    AblationReport occluded;  // three visibility modes on the occluded split
    PartLocMetrics part_loc;  // clean split
    double visibility_accuracy = 0.0;  // clean + occluded eval samples
};

struct TrainSummary {
    bool aborted = false;
    std::string abort_reason;
    int epochs_run = 0;
    int global_steps = 0;
    double best_clean_map = -1.0;
    EvalPoint final_eval;
    std::string best_checkpoint, last_checkpoint, metrics_path;
};

// Everything training needs to exist at once; also the unit handled by
// checkpoints (model + classifier heads + optimizer state + progress).
struct TrainState {
    PAModel<float> model;
    ClassifierHeads<float> heads;
    ParamList<float> params;  // model then heads, the checkpoint/optimizer order
    int classes = 0;

    static TrainState create(const RunConfig& cfg, int classes);
};

// Identity-balanced epoch plan: each batch holds `instances_per_id`
// consecutive picks from `batch_ids` distinct identities (when the tail of
// the pool permits), and every train index appears exactly once per epoch.
std::vector<std::vector<int>> plan_epoch(const std::vector<SynthSample>& train, int batch_ids,
                                         int instances_per_id, std::uint64_t seed, int epoch);

GalleryEntry extract_entry(const PAModel<float>& model, const SynthSample& s);
std::vector<GalleryEntry> extract_features(const PAModel<float>& model,
                                           const std::vector<SynthSample>& samples);

PartLocMetrics part_localization(const PAModel<float>& model,
                                 const std::vector<SynthSample>& samples, const PartConfig& parts);

double visibility_accuracy(const PAModel<float>& model, const std::vector<SynthSample>& samples,
                           const PartConfig& parts);

EvalPoint run_eval(const PAModel<float>& model, const SynthDataset& ds, const RunConfig& cfg,
                   int epoch);

// Trains per cfg on ds (which must carry train + both eval splits), writing
// config.json, metrics.jsonl and checkpoints under cfg.output_dir.  With
// resume=true it picks up from <output_dir>/checkpoints/last.ckpt.  A
// non-finite loss aborts the run, keeping the last good checkpoint and
// naming the term that diverged.
TrainSummary train_run(const RunConfig& cfg, const SynthDataset& ds, bool resume = false);

// Rebuild a state from a checkpoint written by train_run.
TrainState load_train_state(const RunConfig& cfg, const std::string& checkpoint_path);

}  // namespace pareid
