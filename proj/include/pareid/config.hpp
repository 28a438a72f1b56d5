#pragma once

// Run configuration: one JSON file drives generation, training, evaluation
// and visualization.  Parsing is strict — unknown keys are errors, the
// schema is versioned, and serialize/parse round-trips every field exactly.

#include <string>

#include "pareid/model.hpp"
#include "pareid/synth.hpp"

namespace pareid {

struct OptimConfig {
    int epochs = 60, eval_every = 10;
    int batch_ids = 8, instances_per_id = 4;
    float lr = 0.004f, momentum = 0.9f, weight_decay = 1e-4f;
};

struct LossConfig {
    float lambda_pose = 10.0f, margin = 0.3f, smoothing = 0.0f, big = 1e6f;
};

struct EvalConfig {
    std::string visibility = "as-is";  // as-is | off | round
    float round_threshold = 0.5f;
    int max_rank = 10;
};

struct DataConfig {
    std::string path;  // empty: generate in memory from `synth`
    SynthSpec synth;
};

struct RunConfig {
    int config_version = 1;
    std::uint64_t seed = 1;
    std::string output_dir = "runs/toy";
    ModelConfig model;
    std::string parts_preset = "synthetic";
    std::vector<float> theta_override;  // empty: preset thresholds
    bool visibility_after_erasure = false;
    DataConfig data;
    OptimConfig optim;
    LossConfig loss;
    EvalConfig eval;
    AugmentConfig augment;

    PartConfig part_config() const;
    void validate() const;  // cross-field consistency on top of member validation
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);
void save_config(const std::string& path, const RunConfig& cfg);

// "toy" (the defaults) or "paper-scale" (full-size transformer settings,
// documented but far beyond desk hardware).
RunConfig preset_config(const std::string& name);

// dotted.path=value override, e.g. "optim.lr" "0.01"; the path must name an
// existing scalar field.
void apply_override(RunConfig& cfg, const std::string& dotted_key, const std::string& value);

}  // namespace pareid
