#include "pareid/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pareid/retrieval.hpp"

namespace pareid {

using ordered_json = nlohmann::ordered_json;

namespace {

void reject_unknown(const ordered_json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key))
            throw std::invalid_argument("config: unknown key '" + where + key + "'");
}

template <class T>
void get_if(const ordered_json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

ordered_json model_to_json(const ModelConfig& m) {
    return ordered_json{{"image_h", m.image_h},   {"image_w", m.image_w},
                        {"channels", m.channels}, {"patch", m.patch},
                        {"stride", m.stride},     {"dim", m.dim},
                        {"layers", m.layers},     {"heads", m.heads},
                        {"pose_tokens", m.pose_tokens}, {"ffn_mult", m.ffn_mult},
                        {"cameras", m.cameras},   {"sie_coefficient", m.sie_coefficient},
                        {"init_std", m.init_std}};
}

void model_from_json(const ordered_json& j, ModelConfig& m) {
    reject_unknown(j,
                   {"image_h", "image_w", "channels", "patch", "stride", "dim", "layers", "heads",
                    "pose_tokens", "ffn_mult", "cameras", "sie_coefficient", "init_std"},
                   "model.");
    get_if(j, "image_h", m.image_h);
    get_if(j, "image_w", m.image_w);
    get_if(j, "channels", m.channels);
    get_if(j, "patch", m.patch);
    get_if(j, "stride", m.stride);
    get_if(j, "dim", m.dim);
    get_if(j, "layers", m.layers);
    get_if(j, "heads", m.heads);
    get_if(j, "pose_tokens", m.pose_tokens);
    get_if(j, "ffn_mult", m.ffn_mult);
    get_if(j, "cameras", m.cameras);
    get_if(j, "sie_coefficient", m.sie_coefficient);
    get_if(j, "init_std", m.init_std);
}

ordered_json synth_to_json(const SynthSpec& s) {
    return ordered_json{{"num_ids", s.num_ids},
                        {"images_per_id", s.images_per_id},
                        {"eval_ids", s.eval_ids},
                        {"eval_images_per_id", s.eval_images_per_id},
                        {"image_h", s.image_h},
                        {"image_w", s.image_w},
                        {"cameras", s.cameras},
                        {"bands", s.bands},
                        {"fragments_per_band", s.fragments_per_band},
                        {"tint_groups", s.tint_groups},
                        {"occlusion_probability", s.occlusion_probability},
                        {"eval_occlusion_probability", s.eval_occlusion_probability},
                        {"occluder_min_h", s.occluder_min_h},
                        {"occluder_max_h", s.occluder_max_h},
                        {"occluder_min_w", s.occluder_min_w},
                        {"occluder_max_w", s.occluder_max_w},
                        {"noise", s.noise},
                        {"seed", s.seed}};
}

void synth_from_json(const ordered_json& j, SynthSpec& s) {
    reject_unknown(j,
                   {"num_ids", "images_per_id", "eval_ids", "eval_images_per_id", "image_h",
                    "image_w", "cameras", "bands", "fragments_per_band", "tint_groups",
                    "occlusion_probability", "eval_occlusion_probability", "occluder_min_h",
                    "occluder_max_h", "occluder_min_w", "occluder_max_w", "noise", "seed"},
                   "data.synth.");
    get_if(j, "num_ids", s.num_ids);
    get_if(j, "images_per_id", s.images_per_id);
    get_if(j, "eval_ids", s.eval_ids);
    get_if(j, "eval_images_per_id", s.eval_images_per_id);
    get_if(j, "image_h", s.image_h);
    get_if(j, "image_w", s.image_w);
    get_if(j, "cameras", s.cameras);
    get_if(j, "bands", s.bands);
    get_if(j, "fragments_per_band", s.fragments_per_band);
    get_if(j, "tint_groups", s.tint_groups);
    get_if(j, "occlusion_probability", s.occlusion_probability);
    get_if(j, "eval_occlusion_probability", s.eval_occlusion_probability);
    get_if(j, "occluder_min_h", s.occluder_min_h);
    get_if(j, "occluder_max_h", s.occluder_max_h);
    get_if(j, "occluder_min_w", s.occluder_min_w);
    get_if(j, "occluder_max_w", s.occluder_max_w);
    get_if(j, "noise", s.noise);
    get_if(j, "seed", s.seed);
}

ordered_json to_json(const RunConfig& c) {
    ordered_json j;
    j["config_version"] = c.config_version;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["model"] = model_to_json(c.model);
    j["parts"] = ordered_json{{"preset", c.parts_preset},
                              {"theta_override", c.theta_override},
                              {"visibility_after_erasure", c.visibility_after_erasure}};
    j["data"] = ordered_json{{"path", c.data.path}, {"synth", synth_to_json(c.data.synth)}};
    j["optim"] = ordered_json{{"epochs", c.optim.epochs},
                              {"eval_every", c.optim.eval_every},
                              {"batch_ids", c.optim.batch_ids},
                              {"instances_per_id", c.optim.instances_per_id},
                              {"lr", c.optim.lr},
                              {"momentum", c.optim.momentum},
                              {"weight_decay", c.optim.weight_decay}};
    j["loss"] = ordered_json{{"lambda_pose", c.loss.lambda_pose},
                             {"margin", c.loss.margin},
                             {"smoothing", c.loss.smoothing},
                             {"big", c.loss.big}};
    j["eval"] = ordered_json{{"visibility", c.eval.visibility},
                             {"round_threshold", c.eval.round_threshold},
                             {"max_rank", c.eval.max_rank}};
    j["augment"] = ordered_json{{"enabled", c.augment.enabled},
                                {"p_flip", c.augment.p_flip},
                                {"p_crop", c.augment.p_crop},
                                {"p_gray", c.augment.p_gray},
                                {"p_erase", c.augment.p_erase},
                                {"crop_pad", c.augment.crop_pad},
                                {"erase_min_area", c.augment.erase_min_area},
                                {"erase_max_area", c.augment.erase_max_area}};
    return j;
}

RunConfig from_json(const ordered_json& j) {
    RunConfig c;
    reject_unknown(j,
                   {"config_version", "seed", "output_dir", "model", "parts", "data", "optim",
                    "loss", "eval", "augment"},
                   "");
    get_if(j, "config_version", c.config_version);
    if (c.config_version != 1)
        throw std::invalid_argument("config: unsupported config_version " +
                                    std::to_string(c.config_version) + " (this build reads 1)");
    get_if(j, "seed", c.seed);
    get_if(j, "output_dir", c.output_dir);
    if (j.contains("model")) model_from_json(j.at("model"), c.model);
    if (j.contains("parts")) {
        const auto& p = j.at("parts");
        reject_unknown(p, {"preset", "theta_override", "visibility_after_erasure"}, "parts.");
        get_if(p, "preset", c.parts_preset);
        get_if(p, "theta_override", c.theta_override);
        get_if(p, "visibility_after_erasure", c.visibility_after_erasure);
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        reject_unknown(d, {"path", "synth"}, "data.");
        get_if(d, "path", c.data.path);
        if (d.contains("synth")) synth_from_json(d.at("synth"), c.data.synth);
    }
    if (j.contains("optim")) {
        const auto& o = j.at("optim");
        reject_unknown(o,
                       {"epochs", "eval_every", "batch_ids", "instances_per_id", "lr", "momentum",
                        "weight_decay"},
                       "optim.");
        get_if(o, "epochs", c.optim.epochs);
        get_if(o, "eval_every", c.optim.eval_every);
        get_if(o, "batch_ids", c.optim.batch_ids);
        get_if(o, "instances_per_id", c.optim.instances_per_id);
        get_if(o, "lr", c.optim.lr);
        get_if(o, "momentum", c.optim.momentum);
        get_if(o, "weight_decay", c.optim.weight_decay);
    }
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        reject_unknown(l, {"lambda_pose", "margin", "smoothing", "big"}, "loss.");
        get_if(l, "lambda_pose", c.loss.lambda_pose);
        get_if(l, "margin", c.loss.margin);
        get_if(l, "smoothing", c.loss.smoothing);
        get_if(l, "big", c.loss.big);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        reject_unknown(e, {"visibility", "round_threshold", "max_rank"}, "eval.");
        get_if(e, "visibility", c.eval.visibility);
        get_if(e, "round_threshold", c.eval.round_threshold);
        get_if(e, "max_rank", c.eval.max_rank);
    }
    if (j.contains("augment")) {
        const auto& a = j.at("augment");
        reject_unknown(a,
                       {"enabled", "p_flip", "p_crop", "p_gray", "p_erase", "crop_pad",
                        "erase_min_area", "erase_max_area"},
                       "augment.");
        get_if(a, "enabled", c.augment.enabled);
        get_if(a, "p_flip", c.augment.p_flip);
        get_if(a, "p_crop", c.augment.p_crop);
        get_if(a, "p_gray", c.augment.p_gray);
        get_if(a, "p_erase", c.augment.p_erase);
        get_if(a, "crop_pad", c.augment.crop_pad);
        get_if(a, "erase_min_area", c.augment.erase_min_area);
        get_if(a, "erase_max_area", c.augment.erase_max_area);
    }
    return c;
}

}  // namespace

PartConfig RunConfig::part_config() const {
    PartConfig p = PartConfig::preset(parts_preset);
    if (!theta_override.empty()) {
        if (int(theta_override.size()) != p.parts)
            throw std::invalid_argument("config: theta_override has " +
                                        std::to_string(theta_override.size()) + " entries for " +
                                        std::to_string(p.parts) + " parts");
        p.theta = theta_override;
    }
    p.visibility_after_erasure = visibility_after_erasure;
    p.validate();
    return p;
}

void RunConfig::validate() const {
    model.validate();
    const PartConfig parts = part_config();
    if (parts.parts != model.pose_tokens)
        throw std::invalid_argument("config: parts preset '" + parts_preset + "' defines " +
                                    std::to_string(parts.parts) + " parts but the model has " +
                                    std::to_string(model.pose_tokens) + " part tokens");
    if (data.path.empty()) {
        data.synth.validate();
        if (data.synth.image_h != model.image_h || data.synth.image_w != model.image_w)
            throw std::invalid_argument("config: synth images are " +
                                        std::to_string(data.synth.image_h) + "x" +
                                        std::to_string(data.synth.image_w) + " but the model expects " +
                                        std::to_string(model.image_h) + "x" +
                                        std::to_string(model.image_w));
        if (data.synth.fragments() != parts.fragments())
            throw std::invalid_argument("config: generator emits " +
                                        std::to_string(data.synth.fragments()) +
                                        " fragment planes but parts preset '" + parts_preset +
                                        "' maps " + std::to_string(parts.fragments()));
        if (data.synth.cameras != model.cameras)
            throw std::invalid_argument("config: synth cameras " +
                                        std::to_string(data.synth.cameras) + " != model cameras " +
                                        std::to_string(model.cameras));
    }
    if (optim.epochs < 1 || optim.eval_every < 1 || optim.batch_ids < 2 ||
        optim.instances_per_id < 2)
        throw std::invalid_argument(
            "config: optim needs epochs>=1, eval_every>=1, batch_ids>=2, instances_per_id>=2");
    if (optim.lr <= 0 || optim.momentum < 0 || optim.momentum >= 1 || optim.weight_decay < 0)
        throw std::invalid_argument("config: bad optimizer hyperparameters");
    if (loss.lambda_pose < 0) throw std::invalid_argument("config: lambda_pose must be >= 0");
    if (loss.margin < 0 || loss.smoothing < 0 || loss.smoothing >= 1 || loss.big <= 1)
        throw std::invalid_argument("config: bad loss hyperparameters");
    (void)visibility_mode_from_string(eval.visibility);  // throws on bad mode
    if (eval.round_threshold < 0 || eval.round_threshold > 1)
        throw std::invalid_argument("config: round_threshold must lie in [0,1]");
    if (eval.max_rank < 1) throw std::invalid_argument("config: max_rank must be >= 1");
}

RunConfig parse_config(const std::string& json_text) {
    ordered_json j;
    try {
        j = ordered_json::parse(json_text);
    } catch (const std::exception& e) {
        throw std::invalid_argument(std::string("config: JSON parse error: ") + e.what());
    }
    return from_json(j);
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    try {
        return parse_config(ss.str());
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(std::string(e.what()) + " (in " + path + ")");
    }
}

std::string serialize_config(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

void save_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("config: cannot open for write: " + path);
    f << serialize_config(cfg);
    if (!f) throw std::runtime_error("config: write failed: " + path);
}

RunConfig preset_config(const std::string& name) {
    RunConfig c;  // defaults are the toy setup
    if (name == "toy") return c;
    if (name == "paper-scale") {
        // Full-size transformer settings; documented reference point, far
        // beyond what this CPU implementation should be asked to train.
        c.model.image_h = 256;
        c.model.image_w = 128;
        c.model.patch = 16;
        c.model.stride = 12;
        c.model.dim = 768;
        c.model.layers = 12;
        c.model.heads = 12;
        c.model.pose_tokens = 5;
        c.model.ffn_mult = 4;
        c.model.cameras = 6;
        c.data.synth.image_h = 256;
        c.data.synth.image_w = 128;
        c.data.synth.cameras = 6;
        c.optim.epochs = 320;
        c.optim.eval_every = 20;
        c.optim.batch_ids = 16;
        c.optim.instances_per_id = 4;
        c.optim.lr = 0.008f;
        c.output_dir = "runs/paper-scale";
        return c;
    }
    throw std::invalid_argument("config: unknown preset '" + name + "' (toy|paper-scale)");
}

void apply_override(RunConfig& cfg, const std::string& dotted_key, const std::string& value) {
    ordered_json j = to_json(cfg);
    std::string pointer = "/";
    for (char ch : dotted_key) pointer += ch == '.' ? '/' : ch;
    ordered_json::json_pointer ptr(pointer);
    if (!j.contains(ptr))
        throw std::invalid_argument("config: override names unknown field '" + dotted_key + "'");
    ordered_json parsed;
    try {
        parsed = ordered_json::parse(value);
    } catch (const std::exception&) {
        parsed = value;  // bare strings stay strings
    }
    const auto& current = j.at(ptr);
    if (current.is_object())
        throw std::invalid_argument("config: override field '" + dotted_key +
                                    "' is a section, not a value");
    if (current.is_string() && !parsed.is_string()) parsed = value;
    j[ptr] = parsed;
    cfg = from_json(j);
}

}  // namespace pareid
