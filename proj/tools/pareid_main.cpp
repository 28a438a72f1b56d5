// Command-line front end: dataset generation, training, evaluation with the
// visibility ablation, and attention visualization, all driven by one JSON
// config plus --set overrides.
//
// Exit codes: 0 ok, 2 usage/config error, 3 data or I/O error, 4 training
// aborted on a non-finite loss, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pareid/config.hpp"
#include "pareid/dataset.hpp"
#include "pareid/train.hpp"
#include "pareid/visualize.hpp"

namespace {

using pareid::RunConfig;
using ordered_json = nlohmann::ordered_json;

constexpr int kExitOk = 0, kExitInternal = 1, kExitConfig = 2, kExitData = 3, kExitAborted = 4;

RunConfig resolve_config(const std::string& config_path, const std::string& preset,
                         const std::vector<std::string>& overrides) {
    RunConfig cfg = config_path.empty() ? pareid::preset_config(preset)
                                        : pareid::load_config(config_path);
    for (const std::string& kv : overrides) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw std::invalid_argument("--set expects key.path=value, got '" + kv + "'");
        pareid::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

pareid::SynthDataset resolve_dataset(const RunConfig& cfg) {
    if (!cfg.data.path.empty()) return pareid::load_external(cfg.data.path);
    return pareid::generate(cfg.data.synth);
}

void print_report(const char* title, const pareid::EvalReport& r) {
    std::printf("%-18s mAP %.4f  Rank-1 %.4f  (%d queries, %d skipped)\n", title, r.mAP,
                r.cmc.empty() ? 0.0 : r.cmc[0], r.evaluated_queries, r.skipped_queries);
}

ordered_json report_json(const pareid::EvalReport& r, bool per_query) {
    ordered_json j{{"mAP", r.mAP},
                   {"cmc", r.cmc},
                   {"evaluated_queries", r.evaluated_queries},
                   {"skipped_queries", r.skipped_queries}};
    if (per_query) j["per_query_ap"] = r.per_query_ap;
    return j;
}

std::vector<int> parse_indices(const std::string& csv, int limit) {
    std::vector<int> out;
    if (csv == "all") {
        for (int i = 0; i < limit; ++i) out.push_back(i);
        return out;
    }
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw std::invalid_argument("--samples expects comma-separated indices or 'all', got '" +
                                        csv + "'");
        }
    }
    if (out.empty()) throw std::invalid_argument("--samples selected nothing");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"part-aware transformer re-identification on synthetic data"};
    app.require_subcommand(1);
    app.footer("exit codes: 0 ok, 2 config error, 3 data/io error, 4 training aborted, 1 internal");

    std::string config_path, preset = "toy";
    std::vector<std::string> overrides;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON run config; omit to use --preset defaults");
        cmd->add_option("--preset", preset, "built-in config when no --config is given (toy|paper-scale)");
        cmd->add_option("--set", overrides, "override a config field, key.path=value (repeatable)")
            ->take_all();
    };

    auto* cmd_config = app.add_subcommand("config", "print or save the resolved config");
    std::string emit_path;
    add_common(cmd_config);
    cmd_config->add_option("--emit", emit_path, "write the config to this file instead of stdout");

    auto* cmd_generate = app.add_subcommand("generate", "write the synthetic dataset to disk");
    std::string gen_out;
    add_common(cmd_generate);
    cmd_generate->add_option("--out", gen_out, "dataset directory (default <output_dir>/dataset)");

    auto* cmd_train = app.add_subcommand("train", "train and periodically evaluate");
    bool resume = false;
    add_common(cmd_train);
    cmd_train->add_flag("--resume", resume, "continue from <output_dir>/checkpoints/last.ckpt");

    auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ckpt_path;
    bool ablate = false, per_query = false;
    add_common(cmd_eval);
    cmd_eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    cmd_eval->add_flag("--ablate-visibility", ablate, "report as-is / off / round distance modes");
    cmd_eval->add_flag("--per-query", per_query, "include per-query AP in the JSON report");

    auto* cmd_vis = app.add_subcommand("visualize", "render attention panels for samples");
    std::string vis_ckpt, vis_split = "query_clean", vis_samples = "0,1,2,3", vis_out;
    bool vis_pgm = false;
    int vis_scale = 4;
    add_common(cmd_vis);
    cmd_vis->add_option("--checkpoint", vis_ckpt, "checkpoint file")->required();
    cmd_vis->add_option("--split", vis_split, "train|query|gallery|query_clean|gallery_clean");
    cmd_vis->add_option("--samples", vis_samples, "comma-separated indices or 'all'");
    cmd_vis->add_option("--out", vis_out, "output directory (default <output_dir>/vis)");
    cmd_vis->add_option("--scale", vis_scale, "nearest-neighbor upscale factor");
    cmd_vis->add_flag("--pgm", vis_pgm, "write PGM instead of PNG");

    CLI11_PARSE(app, argc, argv);

    try {
        const RunConfig cfg = resolve_config(config_path, preset, overrides);

        if (cmd_config->parsed()) {
            const std::string text = pareid::serialize_config(cfg);
            if (emit_path.empty()) {
                std::cout << text;
            } else {
                pareid::save_config(emit_path, cfg);
                std::cout << "wrote " << emit_path << "\n";
            }
            return kExitOk;
        }

        if (cmd_generate->parsed()) {
            if (!cfg.data.path.empty())
                throw std::invalid_argument(
                    "generate: config points at an external dataset (data.path is set)");
            const std::string out = gen_out.empty() ? cfg.output_dir + "/dataset" : gen_out;
            const pareid::SynthDataset ds = pareid::generate(cfg.data.synth);
            pareid::write_dataset(out, ds);
            std::cout << "wrote " << ds.train.size() << " train, " << ds.query.size() << "+"
                      << ds.gallery.size() << " occluded eval, " << ds.query_clean.size() << "+"
                      << ds.gallery_clean.size() << " clean eval samples to " << out << "\n";
            return kExitOk;
        }

        if (cmd_train->parsed()) {
            const pareid::SynthDataset ds = resolve_dataset(cfg);
            const pareid::TrainSummary sum = pareid::train_run(cfg, ds, resume);
            if (sum.aborted) {
                std::cerr << "error: train: " << sum.abort_reason << "\n";
                return kExitAborted;
            }
            std::printf("trained %d epochs (%d steps); best clean mAP %.4f\n", sum.epochs_run,
                        sum.global_steps, sum.best_clean_map);
            print_report("clean", sum.final_eval.clean);
            print_report("occluded as-is", sum.final_eval.occluded.as_is);
            std::printf("part mass %.3f  argmax acc %.3f  vis acc %.3f\n",
                        sum.final_eval.part_loc.mean_mass, sum.final_eval.part_loc.argmax_accuracy,
                        sum.final_eval.visibility_accuracy);
            std::cout << "metrics: " << sum.metrics_path << "\n";
            std::cout << "checkpoints: " << sum.best_checkpoint << " (best), "
                      << sum.last_checkpoint << " (last)\n";
            return kExitOk;
        }

        if (cmd_eval->parsed()) {
            const pareid::SynthDataset ds = resolve_dataset(cfg);
            const pareid::TrainState st = pareid::load_train_state(cfg, ckpt_path);
            const pareid::EvalPoint ep = pareid::run_eval(st.model, ds, cfg, 0);
            print_report("clean", ep.clean);
            if (ablate) {
                print_report("occluded as-is", ep.occluded.as_is);
                print_report("occluded off", ep.occluded.off);
                print_report("occluded round", ep.occluded.round);
            } else {
                print_report("occluded", ep.occluded.as_is);
            }
            std::printf("part mass %.3f  argmax acc %.3f  vis acc %.3f\n", ep.part_loc.mean_mass,
                        ep.part_loc.argmax_accuracy, ep.visibility_accuracy);
            std::filesystem::create_directories(cfg.output_dir);
            const std::string report_path = cfg.output_dir + "/eval.json";
            std::ofstream rf(report_path);
            if (!rf) throw std::runtime_error("cannot open for write: " + report_path);
            rf << ordered_json{{"clean", report_json(ep.clean, per_query)},
                               {"occluded",
                                ordered_json{{"as_is", report_json(ep.occluded.as_is, per_query)},
                                             {"off", report_json(ep.occluded.off, per_query)},
                                             {"round", report_json(ep.occluded.round, per_query)}}},
                               {"part_mass", ep.part_loc.mean_mass},
                               {"part_argmax_acc", ep.part_loc.argmax_accuracy},
                               {"vis_acc", ep.visibility_accuracy}}
                          .dump(2)
               << "\n";
            std::cout << "report: " << report_path << "\n";
            return kExitOk;
        }

        if (cmd_vis->parsed()) {
            const pareid::SynthDataset ds = resolve_dataset(cfg);
            const std::vector<pareid::SynthSample>* split = nullptr;
            if (vis_split == "train") split = &ds.train;
            else if (vis_split == "query") split = &ds.query;
            else if (vis_split == "gallery") split = &ds.gallery;
            else if (vis_split == "query_clean") split = &ds.query_clean;
            else if (vis_split == "gallery_clean") split = &ds.gallery_clean;
            else
                throw std::invalid_argument("visualize: unknown split '" + vis_split + "'");
            const pareid::TrainState st = pareid::load_train_state(cfg, vis_ckpt);
            const std::string out = vis_out.empty() ? cfg.output_dir + "/vis" : vis_out;
            const std::vector<int> indices = parse_indices(vis_samples, int(split->size()));
            pareid::write_visualizations(st.model, *split, indices, out, vis_scale, vis_pgm);
            std::cout << "wrote " << indices.size() << " panels to " << out << "\n";
            return kExitOk;
        }

        std::cerr << "error: usage: no subcommand handled\n";
        return kExitInternal;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return kExitInternal;
    }
}
