#include "pareid/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace pareid {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kModelStream = 0xB0D1u;
constexpr std::uint64_t kHeadStream = 0x4EAD5u;
constexpr std::uint64_t kEpochStream = 0xE90Cu;
constexpr std::uint64_t kAugmentStream = 0xA06u;

void shuffle_ints(std::vector<int>& v, Rng& rng) {
    for (int i = int(v.size()) - 1; i > 0; --i) std::swap(v[i], v[rng.uniform_int(i + 1)]);
}

GridGeom geom_of(const ModelConfig& m) { return GridGeom{m.image_h, m.image_w, m.patch, m.stride}; }

// Grid rectangles of the bands belonging to one part.
std::vector<GridRect> part_band_rects(const SynthSample& s, const PartConfig& parts, int p,
                                      const GridGeom& g) {
    const int bands = int(s.band_rects.size());
    if (bands == 0 || parts.fragments() % bands != 0)
        throw std::invalid_argument("part bands: " + std::to_string(parts.fragments()) +
                                    " fragments do not map onto " + std::to_string(bands) +
                                    " bands");
    const int fpb = parts.fragments() / bands;
    std::vector<GridRect> rects;
    for (int f = 0; f < parts.fragments(); ++f)
        if (parts.fragment_to_part[f] == p) {
            const PixelRect& br = s.band_rects[f / fpb];
            const GridRect r = pixel_rect_to_grid(br.y0, br.x0, br.y1, br.x1, g);
            if (!r.empty()) rects.push_back(r);
        }
    return rects;
}

bool cell_in_rects(int r, int c, const std::vector<GridRect>& rects) {
    for (const GridRect& g : rects)
        if (r >= g.r0 && r < g.r1 && c >= g.c0 && c < g.c1) return true;
    return false;
}

ordered_json loss_json(const LossBreakdown& bd) {
    return ordered_json{{"id_cls", bd.id_cls},     {"tri_cls", bd.tri_cls},
                        {"id_part", bd.id_part},   {"tri_part", bd.tri_part},
                        {"pose_raw", bd.pose_raw}, {"pose", bd.pose},
                        {"vis", bd.vis},           {"total", bd.total}};
}

ordered_json report_json(const EvalReport& r) {
    return ordered_json{{"mAP", r.mAP},
                        {"rank1", r.cmc.empty() ? 0.0 : r.cmc[0]},
                        {"evaluated", r.evaluated_queries},
                        {"skipped", r.skipped_queries}};
}

ordered_json eval_json(const EvalPoint& ep) {
    return ordered_json{
        {"type", "eval"},
        {"epoch", ep.epoch},
        {"clean", report_json(ep.clean)},
        {"occluded", ordered_json{{"as_is", report_json(ep.occluded.as_is)},
                                  {"off", report_json(ep.occluded.off)},
                                  {"round", report_json(ep.occluded.round)}}},
        {"part_mass", ep.part_loc.mean_mass},
        {"part_argmax_acc", ep.part_loc.argmax_accuracy},
        {"part_pairs", ep.part_loc.counted_parts},
        {"vis_acc", ep.visibility_accuracy}};
}

// Checkpoints carry parameters, optimizer velocity, and progress scalars.
void save_state(const std::string& path, const ParamList<float>& params,
                SgdMomentum<float>& opt, int next_epoch, int global_step, double best_map,
                int classes) {
    std::vector<StoredTensor> ts;
    ts.reserve(params.size() * 2 + 4);
    for (const auto& [name, t] : params) ts.push_back({name, t.shape(), t.data()});
    for (auto& [name, vec] : opt.state()) ts.push_back({name, {int(vec->size())}, *vec});
    auto meta = [&](const std::string& name, float v) {
        ts.push_back({name, {1}, {v}});
    };
    meta("meta.next_epoch", float(next_epoch));
    meta("meta.global_step", float(global_step));
    meta("meta.best_map", float(best_map));
    meta("meta.classes", float(classes));
    save_checkpoint(path, ts);
}

float meta_value(const std::vector<StoredTensor>& ts, const std::string& name,
                 const std::string& path) {
    const StoredTensor* t = find_tensor(ts, name);
    if (!t || t->data.size() != 1)
        throw std::runtime_error("checkpoint lacks scalar '" + name + "': " + path);
    return t->data[0];
}

}  // namespace

TrainState TrainState::create(const RunConfig& cfg, int classes) {
    TrainState st;
    st.model = PAModel<float>::init(cfg.model, mix_seed(cfg.seed, kModelStream));
    Rng hr(mix_seed(cfg.seed, kHeadStream));
    st.heads = ClassifierHeads<float>::init(cfg.model.dim, cfg.model.pose_tokens, classes, hr,
                                            cfg.model.init_std);
    st.classes = classes;
    st.params = st.model.params();
    st.heads.reg(st.params, "heads");
    return st;
}

std::vector<std::vector<int>> plan_epoch(const std::vector<SynthSample>& train, int batch_ids,
                                         int instances_per_id, std::uint64_t seed, int epoch) {
    if (train.empty()) throw std::invalid_argument("plan_epoch: empty train split");
    if (batch_ids < 2 || instances_per_id < 2)
        throw std::invalid_argument("plan_epoch: need batch_ids >= 2 and instances_per_id >= 2");
    std::map<int, std::vector<int>> by_id;
    for (int i = 0; i < int(train.size()); ++i) {
        if (train[i].label < 0)
            throw std::invalid_argument("plan_epoch: sample " + std::to_string(i) +
                                        " has no train label");
        by_id[train[i].label].push_back(i);
    }
    Rng rng(mix_seed(mix_seed(seed, kEpochStream), std::uint64_t(epoch)));

    // Per-identity chunks of `instances_per_id` consecutive picks.
    std::map<int, std::vector<std::vector<int>>> chunks;
    int rounds = 0;
    for (auto& [id, idx] : by_id) {
        shuffle_ints(idx, rng);
        auto& cs = chunks[id];
        for (std::size_t start = 0; start < idx.size(); start += instances_per_id)
            cs.emplace_back(idx.begin() + start,
                            idx.begin() + std::min(idx.size(), start + instances_per_id));
        rounds = std::max(rounds, int(cs.size()));
    }

    // Round-robin over chunk rounds so every batch mixes distinct identities
    // and the batch count is the same for every epoch.
    std::vector<std::vector<int>> batches;
    for (int r = 0; r < rounds; ++r) {
        std::vector<int> ids_r;
        for (const auto& [id, cs] : chunks)
            if (r < int(cs.size())) ids_r.push_back(id);
        shuffle_ints(ids_r, rng);
        for (std::size_t g = 0; g < ids_r.size(); g += batch_ids) {
            std::vector<int> batch;
            for (std::size_t k = g; k < std::min(ids_r.size(), g + batch_ids); ++k) {
                const auto& c = chunks[ids_r[k]][r];
                batch.insert(batch.end(), c.begin(), c.end());
            }
            batches.push_back(std::move(batch));
        }
    }
    return batches;
}

GalleryEntry extract_entry(const PAModel<float>& model, const SynthSample& s) {
    const ModelOutput<float> out = model.forward(s.image, s.camera);
    GalleryEntry e;
    e.cls_feature = out.cls_feature.data();
    l2_normalize(e.cls_feature.data(), int(e.cls_feature.size()));
    e.part_features = out.part_features.data();
    const int P = out.part_features.dim(0), d = out.part_features.dim(1);
    for (int p = 0; p < P; ++p) l2_normalize(e.part_features.data() + std::size_t(p) * d, d);
    e.visibility = out.visibility.data();
    e.id = s.id;
    e.camera = s.camera;
    return e;
}

std::vector<GalleryEntry> extract_features(const PAModel<float>& model,
                                           const std::vector<SynthSample>& samples) {
    std::vector<GalleryEntry> out;
    out.reserve(samples.size());
    for (const SynthSample& s : samples) out.push_back(extract_entry(model, s));
    return out;
}

PartLocMetrics part_localization(const PAModel<float>& model,
                                 const std::vector<SynthSample>& samples,
                                 const PartConfig& parts) {
    const GridGeom g = geom_of(model.cfg);
    PartLocMetrics m;
    double mass_sum = 0.0;
    int argmax_hits = 0;
    for (const SynthSample& s : samples) {
        const PartGroundTruth gt = sample_ground_truth(s, parts, g);
        const ModelOutput<float> out = model.forward(s.image, s.camera);
        const Tensor<float> avg = averaged_attention(out);
        const int P = avg.dim(0), N = avg.dim(1);
        const std::vector<float>& a = avg.data();
        for (int p = 0; p < P; ++p) {
            if (gt.visibility[p] == 0.0f) continue;
            const std::vector<GridRect> rects = part_band_rects(s, parts, p, g);
            if (rects.empty()) continue;
            double mass = 0.0;
            int best = 0;
            for (int n = 0; n < N; ++n) {
                const float v = a[std::size_t(p) * N + n];
                if (v > a[std::size_t(p) * N + best]) best = n;
                if (cell_in_rects(n / g.cols(), n % g.cols(), rects)) mass += double(v);
            }
            mass_sum += mass;
            argmax_hits += cell_in_rects(best / g.cols(), best % g.cols(), rects);
            ++m.counted_parts;
        }
    }
    if (m.counted_parts > 0) {
        m.mean_mass = mass_sum / double(m.counted_parts);
        m.argmax_accuracy = double(argmax_hits) / double(m.counted_parts);
    }
    return m;
}

double visibility_accuracy(const PAModel<float>& model, const std::vector<SynthSample>& samples,
                           const PartConfig& parts) {
    if (samples.empty()) return 0.0;
    const GridGeom g = geom_of(model.cfg);
    int hits = 0, total = 0;
    for (const SynthSample& s : samples) {
        const PartGroundTruth gt = sample_ground_truth(s, parts, g);
        const ModelOutput<float> out = model.forward(s.image, s.camera);
        const std::vector<float>& v = out.visibility.data();
        for (int p = 0; p < int(v.size()); ++p) {
            hits += (v[p] >= 0.5f ? 1.0f : 0.0f) == gt.visibility[p];
            ++total;
        }
    }
    return double(hits) / double(total);
}

EvalPoint run_eval(const PAModel<float>& model, const SynthDataset& ds, const RunConfig& cfg,
                   int epoch) {
    if (ds.query.empty() || ds.gallery.empty() || ds.query_clean.empty() ||
        ds.gallery_clean.empty())
        throw std::runtime_error("run_eval: dataset is missing eval splits");
    const PartConfig parts = cfg.part_config();
    const VisibilityMode mode = visibility_mode_from_string(cfg.eval.visibility);

    EvalPoint ep;
    ep.epoch = epoch;
    ep.clean = evaluate(extract_features(model, ds.query_clean),
                        extract_features(model, ds.gallery_clean), cfg.eval.max_rank, mode,
                        cfg.eval.round_threshold);
    ep.occluded = ablate_visibility(extract_features(model, ds.query),
                                    extract_features(model, ds.gallery), cfg.eval.max_rank,
                                    cfg.eval.round_threshold);
    std::vector<SynthSample> clean_all = ds.query_clean;
    clean_all.insert(clean_all.end(), ds.gallery_clean.begin(), ds.gallery_clean.end());
    ep.part_loc = part_localization(model, clean_all, parts);
    std::vector<SynthSample> all = ds.query;
    all.insert(all.end(), ds.gallery.begin(), ds.gallery.end());
    all.insert(all.end(), clean_all.begin(), clean_all.end());
    ep.visibility_accuracy = visibility_accuracy(model, all, parts);
    return ep;
}

TrainSummary train_run(const RunConfig& cfg, const SynthDataset& ds, bool resume) {
    cfg.validate();
    if (ds.train.empty()) throw std::invalid_argument("train_run: dataset has no train split");
    int classes = 0;
    for (const SynthSample& s : ds.train) {
        if (s.label < 0) throw std::invalid_argument("train_run: train sample without label");
        classes = std::max(classes, s.label + 1);
    }

    fs::create_directories(cfg.output_dir + "/checkpoints");
    save_config(cfg.output_dir + "/config.json", cfg);
    const std::string metrics_path = cfg.output_dir + "/metrics.jsonl";
    const std::string last_path = cfg.output_dir + "/checkpoints/last.ckpt";
    const std::string best_path = cfg.output_dir + "/checkpoints/best.ckpt";

    TrainState st = TrainState::create(cfg, classes);
    SgdMomentum<float> opt(st.params, cfg.optim.momentum, cfg.optim.weight_decay);

    int start_epoch = 0, gstep = 0;
    double best_map = -1.0;
    if (resume) {
        const std::vector<StoredTensor> ts = load_checkpoint(last_path);
        if (int(meta_value(ts, "meta.classes", last_path)) != classes)
            throw std::runtime_error("resume: checkpoint was trained with a different class count");
        restore_params(ts, st.params);
        for (auto& [name, vec] : opt.state()) {
            const StoredTensor* t = find_tensor(ts, name);
            if (!t || t->data.size() != vec->size())
                throw std::runtime_error("resume: checkpoint lacks optimizer state '" + name +
                                         "': " + last_path);
            *vec = t->data;
        }
        start_epoch = int(meta_value(ts, "meta.next_epoch", last_path));
        gstep = int(meta_value(ts, "meta.global_step", last_path));
        best_map = meta_value(ts, "meta.best_map", last_path);
    }

    std::ofstream mf(metrics_path, resume ? std::ios::app : std::ios::trunc);
    if (!mf) throw std::runtime_error("train_run: cannot open " + metrics_path);

    const int steps_per_epoch =
        int(plan_epoch(ds.train, cfg.optim.batch_ids, cfg.optim.instances_per_id, cfg.seed, 0)
                .size());
    const int total_steps = steps_per_epoch * cfg.optim.epochs;
    const LossWeights<float> lw{cfg.loss.lambda_pose, cfg.loss.margin, cfg.loss.smoothing,
                                cfg.loss.big};
    const PartConfig parts = cfg.part_config();
    const GridGeom geom = geom_of(cfg.model);

    TrainSummary summary;
    summary.metrics_path = metrics_path;
    summary.last_checkpoint = last_path;
    summary.best_checkpoint = best_path;
    summary.global_steps = gstep;

    for (int epoch = start_epoch; epoch < cfg.optim.epochs; ++epoch) {
        const auto batches =
            plan_epoch(ds.train, cfg.optim.batch_ids, cfg.optim.instances_per_id, cfg.seed, epoch);
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            Tape<float> tape;
            std::vector<ModelOutput<float>> outs;
            std::vector<SampleTruth<float>> truths;
            outs.reserve(batches[bi].size());
            for (int idx : batches[bi]) {
                SynthSample s = ds.train[idx];
                Rng arng(mix_seed(mix_seed(cfg.seed, kAugmentStream),
                                  (std::uint64_t(epoch) << 32) | std::uint64_t(idx)));
                augment(s, cfg.augment, arng);
                const PartGroundTruth gt = sample_ground_truth(s, parts, geom);
                outs.push_back(st.model.forward(s.image, s.camera));
                truths.push_back({s.label, gt.heatmaps, gt.visibility});
            }
            LossBreakdown bd;
            Tensor<float> loss = total_loss(outs, st.heads, truths, lw, &bd);

            const std::pair<const char*, double> terms[] = {
                {"id_cls", bd.id_cls},   {"tri_cls", bd.tri_cls}, {"id_part", bd.id_part},
                {"tri_part", bd.tri_part}, {"pose", bd.pose},     {"vis", bd.vis},
                {"total", bd.total}};
            for (const auto& [name, value] : terms) {
                if (std::isfinite(value)) continue;
                mf << ordered_json{{"type", "abort"},
                                   {"epoch", epoch},
                                   {"global_step", gstep},
                                   {"term", name},
                                   {"value", "non-finite"}}
                          .dump()
                   << '\n';
                summary.aborted = true;
                summary.abort_reason = std::string("loss term '") + name +
                                       "' became non-finite at epoch " + std::to_string(epoch) +
                                       ", step " + std::to_string(gstep) +
                                       "; last good checkpoint: " + last_path;
                summary.epochs_run = epoch;
                return summary;
            }

            tape.backward(loss);
            const double lr = cosine_lr(std::min(gstep, total_steps), total_steps, cfg.optim.lr);
            opt.step(float(lr));
            ++gstep;

            mf << ordered_json{{"type", "step"},
                               {"epoch", epoch},
                               {"batch", bi},
                               {"global_step", gstep},
                               {"lr", lr},
                               {"batch_size", batches[bi].size()},
                               {"loss", loss_json(bd)},
                               {"cls_anchors", bd.cls_triplet.anchors_included},
                               {"part_anchors", bd.part_triplet.anchors_included}}
                      .dump()
               << '\n';
        }
        summary.epochs_run = epoch + 1;
        summary.global_steps = gstep;

        const bool last_epoch = epoch + 1 == cfg.optim.epochs;
        if ((epoch + 1) % cfg.optim.eval_every == 0 || last_epoch) {
            const EvalPoint ep = run_eval(st.model, ds, cfg, epoch + 1);
            mf << eval_json(ep).dump() << '\n';
            summary.final_eval = ep;
            if (ep.clean.mAP > best_map) {
                best_map = ep.clean.mAP;
                save_state(best_path, st.params, opt, epoch + 1, gstep, best_map, classes);
            }
        }
        save_state(last_path, st.params, opt, epoch + 1, gstep, best_map, classes);
    }
    summary.best_clean_map = best_map;
    return summary;
}

TrainState load_train_state(const RunConfig& cfg, const std::string& checkpoint_path) {
    const std::vector<StoredTensor> ts = load_checkpoint(checkpoint_path);
    const int classes = int(meta_value(ts, "meta.classes", checkpoint_path));
    TrainState st = TrainState::create(cfg, classes);
    restore_params(ts, st.params);
    return st;
}

}  // namespace pareid
