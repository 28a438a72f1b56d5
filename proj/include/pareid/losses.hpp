#pragma once

// Training objective.  Identity cross-entropy and batch-hard triplet terms
// are applied to the class token and to every part token, the part terms
// teacher-forced by ground-truth visibility: invisible (sample, part) pairs
// are zeroed out of the classification average, and pair distances are
// multiplied by 0 (same identity) or a huge factor (different identity) so
// the hard-example mining never selects an occluded comparison.  Attention
// supervision pulls the layer/head-averaged cross-attention onto the
// ground-truth part distributions for visible parts only, and a BCE term
// trains the visibility head on the pseudo-labels.

#include "pareid/model.hpp"

namespace pareid {

template <class S>
struct SampleTruth {
    int label = 0;               // class index during training
    std::vector<S> heatmaps;     // [P * N] target distributions
    std::vector<S> visibility;   // [P] in {0,1}
};

template <class S>
struct LossWeights {
    S lambda_pose = S(10);
    S margin = S(0.3);
    S smoothing = S(0);
    S big = S(1e6);
};

struct LossBreakdown {
    double id_cls = 0, tri_cls = 0, id_part = 0, tri_part = 0;
    double pose_raw = 0, pose = 0, vis = 0, total = 0;
    TripletStats cls_triplet, part_triplet;  // part stats aggregated over parts
};

template <class S>
Tensor<S> reid_triplet(const Tensor<S>& feats, const std::vector<int>& ids, S margin,
                       TripletStats* st = nullptr) {
    return triplet_batch_hard(pairwise_euclidean(feats), ids, {}, margin, st);
}

// Triplet over one part's features with visibility teacher forcing.
template <class S>
Tensor<S> masked_reid_triplet(const Tensor<S>& feats, const std::vector<int>& ids,
                              const std::vector<S>& vis, S margin, S big,
                              TripletStats* st = nullptr) {
    const int B = feats.dim(0);
    if (int(vis.size()) != B)
        throw std::invalid_argument("masked_reid_triplet: " + std::to_string(vis.size()) +
                                    " visibilities for batch of " + std::to_string(B));
    std::vector<S> m(std::size_t(B) * B, S(1));
    for (int i = 0; i < B; ++i)
        for (int j = 0; j < B; ++j)
            if (vis[i] == S(0) || vis[j] == S(0))
                m[std::size_t(i) * B + j] = ids[i] == ids[j] ? S(0) : big;
    Tensor<S> mask({B, B}, std::move(m));
    Tensor<S> dmat = mul(pairwise_euclidean(feats), mask);
    std::vector<std::uint8_t> anchor_ok(B);
    for (int i = 0; i < B; ++i) anchor_ok[i] = vis[i] != S(0);
    return triplet_batch_hard(dmat, ids, anchor_ok, margin, st);
}

namespace detail {

template <class S>
std::vector<int> batch_labels(const std::vector<SampleTruth<S>>& truth) {
    std::vector<int> ids;
    ids.reserve(truth.size());
    for (const auto& t : truth) ids.push_back(t.label);
    return ids;
}

// Stack one row of each sample's part features: [B,d] for part p.
template <class S>
Tensor<S> part_feature_matrix(const std::vector<ModelOutput<S>>& outs, int p) {
    std::vector<Tensor<S>> rows;
    rows.reserve(outs.size());
    for (const auto& o : outs) rows.push_back(slice_rows(o.part_features, p, 1));
    return concat_rows(rows);
}

}  // namespace detail

template <class S>
Tensor<S> class_token_id_loss(const std::vector<ModelOutput<S>>& outs,
                              const ClassifierHeads<S>& heads,
                              const std::vector<SampleTruth<S>>& truth, S smoothing) {
    std::vector<Tensor<S>> terms;
    terms.reserve(outs.size());
    for (std::size_t b = 0; b < outs.size(); ++b)
        terms.push_back(cross_entropy_logits(heads.cls(outs[b].cls_feature), truth[b].label, smoothing));
    return scale(add_n(terms), S(1.0 / double(outs.size())));
}

template <class S>
Tensor<S> class_token_triplet(const std::vector<ModelOutput<S>>& outs,
                              const std::vector<SampleTruth<S>>& truth, S margin,
                              TripletStats* st = nullptr) {
    std::vector<Tensor<S>> rows;
    rows.reserve(outs.size());
    for (const auto& o : outs) rows.push_back(o.cls_feature);
    return reid_triplet(concat_rows(rows), detail::batch_labels(truth), margin, st);
}

// Cross-entropy per (sample, part), zeroed where the part is invisible and
// averaged over the visible pairs.  Every head still enters the graph, so
// all classifier parameters end the step with (possibly zero) gradients.
template <class S>
Tensor<S> masked_part_id_loss(const std::vector<ModelOutput<S>>& outs,
                              const ClassifierHeads<S>& heads,
                              const std::vector<SampleTruth<S>>& truth, S smoothing) {
    const int P = outs[0].part_features.dim(0);
    double visible = 0.0;
    for (const auto& t : truth)
        for (int p = 0; p < P; ++p) visible += double(t.visibility[p]);
    std::vector<Tensor<S>> terms;
    terms.reserve(outs.size() * P);
    for (std::size_t b = 0; b < outs.size(); ++b) {
        for (int p = 0; p < P; ++p) {
            Tensor<S> logits = heads.part[p](slice_rows(outs[b].part_features, p, 1));
            Tensor<S> ce = cross_entropy_logits(logits, truth[b].label, smoothing);
            terms.push_back(scale(ce, truth[b].visibility[p]));
        }
    }
    if (visible == 0.0) return Tensor<S>::scalar(S(0));
    return scale(add_n(terms), S(1.0 / visible));
}

// Mean over parts of per-part teacher-forced triplets; a part with no
// eligible anchors contributes exactly zero.
template <class S>
Tensor<S> masked_part_triplet(const std::vector<ModelOutput<S>>& outs,
                              const std::vector<SampleTruth<S>>& truth, S margin, S big,
                              TripletStats* st = nullptr) {
    const int P = outs[0].part_features.dim(0);
    const std::vector<int> ids = detail::batch_labels(truth);
    std::vector<Tensor<S>> terms;
    TripletStats agg;
    for (int p = 0; p < P; ++p) {
        std::vector<S> vis(outs.size());
        for (std::size_t b = 0; b < outs.size(); ++b) vis[b] = truth[b].visibility[p];
        TripletStats ps;
        terms.push_back(masked_reid_triplet(detail::part_feature_matrix(outs, p), ids, vis, margin,
                                            big, &ps));
        agg.anchors_included += ps.anchors_included;
        agg.anchors_skipped += ps.anchors_skipped;
    }
    agg.all_excluded = agg.anchors_included == 0;
    if (st) *st = agg;
    return scale(add_n(terms), S(1.0 / double(P)));
}

// Mean squared error between the layer/head-averaged cross-attention map and
// the ground-truth distributions, restricted to visible parts.
template <class S>
Tensor<S> pose_alignment_loss(const std::vector<ModelOutput<S>>& outs,
                              const std::vector<SampleTruth<S>>& truth) {
    std::vector<Tensor<S>> terms;
    terms.reserve(outs.size());
    for (std::size_t b = 0; b < outs.size(); ++b) {
        Tensor<S> avg = averaged_attention(outs[b]);  // [P,N]
        const int P = avg.dim(0), N = avg.dim(1);
        if (int(truth[b].heatmaps.size()) != P * N)
            throw std::invalid_argument("pose loss: target has " +
                                        std::to_string(truth[b].heatmaps.size()) + " values, map is " +
                                        shape_str(avg.shape()));
        int p_vis = 0;
        std::vector<S> mask(std::size_t(P) * N);
        for (int p = 0; p < P; ++p) {
            const S v = truth[b].visibility[p];
            if (v != S(0)) ++p_vis;
            std::fill_n(mask.begin() + std::size_t(p) * N, N, v);
        }
        if (p_vis == 0) {
            terms.push_back(Tensor<S>::scalar(S(0)));
            continue;
        }
        Tensor<S> gt({P, N}, truth[b].heatmaps);
        Tensor<S> diff = sub(avg, gt);
        Tensor<S> sq = mul(diff, diff);
        Tensor<S> masked = mul(sq, Tensor<S>({P, N}, std::move(mask)));
        terms.push_back(scale(sum_all(masked), S(1.0 / (double(p_vis) * N))));
    }
    return scale(add_n(terms), S(1.0 / double(outs.size())));
}

template <class S>
Tensor<S> visibility_loss(const std::vector<ModelOutput<S>>& outs,
                          const std::vector<SampleTruth<S>>& truth) {
    std::vector<Tensor<S>> terms;
    terms.reserve(outs.size());
    for (std::size_t b = 0; b < outs.size(); ++b)
        terms.push_back(bce_mean(outs[b].visibility, truth[b].visibility));
    return scale(add_n(terms), S(1.0 / double(outs.size())));
}

// Full objective; per-term values land in the breakdown before backward.
template <class S>
Tensor<S> total_loss(const std::vector<ModelOutput<S>>& outs, const ClassifierHeads<S>& heads,
                     const std::vector<SampleTruth<S>>& truth, const LossWeights<S>& w,
                     LossBreakdown* breakdown = nullptr) {
    if (outs.empty() || outs.size() != truth.size())
        throw std::invalid_argument("total_loss: " + std::to_string(outs.size()) + " outputs vs " +
                                    std::to_string(truth.size()) + " truths");
    LossBreakdown bd;
    Tensor<S> id_cls = class_token_id_loss(outs, heads, truth, w.smoothing);
    Tensor<S> tri_cls = class_token_triplet(outs, truth, w.margin, &bd.cls_triplet);
    Tensor<S> id_part = masked_part_id_loss(outs, heads, truth, w.smoothing);
    Tensor<S> tri_part = masked_part_triplet(outs, truth, w.margin, w.big, &bd.part_triplet);
    Tensor<S> vis = visibility_loss(outs, truth);
    Tensor<S> total = add_n<S>({id_cls, tri_cls, id_part, tri_part, vis});
    bd.id_cls = double(id_cls.item());
    bd.tri_cls = double(tri_cls.item());
    bd.id_part = double(id_part.item());
    bd.tri_part = double(tri_part.item());
    bd.vis = double(vis.item());
    if (w.lambda_pose != S(0)) {
        Tensor<S> pose = pose_alignment_loss(outs, truth);
        Tensor<S> weighted = scale(pose, w.lambda_pose);
        bd.pose_raw = double(pose.item());
        bd.pose = double(weighted.item());
        total = add(total, weighted);
    }
    bd.total = double(total.item());
    if (breakdown) *breakdown = bd;
    return total;
}

}  // namespace pareid
