#include "pareid/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace pareid {

VisibilityMode visibility_mode_from_string(const std::string& s) {
    if (s == "as-is") return VisibilityMode::kAsIs;
    if (s == "off") return VisibilityMode::kOff;
    if (s == "round") return VisibilityMode::kRound;
    throw std::invalid_argument("unknown visibility mode '" + s + "' (as-is|off|round)");
}

std::string to_string(VisibilityMode m) {
    switch (m) {
        case VisibilityMode::kAsIs: return "as-is";
        case VisibilityMode::kOff: return "off";
        case VisibilityMode::kRound: return "round";
    }
    return "?";
}

float euclidean(const float* a, const float* b, int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = double(a[i]) - double(b[i]);
        acc += d * d;
    }
    return float(std::sqrt(acc));
}

void l2_normalize(float* v, int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += double(v[i]) * double(v[i]);
    const double norm = std::sqrt(acc);
    if (norm < 1e-12) return;  // zero vector stays zero
    for (int i = 0; i < n; ++i) v[i] = float(double(v[i]) / norm);
}

float pair_distance(const GalleryEntry& a, const GalleryEntry& b, VisibilityMode mode,
                    float round_threshold) {
    const int P = a.parts(), d = a.dim();
    if (b.parts() != P || b.dim() != d)
        throw std::invalid_argument("pair_distance: mismatched entries (" + std::to_string(P) +
                                    " vs " + std::to_string(b.parts()) + " parts, " +
                                    std::to_string(d) + " vs " + std::to_string(b.dim()) + " dims)");
    const float d_cls = euclidean(a.cls_feature.data(), b.cls_feature.data(), d);
    double num = 0.0, den = 0.0;
    for (int p = 0; p < P; ++p) {
        float va = a.visibility[p], vb = b.visibility[p];
        switch (mode) {
            case VisibilityMode::kAsIs: break;
            case VisibilityMode::kOff: va = vb = 1.0f; break;
            case VisibilityMode::kRound:
                va = va >= round_threshold ? 1.0f : 0.0f;
                vb = vb >= round_threshold ? 1.0f : 0.0f;
                break;
        }
        const double w = double(va) * double(vb);
        const float dp =
            euclidean(a.part_features.data() + std::size_t(p) * d,
                      b.part_features.data() + std::size_t(p) * d, d);
        num += double(dp) * w;
        den += w;
    }
    if (den < 1e-6) return d_cls;  // no co-visible part: class distance alone
    return float(double(d_cls) + num / den);
}

EvalReport evaluate(const std::vector<GalleryEntry>& queries,
                    const std::vector<GalleryEntry>& gallery, int max_rank, VisibilityMode mode,
                    float round_threshold) {
    if (queries.empty() || gallery.empty())
        throw std::invalid_argument("evaluate: empty query or gallery set");
    max_rank = std::min(max_rank, int(gallery.size()));
    if (max_rank < 1) throw std::invalid_argument("evaluate: max_rank must be >= 1");

    EvalReport rep;
    rep.cmc.assign(max_rank, 0.0);
    double ap_sum = 0.0;
    for (const GalleryEntry& q : queries) {
        std::vector<int> valid;
        valid.reserve(gallery.size());
        for (int g = 0; g < int(gallery.size()); ++g)
            if (!(gallery[g].id == q.id && gallery[g].camera == q.camera)) valid.push_back(g);
        int positives = 0;
        for (int g : valid) positives += gallery[g].id == q.id;
        if (positives == 0) {
            ++rep.skipped_queries;
            continue;
        }
        std::vector<float> dist(valid.size());
        for (std::size_t i = 0; i < valid.size(); ++i)
            dist[i] = pair_distance(q, gallery[valid[i]], mode, round_threshold);
        std::vector<int> order(valid.size());
        std::iota(order.begin(), order.end(), 0);
        // ties broken by gallery index so the brute-force oracle can match exactly
        std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
            if (dist[x] != dist[y]) return dist[x] < dist[y];
            return valid[x] < valid[y];
        });
        double ap = 0.0;
        int hits = 0;
        int first_hit = -1;
        for (std::size_t r = 0; r < order.size(); ++r) {
            if (gallery[valid[order[r]]].id != q.id) continue;
            ++hits;
            ap += double(hits) / double(r + 1);
            if (first_hit < 0) first_hit = int(r);
        }
        ap /= double(positives);
        ap_sum += ap;
        rep.per_query_ap.push_back(ap);
        ++rep.evaluated_queries;
        for (int k = first_hit; k < max_rank; ++k) rep.cmc[k] += 1.0;
    }
    if (rep.evaluated_queries == 0)
        throw std::runtime_error("evaluate: every query was skipped (no cross-camera positives)");
    rep.mAP = ap_sum / double(rep.evaluated_queries);
    for (double& c : rep.cmc) c /= double(rep.evaluated_queries);
    return rep;
}

AblationReport ablate_visibility(const std::vector<GalleryEntry>& queries,
                                 const std::vector<GalleryEntry>& gallery, int max_rank,
                                 float round_threshold) {
    AblationReport rep;
    rep.as_is = evaluate(queries, gallery, max_rank, VisibilityMode::kAsIs, round_threshold);
    rep.off = evaluate(queries, gallery, max_rank, VisibilityMode::kOff, round_threshold);
    rep.round = evaluate(queries, gallery, max_rank, VisibilityMode::kRound, round_threshold);
    return rep;
}

}  // namespace pareid
