#pragma once

// Inference-time matching.  Query/gallery entries carry an L2-normalized
// class-token feature, per-part L2-normalized features, and visibility
// scores.  The pair distance is the class distance plus a visibility-weighted
// average of part distances; standard mAP / CMC evaluation on top, with the
// usual same-identity-same-camera exclusion.

#include <string>
#include <vector>

namespace pareid {

struct GalleryEntry {
    std::vector<float> cls_feature;   // [d]
    std::vector<float> part_features; // [P*d], row-major
    std::vector<float> visibility;    // [P]
    int id = 0, camera = 0;

    int parts() const { return int(visibility.size()); }
    int dim() const { return int(cls_feature.size()); }
};

enum class VisibilityMode {
    kAsIs,  // use the predicted scores
    kOff,   // treat every score as 1
    kRound, // round scores to {0,1}
};

VisibilityMode visibility_mode_from_string(const std::string& s);
std::string to_string(VisibilityMode m);

float euclidean(const float* a, const float* b, int n);
void l2_normalize(float* v, int n);

// d_cls + sum_p d_p v_p^a v_p^b / sum_p v_p^a v_p^b; when the weight sum
// falls below 1e-6 (no co-visible parts) the class distance stands alone.
float pair_distance(const GalleryEntry& a, const GalleryEntry& b, VisibilityMode mode,
                    float round_threshold = 0.5f);

struct EvalReport {
    double mAP = 0.0;
    std::vector<double> cmc;           // cmc[k-1] = fraction matched within top-k
    std::vector<double> per_query_ap;  // one entry per evaluated (non-skipped) query
    int evaluated_queries = 0;
    int skipped_queries = 0;  // no cross-camera positive existed
};

EvalReport evaluate(const std::vector<GalleryEntry>& queries,
                    const std::vector<GalleryEntry>& gallery, int max_rank, VisibilityMode mode,
                    float round_threshold = 0.5f);

struct AblationReport {
    EvalReport as_is, off, round;
};

AblationReport ablate_visibility(const std::vector<GalleryEntry>& queries,
                                 const std::vector<GalleryEntry>& gallery, int max_rank,
                                 float round_threshold = 0.5f);

}  // namespace pareid
