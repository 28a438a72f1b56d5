#include "pareid/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace pareid {

namespace {

constexpr std::uint64_t kTintStream = 0x7157u;
constexpr std::uint64_t kColorStream = 0xC010u;
constexpr std::uint64_t kTrainStream = 0xA115u;
constexpr std::uint64_t kEvalStream = 0xE7A1u;

// Identity is a two-level code.  Coarse level: a per-group tint multiplies
// every band, so the image-wide color average separates GROUPS and gives a
// fresh network an easy first foothold.  Fine level: within a group every
// identity wears a distinct PERMUTATION of the same base colors, so group
// members share their color average and only the spatial arrangement tells
// them apart.  Telling group members apart therefore requires features that
// look at the right place, which is the whole point of the part mechanism.
constexpr std::array<float, 3> kBandColors[6] = {
    {0.90f, 0.15f, 0.15f},  // red
    {0.15f, 0.80f, 0.20f},  // green
    {0.15f, 0.30f, 0.90f},  // blue
    {0.90f, 0.85f, 0.15f},  // yellow
    {0.80f, 0.20f, 0.85f},  // magenta
    {0.15f, 0.85f, 0.85f},  // cyan (sixth band only)
};

// Group tints sit well apart in color space (component steps ~0.4 versus a
// camera tint range of 0.2), so the coarse cue survives the camera nuisance.
constexpr std::array<float, 3> kGroupTints[8] = {
    {1.00f, 1.00f, 1.00f}, {1.00f, 0.60f, 0.60f}, {0.60f, 1.00f, 0.60f},
    {0.60f, 0.60f, 1.00f}, {1.00f, 1.00f, 0.55f}, {1.00f, 0.55f, 1.00f},
    {0.55f, 1.00f, 1.00f}, {0.62f, 0.62f, 0.62f},
};

int factorial(int n) {
    int f = 1;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
}

float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }
float quantize_u8(float v) { return std::round(clamp01(v) * 255.0f) / 255.0f; }

}  // namespace

void SynthSpec::validate(bool triplet_training) const {
    if (num_ids < 2 || eval_ids < 1)
        throw std::invalid_argument("synth spec: need at least 2 train and 1 eval identities");
    if (triplet_training && images_per_id < 2)
        throw std::invalid_argument(
            "synth spec: images_per_id < 2 cannot form positive pairs for triplet training");
    if (eval_images_per_id < 2)
        throw std::invalid_argument("synth spec: eval_images_per_id must be >= 2 (query + gallery)");
    if (image_h < 16 || image_w < 12)
        throw std::invalid_argument("synth spec: image too small, need >= 16x12");
    if (cameras < 1) throw std::invalid_argument("synth spec: cameras must be >= 1");
    if (bands != 5 && bands != 6)
        throw std::invalid_argument("synth spec: bands must be 5 or 6, got " + std::to_string(bands));
    if (fragments_per_band != 1 && fragments_per_band != 2)
        throw std::invalid_argument("synth spec: fragments_per_band must be 1 or 2");
    if (tint_groups < 1 || tint_groups > 8)
        throw std::invalid_argument("synth spec: tint_groups must lie in [1,8]");
    auto prob_ok = [](float p) { return p >= 0.0f && p <= 1.0f; };
    if (!prob_ok(occlusion_probability) || !prob_ok(eval_occlusion_probability))
        throw std::invalid_argument("synth spec: occlusion probabilities must lie in [0,1]");
    if (occluder_min_h <= 0 || occluder_max_h > 1 || occluder_min_h > occluder_max_h ||
        occluder_min_w <= 0 || occluder_max_w > 1 || occluder_min_w > occluder_max_w)
        throw std::invalid_argument("synth spec: occluder size fractions must be ordered in (0,1]");
    if (noise < 0 || noise > 0.2f)
        throw std::invalid_argument("synth spec: noise must lie in [0,0.2]");
    if (num_ids + eval_ids > factorial(bands))
        throw std::invalid_argument("synth spec: " + std::to_string(num_ids + eval_ids) +
                                    " identities exceed the " + std::to_string(factorial(bands)) +
                                    " distinct band arrangements");
}

// Equal heights: with a uniform layout the global color average carries no
// identity information (see kBandColors), so features must localize.
std::vector<float> SynthSpec::band_fractions() const {
    return std::vector<float>(std::size_t(bands), 1.0f / float(bands));
}

namespace {

SynthSample render_sample(const SynthSpec& spec, const std::vector<std::array<float, 3>>& colors,
                          const std::array<float, 3>& tint, int id, int camera, int label,
                          std::uint64_t sample_seed, float occlusion_probability) {
    const int H = spec.image_h, W = spec.image_w;
    SynthSample s;
    s.h = H;
    s.w = W;
    s.id = id;
    s.camera = camera;
    s.label = label;
    s.image.assign(std::size_t(3) * H * W, 0.0f);

    Rng rf(mix_seed(sample_seed, 1));  // figure geometry — shared by clean/occluded variants
    Rng ro(mix_seed(sample_seed, 2));  // occluders only
    Rng rn(mix_seed(sample_seed, 3));  // background + pixel noise

    // Figure placement with a little jitter.
    const int fw = std::max(4, int(W * 0.72f + 0.5f));
    const int fh = std::max(2 * spec.bands, int(H * 0.88f + 0.5f));
    const int jx = std::max(1, W / 16), jy = std::max(1, H / 21);
    int fx0 = std::clamp((W - fw) / 2 + rf.uniform_int(2 * jx + 1) - jx, 0, W - fw);
    int fy0 = std::clamp((H - fh) / 2 + rf.uniform_int(2 * jy + 1) - jy, 0, H - fh);

    // Band boundaries: cumulative fractions of the figure height, interior
    // boundaries jittered while staying strictly increasing.
    const std::vector<float> frac = spec.band_fractions();
    std::vector<int> b(spec.bands + 1);
    b[0] = fy0;
    float cum = 0.0f;
    for (int k = 1; k < spec.bands; ++k) {
        cum += frac[k - 1];
        b[k] = fy0 + int(fh * cum + 0.5f);
    }
    b[spec.bands] = fy0 + fh;
    const int jb = std::max(1, fh / 40);
    for (int k = 1; k < spec.bands; ++k) {
        b[k] += rf.uniform_int(2 * jb + 1) - jb;
        b[k] = std::clamp(b[k], b[k - 1] + 2, fy0 + fh - 2 * (spec.bands - k));
    }
    s.band_rects.resize(spec.bands);
    for (int k = 0; k < spec.bands; ++k) s.band_rects[k] = {b[k], fx0, b[k + 1], fx0 + fw};

    // Background, then the figure.
    const float bg_base = 0.40f + 0.30f * float(rn.uniform());
    std::array<float, 3> bg;
    for (int c = 0; c < 3; ++c) bg[c] = clamp01(bg_base + 0.06f * (float(rn.uniform()) - 0.5f));
    for (int c = 0; c < 3; ++c)
        std::fill_n(s.image.begin() + std::size_t(c) * H * W, std::size_t(H) * W, bg[c]);
    for (int k = 0; k < spec.bands; ++k)
        for (int c = 0; c < 3; ++c)
            for (int y = b[k]; y < b[k + 1]; ++y)
                for (int x = fx0; x < fx0 + fw; ++x) s.px(c, y, x) = colors[k][c];

    // Occluders are dark rectangles painted over everything.
    if (ro.uniform() < occlusion_probability) {
        const int count = 1 + (ro.uniform() < 0.3 ? 1 : 0);
        for (int o = 0; o < count; ++o) {
            const int oh = std::clamp(
                int(H * (spec.occluder_min_h +
                         (spec.occluder_max_h - spec.occluder_min_h) * float(ro.uniform())) + 0.5f),
                1, H);
            const int ow = std::clamp(
                int(W * (spec.occluder_min_w +
                         (spec.occluder_max_w - spec.occluder_min_w) * float(ro.uniform())) + 0.5f),
                1, W);
            const int oy = ro.uniform_int(H - oh + 1);
            const int ox = ro.uniform_int(W - ow + 1);
            std::array<float, 3> oc;
            for (int c = 0; c < 3; ++c) oc[c] = 0.02f + 0.10f * float(ro.uniform());
            for (int c = 0; c < 3; ++c)
                for (int y = oy; y < oy + oh; ++y)
                    for (int x = ox; x < ox + ow; ++x) s.px(c, y, x) = oc[c];
            s.occluders.push_back({oy, ox, oy + oh, ox + ow});
        }
    }

    // Camera tint, sensor noise, 8-bit quantization (so files round-trip).
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                float v = s.px(c, y, x) * tint[c] + spec.noise * (2.0f * float(rn.uniform()) - 1.0f);
                s.px(c, y, x) = quantize_u8(v);
            }

    // Fragment confidence planes: one or two Gaussian blobs per band, peak
    // equal to the fraction of the band left uncovered.
    const int fpb = spec.fragments_per_band;
    const int F = spec.bands * fpb;
    s.fragments = PlaneStack(F, H, W);
    s.confidence.assign(F, 0.0f);
    for (int k = 0; k < spec.bands; ++k) {
        const PixelRect& br = s.band_rects[k];
        const int bh = br.y1 - br.y0;
        int covered = 0;
        for (int y = br.y0; y < br.y1; ++y)
            for (int x = br.x0; x < br.x1; ++x)
                for (const PixelRect& oc : s.occluders)
                    if (y >= oc.y0 && y < oc.y1 && x >= oc.x0 && x < oc.x1) {
                        ++covered;
                        break;
                    }
        const float conf = 1.0f - float(covered) / float(br.area());
        for (int j = 0; j < fpb; ++j) {
            const int f = k * fpb + j;
            s.confidence[f] = conf;
            float cy = 0.5f * float(br.y0 + br.y1) + (float(rf.uniform()) - 0.5f) * bh * 0.25f;
            cy = std::clamp(cy, float(br.y0) + 0.5f, float(br.y1) - 0.5f);
            float cx;
            if (fpb == 1) {
                cx = 0.5f * float(br.x0 + br.x1) + (float(rf.uniform()) - 0.5f) * fw * 0.25f;
            } else {
                const float off = (j == 0 ? -0.22f : 0.22f) * fw;
                cx = 0.5f * float(br.x0 + br.x1) + off + (float(rf.uniform()) - 0.5f) * fw * 0.1f;
            }
            cx = std::clamp(cx, float(br.x0) + 0.5f, float(br.x1) - 0.5f);
            if (conf <= 0.0f) continue;  // fully covered: plane stays zero
            const float sy = std::max(1.0f, bh / 6.0f);
            const float sx = std::max(1.0f, fw / (fpb == 1 ? 5.0f : 7.0f));
            const float cutoff = 0.10f * conf;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    const float dy = (y - cy) / sy, dx = (x - cx) / sx;
                    const float g = conf * std::exp(-0.5f * (dy * dy + dx * dx));
                    s.fragments.at(f, y, x) = g < cutoff ? 0.0f : g;
                }
        }
    }
    return s;
}

}  // namespace

SynthDataset generate(const SynthSpec& spec) {
    spec.validate();
    SynthDataset ds;
    ds.spec = spec;

    std::vector<std::array<float, 3>> tints(spec.cameras);
    {
        Rng tr(mix_seed(spec.seed, kTintStream));
        for (auto& t : tints)
            for (int c = 0; c < 3; ++c) t[c] = 0.85f + 0.20f * float(tr.uniform());
    }

    // Enumerate every band arrangement, shuffle once, deal them out: each
    // identity is a distinct permutation of the same base colors.
    const int total_ids = spec.num_ids + spec.eval_ids;
    std::vector<std::vector<int>> perms;
    {
        std::vector<int> p(std::size_t(spec.bands));
        for (int k = 0; k < spec.bands; ++k) p[std::size_t(k)] = k;
        do perms.push_back(p);
        while (std::next_permutation(p.begin(), p.end()));
        Rng cr(mix_seed(spec.seed, kColorStream));
        for (std::size_t i = perms.size(); i > 1; --i)
            std::swap(perms[i - 1], perms[std::size_t(cr.uniform_int(int(i)))]);
    }
    std::vector<std::vector<std::array<float, 3>>> colors(total_ids);
    for (int id = 0; id < total_ids; ++id) {
        const std::array<float, 3>& gt = kGroupTints[std::size_t(id % spec.tint_groups)];
        colors[std::size_t(id)].resize(std::size_t(spec.bands));
        for (int k = 0; k < spec.bands; ++k) {
            const std::array<float, 3>& base =
                kBandColors[std::size_t(perms[std::size_t(id)][std::size_t(k)])];
            for (int c = 0; c < 3; ++c) colors[std::size_t(id)][std::size_t(k)][c] = gt[c] * base[c];
        }
    }

    for (int id = 0; id < spec.num_ids; ++id)
        for (int i = 0; i < spec.images_per_id; ++i) {
            const int cam = (id + i) % spec.cameras;
            const std::uint64_t ss =
                mix_seed(mix_seed(spec.seed, kTrainStream), (std::uint64_t(id) << 20) | unsigned(i));
            ds.train.push_back(render_sample(spec, colors[id], tints[cam], id, cam, id, ss,
                                             spec.occlusion_probability));
        }

    const int queries_per_id = std::max(1, spec.eval_images_per_id / 3);
    for (int e = 0; e < spec.eval_ids; ++e) {
        const int id = spec.num_ids + e;
        for (int i = 0; i < spec.eval_images_per_id; ++i) {
            const int cam = (e + i) % spec.cameras;
            const std::uint64_t ss =
                mix_seed(mix_seed(spec.seed, kEvalStream), (std::uint64_t(id) << 20) | unsigned(i));
            SynthSample occluded = render_sample(spec, colors[id], tints[cam], id, cam, -1, ss,
                                                 spec.eval_occlusion_probability);
            SynthSample clean = render_sample(spec, colors[id], tints[cam], id, cam, -1, ss, 0.0f);
            if (i < queries_per_id) {
                ds.query.push_back(std::move(occluded));
                ds.query_clean.push_back(std::move(clean));
            } else {
                ds.gallery.push_back(std::move(occluded));
                ds.gallery_clean.push_back(std::move(clean));
            }
        }
    }
    return ds;
}

void flip_horizontal(SynthSample& s) {
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < s.h; ++y)
            for (int x = 0; x < s.w / 2; ++x) std::swap(s.px(c, y, x), s.px(c, y, s.w - 1 - x));
    for (int f = 0; f < s.fragments.planes; ++f)
        for (int y = 0; y < s.h; ++y) {
            float* row = s.fragments.plane(f) + std::size_t(y) * s.w;
            std::reverse(row, row + s.w);
        }
    auto mirror = [&](PixelRect& r) {
        const int x0 = s.w - r.x1, x1 = s.w - r.x0;
        r.x0 = x0;
        r.x1 = x1;
    };
    for (auto& r : s.occluders) mirror(r);
    for (auto& r : s.band_rects) mirror(r);
    for (auto& r : s.erase_rects) mirror(r);
}

void crop_pad(SynthSample& s, int pad, int dy, int dx) {
    if (pad < 0 || dy < 0 || dy > 2 * pad || dx < 0 || dx > 2 * pad)
        throw std::invalid_argument("crop_pad: offsets must lie in [0, 2*pad]");
    const int sy = pad - dy, sx = pad - dx;  // content shift; out-of-bounds reads become 0
    if (sy == 0 && sx == 0) return;
    auto shift_plane = [&](float* p) {
        std::vector<float> out(std::size_t(s.h) * s.w, 0.0f);
        for (int y = 0; y < s.h; ++y) {
            const int oy = y - sy;
            if (oy < 0 || oy >= s.h) continue;
            for (int x = 0; x < s.w; ++x) {
                const int ox = x - sx;
                if (ox >= 0 && ox < s.w) out[std::size_t(y) * s.w + x] = p[std::size_t(oy) * s.w + ox];
            }
        }
        std::copy(out.begin(), out.end(), p);
    };
    for (int c = 0; c < 3; ++c) shift_plane(s.image.data() + std::size_t(c) * s.h * s.w);
    for (int f = 0; f < s.fragments.planes; ++f) shift_plane(s.fragments.plane(f));
    auto shift_rect = [&](PixelRect& r) {
        r.y0 = std::clamp(r.y0 + sy, 0, s.h);
        r.y1 = std::clamp(r.y1 + sy, 0, s.h);
        r.x0 = std::clamp(r.x0 + sx, 0, s.w);
        r.x1 = std::clamp(r.x1 + sx, 0, s.w);
    };
    for (auto& r : s.occluders) shift_rect(r);
    for (auto& r : s.band_rects) shift_rect(r);
    for (auto& r : s.erase_rects) shift_rect(r);
}

void to_grayscale(SynthSample& s) {
    const std::size_t plane = std::size_t(s.h) * s.w;
    for (std::size_t i = 0; i < plane; ++i) {
        const float g =
            0.299f * s.image[i] + 0.587f * s.image[plane + i] + 0.114f * s.image[2 * plane + i];
        s.image[i] = s.image[plane + i] = s.image[2 * plane + i] = g;
    }
}

void erase_rect(SynthSample& s, const PixelRect& r, Rng& rng) {
    const PixelRect c = {std::clamp(r.y0, 0, s.h), std::clamp(r.x0, 0, s.w),
                         std::clamp(r.y1, 0, s.h), std::clamp(r.x1, 0, s.w)};
    if (c.empty()) return;
    for (int ch = 0; ch < 3; ++ch)
        for (int y = c.y0; y < c.y1; ++y)
            for (int x = c.x0; x < c.x1; ++x) s.px(ch, y, x) = float(rng.uniform());
    s.erase_rects.push_back(c);
}

void augment(SynthSample& s, const AugmentConfig& cfg, Rng& rng) {
    if (!cfg.enabled) return;
    if (rng.uniform() < cfg.p_flip) flip_horizontal(s);
    if (rng.uniform() < cfg.p_crop)
        crop_pad(s, cfg.crop_pad, rng.uniform_int(2 * cfg.crop_pad + 1),
                 rng.uniform_int(2 * cfg.crop_pad + 1));
    if (rng.uniform() < cfg.p_gray) to_grayscale(s);
    if (rng.uniform() < cfg.p_erase) {
        const float area = (cfg.erase_min_area +
                            (cfg.erase_max_area - cfg.erase_min_area) * float(rng.uniform())) *
                           float(s.h) * float(s.w);
        const float aspect = 0.5f + 1.5f * float(rng.uniform());  // h/w
        const int eh = std::clamp(int(std::sqrt(area * aspect) + 0.5f), 1, s.h);
        const int ew = std::clamp(int(std::sqrt(area / aspect) + 0.5f), 1, s.w);
        const int y0 = rng.uniform_int(s.h - eh + 1);
        const int x0 = rng.uniform_int(s.w - ew + 1);
        erase_rect(s, {y0, x0, y0 + eh, x0 + ew}, rng);
    }
}

PartGroundTruth sample_ground_truth(const SynthSample& s, const PartConfig& parts,
                                    const GridGeom& geom) {
    if (geom.image_h != s.h || geom.image_w != s.w)
        throw std::invalid_argument("sample_ground_truth: grid geometry is " +
                                    std::to_string(geom.image_h) + "x" + std::to_string(geom.image_w) +
                                    " but sample is " + std::to_string(s.h) + "x" +
                                    std::to_string(s.w));
    const PlaneStack grid = downsample_to_grid(s.fragments, geom);
    std::vector<GridRect> rects;
    rects.reserve(s.erase_rects.size());
    for (const PixelRect& r : s.erase_rects)
        rects.push_back(pixel_rect_to_grid(r.y0, r.x0, r.y1, r.x1, geom));
    return build_ground_truth(grid, parts, rects);
}

}  // namespace pareid
