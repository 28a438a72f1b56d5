#pragma once

// Part-aware ViT backbone.  A sliding-window patch embedding feeds a stack
// of blocks; each block refines patch tokens with self-attention, refines P
// part tokens with their own self-attention, then lets every part token
// attend over the patch tokens.  The head-averaged cross-attention row is
// used directly as mixing weights over raw patch token values; no value or
// output projection exists on that path, so a part feature is always a
// convex combination of patch tokens plus its residual stream.

#include "pareid/heads.hpp"

namespace pareid {

struct ModelConfig {
    int image_h = 64, image_w = 32, channels = 3;
    int patch = 8, stride = 4;
    int dim = 64, layers = 4, heads = 4, pose_tokens = 5, ffn_mult = 4;
    int cameras = 2;
    double sie_coefficient = 1.0;
    double init_std = 0.02;

    int n_rows() const { return (image_h - patch) / stride + 1; }
    int n_cols() const { return (image_w - patch) / stride + 1; }
    int num_patches() const { return n_rows() * n_cols(); }
    int raw_patch_dim() const { return channels * patch * patch; }

    void validate() const {
        if (image_h <= 0 || image_w <= 0 || channels <= 0)
            throw std::invalid_argument("model config: bad image dims");
        if (patch <= 0 || stride <= 0 || patch > image_h || patch > image_w)
            throw std::invalid_argument("model config: patch " + std::to_string(patch) +
                                        " incompatible with image " + std::to_string(image_h) + "x" +
                                        std::to_string(image_w));
        if (dim <= 0 || layers <= 0 || heads <= 0 || pose_tokens <= 0 || ffn_mult <= 0 || cameras <= 0)
            throw std::invalid_argument("model config: non-positive size field");
        if (dim % heads != 0)
            throw std::invalid_argument("model config: dim " + std::to_string(dim) +
                                        " not divisible by heads " + std::to_string(heads));
        if (num_patches() < pose_tokens)
            throw std::invalid_argument("model config: " + std::to_string(num_patches()) +
                                        " patches cannot host " + std::to_string(pose_tokens) +
                                        " part tokens");
    }
};

// Overlapping patch extraction, channel-major within each window.  The image
// itself is a constant input; gradients stop at the projection.
template <class S>
std::vector<S> extract_windows(const std::vector<S>& image_chw, const ModelConfig& cfg) {
    if (image_chw.size() != std::size_t(cfg.channels) * cfg.image_h * cfg.image_w)
        throw std::invalid_argument("extract_windows: image buffer has " +
                                    std::to_string(image_chw.size()) + " values, expected " +
                                    std::to_string(cfg.channels * cfg.image_h * cfg.image_w));
    const int raw = cfg.raw_patch_dim();
    std::vector<S> out(std::size_t(cfg.num_patches()) * raw);
    std::size_t w = 0;
    for (int r = 0; r < cfg.n_rows(); ++r) {
        for (int c = 0; c < cfg.n_cols(); ++c) {
            S* dst = out.data() + (w++) * raw;
            for (int ch = 0; ch < cfg.channels; ++ch)
                for (int y = 0; y < cfg.patch; ++y)
                    for (int x = 0; x < cfg.patch; ++x)
                        *dst++ = image_chw[std::size_t(ch) * cfg.image_h * cfg.image_w +
                                           std::size_t(r * cfg.stride + y) * cfg.image_w +
                                           (c * cfg.stride + x)];
        }
    }
    return out;
}

// Pre-LN multi-head self-attention sublayer; returns the mix to be added
// residually by the caller.
template <class S>
struct SelfAttention {
    LayerNormLayer<S> ln;
    LinearLayer<S> wq, wk, wv, wo;
    int heads = 1;

    static SelfAttention init(int d, int heads, Rng& rng, double stddev) {
        SelfAttention a;
        a.heads = heads;
        a.ln = LayerNormLayer<S>::init(d);
        a.wq = LinearLayer<S>::init(d, d, rng, stddev);
        a.wk = LinearLayer<S>::init(d, d, rng, stddev);
        a.wv = LinearLayer<S>::init(d, d, rng, stddev);
        a.wo = LinearLayer<S>::init(d, d, rng, stddev);
        return a;
    }

    Tensor<S> operator()(const Tensor<S>& x) const {
        const int d = x.shape().back();
        const int dh = d / heads;
        const S inv_sqrt = S(1.0 / std::sqrt(double(dh)));
        Tensor<S> h = ln(x);
        Tensor<S> q = wq(h), k = wk(h), v = wv(h);
        std::vector<Tensor<S>> ctx;
        ctx.reserve(heads);
        for (int hd = 0; hd < heads; ++hd) {
            Tensor<S> qh = slice_last(q, hd * dh, dh);
            Tensor<S> kh = slice_last(k, hd * dh, dh);
            Tensor<S> vh = slice_last(v, hd * dh, dh);
            Tensor<S> logits = scale(matmul(qh, transpose(kh), MacTag::kAttention), inv_sqrt);
            Tensor<S> attn = softmax(logits, -1);
            ctx.push_back(matmul(attn, vh, MacTag::kAttention));
        }
        return wo(concat_last(ctx));
    }

    void reg(ParamList<S>& out, const std::string& prefix) {
        ln.reg(out, prefix + ".ln");
        wq.reg(out, prefix + ".wq");
        wk.reg(out, prefix + ".wk");
        wv.reg(out, prefix + ".wv");
        wo.reg(out, prefix + ".wo");
    }
};

// Part-token to patch-token attention.  Only query and key transforms exist
// (both bias-free); the scores are the whole output.
template <class S>
struct CrossAttention {
    LinearLayer<S> wq, wk;
    int heads = 1;

    static CrossAttention init(int d, int heads, Rng& rng, double stddev) {
        CrossAttention c;
        c.heads = heads;
        c.wq = LinearLayer<S>::init(d, d, rng, stddev, /*bias=*/false);
        c.wk = LinearLayer<S>::init(d, d, rng, stddev, /*bias=*/false);
        return c;
    }

    // z [P,d], patches [N,d] -> per-head row-stochastic maps [P,N].  The
    // inputs are deliberately NOT normalized first: score sharpness rides on
    // the token norms, so the maps can anneal from uniform to peaked as the
    // streams grow, and the keys keep their positional components.
    std::vector<Tensor<S>> operator()(const Tensor<S>& z, const Tensor<S>& patches) const {
        const int d = z.shape().back();
        const int dh = d / heads;
        const S inv_sqrt = S(1.0 / std::sqrt(double(dh)));
        Tensor<S> q = wq(z);
        Tensor<S> k = wk(patches);
        std::vector<Tensor<S>> maps;
        maps.reserve(heads);
        for (int hd = 0; hd < heads; ++hd) {
            Tensor<S> qh = slice_last(q, hd * dh, dh);
            Tensor<S> kh = slice_last(k, hd * dh, dh);
            Tensor<S> logits = scale(matmul(qh, transpose(kh), MacTag::kAttention), inv_sqrt);
            maps.push_back(softmax(logits, -1));
        }
        return maps;
    }

    void reg(ParamList<S>& out, const std::string& prefix) {
        wq.reg(out, prefix + ".wq");
        wk.reg(out, prefix + ".wk");
    }
};

// Head-averaged attention times raw patch values.  Keep this free of
// parameters: the audit in the tests enumerates the registry to prove the
// patches -> part-feature path stays projection-free.
template <class S>
Tensor<S> aggregate_parts(const std::vector<Tensor<S>>& ca_maps, const Tensor<S>& patches) {
    Tensor<S> mean_map = scale(add_n(ca_maps), S(1.0 / double(ca_maps.size())));
    return matmul(mean_map, patches, MacTag::kAttention);
}

template <class S>
struct Block {
    SelfAttention<S> patch_sa;
    LayerNormLayer<S> patch_ffn_ln;
    Mlp<S> patch_ffn;
    SelfAttention<S> pose_sa;
    LayerNormLayer<S> pose_ffn_ln;
    Mlp<S> pose_ffn;
    CrossAttention<S> ca;
    LayerNormLayer<S> agg_ln;
    Mlp<S> agg_ffn;

    static Block init(const ModelConfig& cfg, Rng& rng) {
        Block b;
        const int d = cfg.dim, hidden = cfg.dim * cfg.ffn_mult;
        b.patch_sa = SelfAttention<S>::init(d, cfg.heads, rng, cfg.init_std);
        b.patch_ffn_ln = LayerNormLayer<S>::init(d);
        b.patch_ffn = Mlp<S>::init(d, hidden, rng, cfg.init_std);
        b.pose_sa = SelfAttention<S>::init(d, cfg.heads, rng, cfg.init_std);
        b.pose_ffn_ln = LayerNormLayer<S>::init(d);
        b.pose_ffn = Mlp<S>::init(d, hidden, rng, cfg.init_std);
        b.ca = CrossAttention<S>::init(d, cfg.heads, rng, cfg.init_std);
        b.agg_ln = LayerNormLayer<S>::init(d);
        b.agg_ffn = Mlp<S>::init(d, hidden, rng, cfg.init_std);
        return b;
    }

    void reg(ParamList<S>& out, const std::string& prefix) {
        patch_sa.reg(out, prefix + ".patch_sa");
        patch_ffn_ln.reg(out, prefix + ".patch_ffn_ln");
        patch_ffn.reg(out, prefix + ".patch_ffn");
        pose_sa.reg(out, prefix + ".pose_sa");
        pose_ffn_ln.reg(out, prefix + ".pose_ffn_ln");
        pose_ffn.reg(out, prefix + ".pose_ffn");
        ca.reg(out, prefix + ".ca");
        agg_ln.reg(out, prefix + ".agg_ln");
        agg_ffn.reg(out, prefix + ".agg_ffn");
    }
};

template <class S>
struct ModelOutput {
    Tensor<S> cls_feature;    // [1,d], after the token-stream final norm
    Tensor<S> part_features;  // [P,d], after the part-stream final norm
    Tensor<S> visibility;     // [P] probabilities
    std::vector<std::vector<Tensor<S>>> ca;  // [layer][head] of [P,N]
    std::vector<Tensor<S>> layer_parts;      // part stream after each block
};

// Mean of all layer*head cross-attention maps; rows stay stochastic.
template <class S>
Tensor<S> averaged_attention(const ModelOutput<S>& out) {
    std::vector<Tensor<S>> all;
    for (const auto& layer : out.ca)
        for (const auto& m : layer) all.push_back(m);
    return scale(add_n(all), S(1.0 / double(all.size())));
}

template <class S>
class PAModel {
public:
    ModelConfig cfg;
    Tensor<S> patch_w, patch_b;  // [raw,d], [d]
    Tensor<S> pos;               // [N,d], added before the class token joins
    Tensor<S> cls_tok;           // [1,d]
    Tensor<S> pose_tok;          // [P,d], also the part stream's initial state
    Tensor<S> sie;               // [cameras,d]
    std::vector<Block<S>> blocks;
    LayerNormLayer<S> final_ln_tokens, final_ln_parts;
    VisibilityHead<S> vis_head;

    static PAModel init(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        PAModel m;
        m.cfg = cfg;
        Rng rng(mix_seed(seed, 0x6d6f64656c));
        auto tn = [&](Shape shape) {
            std::vector<S> v(shape_numel(shape));
            for (auto& x : v) x = S(rng.truncated_normal(cfg.init_std));
            return Tensor<S>(std::move(shape), std::move(v), true);
        };
        m.patch_w = tn({cfg.raw_patch_dim(), cfg.dim});
        m.patch_b = Tensor<S>({cfg.dim}, std::vector<S>(cfg.dim, S(0)), true);
        m.pos = tn({cfg.num_patches(), cfg.dim});
        m.cls_tok = tn({1, cfg.dim});
        m.pose_tok = tn({cfg.pose_tokens, cfg.dim});
        m.sie = tn({cfg.cameras, cfg.dim});
        for (int l = 0; l < cfg.layers; ++l) m.blocks.push_back(Block<S>::init(cfg, rng));
        m.final_ln_tokens = LayerNormLayer<S>::init(cfg.dim);
        m.final_ln_parts = LayerNormLayer<S>::init(cfg.dim);
        m.vis_head = VisibilityHead<S>::init(cfg.dim, rng, cfg.init_std);
        m.build_registry();
        return m;
    }

    ParamList<S>& params() { return params_; }
    const ParamList<S>& params() const { return params_; }

    Tensor<S>* find_param(const std::string& name) {
        for (auto& [n, t] : params_)
            if (n == name) return &t;
        return nullptr;
    }

    // Projected patch tokens with positions applied: [N,d].
    Tensor<S> embed_patches(const std::vector<S>& image_chw) const {
        Tensor<S> windows({cfg.num_patches(), cfg.raw_patch_dim()}, extract_windows(image_chw, cfg));
        Tensor<S> x = add(matmul(windows, patch_w), patch_b);
        return add(x, pos);
    }

    ModelOutput<S> forward(const std::vector<S>& image_chw, int camera) const {
        return forward_tokens(embed_patches(image_chw), camera);
    }

    // Core pass from already-embedded patch tokens; the permutation tests
    // enter here.
    ModelOutput<S> forward_tokens(const Tensor<S>& patch_tokens, int camera) const {
        if (camera < 0 || camera >= cfg.cameras)
            throw std::invalid_argument("forward: camera " + std::to_string(camera) + " outside " +
                                        std::to_string(cfg.cameras) + " embeddings");
        if (patch_tokens.rank() != 2 || patch_tokens.dim(0) != cfg.num_patches() ||
            patch_tokens.dim(1) != cfg.dim)
            throw std::invalid_argument("forward: patch tokens " + shape_str(patch_tokens.shape()) +
                                        ", expected [" + std::to_string(cfg.num_patches()) + "," +
                                        std::to_string(cfg.dim) + "]");
        const int N = cfg.num_patches(), P = cfg.pose_tokens, d = cfg.dim;
        Tensor<S> x = concat_rows<S>({cls_tok, patch_tokens});  // [N+1,d]
        if (cfg.sie_coefficient != 0.0) {
            Tensor<S> cam_row = reshape(slice_rows(sie, camera, 1), {d});
            x = add(x, scale(cam_row, S(cfg.sie_coefficient)));
        }
        Tensor<S> z = pose_tok;  // part stream starts as the learned tokens

        ModelOutput<S> out;
        out.ca.reserve(blocks.size());
        for (const auto& blk : blocks) {
            x = add(x, blk.patch_sa(x));
            x = add(x, blk.patch_ffn(blk.patch_ffn_ln(x)));
            z = add(z, blk.pose_sa(z));
            z = add(z, blk.pose_ffn(blk.pose_ffn_ln(z)));
            Tensor<S> patches = slice_rows(x, 1, N);  // class token is never a key
            std::vector<Tensor<S>> maps = blk.ca(z, patches);
            z = add(z, aggregate_parts(maps, patches));
            z = add(z, blk.agg_ffn(blk.agg_ln(z)));
            out.ca.push_back(std::move(maps));
            out.layer_parts.push_back(z);
        }
        out.cls_feature = final_ln_tokens(slice_rows(x, 0, 1));
        out.part_features = final_ln_parts(z);
        out.visibility = vis_head(out.part_features);
        (void)P;
        return out;
    }

private:
    ParamList<S> params_;

    void build_registry() {
        params_.clear();
        params_.emplace_back("embed.w", patch_w);
        params_.emplace_back("embed.b", patch_b);
        params_.emplace_back("pos", pos);
        params_.emplace_back("cls", cls_tok);
        params_.emplace_back("pose", pose_tok);
        params_.emplace_back("sie", sie);
        for (std::size_t l = 0; l < blocks.size(); ++l)
            blocks[l].reg(params_, "block" + std::to_string(l));
        final_ln_tokens.reg(params_, "final_tokens");
        final_ln_parts.reg(params_, "final_parts");
        vis_head.reg(params_, "vis");
    }
};

// Expected registry size for a config; the audit test pins the registry to
// this closed form.
inline std::size_t expected_param_count(const ModelConfig& cfg, int classes) {
    const std::size_t d = std::size_t(cfg.dim), hidden = d * cfg.ffn_mult;
    const std::size_t lin = d * d + d;                 // square projection with bias
    const std::size_t ln = 2 * d;
    const std::size_t sa = ln + 4 * lin;
    const std::size_t ffn = (d * hidden + hidden) + (hidden * d + d);
    const std::size_t ca = 2 * d * d;                  // bias-free q/k, nothing else
    const std::size_t block = (sa + ln + ffn) * 2      // patch and part sublayers
                              + ca + ln + ffn;         // cross-attention + aggregation mlp
    const std::size_t vis_hidden = std::size_t(std::max(1, cfg.dim / 2));
    const std::size_t vis = d * vis_hidden + vis_hidden + vis_hidden * 1 + 1;
    const std::size_t heads = (d * classes + classes) * std::size_t(1 + cfg.pose_tokens);
    return std::size_t(cfg.raw_patch_dim()) * d + d                       // patch projection
           + std::size_t(cfg.num_patches()) * d                           // positions
           + d + std::size_t(cfg.pose_tokens) * d                         // class + part tokens
           + std::size_t(cfg.cameras) * d                                 // camera embeddings
           + std::size_t(cfg.layers) * block + 2 * ln + vis + heads;
}

}  // namespace pareid
