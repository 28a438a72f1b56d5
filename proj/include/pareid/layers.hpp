#pragma once

// Small trainable building blocks shared by the backbone and the heads.
// Each block registers its tensors into a flat name->tensor list; that list
// is the single source of truth for the optimizer, checkpoints, and the
// parameter audit.

#include <utility>

#include "pareid/ops.hpp"

namespace pareid {

template <class S>
using ParamList = std::vector<std::pair<std::string, Tensor<S>>>;

template <class S>
struct LinearLayer {
    Tensor<S> w;  // [in, out]
    Tensor<S> b;  // [out], absent when bias-free
    bool has_bias = true;

    static LinearLayer init(int in, int out, Rng& rng, double stddev, bool bias = true) {
        LinearLayer l;
        l.has_bias = bias;
        std::vector<S> wv(std::size_t(in) * out);
        for (auto& v : wv) v = S(rng.truncated_normal(stddev));
        l.w = Tensor<S>({in, out}, std::move(wv), true);
        if (bias) l.b = Tensor<S>({out}, std::vector<S>(out, S(0)), true);
        return l;
    }

    Tensor<S> operator()(const Tensor<S>& x, MacTag tag = MacTag::kProjection) const {
        Tensor<S> y = matmul(x, w, tag);
        return has_bias ? add(y, b) : y;
    }

    void reg(ParamList<S>& out, const std::string& prefix) {
        out.emplace_back(prefix + ".w", w);
        if (has_bias) out.emplace_back(prefix + ".b", b);
    }
};

template <class S>
struct LayerNormLayer {
    Tensor<S> gamma, beta;
    S eps = S(1e-5);

    static LayerNormLayer init(int d) {
        LayerNormLayer l;
        l.gamma = Tensor<S>({d}, std::vector<S>(d, S(1)), true);
        l.beta = Tensor<S>({d}, std::vector<S>(d, S(0)), true);
        return l;
    }

    Tensor<S> operator()(const Tensor<S>& x) const { return layernorm(x, gamma, beta, eps); }

    void reg(ParamList<S>& out, const std::string& prefix) {
        out.emplace_back(prefix + ".gamma", gamma);
        out.emplace_back(prefix + ".beta", beta);
    }
};

// Two-layer GELU MLP, the standard transformer feed-forward.
template <class S>
struct Mlp {
    LinearLayer<S> fc1, fc2;

    static Mlp init(int d, int hidden, Rng& rng, double stddev) {
        Mlp m;
        m.fc1 = LinearLayer<S>::init(d, hidden, rng, stddev);
        m.fc2 = LinearLayer<S>::init(hidden, d, rng, stddev);
        return m;
    }

    Tensor<S> operator()(const Tensor<S>& x) const { return fc2(gelu(fc1(x))); }

    void reg(ParamList<S>& out, const std::string& prefix) {
        fc1.reg(out, prefix + ".fc1");
        fc2.reg(out, prefix + ".fc2");
    }
};

}  // namespace pareid
