#pragma once

// Prediction heads.  The visibility head is part of the backbone's forward
// contract (its output ships with every ModelOutput); the identity
// classifier heads exist only during training and live beside the model in
// checkpoints.

#include "pareid/layers.hpp"

namespace pareid {

// Shared two-layer MLP mapping each final part token to an occlusion
// probability in (0,1).
template <class S>
struct VisibilityHead {
    LinearLayer<S> fc1, fc2;

    static VisibilityHead init(int d, Rng& rng, double stddev) {
        VisibilityHead h;
        const int hidden = std::max(1, d / 2);
        h.fc1 = LinearLayer<S>::init(d, hidden, rng, stddev);
        h.fc2 = LinearLayer<S>::init(hidden, 1, rng, stddev);
        return h;
    }

    // part_features [P,d] -> probabilities [P]
    Tensor<S> operator()(const Tensor<S>& part_features) const {
        Tensor<S> h = gelu(fc1(part_features));
        Tensor<S> v = sigmoid(fc2(h));  // [P,1]
        return reshape(v, {part_features.dim(0)});
    }

    void reg(ParamList<S>& out, const std::string& prefix) {
        fc1.reg(out, prefix + ".fc1");
        fc2.reg(out, prefix + ".fc2");
    }
};

// One linear classifier for the class token plus one per part token.
template <class S>
struct ClassifierHeads {
    LinearLayer<S> cls;
    std::vector<LinearLayer<S>> part;
    int classes = 0;

    static ClassifierHeads init(int d, int parts, int classes, Rng& rng, double stddev) {
        ClassifierHeads h;
        h.classes = classes;
        h.cls = LinearLayer<S>::init(d, classes, rng, stddev);
        h.part.reserve(parts);
        for (int p = 0; p < parts; ++p) h.part.push_back(LinearLayer<S>::init(d, classes, rng, stddev));
        return h;
    }

    void reg(ParamList<S>& out, const std::string& prefix) {
        cls.reg(out, prefix + ".cls");
        for (std::size_t p = 0; p < part.size(); ++p)
            part[p].reg(out, prefix + ".part" + std::to_string(p));
    }
};

}  // namespace pareid
