#pragma once

// Differentiable op library.  Every op computes its result eagerly, and when
// a Tape<S> is active and an input is on the gradient path, records one
// backward closure.  Closures accumulate (never assign) into input gradient
// buffers so shared subexpressions add up correctly.  Reductions and dot
// products accumulate in double no matter the storage scalar.

#include <Eigen/Core>

#include <algorithm>
#include <initializer_list>
#include <limits>

#include "pareid/tensor.hpp"

namespace pareid {

namespace detail {

template <class S>
bool track(std::initializer_list<const Tensor<S>*> ins) {
    if (!Tape<S>::active()) return false;
    for (const Tensor<S>* t : ins)
        if (t->defined() && t->requires_grad()) return true;
    return false;
}

template <class S>
std::vector<S>& gbuf(const std::shared_ptr<TensorNode<S>>& n) {
    if (n->grad.empty()) n->grad.assign(n->value.size(), S(0));
    return n->grad;
}

template <class S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using EMap = Eigen::Map<EMat<S>>;
template <class S>
using ECMap = Eigen::Map<const EMat<S>>;

// True when b's shape is a trailing suffix of a's, the only broadcast form
// supported (leading batch dims on the left operand).
inline bool suffix_of(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    for (std::size_t i = 0; i < b.size(); ++i)
        if (a[a.size() - b.size() + i] != b[i]) return false;
    return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul and layout ops

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, MacTag tag = MacTag::kProjection) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<S> out = Tensor<S>::zeros({m, n});
    {
        detail::ECMap<S> A(a.data().data(), m, k), B(b.data().data(), k, n);
        detail::EMap<S> C(out.data().data(), m, n);
        C.noalias() = A * B;
    }
    mac_counter().add(tag, std::uint64_t(m) * k * n);
    if (detail::track<S>({&a, &b})) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([an = a.node(), bn = b.node(), on = out.node(), m, k, n, tag]() {
            if (on->grad.empty()) return;
            detail::ECMap<S> G(on->grad.data(), m, n);
            if (an->requires_grad) {
                detail::ECMap<S> B(bn->value.data(), k, n);
                detail::EMap<S> GA(detail::gbuf(an).data(), m, k);
                GA.noalias() += G * B.transpose();
                mac_counter().add(tag, std::uint64_t(m) * n * k);
            }
            if (bn->requires_grad) {
                detail::ECMap<S> A(an->value.data(), m, k);
                detail::EMap<S> GB(detail::gbuf(bn).data(), k, n);
                GB.noalias() += A.transpose() * G;
                mac_counter().add(tag, std::uint64_t(k) * m * n);
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& t) {
    if (t.rank() != 2) throw std::invalid_argument("transpose: expected rank 2, got " + shape_str(t.shape()));
    const int r = t.dim(0), c = t.dim(1);
    Tensor<S> out = Tensor<S>::zeros({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.data()[std::size_t(j) * r + i] = t.data()[std::size_t(i) * c + j];
    if (detail::track<S>({&t})) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([tn = t.node(), on = out.node(), r, c]() {
            if (on->grad.empty() || !tn->requires_grad) return;
            auto& g = detail::gbuf(tn);
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j) g[std::size_t(i) * c + j] += on->grad[std::size_t(j) * r + i];
        });
    }
    return out;
}

template <class S>
Tensor<S> reshape(const Tensor<S>& t, Shape shape) {
    if (shape_numel(shape) != t.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(t.shape()) + " as " + shape_str(shape));
    Tensor<S> out(std::move(shape), t.data());
    if (detail::track<S>({&t})) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([tn = t.node(), on = out.node()]() {
            if (on->grad.empty() || !tn->requires_grad) return;
            auto& g = detail::gbuf(tn);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
        });
    }
    return out;
}

template <class S>
Tensor<S> slice_rows(const Tensor<S>& t, int start, int count) {
    if (t.rank() < 1) throw std::invalid_argument("slice_rows: scalar input");
    const int rows = t.dim(0);
    if (start < 0 || count < 0 || start + count > rows)
        throw std::invalid_argument("slice_rows: range [" + std::to_string(start) + "," +
                                    std::to_string(start + count) + ") outside " + shape_str(t.shape()));
    Shape os = t.shape();
    os[0] = count;
    const std::size_t rs = t.numel() / std::size_t(rows);  // row stride
    Tensor<S> out = Tensor<S>::zeros(os);
    std::copy_n(t.data().begin() + std::size_t(start) * rs, std::size_t(count) * rs, out.data().begin());
    if (detail::track<S>({&t})) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([tn = t.node(), on = out.node(), start, count, rs]() {
            if (on->grad.empty() || !tn->requires_grad) return;
            auto& g = detail::gbuf(tn);
            for (std::size_t i = 0; i < std::size_t(count) * rs; ++i)
                g[std::size_t(start) * rs + i] += on->grad[i];
        });
    }
    return out;
}

template <class S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
    Shape os = parts[0].shape();
    int rows = 0;
    for (const auto& p : parts) {
        if (p.rank() != int(os.size()))
            throw std::invalid_argument("concat_rows: rank mismatch " + shape_str(p.shape()));
        for (std::size_t i = 1; i < os.size(); ++i)
            if (p.shape()[i] != os[i])
                throw std::invalid_argument("concat_rows: trailing dims differ: " + shape_str(p.shape()) +
                                            " vs " + shape_str(os));
        rows += p.dim(0);
    }
    os[0] = rows;
    Tensor<S> out = Tensor<S>::zeros(os);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy_n(p.data().begin(), p.numel(), out.data().begin() + off);
        off += p.numel();
    }
    bool need = false;
    for (const auto& p : parts) need = need || detail::track<S>({&p});
    if (need) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorNode<S>>> nodes;
        for (const auto& p : parts) nodes.push_back(p.node());
        Tape<S>::active()->record([nodes, on = out.node()]() {
            if (on->grad.empty()) return;
            std::size_t off = 0;
            for (const auto& n : nodes) {
                if (n->requires_grad) {
                    auto& g = detail::gbuf(n);
                    for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[off + i];
                }
                off += n->value.size();
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> slice_last(const Tensor<S>& t, int start, int count) {
    if (t.rank() < 1) throw std::invalid_argument("slice_last: scalar input");
    const int last = t.shape().back();
    if (start < 0 || count < 0 || start + count > last)
        throw std::invalid_argument("slice_last: range [" + std::to_string(start) + "," +
                                    std::to_string(start + count) + ") outside " + shape_str(t.shape()));
    Shape os = t.shape();
    os.back() = count;
    const std::size_t lead = t.numel() / std::size_t(last);
    Tensor<S> out = Tensor<S>::zeros(os);
    for (std::size_t r = 0; r < lead; ++r)
        std::copy_n(t.data().begin() + r * last + start, count, out.data().begin() + r * count);
    if (detail::track<S>({&t})) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([tn = t.node(), on = out.node(), start, count, last, lead]() {
            if (on->grad.empty() || !tn->requires_grad) return;
            auto& g = detail::gbuf(tn);
            for (std::size_t r = 0; r < lead; ++r)
                for (int j = 0; j < count; ++j)
                    g[r * last + start + j] += on->grad[r * count + j];
        });
    }
    return out;
}

template <class S>
Tensor<S> concat_last(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_last: no inputs");
    Shape os = parts[0].shape();
    int total = 0;
    std::size_t lead = parts[0].numel() / std::size_t(os.back());
    for (const auto& p : parts) {
        Shape ps = p.shape();
        if (ps.size() != os.size() || !std::equal(ps.begin(), ps.end() - 1, os.begin()))
            throw std::invalid_argument("concat_last: leading dims differ: " + shape_str(ps) + " vs " +
                                        shape_str(os));
        total += ps.back();
    }
    os.back() = total;
    Tensor<S> out = Tensor<S>::zeros(os);
    int off = 0;
    for (const auto& p : parts) {
        const int c = p.shape().back();
        for (std::size_t r = 0; r < lead; ++r)
            std::copy_n(p.data().begin() + r * c, c, out.data().begin() + r * total + off);
        off += c;
    }
    bool need = false;
    for (const auto& p : parts) need = need || detail::track<S>({&p});
    if (need) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorNode<S>>> nodes;
        std::vector<int> widths;
        for (const auto& p : parts) {
            nodes.push_back(p.node());
            widths.push_back(p.shape().back());
        }
        Tape<S>::active()->record([nodes, widths, on = out.node(), lead, total]() {
            if (on->grad.empty()) return;
            int off = 0;
            for (std::size_t i = 0; i < nodes.size(); ++i) {
                const int c = widths[i];
                if (nodes[i]->requires_grad) {
                    auto& g = detail::gbuf(nodes[i]);
                    for (std::size_t r = 0; r < lead; ++r)
                        for (int j = 0; j < c; ++j) g[r * c + j] += on->grad[r * total + off + j];
                }
                off += c;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// elementwise ops

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    if (!detail::suffix_of(a.shape(), b.shape()))
        throw std::invalid_argument("add: shape " + shape_str(b.shape()) + " does not broadcast over " +
                                    shape_str(a.shape()));
    const std::size_t bn = b.numel();
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i % bn];
    if (detail::track<S>({&a, &b})) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([an = a.node(), bnode = b.node(), on = out.node(), bn]() {
            if (on->grad.empty()) return;
            if (an->requires_grad) {
                auto& g = detail::gbuf(an);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
            }
            if (bnode->requires_grad) {
                auto& g = detail::gbuf(bnode);
                for (std::size_t i = 0; i < on->grad.size(); ++i) g[i % bn] += on->grad[i];
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument("sub: shapes differ: " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (detail::track<S>({&a, &b})) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([an = a.node(), bn = b.node(), on = out.node()]() {
            if (on->grad.empty()) return;
            if (an->requires_grad) {
                auto& g = detail::gbuf(an);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
            }
            if (bn->requires_grad) {
                auto& g = detail::gbuf(bn);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= on->grad[i];
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    if (!detail::suffix_of(a.shape(), b.shape()))
        throw std::invalid_argument("mul: shape " + shape_str(b.shape()) + " does not broadcast over " +
                                    shape_str(a.shape()));
    const std::size_t bn = b.numel();
    Tensor<S> out = Tensor<S>::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i % bn];
    if (detail::track<S>({&a, &b})) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([an = a.node(), bnode = b.node(), on = out.node(), bn]() {
            if (on->grad.empty()) return;
            if (an->requires_grad) {
                auto& g = detail::gbuf(an);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * bnode->value[i % bn];
            }
            if (bnode->requires_grad) {
                auto& g = detail::gbuf(bnode);
                for (std::size_t i = 0; i < on->grad.size(); ++i) g[i % bn] += on->grad[i] * an->value[i];
            }
        });
    }
    return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& t, S c) {
    Tensor<S> out = Tensor<S>::zeros(t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) out.data()[i] = t.data()[i] * c;
    if (detail::track<S>({&t})) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([tn = t.node(), on = out.node(), c]() {
            if (on->grad.empty() || !tn->requires_grad) return;
            auto& g = detail::gbuf(tn);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i] * c;
        });
    }
    return out;
}

template <class S>
Tensor<S> add_n(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw std::invalid_argument("add_n: no inputs");
    for (const auto& p : parts)
        if (p.shape() != parts[0].shape())
            throw std::invalid_argument("add_n: shapes differ: " + shape_str(p.shape()) + " vs " +
                                        shape_str(parts[0].shape()));
    Tensor<S> out = Tensor<S>::zeros(parts[0].shape());
    for (const auto& p : parts)
        for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] += p.data()[i];
    bool need = false;
    for (const auto& p : parts) need = need || detail::track<S>({&p});
    if (need) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorNode<S>>> nodes;
        for (const auto& p : parts) nodes.push_back(p.node());
        Tape<S>::active()->record([nodes, on = out.node()]() {
            if (on->grad.empty()) return;
            for (const auto& n : nodes) {
                if (!n->requires_grad) continue;
                auto& g = detail::gbuf(n);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += on->grad[i];
            }
        });
    }
    return out;
}

namespace detail {

// Shared scaffolding for unary elementwise ops: fwd computes the value,
// dfn the local derivative from (x, y).
template <class S, class F, class D>
Tensor<S> unary(const Tensor<S>& t, F fwd, D dfn) {
    Tensor<S> out = Tensor<S>::zeros(t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) out.data()[i] = fwd(t.data()[i]);
    if (track<S>({&t})) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([tn = t.node(), on = out.node(), dfn]() {
            if (on->grad.empty() || !tn->requires_grad) return;
            auto& g = gbuf(tn);
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] += on->grad[i] * dfn(tn->value[i], on->value[i]);
        });
    }
    return out;
}

}  // namespace detail

template <class S>
Tensor<S> gelu(const Tensor<S>& t) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return detail::unary(
        t, [](S x) { return S(0.5 * double(x) * (1.0 + std::erf(double(x) * inv_sqrt2))); },
        [](S x, S) {
            double cdf = 0.5 * (1.0 + std::erf(double(x) * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * double(x) * double(x));
            return S(cdf + double(x) * pdf);
        });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& t) {
    return detail::unary(
        t,
        [](S x) {
            // Split on sign to avoid exp overflow.
            if (x >= S(0)) return S(1.0 / (1.0 + std::exp(-double(x))));
            double e = std::exp(double(x));
            return S(e / (1.0 + e));
        },
        [](S, S y) { return y * (S(1) - y); });
}

template <class S>
Tensor<S> log(const Tensor<S>& t) {
    return detail::unary(t, [](S x) { return S(std::log(double(x))); },
                         [](S x, S) { return S(1) / x; });
}

template <class S>
Tensor<S> exp(const Tensor<S>& t) {
    return detail::unary(t, [](S x) { return S(std::exp(double(x))); }, [](S, S y) { return y; });
}

template <class S>
Tensor<S> sqrt(const Tensor<S>& t) {
    return detail::unary(t, [](S x) { return S(std::sqrt(double(x))); },
                         [](S, S y) { return S(1) / (S(2) * std::max(y, S(1e-12))); });
}

// ---------------------------------------------------------------------------
// reductions

template <class S>
Tensor<S> sum_all(const Tensor<S>& t) {
    double acc = 0.0;
    for (S v : t.data()) acc += double(v);
    Tensor<S> out = Tensor<S>::scalar(S(acc));
    if (detail::track<S>({&t})) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([tn = t.node(), on = out.node()]() {
            if (on->grad.empty() || !tn->requires_grad) return;
            auto& g = detail::gbuf(tn);
            const S go = on->grad[0];
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += go;
        });
    }
    return out;
}

template <class S>
Tensor<S> mean_all(const Tensor<S>& t) {
    if (t.numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
    double acc = 0.0;
    for (S v : t.data()) acc += double(v);
    const std::size_t n = t.numel();
    Tensor<S> out = Tensor<S>::scalar(S(acc / double(n)));
    if (detail::track<S>({&t})) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([tn = t.node(), on = out.node(), n]() {
            if (on->grad.empty() || !tn->requires_grad) return;
            auto& g = detail::gbuf(tn);
            const S go = on->grad[0] / S(double(n));
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += go;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax / layernorm

template <class S>
Tensor<S> softmax(const Tensor<S>& t, int axis) {
    const int r = t.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) + " out of range for " +
                                    shape_str(t.shape()));
    const int n = t.dim(axis);
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= std::size_t(t.dim(i));
    for (int i = axis + 1; i < r; ++i) inner *= std::size_t(t.dim(i));
    Tensor<S> out = Tensor<S>::zeros(t.shape());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * std::size_t(n) * inner + in;
            S mx = t.data()[base];
            for (int j = 1; j < n; ++j) mx = std::max(mx, t.data()[base + std::size_t(j) * inner]);
            double denom = 0.0;
            for (int j = 0; j < n; ++j) {
                S e = S(std::exp(double(t.data()[base + std::size_t(j) * inner] - mx)));
                out.data()[base + std::size_t(j) * inner] = e;
                denom += double(e);
            }
            for (int j = 0; j < n; ++j) out.data()[base + std::size_t(j) * inner] /= S(denom);
        }
    }
    if (detail::track<S>({&t})) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([tn = t.node(), on = out.node(), n, outer, inner]() {
            if (on->grad.empty() || !tn->requires_grad) return;
            auto& g = detail::gbuf(tn);
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * std::size_t(n) * inner + in;
                    double dot = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const std::size_t ix = base + std::size_t(j) * inner;
                        dot += double(on->grad[ix]) * double(on->value[ix]);
                    }
                    for (int j = 0; j < n; ++j) {
                        const std::size_t ix = base + std::size_t(j) * inner;
                        g[ix] += on->value[ix] * (on->grad[ix] - S(dot));
                    }
                }
            }
        });
    }
    return out;
}

// Normalizes over the last dimension with affine gamma/beta.
template <class S>
Tensor<S> layernorm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
    const int d = x.shape().back();
    if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != d || beta.dim(0) != d)
        throw std::invalid_argument("layernorm: affine shapes " + shape_str(gamma.shape()) + "/" +
                                    shape_str(beta.shape()) + " do not match feature dim of " +
                                    shape_str(x.shape()));
    const std::size_t rows = x.numel() / std::size_t(d);
    Tensor<S> out = Tensor<S>::zeros(x.shape());
    std::vector<S> mu(rows), inv(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const S* xr = x.data().data() + r * d;
        double m = 0.0;
        for (int j = 0; j < d; ++j) m += double(xr[j]);
        m /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            double c = double(xr[j]) - m;
            var += c * c;
        }
        var /= d;
        mu[r] = S(m);
        inv[r] = S(1.0 / std::sqrt(var + double(eps)));
        S* yr = out.data().data() + r * d;
        for (int j = 0; j < d; ++j)
            yr[j] = gamma.data()[j] * ((xr[j] - mu[r]) * inv[r]) + beta.data()[j];
    }
    if (detail::track<S>({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node(),
                                   mu = std::move(mu), inv = std::move(inv), rows, d]() {
            if (on->grad.empty()) return;
            for (std::size_t r = 0; r < rows; ++r) {
                const S* xr = xn->value.data() + r * d;
                const S* go = on->grad.data() + r * d;
                if (gn->requires_grad || bn->requires_grad) {
                    auto& gg = detail::gbuf(gn);
                    auto& gb = detail::gbuf(bn);
                    for (int j = 0; j < d; ++j) {
                        const S xhat = (xr[j] - mu[r]) * inv[r];
                        if (gn->requires_grad) gg[j] += go[j] * xhat;
                        if (bn->requires_grad) gb[j] += go[j];
                    }
                }
                if (xn->requires_grad) {
                    auto& gx = detail::gbuf(xn);
                    double s1 = 0.0, s2 = 0.0;  // mean(dy), mean(dy*xhat)
                    for (int j = 0; j < d; ++j) {
                        const S dy = go[j] * gn->value[j];
                        const S xhat = (xr[j] - mu[r]) * inv[r];
                        s1 += double(dy);
                        s2 += double(dy) * double(xhat);
                    }
                    s1 /= d;
                    s2 /= d;
                    for (int j = 0; j < d; ++j) {
                        const S dy = go[j] * gn->value[j];
                        const S xhat = (xr[j] - mu[r]) * inv[r];
                        gx[r * d + j] += inv[r] * (dy - S(s1) - xhat * S(s2));
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// loss kernels

// Cross-entropy from raw logits for one sample.  With label smoothing e the
// target distribution is (1-e)*onehot + e/C.
template <class S>
Tensor<S> cross_entropy_logits(const Tensor<S>& logits, int label, S smoothing = S(0)) {
    const std::size_t C = logits.numel();
    if (label < 0 || std::size_t(label) >= C)
        throw std::invalid_argument("cross_entropy: label " + std::to_string(label) + " outside " +
                                    std::to_string(C) + " classes");
    const S* x = logits.data().data();
    S mx = x[0];
    for (std::size_t i = 1; i < C; ++i) mx = std::max(mx, x[i]);
    double denom = 0.0;
    for (std::size_t i = 0; i < C; ++i) denom += std::exp(double(x[i] - mx));
    const double lse = std::log(denom) + double(mx);
    double loss = 0.0;
    const double e = double(smoothing);
    for (std::size_t i = 0; i < C; ++i) {
        const double t = (1.0 - e) * (std::size_t(label) == i ? 1.0 : 0.0) + e / double(C);
        if (t != 0.0) loss -= t * (double(x[i]) - lse);
    }
    Tensor<S> out = Tensor<S>::scalar(S(loss));
    if (detail::track<S>({&logits})) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([ln = logits.node(), on = out.node(), label, lse, e, C]() {
            if (on->grad.empty() || !ln->requires_grad) return;
            auto& g = detail::gbuf(ln);
            const S go = on->grad[0];
            for (std::size_t i = 0; i < C; ++i) {
                const double p = std::exp(double(ln->value[i]) - lse);
                const double t = (1.0 - e) * (std::size_t(label) == i ? 1.0 : 0.0) + e / double(C);
                g[i] += go * S(p - t);
            }
        });
    }
    return out;
}

// Mean binary cross-entropy of probabilities against {0,1} targets, with the
// log arguments clamped at `clamp` so saturated sigmoids stay finite.
template <class S>
Tensor<S> bce_mean(const Tensor<S>& probs, const std::vector<S>& targets, S clamp = S(1e-7)) {
    const std::size_t n = probs.numel();
    if (targets.size() != n)
        throw std::invalid_argument("bce_mean: " + std::to_string(targets.size()) + " targets for " +
                                    shape_str(probs.shape()));
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = double(probs.data()[i]), t = double(targets[i]);
        loss -= t * std::log(std::max(v, double(clamp)));
        loss -= (1.0 - t) * std::log(std::max(1.0 - v, double(clamp)));
    }
    Tensor<S> out = Tensor<S>::scalar(S(loss / double(n)));
    if (detail::track<S>({&probs})) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([pn = probs.node(), on = out.node(), targets, clamp, n]() {
            if (on->grad.empty() || !pn->requires_grad) return;
            auto& g = detail::gbuf(pn);
            const S go = on->grad[0] / S(double(n));
            for (std::size_t i = 0; i < n; ++i) {
                const S v = pn->value[i], t = targets[i];
                S d = S(0);
                if (v > clamp) d -= t / v;
                if (S(1) - v > clamp) d += (S(1) - t) / (S(1) - v);
                g[i] += go * d;
            }
        });
    }
    return out;
}

// All-pairs Euclidean distance of row features: out[i][j] = |f_i - f_j|_2.
// Zero-distance pairs get zero gradient (subgradient choice at the kink).
template <class S>
Tensor<S> pairwise_euclidean(const Tensor<S>& f) {
    if (f.rank() != 2) throw std::invalid_argument("pairwise_euclidean: expected [B,d], got " + shape_str(f.shape()));
    const int B = f.dim(0), d = f.dim(1);
    Tensor<S> out = Tensor<S>::zeros({B, B});
    for (int i = 0; i < B; ++i) {
        for (int j = i + 1; j < B; ++j) {
            double acc = 0.0;
            const S* fi = f.data().data() + std::size_t(i) * d;
            const S* fj = f.data().data() + std::size_t(j) * d;
            for (int k = 0; k < d; ++k) {
                const double c = double(fi[k]) - double(fj[k]);
                acc += c * c;
            }
            const S dist = S(std::sqrt(acc));
            out.data()[std::size_t(i) * B + j] = dist;
            out.data()[std::size_t(j) * B + i] = dist;
        }
    }
    if (detail::track<S>({&f})) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([fn = f.node(), on = out.node(), B, d]() {
            if (on->grad.empty() || !fn->requires_grad) return;
            auto& g = detail::gbuf(fn);
            for (int i = 0; i < B; ++i) {
                for (int j = 0; j < B; ++j) {
                    if (i == j) continue;
                    const S go = on->grad[std::size_t(i) * B + j];
                    if (go == S(0)) continue;
                    const S dist = on->value[std::size_t(i) * B + j];
                    if (double(dist) < 1e-12) continue;
                    const S* fi = fn->value.data() + std::size_t(i) * d;
                    const S* fj = fn->value.data() + std::size_t(j) * d;
                    const S c = go / dist;
                    for (int k = 0; k < d; ++k) {
                        const S diff = fi[k] - fj[k];
                        g[std::size_t(i) * d + k] += c * diff;
                        g[std::size_t(j) * d + k] -= c * diff;
                    }
                }
            }
        });
    }
    return out;
}

struct TripletStats {
    int anchors_included = 0;
    int anchors_skipped = 0;   // no positive or no negative available
    bool all_excluded = false;
};

// Batch-hard triplet over a precomputed (possibly masked) distance matrix.
// Hardest positive: max distance among same-identity rows, self excluded;
// hardest negative: min among different identities.  Ties break toward the
// lowest sample index.  anchor_ok lets callers drop anchors (teacher forcing
// skips anchors whose part is invisible); empty means all anchors eligible.
template <class S>
Tensor<S> triplet_batch_hard(const Tensor<S>& dmat, const std::vector<int>& ids,
                             const std::vector<std::uint8_t>& anchor_ok, S margin,
                             TripletStats* stats = nullptr) {
    if (dmat.rank() != 2 || dmat.dim(0) != dmat.dim(1))
        throw std::invalid_argument("triplet_batch_hard: distance matrix must be square, got " +
                                    shape_str(dmat.shape()));
    const int B = dmat.dim(0);
    if (int(ids.size()) != B)
        throw std::invalid_argument("triplet_batch_hard: " + std::to_string(ids.size()) + " ids for " +
                                    shape_str(dmat.shape()));
    if (!anchor_ok.empty() && int(anchor_ok.size()) != B)
        throw std::invalid_argument("triplet_batch_hard: anchor mask size mismatch");
    struct Pick { int a, hp, hn; };
    std::vector<Pick> active;
    int included = 0, skipped = 0;
    double loss = 0.0;
    const S* D = dmat.data().data();
    for (int a = 0; a < B; ++a) {
        if (!anchor_ok.empty() && !anchor_ok[a]) continue;
        int hp = -1, hn = -1;
        for (int j = 0; j < B; ++j) {
            if (j == a) continue;
            const S dv = D[std::size_t(a) * B + j];
            if (ids[j] == ids[a]) {
                if (hp < 0 || dv > D[std::size_t(a) * B + hp]) hp = j;
            } else {
                if (hn < 0 || dv < D[std::size_t(a) * B + hn]) hn = j;
            }
        }
        if (hp < 0 || hn < 0) {
            ++skipped;
            continue;
        }
        ++included;
        const double h = double(D[std::size_t(a) * B + hp]) - double(D[std::size_t(a) * B + hn]) +
                         double(margin);
        if (h > 0.0) {
            loss += h;
            active.push_back({a, hp, hn});
        }
    }
    if (stats) {
        stats->anchors_included = included;
        stats->anchors_skipped = skipped;
        stats->all_excluded = included == 0;
    }
    if (included == 0) return Tensor<S>::scalar(S(0));
    Tensor<S> out = Tensor<S>::scalar(S(loss / double(included)));
    if (detail::track<S>({&dmat}) && !active.empty()) {
        out.set_requires_grad(true);
        Tape<S>::active()->record([dn = dmat.node(), on = out.node(), active, included, B]() {
            if (on->grad.empty() || !dn->requires_grad) return;
            auto& g = detail::gbuf(dn);
            const S go = on->grad[0] / S(double(included));
            for (const auto& p : active) {
                g[std::size_t(p.a) * B + p.hp] += go;
                g[std::size_t(p.a) * B + p.hn] -= go;
            }
        });
    }
    return out;
}

}  // namespace pareid
