#pragma once

// Reverse-mode autodiff on dense row-major tensors.  Ops (see ops.hpp) run
// eagerly and, while a Tape is active, record backward closures onto it in
// creation order; replaying the tape in reverse visits nodes in reverse
// topological order.  Templated on the scalar so tests can run the same
// graph in double for high-precision finite-difference oracles.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pareid {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d < 0) throw std::invalid_argument("negative dimension in shape");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

// Multiply-accumulate accounting.  Attention covers score and mix products
// (the terms that scale with token counts); projections and FFNs land in
// kProjection; everything else in kOther.
enum class MacTag { kAttention, kProjection, kOther };

struct MacCounter {
    std::uint64_t attention = 0;
    std::uint64_t projection = 0;
    std::uint64_t other = 0;
    void add(MacTag tag, std::uint64_t n) {
        switch (tag) {
            case MacTag::kAttention: attention += n; break;
            case MacTag::kProjection: projection += n; break;
            case MacTag::kOther: other += n; break;
        }
    }
    std::uint64_t total() const { return attention + projection + other; }
    void reset() { attention = projection = other = 0; }
};

inline MacCounter& mac_counter() {
    static thread_local MacCounter c;
    return c;
}

// splitmix64 step; used to derive independent child seeds from a root seed
// so that regeneration and resume never depend on consumed RNG state.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic generator with hand-rolled normal sampling so streams are
// identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x6a09e667f3bcc909ULL) {}

    std::uint64_t next_u64() {
        // xorshift* keeps the dependency surface minimal and is plenty for
        // data synthesis and init.
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dULL;
    }

    double uniform() {  // [0,1)
        return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int n) {  // [0,n)
        if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
        return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Normal clipped to two sigmas, the usual transformer init.
    double truncated_normal(double stddev) {
        double z = normal();
        while (std::fabs(z) > 2.0) z = normal();
        return z * stddev;
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

template <class S>
struct TensorNode {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty until first accumulation
    bool requires_grad = false;
};

template <class S>
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<S> values, bool requires_grad = false) {
        if (shape_numel(shape) != values.size())
            throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                        std::to_string(values.size()) + " values");
        n_ = std::make_shared<TensorNode<S>>();
        n_->shape = std::move(shape);
        n_->value = std::move(values);
        n_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape) {
        std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<S>(n, S(0)));
    }

    static Tensor full(Shape shape, S v) {
        std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<S>(n, v));
    }

    static Tensor scalar(S v) { return Tensor({1}, {v}); }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int dim(int i) const { return n_->shape.at(static_cast<std::size_t>(i)); }
    std::size_t numel() const { return n_->value.size(); }

    std::vector<S>& data() { return n_->value; }
    const std::vector<S>& data() const { return n_->value; }

    S item() const {
        if (numel() != 1) throw std::logic_error("item: tensor " + shape_str(shape()) + " is not scalar");
        return n_->value[0];
    }

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool b) { n_->requires_grad = b; }

    // Gradient buffer, allocated as zeros on first touch.
    std::vector<S>& grad() {
        if (n_->grad.empty()) n_->grad.assign(n_->value.size(), S(0));
        return n_->grad;
    }
    const std::vector<S>& grad() const {
        if (n_->grad.empty()) throw std::logic_error("grad: no gradient has been accumulated");
        return n_->grad;
    }
    bool has_grad() const { return !n_->grad.empty(); }
    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), S(0));
    }

    std::shared_ptr<TensorNode<S>> node() const { return n_; }

private:
    std::shared_ptr<TensorNode<S>> n_;
};

// Define-by-run tape.  Construction makes it the active tape for the current
// thread; destruction (or backward) restores the previous one.  One tape per
// optimizer step; backward clears the records so a stale tape can never be
// replayed twice.
template <class S>
class Tape {
public:
    Tape() : prev_(active_ref()) { active_ref() = this; }
    ~Tape() {
        if (active_ref() == this) active_ref() = prev_;
    }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_ref(); }

    void record(std::function<void()> fn) { steps_.push_back(std::move(fn)); }
    std::size_t size() const { return steps_.size(); }

    void backward(const Tensor<S>& loss) {
        if (loss.numel() != 1)
            throw std::logic_error("backward: expected scalar loss, got " + shape_str(loss.shape()));
        if (!loss.requires_grad())
            throw std::logic_error("backward: loss does not depend on any tracked parameter");
        auto ln = loss.node();
        ln->grad.assign(1, S(1));
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
        steps_.clear();
    }

private:
    static Tape*& active_ref() {
        static thread_local Tape* active = nullptr;
        return active;
    }
    std::vector<std::function<void()>> steps_;
    Tape* prev_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace pareid
