#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "oracles.hpp"
#include "pareid/checkpoint.hpp"
#include "pareid/ops.hpp"
#include "pareid/optim.hpp"
#include "pareid/tensor.hpp"

using namespace pareid;

namespace {

TensorD randn(Shape shape, Rng& rng, double scale = 1.0, bool grad = true) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal() * scale;
    return TensorD(std::move(shape), std::move(v), grad);
}

// Runs the finite-difference harness on a unary graph over one input tensor.
template <class Build>
void fd_unary(const char* name, TensorD input, Build&& build, double tol = 1e-6) {
    std::vector<std::pair<std::string, TensorD>> params{{name, input}};
    auto r = oracle::check_gradients(params, [&] { return build(params[0].second); });
    INFO(name, ": worst ", r.worst, " analytic ", r.analytic, " numeric ", r.numeric);
    CHECK(r.max_rel <= tol);
    CHECK(r.checked > 0);
}

}  // namespace

// ---------------------------------------------------------------------------
// rng / seeds

TEST_CASE("mixed seeds differ across streams and repeat across calls") {
    CHECK(mix_seed(1, 2) == mix_seed(1, 2));
    CHECK(mix_seed(1, 2) != mix_seed(1, 3));
    CHECK(mix_seed(1, 2) != mix_seed(2, 2));
    CHECK(mix_seed(0, 0) != 0);
}

TEST_CASE("rng streams are deterministic and bounded") {
    Rng a(42), b(42), c(43);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 1000; ++i) {
        const double u = a.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        all_equal = all_equal && u == b.uniform();
        any_diff = any_diff || u != c.uniform();
    }
    CHECK(all_equal);
    CHECK(any_diff);

    Rng d(7);
    for (int i = 0; i < 200; ++i) {
        const int k = d.uniform_int(5);
        CHECK(k >= 0);
        CHECK(k < 5);
    }
    CHECK_THROWS_AS(d.uniform_int(0), std::invalid_argument);

    Rng e(9);
    for (int i = 0; i < 500; ++i) CHECK(std::fabs(e.truncated_normal(0.02)) <= 0.04 + 1e-12);
}

TEST_CASE("normal samples have roughly unit scale") {
    Rng r(123);
    double sum = 0, sq = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        sum += z;
        sq += z * z;
    }
    CHECK(std::fabs(sum / n) < 0.03);
    CHECK(std::fabs(sq / n - 1.0) < 0.05);
}

// ---------------------------------------------------------------------------
// tensor container

TEST_CASE("tensor shape plumbing and error paths") {
    CHECK_THROWS_AS(TensorD({2, 3}, {1.0, 2.0}), std::invalid_argument);
    TensorD t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.dim(0) == 2);
    CHECK(t.dim(1) == 3);
    CHECK_THROWS(t.item());
    CHECK(TensorD::scalar(4.0).item() == 4.0);
    CHECK(TensorD::full({3}, 2.5).data() == std::vector<double>({2.5, 2.5, 2.5}));
    CHECK_FALSE(t.has_grad());
    CHECK_THROWS_AS(std::as_const(t).grad(), std::logic_error);
    t.grad();  // allocates zeros
    CHECK(t.has_grad());
}

TEST_CASE("ops outside a tape do not track and do not crash") {
    TensorD a({2, 2}, {1, 2, 3, 4}, true);
    TensorD b = matmul(a, a);
    CHECK_FALSE(b.requires_grad());
    CHECK_FALSE(a.has_grad());
}

TEST_CASE("tape scoping nests and backward clears the records") {
    TensorD a({2}, {1.0, 2.0}, true);
    Tape<double> outer;
    (void)scale(a, 2.0);
    CHECK(outer.size() == 1);
    {
        Tape<double> inner;
        CHECK(Tape<double>::active() == &inner);
        (void)scale(a, 3.0);
        CHECK(inner.size() == 1);
        CHECK(outer.size() == 1);
    }
    CHECK(Tape<double>::active() == &outer);
    TensorD loss = sum_all(scale(a, 5.0));
    CHECK(outer.size() == 3);
    outer.backward(loss);
    CHECK(outer.size() == 0);
    CHECK(a.grad() == std::vector<double>({5.0, 5.0}));
}

TEST_CASE("backward rejects non-scalar and untracked losses") {
    Tape<double> tape;
    TensorD a({2}, {1.0, 2.0}, true);
    TensorD v = scale(a, 2.0);
    CHECK_THROWS_AS(tape.backward(v), std::logic_error);
    TensorD untracked({1}, {3.0});
    CHECK_THROWS_AS(tape.backward(untracked), std::logic_error);
}

TEST_CASE("gradients accumulate across reuse of the same tensor") {
    Tape<double> tape;
    TensorD a({2}, {1.0, 3.0}, true);
    TensorD loss = sum_all(add(scale(a, 2.0), scale(a, 3.0)));
    tape.backward(loss);
    CHECK(a.grad() == std::vector<double>({5.0, 5.0}));
}

// ---------------------------------------------------------------------------
// per-op gradient checks (double precision, central differences)

TEST_CASE("matmul values and gradients") {
    TensorD a({2, 3}, {1, 2, 3, 4, 5, 6});
    TensorD b({3, 2}, {7, 8, 9, 10, 11, 12});
    TensorD c = matmul(a, b);
    CHECK(c.data() == std::vector<double>({58, 64, 139, 154}));
    CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);

    Rng rng(1);
    std::vector<std::pair<std::string, TensorD>> params{{"a", randn({3, 4}, rng)},
                                                        {"b", randn({4, 2}, rng)}};
    auto r = oracle::check_gradients(
        params, [&] { return sum_all(gelu(matmul(params[0].second, params[1].second))); });
    CHECK(r.max_rel <= 1e-6);
}

TEST_CASE("matmul counts multiply-accumulates into the tagged bucket") {
    mac_counter().reset();
    TensorD a({2, 3}, std::vector<double>(6, 1.0));
    TensorD b({3, 4}, std::vector<double>(12, 1.0));
    (void)matmul(a, b, MacTag::kAttention);
    CHECK(mac_counter().attention == 24);
    CHECK(mac_counter().projection == 0);
    (void)matmul(a, b);
    CHECK(mac_counter().projection == 24);
    CHECK(mac_counter().total() == 48);
    mac_counter().reset();
    CHECK(mac_counter().total() == 0);
}

TEST_CASE("reshape transpose slice concat gradients") {
    Rng rng(2);
    fd_unary("transpose", randn({3, 4}, rng),
             [](TensorD& t) { return sum_all(mul(transpose(t), transpose(t))); });
    fd_unary("reshape", randn({2, 6}, rng),
             [](TensorD& t) { return sum_all(gelu(reshape(t, {3, 4}))); });
    fd_unary("slice_rows", randn({5, 3}, rng),
             [](TensorD& t) { return sum_all(gelu(slice_rows(t, 1, 3))); });
    fd_unary("slice_last", randn({4, 6}, rng),
             [](TensorD& t) { return sum_all(gelu(slice_last(t, 2, 3))); });
    fd_unary("concat_rows", randn({2, 3}, rng), [](TensorD& t) {
        return sum_all(gelu(concat_rows<double>({t, scale(t, 2.0)})));
    });
    fd_unary("concat_last", randn({3, 2}, rng), [](TensorD& t) {
        return sum_all(gelu(concat_last<double>({t, scale(t, -1.5)})));
    });

    TensorD t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(transpose(t).data() == std::vector<double>({1, 4, 2, 5, 3, 6}));
    CHECK_THROWS_AS(reshape(t, {4, 2}), std::invalid_argument);
    CHECK_THROWS_AS(slice_rows(t, 1, 5), std::invalid_argument);
    CHECK_THROWS_AS(slice_last(t, 2, 2), std::invalid_argument);
}

TEST_CASE("elementwise arithmetic with suffix broadcast") {
    TensorD a({2, 3}, {1, 2, 3, 4, 5, 6});
    TensorD row({3}, {10, 20, 30});
    CHECK(add(a, row).data() == std::vector<double>({11, 22, 33, 14, 25, 36}));
    CHECK(mul(a, row).data() == std::vector<double>({10, 40, 90, 40, 100, 180}));
    CHECK_THROWS_AS(add(a, TensorD({2}, {1, 2})), std::invalid_argument);
    CHECK_THROWS_AS(sub(a, row), std::invalid_argument);  // sub wants exact shapes

    Rng rng(3);
    std::vector<std::pair<std::string, TensorD>> params{{"a", randn({3, 4}, rng)},
                                                        {"b", randn({4}, rng)}};
    auto r = oracle::check_gradients(params, [&] {
        TensorD s = add(params[0].second, params[1].second);
        return sum_all(mul(s, mul(params[0].second, params[1].second)));
    });
    CHECK(r.max_rel <= 1e-6);

    fd_unary("sub+scale+add_n", randn({2, 3}, rng), [](TensorD& t) {
        TensorD d = sub(t, scale(t, 0.25));
        return sum_all(add_n<double>({d, mul(d, d), scale(t, -2.0)}));
    });
}

TEST_CASE("unary op gradients") {
    Rng rng(4);
    fd_unary("gelu", randn({3, 3}, rng), [](TensorD& t) { return sum_all(gelu(t)); });
    fd_unary("sigmoid", randn({7}, rng), [](TensorD& t) { return sum_all(sigmoid(t)); });
    fd_unary("exp", randn({5}, rng, 0.5), [](TensorD& t) { return sum_all(pareid::exp(t)); });

    // keep the arguments of log/sqrt well away from zero before differencing
    TensorD pos({6}, {0.5, 1.1, 2.7, 0.9, 3.3, 1.7}, true);
    fd_unary("log", pos, [](TensorD& t) { return sum_all(pareid::log(t)); });
    fd_unary("sqrt", pos, [](TensorD& t) { return sum_all(pareid::sqrt(t)); });
    fd_unary("mean_all", randn({4, 2}, rng), [](TensorD& t) { return mean_all(mul(t, t)); });
}

TEST_CASE("softmax rows are stochastic and gradients pass the oracle") {
    Rng rng(5);
    TensorD t = randn({4, 6}, rng, 1.5, false);
    TensorD s = softmax(t, -1);
    for (int i = 0; i < 4; ++i) {
        double sum = 0;
        for (int j = 0; j < 6; ++j) {
            const double v = s.data()[std::size_t(i) * 6 + j];
            CHECK(v > 0.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(softmax(t, 2), std::invalid_argument);

    fd_unary("softmax_last", randn({3, 5}, rng),
             [](TensorD& t2) { return sum_all(mul(softmax(t2, -1), t2)); });
    fd_unary("softmax_axis0", randn({3, 5}, rng),
             [](TensorD& t2) { return sum_all(mul(softmax(t2, 0), t2)); });
}

TEST_CASE("layernorm normalizes rows and all three gradients check out") {
    Rng rng(6);
    TensorD x = randn({3, 8}, rng, 2.0, false);
    TensorD ones = TensorD::full({8}, 1.0);
    TensorD zeros = TensorD::zeros({8});
    TensorD y = layernorm(x, ones, zeros, 1e-5);
    for (int i = 0; i < 3; ++i) {
        double m = 0, v = 0;
        for (int j = 0; j < 8; ++j) m += y.data()[std::size_t(i) * 8 + j];
        m /= 8;
        for (int j = 0; j < 8; ++j) {
            const double c = y.data()[std::size_t(i) * 8 + j] - m;
            v += c * c;
        }
        CHECK(std::fabs(m) < 1e-10);
        CHECK(v / 8 == doctest::Approx(1.0).epsilon(1e-3));
    }

    std::vector<std::pair<std::string, TensorD>> params{
        {"x", randn({4, 6}, rng)}, {"gamma", randn({6}, rng, 0.5)}, {"beta", randn({6}, rng, 0.5)}};
    auto r = oracle::check_gradients(params, [&] {
        return sum_all(gelu(layernorm(params[0].second, params[1].second, params[2].second, 1e-5)));
    });
    INFO("worst ", r.worst);
    CHECK(r.max_rel <= 1e-5);
}

TEST_CASE("cross entropy agrees with the closed form and its gradients check") {
    // two logits, label 0: loss = log(1 + exp(b - a))
    TensorD l({2}, {0.3, -0.2});
    CHECK(cross_entropy_logits(l, 0).item() ==
          doctest::Approx(std::log(1.0 + std::exp(-0.5))).epsilon(1e-12));
    CHECK_THROWS_AS(cross_entropy_logits(l, 2), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy_logits(l, -1), std::invalid_argument);

    Rng rng(7);
    fd_unary("ce_plain", randn({9}, rng, 2.0),
             [](TensorD& t) { return cross_entropy_logits(t, 3); });
    fd_unary("ce_smoothed", randn({9}, rng, 2.0),
             [](TensorD& t) { return cross_entropy_logits(t, 5, 0.1); });

    // shift invariance of the underlying softmax
    TensorD big({3}, {1000.0, 1001.0, 999.0});
    CHECK(std::isfinite(cross_entropy_logits(big, 1).item()));
}

TEST_CASE("binary cross entropy matches hand values and differentiates") {
    TensorD p({2}, {0.9, 0.2});
    const double want = -(std::log(0.9) + std::log(0.8)) / 2.0;
    CHECK(bce_mean(p, {1.0, 0.0}).item() == doctest::Approx(want).epsilon(1e-12));
    CHECK_THROWS_AS(bce_mean(p, {1.0}), std::invalid_argument);
    CHECK(std::isfinite(bce_mean(TensorD({2}, {0.0, 1.0}), {1.0, 0.0}).item()));

    TensorD mid({5}, {0.2, 0.35, 0.5, 0.65, 0.8}, true);
    fd_unary("bce", mid, [](TensorD& t) { return bce_mean(t, {1.0, 0.0, 1.0, 1.0, 0.0}); });
}

TEST_CASE("pairwise distances are symmetric, zero-diagonal, and differentiable") {
    Rng rng(8);
    TensorD f = randn({5, 4}, rng, 1.0, false);
    TensorD d = pairwise_euclidean(f);
    for (int i = 0; i < 5; ++i) {
        CHECK(d.data()[std::size_t(i) * 5 + i] == 0.0);
        for (int j = 0; j < 5; ++j)
            CHECK(d.data()[std::size_t(i) * 5 + j] == d.data()[std::size_t(j) * 5 + i]);
    }
    // duplicate rows: distance 0 off-diagonal must not produce NaN gradients
    {
        Tape<double> tape;
        TensorD dup({2, 3}, {1, 2, 3, 1, 2, 3}, true);
        TensorD loss = sum_all(pairwise_euclidean(dup));
        tape.backward(loss);
        for (double g : dup.grad()) CHECK(std::isfinite(g));
    }
    fd_unary("pairwise", randn({4, 3}, rng),
             [](TensorD& t) { return sum_all(gelu(pairwise_euclidean(t))); }, 1e-5);
}

// ---------------------------------------------------------------------------
// batch-hard mining vs the exhaustive oracle

TEST_CASE("batch-hard triplet equals the exhaustive oracle on random batches") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        const int B = 2 + rng.uniform_int(7);  // up to 8
        std::vector<int> ids(B);
        for (int i = 0; i < B; ++i) ids[i] = rng.uniform_int(3);
        std::vector<double> dist(std::size_t(B) * B, 0.0);
        for (int i = 0; i < B; ++i)
            for (int j = i + 1; j < B; ++j)
                dist[std::size_t(i) * B + j] = dist[std::size_t(j) * B + i] = rng.uniform(0.01, 2.0);
        std::vector<std::uint8_t> ok;
        if (trial % 2) {
            ok.resize(B);
            for (int i = 0; i < B; ++i) ok[i] = rng.uniform() < 0.8;
        }
        const double margin = rng.uniform(0.1, 0.5);

        TensorD dmat({B, B}, std::vector<double>(dist));
        TripletStats st;
        const double got = triplet_batch_hard(dmat, ids, ok, margin, &st).item();
        const auto want = oracle::triplet_reference(dist, B, ids, ok, margin);
        CHECK(got == doctest::Approx(want.loss).epsilon(1e-12));
        CHECK(st.anchors_included == want.included);
        CHECK(st.anchors_skipped == want.skipped);
        CHECK(st.all_excluded == (want.included == 0));
    }
}

TEST_CASE("triplet validation and gradient behavior") {
    TensorD bad({2, 3}, std::vector<double>(6, 0.0));
    CHECK_THROWS_AS(triplet_batch_hard(bad, {0, 1}, {}, 0.3), std::invalid_argument);
    TensorD sq({2, 2}, std::vector<double>(4, 0.0));
    CHECK_THROWS_AS(triplet_batch_hard(sq, {0}, {}, 0.3), std::invalid_argument);
    CHECK_THROWS_AS(triplet_batch_hard(sq, {0, 1}, {1}, 0.3), std::invalid_argument);

    // all same identity: every anchor lacks a negative -> exact zero
    TripletStats st;
    TensorD d3({3, 3}, {0, 1, 2, 1, 0, 1, 2, 1, 0});
    CHECK(triplet_batch_hard(d3, {7, 7, 7}, {}, 0.3, &st).item() == 0.0);
    CHECK(st.all_excluded);

    // differentiable through the feature path at a generic point
    Rng rng(11);
    std::vector<int> ids{0, 0, 1, 1};
    std::vector<std::pair<std::string, TensorD>> params{{"f", randn({4, 3}, rng)}};
    auto r = oracle::check_gradients(params, [&] {
        return triplet_batch_hard(pairwise_euclidean(params[0].second), ids, {}, 0.3);
    });
    CHECK(r.max_rel <= 1e-5);
}

// ---------------------------------------------------------------------------
// optimizer

TEST_CASE("cosine schedule hits its endpoints and midpoint") {
    CHECK(cosine_lr(0, 100, 0.004) == doctest::Approx(0.004).epsilon(1e-12));
    CHECK(cosine_lr(50, 100, 0.004) == doctest::Approx(0.002).epsilon(1e-12));
    CHECK(cosine_lr(100, 100, 0.004) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cosine_lr(140, 100, 0.004) == doctest::Approx(0.0).epsilon(1e-12));  // clamped
    CHECK(cosine_lr(25, 100, 1.0) > cosine_lr(75, 100, 1.0));
    CHECK_THROWS_AS(cosine_lr(-1, 100, 0.004), std::invalid_argument);
    CHECK_THROWS_AS(cosine_lr(0, 0, 0.004), std::invalid_argument);
}

TEST_CASE("sgd with momentum and weight decay matches hand arithmetic") {
    TensorF w({2}, {1.0f, -2.0f}, true);
    std::vector<std::pair<std::string, TensorF>> params{{"w", w}};
    SgdMomentum<float> opt(params, 0.9f, 0.1f);

    w.grad() = {0.5f, -0.5f};
    opt.step(0.1f);
    // v = g + wd*w = {0.6, -0.7}; w = w - 0.1*v
    CHECK(w.data()[0] == doctest::Approx(0.94).epsilon(1e-6));
    CHECK(w.data()[1] == doctest::Approx(-1.93).epsilon(1e-6));
    CHECK_FALSE(std::any_of(w.grad().begin(), w.grad().end(), [](float g) { return g != 0.0f; }));

    w.grad() = {0.5f, -0.5f};
    opt.step(0.1f);
    // v' = 0.9*v + (g + wd*w) = 0.9*{0.6,-0.7} + {0.594, -0.693}
    CHECK(w.data()[0] == doctest::Approx(0.94 - 0.1 * (0.54 + 0.594)).epsilon(1e-5));
    CHECK(w.data()[1] == doctest::Approx(-1.93 + 0.1 * (0.63 + 0.693)).epsilon(1e-5));

    auto state = opt.state();
    REQUIRE(state.size() == 1);
    CHECK(state[0].first == "momentum.w");
    CHECK(state[0].second->size() == 2);
}

TEST_CASE("sgd refuses to step a parameter that never got a gradient") {
    TensorF w({1}, {1.0f}, true);
    std::vector<std::pair<std::string, TensorF>> params{{"lonely", w}};
    SgdMomentum<float> opt(params, 0.9f, 0.0f);
    CHECK_THROWS_WITH_AS(opt.step(0.1f), doctest::Contains("lonely"), std::logic_error);
}

// ---------------------------------------------------------------------------
// checkpoint io

TEST_CASE("checkpoint round-trips bit-exact and restores by name") {
    const std::string path = (std::filesystem::temp_directory_path() / "pareid_ckpt_test.bin").string();
    std::vector<StoredTensor> ts{
        {"alpha", {2, 3}, {1.0f, -2.5f, 3.25f, 0.0f, 1e-30f, 4096.0f}},
        {"beta", {4}, {0.1f, 0.2f, 0.3f, 0.4f}},
        {"meta.step", {1}, {42.0f}},
    };
    save_checkpoint(path, ts);
    auto back = load_checkpoint(path);
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        CHECK(back[i].name == ts[i].name);
        CHECK(back[i].shape == ts[i].shape);
        CHECK(back[i].data == ts[i].data);  // exact float equality
    }
    CHECK(find_tensor(back, "beta") != nullptr);
    CHECK(find_tensor(back, "gamma") == nullptr);

    TensorF a({2, 3}, std::vector<float>(6, 0.0f), true);
    TensorF b({4}, std::vector<float>(4, 0.0f), true);
    std::vector<std::pair<std::string, TensorF>> params{{"alpha", a}, {"beta", b}};
    restore_params(back, params);
    CHECK(a.data() == ts[0].data);
    CHECK(b.data() == ts[1].data);
    std::filesystem::remove(path);
}

TEST_CASE("restore reports every missing or mismatched parameter at once") {
    std::vector<StoredTensor> stored{{"present", {2}, {1.0f, 2.0f}},
                                     {"wrong_shape", {3}, {1.0f, 2.0f, 3.0f}}};
    TensorF p({2}, {0.0f, 0.0f}, true);
    TensorF q({2}, {0.0f, 0.0f}, true);
    TensorF r({2}, {0.0f, 0.0f}, true);
    std::vector<std::pair<std::string, TensorF>> params{
        {"present", p}, {"wrong_shape", q}, {"absent", r}};
    try {
        restore_params(stored, params);
        FAIL("expected restore_params to throw");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("wrong_shape") != std::string::npos);
        CHECK(msg.find("absent") != std::string::npos);
    }
}

TEST_CASE("loading garbage files fails loudly") {
    const auto dir = std::filesystem::temp_directory_path();
    const std::string bad = (dir / "pareid_ckpt_bad.bin").string();
    {
        std::FILE* f = std::fopen(bad.c_str(), "wb");
        std::fputs("not a checkpoint", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_checkpoint(bad), std::runtime_error);
    CHECK_THROWS_AS(load_checkpoint((dir / "pareid_ckpt_missing.bin").string()), std::runtime_error);
    std::filesystem::remove(bad);
}
