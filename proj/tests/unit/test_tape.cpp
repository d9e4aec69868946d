#include <algorithm>
#include <cmath>

#include "doctest.h"

#include "denomae/gradcheck.hpp"
#include "denomae/tape.hpp"

#include "test_util.hpp"

using namespace denomae;

namespace {

// Central-difference adjoints of scalar_fn with respect to one input tensor.
template <typename Fn>
TensorT<double> numeric_grad(TensorT<double> x, Fn scalar_fn, double eps = 1e-3) {
    TensorT<double> g(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double saved = x.data[i];
        x.data[i] = saved + eps;
        const double fp = scalar_fn(x);
        x.data[i] = saved - eps;
        const double fm = scalar_fn(x);
        x.data[i] = saved;
        g.data[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

double max_rel_err(const TensorT<double>& a, const TensorT<double>& b) {
    double worst = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double denom = std::max({std::abs(a.data[i]), std::abs(b.data[i]), 1e-6});
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]) / denom);
    }
    return worst;
}

// loss = sum(w . op_output), a generic scalar head for probing op adjoints.
template <typename BuildOp>
void check_op_gradient(const std::vector<std::vector<int>>& input_shapes, BuildOp build,
                       uint64_t seed = 11) {
    RngStream rng(seed);
    std::vector<TensorT<double>> inputs;
    for (const auto& s : input_shapes) inputs.push_back(testutil::random_tensor<double>(s, rng));

    // Shape probe to size the weights.
    TensorT<double> w;
    {
        Tape<double> t;
        std::vector<Tape<double>::Ref> refs;
        for (const auto& x : inputs) refs.push_back(t.leaf(x, false));
        w = testutil::random_tensor<double>(t.val(build(t, refs)).shape, rng);
    }

    auto loss_given = [&](const std::vector<TensorT<double>>& xs) {
        Tape<double> t;
        std::vector<Tape<double>::Ref> refs;
        for (const auto& x : xs) refs.push_back(t.leaf(x, false));
        const auto out = build(t, refs);
        return t.val(t.sum_all(t.mul(out, t.leaf(w)))).data[0];
    };

    // Analytic pass.
    Tape<double> t;
    std::vector<Tape<double>::Ref> refs;
    for (const auto& x : inputs) refs.push_back(t.leaf(x, true));
    const auto out = build(t, refs);
    t.backward(t.sum_all(t.mul(out, t.leaf(w))));

    for (size_t i = 0; i < inputs.size(); ++i) {
        auto probe = inputs;
        const auto numeric = numeric_grad(inputs[i], [&](const TensorT<double>& x) {
            probe[i] = x;
            return loss_given(probe);
        });
        const auto analytic =
            t.has_adj(refs[i]) ? t.val_adj(refs[i]) : TensorT<double>(inputs[i].shape);
        CHECK(max_rel_err(analytic, numeric) < 1e-3);
    }
}

}  // namespace

TEST_CASE("matmul identity passes through") {
    Tape<float> t;
    Tensor eye({2, 2});
    eye.at(0, 0) = eye.at(1, 1) = 1.0f;
    RngStream rng(1);
    const Tensor a = testutil::random_tensor<float>({2, 3}, rng);
    const auto out = t.matmul(t.leaf(eye), t.leaf(a));
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(t.val(out).data[i] == a.data[i]);
}

TEST_CASE("matmul rejects shape mismatch naming both shapes") {
    Tape<float> t;
    const auto a = t.leaf(Tensor({2, 3}));
    const auto b = t.leaf(Tensor({2, 3}));
    CHECK_THROWS_WITH_AS(t.matmul(a, b), doctest::Contains("[2,3]"), ConfigError);
}

TEST_CASE("layer norm of a constant row is zero pre-affine") {
    Tape<float> t;
    const auto x = t.leaf(Tensor::full({1, 8}, 3.25f));
    const auto out = t.layer_norm(x, t.leaf(Tensor::full({8}, 1.0f)), t.leaf(Tensor({8})));
    for (float v : t.val(out).data) CHECK(v == 0.0f);
}

TEST_CASE("softmax of a uniform row is uniform") {
    Tape<float> t;
    const auto out = t.softmax(t.leaf(Tensor({1, 3})));
    for (float v : t.val(out).data) CHECK(v == doctest::Approx(1.0f / 3.0f).epsilon(1e-6));
}

TEST_CASE("single-key softmax is exactly one") {
    Tape<float> t;
    const auto out = t.softmax(t.leaf(Tensor::full({1, 1}, -4.2f)));
    CHECK(t.val(out).data[0] == 1.0f);
}

TEST_CASE("backward: sum(w . x) has gradient w") {
    Tape<float> t;
    RngStream rng(7);
    const Tensor w = testutil::random_tensor<float>({4, 3}, rng);
    const auto x = t.leaf(Tensor::full({4, 3}, 0.5f), true);
    t.backward(t.sum_all(t.mul(t.leaf(w), x)));
    for (int64_t i = 0; i < w.numel(); ++i) CHECK(t.val_adj(x).data[i] == w.data[i]);
}

TEST_CASE("backward: mean(x) spreads 1/n") {
    Tape<float> t;
    const auto x = t.leaf(Tensor({5, 4}), true);
    t.backward(t.mean_all(x));
    for (float g : t.val_adj(x).data) CHECK(g == doctest::Approx(1.0f / 20.0f));
}

TEST_CASE("backward rejects non-scalar loss") {
    Tape<float> t;
    const auto x = t.leaf(Tensor({2, 2}), true);
    const auto y = t.scale(x, 2.0);
    CHECK_THROWS_AS(t.backward(y), NumericError);
}

TEST_CASE("fan-out accumulates both adjoints") {
    Tape<float> t;
    const auto x = t.leaf(Tensor::full({3}, 1.5f), true);
    // loss = sum(x + x) -> dx = 2
    t.backward(t.sum_all(t.add(x, x)));
    for (float g : t.val_adj(x).data) CHECK(g == 2.0f);
}

TEST_CASE("backward visits every reachable op exactly once") {
    Tape<float> t;
    const auto x = t.leaf(Tensor::full({2, 2}, 0.3f), true);
    const auto a = t.gelu(x);
    const auto b = t.mul(a, a);
    const auto c = t.add(a, b);
    const auto loss = t.mean_all(c);
    t.backward(loss);
    CHECK(t.backward_visits() == t.op_count());
}

TEST_CASE("every primitive matches central differences at eps=1e-3") {
    using T = Tape<double>;
    using Refs = const std::vector<T::Ref>&;

    check_op_gradient({{3, 4}, {4, 5}}, [](T& t, Refs r) { return t.matmul(r[0], r[1]); });
    check_op_gradient({{3, 4}, {3, 4}}, [](T& t, Refs r) { return t.add(r[0], r[1]); });
    check_op_gradient({{3, 4}, {3, 4}}, [](T& t, Refs r) { return t.sub(r[0], r[1]); });
    check_op_gradient({{3, 4}, {3, 4}}, [](T& t, Refs r) { return t.mul(r[0], r[1]); });
    check_op_gradient({{4, 3}, {3}}, [](T& t, Refs r) { return t.add_rowvec(r[0], r[1]); });
    check_op_gradient({{3, 4}}, [](T& t, Refs r) { return t.scale(r[0], -1.7); });
    check_op_gradient({{3, 4}}, [](T& t, Refs r) { return t.transpose(r[0]); });
    check_op_gradient({{3, 4}}, [](T& t, Refs r) { return t.reshape(r[0], {2, 6}); });
    check_op_gradient({{3, 4}}, [](T& t, Refs r) { return t.mean_rows(r[0]); });
    check_op_gradient({{5, 1}}, [](T& t, Refs r) { return t.mean_all(r[0]); });
    check_op_gradient({{2, 6}}, [](T& t, Refs r) { return t.softmax(r[0]); });
    check_op_gradient({{2, 6}}, [](T& t, Refs r) { return t.log_softmax(r[0]); });
    check_op_gradient({{3, 5}}, [](T& t, Refs r) { return t.gelu(r[0]); });
    check_op_gradient({{4, 4}, {4}, {4}},
                      [](T& t, Refs r) { return t.layer_norm(r[0], r[1], r[2]); });
    check_op_gradient({{4, 3}, {2, 3}},
                      [](T& t, Refs r) { return t.concat_rows({r[0], r[1]}); });
    check_op_gradient({{3, 2}, {3, 4}},
                      [](T& t, Refs r) { return t.concat_cols({r[0], r[1]}); });
    check_op_gradient({{5, 3}}, [](T& t, Refs r) { return t.slice_rows(r[0], 1, 4); });
    check_op_gradient({{3, 5}}, [](T& t, Refs r) { return t.slice_cols(r[0], 2, 5); });
    check_op_gradient({{5, 3}},
                      [](T& t, Refs r) { return t.gather_rows(r[0], {4, 0, 0, 2}); });
    check_op_gradient({{1, 4}}, [](T& t, Refs r) { return t.tile_rows(r[0], 3); });
    check_op_gradient({{3, 3}}, [](T& t, Refs r) { return t.pick(r[0], 1, 2); });
}

TEST_CASE("float backward agrees with double backward on a small mlp") {
    RngStream rng(23);
    const auto w1 = testutil::random_tensor<double>({6, 8}, rng, 0.5);
    const auto w2 = testutil::random_tensor<double>({8, 1}, rng, 0.5);
    const auto x = testutil::random_tensor<double>({2, 6}, rng);

    auto run = [&](auto tag) {
        using S = decltype(tag);
        Tape<S> t;
        const auto w1r = t.leaf(cast_tensor<S>(w1), true);
        const auto w2r = t.leaf(cast_tensor<S>(w2), true);
        const auto out = t.matmul(t.gelu(t.matmul(t.leaf(cast_tensor<S>(x)), w1r)), w2r);
        t.backward(t.mean_all(out));
        return std::pair{cast_tensor<double>(t.val_adj(w1r)), cast_tensor<double>(t.val_adj(w2r))};
    };
    const auto [f1, f2] = run(float{});
    const auto [d1, d2] = run(double{});
    CHECK(max_rel_err(f1, d1) < 1e-2);
    CHECK(max_rel_err(f2, d2) < 1e-2);
}

TEST_CASE("dropout is identity in eval mode and rescales in train mode") {
    Tape<float> t;
    RngStream rng(5);
    const auto x = t.leaf(Tensor::full({50, 8}, 1.0f));

    const auto eval_out = t.dropout(x, 0.5, rng, false);
    CHECK(eval_out.id == x.id);  // unrecorded, the very same node

    const auto train_out = t.dropout(x, 0.5, rng, true);
    int kept = 0;
    for (float v : t.val(train_out).data) {
        CHECK((v == 0.0f || v == 2.0f));
        kept += v != 0.0f;
    }
    const double keep_rate = static_cast<double>(kept) / 400.0;
    CHECK(keep_rate > 0.35);
    CHECK(keep_rate < 0.65);

    CHECK_THROWS_AS(t.dropout(x, 1.0, rng, true), ConfigError);
}

TEST_CASE("layer norm output is standardized pre-affine") {
    Tape<float> t;
    RngStream rng(9);
    const auto x = t.leaf(testutil::random_tensor<float>({6, 64}, rng, 2.0));
    const auto out =
        t.layer_norm(x, t.leaf(Tensor::full({64}, 1.0f)), t.leaf(Tensor({64})));
    for (int r = 0; r < 6; ++r) {
        double mean = 0.0, var = 0.0;
        for (int c = 0; c < 64; ++c) mean += t.val(out).at(r, c);
        mean /= 64;
        for (int c = 0; c < 64; ++c) {
            const double d = t.val(out).at(r, c) - mean;
            var += d * d;
        }
        var /= 64;
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("ops reject non-finite outputs") {
    Tape<float> t;
    const auto x = t.leaf(Tensor::full({2}, -1.0f));
    CHECK_THROWS_AS(t.log(x), NumericError);
}

TEST_CASE("gradient_check: quadratic is exact") {
    Parameter p("x", {1});
    p.value.data[0] = 3.0f;
    const auto report = gradient_check(
        {&p},
        [](Tape<double>& t, const std::vector<Tape<double>::Ref>& refs) {
            return t.mul(refs[0], refs[0]);
        });
    REQUIRE(report.entries.size() == 1);
    CHECK(report.pass);
    CHECK(report.max_rel_err < 1e-9);
}

TEST_CASE("gradient_check flags a wrong gelu derivative") {
    Parameter p("x", {4});
    RngStream rng(31);
    for (auto& v : p.value.data) v = static_cast<float>(rng.next_gaussian());

    const auto report = gradient_check(
        {&p},
        [](Tape<double>& t, const std::vector<Tape<double>::Ref>& refs) {
            // Forward is gelu; backward pretends the derivative is 1.
            const auto& x = t.val(refs[0]);
            TensorT<double> out(x.shape);
            for (int64_t i = 0; i < x.numel(); ++i) {
                out.data[i] = 0.5 * x.data[i] * (1.0 + std::erf(x.data[i] / std::numbers::sqrt2));
            }
            const auto bad = t.custom(std::move(out), [refs](Tape<double>& tt) {
                auto& da = tt.adj(refs[0]);
                const auto& g = tt.adj_of_last();
                for (int64_t i = 0; i < g.numel(); ++i) da.data[i] += g.data[i];
            });
            return t.mean_all(bad);
        });
    CHECK_FALSE(report.pass);
}

TEST_CASE("gradient_check rejects a non-deterministic function") {
    Parameter p("x", {1});
    p.value.data[0] = 1.0f;
    int calls = 0;
    CHECK_THROWS_AS(gradient_check({&p},
                                   [&calls](Tape<double>& t,
                                            const std::vector<Tape<double>::Ref>& refs) {
                                       return t.scale(refs[0], 1.0 + 0.001 * calls++);
                                   }),
                    NumericError);
}
