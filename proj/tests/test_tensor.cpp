#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "oracles.h"
#include "tj/tensor.h"

using namespace tj;

TEST_CASE("matmul matches identity and hand values") {
    Rng rng(1);
    auto m = Tensor::randn({3, 3}, rng);
    auto out = matmul(Tensor::identity(3), m);
    CHECK(oracle::max_abs_diff(out->data, m->data) == doctest::Approx(0.0));

    auto a = Tensor::create({2, 2}, {1, 2, 3, 4});
    auto b = Tensor::create({2, 1}, {5, 6});
    auto c = matmul(a, b);
    CHECK(c->data[0] == doctest::Approx(17.0));
    CHECK(c->data[1] == doctest::Approx(39.0));
}

TEST_CASE("matmul matches the naive triple loop on random shapes") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const int m = 1 + static_cast<int>(rng.uniform_int(6));
        const int k = 1 + static_cast<int>(rng.uniform_int(6));
        const int n = 1 + static_cast<int>(rng.uniform_int(6));
        auto a = Tensor::randn({m, k}, rng);
        auto b = Tensor::randn({k, n}, rng);
        auto c = matmul(a, b);
        auto want = oracle::naive_matmul(a->data, b->data, m, k, n);
        CHECK(oracle::max_abs_diff(c->data, want) < 1e-12);
    }
}

TEST_CASE("matmul rejects mismatched shapes naming both") {
    auto a = Tensor::zeros({2, 3});
    auto b = Tensor::zeros({2, 3});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(3);
    auto a = Tensor::randn({3, 4}, rng, 1.0, true);
    auto b = Tensor::randn({4, 2}, rng, 1.0, true);
    const double err = oracle::max_grad_rel_err([&]() { return sum(matmul(a, b)); }, {a, b});
    CHECK(err < 1e-6);
}

TEST_CASE("elu fixed points and value") {
    auto x = Tensor::create({3}, {0.0, 2.5, -1.0});
    auto y = elu(x);
    CHECK(y->data[0] == doctest::Approx(0.0));
    CHECK(y->data[1] == doctest::Approx(2.5));
    CHECK(y->data[2] == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-9));
    CHECK(y->data[2] == doctest::Approx(-0.632121).epsilon(1e-5));
}

TEST_CASE("sigmoid values and range") {
    auto x = Tensor::create({3}, {0.0, 50.0, -6.0});
    auto y = sigmoid(x);
    CHECK(y->data[0] == doctest::Approx(0.5));
    // Saturation stays strictly below 1; one ulp is the closest binary64
    // can get to the mathematical 1 - 2e-22.
    CHECK(y->data[1] >= std::nextafter(1.0, 0.0));
    CHECK(y->data[1] < 1.0);
    CHECK(y->data[2] == doctest::Approx(0.002473).epsilon(1e-3));
}

TEST_CASE("softmax uniform, shift invariance and direct value") {
    auto x = Tensor::create({3}, {0.0, 0.0, 0.0});
    auto y = softmax(x, 0);
    for (double v : y->data) CHECK(v == doctest::Approx(1.0 / 3.0));

    auto a = Tensor::create({4}, {1, 1, 1, 1});
    auto b = Tensor::create({4}, {101, 101, 101, 101});
    auto ya = softmax(a, 0);
    auto yb = softmax(b, 0);
    CHECK(oracle::max_abs_diff(ya->data, yb->data) < 1e-12);

    auto z = softmax(Tensor::create({3}, {1, 2, 3}), 0);
    CHECK(z->data[0] == doctest::Approx(0.09003).epsilon(1e-3));
    CHECK(z->data[1] == doctest::Approx(0.24473).epsilon(1e-3));
    CHECK(z->data[2] == doctest::Approx(0.66524).epsilon(1e-3));
}

TEST_CASE("softmax rows sum to one and stay shift invariant (property)") {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_int(6));
        const int d = 2 + static_cast<int>(rng.uniform_int(6));
        auto x = Tensor::randn({n, d}, rng, 3.0);
        auto s = softmax(x, 1);
        for (int i = 0; i < n; ++i) {
            double total = 0.0;
            for (int j = 0; j < d; ++j) total += s->at2(i, j);
            CHECK(std::fabs(total - 1.0) < 1e-12);
        }
        auto shifted = x->detach();
        for (auto& v : shifted->data) v += 100.0;
        auto s2 = softmax(shifted, 1);
        CHECK(oracle::max_abs_diff(s->data, s2->data) < 1e-12);
    }
}

TEST_CASE("concat width additivity, then slice recovers operands bit-exactly") {
    Rng rng(5);
    auto a = Tensor::randn({4, 3}, rng);
    auto b = Tensor::randn({4, 5}, rng);
    auto c = concat_cols(a, b);
    CHECK(c->cols() == 8);
    auto a2 = slice_cols(c, 0, 3);
    auto b2 = slice_cols(c, 3, 8);
    CHECK(a2->data == a->data);  // bit-exact
    CHECK(b2->data == b->data);
}

TEST_CASE("mean pool of a constant sequence is that constant") {
    auto x = Tensor::create({3, 2}, {7, -2, 7, -2, 7, -2});
    auto p = mean_pool_rows(x);
    CHECK(p->data[0] == doctest::Approx(7.0));
    CHECK(p->data[1] == doctest::Approx(-2.0));
}

TEST_CASE("max pool breaks ties toward the lowest index") {
    auto x = Tensor::create({3, 1}, {5.0, 5.0, 1.0}, true);
    auto p = max_pool_rows(x);
    backward(sum(p));
    CHECK(x->grad[0] == doctest::Approx(1.0));
    CHECK(x->grad[1] == doctest::Approx(0.0));
    CHECK(x->grad[2] == doctest::Approx(0.0));
}

TEST_CASE("cross entropy of uniform logits is ln C") {
    auto logits = Tensor::create({4}, {0.3, 0.3, 0.3, 0.3});
    for (std::int64_t target = 0; target < 4; ++target) {
        CHECK(cross_entropy(logits, target)->item() == doctest::Approx(std::log(4.0)));
        CHECK(cross_entropy(logits, target)->item() == doctest::Approx(1.386294).epsilon(1e-5));
    }
}

TEST_CASE("backward analytic cases") {
    Rng rng(6);
    auto x = Tensor::randn({5}, rng, 1.0, true);
    backward(sum(x));
    for (double g : x->grad) CHECK(g == doctest::Approx(1.0));

    auto y = Tensor::randn({5}, rng, 1.0, true);
    backward(sum(mul(y, y)));
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(y->grad[i] == doctest::Approx(2.0 * y->data[i]));
    }
}

TEST_CASE("backward rejects non-scalar losses and accumulates across calls") {
    auto x = Tensor::ones({3}, true);
    CHECK_THROWS_AS(backward(scale(x, 2.0)), ContractError);

    auto loss1 = sum(x);
    backward(loss1);
    backward(sum(x));
    for (double g : x->grad) CHECK(g == doctest::Approx(2.0));
}

TEST_CASE("random composite gradient matches finite differences") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        auto a = Tensor::randn({3, 3}, rng, 1.0, true);
        auto b = Tensor::randn({3, 3}, rng, 1.0, true);
        auto c = Tensor::randn({3}, rng, 1.0, true);
        auto build = [&]() {
            auto h = matmul(elu(a), sigmoid(b));
            return sum(mul(add_rowvec(h, c), add_rowvec(h, c)));
        };
        CHECK(oracle::max_grad_rel_err(build, {a, b, c}) < 1e-4);
    }
}

TEST_CASE("gradients of every differentiable op match finite differences") {
    Rng rng(8);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::int64_t n = 2 + static_cast<std::int64_t>(rng.uniform_int(7));
        const std::int64_t d = 2 + static_cast<std::int64_t>(rng.uniform_int(7));

        auto x = oracle::randn_off_kink({n, d}, rng);
        auto y = oracle::randn_off_kink({n, d}, rng);
        auto v = oracle::randn_off_kink({d}, rng);
        auto sc = Tensor::create({1}, {1.5 + rng.uniform()}, true);
        auto sq = Tensor::randn({d, d}, rng, 1.0, true);
        auto bmat = Tensor::randn({d, n}, rng, 1.0, true);
        auto vec = Tensor::randn({d}, rng, 1.0, true);
        auto gamma = Tensor::randn({d}, rng, 0.3, true);
        auto beta = Tensor::randn({d}, rng, 0.3, true);
        std::vector<std::int64_t> targets;
        std::vector<double> mask;
        for (std::int64_t i = 0; i < n; ++i) {
            targets.push_back(static_cast<std::int64_t>(rng.uniform_int(
                static_cast<std::uint64_t>(d))));
            mask.push_back(i + 1 == n && n > 1 ? 0.0 : 1.0);
        }

        using Builder = std::function<TensorPtr()>;
        std::vector<std::pair<Builder, std::vector<TensorPtr>>> cases = {
            {[&] { return sum(add(x, y)); }, {x, y}},
            {[&] { return sum(sub(x, y)); }, {x, y}},
            {[&] { return sum(mul(x, y)); }, {x, y}},
            {[&] { return sum(scale(x, -0.7)); }, {x}},
            {[&] { return sum(bcast_add(x, sc)); }, {x, sc}},
            {[&] { return sum(bcast_sub(x, sc)); }, {x, sc}},
            {[&] { return sum(mul(bcast_mul(x, sc), x)); }, {x, sc}},
            {[&] { return sum(bcast_div(x, sc)); }, {x, sc}},
            {[&] { return sum(mul(add_rowvec(x, v), x)); }, {x, v}},
            {[&] { return sum(mul(transpose(x), transpose(y))); }, {x, y}},
            {[&] { return sum(elu(x)); }, {x}},
            {[&] { return sum(relu(x)); }, {x}},
            {[&] { return sum(mul(sigmoid(x), x)); }, {x}},
            {[&] { return sum(mul(softmax(x, 1), y)); }, {x}},
            {[&] { return sum(mul(softmax(x, 0), y)); }, {x}},
            {[&] { return sum(mul(concat_cols(x, y), concat_cols(y, x))); }, {x, y}},
            {[&] { return sum(mul(slice_cols(x, 0, std::max<std::int64_t>(1, d / 2)),
                                  slice_cols(y, 0, std::max<std::int64_t>(1, d / 2)))); },
             {x, y}},
            {[&] { return sum(mul(mean_pool_rows(x), mean_pool_rows(y))); }, {x, y}},
            {[&] { return sum(mul(mean_pool_rows(x, &mask), mean_pool_rows(y, &mask))); }, {x, y}},
            {[&] { return sum(mul(max_pool_rows(x), mean_pool_rows(y))); }, {x, y}},
            {[&] { return sum_squares(x); }, {x}},
            {[&] { return mean(mul(x, y)); }, {x, y}},
            {[&] { return mul(reduce_min(vec), reduce_max(vec)); }, {vec}},
            {[&] { return sum(mul(diag_embed(vec), sq)); }, {vec, sq}},
            {[&] { return sum(mul(diag_extract(sq), vec)); }, {sq, vec}},
            {[&] { return mul(select(vec, d / 2), select(vec, 0)); }, {vec}},
            {[&] { return cross_entropy(vec, d - 1); }, {vec}},
            {[&] { return cross_entropy_rows(x, targets, &mask); }, {x}},
            {[&] { return sum(mul(layer_norm_rows(x, gamma, beta), y)); }, {x, gamma, beta}},
            {[&] {
                 auto a = add(sq, scale(Tensor::identity(d), 5.0));
                 return sum(mul(linear_solve(a, bmat), linear_solve(a, bmat)));
             },
             {sq, bmat}},
        };
        for (auto& [build, params] : cases) {
            worst = std::max(worst, oracle::max_grad_rel_err(build, params));
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("dropout gradient matches finite differences with a fixed mask") {
    Rng rng(9);
    auto x = Tensor::randn({4, 4}, rng, 1.0, true);
    auto build = [&]() {
        Rng mask_rng(42);
        return sum(mul(dropout(x, 0.4, mask_rng, true), x));
    };
    CHECK(oracle::max_grad_rel_err(build, {x}) < 1e-4);
}

TEST_CASE("masked pooling preconditions") {
    auto x = Tensor::ones({2, 2});
    std::vector<double> all_zero{0.0, 0.0};
    CHECK_THROWS_AS(mean_pool_rows(x, &all_zero), ContractError);
    std::vector<double> wrong_len{1.0};
    CHECK_THROWS_AS(mean_pool_rows(x, &wrong_len), ShapeError);
}

TEST_CASE("rank cap and shape validation") {
    CHECK_THROWS_AS(Tensor::create({2, 2, 2, 2}, std::vector<double>(16, 0.0)), ContractError);
    CHECK_THROWS_AS(Tensor::create({2, 2}, {1.0}), ShapeError);
    CHECK_THROWS_AS(Tensor::create({0}, {}), ShapeError);
}

TEST_CASE("no-grad mode records no graph") {
    Rng rng(10);
    auto x = Tensor::randn({3, 3}, rng, 1.0, true);
    NoGradGuard guard;
    auto y = matmul(x, x);
    CHECK_FALSE(y->requires_grad);
    CHECK(y->parents.empty());
}
