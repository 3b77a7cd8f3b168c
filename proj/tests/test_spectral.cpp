#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "oracles.h"
#include "tj/spectral.h"
#include "tj/train.h"

using namespace tj;

TEST_CASE("gram of the identity embedding is the identity") {
    auto g = gram(Tensor::identity(5));
    CHECK(oracle::max_abs_diff(g->data, Tensor::identity(5)->data) < 1e-14);
}

TEST_CASE("gram of a single token is the outer product") {
    auto g = gram(Tensor::create({1, 2}, {1.0, 2.0}));
    const std::vector<double> want = {1, 2, 2, 4};
    CHECK(oracle::max_abs_diff(g->data, want) < 1e-14);
}

TEST_CASE("gram is symmetric by construction") {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        auto g = gram(Tensor::randn({6, 4}, rng));
        for (std::int64_t i = 0; i < 4; ++i) {
            for (std::int64_t j = 0; j < 4; ++j) {
                CHECK(std::fabs(g->at2(i, j) - g->at2(j, i)) < 1e-12);
            }
        }
    }
}

TEST_CASE("approx_eigen recovers a diagonal gram exactly with the identity basis") {
    OrthogonalParam u(Tensor::zeros({3, 3}, true));  // cayley(0) = I
    auto g = Tensor::create({3, 3}, {4, 0, 0, 0, 2, 0, 0, 0, 1});
    auto [sigma, recon] = approx_eigen(g, u);
    CHECK(sigma->data[0] == doctest::Approx(4.0));
    CHECK(sigma->data[1] == doctest::Approx(2.0));
    CHECK(sigma->data[2] == doctest::Approx(1.0));
    CHECK(recon->item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("approx_eigen with the exact eigenbasis reproduces the spectrum") {
    // The 45-degree rotation diagonalizes [[2,1],[1,2]] (eigenvalues 3 and 1);
    // cayley generator a solves (1-a^2)/(1+a^2) = 2a/(1+a^2) -> a = sqrt(2)-1.
    const double a = std::sqrt(2.0) - 1.0;
    OrthogonalParam u(Tensor::create({2, 2}, {0.0, -a, a, 0.0}, true));
    auto g = Tensor::create({2, 2}, {2, 1, 1, 2});
    auto [sigma, recon] = approx_eigen(g, u);
    std::vector<double> got = {sigma->data[0], sigma->data[1]};
    std::sort(got.rbegin(), got.rend());
    CHECK(got[0] == doctest::Approx(3.0));
    CHECK(got[1] == doctest::Approx(1.0));
    CHECK(recon->item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("reconstruction loss is bounded by the gram norm") {
    Rng rng(22);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = Tensor::randn({5, 4}, rng);
        auto g = gram(x);
        OrthogonalParam u(Tensor::randn({4, 4}, rng, 1.0, true));
        auto [sigma, recon] = approx_eigen(g, u);
        double g_norm_sq = 0.0;
        for (double v : g->data) g_norm_sq += v * v;
        CHECK(recon->item() >= 0.0);
        CHECK(recon->item() <= g_norm_sq + 1e-9);
    }
}

TEST_CASE("diag(Q^T g Q) is the Frobenius-optimal diagonal for fixed Q") {
    Rng rng(23);
    auto x = Tensor::randn({6, 4}, rng);
    auto g = gram(x);
    OrthogonalParam u(Tensor::randn({4, 4}, rng, 1.0, true));
    auto [sigma, recon] = approx_eigen(g, u);
    const double base = recon->item();
    auto q = u.q();
    // Perturbing any diagonal entry must increase the loss.
    for (std::int64_t i = 0; i < 4; ++i) {
        for (double delta : {0.05, -0.05}) {
            auto perturbed = sigma->detach();
            perturbed->data[static_cast<std::size_t>(i)] += delta;
            auto rebuilt = matmul(matmul(q, diag_embed(perturbed)), transpose(q));
            const double loss = sum_squares(sub(g, rebuilt))->item();
            CHECK(loss > base);
        }
    }
}

TEST_CASE("standardize maps to [0,1] with pinned extremes") {
    auto s = standardize(Tensor::create({3}, {3.0, 1.0, 2.0}));
    CHECK(s->data[0] == doctest::Approx(1.0));
    CHECK(s->data[1] == doctest::Approx(0.0));
    CHECK(s->data[2] == doctest::Approx(0.5));

    auto flat = standardize(Tensor::create({3}, {5.0, 5.0, 5.0}));
    for (double v : flat->data) CHECK(v == doctest::Approx(1.0));

    Rng rng(24);
    for (int trial = 0; trial < 20; ++trial) {
        auto v = Tensor::randn({9}, rng, 3.0);
        auto out = standardize(v);
        double mn = 1e300, mx = -1e300;
        for (double x : out->data) {
            mn = std::min(mn, x);
            mx = std::max(mx, x);
        }
        CHECK(mn == 0.0);  // exact by construction
        CHECK(mx == 1.0);
    }
}

TEST_CASE("standardize is idempotent") {
    Rng rng(25);
    for (int trial = 0; trial < 20; ++trial) {
        auto v = Tensor::randn({8}, rng, 2.0);
        auto once = standardize(v);
        auto twice = standardize(once);
        CHECK(oracle::max_abs_diff(once->data, twice->data) == 0.0);
    }
}

TEST_CASE("random_sigma is deterministic, bounded and degenerate-safe") {
    auto a = random_sigma(16, 77);
    auto b = random_sigma(16, 77);
    CHECK(a->data == b->data);
    auto c = random_sigma(16, 78);
    CHECK(a->data != c->data);
    double mx = -1e300;
    for (double v : a->data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        mx = std::max(mx, v);
    }
    CHECK(mx == 1.0);
    auto single = random_sigma(1, 5);
    CHECK(single->numel() == 1);
    CHECK(single->data[0] == doctest::Approx(1.0));
}

TEST_CASE("linear activation bound: diagonal cases") {
    auto w3 = scale(Tensor::identity(4), 3.0);
    auto r = check_linear_activation_bound(*w3, 500);
    CHECK(r.sigma1 == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(r.empirical <= r.sigma1 + 1e-8);

    auto wd = Tensor::create({2, 2}, {1, 0, 0, 2});
    auto r2 = check_linear_activation_bound(*wd, 500);
    CHECK(r2.sigma1 == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(r2.empirical <= 2.0 + 1e-8);
}

TEST_CASE("power-iteration sigma1 matches the jacobi svd oracle") {
    Rng rng(26);
    for (int trial = 0; trial < 10; ++trial) {
        auto w = Tensor::randn({8, 8}, rng);
        auto r = check_linear_activation_bound(*w, 200, 1000 + trial);
        const auto sv = oracle::jacobi_svd_values(w->data, 8, 8);
        CHECK(std::fabs(r.sigma1 - sv[0]) < 1e-6);
    }
}

TEST_CASE("activation bound check enforces its preconditions") {
    auto w = Tensor::identity(3);
    CHECK_THROWS_AS(check_linear_activation_bound(*w, 99), ContractError);
}

TEST_CASE("stochastic matrices have dominant eigenvalue 1") {
    CHECK(check_stochastic_eigenvalue(*Tensor::identity(5)) == doctest::Approx(1.0));
    auto doubly = Tensor::create({2, 2}, {0.5, 0.5, 0.5, 0.5});
    CHECK(check_stochastic_eigenvalue(*doubly) == doctest::Approx(1.0));

    Rng rng(27);
    for (int trial = 0; trial < 10; ++trial) {
        const std::int64_t n = 10;
        std::vector<double> m(static_cast<std::size_t>(n * n));
        for (std::int64_t j = 0; j < n; ++j) {
            double colsum = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                const double v = rng.uniform() + 1e-3;
                m[static_cast<std::size_t>(i * n + j)] = v;
                colsum += v;
            }
            for (std::int64_t i = 0; i < n; ++i) {
                m[static_cast<std::size_t>(i * n + j)] /= colsum;
            }
        }
        auto t = Tensor::create({n, n}, std::move(m));
        CHECK(std::fabs(check_stochastic_eigenvalue(*t) - 1.0) < 1e-6);
    }
}

TEST_CASE("stochastic eigenvalue check rejects invalid input") {
    auto negative = Tensor::create({2, 2}, {1.5, 0.0, -0.5, 1.0});
    CHECK_THROWS_AS(check_stochastic_eigenvalue(*negative), ContractError);
    auto bad_sum = Tensor::create({2, 2}, {0.7, 0.2, 0.2, 0.7});
    CHECK_THROWS_AS(check_stochastic_eigenvalue(*bad_sum), ContractError);
}

TEST_CASE("the eigenbasis is learnable by gradient descent on the reconstruction") {
    Rng rng(28);
    // Fixed random symmetric g, d = 8.
    auto base = Tensor::randn({8, 8}, rng);
    auto g = scale(add(base, transpose(base)), 0.5);
    OrthogonalParam u(Tensor::randn({8, 8}, rng, 0.3, true));

    const double initial = approx_eigen(g, u).recon_loss->item();
    std::vector<NamedParam> params = {{"u.raw", u.raw()}};
    Adam adam(params, {5e-3, 0.9, 0.98, 1e-9});
    double final_loss = initial;
    for (int step = 0; step < 500; ++step) {
        adam.zero_grad();
        u.invalidate();
        auto recon = approx_eigen(g, u).recon_loss;
        final_loss = recon->item();
        backward(recon);
        adam.step();
    }
    CHECK(final_loss < 0.1 * initial);
}
