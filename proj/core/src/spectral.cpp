#include "tj/spectral.h"

#include <cmath>
#include <vector>

namespace tj {

TensorPtr gram(const TensorPtr& x0) {
    if (x0->rank() != 2) {
        throw ShapeError("gram: N x d matrix required, shape " + shape_str(x0->shape));
    }
    return matmul(transpose(x0), x0);
}

EigenApprox approx_eigen(const TensorPtr& g, OrthogonalParam& u) {
    const auto d = g->rows();
    if (g->cols() != d) {
        throw ShapeError("approx_eigen: square matrix required, shape " + shape_str(g->shape));
    }
    auto q = u.q();
    if (q->rows() != d) {
        throw ShapeError("approx_eigen: basis dim " + std::to_string(q->rows()) +
                         " vs gram dim " + std::to_string(d));
    }
    auto qt = transpose(q);
    auto sigma_raw = diag_extract(matmul(matmul(qt, g), q));
    auto recon = sub(g, matmul(matmul(q, diag_embed(sigma_raw)), qt));
    return EigenApprox{sigma_raw, sum_squares(recon)};
}

TensorPtr standardize(const TensorPtr& sigma_raw) {
    if (sigma_raw->rank() != 1) {
        throw ShapeError("standardize: vector required, shape " + shape_str(sigma_raw->shape));
    }
    double lo = sigma_raw->data[0];
    double hi = sigma_raw->data[0];
    for (double v : sigma_raw->data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi - lo < 1e-12) {
        // Constant spectrum: treat as the all-ones spectrum.
        return Tensor::ones({sigma_raw->numel()});
    }
    auto mn = reduce_min(sigma_raw);
    auto range = sub(reduce_max(sigma_raw), mn);
    return bcast_div(bcast_sub(sigma_raw, mn), range);
}

TensorPtr random_sigma(std::int64_t d, std::uint64_t seed) {
    if (d < 1) {
        throw ContractError("random_sigma: d >= 1 required");
    }
    Rng rng(seed);
    auto raw = Tensor::rand_uniform({d}, rng, 0.0, 1.0);
    return standardize(raw);
}

// ---- checks ---------------------------------------------------------------

namespace {

// Power iteration for the top eigenvalue of the PSD matrix W^T W.
double top_singular_value(const Tensor& w, double tol, int max_iters) {
    const auto m = w.shape[0];
    const auto n = w.shape[1];
    Rng rng(0x5eedULL);
    std::vector<double> v(static_cast<std::size_t>(n));
    double nrm = 0.0;
    for (auto& x : v) {
        x = rng.normal();
        nrm += x * x;
    }
    nrm = std::sqrt(nrm);
    for (auto& x : v) x /= nrm;

    std::vector<double> wv(static_cast<std::size_t>(m));
    std::vector<double> next(static_cast<std::size_t>(n));
    double lambda = 0.0;
    for (int it = 0; it < max_iters; ++it) {
        for (std::int64_t i = 0; i < m; ++i) {
            double acc = 0.0;
            for (std::int64_t j = 0; j < n; ++j) {
                acc += w.data[static_cast<std::size_t>(i * n + j)] * v[static_cast<std::size_t>(j)];
            }
            wv[static_cast<std::size_t>(i)] = acc;
        }
        for (std::int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < m; ++i) {
                acc += w.data[static_cast<std::size_t>(i * n + j)] * wv[static_cast<std::size_t>(i)];
            }
            next[static_cast<std::size_t>(j)] = acc;
        }
        double nn = 0.0;
        for (double x : next) nn += x * x;
        nn = std::sqrt(nn);
        if (nn == 0.0) {
            return 0.0;  // zero matrix
        }
        const double new_lambda = nn;  // eigenvalue of W^T W
        for (std::int64_t j = 0; j < n; ++j) {
            v[static_cast<std::size_t>(j)] = next[static_cast<std::size_t>(j)] / nn;
        }
        if (it > 0 && std::fabs(new_lambda - lambda) <= tol * std::max(1.0, new_lambda)) {
            return std::sqrt(new_lambda);
        }
        lambda = new_lambda;
    }
    throw NumericError("power iteration did not converge within " + std::to_string(max_iters) +
                       " iterations");
}

}  // namespace

ActivationBoundCheck check_linear_activation_bound(const Tensor& w, int trials,
                                                   std::uint64_t seed) {
    if (w.shape.size() != 2) {
        throw ShapeError("check_linear_activation_bound: matrix required");
    }
    if (trials < 100) {
        throw ContractError("check_linear_activation_bound: trials >= 100 required");
    }
    const auto m = w.shape[0];
    const auto n = w.shape[1];

    ActivationBoundCheck result;
    result.sigma1 = top_singular_value(w, 1e-10, 10000);

    Rng rng(seed);
    std::vector<double> x(static_cast<std::size_t>(n));
    std::vector<double> y(static_cast<std::size_t>(m));
    for (int t = 0; t < trials; ++t) {
        double nrm = 0.0;
        for (auto& v : x) {
            v = rng.normal();
            nrm += v * v;
        }
        nrm = std::sqrt(nrm);
        for (auto& v : x) v /= nrm;
        double out = 0.0;
        for (std::int64_t i = 0; i < m; ++i) {
            double acc = 0.0;
            for (std::int64_t j = 0; j < n; ++j) {
                acc += w.data[static_cast<std::size_t>(i * n + j)] * x[static_cast<std::size_t>(j)];
            }
            y[static_cast<std::size_t>(i)] = acc;
            out += acc * acc;
        }
        result.empirical = std::max(result.empirical, std::sqrt(out));
    }

    if (result.empirical > result.sigma1 + 1e-8) {
        throw NumericError("activation bound check violated: empirical " +
                           std::to_string(result.empirical) + " > sigma1 " +
                           std::to_string(result.sigma1));
    }
    return result;
}

double check_stochastic_eigenvalue(const Tensor& m) {
    if (m.shape.size() != 2 || m.shape[0] != m.shape[1]) {
        throw ShapeError("check_stochastic_eigenvalue: square matrix required");
    }
    const auto n = m.shape[0];
    for (std::int64_t j = 0; j < n; ++j) {
        double colsum = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            const double v = m.data[static_cast<std::size_t>(i * n + j)];
            if (v < 0.0) {
                throw ContractError("check_stochastic_eigenvalue: negative entry at (" +
                                    std::to_string(i) + "," + std::to_string(j) + ")");
            }
            colsum += v;
        }
        if (std::fabs(colsum - 1.0) > 1e-9) {
            throw ContractError("check_stochastic_eigenvalue: column " + std::to_string(j) +
                                " sums to " + std::to_string(colsum));
        }
    }

    // Power iteration from a positive start vector; the dominant eigenvalue
    // of a stochastic matrix is real.
    std::vector<double> v(static_cast<std::size_t>(n), 1.0 / static_cast<double>(n));
    std::vector<double> next(static_cast<std::size_t>(n));
    double lambda = 0.0;
    for (int it = 0; it < 20000; ++it) {
        for (std::int64_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::int64_t j = 0; j < n; ++j) {
                acc += m.data[static_cast<std::size_t>(i * n + j)] * v[static_cast<std::size_t>(j)];
            }
            next[static_cast<std::size_t>(i)] = acc;
        }
        double vmv = 0.0;
        double vv = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            vmv += v[static_cast<std::size_t>(i)] * next[static_cast<std::size_t>(i)];
            vv += v[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
        }
        const double new_lambda = vmv / vv;
        double nn = 0.0;
        for (double x : next) nn += x * x;
        nn = std::sqrt(nn);
        if (nn == 0.0) return 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            v[static_cast<std::size_t>(i)] = next[static_cast<std::size_t>(i)] / nn;
        }
        if (it > 0 && std::fabs(new_lambda - lambda) <= 1e-12 * std::max(1.0, std::fabs(new_lambda))) {
            return std::fabs(new_lambda);
        }
        lambda = new_lambda;
    }
    throw NumericError("check_stochastic_eigenvalue: power iteration did not converge");
}

double operator_norm(const Tensor& m, double tol, int max_iters) {
    if (m.shape.size() != 2) {
        throw ShapeError("operator_norm: matrix required");
    }
    return top_singular_value(m, tol, max_iters);
}

}  // namespace tj
