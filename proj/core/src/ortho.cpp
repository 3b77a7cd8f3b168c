#include "tj/ortho.h"

#include <cmath>
#include <vector>

namespace tj {

namespace {

TensorPtr skew_project(const TensorPtr& raw) {
    return scale(sub(raw, transpose(raw)), 0.5);
}

}  // namespace

TensorPtr orthogonalize(const TensorPtr& raw) {
    const auto d = raw->rows();
    if (raw->cols() != d) {
        throw ShapeError("orthogonalize: square matrix required, shape " + shape_str(raw->shape));
    }
    if (!raw->all_finite()) {
        throw NumericError("orthogonalize: non-finite raw matrix");
    }
    auto eye = Tensor::identity(d);
    auto a = skew_project(raw);
    auto q = linear_solve(add(eye, a), sub(eye, a));

    // Residual guard on the solve: (I + A) Q should reproduce (I - A).
    double max_res = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
        for (std::int64_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (std::int64_t k = 0; k < d; ++k) {
                acc += (eye->data[static_cast<std::size_t>(i * d + k)] +
                        a->data[static_cast<std::size_t>(i * d + k)]) *
                       q->data[static_cast<std::size_t>(k * d + j)];
            }
            const double want = eye->data[static_cast<std::size_t>(i * d + j)] -
                                a->data[static_cast<std::size_t>(i * d + j)];
            max_res = std::max(max_res, std::fabs(acc - want));
        }
    }
    if (max_res > 1e-8) {
        throw LinalgError("orthogonalize: Cayley solve residual " + std::to_string(max_res));
    }
    return q;
}

TensorPtr semi_orthogonalize(const TensorPtr& raw) {
    const auto m = raw->rows();
    const auto k = raw->cols();
    if (m < k) {
        throw ShapeError("semi_orthogonalize: need rows >= cols, shape " + shape_str(raw->shape));
    }

    // Modified Gram-Schmidt with one re-orthogonalization pass.
    std::vector<double> qd(raw->data);
    std::vector<double> rd(static_cast<std::size_t>(k * k), 0.0);
    double col_scale = 0.0;
    for (double v : raw->data) col_scale = std::max(col_scale, std::fabs(v));
    const double rank_tol = 1e-10 * std::max(1.0, col_scale) * static_cast<double>(m);

    auto col_dot = [&](std::int64_t a, std::int64_t b) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < m; ++i) {
            acc += qd[static_cast<std::size_t>(i * k + a)] * qd[static_cast<std::size_t>(i * k + b)];
        }
        return acc;
    };

    for (std::int64_t j = 0; j < k; ++j) {
        for (int pass = 0; pass < 2; ++pass) {
            for (std::int64_t i = 0; i < j; ++i) {
                const double r = col_dot(i, j);
                rd[static_cast<std::size_t>(i * k + j)] += r;
                for (std::int64_t row = 0; row < m; ++row) {
                    qd[static_cast<std::size_t>(row * k + j)] -=
                        r * qd[static_cast<std::size_t>(row * k + i)];
                }
            }
        }
        const double nrm = std::sqrt(col_dot(j, j));
        if (nrm < rank_tol) {
            throw LinalgError("semi_orthogonalize: rank-deficient input (column " +
                              std::to_string(j) + ")");
        }
        rd[static_cast<std::size_t>(j * k + j)] = nrm;
        const double inv = 1.0 / nrm;
        for (std::int64_t row = 0; row < m; ++row) {
            qd[static_cast<std::size_t>(row * k + j)] *= inv;
        }
    }

    const bool req = grad_enabled() && raw->requires_grad;
    auto out = Tensor::create({m, k}, qd, req);
    out->op = "semi_orthogonalize";
    if (req) {
        out->parents = {raw};
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [raw, ow, m, k, qd = std::move(qd), rd = std::move(rd)]() {
            auto o = ow.lock();
            if (!o) return;
            // Thin-QR adjoint with dR = 0:
            //   M = -dQ^T Q, H = copyltu(M), dA = (dQ + Q H) R^{-T}.
            std::vector<double> mmat(static_cast<std::size_t>(k * k), 0.0);
            for (std::int64_t i = 0; i < k; ++i) {
                for (std::int64_t j = 0; j < k; ++j) {
                    double acc = 0.0;
                    for (std::int64_t row = 0; row < m; ++row) {
                        acc += o->grad[static_cast<std::size_t>(row * k + i)] *
                               qd[static_cast<std::size_t>(row * k + j)];
                    }
                    mmat[static_cast<std::size_t>(i * k + j)] = -acc;
                }
            }
            std::vector<double> h(static_cast<std::size_t>(k * k));
            for (std::int64_t i = 0; i < k; ++i) {
                for (std::int64_t j = 0; j < k; ++j) {
                    h[static_cast<std::size_t>(i * k + j)] =
                        i >= j ? mmat[static_cast<std::size_t>(i * k + j)]
                               : mmat[static_cast<std::size_t>(j * k + i)];
                }
            }
            // B = dQ + Q H
            std::vector<double> bmat(static_cast<std::size_t>(m * k));
            for (std::int64_t row = 0; row < m; ++row) {
                for (std::int64_t j = 0; j < k; ++j) {
                    double acc = o->grad[static_cast<std::size_t>(row * k + j)];
                    for (std::int64_t i = 0; i < k; ++i) {
                        acc += qd[static_cast<std::size_t>(row * k + i)] *
                               h[static_cast<std::size_t>(i * k + j)];
                    }
                    bmat[static_cast<std::size_t>(row * k + j)] = acc;
                }
            }
            // dA = B R^{-T}: solve R dA^T = B^T column by column (R upper).
            std::vector<double> da(static_cast<std::size_t>(m * k));
            std::vector<double> y(static_cast<std::size_t>(k));
            for (std::int64_t row = 0; row < m; ++row) {
                for (std::int64_t i = k - 1; i >= 0; --i) {
                    double acc = bmat[static_cast<std::size_t>(row * k + i)];
                    for (std::int64_t j = i + 1; j < k; ++j) {
                        acc -= rd[static_cast<std::size_t>(i * k + j)] * y[static_cast<std::size_t>(j)];
                    }
                    y[static_cast<std::size_t>(i)] = acc / rd[static_cast<std::size_t>(i * k + i)];
                }
                for (std::int64_t i = 0; i < k; ++i) {
                    da[static_cast<std::size_t>(row * k + i)] = y[static_cast<std::size_t>(i)];
                }
            }
            raw->accumulate_grad(da.data(), m * k);
        };
    }
    return out;
}

double orthogonality_defect(const Tensor& q) {
    const auto m = q.shape[0];
    const auto k = q.shape[1];
    double worst = 0.0;
    for (std::int64_t i = 0; i < k; ++i) {
        for (std::int64_t j = i; j < k; ++j) {
            double acc = 0.0;
            for (std::int64_t row = 0; row < m; ++row) {
                acc += q.data[static_cast<std::size_t>(row * k + i)] *
                       q.data[static_cast<std::size_t>(row * k + j)];
            }
            worst = std::max(worst, std::fabs(acc - (i == j ? 1.0 : 0.0)));
        }
    }
    return worst;
}

OrthogonalParam::OrthogonalParam(std::int64_t d, Rng& rng, double stddev)
    : raw_(Tensor::randn({d, d}, rng, stddev, true)) {}

OrthogonalParam::OrthogonalParam(TensorPtr raw) : raw_(std::move(raw)) {
    if (raw_->rank() != 2 || raw_->shape[0] != raw_->shape[1]) {
        throw ShapeError("OrthogonalParam: square raw required, shape " + shape_str(raw_->shape));
    }
}

TensorPtr OrthogonalParam::q() {
    if (dirty_ || !cached_q_ || cached_grad_mode_ != grad_enabled()) {
        cached_q_ = orthogonalize(raw_);
        cached_grad_mode_ = grad_enabled();
        dirty_ = false;
    }
    return cached_q_;
}

double OrthogonalParam::orthogonality_error() { return orthogonality_defect(*q()); }

SemiOrthogonalParam::SemiOrthogonalParam(std::int64_t rows, std::int64_t cols, Rng& rng)
    : raw_(Tensor::randn({rows, cols}, rng, 1.0, true)) {
    if (rows < cols) {
        throw ShapeError("SemiOrthogonalParam: need rows >= cols");
    }
}

SemiOrthogonalParam::SemiOrthogonalParam(TensorPtr raw) : raw_(std::move(raw)) {
    if (raw_->rank() != 2 || raw_->shape[0] < raw_->shape[1]) {
        throw ShapeError("SemiOrthogonalParam: need rows >= cols, shape " + shape_str(raw_->shape));
    }
}

TensorPtr SemiOrthogonalParam::q() {
    if (dirty_ || !cached_q_ || cached_grad_mode_ != grad_enabled()) {
        cached_q_ = semi_orthogonalize(raw_);
        cached_grad_mode_ = grad_enabled();
        dirty_ = false;
    }
    return cached_q_;
}

double SemiOrthogonalParam::orthogonality_error() { return orthogonality_defect(*q()); }

}  // namespace tj
