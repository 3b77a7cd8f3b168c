#pragma once

#include <cstdint>

#include "tj/tensor.h"

namespace tj {

// Cayley map of the skew-symmetric projection of `raw`:
//   A = (raw - raw^T)/2,  Q = (I + A)^{-1} (I - A).
// Q is orthogonal with det +1 for every real raw matrix, and the whole map
// is differentiable through the solve.
TensorPtr orthogonalize(const TensorPtr& raw);

// Thin QR of a v x k matrix (v >= k) with the R diagonal kept nonnegative;
// returns Q with orthonormal columns. Differentiable. Throws LinalgError on
// rank-deficient input.
TensorPtr semi_orthogonalize(const TensorPtr& raw);

// A learnable square matrix that is exactly orthogonal at every read. The
// constraint lives in the parametrization: optimizers update `raw` freely
// and Q is re-derived lazily.
class OrthogonalParam {
public:
    OrthogonalParam(std::int64_t d, Rng& rng, double stddev);
    explicit OrthogonalParam(TensorPtr raw);

    const TensorPtr& raw() const { return raw_; }
    std::int64_t dim() const { return raw_->shape[0]; }

    // Orthogonal view for the current raw values; cached until invalidated.
    TensorPtr q();

    // Must be called after any in-place mutation of raw (optimizer step).
    void invalidate() {
        dirty_ = true;
        cached_q_.reset();
    }
    bool dirty() const { return dirty_; }

    // max |Q^T Q - I| of the cached matrix; recomputes the cache if dirty.
    double orthogonality_error();

private:
    TensorPtr raw_;
    TensorPtr cached_q_;
    bool dirty_ = true;
    bool cached_grad_mode_ = false;
};

// Rectangular counterpart with orthonormal columns (thin-QR parametrized).
class SemiOrthogonalParam {
public:
    SemiOrthogonalParam(std::int64_t rows, std::int64_t cols, Rng& rng);
    explicit SemiOrthogonalParam(TensorPtr raw);

    const TensorPtr& raw() const { return raw_; }
    std::int64_t rows() const { return raw_->shape[0]; }
    std::int64_t cols() const { return raw_->shape[1]; }

    TensorPtr q();
    void invalidate() {
        dirty_ = true;
        cached_q_.reset();
    }
    bool dirty() const { return dirty_; }
    double orthogonality_error();

private:
    TensorPtr raw_;
    TensorPtr cached_q_;
    bool dirty_ = true;
    bool cached_grad_mode_ = false;
};

// max |Q^T Q - I_k| for an arbitrary matrix with k columns.
double orthogonality_defect(const Tensor& q);

}  // namespace tj
