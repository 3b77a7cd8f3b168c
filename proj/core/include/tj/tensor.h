#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tj/error.h"
#include "tj/rng.h"

namespace tj {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major tensor of doubles, rank <= 3, with reverse-mode autodiff.
// Values are immutable after creation except through optimizer updates on
// leaf parameters; the grad slot accumulates additively across backward calls.
class Tensor : public std::enable_shared_from_this<Tensor> {
public:
    std::vector<std::int64_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // same length as data iff requires_grad

    // Graph linkage for backward traversal.
    std::vector<TensorPtr> parents;
    std::function<void()> backward_fn;
    const char* op = "";

    static TensorPtr create(std::vector<std::int64_t> shape, std::vector<double> values,
                            bool requires_grad = false);
    static TensorPtr zeros(std::vector<std::int64_t> shape, bool requires_grad = false);
    static TensorPtr ones(std::vector<std::int64_t> shape, bool requires_grad = false);
    static TensorPtr full(std::vector<std::int64_t> shape, double value, bool requires_grad = false);
    static TensorPtr scalar(double value, bool requires_grad = false);
    static TensorPtr randn(std::vector<std::int64_t> shape, Rng& rng, double stddev = 1.0,
                           bool requires_grad = false);
    static TensorPtr rand_uniform(std::vector<std::int64_t> shape, Rng& rng, double lo, double hi,
                                  bool requires_grad = false);
    static TensorPtr identity(std::int64_t d);

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
    std::int64_t rows() const;
    std::int64_t cols() const;
    double item() const;
    double at2(std::int64_t i, std::int64_t j) const;

    void ensure_grad();
    void zero_grad();
    void accumulate_grad(const double* g, std::int64_t n);
    bool all_finite() const;

    // Detached copy holding the same values, no graph, no grad.
    TensorPtr detach() const;
};

std::string shape_str(const std::vector<std::int64_t>& shape);

// Thread-local switch; when disabled no graph is recorded (evaluation mode).
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool saved_;
};

// ---- elementwise and structural operations ------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& a, double c);

// Broadcast a scalar tensor (numel == 1) against every element of a.
TensorPtr bcast_add(const TensorPtr& a, const TensorPtr& s);
TensorPtr bcast_sub(const TensorPtr& a, const TensorPtr& s);
TensorPtr bcast_mul(const TensorPtr& a, const TensorPtr& s);
TensorPtr bcast_div(const TensorPtr& a, const TensorPtr& s);

// Add a length-d row vector to every row of an N x d matrix.
TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& v);

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose(const TensorPtr& a);

TensorPtr elu(const TensorPtr& x);
TensorPtr relu(const TensorPtr& x);
TensorPtr sigmoid(const TensorPtr& x);
TensorPtr softmax(const TensorPtr& x, int axis);
TensorPtr dropout(const TensorPtr& x, double p, Rng& rng, bool training);

TensorPtr concat_cols(const TensorPtr& a, const TensorPtr& b);
TensorPtr slice_cols(const TensorPtr& a, std::int64_t begin, std::int64_t end);

// Pooling over the sequence (row) axis of an N x d matrix. An optional
// 0/1 mask of length N restricts pooling to unmasked rows. Max pooling
// routes gradients to the argmax row, lowest index on ties.
TensorPtr mean_pool_rows(const TensorPtr& x, const std::vector<double>* mask = nullptr);
TensorPtr max_pool_rows(const TensorPtr& x, const std::vector<double>* mask = nullptr);

TensorPtr sum(const TensorPtr& a);
TensorPtr mean(const TensorPtr& a);
TensorPtr sum_squares(const TensorPtr& a);

TensorPtr reduce_min(const TensorPtr& v);
TensorPtr reduce_max(const TensorPtr& v);

TensorPtr diag_extract(const TensorPtr& m);
TensorPtr diag_embed(const TensorPtr& v);

// Pick element i of a vector as a scalar tensor.
TensorPtr select(const TensorPtr& v, std::int64_t i);

// Row-wise layer normalization with learnable gain/bias (baseline block).
TensorPtr layer_norm_rows(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                          double eps = 1e-5);

// Negative log likelihood of `target` under softmax(logits); logits is a
// vector (or 1 x C). Stable log-sum-exp formulation.
TensorPtr cross_entropy(const TensorPtr& logits, std::int64_t target);

// Mean cross entropy over rows of an N x V logits matrix against per-row
// targets; optional 0/1 mask excludes rows.
TensorPtr cross_entropy_rows(const TensorPtr& logits, const std::vector<std::int64_t>& targets,
                             const std::vector<double>* mask = nullptr);

// Solve A X = B for square A via partially pivoted LU; differentiable.
TensorPtr linear_solve(const TensorPtr& a, const TensorPtr& b);

// Reverse-mode sweep from a scalar loss. Visits each reachable node once
// in reverse topological order; parameter grads accumulate additively.
void backward(const TensorPtr& loss);

// Plain-value LU solve used by both the forward op and its backward pass.
// Throws LinalgError when a pivot falls below 1e-12.
void lu_solve_raw(std::vector<double> a, std::int64_t d, const double* b, double* x,
                  std::int64_t nrhs);

}  // namespace tj
