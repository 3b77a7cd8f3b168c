#include "tj/tensor.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <unordered_set>

namespace tj {

namespace {

thread_local bool g_grad_enabled = true;

std::int64_t prod(const std::vector<std::int64_t>& shape) {
    std::int64_t p = 1;
    for (auto s : shape) {
        p *= s;
    }
    return p;
}

void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* what) {
    if (a->shape != b->shape) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    }
}

bool track(const TensorPtr& a) { return g_grad_enabled && a->requires_grad; }

TensorPtr make_node(std::vector<std::int64_t> shape, std::vector<double> values, bool req,
                    const char* op, std::vector<TensorPtr> parents) {
    auto out = Tensor::create(std::move(shape), std::move(values), req);
    out->op = op;
    if (req) {
        out->parents = std::move(parents);
    }
    return out;
}

}  // namespace

std::string shape_str(const std::vector<std::int64_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) {
            s += "x";
        }
        s += std::to_string(shape[i]);
    }
    s += "]";
    return s;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

TensorPtr Tensor::create(std::vector<std::int64_t> shape, std::vector<double> values,
                         bool requires_grad) {
    if (shape.size() > 3) {
        throw ContractError("tensor rank > 3 not supported: " + shape_str(shape));
    }
    for (auto s : shape) {
        if (s <= 0) {
            throw ShapeError("non-positive dimension in shape " + shape_str(shape));
        }
    }
    if (prod(shape) != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(values);
    t->requires_grad = requires_grad;
    if (requires_grad) {
        t->grad.assign(t->data.size(), 0.0);
    }
    return t;
}

TensorPtr Tensor::zeros(std::vector<std::int64_t> shape, bool requires_grad) {
    const auto n = static_cast<std::size_t>(prod(shape));
    return create(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

TensorPtr Tensor::ones(std::vector<std::int64_t> shape, bool requires_grad) {
    const auto n = static_cast<std::size_t>(prod(shape));
    return create(std::move(shape), std::vector<double>(n, 1.0), requires_grad);
}

TensorPtr Tensor::full(std::vector<std::int64_t> shape, double value, bool requires_grad) {
    const auto n = static_cast<std::size_t>(prod(shape));
    return create(std::move(shape), std::vector<double>(n, value), requires_grad);
}

TensorPtr Tensor::scalar(double value, bool requires_grad) {
    return create({1}, {value}, requires_grad);
}

TensorPtr Tensor::randn(std::vector<std::int64_t> shape, Rng& rng, double stddev,
                        bool requires_grad) {
    const auto n = static_cast<std::size_t>(prod(shape));
    std::vector<double> d(n);
    for (auto& v : d) {
        v = rng.normal(0.0, stddev);
    }
    return create(std::move(shape), std::move(d), requires_grad);
}

TensorPtr Tensor::rand_uniform(std::vector<std::int64_t> shape, Rng& rng, double lo, double hi,
                               bool requires_grad) {
    const auto n = static_cast<std::size_t>(prod(shape));
    std::vector<double> d(n);
    for (auto& v : d) {
        v = rng.uniform(lo, hi);
    }
    return create(std::move(shape), std::move(d), requires_grad);
}

TensorPtr Tensor::identity(std::int64_t d) {
    std::vector<double> v(static_cast<std::size_t>(d * d), 0.0);
    for (std::int64_t i = 0; i < d; ++i) {
        v[static_cast<std::size_t>(i * d + i)] = 1.0;
    }
    return create({d, d}, std::move(v), false);
}

std::int64_t Tensor::rows() const {
    if (shape.size() != 2) {
        throw ShapeError("rows(): tensor is not rank-2, shape " + shape_str(shape));
    }
    return shape[0];
}

std::int64_t Tensor::cols() const {
    if (shape.size() != 2) {
        throw ShapeError("cols(): tensor is not rank-2, shape " + shape_str(shape));
    }
    return shape[1];
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item() requires a single-element tensor, shape " + shape_str(shape));
    }
    return data[0];
}

double Tensor::at2(std::int64_t i, std::int64_t j) const {
    return data[static_cast<std::size_t>(i * cols() + j)];
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) {
        grad.assign(data.size(), 0.0);
    }
}

void Tensor::zero_grad() {
    if (requires_grad) {
        grad.assign(data.size(), 0.0);
    }
}

void Tensor::accumulate_grad(const double* g, std::int64_t n) {
    ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) {
        grad[static_cast<std::size_t>(i)] += g[i];
    }
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

TensorPtr Tensor::detach() const { return create(shape, data, false); }

// ---- backward ------------------------------------------------------------

void backward(const TensorPtr& loss) {
    if (loss->numel() != 1) {
        throw ContractError("backward() requires a scalar loss, shape " + shape_str(loss->shape));
    }
    if (!loss->requires_grad) {
        throw ContractError("backward() on a tensor that does not require grad");
    }

    // Iterative post-order DFS over parent edges.
    std::vector<TensorPtr> topo;
    std::unordered_set<const Tensor*> visited;
    std::vector<std::pair<TensorPtr, std::size_t>> stack;
    stack.emplace_back(loss, 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorPtr next = node->parents[idx];
            ++idx;
            if (next && visited.insert(next.get()).second) {
                stack.emplace_back(next, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    loss->ensure_grad();
    loss->grad[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        // Nodes with an empty grad buffer never received a contribution.
        if ((*it)->backward_fn && !(*it)->grad.empty()) {
            (*it)->backward_fn();
        }
    }
}

// ---- elementwise ----------------------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "add");
    const auto n = a->numel();
    std::vector<double> d(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        d[static_cast<std::size_t>(i)] = a->data[static_cast<std::size_t>(i)] +
                                         b->data[static_cast<std::size_t>(i)];
    }
    const bool req = track(a) || track(b);
    auto out = make_node(a->shape, std::move(d), req, "add", {a, b});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [a, b, ow, n]() {
            auto o = ow.lock();
            if (!o) return;
            if (a->requires_grad) a->accumulate_grad(o->grad.data(), n);
            if (b->requires_grad) b->accumulate_grad(o->grad.data(), n);
        };
    }
    return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "sub");
    const auto n = a->numel();
    std::vector<double> d(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        d[static_cast<std::size_t>(i)] = a->data[static_cast<std::size_t>(i)] -
                                         b->data[static_cast<std::size_t>(i)];
    }
    const bool req = track(a) || track(b);
    auto out = make_node(a->shape, std::move(d), req, "sub", {a, b});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [a, b, ow, n]() {
            auto o = ow.lock();
            if (!o) return;
            if (a->requires_grad) a->accumulate_grad(o->grad.data(), n);
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::int64_t i = 0; i < n; ++i) {
                    b->grad[static_cast<std::size_t>(i)] -= o->grad[static_cast<std::size_t>(i)];
                }
            }
        };
    }
    return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape(a, b, "mul");
    const auto n = a->numel();
    std::vector<double> d(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        d[static_cast<std::size_t>(i)] = a->data[static_cast<std::size_t>(i)] *
                                         b->data[static_cast<std::size_t>(i)];
    }
    const bool req = track(a) || track(b);
    auto out = make_node(a->shape, std::move(d), req, "mul", {a, b});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [a, b, ow, n]() {
            auto o = ow.lock();
            if (!o) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::int64_t i = 0; i < n; ++i) {
                    a->grad[static_cast<std::size_t>(i)] +=
                        b->data[static_cast<std::size_t>(i)] * o->grad[static_cast<std::size_t>(i)];
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::int64_t i = 0; i < n; ++i) {
                    b->grad[static_cast<std::size_t>(i)] +=
                        a->data[static_cast<std::size_t>(i)] * o->grad[static_cast<std::size_t>(i)];
                }
            }
        };
    }
    return out;
}

TensorPtr scale(const TensorPtr& a, double c) {
    const auto n = a->numel();
    std::vector<double> d(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        d[static_cast<std::size_t>(i)] = c * a->data[static_cast<std::size_t>(i)];
    }
    const bool req = track(a);
    auto out = make_node(a->shape, std::move(d), req, "scale", {a});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [a, ow, n, c]() {
            auto o = ow.lock();
            if (!o) return;
            a->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) {
                a->grad[static_cast<std::size_t>(i)] += c * o->grad[static_cast<std::size_t>(i)];
            }
        };
    }
    return out;
}

namespace {

// a (any shape) combined with scalar tensor s.
enum class BcastOp { Add, Sub, Mul, Div };

TensorPtr bcast_impl(const TensorPtr& a, const TensorPtr& s, BcastOp kind, const char* name) {
    if (s->numel() != 1) {
        throw ShapeError(std::string(name) + ": second operand must be scalar, shape " +
                         shape_str(s->shape));
    }
    const double sv = s->data[0];
    const auto n = a->numel();
    std::vector<double> d(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double av = a->data[static_cast<std::size_t>(i)];
        switch (kind) {
            case BcastOp::Add: d[static_cast<std::size_t>(i)] = av + sv; break;
            case BcastOp::Sub: d[static_cast<std::size_t>(i)] = av - sv; break;
            case BcastOp::Mul: d[static_cast<std::size_t>(i)] = av * sv; break;
            case BcastOp::Div: d[static_cast<std::size_t>(i)] = av / sv; break;
        }
    }
    const bool req = track(a) || track(s);
    auto out = make_node(a->shape, std::move(d), req, name, {a, s});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [a, s, ow, n, kind, sv]() {
            auto o = ow.lock();
            if (!o) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::int64_t i = 0; i < n; ++i) {
                    double g = o->grad[static_cast<std::size_t>(i)];
                    if (kind == BcastOp::Mul) g *= sv;
                    if (kind == BcastOp::Div) g /= sv;
                    a->grad[static_cast<std::size_t>(i)] += g;
                }
            }
            if (s->requires_grad) {
                s->ensure_grad();
                double acc = 0.0;
                for (std::int64_t i = 0; i < n; ++i) {
                    const double g = o->grad[static_cast<std::size_t>(i)];
                    const double av = a->data[static_cast<std::size_t>(i)];
                    switch (kind) {
                        case BcastOp::Add: acc += g; break;
                        case BcastOp::Sub: acc -= g; break;
                        case BcastOp::Mul: acc += g * av; break;
                        case BcastOp::Div: acc += g * (-av / (sv * sv)); break;
                    }
                }
                s->grad[0] += acc;
            }
        };
    }
    return out;
}

}  // namespace

TensorPtr bcast_add(const TensorPtr& a, const TensorPtr& s) {
    return bcast_impl(a, s, BcastOp::Add, "bcast_add");
}
TensorPtr bcast_sub(const TensorPtr& a, const TensorPtr& s) {
    return bcast_impl(a, s, BcastOp::Sub, "bcast_sub");
}
TensorPtr bcast_mul(const TensorPtr& a, const TensorPtr& s) {
    return bcast_impl(a, s, BcastOp::Mul, "bcast_mul");
}
TensorPtr bcast_div(const TensorPtr& a, const TensorPtr& s) {
    if (s->data[0] == 0.0) {
        throw NumericError("bcast_div: division by zero scalar");
    }
    return bcast_impl(a, s, BcastOp::Div, "bcast_div");
}

TensorPtr add_rowvec(const TensorPtr& a, const TensorPtr& v) {
    const auto m = a->rows();
    const auto d = a->cols();
    if (v->numel() != d) {
        throw ShapeError("add_rowvec: vector " + shape_str(v->shape) + " vs matrix " +
                         shape_str(a->shape));
    }
    std::vector<double> out_d(static_cast<std::size_t>(m * d));
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < d; ++j) {
            out_d[static_cast<std::size_t>(i * d + j)] =
                a->data[static_cast<std::size_t>(i * d + j)] + v->data[static_cast<std::size_t>(j)];
        }
    }
    const bool req = track(a) || track(v);
    auto out = make_node(a->shape, std::move(out_d), req, "add_rowvec", {a, v});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [a, v, ow, m, d]() {
            auto o = ow.lock();
            if (!o) return;
            if (a->requires_grad) a->accumulate_grad(o->grad.data(), m * d);
            if (v->requires_grad) {
                v->ensure_grad();
                for (std::int64_t i = 0; i < m; ++i) {
                    for (std::int64_t j = 0; j < d; ++j) {
                        v->grad[static_cast<std::size_t>(j)] +=
                            o->grad[static_cast<std::size_t>(i * d + j)];
                    }
                }
            }
        };
    }
    return out;
}

// ---- matmul / transpose ----------------------------------------------------

namespace {

// C (m x n) += A (m x k) * B (k x n), row-major, ikj order.
void gemm_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
              std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = b + kk * n;
            for (std::int64_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// C (m x n) += A (m x k) * B^T where B is (n x k).
void gemm_bt_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                 std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::int64_t kk = 0; kk < k; ++kk) {
                acc += arow[kk] * brow[kk];
            }
            crow[j] += acc;
        }
    }
}

// C (k x n) += A^T * B where A is (m x k), B is (m x n).
void gemm_at_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                 std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            double* crow = c + kk * n;
            for (std::int64_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

}  // namespace

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->rank() != 2 || b->rank() != 2 || a->shape[1] != b->shape[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a->shape) + " and " +
                         shape_str(b->shape));
    }
    const auto m = a->shape[0];
    const auto k = a->shape[1];
    const auto n = b->shape[1];
    std::vector<double> d(static_cast<std::size_t>(m * n), 0.0);
    gemm_acc(a->data.data(), b->data.data(), d.data(), m, k, n);
    const bool req = track(a) || track(b);
    auto out = make_node({m, n}, std::move(d), req, "matmul", {a, b});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [a, b, ow, m, k, n]() {
            auto o = ow.lock();
            if (!o) return;
            if (a->requires_grad) {
                a->ensure_grad();
                // dA = dC * B^T
                gemm_bt_acc(o->grad.data(), b->data.data(), a->grad.data(), m, n, k);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                // dB = A^T * dC
                gemm_at_acc(a->data.data(), o->grad.data(), b->grad.data(), m, k, n);
            }
        };
    }
    return out;
}

TensorPtr transpose(const TensorPtr& a) {
    const auto m = a->rows();
    const auto n = a->cols();
    std::vector<double> d(static_cast<std::size_t>(m * n));
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            d[static_cast<std::size_t>(j * m + i)] = a->data[static_cast<std::size_t>(i * n + j)];
        }
    }
    const bool req = track(a);
    auto out = make_node({n, m}, std::move(d), req, "transpose", {a});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [a, ow, m, n]() {
            auto o = ow.lock();
            if (!o) return;
            a->ensure_grad();
            for (std::int64_t i = 0; i < m; ++i) {
                for (std::int64_t j = 0; j < n; ++j) {
                    a->grad[static_cast<std::size_t>(i * n + j)] +=
                        o->grad[static_cast<std::size_t>(j * m + i)];
                }
            }
        };
    }
    return out;
}

// ---- activations -----------------------------------------------------------

TensorPtr elu(const TensorPtr& x) {
    const auto n = x->numel();
    std::vector<double> d(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double v = x->data[static_cast<std::size_t>(i)];
        d[static_cast<std::size_t>(i)] = v > 0.0 ? v : std::expm1(v);
    }
    const bool req = track(x);
    auto out = make_node(x->shape, std::move(d), req, "elu", {x});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [x, ow, n]() {
            auto o = ow.lock();
            if (!o) return;
            x->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) {
                const double v = x->data[static_cast<std::size_t>(i)];
                const double dv = v > 0.0 ? 1.0 : std::exp(v);
                x->grad[static_cast<std::size_t>(i)] += dv * o->grad[static_cast<std::size_t>(i)];
            }
        };
    }
    return out;
}

TensorPtr relu(const TensorPtr& x) {
    const auto n = x->numel();
    std::vector<double> d(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double v = x->data[static_cast<std::size_t>(i)];
        d[static_cast<std::size_t>(i)] = v > 0.0 ? v : 0.0;
    }
    const bool req = track(x);
    auto out = make_node(x->shape, std::move(d), req, "relu", {x});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [x, ow, n]() {
            auto o = ow.lock();
            if (!o) return;
            x->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) {
                if (x->data[static_cast<std::size_t>(i)] > 0.0) {
                    x->grad[static_cast<std::size_t>(i)] += o->grad[static_cast<std::size_t>(i)];
                }
            }
        };
    }
    return out;
}

TensorPtr sigmoid(const TensorPtr& x) {
    const auto n = x->numel();
    std::vector<double> d(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double v = x->data[static_cast<std::size_t>(i)];
        // Branch on sign for stability at large |v|; keep the output inside
        // the open interval (0,1) even where rounding saturates.
        double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        if (s >= 1.0) s = std::nextafter(1.0, 0.0);
        if (s <= 0.0) s = std::nextafter(0.0, 1.0);
        d[static_cast<std::size_t>(i)] = s;
    }
    const bool req = track(x);
    auto out = make_node(x->shape, std::move(d), req, "sigmoid", {x});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [x, ow, n]() {
            auto o = ow.lock();
            if (!o) return;
            x->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) {
                const double s = o->data[static_cast<std::size_t>(i)];
                x->grad[static_cast<std::size_t>(i)] +=
                    s * (1.0 - s) * o->grad[static_cast<std::size_t>(i)];
            }
        };
    }
    return out;
}

TensorPtr softmax(const TensorPtr& x, int axis) {
    if (x->rank() == 1) {
        if (axis != 0) {
            throw ContractError("softmax: axis must be 0 for rank-1 input");
        }
    } else if (x->rank() == 2) {
        if (axis != 0 && axis != 1) {
            throw ContractError("softmax: axis must be 0 or 1 for rank-2 input");
        }
    } else {
        throw ContractError("softmax: rank-1 or rank-2 input required");
    }
    for (double v : x->data) {
        if (!std::isfinite(v)) {
            throw NumericError("softmax: non-finite input");
        }
    }

    const std::int64_t rows = x->rank() == 1 ? 1 : x->shape[0];
    const std::int64_t cols = x->rank() == 1 ? x->shape[0] : x->shape[1];
    // Treat axis-0 softmax on a matrix by iterating columns.
    const bool column_wise = (x->rank() == 2 && axis == 0);
    const std::int64_t nlanes = column_wise ? cols : rows;
    const std::int64_t lanelen = column_wise ? rows : cols;
    const std::int64_t lane_stride = column_wise ? 1 : cols;
    const std::int64_t elem_stride = column_wise ? cols : 1;

    std::vector<double> d(x->data.size());
    for (std::int64_t l = 0; l < nlanes; ++l) {
        const double* src = x->data.data() + l * lane_stride;
        double* dst = d.data() + l * lane_stride;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t i = 0; i < lanelen; ++i) {
            mx = std::max(mx, src[i * elem_stride]);
        }
        double z = 0.0;
        for (std::int64_t i = 0; i < lanelen; ++i) {
            const double e = std::exp(src[i * elem_stride] - mx);
            dst[i * elem_stride] = e;
            z += e;
        }
        for (std::int64_t i = 0; i < lanelen; ++i) {
            dst[i * elem_stride] /= z;
        }
    }

    const bool req = track(x);
    auto out = make_node(x->shape, std::move(d), req, "softmax", {x});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [x, ow, nlanes, lanelen, lane_stride, elem_stride]() {
            auto o = ow.lock();
            if (!o) return;
            x->ensure_grad();
            for (std::int64_t l = 0; l < nlanes; ++l) {
                const double* s = o->data.data() + l * lane_stride;
                const double* g = o->grad.data() + l * lane_stride;
                double dot = 0.0;
                for (std::int64_t i = 0; i < lanelen; ++i) {
                    dot += s[i * elem_stride] * g[i * elem_stride];
                }
                double* gx = x->grad.data() + l * lane_stride;
                for (std::int64_t i = 0; i < lanelen; ++i) {
                    gx[i * elem_stride] += s[i * elem_stride] * (g[i * elem_stride] - dot);
                }
            }
        };
    }
    return out;
}

TensorPtr dropout(const TensorPtr& x, double p, Rng& rng, bool training) {
    if (p < 0.0 || p >= 1.0) {
        throw ContractError("dropout: p must be in [0,1)");
    }
    if (!training || p == 0.0) {
        return x;
    }
    const auto n = x->numel();
    const double keep = 1.0 - p;
    const double inv_keep = 1.0 / keep;
    std::vector<double> mask(static_cast<std::size_t>(n));
    std::vector<double> d(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double m = rng.uniform() < keep ? inv_keep : 0.0;
        mask[static_cast<std::size_t>(i)] = m;
        d[static_cast<std::size_t>(i)] = x->data[static_cast<std::size_t>(i)] * m;
    }
    const bool req = track(x);
    auto out = make_node(x->shape, std::move(d), req, "dropout", {x});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [x, ow, n, mask = std::move(mask)]() {
            auto o = ow.lock();
            if (!o) return;
            x->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) {
                x->grad[static_cast<std::size_t>(i)] +=
                    mask[static_cast<std::size_t>(i)] * o->grad[static_cast<std::size_t>(i)];
            }
        };
    }
    return out;
}

// ---- structure -------------------------------------------------------------

TensorPtr concat_cols(const TensorPtr& a, const TensorPtr& b) {
    const auto m = a->rows();
    if (b->rows() != m) {
        throw ShapeError("concat_cols: row mismatch " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    }
    const auto da = a->cols();
    const auto db = b->cols();
    std::vector<double> d(static_cast<std::size_t>(m * (da + db)));
    for (std::int64_t i = 0; i < m; ++i) {
        std::memcpy(d.data() + i * (da + db), a->data.data() + i * da,
                    static_cast<std::size_t>(da) * sizeof(double));
        std::memcpy(d.data() + i * (da + db) + da, b->data.data() + i * db,
                    static_cast<std::size_t>(db) * sizeof(double));
    }
    const bool req = track(a) || track(b);
    auto out = make_node({m, da + db}, std::move(d), req, "concat_cols", {a, b});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [a, b, ow, m, da, db]() {
            auto o = ow.lock();
            if (!o) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::int64_t i = 0; i < m; ++i) {
                    for (std::int64_t j = 0; j < da; ++j) {
                        a->grad[static_cast<std::size_t>(i * da + j)] +=
                            o->grad[static_cast<std::size_t>(i * (da + db) + j)];
                    }
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::int64_t i = 0; i < m; ++i) {
                    for (std::int64_t j = 0; j < db; ++j) {
                        b->grad[static_cast<std::size_t>(i * db + j)] +=
                            o->grad[static_cast<std::size_t>(i * (da + db) + da + j)];
                    }
                }
            }
        };
    }
    return out;
}

TensorPtr slice_cols(const TensorPtr& a, std::int64_t begin, std::int64_t end) {
    const auto m = a->rows();
    const auto d_in = a->cols();
    if (begin < 0 || end > d_in || begin >= end) {
        throw ContractError("slice_cols: invalid range [" + std::to_string(begin) + "," +
                            std::to_string(end) + ") for " + shape_str(a->shape));
    }
    const auto w = end - begin;
    std::vector<double> d(static_cast<std::size_t>(m * w));
    for (std::int64_t i = 0; i < m; ++i) {
        std::memcpy(d.data() + i * w, a->data.data() + i * d_in + begin,
                    static_cast<std::size_t>(w) * sizeof(double));
    }
    const bool req = track(a);
    auto out = make_node({m, w}, std::move(d), req, "slice_cols", {a});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [a, ow, m, d_in, begin, w]() {
            auto o = ow.lock();
            if (!o) return;
            a->ensure_grad();
            for (std::int64_t i = 0; i < m; ++i) {
                for (std::int64_t j = 0; j < w; ++j) {
                    a->grad[static_cast<std::size_t>(i * d_in + begin + j)] +=
                        o->grad[static_cast<std::size_t>(i * w + j)];
                }
            }
        };
    }
    return out;
}

// ---- pooling / reductions ---------------------------------------------------

namespace {

std::int64_t masked_count(const std::vector<double>* mask, std::int64_t n, const char* what) {
    if (!mask) return n;
    if (static_cast<std::int64_t>(mask->size()) != n) {
        throw ShapeError(std::string(what) + ": mask length " + std::to_string(mask->size()) +
                         " vs rows " + std::to_string(n));
    }
    std::int64_t c = 0;
    for (double v : *mask) {
        if (v != 0.0) ++c;
    }
    if (c == 0) {
        throw ContractError(std::string(what) + ": mask excludes every row");
    }
    return c;
}

}  // namespace

TensorPtr mean_pool_rows(const TensorPtr& x, const std::vector<double>* mask) {
    const auto n = x->rows();
    const auto d = x->cols();
    const auto cnt = masked_count(mask, n, "mean_pool_rows");
    std::vector<double> out_d(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        if (mask && (*mask)[static_cast<std::size_t>(i)] == 0.0) continue;
        for (std::int64_t j = 0; j < d; ++j) {
            out_d[static_cast<std::size_t>(j)] += x->data[static_cast<std::size_t>(i * d + j)];
        }
    }
    const double inv = 1.0 / static_cast<double>(cnt);
    for (auto& v : out_d) v *= inv;
    const bool req = track(x);
    std::vector<double> mask_copy = mask ? *mask : std::vector<double>();
    auto out = make_node({1, d}, std::move(out_d), req, "mean_pool_rows", {x});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [x, ow, n, d, inv, mask_copy = std::move(mask_copy)]() {
            auto o = ow.lock();
            if (!o) return;
            x->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) {
                if (!mask_copy.empty() && mask_copy[static_cast<std::size_t>(i)] == 0.0) continue;
                for (std::int64_t j = 0; j < d; ++j) {
                    x->grad[static_cast<std::size_t>(i * d + j)] +=
                        inv * o->grad[static_cast<std::size_t>(j)];
                }
            }
        };
    }
    return out;
}

TensorPtr max_pool_rows(const TensorPtr& x, const std::vector<double>* mask) {
    const auto n = x->rows();
    const auto d = x->cols();
    masked_count(mask, n, "max_pool_rows");
    std::vector<double> out_d(static_cast<std::size_t>(d));
    std::vector<std::int64_t> arg(static_cast<std::size_t>(d), -1);
    for (std::int64_t j = 0; j < d; ++j) {
        double best = -std::numeric_limits<double>::infinity();
        std::int64_t bi = -1;
        for (std::int64_t i = 0; i < n; ++i) {
            if (mask && (*mask)[static_cast<std::size_t>(i)] == 0.0) continue;
            const double v = x->data[static_cast<std::size_t>(i * d + j)];
            if (v > best) {  // strict: ties keep the lowest index
                best = v;
                bi = i;
            }
        }
        out_d[static_cast<std::size_t>(j)] = best;
        arg[static_cast<std::size_t>(j)] = bi;
    }
    const bool req = track(x);
    auto out = make_node({1, d}, std::move(out_d), req, "max_pool_rows", {x});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [x, ow, d, arg = std::move(arg)]() {
            auto o = ow.lock();
            if (!o) return;
            x->ensure_grad();
            for (std::int64_t j = 0; j < d; ++j) {
                x->grad[static_cast<std::size_t>(arg[static_cast<std::size_t>(j)] * d + j)] +=
                    o->grad[static_cast<std::size_t>(j)];
            }
        };
    }
    return out;
}

TensorPtr sum(const TensorPtr& a) {
    double s = 0.0;
    for (double v : a->data) s += v;
    const bool req = track(a);
    auto out = make_node({1}, {s}, req, "sum", {a});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        const auto n = a->numel();
        out->backward_fn = [a, ow, n]() {
            auto o = ow.lock();
            if (!o) return;
            a->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) {
                a->grad[static_cast<std::size_t>(i)] += o->grad[0];
            }
        };
    }
    return out;
}

TensorPtr mean(const TensorPtr& a) { return scale(sum(a), 1.0 / static_cast<double>(a->numel())); }

TensorPtr sum_squares(const TensorPtr& a) {
    double s = 0.0;
    for (double v : a->data) s += v * v;
    const bool req = track(a);
    auto out = make_node({1}, {s}, req, "sum_squares", {a});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        const auto n = a->numel();
        out->backward_fn = [a, ow, n]() {
            auto o = ow.lock();
            if (!o) return;
            a->ensure_grad();
            for (std::int64_t i = 0; i < n; ++i) {
                a->grad[static_cast<std::size_t>(i)] +=
                    2.0 * a->data[static_cast<std::size_t>(i)] * o->grad[0];
            }
        };
    }
    return out;
}

namespace {

TensorPtr reduce_extreme(const TensorPtr& v, bool want_max, const char* name) {
    const auto n = v->numel();
    std::int64_t bi = 0;
    double best = v->data[0];
    for (std::int64_t i = 1; i < n; ++i) {
        const double x = v->data[static_cast<std::size_t>(i)];
        if (want_max ? x > best : x < best) {
            best = x;
            bi = i;
        }
    }
    const bool req = track(v);
    auto out = make_node({1}, {best}, req, name, {v});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [v, ow, bi]() {
            auto o = ow.lock();
            if (!o) return;
            v->ensure_grad();
            v->grad[static_cast<std::size_t>(bi)] += o->grad[0];
        };
    }
    return out;
}

}  // namespace

TensorPtr reduce_min(const TensorPtr& v) { return reduce_extreme(v, false, "reduce_min"); }
TensorPtr reduce_max(const TensorPtr& v) { return reduce_extreme(v, true, "reduce_max"); }

TensorPtr diag_extract(const TensorPtr& m) {
    const auto d = m->rows();
    if (m->cols() != d) {
        throw ShapeError("diag_extract: square matrix required, shape " + shape_str(m->shape));
    }
    std::vector<double> v(static_cast<std::size_t>(d));
    for (std::int64_t i = 0; i < d; ++i) {
        v[static_cast<std::size_t>(i)] = m->data[static_cast<std::size_t>(i * d + i)];
    }
    const bool req = track(m);
    auto out = make_node({d}, std::move(v), req, "diag_extract", {m});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [m, ow, d]() {
            auto o = ow.lock();
            if (!o) return;
            m->ensure_grad();
            for (std::int64_t i = 0; i < d; ++i) {
                m->grad[static_cast<std::size_t>(i * d + i)] += o->grad[static_cast<std::size_t>(i)];
            }
        };
    }
    return out;
}

TensorPtr diag_embed(const TensorPtr& v) {
    if (v->rank() != 1) {
        throw ShapeError("diag_embed: vector required, shape " + shape_str(v->shape));
    }
    const auto d = v->numel();
    std::vector<double> m(static_cast<std::size_t>(d * d), 0.0);
    for (std::int64_t i = 0; i < d; ++i) {
        m[static_cast<std::size_t>(i * d + i)] = v->data[static_cast<std::size_t>(i)];
    }
    const bool req = track(v);
    auto out = make_node({d, d}, std::move(m), req, "diag_embed", {v});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [v, ow, d]() {
            auto o = ow.lock();
            if (!o) return;
            v->ensure_grad();
            for (std::int64_t i = 0; i < d; ++i) {
                v->grad[static_cast<std::size_t>(i)] += o->grad[static_cast<std::size_t>(i * d + i)];
            }
        };
    }
    return out;
}

TensorPtr select(const TensorPtr& v, std::int64_t i) {
    if (i < 0 || i >= v->numel()) {
        throw ContractError("select: index " + std::to_string(i) + " out of range for " +
                            shape_str(v->shape));
    }
    const bool req = track(v);
    auto out = make_node({1}, {v->data[static_cast<std::size_t>(i)]}, req, "select", {v});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [v, ow, i]() {
            auto o = ow.lock();
            if (!o) return;
            v->ensure_grad();
            v->grad[static_cast<std::size_t>(i)] += o->grad[0];
        };
    }
    return out;
}

TensorPtr layer_norm_rows(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                          double eps) {
    const auto n = x->rows();
    const auto d = x->cols();
    if (gamma->numel() != d || beta->numel() != d) {
        throw ShapeError("layer_norm_rows: gamma/beta must have length " + std::to_string(d));
    }
    std::vector<double> xhat(static_cast<std::size_t>(n * d));
    std::vector<double> inv_std(static_cast<std::size_t>(n));
    std::vector<double> out_d(static_cast<std::size_t>(n * d));
    for (std::int64_t i = 0; i < n; ++i) {
        const double* row = x->data.data() + i * d;
        double mu = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(i)] = is;
        for (std::int64_t j = 0; j < d; ++j) {
            const double h = (row[j] - mu) * is;
            xhat[static_cast<std::size_t>(i * d + j)] = h;
            out_d[static_cast<std::size_t>(i * d + j)] =
                h * gamma->data[static_cast<std::size_t>(j)] + beta->data[static_cast<std::size_t>(j)];
        }
    }
    const bool req = track(x) || track(gamma) || track(beta);
    auto out = make_node(x->shape, std::move(out_d), req, "layer_norm_rows", {x, gamma, beta});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [x, gamma, beta, ow, n, d, xhat = std::move(xhat),
                            inv_std = std::move(inv_std)]() {
            auto o = ow.lock();
            if (!o) return;
            for (std::int64_t i = 0; i < n; ++i) {
                const double* go = o->grad.data() + i * d;
                const double* h = xhat.data() + i * d;
                if (gamma->requires_grad) {
                    gamma->ensure_grad();
                    for (std::int64_t j = 0; j < d; ++j) {
                        gamma->grad[static_cast<std::size_t>(j)] += go[j] * h[j];
                    }
                }
                if (beta->requires_grad) {
                    beta->ensure_grad();
                    for (std::int64_t j = 0; j < d; ++j) {
                        beta->grad[static_cast<std::size_t>(j)] += go[j];
                    }
                }
                if (x->requires_grad) {
                    x->ensure_grad();
                    // dxhat = go * gamma; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_std
                    double m1 = 0.0;
                    double m2 = 0.0;
                    for (std::int64_t j = 0; j < d; ++j) {
                        const double dh = go[j] * gamma->data[static_cast<std::size_t>(j)];
                        m1 += dh;
                        m2 += dh * h[j];
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    const double is = inv_std[static_cast<std::size_t>(i)];
                    for (std::int64_t j = 0; j < d; ++j) {
                        const double dh = go[j] * gamma->data[static_cast<std::size_t>(j)];
                        x->grad[static_cast<std::size_t>(i * d + j)] += (dh - m1 - h[j] * m2) * is;
                    }
                }
            }
        };
    }
    return out;
}

// ---- losses ----------------------------------------------------------------

namespace {

// log-sum-exp of a row plus per-element softmax probabilities.
double row_logsumexp(const double* v, std::int64_t n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < n; ++i) mx = std::max(mx, v[i]);
    double z = 0.0;
    for (std::int64_t i = 0; i < n; ++i) z += std::exp(v[i] - mx);
    return mx + std::log(z);
}

}  // namespace

TensorPtr cross_entropy(const TensorPtr& logits, std::int64_t target) {
    std::int64_t c = 0;
    if (logits->rank() == 1) {
        c = logits->shape[0];
    } else if (logits->rank() == 2 && logits->shape[0] == 1) {
        c = logits->shape[1];
    } else {
        throw ShapeError("cross_entropy: logits must be a vector or 1 x C, shape " +
                         shape_str(logits->shape));
    }
    if (target < 0 || target >= c) {
        throw ContractError("cross_entropy: target " + std::to_string(target) +
                            " out of range for C=" + std::to_string(c));
    }
    const double lse = row_logsumexp(logits->data.data(), c);
    const double loss = lse - logits->data[static_cast<std::size_t>(target)];
    const bool req = track(logits);
    auto out = make_node({1}, {loss}, req, "cross_entropy", {logits});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [logits, ow, c, target, lse]() {
            auto o = ow.lock();
            if (!o) return;
            logits->ensure_grad();
            const double g = o->grad[0];
            for (std::int64_t i = 0; i < c; ++i) {
                const double p = std::exp(logits->data[static_cast<std::size_t>(i)] - lse);
                logits->grad[static_cast<std::size_t>(i)] +=
                    g * (p - (i == target ? 1.0 : 0.0));
            }
        };
    }
    return out;
}

TensorPtr cross_entropy_rows(const TensorPtr& logits, const std::vector<std::int64_t>& targets,
                             const std::vector<double>* mask) {
    const auto n = logits->rows();
    const auto c = logits->cols();
    if (static_cast<std::int64_t>(targets.size()) != n) {
        throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) +
                         " targets vs " + std::to_string(n) + " rows");
    }
    const auto cnt = masked_count(mask, n, "cross_entropy_rows");
    std::vector<double> lses(static_cast<std::size_t>(n), 0.0);
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        if (mask && (*mask)[static_cast<std::size_t>(i)] == 0.0) continue;
        const std::int64_t t = targets[static_cast<std::size_t>(i)];
        if (t < 0 || t >= c) {
            throw ContractError("cross_entropy_rows: target out of range at row " +
                                std::to_string(i));
        }
        const double lse = row_logsumexp(logits->data.data() + i * c, c);
        lses[static_cast<std::size_t>(i)] = lse;
        total += lse - logits->data[static_cast<std::size_t>(i * c + t)];
    }
    const double inv = 1.0 / static_cast<double>(cnt);
    const bool req = track(logits);
    std::vector<double> mask_copy = mask ? *mask : std::vector<double>();
    auto out = make_node({1}, {total * inv}, req, "cross_entropy_rows", {logits});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [logits, ow, n, c, inv, targets, lses = std::move(lses),
                            mask_copy = std::move(mask_copy)]() {
            auto o = ow.lock();
            if (!o) return;
            logits->ensure_grad();
            const double g = o->grad[0] * inv;
            for (std::int64_t i = 0; i < n; ++i) {
                if (!mask_copy.empty() && mask_copy[static_cast<std::size_t>(i)] == 0.0) continue;
                const std::int64_t t = targets[static_cast<std::size_t>(i)];
                const double lse = lses[static_cast<std::size_t>(i)];
                for (std::int64_t j = 0; j < c; ++j) {
                    const double p = std::exp(logits->data[static_cast<std::size_t>(i * c + j)] - lse);
                    logits->grad[static_cast<std::size_t>(i * c + j)] +=
                        g * (p - (j == t ? 1.0 : 0.0));
                }
            }
        };
    }
    return out;
}

// ---- linear solve ------------------------------------------------------------

void lu_solve_raw(std::vector<double> a, std::int64_t d, const double* b, double* x,
                  std::int64_t nrhs) {
    // In-place LU with partial pivoting; a is a row-major copy of the matrix.
    std::vector<std::int64_t> piv(static_cast<std::size_t>(d));
    for (std::int64_t i = 0; i < d; ++i) piv[static_cast<std::size_t>(i)] = i;

    for (std::int64_t k = 0; k < d; ++k) {
        std::int64_t p = k;
        double best = std::fabs(a[static_cast<std::size_t>(k * d + k)]);
        for (std::int64_t i = k + 1; i < d; ++i) {
            const double v = std::fabs(a[static_cast<std::size_t>(i * d + k)]);
            if (v > best) {
                best = v;
                p = i;
            }
        }
        if (best < 1e-12) {
            throw LinalgError("linear_solve: singular matrix (pivot " + std::to_string(best) +
                              " at column " + std::to_string(k) + ")");
        }
        if (p != k) {
            for (std::int64_t j = 0; j < d; ++j) {
                std::swap(a[static_cast<std::size_t>(k * d + j)],
                          a[static_cast<std::size_t>(p * d + j)]);
            }
            std::swap(piv[static_cast<std::size_t>(k)], piv[static_cast<std::size_t>(p)]);
        }
        const double pivot = a[static_cast<std::size_t>(k * d + k)];
        for (std::int64_t i = k + 1; i < d; ++i) {
            const double f = a[static_cast<std::size_t>(i * d + k)] / pivot;
            a[static_cast<std::size_t>(i * d + k)] = f;
            for (std::int64_t j = k + 1; j < d; ++j) {
                a[static_cast<std::size_t>(i * d + j)] -= f * a[static_cast<std::size_t>(k * d + j)];
            }
        }
    }

    // Solve for each right-hand-side column of b (d x nrhs, row-major).
    std::vector<double> y(static_cast<std::size_t>(d));
    for (std::int64_t col = 0; col < nrhs; ++col) {
        for (std::int64_t i = 0; i < d; ++i) {
            double acc = b[piv[static_cast<std::size_t>(i)] * nrhs + col];
            for (std::int64_t j = 0; j < i; ++j) {
                acc -= a[static_cast<std::size_t>(i * d + j)] * y[static_cast<std::size_t>(j)];
            }
            y[static_cast<std::size_t>(i)] = acc;
        }
        for (std::int64_t i = d - 1; i >= 0; --i) {
            double acc = y[static_cast<std::size_t>(i)];
            for (std::int64_t j = i + 1; j < d; ++j) {
                acc -= a[static_cast<std::size_t>(i * d + j)] * x[j * nrhs + col];
            }
            x[i * nrhs + col] = acc / a[static_cast<std::size_t>(i * d + i)];
        }
    }
}

TensorPtr linear_solve(const TensorPtr& a, const TensorPtr& b) {
    const auto d = a->rows();
    if (a->cols() != d) {
        throw ShapeError("linear_solve: A must be square, shape " + shape_str(a->shape));
    }
    if (b->rank() != 2 || b->shape[0] != d) {
        throw ShapeError("linear_solve: B shape " + shape_str(b->shape) + " incompatible with A " +
                         shape_str(a->shape));
    }
    const auto nrhs = b->shape[1];
    std::vector<double> x(static_cast<std::size_t>(d * nrhs));
    lu_solve_raw(a->data, d, b->data.data(), x.data(), nrhs);

    const bool req = track(a) || track(b);
    auto out = make_node({d, nrhs}, std::move(x), req, "linear_solve", {a, b});
    if (req) {
        std::weak_ptr<Tensor> ow = out;
        out->backward_fn = [a, b, ow, d, nrhs]() {
            auto o = ow.lock();
            if (!o) return;
            // Y solves A^T Y = dX; then dB = Y and dA = -Y X^T.
            std::vector<double> at(static_cast<std::size_t>(d * d));
            for (std::int64_t i = 0; i < d; ++i) {
                for (std::int64_t j = 0; j < d; ++j) {
                    at[static_cast<std::size_t>(i * d + j)] = a->data[static_cast<std::size_t>(j * d + i)];
                }
            }
            std::vector<double> y(static_cast<std::size_t>(d * nrhs));
            lu_solve_raw(std::move(at), d, o->grad.data(), y.data(), nrhs);
            if (b->requires_grad) {
                b->accumulate_grad(y.data(), d * nrhs);
            }
            if (a->requires_grad) {
                a->ensure_grad();
                // dA -= Y X^T  (d x nrhs times nrhs x d)
                for (std::int64_t i = 0; i < d; ++i) {
                    for (std::int64_t j = 0; j < d; ++j) {
                        double acc = 0.0;
                        for (std::int64_t k = 0; k < nrhs; ++k) {
                            acc += y[static_cast<std::size_t>(i * nrhs + k)] *
                                   o->data[static_cast<std::size_t>(j * nrhs + k)];
                        }
                        a->grad[static_cast<std::size_t>(i * d + j)] -= acc;
                    }
                }
            }
        };
    }
    return out;
}

}  // namespace tj
