#pragma once

// Independent reference implementations used as test oracles. Everything in
// this header is deliberately naive and shares no code with the library
// paths it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tj/tensor.h"

namespace oracle {

// Plain triple-loop matrix product.
inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                        int m, int k, int n) {
    std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int kk = 0; kk < k; ++kk) {
                acc += a[static_cast<std::size_t>(i * k + kk)] *
                       b[static_cast<std::size_t>(kk * n + j)];
            }
            c[static_cast<std::size_t>(i * n + j)] = acc;
        }
    }
    return c;
}

// Singular values by one-sided Jacobi rotations, descending order.
inline std::vector<double> jacobi_svd_values(std::vector<double> a, int m, int n) {
    for (int sweep = 0; sweep < 60; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (int i = 0; i < m; ++i) {
                    const double x = a[static_cast<std::size_t>(i * n + p)];
                    const double y = a[static_cast<std::size_t>(i * n + q)];
                    app += x * x;
                    aqq += y * y;
                    apq += x * y;
                }
                off = std::max(off, std::fabs(apq));
                if (std::fabs(apq) < 1e-15 * std::sqrt(app * aqq + 1e-300)) continue;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int i = 0; i < m; ++i) {
                    const double x = a[static_cast<std::size_t>(i * n + p)];
                    const double y = a[static_cast<std::size_t>(i * n + q)];
                    a[static_cast<std::size_t>(i * n + p)] = c * x - s * y;
                    a[static_cast<std::size_t>(i * n + q)] = s * x + c * y;
                }
            }
        }
        if (off < 1e-14) break;
    }
    std::vector<double> sv(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) {
            const double x = a[static_cast<std::size_t>(i * n + j)];
            acc += x * x;
        }
        sv[static_cast<std::size_t>(j)] = std::sqrt(acc);
    }
    std::sort(sv.rbegin(), sv.rend());
    return sv;
}

// Recursive-descent ListOps evaluator over the expression text.
inline long eval_listops(const std::string& expr, std::size_t& pos) {
    while (pos < expr.size() && expr[pos] == ' ') ++pos;
    if (pos >= expr.size()) throw std::runtime_error("listops oracle: unexpected end");
    if (std::isdigit(static_cast<unsigned char>(expr[pos]))) {
        return expr[pos++] - '0';
    }
    if (expr[pos] != '[') throw std::runtime_error("listops oracle: expected '['");
    ++pos;
    std::string op;
    while (pos < expr.size() && std::isalpha(static_cast<unsigned char>(expr[pos]))) {
        op += expr[pos++];
    }
    std::vector<long> args;
    while (true) {
        while (pos < expr.size() && expr[pos] == ' ') ++pos;
        if (pos >= expr.size()) throw std::runtime_error("listops oracle: unterminated list");
        if (expr[pos] == ']') {
            ++pos;
            break;
        }
        args.push_back(eval_listops(expr, pos));
    }
    if (args.empty()) throw std::runtime_error("listops oracle: empty argument list");
    if (op == "MIN") return *std::min_element(args.begin(), args.end());
    if (op == "MAX") return *std::max_element(args.begin(), args.end());
    if (op == "MED") {
        std::sort(args.begin(), args.end());
        return args[(args.size() - 1) / 2];
    }
    if (op == "SM") {
        long s = 0;
        for (long v : args) s += v;
        return ((s % 10) + 10) % 10;
    }
    throw std::runtime_error("listops oracle: unknown op " + op);
}

inline long eval_listops(const std::string& expr) {
    std::size_t pos = 0;
    const long v = eval_listops(expr, pos);
    while (pos < expr.size() && expr[pos] == ' ') ++pos;
    if (pos != expr.size()) throw std::runtime_error("listops oracle: trailing input");
    return v;
}

// ---- gradient checking -------------------------------------------------------

// Central-difference gradients of build_loss() w.r.t. every entry of every
// listed parameter, compared against reverse-mode gradients. Returns the
// maximum relative error. `build_loss` must rebuild the forward pass from
// the parameters' current data.
inline double max_grad_rel_err(const std::function<tj::TensorPtr()>& build_loss,
                               const std::vector<tj::TensorPtr>& params, double h = 1e-5,
                               const std::function<void()>& on_mutate = nullptr) {
    for (const auto& p : params) {
        p->zero_grad();
    }
    auto loss = build_loss();
    tj::backward(loss);
    std::vector<std::vector<double>> ad_grads;
    for (const auto& p : params) {
        p->ensure_grad();
        ad_grads.push_back(p->grad);
    }

    double worst = 0.0;
    {
        tj::NoGradGuard no_grad;
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            auto& data = params[pi]->data;
            for (std::size_t i = 0; i < data.size(); ++i) {
                const double saved = data[i];
                data[i] = saved + h;
                if (on_mutate) on_mutate();
                const double up = build_loss()->item();
                data[i] = saved - h;
                if (on_mutate) on_mutate();
                const double down = build_loss()->item();
                data[i] = saved;
                if (on_mutate) on_mutate();
                const double fd = (up - down) / (2.0 * h);
                const double ad = ad_grads[pi][i];
                const double denom = std::max({std::fabs(fd), std::fabs(ad), 1e-4});
                worst = std::max(worst, std::fabs(fd - ad) / denom);
            }
        }
    }
    return worst;
}

// Values bounded away from zero, keeping piecewise activations off their
// kinks during finite differencing.
inline tj::TensorPtr randn_off_kink(std::vector<std::int64_t> shape, tj::Rng& rng,
                                    double margin = 0.05, bool requires_grad = true) {
    auto t = tj::Tensor::randn(shape, rng, 1.0, requires_grad);
    for (auto& v : t->data) {
        if (std::fabs(v) < margin) {
            v = v < 0 ? v - margin : v + margin;
        }
    }
    return t;
}

inline double frob_dist(const tj::Tensor& a, const tj::Tensor& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::fabs(a[i] - b[i]));
    }
    return worst;
}

}  // namespace oracle
