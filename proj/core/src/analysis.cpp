#include "tj/analysis.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "tj/encoder.h"

namespace tj {

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

double row_distance(const Tensor& x, std::int64_t i, std::int64_t j) {
    const auto d = x.shape[1];
    double acc = 0.0;
    for (std::int64_t c = 0; c < d; ++c) {
        const double diff = x.data[static_cast<std::size_t>(i * d + c)] -
                            x.data[static_cast<std::size_t>(j * d + c)];
        acc += diff * diff;
    }
    return std::sqrt(acc);
}

double frob_distance(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double diff = a.data[i] - b.data[i];
        acc += diff * diff;
    }
    return std::sqrt(acc);
}

std::string format_value(double v) {
    if (std::isinf(v)) {
        return v < 0 ? "-inf" : "inf";
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

}  // namespace

FactorSummary activation_factor(const TraceBundle& bundle, std::int64_t layer) {
    if (layer < 1) {
        throw ContractError("activation_factor: layer >= 1 required");
    }
    std::vector<double> ratios;
    std::size_t excluded = 0;
    for (const auto& trace : bundle.traces) {
        if (layer >= static_cast<std::int64_t>(trace.size())) {
            throw ContractError("activation_factor: layer " + std::to_string(layer) +
                                " beyond trace depth");
        }
        const auto& x0 = *trace[0];
        const auto& xl = *trace[static_cast<std::size_t>(layer)];
        const auto n = x0.shape[0];
        for (std::int64_t i = 0; i < n; ++i) {
            for (std::int64_t j = i + 1; j < n; ++j) {
                const double base = row_distance(x0, i, j);
                if (base < 1e-12) {
                    ++excluded;
                    continue;
                }
                ratios.push_back(row_distance(xl, i, j) / base);
            }
        }
    }
    if (ratios.empty()) {
        throw DataError("activation_factor: every token pair is degenerate at layer 0");
    }
    std::sort(ratios.begin(), ratios.end());
    FactorSummary s;
    s.pairs = ratios.size();
    s.excluded = excluded;
    double total = 0.0;
    for (double r : ratios) total += r;
    s.mean = total / static_cast<double>(ratios.size());
    s.median = quantile_sorted(ratios, 0.5);
    s.q1 = quantile_sorted(ratios, 0.25);
    s.q3 = quantile_sorted(ratios, 0.75);
    return s;
}

double empirical_activation_bound(const std::function<TensorPtr(const TensorPtr&)>& map,
                                  const std::function<TensorPtr()>& sampler, int trials) {
    if (trials < 1000) {
        throw ContractError("empirical_activation_bound: trials >= 1000 required");
    }
    NoGradGuard no_grad;
    double best = 0.0;
    for (int t = 0; t < trials; ++t) {
        auto x = sampler();
        auto y = sampler();
        const double dx = frob_distance(*x, *y);
        if (dx < 1e-12) {
            continue;
        }
        auto fx = map(x);
        auto fy = map(y);
        best = std::max(best, frob_distance(*fx, *fy) / dx);
    }
    return best;
}

EntropyEstimate knn_entropy_1d(std::vector<double> values, int k) {
    EntropyEstimate est;
    const auto n = values.size();
    if (n < static_cast<std::size_t>(k + 1)) {
        est.value = -std::numeric_limits<double>::infinity();
        return est;
    }
    std::sort(values.begin(), values.end());

    // Count distinct values; jitter exact duplicates deterministically.
    std::size_t distinct = 1;
    for (std::size_t i = 1; i < n; ++i) {
        if (values[i] != values[i - 1]) ++distinct;
    }
    if (distinct < static_cast<std::size_t>(k + 1)) {
        est.value = -std::numeric_limits<double>::infinity();
        return est;
    }
    for (std::size_t i = 1; i < n; ++i) {
        if (values[i] <= values[i - 1]) {
            values[i] = values[i - 1] + 1e-12;
            ++est.duplicates;
        }
    }

    // H = H_{n-1} - H_{k-1} + ln 2 + (1/n) sum ln eps_k(i), where eps_k is
    // the distance to the k-th nearest neighbour (digamma of integer
    // arguments reduces to harmonic numbers).
    auto harmonic = [](std::size_t m) {
        double h = 0.0;
        for (std::size_t i = 1; i <= m; ++i) h += 1.0 / static_cast<double>(i);
        return h;
    };

    double log_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        // k-th smallest |values[i] - values[j]|, found by merging sorted
        // neighbours on both sides.
        std::size_t left = i;
        std::size_t right = i;
        double eps = 0.0;
        for (int step = 0; step < k; ++step) {
            const double dl = left > 0 ? values[i] - values[left - 1]
                                       : std::numeric_limits<double>::infinity();
            const double dr = right + 1 < n ? values[right + 1] - values[i]
                                            : std::numeric_limits<double>::infinity();
            if (dl <= dr) {
                eps = dl;
                --left;
            } else {
                eps = dr;
                ++right;
            }
        }
        log_sum += std::log(eps);
    }
    est.value = harmonic(n - 1) - harmonic(static_cast<std::size_t>(k - 1)) + std::log(2.0) +
                log_sum / static_cast<double>(n);
    return est;
}

EntropyEstimate differential_entropy(const TensorPtr& x_layer, int k) {
    const auto n = x_layer->rows();
    const auto d = x_layer->cols();
    if (n * d < 50) {
        throw ContractError("differential_entropy: need at least 50 pooled values, got " +
                            std::to_string(n * d));
    }
    EntropyEstimate out;
    double total = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        std::vector<double> row(x_layer->data.begin() + i * d,
                                x_layer->data.begin() + (i + 1) * d);
        const auto est = knn_entropy_1d(std::move(row), k);
        out.duplicates += est.duplicates;
        if (std::isinf(est.value)) {
            out.value = -std::numeric_limits<double>::infinity();
            return out;
        }
        total += est.value;
    }
    out.value = total / static_cast<double>(n);
    return out;
}

DistanceMatrices layer_distance_matrices(const std::vector<TensorPtr>& trace,
                                         const std::vector<std::int64_t>& token_indices) {
    DistanceMatrices out;
    const auto t = static_cast<std::int64_t>(token_indices.size());
    for (const auto& layer : trace) {
        const auto n = layer->rows();
        const auto d = layer->cols();
        for (auto idx : token_indices) {
            if (idx < 0 || idx >= n) {
                throw ContractError("layer_distance_matrices: token index " + std::to_string(idx) +
                                    " out of range (N=" + std::to_string(n) + ")");
            }
        }
        std::vector<double> euc(static_cast<std::size_t>(t * t), 0.0);
        std::vector<double> cos(static_cast<std::size_t>(t * t), 0.0);
        for (std::int64_t a = 0; a < t; ++a) {
            for (std::int64_t b = 0; b < t; ++b) {
                if (a == b) continue;
                const auto i = token_indices[static_cast<std::size_t>(a)];
                const auto j = token_indices[static_cast<std::size_t>(b)];
                euc[static_cast<std::size_t>(a * t + b)] = row_distance(*layer, i, j);
                double dot = 0.0;
                double ni = 0.0;
                double nj = 0.0;
                for (std::int64_t c = 0; c < d; ++c) {
                    const double vi = layer->data[static_cast<std::size_t>(i * d + c)];
                    const double vj = layer->data[static_cast<std::size_t>(j * d + c)];
                    dot += vi * vj;
                    ni += vi * vi;
                    nj += vj * vj;
                }
                if (ni == 0.0 || nj == 0.0) {
                    cos[static_cast<std::size_t>(a * t + b)] =
                        -std::numeric_limits<double>::infinity();
                } else {
                    cos[static_cast<std::size_t>(a * t + b)] =
                        1.0 - dot / (std::sqrt(ni) * std::sqrt(nj));
                }
            }
        }
        out.euclidean.push_back(std::move(euc));
        out.cosine.push_back(std::move(cos));
    }
    return out;
}

std::vector<MetricsRecord> weight_stats(const TraceBundle& bundle) {
    std::vector<MetricsRecord> records;
    for (std::size_t l = 0; l < bundle.residual_alphas.size(); ++l) {
        records.push_back({bundle.model_tag, static_cast<std::int64_t>(l), "residual_alpha",
                           "value", bundle.residual_alphas[l]});
    }
    for (std::size_t l = 0; l < bundle.ffn_residual_alphas.size(); ++l) {
        records.push_back({bundle.model_tag, static_cast<std::int64_t>(l), "ffn_residual_alpha",
                           "value", bundle.ffn_residual_alphas[l]});
    }

    // Per-expert gate weight mean/stddev over samples, per layer.
    if (!bundle.gate_weights.empty() && !bundle.gate_weights.front().empty()) {
        const auto layers = bundle.gate_weights.front().size();
        const auto experts = bundle.gate_weights.front().front().size();
        for (std::size_t l = 0; l < layers; ++l) {
            for (std::size_t e = 0; e < experts; ++e) {
                double total = 0.0;
                std::size_t count = 0;
                for (const auto& sample : bundle.gate_weights) {
                    total += sample[l][e];
                    ++count;
                }
                const double m = total / static_cast<double>(count);
                double var = 0.0;
                for (const auto& sample : bundle.gate_weights) {
                    var += (sample[l][e] - m) * (sample[l][e] - m);
                }
                var /= static_cast<double>(count);
                records.push_back({bundle.model_tag, static_cast<std::int64_t>(l),
                                   "gate_weight_e" + std::to_string(e), "mean", m});
                records.push_back({bundle.model_tag, static_cast<std::int64_t>(l),
                                   "gate_weight_e" + std::to_string(e), "stddev",
                                   std::sqrt(var)});
            }
        }
    }
    return records;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("write_metrics_csv: cannot open " + path);
    }
    out << "model,layer,metric,statistic,value\n";
    for (const auto& r : records) {
        out << r.model << ',' << r.layer << ',' << r.metric << ',' << r.statistic << ','
            << format_value(r.value) << '\n';
    }
}

void write_distance_csv(const std::string& dir, const std::string& tag,
                        const DistanceMatrices& matrices, std::int64_t tokens) {
    std::filesystem::create_directories(dir);
    for (std::size_t l = 0; l < matrices.euclidean.size(); ++l) {
        for (const char* metric : {"euclidean", "cosine"}) {
            const auto& m = metric == std::string("euclidean") ? matrices.euclidean[l]
                                                               : matrices.cosine[l];
            std::ofstream out(dir + "/" + tag + "_" + metric + "_layer" + std::to_string(l) +
                                  ".csv",
                              std::ios::binary);
            for (std::int64_t i = 0; i < tokens; ++i) {
                for (std::int64_t j = 0; j < tokens; ++j) {
                    if (j) out << ',';
                    out << format_value(m[static_cast<std::size_t>(i * tokens + j)]);
                }
                out << '\n';
            }
        }
    }
}

TraceBundle collect_traces(SequenceModel& model,
                           const std::vector<std::vector<std::int64_t>>& token_seqs,
                           const std::string& tag) {
    NoGradGuard no_grad;
    TraceBundle bundle;
    bundle.model_tag = tag;
    for (const auto& tokens : token_seqs) {
        auto result = model.encode(tokens);
        std::vector<TensorPtr> detached;
        detached.reserve(result.layers.size());
        for (const auto& layer : result.layers) {
            detached.push_back(layer->detach());
        }
        bundle.traces.push_back(std::move(detached));
        std::vector<std::vector<double>> lambdas;
        for (const auto& gw : result.gate_weights) {
            lambdas.push_back(gw->data);
        }
        bundle.gate_weights.push_back(std::move(lambdas));
    }
    if (auto* tj_model = dynamic_cast<TransJectModel*>(&model)) {
        bundle.residual_alphas = tj_model->residual_alphas();
        bundle.ffn_residual_alphas = tj_model->ffn_residual_alphas();
    }
    return bundle;
}

}  // namespace tj
