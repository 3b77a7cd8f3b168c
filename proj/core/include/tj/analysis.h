#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tj/model.h"

namespace tj {

// Immutable per-layer value traces for a set of samples, the substrate of
// every diagnostic below.
struct TraceBundle {
    std::string model_tag;
    // [sample][layer] -> N x d values (detached)
    std::vector<std::vector<TensorPtr>> traces;
    // [sample][layer] -> expert weights (may be empty for non-MoE models)
    std::vector<std::vector<std::vector<double>>> gate_weights;
    std::vector<double> residual_alphas;      // per layer
    std::vector<double> ffn_residual_alphas;  // per layer
};

struct MetricsRecord {
    std::string model;
    std::int64_t layer = 0;
    std::string metric;
    std::string statistic;  // median | mean | stddev | q1 | q3 | value
    double value = 0.0;
};

struct FactorSummary {
    double mean = 0.0;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    std::size_t pairs = 0;
    std::size_t excluded = 0;  // token pairs with (near-)zero layer-0 distance
};

// Distribution of ||X_i^(l) - X_j^(l)|| / ||X_i^(0) - X_j^(0)|| over samples
// and token pairs i != j. Pairs with layer-0 distance < 1e-12 are excluded
// and counted.
FactorSummary activation_factor(const TraceBundle& bundle, std::int64_t layer);

// Sampled sup of ||f(x) - f(y)|| / ||x - y|| over `trials` pairs drawn from
// `sampler`; a lower bound on the true Lipschitz constant. trials >= 1000.
double empirical_activation_bound(const std::function<TensorPtr(const TensorPtr&)>& map,
                                  const std::function<TensorPtr()>& sampler, int trials);

struct EntropyEstimate {
    double value = 0.0;       // -inf for degenerate rows
    std::size_t duplicates = 0;  // values jittered before estimation
};

// Kozachenko-Leonenko k-NN differential entropy of a 1-D sample (k = 3).
EntropyEstimate knn_entropy_1d(std::vector<double> values, int k = 3);

// Eq-style layer entropy: per token row, the 1-D entropy of its d feature
// values; averaged over rows. Rows with fewer than k+1 distinct values
// contribute the sentinel -inf, which makes the average -inf as well.
EntropyEstimate differential_entropy(const TensorPtr& x_layer, int k = 3);

struct DistanceMatrices {
    // [layer][i*t + j] for t selected tokens; cosine distance in [0,2],
    // -inf where a zero-norm row makes the cosine undefined.
    std::vector<std::vector<double>> euclidean;
    std::vector<std::vector<double>> cosine;
};

DistanceMatrices layer_distance_matrices(const std::vector<TensorPtr>& trace,
                                         const std::vector<std::int64_t>& token_indices);

// Residual weights per layer plus per-expert gate weight statistics.
std::vector<MetricsRecord> weight_stats(const TraceBundle& bundle);

// CSV export, header `model,layer,metric,statistic,value`; -inf sentinel
// values are written literally.
void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records);
void write_distance_csv(const std::string& dir, const std::string& tag,
                        const DistanceMatrices& matrices, std::int64_t tokens);

// Detached trace bundle for `count` examples run through a model.
TraceBundle collect_traces(SequenceModel& model,
                           const std::vector<std::vector<std::int64_t>>& token_seqs,
                           const std::string& tag);

}  // namespace tj
