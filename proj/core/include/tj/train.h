#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tj/config.h"
#include "tj/data.h"
#include "tj/model.h"

namespace tj {

struct AdamConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
};

// Standard Adam with bias correction over a parameter registry. Updates the
// unconstrained raw arrays; any orthogonality is re-established by the
// parametrizations on the next read.
class Adam {
public:
    Adam(const std::vector<NamedParam>& params, AdamConfig cfg);

    void zero_grad();
    // Throws TrainError naming the parameter on non-finite gradients.
    void step();
    std::int64_t steps() const { return t_; }

private:
    struct Slot {
        NamedParam param;
        std::vector<double> m;
        std::vector<double> v;
    };
    std::vector<Slot> slots_;
    AdamConfig cfg_;
    std::int64_t t_ = 0;
};

struct EpochStats {
    std::int64_t epoch = 0;
    std::string split;   // train | val
    double loss = 0.0;
    double score = 0.0;  // accuracy for classification, perplexity for LM
};

struct TrainResult {
    std::string run_dir;
    std::string checkpoint_path;
    std::string metrics_path;
    std::vector<EpochStats> history;
    double best_val_loss = 0.0;
    std::int64_t best_epoch = -1;
    double final_train_score = 0.0;
    double majority_baseline = 0.0;  // classification only
    bool early_stopped = false;
    std::vector<double> recon_trajectory;  // per-epoch mean reconstruction loss
};

// Builds data and model from the experiment config, trains with early
// stopping on validation loss, and writes the run directory:
// config copy, metrics.csv, analysis/*.csv and checkpoint.bin.
TrainResult train(const ExperimentConfig& cfg);
// Same, also copying the on-disk config file into the run directory.
TrainResult train(const ExperimentConfig& cfg, const std::string& config_source_path);

// The trained model plus everything needed to keep evaluating it.
struct BuiltExperiment {
    std::unique_ptr<SequenceModel> model;
    std::vector<Example> train_examples;
    std::vector<Example> val_examples;
    Vocabulary vocab;
};

BuiltExperiment build_experiment(const ExperimentConfig& cfg);

double evaluate_loss(SequenceModel& model, const std::vector<Example>& examples,
                     double recon_weight, double* score_out);

// Post-training diagnostics into <out_dir>: activation factors, entropy,
// weight statistics, per-layer distance matrices.
void run_analysis(SequenceModel& model, const std::vector<Example>& examples,
                  const std::string& out_dir, std::int64_t max_samples = 64,
                  std::int64_t distance_tokens = 8);

struct BenchRow {
    std::string model;
    std::int64_t length = 0;
    double median_seconds = 0.0;
    double speedup_vs_baseline = 1.0;
};

// Median forward wall time per sequence length (3 warmups, `repeats` timed
// runs), plus the speedup of every model against the first entry.
std::vector<BenchRow> benchmark_inference(std::vector<SequenceModel*> models,
                                          const std::vector<std::int64_t>& lengths, int repeats,
                                          std::uint64_t seed = 99);

void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows);

// Per-module breakdown string for parameter counting reports.
std::string parameter_report(const SequenceModel& model);

}  // namespace tj
