#pragma once

#include <cstdint>
#include <string>

#include "tj/error.h"

namespace tj {

// Flat key = value configuration within [model] / [data] / [optim] / [output]
// sections. Unknown keys are rejected with their line number.
struct ExperimentConfig {
    struct Model {
        std::string kind = "transject";  // transject | baseline
        std::int64_t layers = 4;
        std::int64_t hidden = 64;
        std::int64_t experts = 2;
        std::int64_t heads = 4;       // baseline
        std::int64_t ffn_dim = 0;     // baseline; 0 -> 4 * hidden
        std::int64_t max_len = 64;
        std::string sigma_mode = "approximated";  // approximated | random
        std::string variant = "vanilla";          // baseline: vanilla | rezero | orthogonal
        double recon_weight = 0.1;
        double dropout = 0.1;
        std::string pooling;  // "", "mean", "max"; empty picks the task default
        bool tie_residuals = false;
    } model;

    struct Data {
        std::string task = "listops";  // listops | text | lm
        std::string train_path;        // empty + listops -> generate
        std::string val_path;
        std::int64_t count = 2000;  // generated train examples
        std::int64_t val_count = 500;
        int max_depth = 2;
        std::int64_t max_len = 64;
        std::int64_t batch_size = 32;
        std::int64_t window = 35;
        double val_fraction = 0.1;  // fallback split when no val source exists
    } data;

    struct Optim {
        double lr = 5e-4;
        double beta1 = 0.9;
        double beta2 = 0.98;
        double eps = 1e-9;
        std::int64_t epochs = 10;
        std::int64_t patience = 4;
        std::uint64_t seed = 7;
    } optim;

    struct Output {
        std::string dir = "run";
        std::int64_t analysis_samples = 64;
    } output;

    void validate() const;
};

ExperimentConfig parse_experiment_config(const std::string& path);
ExperimentConfig parse_experiment_config_text(const std::string& text);

}  // namespace tj
