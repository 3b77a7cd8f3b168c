#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tj/analysis.h"
#include "tj/baseline.h"
#include "tj/checkpoint.h"
#include "tj/config.h"
#include "tj/data.h"
#include "tj/encoder.h"
#include "tj/train.h"

namespace {

int cmd_train(const std::string& config_path) {
    const auto cfg = tj::parse_experiment_config(config_path);
    const auto result = tj::train(cfg, config_path);
    std::printf("run dir:      %s\n", result.run_dir.c_str());
    std::printf("best epoch:   %lld (val loss %.6f)\n",
                static_cast<long long>(result.best_epoch), result.best_val_loss);
    const bool classification = result.majority_baseline > 0.0;
    if (classification) {
        std::printf("train acc:    %.4f (majority baseline %.4f)\n", result.final_train_score,
                    result.majority_baseline);
    } else {
        std::printf("train ppl:    %.4f\n", result.final_train_score);
    }
    if (result.early_stopped) {
        std::printf("early stopped after %zu epochs\n", result.history.size() / 2);
    }
    return 0;
}

int cmd_analyze(const std::string& checkpoint_path, const std::string& data_path,
                const std::string& out_dir, std::int64_t limit) {
    auto model = tj::load_checkpoint(checkpoint_path);

    std::vector<tj::Example> examples;
    if (model->task().kind == tj::TaskKind::LanguageModel) {
        // Raw text corpus; windows sized to the model.
        std::ifstream in(data_path, std::ios::binary);
        if (!in) throw tj::DataError("analyze: cannot open " + data_path);
        std::ostringstream buf;
        buf << in.rdbuf();
        const std::string text = buf.str();
        std::vector<std::string> symbols;
        for (char c : text) symbols.push_back(std::string(1, c));
        auto vocab = tj::Vocabulary::from_symbols(symbols);
        std::vector<std::int64_t> ids;
        for (char c : text) ids.push_back(vocab.id(std::string(1, c)));
        examples = tj::build_lm_windows(ids, static_cast<std::size_t>(model->max_len()));
    } else {
        // Try ListOps TSV first, then generic character classification TSV.
        try {
            auto raw = tj::read_listops_tsv(data_path);
            auto vocab = tj::listops_vocabulary();
            bool listops_like = !raw.empty();
            for (const auto& ex : raw) {
                if (ex.expression.find('[') == std::string::npos) {
                    listops_like = false;
                    break;
                }
            }
            if (listops_like) {
                examples = tj::listops_to_examples(raw, vocab);
            }
        } catch (const tj::Error&) {
        }
        if (examples.empty()) {
            auto ds = tj::load_char_classification(data_path);
            examples = std::move(ds.examples);
        }
        for (auto& ex : examples) {
            if (static_cast<std::int64_t>(ex.tokens.size()) > model->max_len()) {
                ex.tokens.resize(static_cast<std::size_t>(model->max_len()));
            }
        }
    }

    tj::run_analysis(*model, examples, out_dir, limit);
    std::printf("analysis written to %s\n", out_dir.c_str());
    std::printf("parameters:\n%s", tj::parameter_report(*model).c_str());
    return 0;
}

int cmd_bench(const std::string& config_path, const std::string& lengths_csv, int repeats) {
    auto cfg = tj::parse_experiment_config(config_path);
    std::vector<std::int64_t> lengths;
    std::stringstream ss(lengths_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        lengths.push_back(std::stoll(item));
    }
    if (lengths.empty()) {
        throw tj::ContractError("bench: no lengths given");
    }
    std::int64_t max_n = *std::max_element(lengths.begin(), lengths.end());

    // Benchmark the configured encoder against a vanilla baseline of the
    // same depth and width.
    const auto vocab = tj::listops_vocabulary();
    tj::BaselineConfig bc;
    bc.layers = cfg.model.layers;
    bc.hidden = cfg.model.hidden;
    bc.heads = cfg.model.heads;
    bc.ffn_dim = cfg.model.ffn_dim;
    bc.variant = tj::BaselineVariant::Vanilla;
    bc.vocab_size = vocab.size();
    bc.max_len = max_n;
    bc.task = tj::Task::classification(10);
    tj::BaselineModel baseline(bc, cfg.optim.seed);

    tj::TransJectConfig tc;
    tc.layers = cfg.model.layers;
    tc.hidden = cfg.model.hidden;
    tc.experts = cfg.model.experts;
    tc.vocab_size = std::max(vocab.size(), cfg.model.hidden / 2);
    tc.max_len = max_n;
    tc.sigma_mode = cfg.model.sigma_mode == "random" ? tj::SigmaMode::Random
                                                     : tj::SigmaMode::Approximated;
    tc.task = tj::Task::classification(10);
    tj::TransJectModel transject(tc, cfg.optim.seed);

    auto rows = tj::benchmark_inference({&baseline, &transject}, lengths, repeats);
    std::filesystem::create_directories(cfg.output.dir);
    const auto out_path = cfg.output.dir + "/bench.csv";
    tj::write_bench_csv(out_path, rows);
    std::printf("%-10s %8s %14s %10s\n", "model", "length", "median_s", "speedup");
    for (const auto& r : rows) {
        std::printf("%-10s %8lld %14.6f %10.2f\n", r.model.c_str(),
                    static_cast<long long>(r.length), r.median_seconds, r.speedup_vs_baseline);
    }
    std::printf("written %s\n", out_path.c_str());
    return 0;
}

int cmd_gen_listops(std::size_t count, std::uint64_t seed, const std::string& out_path,
                    int max_depth, std::size_t max_len) {
    const auto examples = tj::gen_listops(count, max_depth, max_len, seed);
    tj::write_listops_tsv(out_path, examples);
    std::printf("wrote %zu examples to %s\n", examples.size(), out_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Injective Lipschitz-bounded sequence encoder laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
    train_cmd->add_option("--config", config_path, "Experiment config (ini)")->required();

    std::string ckpt_path, data_path, out_dir;
    std::int64_t limit = 64;
    auto* analyze_cmd = app.add_subcommand("analyze", "Run diagnostics on a checkpoint");
    analyze_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
    analyze_cmd->add_option("--data", data_path, "Dataset (tsv or raw text)")->required();
    analyze_cmd->add_option("--out", out_dir, "Output directory")->required();
    analyze_cmd->add_option("--limit", limit, "Max samples to trace");

    std::string bench_config, lengths = "256,512,1024,2048";
    int repeats = 20;
    auto* bench_cmd = app.add_subcommand("bench", "Forward-pass runtime scaling");
    bench_cmd->add_option("--config", bench_config, "Experiment config (ini)")->required();
    bench_cmd->add_option("--lengths", lengths, "Comma-separated sequence lengths");
    bench_cmd->add_option("--repeats", repeats, "Timed repeats per point");

    std::size_t count = 1000;
    std::uint64_t seed = 7;
    std::string gen_out;
    int max_depth = 2;
    std::size_t gen_max_len = 64;
    auto* gen_cmd = app.add_subcommand("gen-listops", "Generate a ListOps dataset");
    gen_cmd->add_option("--count", count, "Number of examples")->required();
    gen_cmd->add_option("--seed", seed, "Generator seed")->required();
    gen_cmd->add_option("--out", gen_out, "Output tsv path")->required();
    gen_cmd->add_option("--max-depth", max_depth, "Max nesting depth");
    gen_cmd->add_option("--max-len", gen_max_len, "Max tokens per expression");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return cmd_train(config_path);
        if (analyze_cmd->parsed()) return cmd_analyze(ckpt_path, data_path, out_dir, limit);
        if (bench_cmd->parsed()) return cmd_bench(bench_config, lengths, repeats);
        if (gen_cmd->parsed()) return cmd_gen_listops(count, seed, gen_out, max_depth, gen_max_len);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
