#include "tj/train.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "tj/analysis.h"
#include "tj/baseline.h"
#include "tj/checkpoint.h"
#include "tj/encoder.h"

namespace tj {

namespace fs = std::filesystem;

// ---- Adam ------------------------------------------------------------------

Adam::Adam(const std::vector<NamedParam>& params, AdamConfig cfg) : cfg_(cfg) {
    for (const auto& p : params) {
        Slot s;
        s.param = p;
        s.m.assign(p.value->data.size(), 0.0);
        s.v.assign(p.value->data.size(), 0.0);
        slots_.push_back(std::move(s));
    }
}

void Adam::zero_grad() {
    for (auto& s : slots_) {
        s.param.value->zero_grad();
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& s : slots_) {
        auto& p = *s.param.value;
        p.ensure_grad();
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const double g = p.grad[i];
            if (!std::isfinite(g)) {
                throw TrainError("adam: non-finite gradient in parameter '" + s.param.name + "'");
            }
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g;
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            p.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

// ---- experiment assembly -----------------------------------------------------

namespace {

Pooling pooling_from(const std::string& name, const std::string& task) {
    if (name == "mean") return Pooling::Mean;
    if (name == "max") return Pooling::Max;
    // Task defaults: hierarchical listops pools with max, text with mean.
    return task == "listops" ? Pooling::Max : Pooling::Mean;
}

std::vector<std::int64_t> char_stream(const std::string& path, Vocabulary& vocab_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("lm: cannot open " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    if (text.empty()) {
        throw DataError("lm: empty corpus " + path);
    }
    std::vector<std::string> symbols;
    for (char c : text) symbols.push_back(std::string(1, c));
    vocab_out = Vocabulary::from_symbols(symbols);
    std::vector<std::int64_t> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(vocab_out.id(std::string(1, c)));
    return ids;
}

}  // namespace

BuiltExperiment build_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    BuiltExperiment built;
    std::int64_t num_classes = 0;

    if (cfg.data.task == "listops") {
        built.vocab = listops_vocabulary();
        std::vector<ListOpsExample> train_raw;
        if (cfg.data.train_path.empty()) {
            train_raw = gen_listops(static_cast<std::size_t>(cfg.data.count), cfg.data.max_depth,
                                    static_cast<std::size_t>(cfg.data.max_len),
                                    cfg.optim.seed * 7919 + 1);
        } else {
            train_raw = read_listops_tsv(cfg.data.train_path);
        }
        built.train_examples = listops_to_examples(train_raw, built.vocab);
        std::vector<ListOpsExample> val_raw;
        if (!cfg.data.val_path.empty()) {
            val_raw = read_listops_tsv(cfg.data.val_path);
        } else {
            val_raw = gen_listops(static_cast<std::size_t>(cfg.data.val_count), cfg.data.max_depth,
                                  static_cast<std::size_t>(cfg.data.max_len),
                                  cfg.optim.seed * 7919 + 2);
        }
        built.val_examples = listops_to_examples(val_raw, built.vocab);
        num_classes = 10;
    } else if (cfg.data.task == "text") {
        auto ds = load_char_classification(cfg.data.train_path);
        built.vocab = ds.vocab;
        built.train_examples = std::move(ds.examples);
        num_classes = ds.num_classes;
        if (!cfg.data.val_path.empty()) {
            built.val_examples =
                load_char_classification_with_vocab(cfg.data.val_path, built.vocab, num_classes);
        } else {
            // Deterministic tail split.
            const auto n_val = std::max<std::size_t>(
                1, static_cast<std::size_t>(static_cast<double>(built.train_examples.size()) *
                                            cfg.data.val_fraction));
            for (std::size_t i = built.train_examples.size() - n_val;
                 i < built.train_examples.size(); ++i) {
                built.val_examples.push_back(built.train_examples[i]);
            }
            built.train_examples.resize(built.train_examples.size() - n_val);
        }
        for (auto& ex : built.train_examples) {
            if (static_cast<std::int64_t>(ex.tokens.size()) > cfg.model.max_len) {
                ex.tokens.resize(static_cast<std::size_t>(cfg.model.max_len));
            }
        }
        for (auto& ex : built.val_examples) {
            if (static_cast<std::int64_t>(ex.tokens.size()) > cfg.model.max_len) {
                ex.tokens.resize(static_cast<std::size_t>(cfg.model.max_len));
            }
        }
    } else {  // lm
        auto stream = char_stream(cfg.data.train_path, built.vocab);
        auto windows = build_lm_windows(stream, static_cast<std::size_t>(cfg.data.window));
        const auto n_val = std::max<std::size_t>(
            1, static_cast<std::size_t>(static_cast<double>(windows.size()) *
                                        cfg.data.val_fraction));
        if (windows.size() <= n_val) {
            throw DataError("lm: corpus too small to hold out a validation split");
        }
        built.val_examples.assign(windows.end() - static_cast<std::ptrdiff_t>(n_val),
                                  windows.end());
        windows.resize(windows.size() - n_val);
        built.train_examples = std::move(windows);
    }

    const bool is_lm = cfg.data.task == "lm";
    const Task task = is_lm ? Task::language_model(built.vocab.size())
                            : Task::classification(num_classes);
    const Pooling pooling = pooling_from(cfg.model.pooling, cfg.data.task);
    const std::int64_t window_len = is_lm ? cfg.data.window : cfg.model.max_len;

    if (cfg.model.kind == "transject") {
        TransJectConfig mc;
        mc.layers = cfg.model.layers;
        mc.hidden = cfg.model.hidden;
        mc.experts = cfg.model.experts;
        // The embedding needs at least hidden/2 rows for orthonormal columns;
        // pad the vocabulary with unused ids when the alphabet is smaller.
        mc.vocab_size = std::max(built.vocab.size(), cfg.model.hidden / 2);
        mc.max_len = window_len;
        mc.sigma_mode = cfg.model.sigma_mode == "approximated" ? SigmaMode::Approximated
                                                               : SigmaMode::Random;
        mc.recon_weight = cfg.model.recon_weight;
        mc.task = task;
        mc.pooling = pooling;
        mc.tie_residuals = cfg.model.tie_residuals;
        built.model = std::make_unique<TransJectModel>(mc, cfg.optim.seed);
    } else {
        BaselineConfig mc;
        mc.layers = cfg.model.layers;
        mc.hidden = cfg.model.hidden;
        mc.heads = cfg.model.heads;
        mc.ffn_dim = cfg.model.ffn_dim;
        mc.variant = cfg.model.variant == "vanilla"  ? BaselineVariant::Vanilla
                     : cfg.model.variant == "rezero" ? BaselineVariant::ReZero
                                                     : BaselineVariant::Orthogonal;
        mc.vocab_size = built.vocab.size();
        mc.max_len = window_len;
        mc.dropout = cfg.model.variant == "rezero" ? 0.0 : cfg.model.dropout;
        mc.task = task;
        mc.pooling = pooling;
        built.model = std::make_unique<BaselineModel>(mc, cfg.optim.seed);
    }
    return built;
}

// ---- loss / evaluation ---------------------------------------------------------

namespace {

// Task loss for one example plus the weighted reconstruction term.
TensorPtr example_loss(SequenceModel& model, const Example& ex, double recon_weight,
                       bool training, Rng* dropout_rng, bool* correct_out) {
    auto enc = model.encode(ex.tokens, training, dropout_rng);
    auto logits = model.head_logits(enc.layers.back());
    TensorPtr loss;
    if (model.task().kind == TaskKind::Classification) {
        loss = cross_entropy(logits, ex.label);
        if (correct_out) {
            std::int64_t best = 0;
            for (std::int64_t i = 1; i < logits->numel(); ++i) {
                if (logits->data[static_cast<std::size_t>(i)] >
                    logits->data[static_cast<std::size_t>(best)]) {
                    best = i;
                }
            }
            *correct_out = best == ex.label;
        }
    } else {
        loss = cross_entropy_rows(logits, ex.targets);
        if (correct_out) {
            *correct_out = false;
        }
    }
    if (enc.recon_loss && recon_weight > 0.0) {
        loss = add(loss, scale(enc.recon_loss, recon_weight));
    }
    return loss;
}

std::string format_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

}  // namespace

double evaluate_loss(SequenceModel& model, const std::vector<Example>& examples,
                     double recon_weight, double* score_out) {
    NoGradGuard no_grad;
    double total_loss = 0.0;
    double task_loss = 0.0;
    std::size_t correct = 0;
    for (const auto& ex : examples) {
        bool ok = false;
        auto enc = model.encode(ex.tokens);
        auto logits = model.head_logits(enc.layers.back());
        double l;
        if (model.task().kind == TaskKind::Classification) {
            l = cross_entropy(logits, ex.label)->item();
            std::int64_t best = 0;
            for (std::int64_t i = 1; i < logits->numel(); ++i) {
                if (logits->data[static_cast<std::size_t>(i)] >
                    logits->data[static_cast<std::size_t>(best)]) {
                    best = i;
                }
            }
            ok = best == ex.label;
        } else {
            l = cross_entropy_rows(logits, ex.targets)->item();
        }
        task_loss += l;
        total_loss += l;
        if (enc.recon_loss && recon_weight > 0.0) {
            total_loss += recon_weight * enc.recon_loss->item();
        }
        correct += ok ? 1 : 0;
    }
    const double n = static_cast<double>(examples.size());
    if (score_out) {
        *score_out = model.task().kind == TaskKind::Classification
                         ? static_cast<double>(correct) / n
                         : std::exp(task_loss / n);  // perplexity
    }
    return total_loss / n;
}

// ---- training loop ---------------------------------------------------------------

TrainResult train(const ExperimentConfig& cfg) {
    auto built = build_experiment(cfg);
    auto& model = *built.model;

    TrainResult result;
    result.run_dir = cfg.output.dir;
    fs::create_directories(result.run_dir);
    fs::create_directories(result.run_dir + "/analysis");
    result.checkpoint_path = result.run_dir + "/checkpoint.bin";
    result.metrics_path = result.run_dir + "/metrics.csv";

    const bool is_classification = model.task().kind == TaskKind::Classification;
    if (is_classification) {
        std::map<std::int64_t, std::size_t> counts;
        for (const auto& ex : built.train_examples) ++counts[ex.label];
        std::size_t top = 0;
        for (const auto& [label, c] : counts) top = std::max(top, c);
        result.majority_baseline =
            static_cast<double>(top) / static_cast<double>(built.train_examples.size());
    }

    Adam adam(model.params(), {cfg.optim.lr, cfg.optim.beta1, cfg.optim.beta2, cfg.optim.eps});
    Rng shuffle_rng(cfg.optim.seed * 1013904223ULL + 5);
    Rng dropout_rng(cfg.optim.seed * 2654435761ULL + 9);

    std::ofstream metrics(result.metrics_path, std::ios::binary);
    metrics << "epoch,split,loss," << (is_classification ? "accuracy" : "perplexity") << "\n";

    const double recon_w = cfg.model.kind == "transject" ? cfg.model.recon_weight : 0.0;
    double best_val = std::numeric_limits<double>::infinity();
    std::int64_t stale_epochs = 0;

    std::vector<std::size_t> order(built.train_examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::int64_t epoch = 1; epoch <= cfg.optim.epochs; ++epoch) {
        // Deterministic Fisher-Yates shuffle per epoch.
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);
        }

        double train_loss_sum = 0.0;
        double task_loss_sum = 0.0;
        double recon_sum = 0.0;
        std::size_t recon_count = 0;
        std::size_t train_correct = 0;
        std::size_t seen = 0;

        const auto bs = static_cast<std::size_t>(cfg.data.batch_size);
        for (std::size_t start = 0; start < order.size(); start += bs) {
            const auto end = std::min(start + bs, order.size());
            adam.zero_grad();
            TensorPtr batch_loss;
            try {
            for (std::size_t i = start; i < end; ++i) {
                const auto& ex = built.train_examples[order[i]];
                bool ok = false;
                auto enc = model.encode(ex.tokens, true, &dropout_rng);
                auto logits = model.head_logits(enc.layers.back());
                TensorPtr loss;
                if (is_classification) {
                    loss = cross_entropy(logits, ex.label);
                    std::int64_t best = 0;
                    for (std::int64_t c = 1; c < logits->numel(); ++c) {
                        if (logits->data[static_cast<std::size_t>(c)] >
                            logits->data[static_cast<std::size_t>(best)]) {
                            best = c;
                        }
                    }
                    ok = best == ex.label;
                } else {
                    loss = cross_entropy_rows(logits, ex.targets);
                }
                task_loss_sum += loss->item();
                if (enc.recon_loss) {
                    recon_sum += enc.recon_loss->item();
                    ++recon_count;
                    if (recon_w > 0.0) {
                        loss = add(loss, scale(enc.recon_loss, recon_w));
                    }
                }
                train_correct += ok ? 1 : 0;
                batch_loss = batch_loss ? add(batch_loss, loss) : loss;
            }
            batch_loss = scale(batch_loss, 1.0 / static_cast<double>(end - start));
            const double lv = batch_loss->item();
            if (!std::isfinite(lv)) {
                throw TrainError("train: loss diverged (epoch " + std::to_string(epoch) +
                                 "); last checkpoint retained");
            }
            train_loss_sum += lv * static_cast<double>(end - start);
            seen += end - start;
            backward(batch_loss);
            adam.step();
            model.invalidate_caches();
            } catch (const NumericError& e) {
                // Non-finite intermediates are divergence at this level.
                metrics.flush();
                throw TrainError("train: diverged (epoch " + std::to_string(epoch) + "): " +
                                 e.what() + "; last checkpoint retained");
            } catch (const TrainError&) {
                metrics.flush();
                throw;
            }
        }

        const double train_loss = train_loss_sum / static_cast<double>(seen);
        const double train_score =
            is_classification
                ? static_cast<double>(train_correct) / static_cast<double>(seen)
                : std::exp(std::min(700.0, task_loss_sum / static_cast<double>(seen)));
        result.history.push_back({epoch, "train", train_loss, train_score});
        metrics << epoch << ",train," << format_num(train_loss) << ',' << format_num(train_score)
                << "\n";
        if (recon_count) {
            result.recon_trajectory.push_back(recon_sum / static_cast<double>(recon_count));
        }

        double val_score = 0.0;
        const double val_loss = evaluate_loss(model, built.val_examples, recon_w, &val_score);
        result.history.push_back({epoch, "val", val_loss, val_score});
        metrics << epoch << ",val," << format_num(val_loss) << ',' << format_num(val_score)
                << "\n";
        result.final_train_score = train_score;

        if (val_loss < best_val) {
            best_val = val_loss;
            result.best_val_loss = val_loss;
            result.best_epoch = epoch;
            stale_epochs = 0;
            save_checkpoint(model, result.checkpoint_path);
        } else {
            ++stale_epochs;
            if (stale_epochs >= cfg.optim.patience) {
                result.early_stopped = true;
                break;
            }
        }
    }
    metrics.flush();

    // Diagnostics run on the best checkpoint, not the last epoch's weights.
    auto best_model = load_checkpoint(result.checkpoint_path);
    run_analysis(*best_model,
                 built.val_examples.empty() ? built.train_examples : built.val_examples,
                 result.run_dir + "/analysis", cfg.output.analysis_samples);
    return result;
}

TrainResult train(const ExperimentConfig& cfg, const std::string& config_source_path) {
    auto result = train(cfg);
    if (!config_source_path.empty()) {
        std::error_code ec;
        fs::copy_file(config_source_path, result.run_dir + "/config.ini",
                      fs::copy_options::overwrite_existing, ec);
        if (ec) {
            throw DataError("train: could not copy config into run dir: " + ec.message());
        }
    }
    return result;
}

void run_analysis(SequenceModel& model, const std::vector<Example>& examples,
                  const std::string& out_dir, std::int64_t max_samples,
                  std::int64_t distance_tokens) {
    fs::create_directories(out_dir);
    std::vector<std::vector<std::int64_t>> seqs;
    for (const auto& ex : examples) {
        if (static_cast<std::int64_t>(seqs.size()) >= max_samples) break;
        seqs.push_back(ex.tokens);
    }
    if (seqs.empty()) {
        throw DataError("run_analysis: no examples");
    }
    auto bundle = collect_traces(model, seqs, model.kind());

    std::vector<MetricsRecord> records;
    const auto layers = static_cast<std::int64_t>(bundle.traces.front().size());
    for (std::int64_t l = 1; l < layers; ++l) {
        const auto f = activation_factor(bundle, l);
        records.push_back({bundle.model_tag, l, "activation_factor", "mean", f.mean});
        records.push_back({bundle.model_tag, l, "activation_factor", "median", f.median});
        records.push_back({bundle.model_tag, l, "activation_factor", "q1", f.q1});
        records.push_back({bundle.model_tag, l, "activation_factor", "q3", f.q3});
        records.push_back({bundle.model_tag, l, "activation_factor", "excluded_pairs",
                           static_cast<double>(f.excluded)});
    }
    for (std::int64_t l = 0; l < layers; ++l) {
        double total = 0.0;
        std::size_t n = 0;
        bool degenerate = false;
        for (const auto& trace : bundle.traces) {
            const auto est = differential_entropy(trace[static_cast<std::size_t>(l)]);
            if (std::isinf(est.value)) {
                degenerate = true;
                continue;
            }
            total += est.value;
            ++n;
        }
        const double value = n ? total / static_cast<double>(n)
                               : -std::numeric_limits<double>::infinity();
        records.push_back({bundle.model_tag, l, "entropy", "mean", value});
        if (degenerate) {
            records.push_back({bundle.model_tag, l, "entropy", "degenerate_samples", 1.0});
        }
    }
    write_metrics_csv(out_dir + "/metrics_layers.csv", records);

    auto wstats = weight_stats(bundle);
    write_metrics_csv(out_dir + "/weight_stats.csv", wstats);

    const auto n0 = bundle.traces.front().front()->rows();
    std::vector<std::int64_t> token_indices;
    for (std::int64_t i = 0; i < std::min<std::int64_t>(distance_tokens, n0); ++i) {
        token_indices.push_back(i);
    }
    const auto matrices = layer_distance_matrices(bundle.traces.front(), token_indices);
    write_distance_csv(out_dir, bundle.model_tag + "_distances", matrices,
                       static_cast<std::int64_t>(token_indices.size()));
}

// ---- benchmarking ------------------------------------------------------------------

std::vector<BenchRow> benchmark_inference(std::vector<SequenceModel*> models,
                                          const std::vector<std::int64_t>& lengths, int repeats,
                                          std::uint64_t seed) {
    if (models.empty() || repeats < 1) {
        throw ContractError("benchmark_inference: need at least one model and one repeat");
    }
    NoGradGuard no_grad;
    std::vector<BenchRow> rows;
    for (const auto length : lengths) {
        double baseline_median = 0.0;  // models[0] is the reference
        for (std::size_t mi = 0; mi < models.size(); ++mi) {
            auto& model = *models[mi];
            if (length > model.max_len()) {
                throw ContractError("benchmark_inference: length " + std::to_string(length) +
                                    " exceeds model max_len");
            }
            Rng rng(seed + static_cast<std::uint64_t>(length));
            std::vector<std::int64_t> tokens(static_cast<std::size_t>(length));
            for (auto& t : tokens) {
                t = static_cast<std::int64_t>(rng.uniform_int(
                    static_cast<std::uint64_t>(model.vocab_size())));
            }
            for (int w = 0; w < 3; ++w) {
                model.encode(tokens);
            }
            std::vector<double> times;
            times.reserve(static_cast<std::size_t>(repeats));
            for (int r = 0; r < repeats; ++r) {
                const auto t0 = std::chrono::steady_clock::now();
                auto enc = model.encode(tokens);
                const auto t1 = std::chrono::steady_clock::now();
                times.push_back(std::chrono::duration<double>(t1 - t0).count());
            }
            std::sort(times.begin(), times.end());
            const double median = times[times.size() / 2];
            BenchRow row;
            row.model = model.kind();
            row.length = length;
            row.median_seconds = median;
            if (mi == 0) {
                baseline_median = median;
                row.speedup_vs_baseline = 1.0;
            } else {
                row.speedup_vs_baseline = baseline_median / median;
            }
            rows.push_back(row);
        }
    }
    return rows;
}

void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("write_bench_csv: cannot open " + path);
    }
    out << "model,length,median_seconds,speedup_vs_baseline\n";
    for (const auto& r : rows) {
        out << r.model << ',' << r.length << ',' << format_num(r.median_seconds) << ','
            << format_num(r.speedup_vs_baseline) << "\n";
    }
}

std::string parameter_report(const SequenceModel& model) {
    std::map<std::string, std::int64_t> by_module;
    for (const auto& p : model.params()) {
        const auto dot = p.name.find('.');
        const auto module = dot == std::string::npos ? p.name : p.name.substr(0, dot);
        by_module[module] += p.value->numel();
    }
    std::ostringstream out;
    out << "total " << count_parameters(model) << "\n";
    for (const auto& [module, count] : by_module) {
        out << module << " " << count << "\n";
    }
    return out.str();
}

}  // namespace tj
