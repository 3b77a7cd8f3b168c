#include "tj/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "tj/baseline.h"
#include "tj/encoder.h"

namespace tj {

namespace {

using nlohmann::json;

constexpr const char* kFormatTag = "tjlab-checkpoint-v1";

void write_doubles_le(std::ofstream& out, const std::vector<double>& values) {
    static_assert(sizeof(double) == 8);
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * 8));
    } else {
        for (double v : values) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            char buf[8];
            for (int i = 0; i < 8; ++i) {
                buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
            }
            out.write(buf, 8);
        }
    }
}

void read_doubles_le(std::ifstream& in, std::vector<double>& values) {
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(values.size() * 8));
    } else {
        char buf[8];
        for (auto& v : values) {
            in.read(buf, 8);
            std::uint64_t bits = 0;
            for (int i = 0; i < 8; ++i) {
                bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
            }
            std::memcpy(&v, &bits, 8);
        }
    }
    if (!in) {
        throw DataError("checkpoint: truncated parameter data");
    }
}

json task_to_json(const Task& t) {
    return json{{"kind", t.kind == TaskKind::Classification ? "classification" : "lm"},
                {"num_classes", t.num_classes}};
}

Task task_from_json(const json& j) {
    Task t;
    t.kind = j.at("kind") == "classification" ? TaskKind::Classification
                                              : TaskKind::LanguageModel;
    t.num_classes = j.at("num_classes").get<std::int64_t>();
    return t;
}

json config_to_json(const SequenceModel& model) {
    if (const auto* m = dynamic_cast<const TransJectModel*>(&model)) {
        const auto& c = m->config();
        return json{
            {"layers", c.layers},
            {"hidden", c.hidden},
            {"experts", c.experts},
            {"vocab_size", c.vocab_size},
            {"max_len", c.max_len},
            {"sigma_mode", c.sigma_mode == SigmaMode::Approximated ? "approximated" : "random"},
            {"recon_weight", c.recon_weight},
            {"task", task_to_json(c.task)},
            {"pooling", c.pooling == Pooling::Mean ? "mean" : "max"},
            {"tie_residuals", c.tie_residuals},
        };
    }
    const auto* b = dynamic_cast<const BaselineModel*>(&model);
    if (!b) {
        throw ContractError("save_checkpoint: unknown model type");
    }
    const auto& c = b->config();
    const char* variant = c.variant == BaselineVariant::Vanilla   ? "vanilla"
                          : c.variant == BaselineVariant::ReZero  ? "rezero"
                                                                  : "orthogonal";
    return json{
        {"layers", c.layers},   {"hidden", c.hidden},
        {"heads", c.heads},     {"ffn_dim", c.ffn_dim},
        {"variant", variant},   {"vocab_size", c.vocab_size},
        {"max_len", c.max_len}, {"dropout", c.dropout},
        {"task", task_to_json(c.task)},
        {"pooling", c.pooling == Pooling::Mean ? "mean" : "max"},
    };
}

std::unique_ptr<SequenceModel> model_from_json(const std::string& kind, const json& cfg) {
    if (kind == "transject") {
        TransJectConfig c;
        c.layers = cfg.at("layers").get<std::int64_t>();
        c.hidden = cfg.at("hidden").get<std::int64_t>();
        c.experts = cfg.at("experts").get<std::int64_t>();
        c.vocab_size = cfg.at("vocab_size").get<std::int64_t>();
        c.max_len = cfg.at("max_len").get<std::int64_t>();
        c.sigma_mode = cfg.at("sigma_mode") == "approximated" ? SigmaMode::Approximated
                                                              : SigmaMode::Random;
        c.recon_weight = cfg.at("recon_weight").get<double>();
        c.task = task_from_json(cfg.at("task"));
        c.pooling = cfg.at("pooling") == "mean" ? Pooling::Mean : Pooling::Max;
        c.tie_residuals = cfg.at("tie_residuals").get<bool>();
        return std::make_unique<TransJectModel>(c, 0);
    }
    if (kind == "baseline") {
        BaselineConfig c;
        c.layers = cfg.at("layers").get<std::int64_t>();
        c.hidden = cfg.at("hidden").get<std::int64_t>();
        c.heads = cfg.at("heads").get<std::int64_t>();
        c.ffn_dim = cfg.at("ffn_dim").get<std::int64_t>();
        const std::string variant = cfg.at("variant").get<std::string>();
        c.variant = variant == "vanilla"  ? BaselineVariant::Vanilla
                    : variant == "rezero" ? BaselineVariant::ReZero
                                          : BaselineVariant::Orthogonal;
        c.vocab_size = cfg.at("vocab_size").get<std::int64_t>();
        c.max_len = cfg.at("max_len").get<std::int64_t>();
        c.dropout = cfg.at("dropout").get<double>();
        c.task = task_from_json(cfg.at("task"));
        c.pooling = cfg.at("pooling") == "mean" ? Pooling::Mean : Pooling::Max;
        return std::make_unique<BaselineModel>(c, 0);
    }
    throw DataError("checkpoint: unknown model kind '" + kind + "'");
}

json read_header(std::ifstream& in, const std::string& path) {
    std::string line;
    if (!std::getline(in, line)) {
        throw DataError("checkpoint: cannot read header from " + path);
    }
    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw ParseError("checkpoint: bad header in " + path + ": " + e.what());
    }
    if (header.value("format", "") != kFormatTag) {
        throw ParseError("checkpoint: unsupported format tag in " + path);
    }
    return header;
}

}  // namespace

void save_checkpoint(const SequenceModel& model, const std::string& path) {
    json manifest = json::array();
    for (const auto& p : model.params()) {
        manifest.push_back(json{{"name", p.name}, {"shape", p.value->shape}});
    }
    json header{
        {"format", kFormatTag},
        {"kind", model.kind()},
        {"config", config_to_json(model)},
        {"manifest", manifest},
    };
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("save_checkpoint: cannot open " + path);
    }
    out << header.dump() << '\n';
    for (const auto& p : model.params()) {
        write_doubles_le(out, p.value->data);
    }
    if (!out) {
        throw DataError("save_checkpoint: write failed for " + path);
    }
}

std::unique_ptr<SequenceModel> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("load_checkpoint: cannot open " + path);
    }
    const json header = read_header(in, path);
    auto model = model_from_json(header.at("kind").get<std::string>(), header.at("config"));

    const auto& manifest = header.at("manifest");
    const auto& params = model->params();
    if (manifest.size() != params.size()) {
        throw DataError("checkpoint: manifest has " + std::to_string(manifest.size()) +
                        " arrays, model expects " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto name = manifest[i].at("name").get<std::string>();
        const auto shape = manifest[i].at("shape").get<std::vector<std::int64_t>>();
        if (name != params[i].name || shape != params[i].value->shape) {
            throw DataError("checkpoint: manifest entry '" + name +
                            "' does not match model parameter '" + params[i].name + "'");
        }
        read_doubles_le(in, params[i].value->data);
    }
    model->invalidate_caches();
    return model;
}

std::vector<ManifestEntry> read_checkpoint_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("read_checkpoint_manifest: cannot open " + path);
    }
    const json header = read_header(in, path);
    std::vector<ManifestEntry> out;
    for (const auto& entry : header.at("manifest")) {
        out.push_back({entry.at("name").get<std::string>(),
                       entry.at("shape").get<std::vector<std::int64_t>>()});
    }
    return out;
}

}  // namespace tj
