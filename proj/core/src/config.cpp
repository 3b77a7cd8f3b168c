#include "tj/config.h"

#include <fstream>
#include <sstream>

namespace tj {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::int64_t parse_int(const std::string& v, std::size_t line) {
    try {
        std::size_t pos = 0;
        const auto x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ParseError("config line " + std::to_string(line) + ": expected integer, got '" + v +
                         "'");
    }
}

double parse_double(const std::string& v, std::size_t line) {
    try {
        std::size_t pos = 0;
        const auto x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ParseError("config line " + std::to_string(line) + ": expected number, got '" + v +
                         "'");
    }
}

bool parse_bool(const std::string& v, std::size_t line) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ParseError("config line " + std::to_string(line) + ": expected boolean, got '" + v +
                     "'");
}

}  // namespace

void ExperimentConfig::validate() const {
    if (model.kind != "transject" && model.kind != "baseline") {
        throw ParseError("config: model.kind must be transject or baseline");
    }
    if (model.sigma_mode != "approximated" && model.sigma_mode != "random") {
        throw ParseError("config: model.sigma_mode must be approximated or random");
    }
    if (model.variant != "vanilla" && model.variant != "rezero" &&
        model.variant != "orthogonal") {
        throw ParseError("config: model.variant must be vanilla, rezero or orthogonal");
    }
    if (!model.pooling.empty() && model.pooling != "mean" && model.pooling != "max") {
        throw ParseError("config: model.pooling must be mean or max");
    }
    if (data.task != "listops" && data.task != "text" && data.task != "lm") {
        throw ParseError("config: data.task must be listops, text or lm");
    }
    if ((data.task == "text" || data.task == "lm") && data.train_path.empty()) {
        throw ParseError("config: data.train = <path> is required for task " + data.task);
    }
    if (optim.epochs < 1 || optim.patience < 1) {
        throw ParseError("config: optim.epochs and optim.patience must be >= 1");
    }
    if (data.batch_size < 1) {
        throw ParseError("config: data.batch_size must be >= 1");
    }
    if (output.dir.empty()) {
        throw ParseError("config: output.dir must be set");
    }
}

ExperimentConfig parse_experiment_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto comment = line.find_first_of("#;");
        if (comment != std::string::npos) {
            line = line.substr(0, comment);
        }
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ParseError("config line " + std::to_string(lineno) +
                                 ": unterminated section header");
            }
            section = trim(line.substr(1, line.size() - 2));
            if (section != "model" && section != "data" && section != "optim" &&
                section != "output") {
                throw ParseError("config line " + std::to_string(lineno) + ": unknown section [" +
                                 section + "]");
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (section.empty()) {
            throw ParseError("config line " + std::to_string(lineno) + ": key outside a section");
        }

        bool known = true;
        if (section == "model") {
            if (key == "kind") cfg.model.kind = value;
            else if (key == "layers") cfg.model.layers = parse_int(value, lineno);
            else if (key == "hidden") cfg.model.hidden = parse_int(value, lineno);
            else if (key == "experts") cfg.model.experts = parse_int(value, lineno);
            else if (key == "heads") cfg.model.heads = parse_int(value, lineno);
            else if (key == "ffn_dim") cfg.model.ffn_dim = parse_int(value, lineno);
            else if (key == "max_len") cfg.model.max_len = parse_int(value, lineno);
            else if (key == "sigma_mode") cfg.model.sigma_mode = value;
            else if (key == "variant") cfg.model.variant = value;
            else if (key == "recon_weight") cfg.model.recon_weight = parse_double(value, lineno);
            else if (key == "dropout") cfg.model.dropout = parse_double(value, lineno);
            else if (key == "pooling") cfg.model.pooling = value;
            else if (key == "tie_residuals") cfg.model.tie_residuals = parse_bool(value, lineno);
            else known = false;
        } else if (section == "data") {
            if (key == "task") cfg.data.task = value;
            else if (key == "train") cfg.data.train_path = value;
            else if (key == "val") cfg.data.val_path = value;
            else if (key == "count") cfg.data.count = parse_int(value, lineno);
            else if (key == "val_count") cfg.data.val_count = parse_int(value, lineno);
            else if (key == "max_depth") cfg.data.max_depth = static_cast<int>(parse_int(value, lineno));
            else if (key == "max_len") cfg.data.max_len = parse_int(value, lineno);
            else if (key == "batch_size") cfg.data.batch_size = parse_int(value, lineno);
            else if (key == "window") cfg.data.window = parse_int(value, lineno);
            else if (key == "val_fraction") cfg.data.val_fraction = parse_double(value, lineno);
            else known = false;
        } else if (section == "optim") {
            if (key == "lr") cfg.optim.lr = parse_double(value, lineno);
            else if (key == "beta1") cfg.optim.beta1 = parse_double(value, lineno);
            else if (key == "beta2") cfg.optim.beta2 = parse_double(value, lineno);
            else if (key == "eps") cfg.optim.eps = parse_double(value, lineno);
            else if (key == "epochs") cfg.optim.epochs = parse_int(value, lineno);
            else if (key == "patience") cfg.optim.patience = parse_int(value, lineno);
            else if (key == "seed") cfg.optim.seed = static_cast<std::uint64_t>(parse_int(value, lineno));
            else known = false;
        } else {  // output
            if (key == "dir") cfg.output.dir = value;
            else if (key == "analysis_samples") cfg.output.analysis_samples = parse_int(value, lineno);
            else known = false;
        }
        if (!known) {
            throw ParseError("config line " + std::to_string(lineno) + ": unknown key '" + key +
                             "' in section [" + section + "]");
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_experiment_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("config: cannot open " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_experiment_config_text(buf.str());
}

}  // namespace tj
