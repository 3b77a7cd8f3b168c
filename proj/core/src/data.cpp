#include "tj/data.h"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace tj {

Vocabulary Vocabulary::from_symbols(const std::vector<std::string>& symbols) {
    Vocabulary v;
    v.id_to_symbol_ = {"<pad>", "<unk>"};
    std::set<std::string> unique(symbols.begin(), symbols.end());
    for (const auto& s : unique) {
        v.symbol_to_id_[s] = static_cast<std::int64_t>(v.id_to_symbol_.size());
        v.id_to_symbol_.push_back(s);
    }
    return v;
}

std::int64_t Vocabulary::id(const std::string& symbol) const {
    auto it = symbol_to_id_.find(symbol);
    return it == symbol_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::symbol(std::int64_t id) const {
    if (id < 0 || id >= size()) {
        throw DataError("Vocabulary: id " + std::to_string(id) + " out of range");
    }
    return id_to_symbol_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& symbol) const {
    return symbol_to_id_.count(symbol) > 0;
}

// ---- ListOps -------------------------------------------------------------

namespace {

const char* kOperators[] = {"MIN", "MAX", "MED", "SM"};

std::int64_t apply_op(const std::string& op, const std::vector<std::int64_t>& args) {
    if (op == "MIN") return *std::min_element(args.begin(), args.end());
    if (op == "MAX") return *std::max_element(args.begin(), args.end());
    if (op == "MED") {
        std::vector<std::int64_t> sorted(args);
        std::sort(sorted.begin(), sorted.end());
        return sorted[(sorted.size() - 1) / 2];  // lower median
    }
    if (op == "SM") {
        std::int64_t s = 0;
        for (auto a : args) s += a;
        return s % 10;
    }
    throw DataError("listops: unknown operator " + op);
}

struct GenNode {
    std::string text;
    std::int64_t value = 0;
    std::size_t tokens = 0;
};

// Leaf probability and arity range are fixed grammar parameters.
constexpr double kLeafProb = 0.6;

GenNode gen_node(Rng& rng, int depth, int max_depth) {
    const bool leaf = depth >= max_depth || rng.uniform() < kLeafProb;
    if (leaf) {
        const auto digit = static_cast<std::int64_t>(rng.uniform_int(10));
        return {std::to_string(digit), digit, 1};
    }
    const auto& op = kOperators[rng.uniform_int(4)];
    const auto arity = 2 + rng.uniform_int(3);  // 2..4 children
    std::string text = std::string("[") + op;
    std::vector<std::int64_t> args;
    std::size_t tokens = 3;  // '[', operator, ']'
    for (std::uint64_t i = 0; i < arity; ++i) {
        auto child = gen_node(rng, depth + 1, max_depth);
        text += " " + child.text;
        args.push_back(child.value);
        tokens += child.tokens;
    }
    text += "]";
    return {text, apply_op(op, args), tokens};
}

}  // namespace

std::vector<ListOpsExample> gen_listops(std::size_t count, int max_depth, std::size_t max_len,
                                        std::uint64_t seed) {
    if (max_depth < 1) {
        throw ContractError("gen_listops: max_depth >= 1 required");
    }
    if (max_len < 7) {
        throw ContractError("gen_listops: max_len too small for a minimal expression");
    }
    Rng rng(seed);
    std::vector<ListOpsExample> out;
    out.reserve(count);
    while (out.size() < count) {
        // Root is always an operator node.
        const auto& op = kOperators[rng.uniform_int(4)];
        const auto arity = 2 + rng.uniform_int(3);
        std::string text = std::string("[") + op;
        std::vector<std::int64_t> args;
        std::size_t tokens = 3;
        for (std::uint64_t i = 0; i < arity; ++i) {
            auto child = gen_node(rng, 1, max_depth);
            text += " " + child.text;
            args.push_back(child.value);
            tokens += child.tokens;
        }
        text += "]";
        if (tokens > max_len) {
            continue;  // resample rather than truncate
        }
        out.push_back({text, apply_op(op, args)});
    }
    return out;
}

Vocabulary listops_vocabulary() {
    std::vector<std::string> symbols = {"0", "1", "2", "3", "4",   "5",   "6",   "7",
                                        "8", "9", "[", "]", "MIN", "MAX", "MED", "SM"};
    return Vocabulary::from_symbols(symbols);
}

std::vector<std::string> tokenize_listops(const std::string& expression) {
    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&]() {
        if (!current.empty()) {
            tokens.push_back(current);
            current.clear();
        }
    };
    for (char c : expression) {
        if (c == ' ') {
            flush();
        } else if (c == '[' || c == ']') {
            flush();
            tokens.push_back(std::string(1, c));
        } else {
            current += c;
        }
    }
    flush();
    return tokens;
}

std::vector<Example> listops_to_examples(const std::vector<ListOpsExample>& raw,
                                         const Vocabulary& vocab) {
    std::vector<Example> out;
    out.reserve(raw.size());
    for (const auto& r : raw) {
        Example ex;
        for (const auto& tok : tokenize_listops(r.expression)) {
            ex.tokens.push_back(vocab.id(tok));
        }
        ex.label = r.label;
        out.push_back(std::move(ex));
    }
    return out;
}

void write_listops_tsv(const std::string& path, const std::vector<ListOpsExample>& examples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("write_listops_tsv: cannot open " + path);
    }
    for (const auto& ex : examples) {
        out << ex.label << '\t' << ex.expression << '\n';
    }
}

std::vector<ListOpsExample> read_listops_tsv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("read_listops_tsv: cannot open " + path);
    }
    std::vector<ListOpsExample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab + 1 >= line.size()) {
            throw ParseError("listops tsv: malformed line " + std::to_string(lineno));
        }
        ListOpsExample ex;
        try {
            ex.label = std::stoll(line.substr(0, tab));
        } catch (const std::exception&) {
            throw ParseError("listops tsv: bad label on line " + std::to_string(lineno));
        }
        ex.expression = line.substr(tab + 1);
        out.push_back(std::move(ex));
    }
    return out;
}

// ---- character-level classification -----------------------------------------

namespace {

struct ParsedLine {
    std::int64_t label;
    std::string text;
};

std::vector<ParsedLine> parse_label_tsv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("load_char_classification: cannot open " + path);
    }
    std::vector<ParsedLine> lines;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ParseError("classification tsv: missing tab on line " + std::to_string(lineno));
        }
        std::string text = line.substr(tab + 1);
        if (text.empty()) {
            throw ParseError("classification tsv: empty text on line " + std::to_string(lineno));
        }
        std::int64_t label = 0;
        try {
            label = std::stoll(line.substr(0, tab));
        } catch (const std::exception&) {
            throw ParseError("classification tsv: bad label on line " + std::to_string(lineno));
        }
        if (label < 0) {
            throw ParseError("classification tsv: negative label on line " +
                             std::to_string(lineno));
        }
        lines.push_back({label, std::move(text)});
    }
    return lines;
}

}  // namespace

std::vector<std::int64_t> tokenize_chars(const std::string& text, const Vocabulary& vocab) {
    std::vector<std::int64_t> out;
    out.reserve(text.size());
    for (char c : text) {
        out.push_back(vocab.id(std::string(1, c)));
    }
    return out;
}

std::string detokenize_chars(const std::vector<std::int64_t>& tokens, const Vocabulary& vocab) {
    std::string out;
    for (auto id : tokens) {
        out += vocab.symbol(id);
    }
    return out;
}

CharDataset load_char_classification(const std::string& path) {
    const auto lines = parse_label_tsv(path);
    std::vector<std::string> symbols;
    std::int64_t max_label = -1;
    for (const auto& l : lines) {
        for (char c : l.text) {
            symbols.push_back(std::string(1, c));
        }
        max_label = std::max(max_label, l.label);
    }
    CharDataset ds;
    ds.vocab = Vocabulary::from_symbols(symbols);
    ds.num_classes = max_label + 1;
    for (const auto& l : lines) {
        Example ex;
        ex.tokens = tokenize_chars(l.text, ds.vocab);
        ex.label = l.label;
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

std::vector<Example> load_char_classification_with_vocab(const std::string& path,
                                                         const Vocabulary& vocab,
                                                         std::int64_t num_classes) {
    const auto lines = parse_label_tsv(path);
    std::vector<Example> out;
    for (const auto& l : lines) {
        if (l.label >= num_classes) {
            throw DataError("classification tsv: label " + std::to_string(l.label) +
                            " outside the training class set");
        }
        Example ex;
        ex.tokens = tokenize_chars(l.text, vocab);
        ex.label = l.label;
        out.push_back(std::move(ex));
    }
    return out;
}

// ---- language modeling --------------------------------------------------------

std::vector<Example> build_lm_windows(const std::vector<std::int64_t>& stream,
                                      std::size_t window) {
    if (window < 1) {
        throw ContractError("build_lm_windows: window >= 1 required");
    }
    if (stream.size() < window + 1) {
        throw DataError("build_lm_windows: stream of " + std::to_string(stream.size()) +
                        " tokens is shorter than window+1 = " + std::to_string(window + 1));
    }
    std::vector<Example> out;
    const std::size_t stride = window + 1;
    for (std::size_t t = 0; t + stride <= stream.size(); t += stride) {
        Example ex;
        ex.tokens.assign(stream.begin() + static_cast<std::ptrdiff_t>(t),
                         stream.begin() + static_cast<std::ptrdiff_t>(t + window));
        ex.targets.assign(stream.begin() + static_cast<std::ptrdiff_t>(t + 1),
                          stream.begin() + static_cast<std::ptrdiff_t>(t + window + 1));
        out.push_back(std::move(ex));
    }
    return out;
}

// ---- batching -------------------------------------------------------------------

std::vector<Batch> batchify(const std::vector<Example>& examples, std::size_t batch_size,
                            std::int64_t pad_id) {
    if (batch_size < 1) {
        throw ContractError("batchify: batch_size >= 1 required");
    }
    std::vector<Batch> batches;
    for (std::size_t start = 0; start < examples.size(); start += batch_size) {
        const auto end = std::min(start + batch_size, examples.size());
        Batch b;
        std::size_t width = 0;
        for (std::size_t i = start; i < end; ++i) {
            width = std::max(width, examples[i].tokens.size());
        }
        for (std::size_t i = start; i < end; ++i) {
            const auto& ex = examples[i];
            std::vector<std::int64_t> padded(width, pad_id);
            std::vector<double> mask(width, 0.0);
            std::copy(ex.tokens.begin(), ex.tokens.end(), padded.begin());
            std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(ex.tokens.size()),
                      1.0);
            b.tokens.push_back(std::move(padded));
            b.mask.push_back(std::move(mask));
            b.labels.push_back(ex.label);
            b.lengths.push_back(ex.tokens.size());
            if (!ex.targets.empty()) {
                std::vector<std::int64_t> tgt(width, pad_id);
                std::copy(ex.targets.begin(), ex.targets.end(), tgt.begin());
                b.targets.push_back(std::move(tgt));
            }
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

}  // namespace tj
