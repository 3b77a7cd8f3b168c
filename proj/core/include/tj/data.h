#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tj/error.h"
#include "tj/rng.h"

namespace tj {

struct Example {
    std::vector<std::int64_t> tokens;
    std::int64_t label = -1;                // classification
    std::vector<std::int64_t> targets;      // language modeling
};

// Symbol table with reserved pad=0 and unk=1; non-reserved ids are assigned
// in sorted symbol order so vocabularies are stable across runs.
class Vocabulary {
public:
    static constexpr std::int64_t kPad = 0;
    static constexpr std::int64_t kUnk = 1;

    static Vocabulary from_symbols(const std::vector<std::string>& symbols);

    std::int64_t id(const std::string& symbol) const;  // kUnk for unknown symbols
    const std::string& symbol(std::int64_t id) const;
    std::int64_t size() const { return static_cast<std::int64_t>(id_to_symbol_.size()); }
    bool contains(const std::string& symbol) const;

private:
    std::map<std::string, std::int64_t> symbol_to_id_;
    std::vector<std::string> id_to_symbol_;
};

// ---- ListOps ----------------------------------------------------------------

// Nested prefix expressions over MIN / MAX / MED / SM (sum mod 10) and the
// digits 0-9, e.g. "[MAX 2 4 [MIN 1 3] 7]". Labels are the evaluated result.
struct ListOpsExample {
    std::string expression;
    std::int64_t label = 0;
};

std::vector<ListOpsExample> gen_listops(std::size_t count, int max_depth, std::size_t max_len,
                                        std::uint64_t seed);

// The 14-symbol content alphabet (digits + operators) plus brackets.
Vocabulary listops_vocabulary();

// One symbol per token: digits, operators, '[' and ']'.
std::vector<std::string> tokenize_listops(const std::string& expression);

std::vector<Example> listops_to_examples(const std::vector<ListOpsExample>& raw,
                                         const Vocabulary& vocab);

void write_listops_tsv(const std::string& path, const std::vector<ListOpsExample>& examples);
std::vector<ListOpsExample> read_listops_tsv(const std::string& path);

// ---- character-level text classification -------------------------------------

struct CharDataset {
    std::vector<Example> examples;
    Vocabulary vocab;
    std::int64_t num_classes = 0;
};

// Lines of `<label>\t<text>`; the vocabulary is built from this split only.
CharDataset load_char_classification(const std::string& path);
// Same file format, but mapping characters through an existing vocabulary.
std::vector<Example> load_char_classification_with_vocab(const std::string& path,
                                                         const Vocabulary& vocab,
                                                         std::int64_t num_classes);

std::vector<std::int64_t> tokenize_chars(const std::string& text, const Vocabulary& vocab);
std::string detokenize_chars(const std::vector<std::int64_t>& tokens, const Vocabulary& vocab);

// ---- language modeling --------------------------------------------------------

// Non-overlapping windows: inputs [t, t+window), targets [t+1, t+window+1),
// consuming window+1 tokens each; the tail remainder is dropped.
std::vector<Example> build_lm_windows(const std::vector<std::int64_t>& stream,
                                      std::size_t window = 35);

// ---- batching ------------------------------------------------------------------

struct Batch {
    std::vector<std::vector<std::int64_t>> tokens;  // right-padded to the batch max
    std::vector<std::vector<double>> mask;          // 1 = real token, 0 = padding
    std::vector<std::int64_t> labels;
    std::vector<std::vector<std::int64_t>> targets;  // padded with pad_id (LM)
    std::vector<std::size_t> lengths;
};

std::vector<Batch> batchify(const std::vector<Example>& examples, std::size_t batch_size,
                            std::int64_t pad_id = Vocabulary::kPad);

}  // namespace tj
