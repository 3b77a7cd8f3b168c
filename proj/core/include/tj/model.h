#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tj/tensor.h"

namespace tj {

enum class TaskKind { Classification, LanguageModel };

struct Task {
    TaskKind kind = TaskKind::Classification;
    std::int64_t num_classes = 2;  // class count, or vocab size for LM heads

    static Task classification(std::int64_t c) { return {TaskKind::Classification, c}; }
    static Task language_model(std::int64_t vocab) { return {TaskKind::LanguageModel, vocab}; }
};

enum class Pooling { Mean, Max };

struct NamedParam {
    std::string name;
    TensorPtr value;
};

// Per-layer trace of one forward pass, X^(0) .. X^(L), with whatever extras
// the architecture produces along the way.
struct EncodeResult {
    std::vector<TensorPtr> layers;
    std::vector<TensorPtr> gate_weights;  // one 1 x E tensor per layer (MoE models)
    TensorPtr recon_loss;                 // nullptr unless spectral approximation ran
};

// Common surface of the sequence encoders the harness can train and analyze.
class SequenceModel {
public:
    virtual ~SequenceModel() = default;

    virtual std::string kind() const = 0;
    virtual Task task() const = 0;
    virtual std::int64_t max_len() const = 0;
    virtual std::int64_t vocab_size() const = 0;

    virtual EncodeResult encode(const std::vector<std::int64_t>& tokens, bool training = false,
                                Rng* dropout_rng = nullptr) = 0;
    virtual TensorPtr head_logits(const TensorPtr& x_last) = 0;

    virtual const std::vector<NamedParam>& params() const = 0;
    // Drop cached derived tensors after parameters were mutated in place.
    virtual void invalidate_caches() = 0;
};

std::int64_t count_parameters(const SequenceModel& model);

// Sinusoidal position table, rows = positions, row 0 = [0,1,0,1,...].
TensorPtr sinusoidal_pe(std::int64_t max_len, std::int64_t dim);

}  // namespace tj
