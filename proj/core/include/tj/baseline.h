#pragma once

#include <memory>
#include <vector>

#include "tj/model.h"
#include "tj/ortho.h"

namespace tj {

enum class BaselineVariant { Vanilla, ReZero, Orthogonal };

struct BaselineConfig {
    std::int64_t layers = 4;
    std::int64_t hidden = 64;
    std::int64_t heads = 4;    // hidden must be divisible by heads
    std::int64_t ffn_dim = 0;  // 0 -> 4 * hidden
    BaselineVariant variant = BaselineVariant::Vanilla;
    std::int64_t vocab_size = 0;
    std::int64_t max_len = 64;
    double dropout = 0.1;  // applied to Vanilla/Orthogonal at train time
    Task task = Task::classification(2);
    Pooling pooling = Pooling::Mean;

    void validate() const;
};

// A square weight that is either a plain matrix or an orthogonally
// parameterized one, depending on the model variant.
struct SquareWeight {
    std::unique_ptr<OrthogonalParam> ortho;
    TensorPtr plain;

    TensorPtr value() { return ortho ? ortho->q() : plain; }
    TensorPtr raw() const { return ortho ? ortho->raw() : plain; }
    void invalidate() {
        if (ortho) ortho->invalidate();
    }
};

class BaselineModel : public SequenceModel {
public:
    struct LayerParams {
        SquareWeight wq, wk, wv, wo;
        TensorPtr ffn_w1;  // d x d_ff (plain; routed through ortho only when square)
        TensorPtr ffn_w2;  // d_ff x d
        std::unique_ptr<OrthogonalParam> ffn_w1_ortho;
        std::unique_ptr<OrthogonalParam> ffn_w2_ortho;
        TensorPtr ffn_b1, ffn_b2;
        TensorPtr ln1_g, ln1_b, ln2_g, ln2_b;    // Vanilla/Orthogonal
        TensorPtr res_attn, res_ffn;             // ReZero scalars, initialized at 0
    };

    BaselineModel(BaselineConfig cfg, std::uint64_t seed);

    std::string kind() const override { return "baseline"; }
    Task task() const override { return cfg_.task; }
    std::int64_t max_len() const override { return cfg_.max_len; }
    std::int64_t vocab_size() const override { return cfg_.vocab_size; }
    const BaselineConfig& config() const { return cfg_; }

    TensorPtr embed(const std::vector<std::int64_t>& tokens);

    // Standard softmax(Q K^T / sqrt(d_h)) V per head, concatenated and
    // output-projected; attention rows are stochastic.
    TensorPtr dot_product_attention(const TensorPtr& x, std::int64_t layer);

    TensorPtr block(const TensorPtr& x, std::int64_t layer, bool training = false,
                    Rng* dropout_rng = nullptr);

    EncodeResult encode(const std::vector<std::int64_t>& tokens, bool training = false,
                        Rng* dropout_rng = nullptr) override;
    TensorPtr head_logits(const TensorPtr& x_last) override;

    const std::vector<NamedParam>& params() const override { return params_; }
    void invalidate_caches() override;

    std::vector<LayerParams>& layer_params() { return layers_; }
    double max_square_orthogonality_error();

private:
    BaselineConfig cfg_;
    TensorPtr emb_;  // vocab x d
    TensorPtr pe_;   // max_len x d, fixed
    std::vector<LayerParams> layers_;
    TensorPtr head_w_;
    TensorPtr head_b_;
    std::vector<NamedParam> params_;
};

}  // namespace tj
