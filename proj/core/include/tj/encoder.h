#pragma once

#include <memory>
#include <vector>

#include "tj/model.h"
#include "tj/ortho.h"
#include "tj/spectral.h"

namespace tj {

struct TransJectConfig {
    std::int64_t layers = 4;   // L >= 3 (injectivity precondition)
    std::int64_t hidden = 64;  // d, even: the embedding concatenates two d/2 halves
    std::int64_t experts = 2;  // E >= 1
    std::int64_t vocab_size = 0;
    std::int64_t max_len = 64;
    SigmaMode sigma_mode = SigmaMode::Approximated;
    double recon_weight = 0.1;  // beta, weight of the reconstruction term in the loss
    Task task = Task::classification(2);
    Pooling pooling = Pooling::Mean;
    bool tie_residuals = false;  // share the FFN residual scalar with the attention one
    // Injectivity needs L >= 3; runtime benchmarks may opt into shallower
    // stacks where that guarantee is irrelevant.
    bool allow_shallow = false;

    void validate() const;
};

// ---- stateless building blocks ----------------------------------------------

// X Q_u diag(sigma) Q_v. Requires a standardized spectrum (entries >= 0,
// max exactly 1), which caps the operator norm of the map at 1.
TensorPtr orthogonal_attention(const TensorPtr& x, OrthogonalParam& u, OrthogonalParam& v,
                               const TensorPtr& sigma);

// x + (sigmoid(residual_raw)/L) * elu(orthogonal_attention(x, u, v, sigma))
TensorPtr expert_branch(const TensorPtr& x, OrthogonalParam& u, OrthogonalParam& v,
                        const TensorPtr& sigma, const TensorPtr& residual_raw, std::int64_t layers);

// Per-sample expert weights: softmax(mean_pool(x) * gate_w), a 1 x E tensor.
TensorPtr gate_weights(const TensorPtr& x, const TensorPtr& gate_w,
                       const std::vector<double>* mask = nullptr);

// Convex combination of expert branches; validates the weights.
TensorPtr moe_combine(const std::vector<TensorPtr>& branches, const TensorPtr& lambda);

// x + (sigmoid(residual_raw)/L) * elu(elu(x W1 + b1) W2 + b2), W1/W2 orthogonal.
TensorPtr orf(const TensorPtr& x, OrthogonalParam& w1, OrthogonalParam& w2, const TensorPtr& b1,
              const TensorPtr& b2, const TensorPtr& residual_raw, std::int64_t layers);

// ---- the full encoder --------------------------------------------------------

class TransJectModel : public SequenceModel {
public:
    struct ExpertParams {
        OrthogonalParam u;
        OrthogonalParam v;
    };
    struct LayerParams {
        std::vector<ExpertParams> experts;
        TensorPtr residual_raw;  // scalar, pre-sigmoid
        TensorPtr gate_w;        // d x E
        OrthogonalParam ffn_w1;
        OrthogonalParam ffn_w2;
        TensorPtr ffn_b1;
        TensorPtr ffn_b2;
        TensorPtr ffn_residual_raw;  // == residual_raw when residuals are tied
    };

    TransJectModel(TransJectConfig cfg, std::uint64_t seed);

    std::string kind() const override { return "transject"; }
    Task task() const override { return cfg_.task; }
    std::int64_t max_len() const override { return cfg_.max_len; }
    std::int64_t vocab_size() const override { return cfg_.vocab_size; }
    const TransJectConfig& config() const { return cfg_; }

    // Injective concatenated embedding: row i = [Emb(token_i) | PE_i].
    TensorPtr embed(const std::vector<std::int64_t>& tokens);

    // Standardized spectrum of the layer-0 embedding; evaluated once per
    // forward pass (the counter backs that invariant's test).
    SpectralState spectral(const TensorPtr& x0);

    TensorPtr sublayer(const TensorPtr& x, std::int64_t layer, const TensorPtr& sigma,
                       const std::vector<double>* mask = nullptr, TensorPtr* lambda_out = nullptr);

    EncodeResult encode(const std::vector<std::int64_t>& tokens, bool training = false,
                        Rng* dropout_rng = nullptr) override;
    TensorPtr head_logits(const TensorPtr& x_last) override;

    const std::vector<NamedParam>& params() const override { return params_; }
    void invalidate_caches() override;

    std::size_t spectral_evals() const { return spectral_evals_; }
    std::vector<double> residual_alphas() const;
    std::vector<double> ffn_residual_alphas() const;
    std::vector<LayerParams>& layer_params() { return layers_; }
    SemiOrthogonalParam& embedding() { return emb_; }
    OrthogonalParam& spectral_basis();

private:
    TransJectConfig cfg_;
    SemiOrthogonalParam emb_;  // vocab x d/2
    TensorPtr pe_;             // max_len x d/2, fixed
    std::unique_ptr<OrthogonalParam> u_basis_;  // Approximated mode
    TensorPtr sigma_raw_;                       // Random mode, trainable
    std::vector<LayerParams> layers_;
    TensorPtr head_w_;
    TensorPtr head_b_;
    std::vector<NamedParam> params_;
    std::size_t spectral_evals_ = 0;
};

}  // namespace tj
