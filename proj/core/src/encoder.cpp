#include "tj/encoder.h"

#include <cmath>

namespace tj {

void TransJectConfig::validate() const {
    if (layers < 3) {
        throw ContractError("TransJectConfig: layers >= 3 required (injective residuals)");
    }
    if (hidden < 2 || hidden % 2 != 0) {
        throw ContractError("TransJectConfig: hidden size must be even and >= 2");
    }
    if (experts < 1) {
        throw ContractError("TransJectConfig: experts >= 1 required");
    }
    if (vocab_size < 1) {
        throw ContractError("TransJectConfig: vocab_size >= 1 required");
    }
    if (max_len < 1) {
        throw ContractError("TransJectConfig: max_len >= 1 required");
    }
    if (recon_weight < 0.0) {
        throw ContractError("TransJectConfig: recon_weight must be >= 0");
    }
}

TensorPtr sinusoidal_pe(std::int64_t max_len, std::int64_t dim) {
    std::vector<double> d(static_cast<std::size_t>(max_len * dim));
    for (std::int64_t pos = 0; pos < max_len; ++pos) {
        for (std::int64_t j = 0; j < dim; ++j) {
            const double exponent = static_cast<double>(2 * (j / 2)) / static_cast<double>(dim);
            const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
            d[static_cast<std::size_t>(pos * dim + j)] = (j % 2 == 0) ? std::sin(angle)
                                                                      : std::cos(angle);
        }
    }
    return Tensor::create({max_len, dim}, std::move(d));
}

TensorPtr orthogonal_attention(const TensorPtr& x, OrthogonalParam& u, OrthogonalParam& v,
                               const TensorPtr& sigma) {
    const auto d = x->cols();
    if (sigma->numel() != d) {
        throw ShapeError("orthogonal_attention: sigma length " + std::to_string(sigma->numel()) +
                         " vs hidden " + std::to_string(d));
    }
    double mx = sigma->data[0];
    for (double s : sigma->data) {
        if (s < -1e-12) {
            throw ContractError("orthogonal_attention: sigma has a negative entry");
        }
        mx = std::max(mx, s);
    }
    if (std::fabs(mx - 1.0) > 1e-9) {
        throw ContractError("orthogonal_attention: sigma not standardized (max = " +
                            std::to_string(mx) + ")");
    }
    return matmul(matmul(x, u.q()), matmul(diag_embed(sigma), v.q()));
}

TensorPtr expert_branch(const TensorPtr& x, OrthogonalParam& u, OrthogonalParam& v,
                        const TensorPtr& sigma, const TensorPtr& residual_raw,
                        std::int64_t layers) {
    auto alpha = sigmoid(residual_raw);
    auto f = elu(orthogonal_attention(x, u, v, sigma));
    return add(x, bcast_mul(f, scale(alpha, 1.0 / static_cast<double>(layers))));
}

TensorPtr gate_weights(const TensorPtr& x, const TensorPtr& gate_w,
                       const std::vector<double>* mask) {
    return softmax(matmul(mean_pool_rows(x, mask), gate_w), 1);
}

TensorPtr moe_combine(const std::vector<TensorPtr>& branches, const TensorPtr& lambda) {
    if (branches.empty()) {
        throw ContractError("moe_combine: no branches");
    }
    const auto e = static_cast<std::int64_t>(branches.size());
    if (lambda->numel() != e) {
        throw ShapeError("moe_combine: " + std::to_string(e) + " branches vs lambda " +
                         shape_str(lambda->shape));
    }
    double total = 0.0;
    for (double w : lambda->data) {
        if (w < -1e-12) {
            throw ContractError("moe_combine: negative expert weight");
        }
        total += w;
    }
    if (std::fabs(total - 1.0) > 1e-9) {
        throw ContractError("moe_combine: weights sum to " + std::to_string(total));
    }
    TensorPtr out = bcast_mul(branches[0], select(lambda, 0));
    for (std::int64_t i = 1; i < e; ++i) {
        out = add(out, bcast_mul(branches[static_cast<std::size_t>(i)], select(lambda, i)));
    }
    return out;
}

TensorPtr orf(const TensorPtr& x, OrthogonalParam& w1, OrthogonalParam& w2, const TensorPtr& b1,
              const TensorPtr& b2, const TensorPtr& residual_raw, std::int64_t layers) {
    auto inner = elu(add_rowvec(matmul(x, w1.q()), b1));
    auto outer = elu(add_rowvec(matmul(inner, w2.q()), b2));
    auto alpha = sigmoid(residual_raw);
    return add(x, bcast_mul(outer, scale(alpha, 1.0 / static_cast<double>(layers))));
}

// ---- model -------------------------------------------------------------------

namespace {

constexpr double kResidualRawInit = -6.0;  // sigmoid(-6) ~ 0.0025, near-zero residual start

}  // namespace

TransJectModel::TransJectModel(TransJectConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), emb_(Tensor::zeros({1, 1})) {
    cfg_.validate();
    const auto d = cfg_.hidden;
    const auto half = d / 2;
    if (cfg_.vocab_size < half) {
        throw ContractError("TransJectModel: vocab_size must be >= hidden/2 so the embedding "
                            "columns can be orthonormal (got vocab " +
                            std::to_string(cfg_.vocab_size) + ", hidden " + std::to_string(d) +
                            ")");
    }
    Rng rng(seed);
    const double w_std = 1.0 / std::sqrt(static_cast<double>(d));

    emb_ = SemiOrthogonalParam(Tensor::randn({cfg_.vocab_size, half}, rng, 1.0, true));
    pe_ = sinusoidal_pe(cfg_.max_len, half);

    if (cfg_.sigma_mode == SigmaMode::Approximated) {
        u_basis_ = std::make_unique<OrthogonalParam>(
            Tensor::randn({d, d}, rng, w_std, true));
        params_.push_back({"spectral.u_basis.raw", u_basis_->raw()});
    } else {
        sigma_raw_ = Tensor::rand_uniform({d}, rng, 0.0, 1.0, true);
        params_.push_back({"spectral.sigma_raw", sigma_raw_});
    }
    params_.push_back({"embedding.raw", emb_.raw()});

    layers_.reserve(static_cast<std::size_t>(cfg_.layers));
    for (std::int64_t l = 0; l < cfg_.layers; ++l) {
        LayerParams lp{
            {},
            Tensor::scalar(kResidualRawInit, true),
            Tensor::randn({d, cfg_.experts}, rng, 0.02, true),
            OrthogonalParam(Tensor::randn({d, d}, rng, w_std, true)),
            OrthogonalParam(Tensor::randn({d, d}, rng, w_std, true)),
            Tensor::zeros({d}, true),
            Tensor::zeros({d}, true),
            nullptr,
        };
        lp.ffn_residual_raw =
            cfg_.tie_residuals ? lp.residual_raw : Tensor::scalar(kResidualRawInit, true);
        for (std::int64_t e = 0; e < cfg_.experts; ++e) {
            lp.experts.push_back(ExpertParams{
                OrthogonalParam(Tensor::randn({d, d}, rng, w_std, true)),
                OrthogonalParam(Tensor::randn({d, d}, rng, w_std, true)),
            });
        }
        const std::string prefix = "layer" + std::to_string(l) + ".";
        for (std::int64_t e = 0; e < cfg_.experts; ++e) {
            const std::string ep = prefix + "expert" + std::to_string(e) + ".";
            params_.push_back({ep + "u.raw", lp.experts[static_cast<std::size_t>(e)].u.raw()});
            params_.push_back({ep + "v.raw", lp.experts[static_cast<std::size_t>(e)].v.raw()});
        }
        params_.push_back({prefix + "residual", lp.residual_raw});
        params_.push_back({prefix + "gate_w", lp.gate_w});
        params_.push_back({prefix + "ffn.w1.raw", lp.ffn_w1.raw()});
        params_.push_back({prefix + "ffn.w2.raw", lp.ffn_w2.raw()});
        params_.push_back({prefix + "ffn.b1", lp.ffn_b1});
        params_.push_back({prefix + "ffn.b2", lp.ffn_b2});
        if (!cfg_.tie_residuals) {
            params_.push_back({prefix + "ffn.residual", lp.ffn_residual_raw});
        }
        layers_.push_back(std::move(lp));
    }

    head_w_ = Tensor::randn({d, cfg_.task.num_classes}, rng, w_std, true);
    head_b_ = Tensor::zeros({cfg_.task.num_classes}, true);
    params_.push_back({"head.w", head_w_});
    params_.push_back({"head.b", head_b_});
}

OrthogonalParam& TransJectModel::spectral_basis() {
    if (!u_basis_) {
        throw ContractError("spectral_basis(): model runs in random-sigma mode");
    }
    return *u_basis_;
}

TensorPtr TransJectModel::embed(const std::vector<std::int64_t>& tokens) {
    const auto n = static_cast<std::int64_t>(tokens.size());
    if (n < 1) {
        throw ContractError("embed: empty token sequence");
    }
    if (n > cfg_.max_len) {
        throw DataError("embed: sequence length " + std::to_string(n) + " exceeds max_len " +
                        std::to_string(cfg_.max_len));
    }
    const auto half = cfg_.hidden / 2;
    std::vector<double> onehot(static_cast<std::size_t>(n * cfg_.vocab_size), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        const auto id = tokens[static_cast<std::size_t>(i)];
        if (id < 0 || id >= cfg_.vocab_size) {
            throw DataError("embed: token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(cfg_.vocab_size));
        }
        onehot[static_cast<std::size_t>(i * cfg_.vocab_size + id)] = 1.0;
    }
    auto left = matmul(Tensor::create({n, cfg_.vocab_size}, std::move(onehot)), emb_.q());

    std::vector<double> pe_rows(static_cast<std::size_t>(n * half));
    std::copy(pe_->data.begin(), pe_->data.begin() + n * half, pe_rows.begin());
    return concat_cols(left, Tensor::create({n, half}, std::move(pe_rows)));
}

SpectralState TransJectModel::spectral(const TensorPtr& x0) {
    ++spectral_evals_;
    SpectralState st;
    st.mode = cfg_.sigma_mode;
    if (cfg_.sigma_mode == SigmaMode::Approximated) {
        auto approx = approx_eigen(gram(x0), *u_basis_);
        st.sigma = standardize(approx.sigma_raw);
        st.recon_loss = approx.recon_loss;
    } else {
        st.sigma = standardize(sigma_raw_);
        st.recon_loss = nullptr;
    }
    return st;
}

TensorPtr TransJectModel::sublayer(const TensorPtr& x, std::int64_t layer, const TensorPtr& sigma,
                                   const std::vector<double>* mask, TensorPtr* lambda_out) {
    auto& lp = layers_.at(static_cast<std::size_t>(layer));
    std::vector<TensorPtr> branches;
    branches.reserve(lp.experts.size());
    for (auto& ex : lp.experts) {
        branches.push_back(expert_branch(x, ex.u, ex.v, sigma, lp.residual_raw, cfg_.layers));
    }
    auto lambda = gate_weights(x, lp.gate_w, mask);
    if (lambda_out) {
        *lambda_out = lambda;
    }
    auto mixed = moe_combine(branches, lambda);
    return orf(mixed, lp.ffn_w1, lp.ffn_w2, lp.ffn_b1, lp.ffn_b2, lp.ffn_residual_raw,
               cfg_.layers);
}

EncodeResult TransJectModel::encode(const std::vector<std::int64_t>& tokens, bool /*training*/,
                                    Rng* /*dropout_rng*/) {
    EncodeResult out;
    auto x = embed(tokens);
    out.layers.push_back(x);
    // Sigma comes from the layer-0 embedding only, once per forward pass.
    const auto st = spectral(x);
    out.recon_loss = st.recon_loss;
    for (std::int64_t l = 0; l < cfg_.layers; ++l) {
        TensorPtr lambda;
        x = sublayer(x, l, st.sigma, nullptr, &lambda);
        out.layers.push_back(x);
        out.gate_weights.push_back(lambda);
    }
    return out;
}

TensorPtr TransJectModel::head_logits(const TensorPtr& x_last) {
    if (cfg_.task.kind == TaskKind::Classification) {
        auto pooled = cfg_.pooling == Pooling::Mean ? mean_pool_rows(x_last)
                                                    : max_pool_rows(x_last);
        return add_rowvec(matmul(pooled, head_w_), head_b_);
    }
    return add_rowvec(matmul(x_last, head_w_), head_b_);
}

void TransJectModel::invalidate_caches() {
    emb_.invalidate();
    if (u_basis_) {
        u_basis_->invalidate();
    }
    for (auto& lp : layers_) {
        for (auto& ex : lp.experts) {
            ex.u.invalidate();
            ex.v.invalidate();
        }
        lp.ffn_w1.invalidate();
        lp.ffn_w2.invalidate();
    }
}

std::vector<double> TransJectModel::residual_alphas() const {
    std::vector<double> out;
    for (const auto& lp : layers_) {
        const double a = lp.residual_raw->data[0];
        out.push_back(1.0 / (1.0 + std::exp(-a)));
    }
    return out;
}

std::vector<double> TransJectModel::ffn_residual_alphas() const {
    std::vector<double> out;
    for (const auto& lp : layers_) {
        const double a = lp.ffn_residual_raw->data[0];
        out.push_back(1.0 / (1.0 + std::exp(-a)));
    }
    return out;
}

std::int64_t count_parameters(const SequenceModel& model) {
    std::int64_t total = 0;
    for (const auto& p : model.params()) {
        total += p.value->numel();
    }
    return total;
}

}  // namespace tj
