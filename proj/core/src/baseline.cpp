#include "tj/baseline.h"

#include <cmath>

namespace tj {

void BaselineConfig::validate() const {
    if (layers < 1) {
        throw ContractError("BaselineConfig: layers >= 1 required");
    }
    if (hidden < 1 || heads < 1 || hidden % heads != 0) {
        throw ContractError("BaselineConfig: hidden must be divisible by heads");
    }
    if (vocab_size < 1) {
        throw ContractError("BaselineConfig: vocab_size >= 1 required");
    }
    if (max_len < 1) {
        throw ContractError("BaselineConfig: max_len >= 1 required");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
        throw ContractError("BaselineConfig: dropout must be in [0,1)");
    }
}

namespace {

SquareWeight make_square(std::int64_t d, Rng& rng, double stddev, bool orthogonal) {
    SquareWeight w;
    if (orthogonal) {
        w.ortho = std::make_unique<OrthogonalParam>(Tensor::randn({d, d}, rng, stddev, true));
    } else {
        w.plain = Tensor::randn({d, d}, rng, stddev, true);
    }
    return w;
}

}  // namespace

BaselineModel::BaselineModel(BaselineConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.ffn_dim == 0) {
        cfg_.ffn_dim = 4 * cfg_.hidden;
    }
    Rng rng(seed);
    const auto d = cfg_.hidden;
    const auto dff = cfg_.ffn_dim;
    const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
    const bool ortho = cfg_.variant == BaselineVariant::Orthogonal;

    emb_ = Tensor::randn({cfg_.vocab_size, d}, rng, 1.0, true);
    pe_ = sinusoidal_pe(cfg_.max_len, d);
    params_.push_back({"embedding", emb_});

    for (std::int64_t l = 0; l < cfg_.layers; ++l) {
        LayerParams lp;
        lp.wq = make_square(d, rng, w_std, ortho);
        lp.wk = make_square(d, rng, w_std, ortho);
        lp.wv = make_square(d, rng, w_std, ortho);
        lp.wo = make_square(d, rng, w_std, ortho);
        if (ortho && dff == d) {
            lp.ffn_w1_ortho =
                std::make_unique<OrthogonalParam>(Tensor::randn({d, d}, rng, w_std, true));
            lp.ffn_w2_ortho =
                std::make_unique<OrthogonalParam>(Tensor::randn({d, d}, rng, w_std, true));
        } else {
            lp.ffn_w1 = Tensor::randn({d, dff}, rng, w_std, true);
            lp.ffn_w2 = Tensor::randn({dff, d}, rng, 1.0 / std::sqrt(static_cast<double>(dff)),
                                      true);
        }
        lp.ffn_b1 = Tensor::zeros({dff}, true);
        lp.ffn_b2 = Tensor::zeros({d}, true);
        if (cfg_.variant == BaselineVariant::ReZero) {
            lp.res_attn = Tensor::scalar(0.0, true);
            lp.res_ffn = Tensor::scalar(0.0, true);
        } else {
            lp.ln1_g = Tensor::ones({d}, true);
            lp.ln1_b = Tensor::zeros({d}, true);
            lp.ln2_g = Tensor::ones({d}, true);
            lp.ln2_b = Tensor::zeros({d}, true);
        }

        const std::string prefix = "layer" + std::to_string(l) + ".";
        params_.push_back({prefix + "wq", lp.wq.raw()});
        params_.push_back({prefix + "wk", lp.wk.raw()});
        params_.push_back({prefix + "wv", lp.wv.raw()});
        params_.push_back({prefix + "wo", lp.wo.raw()});
        params_.push_back({prefix + "ffn.w1",
                           lp.ffn_w1_ortho ? lp.ffn_w1_ortho->raw() : lp.ffn_w1});
        params_.push_back({prefix + "ffn.w2",
                           lp.ffn_w2_ortho ? lp.ffn_w2_ortho->raw() : lp.ffn_w2});
        params_.push_back({prefix + "ffn.b1", lp.ffn_b1});
        params_.push_back({prefix + "ffn.b2", lp.ffn_b2});
        if (cfg_.variant == BaselineVariant::ReZero) {
            params_.push_back({prefix + "res_attn", lp.res_attn});
            params_.push_back({prefix + "res_ffn", lp.res_ffn});
        } else {
            params_.push_back({prefix + "ln1.g", lp.ln1_g});
            params_.push_back({prefix + "ln1.b", lp.ln1_b});
            params_.push_back({prefix + "ln2.g", lp.ln2_g});
            params_.push_back({prefix + "ln2.b", lp.ln2_b});
        }
        layers_.push_back(std::move(lp));
    }

    head_w_ = Tensor::randn({d, cfg_.task.num_classes}, rng, w_std, true);
    head_b_ = Tensor::zeros({cfg_.task.num_classes}, true);
    params_.push_back({"head.w", head_w_});
    params_.push_back({"head.b", head_b_});
}

TensorPtr BaselineModel::embed(const std::vector<std::int64_t>& tokens) {
    const auto n = static_cast<std::int64_t>(tokens.size());
    if (n < 1) {
        throw ContractError("embed: empty token sequence");
    }
    if (n > cfg_.max_len) {
        throw DataError("embed: sequence length " + std::to_string(n) + " exceeds max_len " +
                        std::to_string(cfg_.max_len));
    }
    const auto d = cfg_.hidden;
    std::vector<double> onehot(static_cast<std::size_t>(n * cfg_.vocab_size), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        const auto id = tokens[static_cast<std::size_t>(i)];
        if (id < 0 || id >= cfg_.vocab_size) {
            throw DataError("embed: token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(cfg_.vocab_size));
        }
        onehot[static_cast<std::size_t>(i * cfg_.vocab_size + id)] = 1.0;
    }
    auto looked_up = matmul(Tensor::create({n, cfg_.vocab_size}, std::move(onehot)), emb_);

    // Additive sinusoidal positional encoding.
    std::vector<double> pe_rows(static_cast<std::size_t>(n * d));
    std::copy(pe_->data.begin(), pe_->data.begin() + n * d, pe_rows.begin());
    return add(looked_up, Tensor::create({n, d}, std::move(pe_rows)));
}

TensorPtr BaselineModel::dot_product_attention(const TensorPtr& x, std::int64_t layer) {
    auto& lp = layers_.at(static_cast<std::size_t>(layer));
    const auto d = cfg_.hidden;
    const auto h = cfg_.heads;
    const auto dh = d / h;

    auto q = matmul(x, lp.wq.value());
    auto k = matmul(x, lp.wk.value());
    auto v = matmul(x, lp.wv.value());

    TensorPtr ctx;
    for (std::int64_t head = 0; head < h; ++head) {
        auto qh = slice_cols(q, head * dh, (head + 1) * dh);
        auto kh = slice_cols(k, head * dh, (head + 1) * dh);
        auto vh = slice_cols(v, head * dh, (head + 1) * dh);
        auto scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
        auto weights = softmax(scores, 1);
        auto ctx_h = matmul(weights, vh);
        ctx = ctx ? concat_cols(ctx, ctx_h) : ctx_h;
    }
    return matmul(ctx, lp.wo.value());
}

TensorPtr BaselineModel::block(const TensorPtr& x, std::int64_t layer, bool training,
                               Rng* dropout_rng) {
    auto& lp = layers_.at(static_cast<std::size_t>(layer));
    const bool rezero = cfg_.variant == BaselineVariant::ReZero;
    const bool use_dropout = training && dropout_rng && cfg_.dropout > 0.0 && !rezero;

    auto ffn = [&](const TensorPtr& in) {
        auto w1 = lp.ffn_w1_ortho ? lp.ffn_w1_ortho->q() : lp.ffn_w1;
        auto w2 = lp.ffn_w2_ortho ? lp.ffn_w2_ortho->q() : lp.ffn_w2;
        auto hidden = relu(add_rowvec(matmul(in, w1), lp.ffn_b1));
        return add_rowvec(matmul(hidden, w2), lp.ffn_b2);
    };

    if (rezero) {
        auto a = dot_product_attention(x, layer);
        auto y = add(x, bcast_mul(a, lp.res_attn));
        auto f = ffn(y);
        return add(y, bcast_mul(f, lp.res_ffn));
    }

    auto a = dot_product_attention(x, layer);
    if (use_dropout) {
        a = dropout(a, cfg_.dropout, *dropout_rng, true);
    }
    auto y = layer_norm_rows(add(x, a), lp.ln1_g, lp.ln1_b);
    auto f = ffn(y);
    if (use_dropout) {
        f = dropout(f, cfg_.dropout, *dropout_rng, true);
    }
    return layer_norm_rows(add(y, f), lp.ln2_g, lp.ln2_b);
}

EncodeResult BaselineModel::encode(const std::vector<std::int64_t>& tokens, bool training,
                                   Rng* dropout_rng) {
    EncodeResult out;
    auto x = embed(tokens);
    out.layers.push_back(x);
    for (std::int64_t l = 0; l < cfg_.layers; ++l) {
        x = block(x, l, training, dropout_rng);
        out.layers.push_back(x);
    }
    return out;
}

TensorPtr BaselineModel::head_logits(const TensorPtr& x_last) {
    if (cfg_.task.kind == TaskKind::Classification) {
        auto pooled = cfg_.pooling == Pooling::Mean ? mean_pool_rows(x_last)
                                                    : max_pool_rows(x_last);
        return add_rowvec(matmul(pooled, head_w_), head_b_);
    }
    return add_rowvec(matmul(x_last, head_w_), head_b_);
}

void BaselineModel::invalidate_caches() {
    for (auto& lp : layers_) {
        lp.wq.invalidate();
        lp.wk.invalidate();
        lp.wv.invalidate();
        lp.wo.invalidate();
        if (lp.ffn_w1_ortho) lp.ffn_w1_ortho->invalidate();
        if (lp.ffn_w2_ortho) lp.ffn_w2_ortho->invalidate();
    }
}

double BaselineModel::max_square_orthogonality_error() {
    double worst = 0.0;
    for (auto& lp : layers_) {
        for (SquareWeight* w : {&lp.wq, &lp.wk, &lp.wv, &lp.wo}) {
            if (w->ortho) {
                worst = std::max(worst, w->ortho->orthogonality_error());
            }
        }
        if (lp.ffn_w1_ortho) worst = std::max(worst, lp.ffn_w1_ortho->orthogonality_error());
        if (lp.ffn_w2_ortho) worst = std::max(worst, lp.ffn_w2_ortho->orthogonality_error());
    }
    return worst;
}

}  // namespace tj
