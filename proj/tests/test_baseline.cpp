#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "oracles.h"
#include "tj/baseline.h"
#include "tj/train.h"

using namespace tj;

namespace {

BaselineConfig small_config(BaselineVariant variant = BaselineVariant::Vanilla,
                            std::int64_t layers = 2, std::int64_t hidden = 8,
                            std::int64_t heads = 2) {
    BaselineConfig cfg;
    cfg.layers = layers;
    cfg.hidden = hidden;
    cfg.heads = heads;
    cfg.ffn_dim = 2 * hidden;
    cfg.variant = variant;
    cfg.vocab_size = 12;
    cfg.max_len = 16;
    cfg.dropout = 0.0;
    cfg.task = Task::classification(3);
    return cfg;
}

std::vector<std::int64_t> random_tokens(Rng& rng, std::int64_t n, std::int64_t vocab) {
    std::vector<std::int64_t> t(static_cast<std::size_t>(n));
    for (auto& v : t) {
        v = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(vocab)));
    }
    return t;
}

// Plain-loop multi-head attention over the model's current weight values.
std::vector<double> naive_attention(BaselineModel& model, const Tensor& x, std::int64_t layer) {
    const auto d = model.config().hidden;
    const auto h = model.config().heads;
    const auto dh = d / h;
    const auto n = x.shape[0];
    auto& lp = model.layer_params()[static_cast<std::size_t>(layer)];
    const auto wq = lp.wq.value()->data;
    const auto wk = lp.wk.value()->data;
    const auto wv = lp.wv.value()->data;
    const auto wo = lp.wo.value()->data;

    const int ni = static_cast<int>(n);
    const int di = static_cast<int>(d);
    auto q = oracle::naive_matmul(x.data, wq, ni, di, di);
    auto k = oracle::naive_matmul(x.data, wk, ni, di, di);
    auto v = oracle::naive_matmul(x.data, wv, ni, di, di);

    std::vector<double> ctx(static_cast<std::size_t>(n * d), 0.0);
    for (std::int64_t head = 0; head < h; ++head) {
        const auto off = head * dh;
        for (std::int64_t i = 0; i < n; ++i) {
            std::vector<double> scores(static_cast<std::size_t>(n));
            double mx = -1e300;
            for (std::int64_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::int64_t c = 0; c < dh; ++c) {
                    acc += q[static_cast<std::size_t>(i * d + off + c)] *
                           k[static_cast<std::size_t>(j * d + off + c)];
                }
                scores[static_cast<std::size_t>(j)] = acc / std::sqrt(static_cast<double>(dh));
                mx = std::max(mx, scores[static_cast<std::size_t>(j)]);
            }
            double z = 0.0;
            for (auto& s : scores) {
                s = std::exp(s - mx);
                z += s;
            }
            for (auto& s : scores) s /= z;
            for (std::int64_t c = 0; c < dh; ++c) {
                double acc = 0.0;
                for (std::int64_t j = 0; j < n; ++j) {
                    acc += scores[static_cast<std::size_t>(j)] *
                           v[static_cast<std::size_t>(j * d + off + c)];
                }
                ctx[static_cast<std::size_t>(i * d + off + c)] = acc;
            }
        }
    }
    return oracle::naive_matmul(ctx, wo, ni, di, di);
}

}  // namespace

TEST_CASE("config invariant: hidden divisible by heads") {
    auto cfg = small_config();
    cfg.heads = 3;
    CHECK_THROWS_AS(BaselineModel(cfg, 1), ContractError);
}

TEST_CASE("single-token attention is the value path") {
    auto cfg = small_config();
    BaselineModel model(cfg, 3);
    Rng rng(61);
    auto x = Tensor::randn({1, cfg.hidden}, rng);
    auto out = model.dot_product_attention(x, 0);
    // With one token, softmax weight is exactly 1, so out = x Wv Wo.
    auto want = naive_attention(model, *x, 0);
    CHECK(oracle::max_abs_diff(out->data, want) < 1e-12);
}

TEST_CASE("identical rows attend uniformly and produce identical outputs") {
    auto cfg = small_config();
    BaselineModel model(cfg, 5);
    Rng rng(62);
    std::vector<double> row(static_cast<std::size_t>(cfg.hidden));
    for (auto& v : row) v = rng.normal();
    std::vector<double> data;
    for (int i = 0; i < 4; ++i) data.insert(data.end(), row.begin(), row.end());
    auto x = Tensor::create({4, cfg.hidden}, std::move(data));
    auto out = model.dot_product_attention(x, 0);
    for (std::int64_t i = 1; i < 4; ++i) {
        for (std::int64_t j = 0; j < cfg.hidden; ++j) {
            CHECK(out->at2(i, j) == doctest::Approx(out->at2(0, j)));
        }
    }
}

TEST_CASE("multi-head attention matches the naive per-head oracle") {
    auto cfg = small_config(BaselineVariant::Vanilla, 2, 8, 2);
    BaselineModel model(cfg, 7);
    Rng rng(63);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = Tensor::randn({3, 8}, rng);
        auto out = model.dot_product_attention(x, 1);
        auto want = naive_attention(model, *x, 1);
        CHECK(oracle::max_abs_diff(out->data, want) < 1e-10);
    }
}

TEST_CASE("one head equals the multi-head path at H=1") {
    auto cfg1 = small_config(BaselineVariant::Vanilla, 1, 8, 1);
    BaselineModel model(cfg1, 9);
    Rng rng(64);
    auto x = Tensor::randn({5, 8}, rng);
    auto out = model.dot_product_attention(x, 0);
    auto want = naive_attention(model, *x, 0);
    CHECK(oracle::max_abs_diff(out->data, want) < 1e-12);
}

TEST_CASE("layer norm of a constant-feature row is zero before the affine") {
    auto gamma = Tensor::ones({6}, false);
    auto beta = Tensor::zeros({6}, false);
    auto x = Tensor::full({2, 6}, 3.25);
    auto out = layer_norm_rows(x, gamma, beta);
    for (double v : out->data) CHECK(std::fabs(v) < 1e-9);
}

TEST_CASE("rezero blocks are the identity at initialization") {
    auto cfg = small_config(BaselineVariant::ReZero, 3);
    BaselineModel model(cfg, 11);
    Rng rng(65);
    auto tokens = random_tokens(rng, 6, cfg.vocab_size);
    auto result = model.encode(tokens);
    CHECK(result.layers.size() == static_cast<std::size_t>(cfg.layers + 1));
    // X^(L) == X^(0) bit-for-bit: every residual scalar is exactly zero.
    CHECK(result.layers.back()->data == result.layers.front()->data);
}

TEST_CASE("block gradient matches finite differences") {
    for (auto variant : {BaselineVariant::Vanilla, BaselineVariant::ReZero,
                         BaselineVariant::Orthogonal}) {
        auto cfg = small_config(variant, 1, 8, 2);
        BaselineModel model(cfg, 13);
        if (variant == BaselineVariant::ReZero) {
            // Zero residuals hide the interior from the loss; nudge them.
            for (auto& lp : model.layer_params()) {
                lp.res_attn->data[0] = 0.4;
                lp.res_ffn->data[0] = -0.3;
            }
        }
        Rng rng(66);
        auto x = oracle::randn_off_kink({4, 8}, rng);
        auto build = [&]() {
            model.invalidate_caches();
            return sum_squares(model.block(x, 0));
        };
        std::vector<TensorPtr> params = {x};
        for (const auto& p : model.params()) {
            if (p.name.rfind("layer0.", 0) == 0) params.push_back(p.value);
        }
        const double err =
            oracle::max_grad_rel_err(build, params, 1e-5, [&]() { model.invalidate_caches(); });
        CHECK(err < 1e-4);
    }
}

TEST_CASE("attention rows are stochastic after softmax (property)") {
    // Checked through the op itself: softmax rows of random scores sum to 1.
    Rng rng(67);
    for (int trial = 0; trial < 20; ++trial) {
        auto scores = Tensor::randn({5, 5}, rng, 2.0);
        auto w = softmax(scores, 1);
        for (std::int64_t i = 0; i < 5; ++i) {
            double total = 0.0;
            for (std::int64_t j = 0; j < 5; ++j) total += w->at2(i, j);
            CHECK(std::fabs(total - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("orthogonal variant keeps square weights orthogonal through training") {
    auto cfg = small_config(BaselineVariant::Orthogonal, 2, 8, 2);
    cfg.ffn_dim = 8;  // square FFN, also routed through the parametrization
    BaselineModel model(cfg, 15);
    Rng rng(68);
    Adam adam(model.params(), {1e-2, 0.9, 0.98, 1e-9});
    auto tokens = random_tokens(rng, 5, cfg.vocab_size);
    for (int step = 0; step < 30; ++step) {
        adam.zero_grad();
        auto result = model.encode(tokens);
        auto loss = cross_entropy(model.head_logits(result.layers.back()), 1);
        backward(loss);
        adam.step();
        model.invalidate_caches();
        CHECK(model.max_square_orthogonality_error() < 1e-8);
    }
}

TEST_CASE("vanilla trace has the right length and additive positions") {
    auto cfg = small_config(BaselineVariant::Vanilla, 3);
    BaselineModel model(cfg, 17);
    Rng rng(69);
    auto result = model.encode(random_tokens(rng, 7, cfg.vocab_size));
    CHECK(result.layers.size() == static_cast<std::size_t>(cfg.layers + 1));
    CHECK(result.recon_loss == nullptr);
    CHECK(result.gate_weights.empty());
}

TEST_CASE("dropout only fires in training mode") {
    auto cfg = small_config(BaselineVariant::Vanilla, 1);
    cfg.dropout = 0.5;
    BaselineModel model(cfg, 19);
    Rng rng(70);
    auto tokens = random_tokens(rng, 6, cfg.vocab_size);
    auto eval1 = model.encode(tokens);
    auto eval2 = model.encode(tokens);
    CHECK(eval1.layers.back()->data == eval2.layers.back()->data);

    Rng d1(5), d2(5), d3(6);
    auto train1 = model.encode(tokens, true, &d1);
    auto train2 = model.encode(tokens, true, &d2);
    auto train3 = model.encode(tokens, true, &d3);
    CHECK(train1.layers.back()->data == train2.layers.back()->data);  // same mask stream
    CHECK(train1.layers.back()->data != train3.layers.back()->data);
}
