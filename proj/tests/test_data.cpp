#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "oracles.h"
#include "tj/data.h"
#include "tj/tensor.h"

using namespace tj;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& contents) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path, std::ios::binary);
    out << contents;
    return path;
}

}  // namespace

TEST_CASE("listops expressions evaluate like the recursive oracle") {
    CHECK(oracle::eval_listops("[MAX 2 4 7]") == 7);
    CHECK(oracle::eval_listops("[MIN 1 [MAX 2 3]]") == 1);
    CHECK(oracle::eval_listops("[MED 1 9 5]") == 5);
    CHECK(oracle::eval_listops("[SM 7 8 9]") == 4);
}

TEST_CASE("generator labels always match the independent evaluator") {
    const auto examples = gen_listops(10000, 3, 80, 123);
    CHECK(examples.size() == 10000);
    for (const auto& ex : examples) {
        CHECK(oracle::eval_listops(ex.expression) == ex.label);
        CHECK(ex.label >= 0);
        CHECK(ex.label <= 9);
    }
}

TEST_CASE("generation is deterministic per seed and respects max_len") {
    const auto a = gen_listops(500, 2, 48, 7);
    const auto b = gen_listops(500, 2, 48, 7);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].expression == b[i].expression);
        CHECK(a[i].label == b[i].label);
    }
    const auto c = gen_listops(500, 2, 48, 8);
    bool any_diff = false;
    for (std::size_t i = 0; i < c.size(); ++i) {
        any_diff = any_diff || c[i].expression != a[i].expression;
    }
    CHECK(any_diff);
    const auto vocab = listops_vocabulary();
    for (const auto& ex : a) {
        CHECK(tokenize_listops(ex.expression).size() <= 48);
    }
}

TEST_CASE("listops tokenization splits brackets and symbols") {
    const auto tokens = tokenize_listops("[MAX 2 4 [MIN 1 3]]");
    const std::vector<std::string> want = {"[", "MAX", "2", "4", "[", "MIN", "1", "3", "]", "]"};
    CHECK(tokens == want);

    const auto vocab = listops_vocabulary();
    for (const auto& t : tokens) {
        CHECK(vocab.contains(t));
        CHECK(vocab.id(t) >= 2);  // content ids start after pad/unk
    }
}

TEST_CASE("listops tsv round trip") {
    const auto examples = gen_listops(50, 2, 64, 9);
    const auto path = temp_file("tj_listops.tsv", "");
    write_listops_tsv(path.string(), examples);
    const auto back = read_listops_tsv(path.string());
    REQUIRE(back.size() == examples.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].expression == examples[i].expression);
        CHECK(back[i].label == examples[i].label);
    }
    std::filesystem::remove(path);
}

TEST_CASE("vocabulary ids are stable, sorted and reserved") {
    auto v1 = Vocabulary::from_symbols({"c", "a", "b", "a"});
    auto v2 = Vocabulary::from_symbols({"b", "a", "c"});
    CHECK(v1.size() == 5);  // pad, unk, a, b, c
    for (const auto& s : {"a", "b", "c"}) {
        CHECK(v1.id(s) == v2.id(s));
    }
    CHECK(v1.id("a") == 2);
    CHECK(v1.id("b") == 3);
    CHECK(v1.id("zzz") == Vocabulary::kUnk);
    CHECK(v1.symbol(Vocabulary::kPad) == "<pad>");
}

TEST_CASE("char classification loads labels and texts") {
    const auto path = temp_file("tj_cls.tsv", "1\tgood\n0\tbad\n2\tgreat\n");
    auto ds = load_char_classification(path.string());
    REQUIRE(ds.examples.size() == 3);
    CHECK(ds.num_classes == 3);
    CHECK(ds.examples[0].label == 1);
    CHECK(ds.examples[0].tokens.size() == 4);  // g o o d
    CHECK(ds.examples[0].tokens[1] == ds.examples[0].tokens[2]);

    // Round trip for in-vocabulary text.
    const std::string s = "goodbad";
    CHECK(detokenize_chars(tokenize_chars(s, ds.vocab), ds.vocab) == s);
    std::filesystem::remove(path);
}

TEST_CASE("malformed classification lines carry their line number") {
    const auto p1 = temp_file("tj_bad1.tsv", "1\tok\n2\n");
    CHECK_THROWS_WITH_AS(load_char_classification(p1.string()), doctest::Contains("line 2"),
                         ParseError);
    const auto p2 = temp_file("tj_bad2.tsv", "1\t\n");
    CHECK_THROWS_AS(load_char_classification(p2.string()), ParseError);
    const auto p3 = temp_file("tj_bad3.tsv", "x\ttext\n");
    CHECK_THROWS_AS(load_char_classification(p3.string()), ParseError);
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
    std::filesystem::remove(p3);
}

TEST_CASE("unknown characters map to unk with a shared vocabulary") {
    const auto train = temp_file("tj_train.tsv", "0\tabc\n1\tcba\n");
    auto ds = load_char_classification(train.string());
    const auto test = temp_file("tj_test.tsv", "0\tabz\n");
    auto examples = load_char_classification_with_vocab(test.string(), ds.vocab, ds.num_classes);
    REQUIRE(examples.size() == 1);
    CHECK(examples[0].tokens[2] == Vocabulary::kUnk);
    std::filesystem::remove(train);
    std::filesystem::remove(test);
}

TEST_CASE("lm windows consume window+1 tokens without overlap") {
    std::vector<std::int64_t> stream(71);
    for (std::size_t i = 0; i < stream.size(); ++i) stream[i] = static_cast<std::int64_t>(i);
    const auto windows = build_lm_windows(stream, 35);
    REQUIRE(windows.size() == 1);  // the second incomplete window is dropped
    CHECK(windows[0].tokens.size() == 35);
    CHECK(windows[0].targets.size() == 35);
    for (std::size_t i = 0; i < 35; ++i) {
        CHECK(windows[0].targets[i] == windows[0].tokens[i] + 1);
    }

    std::vector<std::int64_t> of72(72);
    for (std::size_t i = 0; i < of72.size(); ++i) of72[i] = static_cast<std::int64_t>(i);
    CHECK(build_lm_windows(of72, 35).size() == 2);

    std::vector<std::int64_t> too_short(35, 1);
    CHECK_THROWS_AS(build_lm_windows(too_short, 35), DataError);
}

TEST_CASE("a uniform predictor has perplexity V on any window") {
    const std::int64_t v = 11;
    std::vector<std::int64_t> targets = {1, 5, 7, 2, 9};
    auto logits = Tensor::zeros({5, v});
    const double ce = cross_entropy_rows(logits, targets)->item();
    CHECK(std::exp(ce) == doctest::Approx(static_cast<double>(v)).epsilon(1e-9));
}

TEST_CASE("batchify pads to the batch max and emits masks") {
    std::vector<Example> examples;
    Example a;
    a.tokens = {2, 3, 4};
    a.label = 0;
    Example b;
    b.tokens = {5, 6, 7, 8, 9};
    b.label = 1;
    examples.push_back(a);
    examples.push_back(b);

    auto batches = batchify(examples, 2);
    REQUIRE(batches.size() == 1);
    const auto& batch = batches[0];
    CHECK(batch.tokens[0].size() == 5);
    CHECK(batch.tokens[0][3] == Vocabulary::kPad);
    std::size_t zeros = 0;
    for (double m : batch.mask[0]) zeros += m == 0.0 ? 1 : 0;
    CHECK(zeros == 2);

    // Equal lengths: no padding at all.
    auto same = batchify({b, b}, 2);
    for (double m : same[0].mask[0]) CHECK(m == 1.0);
}

TEST_CASE("masked mean pooling equals the per-example oracle") {
    Rng rng(101);
    std::vector<Example> examples;
    for (int i = 0; i < 3; ++i) {
        Example ex;
        const auto len = 2 + rng.uniform_int(4);
        for (std::size_t t = 0; t < len; ++t) {
            ex.tokens.push_back(static_cast<std::int64_t>(rng.uniform_int(10)));
        }
        examples.push_back(ex);
    }
    auto batches = batchify(examples, 3);
    const auto& batch = batches[0];
    const auto width = static_cast<std::int64_t>(batch.tokens[0].size());

    // Fake per-token features: feature = token id, two columns.
    for (std::size_t s = 0; s < examples.size(); ++s) {
        std::vector<double> feats;
        for (std::int64_t t = 0; t < width; ++t) {
            feats.push_back(static_cast<double>(batch.tokens[s][static_cast<std::size_t>(t)]));
            feats.push_back(2.0 * static_cast<double>(batch.tokens[s][static_cast<std::size_t>(t)]));
        }
        auto x = Tensor::create({width, 2}, std::move(feats));
        auto pooled = mean_pool_rows(x, &batch.mask[s]);

        double want = 0.0;
        for (auto id : examples[s].tokens) want += static_cast<double>(id);
        want /= static_cast<double>(examples[s].tokens.size());
        CHECK(pooled->data[0] == doctest::Approx(want));
        CHECK(pooled->data[1] == doctest::Approx(2.0 * want));
    }
}
