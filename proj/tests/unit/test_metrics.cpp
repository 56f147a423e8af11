#include <doctest.h>

#include <random>

#include "heima/metrics.hpp"
#include "../support/metric_fixtures.hpp"

using namespace heima;
using heima::testing::fixed10;

namespace {

std::vector<std::string> w(const char* text) { return split_words(text); }

InferenceResult result(std::int64_t id, std::size_t count) {
    InferenceResult r;
    r.sample_id = id;
    r.generated_token_count = count;
    return r;
}

}  // namespace

TEST_CASE("exact match") {
    CHECK(exact_match(w("2"), w("2")) == 1);
    CHECK(exact_match(w("2"), w("3")) == 0);
    CHECK(exact_match(w(""), w("2")) == 0);
    CHECK(exact_match(w("<ANSWER> yes </ANSWER> <EOS>"), w("yes")) == 1);
}

TEST_CASE("bleu4 and rouge-l basics") {
    CHECK(bleu4(w("a b c d"), w("a b c d")) == 1.0);
    CHECK(bleu4(w(""), w("a b c d")) == 0.0);
    CHECK(rouge_l(w("a b c"), w("a b c")) == 1.0);
    CHECK(rouge_l(w("a b c"), w("d e f")) == 0.0);
    CHECK(rouge_l(w("a b c"), w("a x c")) == doctest::Approx(2.0 / 3.0));
    CHECK(lcs_length(w("a b c"), w("a x c")) == 2);
}

TEST_CASE("golden fixture table") {
    auto pairs = heima::testing::load_metric_fixtures(HEIMA_FIXTURE_DIR "/metric_golden.tsv");
    REQUIRE(pairs.size() >= 20);
    for (const auto& p : pairs) {
        INFO(join_words(p.candidate) << " | " << join_words(p.reference));
        CHECK(fixed10(bleu4(p.candidate, p.reference)) == p.bleu4);
        CHECK(fixed10(rouge_l(p.candidate, p.reference)) == p.rouge_l);
    }
}

TEST_CASE("metric bounds on fuzzed inputs") {
    std::mt19937 rng(3);
    std::vector<std::string> alphabet{"a", "b", "c", "d", "e"};
    for (int t = 0; t < 500; ++t) {
        std::vector<std::string> a, b;
        auto la = rng() % 12, lb = rng() % 12;
        for (unsigned i = 0; i < la; ++i) a.push_back(alphabet[rng() % 5]);
        for (unsigned i = 0; i < lb; ++i) b.push_back(alphabet[rng() % 5]);
        double s = bleu4(a, b), r = rouge_l(a, b);
        CHECK(s >= 0.0);
        CHECK(s <= 1.0 + 1e-12);
        CHECK(r >= 0.0);
        CHECK(r <= 1.0 + 1e-12);
    }
}

TEST_CASE("bleu does not decrease while a prefix grows toward the reference") {
    auto ref = w("the grid contains 3 objects : r1c1 red_circle r2c2 blue_star r4c4 green_square .");
    double prev = 0.0;
    for (std::size_t n = 1; n <= ref.size(); ++n) {
        std::vector<std::string> cand(ref.begin(), ref.begin() + static_cast<std::ptrdiff_t>(n));
        double s = bleu4(cand, ref);
        CHECK(s >= prev);
        prev = s;
    }
    CHECK(prev == 1.0);
}

TEST_CASE("token stats") {
    std::vector<InferenceResult> a{result(1, 10), result(2, 20)};
    auto same = token_stats(a, a);
    CHECK(same.compression_ratio == 1.0);
    std::vector<InferenceResult> h{result(1, 15), result(2, 15)}, b{result(2, 150), result(1, 150)};
    auto s = token_stats(h, b);
    CHECK(s.heima_mean == 15.0);
    CHECK(s.baseline_mean == 150.0);
    CHECK(s.compression_ratio == doctest::Approx(10.0));
    CHECK_THROWS_AS(token_stats({}, {}), Error);
    std::vector<InferenceResult> other{result(3, 1), result(2, 1)};
    CHECK_THROWS_AS(token_stats(h, other), Error);
}

TEST_CASE("structural counts") {
    auto sample = gen_sample(GenConfig{}, 1);
    ThinkingTokenSpec spec;
    CHECK(structural_token_count(sample, spec) == 3 + sample.answer.size() + 3);
    spec.tokens_per_stage = 4;
    CHECK(structural_token_count(sample, spec) == 12 + sample.answer.size() + 3);
    CHECK(structural_baseline_count(sample) == sample.cot_length() + 6 + sample.answer.size() + 3);
}

TEST_CASE("eval report serialization") {
    EvalReport r;
    r.datasets["test"] = {0.5, 7.0, 12.5, 100};
    r.stages["Caption"] = {0.7, 0.9, 0.2, 200};
    r.stages["Summary"] = {0.8, 0.95, std::nullopt, 200};
    r.digests["encoder"] = "abc";
    r.notes.push_back("note");
    auto back = EvalReport::from_json(r.to_json());
    CHECK(back.to_json() == r.to_json());
    CHECK(back.stages["Summary"].zero_bleu4 == std::nullopt);
    auto tsv = r.to_tsv();
    CHECK(tsv.find("dataset\ttest\tcompression_ratio\t12.500000") != std::string::npos);
    CHECK(tsv.find("stage\tCaption\tzero_bleu4\t0.200000") != std::string::npos);
}

TEST_CASE("ablation sweep") {
    SUBCASE("single value gives one row") {
        auto t = ablation_sweep(AblationKind::tokens_per_stage, {1}, [](double) {
            return AblationRow{0, true, "", 1.0, 7.0, 7.0};
        });
        REQUIRE(t.rows.size() == 1);
        CHECK(t.rows[0].ok);
    }
    SUBCASE("failing runs become failure rows") {
        auto t = ablation_sweep(AblationKind::retention_ratio, {0.1, 0.5, 0.9}, [](double v) {
            if (v == 0.5) throw Error(ErrorCode::numeric, "boom");
            return AblationRow{v, true, "", 0.5, 10 * v, 10 * v};
        });
        REQUIRE(t.rows.size() == 3);
        CHECK_FALSE(t.rows[1].ok);
        CHECK(t.rows[1].error == "boom");
        CHECK(t.monotone_tokens());
        CHECK(t.to_tsv().find("FAILED: boom") != std::string::npos);
    }
    SUBCASE("non-monotone retention is flagged") {
        auto t = ablation_sweep(AblationKind::retention_ratio, {0.1, 0.5}, [](double v) {
            return AblationRow{v, true, "", 0.5, v == 0.1 ? 9.0 : 8.0, 0};
        });
        CHECK_FALSE(t.monotone_tokens());
        CHECK_FALSE(t.notes.empty());
    }
    CHECK_THROWS_AS(ablation_sweep(AblationKind::retention_ratio, {}, [](double) { return AblationRow{}; }), Error);
}

TEST_CASE("structural retention counts increase with the ratio") {
    auto samples = gen_samples(GenConfig{}, 200, Split::test);
    double prev = 0.0;
    for (double ratio : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        ThinkingTokenSpec spec;
        spec.mode = ThinkingMode::retention_ratio;
        spec.ratio = ratio;
        double mean = 0;
        for (const auto& s : samples) mean += static_cast<double>(structural_token_count(s, spec));
        mean /= 200.0;
        CHECK(mean > prev);
        prev = mean;
    }
}
