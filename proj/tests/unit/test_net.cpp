#include <doctest.h>

#include <cmath>

#include "heima/net.hpp"
#include "../support/random_sequences.hpp"
#include "../support/reference_model.hpp"

using namespace heima;
using heima::testing::random_sequence;
using heima::testing::reference_forward;

namespace {

ModelConfig tiny(int v = 50, int d = 16, int l = 1, int h = 2) {
    return ModelConfig{v, d, l, h, 4 * d, 32};
}

// Gives biases and norm parameters non-trivial values so tests exercise every path.
Params<double> perturbed(const ModelConfig& cfg, std::uint64_t seed) {
    auto p = init_params<double>(cfg, seed);
    std::mt19937_64 rng(seed + 99);
    std::normal_distribution<double> n(0.0, 0.05);
    for (auto& t : p.tensors()) {
        bool is_bias_or_norm = t.shape.size() == 1;
        for (auto& v : t.data) v += is_bias_or_norm ? n(rng) : n(rng) * 4.0;
    }
    return p;
}

}  // namespace

TEST_CASE("closed-form parameter count matches the allocated tensors") {
    ModelConfig cfg{256, 64, 2, 2, 256, 256};
    // Frozen from an independent shape-arithmetic script.
    CHECK(parameter_count(cfg) == 149248);
    CHECK(Params<float>(cfg).parameter_count() == 149248);
}

TEST_CASE("init is deterministic in the seed") {
    auto cfg = tiny();
    CHECK(init_params<float>(cfg, 3).digest() == init_params<float>(cfg, 3).digest());
    CHECK(init_params<float>(cfg, 3).digest() != init_params<float>(cfg, 4).digest());
}

TEST_CASE("init scheme: unit gains, zero biases, scaled residual projections") {
    ModelConfig cfg{40, 32, 2, 2, 64, 16};
    auto p = init_params<double>(cfg, 11);
    for (double g : p.layer(1, LayerSlot::ln2_g).data) CHECK(g == 1.0);
    for (double b : p.layer(0, LayerSlot::b_qkv).data) CHECK(b == 0.0);
    auto rms = [](const Tensor<double>& t) {
        double s = 0;
        for (double v : t.data) s += v * v;
        return std::sqrt(s / static_cast<double>(t.size()));
    };
    CHECK(rms(p.layer(0, LayerSlot::w_in)) == doctest::Approx(0.02).epsilon(0.1));
    CHECK(rms(p.layer(0, LayerSlot::w_out)) == doctest::Approx(0.02 / 2.0).epsilon(0.1));
}

TEST_CASE("degenerate weights: logits are the final normalization of the input embedding") {
    ModelConfig cfg{8, 8, 1, 1, 8, 4};
    Params<double> p(cfg);  // all zeros
    for (double& g : p.lnf_g().data) g = 1.0;
    for (int i = 0; i < 8; ++i) p.head().data[static_cast<std::size_t>(i * 8 + i)] = 1.0;

    SUBCASE("zero embedding gives uniform softmax") {
        std::vector<TokenId> ids{3};
        auto out = forward<double>(p, ids);
        for (std::size_t j = 0; j < 8; ++j) CHECK(out.logits.at(0, j) == 0.0);
    }
    SUBCASE("non-zero embedding") {
        for (int j = 0; j < 8; ++j) p.tok_emb().data[static_cast<std::size_t>(3 * 8 + j)] = 0.1 * j - 0.2;
        std::vector<TokenId> ids{3};
        auto out = forward<double>(p, ids);
        std::vector<double> e(8);
        for (int j = 0; j < 8; ++j) e[static_cast<std::size_t>(j)] = 0.1 * j - 0.2;
        auto expect = heima::testing::ref_layer_norm(e, p.lnf_g(), p.lnf_b());
        for (std::size_t j = 0; j < 8; ++j) CHECK(out.logits.at(0, j) == doctest::Approx(expect[j]).epsilon(1e-12));
    }
}

TEST_CASE("two-token single-head attention matches a hand calculation") {
    // d=2, one head. Layer norms are neutralised by giving every input row the
    // form (a, -a) so the normalised row is (1, -1)/sqrt(1 + eps/a^2).
    ModelConfig cfg{2, 2, 1, 1, 1, 2};
    Params<double> p(cfg);
    p.tok_emb().data = {1.0, -1.0, 2.0, -2.0};
    for (auto slot : {LayerSlot::ln1_g, LayerSlot::ln2_g}) p.layer(0, slot).data = {1.0, 1.0};
    p.lnf_g().data = {1.0, 1.0};
    // q = k = first coordinate of the normalised input; v = identity.
    auto& wqkv = p.layer(0, LayerSlot::w_qkv).data;  // [2 x 6]
    wqkv.assign(12, 0.0);
    wqkv[0 * 6 + 0] = 1.0;          // q0 <- a0
    wqkv[0 * 6 + 2] = 1.0;          // k0 <- a0
    wqkv[0 * 6 + 4] = 1.0;          // v0 <- a0
    wqkv[1 * 6 + 5] = 1.0;          // v1 <- a1
    p.layer(0, LayerSlot::w_o).data = {1.0, 0.0, 0.0, 1.0};
    p.head().data = {1.0, 0.0, 0.0, 1.0};

    std::vector<TokenId> ids{0, 1};
    auto out = forward<double>(p, ids);

    // Hand calculation. Normalised token rows: r0 = (1,-1)/sqrt(1+1e-5), r1 = (1,-1)/sqrt(1+1e-5/4).
    const double n0 = 1.0 / std::sqrt(1.0 + 1e-5), n1 = 1.0 / std::sqrt(1.0 + 1e-5 / 4.0);
    // Position 1 attends to both: scores q1*k_j / sqrt(2) with q1 = n1, k0 = n0, k1 = n1.
    const double s0 = n1 * n0 / std::sqrt(2.0), s1 = n1 * n1 / std::sqrt(2.0);
    const double p0 = std::exp(s0) / (std::exp(s0) + std::exp(s1)), p1 = 1.0 - p0;
    const double a = p0 * n0 + p1 * n1;  // attention output is (a, -a)
    // Residual: x1 = (2 + a, -2 - a); the feed-forward block is zero (w_in = w_out = 0).
    const double x = 2.0 + a;
    // Final norm of (x, -x): (x, -x) / sqrt(x^2 + eps).
    const double h = x / std::sqrt(x * x + 1e-5);
    CHECK(out.logits.at(1, 0) == doctest::Approx(h).epsilon(1e-12));
    CHECK(out.logits.at(1, 1) == doctest::Approx(-h).epsilon(1e-12));
    // Position 0 only sees itself: x0 = (1 + n0, -1 - n0).
    const double x0 = 1.0 + n0;
    CHECK(out.logits.at(0, 0) == doctest::Approx(x0 / std::sqrt(x0 * x0 + 1e-5)).epsilon(1e-12));
}

TEST_CASE("forward agrees with an independent scalar implementation") {
    ModelConfig cfg{30, 16, 2, 4, 32, 24};
    auto p = perturbed(cfg, 5);
    auto seq = random_sequence(30, 17, 8);
    auto out = forward<double>(p, seq.ids);
    auto ref = reference_forward(p, seq.ids);
    for (std::size_t t = 0; t < seq.ids.size(); ++t) {
        for (std::size_t j = 0; j < 30; ++j) CHECK(out.logits.at(t, j) == doctest::Approx(ref.logits[t][j]).epsilon(1e-10));
        for (std::size_t j = 0; j < 16; ++j)
            CHECK(out.final_hidden.at(t, j) == doctest::Approx(ref.hidden[t][j]).epsilon(1e-10));
    }
}

TEST_CASE("causality: appending tokens leaves earlier rows bit-identical") {
    auto cfg = tiny(40, 32, 2, 4);
    auto p = init_params<float>(cfg, 1);
    auto seq = random_sequence(40, 20, 2);
    std::vector<TokenId> prefix(seq.ids.begin(), seq.ids.begin() + 9);
    auto full = forward<float>(p, seq.ids);
    auto part = forward<float>(p, prefix);
    for (std::size_t t = 0; t < prefix.size(); ++t)
        for (std::size_t j = 0; j < 40; ++j) REQUIRE(full.logits.at(t, j) == part.logits.at(t, j));
}

TEST_CASE("softmax rows are normalized") {
    auto cfg = tiny();
    auto p = init_params<float>(cfg, 1);
    auto seq = random_sequence(50, 12, 3);
    auto out = forward<float>(p, seq.ids);
    for (std::size_t t = 0; t < seq.ids.size(); ++t) {
        double mx = -1e30;
        for (std::size_t j = 0; j < 50; ++j) mx = std::max(mx, static_cast<double>(out.logits.at(t, j)));
        double z = 0;
        for (std::size_t j = 0; j < 50; ++j) z += std::exp(out.logits.at(t, j) - mx);
        double total = 0;
        for (std::size_t j = 0; j < 50; ++j) total += std::exp(out.logits.at(t, j) - mx) / z;
        CHECK(std::abs(total - 1.0) < 1e-6);
    }
}

TEST_CASE("embedding overrides") {
    auto cfg = tiny(40, 16, 2, 2);
    auto p = init_params<float>(cfg, 9);
    auto seq = random_sequence(40, 10, 4);
    auto base = forward<float>(p, seq.ids);

    SUBCASE("identity override reproduces the plain run") {
        const std::size_t j = 4;
        auto id = static_cast<std::size_t>(seq.ids[j]);
        std::vector<float> own(p.tok_emb().data.begin() + static_cast<std::ptrdiff_t>(id * 16),
                               p.tok_emb().data.begin() + static_cast<std::ptrdiff_t>(id * 16 + 16));
        std::vector<EmbeddingOverride<float>> ov{{j, own}};
        auto out = forward<float>(p, seq.ids, ov);
        CHECK(out.logits.data == base.logits.data);
    }
    SUBCASE("override only affects later positions") {
        const std::size_t j = 6;
        std::vector<EmbeddingOverride<float>> ov{{j, std::vector<float>(16, 0.5f)}};
        auto out = forward<float>(p, seq.ids, ov);
        for (std::size_t t = 0; t < seq.ids.size(); ++t) {
            bool same = std::equal(out.final_hidden.row(t), out.final_hidden.row(t) + 16, base.final_hidden.row(t));
            CHECK(same == (t < j));
        }
    }
    SUBCASE("bad overrides are rejected") {
        std::vector<EmbeddingOverride<float>> far{{10, std::vector<float>(16, 0.f)}};
        CHECK_THROWS_AS(forward<float>(p, seq.ids, far), Error);
        std::vector<EmbeddingOverride<float>> narrow{{2, std::vector<float>(15, 0.f)}};
        CHECK_THROWS_AS(forward<float>(p, seq.ids, narrow), Error);
    }
    SUBCASE("override matches the reference implementation") {
        auto pd = p.cast<double>();
        std::vector<EmbeddingOverride<double>> ov{{3, std::vector<double>(16, -0.25)}};
        auto out = forward<double>(pd, seq.ids, ov);
        auto ref = reference_forward(pd, seq.ids, ov);
        for (std::size_t t = 0; t < seq.ids.size(); ++t)
            for (std::size_t k = 0; k < 40; ++k) CHECK(out.logits.at(t, k) == doctest::Approx(ref.logits[t][k]).epsilon(1e-10));
    }
}

TEST_CASE("sequence longer than max_len is rejected") {
    auto cfg = tiny();
    auto p = init_params<float>(cfg, 1);
    std::vector<TokenId> ids(33, 1);
    CHECK_THROWS_AS(forward<float>(p, ids), Error);
}

TEST_CASE("nll loss") {
    SUBCASE("uniform logits give ln(V)") {
        auto cfg = tiny();
        auto p = init_params<double>(cfg, 1);
        p.head().data.assign(p.head().data.size(), 0.0);
        auto seq = random_sequence(50, 10, 5);
        CHECK(nll_loss<double>(p, seq) == doctest::Approx(std::log(50.0)).epsilon(1e-12));
    }
    SUBCASE("single target matches brute-force log-sum-exp") {
        auto cfg = tiny(20, 8, 1, 2);
        auto p = perturbed(cfg, 3);
        MaskedSequence seq;
        seq.ids = {1, 7, 4, 9};
        seq.loss_mask = {0, 0, 1, 0};
        auto ref = reference_forward(p, seq.ids);
        CHECK(nll_loss<double>(p, seq) == doctest::Approx(heima::testing::reference_masked_nll(ref.logits, seq)).epsilon(1e-12));
    }
    SUBCASE("appending non-target tokens leaves the loss unchanged") {
        auto cfg = tiny();
        auto p = init_params<float>(cfg, 2);
        auto seq = random_sequence(50, 12, 6);
        double before = nll_loss<float>(p, seq);
        seq.ids.insert(seq.ids.end(), {3, 4, 5});
        seq.loss_mask.insert(seq.loss_mask.end(), {0, 0, 0});
        CHECK(nll_loss<float>(p, seq) == before);
    }
    SUBCASE("empty mask is rejected") {
        auto cfg = tiny();
        auto p = init_params<float>(cfg, 2);
        auto seq = random_sequence(50, 12, 6);
        seq.loss_mask.assign(seq.loss_mask.size(), 0);
        CHECK_THROWS_AS(nll_loss<float>(p, seq), Error);
        CHECK_THROWS_AS(nll_loss_and_grads<float>(p, seq), Error);
    }
    SUBCASE("non-finite activations report the layer") {
        auto cfg = tiny();
        auto p = init_params<float>(cfg, 2);
        p.layer(0, LayerSlot::b_out).data[0] = std::numeric_limits<float>::infinity();
        auto seq = random_sequence(50, 12, 6);
        try {
            (void)nll_loss<float>(p, seq);
            FAIL("expected a numeric error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::numeric);
            CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
        }
    }
}

TEST_CASE("gradient check") {
    auto cfg = tiny(50, 16, 1, 2);
    auto p = perturbed(cfg, 21);
    auto seq = random_sequence(50, 14, 22);

    SUBCASE("finite differences agree at eps=1e-4") {
        auto report = grad_check(p, seq, 1e-4);
        INFO("max rel error " << report.max_rel_error);
        CHECK(report.max_rel_error < 1e-4);
        REQUIRE(report.groups.size() == p.tensors().size());
        for (std::size_t i = 0; i < report.groups.size(); ++i)
            CHECK(report.groups[i].coordinates == std::min<std::size_t>(200, p.tensors()[i].size()));
    }
    SUBCASE("error shrinks as eps shrinks") {
        auto coarse = grad_check(p, seq, 1e-2);
        auto fine = grad_check(p, seq, 1e-4);
        CHECK(fine.max_rel_error < coarse.max_rel_error);
    }
    SUBCASE("zero-masked sequence is rejected") {
        seq.loss_mask.assign(seq.loss_mask.size(), 0);
        CHECK_THROWS_AS(grad_check(p, seq, 1e-4), Error);
    }
    SUBCASE("overridden positions do not feed the token embedding gradient") {
        std::vector<EmbeddingOverride<double>> ov{{5, std::vector<double>(16, 0.3)}};
        auto with = nll_loss_and_grads<double>(p, seq, ov);
        auto id = static_cast<std::size_t>(seq.ids[5]);
        bool appears_elsewhere = false;
        for (std::size_t t = 0; t < seq.ids.size(); ++t)
            if (t != 5 && seq.ids[t] == seq.ids[5]) appears_elsewhere = true;
        if (!appears_elsewhere)
            for (std::size_t j = 0; j < 16; ++j) CHECK(with.grads.tok_emb().data[id * 16 + j] == 0.0);
    }
}

TEST_CASE("incremental decoding reproduces forward rows bitwise") {
    ModelConfig cfg{40, 32, 2, 4, 64, 24};
    auto p = init_params<float>(cfg, 12);
    auto seq = random_sequence(40, 15, 13);
    std::vector<float> vec(32);
    for (std::size_t j = 0; j < 32; ++j) vec[j] = 0.01f * static_cast<float>(j) - 0.1f;
    std::vector<EmbeddingOverride<float>> ov{{4, vec}};
    auto full = forward<float>(p, seq.ids, ov);

    DecodeState<float> state(p);
    for (std::size_t t = 0; t < seq.ids.size(); ++t) {
        state.push(seq.ids[t], t == 4 ? std::span<const float>(vec) : std::span<const float>{});
        CHECK(state.length() == t + 1);
        CHECK(std::equal(state.logits().begin(), state.logits().end(), full.logits.row(t)));
        CHECK(std::equal(state.hidden().begin(), state.hidden().end(), full.final_hidden.row(t)));
    }
    for (std::size_t t = seq.ids.size(); t < 24; ++t) state.push(1);
    CHECK_THROWS_AS(state.push(1), Error);
    DecodeState<float> other(p);
    CHECK_THROWS_AS(other.push(40), Error);
}
