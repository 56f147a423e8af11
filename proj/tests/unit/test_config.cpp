#include <doctest.h>

#include <cstdlib>

#include "heima/config.hpp"
#include "heima/explainer.hpp"

using namespace heima;

namespace {

const char* kMinimal = R"({
  "schema": "heima.run.v1", "seed": 3,
  "paths": {"workdir": "/tmp/heima-config-test"},
  "data": {"train_size": 10, "test_size": 5},
  "encoder": {"d_model": 32, "n_layers": 2, "n_heads": 2, "d_ff": 64, "max_len": 128},
  "decoder": {"d_model": 32, "n_layers": 1, "n_heads": 2, "d_ff": 64, "max_len": 96}
})";

}  // namespace

TEST_CASE("optimizer and schedule defaults match the reference hyperparameters") {
    auto c = parse_run_config(kMinimal);
    CHECK(c.optim.weight_decay == 0.01);
    CHECK(c.optim.warmup == 100);
    CHECK(c.optim.clip_norm == 1.0);
    CHECK(c.optim.beta1 == 0.9);
    CHECK(c.optim.beta2 == 0.999);
    CHECK(c.plan.encode_lr == 1e-4);
    CHECK(c.plan.recover_lr == 1e-5);
    CHECK(c.plan.encode_batch == 6);
    CHECK(c.plan.recover_batch == 8);
    CHECK(c.decoder_training.lr == 5e-4);
    CHECK(c.decoder_training.batch_size == 8);
    CHECK(c.mode == EncoderMode::progressive);
    CHECK(c.capture == CaptureMode::teacher_forced);
    CHECK(c.threads == 1);
    CHECK(c.explanatory_template == kDefaultExplanatoryTemplate);
    CHECK(c.paths.train_data == "/tmp/heima-config-test/data/train.jsonl");
    CHECK(c.gen.seed == 3);
}

TEST_CASE("all config problems are reported in one error") {
    try {
        parse_run_config(R"({"schema": "heima.run.v1", "encoder": {"d_model": 1.5}, "typo": true})");
        FAIL("expected a config error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::config);
        std::string msg = e.what();
        CHECK(msg.find('\n') == std::string::npos);
        for (const char* f : {"seed", "paths.workdir", "data.train_size", "data.test_size", "encoder.n_layers",
                              "decoder.d_model", "decoder.max_len", "typo", "encoder.d_model (expected integer)"})
            CHECK_MESSAGE(msg.find(f) != std::string::npos, f);
    }
    CHECK_THROWS_WITH_AS(parse_run_config("{not json"), doctest::Contains("not valid JSON"), Error);
    CHECK_THROWS_WITH_AS(parse_run_config(kMinimal, {"decoder.d_model=16"}), doctest::Contains("d_model"), Error);
    CHECK_THROWS_WITH_AS(parse_run_config(kMinimal, {"plan.mode=sideways"}), doctest::Contains("sideways"), Error);
    CHECK_THROWS_WITH_AS(parse_run_config(kMinimal, {"novalue"}), doctest::Contains("key=value"), Error);
}

TEST_CASE("overrides") {
    auto c = parse_run_config(kMinimal, {"plan.encode_lr=0.003", "thinking.mode=retention", "thinking.ratio=0.5",
                                         "plan.mode=one-shot", "explain.capture=generated"});
    CHECK(c.plan.encode_lr == 0.003);
    CHECK(c.thinking.mode == ThinkingMode::retention_ratio);
    CHECK(c.thinking.ratio == 0.5);
    CHECK(c.mode == EncoderMode::one_shot);
    CHECK(c.capture == CaptureMode::generated);
    CHECK_THROWS_WITH_AS(parse_run_config(kMinimal, {"plan.nope=1"}), doctest::Contains("unknown fields: plan.nope"),
                         Error);
}

TEST_CASE("config digest") {
    auto a = parse_run_config(kMinimal);
    CHECK(a.digest() == parse_run_config(kMinimal).digest());
    CHECK(a.digest() == parse_run_config(kMinimal, {"threads=4", "paths.workdir=/elsewhere"}).digest());
    CHECK(a.digest() != parse_run_config(kMinimal, {"seed=4"}).digest());
    CHECK(a.digest() != parse_run_config(kMinimal, {"optim.warmup=5"}).digest());
    auto round = parse_run_config(a.to_json());
    CHECK(round.digest() == a.digest());
    CHECK(round.paths.reports == a.paths.reports);
}

TEST_CASE("relative workdir resolves against HEIMA_ROOT") {
    ::setenv("HEIMA_ROOT", "/data/root", 1);
    auto c = parse_run_config(kMinimal, {"paths.workdir=runs/a", "paths.hidden=/abs/hidden"});
    ::unsetenv("HEIMA_ROOT");
    CHECK(c.paths.workdir == "/data/root/runs/a");
    CHECK(c.paths.checkpoints == "/data/root/runs/a/checkpoints");
    CHECK(c.paths.hidden == "/abs/hidden");
}

TEST_CASE("run vocabulary and stage plans") {
    auto c = parse_run_config(kMinimal);
    auto v = run_vocab(c);
    for (const auto& w : template_words()) CHECK(v.contains(w));
    CHECK(v.thinking_ids().size() == 3);

    auto progressive = run_stage_plan(c, EncoderMode::progressive, 60);
    auto oneshot = run_stage_plan(c, EncoderMode::one_shot, 60);
    auto baseline = run_stage_plan(c, EncoderMode::baseline, 60);
    CHECK(progressive.phases.size() == 5);
    CHECK(oneshot.phases.size() == 2);
    REQUIRE(baseline.phases.size() == 1);
    CHECK(baseline.phases[0].s == 0);
    CHECK(baseline.total_steps() == progressive.total_steps());
    CHECK(oneshot.total_steps() == progressive.total_steps());
}
