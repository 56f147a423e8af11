#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "heima/curriculum.hpp"
#include "heima/runtime.hpp"
#include "heima/trainer.hpp"

namespace heima {

inline constexpr std::string_view kRunConfigSchema = "heima.run.v1";

enum class EncoderMode { progressive, one_shot, baseline };
std::string_view to_string(EncoderMode mode);
EncoderMode encoder_mode_from_string(std::string_view name);

struct RunPaths {
    std::string workdir;
    std::string train_data;
    std::string test_data;
    std::string vocab;
    std::string checkpoints;
    std::string hidden;
    std::string reports;
};

struct DecoderTraining {
    int steps = 0;  // 0: one pass over the records
    double lr = 5e-4;
    int batch_size = 8;
};

/// Resolved run configuration. Optimizer, schedule and batch defaults follow the
/// reference progressive-encoding and decoder hyperparameters.
struct RunConfig {
    RunPaths paths;  // absolute after resolution
    std::uint64_t seed = 0;
    int threads = 1;
    std::string precision = "float32";
    GenConfig gen;
    std::size_t train_size = 0;
    std::size_t test_size = 0;
    ModelConfig encoder;  // vocab_size is filled from the vocabulary
    ModelConfig decoder;
    ThinkingTokenSpec thinking;
    EncoderMode mode = EncoderMode::progressive;
    PlanConfig plan;
    OptimConfig optim;
    DecoderTraining decoder_training;
    std::string explanatory_template;
    std::size_t explain_max_new = 64;
    CaptureMode capture = CaptureMode::teacher_forced;
    bool zero_ablation = true;

    /// Canonical JSON (keys sorted, paths as resolved).
    std::string to_json() const;
    /// Digest over the canonical JSON without paths and threads, which do not affect results.
    std::string digest() const;
};

/// Parses a config document, applies "dotted.key=value" overrides and validates.
/// Every missing, unknown or mistyped field is reported in a single config error.
/// Relative paths resolve against paths.workdir; a relative workdir resolves
/// against $HEIMA_ROOT when set, else the current directory.
RunConfig parse_run_config(std::string_view json_text, const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {});

/// Default document with null placeholders for the required fields.
std::string run_config_template();

/// Task vocabulary (including the explanatory-template words) plus one thinking token per stage.
Vocab run_vocab(const RunConfig& cfg);

StagePlan run_stage_plan(const RunConfig& cfg, EncoderMode mode, std::size_t dataset_size);

}  // namespace heima
