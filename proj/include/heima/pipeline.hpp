#pragma once

#include <optional>
#include <string>
#include <vector>

#include "heima/checkpoint.hpp"
#include "heima/config.hpp"
#include "heima/explainer.hpp"
#include "heima/metrics.hpp"

namespace heima {

// File-level steps of a run. Each reads and writes artifacts under the run's paths,
// so the CLI commands and in-process callers share one implementation.

struct DatasetFiles {
    std::string train_path;
    std::string test_path;
    std::string train_digest;  // file content digests
    std::string test_digest;
};

/// Writes both splits, the vocabulary and the resolved config (run.json).
DatasetFiles run_gen_data(const RunConfig& cfg);
std::vector<Sample> load_split(const RunConfig& cfg, Split split);

std::string encoder_checkpoint_dir(const RunConfig& cfg, EncoderMode mode);
std::string decoder_checkpoint_path(const RunConfig& cfg, int stage);
/// Checkpoint of the last phase in dir; missing_artifact "no checkpoint ..." when none exists.
std::string latest_checkpoint(const std::string& dir);

struct EncoderRun {
    TrainResult train;
    std::string checkpoint;
    std::string param_digest;
};
/// Trains from seed-initialised weights. Stale checkpoints of the mode are removed first.
EncoderRun run_train_encoder(const RunConfig& cfg, EncoderMode mode);
LoadedCheckpoint load_encoder(const RunConfig& cfg, EncoderMode mode);

struct InferRun {
    std::vector<InferenceResult> results;
    std::string results_path;
    std::string hidden_path;  // empty for the baseline
    std::string encoder_digest;
};
/// Greedy inference over the test split. Writes reports/inference-<mode>.jsonl and,
/// for hidden-thinking modes, hidden/test-<mode>.hsx in the configured capture mode.
InferRun run_infer(const RunConfig& cfg, EncoderMode mode);

struct InferenceFile {
    std::string encoder_digest;
    std::string run_config_digest;
    std::vector<InferenceResult> results;
};
InferenceFile read_inference(const std::string& path);

struct DecoderRun {
    std::string hidden_path;                // teacher-forced training-split export
    std::vector<std::string> record_paths;  // per stage
    std::vector<std::string> checkpoints;   // per stage
    std::vector<TrainResult> train;
};
/// Captures teacher-forced hidden states of the configured encoder on the training
/// split and trains one decoder per stage.
DecoderRun run_train_decoder(const RunConfig& cfg);

struct Explanation {
    std::int64_t sample_id = 0;
    int stage = 0;
    std::vector<std::string> gold;
    std::vector<std::string> text;
    std::vector<std::string> zero_text;  // decoded from zero vectors; empty unless ablation is on
};
/// Explains every record of the test hidden-state export; writes reports/explanations.jsonl.
std::vector<Explanation> run_explain(const RunConfig& cfg);
std::vector<Explanation> read_explanations(const std::string& path);

/// Assembles an EvalReport from the inference and explanation artifacts present;
/// writes reports/eval.json and reports/eval.tsv.
EvalReport run_eval(const RunConfig& cfg);

/// Per-value desk-scale runs in workdir/ablations; structural_only skips training and
/// reports structural token counts.
AblationTable run_ablation(const RunConfig& cfg, AblationKind kind, const std::vector<double>& values,
                           bool structural_only);

/// Everything from gen-data to eval in one call.
EvalReport run_pipeline(const RunConfig& cfg);

}  // namespace heima
