#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "heima/runtime.hpp"

namespace heima {

/// 1 iff the token sequences are equal once answer markers and EOS are removed.
int exact_match(std::span<const std::string> pred, std::span<const std::string> gold);

/// BLEU-4: geometric mean of clipped 1..4-gram precisions, each zero match count
/// smoothed as (0 + 1) / (total + 1), times exp(1 - |ref| / |cand|) when |cand| < |ref|.
/// An empty candidate scores 0.
double bleu4(std::span<const std::string> cand, std::span<const std::string> ref);

/// ROUGE-L F1 over the longest common subsequence; 0 when either side is empty.
double rouge_l(std::span<const std::string> cand, std::span<const std::string> ref);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

struct TokenStats {
    double heima_mean = 0.0;
    double baseline_mean = 0.0;
    double compression_ratio = 0.0;  // baseline_mean / heima_mean
};

/// Both lists must cover the same sample ids.
TokenStats token_stats(const std::vector<InferenceResult>& heima, const std::vector<InferenceResult>& baseline);

double answer_accuracy(const std::vector<InferenceResult>& results, const std::vector<Sample>& samples);
double mean_generated_tokens(const std::vector<InferenceResult>& results);

/// Structural generated-token count of a well-formed hidden-thinking emission:
/// sum of m_k, the delimited answer and EOS.
std::size_t structural_token_count(const Sample& sample, const ThinkingTokenSpec& spec);
/// Same for a fully textual (s = 0) emission.
std::size_t structural_baseline_count(const Sample& sample);

struct DatasetEval {
    double answer_accuracy = 0.0;
    double mean_generated_tokens = 0.0;
    std::optional<double> compression_ratio;
    std::size_t samples = 0;
};

struct StageEval {
    double bleu4 = 0.0;
    double rouge_l = 0.0;
    std::optional<double> zero_bleu4;  // zero-vector ablation
    std::size_t records = 0;
};

struct EvalReport {
    std::map<std::string, DatasetEval> datasets;
    std::map<std::string, StageEval> stages;
    std::map<std::string, std::string> digests;
    std::vector<std::string> notes;

    std::string to_json() const;
    std::string to_tsv() const;
    static EvalReport from_json(std::string_view text);
};

/// curriculum rows use value 1 for progressive encoding and 0 for one-shot encoding.
enum class AblationKind { tokens_per_stage, retention_ratio, curriculum };
std::string_view to_string(AblationKind kind);
AblationKind ablation_kind_from_string(std::string_view name);

struct AblationRow {
    double value = 0.0;
    bool ok = false;
    std::string error;
    double accuracy = 0.0;
    double mean_tokens = 0.0;
    double structural_tokens = 0.0;
};

struct AblationTable {
    AblationKind kind = AblationKind::tokens_per_stage;
    std::vector<AblationRow> rows;
    std::vector<std::string> notes;

    /// Retention mode: mean tokens non-decreasing in the ratio over successful rows.
    bool monotone_tokens() const;
    std::string to_tsv() const;
    std::string to_json() const;
};

/// Runs `run` once per value; a throwing run becomes a failure row. Retention sweeps
/// that are not monotone and curriculum sweeps where progressive trails one-shot by
/// more than one point get a note.
AblationTable ablation_sweep(AblationKind kind, const std::vector<double>& values,
                             const std::function<AblationRow(double)>& run);

}  // namespace heima
