#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "heima/sequence.hpp"
#include "heima/taskgen.hpp"
#include "heima/vocab.hpp"

namespace heima {

/// Length of each stage as it appears in the textual layout: open marker, text, close marker.
std::vector<std::size_t> stage_span_lengths(const Sample& sample);

/// m_k = max(1, round(ratio * length_k)), rounding half away from zero.
std::vector<int> retention_counts(std::span<const std::size_t> lengths, double ratio);

/// Retention counts over the sample's stage spans (stage_span_lengths).
std::vector<int> retention_counts(const Sample& sample, double ratio);

/// Thinking tokens per stage for a sample (fixed m or retention ratio).
std::vector<int> thinking_counts(const Sample& sample, const ThinkingTokenSpec& spec);

/// [BOS][visual][question]: the encoder's inference prompt.
std::vector<TokenId> encoder_prompt(const Sample& sample, const Vocab& vocab);

/// Stage-s training sequence. Stages k < s (zero-based) become m_k thinking ids; the
/// rest stay textual between their markers; then the delimited answer and EOS.
/// max_len = 0 disables the length check.
MaskedSequence assemble_sequence(const Sample& sample, int s, const ThinkingTokenSpec& spec, const Vocab& vocab,
                                 std::size_t max_len = 0);

struct Phase {
    std::string name;  // "stage-<s>" or "recover"
    int s = 0;
    bool recovering = false;
    int steps = 0;
    double peak_lr = 0.0;
    int batch_size = 1;
};

struct PlanConfig {
    int stages = 3;        // K
    int total_steps = 0;   // 0: one pass over the data per phase
    std::vector<int> phase_steps;  // explicit per-phase steps; overrides total_steps
    double encode_lr = 1e-4;
    double recover_lr = 1e-5;
    int encode_batch = 6;
    int recover_batch = 8;
    bool progressive = true;  // false: single encoding phase at s = K
    bool recovering = true;
};

struct StagePlan {
    std::vector<Phase> phases;
    int stages = 0;
    int total_steps() const;
};

StagePlan build_stage_plan(const PlanConfig& cfg, std::size_t dataset_size = 0);

}  // namespace heima
