#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "heima/curriculum.hpp"
#include "heima/net.hpp"

namespace heima {

enum class CaptureMode { teacher_forced, generated };
std::string_view to_string(CaptureMode mode);
CaptureMode capture_mode_from_string(std::string_view name);

struct HiddenStateRecord {
    std::int64_t sample_id = 0;
    int stage = 0;  // zero-based
    int slot = 0;   // 0..m_k-1
    std::vector<float> vector;
    std::vector<std::string> question;
    std::vector<std::string> gold_stage_text;
    std::string encoder_digest;
    CaptureMode capture_mode = CaptureMode::teacher_forced;

    bool operator==(const HiddenStateRecord&) const = default;
};

struct Generation {
    std::vector<TokenId> emitted;
    /// hidden[i] is the final hidden row of emitted[i] in the pass that consumed it;
    /// filled only when capture is requested, for every emitted token fed back.
    std::vector<std::vector<float>> hidden;
};

/// Greedy decoding; ties go to the lowest id. Stops after emitting stop_id or max_new tokens.
/// Prompt overrides replace token embeddings at prompt positions.
Generation generate(const Params<float>& p, std::span<const TokenId> prompt, std::size_t max_new, TokenId stop_id,
                    bool capture_hidden = false, std::span<const EmbeddingOverride<float>> prompt_overrides = {});

/// Index of the largest value, lowest index on ties.
std::size_t argmax_lowest(std::span<const float> values);

/// Forwards the fully assembled stage-s sequence (s must equal K) and records the
/// final hidden vector at every thinking position.
std::vector<HiddenStateRecord> capture_hidden_teacher_forced(const Params<float>& p, const Sample& sample,
                                                            const ThinkingTokenSpec& spec, const Vocab& vocab,
                                                            const std::string& encoder_digest, int s = -1);

struct Wellformed {
    bool thinking_in_order = false;  // stage tokens appear grouped and in stage order, every stage present
    bool answer_delimited = false;
    bool terminated = false;  // ended with EOS

    bool all() const { return thinking_in_order && answer_delimited && terminated; }
};

struct EmissionParse {
    Wellformed wellformed;
    std::vector<std::string> answer_tokens;
};

/// Reads thinking-token order, the delimited answer and termination from an emission.
EmissionParse parse_emission(std::span<const TokenId> emitted, const Vocab& vocab, int stages);

struct InferenceResult {
    std::int64_t sample_id = 0;
    std::vector<TokenId> emitted_ids;
    std::vector<std::string> answer_tokens;
    std::size_t generated_token_count = 0;
    std::vector<HiddenStateRecord> hidden;  // captured at generated thinking positions
    Wellformed wellformed;
};

struct InferOptions {
    std::size_t max_new = 0;  // 0: up to max_len
    bool capture_hidden = true;
    std::string encoder_digest;
};

/// Prompts with [BOS][visual][question] and decodes greedily. Malformed emissions
/// are reported through the wellformed flags, never as errors.
InferenceResult infer_sample(const Params<float>& p, const Sample& sample, const ThinkingTokenSpec& spec,
                             const Vocab& vocab, const InferOptions& opts = {});

/// Hidden-state export layout (little-endian):
///   char[8] "HEIMAHSX"; u32 version (1); u32 d_model; u64 record count;
///   u32 n, n bytes JSON header {"encoder_digest", "capture_mode", "vocab_digest", "run_config_digest"};
///   per record: u32 n, n bytes JSON {"sample_id", "stage", "slot", "question", "gold_stage_text",
///   "encoder_digest", "capture_mode"}; f32 vector[d_model].
struct HiddenExportHeader {
    int d_model = 0;
    std::string encoder_digest;
    std::string capture_mode;
    std::string vocab_digest;
    std::string run_config_digest;
};

void write_hidden_export(const std::string& path, const HiddenExportHeader& header,
                         const std::vector<HiddenStateRecord>& records);

struct HiddenExport {
    HiddenExportHeader header;
    std::vector<HiddenStateRecord> records;
};

HiddenExport read_hidden_export(const std::string& path);

}  // namespace heima
