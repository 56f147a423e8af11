#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "heima/runtime.hpp"
#include "heima/trainer.hpp"

namespace heima {

/// Slots: {question} takes the question tokens, {thinking} the m placeholder ids.
inline constexpr std::string_view kDefaultExplanatoryTemplate =
    "According to the question : {question} , can you explain the thinking progress of {thinking} ?";

/// Template words other than the slots; they must be in the vocabulary.
std::vector<std::string> template_words(std::string_view tmpl = kDefaultExplanatoryTemplate);

/// Rendered ids are [BOS] template [open marker of the stage]; the decoder continues
/// with the stage text and the close marker.
struct ExplanatoryPrompt {
    int stage = 0;
    std::vector<TokenId> ids;
    std::vector<std::size_t> placeholder_positions;
    bool operator==(const ExplanatoryPrompt&) const = default;
};

/// Stage name recovered from the registered thinking symbol ("<Thinking_of_Caption>" -> "Caption").
std::string stage_name(const Vocab& vocab, int stage);

ExplanatoryPrompt render_prompt(std::span<const std::string> question, int stage, int m, const Vocab& vocab,
                                std::string_view tmpl = kDefaultExplanatoryTemplate);

struct DecoderRecord {
    std::int64_t sample_id = 0;
    int stage = 0;
    ExplanatoryPrompt prompt;
    std::vector<std::vector<float>> hidden;  // one per placeholder
    std::vector<TokenId> target;             // gold stage text, markers excluded
    bool operator==(const DecoderRecord&) const = default;
};

/// Pairs captured hidden vectors of one stage with rendered prompts and gold text.
/// Every record must come from the encoder with expected_digest.
std::vector<DecoderRecord> build_decoder_records(const std::vector<HiddenStateRecord>& hidden, int stage,
                                                 const Vocab& vocab, const std::string& expected_digest,
                                                 std::string_view tmpl = kDefaultExplanatoryTemplate);

/// Training item: prompt, target, close marker; loss on target and close marker;
/// hidden vectors substituted at the placeholders.
TrainItem decoder_item(const DecoderRecord& rec, const Vocab& vocab);

/// Decoder record file: the hidden-state export layout with magic "HEIMADRX", a header
/// {"encoder_digest", "stage", "template", "vocab_digest", "run_config_digest"} and per-record
/// JSON {"sample_id", "stage", "prompt_ids", "placeholder_positions", "target_ids", "vectors"}
/// followed by vectors * d_model f32 values.
struct DecoderRecordFile {
    int d_model = 0;
    int stage = 0;
    std::string encoder_digest;
    std::string tmpl;
    std::string vocab_digest;
    std::string run_config_digest;
    std::vector<DecoderRecord> records;
};

void write_decoder_records(const std::string& path, const DecoderRecordFile& file);
/// Rejects records with an empty target or a hidden/placeholder count mismatch.
DecoderRecordFile read_decoder_records(const std::string& path);

/// Substitutes rec.hidden at the placeholders and decodes greedily until the stage
/// close marker or max_new tokens. Returns the text without the close marker.
std::vector<std::string> explain(const Params<float>& q, const DecoderRecord& rec, const Vocab& vocab,
                                 std::size_t max_new);

}  // namespace heima
