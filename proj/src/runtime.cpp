#include "heima/runtime.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace heima {

namespace {

constexpr char kExportMagic[8] = {'H', 'E', 'I', 'M', 'A', 'H', 'S', 'X'};
constexpr std::uint32_t kExportVersion = 1;

}  // namespace

std::string_view to_string(CaptureMode mode) {
    return mode == CaptureMode::teacher_forced ? "teacher-forced" : "generated";
}

CaptureMode capture_mode_from_string(std::string_view name) {
    if (name == "teacher-forced") return CaptureMode::teacher_forced;
    if (name == "generated") return CaptureMode::generated;
    throw Error(ErrorCode::invalid_argument, "unknown capture mode: " + std::string(name));
}

std::size_t argmax_lowest(std::span<const float> values) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < values.size(); ++j)
        if (values[j] > values[best]) best = j;
    return best;
}

Generation generate(const Params<float>& p, std::span<const TokenId> prompt, std::size_t max_new, TokenId stop_id,
                    bool capture_hidden, std::span<const EmbeddingOverride<float>> prompt_overrides) {
    if (prompt.empty()) throw Error(ErrorCode::invalid_argument, "empty prompt");
    const auto max_len = static_cast<std::size_t>(p.config().max_len);
    if (prompt.size() + max_new > max_len)
        throw Error(ErrorCode::out_of_range, "prompt of " + std::to_string(prompt.size()) + " tokens plus " +
                                                 std::to_string(max_new) + " new tokens exceeds max_len " +
                                                 std::to_string(max_len));
    for (const auto& ov : prompt_overrides)
        if (ov.position >= prompt.size())
            throw Error(ErrorCode::out_of_range, "override position " + std::to_string(ov.position) +
                                                     " outside the prompt");
    Generation out;
    if (max_new == 0) return out;
    DecodeState<float> state(p);
    for (std::size_t t = 0; t < prompt.size(); ++t) {
        std::span<const float> ov;
        for (const auto& o : prompt_overrides)
            if (o.position == t) ov = o.vector;
        state.push(prompt[t], ov);
    }
    while (true) {
        auto next = static_cast<TokenId>(argmax_lowest(state.logits()));
        out.emitted.push_back(next);
        if (next == stop_id || out.emitted.size() >= max_new) break;
        state.push(next);
        if (capture_hidden) out.hidden.push_back(state.hidden());
    }
    return out;
}

std::vector<HiddenStateRecord> capture_hidden_teacher_forced(const Params<float>& p, const Sample& sample,
                                                            const ThinkingTokenSpec& spec, const Vocab& vocab,
                                                            const std::string& encoder_digest, int s) {
    const int k_total = spec.stages();
    if (s < 0) s = k_total;
    if (s < k_total)
        throw Error(ErrorCode::invalid_argument, "teacher-forced capture needs every stage as thinking tokens (s=" +
                                                     std::to_string(s) + " < K=" + std::to_string(k_total) + ")");
    auto seq = assemble_sequence(sample, s, spec, vocab, static_cast<std::size_t>(p.config().max_len));
    if (seq.thinking_positions.empty()) throw Error(ErrorCode::invalid_argument, "assembly has no thinking tokens");
    auto out = forward<float>(p, seq.ids);
    std::vector<HiddenStateRecord> records;
    int prev_stage = -1, slot = 0;
    for (const auto& tp : seq.thinking_positions) {
        slot = tp.stage == prev_stage ? slot + 1 : 0;
        prev_stage = tp.stage;
        const float* row = out.final_hidden.row(tp.position);
        records.push_back({sample.id, tp.stage, slot, std::vector<float>(row, row + out.final_hidden.cols),
                           sample.question, sample.stages[static_cast<std::size_t>(tp.stage)], encoder_digest,
                           CaptureMode::teacher_forced});
    }
    return records;
}

EmissionParse parse_emission(std::span<const TokenId> emitted, const Vocab& vocab, int stages) {
    EmissionParse out;
    out.wellformed.terminated = !emitted.empty() && emitted.back() == vocab.eos();
    std::vector<int> seen;
    int last = -1;
    bool ordered = true;
    for (auto id : emitted) {
        auto st = vocab.thinking_stage(id);
        if (!st) continue;
        if (*st < last) ordered = false;
        if (*st != last) seen.push_back(*st);
        last = *st;
    }
    std::vector<int> all(static_cast<std::size_t>(std::max(stages, 0)));
    for (int k = 0; k < stages; ++k) all[static_cast<std::size_t>(k)] = k;
    out.wellformed.thinking_in_order = ordered && seen == all;

    auto open = std::find(emitted.begin(), emitted.end(), vocab.answer_open());
    if (open != emitted.end()) {
        auto close = std::find(open + 1, emitted.end(), vocab.answer_close());
        if (close != emitted.end()) {
            out.wellformed.answer_delimited = true;
            out.answer_tokens = vocab.decode(std::vector<TokenId>(open + 1, close));
        }
    }
    return out;
}

InferenceResult infer_sample(const Params<float>& p, const Sample& sample, const ThinkingTokenSpec& spec,
                             const Vocab& vocab, const InferOptions& opts) {
    auto prompt = encoder_prompt(sample, vocab);
    const auto max_len = static_cast<std::size_t>(p.config().max_len);
    InferenceResult r;
    r.sample_id = sample.id;
    if (prompt.size() >= max_len) return r;
    std::size_t max_new = max_len - prompt.size();
    if (opts.max_new > 0) max_new = std::min(max_new, opts.max_new);
    auto gen = generate(p, prompt, max_new, vocab.eos(), opts.capture_hidden);
    r.emitted_ids = gen.emitted;
    r.generated_token_count = gen.emitted.size();
    auto parsed = parse_emission(gen.emitted, vocab, spec.stages());
    r.wellformed = parsed.wellformed;
    r.answer_tokens = std::move(parsed.answer_tokens);

    if (opts.capture_hidden) {
        int last_stage = -1, slot = 0;
        for (std::size_t i = 0; i < gen.emitted.size() && i < gen.hidden.size(); ++i) {
            auto st = vocab.thinking_stage(gen.emitted[i]);
            if (!st) continue;
            slot = *st == last_stage ? slot + 1 : 0;
            last_stage = *st;
            const auto k = static_cast<std::size_t>(*st);
            r.hidden.push_back({sample.id, *st, slot, gen.hidden[i], sample.question,
                                k < sample.stages.size() ? sample.stages[k] : std::vector<std::string>{},
                                opts.encoder_digest, CaptureMode::generated});
        }
    }
    return r;
}

void write_hidden_export(const std::string& path, const HiddenExportHeader& header,
                         const std::vector<HiddenStateRecord>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write hidden-state export " + path);
    out.write(kExportMagic, 8);
    le::write<std::uint32_t>(out, kExportVersion);
    le::write<std::uint32_t>(out, static_cast<std::uint32_t>(header.d_model));
    le::write<std::uint64_t>(out, records.size());
    nlohmann::json h{{"encoder_digest", header.encoder_digest},
                     {"capture_mode", header.capture_mode},
                     {"vocab_digest", header.vocab_digest},
                     {"run_config_digest", header.run_config_digest}};
    le::write_string(out, h.dump());
    for (const auto& r : records) {
        if (r.vector.size() != static_cast<std::size_t>(header.d_model))
            throw Error(ErrorCode::invalid_argument, "record vector length differs from export d_model");
        nlohmann::json m{{"sample_id", r.sample_id},
                         {"stage", r.stage},
                         {"slot", r.slot},
                         {"question", r.question},
                         {"gold_stage_text", r.gold_stage_text},
                         {"encoder_digest", r.encoder_digest},
                         {"capture_mode", std::string(to_string(r.capture_mode))}};
        le::write_string(out, m.dump());
        le::write_floats(out, r.vector);
    }
    if (!out) throw Error(ErrorCode::io, "failed writing hidden-state export " + path);
}

HiddenExport read_hidden_export(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::missing_artifact, "cannot open hidden-state export " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string_view(magic, 8) != std::string_view(kExportMagic, 8))
        throw Error(ErrorCode::format, "not a hidden-state export: " + path);
    if (le::read<std::uint32_t>(in) != kExportVersion)
        throw Error(ErrorCode::format, "unsupported hidden-state export version: " + path);
    HiddenExport ex;
    ex.header.d_model = static_cast<int>(le::read<std::uint32_t>(in));
    auto count = le::read<std::uint64_t>(in);
    try {
        auto h = nlohmann::json::parse(le::read_string(in));
        ex.header.encoder_digest = h.at("encoder_digest").get<std::string>();
        ex.header.capture_mode = h.at("capture_mode").get<std::string>();
        ex.header.vocab_digest = h.at("vocab_digest").get<std::string>();
        ex.header.run_config_digest = h.at("run_config_digest").get<std::string>();
        for (std::uint64_t i = 0; i < count; ++i) {
            auto m = nlohmann::json::parse(le::read_string(in));
            HiddenStateRecord r;
            r.sample_id = m.at("sample_id").get<std::int64_t>();
            r.stage = m.at("stage").get<int>();
            r.slot = m.at("slot").get<int>();
            r.question = m.at("question").get<std::vector<std::string>>();
            r.gold_stage_text = m.at("gold_stage_text").get<std::vector<std::string>>();
            r.encoder_digest = m.at("encoder_digest").get<std::string>();
            r.capture_mode = capture_mode_from_string(m.at("capture_mode").get<std::string>());
            r.vector.resize(static_cast<std::size_t>(ex.header.d_model));
            le::read_floats(in, r.vector);
            ex.records.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::format, "bad hidden-state export " + path + ": " + e.what());
    }
    return ex;
}

}  // namespace heima
