#include "heima/explainer.hpp"

#include <fstream>
#include <map>

#include <json.hpp>

namespace heima {

namespace {

constexpr char kRecordMagic[8] = {'H', 'E', 'I', 'M', 'A', 'D', 'R', 'X'};
constexpr std::uint32_t kRecordVersion = 1;
constexpr std::string_view kQuestionSlot = "{question}";
constexpr std::string_view kThinkingSlot = "{thinking}";

}  // namespace

std::vector<std::string> template_words(std::string_view tmpl) {
    std::vector<std::string> out;
    for (auto& w : split_words(tmpl))
        if (w != kQuestionSlot && w != kThinkingSlot) out.push_back(std::move(w));
    return out;
}

std::string stage_name(const Vocab& vocab, int stage) {
    if (stage < 0 || static_cast<std::size_t>(stage) >= vocab.thinking_ids().size())
        throw Error(ErrorCode::out_of_range, "stage " + std::to_string(stage) + " has no thinking token");
    const auto& sym = vocab.symbol(vocab.thinking_ids()[static_cast<std::size_t>(stage)]);
    const std::string_view prefix = "<Thinking_of_";
    return sym.substr(prefix.size(), sym.size() - prefix.size() - 1);
}

ExplanatoryPrompt render_prompt(std::span<const std::string> question, int stage, int m, const Vocab& vocab,
                                std::string_view tmpl) {
    if (m < 1) throw Error(ErrorCode::invalid_argument, "placeholder count must be positive");
    const auto name = stage_name(vocab, stage);
    const TokenId placeholder = vocab.thinking_ids()[static_cast<std::size_t>(stage)];
    auto q_ids = vocab.encode(question);
    for (std::size_t i = 0; i < q_ids.size(); ++i)
        if (vocab.thinking_stage(q_ids[i]))
            throw Error(ErrorCode::invalid_argument,
                        "question contains thinking token " + vocab.symbol(q_ids[i]) + " at position " +
                            std::to_string(i));
    ExplanatoryPrompt p;
    p.stage = stage;
    p.ids.push_back(vocab.bos());
    bool has_thinking_slot = false;
    for (const auto& w : split_words(tmpl)) {
        if (w == kQuestionSlot) {
            p.ids.insert(p.ids.end(), q_ids.begin(), q_ids.end());
        } else if (w == kThinkingSlot) {
            has_thinking_slot = true;
            for (int j = 0; j < m; ++j) {
                p.placeholder_positions.push_back(p.ids.size());
                p.ids.push_back(placeholder);
            }
        } else {
            p.ids.push_back(vocab.id(w));
        }
    }
    if (!has_thinking_slot) throw Error(ErrorCode::config, "explanatory template lacks a {thinking} slot");
    p.ids.push_back(vocab.id(stage_open_symbol(name)));
    return p;
}

std::vector<DecoderRecord> build_decoder_records(const std::vector<HiddenStateRecord>& hidden, int stage,
                                                 const Vocab& vocab, const std::string& expected_digest,
                                                 std::string_view tmpl) {
    // Keep first-appearance order of sample ids; slots sorted within each sample.
    std::vector<std::int64_t> order;
    std::map<std::int64_t, std::vector<const HiddenStateRecord*>> by_sample;
    for (const auto& h : hidden) {
        if (h.encoder_digest != expected_digest)
            throw Error(ErrorCode::invalid_argument, "encoder digest mismatch for sample " +
                                                         std::to_string(h.sample_id) + ": record has " +
                                                         h.encoder_digest + ", expected " + expected_digest);
        if (h.stage != stage) continue;
        auto [it, fresh] = by_sample.try_emplace(h.sample_id);
        if (fresh) order.push_back(h.sample_id);
        it->second.push_back(&h);
    }
    std::vector<DecoderRecord> out;
    for (auto id : order) {
        auto& slots = by_sample[id];
        std::sort(slots.begin(), slots.end(), [](auto* a, auto* b) { return a->slot < b->slot; });
        DecoderRecord rec;
        rec.sample_id = id;
        rec.stage = stage;
        rec.prompt = render_prompt(slots.front()->question, stage, static_cast<int>(slots.size()), vocab, tmpl);
        for (auto* h : slots) rec.hidden.push_back(h->vector);
        rec.target = vocab.encode(slots.front()->gold_stage_text);
        if (rec.target.empty())
            throw Error(ErrorCode::invalid_argument, "sample " + std::to_string(id) + " has an empty stage text");
        out.push_back(std::move(rec));
    }
    return out;
}

TrainItem decoder_item(const DecoderRecord& rec, const Vocab& vocab) {
    if (rec.target.empty())
        throw Error(ErrorCode::invalid_argument, "record " + std::to_string(rec.sample_id) + " has an empty target");
    if (rec.hidden.size() != rec.prompt.placeholder_positions.size())
        throw Error(ErrorCode::invalid_argument, "record " + std::to_string(rec.sample_id) +
                                                     " has a hidden/placeholder count mismatch");
    TrainItem item;
    item.id = rec.sample_id;
    item.seq.ids = rec.prompt.ids;
    item.seq.loss_mask.assign(rec.prompt.ids.size(), 0);
    item.seq.ids.insert(item.seq.ids.end(), rec.target.begin(), rec.target.end());
    item.seq.ids.push_back(vocab.id(stage_close_symbol(stage_name(vocab, rec.stage))));
    item.seq.loss_mask.resize(item.seq.ids.size(), 1);
    for (std::size_t i = 0; i < rec.hidden.size(); ++i)
        item.overrides.push_back({rec.prompt.placeholder_positions[i], rec.hidden[i]});
    return item;
}

void write_decoder_records(const std::string& path, const DecoderRecordFile& file) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write decoder records " + path);
    out.write(kRecordMagic, 8);
    le::write<std::uint32_t>(out, kRecordVersion);
    le::write<std::uint32_t>(out, static_cast<std::uint32_t>(file.d_model));
    le::write<std::uint64_t>(out, file.records.size());
    nlohmann::json h{{"encoder_digest", file.encoder_digest}, {"stage", file.stage},
                     {"template", file.tmpl},                 {"vocab_digest", file.vocab_digest},
                     {"run_config_digest", file.run_config_digest}};
    le::write_string(out, h.dump());
    for (const auto& r : file.records) {
        nlohmann::json m{{"sample_id", r.sample_id},
                         {"stage", r.stage},
                         {"prompt_ids", r.prompt.ids},
                         {"placeholder_positions", r.prompt.placeholder_positions},
                         {"target_ids", r.target},
                         {"vectors", r.hidden.size()}};
        le::write_string(out, m.dump());
        for (const auto& v : r.hidden) {
            if (v.size() != static_cast<std::size_t>(file.d_model))
                throw Error(ErrorCode::invalid_argument, "hidden vector width differs from file d_model");
            le::write_floats(out, v);
        }
    }
    if (!out) throw Error(ErrorCode::io, "failed writing decoder records " + path);
}

DecoderRecordFile read_decoder_records(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::missing_artifact, "cannot open decoder records " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string_view(magic, 8) != std::string_view(kRecordMagic, 8))
        throw Error(ErrorCode::format, "not a decoder record file: " + path);
    if (le::read<std::uint32_t>(in) != kRecordVersion)
        throw Error(ErrorCode::format, "unsupported decoder record version: " + path);
    DecoderRecordFile f;
    f.d_model = static_cast<int>(le::read<std::uint32_t>(in));
    auto count = le::read<std::uint64_t>(in);
    try {
        auto h = nlohmann::json::parse(le::read_string(in));
        f.encoder_digest = h.at("encoder_digest").get<std::string>();
        f.stage = h.at("stage").get<int>();
        f.tmpl = h.at("template").get<std::string>();
        f.vocab_digest = h.at("vocab_digest").get<std::string>();
        f.run_config_digest = h.at("run_config_digest").get<std::string>();
        for (std::uint64_t i = 0; i < count; ++i) {
            auto m = nlohmann::json::parse(le::read_string(in));
            DecoderRecord r;
            r.sample_id = m.at("sample_id").get<std::int64_t>();
            r.stage = m.at("stage").get<int>();
            r.prompt.stage = r.stage;
            r.prompt.ids = m.at("prompt_ids").get<std::vector<TokenId>>();
            r.prompt.placeholder_positions = m.at("placeholder_positions").get<std::vector<std::size_t>>();
            r.target = m.at("target_ids").get<std::vector<TokenId>>();
            auto n = m.at("vectors").get<std::size_t>();
            r.hidden.assign(n, std::vector<float>(static_cast<std::size_t>(f.d_model)));
            for (auto& v : r.hidden) le::read_floats(in, v);
            if (r.target.empty())
                throw Error(ErrorCode::format, "record " + std::to_string(r.sample_id) + " in " + path +
                                                   " has an empty target");
            if (n != r.prompt.placeholder_positions.size())
                throw Error(ErrorCode::format, "record " + std::to_string(r.sample_id) + " in " + path +
                                                   " has a hidden/placeholder count mismatch");
            f.records.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::format, "bad decoder record file " + path + ": " + e.what());
    }
    return f;
}

std::vector<std::string> explain(const Params<float>& q, const DecoderRecord& rec, const Vocab& vocab,
                                 std::size_t max_new) {
    const auto d = static_cast<std::size_t>(q.config().d_model);
    if (rec.hidden.size() != rec.prompt.placeholder_positions.size())
        throw Error(ErrorCode::invalid_argument, "hidden/placeholder count mismatch");
    std::vector<EmbeddingOverride<float>> ov;
    for (std::size_t i = 0; i < rec.hidden.size(); ++i) {
        if (rec.hidden[i].size() != d)
            throw Error(ErrorCode::invalid_argument, "hidden width " + std::to_string(rec.hidden[i].size()) +
                                                         " differs from decoder d_model " + std::to_string(d));
        ov.push_back({rec.prompt.placeholder_positions[i], rec.hidden[i]});
    }
    const auto room = static_cast<std::size_t>(q.config().max_len) - std::min(rec.prompt.ids.size(),
                                                                              static_cast<std::size_t>(q.config().max_len));
    const TokenId close = vocab.id(stage_close_symbol(stage_name(vocab, rec.stage)));
    auto gen = generate(q, rec.prompt.ids, std::min(max_new, room), close, false, ov);
    if (!gen.emitted.empty() && gen.emitted.back() == close) gen.emitted.pop_back();
    return vocab.decode(gen.emitted);
}

}  // namespace heima
