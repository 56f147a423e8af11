#include "heima/curriculum.hpp"

#include <cmath>

namespace heima {

std::vector<std::size_t> stage_span_lengths(const Sample& sample) {
    std::vector<std::size_t> out;
    for (const auto& st : sample.stages) out.push_back(st.size() + 2);
    return out;
}

std::vector<int> retention_counts(std::span<const std::size_t> lengths, double ratio) {
    if (!(ratio > 0.0 && ratio <= 1.0))
        throw Error(ErrorCode::invalid_argument, "retention ratio must be in (0, 1]");
    std::vector<int> out;
    for (auto len : lengths) {
        auto m = std::lround(ratio * static_cast<double>(len));
        out.push_back(static_cast<int>(std::max<long>(1, m)));
    }
    return out;
}

std::vector<int> retention_counts(const Sample& sample, double ratio) {
    auto lengths = stage_span_lengths(sample);
    return retention_counts(lengths, ratio);
}

std::vector<int> thinking_counts(const Sample& sample, const ThinkingTokenSpec& spec) {
    spec.validate();
    if (spec.mode == ThinkingMode::retention_ratio) return retention_counts(sample, spec.ratio);
    return std::vector<int>(sample.stages.size(), spec.tokens_per_stage);
}

std::vector<TokenId> encoder_prompt(const Sample& sample, const Vocab& vocab) {
    std::vector<TokenId> ids{vocab.bos()};
    auto vis = vocab.encode(sample.visual);
    auto q = vocab.encode(sample.question);
    ids.insert(ids.end(), vis.begin(), vis.end());
    ids.insert(ids.end(), q.begin(), q.end());
    return ids;
}

MaskedSequence assemble_sequence(const Sample& sample, int s, const ThinkingTokenSpec& spec, const Vocab& vocab,
                                 std::size_t max_len) {
    spec.validate();
    const int k_total = spec.stages();
    if (static_cast<int>(sample.stages.size()) != k_total)
        throw Error(ErrorCode::invalid_argument, "sample " + std::to_string(sample.id) + " has " +
                                                     std::to_string(sample.stages.size()) + " stages, spec has " +
                                                     std::to_string(k_total));
    if (s < 0 || s > k_total)
        throw Error(ErrorCode::out_of_range, "stage index " + std::to_string(s) + " outside 0.." +
                                                 std::to_string(k_total));
    if (s > 0 && static_cast<int>(vocab.thinking_ids().size()) != k_total)
        throw Error(ErrorCode::invalid_argument, "vocabulary lacks thinking tokens for the configured stages");
    const auto counts = s > 0 ? thinking_counts(sample, spec) : std::vector<int>{};

    MaskedSequence seq;
    auto push = [&](TokenId id, bool target) {
        seq.ids.push_back(id);
        seq.loss_mask.push_back(target ? 1 : 0);
    };
    push(vocab.bos(), false);
    seq.regions.visual.begin = seq.ids.size();
    for (auto id : vocab.encode(sample.visual)) push(id, false);
    seq.regions.visual.end = seq.regions.question.begin = seq.ids.size();
    for (auto id : vocab.encode(sample.question)) push(id, false);
    seq.regions.question.end = seq.ids.size();

    for (int k = 0; k < k_total; ++k) {
        Span span{seq.ids.size(), 0};
        if (k < s) {
            const TokenId tid = vocab.thinking_ids()[static_cast<std::size_t>(k)];
            for (int j = 0; j < counts[static_cast<std::size_t>(k)]; ++j) {
                seq.thinking_positions.push_back({k, seq.ids.size()});
                push(tid, true);
            }
        } else {
            const auto& name = spec.stage_names[static_cast<std::size_t>(k)];
            push(vocab.id(stage_open_symbol(name)), true);
            for (auto id : vocab.encode(sample.stages[static_cast<std::size_t>(k)])) push(id, true);
            push(vocab.id(stage_close_symbol(name)), true);
        }
        span.end = seq.ids.size();
        seq.regions.stages.push_back(span);
    }
    seq.regions.answer.begin = seq.ids.size();
    push(vocab.answer_open(), true);
    for (auto id : vocab.encode(sample.answer)) push(id, true);
    push(vocab.answer_close(), true);
    seq.regions.answer.end = seq.ids.size();
    push(vocab.eos(), true);

    if (max_len > 0 && seq.ids.size() > max_len)
        throw Error(ErrorCode::out_of_range, "sample " + std::to_string(sample.id) + " assembles to " +
                                                 std::to_string(seq.ids.size()) + " tokens, above max_len " +
                                                 std::to_string(max_len));
    return seq;
}

int StagePlan::total_steps() const {
    int n = 0;
    for (const auto& p : phases) n += p.steps;
    return n;
}

StagePlan build_stage_plan(const PlanConfig& cfg, std::size_t dataset_size) {
    if (cfg.stages < 0) throw Error(ErrorCode::invalid_argument, "stage count must be non-negative");
    if (cfg.encode_batch < 1 || cfg.recover_batch < 1)
        throw Error(ErrorCode::invalid_argument, "batch sizes must be positive");
    if (!(cfg.encode_lr > 0.0) || !(cfg.recover_lr > 0.0))
        throw Error(ErrorCode::invalid_argument, "learning rates must be positive");

    StagePlan plan;
    plan.stages = cfg.stages;
    const int k = cfg.stages;
    if (cfg.progressive || k == 0) {
        for (int s = 0; s <= k; ++s)
            plan.phases.push_back({"stage-" + std::to_string(s), s, false, 0, cfg.encode_lr, cfg.encode_batch});
    } else {
        plan.phases.push_back({"stage-" + std::to_string(k), k, false, 0, cfg.encode_lr, cfg.encode_batch});
    }
    if (cfg.recovering && k > 0) plan.phases.push_back({"recover", k, true, 0, cfg.recover_lr, cfg.recover_batch});

    // Matched budgets: one-shot encoding takes the steps the progressive phases would have used.
    const int progressive_phases = k + 1 + ((cfg.recovering && k > 0) ? 1 : 0);
    if (!cfg.phase_steps.empty()) {
        if (cfg.phase_steps.size() != plan.phases.size())
            throw Error(ErrorCode::config, "phase_steps lists " + std::to_string(cfg.phase_steps.size()) +
                                               " entries for " + std::to_string(plan.phases.size()) + " phases");
        for (std::size_t i = 0; i < plan.phases.size(); ++i) {
            if (cfg.phase_steps[i] < 1) throw Error(ErrorCode::config, "every phase needs at least one step");
            plan.phases[i].steps = cfg.phase_steps[i];
        }
    } else if (cfg.total_steps > 0) {
        if (cfg.total_steps < progressive_phases)
            throw Error(ErrorCode::config, "step budget " + std::to_string(cfg.total_steps) + " too small for " +
                                               std::to_string(progressive_phases) + " phases");
        const int share = cfg.total_steps / progressive_phases;
        const int extra = cfg.total_steps % progressive_phases;
        std::vector<int> shares(static_cast<std::size_t>(progressive_phases), share);
        for (int i = 0; i < extra; ++i) shares[static_cast<std::size_t>(i)] += 1;
        if (plan.phases.size() == shares.size()) {
            for (std::size_t i = 0; i < shares.size(); ++i) plan.phases[i].steps = shares[i];
        } else {
            plan.phases.front().steps = 0;
            for (std::size_t i = 0; i + 1 < shares.size(); ++i) plan.phases.front().steps += shares[i];
            if (plan.phases.size() > 1) plan.phases.back().steps = shares.back();
            else plan.phases.front().steps += shares.back();
        }
    } else {
        if (dataset_size == 0) throw Error(ErrorCode::config, "step budget or dataset size required");
        for (auto& p : plan.phases) {
            int passes = (!cfg.progressive && !p.recovering) ? k + 1 : 1;
            p.steps = passes * static_cast<int>((dataset_size + static_cast<std::size_t>(p.batch_size) - 1) /
                                                static_cast<std::size_t>(p.batch_size));
        }
    }
    return plan;
}

}  // namespace heima
