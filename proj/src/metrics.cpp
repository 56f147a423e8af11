#include "heima/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include <json.hpp>

#include "heima/curriculum.hpp"

namespace heima {

namespace {

bool is_answer_marker(const std::string& w) { return w == kAnswerOpen || w == kAnswerClose || w == kEos; }

std::map<std::vector<std::string>, std::size_t> ngram_counts(std::span<const std::string> x, std::size_t n) {
    std::map<std::vector<std::string>, std::size_t> out;
    for (std::size_t i = 0; i + n <= x.size(); ++i) out[std::vector<std::string>(x.begin() + static_cast<std::ptrdiff_t>(i),
                                                                               x.begin() + static_cast<std::ptrdiff_t>(i + n))]++;
    return out;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

int exact_match(std::span<const std::string> pred, std::span<const std::string> gold) {
    std::vector<std::string> a, b;
    for (const auto& w : pred)
        if (!is_answer_marker(w)) a.push_back(w);
    for (const auto& w : gold)
        if (!is_answer_marker(w)) b.push_back(w);
    return a == b ? 1 : 0;
}

double bleu4(std::span<const std::string> cand, std::span<const std::string> ref) {
    if (cand.empty()) return 0.0;
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
        auto c = ngram_counts(cand, n);
        auto r = ngram_counts(ref, n);
        std::size_t matches = 0, total = 0;
        for (const auto& [gram, count] : c) {
            total += count;
            auto it = r.find(gram);
            if (it != r.end()) matches += std::min(count, it->second);
        }
        double p = matches == 0 ? 1.0 / static_cast<double>(total + 1)
                                : static_cast<double>(matches) / static_cast<double>(total);
        log_sum += std::log(p);
    }
    double bp = cand.size() < ref.size()
                    ? std::exp(1.0 - static_cast<double>(ref.size()) / static_cast<double>(cand.size()))
                    : 1.0;
    return bp * std::exp(log_sum / 4.0);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l(std::span<const std::string> cand, std::span<const std::string> ref) {
    if (cand.empty() || ref.empty()) return 0.0;
    const double lcs = static_cast<double>(lcs_length(cand, ref));
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(cand.size()), r = lcs / static_cast<double>(ref.size());
    return 2.0 * p * r / (p + r);
}

double mean_generated_tokens(const std::vector<InferenceResult>& results) {
    if (results.empty()) throw Error(ErrorCode::invalid_argument, "no inference results");
    double total = 0.0;
    for (const auto& r : results) total += static_cast<double>(r.generated_token_count);
    return total / static_cast<double>(results.size());
}

TokenStats token_stats(const std::vector<InferenceResult>& heima, const std::vector<InferenceResult>& baseline) {
    if (heima.empty() || baseline.empty()) throw Error(ErrorCode::invalid_argument, "token stats need results");
    std::multiset<std::int64_t> a, b;
    for (const auto& r : heima) a.insert(r.sample_id);
    for (const auto& r : baseline) b.insert(r.sample_id);
    if (a != b) throw Error(ErrorCode::invalid_argument, "heima and baseline results cover different sample ids");
    TokenStats s;
    s.heima_mean = mean_generated_tokens(heima);
    s.baseline_mean = mean_generated_tokens(baseline);
    if (s.heima_mean <= 0.0) throw Error(ErrorCode::numeric, "heima mean generated tokens is zero");
    s.compression_ratio = s.baseline_mean / s.heima_mean;
    return s;
}

double answer_accuracy(const std::vector<InferenceResult>& results, const std::vector<Sample>& samples) {
    if (results.size() != samples.size() || results.empty())
        throw Error(ErrorCode::invalid_argument, "results and samples differ in count");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (results[i].sample_id != samples[i].id)
            throw Error(ErrorCode::invalid_argument, "result order differs from sample order");
        hits += static_cast<std::size_t>(exact_match(results[i].answer_tokens, samples[i].answer));
    }
    return static_cast<double>(hits) / static_cast<double>(results.size());
}

std::size_t structural_token_count(const Sample& sample, const ThinkingTokenSpec& spec) {
    std::size_t n = sample.answer.size() + 2 + 1;
    for (int m : thinking_counts(sample, spec)) n += static_cast<std::size_t>(m);
    return n;
}

std::size_t structural_baseline_count(const Sample& sample) {
    std::size_t n = sample.answer.size() + 2 + 1;
    for (auto len : stage_span_lengths(sample)) n += len;
    return n;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["schema"] = "heima.eval.v1";
    j["datasets"] = nlohmann::json::object();
    for (const auto& [name, d] : datasets)
        j["datasets"][name] = {{"answer_accuracy", d.answer_accuracy},
                               {"mean_generated_tokens", d.mean_generated_tokens},
                               {"compression_ratio", opt(d.compression_ratio)},
                               {"samples", d.samples}};
    j["stages"] = nlohmann::json::object();
    for (const auto& [name, s] : stages)
        j["stages"][name] = {{"bleu4", s.bleu4}, {"rouge_l", s.rouge_l}, {"zero_bleu4", opt(s.zero_bleu4)},
                             {"records", s.records}};
    j["digests"] = digests;
    j["notes"] = notes;
    return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(std::string_view text) {
    EvalReport r;
    try {
        auto j = nlohmann::json::parse(text);
        for (const auto& [name, d] : j.at("datasets").items()) {
            DatasetEval e;
            e.answer_accuracy = d.at("answer_accuracy").get<double>();
            e.mean_generated_tokens = d.at("mean_generated_tokens").get<double>();
            if (!d.at("compression_ratio").is_null()) e.compression_ratio = d.at("compression_ratio").get<double>();
            e.samples = d.at("samples").get<std::size_t>();
            r.datasets[name] = e;
        }
        for (const auto& [name, s] : j.at("stages").items()) {
            StageEval e;
            e.bleu4 = s.at("bleu4").get<double>();
            e.rouge_l = s.at("rouge_l").get<double>();
            if (!s.at("zero_bleu4").is_null()) e.zero_bleu4 = s.at("zero_bleu4").get<double>();
            e.records = s.at("records").get<std::size_t>();
            r.stages[name] = e;
        }
        r.digests = j.at("digests").get<std::map<std::string, std::string>>();
        r.notes = j.at("notes").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::format, std::string("bad eval report: ") + e.what());
    }
    return r;
}

std::string EvalReport::to_tsv() const {
    std::string out = "section\tname\tmetric\tvalue\n";
    for (const auto& [name, d] : datasets) {
        out += "dataset\t" + name + "\tanswer_accuracy\t" + fmt(d.answer_accuracy) + "\n";
        out += "dataset\t" + name + "\tmean_generated_tokens\t" + fmt(d.mean_generated_tokens) + "\n";
        if (d.compression_ratio) out += "dataset\t" + name + "\tcompression_ratio\t" + fmt(*d.compression_ratio) + "\n";
    }
    for (const auto& [name, s] : stages) {
        out += "stage\t" + name + "\tbleu4\t" + fmt(s.bleu4) + "\n";
        out += "stage\t" + name + "\trouge_l\t" + fmt(s.rouge_l) + "\n";
        if (s.zero_bleu4) out += "stage\t" + name + "\tzero_bleu4\t" + fmt(*s.zero_bleu4) + "\n";
    }
    return out;
}

std::string_view to_string(AblationKind kind) {
    switch (kind) {
        case AblationKind::tokens_per_stage: return "tokens-per-stage";
        case AblationKind::retention_ratio: return "retention-ratio";
        case AblationKind::curriculum: return "curriculum";
    }
    return "tokens-per-stage";
}

AblationKind ablation_kind_from_string(std::string_view name) {
    if (name == "tokens-per-stage") return AblationKind::tokens_per_stage;
    if (name == "retention-ratio") return AblationKind::retention_ratio;
    if (name == "curriculum") return AblationKind::curriculum;
    throw Error(ErrorCode::invalid_argument, "unknown ablation kind: " + std::string(name));
}

bool AblationTable::monotone_tokens() const {
    const AblationRow* prev = nullptr;
    for (const auto& r : rows) {
        if (!r.ok) continue;
        if (prev && r.mean_tokens < prev->mean_tokens) return false;
        prev = &r;
    }
    return true;
}

std::string AblationTable::to_tsv() const {
    std::string out = std::string(to_string(kind)) + "\tstatus\taccuracy\tmean_tokens\tstructural_tokens\n";
    for (const auto& r : rows) {
        out += fmt(r.value) + "\t" + (r.ok ? "ok" : "FAILED: " + r.error) + "\t" + (r.ok ? fmt(r.accuracy) : "-") +
               "\t" + (r.ok ? fmt(r.mean_tokens) : "-") + "\t" + (r.ok ? fmt(r.structural_tokens) : "-") + "\n";
    }
    return out;
}

std::string AblationTable::to_json() const {
    nlohmann::json j;
    j["schema"] = "heima.ablation.v1";
    j["kind"] = std::string(to_string(kind));
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows)
        j["rows"].push_back({{"value", r.value},
                             {"ok", r.ok},
                             {"error", r.error},
                             {"accuracy", r.accuracy},
                             {"mean_tokens", r.mean_tokens},
                             {"structural_tokens", r.structural_tokens}});
    j["notes"] = notes;
    return j.dump(2) + "\n";
}

AblationTable ablation_sweep(AblationKind kind, const std::vector<double>& values,
                             const std::function<AblationRow(double)>& run) {
    if (values.empty()) throw Error(ErrorCode::invalid_argument, "ablation needs at least one value");
    AblationTable t;
    t.kind = kind;
    for (double v : values) {
        AblationRow row;
        try {
            row = run(v);
            row.ok = true;
        } catch (const std::exception& e) {
            row = AblationRow{};
            row.error = e.what();
        }
        row.value = v;
        t.rows.push_back(row);
    }
    if (kind == AblationKind::retention_ratio && !t.monotone_tokens())
        t.notes.push_back("mean generated tokens are not non-decreasing in the retention ratio");
    if (kind == AblationKind::curriculum) {
        const AblationRow *prog = nullptr, *oneshot = nullptr;
        for (const auto& r : t.rows) {
            if (!r.ok) continue;
            if (r.value == 1.0) prog = &r;
            if (r.value == 0.0) oneshot = &r;
        }
        if (prog && oneshot && prog->accuracy < oneshot->accuracy - 0.01)
            t.notes.push_back("progressive accuracy " + fmt(prog->accuracy) + " is more than one point below one-shot " +
                              fmt(oneshot->accuracy));
    }
    return t;
}

}  // namespace heima
