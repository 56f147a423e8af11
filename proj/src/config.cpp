#include "heima/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "heima/explainer.hpp"

namespace heima {

using nlohmann::json;

std::string_view to_string(EncoderMode mode) {
    switch (mode) {
        case EncoderMode::progressive: return "progressive";
        case EncoderMode::one_shot: return "one-shot";
        case EncoderMode::baseline: return "baseline";
    }
    return "progressive";
}

EncoderMode encoder_mode_from_string(std::string_view name) {
    if (name == "progressive") return EncoderMode::progressive;
    if (name == "one-shot") return EncoderMode::one_shot;
    if (name == "baseline") return EncoderMode::baseline;
    throw Error(ErrorCode::invalid_argument, "unknown encoder mode: " + std::string(name));
}

namespace {

enum class Kind { integer, unsigned_integer, number, string, boolean, string_list, integer_list };

struct Field {
    std::string path;
    Kind kind;
    json fallback;  // null: required
};

const char* kind_name(Kind k) {
    switch (k) {
        case Kind::integer: return "integer";
        case Kind::unsigned_integer: return "unsigned integer";
        case Kind::number: return "number";
        case Kind::string: return "string";
        case Kind::boolean: return "boolean";
        case Kind::string_list: return "list of strings";
        case Kind::integer_list: return "list of integers";
    }
    return "value";
}

bool matches(const json& v, Kind k) {
    switch (k) {
        case Kind::integer: return v.is_number_integer();
        case Kind::unsigned_integer: return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
        case Kind::number: return v.is_number();
        case Kind::string: return v.is_string();
        case Kind::boolean: return v.is_boolean();
        case Kind::string_list:
            if (!v.is_array()) return false;
            for (const auto& e : v)
                if (!e.is_string()) return false;
            return true;
        case Kind::integer_list:
            if (!v.is_array()) return false;
            for (const auto& e : v)
                if (!e.is_number_integer()) return false;
            return true;
    }
    return false;
}

std::vector<Field> fields() {
    GenConfig g;
    ThinkingTokenSpec t;
    PlanConfig p;
    OptimConfig o;
    DecoderTraining d;
    json kinds = json::array();
    for (auto k : all_question_kinds()) kinds.push_back(std::string(to_string(k)));
    std::vector<Field> f{
        {"schema", Kind::string, nullptr},
        {"seed", Kind::unsigned_integer, nullptr},
        {"threads", Kind::integer, 1},
        {"precision", Kind::string, "float32"},
        {"paths.workdir", Kind::string, nullptr},
        {"paths.train_data", Kind::string, "data/train.jsonl"},
        {"paths.test_data", Kind::string, "data/test.jsonl"},
        {"paths.vocab", Kind::string, "vocab.txt"},
        {"paths.checkpoints", Kind::string, "checkpoints"},
        {"paths.hidden", Kind::string, "hidden"},
        {"paths.reports", Kind::string, "reports"},
        {"data.train_size", Kind::integer, nullptr},
        {"data.test_size", Kind::integer, nullptr},
        {"data.grid_size", Kind::integer, g.grid_size},
        {"data.fill_probability", Kind::number, g.fill_probability},
        {"data.colors", Kind::string_list, g.colors},
        {"data.shapes", Kind::string_list, g.shapes},
        {"data.question_kinds", Kind::string_list, kinds},
        {"thinking.stages", Kind::string_list, t.stage_names},
        {"thinking.mode", Kind::string, "fixed"},
        {"thinking.tokens_per_stage", Kind::integer, t.tokens_per_stage},
        {"thinking.ratio", Kind::number, t.ratio},
        {"plan.mode", Kind::string, "progressive"},
        {"plan.total_steps", Kind::integer, p.total_steps},
        {"plan.phase_steps", Kind::integer_list, json::array()},
        {"plan.encode_lr", Kind::number, p.encode_lr},
        {"plan.recover_lr", Kind::number, p.recover_lr},
        {"plan.encode_batch", Kind::integer, p.encode_batch},
        {"plan.recover_batch", Kind::integer, p.recover_batch},
        {"plan.recovering", Kind::boolean, p.recovering},
        {"optim.weight_decay", Kind::number, o.weight_decay},
        {"optim.warmup", Kind::integer, o.warmup},
        {"optim.clip_norm", Kind::number, o.clip_norm},
        {"optim.beta1", Kind::number, o.beta1},
        {"optim.beta2", Kind::number, o.beta2},
        {"optim.eps", Kind::number, o.eps},
        {"decoder_training.steps", Kind::integer, d.steps},
        {"decoder_training.lr", Kind::number, d.lr},
        {"decoder_training.batch_size", Kind::integer, d.batch_size},
        {"explain.template", Kind::string, std::string(kDefaultExplanatoryTemplate)},
        {"explain.max_new", Kind::integer, 64},
        {"explain.capture", Kind::string, "teacher-forced"},
        {"explain.zero_ablation", Kind::boolean, true},
    };
    for (const char* model : {"encoder", "decoder"})
        for (const char* key : {"d_model", "n_layers", "n_heads", "d_ff", "max_len"})
            f.push_back({std::string(model) + "." + key, Kind::integer, nullptr});
    return f;
}

void flatten(const json& node, const std::string& prefix, std::map<std::string, json>& out) {
    for (auto it = node.begin(); it != node.end(); ++it) {
        auto key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it->is_object())
            flatten(*it, key, out);
        else
            out[key] = *it;
    }
}

std::string join(const std::vector<std::string>& items) {
    std::string s;
    for (const auto& i : items) s += (s.empty() ? "" : ", ") + i;
    return s;
}

std::string resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    if (path.is_relative()) path = base / path;
    return path.lexically_normal().string();
}

json model_json(const ModelConfig& m) {
    return {{"d_model", m.d_model}, {"n_layers", m.n_layers}, {"n_heads", m.n_heads}, {"d_ff", m.d_ff},
            {"max_len", m.max_len}};
}

json config_json(const RunConfig& c, bool with_paths) {
    json kinds = json::array();
    for (auto k : c.gen.question_kinds) kinds.push_back(std::string(to_string(k)));
    json j{
        {"schema", std::string(kRunConfigSchema)},
        {"seed", c.seed},
        {"precision", c.precision},
        {"data",
         {{"train_size", c.train_size},
          {"test_size", c.test_size},
          {"grid_size", c.gen.grid_size},
          {"fill_probability", c.gen.fill_probability},
          {"colors", c.gen.colors},
          {"shapes", c.gen.shapes},
          {"question_kinds", kinds}}},
        {"encoder", model_json(c.encoder)},
        {"decoder", model_json(c.decoder)},
        {"thinking",
         {{"stages", c.thinking.stage_names},
          {"mode", c.thinking.mode == ThinkingMode::fixed_count ? "fixed" : "retention"},
          {"tokens_per_stage", c.thinking.tokens_per_stage},
          {"ratio", c.thinking.ratio}}},
        {"plan",
         {{"mode", std::string(to_string(c.mode))},
          {"total_steps", c.plan.total_steps},
          {"phase_steps", c.plan.phase_steps},
          {"encode_lr", c.plan.encode_lr},
          {"recover_lr", c.plan.recover_lr},
          {"encode_batch", c.plan.encode_batch},
          {"recover_batch", c.plan.recover_batch},
          {"recovering", c.plan.recovering}}},
        {"optim",
         {{"weight_decay", c.optim.weight_decay},
          {"warmup", c.optim.warmup},
          {"clip_norm", c.optim.clip_norm},
          {"beta1", c.optim.beta1},
          {"beta2", c.optim.beta2},
          {"eps", c.optim.eps}}},
        {"decoder_training",
         {{"steps", c.decoder_training.steps},
          {"lr", c.decoder_training.lr},
          {"batch_size", c.decoder_training.batch_size}}},
        {"explain",
         {{"template", c.explanatory_template},
          {"max_new", c.explain_max_new},
          {"capture", std::string(to_string(c.capture))},
          {"zero_ablation", c.zero_ablation}}},
    };
    if (with_paths) {
        j["threads"] = c.threads;
        j["paths"] = {{"workdir", c.paths.workdir},         {"train_data", c.paths.train_data},
                      {"test_data", c.paths.test_data},     {"vocab", c.paths.vocab},
                      {"checkpoints", c.paths.checkpoints}, {"hidden", c.paths.hidden},
                      {"reports", c.paths.reports}};
    }
    return j;
}

}  // namespace

std::string RunConfig::to_json() const { return config_json(*this, true).dump(2); }

std::string RunConfig::digest() const { return digest_hex(config_json(*this, false).dump()); }

std::string run_config_template() {
    json j = json::object();
    for (const auto& f : fields()) j[json::json_pointer("/" + [&] {
             auto p = f.path;
             for (auto& ch : p)
                 if (ch == '.') ch = '/';
             return p;
         }())] = f.fallback;
    j["schema"] = std::string(kRunConfigSchema);
    return j.dump(2);
}

RunConfig parse_run_config(std::string_view json_text, const std::vector<std::string>& overrides) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::config, std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw Error(ErrorCode::config, "config must be a JSON object");

    const auto schema = fields();
    std::map<std::string, const Field*> known;
    for (const auto& f : schema) known[f.path] = &f;

    std::vector<std::string> missing, unknown, mistyped, invalid;
    std::map<std::string, json> given;
    flatten(doc, "", given);
    for (const auto& ov : overrides) {
        auto eq = ov.find('=');
        if (eq == std::string::npos || eq == 0) {
            invalid.push_back("override '" + ov + "' is not key=value");
            continue;
        }
        auto key = ov.substr(0, eq);
        auto text = ov.substr(eq + 1);
        json v = json::parse(text, nullptr, false);
        given[key] = v.is_discarded() ? json(text) : v;
    }
    for (const auto& [key, value] : given)
        if (!known.count(key)) unknown.push_back(key);

    std::map<std::string, json> v;
    for (const auto& f : schema) {
        auto it = given.find(f.path);
        const json& val = it != given.end() ? it->second : f.fallback;
        if (val.is_null()) {
            missing.push_back(f.path);
            continue;
        }
        if (!matches(val, f.kind)) {
            mistyped.push_back(f.path + " (expected " + kind_name(f.kind) + ")");
            continue;
        }
        v[f.path] = val;
    }
    if (!missing.empty() || !unknown.empty() || !mistyped.empty() || !invalid.empty()) {
        std::vector<std::string> parts;
        if (!missing.empty()) parts.push_back("missing fields: " + join(missing));
        if (!unknown.empty()) parts.push_back("unknown fields: " + join(unknown));
        if (!mistyped.empty()) parts.push_back("wrong types: " + join(mistyped));
        if (!invalid.empty()) parts.push_back(join(invalid));
        std::string msg = "invalid config: ";
        for (std::size_t i = 0; i < parts.size(); ++i) msg += (i ? "; " : "") + parts[i];
        throw Error(ErrorCode::config, msg);
    }

    RunConfig c;
    auto check = [&](bool ok, const std::string& what) {
        if (!ok) invalid.push_back(what);
    };
    auto guarded = [&](auto&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            invalid.push_back(e.what());
        }
    };
    check(v["schema"].get<std::string>() == kRunConfigSchema,
          "schema must be " + std::string(kRunConfigSchema));
    c.seed = v["seed"].get<std::uint64_t>();
    c.threads = v["threads"].get<int>();
    check(c.threads >= 1, "threads must be >= 1");
    c.precision = v["precision"].get<std::string>();
    check(c.precision == "float32", "precision must be float32");

    auto train = v["data.train_size"].get<std::int64_t>();
    auto test = v["data.test_size"].get<std::int64_t>();
    check(train >= 1 && test >= 1, "data sizes must be >= 1");
    c.train_size = static_cast<std::size_t>(std::max<std::int64_t>(train, 0));
    c.test_size = static_cast<std::size_t>(std::max<std::int64_t>(test, 0));
    c.gen.grid_size = v["data.grid_size"].get<int>();
    c.gen.fill_probability = v["data.fill_probability"].get<double>();
    c.gen.colors = v["data.colors"].get<std::vector<std::string>>();
    c.gen.shapes = v["data.shapes"].get<std::vector<std::string>>();
    c.gen.seed = c.seed;
    c.gen.question_kinds.clear();
    guarded([&] {
        for (const auto& k : v["data.question_kinds"].get<std::vector<std::string>>())
            c.gen.question_kinds.push_back(question_kind_from_string(k));
    });

    c.thinking.stage_names = v["thinking.stages"].get<std::vector<std::string>>();
    c.gen.stage_names = c.thinking.stage_names;
    auto tmode = v["thinking.mode"].get<std::string>();
    check(tmode == "fixed" || tmode == "retention", "thinking.mode must be fixed or retention");
    c.thinking.mode = tmode == "retention" ? ThinkingMode::retention_ratio : ThinkingMode::fixed_count;
    c.thinking.tokens_per_stage = v["thinking.tokens_per_stage"].get<int>();
    c.thinking.ratio = v["thinking.ratio"].get<double>();
    guarded([&] { c.thinking.validate(); });
    guarded([&] { c.gen.validate(); });

    for (auto* m : {&c.encoder, &c.decoder}) {
        const std::string p = m == &c.encoder ? "encoder." : "decoder.";
        m->vocab_size = 1;
        m->d_model = v[p + "d_model"].get<int>();
        m->n_layers = v[p + "n_layers"].get<int>();
        m->n_heads = v[p + "n_heads"].get<int>();
        m->d_ff = v[p + "d_ff"].get<int>();
        m->max_len = v[p + "max_len"].get<int>();
        guarded([&] { m->validate(); });
    }
    check(c.encoder.d_model == c.decoder.d_model, "encoder.d_model and decoder.d_model must be equal");

    guarded([&] { c.mode = encoder_mode_from_string(v["plan.mode"].get<std::string>()); });
    c.plan.stages = c.thinking.stages();
    c.plan.total_steps = v["plan.total_steps"].get<int>();
    c.plan.phase_steps = v["plan.phase_steps"].get<std::vector<int>>();
    c.plan.encode_lr = v["plan.encode_lr"].get<double>();
    c.plan.recover_lr = v["plan.recover_lr"].get<double>();
    c.plan.encode_batch = v["plan.encode_batch"].get<int>();
    c.plan.recover_batch = v["plan.recover_batch"].get<int>();
    c.plan.recovering = v["plan.recovering"].get<bool>();
    check(c.plan.total_steps >= 0, "plan.total_steps must be >= 0");
    check(c.plan.encode_lr > 0 && c.plan.recover_lr > 0, "learning rates must be positive");
    check(c.plan.encode_batch >= 1 && c.plan.recover_batch >= 1, "batch sizes must be >= 1");

    c.optim.weight_decay = v["optim.weight_decay"].get<double>();
    c.optim.warmup = v["optim.warmup"].get<int>();
    c.optim.clip_norm = v["optim.clip_norm"].get<double>();
    c.optim.beta1 = v["optim.beta1"].get<double>();
    c.optim.beta2 = v["optim.beta2"].get<double>();
    c.optim.eps = v["optim.eps"].get<double>();
    check(c.optim.warmup >= 0 && c.optim.clip_norm > 0, "optim.warmup must be >= 0 and optim.clip_norm > 0");

    c.decoder_training.steps = v["decoder_training.steps"].get<int>();
    c.decoder_training.lr = v["decoder_training.lr"].get<double>();
    c.decoder_training.batch_size = v["decoder_training.batch_size"].get<int>();
    check(c.decoder_training.steps >= 0 && c.decoder_training.batch_size >= 1 && c.decoder_training.lr > 0,
          "decoder_training needs steps >= 0, batch_size >= 1 and lr > 0");

    c.explanatory_template = v["explain.template"].get<std::string>();
    check(c.explanatory_template.find("{question}") != std::string::npos &&
              c.explanatory_template.find("{thinking}") != std::string::npos,
          "explain.template needs {question} and {thinking} slots");
    auto max_new = v["explain.max_new"].get<int>();
    check(max_new >= 1, "explain.max_new must be >= 1");
    c.explain_max_new = static_cast<std::size_t>(std::max(max_new, 1));
    guarded([&] { c.capture = capture_mode_from_string(v["explain.capture"].get<std::string>()); });
    c.zero_ablation = v["explain.zero_ablation"].get<bool>();

    std::filesystem::path root = std::filesystem::current_path();
    if (const char* env = std::getenv("HEIMA_ROOT"); env && *env) root = env;
    c.paths.workdir = resolve(root, v["paths.workdir"].get<std::string>());
    c.paths.train_data = resolve(c.paths.workdir, v["paths.train_data"].get<std::string>());
    c.paths.test_data = resolve(c.paths.workdir, v["paths.test_data"].get<std::string>());
    c.paths.vocab = resolve(c.paths.workdir, v["paths.vocab"].get<std::string>());
    c.paths.checkpoints = resolve(c.paths.workdir, v["paths.checkpoints"].get<std::string>());
    c.paths.hidden = resolve(c.paths.workdir, v["paths.hidden"].get<std::string>());
    c.paths.reports = resolve(c.paths.workdir, v["paths.reports"].get<std::string>());

    if (!invalid.empty()) throw Error(ErrorCode::config, "invalid config: " + join(invalid));
    return c;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::missing_artifact, "cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), overrides);
}

Vocab run_vocab(const RunConfig& cfg) {
    auto words = template_words(cfg.explanatory_template);
    return register_thinking_tokens(build_vocab(make_grammar(cfg.gen, words)), cfg.thinking);
}

StagePlan run_stage_plan(const RunConfig& cfg, EncoderMode mode, std::size_t dataset_size) {
    PlanConfig pc = cfg.plan;
    pc.stages = cfg.thinking.stages();
    if (mode != EncoderMode::baseline) {
        pc.progressive = mode == EncoderMode::progressive;
        return build_stage_plan(pc, dataset_size);
    }
    pc.progressive = true;
    auto reference = build_stage_plan(pc, dataset_size);
    StagePlan plan;
    plan.stages = pc.stages;
    plan.phases.push_back({"baseline", 0, false, reference.total_steps(), pc.encode_lr, pc.encode_batch});
    return plan;
}

}  // namespace heima
