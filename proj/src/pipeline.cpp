#include "heima/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace heima {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kInitTag = 0x1;
constexpr std::uint64_t kTrainTag = 0x2;
constexpr std::uint64_t kDecoderTag = 0x100;

std::string mode_name(EncoderMode m) { return std::string(to_string(m)); }

void make_parent(const std::string& path) {
    auto parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

std::string join_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

std::string inference_path(const RunConfig& cfg, EncoderMode m) {
    return join_path(cfg.paths.reports, "inference-" + mode_name(m) + ".jsonl");
}
std::string test_hidden_path(const RunConfig& cfg, EncoderMode m) {
    return join_path(cfg.paths.hidden, "test-" + mode_name(m) + ".hsx");
}
std::string explanations_path(const RunConfig& cfg) { return join_path(cfg.paths.reports, "explanations.jsonl"); }

void write_text(const std::string& path, const std::string& text) {
    make_parent(path);
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw Error(ErrorCode::io, "cannot write " + path);
}

void remove_if_exists(const std::string& path) {
    std::error_code ec;
    fs::remove(path, ec);
}

TrainOptions train_options(const RunConfig& cfg, const std::string& log_path) {
    TrainOptions o;
    o.optim = cfg.optim;
    o.threads = cfg.threads;
    o.log_path = log_path;
    make_parent(log_path);
    remove_if_exists(log_path);
    return o;
}

ModelConfig sized(ModelConfig m, const Vocab& v) {
    m.vocab_size = static_cast<int>(v.size());
    return m;
}

std::vector<std::string> words_of(const json& j) { return split_words(j.get<std::string>()); }

std::string fmt_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

double mean_of(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

}  // namespace

DatasetFiles run_gen_data(const RunConfig& cfg) {
    DatasetFiles f{cfg.paths.train_data, cfg.paths.test_data, "", ""};
    make_parent(f.train_path);
    make_parent(f.test_path);
    gen_dataset(cfg.gen, cfg.train_size, Split::train, f.train_path);
    gen_dataset(cfg.gen, cfg.test_size, Split::test, f.test_path);
    f.train_digest = digest_file(f.train_path);
    f.test_digest = digest_file(f.test_path);
    make_parent(cfg.paths.vocab);
    run_vocab(cfg).save(cfg.paths.vocab);
    write_text(join_path(cfg.paths.workdir, "run.json"), cfg.to_json() + "\n");
    return f;
}

std::vector<Sample> load_split(const RunConfig& cfg, Split split) {
    const auto& path = split == Split::train ? cfg.paths.train_data : cfg.paths.test_data;
    const auto expected = split == Split::train ? cfg.train_size : cfg.test_size;
    if (!fs::exists(path)) throw Error(ErrorCode::missing_artifact, "no dataset at " + path + "; run gen-data first");
    auto samples = read_dataset(path);
    if (samples.size() != expected)
        throw Error(ErrorCode::config, "dataset " + path + " holds " + std::to_string(samples.size()) +
                                           " samples but the config expects " + std::to_string(expected) +
                                           "; rerun gen-data");
    return samples;
}

std::string encoder_checkpoint_dir(const RunConfig& cfg, EncoderMode mode) {
    return join_path(cfg.paths.checkpoints, mode_name(mode));
}

std::string decoder_checkpoint_path(const RunConfig& cfg, int stage) {
    return join_path(join_path(cfg.paths.checkpoints, "decoder"), "decoder-stage" + std::to_string(stage) + ".ckpt");
}

std::string latest_checkpoint(const std::string& dir) {
    std::string best;
    std::error_code ec;
    if (fs::is_directory(dir, ec))
        for (const auto& e : fs::directory_iterator(dir))
            if (e.path().extension() == ".ckpt") best = std::max(best, e.path().string());
    if (best.empty()) throw Error(ErrorCode::missing_artifact, "no checkpoint in " + dir + "; run train-encoder first");
    return best;
}

EncoderRun run_train_encoder(const RunConfig& cfg, EncoderMode mode) {
    auto samples = load_split(cfg, Split::train);
    auto vocab = run_vocab(cfg);
    auto params = init_params<float>(sized(cfg.encoder, vocab), splitmix64(cfg.seed ^ kInitTag));

    EncoderTrainConfig ec;
    ec.plan = run_stage_plan(cfg, mode, samples.size());
    ec.spec = cfg.thinking;
    ec.seed = splitmix64(cfg.seed ^ kTrainTag);
    ec.checkpoint_dir = encoder_checkpoint_dir(cfg, mode);
    ec.kind = mode == EncoderMode::baseline ? "baseline" : "encoder";
    ec.vocab_digest = vocab.digest();
    ec.run_config_digest = cfg.digest();
    ec.options = train_options(cfg, join_path(cfg.paths.reports, "train-" + mode_name(mode) + ".jsonl"));

    std::error_code err;
    if (fs::is_directory(ec.checkpoint_dir, err))
        for (const auto& e : fs::directory_iterator(ec.checkpoint_dir))
            if (e.path().extension() == ".ckpt") fs::remove(e.path());

    EncoderRun run;
    run.train = train_encoder(params, samples, vocab, ec);
    run.checkpoint = run.train.checkpoints.back();
    run.param_digest = params.digest();
    return run;
}

LoadedCheckpoint load_encoder(const RunConfig& cfg, EncoderMode mode) {
    auto path = latest_checkpoint(encoder_checkpoint_dir(cfg, mode));
    auto ck = load_checkpoint(path);
    if (ck.info.vocab_digest != run_vocab(cfg).digest())
        throw Error(ErrorCode::config, "checkpoint " + path + " was trained with a different vocabulary");
    return ck;
}

InferRun run_infer(const RunConfig& cfg, EncoderMode mode) {
    auto ck = load_encoder(cfg, mode);
    auto samples = load_split(cfg, Split::test);
    auto vocab = run_vocab(cfg);
    const bool thinking = mode != EncoderMode::baseline;

    InferRun run;
    run.encoder_digest = ck.info.param_digest;
    InferOptions opts;
    opts.capture_hidden = thinking && cfg.capture == CaptureMode::generated;
    opts.encoder_digest = run.encoder_digest;
    run.results.reserve(samples.size());
    for (const auto& s : samples) run.results.push_back(infer_sample(ck.params, s, cfg.thinking, vocab, opts));

    run.results_path = inference_path(cfg, mode);
    make_parent(run.results_path);
    std::ofstream out(run.results_path, std::ios::binary);
    out << json{{"schema", "heima.inference.v1"},
                {"mode", mode_name(mode)},
                {"count", run.results.size()},
                {"encoder_digest", run.encoder_digest},
                {"vocab_digest", vocab.digest()},
                {"run_config_digest", cfg.digest()}}
               .dump()
        << "\n";
    for (const auto& r : run.results) {
        out << json{{"sample_id", r.sample_id},
                    {"emitted", join_words(vocab.decode(r.emitted_ids))},
                    {"emitted_ids", r.emitted_ids},
                    {"answer", join_words(r.answer_tokens)},
                    {"generated_token_count", r.generated_token_count},
                    {"wellformed",
                     {{"thinking_in_order", r.wellformed.thinking_in_order},
                      {"answer_delimited", r.wellformed.answer_delimited},
                      {"terminated", r.wellformed.terminated}}}}
                   .dump()
            << "\n";
    }
    if (!out) throw Error(ErrorCode::io, "cannot write " + run.results_path);

    if (thinking) {
        std::vector<HiddenStateRecord> records;
        if (cfg.capture == CaptureMode::teacher_forced) {
            for (const auto& s : samples) {
                auto r = capture_hidden_teacher_forced(ck.params, s, cfg.thinking, vocab, run.encoder_digest);
                records.insert(records.end(), r.begin(), r.end());
            }
        } else {
            for (const auto& r : run.results) records.insert(records.end(), r.hidden.begin(), r.hidden.end());
        }
        run.hidden_path = test_hidden_path(cfg, mode);
        make_parent(run.hidden_path);
        write_hidden_export(run.hidden_path,
                            {ck.params.config().d_model, run.encoder_digest, std::string(to_string(cfg.capture)),
                             vocab.digest(), cfg.digest()},
                            records);
    }
    return run;
}

InferenceFile read_inference(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::missing_artifact, "no inference results at " + path + "; run infer first");
    InferenceFile f;
    std::string line;
    try {
        std::getline(in, line);
        auto h = json::parse(line);
        if (h.at("schema").get<std::string>() != "heima.inference.v1")
            throw Error(ErrorCode::format, "unsupported inference schema in " + path);
        f.encoder_digest = h.at("encoder_digest").get<std::string>();
        f.run_config_digest = h.at("run_config_digest").get<std::string>();
        const auto count = h.at("count").get<std::size_t>();
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = json::parse(line);
            InferenceResult r;
            r.sample_id = j.at("sample_id").get<std::int64_t>();
            r.emitted_ids = j.at("emitted_ids").get<std::vector<TokenId>>();
            r.answer_tokens = words_of(j.at("answer"));
            r.generated_token_count = j.at("generated_token_count").get<std::size_t>();
            const auto& w = j.at("wellformed");
            r.wellformed = {w.at("thinking_in_order").get<bool>(), w.at("answer_delimited").get<bool>(),
                            w.at("terminated").get<bool>()};
            f.results.push_back(std::move(r));
        }
        if (f.results.size() != count) throw Error(ErrorCode::format, "truncated inference file " + path);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::format, "malformed inference file " + path + ": " + e.what());
    }
    return f;
}

DecoderRun run_train_decoder(const RunConfig& cfg) {
    if (cfg.mode == EncoderMode::baseline)
        throw Error(ErrorCode::config, "decoders need a hidden-thinking encoder but plan.mode is baseline");
    auto ck = load_encoder(cfg, cfg.mode);
    auto samples = load_split(cfg, Split::train);
    auto vocab = run_vocab(cfg);
    const auto digest = ck.info.param_digest;

    std::vector<HiddenStateRecord> hidden;
    for (const auto& s : samples) {
        auto r = capture_hidden_teacher_forced(ck.params, s, cfg.thinking, vocab, digest);
        hidden.insert(hidden.end(), r.begin(), r.end());
    }
    DecoderRun run;
    run.hidden_path = join_path(cfg.paths.hidden, "train-" + mode_name(cfg.mode) + ".hsx");
    make_parent(run.hidden_path);
    write_hidden_export(run.hidden_path,
                        {ck.params.config().d_model, digest, "teacher-forced", vocab.digest(), cfg.digest()}, hidden);

    for (int k = 0; k < cfg.thinking.stages(); ++k) {
        DecoderRecordFile file{ck.params.config().d_model, k, digest, cfg.explanatory_template, vocab.digest(),
                               cfg.digest(), build_decoder_records(hidden, k, vocab, digest, cfg.explanatory_template)};
        auto rec_path = join_path(cfg.paths.hidden, "decoder-stage" + std::to_string(k) + ".drx");
        write_decoder_records(rec_path, file);
        run.record_paths.push_back(rec_path);

        std::vector<TrainItem> items;
        items.reserve(file.records.size());
        for (const auto& r : file.records) items.push_back(decoder_item(r, vocab));

        auto q = init_params<float>(sized(cfg.decoder, vocab), splitmix64(cfg.seed ^ (kDecoderTag + k)));
        DecoderTrainConfig dc;
        const auto batch = static_cast<std::size_t>(cfg.decoder_training.batch_size);
        dc.steps = cfg.decoder_training.steps > 0 ? cfg.decoder_training.steps
                                                  : static_cast<int>((items.size() + batch - 1) / batch);
        dc.peak_lr = cfg.decoder_training.lr;
        dc.batch_size = cfg.decoder_training.batch_size;
        dc.seed = splitmix64(cfg.seed ^ (kDecoderTag + kTrainTag + k));
        dc.checkpoint_path = decoder_checkpoint_path(cfg, k);
        dc.vocab_digest = vocab.digest();
        dc.run_config_digest = cfg.digest();
        dc.options =
            train_options(cfg, join_path(cfg.paths.reports, "train-decoder-stage" + std::to_string(k) + ".jsonl"));
        run.train.push_back(train_decoder(q, items, dc));
        run.checkpoints.push_back(dc.checkpoint_path);
    }
    return run;
}

std::vector<Explanation> run_explain(const RunConfig& cfg) {
    auto vocab = run_vocab(cfg);
    const auto hidden_path = test_hidden_path(cfg, cfg.mode);
    if (!fs::exists(hidden_path))
        throw Error(ErrorCode::missing_artifact, "no hidden-state export at " + hidden_path + "; run infer first");
    auto exported = read_hidden_export(hidden_path);

    std::vector<Explanation> out;
    json decoder_digests = json::array();
    for (int k = 0; k < cfg.thinking.stages(); ++k) {
        const auto path = decoder_checkpoint_path(cfg, k);
        if (!fs::exists(path))
            throw Error(ErrorCode::missing_artifact, "no checkpoint at " + path + "; run train-decoder first");
        auto dec = load_checkpoint(path);
        decoder_digests.push_back(dec.info.param_digest);
        auto records = build_decoder_records(exported.records, k, vocab, exported.header.encoder_digest,
                                             cfg.explanatory_template);
        for (const auto& rec : records) {
            Explanation e{rec.sample_id, k, vocab.decode(rec.target), explain(dec.params, rec, vocab, cfg.explain_max_new),
                          {}};
            if (cfg.zero_ablation) {
                auto zero = rec;
                for (auto& h : zero.hidden) std::fill(h.begin(), h.end(), 0.0f);
                e.zero_text = explain(dec.params, zero, vocab, cfg.explain_max_new);
            }
            out.push_back(std::move(e));
        }
    }

    const auto path = explanations_path(cfg);
    make_parent(path);
    std::ofstream f(path, std::ios::binary);
    f << json{{"schema", "heima.explanations.v1"},
              {"count", out.size()},
              {"encoder_digest", exported.header.encoder_digest},
              {"decoder_digests", decoder_digests},
              {"run_config_digest", cfg.digest()},
              {"zero_ablation", cfg.zero_ablation}}
             .dump()
      << "\n";
    for (const auto& e : out)
        f << json{{"sample_id", e.sample_id},
                  {"stage", e.stage},
                  {"gold", join_words(e.gold)},
                  {"text", join_words(e.text)},
                  {"zero_text", join_words(e.zero_text)}}
                 .dump()
          << "\n";
    if (!f) throw Error(ErrorCode::io, "cannot write " + path);
    return out;
}

std::vector<Explanation> read_explanations(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::missing_artifact, "no explanations at " + path + "; run explain first");
    std::vector<Explanation> out;
    std::string line;
    try {
        std::getline(in, line);
        auto h = json::parse(line);
        if (h.at("schema").get<std::string>() != "heima.explanations.v1")
            throw Error(ErrorCode::format, "unsupported explanations schema in " + path);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = json::parse(line);
            out.push_back({j.at("sample_id").get<std::int64_t>(), j.at("stage").get<int>(), words_of(j.at("gold")),
                           words_of(j.at("text")), words_of(j.at("zero_text"))});
        }
        if (out.size() != h.at("count").get<std::size_t>())
            throw Error(ErrorCode::format, "truncated explanations file " + path);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::format, "malformed explanations file " + path + ": " + e.what());
    }
    return out;
}

EvalReport run_eval(const RunConfig& cfg) {
    auto samples = load_split(cfg, Split::test);
    auto vocab = run_vocab(cfg);
    EvalReport rep;
    rep.digests["run_config"] = cfg.digest();
    rep.digests["vocab"] = vocab.digest();
    rep.digests["test_data"] = digest_file(cfg.paths.test_data);

    auto main = read_inference(inference_path(cfg, cfg.mode));
    rep.digests["encoder"] = main.encoder_digest;
    auto dataset_eval = [&](const InferenceFile& f, const std::string& name) {
        DatasetEval d;
        d.answer_accuracy = answer_accuracy(f.results, samples);
        d.mean_generated_tokens = mean_generated_tokens(f.results);
        d.samples = f.results.size();
        std::size_t malformed = 0;
        for (const auto& r : f.results) malformed += r.wellformed.all() ? 0 : 1;
        if (malformed && name == "test")
            rep.notes.push_back(std::to_string(malformed) + " of " + std::to_string(f.results.size()) +
                                " emissions are not well formed");
        return d;
    };
    auto d = dataset_eval(main, "test");

    const auto baseline_path = inference_path(cfg, EncoderMode::baseline);
    if (cfg.mode != EncoderMode::baseline && fs::exists(baseline_path)) {
        auto base = read_inference(baseline_path);
        d.compression_ratio = token_stats(main.results, base.results).compression_ratio;
        rep.datasets["test-baseline"] = dataset_eval(base, "test-baseline");
        rep.digests["baseline_encoder"] = base.encoder_digest;
    }
    rep.datasets["test"] = d;

    if (fs::exists(explanations_path(cfg))) {
        auto ex = read_explanations(explanations_path(cfg));
        for (int k = 0; k < cfg.thinking.stages(); ++k) {
            std::vector<double> b, r, z;
            for (const auto& e : ex) {
                if (e.stage != k) continue;
                b.push_back(bleu4(e.text, e.gold));
                r.push_back(rouge_l(e.text, e.gold));
                if (cfg.zero_ablation) z.push_back(bleu4(e.zero_text, e.gold));
            }
            StageEval s;
            s.bleu4 = mean_of(b);
            s.rouge_l = mean_of(r);
            if (cfg.zero_ablation) s.zero_bleu4 = mean_of(z);
            s.records = b.size();
            const auto name = cfg.thinking.stage_names[static_cast<std::size_t>(k)];
            rep.stages[name] = s;
            const auto path = decoder_checkpoint_path(cfg, k);
            if (fs::exists(path)) rep.digests["decoder_" + name] = read_checkpoint_info(path).param_digest;
        }
    }
    write_text(join_path(cfg.paths.reports, "eval.json"), rep.to_json());
    write_text(join_path(cfg.paths.reports, "eval.tsv"), rep.to_tsv());
    return rep;
}

AblationTable run_ablation(const RunConfig& cfg, AblationKind kind, const std::vector<double>& values,
                           bool structural_only) {
    if (structural_only && kind == AblationKind::curriculum)
        throw Error(ErrorCode::invalid_argument, "the curriculum ablation has no structural form");
    auto test = load_split(cfg, Split::test);
    auto table = ablation_sweep(kind, values, [&](double v) {
        RunConfig c = cfg;
        const auto dir = join_path(join_path(cfg.paths.workdir, "ablations"),
                                   std::string(to_string(kind)) + "-" + fmt_value(v));
        c.paths.checkpoints = join_path(dir, "checkpoints");
        c.paths.hidden = join_path(dir, "hidden");
        c.paths.reports = join_path(dir, "reports");
        switch (kind) {
            case AblationKind::tokens_per_stage:
                if (v < 1 || v != std::floor(v))
                    throw Error(ErrorCode::invalid_argument, "tokens per stage must be a positive integer");
                c.thinking.mode = ThinkingMode::fixed_count;
                c.thinking.tokens_per_stage = static_cast<int>(v);
                break;
            case AblationKind::retention_ratio:
                c.thinking.mode = ThinkingMode::retention_ratio;
                c.thinking.ratio = v;
                break;
            case AblationKind::curriculum:
                if (v != 0.0 && v != 1.0) throw Error(ErrorCode::invalid_argument, "curriculum values are 0 or 1");
                c.mode = v == 1.0 ? EncoderMode::progressive : EncoderMode::one_shot;
                break;
        }
        c.thinking.validate();
        AblationRow row;
        std::vector<double> structural;
        for (const auto& s : test) structural.push_back(static_cast<double>(structural_token_count(s, c.thinking)));
        row.structural_tokens = mean_of(structural);
        if (structural_only) {
            row.mean_tokens = row.structural_tokens;
            return row;
        }
        run_train_encoder(c, c.mode);
        auto inf = run_infer(c, c.mode);
        row.accuracy = answer_accuracy(inf.results, test);
        row.mean_tokens = mean_generated_tokens(inf.results);
        return row;
    });
    if (structural_only) table.notes.push_back("structural counts only; accuracy not measured");
    write_text(join_path(cfg.paths.reports, "ablation-" + std::string(to_string(kind)) + ".tsv"), table.to_tsv());
    write_text(join_path(cfg.paths.reports, "ablation-" + std::string(to_string(kind)) + ".json"), table.to_json());
    return table;
}

EvalReport run_pipeline(const RunConfig& cfg) {
    run_gen_data(cfg);
    run_train_encoder(cfg, cfg.mode);
    run_infer(cfg, cfg.mode);
    if (cfg.mode != EncoderMode::baseline) {
        run_train_decoder(cfg);
        run_explain(cfg);
    }
    return run_eval(cfg);
}

}  // namespace heima
