#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "heima/pipeline.hpp"

using namespace heima;
using nlohmann::json;

namespace {

int exit_code(ErrorCode c) {
    switch (c) {
        case ErrorCode::missing_artifact: return 2;
        case ErrorCode::config: return 3;
        default: return 1;
    }
}

std::string one_line(std::string s) {
    for (auto& ch : s)
        if (ch == '\n' || ch == '\r') ch = ' ';
    return s;
}

int fail(const std::string& code, const std::string& message, int status) {
    std::cerr << json{{"error", code}, {"message", one_line(message)}}.dump() << "\n";
    return status;
}

void emit(const json& j) { std::cout << j.dump() << "\n"; }

std::vector<double> parse_values(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size())
            throw Error(ErrorCode::invalid_argument, "bad value '" + item + "' in --values");
        out.push_back(v);
    }
    return out;
}

json train_summary(const TrainResult& r) {
    return {{"steps", r.log.size()},
            {"final_loss", r.log.empty() ? 0.0 : r.log.back().loss},
            {"checkpoints", r.checkpoints}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hidden-thinking encoder/decoder experiments on a synthetic grid-VQA task"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::vector<std::string> overrides;
    int threads = 0;
    app.add_option("-c,--config", config_path, "Run configuration (JSON)");
    app.add_option("--set", overrides, "Override a config field: dotted.key=value (repeatable)");
    app.add_option("--threads", threads, "Worker threads for training (default 1)")->check(CLI::PositiveNumber);

    auto* gen = app.add_subcommand("gen-data", "Generate the train and test splits and the vocabulary");
    auto* tenc = app.add_subcommand("train-encoder", "Train the reasoning model along the stage plan");
    std::string mode_name;
    tenc->add_option("--mode", mode_name, "progressive | one-shot | baseline (default: plan.mode)");
    auto* tdec = app.add_subcommand("train-decoder", "Train one explanatory decoder per stage");
    auto* infer = app.add_subcommand("infer", "Greedy inference on the test split with hidden-state export");
    infer->add_option("--mode", mode_name, "progressive | one-shot | baseline (default: plan.mode)");
    auto* expl = app.add_subcommand("explain", "Decode stage texts from exported hidden states");
    auto* eval = app.add_subcommand("eval", "Score inference and explanations into an evaluation report");

    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the analytic gradients");
    ModelConfig gc{50, 16, 1, 2, 0, 0};
    int seq_len = 12;
    double eps = 1e-4, tol = 1e-4;
    std::uint64_t gseed = 1;
    double perturb = 0.2;
    grad->add_option("--vocab-size", gc.vocab_size)->capture_default_str();
    grad->add_option("--d-model", gc.d_model)->capture_default_str();
    grad->add_option("--layers", gc.n_layers)->capture_default_str();
    grad->add_option("--heads", gc.n_heads)->capture_default_str();
    grad->add_option("--seq-len", seq_len)->capture_default_str();
    grad->add_option("--eps", eps)->capture_default_str();
    grad->add_option("--tol", tol, "Fail above this max relative error")->capture_default_str();
    grad->add_option("--seed", gseed)->capture_default_str();
    grad->add_option("--perturb", perturb, "Noise std added to the initial weights (0: check at initialisation)")
        ->capture_default_str();

    auto* abl = app.add_subcommand("ablate", "Sweep thinking tokens per stage, retention ratio or curriculum");
    std::string kind_name, values_text;
    bool structural_only = false;
    abl->add_option("--kind", kind_name, "tokens-per-stage | retention-ratio | curriculum")->required();
    abl->add_option("--values", values_text, "Comma-separated values (curriculum: 1 progressive, 0 one-shot)")
        ->required();
    abl->add_flag("--structural-only", structural_only, "Skip training; report structural token counts");

    auto* rep = app.add_subcommand("report", "Render an evaluation report as JSON and TSV");
    std::string report_path;
    rep->add_option("--input", report_path, "Report JSON (default: <reports>/eval.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 64);
    }

    try {
        if (grad->parsed()) {
            gc.d_ff = 4 * gc.d_model;
            gc.max_len = seq_len;
            gc.validate();
            auto p = init_params<double>(gc, gseed);
            if (perturb > 0) perturb_params(p, perturb, gseed + 1);
            std::mt19937_64 rng(gseed);
            MaskedSequence seq;
            for (int t = 0; t < seq_len; ++t) {
                seq.ids.push_back(static_cast<TokenId>(rng() % static_cast<std::uint64_t>(gc.vocab_size)));
                seq.loss_mask.push_back(t > 0);
            }
            auto r = grad_check(p, seq, eps, gseed);
            json groups = json::array();
            for (const auto& g : r.groups)
                groups.push_back({{"name", g.name}, {"coordinates", g.coordinates}, {"max_rel_error", g.max_rel_error}});
            emit({{"command", "gradcheck"},
                  {"max_rel_error", r.max_rel_error},
                  {"tol", tol},
                  {"perturb", perturb},
                  {"groups", groups}});
            if (!(r.max_rel_error < tol))
                return fail("numeric", "grad check max relative error " + std::to_string(r.max_rel_error) +
                                           " exceeds " + std::to_string(tol),
                            1);
            return 0;
        }

        if (config_path.empty()) return fail("config", "--config is required for this command", 3);
        if (threads > 0) overrides.push_back("threads=" + std::to_string(threads));
        auto cfg = load_run_config(config_path, overrides);
        const auto mode = mode_name.empty() ? cfg.mode : encoder_mode_from_string(mode_name);
        const json base{{"run_config_digest", cfg.digest()}};

        if (gen->parsed()) {
            auto f = run_gen_data(cfg);
            emit({{"command", "gen-data"},
                  {"train", f.train_path},
                  {"train_digest", f.train_digest},
                  {"test", f.test_path},
                  {"test_digest", f.test_digest},
                  {"run_config_digest", cfg.digest()}});
        } else if (tenc->parsed()) {
            auto r = run_train_encoder(cfg, mode);
            auto j = train_summary(r.train);
            j["command"] = "train-encoder";
            j["mode"] = std::string(to_string(mode));
            j["param_digest"] = r.param_digest;
            j["run_config_digest"] = cfg.digest();
            emit(j);
        } else if (tdec->parsed()) {
            auto r = run_train_decoder(cfg);
            json stages = json::array();
            for (const auto& t : r.train) stages.push_back(train_summary(t));
            emit({{"command", "train-decoder"},
                  {"hidden_export", r.hidden_path},
                  {"records", r.record_paths},
                  {"stages", stages},
                  {"run_config_digest", cfg.digest()}});
        } else if (infer->parsed()) {
            auto r = run_infer(cfg, mode);
            emit({{"command", "infer"},
                  {"mode", std::string(to_string(mode))},
                  {"results", r.results_path},
                  {"hidden_export", r.hidden_path},
                  {"hidden_export_digest", r.hidden_path.empty() ? "" : digest_file(r.hidden_path)},
                  {"mean_generated_tokens", mean_generated_tokens(r.results)},
                  {"encoder_digest", r.encoder_digest},
                  {"run_config_digest", cfg.digest()}});
        } else if (expl->parsed()) {
            auto ex = run_explain(cfg);
            emit({{"command", "explain"}, {"records", ex.size()}, {"run_config_digest", cfg.digest()}});
        } else if (eval->parsed()) {
            auto r = run_eval(cfg);
            auto j = json::parse(r.to_json());
            j["command"] = "eval";
            emit(j);
        } else if (abl->parsed()) {
            auto t = run_ablation(cfg, ablation_kind_from_string(kind_name), parse_values(values_text),
                                  structural_only);
            std::cout << t.to_tsv();
            for (const auto& n : t.notes) std::cout << "# " << n << "\n";
        } else if (rep->parsed()) {
            if (report_path.empty()) report_path = cfg.paths.reports + "/eval.json";
            std::ifstream in(report_path);
            if (!in) return fail("missing_artifact", "no evaluation report at " + report_path + "; run eval first", 2);
            std::stringstream ss;
            ss << in.rdbuf();
            auto r = EvalReport::from_json(ss.str());
            const auto tsv_path = report_path.substr(0, report_path.rfind('.')) + ".tsv";
            std::ofstream(tsv_path) << r.to_tsv();
            std::cout << r.to_json() << r.to_tsv();
        }
        return 0;
    } catch (const Error& e) {
        return fail(to_string(e.code()), e.what(), exit_code(e.code()));
    } catch (const std::exception& e) {
        return fail("internal", e.what(), 1);
    }
}
