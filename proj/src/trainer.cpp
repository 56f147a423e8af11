#include "heima/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <thread>

#include <json.hpp>

namespace heima {

namespace {

// Fisher-Yates over a splitmix stream.
void shuffle(std::vector<std::size_t>& order, std::uint64_t seed) {
    std::uint64_t state = seed;
    for (std::size_t i = order.size(); i > 1; --i) {
        state = splitmix64(state);
        std::swap(order[i - 1], order[state % i]);
    }
}

void accumulate(Params<float>& acc, const Params<float>& g) {
    for (std::size_t t = 0; t < acc.tensors().size(); ++t) {
        auto& a = acc.tensors()[t].data;
        const auto& b = g.tensors()[t].data;
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    }
}

}  // namespace

double lr_at(std::int64_t step, std::int64_t total, double peak, std::int64_t warmup) {
    if (step <= 0) return 0.0;
    if (warmup > 0 && step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
    if (step >= total) return 0.0;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
double clip_global_norm(Params<T>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& t : grads.tensors())
        for (T v : t.data) sq += static_cast<double>(v) * static_cast<double>(v);
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) {
        for (const auto& t : grads.tensors())
            for (T v : t.data)
                if (!std::isfinite(v)) throw Error(ErrorCode::numeric, "non-finite gradient in tensor " + t.name);
        throw Error(ErrorCode::numeric, "gradient norm overflow");
    }
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& t : grads.tensors())
            for (T& v : t.data) v = static_cast<T>(static_cast<double>(v) * scale);
    }
    return norm;
}

template double clip_global_norm<float>(Params<float>&, double);
template double clip_global_norm<double>(Params<double>&, double);

void optim_step(Params<float>& p, const Params<float>& grads, OptimState& st, double lr, const OptimConfig& cfg) {
    if (st.m.tensors().size() != p.tensors().size()) st = OptimState(p.config());
    st.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    const double decay = 1.0 - lr * cfg.weight_decay;
    for (std::size_t t = 0; t < p.tensors().size(); ++t) {
        auto& w = p.tensors()[t].data;
        const auto& g = grads.tensors()[t].data;
        auto& m = st.m.tensors()[t].data;
        auto& v = st.v.tensors()[t].data;
        if (g.size() != w.size()) throw Error(ErrorCode::invalid_argument, "gradient shape mismatch");
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i];
            const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
            w[i] = static_cast<float>(static_cast<double>(w[i]) * decay - lr * update);
        }
    }
}

double batch_loss_and_grads(const Params<float>& p, const std::vector<const TrainItem*>& batch, Params<float>& grads,
                            int threads) {
    if (batch.empty()) throw Error(ErrorCode::invalid_argument, "empty batch");
    const std::size_t n = batch.size();
    std::vector<double> losses(n, 0.0);
    if (grads.tensors().size() != p.tensors().size()) grads = Params<float>(p.config());
    grads.zero();

    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
    if (workers <= 1) {
        Params<float> item(p.config());
        for (std::size_t i = 0; i < n; ++i) {
            losses[i] = loss_and_grads_into<float>(p, batch[i]->seq, batch[i]->overrides, item);
            accumulate(grads, item);
        }
    } else {
        std::vector<Params<float>> per_item(n);
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = w; i < n; i += workers)
                        losses[i] = loss_and_grads_into<float>(p, batch[i]->seq, batch[i]->overrides, per_item[i]);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
        for (std::size_t i = 0; i < n; ++i) accumulate(grads, per_item[i]);
    }
    const float inv = 1.0f / static_cast<float>(n);
    for (auto& t : grads.tensors())
        for (auto& v : t.data) v *= inv;
    double total = 0.0;
    for (double l : losses) total += l;
    return total / static_cast<double>(n);
}

std::vector<StepRecord> train_phase(Params<float>& p, const std::vector<TrainItem>& items, const PhaseSpec& phase,
                                    const TrainOptions& opts, std::int64_t& global_step) {
    if (items.empty()) throw Error(ErrorCode::invalid_argument, "no training items for phase " + phase.name);
    if (phase.steps < 1 || phase.batch_size < 1)
        throw Error(ErrorCode::invalid_argument, "phase " + phase.name + " needs positive steps and batch size");

    std::ofstream log;
    if (!opts.log_path.empty()) {
        log.open(opts.log_path, std::ios::app);
        if (!log) throw Error(ErrorCode::io, "cannot open metrics log " + opts.log_path);
    }

    std::vector<std::size_t> order(items.size());
    std::uint64_t pass = 0;
    auto reshuffle = [&] {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle(order, splitmix64(phase.shuffle_seed ^ splitmix64(pass++)));
    };
    reshuffle();
    std::size_t cursor = 0;

    // The schedule horizon is steps + 1 so the final update still has a non-zero rate.
    const std::int64_t horizon = phase.steps + 1;
    const std::int64_t warmup = std::min<std::int64_t>(opts.optim.warmup, phase.steps);
    OptimState state(p.config());
    Params<float> grads(p.config());
    std::vector<StepRecord> records;
    std::vector<const TrainItem*> batch;
    for (int step = 0; step < phase.steps; ++step) {
        batch.clear();
        while (batch.size() < static_cast<std::size_t>(phase.batch_size)) {
            if (cursor == order.size()) {
                reshuffle();
                cursor = 0;
            }
            batch.push_back(&items[order[cursor++]]);
        }
        ++global_step;
        double loss = 0.0, norm = 0.0;
        try {
            loss = batch_loss_and_grads(p, batch, grads, opts.threads);
            norm = clip_global_norm(grads, opts.optim.clip_norm);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::numeric) throw;
            std::string ids;
            for (const auto* it : batch) ids += (ids.empty() ? "" : ",") + std::to_string(it->id);
            throw Error(ErrorCode::numeric, std::string(e.what()) + " at step " + std::to_string(global_step) +
                                                " in phase " + phase.name + " (samples " + ids + ")");
        }
        const double lr = lr_at(step + 1, horizon, phase.peak_lr, warmup);
        optim_step(p, grads, state, lr, opts.optim);

        StepRecord rec{global_step, phase.name, loss, lr, norm};
        if (log) {
            nlohmann::json j{{"step", rec.step}, {"phase", rec.phase}, {"loss", rec.loss}, {"lr", rec.lr},
                             {"grad_norm", rec.grad_norm}};
            log << j.dump() << '\n';
        }
        if (opts.on_step) opts.on_step(rec);
        records.push_back(std::move(rec));
    }
    return records;
}

std::string checkpoint_name(const std::string& kind, std::size_t phase_index, const std::string& phase,
                            std::int64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%02zu", phase_index);
    return kind + "-p" + buf + "-" + phase + "-step" + std::to_string(step) + ".ckpt";
}

TrainResult train_encoder(Params<float>& p, const std::vector<Sample>& samples, const Vocab& vocab,
                          const EncoderTrainConfig& cfg) {
    if (samples.empty()) throw Error(ErrorCode::invalid_argument, "no training samples");
    if (cfg.plan.phases.empty()) throw Error(ErrorCode::invalid_argument, "empty stage plan");
    if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);
    const auto max_len = static_cast<std::size_t>(p.config().max_len);

    TrainResult result;
    std::int64_t global_step = 0;
    for (std::size_t i = 0; i < cfg.plan.phases.size(); ++i) {
        const auto& phase = cfg.plan.phases[i];
        std::vector<TrainItem> items;
        items.reserve(samples.size());
        for (const auto& s : samples) items.push_back({s.id, assemble_sequence(s, phase.s, cfg.spec, vocab, max_len), {}});
        PhaseSpec ps{phase.name, phase.steps, phase.peak_lr, phase.batch_size, splitmix64(cfg.seed ^ splitmix64(i + 1))};
        auto recs = train_phase(p, items, ps, cfg.options, global_step);
        result.log.insert(result.log.end(), recs.begin(), recs.end());
        if (!cfg.checkpoint_dir.empty()) {
            auto path = (std::filesystem::path(cfg.checkpoint_dir) / checkpoint_name(cfg.kind, i, phase.name, global_step))
                            .string();
            save_checkpoint(path, p, {p.config(), cfg.kind, phase.name, global_step, "", cfg.vocab_digest,
                                      cfg.run_config_digest});
            result.checkpoints.push_back(path);
        }
    }
    return result;
}

TrainResult train_decoder(Params<float>& q, const std::vector<TrainItem>& items, const DecoderTrainConfig& cfg) {
    if (items.empty()) throw Error(ErrorCode::invalid_argument, "no decoder records");
    const auto d = static_cast<std::size_t>(q.config().d_model);
    for (const auto& it : items)
        for (const auto& ov : it.overrides)
            if (ov.vector.size() != d)
                throw Error(ErrorCode::invalid_argument, "record " + std::to_string(it.id) + " carries hidden width " +
                                                             std::to_string(ov.vector.size()) + ", decoder d_model is " +
                                                             std::to_string(d));
    PhaseSpec ps{"decoder", cfg.steps, cfg.peak_lr, cfg.batch_size, splitmix64(cfg.seed)};
    TrainResult result;
    std::int64_t global_step = 0;
    result.log = train_phase(q, items, ps, cfg.options, global_step);
    if (!cfg.checkpoint_path.empty()) {
        auto parent = std::filesystem::path(cfg.checkpoint_path).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        save_checkpoint(cfg.checkpoint_path, q,
                        {q.config(), "decoder", "decoder", global_step, "", cfg.vocab_digest, cfg.run_config_digest});
        result.checkpoints.push_back(cfg.checkpoint_path);
    }
    return result;
}

}  // namespace heima
