#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "heima/checkpoint.hpp"
#include "heima/curriculum.hpp"
#include "heima/net.hpp"

namespace heima {

struct OptimConfig {
    double weight_decay = 0.01;
    int warmup = 100;
    double clip_norm = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptimState {
    Params<float> m;
    Params<float> v;
    std::int64_t step = 0;

    OptimState() = default;
    explicit OptimState(const ModelConfig& cfg) : m(cfg), v(cfg) {}
};

/// Linear warmup from 0 to peak over `warmup` steps, then cosine decay to 0 at `total`.
double lr_at(std::int64_t step, std::int64_t total, double peak, std::int64_t warmup);

/// Scales grads in place so their global L2 norm is at most max_norm. Returns the
/// norm before clipping. Non-finite gradients throw.
template <typename T>
double clip_global_norm(Params<T>& grads, double max_norm);

/// One AdamW update with bias correction and decoupled weight decay p *= (1 - lr * wd).
void optim_step(Params<float>& p, const Params<float>& grads, OptimState& st, double lr, const OptimConfig& cfg);

/// One training example: a masked sequence plus optional embedding overrides.
struct TrainItem {
    std::int64_t id = 0;
    MaskedSequence seq;
    std::vector<EmbeddingOverride<float>> overrides;
};

struct StepRecord {
    std::int64_t step = 0;  // global, 1-based
    std::string phase;
    double loss = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
};

struct PhaseSpec {
    std::string name;
    int steps = 0;
    double peak_lr = 0.0;
    int batch_size = 1;
    std::uint64_t shuffle_seed = 0;
};

struct TrainOptions {
    OptimConfig optim;
    int threads = 1;
    std::string log_path;  // JSONL metrics log, appended; empty disables
    std::function<void(const StepRecord&)> on_step;
};

/// Mean of per-item losses and their averaged gradients. Per-item gradients are
/// reduced in item order, so the result does not depend on the thread count.
double batch_loss_and_grads(const Params<float>& p, const std::vector<const TrainItem*>& batch, Params<float>& grads,
                            int threads);

/// Runs one phase with a fresh optimizer state. Items are visited in a shuffled
/// order derived from shuffle_seed, reshuffled on every pass.
std::vector<StepRecord> train_phase(Params<float>& p, const std::vector<TrainItem>& items, const PhaseSpec& phase,
                                    const TrainOptions& opts, std::int64_t& global_step);

struct EncoderTrainConfig {
    StagePlan plan;
    ThinkingTokenSpec spec;
    std::uint64_t seed = 1;
    std::string checkpoint_dir;  // empty disables checkpoints
    std::string kind = "encoder";
    std::string vocab_digest;
    std::string run_config_digest;
    TrainOptions options;
};

struct TrainResult {
    std::vector<std::string> checkpoints;
    std::vector<StepRecord> log;
};

/// Executes the plan phase by phase; writes one checkpoint per phase boundary.
TrainResult train_encoder(Params<float>& p, const std::vector<Sample>& samples, const Vocab& vocab,
                          const EncoderTrainConfig& cfg);

struct DecoderTrainConfig {
    int steps = 0;
    double peak_lr = 5e-4;
    int batch_size = 8;
    std::uint64_t seed = 1;
    std::string checkpoint_path;  // empty disables the checkpoint
    std::string vocab_digest;
    std::string run_config_digest;
    TrainOptions options;
};

/// Single-phase training on prebuilt decoder items (see explainer).
TrainResult train_decoder(Params<float>& q, const std::vector<TrainItem>& items, const DecoderTrainConfig& cfg);

std::string checkpoint_name(const std::string& kind, std::size_t phase_index, const std::string& phase,
                            std::int64_t step);

}  // namespace heima
