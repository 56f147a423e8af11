#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "heima/common.hpp"
#include "heima/sequence.hpp"

namespace heima {

/// Pre-norm decoder-only transformer with learned absolute positions,
/// GELU feed-forward blocks and an untied, bias-free output projection.
struct ModelConfig {
    int vocab_size = 0;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 2;
    int d_ff = 256;
    int max_len = 192;

    int head_dim() const { return d_model / n_heads; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct Tensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<T> data;

    std::size_t size() const { return data.size(); }
};

/// Row-major dense matrix used for activations.
template <typename T>
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, T(0)) {}
    void resize(std::size_t r, std::size_t c) {
        rows = r;
        cols = c;
        data.assign(r * c, T(0));
    }
    T* row(std::size_t i) { return data.data() + i * cols; }
    const T* row(std::size_t i) const { return data.data() + i * cols; }
    T& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    T at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

enum class LayerSlot : std::size_t {
    ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_in, b_in, w_out, b_out, count
};

/// Full parameter set, stored as named tensors in declaration order:
/// tok_emb, pos_emb, per-layer blocks, ln_f.g, ln_f.b, head.w.
template <typename T>
class Params {
public:
    static constexpr std::size_t kPerLayer = static_cast<std::size_t>(LayerSlot::count);

    Params() = default;
    explicit Params(const ModelConfig& cfg);  // zero-filled, declared shapes

    const ModelConfig& config() const { return cfg_; }
    std::vector<Tensor<T>>& tensors() { return tensors_; }
    const std::vector<Tensor<T>>& tensors() const { return tensors_; }

    Tensor<T>& tok_emb() { return tensors_[0]; }
    const Tensor<T>& tok_emb() const { return tensors_[0]; }
    Tensor<T>& pos_emb() { return tensors_[1]; }
    const Tensor<T>& pos_emb() const { return tensors_[1]; }
    Tensor<T>& layer(int l, LayerSlot slot) { return tensors_[layer_index(l, slot)]; }
    const Tensor<T>& layer(int l, LayerSlot slot) const { return tensors_[layer_index(l, slot)]; }
    Tensor<T>& lnf_g() { return tensors_[tensors_.size() - 3]; }
    const Tensor<T>& lnf_g() const { return tensors_[tensors_.size() - 3]; }
    Tensor<T>& lnf_b() { return tensors_[tensors_.size() - 2]; }
    const Tensor<T>& lnf_b() const { return tensors_[tensors_.size() - 2]; }
    Tensor<T>& head() { return tensors_.back(); }
    const Tensor<T>& head() const { return tensors_.back(); }

    std::size_t parameter_count() const;
    void zero();
    bool all_finite() const;
    /// Digest over names, shapes and values rounded to float32.
    std::string digest() const;

    template <typename U>
    Params<U> cast() const {
        Params<U> out(cfg_);
        for (std::size_t i = 0; i < tensors_.size(); ++i)
            for (std::size_t j = 0; j < tensors_[i].data.size(); ++j)
                out.tensors()[i].data[j] = static_cast<U>(tensors_[i].data[j]);
        return out;
    }

private:
    static std::size_t layer_index(int l, LayerSlot slot) {
        return 2 + static_cast<std::size_t>(l) * kPerLayer + static_cast<std::size_t>(slot);
    }

    ModelConfig cfg_;
    std::vector<Tensor<T>> tensors_;
};

/// Replaces the token embedding (not the positional embedding) at one input position.
template <typename T>
struct EmbeddingOverride {
    std::size_t position = 0;
    std::vector<T> vector;
};

template <typename T>
struct ForwardOutput {
    Matrix<T> logits;        // [seq_len x vocab_size]
    Matrix<T> final_hidden;  // [seq_len x d_model], after the final norm, before the projection
};

template <typename T>
struct LossAndGrads {
    double loss = 0.0;
    Params<T> grads;
};

struct GradCheckGroup {
    std::string name;
    std::size_t coordinates = 0;
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::vector<GradCheckGroup> groups;
};

/// Incremental causal decoding with cached key/value rows. Each pushed position is
/// computed with the same kernels and summation order as forward(), so its hidden
/// and logit rows are bitwise identical to the corresponding forward() rows.
template <typename T>
class DecodeState {
public:
    explicit DecodeState(const Params<T>& p);

    /// Feeds the next position. A non-empty override replaces its token embedding.
    void push(TokenId id, std::span<const T> override_vector = {});

    std::size_t length() const { return length_; }
    const std::vector<T>& logits() const { return logits_; }  // last pushed position
    const std::vector<T>& hidden() const { return hidden_; }

private:
    const Params<T>* p_;
    std::vector<Matrix<T>> qkv_;
    std::size_t length_ = 0;
    std::vector<T> logits_, hidden_;
};

/// Closed-form parameter count for a configuration.
std::size_t parameter_count(const ModelConfig& cfg);

template <typename T>
Params<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

template <typename T>
ForwardOutput<T> forward(const Params<T>& p, std::span<const TokenId> ids,
                         std::span<const EmbeddingOverride<T>> overrides = {});

/// Mean over masked positions t of -log softmax(logits[t-1])[ids[t]], accumulated in double.
template <typename T>
double nll_loss(const Params<T>& p, const MaskedSequence& seq,
                std::span<const EmbeddingOverride<T>> overrides = {});

template <typename T>
LossAndGrads<T> nll_loss_and_grads(const Params<T>& p, const MaskedSequence& seq,
                                   std::span<const EmbeddingOverride<T>> overrides = {});

/// Same as nll_loss_and_grads but writes into a preallocated gradient set (overwritten).
template <typename T>
double loss_and_grads_into(const Params<T>& p, const MaskedSequence& seq,
                           std::span<const EmbeddingOverride<T>> overrides, Params<T>& grads);

/// Adds N(0, matrix_std) noise to matrices and N(0, matrix_std / 4) to vectors. Moves
/// a fresh initialisation to trained-like scales before a gradient check.
void perturb_params(Params<double>& p, double matrix_std, std::uint64_t seed);

/// Central finite differences on a random subsample of coordinates per tensor.
/// Relative error per coordinate is |analytic - numeric| / max(|analytic|, |numeric|, floor).
GradCheckReport grad_check(const Params<double>& p, const MaskedSequence& seq, double eps,
                           std::uint64_t seed = 1, std::size_t coords_per_group = 200,
                           double floor = 1e-6);

}  // namespace heima
