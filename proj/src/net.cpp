#include "heima/net.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace heima {

namespace {

constexpr double kLayerNormEps = 1e-5;

// ---------------------------------------------------------------------------
// Kernels. Every output element is accumulated over its reduction index in
// ascending order, independent of how many rows are processed, so a row's
// result does not depend on the sequence length (needed for bit-exact
// prefix invariance and generation/teacher-forcing equivalence).
// ---------------------------------------------------------------------------

template <typename T>
inline void axpy(T a, const T* __restrict x, T* __restrict y, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) y[j] += a * x[j];
}

// y[n x out] = x[n x in] * W[in x out] + b
template <typename T>
void linear(const Matrix<T>& x, const Tensor<T>& w, const Tensor<T>* b, Matrix<T>& y) {
    const std::size_t in = x.cols, out = w.shape[1];
    y.resize(x.rows, out);
    for (std::size_t i = 0; i < x.rows; ++i) {
        T* yi = y.row(i);
        if (b) std::copy(b->data.begin(), b->data.end(), yi);
        const T* xi = x.row(i);
        for (std::size_t k = 0; k < in; ++k) axpy(xi[k], w.data.data() + k * out, yi, out);
    }
}

// Given dy = dL/dy for y = x W + b: accumulates dW, db and writes dx.
template <typename T>
void linear_backward(const Matrix<T>& x, const Tensor<T>& w, const Matrix<T>& dy, Tensor<T>& dw, Tensor<T>* db,
                     Matrix<T>& dx, std::vector<T>& scratch) {
    const std::size_t in = x.cols, out = w.shape[1], n = x.rows;
    for (std::size_t i = 0; i < n; ++i) {
        const T* xi = x.row(i);
        const T* dyi = dy.row(i);
        for (std::size_t k = 0; k < in; ++k)
            if (xi[k] != T(0)) axpy(xi[k], dyi, dw.data.data() + k * out, out);
        if (db) axpy(T(1), dyi, db->data.data(), out);
    }
    // dx = dy W^T through a transposed copy so the inner loop stays contiguous.
    scratch.resize(in * out);
    for (std::size_t k = 0; k < in; ++k)
        for (std::size_t j = 0; j < out; ++j) scratch[j * in + k] = w.data[k * out + j];
    dx.resize(n, in);
    for (std::size_t i = 0; i < n; ++i) {
        const T* dyi = dy.row(i);
        T* dxi = dx.row(i);
        for (std::size_t j = 0; j < out; ++j)
            if (dyi[j] != T(0)) axpy(dyi[j], scratch.data() + j * in, dxi, in);
    }
}

template <typename T>
void layer_norm(const Matrix<T>& x, const Tensor<T>& g, const Tensor<T>& b, Matrix<T>& xhat,
                std::vector<T>& rstd, Matrix<T>& y) {
    const std::size_t n = x.rows, d = x.cols;
    xhat.resize(n, d);
    y.resize(n, d);
    rstd.assign(n, T(0));
    for (std::size_t i = 0; i < n; ++i) {
        const T* xi = x.row(i);
        T mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += xi[j];
        mean /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= static_cast<T>(d);
        T r = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        rstd[i] = r;
        T* hi = xhat.row(i);
        T* yi = y.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            hi[j] = (xi[j] - mean) * r;
            yi[j] = hi[j] * g.data[j] + b.data[j];
        }
    }
}

// Accumulates dg, db and adds dL/dx into dx_accum.
template <typename T>
void layer_norm_backward(const Matrix<T>& xhat, const std::vector<T>& rstd, const Tensor<T>& g,
                         const Matrix<T>& dy, Tensor<T>& dg, Tensor<T>& db, Matrix<T>& dx_accum,
                         std::vector<T>& scratch) {
    const std::size_t n = xhat.rows, d = xhat.cols;
    scratch.resize(d);
    for (std::size_t i = 0; i < n; ++i) {
        const T* hi = xhat.row(i);
        const T* dyi = dy.row(i);
        T mean1 = 0, mean2 = 0;
        for (std::size_t j = 0; j < d; ++j) {
            scratch[j] = dyi[j] * g.data[j];
            dg.data[j] += dyi[j] * hi[j];
            db.data[j] += dyi[j];
            mean1 += scratch[j];
            mean2 += scratch[j] * hi[j];
        }
        mean1 /= static_cast<T>(d);
        mean2 /= static_cast<T>(d);
        T* dxi = dx_accum.row(i);
        for (std::size_t j = 0; j < d; ++j) dxi[j] += rstd[i] * (scratch[j] - mean1 - hi[j] * mean2);
    }
}

template <typename T>
constexpr T kGeluC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)

template <typename T>
inline T gelu(T u) {
    return T(0.5) * u * (T(1) + std::tanh(kGeluC<T> * (u + T(0.044715) * u * u * u)));
}

template <typename T>
inline T gelu_grad(T u) {
    T th = std::tanh(kGeluC<T> * (u + T(0.044715) * u * u * u));
    return T(0.5) * (T(1) + th) + T(0.5) * u * (T(1) - th * th) * kGeluC<T> * (T(1) + T(3 * 0.044715) * u * u);
}

// One head, one query row t over key/value rows 0..t of qkv. pr receives the
// attention probabilities, o the (zero-initialised) head output.
template <typename T>
void attend_row(const Matrix<T>& qkv, std::size_t t, std::size_t h, std::size_t d, std::size_t dh, T scale, T* pr,
                T* o) {
    const T* q = qkv.row(t) + h * dh;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j <= t; ++j) {
        const T* k = qkv.row(j) + d + h * dh;
        T s = 0;
        for (std::size_t e = 0; e < dh; ++e) s += q[e] * k[e];
        pr[j] = s * scale;
        mx = std::max(mx, pr[j]);
    }
    T sum = 0;
    for (std::size_t j = 0; j <= t; ++j) {
        pr[j] = std::exp(pr[j] - mx);
        sum += pr[j];
    }
    T inv = T(1) / sum;
    for (std::size_t j = 0; j <= t; ++j) {
        pr[j] *= inv;
        axpy(pr[j], qkv.row(j) + 2 * d + h * dh, o, dh);
    }
}

template <typename T>
struct LayerCache {
    Matrix<T> ln1_xhat, a, qkv, att, ln2_xhat, m, u, g;
    std::vector<T> ln1_rstd, ln2_rstd;
    std::vector<T> probs;  // [heads x n x n], lower triangle used
};

template <typename T>
struct Cache {
    std::vector<LayerCache<T>> layers;
    Matrix<T> x_final, lnf_xhat, hidden, logits;
    std::vector<T> lnf_rstd;
    std::vector<std::uint8_t> overridden;
};

template <typename T>
bool finite_matrix(const Matrix<T>& m) {
    return std::all_of(m.data.begin(), m.data.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void check_inputs(const Params<T>& p, std::span<const TokenId> ids,
                  std::span<const EmbeddingOverride<T>> overrides) {
    const auto& cfg = p.config();
    if (ids.empty()) throw Error(ErrorCode::invalid_argument, "empty input sequence");
    if (ids.size() > static_cast<std::size_t>(cfg.max_len))
        throw Error(ErrorCode::out_of_range, "sequence length " + std::to_string(ids.size()) +
                                                 " exceeds max_len " + std::to_string(cfg.max_len));
    for (std::size_t t = 0; t < ids.size(); ++t)
        if (ids[t] < 0 || ids[t] >= cfg.vocab_size)
            throw Error(ErrorCode::out_of_range, "token id " + std::to_string(ids[t]) + " at position " +
                                                     std::to_string(t) + " outside the vocabulary");
    for (const auto& ov : overrides) {
        if (ov.position >= ids.size())
            throw Error(ErrorCode::out_of_range,
                        "override position " + std::to_string(ov.position) + " out of range");
        if (ov.vector.size() != static_cast<std::size_t>(cfg.d_model))
            throw Error(ErrorCode::invalid_argument, "override vector has length " +
                                                         std::to_string(ov.vector.size()) + ", expected d_model " +
                                                         std::to_string(cfg.d_model));
    }
}

template <typename T>
void run_forward(const Params<T>& p, std::span<const TokenId> ids, std::span<const EmbeddingOverride<T>> overrides,
                 Cache<T>& c, bool check_finite) {
    check_inputs(p, ids, overrides);
    const auto& cfg = p.config();
    const std::size_t n = ids.size(), d = static_cast<std::size_t>(cfg.d_model);
    const std::size_t heads = static_cast<std::size_t>(cfg.n_heads), dh = static_cast<std::size_t>(cfg.head_dim());
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    Matrix<T> x(n, d);
    c.overridden.assign(n, 0);
    for (std::size_t t = 0; t < n; ++t) {
        const T* emb = p.tok_emb().data.data() + static_cast<std::size_t>(ids[t]) * d;
        std::copy(emb, emb + d, x.row(t));
    }
    for (const auto& ov : overrides) {
        std::copy(ov.vector.begin(), ov.vector.end(), x.row(ov.position));
        c.overridden[ov.position] = 1;
    }
    for (std::size_t t = 0; t < n; ++t) axpy(T(1), p.pos_emb().data.data() + t * d, x.row(t), d);

    c.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    Matrix<T> tmp;
    for (int l = 0; l < cfg.n_layers; ++l) {
        auto& lc = c.layers[static_cast<std::size_t>(l)];
        layer_norm(x, p.layer(l, LayerSlot::ln1_g), p.layer(l, LayerSlot::ln1_b), lc.ln1_xhat, lc.ln1_rstd, lc.a);
        linear(lc.a, p.layer(l, LayerSlot::w_qkv), &p.layer(l, LayerSlot::b_qkv), lc.qkv);

        lc.att.resize(n, d);
        lc.probs.assign(heads * n * n, T(0));
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t t = 0; t < n; ++t)
                attend_row(lc.qkv, t, h, d, dh, scale, lc.probs.data() + (h * n + t) * n, lc.att.row(t) + h * dh);
        linear(lc.att, p.layer(l, LayerSlot::w_o), &p.layer(l, LayerSlot::b_o), tmp);
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += tmp.data[i];

        layer_norm(x, p.layer(l, LayerSlot::ln2_g), p.layer(l, LayerSlot::ln2_b), lc.ln2_xhat, lc.ln2_rstd, lc.m);
        linear(lc.m, p.layer(l, LayerSlot::w_in), &p.layer(l, LayerSlot::b_in), lc.u);
        lc.g.resize(lc.u.rows, lc.u.cols);
        for (std::size_t i = 0; i < lc.u.data.size(); ++i) lc.g.data[i] = gelu(lc.u.data[i]);
        linear(lc.g, p.layer(l, LayerSlot::w_out), &p.layer(l, LayerSlot::b_out), tmp);
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += tmp.data[i];

        if (check_finite && !finite_matrix(x))
            throw Error(ErrorCode::numeric, "non-finite activation after layer " + std::to_string(l));
    }
    c.x_final = std::move(x);
    layer_norm(c.x_final, p.lnf_g(), p.lnf_b(), c.lnf_xhat, c.lnf_rstd, c.hidden);
    linear(c.hidden, p.head(), static_cast<const Tensor<T>*>(nullptr), c.logits);
}

template <typename T>
void check_mask(const MaskedSequence& seq) {
    if (seq.loss_mask.size() != seq.ids.size())
        throw Error(ErrorCode::invalid_argument, "loss mask length differs from sequence length");
    if (!seq.loss_mask.empty() && seq.loss_mask[0])
        throw Error(ErrorCode::invalid_argument, "position 0 cannot be a prediction target");
    if (seq.target_count() == 0) throw Error(ErrorCode::invalid_argument, "loss mask selects no targets");
}

// Returns the loss and, when dlogits is non-null, writes dL/dlogits.
template <typename T>
double masked_nll(const Matrix<T>& logits, const MaskedSequence& seq, Matrix<T>* dlogits) {
    const std::size_t v = logits.cols;
    const double count = static_cast<double>(seq.target_count());
    if (dlogits) dlogits->resize(logits.rows, v);
    double total = 0.0;
    std::vector<double> probs(v);
    for (std::size_t t = 1; t < seq.ids.size(); ++t) {
        if (!seq.loss_mask[t]) continue;
        const T* row = logits.row(t - 1);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < v; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double sum = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            probs[j] = std::exp(static_cast<double>(row[j]) - mx);
            sum += probs[j];
        }
        const auto target = static_cast<std::size_t>(seq.ids[t]);
        total += std::log(sum) + mx - static_cast<double>(row[target]);
        if (dlogits) {
            T* drow = dlogits->row(t - 1);
            for (std::size_t j = 0; j < v; ++j) {
                double pj = probs[j] / sum - (j == target ? 1.0 : 0.0);
                drow[j] = static_cast<T>(pj / count);
            }
        }
    }
    double loss = total / count;
    if (!std::isfinite(loss)) throw Error(ErrorCode::numeric, "non-finite loss");
    return loss;
}

template <typename T>
void run_backward(const Params<T>& p, std::span<const TokenId> ids, Cache<T>& c, const Matrix<T>& dlogits,
                  Params<T>& grads) {
    const auto& cfg = p.config();
    const std::size_t n = ids.size(), d = static_cast<std::size_t>(cfg.d_model);
    const std::size_t heads = static_cast<std::size_t>(cfg.n_heads), dh = static_cast<std::size_t>(cfg.head_dim());
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    std::vector<T> scratch, ln_scratch;

    Matrix<T> dhidden;
    linear_backward(c.hidden, p.head(), dlogits, grads.head(), static_cast<Tensor<T>*>(nullptr), dhidden, scratch);
    Matrix<T> dx(n, d);
    layer_norm_backward(c.lnf_xhat, c.lnf_rstd, p.lnf_g(), dhidden, grads.lnf_g(), grads.lnf_b(), dx, ln_scratch);

    Matrix<T> dg, du, dm, datt, dqkv, da;
    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        auto& lc = c.layers[static_cast<std::size_t>(l)];
        // Feed-forward block: x_out = x_mid + gelu(LN2(x_mid) W_in + b_in) W_out + b_out.
        linear_backward(lc.g, p.layer(l, LayerSlot::w_out), dx, grads.layer(l, LayerSlot::w_out),
                        &grads.layer(l, LayerSlot::b_out), dg, scratch);
        du.resize(dg.rows, dg.cols);
        for (std::size_t i = 0; i < dg.data.size(); ++i) du.data[i] = dg.data[i] * gelu_grad(lc.u.data[i]);
        linear_backward(lc.m, p.layer(l, LayerSlot::w_in), du, grads.layer(l, LayerSlot::w_in),
                        &grads.layer(l, LayerSlot::b_in), dm, scratch);
        layer_norm_backward(lc.ln2_xhat, lc.ln2_rstd, p.layer(l, LayerSlot::ln2_g), dm,
                            grads.layer(l, LayerSlot::ln2_g), grads.layer(l, LayerSlot::ln2_b), dx, ln_scratch);

        // Attention block: x_mid = x_in + Attn(LN1(x_in)) W_o + b_o.
        linear_backward(lc.att, p.layer(l, LayerSlot::w_o), dx, grads.layer(l, LayerSlot::w_o),
                        &grads.layer(l, LayerSlot::b_o), datt, scratch);
        dqkv.resize(n, 3 * d);
        std::vector<T> dp(n);
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t t = 0; t < n; ++t) {
                const T* pr = lc.probs.data() + (h * n + t) * n;
                const T* dout = datt.row(t) + h * dh;
                T dot = 0;
                for (std::size_t j = 0; j <= t; ++j) {
                    const T* v = lc.qkv.row(j) + 2 * d + h * dh;
                    T s = 0;
                    for (std::size_t e = 0; e < dh; ++e) s += dout[e] * v[e];
                    dp[j] = s;
                    dot += pr[j] * s;
                    axpy(pr[j], dout, dqkv.row(j) + 2 * d + h * dh, dh);
                }
                const T* q = lc.qkv.row(t) + h * dh;
                T* dq = dqkv.row(t) + h * dh;
                for (std::size_t j = 0; j <= t; ++j) {
                    T ds = pr[j] * (dp[j] - dot) * scale;
                    axpy(ds, lc.qkv.row(j) + d + h * dh, dq, dh);
                    axpy(ds, q, dqkv.row(j) + d + h * dh, dh);
                }
            }
        }
        linear_backward(lc.a, p.layer(l, LayerSlot::w_qkv), dqkv, grads.layer(l, LayerSlot::w_qkv),
                        &grads.layer(l, LayerSlot::b_qkv), da, scratch);
        layer_norm_backward(lc.ln1_xhat, lc.ln1_rstd, p.layer(l, LayerSlot::ln1_g), da,
                            grads.layer(l, LayerSlot::ln1_g), grads.layer(l, LayerSlot::ln1_b), dx, ln_scratch);
    }

    // Overridden positions take a constant input vector: no token-embedding gradient.
    for (std::size_t t = 0; t < n; ++t) {
        if (!c.overridden[t])
            axpy(T(1), dx.row(t), grads.tok_emb().data.data() + static_cast<std::size_t>(ids[t]) * d, d);
        axpy(T(1), dx.row(t), grads.pos_emb().data.data() + t * d, d);
    }
}

std::uint64_t advance_splitmix(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Box-Muller over a splitmix64 stream.
class NormalStream {
public:
    explicit NormalStream(std::uint64_t seed) : state_(seed) {}
    double next() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = (static_cast<double>(advance_splitmix(state_) >> 11) + 1.0) * 0x1.0p-53;
        double u2 = static_cast<double>(advance_splitmix(state_) >> 11) * 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 || d_ff < 1 || max_len < 1)
        throw Error(ErrorCode::invalid_argument, "model dimensions must be positive");
    if (d_model % n_heads != 0)
        throw Error(ErrorCode::invalid_argument, "d_model must be divisible by n_heads");
}

std::size_t parameter_count(const ModelConfig& c) {
    const std::size_t v = static_cast<std::size_t>(c.vocab_size), d = static_cast<std::size_t>(c.d_model),
                      f = static_cast<std::size_t>(c.d_ff), m = static_cast<std::size_t>(c.max_len),
                      l = static_cast<std::size_t>(c.n_layers);
    const std::size_t per_layer = 4 * d + (d * 3 * d + 3 * d) + (d * d + d) + (d * f + f) + (f * d + d);
    return v * d + m * d + l * per_layer + 2 * d + d * v;
}

template <typename T>
Params<T>::Params(const ModelConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const std::size_t v = static_cast<std::size_t>(cfg.vocab_size), d = static_cast<std::size_t>(cfg.d_model),
                      f = static_cast<std::size_t>(cfg.d_ff), m = static_cast<std::size_t>(cfg.max_len);
    auto add = [&](std::string name, std::vector<std::size_t> shape) {
        std::size_t size = 1;
        for (auto s : shape) size *= s;
        tensors_.push_back(Tensor<T>{std::move(name), std::move(shape), std::vector<T>(size, T(0))});
    };
    add("tok_emb", {v, d});
    add("pos_emb", {m, d});
    for (int l = 0; l < cfg.n_layers; ++l) {
        std::string pre = "layers." + std::to_string(l) + ".";
        add(pre + "ln1.g", {d});
        add(pre + "ln1.b", {d});
        add(pre + "attn.w_qkv", {d, 3 * d});
        add(pre + "attn.b_qkv", {3 * d});
        add(pre + "attn.w_o", {d, d});
        add(pre + "attn.b_o", {d});
        add(pre + "ln2.g", {d});
        add(pre + "ln2.b", {d});
        add(pre + "mlp.w_in", {d, f});
        add(pre + "mlp.b_in", {f});
        add(pre + "mlp.w_out", {f, d});
        add(pre + "mlp.b_out", {d});
    }
    add("ln_f.g", {d});
    add("ln_f.b", {d});
    add("head.w", {d, v});
}

template <typename T>
std::size_t Params<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
}

template <typename T>
void Params<T>::zero() {
    for (auto& t : tensors_) std::fill(t.data.begin(), t.data.end(), T(0));
}

template <typename T>
bool Params<T>::all_finite() const {
    for (const auto& t : tensors_)
        for (T v : t.data)
            if (!std::isfinite(v)) return false;
    return true;
}

template <typename T>
std::string Params<T>::digest() const {
    Digest dg;
    for (const auto& t : tensors_) {
        dg.update(t.name);
        for (auto s : t.shape) dg.update_pod(static_cast<std::uint64_t>(s));
        for (T v : t.data) dg.update_pod(static_cast<float>(v));
    }
    return dg.hex();
}

template <typename T>
Params<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    Params<T> p(cfg);
    NormalStream normal(seed);
    const double residual_scale = 1.0 / std::sqrt(2.0 * cfg.n_layers);
    auto fill_normal = [&](Tensor<T>& t, double std_dev) {
        for (auto& v : t.data) v = static_cast<T>(normal.next() * std_dev);
    };
    auto fill_ones = [](Tensor<T>& t) { std::fill(t.data.begin(), t.data.end(), T(1)); };
    fill_normal(p.tok_emb(), 0.02);
    fill_normal(p.pos_emb(), 0.02);
    for (int l = 0; l < cfg.n_layers; ++l) {
        fill_ones(p.layer(l, LayerSlot::ln1_g));
        fill_normal(p.layer(l, LayerSlot::w_qkv), 0.02);
        fill_normal(p.layer(l, LayerSlot::w_o), 0.02 * residual_scale);
        fill_ones(p.layer(l, LayerSlot::ln2_g));
        fill_normal(p.layer(l, LayerSlot::w_in), 0.02);
        fill_normal(p.layer(l, LayerSlot::w_out), 0.02 * residual_scale);
    }
    fill_ones(p.lnf_g());
    fill_normal(p.head(), 0.02);
    return p;
}

void perturb_params(Params<double>& p, double matrix_std, std::uint64_t seed) {
    NormalStream normal(seed);
    for (auto& t : p.tensors()) {
        const double sd = t.shape.size() == 1 ? matrix_std / 4.0 : matrix_std;
        for (auto& v : t.data) v += normal.next() * sd;
    }
}

template <typename T>
ForwardOutput<T> forward(const Params<T>& p, std::span<const TokenId> ids,
                         std::span<const EmbeddingOverride<T>> overrides) {
    Cache<T> c;
    run_forward(p, ids, overrides, c, false);
    return ForwardOutput<T>{std::move(c.logits), std::move(c.hidden)};
}

template <typename T>
double nll_loss(const Params<T>& p, const MaskedSequence& seq, std::span<const EmbeddingOverride<T>> overrides) {
    check_mask<T>(seq);
    Cache<T> c;
    run_forward(p, seq.ids, overrides, c, true);
    return masked_nll<T>(c.logits, seq, nullptr);
}

template <typename T>
double loss_and_grads_into(const Params<T>& p, const MaskedSequence& seq,
                           std::span<const EmbeddingOverride<T>> overrides, Params<T>& grads) {
    check_mask<T>(seq);
    if (grads.tensors().size() != p.tensors().size() || !(grads.config() == p.config())) grads = Params<T>(p.config());
    else grads.zero();
    Cache<T> c;
    run_forward(p, seq.ids, overrides, c, true);
    Matrix<T> dlogits;
    double loss = masked_nll<T>(c.logits, seq, &dlogits);
    run_backward(p, seq.ids, c, dlogits, grads);
    return loss;
}

template <typename T>
LossAndGrads<T> nll_loss_and_grads(const Params<T>& p, const MaskedSequence& seq,
                                   std::span<const EmbeddingOverride<T>> overrides) {
    LossAndGrads<T> out{0.0, Params<T>(p.config())};
    out.loss = loss_and_grads_into(p, seq, overrides, out.grads);
    return out;
}


template <typename T>
DecodeState<T>::DecodeState(const Params<T>& p) : p_(&p) {
    const auto& cfg = p.config();
    qkv_.assign(static_cast<std::size_t>(cfg.n_layers),
                Matrix<T>(static_cast<std::size_t>(cfg.max_len), 3 * static_cast<std::size_t>(cfg.d_model)));
}

template <typename T>
void DecodeState<T>::push(TokenId id, std::span<const T> override_vector) {
    const auto& p = *p_;
    const auto& cfg = p.config();
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    const std::size_t heads = static_cast<std::size_t>(cfg.n_heads), dh = static_cast<std::size_t>(cfg.head_dim());
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    if (length_ >= static_cast<std::size_t>(cfg.max_len))
        throw Error(ErrorCode::out_of_range, "sequence length " + std::to_string(length_ + 1) +
                                                 " exceeds max_len " + std::to_string(cfg.max_len));
    if (id < 0 || id >= cfg.vocab_size)
        throw Error(ErrorCode::out_of_range, "token id " + std::to_string(id) + " outside the vocabulary");
    if (!override_vector.empty() && override_vector.size() != d)
        throw Error(ErrorCode::invalid_argument, "override vector has length " +
                                                     std::to_string(override_vector.size()) + ", expected d_model " +
                                                     std::to_string(d));
    const std::size_t t = length_;

    // Same kernels as run_forward on a single row.
    Matrix<T> x(1, d), xhat, a, tmp, att(1, d), m, u, g;
    std::vector<T> rstd, pr(t + 1);
    const T* emb = override_vector.empty() ? p.tok_emb().data.data() + static_cast<std::size_t>(id) * d
                                           : override_vector.data();
    std::copy(emb, emb + d, x.row(0));
    axpy(T(1), p.pos_emb().data.data() + t * d, x.row(0), d);
    for (int l = 0; l < cfg.n_layers; ++l) {
        auto& qkv = qkv_[static_cast<std::size_t>(l)];
        layer_norm(x, p.layer(l, LayerSlot::ln1_g), p.layer(l, LayerSlot::ln1_b), xhat, rstd, a);
        linear(a, p.layer(l, LayerSlot::w_qkv), &p.layer(l, LayerSlot::b_qkv), tmp);
        std::copy(tmp.data.begin(), tmp.data.end(), qkv.row(t));
        std::fill(att.data.begin(), att.data.end(), T(0));
        for (std::size_t h = 0; h < heads; ++h) attend_row(qkv, t, h, d, dh, scale, pr.data(), att.row(0) + h * dh);
        linear(att, p.layer(l, LayerSlot::w_o), &p.layer(l, LayerSlot::b_o), tmp);
        for (std::size_t i = 0; i < d; ++i) x.data[i] += tmp.data[i];
        layer_norm(x, p.layer(l, LayerSlot::ln2_g), p.layer(l, LayerSlot::ln2_b), xhat, rstd, m);
        linear(m, p.layer(l, LayerSlot::w_in), &p.layer(l, LayerSlot::b_in), u);
        g.resize(u.rows, u.cols);
        for (std::size_t i = 0; i < u.data.size(); ++i) g.data[i] = gelu(u.data[i]);
        linear(g, p.layer(l, LayerSlot::w_out), &p.layer(l, LayerSlot::b_out), tmp);
        for (std::size_t i = 0; i < d; ++i) x.data[i] += tmp.data[i];
    }
    Matrix<T> hidden, logits;
    layer_norm(x, p.lnf_g(), p.lnf_b(), xhat, rstd, hidden);
    linear(hidden, p.head(), static_cast<const Tensor<T>*>(nullptr), logits);
    hidden_ = std::move(hidden.data);
    logits_ = std::move(logits.data);
    ++length_;
}

GradCheckReport grad_check(const Params<double>& p, const MaskedSequence& seq, double eps, std::uint64_t seed,
                           std::size_t coords_per_group, double floor) {
    auto analytic = nll_loss_and_grads<double>(p, seq);
    Params<double> probe = p;
    GradCheckReport report;
    std::uint64_t state = seed;
    for (std::size_t ti = 0; ti < probe.tensors().size(); ++ti) {
        auto& tensor = probe.tensors()[ti];
        const std::size_t size = tensor.size();
        std::vector<std::size_t> coords;
        if (size <= coords_per_group) {
            for (std::size_t i = 0; i < size; ++i) coords.push_back(i);
        } else {
            // Partial Fisher-Yates for distinct coordinates.
            std::vector<std::size_t> all(size);
            for (std::size_t i = 0; i < size; ++i) all[i] = i;
            for (std::size_t i = 0; i < coords_per_group; ++i) {
                std::size_t j = i + static_cast<std::size_t>(advance_splitmix(state) % (size - i));
                std::swap(all[i], all[j]);
                coords.push_back(all[i]);
            }
        }
        GradCheckGroup group{tensor.name, coords.size(), 0.0};
        for (auto idx : coords) {
            const double saved = tensor.data[idx];
            tensor.data[idx] = saved + eps;
            double plus = nll_loss<double>(probe, seq);
            tensor.data[idx] = saved - eps;
            double minus = nll_loss<double>(probe, seq);
            tensor.data[idx] = saved;
            double numeric = (plus - minus) / (2.0 * eps);
            double exact = analytic.grads.tensors()[ti].data[idx];
            double denom = std::max({std::abs(exact), std::abs(numeric), floor});
            group.max_rel_error = std::max(group.max_rel_error, std::abs(exact - numeric) / denom);
        }
        report.max_rel_error = std::max(report.max_rel_error, group.max_rel_error);
        report.groups.push_back(std::move(group));
    }
    return report;
}

#define HEIMA_INSTANTIATE(T)                                                                                  \
    template class Params<T>;                                                                                 \
    template class DecodeState<T>;                                                                            \
    template Params<T> init_params<T>(const ModelConfig&, std::uint64_t);                                     \
    template ForwardOutput<T> forward<T>(const Params<T>&, std::span<const TokenId>,                          \
                                         std::span<const EmbeddingOverride<T>>);                              \
    template double nll_loss<T>(const Params<T>&, const MaskedSequence&, std::span<const EmbeddingOverride<T>>); \
    template LossAndGrads<T> nll_loss_and_grads<T>(const Params<T>&, const MaskedSequence&,                   \
                                                   std::span<const EmbeddingOverride<T>>);                    \
    template double loss_and_grads_into<T>(const Params<T>&, const MaskedSequence&,                           \
                                           std::span<const EmbeddingOverride<T>>, Params<T>&);

HEIMA_INSTANTIATE(float)
HEIMA_INSTANTIATE(double)

#undef HEIMA_INSTANTIATE

}  // namespace heima
