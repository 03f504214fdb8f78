#include "prefrank/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "prefrank/errors.hpp"
#include "prefrank/rng.hpp"
#include "prefrank/tokenizer.hpp"

namespace prefrank {

AdapterTargets AdapterTargets::parse(const std::string& spec) {
    AdapterTargets t{false, false, false};
    for (const char c : spec) {
        switch (c) {
            case 'q': t.q = true; break;
            case 'k': t.k = true; break;
            case 'v': t.v = true; break;
            default:
                throw ConfigError(std::string("adapter target must be a subset of qkv, got '") +
                                  c + "'");
        }
    }
    return t;
}

std::string AdapterTargets::to_string() const {
    std::string s;
    if (q) s += 'q';
    if (k) s += 'k';
    if (v) s += 'v';
    return s;
}

void ModelConfig::validate() const {
    if (vocab_size < 1) throw ConfigError("vocab_size must be positive");
    if (embed_dim < 1 || num_heads < 1 || num_layers < 1 || max_seq_len < 1) {
        throw ConfigError("model dimensions must be positive");
    }
    if (embed_dim % num_heads != 0) {
        throw ConfigError("embed_dim " + std::to_string(embed_dim) +
                          " not divisible by num_heads " + std::to_string(num_heads));
    }
    if (adapter_rank < 0) throw ConfigError("adapter_rank must be >= 0");
    if (adapter_rank > embed_dim) {
        throw ConfigError("adapter_rank " + std::to_string(adapter_rank) +
                          " exceeds embed_dim " + std::to_string(embed_dim));
    }
    if (adapter_rank > 0 && !adapter_targets.any()) {
        throw ConfigError("adapter_rank set but no adapter targets selected");
    }
}

namespace {

constexpr double kInitStd = 0.02;

// y[T,out] = x[T,in] * W^T (+ b), with W stored row-major [out][in].
// When accumulate is set the product is added onto the existing y.
template <typename S>
void linear_forward(const S* x, const S* w, const S* b, S* y, int rows, int in, int out,
                    bool accumulate = false) {
    for (int t = 0; t < rows; ++t) {
        const S* xt = x + static_cast<size_t>(t) * in;
        S* yt = y + static_cast<size_t>(t) * out;
        for (int o = 0; o < out; ++o) {
            const S* wo = w + static_cast<size_t>(o) * in;
            S acc = accumulate ? yt[o] : S(0);
            if (b) acc += b[o];
            for (int i = 0; i < in; ++i) acc += xt[i] * wo[i];
            yt[o] = acc;
        }
    }
}

// Accumulates dx, dW, db for the linear layer above. Any of the output
// pointers may be null to skip that term.
template <typename S>
void linear_backward(const S* x, const S* w, const S* dy, S* dx, S* dw, S* db, int rows, int in,
                     int out) {
    for (int t = 0; t < rows; ++t) {
        const S* dyt = dy + static_cast<size_t>(t) * out;
        const S* xt = x + static_cast<size_t>(t) * in;
        S* dxt = dx ? dx + static_cast<size_t>(t) * in : nullptr;
        for (int o = 0; o < out; ++o) {
            const S d = dyt[o];
            if (d == S(0)) continue;
            if (db) db[o] += d;
            const S* wo = w + static_cast<size_t>(o) * in;
            S* dwo = dw ? dw + static_cast<size_t>(o) * in : nullptr;
            if (dxt && dwo) {
                for (int i = 0; i < in; ++i) {
                    dxt[i] += wo[i] * d;
                    dwo[i] += xt[i] * d;
                }
            } else if (dxt) {
                for (int i = 0; i < in; ++i) dxt[i] += wo[i] * d;
            } else if (dwo) {
                for (int i = 0; i < in; ++i) dwo[i] += xt[i] * d;
            }
        }
    }
}

template <typename S>
void layernorm_forward(const S* x, const S* w, const S* b, S* y, S* mean, S* rstd, int rows,
                       int dim) {
    for (int t = 0; t < rows; ++t) {
        const S* xt = x + static_cast<size_t>(t) * dim;
        S* yt = y + static_cast<size_t>(t) * dim;
        S m = 0;
        for (int i = 0; i < dim; ++i) m += xt[i];
        m /= S(dim);
        S var = 0;
        for (int i = 0; i < dim; ++i) {
            const S c = xt[i] - m;
            var += c * c;
        }
        var /= S(dim);
        const S rs = S(1) / std::sqrt(var + S(1e-5));
        for (int i = 0; i < dim; ++i) yt[i] = (xt[i] - m) * rs * w[i] + b[i];
        mean[t] = m;
        rstd[t] = rs;
    }
}

template <typename S>
void layernorm_backward(const S* x, const S* w, const S* mean, const S* rstd, const S* dy, S* dx,
                        S* dw, S* db, int rows, int dim) {
    for (int t = 0; t < rows; ++t) {
        const S* xt = x + static_cast<size_t>(t) * dim;
        const S* dyt = dy + static_cast<size_t>(t) * dim;
        S* dxt = dx + static_cast<size_t>(t) * dim;
        const S m = mean[t];
        const S rs = rstd[t];
        S dnorm_mean = 0, dnorm_norm_mean = 0;
        for (int i = 0; i < dim; ++i) {
            const S norm = (xt[i] - m) * rs;
            const S dnorm = w[i] * dyt[i];
            dnorm_mean += dnorm;
            dnorm_norm_mean += dnorm * norm;
        }
        dnorm_mean /= S(dim);
        dnorm_norm_mean /= S(dim);
        for (int i = 0; i < dim; ++i) {
            const S norm = (xt[i] - m) * rs;
            const S dnorm = w[i] * dyt[i];
            db[i] += dyt[i];
            dw[i] += norm * dyt[i];
            dxt[i] += (dnorm - dnorm_mean - norm * dnorm_norm_mean) * rs;
        }
    }
}

// tanh-approximation GELU; the backward differentiates the same
// approximation, so finite differences agree to machine precision.
template <typename S>
void gelu_forward(const S* x, S* y, size_t n) {
    const S c = S(0.7978845608028654);  // sqrt(2/pi)
    for (size_t i = 0; i < n; ++i) {
        const S v = x[i];
        const S u = c * (v + S(0.044715) * v * v * v);
        y[i] = S(0.5) * v * (S(1) + std::tanh(u));
    }
}

template <typename S>
void gelu_backward(const S* x, const S* dy, S* dx, size_t n) {
    const S c = S(0.7978845608028654);
    for (size_t i = 0; i < n; ++i) {
        const S v = x[i];
        const S u = c * (v + S(0.044715) * v * v * v);
        const S th = std::tanh(u);
        const S sech2 = S(1) - th * th;
        const S du = c * (S(1) + S(3) * S(0.044715) * v * v);
        dx[i] += dy[i] * (S(0.5) * (S(1) + th) + S(0.5) * v * sech2 * du);
    }
}

// Causal multi-head attention over already-projected q/k/v. att keeps the
// softmax probabilities ([H,T,T]) for the backward pass.
template <typename S>
void attention_forward(const S* q, const S* k, const S* v, S* att, S* out, int T, int dim,
                       int heads) {
    const int hd = dim / heads;
    const S scale = S(1) / std::sqrt(S(hd));
    for (int h = 0; h < heads; ++h) {
        for (int t = 0; t < T; ++t) {
            const S* qt = q + static_cast<size_t>(t) * dim + h * hd;
            S* att_row = att + (static_cast<size_t>(h) * T + t) * T;
            S maxv = -std::numeric_limits<S>::infinity();
            for (int s = 0; s <= t; ++s) {
                const S* ks = k + static_cast<size_t>(s) * dim + h * hd;
                S dot = 0;
                for (int i = 0; i < hd; ++i) dot += qt[i] * ks[i];
                dot *= scale;
                att_row[s] = dot;
                maxv = std::max(maxv, dot);
            }
            S denom = 0;
            for (int s = 0; s <= t; ++s) {
                const S e = std::exp(att_row[s] - maxv);
                att_row[s] = e;
                denom += e;
            }
            const S inv = S(1) / denom;
            for (int s = 0; s <= t; ++s) att_row[s] *= inv;
            for (int s = t + 1; s < T; ++s) att_row[s] = 0;

            S* ot = out + static_cast<size_t>(t) * dim + h * hd;
            for (int i = 0; i < hd; ++i) ot[i] = 0;
            for (int s = 0; s <= t; ++s) {
                const S a = att_row[s];
                const S* vs = v + static_cast<size_t>(s) * dim + h * hd;
                for (int i = 0; i < hd; ++i) ot[i] += a * vs[i];
            }
        }
    }
}

template <typename S>
void attention_backward(const S* q, const S* k, const S* v, const S* att, const S* dout, S* dq,
                        S* dk, S* dv, int T, int dim, int heads) {
    const int hd = dim / heads;
    const S scale = S(1) / std::sqrt(S(hd));
    std::vector<S> datt(static_cast<size_t>(T));
    for (int h = 0; h < heads; ++h) {
        for (int t = 0; t < T; ++t) {
            const S* dot_t = dout + static_cast<size_t>(t) * dim + h * hd;
            const S* att_row = att + (static_cast<size_t>(h) * T + t) * T;

            // through the weighted sum: d att and d v
            S datt_dot_att = 0;
            for (int s = 0; s <= t; ++s) {
                const S* vs = v + static_cast<size_t>(s) * dim + h * hd;
                S d = 0;
                for (int i = 0; i < hd; ++i) d += dot_t[i] * vs[i];
                datt[static_cast<size_t>(s)] = d;
                datt_dot_att += d * att_row[s];
                S* dvs = dv + static_cast<size_t>(s) * dim + h * hd;
                const S a = att_row[s];
                for (int i = 0; i < hd; ++i) dvs[i] += a * dot_t[i];
            }
            // softmax backward into pre-softmax scores, then into q and k
            const S* qt = q + static_cast<size_t>(t) * dim + h * hd;
            S* dqt = dq + static_cast<size_t>(t) * dim + h * hd;
            for (int s = 0; s <= t; ++s) {
                const S dpre =
                    att_row[s] * (datt[static_cast<size_t>(s)] - datt_dot_att) * scale;
                if (dpre == S(0)) continue;
                const S* ks = k + static_cast<size_t>(s) * dim + h * hd;
                S* dks = dk + static_cast<size_t>(s) * dim + h * hd;
                for (int i = 0; i < hd; ++i) {
                    dqt[i] += dpre * ks[i];
                    dks[i] += dpre * qt[i];
                }
            }
        }
    }
}

// Activation caches for one forward pass, sized for the exact sequence.
template <typename S>
struct Workspace {
    struct Layer {
        std::vector<S> ln1_out, ln1_mean, ln1_rstd;
        std::vector<S> q, k, v;           // projected, adapter deltas included
        std::vector<S> aq_x, ak_x, av_x;  // adapter A*x caches, [T,R]
        std::vector<S> att;               // [H,T,T] probabilities
        std::vector<S> att_out;           // pre-output-projection
        std::vector<S> x_mid;             // residual stream after attention
        std::vector<S> ln2_out, ln2_mean, ln2_rstd;
        std::vector<S> fc1_out, gelu_out;
        std::vector<S> x_out;             // residual stream after mlp
    };
    std::vector<S> x0;
    std::vector<Layer> layers;
    std::vector<S> lnf_out, lnf_mean, lnf_rstd;

    Workspace(int T, const ModelConfig& cfg) {
        const int D = cfg.embed_dim;
        const int M = cfg.mlp_dim();
        const int R = cfg.adapter_rank;
        const size_t td = static_cast<size_t>(T) * D;
        x0.resize(td);
        layers.resize(static_cast<size_t>(cfg.num_layers));
        for (Layer& l : layers) {
            l.ln1_out.resize(td);
            l.ln1_mean.resize(static_cast<size_t>(T));
            l.ln1_rstd.resize(static_cast<size_t>(T));
            l.q.resize(td);
            l.k.resize(td);
            l.v.resize(td);
            if (R > 0) {
                const size_t tr = static_cast<size_t>(T) * R;
                l.aq_x.resize(tr);
                l.ak_x.resize(tr);
                l.av_x.resize(tr);
            }
            l.att.resize(static_cast<size_t>(cfg.num_heads) * T * T);
            l.att_out.resize(td);
            l.x_mid.resize(td);
            l.ln2_out.resize(td);
            l.ln2_mean.resize(static_cast<size_t>(T));
            l.ln2_rstd.resize(static_cast<size_t>(T));
            l.fc1_out.resize(static_cast<size_t>(T) * M);
            l.gelu_out.resize(static_cast<size_t>(T) * M);
            l.x_out.resize(td);
        }
        lnf_out.resize(td);
        lnf_mean.resize(static_cast<size_t>(T));
        lnf_rstd.resize(static_cast<size_t>(T));
    }
};

}  // namespace

template <typename S>
size_t ModelT<S>::register_tensor(const std::string& name, std::vector<int> shape,
                                  bool trainable) {
    size_t size = 1;
    for (const int d : shape) size *= static_cast<size_t>(d);
    const size_t offset = data_.size();
    specs_.push_back(TensorSpec{name, std::move(shape), offset, size, trainable});
    data_.resize(data_.size() + size, S(0));
    return offset;
}

template <typename S>
void ModelT<S>::build_layout() {
    const int D = cfg_.embed_dim;
    const int V = cfg_.vocab_size;
    const int M = cfg_.mlp_dim();
    const int R = cfg_.adapter_rank;
    const bool adapters = R > 0;
    // Base weights freeze when adapters are active unless configured otherwise.
    const bool base_trainable = !adapters || cfg_.train_base_with_adapters;

    specs_.clear();
    data_.clear();
    off_.layers.assign(static_cast<size_t>(cfg_.num_layers), LayerOffsets{});

    off_.tok_emb = register_tensor("tok_emb", {V, D}, base_trainable);
    off_.pos_emb = register_tensor("pos_emb", {cfg_.max_seq_len, D}, base_trainable);
    for (int l = 0; l < cfg_.num_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        LayerOffsets& lo = off_.layers[static_cast<size_t>(l)];
        lo.ln1_w = register_tensor(p + "ln1.w", {D}, base_trainable);
        lo.ln1_b = register_tensor(p + "ln1.b", {D}, base_trainable);
        lo.wq = register_tensor(p + "attn.wq", {D, D}, base_trainable);
        lo.bq = register_tensor(p + "attn.bq", {D}, base_trainable);
        lo.wk = register_tensor(p + "attn.wk", {D, D}, base_trainable);
        lo.bk = register_tensor(p + "attn.bk", {D}, base_trainable);
        lo.wv = register_tensor(p + "attn.wv", {D, D}, base_trainable);
        lo.bv = register_tensor(p + "attn.bv", {D}, base_trainable);
        lo.wo = register_tensor(p + "attn.wo", {D, D}, base_trainable);
        lo.bo = register_tensor(p + "attn.bo", {D}, base_trainable);
        lo.ln2_w = register_tensor(p + "ln2.w", {D}, base_trainable);
        lo.ln2_b = register_tensor(p + "ln2.b", {D}, base_trainable);
        lo.fc1_w = register_tensor(p + "mlp.fc1_w", {M, D}, base_trainable);
        lo.fc1_b = register_tensor(p + "mlp.fc1_b", {M}, base_trainable);
        lo.fc2_w = register_tensor(p + "mlp.fc2_w", {D, M}, base_trainable);
        lo.fc2_b = register_tensor(p + "mlp.fc2_b", {D}, base_trainable);
        if (adapters && cfg_.adapter_targets.q) {
            lo.a_q = register_tensor(p + "attn.q.lora_a", {R, D}, true);
            lo.b_q = register_tensor(p + "attn.q.lora_b", {D, R}, true);
        }
        if (adapters && cfg_.adapter_targets.k) {
            lo.a_k = register_tensor(p + "attn.k.lora_a", {R, D}, true);
            lo.b_k = register_tensor(p + "attn.k.lora_b", {D, R}, true);
        }
        if (adapters && cfg_.adapter_targets.v) {
            lo.a_v = register_tensor(p + "attn.v.lora_a", {R, D}, true);
            lo.b_v = register_tensor(p + "attn.v.lora_b", {D, R}, true);
        }
    }
    off_.lnf_w = register_tensor("lnf.w", {D}, base_trainable);
    off_.lnf_b = register_tensor("lnf.b", {D}, base_trainable);
    off_.head_w = register_tensor("head.w", {V, D}, base_trainable);
    off_.head_b = register_tensor("head.b", {V}, base_trainable);
}

template <typename S>
ModelT<S> ModelT<S>::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelT m;
    m.cfg_ = cfg;
    m.build_layout();

    Rng rng(derive_seed(seed, "model-init"));
    for (const TensorSpec& spec : m.specs_) {
        S* p = m.data_.data() + spec.offset;
        if (spec.shape.size() == 1) {
            // 1-D tensors are biases (zero) or layernorm gains (one).
            const bool ln_gain = spec.name.ends_with("ln1.w") ||
                                 spec.name.ends_with("ln2.w") || spec.name == "lnf.w";
            std::fill(p, p + spec.size, ln_gain ? S(1) : S(0));
        } else if (spec.name.ends_with("lora_b")) {
            std::fill(p, p + spec.size, S(0));  // adapters start as the identity
        } else {
            for (size_t i = 0; i < spec.size; ++i) p[i] = S(kInitStd * rng.next_gauss());
        }
    }
    return m;
}

template <typename S>
ModelT<S> ModelT<S>::with_adapters(const ModelT& base, int rank, AdapterTargets targets,
                                   uint64_t seed, bool train_base) {
    if (rank < 1) throw ConfigError("adapter rank must be >= 1");
    if (base.cfg_.adapter_rank > 0) throw ConfigError("model already carries adapters");
    if (!targets.any()) throw ConfigError("adapter targets empty; expected a subset of qkv");

    ModelConfig cfg = base.cfg_;
    cfg.adapter_rank = rank;
    cfg.adapter_targets = targets;
    cfg.train_base_with_adapters = train_base;
    cfg.validate();

    ModelT m;
    m.cfg_ = cfg;
    m.build_layout();

    // Base weights copy over by name; adapter A is gaussian, adapter B is
    // zero, so the augmented model reproduces the base bit for bit.
    Rng rng(derive_seed(seed, "adapter-init"));
    for (const TensorSpec& spec : m.specs_) {
        S* p = m.data_.data() + spec.offset;
        if (spec.name.ends_with("lora_a")) {
            for (size_t i = 0; i < spec.size; ++i) p[i] = S(kInitStd * rng.next_gauss());
        } else if (spec.name.ends_with("lora_b")) {
            std::fill(p, p + spec.size, S(0));
        } else {
            const TensorSpec& src = base.spec(spec.name);
            std::copy_n(base.data_.data() + src.offset, src.size, p);
        }
    }
    return m;
}

template <typename S>
ModelT<S> ModelT<S>::restore(const ModelConfig& cfg, std::vector<S> blob) {
    cfg.validate();
    ModelT m;
    m.cfg_ = cfg;
    m.build_layout();
    if (blob.size() != m.data_.size()) {
        throw IoError("parameter blob holds " + std::to_string(blob.size()) +
                      " values but the config needs " + std::to_string(m.data_.size()));
    }
    m.data_ = std::move(blob);
    return m;
}

template <typename S>
const TensorSpec& ModelT<S>::spec(const std::string& name) const {
    for (const TensorSpec& s : specs_) {
        if (s.name == name) return s;
    }
    throw ConfigError("unknown tensor: " + name);
}

template <typename S>
std::span<const S> ModelT<S>::tensor(const std::string& name) const {
    const TensorSpec& s = spec(name);
    return {data_.data() + s.offset, s.size};
}

template <typename S>
std::span<S> ModelT<S>::tensor(const std::string& name) {
    const TensorSpec& s = spec(name);
    return {data_.data() + s.offset, s.size};
}

template <typename S>
LogProbResult ModelT<S>::run(const TokenSequence& seq, double scale, std::vector<S>* grad,
                             std::vector<S>* last_probs) const {
    const int T = seq.length();
    const int V = cfg_.vocab_size;
    const int D = cfg_.embed_dim;
    const int M = cfg_.mlp_dim();
    const int H = cfg_.num_heads;
    const int R = cfg_.adapter_rank;
    const int L = cfg_.num_layers;

    if (T < 2) throw DataError("sequence needs a prompt and at least one completion token");
    if (T > cfg_.max_seq_len) {
        throw DataError("sequence length " + std::to_string(T) + " exceeds max_seq_len " +
                        std::to_string(cfg_.max_seq_len));
    }
    if (seq.prompt_len < 1 || seq.prompt_len >= T) {
        throw DataError("prompt_len " + std::to_string(seq.prompt_len) +
                        " out of range for length " + std::to_string(T));
    }
    for (int t = 0; t < T; ++t) {
        const int id = seq.ids[static_cast<size_t>(t)];
        if (id < 0 || id >= V) {
            throw DataError("token id " + std::to_string(id) + " at position " +
                            std::to_string(t) + " outside vocabulary of " + std::to_string(V));
        }
    }

    const int first_pred = seq.prompt_len - 1;  // position predicting the first completion token
    const int n_pred = T - seq.prompt_len;
    const S* P = data_.data();

    Workspace<S> ws(T, cfg_);

    // token + learned position embeddings
    for (int t = 0; t < T; ++t) {
        const S* te = P + off_.tok_emb + static_cast<size_t>(seq.ids[static_cast<size_t>(t)]) * D;
        const S* pe = P + off_.pos_emb + static_cast<size_t>(t) * D;
        S* xt = ws.x0.data() + static_cast<size_t>(t) * D;
        for (int i = 0; i < D; ++i) xt[i] = te[i] + pe[i];
    }

    const std::vector<S>* x_in = &ws.x0;
    for (int l = 0; l < L; ++l) {
        auto& a = ws.layers[static_cast<size_t>(l)];
        const LayerOffsets& lo = off_.layers[static_cast<size_t>(l)];

        layernorm_forward(x_in->data(), P + lo.ln1_w, P + lo.ln1_b, a.ln1_out.data(),
                          a.ln1_mean.data(), a.ln1_rstd.data(), T, D);

        linear_forward(a.ln1_out.data(), P + lo.wq, P + lo.bq, a.q.data(), T, D, D);
        linear_forward(a.ln1_out.data(), P + lo.wk, P + lo.bk, a.k.data(), T, D, D);
        linear_forward(a.ln1_out.data(), P + lo.wv, P + lo.bv, a.v.data(), T, D, D);
        if (lo.a_q != kAbsent) {
            linear_forward<S>(a.ln1_out.data(), P + lo.a_q, nullptr, a.aq_x.data(), T, D, R);
            linear_forward<S>(a.aq_x.data(), P + lo.b_q, nullptr, a.q.data(), T, R, D, true);
        }
        if (lo.a_k != kAbsent) {
            linear_forward<S>(a.ln1_out.data(), P + lo.a_k, nullptr, a.ak_x.data(), T, D, R);
            linear_forward<S>(a.ak_x.data(), P + lo.b_k, nullptr, a.k.data(), T, R, D, true);
        }
        if (lo.a_v != kAbsent) {
            linear_forward<S>(a.ln1_out.data(), P + lo.a_v, nullptr, a.av_x.data(), T, D, R);
            linear_forward<S>(a.av_x.data(), P + lo.b_v, nullptr, a.v.data(), T, R, D, true);
        }

        attention_forward(a.q.data(), a.k.data(), a.v.data(), a.att.data(), a.att_out.data(), T,
                          D, H);

        a.x_mid = *x_in;  // residual
        linear_forward(a.att_out.data(), P + lo.wo, P + lo.bo, a.x_mid.data(), T, D, D, true);

        layernorm_forward(a.x_mid.data(), P + lo.ln2_w, P + lo.ln2_b, a.ln2_out.data(),
                          a.ln2_mean.data(), a.ln2_rstd.data(), T, D);
        linear_forward(a.ln2_out.data(), P + lo.fc1_w, P + lo.fc1_b, a.fc1_out.data(), T, D, M);
        gelu_forward(a.fc1_out.data(), a.gelu_out.data(), a.fc1_out.size());

        a.x_out = a.x_mid;  // residual
        linear_forward(a.gelu_out.data(), P + lo.fc2_w, P + lo.fc2_b, a.x_out.data(), T, M, D,
                       true);
        x_in = &a.x_out;
    }

    layernorm_forward(x_in->data(), P + off_.lnf_w, P + off_.lnf_b, ws.lnf_out.data(),
                      ws.lnf_mean.data(), ws.lnf_rstd.data(), T, D);

    // Vocabulary head only at positions that actually predict a completion
    // token: [prompt_len - 1, T - 2].
    LogProbResult result;
    result.per_token_logp.resize(static_cast<size_t>(n_pred));
    result.sum_logp = 0.0;
    std::vector<S> probs(static_cast<size_t>(n_pred) * V);
    std::vector<S> logits(static_cast<size_t>(V));
    for (int j = 0; j < n_pred; ++j) {
        const int p = first_pred + j;
        const int target = seq.ids[static_cast<size_t>(p) + 1];
        const S* xt = ws.lnf_out.data() + static_cast<size_t>(p) * D;
        S maxv = -std::numeric_limits<S>::infinity();
        for (int o = 0; o < V; ++o) {
            const S* wo = P + off_.head_w + static_cast<size_t>(o) * D;
            S acc = P[off_.head_b + o];
            for (int i = 0; i < D; ++i) acc += xt[i] * wo[i];
            logits[static_cast<size_t>(o)] = acc;
            maxv = std::max(maxv, acc);
        }
        S denom = 0;
        S* row = probs.data() + static_cast<size_t>(j) * V;
        for (int o = 0; o < V; ++o) {
            const S e = std::exp(logits[static_cast<size_t>(o)] - maxv);
            row[o] = e;
            denom += e;
        }
        const S inv = S(1) / denom;
        for (int o = 0; o < V; ++o) row[o] *= inv;
        const double logp = static_cast<double>(logits[static_cast<size_t>(target)] - maxv) -
                            std::log(static_cast<double>(denom));
        result.per_token_logp[static_cast<size_t>(j)] = logp;
        result.sum_logp += logp;
    }
    if (!std::isfinite(result.sum_logp)) {
        throw NumericError("non-finite log-probability; parameters have diverged");
    }
    if (last_probs) {
        last_probs->assign(probs.end() - V, probs.end());
    }
    if (!grad) return result;

    // ---- backward ----
    if (grad->size() != data_.size()) {
        throw ConfigError("gradient buffer holds " + std::to_string(grad->size()) +
                          " values but the model has " + std::to_string(data_.size()));
    }
    S* G = grad->data();
    const size_t td = static_cast<size_t>(T) * D;
    std::vector<S> d_x(td, S(0));  // gradient w.r.t. the residual stream
    std::vector<S> d_lnf(td, S(0));
    std::vector<S> d_mid(td);
    std::vector<S> d_ln(td);
    std::vector<S> d_attout(td);
    std::vector<S> d_q(td), d_k(td), d_v(td);
    std::vector<S> d_m(static_cast<size_t>(T) * M);
    std::vector<S> d_m2(static_cast<size_t>(T) * M);
    std::vector<S> d_r(R > 0 ? static_cast<size_t>(T) * R : 0);

    // head backward: d logits = scale * (onehot(target) - softmax)
    for (int j = 0; j < n_pred; ++j) {
        const int p = first_pred + j;
        const int target = seq.ids[static_cast<size_t>(p) + 1];
        const S* row = probs.data() + static_cast<size_t>(j) * V;
        const S* xt = ws.lnf_out.data() + static_cast<size_t>(p) * D;
        S* dxt = d_lnf.data() + static_cast<size_t>(p) * D;
        for (int o = 0; o < V; ++o) {
            const S dl = S(scale) * ((o == target ? S(1) : S(0)) - row[o]);
            if (dl == S(0)) continue;
            G[off_.head_b + o] += dl;
            const S* wo = P + off_.head_w + static_cast<size_t>(o) * D;
            S* gwo = G + off_.head_w + static_cast<size_t>(o) * D;
            for (int i = 0; i < D; ++i) {
                gwo[i] += dl * xt[i];
                dxt[i] += dl * wo[i];
            }
        }
    }

    const std::vector<S>* x_last =
        (L > 0) ? &ws.layers[static_cast<size_t>(L) - 1].x_out : &ws.x0;
    layernorm_backward(x_last->data(), P + off_.lnf_w, ws.lnf_mean.data(), ws.lnf_rstd.data(),
                       d_lnf.data(), d_x.data(), G + off_.lnf_w, G + off_.lnf_b, T, D);

    for (int l = L - 1; l >= 0; --l) {
        auto& a = ws.layers[static_cast<size_t>(l)];
        const LayerOffsets& lo = off_.layers[static_cast<size_t>(l)];
        const std::vector<S>& x_prev =
            (l == 0) ? ws.x0 : ws.layers[static_cast<size_t>(l) - 1].x_out;

        // mlp block: x_out = x_mid + fc2(gelu(fc1(ln2(x_mid))))
        std::fill(d_m.begin(), d_m.end(), S(0));
        linear_backward(a.gelu_out.data(), P + lo.fc2_w, d_x.data(), d_m.data(), G + lo.fc2_w,
                        G + lo.fc2_b, T, M, D);
        std::fill(d_m2.begin(), d_m2.end(), S(0));
        gelu_backward(a.fc1_out.data(), d_m.data(), d_m2.data(), a.fc1_out.size());
        std::fill(d_ln.begin(), d_ln.end(), S(0));
        linear_backward(a.ln2_out.data(), P + lo.fc1_w, d_m2.data(), d_ln.data(), G + lo.fc1_w,
                        G + lo.fc1_b, T, D, M);
        d_mid = d_x;  // residual pass-through
        layernorm_backward(a.x_mid.data(), P + lo.ln2_w, a.ln2_mean.data(), a.ln2_rstd.data(),
                           d_ln.data(), d_mid.data(), G + lo.ln2_w, G + lo.ln2_b, T, D);

        // attention block: x_mid = x_prev + wo * att(q,k,v) + bo
        std::fill(d_attout.begin(), d_attout.end(), S(0));
        linear_backward(a.att_out.data(), P + lo.wo, d_mid.data(), d_attout.data(), G + lo.wo,
                        G + lo.bo, T, D, D);
        std::fill(d_q.begin(), d_q.end(), S(0));
        std::fill(d_k.begin(), d_k.end(), S(0));
        std::fill(d_v.begin(), d_v.end(), S(0));
        attention_backward(a.q.data(), a.k.data(), a.v.data(), a.att.data(), d_attout.data(),
                           d_q.data(), d_k.data(), d_v.data(), T, D, H);

        std::fill(d_ln.begin(), d_ln.end(), S(0));
        linear_backward(a.ln1_out.data(), P + lo.wq, d_q.data(), d_ln.data(), G + lo.wq,
                        G + lo.bq, T, D, D);
        linear_backward(a.ln1_out.data(), P + lo.wk, d_k.data(), d_ln.data(), G + lo.wk,
                        G + lo.bk, T, D, D);
        linear_backward(a.ln1_out.data(), P + lo.wv, d_v.data(), d_ln.data(), G + lo.wv,
                        G + lo.bv, T, D, D);
        if (lo.a_q != kAbsent) {
            std::fill(d_r.begin(), d_r.end(), S(0));
            linear_backward<S>(a.aq_x.data(), P + lo.b_q, d_q.data(), d_r.data(), G + lo.b_q,
                            nullptr, T, R, D);
            linear_backward<S>(a.ln1_out.data(), P + lo.a_q, d_r.data(), d_ln.data(), G + lo.a_q,
                            nullptr, T, D, R);
        }
        if (lo.a_k != kAbsent) {
            std::fill(d_r.begin(), d_r.end(), S(0));
            linear_backward<S>(a.ak_x.data(), P + lo.b_k, d_k.data(), d_r.data(), G + lo.b_k,
                            nullptr, T, R, D);
            linear_backward<S>(a.ln1_out.data(), P + lo.a_k, d_r.data(), d_ln.data(), G + lo.a_k,
                            nullptr, T, D, R);
        }
        if (lo.a_v != kAbsent) {
            std::fill(d_r.begin(), d_r.end(), S(0));
            linear_backward<S>(a.av_x.data(), P + lo.b_v, d_v.data(), d_r.data(), G + lo.b_v,
                            nullptr, T, R, D);
            linear_backward<S>(a.ln1_out.data(), P + lo.a_v, d_r.data(), d_ln.data(), G + lo.a_v,
                            nullptr, T, D, R);
        }

        d_x = d_mid;  // residual pass-through
        layernorm_backward(x_prev.data(), P + lo.ln1_w, a.ln1_mean.data(), a.ln1_rstd.data(),
                           d_ln.data(), d_x.data(), G + lo.ln1_w, G + lo.ln1_b, T, D);
    }

    // embedding backward
    for (int t = 0; t < T; ++t) {
        const S* dxt = d_x.data() + static_cast<size_t>(t) * D;
        S* gte = G + off_.tok_emb + static_cast<size_t>(seq.ids[static_cast<size_t>(t)]) * D;
        S* gpe = G + off_.pos_emb + static_cast<size_t>(t) * D;
        for (int i = 0; i < D; ++i) {
            gte[i] += dxt[i];
            gpe[i] += dxt[i];
        }
    }
    return result;
}

template <typename S>
LogProbResult ModelT<S>::forward_logprobs(const TokenSequence& seq) const {
    return run(seq, 0.0, nullptr, nullptr);
}

template <typename S>
LogProbResult ModelT<S>::forward_backward(const TokenSequence& seq, double scale,
                                          std::vector<S>& grad) const {
    return run(seq, scale, &grad, nullptr);
}

template <typename S>
std::vector<S> ModelT<S>::grad_logprob(const TokenSequence& seq) const {
    std::vector<S> grad = zero_grad();
    run(seq, 1.0, &grad, nullptr);
    return grad;
}

template <typename S>
std::vector<S> ModelT<S>::next_token_distribution(const TokenSequence& seq, int pos) const {
    const int T = seq.length();
    if (pos < 1 || pos > T) throw DataError("distribution position out of range");
    // Probe sequence: the pos-token prefix plus one placeholder completion
    // token; causality keeps the captured softmax row independent of the
    // placeholder. pos == length asks what would follow the whole sequence.
    TokenSequence probe;
    probe.ids.assign(seq.ids.begin(), seq.ids.begin() + pos);
    probe.ids.push_back(pos < T ? seq.ids[static_cast<size_t>(pos)] : Vocabulary::kPad);
    probe.prompt_len = pos;
    std::vector<S> out;
    run(probe, 0.0, nullptr, &out);
    return out;
}

template class ModelT<double>;
template class ModelT<float>;

}  // namespace prefrank
