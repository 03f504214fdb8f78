#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prefrank/tokenizer.hpp"

namespace prefrank {

// Which attention projections carry low-rank adapters.
struct AdapterTargets {
    bool q = true;
    bool k = true;
    bool v = true;

    static AdapterTargets parse(const std::string& spec);  // e.g. "qkv", "qv"
    std::string to_string() const;
    bool any() const { return q || k || v; }
};

struct ModelConfig {
    int vocab_size = 8192;
    int embed_dim = 128;
    int num_layers = 2;
    int num_heads = 4;
    int max_seq_len = 512;
    int adapter_rank = 0;  // 0 disables adapters
    AdapterTargets adapter_targets{};
    bool train_base_with_adapters = false;  // default: base frozen when adapters on

    int head_dim() const { return embed_dim / num_heads; }
    int mlp_dim() const { return 4 * embed_dim; }
    void validate() const;
};

// Conditional log-probabilities of the completion tokens of a sequence.
struct LogProbResult {
    std::vector<double> per_token_logp;  // length == completion_len
    double sum_logp = 0.0;
};

// One named tensor inside the flat parameter blob.
struct TensorSpec {
    std::string name;
    std::vector<int> shape;
    size_t offset = 0;
    size_t size = 0;
    bool trainable = true;
};

template <typename S>
class ModelT {
public:
    static ModelT init(const ModelConfig& cfg, uint64_t seed);

    // Adds low-rank adapters (W + B*A on the chosen attention projections)
    // to a base model: A random-initialized, B zero, base weights frozen
    // unless cfg asks otherwise. Forward output at B=0 matches the base
    // model exactly.
    static ModelT with_adapters(const ModelT& base, int rank, AdapterTargets targets,
                                uint64_t seed, bool train_base = false);

    // Rebuilds a model from a config plus a flat parameter blob (checkpoint
    // restore). The blob length must match the config's layout exactly.
    static ModelT restore(const ModelConfig& cfg, std::vector<S> blob);

    const ModelConfig& config() const { return cfg_; }
    const std::vector<TensorSpec>& tensors() const { return specs_; }
    const std::vector<S>& data() const { return data_; }
    std::vector<S>& data() { return data_; }
    size_t param_count() const { return data_.size(); }

    std::span<const S> tensor(const std::string& name) const;
    std::span<S> tensor(const std::string& name);
    const TensorSpec& spec(const std::string& name) const;

    // Log-probability of each completion token given everything before it.
    LogProbResult forward_logprobs(const TokenSequence& seq) const;

    // Full next-token distribution (probabilities) at the position that
    // predicts seq.ids[pos]; pos must be >= 1.
    std::vector<S> next_token_distribution(const TokenSequence& seq, int pos) const;

    // Accumulates scale * d(sum_logp)/d(param) into grad (flat, same layout
    // as data()). Returns the same values as forward_logprobs.
    LogProbResult forward_backward(const TokenSequence& seq, double scale,
                                   std::vector<S>& grad) const;

    // Gradient of sum_logp with respect to every parameter.
    std::vector<S> grad_logprob(const TokenSequence& seq) const;

    std::vector<S> zero_grad() const { return std::vector<S>(data_.size(), S(0)); }

    // An empty shell; only useful as a target for assignment.
    ModelT() = default;

private:
    void build_layout();
    size_t register_tensor(const std::string& name, std::vector<int> shape, bool trainable);
    LogProbResult run(const TokenSequence& seq, double scale, std::vector<S>* grad,
                      std::vector<S>* last_probs) const;

    static constexpr size_t kAbsent = static_cast<size_t>(-1);
    struct LayerOffsets {
        size_t ln1_w, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        size_t ln2_w, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
        size_t a_q = kAbsent, b_q = kAbsent;
        size_t a_k = kAbsent, b_k = kAbsent;
        size_t a_v = kAbsent, b_v = kAbsent;
    };
    struct Offsets {
        size_t tok_emb, pos_emb, lnf_w, lnf_b, head_w, head_b;
        std::vector<LayerOffsets> layers;
    };

    ModelConfig cfg_;
    std::vector<TensorSpec> specs_;
    std::vector<S> data_;
    Offsets off_;
};

using Model = ModelT<double>;

// Trainable policy plus its frozen reference snapshot.
struct PolicyPair {
    Model policy;
    Model reference;

    static PolicyPair from(Model m) {
        PolicyPair p;
        p.reference = m;
        p.policy = std::move(m);
        return p;
    }
    // Re-snapshots the reference from the current policy (stage boundary).
    void refresh_reference() { reference = policy; }
};

}  // namespace prefrank
