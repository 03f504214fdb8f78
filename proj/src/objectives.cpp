#include "prefrank/objectives.hpp"

#include <cmath>

#include "prefrank/errors.hpp"

namespace prefrank {

double neg_log_sigmoid(double z) {
    // -log sigmoid(z) = softplus(-z); branch on the sign so exp never
    // receives a large positive argument.
    if (z >= 0.0) return std::log1p(std::exp(-z));
    return -z + std::log1p(std::exp(z));
}

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

void DmpoConfig::validate() const {
    if (beta <= 0.0) throw ConfigError("beta must be positive");
    if (k < 1) throw ConfigError("negative-sample count k must be >= 1");
}

double implicit_reward_value(double logp_policy, double logp_ref, double beta) {
    return beta * (logp_policy - logp_ref);
}

double dmpo_loss_value(double chosen_logp_policy, double chosen_logp_ref,
                       const std::vector<double>& rejected_logp_policy,
                       const std::vector<double>& rejected_logp_ref, const DmpoConfig& cfg,
                       LossAux* aux) {
    cfg.validate();
    if (rejected_logp_policy.empty()) throw ConfigError("rejected list is empty");
    if (rejected_logp_policy.size() != rejected_logp_ref.size() ||
        rejected_logp_policy.size() != static_cast<size_t>(cfg.k)) {
        throw ConfigError("rejected list length " + std::to_string(rejected_logp_policy.size()) +
                          " does not match k=" + std::to_string(cfg.k));
    }
    const double r_w = implicit_reward_value(chosen_logp_policy, chosen_logp_ref, cfg.beta);
    double r_l_sum = 0.0;
    for (size_t i = 0; i < rejected_logp_policy.size(); ++i) {
        r_l_sum += implicit_reward_value(rejected_logp_policy[i], rejected_logp_ref[i], cfg.beta);
    }
    const double r_l_mean = r_l_sum / static_cast<double>(cfg.k);
    const double margin = r_w - r_l_mean;
    if (aux) {
        aux->chosen_reward = r_w;
        aux->mean_rejected_reward = r_l_mean;
        aux->margin = margin;
    }
    return neg_log_sigmoid(margin);
}

double sft_loss_value(const std::vector<double>& per_token_logp) {
    if (per_token_logp.empty()) throw DataError("completion region is empty");
    double sum = 0.0;
    for (const double lp : per_token_logp) sum += lp;
    return -sum;
}

double bpr_loss(double score_pos, double score_neg) {
    return neg_log_sigmoid(score_pos - score_neg);
}

namespace {

// Preference samples share one prompt across chosen and rejected; a mismatch
// means the sample was assembled wrong, not a numeric issue.
void require_shared_prompt(const TokenSequence& chosen, const TokenSequence& rejected) {
    if (chosen.prompt_len != rejected.prompt_len) {
        throw DataError("chosen and rejected prompts differ in length");
    }
    for (int t = 0; t < chosen.prompt_len; ++t) {
        if (chosen.ids[static_cast<size_t>(t)] != rejected.ids[static_cast<size_t>(t)]) {
            throw DataError("chosen and rejected prompts diverge at position " +
                            std::to_string(t));
        }
    }
}

}  // namespace

LossOutput sft_loss(const PolicyPair& pair, const TokenSequence& seq) {
    LossOutput out;
    out.per_param_grad = pair.policy.zero_grad();
    // loss = -sum_logp, so accumulate with scale -1 in one pass.
    const LogProbResult r = pair.policy.forward_backward(seq, -1.0, out.per_param_grad);
    out.loss = sft_loss_value(r.per_token_logp);
    return out;
}

double implicit_reward(const PolicyPair& pair, const TokenSequence& seq, double beta) {
    const double lp = pair.policy.forward_logprobs(seq).sum_logp;
    const double lr = pair.reference.forward_logprobs(seq).sum_logp;
    return implicit_reward_value(lp, lr, beta);
}

LossOutput dmpo_loss(const PolicyPair& pair, const TokenSequence& chosen,
                     const std::vector<TokenSequence>& rejected, const DmpoConfig& cfg) {
    cfg.validate();
    if (rejected.empty()) throw ConfigError("rejected list is empty");
    if (rejected.size() != static_cast<size_t>(cfg.k)) {
        throw ConfigError("rejected list length " + std::to_string(rejected.size()) +
                          " does not match k=" + std::to_string(cfg.k));
    }
    const double chosen_ref = pair.reference.forward_logprobs(chosen).sum_logp;
    std::vector<double> rej_ref(rejected.size());
    for (size_t i = 0; i < rejected.size(); ++i) {
        rej_ref[i] = pair.reference.forward_logprobs(rejected[i]).sum_logp;
    }
    return dmpo_loss_with_ref(pair.policy, chosen, rejected, chosen_ref, rej_ref, cfg);
}

LossOutput dmpo_loss_with_ref(const Model& policy, const TokenSequence& chosen,
                              const std::vector<TokenSequence>& rejected,
                              double chosen_ref_logp,
                              const std::vector<double>& rejected_ref_logp,
                              const DmpoConfig& cfg) {
    cfg.validate();
    if (rejected.empty()) throw ConfigError("rejected list is empty");
    if (rejected.size() != static_cast<size_t>(cfg.k)) {
        throw ConfigError("rejected list length " + std::to_string(rejected.size()) +
                          " does not match k=" + std::to_string(cfg.k));
    }
    if (rejected_ref_logp.size() != rejected.size()) {
        throw ConfigError("cached reference log-probabilities do not match rejected list");
    }
    for (const TokenSequence& r : rejected) require_shared_prompt(chosen, r);

    // One combined pass per sequence: collect log-probabilities and raw
    // gradients together, then weight them once the margin is known.
    std::vector<double> g_chosen = policy.zero_grad();
    const double chosen_policy = policy.forward_backward(chosen, 1.0, g_chosen).sum_logp;
    std::vector<double> rej_policy(rejected.size());
    std::vector<std::vector<double>> g_rej(rejected.size());
    for (size_t i = 0; i < rejected.size(); ++i) {
        g_rej[i] = policy.zero_grad();
        rej_policy[i] = policy.forward_backward(rejected[i], 1.0, g_rej[i]).sum_logp;
    }

    LossOutput out;
    out.loss = dmpo_loss_value(chosen_policy, chosen_ref_logp, rej_policy, rejected_ref_logp,
                               cfg, &out.aux);

    // dL/d margin = -sigmoid(-margin); the chain through the rewards gives
    // the paper's weight-times-direction form.
    const double weight = sigmoid(-out.aux.margin);
    const double rej_scale = weight * cfg.beta / static_cast<double>(cfg.k);
    out.per_param_grad = policy.zero_grad();
    for (size_t p = 0; p < out.per_param_grad.size(); ++p) {
        double g = -weight * cfg.beta * g_chosen[p];
        for (const std::vector<double>& gr : g_rej) g += rej_scale * gr[p];
        out.per_param_grad[p] = g;
    }
    return out;
}

LossOutput dpo_loss(const PolicyPair& pair, const TokenSequence& chosen,
                    const TokenSequence& rejected, double beta) {
    DmpoConfig cfg;
    cfg.beta = beta;
    cfg.k = 1;
    return dmpo_loss(pair, chosen, {rejected}, cfg);
}

}  // namespace prefrank
