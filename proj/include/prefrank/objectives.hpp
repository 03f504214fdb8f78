#pragma once

#include <vector>

#include "prefrank/model.hpp"

namespace prefrank {

// -log sigmoid(z) through the softplus identity log(1 + e^{-z}), with the
// sign split so the exponent never overflows.
double neg_log_sigmoid(double z);

double sigmoid(double z);

struct DmpoConfig {
    double beta = 0.1;
    int k = 1;

    void validate() const;
};

// Margin bookkeeping surfaced alongside every preference loss.
struct LossAux {
    double chosen_reward = 0.0;
    double mean_rejected_reward = 0.0;
    double margin = 0.0;  // chosen_reward - mean_rejected_reward
};

struct LossOutput {
    double loss = 0.0;
    std::vector<double> per_param_grad;  // d loss / d policy parameter, flat
    LossAux aux;
};

// ---- scalar cores -------------------------------------------------------
// These operate on injected completion log-probabilities and carry the loss
// arithmetic exactly; the sequence-level forms below reduce to them.

double implicit_reward_value(double logp_policy, double logp_ref, double beta);

double dmpo_loss_value(double chosen_logp_policy, double chosen_logp_ref,
                       const std::vector<double>& rejected_logp_policy,
                       const std::vector<double>& rejected_logp_ref, const DmpoConfig& cfg,
                       LossAux* aux = nullptr);

double sft_loss_value(const std::vector<double>& per_token_logp);

double bpr_loss(double score_pos, double score_neg);

// ---- sequence-level forms ----------------------------------------------

// Negative log-likelihood of the completion tokens under the policy.
LossOutput sft_loss(const PolicyPair& pair, const TokenSequence& seq);

// beta * (log pi_policy(y|x) - log pi_ref(y|x)) over completion tokens.
double implicit_reward(const PolicyPair& pair, const TokenSequence& seq, double beta);

// -log sigmoid(r_chosen - mean of rejected rewards); gradient is the exact
// analytic form: sigmoid(-margin) * beta * (grad logp(chosen) - mean of
// grad logp(rejected)), negated for descent.
LossOutput dmpo_loss(const PolicyPair& pair, const TokenSequence& chosen,
                     const std::vector<TokenSequence>& rejected, const DmpoConfig& cfg);

// Same loss with the (frozen) reference log-probabilities supplied by the
// caller, so a training loop can compute them once per stage instead of
// once per visit.
LossOutput dmpo_loss_with_ref(const Model& policy, const TokenSequence& chosen,
                              const std::vector<TokenSequence>& rejected,
                              double chosen_ref_logp,
                              const std::vector<double>& rejected_ref_logp,
                              const DmpoConfig& cfg);

// The k = 1 restriction, routed through the same implementation.
LossOutput dpo_loss(const PolicyPair& pair, const TokenSequence& chosen,
                    const TokenSequence& rejected, double beta);

}  // namespace prefrank
