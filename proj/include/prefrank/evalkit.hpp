#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "prefrank/datapipe.hpp"
#include "prefrank/model.hpp"
#include "prefrank/tokenizer.hpp"

namespace prefrank {

// How per-token probabilities are collapsed into one candidate score.
//   token-mean:   (1/n) * sum_t p_t        -- the default
//   joint-over-n: (prod_t p_t) / n         -- the joint sequence probability,
//                                             length-normalized by dividing by n
enum class ScoreMode {
    kTokenMean,
    kJointOverN,
};

ScoreMode parse_score_mode(const std::string& name);
std::string to_string(ScoreMode mode);

// Collapses a per-token probability vector into the candidate score for the
// given mode. score_candidate() computes its score with exactly this
// function, so the "score equals the aggregation of per_token_prob"
// invariant holds by construction.
double aggregate_probs(const std::vector<double>& per_token_prob, ScoreMode mode);

// One scored candidate completion.
struct CandidateScore {
    std::string candidate_text;
    int n_tokens = 0;                    // completion tokens scored
    double score = 0.0;                  // in (0, 1]
    std::vector<double> per_token_prob;  // length == n_tokens
};

// Evaluation record for one preference sample.
struct SampleEval {
    std::string id;  // user id of the sample
    CandidateScore positive;
    std::vector<CandidateScore> negatives;
    double pair_accuracy = 0.0;  // won (pos, neg) pairs within the sample, ties 1/2
};

struct EvalReport {
    double auc = 0.0;                // pooled positive scores vs pooled negative scores
    double mean_pos_score = 0.0;
    double mean_neg_score = 0.0;
    double gap = 0.0;                // mean_pos_score - mean_neg_score
    double pairwise_accuracy = 0.0;  // mean per-sample pair accuracy
    std::string mode;                // score mode used
    size_t evaluated = 0;
    size_t skipped = 0;
    std::vector<std::string> skipped_ids;  // user ids of skipped samples
    std::vector<SampleEval> samples;
};

// Scores one candidate completion against a prompt: encodes prompt +
// candidate, reads off the conditional probability of every completion
// token, and aggregates them. Errors: candidate with no tokens -> DataError;
// vocabulary larger than the model's embedding table -> ConfigError.
CandidateScore score_candidate(const Model& model, const Vocabulary& vocab,
                               const std::string& prompt, const std::string& candidate,
                               ScoreMode mode = ScoreMode::kTokenMean);

// Fraction of (positive, negative) score pairs the positive wins; a tie
// counts one half. Empty negatives -> DataError.
double pair_accuracy(double pos_score, const std::vector<double>& neg_scores);

// Probability that a random positive outranks a random negative, ties one
// half, computed via the rank-sum statistic in O(n log n). Agrees exactly
// with auc_bruteforce on every input. Empty list -> DataError.
double auc(const std::vector<double>& pos_scores, const std::vector<double>& neg_scores);

// Reference implementation: counts all n_pos * n_neg pairs directly.
double auc_bruteforce(const std::vector<double>& pos_scores,
                      const std::vector<double>& neg_scores);

// Scores every candidate of every sample and pools the results. Samples
// without a chosen or without any rejected candidate are skipped and
// counted. No sampling anywhere: identical inputs give identical reports.
EvalReport evaluate_split(const Model& model, const Vocabulary& vocab,
                          const std::vector<PreferenceSample>& split,
                          ScoreMode mode = ScoreMode::kTokenMean);

nlohmann::ordered_json report_to_json(const EvalReport& report, bool include_samples = false);

// Per-token probability comparison of one sample under two checkpoints,
// e.g. the policy before and after preference training.
struct CaseStudyRow {
    std::string token;
    double prob_before = 0.0;
    double prob_after = 0.0;
};

struct CaseStudyCandidate {
    std::string candidate_text;
    bool is_positive = false;
    std::vector<CaseStudyRow> rows;
    double mean_before = 0.0;  // mean per-token probability under `before`
    double mean_after = 0.0;
};

struct CaseStudy {
    std::string prompt;
    std::vector<CaseStudyCandidate> candidates;  // positive first, then negatives
};

// Both checkpoints must share the tokenizer: a vocabulary size mismatch
// between the two models (or with the vocabulary) -> ConfigError.
CaseStudy case_study_dump(const Model& before, const Model& after, const Vocabulary& vocab,
                          const PreferenceSample& sample);

std::string case_study_text(const CaseStudy& study);
nlohmann::ordered_json case_study_to_json(const CaseStudy& study);

}  // namespace prefrank
