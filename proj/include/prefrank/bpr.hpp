#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "prefrank/datapipe.hpp"
#include "prefrank/evalkit.hpp"

namespace prefrank {

// Matrix-factorization parameters: one latent vector per user id and per
// item title. Ids absent from a table score as a zero vector, so unseen
// users or items contribute only ties.
struct MfParams {
    int dim = 32;
    std::unordered_map<std::string, std::vector<double>> user_vecs;
    std::unordered_map<std::string, std::vector<double>> item_vecs;

    void validate() const;  // consistent dim, finite entries
};

// Dot product of the user and item vectors; either side unseen -> 0.
double mf_score(const MfParams& params, const std::string& user, const std::string& item);

// One pairwise-preference training example.
struct BprTriple {
    std::string user;
    std::string pos;
    std::string neg;
};

// Every preference sample yields one triple per negative candidate, in
// candidate order. The prompt history is not used: only the labeled
// candidate pair carries a preference signal.
std::vector<BprTriple> triples_from_samples(const std::vector<PreferenceSample>& samples);

struct BprConfig {
    int dim = 32;
    double lr = 1e-3;
    int epochs = 100;
    double init_std = 0.1;  // embeddings drawn from N(0, init_std^2); 0 => all-zero start
    uint64_t seed = 0;
    bool sweep_lr = false;  // try the shared lr sweep set, pick by validation auc

    void validate() const;
};

struct BprResult {
    MfParams params;
    double lr_used = 0.0;
    double train_loss_initial = 0.0;  // mean pairwise loss over train triples
    double train_loss_final = 0.0;
    double valid_auc = 0.0;
    EvalReport report;  // test-split evaluation
};

// Scores each sample's candidates with mf_score and pools exactly like the
// token-probability evaluator; the report's mode is "mf-dot".
EvalReport evaluate_mf(const MfParams& params, const std::vector<PreferenceSample>& split);

// Plain SGD on the pairwise ranking loss over (user, pos, neg) triples from
// the train split; evaluated on the test split. Deterministic under seed.
BprResult train_bpr(const DatasetSplit& splits, const BprConfig& cfg);

}  // namespace prefrank
