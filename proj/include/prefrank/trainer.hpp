#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "prefrank/datapipe.hpp"
#include "prefrank/model.hpp"
#include "prefrank/objectives.hpp"
#include "prefrank/tokenizer.hpp"

namespace prefrank {

// A preference sample after tokenization: the chosen and every rejected
// sequence share the prompt region.
struct TokenizedSample {
    TokenSequence chosen;
    std::vector<TokenSequence> rejected;
    std::string id;  // user id, surfaced in diagnostics
};

TokenizedSample tokenize_sample(const Vocabulary& vocab, const PreferenceSample& sample);
std::vector<TokenizedSample> tokenize_samples(const Vocabulary& vocab,
                                              const std::vector<PreferenceSample>& samples);

struct TrainConfig {
    std::string stage = "sft_then_dmpo";  // sft | dmpo | sft_then_dmpo | dmpo_only
    double lr0 = 1e-3;
    double lr_floor = 0.0;
    int sft_epochs = 10;
    int dmpo_epochs = 10;
    int batch_size = 4;
    uint64_t seed = 0;
    double beta = 0.1;
    int k = 1;           // rejected completions per sample
    int eval_every = 1;  // steps between metric log entries
    bool use_adam = true;  // false: plain gradient descent
    bool early_stop = false;  // patience-3 stop on validation AUC

    void validate() const;
};

// The paper's learning-rate sweep set.
const std::vector<double>& lr_sweep_set();

// One metrics line. The step is the number of optimizer updates completed;
// the logged lr is the one the update used, i.e. cosine_lr(step-1, total).
struct TrainLogEntry {
    int64_t step = 0;
    std::string stage;
    double loss = 0.0;
    double chosen_reward = 0.0;
    double rejected_reward = 0.0;
    double margin = 0.0;
    double lr = 0.0;
    double wall_time = 0.0;  // seconds since stage start
    double grad_norm = 0.0;  // pre-clip global norm over trainable params
    bool clipped = false;
};

struct StageResult {
    std::string stage;
    std::vector<TrainLogEntry> log;
    int64_t steps = 0;
    // Full-split metrics before the first and after the last update.
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double initial_margin = 0.0;
    double final_margin = 0.0;
};

struct RunResult {
    std::vector<StageResult> stages;
};

// lr_floor + (lr0 - lr_floor) * (1 + cos(pi * step / total_steps)) / 2,
// clamped to the floor past total_steps.
double cosine_lr(int64_t step, int64_t total_steps, double lr0, double lr_floor = 0.0);

// Single-stage entry points. train_dmpo uses pair.reference as-is; staging
// policy (when to re-snapshot it) belongs to run_stages.
StageResult train_sft(PolicyPair& pair, const std::vector<TokenizedSample>& train,
                      const TrainConfig& cfg);
StageResult train_dmpo(PolicyPair& pair, const std::vector<TokenizedSample>& train,
                       const TrainConfig& cfg);

// Runs the configured stage plan:
//   sft            – supervised stage only
//   dmpo           – preference stage; reference re-snapshotted from the
//                    current policy first
//   sft_then_dmpo  – both, reference snapshotted between the stages
//   dmpo_only      – preference stage against the untouched reference
//                    (the pristine initialization)
// When run_dir is non-empty, writes metrics.jsonl plus a checkpoint at
// every stage boundary and at the end. valid_auc (when provided) powers
// optional early stopping.
RunResult run_stages(PolicyPair& pair, const std::vector<TokenizedSample>& train,
                     const TrainConfig& cfg, const std::string& run_dir = "",
                     const std::function<double(const PolicyPair&)>& valid_auc = nullptr);

struct SweepOutcome {
    double best_lr = 0.0;
    double best_auc = 0.0;
    std::vector<std::pair<double, double>> per_lr;  // (lr, validation AUC)
};

// Trains one full run per candidate lr from the same base model and keeps
// the lr with the best validation AUC; ties go to the smaller lr.
SweepOutcome lr_sweep(const Model& base, const std::vector<TokenizedSample>& train,
                      const TrainConfig& cfg, const std::vector<double>& sweep,
                      const std::function<double(const PolicyPair&)>& valid_auc);

}  // namespace prefrank
