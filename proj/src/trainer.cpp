#include "prefrank/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "prefrank/checkpoint.hpp"
#include "prefrank/errors.hpp"
#include "prefrank/rng.hpp"

namespace prefrank {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr double kClipNorm = 1.0;

const std::vector<double> kSweepSet = {1e-3, 1e-4, 1e-5, 1e-6};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<char> trainable_mask(const Model& model) {
    std::vector<char> mask(model.param_count(), 0);
    for (const TensorSpec& spec : model.tensors()) {
        if (!spec.trainable) continue;
        std::fill(mask.begin() + static_cast<ptrdiff_t>(spec.offset),
                  mask.begin() + static_cast<ptrdiff_t>(spec.offset + spec.size), 1);
    }
    return mask;
}

struct RefCache {
    std::vector<double> chosen;
    std::vector<std::vector<double>> rejected;
};

RefCache build_ref_cache(const Model& reference, const std::vector<TokenizedSample>& samples) {
    RefCache cache;
    cache.chosen.reserve(samples.size());
    cache.rejected.reserve(samples.size());
    for (const TokenizedSample& s : samples) {
        cache.chosen.push_back(reference.forward_logprobs(s.chosen).sum_logp);
        std::vector<double> rej;
        rej.reserve(s.rejected.size());
        for (const TokenSequence& r : s.rejected) {
            rej.push_back(reference.forward_logprobs(r).sum_logp);
        }
        cache.rejected.push_back(std::move(rej));
    }
    return cache;
}

// Mean loss (and margin, for the preference stage) over the whole split
// without touching any gradient.
void split_metrics(const Model& policy, const std::vector<TokenizedSample>& samples,
                   const TrainConfig& cfg, bool dmpo, const RefCache* cache,
                   double* mean_loss, double* mean_margin) {
    DmpoConfig dc;
    dc.beta = cfg.beta;
    dc.k = cfg.k;
    double loss_sum = 0.0, margin_sum = 0.0;
    for (size_t i = 0; i < samples.size(); ++i) {
        const TokenizedSample& s = samples[i];
        if (dmpo) {
            std::vector<double> rej_logps(s.rejected.size());
            for (size_t j = 0; j < s.rejected.size(); ++j) {
                rej_logps[j] = policy.forward_logprobs(s.rejected[j]).sum_logp;
            }
            LossAux aux;
            loss_sum += dmpo_loss_value(policy.forward_logprobs(s.chosen).sum_logp,
                                        cache->chosen[i], rej_logps, cache->rejected[i], dc,
                                        &aux);
            margin_sum += aux.margin;
        } else {
            loss_sum += sft_loss_value(policy.forward_logprobs(s.chosen).per_token_logp);
        }
    }
    const auto n = static_cast<double>(samples.size());
    *mean_loss = loss_sum / n;
    *mean_margin = dmpo ? margin_sum / n : 0.0;
}

StageResult run_one_stage(PolicyPair& pair, const std::vector<TokenizedSample>& samples,
                          const TrainConfig& cfg, const std::string& stage_name,
                          const std::function<double(const PolicyPair&)>& valid_auc) {
    cfg.validate();
    if (samples.empty()) throw DataError("train split is empty");
    const bool dmpo = stage_name == "dmpo";
    if (dmpo) {
        for (size_t i = 0; i < samples.size(); ++i) {
            if (samples[i].rejected.size() != static_cast<size_t>(cfg.k)) {
                throw ConfigError("sample '" + samples[i].id + "' carries " +
                                  std::to_string(samples[i].rejected.size()) +
                                  " rejected completions but k=" + std::to_string(cfg.k));
            }
        }
    }

    const auto t0 = std::chrono::steady_clock::now();
    const int n = static_cast<int>(samples.size());
    const int epochs = dmpo ? cfg.dmpo_epochs : cfg.sft_epochs;
    const int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = static_cast<int64_t>(epochs) * steps_per_epoch;

    RefCache cache;
    if (dmpo) cache = build_ref_cache(pair.reference, samples);

    StageResult res;
    res.stage = stage_name;
    split_metrics(pair.policy, samples, cfg, dmpo, &cache, &res.initial_loss,
                  &res.initial_margin);

    const std::vector<char> mask = trainable_mask(pair.policy);
    const size_t P = pair.policy.param_count();
    std::vector<double> m(P, 0.0), v(P, 0.0);
    DmpoConfig dc;
    dc.beta = cfg.beta;
    dc.k = cfg.k;

    int64_t step = 0;
    double best_auc = -1.0;
    int stale_evals = 0;
    const uint64_t order_seed = derive_seed(cfg.seed, stage_name);
    bool stopped = false;

    std::vector<double> grad(P);
    for (int epoch = 0; epoch < epochs && !stopped; ++epoch) {
        std::vector<int> order(samples.size());
        std::iota(order.begin(), order.end(), 0);
        Rng(derive_seed(order_seed, "epoch-order", static_cast<uint64_t>(epoch)))
            .shuffle(order);

        for (int start = 0; start < n; start += cfg.batch_size) {
            const int count = std::min(cfg.batch_size, n - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            double loss_sum = 0.0, cr_sum = 0.0, rr_sum = 0.0, mg_sum = 0.0;
            for (int b = 0; b < count; ++b) {
                const int idx = order[static_cast<size_t>(start + b)];
                const TokenizedSample& s = samples[static_cast<size_t>(idx)];
                LossOutput out;
                if (dmpo) {
                    out = dmpo_loss_with_ref(pair.policy, s.chosen, s.rejected,
                                             cache.chosen[static_cast<size_t>(idx)],
                                             cache.rejected[static_cast<size_t>(idx)], dc);
                    cr_sum += out.aux.chosen_reward;
                    rr_sum += out.aux.mean_rejected_reward;
                    mg_sum += out.aux.margin;
                } else {
                    out = sft_loss(pair, s.chosen);
                }
                if (!std::isfinite(out.loss)) {
                    throw NumericError("non-finite " + stage_name + " loss on sample '" +
                                       s.id + "' at step " + std::to_string(step + 1));
                }
                loss_sum += out.loss;
                for (size_t p = 0; p < P; ++p) grad[p] += out.per_param_grad[p];
            }
            const double inv = 1.0 / static_cast<double>(count);
            double norm_sq = 0.0;
            for (size_t p = 0; p < P; ++p) {
                grad[p] *= inv;
                if (mask[p]) norm_sq += grad[p] * grad[p];
            }
            const double norm = std::sqrt(norm_sq);
            const bool clipped = norm > kClipNorm;
            if (clipped) {
                const double scale = kClipNorm / norm;
                for (size_t p = 0; p < P; ++p) grad[p] *= scale;
            }

            const double lr = cosine_lr(step, total_steps, cfg.lr0, cfg.lr_floor);
            std::vector<double>& theta = pair.policy.data();
            if (cfg.use_adam) {
                const double t = static_cast<double>(step + 1);
                const double bc1 = 1.0 - std::pow(kAdamBeta1, t);
                const double bc2 = 1.0 - std::pow(kAdamBeta2, t);
                for (size_t p = 0; p < P; ++p) {
                    if (!mask[p]) continue;
                    m[p] = kAdamBeta1 * m[p] + (1.0 - kAdamBeta1) * grad[p];
                    v[p] = kAdamBeta2 * v[p] + (1.0 - kAdamBeta2) * grad[p] * grad[p];
                    theta[p] -= lr * (m[p] / bc1) / (std::sqrt(v[p] / bc2) + kAdamEps);
                }
            } else {
                for (size_t p = 0; p < P; ++p) {
                    if (mask[p]) theta[p] -= lr * grad[p];
                }
            }
            ++step;

            if (step % cfg.eval_every == 0 || step == total_steps) {
                TrainLogEntry entry;
                entry.step = step;
                entry.stage = stage_name;
                entry.loss = loss_sum / count;
                entry.chosen_reward = cr_sum / count;
                entry.rejected_reward = rr_sum / count;
                entry.margin = mg_sum / count;
                entry.lr = lr;
                entry.wall_time = seconds_since(t0);
                entry.grad_norm = norm;
                entry.clipped = clipped;
                res.log.push_back(std::move(entry));
            }
        }

        if (cfg.early_stop && valid_auc) {
            const double auc = valid_auc(pair);
            if (auc > best_auc) {
                best_auc = auc;
                stale_evals = 0;
            } else if (++stale_evals >= 3) {
                stopped = true;
            }
        }
    }

    res.steps = step;
    split_metrics(pair.policy, samples, cfg, dmpo, &cache, &res.final_loss,
                  &res.final_margin);
    return res;
}

void write_metrics(const std::string& path, const RunResult& run) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write metrics log: " + path);
    for (const StageResult& stage : run.stages) {
        for (const TrainLogEntry& e : stage.log) {
            nlohmann::ordered_json j;
            j["step"] = e.step;
            j["stage"] = e.stage;
            j["loss"] = e.loss;
            j["chosen_reward"] = e.chosen_reward;
            j["rejected_reward"] = e.rejected_reward;
            j["margin"] = e.margin;
            j["lr"] = e.lr;
            j["wall_time"] = e.wall_time;
            j["grad_norm"] = e.grad_norm;
            j["clipped"] = e.clipped;
            f << j.dump() << '\n';
        }
    }
    if (!f) throw IoError("short write to " + path);
}

}  // namespace

void TrainConfig::validate() const {
    if (stage != "sft" && stage != "dmpo" && stage != "sft_then_dmpo" &&
        stage != "dmpo_only") {
        throw ConfigError("stage must be sft, dmpo, sft_then_dmpo, or dmpo_only; got '" +
                          stage + "'");
    }
    if (lr0 <= 0.0) throw ConfigError("lr0 must be positive");
    if (lr_floor < 0.0 || lr_floor > lr0) {
        throw ConfigError("lr_floor must lie in [0, lr0]");
    }
    if (sft_epochs < 0 || dmpo_epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (beta <= 0.0) throw ConfigError("beta must be positive");
    if (k < 1) throw ConfigError("k must be >= 1");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
}

const std::vector<double>& lr_sweep_set() { return kSweepSet; }

TokenizedSample tokenize_sample(const Vocabulary& vocab, const PreferenceSample& sample) {
    TokenizedSample out;
    out.id = sample.user_id;
    out.chosen = encode(vocab, sample.prompt_text, sample.chosen_text);
    out.rejected.reserve(sample.rejected_texts.size());
    for (const std::string& r : sample.rejected_texts) {
        out.rejected.push_back(encode(vocab, sample.prompt_text, r));
    }
    return out;
}

std::vector<TokenizedSample> tokenize_samples(const Vocabulary& vocab,
                                              const std::vector<PreferenceSample>& samples) {
    std::vector<TokenizedSample> out;
    out.reserve(samples.size());
    for (const PreferenceSample& s : samples) out.push_back(tokenize_sample(vocab, s));
    return out;
}

double cosine_lr(int64_t step, int64_t total_steps, double lr0, double lr_floor) {
    if (step < 0) throw ConfigError("cosine_lr: negative step");
    if (total_steps <= 0 || step >= total_steps) return lr_floor;
    const double phase =
        std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total_steps));
    return lr_floor + (lr0 - lr_floor) * (1.0 + phase) / 2.0;
}

StageResult train_sft(PolicyPair& pair, const std::vector<TokenizedSample>& train,
                      const TrainConfig& cfg) {
    return run_one_stage(pair, train, cfg, "sft", nullptr);
}

StageResult train_dmpo(PolicyPair& pair, const std::vector<TokenizedSample>& train,
                       const TrainConfig& cfg) {
    return run_one_stage(pair, train, cfg, "dmpo", nullptr);
}

RunResult run_stages(PolicyPair& pair, const std::vector<TokenizedSample>& train,
                     const TrainConfig& cfg, const std::string& run_dir,
                     const std::function<double(const PolicyPair&)>& valid_auc) {
    cfg.validate();
    RunResult run;
    int64_t total_steps = 0;
    auto finish_stage = [&](const std::string& name, StageResult res) {
        total_steps += res.steps;
        if (!run_dir.empty()) {
            CheckpointMeta meta;
            meta.seed = cfg.seed;
            meta.step = total_steps;
            meta.stage = name;
            save_checkpoint(run_dir + "/checkpoint." + name + ".bin", pair.policy, meta);
        }
        run.stages.push_back(std::move(res));
    };

    if (cfg.stage == "sft" || cfg.stage == "sft_then_dmpo") {
        finish_stage("sft", run_one_stage(pair, train, cfg, "sft", valid_auc));
    }
    if (cfg.stage == "dmpo" || cfg.stage == "sft_then_dmpo") {
        pair.refresh_reference();
        finish_stage("dmpo", run_one_stage(pair, train, cfg, "dmpo", valid_auc));
    } else if (cfg.stage == "dmpo_only") {
        // reference stays whatever the caller supplied: the pristine init
        finish_stage("dmpo", run_one_stage(pair, train, cfg, "dmpo", valid_auc));
    }

    if (!run_dir.empty()) {
        CheckpointMeta meta;
        meta.seed = cfg.seed;
        meta.step = total_steps;
        meta.stage = "final";
        save_checkpoint(run_dir + "/checkpoint.final.bin", pair.policy, meta);
        write_metrics(run_dir + "/metrics.jsonl", run);
    }
    return run;
}

SweepOutcome lr_sweep(const Model& base, const std::vector<TokenizedSample>& train,
                      const TrainConfig& cfg, const std::vector<double>& sweep,
                      const std::function<double(const PolicyPair&)>& valid_auc) {
    if (sweep.empty()) throw ConfigError("learning-rate sweep set is empty");
    if (!valid_auc) throw ConfigError("learning-rate sweep needs a validation scorer");
    SweepOutcome outcome;
    std::vector<double> candidates = sweep;
    std::sort(candidates.begin(), candidates.end());  // smallest first: ties stay small
    bool first = true;
    for (const double lr : candidates) {
        PolicyPair pair = PolicyPair::from(base);
        TrainConfig run_cfg = cfg;
        run_cfg.lr0 = lr;
        run_stages(pair, train, run_cfg);
        const double auc = valid_auc(pair);
        outcome.per_lr.emplace_back(lr, auc);
        if (first || auc > outcome.best_auc) {
            outcome.best_lr = lr;
            outcome.best_auc = auc;
            first = false;
        }
    }
    return outcome;
}

}  // namespace prefrank
