#include "prefrank/bpr.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prefrank/errors.hpp"
#include "prefrank/objectives.hpp"
#include "prefrank/rng.hpp"
#include "prefrank/trainer.hpp"

namespace prefrank {

void MfParams::validate() const {
    if (dim < 1) throw ConfigError("mf dim must be >= 1");
    auto check_table = [&](const auto& table, const char* what) {
        for (const auto& [key, vec] : table) {
            if (static_cast<int>(vec.size()) != dim) {
                throw DataError(std::string(what) + " vector for '" + key + "' has " +
                                std::to_string(vec.size()) + " entries, expected " +
                                std::to_string(dim));
            }
            for (double v : vec) {
                if (!std::isfinite(v)) {
                    throw NumericError(std::string(what) + " vector for '" + key +
                                       "' has a non-finite entry");
                }
            }
        }
    };
    check_table(user_vecs, "user");
    check_table(item_vecs, "item");
}

double mf_score(const MfParams& params, const std::string& user, const std::string& item) {
    const auto u = params.user_vecs.find(user);
    if (u == params.user_vecs.end()) return 0.0;
    const auto i = params.item_vecs.find(item);
    if (i == params.item_vecs.end()) return 0.0;
    double dot = 0.0;
    for (size_t d = 0; d < u->second.size(); ++d) dot += u->second[d] * i->second[d];
    return dot;
}

std::vector<BprTriple> triples_from_samples(const std::vector<PreferenceSample>& samples) {
    std::vector<BprTriple> triples;
    for (const PreferenceSample& s : samples) {
        for (const std::string& neg : s.negative_items) {
            triples.push_back({s.user_id, s.positive_item, neg});
        }
    }
    return triples;
}

void BprConfig::validate() const {
    if (dim < 1) throw ConfigError("bpr dim must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("bpr lr must be positive");
    if (epochs < 0) throw ConfigError("bpr epochs must be >= 0");
    if (init_std < 0.0) throw ConfigError("bpr init_std must be >= 0");
}

EvalReport evaluate_mf(const MfParams& params, const std::vector<PreferenceSample>& split) {
    EvalReport report;
    report.mode = "mf-dot";
    std::vector<double> pos_scores;
    std::vector<double> neg_scores;
    double accuracy_sum = 0.0;
    for (const PreferenceSample& sample : split) {
        if (sample.positive_item.empty() || sample.negative_items.empty()) {
            ++report.skipped;
            report.skipped_ids.push_back(sample.user_id);
            continue;
        }
        SampleEval eval;
        eval.id = sample.user_id;
        eval.positive.candidate_text = sample.positive_item;
        eval.positive.score = mf_score(params, sample.user_id, sample.positive_item);
        std::vector<double> negs;
        for (const std::string& item : sample.negative_items) {
            CandidateScore cs;
            cs.candidate_text = item;
            cs.score = mf_score(params, sample.user_id, item);
            negs.push_back(cs.score);
            eval.negatives.push_back(std::move(cs));
        }
        eval.pair_accuracy = pair_accuracy(eval.positive.score, negs);
        accuracy_sum += eval.pair_accuracy;
        pos_scores.push_back(eval.positive.score);
        neg_scores.insert(neg_scores.end(), negs.begin(), negs.end());
        report.samples.push_back(std::move(eval));
        ++report.evaluated;
    }
    if (report.evaluated == 0) {
        throw DataError("no evaluable samples in split (" + std::to_string(report.skipped) +
                        " skipped)");
    }
    report.auc = auc(pos_scores, neg_scores);
    report.mean_pos_score = std::accumulate(pos_scores.begin(), pos_scores.end(), 0.0) /
                            static_cast<double>(pos_scores.size());
    report.mean_neg_score = std::accumulate(neg_scores.begin(), neg_scores.end(), 0.0) /
                            static_cast<double>(neg_scores.size());
    report.gap = report.mean_pos_score - report.mean_neg_score;
    report.pairwise_accuracy = accuracy_sum / static_cast<double>(report.evaluated);
    return report;
}

namespace {

double mean_triple_loss(const MfParams& params, const std::vector<BprTriple>& triples) {
    double sum = 0.0;
    for (const BprTriple& t : triples) {
        sum += bpr_loss(mf_score(params, t.user, t.pos), mf_score(params, t.user, t.neg));
    }
    return sum / static_cast<double>(triples.size());
}

// One full training run at a fixed learning rate.
BprResult train_once(const DatasetSplit& splits, const BprConfig& cfg, double lr) {
    const std::vector<BprTriple> triples = triples_from_samples(splits.train);
    if (triples.empty()) throw DataError("bpr training needs a non-empty train split");

    BprResult result;
    result.lr_used = lr;
    MfParams& params = result.params;
    params.dim = cfg.dim;

    // Initialize every id the train split mentions, in sample order, so the
    // run is reproducible regardless of hash-map iteration order.
    Rng init_rng(derive_seed(cfg.seed, "bpr-init"));
    auto ensure = [&](std::unordered_map<std::string, std::vector<double>>& table,
                      const std::string& key) {
        auto [it, inserted] = table.try_emplace(key);
        if (inserted) {
            it->second.resize(static_cast<size_t>(cfg.dim));
            for (double& v : it->second) v = cfg.init_std * init_rng.next_gauss();
        }
    };
    for (const PreferenceSample& s : splits.train) {
        ensure(params.user_vecs, s.user_id);
        ensure(params.item_vecs, s.positive_item);
        for (const std::string& neg : s.negative_items) ensure(params.item_vecs, neg);
    }

    result.train_loss_initial = mean_triple_loss(params, triples);

    std::vector<size_t> order(triples.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> u_old(static_cast<size_t>(cfg.dim));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng(derive_seed(cfg.seed, "bpr-epoch", static_cast<uint64_t>(epoch))).shuffle(order);
        for (size_t idx : order) {
            const BprTriple& t = triples[idx];
            std::vector<double>& u = params.user_vecs[t.user];
            std::vector<double>& ip = params.item_vecs[t.pos];
            std::vector<double>& in = params.item_vecs[t.neg];
            double x = 0.0;
            for (int d = 0; d < cfg.dim; ++d) x += u[d] * (ip[d] - in[d]);
            const double step = lr * sigmoid(-x);
            std::copy(u.begin(), u.end(), u_old.begin());
            for (int d = 0; d < cfg.dim; ++d) {
                u[d] += step * (ip[d] - in[d]);
                ip[d] += step * u_old[d];
                in[d] -= step * u_old[d];
            }
        }
    }

    params.validate();
    result.train_loss_final = mean_triple_loss(params, triples);
    if (!splits.valid.empty()) result.valid_auc = evaluate_mf(params, splits.valid).auc;
    result.report = evaluate_mf(params, splits.test);
    return result;
}

}  // namespace

BprResult train_bpr(const DatasetSplit& splits, const BprConfig& cfg) {
    cfg.validate();
    if (splits.test.empty()) throw DataError("bpr evaluation needs a non-empty test split");
    if (!cfg.sweep_lr) return train_once(splits, cfg, cfg.lr);

    if (splits.valid.empty()) {
        throw ConfigError("bpr lr sweep needs a validation split");
    }
    std::vector<double> candidates = lr_sweep_set();
    std::sort(candidates.begin(), candidates.end());  // ties resolve to the smaller lr
    BprResult best;
    bool have_best = false;
    for (double lr : candidates) {
        BprResult r = train_once(splits, cfg, lr);
        if (!have_best || r.valid_auc > best.valid_auc) {
            best = std::move(r);
            have_best = true;
        }
    }
    return best;
}

}  // namespace prefrank
