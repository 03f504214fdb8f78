#include "prefrank/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "prefrank/errors.hpp"

namespace prefrank {

ScoreMode parse_score_mode(const std::string& name) {
    if (name == "token-mean") return ScoreMode::kTokenMean;
    if (name == "joint-over-n") return ScoreMode::kJointOverN;
    throw ConfigError("unknown score mode '" + name +
                      "' (expected 'token-mean' or 'joint-over-n')");
}

std::string to_string(ScoreMode mode) {
    return mode == ScoreMode::kTokenMean ? "token-mean" : "joint-over-n";
}

double aggregate_probs(const std::vector<double>& per_token_prob, ScoreMode mode) {
    if (per_token_prob.empty()) throw DataError("cannot aggregate an empty probability vector");
    const double n = static_cast<double>(per_token_prob.size());
    if (mode == ScoreMode::kTokenMean) {
        double sum = 0.0;
        for (double p : per_token_prob) sum += p;
        return sum / n;
    }
    double prod = 1.0;
    for (double p : per_token_prob) prod *= p;
    return prod / n;
}

CandidateScore score_candidate(const Model& model, const Vocabulary& vocab,
                               const std::string& prompt, const std::string& candidate,
                               ScoreMode mode) {
    if (vocab.size() > model.config().vocab_size) {
        throw ConfigError("vocabulary has " + std::to_string(vocab.size()) +
                          " entries but the model embeds only " +
                          std::to_string(model.config().vocab_size));
    }
    const TokenSequence seq = encode(vocab, prompt, candidate);
    if (seq.completion_len() == 0) {
        throw DataError("candidate '" + candidate + "' encodes to zero tokens");
    }
    const LogProbResult lp = model.forward_logprobs(seq);
    CandidateScore out;
    out.candidate_text = candidate;
    out.n_tokens = seq.completion_len();
    out.per_token_prob.reserve(lp.per_token_logp.size());
    for (double l : lp.per_token_logp) out.per_token_prob.push_back(std::exp(l));
    out.score = aggregate_probs(out.per_token_prob, mode);
    return out;
}

double pair_accuracy(double pos_score, const std::vector<double>& neg_scores) {
    if (neg_scores.empty()) throw DataError("pair accuracy needs at least one negative score");
    double won = 0.0;
    for (double n : neg_scores) {
        if (pos_score > n) {
            won += 1.0;
        } else if (pos_score == n) {
            won += 0.5;
        }
    }
    return won / static_cast<double>(neg_scores.size());
}

namespace {

void check_auc_inputs(const std::vector<double>& pos, const std::vector<double>& neg) {
    if (pos.empty()) throw DataError("auc needs at least one positive score");
    if (neg.empty()) throw DataError("auc needs at least one negative score");
}

}  // namespace

double auc(const std::vector<double>& pos_scores, const std::vector<double>& neg_scores) {
    check_auc_inputs(pos_scores, neg_scores);
    // Rank-sum: sort the pooled scores, give tied runs their average rank,
    // and sum the positive ranks. Ranks are half-integers, so the sums
    // below are exact and the single final division matches the
    // brute-force pair count bit for bit.
    struct Entry {
        double score;
        bool positive;
    };
    std::vector<Entry> all;
    all.reserve(pos_scores.size() + neg_scores.size());
    for (double s : pos_scores) all.push_back({s, true});
    for (double s : neg_scores) all.push_back({s, false});
    std::sort(all.begin(), all.end(),
              [](const Entry& a, const Entry& b) { return a.score < b.score; });

    double pos_rank_sum = 0.0;
    size_t i = 0;
    while (i < all.size()) {
        size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        // 1-based ranks i+1 .. j share the average (i + j + 1) / 2.
        const double avg_rank = (static_cast<double>(i) + static_cast<double>(j) + 1.0) / 2.0;
        for (size_t t = i; t < j; ++t) {
            if (all[t].positive) pos_rank_sum += avg_rank;
        }
        i = j;
    }
    const double np = static_cast<double>(pos_scores.size());
    const double nn = static_cast<double>(neg_scores.size());
    const double u = pos_rank_sum - np * (np + 1.0) / 2.0;
    return u / (np * nn);
}

double auc_bruteforce(const std::vector<double>& pos_scores,
                      const std::vector<double>& neg_scores) {
    check_auc_inputs(pos_scores, neg_scores);
    double won = 0.0;
    for (double p : pos_scores) {
        for (double n : neg_scores) {
            if (p > n) {
                won += 1.0;
            } else if (p == n) {
                won += 0.5;
            }
        }
    }
    const double np = static_cast<double>(pos_scores.size());
    const double nn = static_cast<double>(neg_scores.size());
    return won / (np * nn);
}

EvalReport evaluate_split(const Model& model, const Vocabulary& vocab,
                          const std::vector<PreferenceSample>& split, ScoreMode mode) {
    EvalReport report;
    report.mode = to_string(mode);
    std::vector<double> pos_scores;
    std::vector<double> neg_scores;
    double accuracy_sum = 0.0;
    for (const PreferenceSample& sample : split) {
        if (sample.chosen_text.empty() || sample.rejected_texts.empty()) {
            ++report.skipped;
            report.skipped_ids.push_back(sample.user_id);
            continue;
        }
        SampleEval eval;
        eval.id = sample.user_id;
        eval.positive = score_candidate(model, vocab, sample.prompt_text, sample.chosen_text, mode);
        std::vector<double> negs;
        for (const std::string& rej : sample.rejected_texts) {
            eval.negatives.push_back(score_candidate(model, vocab, sample.prompt_text, rej, mode));
            negs.push_back(eval.negatives.back().score);
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
    report.mean_pos_score =
        std::accumulate(pos_scores.begin(), pos_scores.end(), 0.0) /
        static_cast<double>(pos_scores.size());
    report.mean_neg_score =
        std::accumulate(neg_scores.begin(), neg_scores.end(), 0.0) /
        static_cast<double>(neg_scores.size());
    report.gap = report.mean_pos_score - report.mean_neg_score;
    report.pairwise_accuracy = accuracy_sum / static_cast<double>(report.evaluated);
    return report;
}

nlohmann::ordered_json report_to_json(const EvalReport& report, bool include_samples) {
    nlohmann::ordered_json j;
    j["auc"] = report.auc;
    j["mean_pos_score"] = report.mean_pos_score;
    j["mean_neg_score"] = report.mean_neg_score;
    j["gap"] = report.gap;
    j["pairwise_accuracy"] = report.pairwise_accuracy;
    j["mode"] = report.mode;
    j["evaluated"] = report.evaluated;
    j["skipped"] = report.skipped;
    if (report.skipped > 0) j["skipped_ids"] = report.skipped_ids;
    if (include_samples) {
        nlohmann::ordered_json samples = nlohmann::ordered_json::array();
        for (const SampleEval& s : report.samples) {
            nlohmann::ordered_json js;
            js["id"] = s.id;
            js["pos_score"] = s.positive.score;
            nlohmann::ordered_json negs = nlohmann::ordered_json::array();
            for (const CandidateScore& n : s.negatives) negs.push_back(n.score);
            js["neg_scores"] = negs;
            js["pair_accuracy"] = s.pair_accuracy;
            samples.push_back(std::move(js));
        }
        j["samples"] = samples;
    }
    return j;
}

namespace {

CaseStudyCandidate case_study_candidate(const Model& before, const Model& after,
                                        const Vocabulary& vocab, const std::string& prompt,
                                        const std::string& candidate, bool is_positive) {
    const CandidateScore a = score_candidate(before, vocab, prompt, candidate);
    const CandidateScore b = score_candidate(after, vocab, prompt, candidate);
    const TokenSequence seq = encode(vocab, prompt, candidate);
    CaseStudyCandidate out;
    out.candidate_text = candidate;
    out.is_positive = is_positive;
    double sum_before = 0.0;
    double sum_after = 0.0;
    for (int t = 0; t < seq.completion_len(); ++t) {
        CaseStudyRow row;
        row.token = vocab.token(seq.ids[static_cast<size_t>(seq.prompt_len + t)]);
        row.prob_before = a.per_token_prob[static_cast<size_t>(t)];
        row.prob_after = b.per_token_prob[static_cast<size_t>(t)];
        sum_before += row.prob_before;
        sum_after += row.prob_after;
        out.rows.push_back(std::move(row));
    }
    out.mean_before = sum_before / static_cast<double>(seq.completion_len());
    out.mean_after = sum_after / static_cast<double>(seq.completion_len());
    return out;
}

}  // namespace

CaseStudy case_study_dump(const Model& before, const Model& after, const Vocabulary& vocab,
                          const PreferenceSample& sample) {
    if (before.config().vocab_size != after.config().vocab_size) {
        throw ConfigError("checkpoints disagree on vocabulary size (" +
                          std::to_string(before.config().vocab_size) + " vs " +
                          std::to_string(after.config().vocab_size) +
                          "); per-token rows would not align");
    }
    if (sample.chosen_text.empty() || sample.rejected_texts.empty()) {
        throw DataError("case study sample needs a chosen and at least one rejected candidate");
    }
    CaseStudy study;
    study.prompt = sample.prompt_text;
    study.candidates.push_back(
        case_study_candidate(before, after, vocab, sample.prompt_text, sample.chosen_text, true));
    for (const std::string& rej : sample.rejected_texts) {
        study.candidates.push_back(
            case_study_candidate(before, after, vocab, sample.prompt_text, rej, false));
    }
    return study;
}

std::string case_study_text(const CaseStudy& study) {
    std::ostringstream out;
    out << "prompt: " << study.prompt << "\n";
    out << std::fixed << std::setprecision(6);
    for (const CaseStudyCandidate& cand : study.candidates) {
        out << "\n" << (cand.is_positive ? "positive" : "negative")
            << " candidate: " << cand.candidate_text << "\n";
        size_t width = 5;  // at least "token"
        for (const CaseStudyRow& row : cand.rows) width = std::max(width, row.token.size());
        const int w = static_cast<int>(width);
        out << "  " << std::left << std::setw(w) << "token" << "  " << std::setw(10) << "before"
            << "  " << std::setw(10) << "after" << "\n";
        for (const CaseStudyRow& row : cand.rows) {
            out << "  " << std::setw(w) << row.token << "  " << std::setw(10) << row.prob_before
                << "  " << std::setw(10) << row.prob_after << "\n";
        }
        out << "  " << std::setw(w) << "mean" << "  " << std::setw(10) << cand.mean_before << "  "
            << std::setw(10) << cand.mean_after << "\n";
    }
    return out.str();
}

nlohmann::ordered_json case_study_to_json(const CaseStudy& study) {
    nlohmann::ordered_json j;
    j["prompt"] = study.prompt;
    nlohmann::ordered_json cands = nlohmann::ordered_json::array();
    for (const CaseStudyCandidate& cand : study.candidates) {
        nlohmann::ordered_json jc;
        jc["candidate"] = cand.candidate_text;
        jc["is_positive"] = cand.is_positive;
        nlohmann::ordered_json rows = nlohmann::ordered_json::array();
        for (const CaseStudyRow& row : cand.rows) {
            nlohmann::ordered_json jr;
            jr["token"] = row.token;
            jr["prob_before"] = row.prob_before;
            jr["prob_after"] = row.prob_after;
            rows.push_back(std::move(jr));
        }
        jc["tokens"] = rows;
        jc["mean_before"] = cand.mean_before;
        jc["mean_after"] = cand.mean_after;
        cands.push_back(std::move(jc));
    }
    j["candidates"] = cands;
    return j;
}

}  // namespace prefrank
