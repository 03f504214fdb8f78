#include "common.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "prefrank/errors.hpp"
#include "prefrank/rng.hpp"
#include "prefrank/synthgen.hpp"

namespace fs = std::filesystem;

namespace prefrank::cli {

RunConfig resolve_config(const GlobalOptions& opts) {
    if (opts.config_path.empty()) return default_run_config(opts.overrides);
    return load_run_config(opts.config_path, opts.overrides);
}

void start_run_dir(const std::string& dir, const RunConfig& cfg) {
    if (dir.empty()) throw ConfigError("--run-dir is required");
    const fs::path p(dir);
    if (fs::exists(p)) {
        if (!fs::is_directory(p)) {
            throw IoError("'" + dir + "' exists and is not a directory");
        }
        if (!fs::is_empty(p)) {
            throw IoError("run directory '" + dir +
                          "' already holds results; refusing to overwrite");
        }
    } else {
        fs::create_directories(p);
    }
    write_json_file(dir + "/config.json", cfg.to_json());
}

void log_line(const std::string& run_dir, const std::string& line) {
    std::ofstream f(run_dir + "/log.txt", std::ios::app);
    if (!f) throw IoError("cannot append to " + run_dir + "/log.txt");
    const std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%d %H:%M:%S", std::localtime(&now));
    f << stamp << "  " << line << '\n';
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << content;
    if (!f) throw IoError("short write to " + path);
}

void write_json_file(const std::string& path, const nlohmann::ordered_json& j) {
    write_file(path, j.dump(2) + "\n");
}

std::string render_table(const std::vector<std::string>& headers,
                         const std::vector<std::vector<std::string>>& rows) {
    std::vector<size_t> widths;
    for (const std::string& h : headers) widths.push_back(h.size());
    for (const auto& row : rows) {
        for (size_t c = 0; c < row.size() && c < widths.size(); ++c) {
            widths[c] = std::max(widths[c], row[c].size());
        }
    }
    std::ostringstream out;
    auto emit = [&](const std::vector<std::string>& cells) {
        for (size_t c = 0; c < widths.size(); ++c) {
            out << std::left << std::setw(static_cast<int>(widths[c]))
                << (c < cells.size() ? cells[c] : "") << (c + 1 < widths.size() ? "  " : "");
        }
        out << '\n';
    };
    emit(headers);
    std::vector<std::string> dashes;
    for (size_t w : widths) dashes.push_back(std::string(w, '-'));
    emit(dashes);
    for (const auto& row : rows) emit(row);
    return out.str();
}

std::string format_auc(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::vector<InteractionEvent> load_events(const SourceOptions& src, const RunConfig& cfg,
                                          const std::string& run_dir) {
    const int sources = (!src.tsv.empty() ? 1 : 0) + (!src.movielens_dir.empty() ? 1 : 0) +
                        (!src.amazon_reviews.empty() ? 1 : 0) + (src.synthetic ? 1 : 0);
    if (sources != 1) {
        throw ConfigError(
            "pick exactly one input: --tsv, --movielens, --amazon-reviews/--amazon-meta, or "
            "--synthetic");
    }
    if (!src.tsv.empty()) return load_interactions_tsv(src.tsv);
    if (!src.movielens_dir.empty()) return load_movielens_dir(src.movielens_dir);
    if (!src.amazon_reviews.empty()) {
        if (src.amazon_meta.empty()) {
            throw ConfigError("--amazon-reviews needs --amazon-meta for the title table");
        }
        const std::string out_tsv = run_dir + "/amazon_events.tsv";
        const int dropped = convert_amazon(src.amazon_reviews, src.amazon_meta, out_tsv);
        log_line(run_dir, "amazon conversion dropped " + std::to_string(dropped) +
                              " reviews without titles");
        return load_interactions_tsv(out_tsv);
    }
    SynthConfig synth = cfg.synth;
    if (!src.synth_domain.empty()) synth.domain = src.synth_domain;
    synth.validate();
    return generate_interactions(synth);
}

void save_split_dir(const std::string& dir, const DatasetSplit& splits) {
    write_samples_jsonl(dir + "/train.jsonl", splits.train);
    write_samples_jsonl(dir + "/valid.jsonl", splits.valid);
    write_samples_jsonl(dir + "/test.jsonl", splits.test);
}

DatasetSplit load_split_dir(const std::string& dir) {
    DatasetSplit splits;
    splits.train = read_samples_jsonl(dir + "/train.jsonl");
    splits.valid = read_samples_jsonl(dir + "/valid.jsonl");
    splits.test = read_samples_jsonl(dir + "/test.jsonl");
    return splits;
}

Vocabulary vocab_from_splits(const DatasetSplit& splits, int cap) {
    std::vector<std::string> corpus;
    auto add = [&](const std::vector<PreferenceSample>& samples) {
        for (const PreferenceSample& s : samples) {
            corpus.push_back(s.prompt_text);
            corpus.push_back(s.chosen_text);
            for (const std::string& r : s.rejected_texts) corpus.push_back(r);
        }
    };
    add(splits.train);
    add(splits.valid);
    add(splits.test);
    if (corpus.empty()) throw DataError("no samples to build a vocabulary from");
    return Vocabulary::build(corpus, cap);
}

Model build_base_model(const RunConfig& cfg) {
    Model base = Model::init(cfg.model, derive_seed(cfg.seed, "model-init"));
    if (cfg.model.adapter_rank > 0) {
        base = Model::with_adapters(base, cfg.model.adapter_rank, cfg.model.adapter_targets,
                                    derive_seed(cfg.seed, "adapter-init"),
                                    cfg.model.train_base_with_adapters);
    }
    return base;
}

PipelineOutcome train_and_eval(const RunConfig& cfg, const DatasetSplit& splits,
                               const Vocabulary& vocab, const std::string& run_dir) {
    if (vocab.size() > cfg.model.vocab_size) {
        throw ConfigError("model.vocab_size (" + std::to_string(cfg.model.vocab_size) +
                          ") is smaller than the vocabulary (" + std::to_string(vocab.size()) +
                          ")");
    }
    const ScoreMode mode = parse_score_mode(cfg.score_mode);
    const std::vector<TokenizedSample> tokenized = tokenize_samples(vocab, splits.train);

    PipelineOutcome out;
    out.pair = PolicyPair::from(build_base_model(cfg));

    std::function<double(const PolicyPair&)> valid_cb;
    if (!splits.valid.empty()) {
        valid_cb = [&cfg, &vocab, &splits, mode](const PolicyPair& p) {
            return evaluate_split(p.policy, vocab, splits.valid, mode).auc;
        };
    }
    out.train_result = run_stages(out.pair, tokenized, cfg.train, run_dir, valid_cb);
    out.test_report = evaluate_split(out.pair.policy, vocab, splits.test, mode);
    if (valid_cb) out.valid_auc = valid_cb(out.pair);
    return out;
}

nlohmann::ordered_json stages_to_json(const RunResult& result) {
    nlohmann::ordered_json stages = nlohmann::ordered_json::array();
    for (const StageResult& s : result.stages) {
        nlohmann::ordered_json j;
        j["stage"] = s.stage;
        j["steps"] = s.steps;
        j["initial_loss"] = s.initial_loss;
        j["final_loss"] = s.final_loss;
        j["initial_margin"] = s.initial_margin;
        j["final_margin"] = s.final_margin;
        stages.push_back(j);
    }
    return stages;
}

void write_pipeline_outputs(const std::string& run_dir, const Vocabulary& vocab,
                            const PipelineOutcome& out, bool has_valid) {
    vocab.save(run_dir + "/vocab.txt");
    nlohmann::ordered_json summary;
    summary["stages"] = stages_to_json(out.train_result);
    if (has_valid) summary["valid_auc"] = out.valid_auc;
    summary["test"] = report_to_json(out.test_report);
    write_json_file(run_dir + "/train_summary.json", summary);
    write_json_file(run_dir + "/report.json", report_to_json(out.test_report));
    write_file(run_dir + "/report.txt", report_text(out.test_report));
}

void print_pipeline(const PipelineOutcome& out, bool has_valid) {
    for (const StageResult& s : out.train_result.stages) {
        std::printf("stage %-4s  %5lld steps  loss %.6f -> %.6f  margin %.6f -> %.6f\n",
                    s.stage.c_str(), static_cast<long long>(s.steps), s.initial_loss,
                    s.final_loss, s.initial_margin, s.final_margin);
    }
    if (has_valid) std::printf("valid auc  %s\n", format_auc(out.valid_auc).c_str());
    std::printf("test  auc  %s  (gap %.6f, pair-acc %.4f, %zu evaluated, %zu skipped)\n",
                format_auc(out.test_report.auc).c_str(), out.test_report.gap,
                out.test_report.pairwise_accuracy, out.test_report.evaluated,
                out.test_report.skipped);
}

std::string report_text(const EvalReport& report) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(6);
    out << "auc                " << report.auc << "\n"
        << "mean_pos_score     " << report.mean_pos_score << "\n"
        << "mean_neg_score     " << report.mean_neg_score << "\n"
        << "gap                " << report.gap << "\n"
        << "pairwise_accuracy  " << report.pairwise_accuracy << "\n"
        << "mode               " << report.mode << "\n"
        << "evaluated          " << report.evaluated << "\n"
        << "skipped            " << report.skipped << "\n";
    return out.str();
}

}  // namespace prefrank::cli
