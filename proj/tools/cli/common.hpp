#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "prefrank/config.hpp"
#include "prefrank/datapipe.hpp"
#include "prefrank/evalkit.hpp"
#include "prefrank/tokenizer.hpp"
#include "prefrank/trainer.hpp"

namespace prefrank::cli {

// Options every subcommand shares.
struct GlobalOptions {
    std::string config_path;               // empty -> built-in defaults
    std::vector<std::string> overrides;    // key.path=value assignments
    std::string run_dir;
};

// Where raw interaction events come from; exactly one source must be set.
struct SourceOptions {
    std::string tsv;
    std::string movielens_dir;
    std::string amazon_reviews;
    std::string amazon_meta;
    bool synthetic = false;
    std::string synth_domain;  // optional override of config synth.domain

    bool any() const {
        return !tsv.empty() || !movielens_dir.empty() || !amazon_reviews.empty() || synthetic;
    }
};

RunConfig resolve_config(const GlobalOptions& opts);

// Creates the run directory (refusing to reuse a non-empty one) and echoes
// the effective config into it.
void start_run_dir(const std::string& dir, const RunConfig& cfg);

void log_line(const std::string& run_dir, const std::string& line);
void write_file(const std::string& path, const std::string& content);
void write_json_file(const std::string& path, const nlohmann::ordered_json& j);

std::string render_table(const std::vector<std::string>& headers,
                         const std::vector<std::vector<std::string>>& rows);

std::string format_auc(double v);

std::vector<InteractionEvent> load_events(const SourceOptions& src, const RunConfig& cfg,
                                          const std::string& run_dir);

void save_split_dir(const std::string& dir, const DatasetSplit& splits);
DatasetSplit load_split_dir(const std::string& dir);

Vocabulary vocab_from_splits(const DatasetSplit& splits, int cap);

// Fresh model per the config: seeded init, plus adapters when
// model.adapter_rank > 0. Every training command starts from this.
Model build_base_model(const RunConfig& cfg);

// The one train+evaluate composition every training-flavoured command uses.
struct PipelineOutcome {
    RunResult train_result;
    EvalReport test_report;
    double valid_auc = 0.0;
    PolicyPair pair;
};

PipelineOutcome train_and_eval(const RunConfig& cfg, const DatasetSplit& splits,
                               const Vocabulary& vocab, const std::string& run_dir);

std::string report_text(const EvalReport& report);

nlohmann::ordered_json stages_to_json(const RunResult& result);

// Standard artifacts of one train+eval run: vocab.txt, train_summary.json,
// report.json, report.txt. has_valid controls whether valid_auc is present.
void write_pipeline_outputs(const std::string& run_dir, const Vocabulary& vocab,
                            const PipelineOutcome& out, bool has_valid);
void print_pipeline(const PipelineOutcome& out, bool has_valid);

// Subcommand entry points; the returned int is the process exit code.
int cmd_synth_data(const GlobalOptions& g, bool movielens_layout);
int cmd_prepare_data(const GlobalOptions& g, const SourceOptions& src);
int cmd_build_vocab(const GlobalOptions& g, const std::string& data_dir, int cap);
int cmd_train(const GlobalOptions& g, const std::string& data_dir, const std::string& vocab_path);
int cmd_evaluate(const GlobalOptions& g, const std::string& checkpoint_path,
                 const std::string& vocab_path, const std::string& data_dir,
                 const std::string& split_name);
int cmd_sweep(const GlobalOptions& g, const std::string& data_dir, const std::string& vocab_path);
int cmd_ablate_k(const GlobalOptions& g, const SourceOptions& src, std::vector<int> k_values);
int cmd_ablate_fewshot(const GlobalOptions& g, const SourceOptions& src, std::vector<int> sizes);
int cmd_cross_domain(const GlobalOptions& g, const SourceOptions& source,
                     const SourceOptions& target);
int cmd_gradcheck(const GlobalOptions& g, const std::string& objective,
                  const std::string& adapters, bool float32, bool corrupt);
int cmd_case_study(const GlobalOptions& g, const std::string& before_path,
                   const std::string& after_path, const std::string& vocab_path,
                   const std::string& samples_path, int index);
int cmd_baseline_bpr(const GlobalOptions& g, const std::string& data_dir);

}  // namespace prefrank::cli
