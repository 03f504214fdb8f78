#include <cstdio>

#include "common.hpp"
#include "prefrank/checkpoint.hpp"
#include "prefrank/errors.hpp"

namespace prefrank::cli {

int cmd_train(const GlobalOptions& g, const std::string& data_dir,
              const std::string& vocab_path) {
    const RunConfig cfg = resolve_config(g);
    start_run_dir(g.run_dir, cfg);
    const DatasetSplit splits = load_split_dir(data_dir);
    const Vocabulary vocab = vocab_path.empty()
                                 ? vocab_from_splits(splits, cfg.model.vocab_size)
                                 : Vocabulary::load(vocab_path);
    log_line(g.run_dir, "training on " + std::to_string(splits.train.size()) + " samples (" +
                            cfg.train.stage + ")");
    const PipelineOutcome out = train_and_eval(cfg, splits, vocab, g.run_dir);
    const bool has_valid = !splits.valid.empty();
    write_pipeline_outputs(g.run_dir, vocab, out, has_valid);
    log_line(g.run_dir, "test auc " + format_auc(out.test_report.auc));
    print_pipeline(out, has_valid);
    return 0;
}

int cmd_evaluate(const GlobalOptions& g, const std::string& checkpoint_path,
                 const std::string& vocab_path, const std::string& data_dir,
                 const std::string& split_name) {
    const RunConfig cfg = resolve_config(g);
    start_run_dir(g.run_dir, cfg);
    CheckpointMeta meta;
    const Model model = load_checkpoint(checkpoint_path, &meta);
    const Vocabulary vocab = Vocabulary::load(vocab_path);
    const DatasetSplit splits = load_split_dir(data_dir);
    const std::vector<PreferenceSample>* split = nullptr;
    if (split_name == "train") {
        split = &splits.train;
    } else if (split_name == "valid") {
        split = &splits.valid;
    } else if (split_name == "test") {
        split = &splits.test;
    } else {
        throw ConfigError("--split must be train, valid, or test (got '" + split_name + "')");
    }
    const EvalReport report =
        evaluate_split(model, vocab, *split, parse_score_mode(cfg.score_mode));

    nlohmann::ordered_json j = report_to_json(report);
    j["checkpoint"] = {{"path", checkpoint_path},
                       {"stage", meta.stage},
                       {"step", meta.step},
                       {"seed", meta.seed}};
    j["split"] = split_name;
    write_json_file(g.run_dir + "/report.json", j);
    write_file(g.run_dir + "/report.txt", report_text(report));
    log_line(g.run_dir, split_name + " auc " + format_auc(report.auc));
    std::printf("%s", report_text(report).c_str());
    std::printf("checkpoint %s (stage %s, step %lld)\n", checkpoint_path.c_str(),
                meta.stage.c_str(), static_cast<long long>(meta.step));
    return 0;
}

int cmd_sweep(const GlobalOptions& g, const std::string& data_dir,
              const std::string& vocab_path) {
    const RunConfig cfg = resolve_config(g);
    start_run_dir(g.run_dir, cfg);
    const DatasetSplit splits = load_split_dir(data_dir);
    if (splits.valid.empty()) {
        throw ConfigError("the learning-rate sweep needs a non-empty validation split");
    }
    const Vocabulary vocab = vocab_path.empty()
                                 ? vocab_from_splits(splits, cfg.model.vocab_size)
                                 : Vocabulary::load(vocab_path);
    if (vocab.size() > cfg.model.vocab_size) {
        throw ConfigError("model.vocab_size (" + std::to_string(cfg.model.vocab_size) +
                          ") is smaller than the vocabulary (" + std::to_string(vocab.size()) +
                          ")");
    }
    const ScoreMode mode = parse_score_mode(cfg.score_mode);
    const std::vector<TokenizedSample> tokenized = tokenize_samples(vocab, splits.train);
    const Model base = build_base_model(cfg);
    const auto valid_cb = [&](const PolicyPair& p) {
        return evaluate_split(p.policy, vocab, splits.valid, mode).auc;
    };
    log_line(g.run_dir, "sweeping " + std::to_string(lr_sweep_set().size()) + " learning rates");
    const SweepOutcome sweep = lr_sweep(base, tokenized, cfg.train, lr_sweep_set(), valid_cb);

    std::vector<std::vector<std::string>> rows;
    for (const auto& [lr, auc] : sweep.per_lr) {
        char lr_buf[32];
        std::snprintf(lr_buf, sizeof(lr_buf), "%g", lr);
        rows.push_back({lr_buf, format_auc(auc), lr == sweep.best_lr ? "*" : ""});
    }
    const std::string table = render_table({"lr", "valid_auc", "best"}, rows);

    // Retrain at the winning lr and keep that run's artifacts.
    RunConfig final_cfg = cfg;
    final_cfg.train.lr0 = sweep.best_lr;
    const PipelineOutcome out = train_and_eval(final_cfg, splits, vocab, g.run_dir);
    write_pipeline_outputs(g.run_dir, vocab, out, true);

    nlohmann::ordered_json j;
    j["best_lr"] = sweep.best_lr;
    j["best_valid_auc"] = sweep.best_auc;
    nlohmann::ordered_json per_lr = nlohmann::ordered_json::array();
    for (const auto& [lr, auc] : sweep.per_lr) per_lr.push_back({{"lr", lr}, {"auc", auc}});
    j["per_lr"] = per_lr;
    j["final_test_auc"] = out.test_report.auc;
    write_json_file(g.run_dir + "/sweep.json", j);
    write_file(g.run_dir + "/sweep.txt", table);
    log_line(g.run_dir, "best lr " + std::to_string(sweep.best_lr) + " (valid auc " +
                            format_auc(sweep.best_auc) + ")");
    std::printf("%s", table.c_str());
    std::printf("\nretrained at lr %g:\n", sweep.best_lr);
    print_pipeline(out, true);
    return 0;
}

int cmd_case_study(const GlobalOptions& g, const std::string& before_path,
                   const std::string& after_path, const std::string& vocab_path,
                   const std::string& samples_path, int index) {
    const RunConfig cfg = resolve_config(g);
    start_run_dir(g.run_dir, cfg);
    const Model before = load_checkpoint(before_path);
    const Model after = load_checkpoint(after_path);
    const Vocabulary vocab = Vocabulary::load(vocab_path);
    const std::vector<PreferenceSample> samples = read_samples_jsonl(samples_path);
    if (index < 0 || static_cast<size_t>(index) >= samples.size()) {
        throw ConfigError("--index " + std::to_string(index) + " is out of range; " +
                          samples_path + " holds " + std::to_string(samples.size()) +
                          " samples");
    }
    const CaseStudy study = case_study_dump(before, after, vocab, samples[index]);
    const std::string text = case_study_text(study);
    write_json_file(g.run_dir + "/case_study.json", case_study_to_json(study));
    write_file(g.run_dir + "/case_study.txt", text);
    log_line(g.run_dir, "case study for sample " + std::to_string(index) + " of " +
                            samples_path);
    std::printf("%s", text.c_str());
    return 0;
}

}  // namespace prefrank::cli
