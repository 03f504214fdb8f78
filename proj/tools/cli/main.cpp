#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "common.hpp"
#include "prefrank/errors.hpp"

namespace {

using prefrank::cli::GlobalOptions;
using prefrank::cli::SourceOptions;

// Exit codes; every runtime error category gets its own.
constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitIo = 5;

void add_common_options(CLI::App* cmd, GlobalOptions& g) {
    cmd->add_option("--config", g.config_path, "JSON config file; built-in defaults when omitted")
        ->option_text("FILE");
    cmd->add_option("--set", g.overrides,
                    "override one config value by dotted path, e.g. --set train.lr0=3e-4 "
                    "(repeatable)")
        ->allow_extra_args(false)
        ->option_text("KEY=VALUE");
    cmd->add_option_function<std::string>(
           "--seed", [&g](const std::string& v) { g.overrides.push_back("seed=" + v); },
           "root seed; shorthand for --set seed=N, wins over the PREFRANK_SEED variable")
        ->option_text("N");
    cmd->add_option("--run-dir", g.run_dir,
                    "output directory; must not already hold results")
        ->option_text("DIR")
        ->required();
}

void add_source_options(CLI::App* cmd, SourceOptions& src, const std::string& prefix = "") {
    const std::string p = "--" + prefix;
    auto* tsv = cmd->add_option(p + "tsv", src.tsv, "interaction log, one event per tab-separated row")
                    ->option_text("FILE");
    auto* ml = cmd->add_option(p + "movielens", src.movielens_dir,
                               "directory holding ratings.dat and movies.dat")
                   ->option_text("DIR");
    auto* synth = cmd->add_flag(p + "synthetic", src.synthetic, "generate the configured synthetic log");
    cmd->add_option(p + "domain", src.synth_domain,
                    "synthetic domain override (movie or game)")
        ->option_text("NAME")
        ->needs(synth);
    if (prefix.empty()) {
        auto* rev = cmd->add_option("--amazon-reviews", src.amazon_reviews,
                                    "review dump in JSON-lines form")
                        ->option_text("FILE");
        cmd->add_option("--amazon-meta", src.amazon_meta,
                        "product metadata JSON-lines with item titles")
            ->option_text("FILE")
            ->needs(rev);
        tsv->excludes(ml)->excludes(synth)->excludes(rev);
        ml->excludes(synth)->excludes(rev);
        synth->excludes(rev);
    } else {
        tsv->excludes(ml)->excludes(synth);
        ml->excludes(synth);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "Preference-ranking recommender pipeline: build preference samples from rating "
        "logs, train a small language model with supervised and preference objectives, "
        "and evaluate pairwise ranking."};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "print help for every subcommand");

    GlobalOptions g;
    SourceOptions src;
    SourceOptions cross_source;
    SourceOptions cross_target;
    bool movielens_layout = false;
    std::string data_dir;
    std::string vocab_path;
    std::string checkpoint_path;
    std::string split_name = "test";
    std::string before_path;
    std::string after_path;
    std::string samples_path;
    int sample_index = 0;
    int vocab_cap = 0;
    std::vector<int> k_values;
    std::vector<int> fewshot_sizes;
    std::string gc_objective = "both";
    std::string gc_adapters = "both";
    bool gc_float32 = false;
    bool gc_corrupt = false;

    CLI::App* synth_data =
        app.add_subcommand("synth-data", "generate a synthetic interaction log");
    add_common_options(synth_data, g);
    synth_data->add_flag("--movielens-layout", movielens_layout,
                         "also write the raw two-file rating layout under ml/");

    CLI::App* prepare =
        app.add_subcommand("prepare-data", "build preference samples and train/valid/test splits");
    add_common_options(prepare, g);
    add_source_options(prepare, src);

    CLI::App* build_vocab =
        app.add_subcommand("build-vocab", "build the word vocabulary from prepared splits");
    add_common_options(build_vocab, g);
    build_vocab->add_option("--data", data_dir, "directory written by prepare-data")
        ->option_text("DIR")
        ->required();
    build_vocab->add_option("--cap", vocab_cap, "vocabulary size cap; model.vocab_size when omitted")
        ->option_text("N");

    CLI::App* train = app.add_subcommand("train", "train on prepared splits and report test AUC");
    add_common_options(train, g);
    train->add_option("--data", data_dir, "directory written by prepare-data")
        ->option_text("DIR")
        ->required();
    train->add_option("--vocab", vocab_path, "vocabulary file; rebuilt from the splits when omitted")
        ->option_text("FILE");

    CLI::App* evaluate = app.add_subcommand("evaluate", "score a checkpoint on one split");
    add_common_options(evaluate, g);
    evaluate->add_option("--checkpoint", checkpoint_path, "model checkpoint to score")
        ->option_text("FILE")
        ->required();
    evaluate->add_option("--vocab", vocab_path, "vocabulary the checkpoint was trained with")
        ->option_text("FILE")
        ->required();
    evaluate->add_option("--data", data_dir, "directory written by prepare-data")
        ->option_text("DIR")
        ->required();
    evaluate->add_option("--split", split_name, "train, valid, or test (default test)")
        ->option_text("NAME");

    CLI::App* sweep =
        app.add_subcommand("sweep", "pick the learning rate by validation AUC, then retrain");
    add_common_options(sweep, g);
    sweep->add_option("--data", data_dir, "directory written by prepare-data")
        ->option_text("DIR")
        ->required();
    sweep->add_option("--vocab", vocab_path, "vocabulary file; rebuilt from the splits when omitted")
        ->option_text("FILE");

    CLI::App* ablate_k =
        app.add_subcommand("ablate-k", "one full run per negatives-per-sample value");
    add_common_options(ablate_k, g);
    add_source_options(ablate_k, src);
    ablate_k->add_option("--k", k_values, "k values to try (default 1 2 3 4 5)")
        ->option_text("K...");

    CLI::App* ablate_fewshot =
        app.add_subcommand("ablate-fewshot", "training-set-size sweep for two stage plans");
    add_common_options(ablate_fewshot, g);
    add_source_options(ablate_fewshot, src);
    ablate_fewshot->add_option("--sizes", fewshot_sizes, "train sizes to try (default 20 50 100 200)")
        ->option_text("N...");

    CLI::App* cross_domain =
        app.add_subcommand("cross-domain", "train on one domain, evaluate on another");
    add_common_options(cross_domain, g);
    add_source_options(cross_domain, cross_source, "source-");
    add_source_options(cross_domain, cross_target, "target-");

    CLI::App* gradcheck = app.add_subcommand(
        "gradcheck", "finite-difference check of the analytic gradients; nonzero exit on failure");
    add_common_options(gradcheck, g);
    gradcheck->add_option("--objective", gc_objective, "sft, dmpo, or both (default both)")
        ->option_text("NAME");
    gradcheck->add_option("--adapters", gc_adapters, "on, off, or both (default both)")
        ->option_text("MODE");
    gradcheck->add_flag("--float32", gc_float32, "check the single-precision path");
    gradcheck->add_flag("--corrupt", gc_corrupt,
                        "negative control: falsify one gradient component, expect failure");

    CLI::App* case_study = app.add_subcommand(
        "case-study", "per-token probability comparison of one sample under two checkpoints");
    add_common_options(case_study, g);
    case_study->add_option("--before", before_path, "checkpoint before preference training")
        ->option_text("FILE")
        ->required();
    case_study->add_option("--after", after_path, "checkpoint after preference training")
        ->option_text("FILE")
        ->required();
    case_study->add_option("--vocab", vocab_path, "vocabulary both checkpoints share")
        ->option_text("FILE")
        ->required();
    case_study->add_option("--samples", samples_path, "samples file (one JSON object per line)")
        ->option_text("FILE")
        ->required();
    case_study->add_option("--index", sample_index, "sample row to dump (default 0)")
        ->option_text("N");

    CLI::App* baseline =
        app.add_subcommand("baseline-bpr", "matrix-factorization pairwise-ranking baseline");
    add_common_options(baseline, g);
    baseline->add_option("--data", data_dir, "directory written by prepare-data")
        ->option_text("DIR")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        using namespace prefrank::cli;
        if (app.got_subcommand(synth_data)) return cmd_synth_data(g, movielens_layout);
        if (app.got_subcommand(prepare)) return cmd_prepare_data(g, src);
        if (app.got_subcommand(build_vocab)) return cmd_build_vocab(g, data_dir, vocab_cap);
        if (app.got_subcommand(train)) return cmd_train(g, data_dir, vocab_path);
        if (app.got_subcommand(evaluate)) {
            return cmd_evaluate(g, checkpoint_path, vocab_path, data_dir, split_name);
        }
        if (app.got_subcommand(sweep)) return cmd_sweep(g, data_dir, vocab_path);
        if (app.got_subcommand(ablate_k)) return cmd_ablate_k(g, src, k_values);
        if (app.got_subcommand(ablate_fewshot)) return cmd_ablate_fewshot(g, src, fewshot_sizes);
        if (app.got_subcommand(cross_domain)) return cmd_cross_domain(g, cross_source, cross_target);
        if (app.got_subcommand(gradcheck)) {
            return cmd_gradcheck(g, gc_objective, gc_adapters, gc_float32, gc_corrupt);
        }
        if (app.got_subcommand(case_study)) {
            return cmd_case_study(g, before_path, after_path, vocab_path, samples_path,
                                  sample_index);
        }
        if (app.got_subcommand(baseline)) return cmd_baseline_bpr(g, data_dir);
        std::fprintf(stderr, "no subcommand given\n");
        return kExitConfig;
    } catch (const prefrank::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const prefrank::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const prefrank::NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return kExitNumeric;
    } catch (const prefrank::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitIo;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitOther;
    }
}
