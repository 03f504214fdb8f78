#include <cstdio>
#include <filesystem>

#include "common.hpp"
#include "prefrank/synthgen.hpp"

namespace prefrank::cli {

int cmd_synth_data(const GlobalOptions& g, bool movielens_layout) {
    const RunConfig cfg = resolve_config(g);
    start_run_dir(g.run_dir, cfg);
    const std::vector<InteractionEvent> events = generate_interactions(cfg.synth);
    write_interactions_tsv(g.run_dir + "/events.tsv", events);
    if (movielens_layout) {
        const std::string ml_dir = g.run_dir + "/ml";
        std::filesystem::create_directories(ml_dir);
        write_movielens_fixture(ml_dir, cfg.synth);
    }
    nlohmann::ordered_json summary;
    summary["events"] = events.size();
    summary["users"] = cfg.synth.users;
    summary["domain"] = cfg.synth.domain;
    summary["movielens_layout"] = movielens_layout;
    write_json_file(g.run_dir + "/synth_summary.json", summary);
    log_line(g.run_dir, "wrote " + std::to_string(events.size()) + " events");
    std::printf("wrote %zu synthetic %s interactions to %s/events.tsv\n", events.size(),
                cfg.synth.domain.c_str(), g.run_dir.c_str());
    return 0;
}

int cmd_prepare_data(const GlobalOptions& g, const SourceOptions& src) {
    const RunConfig cfg = resolve_config(g);
    start_run_dir(g.run_dir, cfg);
    const std::vector<InteractionEvent> events = load_events(src, cfg, g.run_dir);
    log_line(g.run_dir, "loaded " + std::to_string(events.size()) + " events");

    const PrepareResult prep = prepare_dataset(events, cfg.data);
    validate_samples(prep.samples);
    const DatasetSplit splits =
        make_splits(prep.samples, cfg.data.sizes, cfg.data.seed, cfg.data.split_mode);
    save_split_dir(g.run_dir, splits);

    nlohmann::ordered_json summary;
    summary["events"] = events.size();
    summary["users_seen"] = prep.users_seen;
    summary["users_kept"] = prep.users_kept;
    summary["samples_built"] = prep.samples.size();
    summary["samples_skipped"] = prep.skipped.size();
    summary["skip_reasons"] = prep.skipped;
    summary["splits"] = {{"train", splits.train.size()},
                         {"valid", splits.valid.size()},
                         {"test", splits.test.size()}};
    write_json_file(g.run_dir + "/prepare_summary.json", summary);
    log_line(g.run_dir, "built " + std::to_string(prep.samples.size()) + " samples, skipped " +
                            std::to_string(prep.skipped.size()));
    std::printf("kept %d of %d users; %zu samples -> %zu/%zu/%zu train/valid/test in %s\n",
                prep.users_kept, prep.users_seen, prep.samples.size(), splits.train.size(),
                splits.valid.size(), splits.test.size(), g.run_dir.c_str());
    return 0;
}

int cmd_build_vocab(const GlobalOptions& g, const std::string& data_dir, int cap) {
    const RunConfig cfg = resolve_config(g);
    start_run_dir(g.run_dir, cfg);
    const DatasetSplit splits = load_split_dir(data_dir);
    const int effective_cap = cap > 0 ? cap : cfg.model.vocab_size;
    const Vocabulary vocab = vocab_from_splits(splits, effective_cap);
    vocab.save(g.run_dir + "/vocab.txt");

    nlohmann::ordered_json summary;
    summary["size"] = vocab.size();
    summary["cap"] = effective_cap;
    summary["data_dir"] = data_dir;
    write_json_file(g.run_dir + "/vocab_summary.json", summary);
    log_line(g.run_dir, "vocabulary of " + std::to_string(vocab.size()) + " tokens");
    std::printf("built a %d-token vocabulary (cap %d) in %s/vocab.txt\n", vocab.size(),
                effective_cap, g.run_dir.c_str());
    return 0;
}

}  // namespace prefrank::cli
