#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "prefrank/checkpoint.hpp"
#include "prefrank/errors.hpp"
#include "prefrank/rng.hpp"
#include "prefrank/trainer.hpp"

using namespace prefrank;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.vocab_size = 17;
    cfg.embed_dim = 8;
    cfg.num_layers = 1;
    cfg.num_heads = 2;
    cfg.max_seq_len = 16;
    return cfg;
}

// Hand-built samples over the tiny vocabulary: shared prompt, one chosen,
// k rejected.
std::vector<TokenizedSample> toy_samples(int n, int k, uint64_t seed) {
    Rng rng(seed);
    std::vector<TokenizedSample> out;
    for (int i = 0; i < n; ++i) {
        TokenizedSample s;
        s.id = "toy-" + std::to_string(i);
        const int plen = 2 + static_cast<int>(rng.next_below(3));
        std::vector<int> prompt;
        for (int t = 0; t < plen; ++t) prompt.push_back(static_cast<int>(rng.next_below(17)));
        auto extend = [&](TokenSequence& seq) {
            seq.ids = prompt;
            seq.prompt_len = plen;
            const int clen = 2 + static_cast<int>(rng.next_below(3));
            for (int t = 0; t < clen; ++t) {
                seq.ids.push_back(static_cast<int>(rng.next_below(17)));
            }
        };
        extend(s.chosen);
        s.rejected.resize(static_cast<size_t>(k));
        for (auto& r : s.rejected) extend(r);
        out.push_back(std::move(s));
    }
    return out;
}

TrainConfig fast_cfg(const std::string& stage) {
    TrainConfig cfg;
    cfg.stage = stage;
    cfg.sft_epochs = 3;
    cfg.dmpo_epochs = 3;
    cfg.batch_size = 4;
    cfg.lr0 = 1e-3;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("cosine schedule hits its anchor points exactly") {
    CHECK(cosine_lr(0, 100, 0.5) == 0.5);
    CHECK(cosine_lr(100, 100, 0.5) == 0.0);
    CHECK(cosine_lr(50, 100, 0.5) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(cosine_lr(50, 100, 0.5, 0.1) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(cosine_lr(0, 100, 0.5, 0.1) == 0.5);
    CHECK(cosine_lr(100, 100, 0.5, 0.1) == 0.1);
    CHECK(cosine_lr(250, 100, 0.5, 0.1) == 0.1);  // clamped past the end
    CHECK(cosine_lr(25, 100, 1.0) ==
          doctest::Approx((1.0 + std::cos(M_PI * 0.25)) / 2.0).epsilon(1e-15));
    CHECK_THROWS_AS(cosine_lr(-1, 100, 0.5), ConfigError);
}

TEST_CASE("bad training configs are rejected") {
    TrainConfig cfg;
    cfg.stage = "warmup";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.lr0 = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.lr_floor = 2e-3;  // above lr0
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.k = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_NOTHROW(TrainConfig{}.validate());
}

TEST_CASE("sft lowers the split loss and logs the schedule exactly") {
    PolicyPair pair = PolicyPair::from(Model::init(tiny_config(), 3));
    const auto samples = toy_samples(12, 1, 7);
    const TrainConfig cfg = fast_cfg("sft");
    const StageResult res = train_sft(pair, samples, cfg);

    CHECK(res.final_loss < res.initial_loss);
    CHECK(res.steps == 9);  // 12 samples / batch 4 * 3 epochs
    REQUIRE(!res.log.empty());
    const int64_t total = res.steps;
    int64_t prev = 0;
    for (const TrainLogEntry& e : res.log) {
        CHECK(e.step > prev);  // monotone steps
        prev = e.step;
        CHECK(e.stage == "sft");
        CHECK(e.lr == cosine_lr(e.step - 1, total, cfg.lr0, cfg.lr_floor));
        CHECK(e.margin == 0.0);  // no preference bookkeeping in sft
        CHECK(std::isfinite(e.loss));
        CHECK(e.grad_norm >= 0.0);
    }
}

TEST_CASE("dmpo raises the mean margin and reports reward bookkeeping") {
    PolicyPair pair = PolicyPair::from(Model::init(tiny_config(), 4));
    const auto samples = toy_samples(12, 2, 9);
    TrainConfig cfg = fast_cfg("dmpo_only");
    cfg.k = 2;
    const RunResult run = run_stages(pair, samples, cfg);
    REQUIRE(run.stages.size() == 1);
    const StageResult& res = run.stages[0];
    CHECK(res.stage == "dmpo");
    CHECK(std::abs(res.initial_margin) < 1e-12);  // policy == reference at entry
    CHECK(res.initial_loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(res.final_margin > res.initial_margin);
    CHECK(res.final_loss < res.initial_loss);
    for (const TrainLogEntry& e : res.log) {
        CHECK(e.margin == doctest::Approx(e.chosen_reward - e.rejected_reward).epsilon(1e-9));
    }
}

TEST_CASE("zero-epoch stages leave every parameter untouched") {
    PolicyPair pair = PolicyPair::from(Model::init(tiny_config(), 6));
    const std::vector<double> before = pair.policy.data();
    TrainConfig cfg = fast_cfg("sft_then_dmpo");
    cfg.sft_epochs = 0;
    cfg.dmpo_epochs = 0;
    const RunResult run = run_stages(pair, toy_samples(6, 1, 2), cfg);
    CHECK(pair.policy.data() == before);
    for (const StageResult& s : run.stages) {
        CHECK(s.steps == 0);
        CHECK(s.initial_loss == s.final_loss);
    }
}

TEST_CASE("two runs with one seed produce bitwise-identical parameters and logs") {
    const Model base = Model::init(tiny_config(), 8);
    const auto samples = toy_samples(10, 1, 3);
    const TrainConfig cfg = fast_cfg("sft_then_dmpo");

    PolicyPair a = PolicyPair::from(base);
    PolicyPair b = PolicyPair::from(base);
    const RunResult ra = run_stages(a, samples, cfg);
    const RunResult rb = run_stages(b, samples, cfg);
    CHECK(a.policy.data() == b.policy.data());
    REQUIRE(ra.stages.size() == rb.stages.size());
    for (size_t s = 0; s < ra.stages.size(); ++s) {
        REQUIRE(ra.stages[s].log.size() == rb.stages[s].log.size());
        for (size_t i = 0; i < ra.stages[s].log.size(); ++i) {
            const TrainLogEntry& ea = ra.stages[s].log[i];
            const TrainLogEntry& eb = rb.stages[s].log[i];
            CHECK(ea.step == eb.step);
            CHECK(ea.loss == eb.loss);  // bitwise: same arithmetic order
            CHECK(ea.margin == eb.margin);
            CHECK(ea.lr == eb.lr);
            CHECK(ea.grad_norm == eb.grad_norm);
        }
    }

    PolicyPair c = PolicyPair::from(base);
    TrainConfig other = cfg;
    other.seed = 6;
    run_stages(c, samples, other);
    CHECK(c.policy.data() != a.policy.data());  // the seed matters
}

TEST_CASE("staging rules snapshot the reference at the right moments") {
    const Model base = Model::init(tiny_config(), 11);
    const auto samples = toy_samples(8, 1, 4);
    TrainConfig cfg = fast_cfg("sft_then_dmpo");

    // staged: after the run, the reference must equal the post-sft policy,
    // which we reproduce with an sft-only run under the same seed
    PolicyPair staged = PolicyPair::from(base);
    run_stages(staged, samples, cfg);
    PolicyPair sft_only = PolicyPair::from(base);
    TrainConfig sft_cfg = cfg;
    sft_cfg.stage = "sft";
    run_stages(sft_only, samples, sft_cfg);
    CHECK(staged.reference.data() == sft_only.policy.data());

    // dmpo_only: the reference never moves off the pristine initialization
    PolicyPair lone = PolicyPair::from(base);
    TrainConfig lone_cfg = cfg;
    lone_cfg.stage = "dmpo_only";
    run_stages(lone, samples, lone_cfg);
    CHECK(lone.reference.data() == base.data());

    // bare dmpo stage: reference re-snapshotted from the incoming policy
    PolicyPair warm = PolicyPair::from(base);
    run_stages(warm, samples, sft_cfg);  // warm the policy first
    const std::vector<double> warm_policy = warm.policy.data();
    TrainConfig dmpo_cfg = cfg;
    dmpo_cfg.stage = "dmpo";
    run_stages(warm, samples, dmpo_cfg);
    CHECK(warm.reference.data() == warm_policy);
}

TEST_CASE("run directories receive checkpoints and a metrics log") {
    const std::string dir = "/tmp/prefrank_trainer_run";
    fs::remove_all(dir);
    fs::create_directories(dir);
    PolicyPair pair = PolicyPair::from(Model::init(tiny_config(), 13));
    const auto samples = toy_samples(8, 1, 5);
    const TrainConfig cfg = fast_cfg("sft_then_dmpo");
    const RunResult run = run_stages(pair, samples, cfg, dir);

    CHECK(fs::exists(dir + "/checkpoint.sft.bin"));
    CHECK(fs::exists(dir + "/checkpoint.dmpo.bin"));
    CHECK(fs::exists(dir + "/checkpoint.final.bin"));
    CHECK(fs::exists(dir + "/metrics.jsonl"));

    CheckpointMeta meta;
    const Model final_model = load_checkpoint(dir + "/checkpoint.final.bin", &meta);
    CHECK(final_model.data() == pair.policy.data());
    CHECK(meta.stage == "final");
    CHECK(meta.step == run.stages[0].steps + run.stages[1].steps);

    const Model sft_model = load_checkpoint(dir + "/checkpoint.sft.bin");
    CHECK(sft_model.data() == pair.reference.data());  // post-sft snapshot

    std::ifstream f(dir + "/metrics.jsonl");
    std::string line;
    size_t lines = 0;
    size_t sft_lines = 0;
    while (std::getline(f, line)) {
        ++lines;
        CHECK(line.find("\"step\"") != std::string::npos);
        CHECK(line.find("\"lr\"") != std::string::npos);
        CHECK(line.find("\"wall_time\"") != std::string::npos);
        if (line.find("\"stage\":\"sft\"") != std::string::npos) ++sft_lines;
    }
    CHECK(lines == run.stages[0].log.size() + run.stages[1].log.size());
    CHECK(sft_lines == run.stages[0].log.size());
    fs::remove_all(dir);
}

TEST_CASE("adapter training moves only adapter parameters") {
    const Model base = Model::init(tiny_config(), 14);
    const Model adapted = Model::with_adapters(base, 2, AdapterTargets::parse("qkv"), 15);
    PolicyPair pair = PolicyPair::from(adapted);
    const std::vector<double> before = pair.policy.data();
    TrainConfig cfg = fast_cfg("sft");
    run_stages(pair, toy_samples(8, 1, 6), cfg);
    for (const TensorSpec& spec : pair.policy.tensors()) {
        bool moved = false;
        for (size_t i = spec.offset; i < spec.offset + spec.size; ++i) {
            if (pair.policy.data()[i] != before[i]) moved = true;
        }
        if (spec.trainable) {
            if (spec.name.find("lora_a") != std::string::npos) {
                // dA = B^T (...) vanishes while B == 0, so only B moves in
                // the first update; over several steps both move
                continue;
            }
            CHECK(moved);
        } else {
            CHECK_FALSE(moved);
        }
    }
}

TEST_CASE("plain gradient descent is available and lr=0 freezes parameters") {
    PolicyPair pair = PolicyPair::from(Model::init(tiny_config(), 16));
    const auto samples = toy_samples(6, 1, 7);
    TrainConfig cfg = fast_cfg("sft");
    cfg.use_adam = false;
    const StageResult res = train_sft(pair, samples, cfg);
    CHECK(res.final_loss < res.initial_loss);

    PolicyPair frozen = PolicyPair::from(Model::init(tiny_config(), 16));
    const std::vector<double> before = frozen.policy.data();
    TrainConfig zero = cfg;
    zero.lr0 = 1e-300;  // cosine of a positive lr0; floor 0 -> effectively 0
    zero.lr_floor = 0.0;
    train_sft(frozen, samples, zero);
    double max_delta = 0.0;
    for (size_t i = 0; i < before.size(); ++i) {
        max_delta = std::max(max_delta, std::abs(frozen.policy.data()[i] - before[i]));
    }
    CHECK(max_delta < 1e-200);
}

TEST_CASE("mismatched k between config and samples is a config error") {
    PolicyPair pair = PolicyPair::from(Model::init(tiny_config(), 17));
    TrainConfig cfg = fast_cfg("dmpo_only");
    cfg.k = 3;
    CHECK_THROWS_AS(run_stages(pair, toy_samples(4, 1, 8), cfg), ConfigError);
    CHECK_THROWS_AS(run_stages(pair, {}, cfg), DataError);  // empty split
}

TEST_CASE("the learning-rate sweep picks the best validation score, ties small") {
    const Model base = Model::init(tiny_config(), 18);
    const auto samples = toy_samples(6, 1, 9);
    TrainConfig cfg = fast_cfg("sft");
    cfg.sft_epochs = 1;

    // score = negative of lr so the smallest lr wins outright
    const SweepOutcome low = lr_sweep(base, samples, cfg, {1e-3, 1e-4, 1e-5},
                                      [](const PolicyPair&) {
                                          static int call = 0;
                                          const double scores[] = {0.3, 0.5, 0.9};
                                          return scores[call++ % 3];
                                      });
    // candidates are visited smallest-first: 1e-5 got 0.3, 1e-4 got 0.5,
    // 1e-3 got 0.9
    CHECK(low.best_lr == 1e-3);
    CHECK(low.best_auc == 0.9);
    REQUIRE(low.per_lr.size() == 3);

    const SweepOutcome tie =
        lr_sweep(base, samples, cfg, {1e-3, 1e-6}, [](const PolicyPair&) { return 0.7; });
    CHECK(tie.best_lr == 1e-6);  // equal scores -> smaller lr

    const SweepOutcome single =
        lr_sweep(base, samples, cfg, {1e-4}, [](const PolicyPair&) { return 0.2; });
    CHECK(single.best_lr == 1e-4);

    CHECK_THROWS_AS(lr_sweep(base, samples, cfg, {}, [](const PolicyPair&) { return 0.0; }),
                    ConfigError);
    CHECK(lr_sweep_set() == std::vector<double>{1e-3, 1e-4, 1e-5, 1e-6});
}

TEST_CASE("early stopping halts a stage after three stale evaluations") {
    const Model base = Model::init(tiny_config(), 19);
    const auto samples = toy_samples(8, 1, 10);
    TrainConfig cfg = fast_cfg("sft");
    cfg.sft_epochs = 10;
    cfg.early_stop = true;
    int evals = 0;
    PolicyPair pair = PolicyPair::from(base);
    const RunResult run = run_stages(pair, samples, cfg, "", [&evals](const PolicyPair&) {
        ++evals;
        return 0.5;  // never improves after the first epoch
    });
    // epoch 1 sets the best; epochs 2-4 are stale; stop before epoch 5
    CHECK(evals == 4);
    CHECK(run.stages[0].steps == 4 * 2);  // 8 samples / batch 4 = 2 steps per epoch

    // without the flag the callback is ignored
    PolicyPair full = PolicyPair::from(base);
    TrainConfig no_stop = cfg;
    no_stop.early_stop = false;
    int untouched = 0;
    const RunResult whole = run_stages(full, samples, no_stop, "", [&untouched](const PolicyPair&) {
        ++untouched;
        return 0.5;
    });
    CHECK(untouched == 0);
    CHECK(whole.stages[0].steps == 10 * 2);
}
