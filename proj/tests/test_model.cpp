#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "prefrank/errors.hpp"
#include "prefrank/model.hpp"
#include "prefrank/rng.hpp"

using namespace prefrank;

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

TokenSequence random_seq(Rng& rng, int vocab, int max_len) {
    TokenSequence seq;
    const int T = 3 + static_cast<int>(rng.next_below(static_cast<uint64_t>(max_len - 3)));
    for (int t = 0; t < T; ++t) {
        seq.ids.push_back(static_cast<int>(rng.next_below(static_cast<uint64_t>(vocab))));
    }
    seq.prompt_len = 1 + static_cast<int>(rng.next_below(static_cast<uint64_t>(T - 1)));
    return seq;
}

// Central-difference check of d(sum_logp)/d(param) over every parameter.
// A component passes when |analytic - numeric| <= tol * max(|analytic|,
// |numeric|) or sits below the truncation-noise floor of the h^2 scheme
// (~1e-4 at h = 1e-4; shrinking h shows clean quadratic convergence).
// On top of the per-component test the whole gradient vector must match
// at relative error < tol in the 2-norm.
int count_gradient_failures(const Model& m, const TokenSequence& seq, double h, double tol) {
    const std::vector<double> analytic = m.grad_logprob(seq);
    Model probe = m;
    std::vector<double>& data = probe.data();
    int failures = 0;
    double norm_a = 0.0, norm_n = 0.0, norm_diff = 0.0;
    for (size_t i = 0; i < data.size(); ++i) {
        const double keep = data[i];
        data[i] = keep + h;
        const double up = probe.forward_logprobs(seq).sum_logp;
        data[i] = keep - h;
        const double down = probe.forward_logprobs(seq).sum_logp;
        data[i] = keep;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic[i];
        const double diff = std::abs(a - numeric);
        norm_a += a * a;
        norm_n += numeric * numeric;
        norm_diff += diff * diff;
        if (diff > tol * std::max(std::abs(a), std::abs(numeric)) && diff > 1e-4) {
            ++failures;
        }
    }
    const double rel_norm =
        std::sqrt(norm_diff) / std::max(std::sqrt(std::max(norm_a, norm_n)), 1e-12);
    if (rel_norm >= tol) ++failures;
    return failures;
}

// Gives adapter B tensors small nonzero values so their (and A's) gradients
// are exercised; fresh adapters start at B = 0 where dA vanishes identically.
void jitter_adapter_b(Model& m, uint64_t seed) {
    Rng rng(seed);
    for (const TensorSpec& spec : m.tensors()) {
        if (!spec.name.ends_with("lora_b")) continue;
        auto span = m.tensor(spec.name);
        for (double& x : span) x = 0.02 * rng.next_gauss();
    }
}

}  // namespace

TEST_CASE("analytic gradients match finite differences on base models") {
    Rng rng(2024);
    const double h = 1e-4, tol = 1e-3;
    for (int trial = 0; trial < 12; ++trial) {
        ModelConfig cfg = tiny_config();
        Model m = Model::init(cfg, 1000 + static_cast<uint64_t>(trial));
        TokenSequence seq = random_seq(rng, cfg.vocab_size, cfg.max_seq_len);
        INFO("trial ", trial, " T=", seq.length(), " prompt_len=", seq.prompt_len);
        CHECK(count_gradient_failures(m, seq, h, tol) == 0);
    }
}

TEST_CASE("analytic gradients match finite differences with adapters") {
    Rng rng(4242);
    const double h = 1e-4, tol = 1e-3;
    const AdapterTargets target_sets[] = {
        AdapterTargets::parse("qkv"),
        AdapterTargets::parse("q"),
        AdapterTargets::parse("kv"),
    };
    for (int trial = 0; trial < 9; ++trial) {
        ModelConfig cfg = tiny_config();
        Model base = Model::init(cfg, 2000 + static_cast<uint64_t>(trial));
        Model m = Model::with_adapters(base, 2, target_sets[trial % 3],
                                       3000 + static_cast<uint64_t>(trial));
        jitter_adapter_b(m, 500 + static_cast<uint64_t>(trial));
        TokenSequence seq = random_seq(rng, cfg.vocab_size, cfg.max_seq_len);
        INFO("trial ", trial, " targets=", target_sets[trial % 3].to_string());
        CHECK(count_gradient_failures(m, seq, h, tol) == 0);
    }
}

TEST_CASE("gradients also survive a two-layer four-head model") {
    Rng rng(77);
    ModelConfig cfg = tiny_config();
    cfg.num_layers = 2;
    cfg.num_heads = 4;
    Model m = Model::init(cfg, 5);
    TokenSequence seq = random_seq(rng, cfg.vocab_size, cfg.max_seq_len);
    CHECK(count_gradient_failures(m, seq, 1e-4, 1e-3) == 0);
}

TEST_CASE("per-token log probabilities are negative and sum correctly") {
    Model m = Model::init(tiny_config(), 1);
    TokenSequence seq;
    seq.ids = {2, 7, 9, 4, 11};
    seq.prompt_len = 2;
    const LogProbResult r = m.forward_logprobs(seq);
    REQUIRE(r.per_token_logp.size() == 3);
    double sum = 0.0;
    for (const double lp : r.per_token_logp) {
        CHECK(lp <= 0.0);
        sum += lp;
    }
    CHECK(r.sum_logp == doctest::Approx(sum).epsilon(1e-12));
}

TEST_CASE("next-token distribution is a proper probability vector") {
    Model m = Model::init(tiny_config(), 2);
    TokenSequence seq;
    seq.ids = {2, 5, 8, 3};
    seq.prompt_len = 2;
    for (const int pos : {1, 2, 4}) {  // 4 == length: what follows the sequence
        const std::vector<double> p = m.next_token_distribution(seq, pos);
        REQUIRE(static_cast<int>(p.size()) == 17);
        double sum = 0.0;
        for (const double x : p) {
            CHECK(x >= 0.0);
            sum += x;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("changing a later token never disturbs earlier predictions") {
    Model m = Model::init(tiny_config(), 3);
    TokenSequence a;
    a.ids = {2, 7, 9, 4, 11, 6, 13};
    a.prompt_len = 2;
    TokenSequence b = a;
    const int t = 4;
    b.ids[t] = 15;  // single edit at position t

    // Distributions conditioned on prefixes up to t are bitwise identical.
    for (int pos = 1; pos <= t; ++pos) {
        const auto da = m.next_token_distribution(a, pos);
        const auto db = m.next_token_distribution(b, pos);
        for (size_t i = 0; i < da.size(); ++i) CHECK(da[i] == db[i]);
    }
    // Realized log-probs strictly before the edit are identical too.
    const auto ra = m.forward_logprobs(a);
    const auto rb = m.forward_logprobs(b);
    for (int j = 0; j + a.prompt_len < t; ++j) {
        CHECK(ra.per_token_logp[static_cast<size_t>(j)] ==
              rb.per_token_logp[static_cast<size_t>(j)]);
    }
}

TEST_CASE("fresh adapters reproduce the base model bit for bit") {
    Model base = Model::init(tiny_config(), 11);
    Model aug = Model::with_adapters(base, 4, AdapterTargets::parse("qkv"), 99);
    TokenSequence seq;
    seq.ids = {2, 3, 8, 12, 7, 1};
    seq.prompt_len = 3;
    const auto rb = base.forward_logprobs(seq);
    const auto ra = aug.forward_logprobs(seq);
    CHECK(ra.sum_logp == rb.sum_logp);
    for (size_t j = 0; j < rb.per_token_logp.size(); ++j) {
        CHECK(ra.per_token_logp[j] == rb.per_token_logp[j]);
    }
}

TEST_CASE("adapters freeze the base and expose only low-rank tensors") {
    Model base = Model::init(tiny_config(), 11);
    Model aug = Model::with_adapters(base, 4, AdapterTargets::parse("qv"), 99);
    size_t trainable = 0;
    for (const TensorSpec& spec : aug.tensors()) {
        if (spec.name.find("lora") != std::string::npos) {
            CHECK(spec.trainable);
            trainable += spec.size;
        } else {
            CHECK_FALSE(spec.trainable);
        }
    }
    // two targets, one layer, A [4,8] + B [8,4] each
    CHECK(trainable == 2u * (4 * 8 + 8 * 4));

    Model open_base = Model::with_adapters(base, 4, AdapterTargets::parse("q"), 99,
                                           /*train_base=*/true);
    for (const TensorSpec& spec : open_base.tensors()) CHECK(spec.trainable);
}

TEST_CASE("initialization is deterministic in the seed") {
    Model a = Model::init(tiny_config(), 42);
    Model b = Model::init(tiny_config(), 42);
    Model c = Model::init(tiny_config(), 43);
    CHECK(a.data() == b.data());
    CHECK(a.data() != c.data());
}

TEST_CASE("restore round-trips the flat parameter blob") {
    Model a = Model::init(tiny_config(), 8);
    Model b = Model::restore(a.config(), a.data());
    CHECK(a.data() == b.data());
    TokenSequence seq;
    seq.ids = {2, 4, 9, 13};
    seq.prompt_len = 1;
    CHECK(a.forward_logprobs(seq).sum_logp == b.forward_logprobs(seq).sum_logp);
    std::vector<double> short_blob(a.param_count() - 1, 0.0);
    CHECK_THROWS_AS(Model::restore(a.config(), short_blob), IoError);
}

TEST_CASE("single precision mode tracks the double precision forward") {
    const ModelConfig cfg = tiny_config();
    Model d = Model::init(cfg, 6);
    ModelT<float> f = ModelT<float>::init(cfg, 6);
    TokenSequence seq;
    seq.ids = {2, 10, 4, 7, 3};
    seq.prompt_len = 2;
    const double ld = d.forward_logprobs(seq).sum_logp;
    const double lf = f.forward_logprobs(seq).sum_logp;
    CHECK(lf == doctest::Approx(ld).epsilon(1e-3));
}

TEST_CASE("zeroed output head gives a uniform distribution over the vocabulary") {
    Model m = Model::init(tiny_config(), 4);
    for (double& x : m.tensor("head.w")) x = 0.0;
    for (double& x : m.tensor("head.b")) x = 0.0;
    TokenSequence seq;
    seq.ids = {2, 6, 1, 14};
    seq.prompt_len = 1;
    const LogProbResult r = m.forward_logprobs(seq);
    for (const double lp : r.per_token_logp) {
        CHECK(lp == doctest::Approx(-std::log(17.0)).epsilon(1e-12));
    }
}

TEST_CASE("parameters untouched by the sequence receive exactly zero gradient") {
    Model m = Model::init(tiny_config(), 9);
    TokenSequence seq;
    seq.ids = {2, 5, 9, 5};  // uses vocabulary ids {2, 5, 9} and positions 0..3
    seq.prompt_len = 1;
    const std::vector<double> grad = m.grad_logprob(seq);
    const TensorSpec& tok = m.spec("tok_emb");
    const int D = m.config().embed_dim;
    for (int v = 0; v < 17; ++v) {
        const bool used = (v == 2 || v == 5 || v == 9);
        double sum_abs = 0.0;
        for (int i = 0; i < D; ++i) {
            sum_abs += std::abs(grad[tok.offset + static_cast<size_t>(v) * D + i]);
        }
        if (!used) CHECK(sum_abs == 0.0);
    }
    const TensorSpec& pos = m.spec("pos_emb");
    for (int t = 4; t < m.config().max_seq_len; ++t) {
        for (int i = 0; i < D; ++i) {
            CHECK(grad[pos.offset + static_cast<size_t>(t) * D + i] == 0.0);
        }
    }
}

TEST_CASE("repeated gradient calls are bitwise identical") {
    Model m = Model::init(tiny_config(), 10);
    TokenSequence seq;
    seq.ids = {2, 8, 3, 12, 6};
    seq.prompt_len = 2;
    CHECK(m.grad_logprob(seq) == m.grad_logprob(seq));
}

TEST_CASE("invalid sequences and configs are rejected") {
    Model m = Model::init(tiny_config(), 1);
    TokenSequence seq;
    seq.ids = {2, 5, 40};  // 40 outside vocab of 17
    seq.prompt_len = 1;
    CHECK_THROWS_AS(m.forward_logprobs(seq), DataError);

    TokenSequence long_seq;
    long_seq.ids.assign(20, 3);  // longer than max_seq_len 16
    long_seq.prompt_len = 1;
    CHECK_THROWS_AS(m.forward_logprobs(long_seq), DataError);

    TokenSequence no_completion;
    no_completion.ids = {2, 5};
    no_completion.prompt_len = 2;
    CHECK_THROWS_AS(m.forward_logprobs(no_completion), DataError);

    ModelConfig bad = tiny_config();
    bad.num_heads = 3;  // does not divide embed_dim 8
    CHECK_THROWS_AS(Model::init(bad, 1), ConfigError);

    ModelConfig bad_rank = tiny_config();
    bad_rank.adapter_rank = 9;  // exceeds embed_dim
    CHECK_THROWS_AS(Model::init(bad_rank, 1), ConfigError);
}
