#include "prefrank/gradcheck.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "prefrank/errors.hpp"
#include "prefrank/objectives.hpp"
#include "prefrank/rng.hpp"

namespace prefrank {

namespace {

constexpr int kVocab = 23;
constexpr int kRejectedPerSample = 2;

ModelConfig probe_config(bool adapters) {
    ModelConfig cfg;
    cfg.vocab_size = kVocab;
    cfg.embed_dim = 8;
    cfg.num_layers = 1;
    cfg.num_heads = 2;
    cfg.max_seq_len = 24;
    if (adapters) cfg.adapter_rank = 2;
    return cfg;
}

struct ProbeSample {
    TokenSequence chosen;
    std::vector<TokenSequence> rejected;
};

std::vector<ProbeSample> probe_samples(int n, uint64_t seed) {
    Rng rng(seed);
    std::vector<ProbeSample> out;
    for (int i = 0; i < n; ++i) {
        const int plen = 3 + static_cast<int>(rng.next_below(3));
        std::vector<int> prompt;
        for (int t = 0; t < plen; ++t) prompt.push_back(static_cast<int>(rng.next_below(kVocab)));
        auto draw = [&]() {
            TokenSequence seq;
            seq.ids = prompt;
            seq.prompt_len = plen;
            const int clen = 2 + static_cast<int>(rng.next_below(4));
            for (int t = 0; t < clen; ++t) {
                seq.ids.push_back(static_cast<int>(rng.next_below(kVocab)));
            }
            return seq;
        };
        ProbeSample s;
        s.chosen = draw();
        for (int r = 0; r < kRejectedPerSample; ++r) s.rejected.push_back(draw());
        out.push_back(std::move(s));
    }
    return out;
}

// Mean objective loss and gradient over the probe batch, generic in the
// model scalar type. For double this routes through the production loss
// implementations; for float it recombines the same scalar cores on top of
// the float model so the check exercises the reduced-precision backward.
template <typename S>
struct Probe {
    ModelT<S> policy;
    ModelT<S> reference;
    std::vector<ProbeSample> samples;
    std::string objective;
    DmpoConfig dmpo;

    double loss() const {
        double sum = 0.0;
        for (const ProbeSample& s : samples) {
            if (objective == "sft") {
                sum += sft_loss_value(policy.forward_logprobs(s.chosen).per_token_logp);
            } else {
                std::vector<double> rej_pol;
                std::vector<double> rej_ref;
                for (const TokenSequence& r : s.rejected) {
                    rej_pol.push_back(policy.forward_logprobs(r).sum_logp);
                    rej_ref.push_back(reference.forward_logprobs(r).sum_logp);
                }
                sum += dmpo_loss_value(policy.forward_logprobs(s.chosen).sum_logp,
                                       reference.forward_logprobs(s.chosen).sum_logp, rej_pol,
                                       rej_ref, dmpo);
            }
        }
        return sum / static_cast<double>(samples.size());
    }

    std::vector<double> gradient() const {
        const size_t n_params = policy.data().size();
        std::vector<double> total(n_params, 0.0);
        std::vector<S> buf(n_params);
        for (const ProbeSample& s : samples) {
            if (objective == "sft") {
                std::fill(buf.begin(), buf.end(), S(0));
                policy.forward_backward(s.chosen, -1.0, buf);
                for (size_t p = 0; p < n_params; ++p) total[p] += static_cast<double>(buf[p]);
            } else {
                std::vector<S> g_chosen(n_params, S(0));
                const double lp_chosen =
                    policy.forward_backward(s.chosen, 1.0, g_chosen).sum_logp;
                std::vector<std::vector<S>> g_rej;
                std::vector<double> rej_pol;
                std::vector<double> rej_ref;
                for (const TokenSequence& r : s.rejected) {
                    g_rej.emplace_back(n_params, S(0));
                    rej_pol.push_back(policy.forward_backward(r, 1.0, g_rej.back()).sum_logp);
                    rej_ref.push_back(reference.forward_logprobs(r).sum_logp);
                }
                LossAux aux;
                dmpo_loss_value(lp_chosen, reference.forward_logprobs(s.chosen).sum_logp, rej_pol,
                                rej_ref, dmpo, &aux);
                const double weight = sigmoid(-aux.margin);
                const double rej_scale = weight * dmpo.beta / static_cast<double>(dmpo.k);
                for (size_t p = 0; p < n_params; ++p) {
                    double g = -weight * dmpo.beta * static_cast<double>(g_chosen[p]);
                    for (const auto& gr : g_rej) g += rej_scale * static_cast<double>(gr[p]);
                    total[p] += g;
                }
            }
        }
        for (double& g : total) g /= static_cast<double>(samples.size());
        return total;
    }
};

// The double path uses the shipped loss functions directly, so the checker
// verifies the gradients production training actually consumes.
template <>
std::vector<double> Probe<double>::gradient() const {
    const size_t n_params = policy.data().size();
    std::vector<double> total(n_params, 0.0);
    const PolicyPair pair{policy, reference};
    for (const ProbeSample& s : samples) {
        const LossOutput out = objective == "sft" ? sft_loss(pair, s.chosen)
                                                  : dmpo_loss(pair, s.chosen, s.rejected, dmpo);
        for (size_t p = 0; p < n_params; ++p) total[p] += out.per_param_grad[p];
    }
    for (double& g : total) g /= static_cast<double>(samples.size());
    return total;
}

template <typename S>
GradCheckReport check(const GradCheckSettings& st) {
    Probe<S> probe;
    const ModelConfig cfg = probe_config(st.adapters);
    if (st.adapters) {
        const ModelT<S> base = ModelT<S>::init(probe_config(false), derive_seed(st.seed, "base"));
        probe.policy = ModelT<S>::with_adapters(base, cfg.adapter_rank, cfg.adapter_targets,
                                                derive_seed(st.seed, "adapter"));
    } else {
        probe.policy = ModelT<S>::init(cfg, derive_seed(st.seed, "base"));
    }
    probe.reference = ModelT<S>::init(probe.policy.config(), derive_seed(st.seed, "reference"));
    probe.samples = probe_samples(st.pairs, derive_seed(st.seed, "samples"));
    probe.objective = st.objective;
    probe.dmpo.k = kRejectedPerSample;

    std::vector<double> analytic = probe.gradient();

    GradCheckReport report;
    report.objective = st.objective;
    report.precision = st.precision;
    report.adapters = st.adapters;

    Rng pick(derive_seed(st.seed, "components"));
    double diff_sq = 0.0;
    double numeric_sq = 0.0;
    bool corrupted_yet = false;
    for (const TensorSpec& spec : probe.policy.tensors()) {
        if (!spec.trainable) continue;
        // spot-check a few components of every trainable tensor
        std::vector<size_t> indices;
        if (spec.size <= static_cast<size_t>(st.per_tensor)) {
            for (size_t i = 0; i < spec.size; ++i) indices.push_back(i);
        } else {
            for (int i = 0; i < st.per_tensor; ++i) {
                indices.push_back(pick.next_below(spec.size));
            }
        }
        for (size_t local : indices) {
            const size_t flat = spec.offset + local;
            double a = analytic[flat];
            if (st.corrupt && !corrupted_yet) {
                a += 1.0 + std::abs(a);  // deliberately wrong, far past any tolerance
                corrupted_yet = true;
            }
            const S saved = probe.policy.data()[flat];
            probe.policy.data()[flat] = saved + static_cast<S>(st.h);
            const double up = probe.loss();
            probe.policy.data()[flat] = saved - static_cast<S>(st.h);
            const double down = probe.loss();
            probe.policy.data()[flat] = saved;
            const double numeric = (up - down) / (2.0 * st.h);

            ++report.components_checked;
            diff_sq += (a - numeric) * (a - numeric);
            numeric_sq += numeric * numeric;
            const double scale = std::max(std::abs(a), std::abs(numeric));
            const double rel = scale > 0.0 ? std::abs(a - numeric) / scale : 0.0;
            // components whose whole magnitude sits under the floor are all
            // truncation noise; they neither fail nor drive the headline
            if (scale > st.abs_floor && rel > report.worst_rel_err) {
                report.worst_rel_err = rel;
                report.worst_tensor = spec.name;
            }
            if (rel > st.rel_tol && std::abs(a - numeric) > st.abs_floor) {
                report.failures.push_back({spec.name, local, a, numeric, rel});
            }
        }
    }
    report.vector_rel_err = numeric_sq > 0.0 ? std::sqrt(diff_sq / numeric_sq) : 0.0;
    report.pass = report.failures.empty() && report.vector_rel_err <= st.rel_tol;
    return report;
}

}  // namespace

GradCheckReport run_gradcheck(const GradCheckSettings& settings) {
    if (settings.objective != "sft" && settings.objective != "dmpo") {
        throw ConfigError("gradcheck objective must be 'sft' or 'dmpo'");
    }
    if (settings.pairs < 1) throw ConfigError("gradcheck needs at least one probe sample");
    if (!(settings.h > 0.0)) throw ConfigError("gradcheck step h must be positive");
    if (settings.precision == "double") return check<double>(settings);
    if (settings.precision == "float") return check<float>(settings);
    throw ConfigError("gradcheck precision must be 'double' or 'float'");
}

nlohmann::ordered_json gradcheck_to_json(const GradCheckReport& report) {
    nlohmann::ordered_json j;
    j["objective"] = report.objective;
    j["precision"] = report.precision;
    j["adapters"] = report.adapters;
    j["components_checked"] = report.components_checked;
    j["worst_rel_err"] = report.worst_rel_err;
    j["worst_tensor"] = report.worst_tensor;
    j["vector_rel_err"] = report.vector_rel_err;
    j["pass"] = report.pass;
    nlohmann::ordered_json failures = nlohmann::ordered_json::array();
    for (const GradCheckFailure& f : report.failures) {
        failures.push_back({{"tensor", f.tensor},
                            {"index", f.index},
                            {"analytic", f.analytic},
                            {"numeric", f.numeric},
                            {"rel_err", f.rel_err}});
    }
    j["failures"] = failures;
    return j;
}

std::string gradcheck_text(const GradCheckReport& report) {
    std::ostringstream out;
    out << std::scientific << std::setprecision(3);
    out << (report.pass ? "PASS" : "FAIL") << "  objective=" << report.objective
        << " precision=" << report.precision << " adapters=" << (report.adapters ? "on" : "off")
        << " checked=" << report.components_checked << " worst_rel=" << report.worst_rel_err;
    if (!report.worst_tensor.empty()) out << " (" << report.worst_tensor << ")";
    out << " vector_rel=" << report.vector_rel_err << "\n";
    for (const GradCheckFailure& f : report.failures) {
        out << "  mismatch " << f.tensor << "[" << f.index << "]: analytic=" << f.analytic
            << " numeric=" << f.numeric << " rel_err=" << f.rel_err << "\n";
    }
    return out.str();
}

}  // namespace prefrank
