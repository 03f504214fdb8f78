#include "prefrank/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "prefrank/errors.hpp"

namespace prefrank {

namespace {

// Wraps one JSON object for schema-checked reads: every key must be claimed
// by a get()/child() call, and finish() rejects whatever is left over.
class StrictObject {
public:
    StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config section '" + path_ + "' must be an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        seen_.insert(key);
        try {
            out = it->get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config key '" + join(key) + "' has the wrong type: " + e.what());
        }
    }

    // Claims and returns a nested object, or nullptr when absent.
    const nlohmann::json* child(const char* key) {
        const auto it = j_.find(key);
        if (it == j_.end()) return nullptr;
        seen_.insert(key);
        return &*it;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) {
                throw ConfigError("unknown config key '" + join(key) + "'");
            }
        }
    }

    std::string join(const std::string& key) const {
        return path_.empty() ? key : path_ + "." + key;
    }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void parse_data_section(const nlohmann::json& j, RunConfig& cfg) {
    StrictObject o(j, "data");
    o.get("min_pos", cfg.data.min_pos);
    o.get("min_neg", cfg.data.min_neg);
    o.get("max_history", cfg.data.max_history);
    o.get("split_mode", cfg.data.split_mode);
    if (const nlohmann::json* sizes = o.child("sizes")) {
        StrictObject s(*sizes, "data.sizes");
        s.get("train", cfg.data.sizes.train);
        s.get("valid", cfg.data.sizes.valid);
        s.get("test", cfg.data.sizes.test);
        s.finish();
    }
    o.get("k", cfg.data.build.k);
    o.get("prompt_history", cfg.data.build.prompt_history);
    o.get("samples_per_user", cfg.data.build.samples_per_user);
    o.get("role", cfg.data.build.role);
    o.get("template_path", cfg.template_path);
    o.finish();
}

void parse_synth_section(const nlohmann::json& j, RunConfig& cfg) {
    StrictObject o(j, "synth");
    o.get("users", cfg.synth.users);
    o.get("items_per_genre", cfg.synth.items_per_genre);
    o.get("min_events", cfg.synth.min_events);
    o.get("max_events", cfg.synth.max_events);
    o.get("flip_noise", cfg.synth.flip_noise);
    o.get("domain", cfg.synth.domain);
    o.finish();
}

void parse_model_section(const nlohmann::json& j, RunConfig& cfg) {
    StrictObject o(j, "model");
    o.get("vocab_size", cfg.model.vocab_size);
    o.get("embed_dim", cfg.model.embed_dim);
    o.get("num_layers", cfg.model.num_layers);
    o.get("num_heads", cfg.model.num_heads);
    o.get("max_seq_len", cfg.model.max_seq_len);
    o.get("adapter_rank", cfg.model.adapter_rank);
    std::string targets = cfg.model.adapter_targets.to_string();
    o.get("adapter_targets", targets);
    cfg.model.adapter_targets = AdapterTargets::parse(targets);
    o.get("train_base_with_adapters", cfg.model.train_base_with_adapters);
    o.finish();
}

void parse_train_section(const nlohmann::json& j, RunConfig& cfg) {
    StrictObject o(j, "train");
    o.get("stage", cfg.train.stage);
    o.get("lr0", cfg.train.lr0);
    o.get("lr_floor", cfg.train.lr_floor);
    o.get("sft_epochs", cfg.train.sft_epochs);
    o.get("dmpo_epochs", cfg.train.dmpo_epochs);
    o.get("batch_size", cfg.train.batch_size);
    o.get("beta", cfg.train.beta);
    o.get("eval_every", cfg.train.eval_every);
    o.get("use_adam", cfg.train.use_adam);
    o.get("early_stop", cfg.train.early_stop);
    o.finish();
}

void parse_eval_section(const nlohmann::json& j, RunConfig& cfg) {
    StrictObject o(j, "eval");
    o.get("score_mode", cfg.score_mode);
    o.finish();
}

void parse_bpr_section(const nlohmann::json& j, RunConfig& cfg) {
    StrictObject o(j, "bpr");
    o.get("dim", cfg.bpr.dim);
    o.get("lr", cfg.bpr.lr);
    o.get("epochs", cfg.bpr.epochs);
    o.get("init_std", cfg.bpr.init_std);
    o.get("sweep_lr", cfg.bpr.sweep_lr);
    o.finish();
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& doc) {
    RunConfig cfg;
    StrictObject top(doc, "");
    top.get("version", cfg.version);
    top.get("seed", cfg.seed);
    if (const nlohmann::json* j = top.child("data")) parse_data_section(*j, cfg);
    if (const nlohmann::json* j = top.child("synth")) parse_synth_section(*j, cfg);
    if (const nlohmann::json* j = top.child("model")) parse_model_section(*j, cfg);
    if (const nlohmann::json* j = top.child("train")) parse_train_section(*j, cfg);
    if (const nlohmann::json* j = top.child("eval")) parse_eval_section(*j, cfg);
    if (const nlohmann::json* j = top.child("bpr")) parse_bpr_section(*j, cfg);
    top.finish();

    // One root seed drives everything; subsystems salt it internally.
    cfg.data.seed = cfg.seed;
    cfg.synth.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    cfg.bpr.seed = cfg.seed;
    // data.k is the single source of truth for negatives per sample.
    cfg.train.k = cfg.data.build.k;
    if (!cfg.template_path.empty()) {
        cfg.data.build.tmpl = PromptTemplate::load(cfg.template_path);
    }
    cfg.validate();
    return cfg;
}

void RunConfig::validate() const {
    if (version != 1) {
        throw ConfigError("unsupported config version " + std::to_string(version) +
                          " (this build reads version 1)");
    }
    if (data.min_pos < 1) throw ConfigError("data.min_pos must be >= 1");
    if (data.min_neg < 1) throw ConfigError("data.min_neg must be >= 1");
    if (data.max_history < 1) throw ConfigError("data.max_history must be >= 1");
    if (data.sizes.train < 1) throw ConfigError("data.sizes.train must be >= 1");
    if (data.sizes.valid < 0) throw ConfigError("data.sizes.valid must be >= 0");
    if (data.sizes.test < 1) throw ConfigError("data.sizes.test must be >= 1");
    if (data.split_mode != "user" && data.split_mode != "sample") {
        throw ConfigError("data.split_mode must be 'user' or 'sample'");
    }
    if (data.build.k < 1) throw ConfigError("data.k must be >= 1");
    if (data.build.prompt_history < 0) throw ConfigError("data.prompt_history must be >= 0");
    if (data.build.samples_per_user < 1) throw ConfigError("data.samples_per_user must be >= 1");
    data.build.tmpl.validate();
    synth.validate();
    model.validate();
    train.validate();
    bpr.validate();
    parse_score_mode(score_mode);
}

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["version"] = version;
    j["seed"] = seed;
    j["data"] = {{"min_pos", data.min_pos},
                 {"min_neg", data.min_neg},
                 {"max_history", data.max_history},
                 {"split_mode", data.split_mode},
                 {"sizes",
                  {{"train", data.sizes.train},
                   {"valid", data.sizes.valid},
                   {"test", data.sizes.test}}},
                 {"k", data.build.k},
                 {"prompt_history", data.build.prompt_history},
                 {"samples_per_user", data.build.samples_per_user},
                 {"role", data.build.role},
                 {"template_path", template_path}};
    j["synth"] = {{"users", synth.users},
                  {"items_per_genre", synth.items_per_genre},
                  {"min_events", synth.min_events},
                  {"max_events", synth.max_events},
                  {"flip_noise", synth.flip_noise},
                  {"domain", synth.domain}};
    j["model"] = {{"vocab_size", model.vocab_size},
                  {"embed_dim", model.embed_dim},
                  {"num_layers", model.num_layers},
                  {"num_heads", model.num_heads},
                  {"max_seq_len", model.max_seq_len},
                  {"adapter_rank", model.adapter_rank},
                  {"adapter_targets", model.adapter_targets.to_string()},
                  {"train_base_with_adapters", model.train_base_with_adapters}};
    j["train"] = {{"stage", train.stage},
                  {"lr0", train.lr0},
                  {"lr_floor", train.lr_floor},
                  {"sft_epochs", train.sft_epochs},
                  {"dmpo_epochs", train.dmpo_epochs},
                  {"batch_size", train.batch_size},
                  {"beta", train.beta},
                  {"eval_every", train.eval_every},
                  {"use_adam", train.use_adam},
                  {"early_stop", train.early_stop}};
    j["eval"] = {{"score_mode", score_mode}};
    j["bpr"] = {{"dim", bpr.dim},
                {"lr", bpr.lr},
                {"epochs", bpr.epochs},
                {"init_std", bpr.init_std},
                {"sweep_lr", bpr.sweep_lr}};
    return j;
}

namespace {

void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "' is not of the form key.path=value");
    }
    std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    for (char& c : path) {
        if (c == '.') c = '/';
    }
    nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;  // bare words are strings
    try {
        doc[nlohmann::json::json_pointer("/" + path)] = parsed;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("cannot apply override '" + assignment + "': " + e.what());
    }
}

void apply_env_seed(nlohmann::json& doc) {
    const char* env = std::getenv("PREFRANK_SEED");
    if (env == nullptr || *env == '\0') return;
    try {
        size_t used = 0;
        const unsigned long long v = std::stoull(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
        doc["seed"] = static_cast<uint64_t>(v);
    } catch (const std::exception&) {
        throw ConfigError(std::string("PREFRANK_SEED must be an unsigned integer, got '") + env +
                          "'");
    }
}

RunConfig finish_config(nlohmann::json doc, const std::vector<std::string>& overrides) {
    apply_env_seed(doc);  // overrides can still beat the environment
    for (const std::string& assignment : overrides) apply_override(doc, assignment);
    return run_config_from_json(doc);
}

}  // namespace

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    nlohmann::json doc = nlohmann::json::parse(buffer.str(), nullptr, false);
    if (doc.is_discarded()) {
        throw ConfigError("config file '" + path + "' is not valid JSON");
    }
    return finish_config(std::move(doc), overrides);
}

RunConfig default_run_config(const std::vector<std::string>& overrides) {
    return finish_config(nlohmann::json::object(), overrides);
}

}  // namespace prefrank
