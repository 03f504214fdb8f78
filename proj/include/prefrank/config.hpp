#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "prefrank/bpr.hpp"
#include "prefrank/datapipe.hpp"
#include "prefrank/model.hpp"
#include "prefrank/synthgen.hpp"
#include "prefrank/trainer.hpp"

namespace prefrank {

// One declarative config covering the whole pipeline. Every run starts from
// this file (or its defaults), possibly overridden by dotted-path
// assignments, and the resolved form is echoed into the run directory.
//
// The single top-level seed feeds every subsystem; sections do not carry
// their own seed keys. data.k is the one negatives-per-sample knob and is
// mirrored into the trainer.
struct RunConfig {
    int version = 1;
    uint64_t seed = 1;
    DataConfig data;
    SynthConfig synth;
    ModelConfig model;
    TrainConfig train;
    BprConfig bpr;
    std::string score_mode = "token-mean";
    std::string template_path;  // data.template_path; empty -> builtin template

    void validate() const;
    nlohmann::ordered_json to_json() const;
};

// Strict parse: any key not in the schema -> ConfigError naming its path.
RunConfig run_config_from_json(const nlohmann::json& doc);

// Reads the file (missing/unreadable -> IoError, bad JSON -> ConfigError),
// applies dotted-path overrides like "train.lr0=3e-4" (values parsed as
// JSON, falling back to strings), then applies the seed override chain:
// file < PREFRANK_SEED environment variable < explicit `seed` override.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {});

// Defaults + overrides, no file.
RunConfig default_run_config(const std::vector<std::string>& overrides = {});

}  // namespace prefrank
