#include <cstdio>

#include "common.hpp"
#include "prefrank/bpr.hpp"
#include "prefrank/errors.hpp"
#include "prefrank/gradcheck.hpp"

namespace prefrank::cli {

int cmd_gradcheck(const GlobalOptions& g, const std::string& objective,
                  const std::string& adapters, bool float32, bool corrupt) {
    const RunConfig cfg = resolve_config(g);
    start_run_dir(g.run_dir, cfg);

    std::vector<std::string> objectives;
    if (objective == "both") {
        objectives = {"sft", "dmpo"};
    } else if (objective == "sft" || objective == "dmpo") {
        objectives = {objective};
    } else {
        throw ConfigError("--objective must be sft, dmpo, or both (got '" + objective + "')");
    }
    std::vector<bool> adapter_modes;
    if (adapters == "both") {
        adapter_modes = {false, true};
    } else if (adapters == "on") {
        adapter_modes = {true};
    } else if (adapters == "off") {
        adapter_modes = {false};
    } else {
        throw ConfigError("--adapters must be on, off, or both (got '" + adapters + "')");
    }

    nlohmann::ordered_json reports = nlohmann::ordered_json::array();
    std::string text;
    bool all_pass = true;
    std::string failing;
    for (const std::string& obj : objectives) {
        for (const bool with_adapters : adapter_modes) {
            GradCheckSettings settings;
            settings.objective = obj;
            settings.adapters = with_adapters;
            settings.corrupt = corrupt;
            settings.seed = cfg.seed;
            if (float32) {
                // Single precision drowns h=1e-4 differences in rounding noise;
                // these tolerances keep the check meaningful.
                settings.precision = "float";
                settings.h = 1e-2;
                settings.rel_tol = 5e-2;
                settings.abs_floor = 1e-3;
            }
            const GradCheckReport report = run_gradcheck(settings);
            reports.push_back(gradcheck_to_json(report));
            text += gradcheck_text(report) + "\n";
            if (!report.pass) {
                all_pass = false;
                for (const GradCheckFailure& f : report.failures) {
                    if (!failing.empty()) failing += ", ";
                    failing += f.tensor + "[" + std::to_string(f.index) + "]";
                }
            }
        }
    }
    nlohmann::ordered_json j;
    j["pass"] = all_pass;
    j["reports"] = reports;
    write_json_file(g.run_dir + "/gradcheck.json", j);
    write_file(g.run_dir + "/gradcheck.txt", text);
    log_line(g.run_dir, std::string("gradcheck ") + (all_pass ? "passed" : "FAILED"));
    std::printf("%s", text.c_str());
    if (!all_pass) {
        throw NumericError("gradient check failed at: " + failing);
    }
    return 0;
}

int cmd_baseline_bpr(const GlobalOptions& g, const std::string& data_dir) {
    const RunConfig cfg = resolve_config(g);
    start_run_dir(g.run_dir, cfg);
    const DatasetSplit splits = load_split_dir(data_dir);
    log_line(g.run_dir, "matrix-factorization baseline on " +
                            std::to_string(splits.train.size()) + " train samples");
    const BprResult result = train_bpr(splits, cfg.bpr);

    nlohmann::ordered_json summary;
    summary["dim"] = cfg.bpr.dim;
    summary["lr_used"] = result.lr_used;
    summary["epochs"] = cfg.bpr.epochs;
    summary["train_loss_initial"] = result.train_loss_initial;
    summary["train_loss_final"] = result.train_loss_final;
    summary["valid_auc"] = result.valid_auc;
    summary["test"] = report_to_json(result.report);
    write_json_file(g.run_dir + "/bpr_summary.json", summary);
    write_json_file(g.run_dir + "/report.json", report_to_json(result.report));
    write_file(g.run_dir + "/report.txt", report_text(result.report));
    log_line(g.run_dir, "test auc " + format_auc(result.report.auc));
    std::printf("bpr baseline (d=%d, lr %g): train loss %.6f -> %.6f\n", cfg.bpr.dim,
                result.lr_used, result.train_loss_initial, result.train_loss_final);
    std::printf("%s", report_text(result.report).c_str());
    return 0;
}

}  // namespace prefrank::cli
