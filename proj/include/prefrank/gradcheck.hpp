#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace prefrank {

// Finite-difference verification of the analytic loss gradients on a tiny
// self-contained model. A component passes when the central-difference
// estimate agrees within rel_tol, or both values sit below abs_floor
// (where truncation error drowns the comparison).
struct GradCheckSettings {
    std::string objective = "dmpo";    // "sft" | "dmpo"
    std::string precision = "double";  // "double" | "float"
    bool adapters = false;
    bool corrupt = false;  // negative control: falsify one analytic component
    int pairs = 20;        // preference samples in the probe batch
    int per_tensor = 4;    // components spot-checked per tensor
    double h = 1e-4;
    double rel_tol = 1e-3;
    double abs_floor = 1e-4;
    uint64_t seed = 0;
};

struct GradCheckFailure {
    std::string tensor;
    size_t index = 0;  // within the tensor
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    std::string objective;
    std::string precision;
    bool adapters = false;
    size_t components_checked = 0;
    double worst_rel_err = 0.0;       // among components above the floor
    std::string worst_tensor;
    double vector_rel_err = 0.0;      // |analytic - numeric| / |numeric| over all checked
    bool pass = false;
    std::vector<GradCheckFailure> failures;
};

GradCheckReport run_gradcheck(const GradCheckSettings& settings);

nlohmann::ordered_json gradcheck_to_json(const GradCheckReport& report);
std::string gradcheck_text(const GradCheckReport& report);

}  // namespace prefrank
