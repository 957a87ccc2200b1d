#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "driftvq/transvq.hpp"

namespace driftvq {

struct CheckOptions {
    // Debug hook: scale this tensor's analytic gradient inside the gradcheck.
    std::optional<ProjectorTensor> corrupt_gradient;
};

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;  // measured values behind the verdict
    double seconds = 0.0;
    double budget_seconds = 0.0;  // 0: no runtime bound
};

// Names in execution order: fixed-point, lyapunov, ntk-exactness, dead-code,
// gradcheck, propagation, identity-init, batch-size, weight-kernels,
// determinism.
const std::vector<std::string>& check_names();

// One-line description of a check, for listings.
std::string check_summary(std::string_view name);

// Runs a single check and times it; `passed` includes the runtime budget.
// Throws InvalidInput on an unknown name.
CheckResult run_check(std::string_view name, const CheckOptions& options = {});

// Utilization of vanilla EMA on the seed-0 translation demo, pinned from
// the first recorded run.
inline constexpr double kGoldenEmaUtilization = 0.0625;

}  // namespace driftvq
