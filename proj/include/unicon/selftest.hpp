#pragma once

#include <cstdint>
#include <string>

namespace unicon {

/// Outcome of one on-demand simulator or optimizer check.
struct SelfTestReport {
    std::string name;
    double value = 0.0;      ///< measured quantity
    double threshold = 0.0;  ///< pass when value < threshold
    std::string detail;

    bool passed() const { return value < threshold; }
};

/// Worst relative total-energy drift of an unactuated double pendulum released
/// horizontal, over `seconds` at the default step.
SelfTestReport energy_check(double seconds = 10.0);
/// Worst relative error of the MLP and policy-objective gradients against central differences.
SelfTestReport gradient_check(std::uint64_t seed = 1);
/// Reruns a contact-rich humanoid rollout and a short training rollout; value counts differing runs.
SelfTestReport determinism_check(std::uint64_t seed = 1);

}  // namespace unicon
