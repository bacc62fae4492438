#pragma once

// Numerical property checks run by the `verify` subcommand.

#include <cstdint>
#include <string>
#include <vector>

namespace ska::verify {

struct PropertyResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

PropertyResult gram_oracle_equivalence(std::uint64_t seed);
PropertyResult gram_backward_error_bound(std::uint64_t seed);
PropertyResult gram_sweep_monotonicity(std::uint64_t seed);
PropertyResult variance_trace(std::uint64_t seed);
PropertyResult gradient_finite_differences(std::uint64_t seed);
PropertyResult reduction_identities(std::uint64_t seed);
PropertyResult projection_boundedness(std::uint64_t seed);

std::vector<PropertyResult> run_all(std::uint64_t seed = 7);

}  // namespace ska::verify
