#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace algebraformer::checks {

struct CheckResult {
    std::string op;
    std::string detail;   ///< shape or parameter of this case
    double error = 0.0;   ///< worst relative error over coordinates
    double tolerance = 0.0;
    bool passed = false;
};

/// Names accepted by run_gradchecks' filter, in run order.
std::vector<std::string> gradcheck_ops();

/// Finite-difference checks of every autodiff op (5 random shapes each, at
/// 1e-5), mse_loss through the desk-width model (1e-4), the l_p gradient for
/// p in {1.5, 2, 3, 6} (1e-5) and its Hessian (1e-4). `only` restricts the
/// run to one name; throws DataError on an unknown name.
std::vector<CheckResult> run_gradchecks(const std::string& only = "", std::uint64_t seed = 1);

bool all_passed(const std::vector<CheckResult>& results);
std::string format_table(const std::vector<CheckResult>& results);

} // namespace algebraformer::checks
