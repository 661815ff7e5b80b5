#pragma once

#include <functional>
#include <span>

#include "nt/params.hpp"
#include "nt/tensor.hpp"

namespace nt {

struct FdCheckResult {
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
    std::size_t coords_skipped = 0;  // kink crossings within eps
    std::string worst_param;
    std::int64_t worst_coord = -1;
};

// Central-difference check of the analytic gradient of a scalar objective.
// `build` constructs the objective from the parameters' current values,
// binding them through the supplied Binder. Coordinates where the +/-eps
// evaluations land on different sides of a relu/clamp kink are skipped.
// Relative error uses |a - n| / max(|a|, |n|, 1e-12). Non-finite objective
// values raise.
FdCheckResult finite_difference_check(
    const std::function<Tensor(Graph&, Binder&)>& build,
    std::span<ParamTensor* const> params, double eps);

}  // namespace nt
