#include "nt/finite_diff.hpp"

#include <cmath>
#include <stdexcept>

namespace nt {

namespace {

struct Eval {
    double value;
    std::uint64_t kink_sig;
};

Eval evaluate(const std::function<Tensor(Graph&, Binder&)>& build) {
    Graph g;
    Binder binder(g);
    Tensor root = build(g, binder);
    if (numel(root.shape()) != 1)
        throw std::invalid_argument(
            "finite_difference_check: objective must be scalar, got " +
            shape_str(root.shape()));
    double v = root.scalar();
    if (!std::isfinite(v))
        throw std::runtime_error(
            "finite_difference_check: objective is non-finite");
    return {v, g.kink_signature()};
}

}  // namespace

FdCheckResult finite_difference_check(
    const std::function<Tensor(Graph&, Binder&)>& build,
    std::span<ParamTensor* const> params, double eps) {
    if (!(eps > 0.0))
        throw std::invalid_argument("finite_difference_check: eps must be positive");

    // Analytic pass at the center point.
    Graph g;
    Binder binder(g);
    Tensor root = build(g, binder);
    if (numel(root.shape()) != 1)
        throw std::invalid_argument(
            "finite_difference_check: objective must be scalar, got " +
            shape_str(root.shape()));
    if (!std::isfinite(root.scalar()))
        throw std::runtime_error("finite_difference_check: objective is non-finite");
    g.backward(root);

    FdCheckResult result;
    for (ParamTensor* p : params) {
        std::vector<double> analytic = binder.grad_of(*p);
        for (std::size_t c = 0; c < p->size(); ++c) {
            double orig = p->value[c];
            p->value[c] = orig + eps;
            Eval plus = evaluate(build);
            p->value[c] = orig - eps;
            Eval minus = evaluate(build);
            p->value[c] = orig;
            if (plus.kink_sig != minus.kink_sig) {
                ++result.coords_skipped;
                continue;
            }
            double numeric = (plus.value - minus.value) / (2.0 * eps);
            double a = analytic[c];
            double rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1e-12});
            ++result.coords_checked;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = p->name;
                result.worst_coord = static_cast<std::int64_t>(c);
            }
        }
    }
    return result;
}

}  // namespace nt
