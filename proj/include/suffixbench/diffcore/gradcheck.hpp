#pragma once

#include <string>
#include <vector>

#include "suffixbench/diffcore/graph.hpp"

namespace suffixbench::diffcore {

struct GradCheckReport {
    double max_rel_err = 0.0;
    long coords_checked = 0;
    std::string worst_leaf;

    bool ok(double tol = 1e-3) const { return max_rel_err <= tol; }
};

// Central finite differences against the reverse pass. `build` must
// reconstruct the scalar loss from the current leaf values and be
// deterministic across calls (re-seed any internal rng).
//
// Checks every coordinate by default; max_coords_per_leaf > 0 switches to a
// deterministic stride subsample so large parameter tensors stay cheap.
template <class S, class BuildFn>
GradCheckReport check_gradients(const std::vector<NodePtr<S>>& leaves, BuildFn&& build,
                                double step = 1e-4, long max_coords_per_leaf = 0) {
    auto loss = build();
    backward(loss);
    std::vector<Tensor<S>> analytic;
    analytic.reserve(leaves.size());
    for (const auto& l : leaves) {
        l->ensure_grad();
        analytic.push_back(l->grad);
        std::fill(l->grad.data.begin(), l->grad.data.end(), S(0));
    }

    GradCheckReport report;
    for (size_t li = 0; li < leaves.size(); ++li) {
        auto& l = leaves[li];
        long n = l->value.size();
        long stride = 1;
        if (max_coords_per_leaf > 0 && n > max_coords_per_leaf)
            stride = (n + max_coords_per_leaf - 1) / max_coords_per_leaf;
        for (long i = 0; i < n; i += stride) {
            size_t j = static_cast<size_t>(i);
            S saved = l->value.data[j];
            l->value.data[j] = saved + static_cast<S>(step);
            double up = static_cast<double>(build()->value.data[0]);
            l->value.data[j] = saved - static_cast<S>(step);
            double down = static_cast<double>(build()->value.data[0]);
            l->value.data[j] = saved;
            double fd = (up - down) / (2.0 * step);
            double an = static_cast<double>(analytic[li].data[j]);
            double denom = std::max({std::fabs(an), std::fabs(fd), 1e-6});
            double rel = std::fabs(an - fd) / denom;
            ++report.coords_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_leaf = l->name.empty() ? ("leaf" + std::to_string(li)) : l->name;
            }
        }
    }
    return report;
}

}  // namespace suffixbench::diffcore
