#pragma once

#include "wmu/autograd.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace wmu {

struct GradCheckOptions {
    double step = 1e-4;
    double tolerance = 1e-4;
    /// Entries sampled per leaf; 0 checks every entry.
    std::int64_t max_entries_per_leaf = 0;
    /// Gradients below this magnitude on both sides are compared absolutely.
    double abs_floor = 1e-6;
    std::uint64_t seed = 0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_leaf;
    std::int64_t worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::int64_t checked = 0;
    /// Entries whose finite difference straddles a kink (relu, max-pool):
    /// central differences at step and step/2 disagree, so no derivative exists there.
    std::int64_t nonsmooth = 0;
    bool passed = false;

    std::string summary() const;
};

/// Compares analytic gradients of `loss` (a scalar built from `leaves`) with
/// central finite differences, perturbing leaf values in place. Runs in
/// double precision. Leaves must have requires_grad set.
GradCheckReport grad_check(const std::function<Var<double>()>& loss, const std::vector<Var<double>>& leaves,
                           const GradCheckOptions& options);

/// sum(out * r) for a fixed pseudo-random r drawn from `seed`; turns any op
/// output into a scalar whose gradient exercises every output entry.
Var<double> random_projection(const Var<double>& out, std::uint64_t seed);

/// Uniform(-1, 1) leaf of the given shape.
Var<double> random_leaf(const Shape& shape, std::uint64_t seed, const std::string& name, double lo = -1.0,
                        double hi = 1.0);

} // namespace wmu
