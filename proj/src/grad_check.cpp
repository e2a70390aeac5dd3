#include "wmu/grad_check.hpp"

#include "wmu/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace wmu {

std::string GradCheckReport::summary() const
{
    std::ostringstream os;
    os << (passed ? "ok" : "FAILED") << ": max rel error " << max_rel_error << " over " << checked << " entries";
    if (nonsmooth) {
        os << " (" << nonsmooth << " at kinks)";
    }
    if (!worst_leaf.empty()) {
        os << ", worst " << worst_leaf << "[" << worst_index << "] analytic " << worst_analytic << " numeric "
           << worst_numeric;
    }
    return os.str();
}

namespace {

double eval_loss(const std::function<Var<double>()>& loss)
{
    NoGradGuard guard;
    return loss().value()[0];
}

double central_difference(const std::function<Var<double>()>& loss, double& slot, double h)
{
    const double orig = slot;
    slot = orig + h;
    const double up = eval_loss(loss);
    slot = orig - h;
    const double down = eval_loss(loss);
    slot = orig;
    return (up - down) / (2.0 * h);
}

double rel_error(double a, double b, double floor)
{
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

} // namespace

GradCheckReport grad_check(const std::function<Var<double>()>& loss, const std::vector<Var<double>>& leaves,
                           const GradCheckOptions& options)
{
    for (auto leaf : leaves) {
        if (!leaf.requires_grad()) {
            throw ConfigError("grad_check: leaf '" + leaf.name() + "' does not require grad");
        }
        leaf.zero_grad();
    }
    {
        auto root = loss();
        backward(root);
    }

    GradCheckReport report;
    std::mt19937_64 rng(options.seed);
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Var<double> leaf = leaves[li];
        const std::int64_t count = leaf.value().numel();
        std::vector<std::int64_t> entries(static_cast<std::size_t>(count));
        std::iota(entries.begin(), entries.end(), 0);
        if (options.max_entries_per_leaf > 0 && count > options.max_entries_per_leaf) {
            std::shuffle(entries.begin(), entries.end(), rng);
            entries.resize(static_cast<std::size_t>(options.max_entries_per_leaf));
        }
        const Tensor<double> analytic = leaf.has_grad() ? leaf.grad() : Tensor<double>(leaf.shape());
        for (auto idx : entries) {
            double& slot = leaf.mutable_value()[idx];
            const double numeric = central_difference(loss, slot, options.step);
            double err = rel_error(analytic[idx], numeric, options.abs_floor);
            if (err > options.tolerance) {
                const double half = central_difference(loss, slot, options.step / 2.0);
                if (rel_error(numeric, half, options.abs_floor) > options.tolerance) {
                    ++report.nonsmooth;
                    continue;
                }
            }
            ++report.checked;
            if (err > report.max_rel_error || report.worst_index < 0) {
                report.max_rel_error = err;
                report.worst_leaf = leaf.name().empty() ? "leaf" + std::to_string(li) : leaf.name();
                report.worst_index = idx;
                report.worst_analytic = analytic[idx];
                report.worst_numeric = numeric;
            }
        }
    }
    // Kinks are rare for random inputs; many of them means the check is not informative.
    const bool enough_smooth = report.nonsmooth * 10 <= report.checked + report.nonsmooth;
    report.passed = report.checked > 0 && enough_smooth && report.max_rel_error <= options.tolerance;
    return report;
}

Var<double> random_projection(const Var<double>& out, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor<double> r(out.shape());
    for (auto& v : r.values()) {
        v = dist(rng);
    }
    return sum(mul(out, Var<double>(std::move(r))));
}

Var<double> random_leaf(const Shape& shape, std::uint64_t seed, const std::string& name, double lo, double hi)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<double> t(shape);
    for (auto& v : t.values()) {
        v = dist(rng);
    }
    return Var<double>(std::move(t), true, name);
}

} // namespace wmu
