#pragma once

#include "oracles.hpp"

#include "wmu/autograd.hpp"
#include "wmu/grad_check.hpp"
#include "wmu/random.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

namespace testutil {

template <typename T>
wmu::Tensor<T> random_tensor(const wmu::Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0)
{
    wmu::Rng rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    wmu::Tensor<T> t(shape);
    for (auto& v : t.values()) {
        v = static_cast<T>(dist(rng));
    }
    return t;
}

template <typename T>
oracle::Vec to_vec(const wmu::Tensor<T>& t)
{
    return oracle::Vec(t.values().begin(), t.values().end());
}

template <typename T>
double max_abs_diff(const wmu::Tensor<T>& t, const oracle::Vec& ref)
{
    if (static_cast<std::size_t>(t.numel()) != ref.size()) {
        return INFINITY;
    }
    double m = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(t[static_cast<std::int64_t>(i)]) - ref[i]));
    }
    return m;
}

inline wmu::GradCheckOptions grad_opts(double tol = 1e-4, std::int64_t per_leaf = 0)
{
    wmu::GradCheckOptions o;
    o.tolerance = tol;
    o.max_entries_per_leaf = per_leaf;
    return o;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("wmu_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

} // namespace testutil
