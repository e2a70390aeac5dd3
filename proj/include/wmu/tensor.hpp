#pragma once

#include "wmu/aligned.hpp"

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wmu {

/// Fatal configuration error: incompatible shapes, sizes or hyperparameters.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or out-of-range dataset content.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array with 1 to 4 dimensions.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> data);

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i < 0 ? rank() + i : i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // NCHW-style accessors; missing leading dims are not allowed.
    T& at(std::int64_t i, std::int64_t j) { return data_[offset(i, j)]; }
    const T& at(std::int64_t i, std::int64_t j) const { return data_[offset(i, j)]; }
    T& at(std::int64_t i, std::int64_t j, std::int64_t k) { return data_[offset(i, j, k)]; }
    const T& at(std::int64_t i, std::int64_t j, std::int64_t k) const { return data_[offset(i, j, k)]; }
    T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) { return data_[offset(n, c, h, w)]; }
    const T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const
    {
        return data_[offset(n, c, h, w)];
    }

    /// Same buffer reinterpreted under a new shape of equal element count.
    Tensor reshaped(Shape shape) const;
    void fill(T v);

    template <typename U>
    Tensor<U> cast() const
    {
        Tensor<U> out(shape_);
        std::copy(data_.begin(), data_.end(), out.data());
        return out;
    }

    bool operator==(const Tensor& other) const = default;

private:
    std::size_t offset(std::int64_t i, std::int64_t j) const
    {
        return static_cast<std::size_t>(i * shape_[1] + j);
    }
    std::size_t offset(std::int64_t i, std::int64_t j, std::int64_t k) const
    {
        return static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k);
    }
    std::size_t offset(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const
    {
        return static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w);
    }

    Shape shape_;
    AlignedVector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

extern template class Tensor<float>;
extern template class Tensor<double>;

} // namespace wmu
