#include "wmu/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace wmu {

std::int64_t shape_numel(const Shape& shape)
{
    std::int64_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ')';
    return os.str();
}

namespace {

void check_shape(const Shape& shape)
{
    if (shape.empty() || shape.size() > 4) {
        throw ConfigError("tensor rank must be 1-4, got shape " + shape_str(shape));
    }
    for (auto d : shape) {
        if (d < 0) {
            throw ConfigError("negative dimension in shape " + shape_str(shape));
        }
    }
}

} // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape))
{
    check_shape(shape_);
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(data.begin(), data.end())
{
    check_shape(shape_);
    if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
        throw ConfigError("buffer of " + std::to_string(data_.size()) + " elements does not match shape " +
                          shape_str(shape_));
    }
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const
{
    check_shape(shape);
    if (shape_numel(shape) != numel()) {
        throw ConfigError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    Tensor<T> out = *this;
    out.shape_ = std::move(shape);
    return out;
}

template <typename T>
void Tensor<T>::fill(T v)
{
    std::fill(data_.begin(), data_.end(), v);
}

template class Tensor<float>;
template class Tensor<double>;

} // namespace wmu
