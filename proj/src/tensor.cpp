#include "ccmt/tensor.hpp"

#include "ccmt/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace ccmt {

std::string shape_str(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
    for (auto d : shape_)
        if (d == 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape_));
    data_.assign(shape_size(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto d : shape_)
        if (d == 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape_));
    if (data_.size() != shape_size(shape_))
        throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_str(shape_));
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
    if (rows.size() == 0) throw DimensionError("matrix literal needs at least one row");
    const std::size_t ncols = rows.begin()->size();
    std::vector<T> data;
    data.reserve(rows.size() * ncols);
    for (const auto& r : rows) {
        if (r.size() != ncols) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor(Shape{rows.size(), ncols}, std::move(data));
}

template <typename T>
T Tensor<T>::item() const {
    if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

template <typename T>
void Tensor<T>::fill(T value) {
    std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;
template class Tensor<long double>;

} // namespace ccmt
