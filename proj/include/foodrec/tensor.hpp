#ifndef FOODREC_TENSOR_HPP
#define FOODREC_TENSOR_HPP

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "foodrec/error.hpp"

namespace foodrec {

/// Dense n-dimensional array with row-major layout. The universal value
/// type for images, activations, weights and gradients.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(checked_size(shape_), T(0));
    }

    TensorT(std::vector<int> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != checked_size(shape_)) {
            raise(Errc::shape_mismatch,
                  "tensor data length " + std::to_string(data_.size()) +
                      " does not match shape " + shape_string());
        }
    }

    static TensorT full(std::vector<int> shape, T value) {
        TensorT t(std::move(shape));
        for (auto& v : t.data_) v = value;
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // Row-major indexing. For shape (H, W, C), element (y, x, c) lives at
    // ((y*W)+x)*C+c.
    T& operator()(int a) { return data_[static_cast<std::size_t>(a)]; }
    const T& operator()(int a) const { return data_[static_cast<std::size_t>(a)]; }

    T& operator()(int a, int b) {
        return data_[static_cast<std::size_t>(a) * shape_[1] + b];
    }
    const T& operator()(int a, int b) const {
        return data_[static_cast<std::size_t>(a) * shape_[1] + b];
    }

    T& operator()(int a, int b, int c) {
        return data_[(static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c];
    }
    const T& operator()(int a, int b, int c) const {
        return data_[(static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c];
    }

    T& operator()(int a, int b, int c, int d) {
        return data_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) *
                         shape_[3] +
                     d];
    }
    const T& operator()(int a, int b, int c, int d) const {
        return data_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) *
                         shape_[3] +
                     d];
    }

    bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

    std::string shape_string() const {
        std::ostringstream os;
        os << '(';
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) os << ',';
            os << shape_[i];
        }
        os << ')';
        return os.str();
    }

    /// Reinterpret with a new shape of equal element count.
    TensorT reshaped(std::vector<int> shape) const {
        TensorT out;
        out.shape_ = std::move(shape);
        if (checked_size(out.shape_) != data_.size()) {
            raise(Errc::shape_mismatch,
                  "reshape to " + out.shape_string() + " from " + shape_string());
        }
        out.data_ = data_;
        return out;
    }

    template <typename U>
    TensorT<U> cast() const {
        std::vector<U> d(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) d[i] = static_cast<U>(data_[i]);
        return TensorT<U>(shape_, std::move(d));
    }

private:
    static std::size_t checked_size(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int e : shape) {
            if (e <= 0) raise(Errc::invalid_argument, "tensor extents must be positive");
            n *= static_cast<std::size_t>(e);
        }
        return shape.empty() ? 0 : n;
    }

    std::vector<int> shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

} // namespace foodrec

#endif
