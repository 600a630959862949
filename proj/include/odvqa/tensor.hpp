#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace odvqa {

using Shape = std::vector<std::size_t>;

/// Thrown for any shape or extent disagreement between operands.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

/// Row-major strides for a shape.
inline std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
    return s;
}

/// Dense row-major N-dimensional array. A plain value type: copying copies the elements.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(numel(shape_), fill) {
        validate_extents();
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_extents();
        if (data_.size() != numel(shape_))
            throw ShapeError("tensor: " + std::to_string(data_.size()) + " elements do not fill shape " +
                             to_string(shape_));
    }

    static Tensor scalar(T v) { return Tensor(Shape{1}, v); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    template <typename... Idx>
    T& at(Idx... idx) {
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }
    template <typename... Idx>
    const T& at(Idx... idx) const {
        return data_[offset({static_cast<std::size_t>(idx)...})];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    /// Same elements, new shape of identical element count.
    Tensor reshaped(Shape shape) const {
        if (numel(shape) != data_.size())
            throw ShapeError("reshape: " + to_string(shape_) + " -> " + to_string(shape) + " changes element count");
        return Tensor(std::move(shape), data_);
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Tensor& operator+=(const Tensor& other) {
        require_same_shape(other, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
        return *this;
    }

    void require_same_shape(const Tensor& other, const char* what) const {
        if (shape_ != other.shape_)
            throw ShapeError(std::string(what) + ": shape " + to_string(shape_) + " vs " + to_string(other.shape_));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

private:
    void validate_extents() const {
        for (std::size_t i = 0; i < shape_.size(); ++i)
            if (shape_[i] == 0) throw ShapeError("tensor: axis " + std::to_string(i) + " has zero extent");
    }

    std::size_t offset(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != shape_.size()) throw ShapeError("tensor index rank mismatch");
        std::size_t off = 0, axis = 0;
        for (std::size_t i : idx) {
            if (i >= shape_[axis]) throw std::out_of_range("tensor index out of range on axis " + std::to_string(axis));
            off = off * shape_[axis] + i;
            ++axis;
        }
        return off;
    }

    Shape shape_;
    std::vector<T> data_;
};

}  // namespace odvqa
