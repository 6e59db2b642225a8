#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bamnet {

enum class DType : std::uint8_t { Float32 = 0, Float64 = 1, UInt8 = 2 };

template <typename T>
struct DTypeOf;
template <>
struct DTypeOf<float> {
    static constexpr DType value = DType::Float32;
};
template <>
struct DTypeOf<double> {
    static constexpr DType value = DType::Float64;
};
template <>
struct DTypeOf<std::uint8_t> {
    static constexpr DType value = DType::UInt8;
};

std::string dtype_name(DType dtype);
std::size_t dtype_size(DType dtype);

using Shape = std::vector<std::size_t>;

/// Raised for any operand shape that an operation cannot accept.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& shape);

/// Product of extents. Rejects an empty shape or a zero extent.
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array. A default-constructed tensor is empty (rank 0, no
/// elements) and stands for "no value"; every other tensor has positive
/// extents whose product equals the element count.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{})
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_numel(shape_) != data_.size()) {
            throw ShapeError("tensor of shape " + shape_str(shape_) + " cannot hold " +
                             std::to_string(data_.size()) + " elements");
        }
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }

    [[nodiscard]] static constexpr DType dtype() { return DTypeOf<T>::value; }
    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::size_t rank() const { return shape_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t i) const { return shape_.at(i); }
    [[nodiscard]] std::size_t numel() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    [[nodiscard]] std::span<T> data() { return data_; }
    [[nodiscard]] std::span<const T> data() const { return data_; }
    [[nodiscard]] T* ptr() { return data_.data(); }
    [[nodiscard]] const T* ptr() const { return data_.data(); }
    [[nodiscard]] const std::vector<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    void fill(T value) {
        for (auto& x : data_) x = value;
    }

    [[nodiscard]] Tensor reshaped(Shape shape) const& {
        Tensor out;
        out.shape_ = std::move(shape);
        if (shape_numel(out.shape_) != data_.size()) {
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(out.shape_));
        }
        out.data_ = data_;
        return out;
    }
    [[nodiscard]] Tensor reshaped(Shape shape) && {
        if (shape_numel(shape) != data_.size()) {
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        shape_ = std::move(shape);
        return std::move(*this);
    }

    template <typename U>
    [[nodiscard]] Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

/// Throws ShapeError naming both shapes when they differ.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace bamnet
