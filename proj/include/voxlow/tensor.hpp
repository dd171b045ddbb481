#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxlow {

/// Raised when extents, ranks or element counts do not line up.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kMaxRank = 5;

/// Ordered list of positive extents, rank 1..5.
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<int64_t> dims);
    explicit Shape(std::vector<int64_t> dims);

    std::size_t rank() const { return dims_.size(); }
    int64_t operator[](std::size_t axis) const { return dims_[axis]; }
    int64_t numel() const;
    const std::vector<int64_t>& dims() const { return dims_; }

    /// Row-major strides in elements (last axis fastest).
    std::vector<int64_t> strides() const;

    std::string str() const;

    bool operator==(const Shape&) const = default;

private:
    std::vector<int64_t> dims_;
};

/// Dense row-major float32 array. Immutable in spirit: operations return new values.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.rank(); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }

    int64_t offset(std::span<const int64_t> index) const;
    float at(std::initializer_list<int64_t> index) const;
    float& at(std::initializer_list<int64_t> index);

    /// Bitwise comparison of shape and payload.
    bool bit_equal(const Tensor& other) const;

private:
    Shape shape_;
    std::vector<float> data_;
};

Tensor reshape(const Tensor& t, const Shape& new_shape);

/// out[idx] = in[idx permuted back]; output axis i is input axis perm[i].
Tensor transpose(const Tensor& t, std::span<const std::size_t> perm);

/// (B,C,D,H,W) -> (B,C*D,H,W); folded channel index is c*D + d.
Tensor fold_depth(const Tensor& t);

/// Inverse of fold_depth: (B,c*d,H,W) -> (B,c,d,H,W).
Tensor unfold_depth(const Tensor& t, int64_t channels, int64_t depth);

/// Shape-level counterpart of fold_depth.
Shape folded_shape(const Shape& s);

double max_abs_diff(const Tensor& a, const Tensor& b);

/// Channels-first (B,C,H,W) <-> channels-last (B,H,W,C) used at file boundaries.
Tensor to_channels_last(const Tensor& t);
Tensor to_channels_first(const Tensor& t);

} // namespace voxlow
