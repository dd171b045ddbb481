#include "voxlow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace voxlow {

Shape::Shape(std::initializer_list<int64_t> dims) : Shape(std::vector<int64_t>(dims)) {}

Shape::Shape(std::vector<int64_t> dims) : dims_(std::move(dims)) {
    if (dims_.empty() || dims_.size() > kMaxRank) {
        throw ShapeError("shape rank must be 1.." + std::to_string(kMaxRank) + ", got " +
                         std::to_string(dims_.size()));
    }
    for (int64_t d : dims_) {
        if (d < 1) throw ShapeError("non-positive extent in shape " + str());
    }
}

int64_t Shape::numel() const {
    if (dims_.empty()) return 0;
    return std::accumulate(dims_.begin(), dims_.end(), int64_t{1}, std::multiplies<>());
}

std::vector<int64_t> Shape::strides() const {
    std::vector<int64_t> s(dims_.size(), 1);
    for (std::size_t i = dims_.size(); i-- > 1;) s[i - 1] = s[i] * dims_[i];
    return s;
}

std::string Shape::str() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "," : "") << dims_[i];
    os << ')';
    return os.str();
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_.numel()), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != shape_.numel()) {
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_.str());
    }
}

int64_t Tensor::offset(std::span<const int64_t> index) const {
    if (index.size() != shape_.rank()) throw ShapeError("index rank mismatch for shape " + shape_.str());
    int64_t off = 0;
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] < 0 || index[i] >= shape_[i]) throw ShapeError("index out of range for " + shape_.str());
        off = off * shape_[i] + index[i];
    }
    return off;
}

float Tensor::at(std::initializer_list<int64_t> index) const {
    return data_[static_cast<std::size_t>(offset({index.begin(), index.size()}))];
}

float& Tensor::at(std::initializer_list<int64_t> index) {
    return data_[static_cast<std::size_t>(offset({index.begin(), index.size()}))];
}

bool Tensor::bit_equal(const Tensor& other) const {
    return shape_ == other.shape_ &&
           std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0;
}

Tensor reshape(const Tensor& t, const Shape& new_shape) {
    if (new_shape.numel() != t.numel()) {
        throw ShapeError("cannot reshape " + t.shape().str() + " to " + new_shape.str() +
                         ": element counts differ");
    }
    return Tensor(new_shape, std::vector<float>(t.data().begin(), t.data().end()));
}

Tensor transpose(const Tensor& t, std::span<const std::size_t> perm) {
    const std::size_t rank = t.rank();
    if (perm.size() != rank) throw ShapeError("permutation length does not match rank");
    std::vector<bool> seen(rank, false);
    for (std::size_t p : perm) {
        if (p >= rank || seen[p]) throw ShapeError("invalid axis permutation");
        seen[p] = true;
    }

    std::vector<int64_t> out_dims(rank);
    for (std::size_t i = 0; i < rank; ++i) out_dims[i] = t.shape()[perm[i]];
    Tensor out{Shape(out_dims)};

    const auto in_strides = t.shape().strides();
    // Stride in the input for each output axis.
    std::vector<int64_t> walk(rank);
    for (std::size_t i = 0; i < rank; ++i) walk[i] = in_strides[perm[i]];

    std::vector<int64_t> idx(rank, 0);
    auto src = t.data();
    auto dst = out.data();
    int64_t in_off = 0;
    for (int64_t n = 0; n < out.numel(); ++n) {
        dst[static_cast<std::size_t>(n)] = src[static_cast<std::size_t>(in_off)];
        for (std::size_t ax = rank; ax-- > 0;) {
            if (++idx[ax] < out_dims[ax]) {
                in_off += walk[ax];
                break;
            }
            in_off -= walk[ax] * (out_dims[ax] - 1);
            idx[ax] = 0;
        }
    }
    return out;
}

Shape folded_shape(const Shape& s) {
    if (s.rank() != 5) throw ShapeError("fold_depth expects rank 5, got " + s.str());
    return Shape{s[0], s[1] * s[2], s[3], s[4]};
}

// With row-major (B,C,D,H,W) the c-major fold (c*D + d) is a pure reshape.
Tensor fold_depth(const Tensor& t) { return reshape(t, folded_shape(t.shape())); }

Tensor unfold_depth(const Tensor& t, int64_t channels, int64_t depth) {
    const Shape& s = t.shape();
    if (s.rank() != 4) throw ShapeError("unfold_depth expects rank 4, got " + s.str());
    if (channels < 1 || depth < 1 || s[1] != channels * depth) {
        throw ShapeError("channel extent " + std::to_string(s[1]) + " is not " + std::to_string(channels) +
                         "x" + std::to_string(depth));
    }
    return reshape(t, Shape{s[0], channels, depth, s[2], s[3]});
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("max_abs_diff shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
    double m = 0.0;
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(x[i]) - static_cast<double>(y[i])));
    }
    return m;
}

Tensor to_channels_last(const Tensor& t) {
    if (t.rank() != 4) throw ShapeError("to_channels_last expects rank 4");
    const std::size_t perm[] = {0, 2, 3, 1};
    return transpose(t, perm);
}

Tensor to_channels_first(const Tensor& t) {
    if (t.rank() != 4) throw ShapeError("to_channels_first expects rank 4");
    const std::size_t perm[] = {0, 3, 1, 2};
    return transpose(t, perm);
}

} // namespace voxlow
