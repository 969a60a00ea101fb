#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gnwd {

/// Violated precondition on a public call (bad shape, bad range, ...).
struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Input bytes do not follow the expected file layout.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// File shorter than its header claims.
struct LengthError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
}

std::string shape_str(const Shape& shape);

/// Row-major float32 array tagged with its shape.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f)
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
        check_dims();
    }
    Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_dims();
        if (data_.size() != shape_numel(shape_)) {
            throw ContractError("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
        }
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<float> span() { return data_; }
    std::span<const float> span() const { return data_; }
    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    const std::vector<float>& values() const { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    /// Same data, new shape of equal element count.
    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != numel()) {
            throw ContractError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    bool all_finite() const {
        for (float v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

  private:
    void check_dims() const {
        for (std::size_t d : shape_) {
            if (d == 0) throw ContractError("tensor dims must be positive, got " + shape_str(shape_));
        }
    }

    Shape shape_;
    std::vector<float> data_;
};

/// Slice of the leading axis: frames [begin, end) of a [L, ...] tensor.
Tensor slice_leading(const Tensor& t, std::size_t begin, std::size_t end);

/// Concatenate along the leading axis; trailing dims must agree.
Tensor concat_leading(const Tensor& a, const Tensor& b);

double dot(std::span<const float> a, std::span<const float> b);
double l2_norm(std::span<const float> a);

}  // namespace gnwd
