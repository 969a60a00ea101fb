#include "gnwd/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace gnwd {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor slice_leading(const Tensor& t, std::size_t begin, std::size_t end) {
    if (t.rank() == 0 || begin >= end || end > t.dim(0)) {
        throw ContractError("bad leading slice [" + std::to_string(begin) + "," + std::to_string(end) +
                            ") of " + shape_str(t.shape()));
    }
    const std::size_t stride = t.numel() / t.dim(0);
    Shape shape = t.shape();
    shape[0] = end - begin;
    std::vector<float> data(t.data() + begin * stride, t.data() + end * stride);
    return Tensor(std::move(shape), std::move(data));
}

Tensor concat_leading(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank() || a.rank() == 0 ||
        !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
        throw ContractError("cannot concat " + shape_str(a.shape()) + " with " + shape_str(b.shape()));
    }
    Shape shape = a.shape();
    shape[0] += b.dim(0);
    std::vector<float> data(a.values());
    data.insert(data.end(), b.values().begin(), b.values().end());
    return Tensor(std::move(shape), std::move(data));
}

double dot(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw ContractError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

double l2_norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

}  // namespace gnwd
