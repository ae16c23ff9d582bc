#include "dpig/tensor.hpp"

#include <cmath>
#include <sstream>

namespace dpig {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int64_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
    const auto n = static_cast<size_t>(shape_numel(shape));
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<int64_t> shape, double v) {
    const auto n = static_cast<size_t>(shape_numel(shape));
    return Tensor(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::vec(std::vector<double> v) {
    const auto n = static_cast<int64_t>(v.size());
    return Tensor({n}, std::move(v));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() { grad.assign(data.size(), 0.0); }

Tensor Tensor::slice_row(int64_t n) const {
    if (shape.empty() || n < 0 || n >= shape[0]) {
        throw ShapeError("slice_row " + std::to_string(n) + " out of range for " + shape_str(shape));
    }
    std::vector<int64_t> s = shape;
    s[0] = 1;
    const int64_t stride = numel() / shape[0];
    std::vector<double> d(data.begin() + n * stride, data.begin() + (n + 1) * stride);
    return Tensor(std::move(s), std::move(d));
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

void check_finite(const std::vector<double>& v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NonFiniteError(std::string("non-finite value in ") + what);
        }
    }
}

void check_finite(const Tensor& t, const char* what) { check_finite(t.data, what); }

}  // namespace dpig
