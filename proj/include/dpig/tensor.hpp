#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpig/error.hpp"

namespace dpig {

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_str(const std::vector<int64_t>& shape);

// Dense row-major 64-bit float tensor. grad stays empty until a backward
// pass reaches the tensor.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;

    Tensor() = default;
    Tensor(std::vector<int64_t> s, std::vector<double> d);

    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, double v);
    static Tensor vec(std::vector<double> v);
    static Tensor scalar(double v);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t dim(size_t i) const { return shape.at(i); }
    size_t rank() const { return shape.size(); }

    void ensure_grad();  // allocate zeros if absent
    void zero_grad();

    // offset into a [n, c, h, w] tensor
    int64_t off4(int64_t n, int64_t c, int64_t y, int64_t x) const {
        return ((n * shape[1] + c) * shape[2] + y) * shape[3] + x;
    }
    // offset into a [rows, cols] tensor
    int64_t off2(int64_t r, int64_t c) const { return r * shape[1] + c; }

    // copy of row n of a [n, ...] tensor, keeping a leading dim of 1
    Tensor slice_row(int64_t n) const;
};

bool same_shape(const Tensor& a, const Tensor& b);
void check_finite(const Tensor& t, const char* what);
void check_finite(const std::vector<double>& v, const char* what);

}  // namespace dpig
