#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "decode/rng.hpp"

namespace decode {

// Row-major n-dimensional array of doubles. Plain value type; all autodiff
// bookkeeping lives in autodiff.hpp.
struct Tensor {
    std::vector<size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<size_t> s);
    Tensor(std::vector<size_t> s, std::vector<double> d);
    Tensor(std::vector<size_t> s, double fill);

    static Tensor zeros(std::vector<size_t> s) { return Tensor(std::move(s), 0.0); }
    static Tensor full(std::vector<size_t> s, double v) { return Tensor(std::move(s), v); }
    static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }
    static Tensor randn(std::vector<size_t> s, RandomStream& rng);
    // uniform in [-a, a]
    static Tensor rand_uniform(std::vector<size_t> s, double a, RandomStream& rng);

    size_t numel() const { return data.size(); }
    size_t ndim() const { return shape.size(); }
    size_t extent(size_t i) const { return shape[i]; }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double& at(size_t i) { return data[i]; }
    double at(size_t i) const { return data[i]; }
    double& at(size_t i, size_t j) { return data[i * shape[1] + j]; }
    double at(size_t i, size_t j) const { return data[i * shape[1] + j]; }
    double& at(size_t i, size_t j, size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    double at(size_t i, size_t j, size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }

    bool has_nan() const;
    double min() const;
    double max() const;
    double abs_max() const;
};

size_t shape_numel(const std::vector<size_t>& s);
std::string shape_str(const std::vector<size_t>& s);

// ----- kernels on plain tensors (no tape) -----

// C[MxN] = A[MxK] * B[KxN]
Tensor t_matmul(const Tensor& a, const Tensor& b);
// 2-D transpose
Tensor t_transpose(const Tensor& a);

// Right-aligned broadcast of b onto a's shape: shapes equal, b scalar, or
// b's shape a suffix of a's. Returns the output shape (always a's shape).
bool broadcast_compatible(const std::vector<size_t>& a, const std::vector<size_t>& b);

Tensor t_add(const Tensor& a, const Tensor& b);
Tensor t_sub(const Tensor& a, const Tensor& b);
Tensor t_mul(const Tensor& a, const Tensor& b);
Tensor t_scale(const Tensor& a, double c);
Tensor t_add_scalar(const Tensor& a, double c);
Tensor t_neg(const Tensor& a);

// Sums g down to `target` shape (inverse of suffix broadcasting).
Tensor t_reduce_to(const Tensor& g, const std::vector<size_t>& target);

double t_sum(const Tensor& a);
double t_dot(const Tensor& a, const Tensor& b);
double t_l2norm(const Tensor& a);

}  // namespace decode
