#include "decode/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "decode/threading.hpp"

namespace decode {

size_t shape_numel(const std::vector<size_t>& s) {
    size_t n = 1;
    for (size_t e : s) n *= e;
    return n;
}

std::string shape_str(const std::vector<size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<size_t> s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}

Tensor::Tensor(std::vector<size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape))
        throw std::invalid_argument("Tensor: data size " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
}

Tensor::Tensor(std::vector<size_t> s, double fill)
    : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor Tensor::randn(std::vector<size_t> s, RandomStream& rng) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = rng.normal();
    return t;
}

Tensor Tensor::rand_uniform(std::vector<size_t> s, double a, RandomStream& rng) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = rng.uniform(-a, a);
    return t;
}

bool Tensor::has_nan() const {
    for (double x : data)
        if (std::isnan(x)) return true;
    return false;
}

double Tensor::min() const {
    double m = data.empty() ? 0.0 : data[0];
    for (double x : data) m = std::min(m, x);
    return m;
}

double Tensor::max() const {
    double m = data.empty() ? 0.0 : data[0];
    for (double x : data) m = std::max(m, x);
    return m;
}

double Tensor::abs_max() const {
    double m = 0.0;
    for (double x : data) m = std::max(m, std::fabs(x));
    return m;
}

Tensor t_matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0])
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape) +
                                    " and " + shape_str(b.shape));
    const size_t M = a.shape[0], K = a.shape[1], N = b.shape[1];
    Tensor c({M, N});
    const double* pa = a.data.data();
    const double* pb = b.data.data();
    double* pc = c.data.data();
    auto rows = [&](size_t i0, size_t i1) {
        for (size_t i = i0; i < i1; ++i) {
            double* crow = pc + i * N;
            const double* arow = pa + i * K;
            for (size_t k = 0; k < K; ++k) {
                const double av = arow[k];
                const double* brow = pb + k * N;
                for (size_t j = 0; j < N; ++j) crow[j] += av * brow[j];
            }
        }
    };
    if (M * N * K >= (size_t)1 << 17)
        parallel_for_chunks(M, rows);
    else
        rows(0, M);
    return c;
}

Tensor t_transpose(const Tensor& a) {
    if (a.ndim() != 2)
        throw std::invalid_argument("transpose: expected 2-D, got " + shape_str(a.shape));
    const size_t M = a.shape[0], N = a.shape[1];
    Tensor c({N, M});
    for (size_t i = 0; i < M; ++i)
        for (size_t j = 0; j < N; ++j) c.data[j * M + i] = a.data[i * N + j];
    return c;
}

bool broadcast_compatible(const std::vector<size_t>& a, const std::vector<size_t>& b) {
    size_t na = a.size(), nb = b.size(), n = std::max(na, nb);
    for (size_t i = 0; i < n; ++i) {
        size_t ea = i < na ? a[na - 1 - i] : 1;
        size_t eb = i < nb ? b[nb - 1 - i] : 1;
        if (ea != eb && ea != 1 && eb != 1) return false;
    }
    return true;
}

namespace {

std::vector<size_t> broadcast_shape(const std::vector<size_t>& a, const std::vector<size_t>& b) {
    size_t na = a.size(), nb = b.size(), n = std::max(na, nb);
    std::vector<size_t> out(n);
    for (size_t i = 0; i < n; ++i) {
        size_t ea = i < na ? a[na - 1 - i] : 1;
        size_t eb = i < nb ? b[nb - 1 - i] : 1;
        out[n - 1 - i] = std::max(ea, eb);
    }
    return out;
}

// strides into `shape` for an operand broadcast up to `out` (0 where pinned)
std::vector<size_t> broadcast_strides(const std::vector<size_t>& shape,
                                      const std::vector<size_t>& out) {
    std::vector<size_t> strides(out.size(), 0);
    size_t s = 1;
    for (size_t i = 0; i < shape.size(); ++i) {
        size_t d = shape.size() - 1 - i;
        size_t od = out.size() - 1 - i;
        strides[od] = (shape[d] == 1 && out[od] != 1) ? 0 : s;
        s *= shape[d];
    }
    return strides;
}

template <class F>
Tensor binary_broadcast(const Tensor& a, const Tensor& b, F&& f, const char* name) {
    if (a.same_shape(b)) {
        Tensor c(a.shape);
        for (size_t i = 0; i < a.numel(); ++i) c.data[i] = f(a.data[i], b.data[i]);
        return c;
    }
    if (b.numel() == 1) {
        Tensor c(a.shape);
        const double bv = b.data[0];
        for (size_t i = 0; i < a.numel(); ++i) c.data[i] = f(a.data[i], bv);
        return c;
    }
    if (a.numel() == 1) {
        Tensor c(b.shape);
        const double av = a.data[0];
        for (size_t i = 0; i < b.numel(); ++i) c.data[i] = f(av, b.data[i]);
        return c;
    }
    if (!broadcast_compatible(a.shape, b.shape))
        throw std::invalid_argument(std::string(name) + ": shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
    // suffix fast path: b tiles over a
    if (b.ndim() <= a.ndim()) {
        bool suffix = true;
        for (size_t i = 0; i < b.ndim(); ++i)
            if (b.shape[b.ndim() - 1 - i] != a.shape[a.ndim() - 1 - i]) suffix = false;
        if (suffix) {
            Tensor c(a.shape);
            const size_t nb = b.numel();
            for (size_t i = 0; i < a.numel(); ++i) c.data[i] = f(a.data[i], b.data[i % nb]);
            return c;
        }
    }
    const auto out_shape = broadcast_shape(a.shape, b.shape);
    Tensor c(out_shape);
    const auto sa = broadcast_strides(a.shape, out_shape);
    const auto sb = broadcast_strides(b.shape, out_shape);
    const size_t nd = out_shape.size();
    std::vector<size_t> idx(nd, 0);
    size_t ia = 0, ib = 0;
    for (size_t i = 0; i < c.numel(); ++i) {
        c.data[i] = f(a.data[ia], b.data[ib]);
        for (size_t d = nd; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out_shape[d]) break;
            idx[d] = 0;
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
        }
    }
    return c;
}

}  // namespace

Tensor t_add(const Tensor& a, const Tensor& b) {
    return binary_broadcast(a, b, [](double x, double y) { return x + y; }, "add");
}

Tensor t_sub(const Tensor& a, const Tensor& b) {
    return binary_broadcast(a, b, [](double x, double y) { return x - y; }, "sub");
}

Tensor t_mul(const Tensor& a, const Tensor& b) {
    return binary_broadcast(a, b, [](double x, double y) { return x * y; }, "mul");
}

Tensor t_scale(const Tensor& a, double c) {
    Tensor r(a.shape);
    for (size_t i = 0; i < a.numel(); ++i) r.data[i] = a.data[i] * c;
    return r;
}

Tensor t_add_scalar(const Tensor& a, double c) {
    Tensor r(a.shape);
    for (size_t i = 0; i < a.numel(); ++i) r.data[i] = a.data[i] + c;
    return r;
}

Tensor t_neg(const Tensor& a) { return t_scale(a, -1.0); }

Tensor t_reduce_to(const Tensor& g, const std::vector<size_t>& target) {
    if (g.shape == target) return g;
    const size_t nt = shape_numel(target);
    Tensor r(target);
    if (nt == 1) {
        double s = 0.0;
        for (double x : g.data) s += x;
        r.data[0] = s;
        return r;
    }
    // suffix case: sum over leading dims
    bool suffix = target.size() <= g.ndim();
    for (size_t i = 0; suffix && i < target.size(); ++i)
        if (target[target.size() - 1 - i] != g.shape[g.ndim() - 1 - i]) suffix = false;
    if (suffix) {
        for (size_t i = 0; i < g.numel(); ++i) r.data[i % nt] += g.data[i];
        return r;
    }
    // general: sum over every axis broadcast up from extent 1
    const auto st = broadcast_strides(target, g.shape);
    const size_t nd = g.ndim();
    std::vector<size_t> idx(nd, 0);
    size_t it = 0;
    for (size_t i = 0; i < g.numel(); ++i) {
        r.data[it] += g.data[i];
        for (size_t d = nd; d-- > 0;) {
            ++idx[d];
            it += st[d];
            if (idx[d] < g.shape[d]) break;
            idx[d] = 0;
            it -= st[d] * g.shape[d];
        }
    }
    return r;
}

double t_sum(const Tensor& a) {
    double s = 0.0;
    for (double x : a.data) s += x;
    return s;
}

double t_dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) s += a.data[i] * b.data[i];
    return s;
}

double t_l2norm(const Tensor& a) { return std::sqrt(t_dot(a, a)); }

}  // namespace decode
