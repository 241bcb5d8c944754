#include "decode/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "decode/fft.hpp"

namespace decode {

namespace detail {

void Node::accumulate(const Tensor& g) {
    if (!grad_set) {
        grad = g;
        grad_set = true;
        return;
    }
    for (size_t i = 0; i < grad.numel(); ++i) grad.data[i] += g.data[i];
}

}  // namespace detail

using detail::Node;

const Tensor& DiffTensor::grad() const {
    if (!node_ || !node_->grad_set)
        throw std::runtime_error("DiffTensor: grad not populated (did backward run?)");
    return node_->grad;
}

namespace {

thread_local GradTape* t_active = nullptr;
std::atomic<bool> g_debug_nan{false};

struct NoTapeScope {
    GradTape* prev;
    NoTapeScope() : prev(t_active) { t_active = nullptr; }
    ~NoTapeScope() { t_active = prev; }
};

void check_input(const char* op, const DiffTensor& t) {
    if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined input tensor");
    if (g_debug_nan.load(std::memory_order_relaxed) && t.value().has_nan())
        throw std::runtime_error(std::string(op) + ": NaN input detected (debug mode)");
}

DiffTensor make_result(Tensor v, bool rec) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    if (rec) {
        n->requires_grad = true;
        n->tape = t_active;
    }
    return DiffTensor(std::move(n));
}

bool want_record(std::initializer_list<const DiffTensor*> ins) {
    if (!t_active) return false;
    for (auto* p : ins)
        if (p->requires_grad()) return true;
    return false;
}

double norm_cdf(double x) { return 0.5 * (1.0 + std::erf(x * 0.70710678118654752440)); }
double norm_pdf(double x) { return 0.39894228040143267794 * std::exp(-0.5 * x * x); }

}  // namespace

GradTape* active_tape() { return t_active; }

TapeScope::TapeScope(GradTape& t) : prev_(t_active) { t_active = &t; }
TapeScope::~TapeScope() { t_active = prev_; }

void GradTape::clear() {
    records_.clear();
    used_ = false;
}

void GradTape::backward(const DiffTensor& loss) {
    if (used_)
        throw std::runtime_error("GradTape: backward already ran on this tape (single-pass)");
    if (!loss.defined() || loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be a scalar tensor, got " +
                                    (loss.defined() ? shape_str(loss.shape()) : "<undefined>"));
    if (records_.empty()) throw std::runtime_error("backward: tape is empty");
    if (loss.node()->tape != this)
        throw std::runtime_error("backward: loss was not computed on this tape");
    used_ = true;
    loss.node()->grad = Tensor(loss.shape(), 1.0);
    loss.node()->grad_set = true;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

DiffTensor make_leaf(Tensor v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return DiffTensor(std::move(n));
}

void set_debug_nan_checks(bool on) { g_debug_nan.store(on); }
bool debug_nan_checks() { return g_debug_nan.load(); }

// ---------------- arithmetic ----------------

DiffTensor add(const DiffTensor& a, const DiffTensor& b) {
    check_input("add", a);
    check_input("add", b);
    bool rec = want_record({&a, &b});
    DiffTensor out = make_result(t_add(a.value(), b.value()), rec);
    if (rec) {
        auto an = a.node(), bn = b.node(), on = out.node();
        t_active->record([an, bn, on] {
            if (!on->grad_set) return;
            if (an->requires_grad) an->accumulate(t_reduce_to(on->grad, an->value.shape));
            if (bn->requires_grad) bn->accumulate(t_reduce_to(on->grad, bn->value.shape));
        });
    }
    return out;
}

DiffTensor sub(const DiffTensor& a, const DiffTensor& b) {
    check_input("sub", a);
    check_input("sub", b);
    bool rec = want_record({&a, &b});
    DiffTensor out = make_result(t_sub(a.value(), b.value()), rec);
    if (rec) {
        auto an = a.node(), bn = b.node(), on = out.node();
        t_active->record([an, bn, on] {
            if (!on->grad_set) return;
            if (an->requires_grad) an->accumulate(t_reduce_to(on->grad, an->value.shape));
            if (bn->requires_grad)
                bn->accumulate(t_neg(t_reduce_to(on->grad, bn->value.shape)));
        });
    }
    return out;
}

DiffTensor mul(const DiffTensor& a, const DiffTensor& b) {
    check_input("mul", a);
    check_input("mul", b);
    bool rec = want_record({&a, &b});
    DiffTensor out = make_result(t_mul(a.value(), b.value()), rec);
    if (rec) {
        auto an = a.node(), bn = b.node(), on = out.node();
        t_active->record([an, bn, on] {
            if (!on->grad_set) return;
            if (an->requires_grad)
                an->accumulate(t_reduce_to(t_mul(on->grad, bn->value), an->value.shape));
            if (bn->requires_grad)
                bn->accumulate(t_reduce_to(t_mul(on->grad, an->value), bn->value.shape));
        });
    }
    return out;
}

DiffTensor neg(const DiffTensor& a) { return scale(a, -1.0); }

DiffTensor scale(const DiffTensor& a, double c) {
    check_input("scale", a);
    bool rec = want_record({&a});
    DiffTensor out = make_result(t_scale(a.value(), c), rec);
    if (rec) {
        auto an = a.node();
        auto on = out.node();
        t_active->record([an, on, c] {
            if (on->grad_set && an->requires_grad) an->accumulate(t_scale(on->grad, c));
        });
    }
    return out;
}

DiffTensor add_scalar(const DiffTensor& a, double c) {
    check_input("add_scalar", a);
    bool rec = want_record({&a});
    DiffTensor out = make_result(t_add_scalar(a.value(), c), rec);
    if (rec) {
        auto an = a.node();
        auto on = out.node();
        t_active->record([an, on] {
            if (on->grad_set && an->requires_grad) an->accumulate(on->grad);
        });
    }
    return out;
}

// ---------------- linear algebra / shape ----------------

DiffTensor matmul(const DiffTensor& a, const DiffTensor& b) {
    check_input("matmul", a);
    check_input("matmul", b);
    bool rec = want_record({&a, &b});
    DiffTensor out = make_result(t_matmul(a.value(), b.value()), rec);
    if (rec) {
        auto an = a.node(), bn = b.node(), on = out.node();
        t_active->record([an, bn, on] {
            if (!on->grad_set) return;
            if (an->requires_grad) an->accumulate(t_matmul(on->grad, t_transpose(bn->value)));
            if (bn->requires_grad) bn->accumulate(t_matmul(t_transpose(an->value), on->grad));
        });
    }
    return out;
}

DiffTensor transpose(const DiffTensor& a) {
    check_input("transpose", a);
    bool rec = want_record({&a});
    DiffTensor out = make_result(t_transpose(a.value()), rec);
    if (rec) {
        auto an = a.node();
        auto on = out.node();
        t_active->record([an, on] {
            if (on->grad_set && an->requires_grad) an->accumulate(t_transpose(on->grad));
        });
    }
    return out;
}

DiffTensor reshape(const DiffTensor& a, std::vector<size_t> shape) {
    check_input("reshape", a);
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                    shape_str(shape));
    bool rec = want_record({&a});
    Tensor v(shape, a.value().data);
    DiffTensor out = make_result(std::move(v), rec);
    if (rec) {
        auto an = a.node();
        auto on = out.node();
        t_active->record([an, on] {
            if (!on->grad_set || !an->requires_grad) return;
            an->accumulate(Tensor(an->value.shape, on->grad.data));
        });
    }
    return out;
}

namespace {

struct AxisSplit {
    size_t outer, axis, inner;
};

AxisSplit split_at(const std::vector<size_t>& shape, size_t axis) {
    AxisSplit s{1, shape[axis], 1};
    for (size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    for (size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

}  // namespace

DiffTensor concat(const std::vector<DiffTensor>& parts, size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    for (auto& p : parts) check_input("concat", p);
    const auto& s0 = parts[0].shape();
    if (axis >= s0.size()) throw std::invalid_argument("concat: axis out of range");
    std::vector<size_t> out_shape = s0;
    size_t total = 0;
    for (auto& p : parts) {
        const auto& s = p.shape();
        if (s.size() != s0.size())
            throw std::invalid_argument("concat: rank mismatch " + shape_str(s0) + " vs " +
                                        shape_str(s));
        for (size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != s0[i])
                throw std::invalid_argument("concat: shape mismatch " + shape_str(s0) + " vs " +
                                            shape_str(s));
        total += s[axis];
    }
    out_shape[axis] = total;
    bool rec = false;
    if (t_active)
        for (auto& p : parts)
            if (p.requires_grad()) rec = true;

    Tensor v(out_shape);
    auto sp = split_at(out_shape, axis);
    size_t offset = 0;
    for (auto& p : parts) {
        size_t ext = p.shape()[axis];
        const auto& pd = p.value().data;
        for (size_t o = 0; o < sp.outer; ++o)
            std::copy(pd.begin() + o * ext * sp.inner, pd.begin() + (o + 1) * ext * sp.inner,
                      v.data.begin() + (o * sp.axis + offset) * sp.inner);
        offset += ext;
    }
    DiffTensor out = make_result(std::move(v), rec);
    if (rec) {
        std::vector<std::shared_ptr<Node>> nodes;
        for (auto& p : parts) nodes.push_back(p.node());
        auto on = out.node();
        t_active->record([nodes, on, sp, axis] {
            if (!on->grad_set) return;
            size_t offset = 0;
            for (auto& n : nodes) {
                size_t ext = n->value.shape[axis];
                if (n->requires_grad) {
                    Tensor g(n->value.shape);
                    for (size_t o = 0; o < sp.outer; ++o)
                        std::copy(on->grad.data.begin() + (o * sp.axis + offset) * sp.inner,
                                  on->grad.data.begin() + (o * sp.axis + offset + ext) * sp.inner,
                                  g.data.begin() + o * ext * sp.inner);
                    n->accumulate(g);
                }
                offset += ext;
            }
        });
    }
    return out;
}

DiffTensor slice(const DiffTensor& a, size_t axis, size_t start, size_t len) {
    check_input("slice", a);
    const auto& s = a.shape();
    if (axis >= s.size()) throw std::invalid_argument("slice: axis out of range");
    if (start + len > s[axis])
        throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " +
                                    std::to_string(start + len) + ") exceeds extent " +
                                    std::to_string(s[axis]) + " of " + shape_str(s));
    bool rec = want_record({&a});
    std::vector<size_t> out_shape = s;
    out_shape[axis] = len;
    auto sp = split_at(s, axis);
    Tensor v(out_shape);
    for (size_t o = 0; o < sp.outer; ++o)
        std::copy(a.value().data.begin() + (o * sp.axis + start) * sp.inner,
                  a.value().data.begin() + (o * sp.axis + start + len) * sp.inner,
                  v.data.begin() + o * len * sp.inner);
    DiffTensor out = make_result(std::move(v), rec);
    if (rec) {
        auto an = a.node();
        auto on = out.node();
        t_active->record([an, on, sp, start, len] {
            if (!on->grad_set || !an->requires_grad) return;
            Tensor g(an->value.shape, 0.0);
            for (size_t o = 0; o < sp.outer; ++o)
                std::copy(on->grad.data.begin() + o * len * sp.inner,
                          on->grad.data.begin() + (o + 1) * len * sp.inner,
                          g.data.begin() + (o * sp.axis + start) * sp.inner);
            an->accumulate(g);
        });
    }
    return out;
}

// ---------------- reductions ----------------

DiffTensor sum(const DiffTensor& a) {
    check_input("sum", a);
    bool rec = want_record({&a});
    DiffTensor out = make_result(Tensor::scalar(t_sum(a.value())), rec);
    if (rec) {
        auto an = a.node();
        auto on = out.node();
        t_active->record([an, on] {
            if (!on->grad_set || !an->requires_grad) return;
            an->accumulate(Tensor(an->value.shape, on->grad.data[0]));
        });
    }
    return out;
}

DiffTensor mean(const DiffTensor& a) {
    if (a.defined() && a.numel() == 0) throw std::invalid_argument("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

DiffTensor sum_axis(const DiffTensor& a, size_t axis) {
    check_input("sum_axis", a);
    const auto& s = a.shape();
    if (axis >= s.size()) throw std::invalid_argument("sum_axis: axis out of range");
    auto sp = split_at(s, axis);
    std::vector<size_t> out_shape;
    for (size_t i = 0; i < s.size(); ++i)
        if (i != axis) out_shape.push_back(s[i]);
    bool rec = want_record({&a});
    Tensor v(out_shape, 0.0);
    const auto& ad = a.value().data;
    for (size_t o = 0; o < sp.outer; ++o)
        for (size_t k = 0; k < sp.axis; ++k)
            for (size_t i = 0; i < sp.inner; ++i)
                v.data[o * sp.inner + i] += ad[(o * sp.axis + k) * sp.inner + i];
    DiffTensor out = make_result(std::move(v), rec);
    if (rec) {
        auto an = a.node();
        auto on = out.node();
        t_active->record([an, on, sp] {
            if (!on->grad_set || !an->requires_grad) return;
            Tensor g(an->value.shape);
            for (size_t o = 0; o < sp.outer; ++o)
                for (size_t k = 0; k < sp.axis; ++k)
                    for (size_t i = 0; i < sp.inner; ++i)
                        g.data[(o * sp.axis + k) * sp.inner + i] =
                            on->grad.data[o * sp.inner + i];
            an->accumulate(g);
        });
    }
    return out;
}

DiffTensor mean_axis(const DiffTensor& a, size_t axis) {
    const auto& s = a.shape();
    if (axis >= s.size()) throw std::invalid_argument("mean_axis: axis out of range");
    if (s[axis] == 0) throw std::invalid_argument("mean_axis: empty axis");
    return scale(sum_axis(a, axis), 1.0 / static_cast<double>(s[axis]));
}

// ---------------- elementwise nonlinear ----------------

namespace {

template <class FwdF, class BwdF>
DiffTensor unary_op(const char* name, const DiffTensor& a, FwdF fwd, BwdF bwd_factor) {
    check_input(name, a);
    bool rec = want_record({&a});
    Tensor v(a.shape());
    for (size_t i = 0; i < a.numel(); ++i) v.data[i] = fwd(a.value().data[i]);
    DiffTensor out = make_result(std::move(v), rec);
    if (rec) {
        auto an = a.node();
        auto on = out.node();
        t_active->record([an, on, bwd_factor] {
            if (!on->grad_set || !an->requires_grad) return;
            Tensor g(an->value.shape);
            for (size_t i = 0; i < g.numel(); ++i)
                g.data[i] = on->grad.data[i] * bwd_factor(an->value.data[i], on->value.data[i]);
            an->accumulate(g);
        });
    }
    return out;
}

}  // namespace

DiffTensor abs(const DiffTensor& a) {
    // subgradient 0 at the kink
    return unary_op(
        "abs", a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

DiffTensor exp(const DiffTensor& a) {
    return unary_op(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

DiffTensor log(const DiffTensor& a) {
    return unary_op(
        "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

DiffTensor sqrt(const DiffTensor& a) {
    return unary_op(
        "sqrt", a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return 0.5 / y; });
}

DiffTensor power(const DiffTensor& a, double p) {
    return unary_op(
        "power", a, [p](double x) { return std::pow(x, p); },
        [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

DiffTensor gelu(const DiffTensor& a) {
    return unary_op(
        "gelu", a, [](double x) { return x * norm_cdf(x); },
        [](double x, double) { return norm_cdf(x) + x * norm_pdf(x); });
}

// ---------------- row-wise (last axis) ----------------

namespace {

struct Rows {
    size_t n_rows, width;
};

Rows last_axis_rows(const char* op, const std::vector<size_t>& shape) {
    if (shape.empty()) throw std::invalid_argument(std::string(op) + ": scalar input");
    size_t width = shape.back();
    if (width == 0) throw std::invalid_argument(std::string(op) + ": empty last axis");
    return {shape_numel(shape) / width, width};
}

}  // namespace

DiffTensor softmax(const DiffTensor& a) {
    check_input("softmax", a);
    auto rw = last_axis_rows("softmax", a.shape());
    bool rec = want_record({&a});
    Tensor v(a.shape());
    const auto& ad = a.value().data;
    for (size_t r = 0; r < rw.n_rows; ++r) {
        const double* x = ad.data() + r * rw.width;
        double* y = v.data.data() + r * rw.width;
        double mx = x[0];
        for (size_t i = 1; i < rw.width; ++i) mx = std::max(mx, x[i]);
        double s = 0.0;
        for (size_t i = 0; i < rw.width; ++i) {
            y[i] = std::exp(x[i] - mx);
            s += y[i];
        }
        double inv = 1.0 / s;
        for (size_t i = 0; i < rw.width; ++i) y[i] *= inv;
    }
    DiffTensor out = make_result(std::move(v), rec);
    if (rec) {
        auto an = a.node();
        auto on = out.node();
        t_active->record([an, on, rw] {
            if (!on->grad_set || !an->requires_grad) return;
            Tensor g(an->value.shape);
            for (size_t r = 0; r < rw.n_rows; ++r) {
                const double* gy = on->grad.data.data() + r * rw.width;
                const double* y = on->value.data.data() + r * rw.width;
                double dot = 0.0;
                for (size_t i = 0; i < rw.width; ++i) dot += gy[i] * y[i];
                double* gx = g.data.data() + r * rw.width;
                for (size_t i = 0; i < rw.width; ++i) gx[i] = y[i] * (gy[i] - dot);
            }
            an->accumulate(g);
        });
    }
    return out;
}

DiffTensor log_softmax(const DiffTensor& a) {
    check_input("log_softmax", a);
    auto rw = last_axis_rows("log_softmax", a.shape());
    bool rec = want_record({&a});
    Tensor v(a.shape());
    const auto& ad = a.value().data;
    for (size_t r = 0; r < rw.n_rows; ++r) {
        const double* x = ad.data() + r * rw.width;
        double* y = v.data.data() + r * rw.width;
        double mx = x[0];
        for (size_t i = 1; i < rw.width; ++i) mx = std::max(mx, x[i]);
        double s = 0.0;
        for (size_t i = 0; i < rw.width; ++i) s += std::exp(x[i] - mx);
        double lse = mx + std::log(s);
        for (size_t i = 0; i < rw.width; ++i) y[i] = x[i] - lse;
    }
    DiffTensor out = make_result(std::move(v), rec);
    if (rec) {
        auto an = a.node();
        auto on = out.node();
        t_active->record([an, on, rw] {
            if (!on->grad_set || !an->requires_grad) return;
            Tensor g(an->value.shape);
            for (size_t r = 0; r < rw.n_rows; ++r) {
                const double* gy = on->grad.data.data() + r * rw.width;
                const double* y = on->value.data.data() + r * rw.width;
                double gsum = 0.0;
                for (size_t i = 0; i < rw.width; ++i) gsum += gy[i];
                double* gx = g.data.data() + r * rw.width;
                for (size_t i = 0; i < rw.width; ++i) gx[i] = gy[i] - std::exp(y[i]) * gsum;
            }
            an->accumulate(g);
        });
    }
    return out;
}

DiffTensor layer_norm(const DiffTensor& a, double eps) {
    check_input("layer_norm", a);
    auto rw = last_axis_rows("layer_norm", a.shape());
    bool rec = want_record({&a});
    Tensor v(a.shape());
    std::vector<double> inv_std(rw.n_rows);
    const auto& ad = a.value().data;
    for (size_t r = 0; r < rw.n_rows; ++r) {
        const double* x = ad.data() + r * rw.width;
        double* y = v.data.data() + r * rw.width;
        double mu = 0.0;
        for (size_t i = 0; i < rw.width; ++i) mu += x[i];
        mu /= static_cast<double>(rw.width);
        double var = 0.0;
        for (size_t i = 0; i < rw.width; ++i) var += (x[i] - mu) * (x[i] - mu);
        var /= static_cast<double>(rw.width);
        double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (size_t i = 0; i < rw.width; ++i) y[i] = (x[i] - mu) * is;
    }
    DiffTensor out = make_result(std::move(v), rec);
    if (rec) {
        auto an = a.node();
        auto on = out.node();
        t_active->record([an, on, rw, inv_std = std::move(inv_std)] {
            if (!on->grad_set || !an->requires_grad) return;
            Tensor g(an->value.shape);
            const double inv_w = 1.0 / static_cast<double>(rw.width);
            for (size_t r = 0; r < rw.n_rows; ++r) {
                const double* gy = on->grad.data.data() + r * rw.width;
                const double* y = on->value.data.data() + r * rw.width;
                double gmean = 0.0, gydot = 0.0;
                for (size_t i = 0; i < rw.width; ++i) {
                    gmean += gy[i];
                    gydot += gy[i] * y[i];
                }
                gmean *= inv_w;
                gydot *= inv_w;
                double* gx = g.data.data() + r * rw.width;
                for (size_t i = 0; i < rw.width; ++i)
                    gx[i] = inv_std[r] * (gy[i] - gmean - y[i] * gydot);
            }
            an->accumulate(g);
        });
    }
    return out;
}

// ---------------- convolution ----------------

DiffTensor conv1d(const DiffTensor& x, const DiffTensor& w, size_t stride, size_t pad) {
    check_input("conv1d", x);
    check_input("conv1d", w);
    if (x.shape().size() != 2 || w.shape().size() != 3)
        throw std::invalid_argument("conv1d: expected x [T x Cin], w [Cout x Cin x K], got " +
                                    shape_str(x.shape()) + " and " + shape_str(w.shape()));
    const size_t Tin = x.shape()[0], Cin = x.shape()[1];
    const size_t Cout = w.shape()[0], K = w.shape()[2];
    if (w.shape()[1] != Cin)
        throw std::invalid_argument("conv1d: channel mismatch " + shape_str(x.shape()) + " vs " +
                                    shape_str(w.shape()));
    if (stride == 0) throw std::invalid_argument("conv1d: stride must be >= 1");
    if (Tin + 2 * pad < K)
        throw std::invalid_argument("conv1d: input too short for kernel (" + std::to_string(Tin) +
                                    " + 2*" + std::to_string(pad) + " < " + std::to_string(K) + ")");
    const size_t Tout = (Tin + 2 * pad - K) / stride + 1;
    bool rec = want_record({&x, &w});
    Tensor v({Tout, Cout}, 0.0);
    const auto& xd = x.value().data;
    const auto& wd = w.value().data;
    for (size_t t = 0; t < Tout; ++t)
        for (size_t k = 0; k < K; ++k) {
            long ti = static_cast<long>(t * stride + k) - static_cast<long>(pad);
            if (ti < 0 || ti >= static_cast<long>(Tin)) continue;
            for (size_t co = 0; co < Cout; ++co) {
                double acc = 0.0;
                for (size_t ci = 0; ci < Cin; ++ci)
                    acc += xd[ti * Cin + ci] * wd[(co * Cin + ci) * K + k];
                v.data[t * Cout + co] += acc;
            }
        }
    DiffTensor out = make_result(std::move(v), rec);
    if (rec) {
        auto xn = x.node(), wn = w.node(), on = out.node();
        t_active->record([xn, wn, on, Tin, Cin, Cout, K, Tout, stride, pad] {
            if (!on->grad_set) return;
            const auto& gd = on->grad.data;
            if (xn->requires_grad) {
                Tensor gx({Tin, Cin}, 0.0);
                const auto& wd = wn->value.data;
                for (size_t t = 0; t < Tout; ++t)
                    for (size_t k = 0; k < K; ++k) {
                        long ti = static_cast<long>(t * stride + k) - static_cast<long>(pad);
                        if (ti < 0 || ti >= static_cast<long>(Tin)) continue;
                        for (size_t co = 0; co < Cout; ++co) {
                            double g = gd[t * Cout + co];
                            for (size_t ci = 0; ci < Cin; ++ci)
                                gx.data[ti * Cin + ci] += g * wd[(co * Cin + ci) * K + k];
                        }
                    }
                xn->accumulate(gx);
            }
            if (wn->requires_grad) {
                Tensor gw({Cout, Cin, K}, 0.0);
                const auto& xd = xn->value.data;
                for (size_t t = 0; t < Tout; ++t)
                    for (size_t k = 0; k < K; ++k) {
                        long ti = static_cast<long>(t * stride + k) - static_cast<long>(pad);
                        if (ti < 0 || ti >= static_cast<long>(Tin)) continue;
                        for (size_t co = 0; co < Cout; ++co) {
                            double g = gd[t * Cout + co];
                            for (size_t ci = 0; ci < Cin; ++ci)
                                gw.data[(co * Cin + ci) * K + k] += g * xd[ti * Cin + ci];
                        }
                    }
                wn->accumulate(gw);
            }
        });
    }
    return out;
}

// ---------------- lookup / selection ----------------

DiffTensor embedding_lookup(const DiffTensor& table, const std::vector<size_t>& idx) {
    check_input("embedding_lookup", table);
    if (table.shape().size() != 2)
        throw std::invalid_argument("embedding_lookup: table must be 2-D, got " +
                                    shape_str(table.shape()));
    const size_t V = table.shape()[0], D = table.shape()[1];
    for (size_t i : idx)
        if (i >= V)
            throw std::invalid_argument("embedding_lookup: index " + std::to_string(i) +
                                        " out of range [0, " + std::to_string(V) + ")");
    bool rec = want_record({&table});
    Tensor v({idx.size(), D});
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy(table.value().data.begin() + idx[r] * D,
                  table.value().data.begin() + (idx[r] + 1) * D, v.data.begin() + r * D);
    DiffTensor out = make_result(std::move(v), rec);
    if (rec) {
        auto tn = table.node();
        auto on = out.node();
        t_active->record([tn, on, idx, D] {
            if (!on->grad_set || !tn->requires_grad) return;
            Tensor g(tn->value.shape, 0.0);
            for (size_t r = 0; r < idx.size(); ++r)
                for (size_t j = 0; j < D; ++j)
                    g.data[idx[r] * D + j] += on->grad.data[r * D + j];
            tn->accumulate(g);
        });
    }
    return out;
}

std::vector<size_t> topk_indices(const std::vector<double>& v, size_t k) {
    k = std::min(k, v.size());
    std::vector<size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](size_t a, size_t b) {
        if (v[a] != v[b]) return v[a] > v[b];
        return a < b;  // ties -> lowest index
    });
    idx.resize(k);
    return idx;
}

namespace {

// Projection shared by the forward and backward passes of the band filter.
Tensor apply_band_mask(const Tensor& x, const std::vector<std::vector<char>>& keep) {
    Tensor re, im;
    rfft_cols(x, re, im);
    const size_t F = re.shape[0], d = re.shape[1];
    for (size_t j = 0; j < d; ++j)
        for (size_t f = 0; f < F; ++f)
            if (!keep[j][f]) {
                re.at(f, j) = 0.0;
                im.at(f, j) = 0.0;
            }
    return irfft_cols(re, im, x.shape[0]);
}

}  // namespace

DiffTensor fourier_topk_filter(const DiffTensor& x, size_t k_keep) {
    check_input("fourier_topk_filter", x);
    if (x.shape().size() != 2)
        throw std::invalid_argument("fourier_topk_filter: expected [T x d], got " +
                                    shape_str(x.shape()));
    const size_t T = x.shape()[0], d = x.shape()[1];
    if (k_keep < 1 || k_keep > T / 2)
        throw std::invalid_argument("fourier_topk_filter: k=" + std::to_string(k_keep) +
                                    " out of range [1, " + std::to_string(T / 2) +
                                    "] for window length " + std::to_string(T));
    bool rec = want_record({&x});
    Tensor re, im;
    rfft_cols(x.value(), re, im);
    const size_t F = re.shape[0];
    std::vector<std::vector<char>> keep(d, std::vector<char>(F, 0));
    std::vector<double> mags(F > 1 ? F - 1 : 0);
    for (size_t j = 0; j < d; ++j) {
        keep[j][0] = 1;  // DC always kept
        for (size_t f = 1; f < F; ++f)
            mags[f - 1] = std::hypot(re.at(f, j), im.at(f, j));
        for (size_t r : topk_indices(mags, k_keep)) keep[j][r + 1] = 1;
    }
    for (size_t j = 0; j < d; ++j)
        for (size_t f = 0; f < F; ++f)
            if (!keep[j][f]) {
                re.at(f, j) = 0.0;
                im.at(f, j) = 0.0;
            }
    DiffTensor out = make_result(irfft_cols(re, im, T), rec);
    if (rec) {
        auto xn = x.node();
        auto on = out.node();
        t_active->record([xn, on, keep = std::move(keep)] {
            if (!on->grad_set || !xn->requires_grad) return;
            // selection is straight-through: backward applies the same
            // orthogonal projection to the upstream gradient
            xn->accumulate(apply_band_mask(on->grad, keep));
        });
    }
    return out;
}

// ---------------- gradient checking ----------------

double grad_check(const std::function<DiffTensor(const DiffTensor&)>& f, const Tensor& x,
                  double eps) {
    if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");
    Tensor analytic(x.shape, 0.0);
    {
        GradTape tape;
        TapeScope scope(tape);
        DiffTensor leaf = make_leaf(x, true);
        DiffTensor y = f(leaf);
        if (y.numel() != 1)
            throw std::invalid_argument("grad_check: f must be scalar-valued, got " +
                                        shape_str(y.shape()));
        if (tape.size() > 0) {
            tape.backward(y);
            if (leaf.has_grad()) analytic = leaf.grad();
        }
    }
    NoTapeScope no_tape;
    auto eval = [&](const Tensor& at) {
        DiffTensor y = f(make_leaf(at, false));
        double v = y.value().data[0];
        if (!std::isfinite(v))
            throw std::runtime_error("grad_check: f non-finite at perturbed point");
        return v;
    };
    double worst = 0.0;
    Tensor probe = x;
    for (size_t i = 0; i < x.numel(); ++i) {
        const double orig = probe.data[i];
        probe.data[i] = orig + eps;
        double fp = eval(probe);
        probe.data[i] = orig - eps;
        double fm = eval(probe);
        probe.data[i] = orig;
        double numeric = (fp - fm) / (2.0 * eps);
        double a = analytic.data[i];
        double err = std::fabs(a - numeric) / std::max(1.0, std::fabs(a));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace decode
