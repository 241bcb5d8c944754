#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "decode/tensor.hpp"

namespace decode {

class GradTape;

namespace detail {
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_set = false;
    GradTape* tape = nullptr;  // tape the producing op was recorded on
    void accumulate(const Tensor& g);
};
}  // namespace detail

// Handle to a tensor participating in reverse-mode autodiff. Value-semantic
// copies share the underlying node.
class DiffTensor {
public:
    DiffTensor() = default;
    explicit DiffTensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    const std::vector<size_t>& shape() const { return node_->value.shape; }
    size_t numel() const { return node_->value.numel(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool has_grad() const { return node_ && node_->grad_set; }
    const Tensor& grad() const;

    std::shared_ptr<detail::Node> node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

// Ordered record of primitive operations. Confined to one thread; activated
// with a TapeScope. backward() may run once per tape (single-pass).
class GradTape {
public:
    GradTape() = default;
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    void backward(const DiffTensor& loss);
    void record(std::function<void()> fn) { records_.push_back(std::move(fn)); }
    size_t size() const { return records_.size(); }
    bool used() const { return used_; }
    void clear();

private:
    std::vector<std::function<void()>> records_;
    bool used_ = false;
};

// RAII activation of a tape on the current thread. Ops record onto the
// active tape whenever an input requires grad; with no active tape they
// evaluate without recording.
class TapeScope {
public:
    explicit TapeScope(GradTape& t);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;

private:
    GradTape* prev_;
};

GradTape* active_tape();

// Leaf tensors. requires_grad leaves are gradient targets for backward().
DiffTensor make_leaf(Tensor v, bool requires_grad = false);
inline DiffTensor constant(Tensor v) { return make_leaf(std::move(v), false); }

// When enabled, every primitive checks its inputs for NaN and throws.
void set_debug_nan_checks(bool on);
bool debug_nan_checks();

// ---------- primitives ----------

DiffTensor add(const DiffTensor& a, const DiffTensor& b);
DiffTensor sub(const DiffTensor& a, const DiffTensor& b);
DiffTensor mul(const DiffTensor& a, const DiffTensor& b);
DiffTensor neg(const DiffTensor& a);
DiffTensor scale(const DiffTensor& a, double c);
DiffTensor add_scalar(const DiffTensor& a, double c);

DiffTensor matmul(const DiffTensor& a, const DiffTensor& b);
DiffTensor transpose(const DiffTensor& a);
DiffTensor reshape(const DiffTensor& a, std::vector<size_t> shape);
DiffTensor concat(const std::vector<DiffTensor>& parts, size_t axis);
DiffTensor slice(const DiffTensor& a, size_t axis, size_t start, size_t len);

DiffTensor sum(const DiffTensor& a);
DiffTensor mean(const DiffTensor& a);
DiffTensor sum_axis(const DiffTensor& a, size_t axis);
DiffTensor mean_axis(const DiffTensor& a, size_t axis);

DiffTensor abs(const DiffTensor& a);
DiffTensor exp(const DiffTensor& a);
DiffTensor log(const DiffTensor& a);
DiffTensor sqrt(const DiffTensor& a);
DiffTensor power(const DiffTensor& a, double p);
DiffTensor gelu(const DiffTensor& a);

// over the last axis
DiffTensor softmax(const DiffTensor& a);
DiffTensor log_softmax(const DiffTensor& a);
DiffTensor layer_norm(const DiffTensor& a, double eps = 1e-5);

// x: [T x Cin], w: [Cout x Cin x K] -> [Tout x Cout]
DiffTensor conv1d(const DiffTensor& x, const DiffTensor& w, size_t stride, size_t pad);

// table: [V x D], rows gathered by index -> [n x D]
DiffTensor embedding_lookup(const DiffTensor& table, const std::vector<size_t>& idx);

// Per-channel band selection: real-FFT over time, keep the k largest-
// magnitude non-DC bins (DC always kept), zero the rest, inverse FFT.
// The bin selection is frozen for the backward pass (straight-through);
// the surviving path is the linear projection itself.
DiffTensor fourier_topk_filter(const DiffTensor& x, size_t k_keep);

// Indices of the k largest values, ties broken by lowest index.
std::vector<size_t> topk_indices(const std::vector<double>& v, size_t k);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const std::function<DiffTensor(const DiffTensor&)>& f, const Tensor& x,
                  double eps);

}  // namespace decode
