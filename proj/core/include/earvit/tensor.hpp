#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace earvit {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct Node;
}

// Dense row-major float64 tensor with optional reverse-mode gradient tracking.
//
// A Tensor is a cheap handle; copies share the same storage and graph node.
// Values are immutable once produced by an operation. Only leaf tensors
// (parameters) are written in place, by the optimizer and by finite-difference
// probes. Gradients accumulate (+=) until zero_grad() so that tensors used
// more than once in a graph receive the sum of their adjoints.
class Tensor {
   public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    // Write access for leaf tensors only; throws on op results.
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t row, std::size_t col) const;

    bool requires_grad() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    // Reverse-mode sweep from this scalar. Every reachable tensor with
    // requires_grad receives its accumulated adjoint; the recorded graph is
    // consumed afterwards and cannot be replayed.
    void backward();

    // Deep copy of the values as a fresh leaf.
    Tensor detach_copy(bool requires_grad = false) const;

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

   private:
    std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

bool grad_enabled();

// ---- linear algebra ------------------------------------------------------

// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m x k] * [n x k]^T -> [m x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- elementwise ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// x [r x c] + bias [c], bias broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// Exact GELU, x * Phi(x).
Tensor gelu(const Tensor& a);

// ---- reductions and normalizations --------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor softmax(const Tensor& a, int axis);
// Normalizes each row of a 2-D tensor over its last axis, then applies the
// gamma/beta affine.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
// Divides each row by its L2 norm. A zero row raises NumericError.
Tensor l2_normalize_rows(const Tensor& x);
// Mean over rows of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// ---- structural ----------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);
Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
// Stacks `times` copies of a along axis 0.
Tensor tile_rows(const Tensor& a, std::size_t times);

// ---- gradient checking ---------------------------------------------------

// Compares the autodiff gradient of a scalar function against central
// differences (f(p+eps) - f(p-eps)) / (2 eps) for every element of every
// parameter. Returns the largest relative error, using
// max(|analytic|, |numeric|, 1e-8) as denominator. Parameters are restored.
double finite_diff_check(const std::function<Tensor()>& f, std::span<Tensor> params, double eps);

}  // namespace earvit
