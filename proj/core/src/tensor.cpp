#include "earvit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "earvit/error.hpp"

namespace earvit {

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    bool leaf = true;
    bool consumed = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::span<double> ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
        return grad;
    }
};

}  // namespace detail

using detail::Node;

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    for (std::size_t extent : shape) {
        if (extent == 0) throw ShapeError("zero extent in shape " + shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return node;
}

// Wraps an op result. The graph edge is recorded only when recording is on
// and at least one input needs a gradient.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<std::shared_ptr<Node>> parents,
                   std::function<void(Node&)> backward_fn) {
    auto node = make_leaf(std::move(shape), std::move(data), false);
    node->op = op;
    node->leaf = false;
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) needs = needs || p->requires_grad;
    }
    if (needs) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

void require_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void require_matrix(const Tensor& t, const char* op) {
    require_defined(t, op);
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require_defined(a, op);
    require_defined(b, op);
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

// Register-blocked kernel: C[m x n] += A * B where A(i, p) = a[i * a_rs + p * a_cs]
// and B(p, j) = b[p * ldb + j]. Each C element accumulates over p in order,
// so results are reproducible run to run.
constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 8;

void gemm_kernel(const double* a, std::size_t a_rs, std::size_t a_cs, const double* b, std::size_t ldb, double* c,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i0 = 0; i0 < m; i0 += kMr) {
        const std::size_t mr = std::min(kMr, m - i0);
        for (std::size_t j0 = 0; j0 < n; j0 += kNr) {
            const std::size_t nr = std::min(kNr, n - j0);
            double acc[kMr][kNr] = {};
            if (mr == kMr && nr == kNr) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double* brow = b + p * ldb + j0;
                    for (std::size_t r = 0; r < kMr; ++r) {
                        const double av = a[(i0 + r) * a_rs + p * a_cs];
                        for (std::size_t q = 0; q < kNr; ++q) acc[r][q] += av * brow[q];
                    }
                }
            } else {
                for (std::size_t p = 0; p < k; ++p) {
                    const double* brow = b + p * ldb + j0;
                    for (std::size_t r = 0; r < mr; ++r) {
                        const double av = a[(i0 + r) * a_rs + p * a_cs];
                        for (std::size_t q = 0; q < nr; ++q) acc[r][q] += av * brow[q];
                    }
                }
            }
            for (std::size_t r = 0; r < mr; ++r) {
                double* crow = c + (i0 + r) * n + j0;
                for (std::size_t q = 0; q < nr; ++q) crow[q] += acc[r][q];
            }
        }
    }
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    gemm_kernel(a, k, 1, b, n, c, m, k, n);
}

// C[m x n] += A[r x m]^T * B[r x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t r, std::size_t m, std::size_t n) {
    gemm_kernel(a, 1, m, b, n, c, m, r, n);
}

std::vector<double> transposed(const double* a, std::size_t rows, std::size_t cols) {
    std::vector<double> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
    }
    return out;
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
    const std::vector<double> bt = transposed(b, n, k);
    gemm_nn(a, bt.data(), c, m, k, n);
}

}  // namespace

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

// ---- Tensor --------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(make_leaf(std::move(shape), std::move(data), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor(Shape{}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
    require_defined(*this, "shape");
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
    }
    return node_->shape[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
    require_defined(*this, "data");
    return node_->data;
}

std::span<double> Tensor::mutable_data() {
    require_defined(*this, "mutable_data");
    if (!node_->leaf) throw ContractError("mutable_data: only leaf tensors may be written in place");
    return node_->data;
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item: tensor is not scalar, shape " + shape_str(shape()));
    return node_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
    require_matrix(*this, "at");
    if (row >= dim(0) || col >= dim(1)) throw ShapeError("at: index out of range");
    return node_->data[row * dim(1) + col];
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    require_defined(*this, "grad");
    return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
    require_defined(*this, "mutable_grad");
    return node_->ensure_grad();
}

void Tensor::zero_grad() {
    require_defined(*this, "zero_grad");
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach_copy(bool requires_grad) const {
    return Tensor(shape(), std::vector<double>(data().begin(), data().end()), requires_grad);
}

void Tensor::backward() {
    require_defined(*this, "backward");
    if (numel() != 1) {
        throw ShapeError("backward: loss must be scalar, got shape " + shape_str(shape()));
    }
    if (node_->consumed) throw ContractError("backward: graph was already consumed");
    if (!node_->requires_grad) return;

    // Post-order DFS yields a topological order (inputs before consumers).
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
    for (Node* n : order) {
        if (!n->leaf) {
            n->backward_fn = nullptr;
            n->parents.clear();
            n->consumed = true;
        }
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// ---- linear algebra ------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_result("matmul", {m, n}, std::move(out), {a.node_ptr(), b.node_ptr()},
                       [m, k, n](Node& self) {
                           Node& pa = *self.parents[0];
                           Node& pb = *self.parents[1];
                           if (pa.requires_grad)
                               gemm_nt(self.grad.data(), pb.data.data(), pa.ensure_grad().data(), m, n, k);
                           if (pb.requires_grad)
                               gemm_tn(pa.data.data(), self.grad.data(), pb.ensure_grad().data(), m, k, n);
                       });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_nt");
    require_matrix(b, "matmul_nt");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) {
        throw ShapeError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
    }
    std::vector<double> out(m * n, 0.0);
    gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
    return make_result("matmul_nt", {m, n}, std::move(out), {a.node_ptr(), b.node_ptr()},
                       [m, k, n](Node& self) {
                           Node& pa = *self.parents[0];
                           Node& pb = *self.parents[1];
                           if (pa.requires_grad)
                               gemm_nn(self.grad.data(), pb.data.data(), pa.ensure_grad().data(), m, n, k);
                           if (pb.requires_grad)
                               gemm_tn(self.grad.data(), pa.data.data(), pb.ensure_grad().data(), m, n, k);
                       });
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    const std::size_t r = a.dim(0), c = a.dim(1);
    return make_result("transpose", {c, r}, transposed(a.data().data(), r, c), {a.node_ptr()},
                       [r, c](Node& self) {
                           auto g = self.parents[0]->ensure_grad();
                           for (std::size_t i = 0; i < r; ++i)
                               for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
                       });
}

// ---- elementwise ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_result("add", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](Node& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            auto g = p->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return make_result("sub", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](Node& self) {
        const double sign[2] = {1.0, -1.0};
        for (int k = 0; k < 2; ++k) {
            auto& p = self.parents[k];
            if (!p->requires_grad) continue;
            auto g = p->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return make_result("mul", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        // Read both inputs before writing, in case a and b are the same node.
        std::vector<double> ga(self.grad.size()), gb(self.grad.size());
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] = self.grad[i] * pb.data[i];
            gb[i] = self.grad[i] * pa.data[i];
        }
        if (pa.requires_grad) {
            auto g = pa.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += ga[i];
        }
        if (pb.requires_grad) {
            auto g = pb.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gb[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    require_defined(a, "scale");
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) v *= factor;
    return make_result("scale", a.shape(), std::move(out), {a.node_ptr()}, [factor](Node& self) {
        auto g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_matrix(x, "add_bias");
    require_defined(bias, "add_bias");
    const std::size_t r = x.dim(0), c = x.dim(1);
    if (bias.numel() != c) {
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match columns of " +
                         shape_str(x.shape()));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    const auto b = bias.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b[j];
    return make_result("add_bias", x.shape(), std::move(out), {x.node_ptr(), bias.node_ptr()},
                       [r, c](Node& self) {
                           Node& px = *self.parents[0];
                           Node& pb = *self.parents[1];
                           if (px.requires_grad) {
                               auto g = px.ensure_grad();
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                           }
                           if (pb.requires_grad) {
                               auto g = pb.ensure_grad();
                               for (std::size_t i = 0; i < r; ++i)
                                   for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
                           }
                       });
}

Tensor gelu(const Tensor& a) {
    require_defined(a, "gelu");
    const auto x = a.data();
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
    }
    return make_result("gelu", a.shape(), std::move(out), {a.node_ptr()}, [](Node& self) {
        Node& p = *self.parents[0];
        auto g = p.ensure_grad();
        const double inv_sqrt_2pi = std::numbers::inv_sqrtpi / std::numbers::sqrt2;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = p.data[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            g[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

// ---- reductions and normalizations --------------------------------------

Tensor sum(const Tensor& a) {
    require_defined(a, "sum");
    double s = 0.0;
    for (double v : a.data()) s += v;
    return make_result("sum", Shape{}, {s}, {a.node_ptr()}, [](Node& self) {
        auto g = self.parents[0]->ensure_grad();
        for (double& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor softmax(const Tensor& a, int axis) {
    require_defined(a, "softmax");
    const int rank = static_cast<int>(a.rank());
    const int ax = axis < 0 ? axis + rank : axis;
    if (ax < 0 || ax >= rank) {
        throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(a.shape()));
    }
    std::size_t outer = 1, inner = 1;
    const std::size_t len = a.shape()[ax];
    for (int i = 0; i < ax; ++i) outer *= a.shape()[i];
    for (int i = ax + 1; i < rank; ++i) inner *= a.shape()[i];

    const auto x = a.data();
    std::vector<double> out(x.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mx = x[base];
            for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, x[base + l * inner]);
            double z = 0.0;
            for (std::size_t l = 0; l < len; ++l) {
                const double e = std::exp(x[base + l * inner] - mx);
                out[base + l * inner] = e;
                z += e;
            }
            for (std::size_t l = 0; l < len; ++l) out[base + l * inner] /= z;
        }
    }
    return make_result("softmax", a.shape(), std::move(out), {a.node_ptr()},
                       [outer, inner, len](Node& self) {
                           auto g = self.parents[0]->ensure_grad();
                           const auto& y = self.data;
                           for (std::size_t o = 0; o < outer; ++o) {
                               for (std::size_t in = 0; in < inner; ++in) {
                                   const std::size_t base = o * len * inner + in;
                                   double dot = 0.0;
                                   for (std::size_t l = 0; l < len; ++l)
                                       dot += self.grad[base + l * inner] * y[base + l * inner];
                                   for (std::size_t l = 0; l < len; ++l) {
                                       const std::size_t idx = base + l * inner;
                                       g[idx] += y[idx] * (self.grad[idx] - dot);
                                   }
                               }
                           }
                       });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_defined(x, "layer_norm");
    require_defined(gamma, "layer_norm");
    require_defined(beta, "layer_norm");
    if (!(eps > 0.0)) throw ParameterError("layer_norm: eps must be positive");
    if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
    const std::size_t cols = x.shape().back();
    const std::size_t rows = x.numel() / cols;
    if (gamma.numel() != cols || beta.numel() != cols) {
        throw ShapeError("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " do not match last axis of " + shape_str(x.shape()));
    }
    const auto in = x.data();
    const auto gm = gamma.data();
    const auto bt = beta.data();
    auto xhat = std::make_shared<std::vector<double>>(in.size());
    auto rstd = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(in.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * cols;
        double mu = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mu += row[c];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= static_cast<double>(cols);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t c = 0; c < cols; ++c) {
            const double h = (row[c] - mu) * rs;
            (*xhat)[r * cols + c] = h;
            out[r * cols + c] = h * gm[c] + bt[c];
        }
    }
    return make_result(
        "layer_norm", x.shape(), std::move(out), {x.node_ptr(), gamma.node_ptr(), beta.node_ptr()},
        [rows, cols, xhat, rstd](Node& self) {
            Node& px = *self.parents[0];
            Node& pg = *self.parents[1];
            Node& pb = *self.parents[2];
            const auto& dy = self.grad;
            if (pg.requires_grad) {
                auto g = pg.ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) g[c] += dy[r * cols + c] * (*xhat)[r * cols + c];
            }
            if (pb.requires_grad) {
                auto g = pb.ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) g[c] += dy[r * cols + c];
            }
            if (px.requires_grad) {
                auto g = px.ensure_grad();
                std::vector<double> dxhat(cols);
                for (std::size_t r = 0; r < rows; ++r) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) {
                        dxhat[c] = dy[r * cols + c] * pg.data[c];
                        m1 += dxhat[c];
                        m2 += dxhat[c] * (*xhat)[r * cols + c];
                    }
                    m1 /= static_cast<double>(cols);
                    m2 /= static_cast<double>(cols);
                    for (std::size_t c = 0; c < cols; ++c) {
                        g[r * cols + c] += (*rstd)[r] * (dxhat[c] - m1 - (*xhat)[r * cols + c] * m2);
                    }
                }
            }
        });
}

Tensor l2_normalize_rows(const Tensor& x) {
    require_matrix(x, "l2_normalize_rows");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    const auto in = x.data();
    auto norms = std::make_shared<std::vector<double>>(rows);
    std::vector<double> out(in.size());
    for (std::size_t r = 0; r < rows; ++r) {
        double ss = 0.0;
        for (std::size_t c = 0; c < cols; ++c) ss += in[r * cols + c] * in[r * cols + c];
        const double n = std::sqrt(ss);
        if (!(n > 0.0) || !std::isfinite(n)) {
            throw NumericError("l2_normalize_rows: row " + std::to_string(r) + " has degenerate norm");
        }
        (*norms)[r] = n;
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = in[r * cols + c] / n;
    }
    return make_result("l2_normalize_rows", x.shape(), std::move(out), {x.node_ptr()},
                       [rows, cols, norms](Node& self) {
                           auto g = self.parents[0]->ensure_grad();
                           const auto& y = self.data;
                           for (std::size_t r = 0; r < rows; ++r) {
                               double dot = 0.0;
                               for (std::size_t c = 0; c < cols; ++c) dot += y[r * cols + c] * self.grad[r * cols + c];
                               for (std::size_t c = 0; c < cols; ++c) {
                                   const std::size_t i = r * cols + c;
                                   g[i] += (self.grad[i] - y[i] * dot) / (*norms)[r];
                               }
                           }
                       });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
    require_matrix(logits, "cross_entropy");
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    if (labels.size() != rows) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         shape_str(logits.shape()));
    }
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= cols) {
            throw ContractError("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                                std::to_string(cols) + ")");
        }
    }
    const auto z = logits.data();
    auto probs = std::make_shared<std::vector<double>>(z.size());
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = z.data() + r * cols;
        const double mx = *std::max_element(row, row + cols);
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += std::exp(row[c] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t c = 0; c < cols; ++c) (*probs)[r * cols + c] = std::exp(row[c] - lse);
        total += lse - row[labels[r]];
    }
    std::vector<int> lab(labels.begin(), labels.end());
    return make_result("cross_entropy", Shape{}, {total / static_cast<double>(rows)}, {logits.node_ptr()},
                       [rows, cols, probs, lab = std::move(lab)](Node& self) {
                           auto g = self.parents[0]->ensure_grad();
                           const double w = self.grad[0] / static_cast<double>(rows);
                           for (std::size_t r = 0; r < rows; ++r) {
                               for (std::size_t c = 0; c < cols; ++c) {
                                   const double onehot = static_cast<int>(c) == lab[r] ? 1.0 : 0.0;
                                   g[r * cols + c] += w * ((*probs)[r * cols + c] - onehot);
                               }
                           }
                       });
}

// ---- structural ----------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
    require_defined(a, "reshape");
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    return make_result("reshape", std::move(shape), std::move(out), {a.node_ptr()}, [](Node& self) {
        auto g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
    require_matrix(a, "slice_rows");
    const std::size_t cols = a.dim(1);
    if (count == 0 || start + count > a.dim(0)) {
        throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_str(a.shape()));
    }
    const auto in = a.data();
    std::vector<double> out(in.begin() + start * cols, in.begin() + (start + count) * cols);
    return make_result("slice_rows", {count, cols}, std::move(out), {a.node_ptr()},
                       [start, cols](Node& self) {
                           auto g = self.parents[0]->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i) g[start * cols + i] += self.grad[i];
                       });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
    require_matrix(a, "slice_cols");
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    if (count == 0 || start + count > cols) {
        throw ShapeError("slice_cols: cols [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_str(a.shape()));
    }
    const auto in = a.data();
    std::vector<double> out(rows * count);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(in.begin() + r * cols + start, count, out.begin() + r * count);
    return make_result("slice_cols", {rows, count}, std::move(out), {a.node_ptr()},
                       [rows, cols, start, count](Node& self) {
                           auto g = self.parents[0]->ensure_grad();
                           for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < count; ++c)
                                   g[r * cols + start + c] += self.grad[r * count + c];
                       });
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    require_matrix(parts[0], "concat_rows");
    const std::size_t cols = parts[0].dim(1);
    std::size_t rows = 0;
    std::vector<std::shared_ptr<Node>> parents;
    for (const Tensor& p : parts) {
        require_matrix(p, "concat_rows");
        if (p.dim(1) != cols) {
            throw ShapeError("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
        }
        rows += p.dim(0);
        parents.push_back(p.node_ptr());
    }
    std::vector<double> out;
    out.reserve(rows * cols);
    for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return make_result("concat_rows", {rows, cols}, std::move(out), std::move(parents), [](Node& self) {
        std::size_t offset = 0;
        for (auto& p : self.parents) {
            const std::size_t n = p->data.size();
            if (p->requires_grad) {
                auto g = p->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
            }
            offset += n;
        }
    });
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    require_matrix(parts[0], "concat_cols");
    const std::size_t rows = parts[0].dim(0);
    std::size_t cols = 0;
    std::vector<std::shared_ptr<Node>> parents;
    for (const Tensor& p : parts) {
        require_matrix(p, "concat_cols");
        if (p.dim(0) != rows) {
            throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(p.shape()));
        }
        cols += p.dim(1);
        parents.push_back(p.node_ptr());
    }
    std::vector<double> out(rows * cols);
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
        const std::size_t pc = p.dim(1);
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(p.data().begin() + r * pc, pc, out.begin() + r * cols + offset);
        offset += pc;
    }
    return make_result("concat_cols", {rows, cols}, std::move(out), std::move(parents),
                       [rows, cols](Node& self) {
                           std::size_t offset = 0;
                           for (auto& p : self.parents) {
                               const std::size_t pc = p->shape[1];
                               if (p->requires_grad) {
                                   auto g = p->ensure_grad();
                                   for (std::size_t r = 0; r < rows; ++r)
                                       for (std::size_t c = 0; c < pc; ++c)
                                           g[r * pc + c] += self.grad[r * cols + offset + c];
                               }
                               offset += pc;
                           }
                       });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
    require_matrix(a, "gather_rows");
    if (rows.empty()) throw ShapeError("gather_rows: empty index list");
    const std::size_t cols = a.dim(1);
    std::vector<double> out(rows.size() * cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= a.dim(0)) {
            throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                             shape_str(a.shape()));
        }
        std::copy_n(a.data().begin() + rows[i] * cols, cols, out.begin() + i * cols);
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return make_result("gather_rows", {rows.size(), cols}, std::move(out), {a.node_ptr()},
                       [cols, idx = std::move(idx)](Node& self) {
                           auto g = self.parents[0]->ensure_grad();
                           for (std::size_t i = 0; i < idx.size(); ++i)
                               for (std::size_t c = 0; c < cols; ++c) g[idx[i] * cols + c] += self.grad[i * cols + c];
                       });
}

Tensor tile_rows(const Tensor& a, std::size_t times) {
    require_matrix(a, "tile_rows");
    if (times == 0) throw ShapeError("tile_rows: zero repetitions");
    const std::size_t n = a.numel();
    std::vector<double> out;
    out.reserve(n * times);
    for (std::size_t t = 0; t < times; ++t) out.insert(out.end(), a.data().begin(), a.data().end());
    return make_result("tile_rows", {a.dim(0) * times, a.dim(1)}, std::move(out), {a.node_ptr()},
                       [n, times](Node& self) {
                           auto g = self.parents[0]->ensure_grad();
                           for (std::size_t t = 0; t < times; ++t)
                               for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[t * n + i];
                       });
}

// ---- gradient checking ---------------------------------------------------

double finite_diff_check(const std::function<Tensor()>& f, std::span<Tensor> params, double eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) {
        throw ParameterError("finite_diff_check: eps must lie in [1e-7, 1e-3]");
    }
    for (Tensor& p : params) {
        if (p.has_grad()) p.zero_grad();
    }
    Tensor loss = f();
    if (loss.numel() != 1) {
        throw ShapeError("finite_diff_check: function must return a scalar, got " + shape_str(loss.shape()));
    }
    loss.backward();

    std::vector<std::vector<double>> analytic;
    for (Tensor& p : params) {
        if (p.has_grad()) {
            analytic.emplace_back(p.grad().begin(), p.grad().end());
        } else {
            analytic.emplace_back(p.numel(), 0.0);
        }
    }

    NoGradGuard no_grad;
    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto values = params[k].mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double original = values[i];
            values[i] = original + eps;
            const double plus = f().item();
            values[i] = original - eps;
            const double minus = f().item();
            values[i] = original;
            const double numeric = (plus - minus) / (2.0 * eps);
            const double a = analytic[k][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace earvit
