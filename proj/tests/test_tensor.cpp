#include <algorithm>
#include <array>
#include <functional>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "earvit/error.hpp"
#include "earvit/tensor.hpp"
#include "support.hpp"

using namespace earvit;
using earvit::testing::random_tensor;

namespace {

Tensor mat(std::size_t r, std::size_t c, std::vector<double> v, bool grad = false) {
    return Tensor({r, c}, std::move(v), grad);
}

// Central difference of a scalar function of one double.
double central(const std::function<double(double)>& f, double x, double h = 1e-5) {
    return (f(x + h) - f(x - h)) / (2 * h);
}

}  // namespace

TEST_CASE("matmul hand cases") {
    auto eye = mat(2, 2, {1, 0, 0, 1});
    auto a = mat(2, 2, {1, 2, 3, 4});
    auto c = matmul(eye, a);
    CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{1, 2, 3, 4});

    auto d = matmul(mat(1, 2, {1, 2}), mat(2, 1, {3, 4}));
    CHECK(d.shape() == Shape{1, 1});
    CHECK(d.data()[0] == 11.0);
}

TEST_CASE("matmul identity is exact on both sides") {
    Rng rng(3);
    std::vector<double> v(5 * 7);
    for (auto& x : v) x = static_cast<double>(static_cast<int>(rng.below(200)) - 100) / 8.0;
    auto a = mat(5, 7, v);
    std::vector<double> i5(25, 0.0), i7(49, 0.0);
    for (int k = 0; k < 5; ++k) i5[k * 5 + k] = 1.0;
    for (int k = 0; k < 7; ++k) i7[k * 7 + k] = 1.0;
    auto left = matmul(mat(5, 5, i5), a);
    auto right = matmul(a, mat(7, 7, i7));
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(left.data()[i] == v[i]);
        CHECK(right.data()[i] == v[i]);
    }
}

TEST_CASE("matmul agrees with a naive triple loop across blocking edges") {
    Rng rng(11);
    for (auto [m, k, n] : std::vector<std::array<std::size_t, 3>>{{1, 1, 1}, {3, 5, 7}, {4, 8, 8}, {9, 13, 17}, {33, 6, 40}}) {
        auto a = random_tensor({m, k}, rng);
        auto b = random_tensor({k, n}, rng);
        auto c = matmul(a, b);
        auto bt = transpose(b);
        auto c2 = matmul_nt(a, bt);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                double ref = 0.0;
                for (std::size_t p = 0; p < k; ++p) ref += a.at(i, p) * b.at(p, j);
                CHECK(c.at(i, j) == doctest::Approx(ref).epsilon(1e-12));
                CHECK(c2.at(i, j) == doctest::Approx(ref).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("matmul shape mismatch names both shapes") {
    auto a = Tensor::zeros({2, 3});
    auto b = Tensor::zeros({2, 3});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2x3] x [2x3]") != std::string::npos);
    }
    CHECK_THROWS_AS(matmul_nt(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), ShapeError);
}

TEST_CASE("matmul gradient of sum matches finite differences") {
    Rng rng(5);
    Tensor a = random_tensor({3, 3}, rng, 1.0, true);
    Tensor b = random_tensor({3, 3}, rng, 1.0, true);
    std::vector<Tensor> params{a, b};
    double err = finite_diff_check([&] { return sum(matmul(a, b)); }, params, 1e-5);
    CHECK(err < 1e-6);

    // dA = dC B^T with dC = ones, so dA[i][k] = sum_j B[k][j].
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < 3; ++k)
            CHECK(a.grad()[i * 3 + k] == doctest::Approx(b.at(k, 0) + b.at(k, 1) + b.at(k, 2)));
}

TEST_CASE("matmul_nt and transpose gradients") {
    Rng rng(6);
    Tensor a = random_tensor({4, 3}, rng, 1.0, true);
    Tensor b = random_tensor({5, 3}, rng, 1.0, true);
    Tensor w = random_tensor({4, 5}, rng);
    std::vector<Tensor> params{a, b};
    CHECK(finite_diff_check([&] { return sum(mul(matmul_nt(a, b), w)); }, params, 1e-5) < 1e-6);
    CHECK(finite_diff_check([&] { return sum(mul(transpose(matmul_nt(a, b)), transpose(w))); }, params, 1e-5) < 1e-6);
}

TEST_CASE("softmax basics") {
    auto s = softmax(Tensor({2}, {0.0, 0.0}), 0);
    CHECK(s.data()[0] == 0.5);
    CHECK(s.data()[1] == 0.5);

    auto big = softmax(Tensor({2}, {1000.0, 1000.0}), 0);
    CHECK(big.data()[0] == 0.5);
    CHECK(big.data()[1] == 0.5);

    CHECK_THROWS_AS(softmax(Tensor::zeros({2, 2}), 2), ShapeError);
    CHECK_THROWS_AS(softmax(Tensor::zeros({2, 2}), -3), ShapeError);
}

TEST_CASE("softmax rows sum to one and are shift invariant") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        auto x = random_tensor({4, 9}, rng, 5.0);
        auto shifted = add(x, Tensor::full({4, 9}, 123.456));
        auto a = softmax(x, 1);
        auto b = softmax(shifted, 1);
        for (std::size_t r = 0; r < 4; ++r) {
            double total = 0.0;
            for (std::size_t c = 0; c < 9; ++c) {
                CHECK(a.at(r, c) >= 0.0);
                total += a.at(r, c);
                CHECK(a.at(r, c) == doctest::Approx(b.at(r, c)).epsilon(1e-9));
            }
            CHECK(std::abs(total - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("softmax along axis 0 normalizes columns") {
    Rng rng(8);
    auto x = random_tensor({3, 4}, rng);
    auto s = softmax(x, 0);
    for (std::size_t c = 0; c < 4; ++c) {
        double total = 0.0;
        for (std::size_t r = 0; r < 3; ++r) total += s.at(r, c);
        CHECK(std::abs(total - 1.0) <= 1e-12);
    }
}

TEST_CASE("sum of softmax has zero gradient") {
    Rng rng(9);
    Tensor x = random_tensor({6}, rng, 1.0, true);
    sum(softmax(x, 0)).backward();
    for (double g : x.grad()) CHECK(std::abs(g) < 1e-15);
}

TEST_CASE("softmax gradient matches finite differences") {
    Rng rng(10);
    Tensor x = random_tensor({3, 5}, rng, 1.0, true);
    Tensor w = random_tensor({3, 5}, rng);
    std::vector<Tensor> params{x};
    CHECK(finite_diff_check([&] { return sum(mul(softmax(x, 1), w)); }, params, 1e-5) < 1e-4);
    CHECK(finite_diff_check([&] { return sum(mul(softmax(x, 0), w)); }, params, 1e-5) < 1e-4);
}

TEST_CASE("layer_norm") {
    auto ones = Tensor::full({3}, 1.0);
    auto zeros = Tensor::zeros({3});

    auto flat = layer_norm(mat(1, 3, {5, 5, 5}), ones, zeros, 1e-6);
    for (double v : flat.data()) CHECK(v == 0.0);

    auto y = layer_norm(mat(1, 3, {1, 2, 3}), ones, zeros, 1e-12);
    double m = (y.data()[0] + y.data()[1] + y.data()[2]) / 3.0;
    double var = 0.0;
    for (double v : y.data()) var += (v - m) * (v - m);
    var /= 3.0;
    CHECK(std::abs(m) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-9);

    CHECK_THROWS_AS(layer_norm(mat(1, 3, {1, 2, 3}), ones, zeros, 0.0), ParameterError);
    CHECK_THROWS_AS(layer_norm(mat(1, 3, {1, 2, 3}), ones, zeros, -1.0), ParameterError);
    CHECK_THROWS_AS(layer_norm(mat(1, 3, {1, 2, 3}), Tensor::full({4}, 1.0), zeros, 1e-6), ShapeError);
}

TEST_CASE("layer_norm affine and gradient") {
    Rng rng(12);
    Tensor x = random_tensor({2, 4}, rng, 1.0, true);
    Tensor g = random_tensor({4}, rng, 1.0, true);
    Tensor b = random_tensor({4}, rng, 1.0, true);
    Tensor w = random_tensor({2, 4}, rng);
    std::vector<Tensor> params{x, g, b};
    CHECK(finite_diff_check([&] { return sum(mul(layer_norm(x, g, b, 1e-6), w)); }, params, 1e-5) < 1e-5);
}

TEST_CASE("gelu values") {
    CHECK(gelu(Tensor::scalar(0.0)).item() == 0.0);
    CHECK(std::abs(gelu(Tensor::scalar(10.0)).item() - 10.0) < 1e-6);
    // x * Phi(x) with Phi from erfc, independent of the implementation's erf.
    for (double x : {-3.0, -1.0, 0.3, 2.5}) {
        double ref = x * 0.5 * std::erfc(-x / std::numbers::sqrt2);
        CHECK(gelu(Tensor::scalar(x)).item() == doctest::Approx(ref).epsilon(1e-14));
    }
}

TEST_CASE("gelu derivative matches finite differences at fixed points") {
    for (double x0 : {-2.0, -0.5, 0.5, 2.0}) {
        Tensor x = Tensor::scalar(x0, true);
        gelu(x).backward();
        double numeric = central([](double v) { return v * 0.5 * std::erfc(-v / std::numbers::sqrt2); }, x0);
        double a = x.grad()[0];
        CHECK(std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8}) < 1e-6);
    }
}

TEST_CASE("backward basics") {
    Tensor x = Tensor::scalar(3.0, true);
    mul(x, x).backward();
    CHECK(x.grad()[0] == 6.0);

    Tensor v = Tensor::full({2, 2}, 1.0, true);
    CHECK_THROWS_AS(scale(v, 2.0).backward(), ShapeError);
}

TEST_CASE("backward consumes the graph") {
    Tensor x = Tensor::scalar(2.0, true);
    Tensor y = mul(x, x);
    y.backward();
    CHECK_THROWS_AS(y.backward(), ContractError);
}

TEST_CASE("gradients accumulate across repeated uses") {
    Rng rng(13);
    Tensor x = random_tensor({3, 2}, rng, 1.0, true);
    Tensor w = random_tensor({3, 2}, rng);
    sum(mul(x, w)).backward();
    std::vector<double> single(x.grad().begin(), x.grad().end());

    for (int k : {2, 5}) {
        x.zero_grad();
        Tensor total = mul(x, w);
        for (int i = 1; i < k; ++i) total = add(total, mul(x, w));
        sum(total).backward();
        for (std::size_t i = 0; i < single.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(k * single[i]));
    }

    // Without zero_grad a second backward adds on top.
    x.zero_grad();
    sum(mul(x, w)).backward();
    sum(mul(x, w)).backward();
    for (std::size_t i = 0; i < single.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(2 * single[i]));
}

TEST_CASE("every reachable leaf receives a gradient") {
    Tensor a = Tensor::full({2, 2}, 1.0, true);
    Tensor b = Tensor::full({2, 2}, 2.0, true);
    Tensor unused = Tensor::full({2, 2}, 3.0, true);
    Tensor c = Tensor::full({2, 2}, 4.0);
    sum(add(mul(a, b), c)).backward();
    CHECK(a.has_grad());
    CHECK(b.has_grad());
    CHECK_FALSE(c.has_grad());
    CHECK_FALSE(unused.has_grad());
    CHECK(a.grad().size() == a.numel());
}

TEST_CASE("no-grad guard stops recording") {
    Tensor x = Tensor::scalar(2.0, true);
    Tensor y;
    {
        NoGradGuard guard;
        CHECK_FALSE(grad_enabled());
        y = mul(x, x);
    }
    CHECK(grad_enabled());
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("op results are read-only") {
    Tensor x = Tensor::full({2}, 1.0, true);
    Tensor y = scale(x, 2.0);
    CHECK_THROWS_AS(y.mutable_data(), ContractError);
    CHECK(x.mutable_data().size() == 2);
}

TEST_CASE("constructor validates data length") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
    CHECK_THROWS_AS(Tensor::zeros({2, 0}), ShapeError);
    CHECK(Tensor::scalar(1.0).shape().empty());
}

TEST_CASE("finite_diff_check contract") {
    Rng rng(14);
    Tensor p = random_tensor({4, 3}, rng, 1.0, true);
    std::vector<Tensor> params{p};
    CHECK(finite_diff_check([&] { return sum(mul(p, p)); }, params, 1e-5) < 1e-9);

    Tensor c = Tensor::full({3}, 1.0, true);
    std::vector<Tensor> cparams{c};
    CHECK(finite_diff_check([&] { return scale(sum(mul(c, Tensor::zeros({3}))), 1.0); }, cparams, 1e-5) == 0.0);

    CHECK_THROWS_AS(finite_diff_check([&] { return sum(p); }, params, 1e-2), ParameterError);
    CHECK_THROWS_AS(finite_diff_check([&] { return sum(p); }, params, 1e-9), ParameterError);
    CHECK_THROWS_AS(finite_diff_check([&] { return mul(p, p); }, params, 1e-5), ShapeError);

    // Values are restored after probing.
    auto before = std::vector<double>(p.data().begin(), p.data().end());
    finite_diff_check([&] { return sum(gelu(p)); }, params, 1e-4);
    CHECK(std::vector<double>(p.data().begin(), p.data().end()) == before);
}

TEST_CASE("elementwise and structural gradients") {
    Rng rng(15);
    Tensor a = random_tensor({4, 6}, rng, 1.0, true);
    Tensor b = random_tensor({4, 6}, rng, 1.0, true);
    Tensor bias = random_tensor({6}, rng, 1.0, true);
    Tensor w = random_tensor({4, 6}, rng);
    std::vector<Tensor> params{a, b, bias};

    auto probe = [&](const std::function<Tensor()>& f) { return finite_diff_check(f, params, 1e-5); };
    CHECK(probe([&] { return sum(mul(add(a, b), w)); }) < 1e-6);
    CHECK(probe([&] { return sum(mul(sub(a, b), w)); }) < 1e-6);
    CHECK(probe([&] { return sum(mul(mul(a, b), w)); }) < 1e-6);
    CHECK(probe([&] { return mean(mul(add_bias(a, bias), w)); }) < 1e-6);
    CHECK(probe([&] { return sum(mul(gelu(a), w)); }) < 1e-5);
    CHECK(probe([&] { return sum(mul(reshape(a, {6, 4}), reshape(w, {6, 4}))); }) < 1e-6);
    CHECK(probe([&] { return sum(mul(slice_rows(a, 1, 2), slice_rows(w, 0, 2))); }) < 1e-6);
    CHECK(probe([&] { return sum(mul(slice_cols(a, 2, 3), slice_cols(w, 0, 3))); }) < 1e-6);

    std::vector<Tensor> rows{a, b};
    CHECK(probe([&] { return sum(mul(concat_rows(rows), concat_rows(std::vector<Tensor>{w, w}))); }) < 1e-6);
    CHECK(probe([&] { return sum(mul(concat_cols(rows), concat_cols(std::vector<Tensor>{w, w}))); }) < 1e-6);

    std::vector<std::size_t> idx{3, 0, 3};
    CHECK(probe([&] { return sum(mul(gather_rows(a, idx), slice_rows(concat_rows(std::vector<Tensor>{w, w}), 0, 3))); }) <
          1e-6);
    CHECK(probe([&] { return sum(mul(tile_rows(reshape(bias, {1, 6}), 4), w)); }) < 1e-6);
    CHECK(probe([&] { return sum(mul(l2_normalize_rows(a), w)); }) < 1e-5);
}

TEST_CASE("l2_normalize_rows") {
    Rng rng(16);
    auto x = random_tensor({5, 7}, rng, 3.0);
    auto y = l2_normalize_rows(x);
    for (std::size_t r = 0; r < 5; ++r) {
        double n = 0.0;
        for (std::size_t c = 0; c < 7; ++c) n += y.at(r, c) * y.at(r, c);
        CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-12);
    }
    CHECK_THROWS_AS(l2_normalize_rows(Tensor::zeros({2, 3})), NumericError);
}

TEST_CASE("cross_entropy matches a direct log-sum-exp") {
    Rng rng(17);
    Tensor logits = random_tensor({3, 5}, rng, 2.0, true);
    std::vector<int> labels{4, 0, 2};
    double ref = 0.0;
    for (std::size_t r = 0; r < 3; ++r) {
        double z = 0.0;
        for (std::size_t c = 0; c < 5; ++c) z += std::exp(logits.at(r, c));
        ref += std::log(z) - logits.at(r, labels[r]);
    }
    ref /= 3.0;
    CHECK(cross_entropy(logits, labels).item() == doctest::Approx(ref).epsilon(1e-13));

    std::vector<Tensor> params{logits};
    CHECK(finite_diff_check([&] { return cross_entropy(logits, labels); }, params, 1e-5) < 1e-6);

    std::vector<int> bad{0, 5, 1};
    CHECK_THROWS_AS(cross_entropy(logits, bad), ContractError);
    std::vector<int> short_labels{0};
    CHECK_THROWS_AS(cross_entropy(logits, short_labels), ShapeError);
}

TEST_CASE("structural ops reject bad arguments") {
    auto a = Tensor::zeros({3, 4});
    CHECK_THROWS_AS(reshape(a, {5, 2}), ShapeError);
    CHECK_THROWS_AS(slice_rows(a, 2, 2), ShapeError);
    CHECK_THROWS_AS(slice_cols(a, 3, 2), ShapeError);
    std::vector<std::size_t> idx{3};
    CHECK_THROWS_AS(gather_rows(a, idx), ShapeError);
    CHECK_THROWS_AS(concat_rows(std::vector<Tensor>{a, Tensor::zeros({1, 3})}), ShapeError);
    CHECK_THROWS_AS(add_bias(a, Tensor::zeros({3})), ShapeError);
    CHECK_THROWS_AS(add(a, Tensor::zeros({4, 3})), ShapeError);
}
