// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "harmoclip/autograd.hpp"
#include "support/checks.hpp"

using namespace harmoclip;
using namespace harmoclip::testing;

namespace {

// Reduce a node to a scalar via a fixed random projection so every entry of
// the intermediate matters.
ad::NodePtr project_to_scalar(const ad::NodePtr& x, Rng& rng) {
    Mat left = random_matrix(rng, 1, x->rows());
    Mat right = random_matrix(rng, x->cols(), 1);
    return ad::matmul(ad::matmul(ad::constant(left), x), ad::constant(right));
}

// FD-check d(scalar(op(x)))/dx for a unary graph builder.
void check_unary(const std::function<ad::NodePtr(const ad::NodePtr&)>& op, Eigen::Index rows,
                 Eigen::Index cols, uint64_t seed, double tol = 1e-6) {
    Rng rng(seed);
    const Mat x0 = random_matrix(rng, rows, cols);
    Rng proj_rng(seed + 1);
    Mat left, right;
    {
        auto probe = op(ad::constant(x0));
        left = random_matrix(proj_rng, 1, probe->rows());
        right = random_matrix(proj_rng, probe->cols(), 1);
    }
    auto scalar_of = [&](const Mat& x) {
        auto out = op(ad::constant(x));
        return (left * out->value * right)(0, 0);
    };

    auto leaf = ad::leaf(x0);
    auto out = ad::matmul(ad::matmul(ad::constant(left), op(leaf)), ad::constant(right));
    ad::backward(out);

    const Mat fd = finite_difference_grad(scalar_of, x0);
    CHECK(max_rel_error(leaf->grad, fd, 1e-6) < tol);
}

}  // namespace

TEST_CASE("autograd: elementwise and matmul gradients match finite differences") {
    check_unary([](const ad::NodePtr& x) { return ad::gelu(x); }, 4, 5, 11);
    check_unary([](const ad::NodePtr& x) { return ad::softmax_rows(x); }, 4, 6, 12);
    check_unary([](const ad::NodePtr& x) { return ad::scale(x, -2.5); }, 3, 3, 13);
    check_unary([](const ad::NodePtr& x) { return ad::hadamard(x, x); }, 3, 4, 14);

    Rng rng(16);
    const Mat other = random_matrix(rng, 6, 5);
    check_unary(
        [&other](const ad::NodePtr& x) { return ad::matmul_nt(x, ad::constant(other)); }, 4,
        5, 15);
    const Mat right = random_matrix(rng, 5, 4);
    check_unary(
        [&right](const ad::NodePtr& x) { return ad::matmul(x, ad::constant(right)); }, 3, 5,
        17);
    const Mat bias = random_matrix(rng, 1, 5);
    check_unary([&bias](const ad::NodePtr& x) { return ad::add_row(x, ad::constant(bias)); },
                4, 5, 18);
}

TEST_CASE("autograd: layer_norm gradients (input, gain, bias)") {
    Rng rng(21);
    const Mat x0 = random_matrix(rng, 5, 8);
    const Mat g0 = random_matrix(rng, 1, 8, 0.5);
    const Mat b0 = random_matrix(rng, 1, 8, 0.5);
    Mat left = random_matrix(rng, 1, 5);
    Mat right = random_matrix(rng, 8, 1);

    auto scalar_of = [&](const Mat& x, const Mat& g, const Mat& b) {
        auto out = ad::layer_norm(ad::constant(x), ad::constant(g), ad::constant(b));
        return (left * out->value * right)(0, 0);
    };

    auto xn = ad::leaf(x0);
    auto gn = ad::leaf(g0);
    auto bn = ad::leaf(b0);
    auto out = ad::matmul(ad::matmul(ad::constant(left), ad::layer_norm(xn, gn, bn)),
                          ad::constant(right));
    ad::backward(out);

    const Mat fd_x = finite_difference_grad(
        [&](const Mat& x) { return scalar_of(x, g0, b0); }, x0);
    const Mat fd_g = finite_difference_grad(
        [&](const Mat& g) { return scalar_of(x0, g, b0); }, g0);
    const Mat fd_b = finite_difference_grad(
        [&](const Mat& b) { return scalar_of(x0, g0, b); }, b0);

    CHECK(max_rel_error(xn->grad, fd_x, 1e-6) < 1e-6);
    CHECK(max_rel_error(gn->grad, fd_g, 1e-6) < 1e-6);
    CHECK(max_rel_error(bn->grad, fd_b, 1e-6) < 1e-6);
}

TEST_CASE("autograd: slicing, concat, gather, weighted sums route gradients") {
    Rng rng(31);
    check_unary(
        [](const ad::NodePtr& x) {
            return ad::concat_rows({ad::slice_rows(x, 1, 2), ad::slice_rows(x, 0, 1)});
        },
        4, 3, 32);
    check_unary(
        [](const ad::NodePtr& x) {
            return ad::concat_cols({ad::slice_cols(x, 2, 2), ad::slice_cols(x, 0, 1)});
        },
        3, 4, 33);
    check_unary(
        [](const ad::NodePtr& x) { return ad::gather_rows(x, {2, 0, 2, 1}); }, 4, 3, 34);
    Vec w = random_matrix(rng, 5, 1).col(0);
    check_unary([w](const ad::NodePtr& x) { return ad::weighted_row_sum(x, w); }, 5, 3, 35);
}

TEST_CASE("autograd: gradient accumulates over shared subexpressions") {
    // f(x) = sum(x*x) computed via two paths sharing x
    auto x = ad::leaf(Mat::Constant(1, 1, 3.0));
    auto y = ad::hadamard(x, x);     // x^2
    auto z = ad::add(y, y);          // 2 x^2
    ad::backward(z);
    CHECK(x->grad(0, 0) == doctest::Approx(12.0));  // d/dx 2x^2 = 4x
}

TEST_CASE("autograd: constants collect no gradient and track no parents") {
    auto c = ad::constant(Mat::Ones(2, 2));
    auto x = ad::leaf(Mat::Ones(2, 2));
    auto out = ad::hadamard(c, x);
    CHECK(out->requires_grad);
    auto frozen = ad::hadamard(c, ad::constant(Mat::Ones(2, 2)));
    CHECK_FALSE(frozen->requires_grad);
    CHECK(frozen->parents.empty());
}

TEST_CASE("autograd: backward requires a scalar root") {
    auto x = ad::leaf(Mat::Ones(2, 2));
    CHECK_THROWS_AS(ad::backward(x), InputError);
}
