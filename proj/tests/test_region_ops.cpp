// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "harmoclip/region_ops.hpp"
#include "support/checks.hpp"

using namespace harmoclip;
using namespace harmoclip::testing;

namespace {

// Brute-force oracle: bilinearly sample a dense sub-pixel lattice inside the
// box (feature coordinates, same half-pixel shift) and average. Independent of
// the production bin/sample geometry.
Vec dense_sampling_oracle(const DenseFeatureMap& map, const Bbox& box, int lattice = 256) {
    const double x0 = box.x_min / map.stride - 0.5;
    const double y0 = box.y_min / map.stride - 0.5;
    const double x1 = box.x_max / map.stride - 0.5;
    const double y1 = box.y_max / map.stride - 0.5;
    Vec acc = Vec::Zero(map.features.cols());
    for (int iy = 0; iy < lattice; ++iy) {
        double y = y0 + (iy + 0.5) * (y1 - y0) / lattice;
        for (int ix = 0; ix < lattice; ++ix) {
            double x = x0 + (ix + 0.5) * (x1 - x0) / lattice;
            double yc = y <= 0 ? 0 : y;
            double xc = x <= 0 ? 0 : x;
            int yl = static_cast<int>(yc), xl = static_cast<int>(xc);
            int yh = yl, xh = xl;
            if (yl >= map.h - 1) {
                yl = yh = map.h - 1;
                yc = yl;
            } else {
                yh = yl + 1;
            }
            if (xl >= map.w - 1) {
                xl = xh = map.w - 1;
                xc = xl;
            } else {
                xh = xl + 1;
            }
            const double ly = yc - yl, lx = xc - xl;
            acc += (1 - ly) * (1 - lx) * map.features.row(yl * map.w + xl).transpose() +
                   (1 - ly) * lx * map.features.row(yl * map.w + xh).transpose() +
                   ly * (1 - lx) * map.features.row(yh * map.w + xl).transpose() +
                   ly * lx * map.features.row(yh * map.w + xh).transpose();
        }
    }
    return acc / (static_cast<double>(lattice) * lattice);
}

DenseFeatureMap make_map(int h, int w, double stride, Mat features) {
    DenseFeatureMap m;
    m.h = h;
    m.w = w;
    m.stride = stride;
    m.features = std::move(features);
    return m;
}

}  // namespace

TEST_CASE("roi_align: constant map pools to the constant") {
    const double c = 3.75;
    auto map = make_map(4, 4, 8.0, Mat::Constant(16, 3, c));
    const Bbox box{3.0, 5.0, 27.0, 22.0};
    const Vec out = roi_align(map, box);
    for (int k = 0; k < 3; ++k) CHECK(out(k) == doctest::Approx(c).epsilon(1e-9));
}

TEST_CASE("roi_align: linear-in-x field pools to the box midpoint") {
    // cell value = x coordinate in feature space
    const int h = 8, w = 8;
    Mat f(h * w, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) f(y * w + x, 0) = x;
    auto map = make_map(h, w, 4.0, std::move(f));

    // box interior enough that no sample needs border clamping
    const double a = 1.25, b = 5.75;  // feature coords
    Bbox box;
    box.x_min = (a + 0.5) * map.stride;
    box.x_max = (b + 0.5) * map.stride;
    box.y_min = (2.0 + 0.5) * map.stride;
    box.y_max = (5.0 + 0.5) * map.stride;
    const Vec out = roi_align(map, box);
    CHECK(std::abs(out(0) - (a + b) / 2.0) < 1e-6);
}

TEST_CASE("roi_align: agrees with the 256x256 dense-sampling oracle") {
    Rng rng(2024);
    int worst_case = -1;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int h = 8, w = 8;
        const double stride = 4.0;
        auto map = make_map(h, w, stride, random_matrix(rng, h * w, 4));
        const double size = stride * w;
        const double x0 = rng.uniform(0.0, size - 3.0);
        const double y0 = rng.uniform(0.0, size - 3.0);
        Bbox box{x0, y0, x0 + rng.uniform(2.0, size - x0 - 0.5),
                 y0 + rng.uniform(2.0, size - y0 - 0.5)};
        const Vec got = roi_align(map, box);
        const Vec want = dense_sampling_oracle(map, box);
        const double err = (got - want).cwiseAbs().maxCoeff();
        if (err > worst) {
            worst = err;
            worst_case = trial;
        }
    }
    INFO("worst trial ", worst_case, " err ", worst);
    CHECK(worst < 1e-3);
}

TEST_CASE("roi_align: output is a convex combination of cell values") {
    Rng rng(99);
    for (int trial = 0; trial < 25; ++trial) {
        auto map = make_map(4, 4, 8.0, random_matrix(rng, 16, 5));
        const double x0 = rng.uniform(0.0, 20.0), y0 = rng.uniform(0.0, 20.0);
        Bbox box{x0, y0, x0 + rng.uniform(2.0, 31.9 - x0), y0 + rng.uniform(2.0, 31.9 - y0)};
        const Vec w = roi_align_weights(map.h, map.w, map.stride, box);
        CHECK(w.minCoeff() >= 0.0);
        CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-12));
        const Vec out = roi_align(map, box);
        for (int k = 0; k < 5; ++k) {
            CHECK(out(k) >= map.features.col(k).minCoeff() - 1e-12);
            CHECK(out(k) <= map.features.col(k).maxCoeff() + 1e-12);
        }
    }
}

TEST_CASE("roi_align: translation by one stride on a shifted map is exact") {
    Rng rng(123);
    const int h = 6, w = 6;
    const double stride = 8.0;
    const Mat f = random_matrix(rng, h * w, 3);
    // map2: every cell shifted one column left (cell (x,y) <- f(x+1,y))
    Mat f2(h * w, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            f2.row(y * w + x) = f.row(y * w + std::min(x + 1, w - 1));
    auto map1 = make_map(h, w, stride, f);
    auto map2 = make_map(h, w, stride, f2);

    // interior box, one-stride shift stays interior with full bilinear support
    const Bbox box{18.0, 13.0, 34.0, 30.0};
    const Bbox shifted{box.x_min + stride, box.y_min, box.x_max + stride, box.y_max};
    const Vec a = roi_align(map2, box);
    const Vec b = roi_align(map1, shifted);
    // identical taps and weights; only the dot-product order differs
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("roi_align: cells without bilinear support do not matter") {
    Rng rng(321);
    auto map = make_map(8, 8, 4.0, random_matrix(rng, 64, 2));
    const Bbox box{10.0, 10.0, 18.0, 18.0};  // feature coords ~[2,4]
    const Vec base = roi_align(map, box);
    const Vec weights = roi_align_weights(map.h, map.w, map.stride, box);
    auto far = map;
    for (Eigen::Index i = 0; i < weights.size(); ++i)
        if (weights(i) == 0.0) far.features.row(i).setConstant(1e6);
    const Vec poked = roi_align(far, box);
    CHECK((base - poked).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("roi_align: invalid boxes are rejected") {
    auto map = make_map(4, 4, 8.0, Mat::Ones(16, 2));
    CHECK_THROWS_AS(roi_align(map, Bbox{-1.0, 0.0, 8.0, 8.0}), InputError);
    CHECK_THROWS_AS(roi_align(map, Bbox{0.0, 0.0, 33.0, 8.0}), InputError);
    CHECK_THROWS_AS(roi_align(map, Bbox{4.0, 4.0, 4.5, 5.0}), InputError);  // area < 1
}

TEST_CASE("roi_align graph node matches the value path and routes gradients") {
    Rng rng(31337);
    auto map = make_map(4, 4, 8.0, random_matrix(rng, 16, 3));
    const Bbox box{5.0, 7.0, 25.0, 30.0};
    auto dense = ad::leaf(map.features);
    auto node = roi_align_node(dense, 4, 4, 8.0, box);
    CHECK((node->value.row(0).transpose() - roi_align(map, box)).cwiseAbs().maxCoeff() == 0.0);

    Vec probe = random_matrix(rng, 3, 1).col(0);
    auto scalar = ad::matmul(node, ad::constant(Mat(probe)));
    ad::backward(scalar);
    const Mat fd = finite_difference_grad(
        [&](const Mat& f) {
            auto m2 = map;
            m2.features = f;
            return roi_align(m2, box).dot(probe);
        },
        map.features);
    CHECK(max_rel_error(dense->grad, fd, 1e-6) < 1e-5);
}

TEST_CASE("crop_region: identity, constant color, and a hand bilinear table") {
    SUBCASE("full-image box at native size is the identity") {
        Rng rng(5);
        Image img(8, 8);
        for (auto& v : img.px) v = rng.uniform();
        const Image out = crop_region(img, Bbox{0, 0, 8, 8}, 8);
        double worst = 0.0;
        for (size_t i = 0; i < img.px.size(); ++i)
            worst = std::max(worst, std::abs(img.px[i] - out.px[i]));
        CHECK(worst < 1e-6);
    }
    SUBCASE("constant image crops to the constant") {
        Image img(16, 16, 0.42);
        const Image out = crop_region(img, Bbox{2.5, 3.25, 11.0, 13.5}, 7);
        for (double v : out.px) CHECK(v == doctest::Approx(0.42));
    }
    SUBCASE("2x upscale of a step edge gives the hand-computed ramp") {
        // columns 0..3 are 0, columns 4..7 are 1; crop the whole 8x8 to 16x16.
        Image img(8, 8);
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = x >= 4 ? 1.0 : 0.0;
        const Image out = crop_region(img, Bbox{0, 0, 8, 8}, 16);
        // dst x samples src at u = (x+0.5)*0.5 - 0.5; edge between src cols 3,4
        // u(6)=2.75 -> 0; u(7)=3.25 -> 0.25; u(8)=3.75 -> 0.75; u(9)=4.25 -> 1
        CHECK(out.at(0, 5, 6) == doctest::Approx(0.0));
        CHECK(out.at(0, 5, 7) == doctest::Approx(0.25));
        CHECK(out.at(0, 5, 8) == doctest::Approx(0.75));
        CHECK(out.at(0, 5, 9) == doctest::Approx(1.0));
    }
    SUBCASE("rejects invalid boxes") {
        Image img(8, 8, 0.5);
        CHECK_THROWS_AS(crop_region(img, Bbox{0, 0, 9, 8}, 4), InputError);
        CHECK_THROWS_AS(crop_region(img, Bbox{3, 3, 3.5, 3.5}, 4), InputError);
    }
}
