// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#include "harmoclip/region_ops.hpp"

#include <cmath>

namespace harmoclip {

void Bbox::validate(double image_size, double min_area) const {
    if (!(x_min >= 0.0 && x_min < x_max && x_max <= image_size))
        throw InputError("Bbox: x range [" + std::to_string(x_min) + ", " +
                         std::to_string(x_max) + "] invalid for image size " +
                         std::to_string(image_size));
    if (!(y_min >= 0.0 && y_min < y_max && y_max <= image_size))
        throw InputError("Bbox: y range invalid");
    if (area() < min_area) throw InputError("Bbox: area below minimum");
}

void DenseFeatureMap::validate() const {
    if (h < 1 || w < 1) throw InputError("DenseFeatureMap: empty grid");
    if (features.rows() != static_cast<Eigen::Index>(h) * w)
        throw InputError("DenseFeatureMap: row count != h*w");
    if (!features.allFinite()) throw InputError("DenseFeatureMap: non-finite values");
}

namespace {

// Scatter the four bilinear taps for a sample point (x, y) on the cell-center
// grid into the weight vector. Points are clamped the way detection stacks do.
void add_bilinear_taps(Vec& weights, int h, int w, double y, double x, double amount) {
    if (y < -1.0 || y > h || x < -1.0 || x > w) return;
    if (y <= 0) y = 0;
    if (x <= 0) x = 0;
    int y_low = static_cast<int>(y);
    int x_low = static_cast<int>(x);
    int y_high, x_high;
    if (y_low >= h - 1) {
        y_high = y_low = h - 1;
        y = y_low;
    } else {
        y_high = y_low + 1;
    }
    if (x_low >= w - 1) {
        x_high = x_low = w - 1;
        x = x_low;
    } else {
        x_high = x_low + 1;
    }
    const double ly = y - y_low, lx = x - x_low;
    const double hy = 1.0 - ly, hx = 1.0 - lx;
    weights(static_cast<Eigen::Index>(y_low) * w + x_low) += amount * hy * hx;
    weights(static_cast<Eigen::Index>(y_low) * w + x_high) += amount * hy * lx;
    weights(static_cast<Eigen::Index>(y_high) * w + x_low) += amount * ly * hx;
    weights(static_cast<Eigen::Index>(y_high) * w + x_high) += amount * ly * lx;
}

}  // namespace

Vec roi_align_weights(int h, int w, double stride, const Bbox& box,
                      const RoiAlignOptions& opts) {
    if (h < 1 || w < 1 || stride <= 0) throw InputError("roi_align: bad grid");
    if (!(box.x_min >= 0.0 && box.x_min < box.x_max && box.x_max <= stride * w) ||
        !(box.y_min >= 0.0 && box.y_min < box.y_max && box.y_max <= stride * h))
        throw InputError("roi_align: box outside the image");
    if (box.area() < opts.min_box_area) throw InputError("roi_align: degenerate box");

    // half-pixel aligned conversion into feature coordinates
    const double x0 = box.x_min / stride - 0.5;
    const double y0 = box.y_min / stride - 0.5;
    const double x1 = box.x_max / stride - 0.5;
    const double y1 = box.y_max / stride - 0.5;

    const int P = opts.output_grid;
    if (P < 1 || opts.samples_per_axis < 0)
        throw InputError("roi_align: output grid must be >= 1");

    // Adaptive density: enough sample points per feature cell that the bin
    // averages track the integral of the piecewise-bilinear field (midpoint
    // sampling across cell-boundary kinks is the only error source).
    auto samples_for = [&](double span_cells) {
        if (opts.samples_per_axis > 0) return opts.samples_per_axis;
        return std::max(2, static_cast<int>(std::ceil(span_cells * 24.0 / P)));
    };
    const int sx_count = samples_for(x1 - x0);
    const int sy_count = samples_for(y1 - y0);

    const double bin_w = (x1 - x0) / P;
    const double bin_h = (y1 - y0) / P;
    const double amount =
        1.0 / (static_cast<double>(P) * P * sx_count * sy_count);

    Vec weights = Vec::Zero(static_cast<Eigen::Index>(h) * w);
    for (int py = 0; py < P; ++py) {
        for (int px = 0; px < P; ++px) {
            for (int sy = 0; sy < sy_count; ++sy) {
                const double y = y0 + (py + (sy + 0.5) / sy_count) * bin_h;
                for (int sx = 0; sx < sx_count; ++sx) {
                    const double x = x0 + (px + (sx + 0.5) / sx_count) * bin_w;
                    add_bilinear_taps(weights, h, w, y, x, amount);
                }
            }
        }
    }
    return weights;
}

Vec roi_align(const DenseFeatureMap& map, const Bbox& box, const RoiAlignOptions& opts) {
    map.validate();
    const Vec w = roi_align_weights(map.h, map.w, map.stride, box, opts);
    return map.features.transpose() * w;
}

ad::NodePtr roi_align_node(const ad::NodePtr& dense, int h, int w, double stride,
                           const Bbox& box, const RoiAlignOptions& opts) {
    if (dense->rows() != static_cast<Eigen::Index>(h) * w)
        throw InputError("roi_align_node: dense rows != h*w");
    return ad::weighted_row_sum(dense, roi_align_weights(h, w, stride, box, opts));
}

Image crop_region(const Image& image, const Bbox& box, int target_size,
                  double min_box_area) {
    if (image.width != image.height) throw InputError("crop_region: image must be square");
    if (target_size < 1) throw InputError("crop_region: target size must be >= 1");
    box.validate(image.width, min_box_area);

    Image out(target_size, target_size);
    const double sx = box.width() / target_size;
    const double sy = box.height() / target_size;
    for (int dy = 0; dy < target_size; ++dy) {
        // sample between pixel centers (pixel i covers [i, i+1))
        const double v = box.y_min + (dy + 0.5) * sy - 0.5;
        for (int dx = 0; dx < target_size; ++dx) {
            const double u = box.x_min + (dx + 0.5) * sx - 0.5;
            const double uc = std::clamp(u, 0.0, static_cast<double>(image.width - 1));
            const double vc = std::clamp(v, 0.0, static_cast<double>(image.height - 1));
            const int x0 = static_cast<int>(uc);
            const int y0 = static_cast<int>(vc);
            const int x1 = std::min(x0 + 1, image.width - 1);
            const int y1 = std::min(y0 + 1, image.height - 1);
            const double fx = uc - x0, fy = vc - y0;
            for (int c = 0; c < 3; ++c) {
                const double top =
                    image.at(c, y0, x0) * (1.0 - fx) + image.at(c, y0, x1) * fx;
                const double bot =
                    image.at(c, y1, x0) * (1.0 - fx) + image.at(c, y1, x1) * fx;
                out.at(c, dy, dx) = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    return out;
}

}  // namespace harmoclip
