// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "harmoclip/autograd.hpp"
#include "harmoclip/image.hpp"
#include "harmoclip/types.hpp"

namespace harmoclip {

/// Axis-aligned box in continuous image pixel coordinates, corner form.
struct Bbox {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }

    /// 0 <= min < max <= image_size on both axes, area >= min_area.
    void validate(double image_size, double min_area = 1.0) const;
};

/// h x w grid of embed_dim spatial features. Row y*w + x holds cell (x, y).
struct DenseFeatureMap {
    Mat features;  // (h*w) x embed_dim
    int h = 0;
    int w = 0;
    double stride = 0;  // pixels per cell

    void validate() const;
};

struct RoiAlignOptions {
    int output_grid = 3;       // P x P bins
    int samples_per_axis = 0;  // per bin axis; 0 = adaptive (dense enough that
                               // the pooled value tracks the true bilinear
                               // integral to ~1e-3 on unit-scale maps)
    double min_box_area = 1.0;
};

/// Per-cell pooling weights for a box: the pooled feature equals weights^T *
/// map.features. Weights are nonnegative and sum to 1, so the output is a
/// convex combination of cell values. Shared by the value and graph paths and
/// by nothing else; the test oracle samples densely instead.
Vec roi_align_weights(int h, int w, double stride, const Bbox& box,
                      const RoiAlignOptions& opts = {});

/// RoIAlign pooled to a single vector: P x P bins, bilinear samples averaged
/// per bin, bins mean-pooled.
Vec roi_align(const DenseFeatureMap& map, const Bbox& box,
              const RoiAlignOptions& opts = {});

/// Graph version over a dense node laid out like DenseFeatureMap.features.
ad::NodePtr roi_align_node(const ad::NodePtr& dense, int h, int w, double stride,
                           const Bbox& box, const RoiAlignOptions& opts = {});

/// Extracts the box from the image and bilinearly resizes it to
/// target_size x target_size (teacher input path; never differentiated).
Image crop_region(const Image& image, const Bbox& box, int target_size,
                  double min_box_area = 1.0);

}  // namespace harmoclip
