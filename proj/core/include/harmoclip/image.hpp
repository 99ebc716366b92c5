// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace harmoclip {

/// RGB raster with values in [0, 1], laid out channel-major: px[(c*h + y)*w + x].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> px;

    Image() = default;
    Image(int w, int h, double fill = 0.0)
        : width(w), height(h), px(static_cast<size_t>(3 * w * h), fill) {}

    double at(int c, int y, int x) const {
        return px[(static_cast<size_t>(c) * height + y) * width + x];
    }
    double& at(int c, int y, int x) {
        return px[(static_cast<size_t>(c) * height + y) * width + x];
    }

    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height;
    }
};

/// 8-bit round trips are lossless when pixel values are multiples of 1/255,
/// which the synthetic renderer guarantees.
void save_png(const Image& img, const std::filesystem::path& path);
Image load_png(const std::filesystem::path& path);

}  // namespace harmoclip
