// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <string>

#include "harmoclip/errors.hpp"

namespace harmoclip {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

enum class EmbeddingRole { image_global, text_global, region, lexeme, teacher };

/// N embedding vectors of one role, one per row.
struct EmbeddingBatch {
    Mat vectors;  // N x d
    EmbeddingRole role = EmbeddingRole::image_global;

    Eigen::Index size() const { return vectors.rows(); }
    Eigen::Index dim() const { return vectors.cols(); }

    void validate() const {
        if (vectors.rows() < 1) throw InputError("EmbeddingBatch: need at least one row");
        if (!vectors.allFinite()) throw InputError("EmbeddingBatch: non-finite entries");
    }
};

/// Learnable softmax temperature, stored in the log domain. The optimizer
/// clamps tau into [1/100, 100] after every step.
struct TemperatureParam {
    double log_tau = std::log(1.0 / 0.07);

    double tau() const { return std::exp(log_tau); }

    static TemperatureParam from_tau(double t) { return {std::log(t)}; }

    /// Clamp so that tau() lands inside [1/100, 100] even after the exp
    /// round trip.
    void clamp() {
        static const double lo = [] {
            double v = std::log(0.01);
            while (std::exp(v) < 0.01) v = std::nextafter(v, 1.0);
            return v;
        }();
        static const double hi = [] {
            double v = std::log(100.0);
            while (std::exp(v) > 100.0) v = std::nextafter(v, 0.0);
            return v;
        }();
        log_tau = std::clamp(log_tau, lo, hi);
    }
};

/// Which objective terms participate in a run (ablation rows).
struct LossMask {
    bool gc = true;
    bool lrc = true;
    bool gr = true;

    bool any() const { return gc || lrc || gr; }
    std::string label() const {
        std::string s;
        if (gc) s += "+GC";
        if (lrc) s += "+LRC";
        if (gr) s += "+GR";
        return s.empty() ? "(none)" : s;
    }
};

}  // namespace harmoclip
