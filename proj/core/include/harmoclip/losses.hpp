// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>

#include "harmoclip/autograd.hpp"
#include "harmoclip/types.hpp"

namespace harmoclip {

/// The three objective scalars and their unit-weight sum. Disabled terms are
/// reported as zero.
struct LossBundle {
    double l_gc = 0.0;
    double l_lrc = 0.0;
    double l_gr = 0.0;
    double total = 0.0;
};

/// Cosine similarity of two nonzero vectors, clamped into [-1, 1].
double cosine_similarity(const Vec& a, const Vec& b);

// ---------------------------------------------------------------------------
// Graph-level kernels. These carry hand-written backward passes; reductions
// accumulate in sorted order so jointly permuting the pairs of a batch leaves
// every loss value bit-identical.
// ---------------------------------------------------------------------------

/// Symmetric InfoNCE over row-aligned batches a, b (N x d) with logits
/// cos(a_i, b_j) / tau, tau = exp(log_tau). Gradients flow to a, b and
/// log_tau. Shared kernel of the global and lexeme-region losses.
ad::NodePtr info_nce_loss(const ad::NodePtr& a, const ad::NodePtr& b,
                          const ad::NodePtr& log_tau);

/// 1 - mean_i cos(r_i, e_i). The teacher side e is detached: no gradient is
/// ever propagated into it.
ad::NodePtr cosine_alignment_loss(const ad::NodePtr& r, const ad::NodePtr& e);

// ---------------------------------------------------------------------------
// Value-level operations (spec surface). Thin wrappers over the kernels.
// ---------------------------------------------------------------------------

double global_contrastive_loss(const EmbeddingBatch& image_batch,
                               const EmbeddingBatch& text_batch,
                               const TemperatureParam& tau);

double lexeme_region_contrastive_loss(const EmbeddingBatch& region_batch,
                                      const EmbeddingBatch& lexeme_batch,
                                      const TemperatureParam& tau);

double global_region_alignment_loss(const EmbeddingBatch& region_batch,
                                    const EmbeddingBatch& teacher_batch);

/// Inputs for the combined objective; unset terms must be disabled in the mask.
struct TotalLossInputs {
    std::optional<EmbeddingBatch> image_global;
    std::optional<EmbeddingBatch> text_global;
    std::optional<EmbeddingBatch> region;
    std::optional<EmbeddingBatch> lexeme;
    std::optional<EmbeddingBatch> teacher;
};

LossBundle total_loss(const TotalLossInputs& inputs, const TemperatureParam& tau,
                      const LossMask& mask = LossMask{});

}  // namespace harmoclip
