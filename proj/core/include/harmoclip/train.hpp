// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <unordered_map>

#include "harmoclip/data.hpp"
#include "harmoclip/losses.hpp"
#include "harmoclip/model.hpp"

namespace harmoclip {

struct TrainConfig {
    double lr = 1e-5;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-6;
    int epochs = 5;
    int warmup_steps = 1000;
    int batch_size = 16;
    int unlocked_layers = -1;  // -1 = all image blocks
    LossMask loss_mask;
    uint64_t seed = 0;
    double grad_clip = 0.0;  // 0 = off
    long max_steps = 0;      // 0 = epochs * batches_per_epoch
    int checkpoint_every = 0;
    bool separate_lrc_temperature = false;  // default: one shared tau
    // Training-time ceiling on tau (inside the model's wider [1/100, 100]
    // clamp). Small batches let tau run away and flatten the softmax before
    // any alignment forms; CLIP-lineage stacks cap the temperature at 1.
    double tau_max = 1.0;

    void validate() const;
};

/// Linear warmup from 0 to cfg.lr over warmup_steps, then cosine decay to 0
/// at total_steps.
double lr_at_step(long step, const TrainConfig& cfg, long total_steps);

/// Frozen snapshot of a model used as the region-alignment teacher. The
/// fingerprint must not change for the lifetime of a run.
struct TeacherHandle {
    std::shared_ptr<const Model> model;
    uint64_t fingerprint = 0;

    static TeacherHandle from(const Model& m);
    static TeacherHandle from_checkpoint(const std::filesystem::path& path);
};

/// Decoupled-weight-decay adaptive-moment optimizer. Decay applies to every
/// trainable parameter outside the no-decay set, gradient or not.
class AdamW {
public:
    explicit AdamW(const TrainConfig& cfg);

    void step(ParamStore& params, double lr);

private:
    struct Moments {
        Mat m, v;
        long t = 0;
    };
    std::unordered_map<std::string, Moments> state_;
    double beta1_, beta2_, eps_, weight_decay_, grad_clip_;
};

struct StepResult {
    LossBundle losses;
    double lr = 0.0;
};

/// One optimization step: batched forward through student and frozen teacher,
/// masked total objective, backward, AdamW update of trainable parameters,
/// temperature clamp.
StepResult train_step(const Batch& batch, const CorpusManifest& corpus,
                      const ImageStore& store, Model& student, const TeacherHandle& teacher,
                      AdamW& opt, const TrainConfig& cfg, long step, long total_steps);

struct MetricsRow {
    long step = 0;
    double lr = 0.0;
    LossBundle losses;
    double wall_time = 0.0;
};

struct FitOptions {
    std::filesystem::path out_dir;  // empty: keep everything in memory
    std::function<void(const MetricsRow&)> on_step;
};

struct FitResult {
    std::vector<MetricsRow> metrics;
    std::filesystem::path final_checkpoint;  // empty without out_dir
    long steps_run = 0;
};

/// Full optimization loop: epoch shuffling, per-step metrics (JSONL when an
/// out_dir is given), periodic and final checkpoints. On short runs the
/// warmup is shortened to a tenth of the schedule so the shape survives.
FitResult fit(const CorpusManifest& corpus, const ImageStore& store, const TrainConfig& cfg,
              Model& student, const TeacherHandle& teacher, const FitOptions& opts = {});

}  // namespace harmoclip
