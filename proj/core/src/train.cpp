// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#include "harmoclip/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace harmoclip {

using nlohmann::json;
namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("TrainConfig: lr must be > 0");
    if (weight_decay < 0.0) throw ConfigError("TrainConfig: weight_decay must be >= 0");
    if (warmup_steps < 0) throw ConfigError("TrainConfig: warmup_steps must be >= 0");
    if (!loss_mask.any()) throw ConfigError("TrainConfig: loss_mask is empty");
    if (epochs < 0 || max_steps < 0)
        throw ConfigError("TrainConfig: epochs and max_steps must be >= 0");
    if (batch_size < 2) throw ConfigError("TrainConfig: batch_size must be >= 2");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
        throw ConfigError("TrainConfig: betas must be in [0, 1)");
    if (eps <= 0) throw ConfigError("TrainConfig: eps must be > 0");
    if (grad_clip < 0) throw ConfigError("TrainConfig: grad_clip must be >= 0");
    if (!(tau_max > 0.0)) throw ConfigError("TrainConfig: tau_max must be > 0");
}

double lr_at_step(long step, const TrainConfig& cfg, long total_steps) {
    if (total_steps <= cfg.warmup_steps)
        throw ConfigError("lr_at_step: total_steps must exceed warmup_steps");
    if (step < 0 || step > total_steps) throw InputError("lr_at_step: step out of range");
    if (step <= cfg.warmup_steps && cfg.warmup_steps > 0)
        return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    const double progress = static_cast<double>(step - cfg.warmup_steps) /
                            static_cast<double>(total_steps - cfg.warmup_steps);
    return cfg.lr * 0.5 * (1.0 + std::cos(3.141592653589793238462643383279 * progress));
}

TeacherHandle TeacherHandle::from(const Model& m) {
    auto frozen = std::make_shared<Model>(m.clone());
    frozen->freeze_all();
    TeacherHandle h;
    h.fingerprint = frozen->fingerprint();
    h.model = std::move(frozen);
    return h;
}

TeacherHandle TeacherHandle::from_checkpoint(const fs::path& path) {
    return from(Model::load(path));
}

AdamW::AdamW(const TrainConfig& cfg)
    : beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.eps), weight_decay_(cfg.weight_decay),
      grad_clip_(cfg.grad_clip) {}

void AdamW::step(ParamStore& params, double lr) {
    double clip_scale = 1.0;
    if (grad_clip_ > 0.0) {
        double sq = 0.0;
        for (const auto& p : params.items())
            if (p.trainable() && p.node->grad.size() != 0) sq += p.node->grad.squaredNorm();
        const double norm = std::sqrt(sq);
        if (norm > grad_clip_) clip_scale = grad_clip_ / norm;
    }

    for (auto& p : params.items()) {
        if (!p.trainable()) continue;
        auto& node = *p.node;
        auto& st = state_[p.name];
        if (st.m.size() == 0) {
            st.m = Mat::Zero(node.value.rows(), node.value.cols());
            st.v = Mat::Zero(node.value.rows(), node.value.cols());
        }
        Mat grad = node.grad.size() != 0
                       ? Mat(node.grad * clip_scale)
                       : Mat::Zero(node.value.rows(), node.value.cols());
        ++st.t;
        st.m = beta1_ * st.m + (1.0 - beta1_) * grad;
        st.v = beta2_ * st.v + (1.0 - beta2_) * grad.cwiseProduct(grad);
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(st.t));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(st.t));
        const Mat m_hat = st.m / bc1;
        const Mat v_hat = st.v / bc2;
        const double wd = p.no_decay ? 0.0 : weight_decay_;
        const Mat update =
            (m_hat.array() / (v_hat.array().sqrt() + eps_) + wd * node.value.array()).matrix();
        node.value -= lr * update;
        node.zero_grad();
    }
}

namespace {

struct BatchForward {
    LossBundle values;
    ad::NodePtr total;
};

// Builds the masked objective graph for one batch. Teacher crops are encoded
// value-only; gradients stop at the region/teacher boundary.
BatchForward batch_objective(const Batch& batch, const CorpusManifest& corpus,
                             const ImageStore& store, const Model& student,
                             const TeacherHandle& teacher, const TrainConfig& cfg) {
    const auto& mask = cfg.loss_mask;
    const bool need_dense = mask.lrc || mask.gr;
    const bool need_text = mask.gc || mask.lrc;
    const int g = student.config().grid();
    const double stride = student.config().patch_size;

    std::vector<ad::NodePtr> v_rows, t_rows, r_rows, l_rows;
    Mat teacher_rows;
    if (mask.gr)
        teacher_rows.resize(static_cast<Eigen::Index>(batch.indices.size()),
                            student.config().embed_dim);

    for (size_t bi = 0; bi < batch.indices.size(); ++bi) {
        const auto& sample = corpus.samples.at(static_cast<size_t>(batch.indices[bi]));
        const Image& image = store.get(sample);

        auto img = student.forward_image(image, mask.gc, need_dense);
        if (mask.gc) v_rows.push_back(img.global);
        if (need_dense) {
            auto region = roi_align_node(img.dense, g, g, stride, sample.box);
            r_rows.push_back(region);
        }
        if (need_text) {
            auto txt = student.forward_text(sample.tokens);
            if (mask.gc) t_rows.push_back(txt.global);
            if (mask.lrc) {
                if (sample.token_idx < 0 || sample.token_idx >= sample.tokens.length())
                    throw InputError("train_step: token_idx out of range");
                l_rows.push_back(ad::slice_rows(txt.hidden, sample.token_idx, 1));
            }
        }
        if (mask.gr) {
            const Image crop =
                crop_region(image, sample.box, teacher.model->config().image_size);
            teacher_rows.row(static_cast<Eigen::Index>(bi)) =
                teacher.model->encode_image_global(crop).transpose();
        }
    }

    BatchForward out;
    std::vector<ad::NodePtr> terms;
    if (mask.gc) {
        auto l_gc = info_nce_loss(ad::concat_rows(v_rows), ad::concat_rows(t_rows),
                                  student.log_tau());
        out.values.l_gc = l_gc->value(0, 0);
        terms.push_back(l_gc);
    }
    ad::NodePtr regions;
    if (need_dense) regions = ad::concat_rows(r_rows);
    if (mask.lrc) {
        auto tau = cfg.separate_lrc_temperature ? student.log_tau_lrc() : student.log_tau();
        auto l_lrc = info_nce_loss(regions, ad::concat_rows(l_rows), tau);
        out.values.l_lrc = l_lrc->value(0, 0);
        terms.push_back(l_lrc);
    }
    if (mask.gr) {
        auto l_gr = cosine_alignment_loss(regions, ad::constant(std::move(teacher_rows)));
        out.values.l_gr = l_gr->value(0, 0);
        terms.push_back(l_gr);
    }
    out.total = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) out.total = ad::add(out.total, terms[i]);
    out.values.total = out.values.l_gc + out.values.l_lrc + out.values.l_gr;
    return out;
}

void clamp_temperatures(Model& m, double tau_max) {
    for (const char* name : {"log_tau", "log_tau_lrc"}) {
        auto& v = m.params().at(name).node->value(0, 0);
        TemperatureParam t{v};
        t.clamp();
        v = std::min(t.log_tau, std::log(tau_max));
    }
}

}  // namespace

StepResult train_step(const Batch& batch, const CorpusManifest& corpus,
                      const ImageStore& store, Model& student, const TeacherHandle& teacher,
                      AdamW& opt, const TrainConfig& cfg, long step, long total_steps) {
    if (batch.indices.empty()) throw InputError("train_step: empty batch");
    auto fwd = batch_objective(batch, corpus, store, student, teacher, cfg);
    if (!std::isfinite(fwd.values.total))
        throw TrainingDiverged("train_step: non-finite loss", step);

    ad::backward(fwd.total);
    StepResult res;
    res.losses = fwd.values;
    res.lr = lr_at_step(step, cfg, total_steps);
    opt.step(student.params(), res.lr);
    clamp_temperatures(student, cfg.tau_max);
    return res;
}

FitResult fit(const CorpusManifest& corpus, const ImageStore& store, const TrainConfig& cfg,
              Model& student, const TeacherHandle& teacher, const FitOptions& opts) {
    cfg.validate();
    if (corpus.samples.empty()) throw InputError("fit: empty corpus");

    const int unlocked =
        cfg.unlocked_layers < 0 ? student.config().img_blocks : cfg.unlocked_layers;
    student.set_trainable_depth(unlocked);

    BatchStream stream(corpus, cfg.batch_size, derive_seed(cfg.seed, 0xF17));
    const long per_epoch = stream.batches_per_epoch();
    long total_steps = cfg.max_steps > 0 ? cfg.max_steps
                                         : per_epoch * static_cast<long>(cfg.epochs);

    // keep the schedule shape on short desk runs
    TrainConfig eff = cfg;
    eff.warmup_steps = static_cast<int>(
        std::min<long>(cfg.warmup_steps, total_steps / 10));

    AdamW opt(eff);
    FitResult result;

    std::ofstream metrics_out;
    if (!opts.out_dir.empty()) {
        fs::create_directories(opts.out_dir);
        fs::create_directories(opts.out_dir / "checkpoints");
        metrics_out.open(opts.out_dir / "metrics.jsonl");
        if (!metrics_out) throw ParseError("fit: cannot write metrics.jsonl");
    }

    const uint64_t teacher_fp_start = teacher.model->fingerprint();
    const auto t0 = std::chrono::steady_clock::now();

    long step = 0;
    try {
        for (int epoch = 0; step < total_steps; ++epoch) {
            for (const auto& batch : stream.epoch(epoch)) {
                if (step >= total_steps) break;
                auto res = train_step(batch, corpus, store, student, teacher, opt, eff, step,
                                      total_steps);
                const double wall =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                        .count();
                MetricsRow row{step, res.lr, res.losses, wall};
                result.metrics.push_back(row);
                if (metrics_out) {
                    json j{{"step", row.step},           {"lr", row.lr},
                           {"l_gc", row.losses.l_gc},    {"l_lrc", row.losses.l_lrc},
                           {"l_gr", row.losses.l_gr},    {"total", row.losses.total},
                           {"wall_time", row.wall_time}};
                    metrics_out << j.dump() << '\n';
                }
                ++step;
                if (!opts.out_dir.empty() && cfg.checkpoint_every > 0 &&
                    step % cfg.checkpoint_every == 0) {
                    char name[40];
                    std::snprintf(name, sizeof(name), "step_%06ld.ckpt", step);
                    student.save(opts.out_dir / "checkpoints" / name);
                }
                if (opts.on_step) opts.on_step(row);
            }
        }
    } catch (const TrainingDiverged&) {
        if (!opts.out_dir.empty())
            student.save(opts.out_dir / "checkpoints" /
                         ("diverged_step_" + std::to_string(step) + ".ckpt"));
        throw;
    }

    if (teacher.model->fingerprint() != teacher_fp_start)
        throw TrainingDiverged("fit: teacher fingerprint changed mid-run", step);

    result.steps_run = step;
    if (!opts.out_dir.empty()) {
        result.final_checkpoint = opts.out_dir / "checkpoints" / "final.ckpt";
        student.save(result.final_checkpoint);
    }
    return result;
}

}  // namespace harmoclip
