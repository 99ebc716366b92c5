// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#include "harmoclip/losses.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace harmoclip {

namespace {

// Floor applied to norms before division. Keeps degenerate learned features
// finite; far below every stated tolerance.
constexpr double kNormFloor = 1e-8;

double sorted_sum(std::vector<double> terms) {
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += t;
    return s;
}

// log(sum_j exp(v_j)) with max-shift and order-canonical accumulation.
double log_sum_exp(const Eigen::RowVectorXd& v) {
    const double m = v.maxCoeff();
    std::vector<double> e(static_cast<size_t>(v.size()));
    for (Eigen::Index j = 0; j < v.size(); ++j) e[static_cast<size_t>(j)] = std::exp(v(j) - m);
    return m + std::log(sorted_sum(std::move(e)));
}

struct RowNorms {
    Mat normalized;   // rows divided by max(norm, floor)
    Vec denom;        // the divisor actually used
    Vec raw_norm;
};

RowNorms normalize_rows(const Mat& x, const char* who) {
    RowNorms out;
    out.normalized.resize(x.rows(), x.cols());
    out.denom.resize(x.rows());
    out.raw_norm.resize(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double n = x.row(i).norm();
        if (n == 0.0)
            throw NumericalDomainError(std::string(who) + ": zero-norm row " +
                                       std::to_string(i));
        out.raw_norm(i) = n;
        out.denom(i) = std::max(n, kNormFloor);
        out.normalized.row(i) = x.row(i) / out.denom(i);
    }
    return out;
}

// d(x_i / max(||x_i||, floor)) applied to an upstream row gradient.
Eigen::RowVectorXd normalize_row_backward(const Eigen::RowVectorXd& x_row,
                                          const Eigen::RowVectorXd& g_row, double raw_norm,
                                          double denom) {
    if (raw_norm >= kNormFloor) {
        const Eigen::RowVectorXd xn = x_row / denom;
        return (g_row - xn * g_row.dot(xn)) / denom;
    }
    return g_row / denom;
}

}  // namespace

double cosine_similarity(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw InputError("cosine_similarity: dimension mismatch");
    if (a.size() == 0) throw InputError("cosine_similarity: empty vectors");
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0)
        throw NumericalDomainError("cosine_similarity: zero-norm input");
    const double s = a.dot(b) / (std::max(na, kNormFloor) * std::max(nb, kNormFloor));
    return std::clamp(s, -1.0, 1.0);
}

ad::NodePtr info_nce_loss(const ad::NodePtr& a, const ad::NodePtr& b,
                          const ad::NodePtr& log_tau) {
    const Eigen::Index n = a->rows();
    if (n < 1) throw InputError("info_nce_loss: empty batch");
    if (b->rows() != n) throw InputError("info_nce_loss: batch size mismatch");
    if (a->cols() != b->cols()) throw InputError("info_nce_loss: dimension mismatch");
    if (log_tau->rows() != 1 || log_tau->cols() != 1)
        throw InputError("info_nce_loss: log_tau must be 1x1");

    RowNorms an = normalize_rows(a->value, "info_nce_loss(a)");
    RowNorms bn = normalize_rows(b->value, "info_nce_loss(b)");
    const double tau = std::exp(log_tau->value(0, 0));

    Mat sims = an.normalized * bn.normalized.transpose();  // N x N
    Mat logits = sims / tau;

    std::vector<double> terms;
    terms.reserve(static_cast<size_t>(2 * n));
    for (Eigen::Index i = 0; i < n; ++i) {
        terms.push_back(log_sum_exp(logits.row(i)) - logits(i, i));
        terms.push_back(log_sum_exp(logits.col(i).transpose()) - logits(i, i));
    }
    Mat value(1, 1);
    value(0, 0) = sorted_sum(std::move(terms)) / static_cast<double>(2 * n);

    auto out = std::make_shared<ad::Node>();
    out->value = std::move(value);
    out->requires_grad = a->requires_grad || b->requires_grad || log_tau->requires_grad;
    if (!out->requires_grad) return out;

    out->parents = {a, b, log_tau};
    out->backprop = [an = std::move(an), bn = std::move(bn), sims = std::move(sims),
                     logits = std::move(logits), tau, n](ad::Node& node) {
        const double g = node.grad(0, 0);
        const double inv2n = 1.0 / static_cast<double>(2 * n);

        // dLoss/dlogits = inv2n * (row_softmax + col_softmax - 2 I)
        Mat gl = Mat::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            // row softmax
            Eigen::RowVectorXd r = logits.row(i);
            r.array() -= r.maxCoeff();
            Eigen::RowVectorXd p = r.array().exp();
            p /= p.sum();
            gl.row(i) += p;
            // column softmax
            Eigen::VectorXd c = logits.col(i);
            c.array() -= c.maxCoeff();
            Eigen::VectorXd q = c.array().exp();
            q /= q.sum();
            gl.col(i) += q;
            gl(i, i) -= 2.0;
        }
        gl *= g * inv2n;

        auto& pa = node.parents[0];
        auto& pb = node.parents[1];
        auto& ptau = node.parents[2];

        if (ptau->requires_grad) {
            ptau->ensure_grad();
            // logits = sims / tau, d logits/d log_tau = -sims / tau
            ptau->grad(0, 0) += -(gl.cwiseProduct(sims)).sum() / tau;
        }

        const Mat gs = gl / tau;  // dLoss/dsims
        if (pa->requires_grad) {
            pa->ensure_grad();
            const Mat g_an = gs * bn.normalized;  // N x d
            for (Eigen::Index i = 0; i < n; ++i)
                pa->grad.row(i) += normalize_row_backward(pa->value.row(i), g_an.row(i),
                                                          an.raw_norm(i), an.denom(i));
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            const Mat g_bn = gs.transpose() * an.normalized;
            for (Eigen::Index i = 0; i < n; ++i)
                pb->grad.row(i) += normalize_row_backward(pb->value.row(i), g_bn.row(i),
                                                          bn.raw_norm(i), bn.denom(i));
        }
    };
    return out;
}

ad::NodePtr cosine_alignment_loss(const ad::NodePtr& r, const ad::NodePtr& e) {
    const Eigen::Index n = r->rows();
    if (n < 1) throw InputError("cosine_alignment_loss: empty batch");
    if (e->rows() != n || e->cols() != r->cols())
        throw InputError("cosine_alignment_loss: shape mismatch");

    RowNorms rn = normalize_rows(r->value, "cosine_alignment_loss(region)");
    RowNorms en = normalize_rows(e->value, "cosine_alignment_loss(teacher)");

    std::vector<double> cosines(static_cast<size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        cosines[static_cast<size_t>(i)] =
            std::clamp(rn.normalized.row(i).dot(en.normalized.row(i)), -1.0, 1.0);
    }
    Mat value(1, 1);
    value(0, 0) = 1.0 - sorted_sum(cosines) / static_cast<double>(n);

    auto out = std::make_shared<ad::Node>();
    out->value = std::move(value);
    out->requires_grad = r->requires_grad;
    if (!out->requires_grad) return out;

    // e is intentionally absent from parents: the teacher is a stop-gradient
    // target, so backward never reaches it.
    out->parents = {r};
    out->backprop = [rn = std::move(rn), en = std::move(en), n](ad::Node& node) {
        const double g = node.grad(0, 0);
        auto& pr = node.parents[0];
        pr->ensure_grad();
        const double c = -g / static_cast<double>(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::RowVectorXd gi = c * en.normalized.row(i);
            pr->grad.row(i) += normalize_row_backward(pr->value.row(i), gi, rn.raw_norm(i),
                                                      rn.denom(i));
        }
    };
    return out;
}

namespace {

double info_nce_value(const EmbeddingBatch& a, const EmbeddingBatch& b,
                      const TemperatureParam& tau, const char* who) {
    a.validate();
    b.validate();
    if (a.size() != b.size())
        throw InputError(std::string(who) + ": batch sizes differ");
    Mat lt(1, 1);
    lt(0, 0) = tau.log_tau;
    return info_nce_loss(ad::constant(a.vectors), ad::constant(b.vectors),
                         ad::constant(lt))
        ->value(0, 0);
}

}  // namespace

double global_contrastive_loss(const EmbeddingBatch& image_batch,
                               const EmbeddingBatch& text_batch,
                               const TemperatureParam& tau) {
    return info_nce_value(image_batch, text_batch, tau, "global_contrastive_loss");
}

double lexeme_region_contrastive_loss(const EmbeddingBatch& region_batch,
                                      const EmbeddingBatch& lexeme_batch,
                                      const TemperatureParam& tau) {
    return info_nce_value(region_batch, lexeme_batch, tau,
                          "lexeme_region_contrastive_loss");
}

double global_region_alignment_loss(const EmbeddingBatch& region_batch,
                                    const EmbeddingBatch& teacher_batch) {
    region_batch.validate();
    teacher_batch.validate();
    if (region_batch.size() != teacher_batch.size())
        throw InputError("global_region_alignment_loss: batch sizes differ");
    return cosine_alignment_loss(ad::constant(region_batch.vectors),
                                 ad::constant(teacher_batch.vectors))
        ->value(0, 0);
}

LossBundle total_loss(const TotalLossInputs& inputs, const TemperatureParam& tau,
                      const LossMask& mask) {
    if (!mask.any()) throw ConfigError("total_loss: loss mask is empty");
    LossBundle bundle;
    if (mask.gc) {
        if (!inputs.image_global || !inputs.text_global)
            throw InputError("total_loss: GC enabled but global batches missing");
        bundle.l_gc = global_contrastive_loss(*inputs.image_global, *inputs.text_global, tau);
    }
    if (mask.lrc) {
        if (!inputs.region || !inputs.lexeme)
            throw InputError("total_loss: LRC enabled but region/lexeme batches missing");
        bundle.l_lrc = lexeme_region_contrastive_loss(*inputs.region, *inputs.lexeme, tau);
    }
    if (mask.gr) {
        if (!inputs.region || !inputs.teacher)
            throw InputError("total_loss: GR enabled but region/teacher batches missing");
        bundle.l_gr = global_region_alignment_loss(*inputs.region, *inputs.teacher);
    }
    bundle.total = bundle.l_gc + bundle.l_lrc + bundle.l_gr;
    return bundle;
}

}  // namespace harmoclip
