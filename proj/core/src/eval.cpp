// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#include "harmoclip/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "harmoclip/losses.hpp"

namespace harmoclip {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

Mat normalize_rows_value(const Mat& x) {
    Mat out = x;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double n = out.row(i).norm();
        out.row(i) /= std::max(n, 1e-8);
    }
    return out;
}

Eigen::Index argmax_row(const Eigen::RowVectorXd& row) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < row.size(); ++j)
        if (row(j) > row(best)) best = j;  // ties keep the lower index
    return best;
}

}  // namespace

RetrievalEvalSet retrieval_set_from_corpus(const CorpusManifest& corpus,
                                           const ImageStore& store) {
    RetrievalEvalSet set;
    std::map<long, int> image_index;
    std::set<std::pair<long, std::string>> seen_pairs;
    for (const auto& s : corpus.samples) {
        auto it = image_index.find(s.image_id);
        if (it == image_index.end()) {
            it = image_index.emplace(s.image_id, static_cast<int>(set.images.size())).first;
            set.images.push_back(store.get(s));
        }
        if (seen_pairs.emplace(s.image_id, s.caption).second) {
            set.captions.push_back(s.tokens);
            set.caption_to_image.push_back(it->second);
        }
    }
    return set;
}

RetrievalReport rank_retrieval(const Mat& image_embs, const Mat& text_embs,
                               const std::vector<int>& caption_to_image) {
    const Eigen::Index n_img = image_embs.rows();
    const Eigen::Index n_txt = text_embs.rows();
    if (n_img < 1 || n_txt < 2)
        throw InputError("rank_retrieval: need >= 1 image and >= 2 captions");
    if (static_cast<Eigen::Index>(caption_to_image.size()) != n_txt)
        throw InputError("rank_retrieval: pairing length mismatch");
    for (int gi : caption_to_image)
        if (gi < 0 || gi >= n_img) throw InputError("rank_retrieval: pairing out of range");

    const Mat sims = normalize_rows_value(image_embs) *
                     normalize_rows_value(text_embs).transpose();  // img x txt

    long i2t_hits = 0;
    for (Eigen::Index i = 0; i < n_img; ++i)
        if (caption_to_image[static_cast<size_t>(argmax_row(sims.row(i)))] == i) ++i2t_hits;

    long t2i_hits = 0;
    for (Eigen::Index j = 0; j < n_txt; ++j)
        if (argmax_row(sims.col(j).transpose()) == caption_to_image[static_cast<size_t>(j)])
            ++t2i_hits;

    RetrievalReport r;
    r.i2t_at_1 = static_cast<double>(i2t_hits) / static_cast<double>(n_img);
    r.t2i_at_1 = static_cast<double>(t2i_hits) / static_cast<double>(n_txt);
    r.n_queries = static_cast<long>(n_img + n_txt);
    return r;
}

RetrievalReport eval_retrieval(const Model& model, const RetrievalEvalSet& eval_set) {
    if (eval_set.captions.size() < 2)
        throw InputError("eval_retrieval: need at least 2 caption queries");
    const int d = model.config().embed_dim;
    Mat img(static_cast<Eigen::Index>(eval_set.images.size()), d);
    for (size_t i = 0; i < eval_set.images.size(); ++i)
        img.row(static_cast<Eigen::Index>(i)) =
            model.encode_image_global(eval_set.images[i]).transpose();
    Mat txt(static_cast<Eigen::Index>(eval_set.captions.size()), d);
    for (size_t j = 0; j < eval_set.captions.size(); ++j)
        txt.row(static_cast<Eigen::Index>(j)) =
            model.encode_text(eval_set.captions[j]).first.transpose();
    return rank_retrieval(img, txt, eval_set.caption_to_image);
}

std::pair<double, double> classify_regions(const Mat& region_embs, const Mat& class_embs,
                                           const std::vector<int>& labels) {
    const Eigen::Index n = region_embs.rows();
    const Eigen::Index c = class_embs.rows();
    if (n < 1 || c < 1) throw InputError("classify_regions: empty inputs");
    if (static_cast<Eigen::Index>(labels.size()) != n)
        throw InputError("classify_regions: labels length mismatch");

    const Mat sims =
        normalize_rows_value(region_embs) * normalize_rows_value(class_embs).transpose();
    long top1 = 0, top5 = 0;
    std::vector<Eigen::Index> order(static_cast<size_t>(c));
    for (Eigen::Index i = 0; i < n; ++i) {
        const int truth = labels[static_cast<size_t>(i)];
        if (truth < 0 || truth >= c) throw InputError("classify_regions: label out of range");
        for (Eigen::Index j = 0; j < c; ++j) order[static_cast<size_t>(j)] = j;
        std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
            return sims(i, a) > sims(i, b);
        });
        if (order[0] == truth) ++top1;
        const size_t k = std::min<size_t>(5, order.size());
        for (size_t r = 0; r < k; ++r)
            if (order[r] == truth) {
                ++top5;
                break;
            }
    }
    return {static_cast<double>(top1) / static_cast<double>(n),
            static_cast<double>(top5) / static_cast<double>(n)};
}

namespace {

std::string apply_template(const std::string& tmpl, const std::string& cls) {
    const std::string key = "{class}";
    std::string out = tmpl;
    const auto pos = out.find(key);
    if (pos == std::string::npos) return out + " " + cls;
    out.replace(pos, key.size(), cls);
    return out;
}

}  // namespace

BboxReport eval_bbox_classification(const Model& model, const CorpusManifest& eval_corpus,
                                    const ImageStore& store,
                                    const std::vector<std::string>& class_names,
                                    const std::string& prompt_template) {
    if (eval_corpus.samples.empty()) throw InputError("eval_bbox: empty eval set");
    if (class_names.empty()) throw InputError("eval_bbox: empty class set");

    std::map<std::string, int> class_index;
    for (size_t i = 0; i < class_names.size(); ++i)
        class_index[class_names[i]] = static_cast<int>(i);

    const int d = model.config().embed_dim;
    Mat class_embs(static_cast<Eigen::Index>(class_names.size()), d);
    for (size_t i = 0; i < class_names.size(); ++i) {
        const auto tokens = tokenizer::encode(apply_template(prompt_template, class_names[i]),
                                              eval_corpus.vocab, model.config().max_text_len);
        class_embs.row(static_cast<Eigen::Index>(i)) =
            model.encode_text(tokens).first.transpose();
    }

    Mat regions(static_cast<Eigen::Index>(eval_corpus.samples.size()), d);
    std::vector<int> labels;
    labels.reserve(eval_corpus.samples.size());
    std::map<long, DenseFeatureMap> dense_cache;
    for (size_t i = 0; i < eval_corpus.samples.size(); ++i) {
        const auto& s = eval_corpus.samples[i];
        auto it = class_index.find(s.class_label);
        if (it == class_index.end())
            throw InputError("eval_bbox: label '" + s.class_label + "' not in class set");
        labels.push_back(it->second);
        auto dit = dense_cache.find(s.image_id);
        if (dit == dense_cache.end())
            dit = dense_cache.emplace(s.image_id, model.encode_image_dense(store.get(s))).first;
        regions.row(static_cast<Eigen::Index>(i)) = roi_align(dit->second, s.box).transpose();
    }

    const auto [top1, top5] = classify_regions(regions, class_embs, labels);
    BboxReport r;
    r.top1 = top1;
    r.top5 = top5;
    r.n_boxes = static_cast<long>(eval_corpus.samples.size());
    r.class_set = class_names;
    r.prompt_template = prompt_template;
    return r;
}

ConcordanceReport analyze_concordance(const Model& model, const CorpusManifest& corpus,
                                      const ImageStore& store, int bins) {
    if (corpus.samples.empty()) throw InputError("analyze_concordance: empty grounded set");
    if (bins < 1) throw ConfigError("analyze_concordance: bins must be >= 1");

    ConcordanceReport rep;
    rep.bins = bins;
    rep.histogram = Mat::Zero(bins, bins);

    std::map<long, DenseFeatureMap> dense_cache;
    std::map<long, Vec> global_cache;
    std::map<std::string, Vec> text_cache;

    for (const auto& s : corpus.samples) {
        auto dit = dense_cache.find(s.image_id);
        if (dit == dense_cache.end())
            dit = dense_cache.emplace(s.image_id, model.encode_image_dense(store.get(s))).first;
        auto git = global_cache.find(s.image_id);
        if (git == global_cache.end())
            git = global_cache
                      .emplace(s.image_id, model.encode_image_global(store.get(s)))
                      .first;
        auto tit = text_cache.find(s.caption);
        if (tit == text_cache.end())
            tit = text_cache.emplace(s.caption, model.encode_text(s.tokens).first).first;

        const Vec region = roi_align(dit->second, s.box);
        const double c_ig = cosine_similarity(region, git->second);
        const double c_tg = cosine_similarity(region, tit->second);
        rep.per_sample.emplace_back(c_ig, c_tg);

        auto bin_of = [bins](double c) {
            int b = static_cast<int>((c + 1.0) / 2.0 * bins);
            return std::clamp(b, 0, bins - 1);
        };
        rep.histogram(bin_of(c_ig), bin_of(c_tg)) += 1.0;
    }

    // accumulate in sorted order so the scalars are exactly permutation
    // invariant in the sample order
    auto sorted = rep.per_sample;
    std::sort(sorted.begin(), sorted.end());
    const auto n = static_cast<double>(sorted.size());
    double mean_x = 0.0, mean_y = 0.0;
    for (const auto& [x, y] : sorted) {
        mean_x += x;
        mean_y += y;
    }
    rep.mean_region_global = mean_x / n;
    rep.mean_region_text = mean_y / n;
    std::tie(rep.pearson_r, rep.pearson_defined) = pearson_correlation(rep.per_sample);
    return rep;
}

std::pair<double, bool> pearson_correlation(
    const std::vector<std::pair<double, double>>& series) {
    if (series.empty()) return {0.0, false};
    auto sorted = series;
    std::sort(sorted.begin(), sorted.end());
    const auto n = static_cast<double>(sorted.size());
    double mean_x = 0.0, mean_y = 0.0;
    for (const auto& [x, y] : sorted) {
        mean_x += x;
        mean_y += y;
    }
    mean_x /= n;
    mean_y /= n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (const auto& [x, y] : sorted) {
        sxx += (x - mean_x) * (x - mean_x);
        syy += (y - mean_y) * (y - mean_y);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if (!(sxx > 0.0) || !(syy > 0.0)) return {0.0, false};
    const double r = sxy / std::sqrt(sxx * syy);
    if (!std::isfinite(r)) return {0.0, false};
    return {std::clamp(r, -1.0, 1.0), true};
}

void save_retrieval_report(const RetrievalReport& r, const fs::path& path) {
    json j{{"i2t_at_1", r.i2t_at_1}, {"t2i_at_1", r.t2i_at_1}, {"n_queries", r.n_queries}};
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

void save_bbox_report(const BboxReport& r, const fs::path& path) {
    json j{{"top1", r.top1},
           {"top5", r.top5},
           {"n_boxes", r.n_boxes},
           {"class_set", r.class_set},
           {"prompt_template", r.prompt_template}};
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

void save_concordance_report(const ConcordanceReport& r, const fs::path& json_path,
                             const fs::path& csv_path, const fs::path& heatmap_path) {
    {
        json hist = json::array();
        for (Eigen::Index i = 0; i < r.histogram.rows(); ++i) {
            json row = json::array();
            for (Eigen::Index j = 0; j < r.histogram.cols(); ++j) row.push_back(r.histogram(i, j));
            hist.push_back(row);
        }
        json j{{"bins", r.bins},
               {"pearson_r", r.pearson_defined ? json(r.pearson_r) : json(nullptr)},
               {"pearson_defined", r.pearson_defined},
               {"mean_region_global", r.mean_region_global},
               {"mean_region_text", r.mean_region_text},
               {"n_samples", r.per_sample.size()},
               {"histogram", hist}};
        std::ofstream out(json_path);
        if (!out) throw ParseError("cannot write " + json_path.string());
        out << j.dump(2) << '\n';
    }
    if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        if (!out) throw ParseError("cannot write " + csv_path.string());
        out << "cos_region_image_global,cos_region_text_global\n";
        for (const auto& [x, y] : r.per_sample) out << x << ',' << y << '\n';
    }
    if (!heatmap_path.empty()) {
        const double peak = std::max(1.0, r.histogram.maxCoeff());
        const int cell = 16;
        Image img(r.bins * cell, r.bins * cell);
        for (int by = 0; by < r.bins; ++by)
            for (int bx = 0; bx < r.bins; ++bx) {
                // x axis: region-text bin; y axis upward: region-global bin
                const double v = r.histogram(r.bins - 1 - by, bx) / peak;
                for (int y = 0; y < cell; ++y)
                    for (int x = 0; x < cell; ++x) {
                        img.at(0, by * cell + y, bx * cell + x) = v;
                        img.at(1, by * cell + y, bx * cell + x) = v * 0.6;
                        img.at(2, by * cell + y, bx * cell + x) = 1.0 - v;
                    }
            }
        save_png(img, heatmap_path);
    }
}

}  // namespace harmoclip
