// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "harmoclip/data.hpp"
#include "harmoclip/model.hpp"

namespace harmoclip {

// --- cross-modal retrieval ----------------------------------------------------

struct RetrievalReport {
    double i2t_at_1 = 0.0;
    double t2i_at_1 = 0.0;
    long n_queries = 0;
};

struct RetrievalEvalSet {
    std::vector<Image> images;              // unique images
    std::vector<TokenSequence> captions;
    std::vector<int> caption_to_image;      // ground-truth pairing
};

RetrievalEvalSet retrieval_set_from_corpus(const CorpusManifest& corpus,
                                           const ImageStore& store);

/// Cosine ranking core, ties broken by lower index. An image-to-text query
/// counts as a hit when any of the image's captions lands at rank 1.
RetrievalReport rank_retrieval(const Mat& image_embs, const Mat& text_embs,
                               const std::vector<int>& caption_to_image);

RetrievalReport eval_retrieval(const Model& model, const RetrievalEvalSet& eval_set);

// --- zero-shot bounding-box classification ------------------------------------

struct BboxReport {
    double top1 = 0.0;
    double top5 = 0.0;
    long n_boxes = 0;
    std::vector<std::string> class_set;
    std::string prompt_template;
};

/// Ranking core over precomputed embeddings; labels index class_embs rows.
std::pair<double, double> classify_regions(const Mat& region_embs, const Mat& class_embs,
                                           const std::vector<int>& labels);

/// Text side embeds prompt_template("{class}" substituted) globally per class;
/// region side pools dense features over each ground-truth box.
BboxReport eval_bbox_classification(const Model& model, const CorpusManifest& eval_corpus,
                                    const ImageStore& store,
                                    const std::vector<std::string>& class_names,
                                    const std::string& prompt_template = "a photo of a {class}");

// --- semantic-space concordance -----------------------------------------------

struct ConcordanceReport {
    // per sample: (cos(region, image global), cos(region, caption global))
    std::vector<std::pair<double, double>> per_sample;
    Mat histogram;  // bins x bins over [-1,1]^2; total mass = sample count
    int bins = 10;
    double pearson_r = 0.0;
    bool pearson_defined = false;  // false on zero-variance series
    double mean_region_global = 0.0;
    double mean_region_text = 0.0;
};

/// (r, defined). Zero-variance series report (0, false) rather than NaN.
std::pair<double, bool> pearson_correlation(
    const std::vector<std::pair<double, double>>& series);

ConcordanceReport analyze_concordance(const Model& model, const CorpusManifest& corpus,
                                      const ImageStore& store, int bins = 10);

// --- report files --------------------------------------------------------------

void save_retrieval_report(const RetrievalReport& r, const std::filesystem::path& path);
void save_bbox_report(const BboxReport& r, const std::filesystem::path& path);
/// JSON report; optionally a CSV of the per-sample cosine pairs and a rendered
/// heatmap PNG of the concordance matrix.
void save_concordance_report(const ConcordanceReport& r, const std::filesystem::path& json_path,
                             const std::filesystem::path& csv_path = {},
                             const std::filesystem::path& heatmap_path = {});

}  // namespace harmoclip
