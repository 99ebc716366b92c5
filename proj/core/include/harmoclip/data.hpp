// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "harmoclip/image.hpp"
#include "harmoclip/region_ops.hpp"
#include "harmoclip/rng.hpp"
#include "harmoclip/tokenizer.hpp"

namespace harmoclip {

/// One training record: an image, its caption, one box and the caption word
/// grounded in it.
struct GroundedSample {
    std::string image_ref;
    long image_id = 0;
    std::string caption;
    TokenSequence tokens;
    Bbox box;
    std::string word;       // the caption token at token_idx
    int token_idx = 0;      // position of the grounded word's token
    std::string class_label;  // ground-truth class (category / shape name)
};

struct CorpusStats {
    long images = 0;
    long captions = 0;
    long samples = 0;
    long discarded = 0;
};

struct CorpusManifest {
    std::vector<GroundedSample> samples;
    Vocabulary vocab;
    CorpusStats stats;
};

// --- COCO-style merge -------------------------------------------------------

struct BuilderOptions {
    int max_text_len = 32;
    double min_box_area = 1.0;
    bool plural_match = false;  // also accept trailing-s plural forms
};

/// Merges caption and instance annotation files: one sample per caption whose
/// tokens contain an instance's category label; unmatched instances are
/// discarded and counted. Boxes arrive as (x, y, w, h) and leave as clamped
/// corners.
CorpusManifest build_grounded_corpus(const std::filesystem::path& captions_file,
                                     const std::filesystem::path& instances_file,
                                     const BuilderOptions& opts = {});

// --- synthetic shape-world corpus -------------------------------------------

struct SynthConfig {
    int n_images = 200;
    int target_samples = 0;  // > 0: add images until exactly this many samples
                             // (n_images then ignored)
    int image_size = 32;
    int shapes_min = 1;
    int shapes_max = 3;
    int box_min = 10;  // shape bounding box side, pixels
    int box_max = 16;
    int max_text_len = 32;
    bool unique_captions = true;
    // Leading single-shape images captioned "a {shape}" (at most one per
    // shape). Grounds the bare class names used by zero-shot prompts.
    int plain_caption_images = 0;
    // With colors off, captions name shapes only ("a circle and a square");
    // shapes still render in random colors. Keeps lexeme contexts of one
    // class near-identical, which class-level region supervision needs.
    bool color_words = true;
    // With articles off as well, captions are bare shape lists
    // ("circle and square"), so a bare class name is itself a caption-shaped
    // sequence.
    bool article_words = true;

    void validate() const;
};

struct SyntheticCorpus {
    CorpusManifest manifest;
    std::vector<Image> images;  // indexed by image_id
};

const std::vector<std::string>& synthetic_shape_names();  // the class set
const std::vector<std::string>& synthetic_color_names();

/// Renders images of 1-3 colored shapes with template captions and exact
/// boxes. Deterministic per seed; colors are exact 8-bit values so PNG round
/// trips are lossless.
SyntheticCorpus generate_synthetic_corpus(uint64_t seed, const SynthConfig& cfg = {});

// --- manifest persistence ----------------------------------------------------

/// Writes manifest.jsonl (one sample per line), vocab.json and stats.json
/// into dir.
void save_manifest(const CorpusManifest& manifest, const std::filesystem::path& dir);
CorpusManifest load_manifest(const std::filesystem::path& dir);
void save_corpus_images(const SyntheticCorpus& corpus, const std::filesystem::path& dir);

// --- image resolution --------------------------------------------------------

/// Resolves a sample to its pixels: either an in-memory table keyed by
/// image_id or a directory of PNGs keyed by image_ref (cached on first load).
class ImageStore {
public:
    static ImageStore in_memory(std::vector<Image> images);
    static ImageStore directory(std::filesystem::path root);

    const Image& get(const GroundedSample& sample) const;

private:
    ImageStore() = default;
    std::vector<Image> memory_;
    std::filesystem::path root_;
    bool from_disk_ = false;
    mutable std::map<std::string, Image> cache_;
};

// --- batching ----------------------------------------------------------------

struct Batch {
    std::vector<int> indices;  // rows into CorpusManifest::samples
};

/// Seeded epoch shuffling; the short final batch is kept. Epoch k's order is
/// a pure function of (seed, k).
class BatchStream {
public:
    BatchStream(const CorpusManifest& corpus, int batch_size, uint64_t seed);

    std::vector<Batch> epoch(int epoch_index) const;
    long batches_per_epoch() const;
    int batch_size() const { return batch_size_; }

private:
    long n_samples_;
    int batch_size_;
    uint64_t seed_;
};

}  // namespace harmoclip
