// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "harmoclip/data.hpp"

using namespace harmoclip;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p);
    out << content;
}

// 3 images, 5 captions, 7 instances. Known outcomes:
//   img 1: caption "a dog chases a cat" x {dog, cat, bicycle} -> dog + cat samples,
//          bicycle discarded; caption "the dog runs" x {dog, cat, bicycle} ->
//          dog sample, cat and bicycle discarded
//   img 2: caption "a person rides" x {bicycle} -> discarded
//          caption "a red traffic light" x {traffic light, person} ->
//          multi-word match at token 2, person discarded
//   img 3: caption "two dogs play" x {dog, dog} -> no exact match (plural), 2 discards
const char* kCaptionsJson = R"({
  "annotations": [
    {"image_id": 1, "caption": "a dog chases a cat"},
    {"image_id": 1, "caption": "the dog runs"},
    {"image_id": 2, "caption": "a person rides"},
    {"image_id": 2, "caption": "a red traffic light"},
    {"image_id": 3, "caption": "two dogs play"}
  ]
})";

const char* kInstancesJson = R"({
  "images": [
    {"id": 1, "width": 64, "height": 64, "file_name": "im1.png"},
    {"id": 2, "width": 64, "height": 64, "file_name": "im2.png"},
    {"id": 3, "width": 64, "height": 64, "file_name": "im3.png"}
  ],
  "categories": [
    {"id": 10, "name": "dog"},
    {"id": 11, "name": "cat"},
    {"id": 12, "name": "bicycle"},
    {"id": 13, "name": "traffic light"},
    {"id": 14, "name": "person"}
  ],
  "annotations": [
    {"image_id": 1, "bbox": [4, 4, 16, 16], "category_id": 10},
    {"image_id": 1, "bbox": [30, 30, 20, 20], "category_id": 11},
    {"image_id": 1, "bbox": [2, 2, 8, 8], "category_id": 12},
    {"image_id": 2, "bbox": [0, 0, 10, 10], "category_id": 12},
    {"image_id": 2, "bbox": [50, 50, 30, 30], "category_id": 13},
    {"image_id": 3, "bbox": [1, 1, 5, 5], "category_id": 10},
    {"image_id": 3, "bbox": [10, 10, 5, 5], "category_id": 10}
  ]
})";

}  // namespace

TEST_CASE("tokenizer: words, casing, punctuation, truncation") {
    auto words = tokenizer::split_words("A Dog, chases  the cat!");
    CHECK(words == std::vector<std::string>{"a", "dog", "chases", "the", "cat"});

    Vocabulary vocab = tokenizer::build_vocab({"a dog chases a cat"});
    CHECK(vocab.contains("dog"));
    CHECK(vocab.id("zebra") == SpecialTokens::unk);

    auto seq = tokenizer::encode("a dog chases a cat", vocab, 32);
    CHECK(seq.length() == 6);
    CHECK(seq.eot_index == 5);
    CHECK(seq.ids[5] == SpecialTokens::eot);
    CHECK(seq.ids[1] == vocab.id("dog"));
    CHECK_NOTHROW(seq.validate(vocab.size(), 32));

    auto truncated = tokenizer::encode("a dog chases a cat", vocab, 4);
    CHECK(truncated.length() == 4);
    CHECK(truncated.eot_index == 3);
}

TEST_CASE("build_grounded_corpus: mini fixture with known matches") {
    TempDir dir("hclp_coco_fixture");
    write_file(dir.path / "captions.json", kCaptionsJson);
    write_file(dir.path / "instances.json", kInstancesJson);

    const auto corpus =
        build_grounded_corpus(dir.path / "captions.json", dir.path / "instances.json");

    // dog+cat from caption 1, dog from caption 2, traffic-light from image 2
    REQUIRE(corpus.samples.size() == 4);
    CHECK(corpus.stats.samples == 4);
    CHECK(corpus.stats.images == 3);
    CHECK(corpus.stats.captions == 5);
    // attempts: img1: 2 captions x 3 instances = 6; img2: 2 x 2 = 4; img3: 1 x 2 = 2
    CHECK(corpus.stats.discarded == 12 - 4);

    const auto& s0 = corpus.samples[0];
    CHECK(s0.word == "dog");
    CHECK(s0.token_idx == 1);  // "a dog chases a cat"
    CHECK(s0.caption == "a dog chases a cat");
    CHECK(s0.box.x_min == 4.0);
    CHECK(s0.box.x_max == 20.0);  // (x, y, w, h) -> corners
    CHECK(s0.class_label == "dog");
    CHECK(s0.tokens.ids[s0.token_idx] == corpus.vocab.id("dog"));

    const auto& s1 = corpus.samples[1];
    CHECK(s1.word == "cat");
    CHECK(s1.token_idx == 4);

    const auto& s2 = corpus.samples[2];
    CHECK(s2.caption == "the dog runs");
    CHECK(s2.token_idx == 1);

    const auto& s3 = corpus.samples[3];
    CHECK(s3.class_label == "traffic light");
    CHECK(s3.word == "traffic");  // first token of the multi-word label
    CHECK(s3.token_idx == 2);     // "a red traffic light"
    CHECK(s3.box.x_max == 64.0);  // clamped from 50+30
    CHECK(s3.box.y_max == 64.0);

    // deterministic across runs
    const auto again =
        build_grounded_corpus(dir.path / "captions.json", dir.path / "instances.json");
    REQUIRE(again.samples.size() == corpus.samples.size());
    for (size_t i = 0; i < again.samples.size(); ++i) {
        CHECK(again.samples[i].caption == corpus.samples[i].caption);
        CHECK(again.samples[i].token_idx == corpus.samples[i].token_idx);
        CHECK(again.samples[i].tokens.ids == corpus.samples[i].tokens.ids);
    }
}

TEST_CASE("build_grounded_corpus: plural flag recovers 'dogs'") {
    TempDir dir("hclp_coco_plural");
    write_file(dir.path / "captions.json", kCaptionsJson);
    write_file(dir.path / "instances.json", kInstancesJson);
    BuilderOptions opts;
    opts.plural_match = true;
    const auto corpus =
        build_grounded_corpus(dir.path / "captions.json", dir.path / "instances.json", opts);
    CHECK(corpus.samples.size() == 6);  // + two 'dogs' matches on image 3
}

TEST_CASE("build_grounded_corpus: error paths") {
    TempDir dir("hclp_coco_errors");
    write_file(dir.path / "bad.json", "{not json");
    write_file(dir.path / "captions.json", kCaptionsJson);
    write_file(dir.path / "instances.json", kInstancesJson);
    CHECK_THROWS_AS(build_grounded_corpus(dir.path / "bad.json", dir.path / "instances.json"),
                    ParseError);

    // no overlap between caption tokens and categories -> empty corpus
    write_file(dir.path / "captions2.json",
               R"({"annotations": [{"image_id": 1, "caption": "nothing matches here"}]})");
    CHECK_THROWS_AS(
        build_grounded_corpus(dir.path / "captions2.json", dir.path / "instances.json"),
        EmptyCorpusError);
}

TEST_CASE("synthetic corpus: determinism, counts, geometry oracle") {
    SynthConfig cfg;
    cfg.n_images = 12;
    cfg.shapes_min = 2;
    cfg.shapes_max = 2;
    const auto a = generate_synthetic_corpus(99, cfg);
    const auto b = generate_synthetic_corpus(99, cfg);

    CHECK(a.manifest.samples.size() == 24);  // n_images x shapes
    CHECK(a.images.size() == 12);

    // byte-identical across runs
    REQUIRE(b.manifest.samples.size() == a.manifest.samples.size());
    for (size_t i = 0; i < a.manifest.samples.size(); ++i) {
        CHECK(a.manifest.samples[i].caption == b.manifest.samples[i].caption);
        CHECK(a.manifest.samples[i].box.x_min == b.manifest.samples[i].box.x_min);
        CHECK(a.manifest.samples[i].token_idx == b.manifest.samples[i].token_idx);
    }
    for (size_t i = 0; i < a.images.size(); ++i) CHECK(a.images[i].px == b.images[i].px);

    const auto c = generate_synthetic_corpus(100, cfg);
    bool any_diff = false;
    for (size_t i = 0; i < a.images.size() && !any_diff; ++i)
        any_diff = a.images[i].px != c.images[i].px;
    CHECK(any_diff);

    // token_idx points at the grounded word
    for (const auto& s : a.manifest.samples) {
        CHECK(s.tokens.ids[static_cast<size_t>(s.token_idx)] == a.manifest.vocab.id(s.word));
        const auto words = tokenizer::split_words(s.caption);
        CHECK(words[static_cast<size_t>(s.token_idx)] == s.word);
    }

    // renderer oracle: inside each box only background or the shape's color;
    // shapes never leak outside their boxes
    for (const auto& s : a.manifest.samples) {
        const Image& img = a.images[static_cast<size_t>(s.image_id)];
        int colored = 0;
        for (int y = static_cast<int>(s.box.y_min); y < static_cast<int>(s.box.y_max); ++y)
            for (int x = static_cast<int>(s.box.x_min); x < static_cast<int>(s.box.x_max);
                 ++x) {
                const double r = img.at(0, y, x), g = img.at(1, y, x), bl = img.at(2, y, x);
                const bool is_bg = r == 28 / 255.0 && g == 28 / 255.0 && bl == 28 / 255.0;
                if (!is_bg) ++colored;
            }
        CHECK(colored > 0);
    }
}

TEST_CASE("synthetic corpus: captions are unique") {
    SynthConfig cfg;
    cfg.n_images = 40;
    const auto c = generate_synthetic_corpus(7, cfg);
    std::set<std::string> captions;
    for (const auto& s : c.manifest.samples) captions.insert(s.caption);
    std::set<long> ids;
    for (const auto& s : c.manifest.samples) ids.insert(s.image_id);
    CHECK(captions.size() == ids.size());
}

TEST_CASE("manifest round trip through JSONL") {
    TempDir dir("hclp_manifest_rt");
    SynthConfig cfg;
    cfg.n_images = 6;
    const auto corpus = generate_synthetic_corpus(3, cfg);
    save_manifest(corpus.manifest, dir.path);
    save_corpus_images(corpus, dir.path / "images");

    const auto back = load_manifest(dir.path);
    REQUIRE(back.samples.size() == corpus.manifest.samples.size());
    CHECK(back.stats.samples == corpus.manifest.stats.samples);
    CHECK(back.vocab.words() == corpus.manifest.vocab.words());
    for (size_t i = 0; i < back.samples.size(); ++i) {
        CHECK(back.samples[i].caption == corpus.manifest.samples[i].caption);
        CHECK(back.samples[i].tokens.ids == corpus.manifest.samples[i].tokens.ids);
        CHECK(back.samples[i].box.y_max == corpus.manifest.samples[i].box.y_max);
    }

    // PNG round trip is lossless for the quantized renderer palette
    auto store = ImageStore::directory(dir.path / "images");
    const auto& reloaded = store.get(back.samples[0]);
    const auto& original = corpus.images[static_cast<size_t>(back.samples[0].image_id)];
    CHECK(reloaded.px == original.px);
}

TEST_CASE("batching: partition, determinism, short tail") {
    SynthConfig cfg;
    cfg.n_images = 50;
    cfg.shapes_min = cfg.shapes_max = 2;  // exactly 100 samples
    cfg.box_min = 8;
    cfg.box_max = 12;
    const auto corpus = generate_synthetic_corpus(1, cfg);

    CHECK_THROWS_AS(BatchStream(corpus.manifest, 1, 0), ConfigError);

    BatchStream stream(corpus.manifest, 16, 42);
    CHECK(stream.batches_per_epoch() == 7);  // 6 x 16 + 1 x 4
    const auto batches = stream.epoch(0);
    REQUIRE(batches.size() == 7);
    CHECK(batches.back().indices.size() == 4);

    std::set<int> seen;
    for (const auto& b : batches)
        for (int i : b.indices) CHECK(seen.insert(i).second);  // no duplicates
    CHECK(seen.size() == 100);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == 99);

    // same (seed, epoch) -> same order; different epoch -> different order
    BatchStream stream2(corpus.manifest, 16, 42);
    CHECK(stream2.epoch(0)[0].indices == batches[0].indices);
    CHECK(stream2.epoch(3)[0].indices == stream.epoch(3)[0].indices);
    CHECK(stream.epoch(1)[0].indices != batches[0].indices);
}
