// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#include "harmoclip/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace harmoclip {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json parse_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError("malformed JSON in " + path.string() + ": " + e.what(),
                         static_cast<long>(e.byte));
    }
}

bool tokens_match(const std::string& caption_tok, const std::string& cat_tok,
                  bool plural) {
    if (caption_tok == cat_tok) return true;
    if (!plural) return false;
    return caption_tok == cat_tok + "s" || cat_tok == caption_tok + "s";
}

// first contiguous occurrence of the category tokens inside the caption tokens
int find_category(const std::vector<std::string>& caption_tokens,
                  const std::vector<std::string>& cat_tokens, bool plural) {
    if (cat_tokens.empty()) return -1;
    const int n = static_cast<int>(caption_tokens.size());
    const int m = static_cast<int>(cat_tokens.size());
    for (int i = 0; i + m <= n; ++i) {
        bool ok = true;
        for (int j = 0; j < m && ok; ++j)
            ok = tokens_match(caption_tokens[static_cast<size_t>(i + j)],
                              cat_tokens[static_cast<size_t>(j)], plural);
        if (ok) return i;
    }
    return -1;
}

}  // namespace

CorpusManifest build_grounded_corpus(const fs::path& captions_file,
                                     const fs::path& instances_file,
                                     const BuilderOptions& opts) {
    const json captions_doc = parse_json_file(captions_file);
    const json instances_doc = parse_json_file(instances_file);

    struct ImageInfo {
        double width = 0, height = 0;
        std::string file_name;
    };
    std::unordered_map<long, ImageInfo> images;
    if (!instances_doc.contains("images"))
        throw ParseError(instances_file.string() + ": missing images[] (need dimensions)");
    for (const auto& im : instances_doc.at("images")) {
        ImageInfo info;
        info.width = im.at("width").get<double>();
        info.height = im.at("height").get<double>();
        if (im.contains("file_name")) info.file_name = im.at("file_name").get<std::string>();
        images[im.at("id").get<long>()] = info;
    }

    std::unordered_map<long, std::string> categories;
    if (!instances_doc.contains("categories"))
        throw ParseError(instances_file.string() + ": missing categories[]");
    for (const auto& c : instances_doc.at("categories"))
        categories[c.at("id").get<long>()] = c.at("name").get<std::string>();

    struct Instance {
        Bbox box;
        bool box_ok = false;
        std::string category;
    };
    std::map<long, std::vector<Instance>> instances;  // ordered for determinism
    for (const auto& a : instances_doc.at("annotations")) {
        const long image_id = a.at("image_id").get<long>();
        auto img_it = images.find(image_id);
        if (img_it == images.end())
            throw ParseError(instances_file.string() + ": annotation references unknown image " +
                             std::to_string(image_id));
        const auto& bb = a.at("bbox");
        if (!bb.is_array() || bb.size() != 4)
            throw ParseError(instances_file.string() + ": bbox must be [x, y, w, h]");
        Instance inst;
        const double x = bb[0].get<double>(), y = bb[1].get<double>();
        const double w = bb[2].get<double>(), h = bb[3].get<double>();
        // corner form, clamped to the image
        inst.box.x_min = std::clamp(x, 0.0, img_it->second.width);
        inst.box.y_min = std::clamp(y, 0.0, img_it->second.height);
        inst.box.x_max = std::clamp(x + w, 0.0, img_it->second.width);
        inst.box.y_max = std::clamp(y + h, 0.0, img_it->second.height);
        inst.box_ok = inst.box.x_min < inst.box.x_max && inst.box.y_min < inst.box.y_max &&
                      inst.box.area() >= opts.min_box_area;
        const long cat_id = a.at("category_id").get<long>();
        auto cat_it = categories.find(cat_id);
        if (cat_it == categories.end())
            throw ParseError(instances_file.string() + ": unknown category id " +
                             std::to_string(cat_id));
        inst.category = cat_it->second;
        instances[image_id].push_back(std::move(inst));
    }

    struct Caption {
        std::string text;
    };
    std::map<long, std::vector<Caption>> captions;
    long caption_count = 0;
    for (const auto& a : captions_doc.at("annotations")) {
        captions[a.at("image_id").get<long>()].push_back(
            {a.at("caption").get<std::string>()});
        ++caption_count;
    }

    CorpusManifest out;
    std::vector<std::string> texts;
    std::vector<std::string> extra;
    for (const auto& [id, caps] : captions)
        for (const auto& c : caps) texts.push_back(c.text);
    for (const auto& [id, name] : categories) extra.push_back(name);
    extra.insert(extra.end(), {"a", "photo", "of"});
    out.vocab = tokenizer::build_vocab(texts, extra);

    out.stats.captions = caption_count;
    std::set<long> seen_images;

    for (const auto& [image_id, caps] : captions) {
        auto inst_it = instances.find(image_id);
        if (inst_it == instances.end()) continue;
        const auto& img = images.at(image_id);
        seen_images.insert(image_id);

        for (const auto& cap : caps) {
            const auto caption_tokens = tokenizer::split_words(cap.text);
            for (const auto& inst : inst_it->second) {
                // one matching attempt per (caption, instance) pair
                const auto cat_tokens = tokenizer::split_words(inst.category);
                const int pos = find_category(caption_tokens, cat_tokens, opts.plural_match);
                const bool in_window = pos >= 0 && pos < opts.max_text_len - 1;
                if (pos < 0 || !in_window || !inst.box_ok) {
                    ++out.stats.discarded;
                    continue;
                }
                GroundedSample s;
                s.image_id = image_id;
                s.image_ref = img.file_name.empty()
                                  ? "image_" + std::to_string(image_id)
                                  : img.file_name;
                s.caption = cap.text;
                s.tokens = tokenizer::encode(cap.text, out.vocab, opts.max_text_len);
                s.box = inst.box;
                s.word = caption_tokens[static_cast<size_t>(pos)];
                s.token_idx = pos;
                s.class_label = inst.category;
                out.samples.push_back(std::move(s));
                ++out.stats.samples;
            }
        }
    }
    out.stats.images = static_cast<long>(seen_images.size());

    if (out.samples.empty())
        throw EmptyCorpusError("build_grounded_corpus: no caption token matched any instance");
    return out;
}

// --- synthetic corpus --------------------------------------------------------

void SynthConfig::validate() const {
    if (n_images < 1) throw ConfigError("SynthConfig: n_images must be >= 1");
    if (shapes_min < 1 || shapes_max < shapes_min ||
        shapes_max > static_cast<int>(synthetic_shape_names().size()))
        throw ConfigError("SynthConfig: bad shapes range");
    if (box_min < 4 || box_max < box_min || box_max > image_size)
        throw ConfigError("SynthConfig: bad box size range");
    if (image_size < 8) throw ConfigError("SynthConfig: image too small");
    if (plain_caption_images < 0 ||
        plain_caption_images > static_cast<int>(synthetic_shape_names().size()))
        throw ConfigError("SynthConfig: plain_caption_images must be in [0, #shapes]");
    if (!color_words && plain_caption_images > 0)
        throw ConfigError("SynthConfig: colorless captions already name bare shapes; "
                          "plain_caption_images would duplicate them");
}

const std::vector<std::string>& synthetic_shape_names() {
    static const std::vector<std::string> names = {"circle", "square", "triangle",
                                                   "diamond", "cross", "ring",
                                                   "frame",   "checker", "stripes", "dots"};
    return names;
}

const std::vector<std::string>& synthetic_color_names() {
    static const std::vector<std::string> names = {"red", "green", "blue", "yellow"};
    return names;
}

namespace {

struct Rgb {
    uint8_t r, g, b;
};

const Rgb kPalette[4] = {{220, 50, 50}, {60, 190, 80}, {70, 110, 230}, {235, 200, 60}};
const Rgb kBackground = {28, 28, 28};

void put_px(Image& img, int x, int y, Rgb c) {
    img.at(0, y, x) = c.r / 255.0;
    img.at(1, y, x) = c.g / 255.0;
    img.at(2, y, x) = c.b / 255.0;
}

// pixel-center membership tests inside a box of side s at origin (0,0)
bool inside_shape(int shape, int px, int py, int s) {
    const double cx = s / 2.0, cy = s / 2.0;
    const double x = px + 0.5, y = py + 0.5;
    const double r = s / 2.0;
    switch (shape) {
        case 0:  // circle
            return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r;
        case 1:  // square
            return true;
        case 2: {  // triangle, apex up
            const double frac = y / s;  // 0 at top
            const double half = frac * r;
            return std::abs(x - cx) <= half;
        }
        case 3:  // diamond
            return std::abs(x - cx) + std::abs(y - cy) <= r;
        case 4: {  // cross
            const double t = std::max(2.0, s / 3.0) / 2.0;
            return std::abs(x - cx) <= t || std::abs(y - cy) <= t;
        }
        case 5: {  // ring
            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            const double inner = 0.55 * r;
            return d2 <= r * r && d2 >= inner * inner;
        }
        case 6: {  // frame
            const double t = std::max(2.0, s / 5.0);
            return x < t || x > s - t || y < t || y > s - t;
        }
        case 7: {  // checker
            const bool left = x < cx, top = y < cy;
            return left == top;
        }
        case 8: {  // stripes: three horizontal bars
            const int band = static_cast<int>(y * 6.0 / s);
            return band == 0 || band == 2 || band == 4;
        }
        case 9: {  // dots: four filled circles in a 2x2 arrangement
            const double r4 = s / 5.0;
            for (double fy : {0.28, 0.72})
                for (double fx : {0.28, 0.72}) {
                    const double dx = x - fx * s, dy = y - fy * s;
                    if (dx * dx + dy * dy <= r4 * r4) return true;
                }
            return false;
        }
        default:
            return false;
    }
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(uint64_t seed, const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(seed, 0xDA7A));

    struct Placed {
        int shape, color;
        int x0, y0, side;
    };
    struct Rendered {
        Image image;
        std::string caption;
        std::vector<Placed> shapes;
        std::vector<int> word_positions;  // caption token index of each shape word
    };

    const auto& shapes = synthetic_shape_names();
    const auto& colors = synthetic_color_names();

    std::vector<Rendered> rendered;
    std::set<std::string> used_scenes;
    rendered.reserve(static_cast<size_t>(cfg.n_images));

    long samples_so_far = 0;
    for (int img_idx = 0;; ++img_idx) {
        if (cfg.target_samples > 0) {
            if (samples_so_far >= cfg.target_samples) break;
            if (img_idx > 100 * cfg.target_samples)
                throw ConfigError("generate_synthetic_corpus: cannot reach target_samples");
        } else if (img_idx >= cfg.n_images) {
            break;
        }
        const bool plain = img_idx < cfg.plain_caption_images;
        Rendered r;
        for (int attempt = 0; attempt < 5000; ++attempt) {
            r.shapes.clear();
            const int want = plain ? 1 : rng.uniform_int(cfg.shapes_min, cfg.shapes_max);
            // distinct shape kinds so every caption word grounds one region
            std::vector<int> kinds(shapes.size());
            for (size_t i = 0; i < kinds.size(); ++i) kinds[i] = static_cast<int>(i);
            for (size_t i = kinds.size(); i > 1; --i)
                std::swap(kinds[i - 1], kinds[static_cast<size_t>(rng.uniform_int(
                                            0, static_cast<int>(i) - 1))]);
            if (plain) kinds[0] = img_idx;  // one plain scene per shape, in order
            for (int k = 0; k < want && k < static_cast<int>(kinds.size()); ++k) {
                const int side = rng.uniform_int(cfg.box_min, cfg.box_max);
                bool placed = false;
                for (int t = 0; t < 50 && !placed; ++t) {
                    const int x0 = rng.uniform_int(0, cfg.image_size - side);
                    const int y0 = rng.uniform_int(0, cfg.image_size - side);
                    bool overlaps = false;
                    for (const auto& p : r.shapes) {
                        const bool apart = x0 + side <= p.x0 || p.x0 + p.side <= x0 ||
                                           y0 + side <= p.y0 || p.y0 + p.side <= y0;
                        if (!apart) overlaps = true;
                    }
                    if (!overlaps) {
                        r.shapes.push_back({kinds[static_cast<size_t>(k)],
                                            rng.uniform_int(0, static_cast<int>(colors.size()) - 1),
                                            x0, y0, side});
                        placed = true;
                    }
                }
            }
            // retry the whole scene unless every requested shape found a spot
            if (static_cast<int>(r.shapes.size()) != want) {
                r.shapes.clear();
                continue;
            }

            std::vector<std::string> words;
            r.word_positions.clear();
            for (size_t k = 0; k < r.shapes.size(); ++k) {
                if (k > 0) words.push_back("and");
                if (cfg.article_words) words.push_back("a");
                if (!plain && cfg.color_words)
                    words.push_back(colors[static_cast<size_t>(r.shapes[k].color)]);
                r.word_positions.push_back(static_cast<int>(words.size()));
                words.push_back(shapes[static_cast<size_t>(r.shapes[k].shape)]);
            }
            std::string caption;
            for (size_t k = 0; k < words.size(); ++k) {
                if (k > 0) caption += ' ';
                caption += words[k];
            }
            if (cfg.unique_captions) {
                // dedupe scenes as unordered multisets of what the caption can
                // name: the same objects in another order would make retrieval
                // ill-posed
                std::vector<std::pair<int, int>> key;
                for (const auto& p : r.shapes)
                    key.emplace_back(p.shape, cfg.color_words && !plain ? p.color : -1);
                std::sort(key.begin(), key.end());
                std::string key_str = plain ? "plain:" : "";
                for (const auto& [s, c] : key)
                    key_str += std::to_string(s) + ":" + std::to_string(c) + ";";
                if (used_scenes.count(key_str)) continue;
                used_scenes.insert(key_str);
            }
            r.caption = std::move(caption);
            break;
        }
        if (r.caption.empty())
            throw ConfigError("generate_synthetic_corpus: could not place distinct scenes; "
                              "lower n_images or widen the layout");

        r.image = Image(cfg.image_size, cfg.image_size);
        for (int y = 0; y < cfg.image_size; ++y)
            for (int x = 0; x < cfg.image_size; ++x) put_px(r.image, x, y, kBackground);
        for (const auto& p : r.shapes)
            for (int py = 0; py < p.side; ++py)
                for (int px = 0; px < p.side; ++px)
                    if (inside_shape(p.shape, px, py, p.side))
                        put_px(r.image, p.x0 + px, p.y0 + py,
                               kPalette[static_cast<size_t>(p.color)]);
        samples_so_far += static_cast<long>(r.shapes.size());
        rendered.push_back(std::move(r));
    }

    SyntheticCorpus out;
    std::vector<std::string> texts;
    texts.reserve(rendered.size());
    for (const auto& r : rendered) texts.push_back(r.caption);
    std::vector<std::string> extra = {"a", "photo", "of", "and"};
    extra.insert(extra.end(), shapes.begin(), shapes.end());
    extra.insert(extra.end(), colors.begin(), colors.end());
    out.manifest.vocab = tokenizer::build_vocab(texts, extra);

    char ref[32];
    long emitted = 0;
    for (size_t i = 0; i < rendered.size(); ++i) {
        auto& r = rendered[i];
        std::snprintf(ref, sizeof(ref), "synth_%05zu.png", i);
        for (size_t k = 0; k < r.shapes.size(); ++k) {
            // the final image may ground only part of its shapes
            if (cfg.target_samples > 0 && emitted >= cfg.target_samples) break;
            ++emitted;
            const auto& p = r.shapes[k];
            GroundedSample s;
            s.image_id = static_cast<long>(i);
            s.image_ref = ref;
            s.caption = r.caption;
            s.tokens = tokenizer::encode(r.caption, out.manifest.vocab, cfg.max_text_len);
            s.box = {static_cast<double>(p.x0), static_cast<double>(p.y0),
                     static_cast<double>(p.x0 + p.side), static_cast<double>(p.y0 + p.side)};
            s.word = synthetic_shape_names()[static_cast<size_t>(p.shape)];
            s.token_idx = r.word_positions[k];
            s.class_label = s.word;
            out.manifest.samples.push_back(std::move(s));
        }
        out.images.push_back(std::move(r.image));
    }
    out.manifest.stats.images = static_cast<long>(out.images.size());
    out.manifest.stats.captions = static_cast<long>(out.images.size());
    out.manifest.stats.samples = static_cast<long>(out.manifest.samples.size());
    out.manifest.stats.discarded = 0;
    return out;
}

// --- persistence -------------------------------------------------------------

namespace {
constexpr int kSchemaVersion = 1;
}

void save_manifest(const CorpusManifest& manifest, const fs::path& dir) {
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "manifest.jsonl");
        if (!out) throw ParseError("save_manifest: cannot write manifest.jsonl");
        for (const auto& s : manifest.samples) {
            json j{{"image_ref", s.image_ref},
                   {"image_id", s.image_id},
                   {"caption", s.caption},
                   {"tokens", {{"ids", s.tokens.ids}, {"eot_index", s.tokens.eot_index}}},
                   {"box", {s.box.x_min, s.box.y_min, s.box.x_max, s.box.y_max}},
                   {"word", s.word},
                   {"token_idx", s.token_idx},
                   {"class_label", s.class_label}};
            out << j.dump() << '\n';
        }
    }
    {
        json v{{"schema_version", kSchemaVersion}, {"words", manifest.vocab.words()}};
        std::ofstream out(dir / "vocab.json");
        out << v.dump(2) << '\n';
    }
    {
        json st{{"schema_version", kSchemaVersion},
                {"images", manifest.stats.images},
                {"captions", manifest.stats.captions},
                {"samples", manifest.stats.samples},
                {"discarded", manifest.stats.discarded}};
        std::ofstream out(dir / "stats.json");
        out << st.dump(2) << '\n';
    }
}

CorpusManifest load_manifest(const fs::path& dir) {
    CorpusManifest m;
    {
        const json v = parse_json_file(dir / "vocab.json");
        if (v.at("schema_version").get<int>() != kSchemaVersion)
            throw ParseError("load_manifest: unsupported vocab schema version");
        const auto words = v.at("words").get<std::vector<std::string>>();
        for (size_t i = SpecialTokens::first_word; i < words.size(); ++i) m.vocab.add(words[i]);
    }
    {
        const json st = parse_json_file(dir / "stats.json");
        m.stats.images = st.at("images").get<long>();
        m.stats.captions = st.at("captions").get<long>();
        m.stats.samples = st.at("samples").get<long>();
        m.stats.discarded = st.at("discarded").get<long>();
    }
    std::ifstream in(dir / "manifest.jsonl");
    if (!in) throw ParseError("load_manifest: cannot open manifest.jsonl");
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError("manifest.jsonl line " + std::to_string(line_no) + ": " + e.what(),
                             static_cast<long>(e.byte));
        }
        GroundedSample s;
        s.image_ref = j.at("image_ref").get<std::string>();
        s.image_id = j.at("image_id").get<long>();
        s.caption = j.at("caption").get<std::string>();
        s.tokens.ids = j.at("tokens").at("ids").get<std::vector<int>>();
        s.tokens.eot_index = j.at("tokens").at("eot_index").get<int>();
        const auto& b = j.at("box");
        s.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
        s.word = j.at("word").get<std::string>();
        s.token_idx = j.at("token_idx").get<int>();
        s.class_label = j.at("class_label").get<std::string>();
        m.samples.push_back(std::move(s));
    }
    return m;
}

void save_corpus_images(const SyntheticCorpus& corpus, const fs::path& dir) {
    fs::create_directories(dir);
    std::set<std::string> written;
    for (const auto& s : corpus.manifest.samples) {
        if (written.count(s.image_ref)) continue;
        written.insert(s.image_ref);
        save_png(corpus.images.at(static_cast<size_t>(s.image_id)), dir / s.image_ref);
    }
}

// --- image store -------------------------------------------------------------

ImageStore ImageStore::in_memory(std::vector<Image> images) {
    ImageStore s;
    s.memory_ = std::move(images);
    return s;
}

ImageStore ImageStore::directory(fs::path root) {
    ImageStore s;
    s.root_ = std::move(root);
    s.from_disk_ = true;
    return s;
}

const Image& ImageStore::get(const GroundedSample& sample) const {
    if (!from_disk_) {
        if (sample.image_id < 0 || sample.image_id >= static_cast<long>(memory_.size()))
            throw InputError("ImageStore: image_id " + std::to_string(sample.image_id) +
                             " not in memory table");
        return memory_[static_cast<size_t>(sample.image_id)];
    }
    auto it = cache_.find(sample.image_ref);
    if (it == cache_.end())
        it = cache_.emplace(sample.image_ref, load_png(root_ / sample.image_ref)).first;
    return it->second;
}

// --- batching ----------------------------------------------------------------

BatchStream::BatchStream(const CorpusManifest& corpus, int batch_size, uint64_t seed)
    : n_samples_(static_cast<long>(corpus.samples.size())), batch_size_(batch_size),
      seed_(seed) {
    if (n_samples_ < 1) throw InputError("BatchStream: empty corpus");
    if (batch_size < 2)
        throw ConfigError("BatchStream: batch_size must be >= 2 (contrastive losses need "
                          "in-batch negatives)");
}

std::vector<Batch> BatchStream::epoch(int epoch_index) const {
    std::vector<int> order(static_cast<size_t>(n_samples_));
    for (long i = 0; i < n_samples_; ++i) order[static_cast<size_t>(i)] = static_cast<int>(i);
    Rng rng(derive_seed(seed_, 0xBA7C000 + static_cast<uint64_t>(epoch_index)));
    for (long i = n_samples_; i > 1; --i)
        std::swap(order[static_cast<size_t>(i - 1)],
                  order[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);

    std::vector<Batch> batches;
    for (long start = 0; start < n_samples_; start += batch_size_) {
        Batch b;
        const long end = std::min<long>(start + batch_size_, n_samples_);
        b.indices.assign(order.begin() + start, order.begin() + end);
        batches.push_back(std::move(b));
    }
    return batches;
}

long BatchStream::batches_per_epoch() const {
    return (n_samples_ + batch_size_ - 1) / batch_size_;
}

}  // namespace harmoclip
