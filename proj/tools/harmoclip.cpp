// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0
//
// Single entry point wiring the library into reproducible experiments:
//   gen-synth, build-data, train, eval-retrieval, eval-bbox, analyze,
//   ablate, stage2.
// Every run writes out_dir/config.json with the fully resolved settings so
// (snapshot, seed) reproduces it.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include "harmoclip/data.hpp"
#include "harmoclip/eval.hpp"
#include "harmoclip/model.hpp"
#include "harmoclip/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace harmoclip;

namespace {

// ---------------------------------------------------------------------------
// key = value config files with CLI overrides
// ---------------------------------------------------------------------------

class Settings {
public:
    void load_file(const fs::path& path) {
        std::ifstream in(path);
        if (!in) throw ParseError("config: cannot open " + path.string());
        std::string line;
        long line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            const auto trim = [](std::string s) {
                const auto a = s.find_first_not_of(" \t\r");
                if (a == std::string::npos) return std::string();
                const auto b = s.find_last_not_of(" \t\r");
                return s.substr(a, b - a + 1);
            };
            if (trim(line).empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ParseError("config: expected key = value at " + path.string() + ":" +
                                 std::to_string(line_no));
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    void apply_overrides(const std::vector<std::string>& kvs) {
        for (const auto& kv : kvs) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos)
                throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
            set(kv.substr(0, eq), kv.substr(eq + 1));
        }
    }

    std::string str(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }
    long integer(const std::string& key, long fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            return std::stol(it->second);
        } catch (...) {
            throw ConfigError("config: " + key + " must be an integer, got '" + it->second +
                              "'");
        }
    }
    double real(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            return std::stod(it->second);
        } catch (...) {
            throw ConfigError("config: " + key + " must be a number, got '" + it->second +
                              "'");
        }
    }
    bool boolean(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ConfigError("config: " + key + " must be true/false");
    }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

LossMask parse_loss_mask(const std::string& text) {
    LossMask m{false, false, false};
    std::string token;
    auto flush = [&] {
        if (token.empty()) return;
        if (token == "gc")
            m.gc = true;
        else if (token == "lrc")
            m.lrc = true;
        else if (token == "gr")
            m.gr = true;
        else
            throw ConfigError("loss mask: unknown term '" + token + "' (want gc|lrc|gr)");
        token.clear();
    };
    for (char c : text) {
        if (c == '+' || c == ',' || c == ' ')
            flush();
        else
            token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    flush();
    if (!m.any()) throw ConfigError("loss mask: empty");
    return m;
}

struct RunContext {
    fs::path out_dir;
    Settings settings;
    uint64_t seed = 0;
    std::string subcommand;
    fs::path config_path;

    fs::path reports_dir() const { return out_dir / "reports"; }

    void write_snapshot(const json& extras = json::object()) const {
        json j;
        j["subcommand"] = subcommand;
        j["seed"] = seed;
        j["out_dir"] = out_dir.string();
        if (!config_path.empty()) j["config_path"] = config_path.string();
        json vals = json::object();
        for (const auto& [k, v] : settings.values()) vals[k] = v;
        j["settings"] = vals;
        for (auto it = extras.begin(); it != extras.end(); ++it) j[it.key()] = it.value();
        std::ofstream out(out_dir / "config.json");
        if (!out) throw ParseError("cannot write " + (out_dir / "config.json").string());
        out << j.dump(2) << '\n';
    }
};

// common flags for every subcommand
struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    std::optional<uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key = value config file");
    cmd->add_option("--set", args.overrides, "override KEY=VALUE (repeatable)")
        ->take_all();
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "root random seed");
}

RunContext make_context(const CommonArgs& args, const std::string& subcommand) {
    RunContext ctx;
    ctx.subcommand = subcommand;
    if (!args.config_path.empty()) {
        ctx.config_path = args.config_path;
        ctx.settings.load_file(args.config_path);
    }
    ctx.settings.apply_overrides(args.overrides);
    if (args.seed) ctx.settings.set("seed", std::to_string(*args.seed));
    ctx.seed = static_cast<uint64_t>(ctx.settings.integer("seed", 0));

    std::string out = args.out_dir;
    if (out.empty()) {
        if (const char* env = std::getenv("HARMOCLIP_OUT_DIR")) out = env;
    }
    if (out.empty()) throw ConfigError("no output directory: pass --out or set HARMOCLIP_OUT_DIR");
    ctx.out_dir = out;
    fs::create_directories(ctx.out_dir);
    fs::create_directories(ctx.reports_dir());
    return ctx;
}

// ---------------------------------------------------------------------------
// shared pieces
// ---------------------------------------------------------------------------

SynthConfig synth_config_from(const Settings& s) {
    SynthConfig c;
    c.n_images = static_cast<int>(s.integer("data.n_images", c.n_images));
    c.target_samples = static_cast<int>(s.integer("data.target_samples", c.target_samples));
    c.plain_caption_images = static_cast<int>(
        s.integer("data.plain_caption_images", c.plain_caption_images));
    c.image_size = static_cast<int>(s.integer("data.image_size", c.image_size));
    c.shapes_min = static_cast<int>(s.integer("data.shapes_min", c.shapes_min));
    c.shapes_max = static_cast<int>(s.integer("data.shapes_max", c.shapes_max));
    c.box_min = static_cast<int>(s.integer("data.box_min", c.box_min));
    c.box_max = static_cast<int>(s.integer("data.box_max", c.box_max));
    c.color_words = s.boolean("data.color_words", c.color_words);
    c.article_words = s.boolean("data.article_words", c.article_words);
    c.max_text_len = static_cast<int>(s.integer("model.max_text_len", c.max_text_len));
    return c;
}

ModelConfig model_config_from(const Settings& s, int vocab_size) {
    ModelConfig c;
    c.image_size = static_cast<int>(s.integer("model.image_size", 32));
    c.patch_size = static_cast<int>(s.integer("model.patch_size", 8));
    c.img_blocks = static_cast<int>(s.integer("model.img_blocks", 2));
    c.txt_blocks = static_cast<int>(s.integer("model.txt_blocks", 2));
    c.d_model = static_cast<int>(s.integer("model.d_model", 64));
    c.embed_dim = static_cast<int>(s.integer("model.embed_dim", c.d_model));
    c.num_heads = static_cast<int>(s.integer("model.num_heads", 4));
    c.max_text_len = static_cast<int>(s.integer("model.max_text_len", 32));
    c.mlp_ratio = static_cast<int>(s.integer("model.mlp_ratio", 4));
    c.vocab_size =
        std::max<int>(static_cast<int>(s.integer("model.vocab_size", 0)), vocab_size);
    c.log_tau_init = s.real("model.log_tau_init", c.log_tau_init);
    return c;
}

TrainConfig train_config_from(const Settings& s, uint64_t seed) {
    TrainConfig c;
    c.lr = s.real("train.lr", c.lr);
    c.weight_decay = s.real("train.weight_decay", c.weight_decay);
    c.beta1 = s.real("train.beta1", c.beta1);
    c.beta2 = s.real("train.beta2", c.beta2);
    c.eps = s.real("train.eps", c.eps);
    c.epochs = static_cast<int>(s.integer("train.epochs", c.epochs));
    c.warmup_steps = static_cast<int>(s.integer("train.warmup_steps", c.warmup_steps));
    c.batch_size = static_cast<int>(s.integer("train.batch_size", c.batch_size));
    c.unlocked_layers =
        static_cast<int>(s.integer("train.unlocked_layers", c.unlocked_layers));
    c.loss_mask = parse_loss_mask(s.str("train.loss_mask", "gc+lrc+gr"));
    c.grad_clip = s.real("train.grad_clip", c.grad_clip);
    c.max_steps = s.integer("train.max_steps", c.max_steps);
    c.checkpoint_every = static_cast<int>(s.integer("train.checkpoint_every", 0));
    c.separate_lrc_temperature = s.boolean("train.separate_lrc_tau", false);
    c.tau_max = s.real("train.tau_max", c.tau_max);
    c.seed = seed;
    return c;
}

struct LoadedData {
    CorpusManifest manifest;
    ImageStore store;
};

LoadedData load_data(const fs::path& dir) {
    auto manifest = load_manifest(dir);
    if (manifest.samples.empty()) throw EmptyCorpusError("no samples in " + dir.string());
    return {std::move(manifest), ImageStore::directory(dir / "images")};
}

std::vector<std::string> class_set_of(const CorpusManifest& m) {
    std::set<std::string> labels;
    for (const auto& s : m.samples) labels.insert(s.class_label);
    return {labels.begin(), labels.end()};
}

struct EvalPair {
    RetrievalReport retrieval;
    BboxReport bbox;
};

EvalPair run_eval(const Model& model, const LoadedData& data, const Settings& s) {
    EvalPair out;
    out.retrieval = eval_retrieval(model, retrieval_set_from_corpus(data.manifest, data.store));
    out.bbox = eval_bbox_classification(model, data.manifest, data.store,
                                        class_set_of(data.manifest),
                                        s.str("eval.prompt_template", "a photo of a {class}"));
    return out;
}

json eval_to_json(const EvalPair& e) {
    return json{{"i2t_at_1", e.retrieval.i2t_at_1},
                {"t2i_at_1", e.retrieval.t2i_at_1},
                {"bbox_top1", e.bbox.top1},
                {"bbox_top5", e.bbox.top5}};
}

Model build_or_load_model(const RunContext& ctx, const std::string& init_checkpoint,
                          int vocab_size) {
    if (!init_checkpoint.empty()) return Model::load(init_checkpoint);
    return Model(model_config_from(ctx.settings, vocab_size),
                 derive_seed(ctx.seed, 0x1717));
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_gen_synth(const CommonArgs& common) {
    auto ctx = make_context(common, "gen-synth");
    const auto cfg = synth_config_from(ctx.settings);
    const auto corpus = generate_synthetic_corpus(derive_seed(ctx.seed, 0xDA7A5EED), cfg);
    const auto data_dir = ctx.out_dir / "data";
    save_manifest(corpus.manifest, data_dir);
    save_corpus_images(corpus, data_dir / "images");
    ctx.write_snapshot({{"data_dir", data_dir.string()}});
    std::cout << "wrote " << corpus.manifest.samples.size() << " samples over "
              << corpus.images.size() << " images to " << data_dir << "\n";
    return 0;
}

int cmd_build_data(const CommonArgs& common, const std::string& captions,
                   const std::string& instances) {
    auto ctx = make_context(common, "build-data");
    BuilderOptions opts;
    opts.max_text_len = static_cast<int>(ctx.settings.integer("model.max_text_len", 32));
    opts.min_box_area = ctx.settings.real("data.min_box_area", 1.0);
    opts.plural_match = ctx.settings.boolean("data.plural_match", false);
    const auto corpus = build_grounded_corpus(captions, instances, opts);
    const auto data_dir = ctx.out_dir / "data";
    save_manifest(corpus, data_dir);
    ctx.write_snapshot({{"data_dir", data_dir.string()},
                        {"captions_file", captions},
                        {"instances_file", instances}});
    std::cout << "merged " << corpus.stats.captions << " captions: " << corpus.stats.samples
              << " samples, " << corpus.stats.discarded << " discarded, across "
              << corpus.stats.images << " images -> " << data_dir << "\n";
    return 0;
}

int cmd_train(const CommonArgs& common, const std::string& data_dir,
              const std::string& init_checkpoint, const std::string& teacher_checkpoint) {
    auto ctx = make_context(common, "train");
    auto data = load_data(data_dir);

    Model student = build_or_load_model(ctx, init_checkpoint, data.manifest.vocab.size());
    TeacherHandle teacher = teacher_checkpoint.empty()
                                ? TeacherHandle::from(student)
                                : TeacherHandle::from_checkpoint(teacher_checkpoint);
    const auto cfg = train_config_from(ctx.settings, ctx.seed);
    cfg.validate();

    ctx.write_snapshot({{"data_dir", data_dir},
                        {"init_checkpoint", init_checkpoint},
                        {"teacher_checkpoint", teacher_checkpoint},
                        {"teacher_fingerprint", teacher.fingerprint}});

    FitOptions opts;
    opts.out_dir = ctx.out_dir;
    const auto result = fit(data.manifest, data.store, cfg, student, teacher, opts);
    std::cout << "trained " << result.steps_run << " steps; final checkpoint "
              << result.final_checkpoint << "\n";
    if (!result.metrics.empty())
        std::cout << "final losses: total " << result.metrics.back().losses.total << " (gc "
                  << result.metrics.back().losses.l_gc << ", lrc "
                  << result.metrics.back().losses.l_lrc << ", gr "
                  << result.metrics.back().losses.l_gr << ")\n";
    return 0;
}

int cmd_eval_retrieval(const CommonArgs& common, const std::string& checkpoint,
                       const std::string& data_dir) {
    auto ctx = make_context(common, "eval-retrieval");
    auto data = load_data(data_dir);
    const Model model = Model::load(checkpoint);
    const auto report =
        eval_retrieval(model, retrieval_set_from_corpus(data.manifest, data.store));
    save_retrieval_report(report, ctx.reports_dir() / "retrieval.json");
    ctx.write_snapshot({{"checkpoint", checkpoint}, {"data_dir", data_dir}});
    std::cout << "I->T@1 " << report.i2t_at_1 << "  T->I@1 " << report.t2i_at_1 << "  ("
              << report.n_queries << " queries)\n";
    return 0;
}

int cmd_eval_bbox(const CommonArgs& common, const std::string& checkpoint,
                  const std::string& data_dir, std::string classes_csv) {
    auto ctx = make_context(common, "eval-bbox");
    auto data = load_data(data_dir);
    const Model model = Model::load(checkpoint);

    std::vector<std::string> classes;
    if (classes_csv.empty()) {
        classes = class_set_of(data.manifest);
    } else {
        std::string token;
        for (char c : classes_csv) {
            if (c == ',') {
                if (!token.empty()) classes.push_back(token);
                token.clear();
            } else {
                token.push_back(c);
            }
        }
        if (!token.empty()) classes.push_back(token);
    }

    const auto report = eval_bbox_classification(
        model, data.manifest, data.store, classes,
        ctx.settings.str("eval.prompt_template", "a photo of a {class}"));
    save_bbox_report(report, ctx.reports_dir() / "bbox.json");
    ctx.write_snapshot({{"checkpoint", checkpoint}, {"data_dir", data_dir}});
    std::cout << "bbox top-1 " << report.top1 << "  top-5 " << report.top5 << "  ("
              << report.n_boxes << " boxes, " << report.class_set.size() << " classes)\n";
    return 0;
}

int cmd_analyze(const CommonArgs& common, const std::string& checkpoint,
                const std::string& data_dir, bool csv, bool heatmap) {
    auto ctx = make_context(common, "analyze");
    auto data = load_data(data_dir);
    const Model model = Model::load(checkpoint);
    const auto report =
        analyze_concordance(model, data.manifest, data.store,
                            static_cast<int>(ctx.settings.integer("eval.bins", 10)));
    save_concordance_report(report, ctx.reports_dir() / "concordance.json",
                            csv ? ctx.reports_dir() / "concordance.csv" : fs::path{},
                            heatmap ? ctx.reports_dir() / "concordance.png" : fs::path{});
    ctx.write_snapshot({{"checkpoint", checkpoint}, {"data_dir", data_dir}});
    std::cout << "mean cos(region, image-global) " << report.mean_region_global
              << "; mean cos(region, text-global) " << report.mean_region_text
              << "; pearson r ";
    if (report.pearson_defined)
        std::cout << report.pearson_r << "\n";
    else
        std::cout << "undefined (zero variance)\n";
    return 0;
}

struct AblationRow {
    std::string label;
    bool ok = false;
    std::string error;
    EvalPair eval;
};

void write_ablation_outputs(const RunContext& ctx, const std::string& grid_kind,
                            const std::vector<AblationRow>& rows) {
    json cells = json::array();
    for (const auto& r : rows) {
        json c{{"cell", r.label}, {"ok", r.ok}};
        if (r.ok)
            c["metrics"] = eval_to_json(r.eval);
        else
            c["error"] = r.error;
        cells.push_back(c);
    }
    {
        std::ofstream out(ctx.reports_dir() / "ablation.json");
        out << json{{"grid", grid_kind}, {"cells", cells}}.dump(2) << '\n';
    }
    std::ofstream table(ctx.reports_dir() / "ablation_table.txt");
    auto line = [&](const std::string& s) {
        table << s << '\n';
        std::cout << s << '\n';
    };
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-16s %8s %8s %10s %10s", "cell", "I->T@1", "T->I@1",
                  "bbox@1", "bbox@5");
    line(buf);
    for (const auto& r : rows) {
        if (r.ok)
            std::snprintf(buf, sizeof(buf), "%-16s %8.2f %8.2f %10.2f %10.2f",
                          r.label.c_str(), 100 * r.eval.retrieval.i2t_at_1,
                          100 * r.eval.retrieval.t2i_at_1, 100 * r.eval.bbox.top1,
                          100 * r.eval.bbox.top5);
        else
            std::snprintf(buf, sizeof(buf), "%-16s failed: %s", r.label.c_str(),
                          r.error.c_str());
        line(buf);
    }
}

int cmd_ablate(const CommonArgs& common, const std::string& data_dir,
               const std::string& eval_data_dir, const std::string& grid_kind,
               std::vector<int> layer_grid, const std::string& init_checkpoint,
               const std::string& teacher_checkpoint) {
    auto ctx = make_context(common, "ablate");
    auto data = load_data(data_dir);
    auto eval_data = eval_data_dir.empty() ? load_data(data_dir) : load_data(eval_data_dir);

    // shared init and teacher for every cell
    Model init = build_or_load_model(ctx, init_checkpoint, data.manifest.vocab.size());
    const auto init_path = ctx.out_dir / "init.ckpt";
    init.save(init_path);
    TeacherHandle teacher = teacher_checkpoint.empty()
                                ? TeacherHandle::from(init)
                                : TeacherHandle::from_checkpoint(teacher_checkpoint);

    struct Cell {
        std::string label;
        LossMask mask;
        int unlocked;
    };
    std::vector<Cell> cells;
    const auto base_cfg = train_config_from(ctx.settings, ctx.seed);
    if (grid_kind == "loss_mask") {
        cells = {{"+GC", {true, false, false}, base_cfg.unlocked_layers},
                 {"+GC+LRC", {true, true, false}, base_cfg.unlocked_layers},
                 {"+GC+GR", {true, false, true}, base_cfg.unlocked_layers},
                 {"+GC+LRC+GR", {true, true, true}, base_cfg.unlocked_layers}};
    } else if (grid_kind == "layers") {
        if (layer_grid.empty()) layer_grid = {3, 6, 9, 12};
        for (int l : layer_grid)
            cells.push_back({"layers=" + std::to_string(l), base_cfg.loss_mask, l});
    } else {
        throw ConfigError("--grid must be loss_mask or layers");
    }

    ctx.write_snapshot({{"data_dir", data_dir},
                        {"eval_data_dir", eval_data_dir.empty() ? data_dir : eval_data_dir},
                        {"grid", grid_kind},
                        {"init_checkpoint", init_path.string()},
                        {"teacher_fingerprint", teacher.fingerprint}});

    std::vector<AblationRow> rows;
    for (const auto& cell : cells) {
        AblationRow row;
        row.label = cell.label;
        try {
            Model student = Model::load(init_path);
            auto cfg = base_cfg;
            cfg.loss_mask = cell.mask;
            cfg.unlocked_layers = cell.unlocked;
            FitOptions opts;
            std::string cell_dir = cell.label;
            for (auto& c : cell_dir)
                if (c == '+' || c == '=') c = '_';
            opts.out_dir = ctx.out_dir / "cells" / cell_dir;
            fit(data.manifest, data.store, cfg, student, teacher, opts);
            row.eval = run_eval(student, eval_data, ctx.settings);
            row.ok = true;
        } catch (const std::exception& e) {
            row.error = e.what();  // a failed cell is recorded, not fatal
        }
        rows.push_back(std::move(row));
    }
    write_ablation_outputs(ctx, grid_kind, rows);
    return 0;
}

int cmd_stage2(const CommonArgs& common, const std::string& init_checkpoint,
               const std::string& data_dir, const std::string& eval_data_dir,
               const std::string& teacher_checkpoint) {
    auto ctx = make_context(common, "stage2");
    auto data = load_data(data_dir);
    auto eval_data = eval_data_dir.empty() ? load_data(data_dir) : load_data(eval_data_dir);

    Model student = Model::load(init_checkpoint);
    TeacherHandle teacher = teacher_checkpoint.empty()
                                ? TeacherHandle::from(student)
                                : TeacherHandle::from_checkpoint(teacher_checkpoint);

    const auto before = run_eval(student, eval_data, ctx.settings);

    auto cfg = train_config_from(ctx.settings, ctx.seed);
    cfg.loss_mask = LossMask{true, true, false};  // the stage-2 recipe: GC + LRC
    FitOptions opts;
    opts.out_dir = ctx.out_dir;
    fit(data.manifest, data.store, cfg, student, teacher, opts);

    const auto after = run_eval(student, eval_data, ctx.settings);

    json delta{{"i2t_at_1", after.retrieval.i2t_at_1 - before.retrieval.i2t_at_1},
               {"t2i_at_1", after.retrieval.t2i_at_1 - before.retrieval.t2i_at_1},
               {"bbox_top1", after.bbox.top1 - before.bbox.top1},
               {"bbox_top5", after.bbox.top5 - before.bbox.top5}};
    json report{{"before", eval_to_json(before)}, {"after", eval_to_json(after)},
                {"delta", delta}};
    {
        std::ofstream out(ctx.reports_dir() / "stage2.json");
        out << report.dump(2) << '\n';
    }
    ctx.write_snapshot({{"data_dir", data_dir}, {"init_checkpoint", init_checkpoint}});
    std::cout << report.dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual-encoder contrastive training with lexeme-region and global-region "
                 "alignment objectives"};
    app.require_subcommand(1);

    CommonArgs gen_args;
    auto* gen = app.add_subcommand("gen-synth", "render a synthetic shape-world corpus");
    add_common(gen, gen_args);

    CommonArgs build_args;
    std::string captions_file, instances_file;
    auto* build = app.add_subcommand("build-data",
                                     "merge caption and instance annotations into a "
                                     "grounded corpus");
    add_common(build, build_args);
    build->add_option("--captions", captions_file, "captions annotation JSON")->required();
    build->add_option("--instances", instances_file, "instances annotation JSON")->required();

    CommonArgs train_args;
    std::string train_data, train_init, train_teacher;
    auto* train = app.add_subcommand("train", "optimize a model on a grounded corpus");
    add_common(train, train_args);
    train->add_option("--data", train_data, "corpus directory (manifest.jsonl + images/)")
        ->required();
    train->add_option("--init-checkpoint", train_init, "start from this checkpoint");
    train->add_option("--teacher-checkpoint", train_teacher,
                      "frozen teacher (default: snapshot of the initial student)");

    CommonArgs evr_args;
    std::string evr_ckpt, evr_data;
    auto* evr = app.add_subcommand("eval-retrieval", "cross-modal recall@1 both directions");
    add_common(evr, evr_args);
    evr->add_option("--checkpoint", evr_ckpt, "model checkpoint")->required();
    evr->add_option("--data", evr_data, "eval corpus directory")->required();

    CommonArgs evb_args;
    std::string evb_ckpt, evb_data, evb_classes;
    auto* evb = app.add_subcommand("eval-bbox", "zero-shot bounding-box classification");
    add_common(evb, evb_args);
    evb->add_option("--checkpoint", evb_ckpt, "model checkpoint")->required();
    evb->add_option("--data", evb_data, "eval corpus directory")->required();
    evb->add_option("--classes", evb_classes,
                    "comma-separated class names (default: labels present in the corpus)");

    CommonArgs an_args;
    std::string an_ckpt, an_data;
    bool an_csv = false, an_heatmap = false;
    auto* an = app.add_subcommand("analyze",
                                  "region/global/text semantic-space concordance analysis");
    add_common(an, an_args);
    an->add_option("--checkpoint", an_ckpt, "model checkpoint")->required();
    an->add_option("--data", an_data, "grounded eval corpus directory")->required();
    an->add_flag("--csv", an_csv, "also write per-sample cosine pairs as CSV");
    an->add_flag("--heatmap", an_heatmap, "also render the concordance matrix as PNG");

    CommonArgs ab_args;
    std::string ab_data, ab_eval_data, ab_grid = "loss_mask", ab_init, ab_teacher;
    std::vector<int> ab_layers;
    auto* ab = app.add_subcommand("ablate", "train one model per grid cell and tabulate");
    add_common(ab, ab_args);
    ab->add_option("--data", ab_data, "training corpus directory")->required();
    ab->add_option("--eval-data", ab_eval_data, "eval corpus (default: training corpus)");
    ab->add_option("--grid", ab_grid, "loss_mask | layers");
    ab->add_option("--layers", ab_layers, "unlocked-layer grid values")->take_all();
    ab->add_option("--init-checkpoint", ab_init, "shared init checkpoint");
    ab->add_option("--teacher-checkpoint", ab_teacher, "shared teacher checkpoint");

    CommonArgs s2_args;
    std::string s2_init, s2_data, s2_eval_data, s2_teacher;
    auto* s2 = app.add_subcommand("stage2",
                                  "fine-tune a checkpoint with the lexeme-region recipe and "
                                  "report before/after deltas");
    add_common(s2, s2_args);
    s2->add_option("--init-checkpoint", s2_init, "checkpoint to fine-tune")->required();
    s2->add_option("--data", s2_data, "training corpus directory")->required();
    s2->add_option("--eval-data", s2_eval_data, "eval corpus (default: training corpus)");
    s2->add_option("--teacher-checkpoint", s2_teacher, "teacher checkpoint");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // bad usage is a user error
    }

    try {
        if (gen->parsed()) return cmd_gen_synth(gen_args);
        if (build->parsed()) return cmd_build_data(build_args, captions_file, instances_file);
        if (train->parsed()) return cmd_train(train_args, train_data, train_init, train_teacher);
        if (evr->parsed()) return cmd_eval_retrieval(evr_args, evr_ckpt, evr_data);
        if (evb->parsed()) return cmd_eval_bbox(evb_args, evb_ckpt, evb_data, evb_classes);
        if (an->parsed()) return cmd_analyze(an_args, an_ckpt, an_data, an_csv, an_heatmap);
        if (ab->parsed())
            return cmd_ablate(ab_args, ab_data, ab_eval_data, ab_grid, ab_layers, ab_init,
                              ab_teacher);
        if (s2->parsed())
            return cmd_stage2(s2_args, s2_init, s2_data, s2_eval_data, s2_teacher);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const EmptyCorpusError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
