// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#include "harmoclip/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "harmoclip/rng.hpp"

namespace harmoclip {

using nlohmann::json;

void ModelConfig::validate() const {
    if (image_size < 1 || patch_size < 1 || image_size % patch_size != 0)
        throw ConfigError("ModelConfig: patch_size must divide image_size");
    if (d_model < 1 || num_heads < 1 || d_model % num_heads != 0)
        throw ConfigError("ModelConfig: num_heads must divide d_model");
    if (d_model != embed_dim)
        throw ConfigError("ModelConfig: d_model must equal embed_dim so token hidden "
                          "states and region features share one space");
    if (img_blocks < 1 || txt_blocks < 1) throw ConfigError("ModelConfig: need >= 1 block");
    if (vocab_size <= SpecialTokens::first_word)
        throw ConfigError("ModelConfig: vocab_size too small for reserved tokens");
    if (max_text_len < 2) throw ConfigError("ModelConfig: max_text_len must be >= 2");
    if (mlp_ratio < 1) throw ConfigError("ModelConfig: mlp_ratio must be >= 1");
}

ad::NodePtr ParamStore::add(const std::string& name, Mat init, bool no_decay) {
    if (by_name_.count(name)) throw ConfigError("ParamStore: duplicate name " + name);
    Parameter p;
    p.name = name;
    p.node = ad::leaf(std::move(init), /*requires_grad=*/true);
    p.no_decay = no_decay;
    by_name_[name] = items_.size();
    items_.push_back(std::move(p));
    return items_.back().node;
}

Parameter& ParamStore::at(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw InputError("ParamStore: unknown parameter " + name);
    return items_[it->second];
}

const Parameter& ParamStore::at(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw InputError("ParamStore: unknown parameter " + name);
    return items_[it->second];
}

namespace {

Mat trunc_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols, double sigma = 0.02) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.truncated_normal(sigma);
    return m;
}

constexpr uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr uint64_t kFnvPrime = 1099511628211ULL;

void fnv_bytes(uint64_t& h, const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
}

json config_to_json(const ModelConfig& c) {
    return json{{"image_size", c.image_size},   {"patch_size", c.patch_size},
                {"img_blocks", c.img_blocks},   {"txt_blocks", c.txt_blocks},
                {"d_model", c.d_model},         {"embed_dim", c.embed_dim},
                {"num_heads", c.num_heads},     {"vocab_size", c.vocab_size},
                {"max_text_len", c.max_text_len}, {"mlp_ratio", c.mlp_ratio},
                {"log_tau_init", c.log_tau_init}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.image_size = j.at("image_size").get<int>();
    c.patch_size = j.at("patch_size").get<int>();
    c.img_blocks = j.at("img_blocks").get<int>();
    c.txt_blocks = j.at("txt_blocks").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_text_len = j.at("max_text_len").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<int>();
    c.log_tau_init = j.at("log_tau_init").get<double>();
    return c;
}

constexpr char kCheckpointMagic[8] = {'H', 'C', 'L', 'P', 'C', 'K', 'P', '1'};

}  // namespace

Model::Model(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build_params(seed);
}

void Model::build_params(uint64_t seed) {
    Rng rng(derive_seed(seed, 0xC0DE));
    const int d = cfg_.d_model;
    const int e = cfg_.embed_dim;
    const int patch_in = 3 * cfg_.patch_size * cfg_.patch_size;
    const int hidden = cfg_.mlp_ratio * d;

    // fan-scaled truncated normal; a fixed sigma starves the attention
    // channel at desk widths
    auto fan_sigma = [](int fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
    const double tok_sigma = fan_sigma(d);

    auto add_block = [&](const std::string& prefix) {
        params_.add(prefix + ".ln1.gain", Mat::Ones(1, d), true);
        params_.add(prefix + ".ln1.bias", Mat::Zero(1, d), true);
        params_.add(prefix + ".attn.wq", trunc_normal(rng, d, d, fan_sigma(d)), false);
        params_.add(prefix + ".attn.bq", Mat::Zero(1, d), true);
        params_.add(prefix + ".attn.wk", trunc_normal(rng, d, d, fan_sigma(d)), false);
        params_.add(prefix + ".attn.bk", Mat::Zero(1, d), true);
        params_.add(prefix + ".attn.wv", trunc_normal(rng, d, d, fan_sigma(d)), false);
        params_.add(prefix + ".attn.bv", Mat::Zero(1, d), true);
        params_.add(prefix + ".attn.wo", trunc_normal(rng, d, d, fan_sigma(d)), false);
        params_.add(prefix + ".attn.bo", Mat::Zero(1, d), true);
        params_.add(prefix + ".ln2.gain", Mat::Ones(1, d), true);
        params_.add(prefix + ".ln2.bias", Mat::Zero(1, d), true);
        params_.add(prefix + ".mlp.w1", trunc_normal(rng, d, hidden, fan_sigma(d)), false);
        params_.add(prefix + ".mlp.b1", Mat::Zero(1, hidden), true);
        params_.add(prefix + ".mlp.w2", trunc_normal(rng, hidden, d, fan_sigma(hidden)),
                    false);
        params_.add(prefix + ".mlp.b2", Mat::Zero(1, d), true);
    };

    params_.add("image.patch_embed.weight",
                trunc_normal(rng, patch_in, d, fan_sigma(patch_in)), false);
    params_.add("image.cls_token", trunc_normal(rng, 1, d, tok_sigma), false);
    params_.add("image.pos_embed", trunc_normal(rng, 1 + cfg_.num_patches(), d, tok_sigma),
                true);
    params_.add("image.ln_pre.gain", Mat::Ones(1, d), true);
    params_.add("image.ln_pre.bias", Mat::Zero(1, d), true);
    for (int i = 0; i < cfg_.img_blocks; ++i) add_block("image.block" + std::to_string(i));
    params_.add("image.ln_post.gain", Mat::Ones(1, d), true);
    params_.add("image.ln_post.bias", Mat::Zero(1, d), true);
    // d_model == embed_dim; identity-initialized projections keep the joint
    // space aligned with token hidden states, which region features are
    // trained against
    params_.add("image.proj.weight", Mat::Identity(d, e), false);

    params_.add("text.token_embed.weight",
                trunc_normal(rng, cfg_.vocab_size, d, tok_sigma), false);
    params_.add("text.pos_embed", trunc_normal(rng, cfg_.max_text_len, d, tok_sigma), true);
    for (int i = 0; i < cfg_.txt_blocks; ++i) add_block("text.block" + std::to_string(i));
    params_.add("text.ln_final.gain", Mat::Ones(1, d), true);
    params_.add("text.ln_final.bias", Mat::Zero(1, d), true);
    params_.add("text.proj.weight", Mat::Identity(d, e), false);

    params_.add("log_tau", Mat::Constant(1, 1, cfg_.log_tau_init), true);
    params_.add("log_tau_lrc", Mat::Constant(1, 1, cfg_.log_tau_init), true);

    collect_handles();
}

void Model::collect_handles() {
    auto h = [&](const std::string& n) { return params_.at(n).node; };
    auto block = [&](const std::string& prefix) {
        BlockParams bp;
        bp.ln1_g = h(prefix + ".ln1.gain");
        bp.ln1_b = h(prefix + ".ln1.bias");
        bp.wq = h(prefix + ".attn.wq");
        bp.bq = h(prefix + ".attn.bq");
        bp.wk = h(prefix + ".attn.wk");
        bp.bk = h(prefix + ".attn.bk");
        bp.wv = h(prefix + ".attn.wv");
        bp.bv = h(prefix + ".attn.bv");
        bp.wo = h(prefix + ".attn.wo");
        bp.bo = h(prefix + ".attn.bo");
        bp.ln2_g = h(prefix + ".ln2.gain");
        bp.ln2_b = h(prefix + ".ln2.bias");
        bp.w1 = h(prefix + ".mlp.w1");
        bp.b1 = h(prefix + ".mlp.b1");
        bp.w2 = h(prefix + ".mlp.w2");
        bp.b2 = h(prefix + ".mlp.b2");
        return bp;
    };

    img_patch_w_ = h("image.patch_embed.weight");
    img_cls_ = h("image.cls_token");
    img_pos_ = h("image.pos_embed");
    img_ln_pre_g_ = h("image.ln_pre.gain");
    img_ln_pre_b_ = h("image.ln_pre.bias");
    img_blocks_.clear();
    for (int i = 0; i < cfg_.img_blocks; ++i)
        img_blocks_.push_back(block("image.block" + std::to_string(i)));
    img_ln_post_g_ = h("image.ln_post.gain");
    img_ln_post_b_ = h("image.ln_post.bias");
    img_proj_ = h("image.proj.weight");

    txt_embed_ = h("text.token_embed.weight");
    txt_pos_ = h("text.pos_embed");
    txt_blocks_.clear();
    for (int i = 0; i < cfg_.txt_blocks; ++i)
        txt_blocks_.push_back(block("text.block" + std::to_string(i)));
    txt_ln_final_g_ = h("text.ln_final.gain");
    txt_ln_final_b_ = h("text.ln_final.bias");
    txt_proj_ = h("text.proj.weight");
    log_tau_ = h("log_tau");
    log_tau_lrc_ = h("log_tau_lrc");
}

ad::NodePtr Model::image_token_embed(const Image& image) const {
    if (image.width != cfg_.image_size || image.height != cfg_.image_size)
        throw InputError("encode_image: expected " + std::to_string(cfg_.image_size) +
                         "x" + std::to_string(cfg_.image_size) + " image, got " +
                         std::to_string(image.width) + "x" + std::to_string(image.height));
    const int g = cfg_.grid();
    const int P = cfg_.patch_size;
    Mat patches(g * g, 3 * P * P);
    for (int gy = 0; gy < g; ++gy)
        for (int gx = 0; gx < g; ++gx) {
            const Eigen::Index row = static_cast<Eigen::Index>(gy) * g + gx;
            Eigen::Index col = 0;
            // pixels land zero-centered in [-1, 1]
            for (int c = 0; c < 3; ++c)
                for (int py = 0; py < P; ++py)
                    for (int px = 0; px < P; ++px)
                        patches(row, col++) =
                            2.0 * image.at(c, gy * P + py, gx * P + px) - 1.0;
        }
    auto tokens = ad::matmul(ad::constant(std::move(patches)), img_patch_w_);
    auto seq = ad::concat_rows({img_cls_, tokens});
    seq = ad::add(seq, img_pos_);
    return ad::layer_norm(seq, img_ln_pre_g_, img_ln_pre_b_);
}

ad::NodePtr Model::attention(const ad::NodePtr& x, const BlockParams& bp,
                             const Mat* mask) const {
    const int heads = cfg_.num_heads;
    const int dh = cfg_.d_model / heads;
    auto q = ad::add_row(ad::matmul(x, bp.wq), bp.bq);
    auto k = ad::add_row(ad::matmul(x, bp.wk), bp.bk);
    auto v = ad::add_row(ad::matmul(x, bp.wv), bp.bv);
    std::vector<ad::NodePtr> outs;
    outs.reserve(static_cast<size_t>(heads));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int hd = 0; hd < heads; ++hd) {
        auto qh = ad::slice_cols(q, hd * dh, dh);
        auto kh = ad::slice_cols(k, hd * dh, dh);
        auto vh = ad::slice_cols(v, hd * dh, dh);
        auto scores = ad::scale(ad::matmul_nt(qh, kh), inv_sqrt);
        if (mask) scores = ad::add(scores, ad::constant(*mask));
        outs.push_back(ad::matmul(ad::softmax_rows(scores), vh));
    }
    return ad::add_row(ad::matmul(ad::concat_cols(outs), bp.wo), bp.bo);
}

ad::NodePtr Model::block_forward(const ad::NodePtr& x, const BlockParams& bp,
                                 const Mat* mask) const {
    auto y = ad::add(x, attention(ad::layer_norm(x, bp.ln1_g, bp.ln1_b), bp, mask));
    auto m = ad::matmul(ad::layer_norm(y, bp.ln2_g, bp.ln2_b), bp.w1);
    m = ad::gelu(ad::add_row(m, bp.b1));
    m = ad::add_row(ad::matmul(m, bp.w2), bp.b2);
    return ad::add(y, m);
}

ad::NodePtr Model::modified_block_forward(const ad::NodePtr& x, const BlockParams& bp) const {
    // attention removed: only the value path and its output projection remain,
    // so no token mixes into any other
    auto v = ad::add_row(ad::matmul(ad::layer_norm(x, bp.ln1_g, bp.ln1_b), bp.wv), bp.bv);
    auto y = ad::add(x, ad::add_row(ad::matmul(v, bp.wo), bp.bo));
    auto m = ad::matmul(ad::layer_norm(y, bp.ln2_g, bp.ln2_b), bp.w1);
    m = ad::gelu(ad::add_row(m, bp.b1));
    m = ad::add_row(ad::matmul(m, bp.w2), bp.b2);
    return ad::add(y, m);
}

ad::NodePtr Model::modified_final_block(const ad::NodePtr& x) const {
    if (x->cols() != cfg_.d_model)
        throw InputError("modified_final_block: width mismatch");
    return modified_block_forward(x, img_blocks_.back());
}

Model::ImageForward Model::forward_image(const Image& image, bool want_global,
                                         bool want_dense) const {
    if (!want_global && !want_dense)
        throw InputError("forward_image: nothing requested");
    auto x = image_token_embed(image);
    const int n = cfg_.img_blocks;
    for (int i = 0; i + 1 < n; ++i) x = block_forward(x, img_blocks_[i], nullptr);

    ImageForward out;
    if (want_global) {
        auto full = block_forward(x, img_blocks_.back(), nullptr);
        auto cls = ad::slice_rows(full, 0, 1);
        cls = ad::layer_norm(cls, img_ln_post_g_, img_ln_post_b_);
        out.global = ad::matmul(cls, img_proj_);
    }
    if (want_dense) {
        auto mod = modified_block_forward(x, img_blocks_.back());
        auto spatial = ad::slice_rows(mod, 1, cfg_.num_patches());
        spatial = ad::layer_norm(spatial, img_ln_post_g_, img_ln_post_b_);
        out.dense = ad::matmul(spatial, img_proj_);
    }
    return out;
}

Model::TextForward Model::forward_text(const TokenSequence& tokens) const {
    tokens.validate(cfg_.vocab_size, cfg_.max_text_len);
    const int L = tokens.length();
    auto x = ad::gather_rows(txt_embed_, tokens.ids);
    x = ad::add(x, ad::slice_rows(txt_pos_, 0, L));

    Mat mask = Mat::Zero(L, L);
    for (int i = 0; i < L; ++i)
        for (int j = i + 1; j < L; ++j) mask(i, j) = -1e30;

    for (int i = 0; i < cfg_.txt_blocks; ++i) x = block_forward(x, txt_blocks_[i], &mask);
    auto hidden = ad::layer_norm(x, txt_ln_final_g_, txt_ln_final_b_);

    TextForward out;
    out.hidden = hidden;
    out.global = ad::matmul(ad::slice_rows(hidden, tokens.eot_index, 1), txt_proj_);
    return out;
}

Vec Model::encode_image_global(const Image& image) const {
    return forward_image(image, true, false).global->value.row(0).transpose();
}

DenseFeatureMap Model::encode_image_dense(const Image& image) const {
    DenseFeatureMap map;
    map.features = forward_image(image, false, true).dense->value;
    map.h = map.w = cfg_.grid();
    map.stride = cfg_.patch_size;
    return map;
}

std::pair<Vec, Mat> Model::encode_text(const TokenSequence& tokens) const {
    auto f = forward_text(tokens);
    return {f.global->value.row(0).transpose(), f.hidden->value};
}

Vec Model::select_lexeme(const Mat& hidden, int token_idx) {
    if (token_idx < 0 || token_idx >= hidden.rows())
        throw InputError("select_lexeme: token_idx " + std::to_string(token_idx) +
                         " out of range for " + std::to_string(hidden.rows()) + " states");
    return hidden.row(token_idx).transpose();
}

void Model::set_trainable_depth(int unlocked_layers) {
    if (unlocked_layers < 0 || unlocked_layers > cfg_.img_blocks)
        throw InputError("set_trainable_depth: unlocked_layers must be in [0, " +
                         std::to_string(cfg_.img_blocks) + "]");
    const int first_unlocked = cfg_.img_blocks - unlocked_layers;
    const bool full = unlocked_layers == cfg_.img_blocks;
    for (auto& p : params_.items()) {
        if (p.name.rfind("image.block", 0) == 0) {
            const int idx = std::stoi(p.name.substr(std::strlen("image.block")));
            p.node->requires_grad = idx >= first_unlocked;
        } else if (p.name.rfind("image.", 0) == 0) {
            p.node->requires_grad = full;
        } else {
            p.node->requires_grad = true;  // text tower and log_tau
        }
    }
}

void Model::freeze_all() {
    for (auto& p : params_.items()) p.node->requires_grad = false;
}

Model Model::clone() const {
    Model copy;
    copy.cfg_ = cfg_;
    for (const auto& p : params_.items()) {
        auto node = copy.params_.add(p.name, p.node->value, p.no_decay);
        node->requires_grad = p.node->requires_grad;
    }
    copy.collect_handles();
    return copy;
}

uint64_t Model::fingerprint() const {
    uint64_t h = kFnvOffset;
    const std::string cfg_str = config_to_json(cfg_).dump();
    fnv_bytes(h, cfg_str.data(), cfg_str.size());
    for (const auto& p : params_.items()) {
        fnv_bytes(h, p.name.data(), p.name.size());
        fnv_bytes(h, p.node->value.data(),
                  static_cast<size_t>(p.node->value.size()) * sizeof(double));
    }
    return h;
}

void Model::save(const std::filesystem::path& path) const {
    json header;
    header["config"] = config_to_json(cfg_);
    json tensors = json::array();
    for (const auto& p : params_.items())
        tensors.push_back({{"name", p.name},
                           {"rows", p.node->value.rows()},
                           {"cols", p.node->value.cols()}});
    header["tensors"] = tensors;
    const std::string head = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("checkpoint: cannot write " + path.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const uint64_t len = head.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    for (const auto& p : params_.items()) {
        // Eigen default storage is column-major; dump raw in storage order
        out.write(reinterpret_cast<const char*>(p.node->value.data()),
                  static_cast<std::streamsize>(p.node->value.size() * sizeof(double)));
    }
    if (!out) throw ParseError("checkpoint: write failed for " + path.string());
}

Model Model::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("checkpoint: cannot open " + path.string());
    char magic[sizeof(kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw ParseError("checkpoint: bad magic in " + path.string(), 0);
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string head(len, '\0');
    in.read(head.data(), static_cast<std::streamsize>(len));
    if (!in) throw ParseError("checkpoint: truncated header", static_cast<long>(in.tellg()));

    json header;
    try {
        header = json::parse(head);
    } catch (const json::exception& e) {
        throw ParseError(std::string("checkpoint: header parse error: ") + e.what());
    }

    Model m;
    m.cfg_ = config_from_json(header.at("config"));
    m.cfg_.validate();
    for (const auto& t : header.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        const Eigen::Index rows = t.at("rows").get<Eigen::Index>();
        const Eigen::Index cols = t.at("cols").get<Eigen::Index>();
        Mat value(rows, cols);
        in.read(reinterpret_cast<char*>(value.data()),
                static_cast<std::streamsize>(value.size() * sizeof(double)));
        if (!in)
            throw ParseError("checkpoint: truncated tensor " + name,
                             static_cast<long>(in.tellg()));
        m.params_.add(name, std::move(value), false);
    }
    // restore structural flags from names
    for (auto& p : m.params_.items()) {
        const bool bias = p.name.ends_with(".bias") || p.name.find(".attn.b") != std::string::npos ||
                          p.name.find(".mlp.b") != std::string::npos;
        const bool ln = p.name.find(".ln") != std::string::npos;
        const bool pos = p.name.ends_with("pos_embed");
        p.no_decay = bias || ln || pos || p.name.rfind("log_tau", 0) == 0;
    }
    m.collect_handles();
    return m;
}

}  // namespace harmoclip
