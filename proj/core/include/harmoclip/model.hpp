// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "harmoclip/autograd.hpp"
#include "harmoclip/image.hpp"
#include "harmoclip/region_ops.hpp"
#include "harmoclip/tokenizer.hpp"
#include "harmoclip/types.hpp"

namespace harmoclip {

struct ModelConfig {
    int image_size = 32;   // square input, pixels
    int patch_size = 8;    // divides image_size
    int img_blocks = 2;
    int txt_blocks = 2;
    int d_model = 64;      // transformer width
    int embed_dim = 64;    // joint space width; equals d_model (see validate)
    int num_heads = 4;
    int vocab_size = 64;
    int max_text_len = 32;
    int mlp_ratio = 4;
    double log_tau_init = 2.6592600369327783;  // ln(1/0.07)

    int grid() const { return image_size / patch_size; }
    int num_patches() const { return grid() * grid(); }

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

/// One named tensor of the model. Trainability lives on the node so frozen
/// parameters never accumulate gradients.
struct Parameter {
    std::string name;
    ad::NodePtr node;
    bool no_decay = false;

    bool trainable() const { return node->requires_grad; }
};

class ParamStore {
public:
    ad::NodePtr add(const std::string& name, Mat init, bool no_decay);
    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;
    bool has(const std::string& name) const { return by_name_.count(name) > 0; }

    std::vector<Parameter>& items() { return items_; }
    const std::vector<Parameter>& items() const { return items_; }
    size_t size() const { return items_.size(); }

private:
    std::vector<Parameter> items_;
    std::unordered_map<std::string, size_t> by_name_;
};

/// Dual encoder: patch transformer over images (CLS readout, plus a
/// value-path final block for dense spatial features) and a causally masked
/// token transformer over text (projected EOT readout, raw per-token hidden
/// states).
class Model {
public:
    Model(ModelConfig cfg, uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    ad::NodePtr log_tau() const { return log_tau_; }
    /// Second temperature, used for the lexeme-region term only when a run
    /// opts out of the shared default.
    ad::NodePtr log_tau_lrc() const { return log_tau_lrc_; }
    TemperatureParam temperature() const { return {log_tau_->value(0, 0)}; }

    // --- graph-level forward (training path) ---
    struct ImageForward {
        ad::NodePtr global;  // 1 x embed_dim, empty when not requested
        ad::NodePtr dense;   // (grid*grid) x embed_dim, empty when not requested
    };
    ImageForward forward_image(const Image& image, bool want_global, bool want_dense) const;

    struct TextForward {
        ad::NodePtr global;  // 1 x embed_dim
        ad::NodePtr hidden;  // L x d_model (post final norm, unprojected)
    };
    TextForward forward_text(const TokenSequence& tokens) const;

    /// The attention-removed final block in isolation (shares its weights
    /// with the dense path). Exposed for locality analysis.
    ad::NodePtr modified_final_block(const ad::NodePtr& x) const;

    // --- value-level operations ---
    Vec encode_image_global(const Image& image) const;
    DenseFeatureMap encode_image_dense(const Image& image) const;
    /// (projected EOT global, all L hidden states)
    std::pair<Vec, Mat> encode_text(const TokenSequence& tokens) const;
    static Vec select_lexeme(const Mat& hidden, int token_idx);

    /// Marks the last `unlocked_layers` image blocks trainable and freezes the
    /// rest of the image tower; embeddings/projection/norms on the image side
    /// unlock only at full depth. Text tower and temperature stay trainable.
    void set_trainable_depth(int unlocked_layers);
    /// Freezes every parameter (teacher snapshots).
    void freeze_all();

    Model clone() const;
    uint64_t fingerprint() const;

    void save(const std::filesystem::path& path) const;
    static Model load(const std::filesystem::path& path);

private:
    struct BlockParams {
        ad::NodePtr ln1_g, ln1_b;
        ad::NodePtr wq, bq, wk, bk, wv, bv, wo, bo;
        ad::NodePtr ln2_g, ln2_b;
        ad::NodePtr w1, b1, w2, b2;
    };

    Model() = default;  // used by load/clone
    void build_params(uint64_t seed);
    void collect_handles();

    ad::NodePtr image_token_embed(const Image& image) const;
    ad::NodePtr attention(const ad::NodePtr& x, const BlockParams& bp,
                          const Mat* mask) const;
    ad::NodePtr block_forward(const ad::NodePtr& x, const BlockParams& bp,
                              const Mat* mask) const;
    ad::NodePtr modified_block_forward(const ad::NodePtr& x, const BlockParams& bp) const;

    ModelConfig cfg_;
    ParamStore params_;

    // handles into params_
    ad::NodePtr img_patch_w_, img_cls_, img_pos_, img_ln_pre_g_, img_ln_pre_b_;
    std::vector<BlockParams> img_blocks_;
    ad::NodePtr img_ln_post_g_, img_ln_post_b_, img_proj_;
    ad::NodePtr txt_embed_, txt_pos_;
    std::vector<BlockParams> txt_blocks_;
    ad::NodePtr txt_ln_final_g_, txt_ln_final_b_, txt_proj_;
    ad::NodePtr log_tau_, log_tau_lrc_;
};

}  // namespace harmoclip
