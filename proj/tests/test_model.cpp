// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "harmoclip/model.hpp"
#include "support/checks.hpp"

using namespace harmoclip;
using namespace harmoclip::testing;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.image_size = 16;
    cfg.patch_size = 8;
    cfg.img_blocks = 2;
    cfg.txt_blocks = 2;
    cfg.d_model = 16;
    cfg.embed_dim = 16;
    cfg.num_heads = 2;
    cfg.vocab_size = 32;
    cfg.max_text_len = 12;
    return cfg;
}

Image random_image(Rng& rng, int size) {
    Image img(size, size);
    for (auto& v : img.px) v = rng.uniform();
    return img;
}

TokenSequence seq(std::vector<int> ids, int eot) { return {std::move(ids), eot}; }

}  // namespace

TEST_CASE("ModelConfig validation") {
    auto cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());
    cfg.patch_size = 7;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.num_heads = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = tiny_config();
    cfg.embed_dim = 8;  // must equal d_model
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("encode_image_global: determinism, finiteness, sensitivity") {
    Model model(tiny_config(), 42);
    Rng rng(1);
    const Image img = random_image(rng, 16);

    const Vec a = model.encode_image_global(img);
    const Vec b = model.encode_image_global(img);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.dot(b) / (a.norm() * b.norm()) == doctest::Approx(1.0));

    const Vec zero_out = model.encode_image_global(Image(16, 16, 0.0));
    CHECK(zero_out.allFinite());

    Image noisy = img;
    Rng nrng(2);
    for (auto& v : noisy.px) v += 0.5 * nrng.normal();
    const Vec c = model.encode_image_global(noisy);
    const double cos = a.dot(c) / (a.norm() * c.norm());
    CHECK(cos < 1.0);

    CHECK_THROWS_AS(model.encode_image_global(Image(8, 8, 0.0)), InputError);
}

TEST_CASE("encode_text: shapes, determinism, padding invariance, EOT readout") {
    auto cfg = tiny_config();
    Model model(cfg, 7);

    const auto s3 = seq({5, 9, SpecialTokens::eot}, 2);
    auto [g1, h1] = model.encode_text(s3);
    auto [g2, h2] = model.encode_text(s3);
    CHECK((g1 - g2).cwiseAbs().maxCoeff() == 0.0);
    CHECK((h1 - h2).cwiseAbs().maxCoeff() == 0.0);
    CHECK(h1.rows() == 3);
    CHECK(h1.cols() == cfg.d_model);

    // hidden-state count equals token count for every length
    for (int L = 1; L <= cfg.max_text_len; ++L) {
        std::vector<int> ids(static_cast<size_t>(L), 4);
        ids[static_cast<size_t>(L - 1)] = SpecialTokens::eot;
        if (L == 1) ids[0] = SpecialTokens::eot;
        auto [g, h] = model.encode_text(seq(ids, L - 1));
        CHECK(h.rows() == L);
    }

    // padding after EOT does not change the global embedding (causal masking;
    // equality up to gemm-kernel rounding on the longer sequence)
    const auto padded = seq({5, 9, SpecialTokens::eot, SpecialTokens::pad,
                             SpecialTokens::pad},
                            2);
    auto [gp, hp] = model.encode_text(padded);
    CHECK((gp - g1).cwiseAbs().maxCoeff() < 1e-12);

    // the global path projects exactly the EOT hidden state
    const Mat proj = model.params().at("text.proj.weight").node->value;
    const Vec expected = proj.transpose() * h1.row(2).transpose();
    CHECK((g1 - expected).cwiseAbs().maxCoeff() < 1e-12);

    // length > max_text_len
    std::vector<int> too_long(static_cast<size_t>(cfg.max_text_len) + 1, 4);
    too_long.back() = SpecialTokens::eot;
    CHECK_THROWS_AS(model.encode_text(seq(too_long, cfg.max_text_len)), InputError);
    // malformed: two EOTs
    CHECK_THROWS_AS(model.encode_text(seq({SpecialTokens::eot, SpecialTokens::eot}, 0)),
                    InputError);
}

TEST_CASE("select_lexeme: indexing and bounds") {
    Mat hidden(3, 4);
    hidden << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
    CHECK((Model::select_lexeme(hidden, 0) - hidden.row(0).transpose()).norm() == 0.0);
    CHECK((Model::select_lexeme(hidden, 2) - hidden.row(2).transpose()).norm() == 0.0);
    CHECK_THROWS_AS(Model::select_lexeme(hidden, 3), InputError);
    CHECK_THROWS_AS(Model::select_lexeme(hidden, -1), InputError);
}

TEST_CASE("encode_image_dense: grid shape and content") {
    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.patch_size = 8;
    cfg.img_blocks = 2;
    cfg.txt_blocks = 1;
    cfg.d_model = cfg.embed_dim = 16;
    cfg.num_heads = 2;
    cfg.vocab_size = 16;
    Model model(cfg, 3);
    Rng rng(4);
    const Image img = random_image(rng, 32);
    const auto map = model.encode_image_dense(img);
    CHECK(map.h == 4);
    CHECK(map.w == 4);
    CHECK(map.stride == 8.0);
    CHECK(map.features.rows() == 16);
    CHECK(map.features.cols() == 16);
    CHECK(map.features.allFinite());
    // non-constant across cells
    CHECK((map.features.rowwise() - map.features.row(0)).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("dense path with a single block touches only the perturbed patch cell") {
    // one block total, so every block except the last is vacuously identity
    ModelConfig cfg = tiny_config();
    cfg.img_blocks = 1;
    Model model(cfg, 11);
    Rng rng(12);
    Image img = random_image(rng, 16);
    const auto base = model.encode_image_dense(img);

    Image poked = img;
    // patch (1,0) covers x in [8,16), y in [0,8)
    poked.at(0, 3, 10) += 0.25;
    const auto after = model.encode_image_dense(poked);

    for (int cell = 0; cell < 4; ++cell) {
        const double delta =
            (after.features.row(cell) - base.features.row(cell)).cwiseAbs().maxCoeff();
        if (cell == 1)
            CHECK(delta > 1e-9);
        else
            CHECK(delta == 0.0);
    }
}

TEST_CASE("modified final block mixes no tokens") {
    Model model(tiny_config(), 19);
    Rng rng(20);
    const Mat x0 = random_matrix(rng, 5, 16);
    const Mat base = model.modified_final_block(ad::constant(x0))->value;
    for (int j = 0; j < 5; ++j) {
        Mat x = x0;
        x.row(j).array() += 0.37;
        const Mat out = model.modified_final_block(ad::constant(x))->value;
        for (int i = 0; i < 5; ++i) {
            const double delta = (out.row(i) - base.row(i)).cwiseAbs().maxCoeff();
            if (i == j)
                CHECK(delta > 1e-9);
            else
                CHECK(delta <= 1e-6);
        }
    }
}

TEST_CASE("model gradients: finite-difference spot checks through both towers") {
    ModelConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.img_blocks = 2;
    cfg.txt_blocks = 1;
    cfg.d_model = cfg.embed_dim = 8;
    cfg.num_heads = 2;
    cfg.vocab_size = 12;
    cfg.max_text_len = 8;
    cfg.mlp_ratio = 2;
    Model model(cfg, 101);
    Rng rng(102);
    const Image img = random_image(rng, 8);
    const auto tokens = seq({4, 7, SpecialTokens::eot}, 2);
    const Mat probe_i = random_matrix(rng, cfg.embed_dim, 1);
    const Mat probe_t = random_matrix(rng, cfg.embed_dim, 1);

    auto scalar = [&]() {
        auto fi = model.forward_image(img, true, true);
        auto ft = model.forward_text(tokens);
        auto s1 = ad::matmul(fi.global, ad::constant(probe_i));
        auto s2 = ad::matmul(ft.global, ad::constant(probe_t));
        auto s3 = ad::matmul(ad::weighted_row_sum(fi.dense, Vec::Ones(4)),
                             ad::constant(probe_i));
        return ad::add(ad::add(s1, s2), s3);
    };

    auto out = scalar();
    ad::backward(out);

    for (const char* name : {"image.block1.attn.wq", "image.patch_embed.weight",
                             "text.token_embed.weight", "text.block0.mlp.w1",
                             "image.ln_post.gain", "image.proj.weight"}) {
        auto& p = model.params().at(name);
        REQUIRE(p.node->grad.size() != 0);
        Rng pick(std::hash<std::string>{}(name));
        for (int probe = 0; probe < 3; ++probe) {
            const Eigen::Index i = pick.uniform_int(0, static_cast<int>(p.node->value.rows()) - 1);
            const Eigen::Index j = pick.uniform_int(0, static_cast<int>(p.node->value.cols()) - 1);
            const double h = 1e-5;
            const double orig = p.node->value(i, j);
            p.node->value(i, j) = orig + h;
            const double fp = scalar()->value(0, 0);
            p.node->value(i, j) = orig - h;
            const double fm = scalar()->value(0, 0);
            p.node->value(i, j) = orig;
            const double fd = (fp - fm) / (2 * h);
            const double an = p.node->grad(i, j);
            INFO(name, " entry (", i, ",", j, ") fd=", fd, " analytic=", an);
            CHECK(std::abs(fd - an) < 1e-5 * std::max({1.0, std::abs(fd), std::abs(an)}));
        }
    }
}

TEST_CASE("set_trainable_depth: unlock grouping") {
    ModelConfig cfg = tiny_config();
    cfg.img_blocks = 4;
    Model model(cfg, 5);

    CHECK_THROWS_AS(model.set_trainable_depth(5), InputError);
    CHECK_THROWS_AS(model.set_trainable_depth(-1), InputError);

    model.set_trainable_depth(0);
    for (const auto& p : model.params().items()) {
        if (p.name.rfind("image.", 0) == 0)
            CHECK_FALSE(p.trainable());
        else
            CHECK(p.trainable());
    }

    model.set_trainable_depth(2);
    CHECK_FALSE(model.params().at("image.block0.attn.wq").trainable());
    CHECK_FALSE(model.params().at("image.block1.mlp.w2").trainable());
    CHECK(model.params().at("image.block2.attn.wq").trainable());
    CHECK(model.params().at("image.block3.ln1.gain").trainable());
    CHECK_FALSE(model.params().at("image.proj.weight").trainable());
    CHECK_FALSE(model.params().at("image.pos_embed").trainable());
    CHECK(model.params().at("text.block0.attn.wq").trainable());
    CHECK(model.params().at("log_tau").trainable());

    model.set_trainable_depth(4);
    for (const auto& p : model.params().items()) CHECK(p.trainable());
}

TEST_CASE("checkpoint: bit-exact round trip") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "hclp_ckpt_test";
    fs::create_directories(dir);
    const auto path = dir / "model.ckpt";

    Model model(tiny_config(), 23);
    model.save(path);
    Model back = Model::load(path);

    CHECK(back.config() == model.config());
    CHECK(back.fingerprint() == model.fingerprint());
    for (const auto& p : model.params().items()) {
        const auto& q = back.params().at(p.name);
        CHECK(q.no_decay == p.no_decay);
        CHECK((q.node->value - p.node->value).cwiseAbs().maxCoeff() == 0.0);
    }

    // saving the loaded model reproduces the file byte for byte
    const auto path2 = dir / "model2.ckpt";
    back.save(path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), {});
    const std::string b2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(b1 == b2);
    fs::remove_all(dir);
}

TEST_CASE("same seed, same parameters; clone is independent") {
    Model a(tiny_config(), 77);
    Model b(tiny_config(), 77);
    CHECK(a.fingerprint() == b.fingerprint());
    Model c(tiny_config(), 78);
    CHECK(c.fingerprint() != a.fingerprint());

    Model d = a.clone();
    CHECK(d.fingerprint() == a.fingerprint());
    d.params().at("log_tau").node->value(0, 0) += 1.0;
    CHECK(d.fingerprint() != a.fingerprint());
    CHECK(a.fingerprint() == b.fingerprint());
}
