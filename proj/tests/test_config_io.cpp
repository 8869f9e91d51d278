#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "coam/config.hpp"
#include "coam/image_io.hpp"
#include "coam/synthdata.hpp"

using namespace coam;

TEST_CASE("config files parse key=value lines with comments") {
    const char* path = "test_cfg.conf";
    {
        std::ofstream os(path);
        os << "# a comment line\n"
           << "image_size = 128   # trailing comment\n"
           << "\n"
           << "descriptor_dim=32\n"
           << "encoder_widths = 8, 16, 32, 64\n"
           << "attention_scales = coarse\n"
           << "loss_kind = infonce\n"
           << "learning_rate = 5e-4\n"
           << "seed = 12345\n";
    }
    RunConfig cfg;
    cfg.apply_file(path);
    CHECK(cfg.network.image_size == 128);
    CHECK(cfg.network.descriptor_dim == 32);
    CHECK(cfg.network.encoder_widths == std::vector<int>{8, 16, 32, 64});
    CHECK(cfg.network.attention_scales == AttentionScales::kCoarse);
    CHECK(cfg.train.loss_kind == LossKind::kInfoNce);
    CHECK(cfg.train.learning_rate == doctest::Approx(5e-4));
    CHECK(cfg.seed == 12345);
    std::remove(path);
}

TEST_CASE("unknown keys and malformed lines fail with file and line") {
    const char* path = "test_cfg_bad.conf";
    {
        std::ofstream os(path);
        os << "image_size = 64\nnot_a_key = 3\n";
    }
    RunConfig cfg;
    CHECK_THROWS_WITH_AS(cfg.apply_file(path), doctest::Contains(":2"), std::runtime_error);
    {
        std::ofstream os(path);
        os << "image_size 64\n";
    }
    CHECK_THROWS_WITH_AS(cfg.apply_file(path), doctest::Contains("missing '='"),
                         std::runtime_error);
    std::remove(path);
    CHECK_THROWS_AS(cfg.apply_file("no_such.conf"), std::runtime_error);
    CHECK_THROWS_AS(cfg.apply_entry("attention_scales", "both"), std::invalid_argument);
}

TEST_CASE("config write/read round trip preserves every field") {
    RunConfig a;
    a.network.image_size = 96;
    a.network.ablate_coam = true;
    a.train.loss_kind = LossKind::kInfoNce;
    a.train.learning_rate = 3.25e-4;
    a.ransac.iterations = 555;
    a.seed = 987654321;
    const char* path = "test_cfg_rt.conf";
    a.write_file(path);
    RunConfig b;
    b.apply_file(path);
    CHECK(b.network.image_size == 96);
    CHECK(b.network.ablate_coam);
    CHECK(b.train.loss_kind == LossKind::kInfoNce);
    CHECK(b.train.learning_rate == doctest::Approx(3.25e-4));
    CHECK(b.ransac.iterations == 555);
    CHECK(b.seed == 987654321);
    std::remove(path);
}

TEST_CASE("flags layered after a file override it") {
    RunConfig cfg;
    const char* path = "test_cfg_layer.conf";
    {
        std::ofstream os(path);
        os << "batch_size = 4\nmargin = 2\n";
    }
    cfg.apply_file(path);
    cfg.apply_entry("batch_size", "8");
    CHECK(cfg.train.batch_size == 8);
    CHECK(cfg.train.margin == doctest::Approx(2.0));
    std::remove(path);
}

TEST_CASE("COAM_SEED environment variable sets the default seed") {
    unsetenv("COAM_SEED");
    CHECK(default_seed_from_env() == 0);
    setenv("COAM_SEED", "424242", 1);
    CHECK(default_seed_from_env() == 424242);
    unsetenv("COAM_SEED");
}

TEST_CASE("PNG round trip preserves 8-bit color") {
    Tensor img = generate_texture(77, 32);
    const char* path = "test_img.png";
    save_png(path, img);
    Tensor back = load_png(path);
    REQUIRE(back.shape == img.shape);
    double worst = 0;
    for (std::size_t i = 0; i < img.data.size(); ++i)
        worst = std::max(worst, std::fabs(img.data[i] - back.data[i]));
    CHECK(worst <= 0.5 / 255 + 1e-9);  // quantization only
    // a second save/load is bit-stable
    save_png(path, back);
    Tensor again = load_png(path);
    CHECK(again.data == back.data);
    std::remove(path);
    CHECK_THROWS_AS(load_png("no_such.png"), std::runtime_error);
}
