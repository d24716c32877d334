#include <gtest/gtest.h>

#include <fstream>

#include "beautyrec/config.hpp"
#include "beautyrec/errors.hpp"
#include "support.hpp"

using namespace beautyrec;
using nlohmann::json;

TEST(AppConfig, DefaultsWhenSectionsAreAbsent) {
    auto c = AppConfig::from_json(json::object());
    EXPECT_EQ(c.train.learning_rate, 1e-4);
    EXPECT_EQ(c.generator.base_channels, 48);
    EXPECT_EQ(c.plugins.perceptual, "identity");
    EXPECT_EQ(c.service.max_image_bytes, 8u << 20);
    EXPECT_EQ(c.service.bind, "127.0.0.1");
}

TEST(AppConfig, ReadsEverySection) {
    json j = {{"dataset", {{"root", "data"}}},
              {"train", {{"total_steps", 7}, {"lambda_per", 0.01}, {"seed", 3}, {"image_size", 128}}},
              {"generator", {{"transfer_order", {"eyes", "lips", "skin"}}, {"global_path_enabled", false}}},
              {"plugins", {{"identity", "torchscript:models/arc.pt"}, {"fid", "none"}}},
              {"eval", {{"manifest", "m.json"}, {"image_size", 64}}},
              {"service", {{"port", 9000}, {"threads", 2}}}};
    auto c = AppConfig::from_json(j, "/base");
    EXPECT_EQ(c.dataset.root, "/base/data");
    EXPECT_EQ(c.train.total_steps, 7);
    EXPECT_EQ(c.train.weights.perceptual, 0.01);
    EXPECT_EQ(c.train.seed, 3u);
    EXPECT_EQ(c.generator.transfer_order[0], Component::Eyes);
    EXPECT_FALSE(c.generator.global_path_enabled);
    EXPECT_EQ(c.plugins.identity, "torchscript:/base/models/arc.pt");
    EXPECT_EQ(c.eval.manifest, "/base/m.json");
    EXPECT_EQ(c.service.port, 9000);
}

TEST(AppConfig, ListsEveryProblemAtOnce) {
    json j = {{"train", {{"learning_rate", "fast"}, {"batch_size", 8}, {"bogus", 1}}},
              {"generator", {{"attention_heads", 5}}},
              {"plugins", {{"perceptual", "vgg19"}}},
              {"service", {{"port", 70000}}},
              {"extra", {}}};
    try {
        AppConfig::from_json(j);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        const auto& p = e.problems();
        auto has = [&](const std::string& needle) {
            return std::any_of(p.begin(), p.end(), [&](const std::string& s) { return s.find(needle) != std::string::npos; });
        };
        EXPECT_TRUE(has("train.learning_rate has the wrong type"));
        EXPECT_TRUE(has("batch_size must be 1"));
        EXPECT_TRUE(has("unknown key train.bogus"));
        EXPECT_TRUE(has("attention_heads"));
        EXPECT_TRUE(has("vgg19_weights is required"));
        EXPECT_TRUE(has("service.port"));
        EXPECT_TRUE(has("unknown section extra"));
        EXPECT_GE(p.size(), 7u);
    }
}

TEST(AppConfig, LoadResolvesRelativeToFileAndReportsMissing) {
    fixtures::TempDir dir("config");
    std::filesystem::create_directories(dir / "sub");
    std::ofstream(dir / "sub" / "c.json") << R"({"dataset": {"root": "../data"}})";
    auto c = AppConfig::load(dir / "sub" / "c.json");
    EXPECT_EQ(std::filesystem::path(c.dataset.root), (dir / "data").lexically_normal());
    EXPECT_THROW(AppConfig::load(dir / "none.json"), MissingFileError);
    std::ofstream(dir / "bad.json") << "{";
    EXPECT_THROW(AppConfig::load(dir / "bad.json"), ConfigError);
}

TEST(AppConfig, ShippedExamplesLoad) {
    int n = 0;
    for (const auto& entry : std::filesystem::directory_iterator(BEAUTYREC_SOURCE_DIR "/config")) {
        if (entry.path().extension() != ".json") continue;
        EXPECT_NO_THROW(AppConfig::load(entry.path())) << entry.path();
        ++n;
    }
    EXPECT_GE(n, 2);
}
