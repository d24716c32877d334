#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "beautyrec/generator.hpp"
#include "beautyrec/trainer.hpp"

namespace beautyrec {

struct DatasetConfig {
    std::string root;
    std::string label_mapping;  // empty: labels are already canonical
};

struct PluginConfig {
    std::string perceptual = "identity";  // or "vgg19"
    std::string vgg19_weights;
    std::string identity = "stub";  // none | stub | torchscript:<path>
    std::string fid = "stub";
};

struct EvalConfig {
    std::string manifest;
    std::string report = "eval_report.json";
    std::string output_dir;
    int64_t image_size = 256;
};

struct ServiceConfig {
    std::string bind = "127.0.0.1";
    int port = 8080;
    std::size_t max_image_bytes = 8U << 20;
    std::string checkpoint;
    int threads = 4;
};

/// The whole JSON config file. Relative paths are resolved against the file's directory.
struct AppConfig {
    DatasetConfig dataset;
    TrainConfig train;
    GeneratorConfig generator;
    PluginConfig plugins;
    EvalConfig eval;
    ServiceConfig service;

    /// Collects every problem (unknown keys, wrong types, violated constraints) and throws one
    /// ConfigError listing them all.
    static AppConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    static AppConfig load(const std::filesystem::path& path);
};

}  // namespace beautyrec
