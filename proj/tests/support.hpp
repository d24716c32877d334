#pragma once

#include <chrono>
#include <filesystem>
#include <random>
#include <string>

#include <torch/torch.h>

#include "beautyrec/face_data.hpp"
#include "beautyrec/synth.hpp"

namespace beautyrec::fixtures {

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("beautyrec-" + tag + "-" + std::to_string(rd()) + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// Fixture pair i: bare face as source, made-up face as reference.
inline PairSample fixture_pair(int64_t size, int i) {
    PairSample p;
    p.source_id = "nm_" + std::to_string(i);
    p.reference_id = "mk_" + std::to_string(i);
    p.source = synth_face(size, 1000 + 2 * i, false);
    p.reference = synth_face(size, 1001 + 2 * i, true);
    return p;
}

inline ParsingMap parsing_of(torch::Tensor labels) { return ParsingMap{labels.to(torch::kUInt8)}; }

/// Smooth random image in [-1,1]: low-resolution noise upsampled bilinearly, quantised to 8 bits.
inline torch::Tensor smooth_image(int64_t size, int64_t seed) {
    auto gen = at::detail::createCPUGenerator(static_cast<uint64_t>(seed));
    auto low = at::rand({1, 3, 8, 8}, gen);
    auto up = torch::nn::functional::interpolate(
        low, torch::nn::functional::InterpolateFuncOptions().size(std::vector<int64_t>{size, size}).mode(torch::kBilinear).align_corners(false));
    up = up + 0.05 * at::randn({1, 3, size, size}, gen);
    up = (up.clamp(0, 1) * 255).round() / 127.5 - 1;
    return up.squeeze(0);
}

}  // namespace beautyrec::fixtures
