#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include <torch/torch.h>

#include "json.hpp"

#include "beautyrec/adversary.hpp"
#include "beautyrec/generator.hpp"

namespace beautyrec {

inline constexpr std::uint32_t kCheckpointFormat = 1;
/// Bumped whenever a change to the network makes old weights meaningless.
inline constexpr std::string_view kModelVersion = "beautyrec-1";

/// Everything a checkpoint archive can hold. Only the generator is mandatory.
struct CheckpointContents {
    std::uint32_t format = kCheckpointFormat;
    std::string model_version{kModelVersion};
    GeneratorConfig generator_config;
    int64_t step = 0;
    nlohmann::json extra = nlohmann::json::object();  // trainer settings, free-form
    std::map<std::string, torch::Tensor> tensors;      // "<group>/<name>"
    std::map<std::string, int64_t> adam_steps;         // "<optimizer group>/<param name>"
    std::string id;                                    // checksum of the archive, hex

    bool has_group(std::string_view group) const;
};

/// Views of live training objects to be written. Null members are skipped.
struct CheckpointSource {
    Generator generator{nullptr};
    DiscriminatorSet discriminators{nullptr};
    torch::optim::Adam* generator_optimizer = nullptr;
    torch::optim::Adam* discriminator_optimizer = nullptr;
    int64_t step = 0;
    nlohmann::json extra = nlohmann::json::object();
};

std::string serialize_checkpoint(const CheckpointSource& source);
/// Writes through a temporary file and a rename, so readers never see half an archive.
void save_checkpoint(const std::filesystem::path& path, const CheckpointSource& source);

/// Throws CheckpointError on bad magic, unknown format, or checksum mismatch.
CheckpointContents parse_checkpoint(std::string_view bytes);
CheckpointContents read_checkpoint(const std::filesystem::path& path);

/// Copies generator weights. Throws CheckpointError if the stored architecture differs.
void restore_generator(const CheckpointContents& contents, Generator& generator);
/// Restores all training state; every group must be present.
void restore_training(const CheckpointContents& contents, Generator& generator, DiscriminatorSet& discriminators,
                      torch::optim::Adam& generator_optimizer, torch::optim::Adam& discriminator_optimizer);

/// Inference-only load: builds the generator from the stored config; discriminator and
/// optimizer groups are ignored. With `expected`, a different architecture is an error.
Generator load_generator(const std::filesystem::path& path, const std::optional<GeneratorConfig>& expected = {},
                         CheckpointContents* contents = nullptr);

}  // namespace beautyrec
