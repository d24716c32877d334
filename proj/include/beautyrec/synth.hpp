#pragma once

#include <cstdint>
#include <filesystem>

#include "beautyrec/face_data.hpp"

namespace beautyrec {

/// Procedural cartoon face with an exact parsing map. Makeup faces get coloured lips,
/// eye shadow around both eyes and blush; bare faces keep natural tones.
FaceSample synth_face(int64_t size, std::uint64_t seed, bool makeup);

/// Writes a dataset in the standard layout (images/, segs/, label_mapping.json) with
/// `per_domain` faces in each of the makeup and non-makeup pools.
void write_synthetic_dataset(const std::filesystem::path& root, int64_t per_domain, int64_t size, std::uint64_t seed);

}  // namespace beautyrec
