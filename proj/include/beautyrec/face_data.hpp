#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "beautyrec/errors.hpp"

namespace beautyrec {

// Canonical face-label vocabulary. Dataset-specific schemes are mapped onto it
// through a LabelMapping.
namespace label {
inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kFaceSkin = 1;
inline constexpr std::uint8_t kLeftBrow = 2;
inline constexpr std::uint8_t kRightBrow = 3;
inline constexpr std::uint8_t kLeftEye = 4;
inline constexpr std::uint8_t kRightEye = 5;
inline constexpr std::uint8_t kNose = 6;
inline constexpr std::uint8_t kUpperLip = 7;
inline constexpr std::uint8_t kMouth = 8;
inline constexpr std::uint8_t kLowerLip = 9;
inline constexpr std::uint8_t kHair = 10;
inline constexpr std::uint8_t kNeck = 11;
inline constexpr std::uint8_t kOther = 12;
inline constexpr int kCount = 13;
}  // namespace label

enum class Component : std::uint8_t { Lips, Skin, Eyes, LeftEye, RightEye };

/// The three regions the generator transfers separately.
inline constexpr std::array<Component, 3> kTransferComponents{Component::Lips, Component::Skin, Component::Eyes};

std::string_view to_string(Component c);
/// Throws std::invalid_argument on an unknown name.
Component parse_component(std::string_view name);

/// Small value-type subset of {lips, skin, eyes}.
class ComponentSet {
public:
    constexpr ComponentSet() = default;
    static constexpr ComponentSet all() { return ComponentSet{0b111}; }
    static constexpr ComponentSet none() { return ComponentSet{}; }
    /// Parses a comma list such as "lips,eyes". The empty string is the empty set.
    static ComponentSet parse(std::string_view list);

    constexpr bool contains(Component c) const { return (bits_ >> bit(c)) & 1U; }
    constexpr ComponentSet& insert(Component c) {
        bits_ |= static_cast<std::uint8_t>(1U << bit(c));
        return *this;
    }
    constexpr bool empty() const { return bits_ == 0; }
    constexpr bool operator==(const ComponentSet&) const = default;
    std::string to_string() const;

private:
    explicit constexpr ComponentSet(std::uint8_t bits) : bits_(bits) {}
    static constexpr unsigned bit(Component c) {
        switch (c) {
            case Component::Lips: return 0;
            case Component::Skin: return 1;
            case Component::Eyes: return 2;
            default: throw std::invalid_argument("only lips, skin and eyes are transfer components");
        }
    }
    std::uint8_t bits_ = 0;
};

/// Raw dataset label -> canonical label table.
class LabelMapping {
public:
    /// Empty mapping: every raw label is unmapped.
    LabelMapping() { table_.fill(-1); }
    /// Maps 0..12 onto themselves; everything else is unmapped.
    static LabelMapping identity();
    /// Reads `{"name": ..., "mapping": {"<raw>": <canonical>, ...}}`.
    static LabelMapping from_json_file(const std::filesystem::path& path);

    void set(int raw, std::uint8_t canonical);
    std::optional<std::uint8_t> map(int raw) const;

private:
    std::array<std::int16_t, 256> table_{};
};

/// H x W canonical labels (uint8 tensor).
struct ParsingMap {
    torch::Tensor labels;

    int64_t height() const { return labels.size(0); }
    int64_t width() const { return labels.size(1); }
};

/// H x W binary mask (float 0/1 tensor) for one component.
struct ComponentMask {
    Component component;
    torch::Tensor mask;

    int64_t pixels() const;
};

/// Image in [-1, 1] as a [3, H, W] float tensor, plus its canonical parsing map.
struct FaceSample {
    torch::Tensor image;
    ParsingMap parsing;
};

/// Decodes an RGB image (PNG/JPEG bytes), resizes bilinearly to size x size, maps to [-1, 1].
torch::Tensor decode_image(std::string_view bytes, int64_t size);
/// (height, width) of encoded image bytes without resizing; nullopt if undecodable.
std::optional<std::pair<int64_t, int64_t>> image_dimensions(std::string_view bytes);
/// Decodes a single-channel (indexed or grayscale) PNG, resizes nearest-neighbour, maps labels.
ParsingMap decode_parsing(std::string_view bytes, int64_t size, const LabelMapping& mapping);

FaceSample load_sample(const std::filesystem::path& image_path, const std::filesystem::path& parsing_path,
                       int64_t size, const LabelMapping& mapping = LabelMapping::identity());

/// PNG encoding of a [3, H, W] image in [-1, 1].
std::string encode_png(const torch::Tensor& image);
void write_png(const torch::Tensor& image, const std::filesystem::path& path);
/// PNG encoding of a [H, W] grayscale map in [0, 1].
std::string encode_gray_png(const torch::Tensor& map);
/// Writes a palette PNG whose pixel indices are the labels.
void write_parsing_png(const ParsingMap& parsing, const std::filesystem::path& path);
std::string read_file(const std::filesystem::path& path);

/// Nearest-neighbour label resize; never invents labels.
ParsingMap resize_parsing(const ParsingMap& parsing, int64_t height, int64_t width);

/// Radius of the disc used to grow the eye region into the eye-shadow ring.
int64_t eye_ring_radius(int64_t height, int64_t width);
/// Binary dilation of a [H, W] mask with a disc of the given radius.
torch::Tensor dilate(const torch::Tensor& mask, int64_t radius);

/// Binary mask for one component. Lips, skin and eyes are pairwise disjoint.
ComponentMask component_mask(const ParsingMap& parsing, Component component);

/// Keeps pixels inside the mask and turns the rest black (-1). Accepts [3,H,W] or [N,3,H,W]
/// images with [H,W], [1,H,W] or [N,1,H,W] masks.
torch::Tensor extract_component(const torch::Tensor& image, const torch::Tensor& mask);
torch::Tensor extract_component(const torch::Tensor& image, const ComponentMask& mask);

/// Per-channel 256-bin histogram specification of the source region onto the reference region.
torch::Tensor histogram_match(const torch::Tensor& source, const torch::Tensor& reference,
                              const ComponentMask& src_mask, const ComponentMask& ref_mask);

/// Full-frame pseudo ground truth: lips, skin and eyes regions each histogram-matched.
torch::Tensor makeup_target(const FaceSample& source, const FaceSample& reference);

/// All masks of one face stacked for the network: each entry is [1, 1, H, W] float.
struct FaceMasks {
    torch::Tensor lips, skin, eyes, left_eye, right_eye;

    static FaceMasks from(const ParsingMap& parsing);
    static FaceMasks cat(const std::vector<FaceMasks>& items);
    const torch::Tensor& get(Component c) const;
    FaceMasks to(torch::Dtype dtype) const;
};

struct PairSample {
    std::string source_id;
    std::string reference_id;
    FaceSample source;
    FaceSample reference;
};

/// Indices into the (non-makeup, makeup) pools.
struct PairDraw {
    std::size_t nonmakeup_index = 0;
    std::size_t makeup_index = 0;
};

/// Uniform independent draw from each pool; a pure function of the seed.
PairDraw sample_pair(std::size_t makeup_pool_size, std::size_t nonmakeup_pool_size, std::uint64_t rng_seed);

/// Dataset directory with images/{makeup,non-makeup} and segs/{makeup,non-makeup}.
class FaceDataset {
public:
    enum class Domain { Makeup, NonMakeup };

    FaceDataset(std::filesystem::path root, int64_t size, LabelMapping mapping = LabelMapping::identity());

    const std::vector<std::string>& ids(Domain d) const { return d == Domain::Makeup ? makeup_ : nonmakeup_; }
    FaceSample load(Domain d, const std::string& id) const;
    /// Source from the non-makeup pool, reference from the makeup pool.
    PairSample pair(std::uint64_t rng_seed) const;
    int64_t size() const { return size_; }

private:
    std::filesystem::path image_path(Domain d, const std::string& id) const;
    std::filesystem::path seg_path(Domain d, const std::string& id) const;

    std::filesystem::path root_;
    int64_t size_;
    LabelMapping mapping_;
    std::vector<std::string> makeup_;
    std::vector<std::string> nonmakeup_;
};

std::string_view domain_dir(FaceDataset::Domain d);

}  // namespace beautyrec
