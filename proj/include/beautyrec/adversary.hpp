#pragma once

#include <array>
#include <string_view>

#include <torch/torch.h>

#include "beautyrec/face_data.hpp"

namespace beautyrec {

namespace nn = torch::nn;

/// Convolution whose kernel is divided by a power-iteration estimate of its largest singular
/// value. Training-mode forwards advance the power iteration; eval-mode forwards reuse it.
class SpectralConv2dImpl : public nn::Module {
public:
    SpectralConv2dImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding);

    torch::Tensor forward(const torch::Tensor& x);
    /// Kernel after normalisation (advances the power iteration in training mode).
    torch::Tensor normalized_weight();
    /// Current estimate of the largest singular value of the raw kernel.
    torch::Tensor sigma() const;

    int64_t in_channels, out_channels, kernel, stride, padding;
    torch::Tensor weight, bias;
    torch::Tensor u, v;  // power-iteration state, registered as buffers

private:
    void power_iteration(int iterations);
};
TORCH_MODULE(SpectralConv2d);

/// Encoder-decoder discriminator with additive skip connections, three downsampling levels,
/// spectral normalisation on every convolution, and a per-pixel realism map.
class UNetDiscriminatorImpl : public nn::Module {
public:
    explicit UNetDiscriminatorImpl(int64_t base_channels = 64);
    /// [N,3,H,W] -> [N,1,H,W] unbounded scores. H and W must be divisible by 8.
    torch::Tensor forward(const torch::Tensor& image);
    int64_t count_flops(int64_t height, int64_t width) const;

    SpectralConv2d conv0{nullptr}, down1{nullptr}, down2{nullptr}, down3{nullptr};
    SpectralConv2d up3{nullptr}, up2{nullptr}, up1{nullptr}, out{nullptr};
};
TORCH_MODULE(UNetDiscriminator);

enum class DiscriminatorRole : std::uint8_t { Global, Skin, Lips, LeftEye, RightEye };

inline constexpr std::array<DiscriminatorRole, 5> kDiscriminatorRoles{
    DiscriminatorRole::Global, DiscriminatorRole::Skin, DiscriminatorRole::Lips, DiscriminatorRole::LeftEye,
    DiscriminatorRole::RightEye};

std::string_view to_string(DiscriminatorRole role);

/// Five discriminators of identical architecture and separate weights.
class DiscriminatorSetImpl : public nn::Module {
public:
    explicit DiscriminatorSetImpl(int64_t base_channels = 64);

    UNetDiscriminator& get(DiscriminatorRole role);

    UNetDiscriminator global_d{nullptr}, skin_d{nullptr}, lips_d{nullptr}, left_eye_d{nullptr}, right_eye_d{nullptr};
};
TORCH_MODULE(DiscriminatorSet);

/// [N,1,H,W] region a discriminator judges; all ones for the global discriminator.
torch::Tensor region_mask(const FaceMasks& masks, DiscriminatorRole role, const torch::Tensor& like);

/// Image with everything outside the component blacked out (global: image unchanged).
torch::Tensor local_input(const torch::Tensor& image, const ParsingMap& parsing, Component which);
torch::Tensor local_input(const torch::Tensor& images, const FaceMasks& masks, DiscriminatorRole role);

}  // namespace beautyrec
