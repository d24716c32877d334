#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

#include "beautyrec/face_data.hpp"

namespace beautyrec {

namespace nn = torch::nn;

struct GeneratorConfig {
    int64_t base_channels = 48;
    int64_t reduction_ratio = 16;
    int64_t attention_heads = 8;
    int64_t mlp_hidden = 192;
    std::array<Component, 3> transfer_order{Component::Lips, Component::Skin, Component::Eyes};
    ComponentSet enabled_components = ComponentSet::all();
    bool global_path_enabled = true;

    /// Throws ConfigError listing every violated constraint.
    void validate() const;
    /// True when weights trained under `other` can be loaded into a model built from *this.
    bool same_architecture(const GeneratorConfig& other) const;

    nlohmann::json to_json() const;
    static GeneratorConfig from_json(const nlohmann::json& j);
};

/// Per-call switches; defaults come from the generator config.
struct TransferOptions {
    ComponentSet components = ComponentSet::all();
    bool global_path = true;
    std::array<Component, 3> order{Component::Lips, Component::Skin, Component::Eyes};

    static TransferOptions from(const GeneratorConfig& config);
};

struct ContentFeatures {
    torch::Tensor grid;     // [N, C, H/4, W/4]
    torch::Tensor mid;      // [N, C, H/2, W/2]
    torch::Tensor shallow;  // [N, C, H, W], output of the first Conv-IN-ReLU
};

struct StyleBundle {
    torch::Tensor lips, skin, eyes;  // component style encoder outputs, [N, C, H/4, W/4]
    torch::Tensor global;            // global style encoder output

    const torch::Tensor& get(Component c) const;
};

class ResBlockImpl : public nn::Module {
public:
    explicit ResBlockImpl(int64_t channels);
    torch::Tensor forward(const torch::Tensor& x);

    nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(ResBlock);

/// Three Conv-IN-ReLU layers (kernels 7,4,4; strides 1,2,2) then three residual blocks.
class ContentEncoderImpl : public nn::Module {
public:
    explicit ContentEncoderImpl(int64_t channels);
    ContentFeatures forward(const torch::Tensor& image);
    /// The first Conv-IN-ReLU layer alone; the feature space of the content consistency loss.
    torch::Tensor first_layer(const torch::Tensor& image);

    nn::Conv2d first{nullptr}, down1{nullptr}, down2{nullptr};
    nn::Sequential blocks{nullptr};
};
TORCH_MODULE(ContentEncoder);

/// Conv-ReLU x4 (kernels 7,4,4,1; strides 1,2,2,1), no normalisation.
class StyleEncoderImpl : public nn::Module {
public:
    explicit StyleEncoderImpl(int64_t channels);
    torch::Tensor forward(const torch::Tensor& image);

    nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr}, conv4{nullptr};
};
TORCH_MODULE(StyleEncoder);

/// Global average pool -> FC(C, C/r) -> ReLU -> FC(C/r, C) -> sigmoid. Returns [N, C] weights.
class ChannelAttentionImpl : public nn::Module {
public:
    ChannelAttentionImpl(int64_t channels, int64_t reduction);
    torch::Tensor forward(const torch::Tensor& style);

    nn::Linear fc1{nullptr}, fc2{nullptr};
    int64_t channels;
};
TORCH_MODULE(ChannelAttention);

/// Channel-wise mean and max -> 1x1 conv -> sigmoid mask multiplied into every channel.
class SpatialAttentionImpl : public nn::Module {
public:
    SpatialAttentionImpl();
    torch::Tensor mask(const torch::Tensor& features);
    torch::Tensor forward(const torch::Tensor& features);

    nn::Conv2d conv{nullptr};
};
TORCH_MODULE(SpatialAttention);

/// Features inside the mask come from `attended`, everything else from `passthrough`, exactly.
torch::Tensor position_map(const torch::Tensor& attended, const torch::Tensor& passthrough, const torch::Tensor& mask);

/// One component step: PM(SA(CA(style) * features), features, mask).
class ComponentTransferImpl : public nn::Module {
public:
    ComponentTransferImpl(int64_t channels, int64_t reduction);
    torch::Tensor forward(const torch::Tensor& features, const torch::Tensor& style, const torch::Tensor& mask);

    ChannelAttention channel_attention{nullptr};
    SpatialAttention spatial_attention{nullptr};
};
TORCH_MODULE(ComponentTransfer);

/// 2-D sine/cosine position table of shape [H*W, C]: first half of the channels encodes the row,
/// second half the column.
torch::Tensor sinusoidal_positions(int64_t height, int64_t width, int64_t channels, const torch::TensorOptions& options);

/// Cross-attention with style tokens as queries and content tokens as keys and values,
/// followed by a two-layer MLP with a residual connection.
class LongRangeTransferImpl : public nn::Module {
public:
    struct Trace {
        torch::Tensor query_in, key_in, value_in;  // token inputs to the three projections
        torch::Tensor attention;                   // [N, heads, Lq, Lk]
    };

    LongRangeTransferImpl(int64_t channels, int64_t heads, int64_t mlp_hidden);
    torch::Tensor forward(const torch::Tensor& content, const torch::Tensor& global_style, Trace* trace = nullptr);
    /// Token-level core: [N, L, C] inputs and [L, C] position tables.
    torch::Tensor attend_tokens(const torch::Tensor& style_tokens, const torch::Tensor& content_tokens,
                                const torch::Tensor& query_pos, const torch::Tensor& key_pos, Trace* trace = nullptr);

    nn::Linear q_proj{nullptr}, k_proj{nullptr}, v_proj{nullptr}, out_proj{nullptr};
    nn::Linear mlp_fc1{nullptr}, mlp_fc2{nullptr};
    int64_t heads;
};
TORCH_MODULE(LongRangeTransfer);

/// Fusion of the two transfer paths and upsampling back to image resolution.
class DecoderImpl : public nn::Module {
public:
    explicit DecoderImpl(int64_t channels);
    torch::Tensor forward(const torch::Tensor& transferred, const torch::Tensor& global_features,
                          const ContentFeatures& skips);

    nn::Conv2d fuse{nullptr};
    nn::Sequential blocks{nullptr};
    nn::Conv2d up1{nullptr}, up2{nullptr}, out{nullptr};
};
TORCH_MODULE(Decoder);

/// Nearest-neighbour resize of [N,1,H,W] masks to feature resolution.
torch::Tensor downsample_mask(const torch::Tensor& mask, int64_t height, int64_t width);

struct FlopCount {
    int64_t macs = 0;
    int64_t flops() const { return 2 * macs; }
};

class GeneratorImpl : public nn::Module {
public:
    explicit GeneratorImpl(GeneratorConfig config = {});

    ContentFeatures encode_content(const torch::Tensor& source);
    StyleBundle encode_styles(const torch::Tensor& reference, const FaceMasks& reference_masks);
    /// Sequential component steps in options.order; disabled components are skipped. If `trace`
    /// is given it receives the grid before the first step and after every step.
    torch::Tensor component_transfer(const torch::Tensor& grid, const StyleBundle& styles, const FaceMasks& grid_masks,
                                     const TransferOptions& options, std::vector<torch::Tensor>* trace = nullptr);
    torch::Tensor long_range_transfer(const torch::Tensor& grid, const torch::Tensor& global_style);
    torch::Tensor reconstruct(const torch::Tensor& transferred, const torch::Tensor& global_features,
                              const ContentFeatures& skips);

    /// Batched forward: source/reference [N,3,H,W] in [-1,1] with their face masks at image resolution.
    torch::Tensor forward(const torch::Tensor& source, const torch::Tensor& reference, const FaceMasks& source_masks,
                          const FaceMasks& reference_masks, const TransferOptions& options);
    /// Single pair convenience; returns [3,H,W]. Removal is the same call with roles swapped.
    torch::Tensor transfer(const FaceSample& source, const FaceSample& reference, const TransferOptions& options);

    int64_t count_parameters() const;
    /// Multiply-accumulates for one source+reference pair at size x size.
    FlopCount count_flops(int64_t height, int64_t width) const;

    const GeneratorConfig& config() const { return config_; }
    ComponentTransfer& step(Component c);

    ContentEncoder content_encoder{nullptr};
    StyleEncoder component_style_encoder{nullptr};
    StyleEncoder global_style_encoder{nullptr};
    ComponentTransfer lips_transfer{nullptr}, skin_transfer{nullptr}, eyes_transfer{nullptr};
    LongRangeTransfer long_range{nullptr};
    Decoder decoder{nullptr};

private:
    GeneratorConfig config_;
};
TORCH_MODULE(Generator);

/// Shape check shared by every entry point: [N,3,H,W] with H and W divisible by 4.
void require_image_batch(const torch::Tensor& image, const char* what);

}  // namespace beautyrec
