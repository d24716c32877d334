#include "beautyrec/generator.hpp"

#include <cmath>
#include <set>
#include <string>

namespace beautyrec {

namespace F = torch::nn::functional;

namespace {

nn::Conv2d make_conv(int64_t in, int64_t out, int64_t kernel, int64_t stride = 1, bool reflect = true) {
    auto opts = nn::Conv2dOptions(in, out, kernel).stride(stride);
    if (kernel == 1) return nn::Conv2d(opts);
    if (stride == 1 && kernel % 2 == 1) {
        opts.padding(kernel / 2);
        if (reflect) opts.padding_mode(torch::kReflect);
        return nn::Conv2d(opts);
    }
    // kernel 4, stride 2: exact halving
    return nn::Conv2d(opts.padding((kernel - stride) / 2));
}

torch::Tensor instance_norm(const torch::Tensor& x) {
    return F::instance_norm(x, F::InstanceNormFuncOptions().eps(1e-5));
}

int64_t conv_macs(const nn::Conv2d& conv, int64_t out_h, int64_t out_w) {
    const auto& o = conv->options;
    const auto k = (*o.kernel_size())[0] * (*o.kernel_size())[1];
    return out_h * out_w * o.out_channels() * (o.in_channels() / o.groups()) * k;
}

int64_t linear_macs(const nn::Linear& linear, int64_t tokens) {
    return tokens * linear->options.in_features() * linear->options.out_features();
}

const char* component_name(Component c) {
    switch (c) {
        case Component::Lips: return "lips";
        case Component::Skin: return "skin";
        case Component::Eyes: return "eyes";
        default: return "other";
    }
}

}  // namespace

void require_image_batch(const torch::Tensor& image, const char* what) {
    if (image.dim() != 4 || image.size(1) != 3) {
        throw ShapeError(std::string(what) + " must be an [N,3,H,W] image batch");
    }
    if (image.size(2) % 4 != 0 || image.size(3) % 4 != 0) {
        throw ShapeError(std::string(what) + " height and width must be divisible by 4");
    }
}

void GeneratorConfig::validate() const {
    std::vector<std::string> problems;
    if (base_channels <= 0) problems.push_back("generator.base_channels must be positive");
    if (attention_heads <= 0) problems.push_back("generator.attention_heads must be positive");
    if (reduction_ratio <= 0) problems.push_back("generator.reduction_ratio must be positive");
    if (mlp_hidden <= 0) problems.push_back("generator.mlp_hidden must be positive");
    if (base_channels > 0 && attention_heads > 0 && base_channels % attention_heads != 0) {
        problems.push_back("generator.base_channels must be divisible by attention_heads");
    }
    if (base_channels > 0 && reduction_ratio > 0 && base_channels % reduction_ratio != 0) {
        problems.push_back("generator.reduction_ratio must divide base_channels");
    }
    if (base_channels > 0 && base_channels % 4 != 0) {
        problems.push_back("generator.base_channels must be divisible by 4 for 2-D position encodings");
    }
    std::set<Component> seen(transfer_order.begin(), transfer_order.end());
    if (seen.size() != 3 || seen.count(Component::LeftEye) || seen.count(Component::RightEye)) {
        problems.push_back("generator.transfer_order must be a permutation of lips, skin, eyes");
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
}

bool GeneratorConfig::same_architecture(const GeneratorConfig& other) const {
    return base_channels == other.base_channels && reduction_ratio == other.reduction_ratio &&
           attention_heads == other.attention_heads && mlp_hidden == other.mlp_hidden;
}

nlohmann::json GeneratorConfig::to_json() const {
    nlohmann::json order = nlohmann::json::array();
    for (auto c : transfer_order) order.push_back(std::string(to_string(c)));
    return {{"base_channels", base_channels},
            {"reduction_ratio", reduction_ratio},
            {"attention_heads", attention_heads},
            {"mlp_hidden", mlp_hidden},
            {"transfer_order", order},
            {"enabled_components", enabled_components.to_string()},
            {"global_path_enabled", global_path_enabled}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
    GeneratorConfig c;
    std::vector<std::string> problems;
    if (!j.is_object()) throw ConfigError({"generator section must be an object"});
    auto read_int = [&](const char* key, int64_t& dst) {
        if (!j.contains(key)) return;
        if (!j[key].is_number_integer()) {
            problems.push_back(std::string("generator.") + key + " must be an integer");
            return;
        }
        dst = j[key].get<int64_t>();
    };
    read_int("base_channels", c.base_channels);
    read_int("reduction_ratio", c.reduction_ratio);
    read_int("attention_heads", c.attention_heads);
    read_int("mlp_hidden", c.mlp_hidden);
    if (j.contains("transfer_order")) {
        const auto& o = j["transfer_order"];
        if (!o.is_array() || o.size() != 3) {
            problems.push_back("generator.transfer_order must be a list of three component names");
        } else {
            for (std::size_t i = 0; i < 3; ++i) {
                try {
                    c.transfer_order[i] = parse_component(o[i].get<std::string>());
                } catch (const std::exception& e) {
                    problems.push_back(std::string("generator.transfer_order: ") + e.what());
                }
            }
        }
    }
    if (j.contains("enabled_components")) {
        try {
            c.enabled_components = ComponentSet::parse(j["enabled_components"].get<std::string>());
        } catch (const std::exception& e) {
            problems.push_back(std::string("generator.enabled_components: ") + e.what());
        }
    }
    if (j.contains("global_path_enabled")) {
        if (!j["global_path_enabled"].is_boolean()) {
            problems.push_back("generator.global_path_enabled must be a boolean");
        } else {
            c.global_path_enabled = j["global_path_enabled"].get<bool>();
        }
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
    c.validate();
    return c;
}

TransferOptions TransferOptions::from(const GeneratorConfig& config) {
    return {config.enabled_components, config.global_path_enabled, config.transfer_order};
}

const torch::Tensor& StyleBundle::get(Component c) const {
    switch (c) {
        case Component::Lips: return lips;
        case Component::Skin: return skin;
        case Component::Eyes: return eyes;
        default: throw std::invalid_argument("no style map for this component");
    }
}

ResBlockImpl::ResBlockImpl(int64_t channels) {
    conv1 = register_module("conv1", make_conv(channels, channels, 3));
    conv2 = register_module("conv2", make_conv(channels, channels, 3));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
    auto h = torch::relu(instance_norm(conv1(x)));
    return x + instance_norm(conv2(h));
}

ContentEncoderImpl::ContentEncoderImpl(int64_t channels) {
    first = register_module("first", make_conv(3, channels, 7));
    down1 = register_module("down1", make_conv(channels, channels, 4, 2));
    down2 = register_module("down2", make_conv(channels, channels, 4, 2));
    blocks = register_module("blocks", nn::Sequential(ResBlock(channels), ResBlock(channels), ResBlock(channels)));
}

torch::Tensor ContentEncoderImpl::first_layer(const torch::Tensor& image) {
    return torch::relu(instance_norm(first(image)));
}

ContentFeatures ContentEncoderImpl::forward(const torch::Tensor& image) {
    ContentFeatures f;
    f.shallow = first_layer(image);
    f.mid = torch::relu(instance_norm(down1(f.shallow)));
    auto x = torch::relu(instance_norm(down2(f.mid)));
    f.grid = blocks->forward(x);
    return f;
}

StyleEncoderImpl::StyleEncoderImpl(int64_t channels) {
    conv1 = register_module("conv1", make_conv(3, channels, 7));
    conv2 = register_module("conv2", make_conv(channels, channels, 4, 2));
    conv3 = register_module("conv3", make_conv(channels, channels, 4, 2));
    conv4 = register_module("conv4", make_conv(channels, channels, 1));
}

torch::Tensor StyleEncoderImpl::forward(const torch::Tensor& image) {
    auto x = torch::relu(conv1(image));
    x = torch::relu(conv2(x));
    x = torch::relu(conv3(x));
    return torch::relu(conv4(x));
}

ChannelAttentionImpl::ChannelAttentionImpl(int64_t channels_, int64_t reduction) : channels(channels_) {
    fc1 = register_module("fc1", nn::Linear(channels, channels / reduction));
    fc2 = register_module("fc2", nn::Linear(channels / reduction, channels));
}

torch::Tensor ChannelAttentionImpl::forward(const torch::Tensor& style) {
    if (style.dim() != 4 || style.size(1) != channels) {
        throw ShapeError("channel attention expects [N," + std::to_string(channels) + ",H,W] style features");
    }
    auto pooled = style.mean({2, 3});
    return torch::sigmoid(fc2(torch::relu(fc1(pooled))));
}

SpatialAttentionImpl::SpatialAttentionImpl() { conv = register_module("conv", nn::Conv2d(nn::Conv2dOptions(2, 1, 1))); }

torch::Tensor SpatialAttentionImpl::mask(const torch::Tensor& features) {
    auto avg = features.mean(1, /*keepdim=*/true);
    auto mx = std::get<0>(features.max(1, /*keepdim=*/true));
    return torch::sigmoid(conv(torch::cat({avg, mx}, 1)));
}

torch::Tensor SpatialAttentionImpl::forward(const torch::Tensor& features) { return features * mask(features); }

torch::Tensor position_map(const torch::Tensor& attended, const torch::Tensor& passthrough, const torch::Tensor& mask) {
    if (attended.sizes() != passthrough.sizes()) throw ShapeError("position_map: feature shapes differ");
    if (mask.dim() != 4 || mask.size(1) != 1 || mask.size(0) != attended.size(0) ||
        mask.size(2) != attended.size(2) || mask.size(3) != attended.size(3)) {
        throw ShapeError("position_map: mask must be [N,1,h,w] at feature resolution");
    }
    return torch::where(mask.gt(0.5), attended, passthrough);
}

ComponentTransferImpl::ComponentTransferImpl(int64_t channels, int64_t reduction) {
    channel_attention = register_module("channel_attention", ChannelAttention(channels, reduction));
    spatial_attention = register_module("spatial_attention", SpatialAttention());
}

torch::Tensor ComponentTransferImpl::forward(const torch::Tensor& features, const torch::Tensor& style,
                                             const torch::Tensor& mask) {
    auto weights = channel_attention(style);
    auto scaled = features * weights.unsqueeze(-1).unsqueeze(-1);
    auto attended = spatial_attention(scaled);
    return position_map(attended, features, mask);
}

torch::Tensor sinusoidal_positions(int64_t height, int64_t width, int64_t channels, const torch::TensorOptions& options) {
    if (channels % 4 != 0) throw ShapeError("position encoding needs channels divisible by 4");
    const auto quarter = channels / 4;
    auto dopts = options.dtype(torch::kDouble);
    auto freq = torch::exp(torch::arange(quarter, dopts) * (-std::log(10000.0) / static_cast<double>(quarter)));
    auto encode = [&](int64_t n) {
        auto angle = torch::arange(n, dopts).unsqueeze(1) * freq.unsqueeze(0);  // [n, quarter]
        return torch::cat({torch::sin(angle), torch::cos(angle)}, 1);          // [n, C/2]
    };
    auto rows = encode(height).unsqueeze(1).expand({height, width, channels / 2});
    auto cols = encode(width).unsqueeze(0).expand({height, width, channels / 2});
    return torch::cat({rows, cols}, 2).reshape({height * width, channels}).to(options.dtype());
}

LongRangeTransferImpl::LongRangeTransferImpl(int64_t channels, int64_t heads_, int64_t mlp_hidden) : heads(heads_) {
    q_proj = register_module("q_proj", nn::Linear(channels, channels));
    k_proj = register_module("k_proj", nn::Linear(channels, channels));
    v_proj = register_module("v_proj", nn::Linear(channels, channels));
    out_proj = register_module("out_proj", nn::Linear(channels, channels));
    mlp_fc1 = register_module("mlp_fc1", nn::Linear(channels, mlp_hidden));
    mlp_fc2 = register_module("mlp_fc2", nn::Linear(mlp_hidden, channels));
}

torch::Tensor LongRangeTransferImpl::attend_tokens(const torch::Tensor& style_tokens, const torch::Tensor& content_tokens,
                                                   const torch::Tensor& query_pos, const torch::Tensor& key_pos,
                                                   Trace* trace) {
    const auto n = style_tokens.size(0);
    const auto lq = style_tokens.size(1);
    const auto lk = content_tokens.size(1);
    const auto c = style_tokens.size(2);
    const auto d = c / heads;

    auto query_in = style_tokens + query_pos;
    auto key_in = content_tokens + key_pos;
    const auto& value_in = content_tokens;

    auto split = [&](const torch::Tensor& t, int64_t len) { return t.view({n, len, heads, d}).transpose(1, 2); };
    auto q = split(q_proj(query_in), lq);
    auto k = split(k_proj(key_in), lk);
    auto v = split(v_proj(value_in), lk);

    auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(d));
    auto attention = torch::softmax(scores, -1);
    auto context = torch::matmul(attention, v).transpose(1, 2).reshape({n, lq, c});
    auto attended = out_proj(context);
    auto out = attended + mlp_fc2(torch::gelu(mlp_fc1(attended)));

    if (trace) *trace = Trace{query_in, key_in, value_in, attention};
    return out;
}

torch::Tensor LongRangeTransferImpl::forward(const torch::Tensor& content, const torch::Tensor& global_style,
                                             Trace* trace) {
    if (content.dim() != 4 || content.sizes() != global_style.sizes()) {
        throw ShapeError("long-range transfer: content and style token counts differ");
    }
    const auto n = content.size(0), c = content.size(1), h = content.size(2), w = content.size(3);
    auto to_tokens = [](const torch::Tensor& t) { return t.flatten(2).transpose(1, 2); };
    auto pos = sinusoidal_positions(h, w, c, content.options());
    auto out = attend_tokens(to_tokens(global_style), to_tokens(content), pos, pos, trace);
    return out.transpose(1, 2).reshape({n, c, h, w});
}

DecoderImpl::DecoderImpl(int64_t channels) {
    fuse = register_module("fuse", make_conv(2 * channels, channels, 1));
    blocks = register_module("blocks", nn::Sequential(ResBlock(channels), ResBlock(channels), ResBlock(channels)));
    up1 = register_module("up1", make_conv(2 * channels, channels, 3));
    up2 = register_module("up2", make_conv(2 * channels, channels, 3));
    out = register_module("out", make_conv(channels, 3, 7));
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& transferred, const torch::Tensor& global_features,
                                   const ContentFeatures& skips) {
    if (transferred.sizes() != global_features.sizes() || transferred.size(2) * 2 != skips.mid.size(2) ||
        transferred.size(3) * 2 != skips.mid.size(3) || skips.mid.size(2) * 2 != skips.shallow.size(2)) {
        throw ShapeError("decoder inputs do not match the encoder geometry");
    }
    auto up = [](const torch::Tensor& x) {
        return F::interpolate(x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
    };
    auto x = fuse(torch::cat({transferred, global_features}, 1));
    x = blocks->forward(x);
    x = torch::relu(instance_norm(up1(torch::cat({up(x), skips.mid}, 1))));
    x = torch::relu(instance_norm(up2(torch::cat({up(x), skips.shallow}, 1))));
    return torch::tanh(out(x));
}

torch::Tensor downsample_mask(const torch::Tensor& mask, int64_t height, int64_t width) {
    if (mask.dim() != 4 || mask.size(1) != 1) throw ShapeError("masks must be [N,1,H,W]");
    if (mask.size(2) == height && mask.size(3) == width) return mask;
    return F::interpolate(mask, F::InterpolateFuncOptions().size(std::vector<int64_t>{height, width}).mode(torch::kNearest));
}

GeneratorImpl::GeneratorImpl(GeneratorConfig config) : config_(std::move(config)) {
    config_.validate();
    const auto c = config_.base_channels;
    const auto r = config_.reduction_ratio;
    content_encoder = register_module("content_encoder", ContentEncoder(c));
    component_style_encoder = register_module("component_style_encoder", StyleEncoder(c));
    global_style_encoder = register_module("global_style_encoder", StyleEncoder(c));
    lips_transfer = register_module("lips_transfer", ComponentTransfer(c, r));
    skin_transfer = register_module("skin_transfer", ComponentTransfer(c, r));
    eyes_transfer = register_module("eyes_transfer", ComponentTransfer(c, r));
    long_range = register_module("long_range", LongRangeTransfer(c, config_.attention_heads, config_.mlp_hidden));
    decoder = register_module("decoder", Decoder(c));
}

ComponentTransfer& GeneratorImpl::step(Component c) {
    switch (c) {
        case Component::Lips: return lips_transfer;
        case Component::Skin: return skin_transfer;
        case Component::Eyes: return eyes_transfer;
        default: throw std::invalid_argument(std::string("no transfer step for ") + component_name(c));
    }
}

ContentFeatures GeneratorImpl::encode_content(const torch::Tensor& source) {
    require_image_batch(source, "source");
    return content_encoder(source);
}

StyleBundle GeneratorImpl::encode_styles(const torch::Tensor& reference, const FaceMasks& reference_masks) {
    require_image_batch(reference, "reference");
    const auto n = reference.size(0);
    auto masked = torch::cat({extract_component(reference, reference_masks.lips.to(reference.dtype())),
                              extract_component(reference, reference_masks.skin.to(reference.dtype())),
                              extract_component(reference, reference_masks.eyes.to(reference.dtype()))},
                             0);
    auto styles = component_style_encoder(masked).split(n, 0);
    return StyleBundle{styles[0], styles[1], styles[2], global_style_encoder(reference)};
}

torch::Tensor GeneratorImpl::component_transfer(const torch::Tensor& grid, const StyleBundle& styles,
                                                const FaceMasks& grid_masks, const TransferOptions& options,
                                                std::vector<torch::Tensor>* trace) {
    auto features = grid;
    if (trace) trace->push_back(features);
    for (auto c : options.order) {
        if (options.components.contains(c)) {
            auto mask = downsample_mask(grid_masks.get(c), grid.size(2), grid.size(3)).to(grid.dtype());
            features = step(c)(features, styles.get(c), mask);
        }
        if (trace) trace->push_back(features);
    }
    return features;
}

torch::Tensor GeneratorImpl::long_range_transfer(const torch::Tensor& grid, const torch::Tensor& global_style) {
    return long_range(grid, global_style);
}

torch::Tensor GeneratorImpl::reconstruct(const torch::Tensor& transferred, const torch::Tensor& global_features,
                                         const ContentFeatures& skips) {
    return decoder(transferred, global_features, skips);
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& source, const torch::Tensor& reference,
                                     const FaceMasks& source_masks, const FaceMasks& reference_masks,
                                     const TransferOptions& options) {
    require_image_batch(source, "source");
    require_image_batch(reference, "reference");
    if (source.sizes() != reference.sizes()) throw ShapeError("source and reference sizes differ");
    if (!source_masks.lips.defined() || !reference_masks.lips.defined()) {
        throw std::invalid_argument("parsing masks are required for both source and reference");
    }

    auto content = encode_content(source);
    torch::Tensor transferred = content.grid;
    torch::Tensor global_style;
    if (!options.components.empty()) {
        auto styles = encode_styles(reference, reference_masks);
        transferred = component_transfer(content.grid, styles, source_masks, options);
        global_style = styles.global;
    }
    torch::Tensor global_features;
    if (options.global_path) {
        if (!global_style.defined()) global_style = global_style_encoder(reference);
        global_features = long_range_transfer(content.grid, global_style);
    } else {
        global_features = torch::zeros_like(content.grid);
    }
    return reconstruct(transferred, global_features, content);
}

torch::Tensor GeneratorImpl::transfer(const FaceSample& source, const FaceSample& reference,
                                      const TransferOptions& options) {
    auto src = source.image.unsqueeze(0);
    auto ref = reference.image.unsqueeze(0);
    return forward(src, ref, FaceMasks::from(source.parsing), FaceMasks::from(reference.parsing), options).squeeze(0);
}

int64_t GeneratorImpl::count_parameters() const {
    int64_t total = 0;
    for (const auto& p : parameters()) {
        if (p.requires_grad()) total += p.numel();
    }
    return total;
}

FlopCount GeneratorImpl::count_flops(int64_t height, int64_t width) const {
    const auto h2 = height / 2, w2 = width / 2, h4 = height / 4, w4 = width / 4;
    const auto c = config_.base_channels;
    const auto tokens = h4 * w4;
    int64_t macs = 0;

    auto res_blocks = [&](const nn::Sequential& blocks) {
        for (const auto& m : blocks->children()) {
            auto block = std::dynamic_pointer_cast<ResBlockImpl>(m);
            macs += conv_macs(block->conv1, h4, w4) + conv_macs(block->conv2, h4, w4);
        }
    };

    const auto& ce = content_encoder;
    macs += conv_macs(ce->first, height, width) + conv_macs(ce->down1, h2, w2) + conv_macs(ce->down2, h4, w4);
    res_blocks(ce->blocks);

    // component style encoder runs once per component, global encoder once
    auto style_macs = [&](const StyleEncoder& se) {
        return conv_macs(se->conv1, height, width) + conv_macs(se->conv2, h2, w2) + conv_macs(se->conv3, h4, w4) +
               conv_macs(se->conv4, h4, w4);
    };
    macs += 3 * style_macs(component_style_encoder) + style_macs(global_style_encoder);

    for (const auto* t : {&lips_transfer, &skin_transfer, &eyes_transfer}) {
        const auto& ca = (*t)->channel_attention;
        macs += linear_macs(ca->fc1, 1) + linear_macs(ca->fc2, 1);
        macs += conv_macs((*t)->spatial_attention->conv, h4, w4);
    }

    const auto& lr = long_range;
    macs += linear_macs(lr->q_proj, tokens) + linear_macs(lr->k_proj, tokens) + linear_macs(lr->v_proj, tokens) +
            linear_macs(lr->out_proj, tokens);
    macs += 2 * tokens * tokens * c;  // scores and weighted values
    macs += linear_macs(lr->mlp_fc1, tokens) + linear_macs(lr->mlp_fc2, tokens);

    const auto& dec = decoder;
    macs += conv_macs(dec->fuse, h4, w4);
    res_blocks(dec->blocks);
    macs += conv_macs(dec->up1, h2, w2) + conv_macs(dec->up2, height, width) + conv_macs(dec->out, height, width);
    return FlopCount{macs};
}

}  // namespace beautyrec
