#include "beautyrec/adversary.hpp"

namespace beautyrec {

namespace F = torch::nn::functional;

namespace {

constexpr double kNormEps = 1e-12;
constexpr double kLeakySlope = 0.2;

torch::Tensor normalize(const torch::Tensor& t) { return t / t.norm().clamp_min(kNormEps); }

torch::Tensor lrelu(const torch::Tensor& x) { return torch::leaky_relu(x, kLeakySlope); }

torch::Tensor upsample2(const torch::Tensor& x) {
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

}  // namespace

SpectralConv2dImpl::SpectralConv2dImpl(int64_t in, int64_t out, int64_t kernel_, int64_t stride_, int64_t padding_)
    : in_channels(in), out_channels(out), kernel(kernel_), stride(stride_), padding(padding_) {
    // Same initialisation as an ordinary convolution.
    nn::Conv2d proto(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding));
    weight = register_parameter("weight", proto->weight.detach().clone());
    bias = register_parameter("bias", proto->bias.detach().clone());
    const auto rows = out;
    const auto cols = in * kernel * kernel;
    u = register_buffer("u", normalize(torch::randn({rows}, weight.options())));
    v = register_buffer("v", normalize(torch::randn({cols}, weight.options())));
    power_iteration(15);
}

void SpectralConv2dImpl::power_iteration(int iterations) {
    torch::NoGradGuard no_grad;
    auto w = weight.detach().view({out_channels, -1});
    for (int i = 0; i < iterations; ++i) {
        v.copy_(normalize(torch::mv(w.t(), u)));
        u.copy_(normalize(torch::mv(w, v)));
    }
}

torch::Tensor SpectralConv2dImpl::sigma() const {
    return torch::dot(u, torch::mv(weight.view({out_channels, -1}), v));
}

torch::Tensor SpectralConv2dImpl::normalized_weight() {
    if (!is_training()) return weight / sigma().clamp_min(kNormEps);
    power_iteration(1);
    // Later forwards update u and v in place; the graph must keep this step's copies.
    auto s = torch::dot(u.clone(), torch::mv(weight.view({out_channels, -1}), v.clone()));
    return weight / s.clamp_min(kNormEps);
}

torch::Tensor SpectralConv2dImpl::forward(const torch::Tensor& x) {
    return torch::conv2d(x, normalized_weight(), bias, stride, padding);
}

UNetDiscriminatorImpl::UNetDiscriminatorImpl(int64_t c) {
    conv0 = register_module("conv0", SpectralConv2d(3, c, 3, 1, 1));
    down1 = register_module("down1", SpectralConv2d(c, 2 * c, 4, 2, 1));
    down2 = register_module("down2", SpectralConv2d(2 * c, 4 * c, 4, 2, 1));
    down3 = register_module("down3", SpectralConv2d(4 * c, 4 * c, 4, 2, 1));
    up3 = register_module("up3", SpectralConv2d(4 * c, 4 * c, 3, 1, 1));
    up2 = register_module("up2", SpectralConv2d(4 * c, 2 * c, 3, 1, 1));
    up1 = register_module("up1", SpectralConv2d(2 * c, c, 3, 1, 1));
    out = register_module("out", SpectralConv2d(c, 1, 3, 1, 1));
}

torch::Tensor UNetDiscriminatorImpl::forward(const torch::Tensor& image) {
    if (image.dim() != 4 || image.size(1) != 3 || image.size(2) % 8 != 0 || image.size(3) % 8 != 0) {
        throw ShapeError("discriminator input must be [N,3,H,W] with H, W divisible by 8");
    }
    auto x0 = lrelu(conv0(image));
    auto x1 = lrelu(down1(x0));
    auto x2 = lrelu(down2(x1));
    auto x3 = lrelu(down3(x2));
    auto y = upsample2(lrelu(up3(x3))) + x2;
    y = upsample2(lrelu(up2(y))) + x1;
    y = upsample2(lrelu(up1(y))) + x0;
    return out(y);
}

int64_t UNetDiscriminatorImpl::count_flops(int64_t h, int64_t w) const {
    auto macs = [](const SpectralConv2d& conv, int64_t oh, int64_t ow) {
        return oh * ow * conv->out_channels * conv->in_channels * conv->kernel * conv->kernel;
    };
    const int64_t total = macs(conv0, h, w) + macs(down1, h / 2, w / 2) + macs(down2, h / 4, w / 4) +
                          macs(down3, h / 8, w / 8) + macs(up3, h / 8, w / 8) + macs(up2, h / 4, w / 4) +
                          macs(up1, h / 2, w / 2) + macs(out, h, w);
    return 2 * total;
}

std::string_view to_string(DiscriminatorRole role) {
    switch (role) {
        case DiscriminatorRole::Global: return "global";
        case DiscriminatorRole::Skin: return "skin";
        case DiscriminatorRole::Lips: return "lips";
        case DiscriminatorRole::LeftEye: return "left_eye";
        case DiscriminatorRole::RightEye: return "right_eye";
    }
    return "?";
}

DiscriminatorSetImpl::DiscriminatorSetImpl(int64_t c) {
    global_d = register_module("global", UNetDiscriminator(c));
    skin_d = register_module("skin", UNetDiscriminator(c));
    lips_d = register_module("lips", UNetDiscriminator(c));
    left_eye_d = register_module("left_eye", UNetDiscriminator(c));
    right_eye_d = register_module("right_eye", UNetDiscriminator(c));
}

UNetDiscriminator& DiscriminatorSetImpl::get(DiscriminatorRole role) {
    switch (role) {
        case DiscriminatorRole::Global: return global_d;
        case DiscriminatorRole::Skin: return skin_d;
        case DiscriminatorRole::Lips: return lips_d;
        case DiscriminatorRole::LeftEye: return left_eye_d;
        case DiscriminatorRole::RightEye: return right_eye_d;
    }
    throw std::invalid_argument("unknown discriminator role");
}

torch::Tensor region_mask(const FaceMasks& masks, DiscriminatorRole role, const torch::Tensor& like) {
    switch (role) {
        case DiscriminatorRole::Global:
            return torch::ones({like.size(0), 1, like.size(2), like.size(3)}, like.options());
        case DiscriminatorRole::Skin: return masks.skin.to(like.dtype());
        case DiscriminatorRole::Lips: return masks.lips.to(like.dtype());
        case DiscriminatorRole::LeftEye: return masks.left_eye.to(like.dtype());
        case DiscriminatorRole::RightEye: return masks.right_eye.to(like.dtype());
    }
    throw std::invalid_argument("unknown discriminator role");
}

torch::Tensor local_input(const torch::Tensor& image, const ParsingMap& parsing, Component which) {
    if (which == Component::Eyes) {
        throw std::invalid_argument("local discriminators judge left_eye and right_eye separately, not eyes");
    }
    return extract_component(image, component_mask(parsing, which));
}

torch::Tensor local_input(const torch::Tensor& images, const FaceMasks& masks, DiscriminatorRole role) {
    if (role == DiscriminatorRole::Global) return images;
    return extract_component(images, region_mask(masks, role, images));
}

}  // namespace beautyrec
