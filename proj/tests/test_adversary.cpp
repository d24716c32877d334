#include <gtest/gtest.h>

#include "beautyrec/adversary.hpp"
#include "support.hpp"

using namespace beautyrec;

namespace {

// Largest singular value of a kernel reshaped to [out, in*k*k], by SVD.
double top_singular_value(const torch::Tensor& w) {
    auto m = w.detach().reshape({w.size(0), -1}).to(torch::kDouble);
    return torch::linalg_svdvals(m).max().item<double>();
}

}  // namespace

TEST(UNetDiscriminator, ShapeAndDeterminism) {
    torch::manual_seed(1);
    UNetDiscriminator d(64);
    d->eval();
    torch::NoGradGuard ng;
    auto x = torch::rand({1, 3, 256, 256}) * 2 - 1;
    auto a = d(x);
    EXPECT_EQ(a.sizes(), (std::vector<int64_t>{1, 1, 256, 256}));
    EXPECT_TRUE(torch::equal(a, d(x)));
    EXPECT_THROW(d(torch::zeros({1, 3, 36, 36})), std::invalid_argument);
}

TEST(UNetDiscriminator, SpectralNormBoundsEveryKernel) {
    torch::manual_seed(2);
    UNetDiscriminator d(16);
    d->train();
    // Power iteration converges over training-mode forwards.
    for (int i = 0; i < 30; ++i) d(torch::rand({1, 3, 32, 32}));
    for (auto* conv : {&d->conv0, &d->down1, &d->down2, &d->down3, &d->up3, &d->up2, &d->up1, &d->out}) {
        d->eval();
        EXPECT_LE(top_singular_value((*conv)->normalized_weight()), 1.0 + 1e-2);
    }
}

TEST(UNetDiscriminator, SetHoldsFiveIndependentNetworks) {
    torch::manual_seed(3);
    DiscriminatorSet set(16);
    std::set<void*> storages;
    for (auto role : kDiscriminatorRoles) storages.insert(set->get(role)->conv0->weight.data_ptr());
    EXPECT_EQ(storages.size(), 5u);
    EXPECT_FALSE(torch::equal(set->global_d->conv0->weight, set->lips_d->conv0->weight));
}

TEST(LocalInput, EmptyMaskGivesBlackImage) {
    auto img = torch::rand({3, 16, 16}) * 2 - 1;
    ParsingMap blank{torch::zeros({16, 16}, torch::kUInt8)};
    EXPECT_TRUE(torch::equal(local_input(img, blank, Component::Lips), torch::full_like(img, -1)));
}

TEST(LocalInput, LipsSupportAndRange) {
    auto face = synth_face(64, 8, true);
    auto out = local_input(face.image, face.parsing, Component::Lips);
    auto lips = component_mask(face.parsing, Component::Lips).mask.gt(0.5);
    auto not_black = (out != -1).any(0);
    EXPECT_TRUE(((not_black & ~lips).sum() == 0).item<bool>());
    EXPECT_TRUE(torch::equal(out.masked_select(lips.expand_as(out)), face.image.masked_select(lips.expand_as(out))));
    EXPECT_GE(out.min().item<float>(), -1.0f);
    EXPECT_LE(out.max().item<float>(), 1.0f);
}

TEST(LocalInput, EyesUseSeparateSides) {
    auto face = synth_face(64, 8, true);
    EXPECT_THROW(local_input(face.image, face.parsing, Component::Eyes), std::invalid_argument);
    auto left = local_input(face.image, face.parsing, Component::LeftEye);
    auto right = local_input(face.image, face.parsing, Component::RightEye);
    auto both = (left != -1).any(0) & (right != -1).any(0);
    EXPECT_EQ(both.sum().item<int64_t>(), 0);
}

TEST(RegionMask, GlobalIsAllOnes) {
    auto face = synth_face(32, 1, false);
    auto masks = FaceMasks::from(face.parsing);
    auto like = torch::zeros({1, 3, 32, 32});
    EXPECT_TRUE(torch::equal(region_mask(masks, DiscriminatorRole::Global, like), torch::ones({1, 1, 32, 32})));
    EXPECT_TRUE(torch::equal(region_mask(masks, DiscriminatorRole::Lips, like), masks.lips));
}
