#include <gtest/gtest.h>

#include "beautyrec/errors.hpp"
#include "beautyrec/generator.hpp"
#include "beautyrec/objectives.hpp"
#include "support.hpp"

using namespace beautyrec;
namespace idx = torch::indexing;

namespace {

Generator make_generator(int64_t seed = 0) {
    torch::manual_seed(seed);
    Generator g(GeneratorConfig{});
    g->eval();
    return g;
}

FaceMasks masks_of(const FaceSample& f) { return FaceMasks::from(f.parsing); }

}  // namespace

TEST(GeneratorConfig, ValidatesDivisibility) {
    GeneratorConfig c;
    EXPECT_NO_THROW(c.validate());
    c.attention_heads = 5;
    c.reduction_ratio = 7;
    try {
        c.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.problems().size(), 2u);
    }
}

TEST(GeneratorConfig, JsonRoundTrip) {
    GeneratorConfig c;
    c.transfer_order = {Component::Eyes, Component::Lips, Component::Skin};
    c.enabled_components = ComponentSet::parse("lips");
    c.global_path_enabled = false;
    auto back = GeneratorConfig::from_json(c.to_json());
    EXPECT_EQ(back.transfer_order, c.transfer_order);
    EXPECT_EQ(back.enabled_components, c.enabled_components);
    EXPECT_FALSE(back.global_path_enabled);
    EXPECT_TRUE(back.same_architecture(c));
    GeneratorConfig wide;
    wide.base_channels = 64;
    EXPECT_FALSE(wide.same_architecture(c));
}

TEST(ContentEncoder, ShapesAt256) {
    auto g = make_generator();
    torch::NoGradGuard ng;
    auto f = g->encode_content(torch::rand({1, 3, 256, 256}) * 2 - 1);
    EXPECT_EQ(f.grid.sizes(), (std::vector<int64_t>{1, 48, 64, 64}));
    EXPECT_EQ(f.mid.sizes(), (std::vector<int64_t>{1, 48, 128, 128}));
    EXPECT_EQ(f.shallow.sizes(), (std::vector<int64_t>{1, 48, 256, 256}));
}

TEST(ContentEncoder, DeterministicAndSensitive) {
    auto g = make_generator();
    torch::NoGradGuard ng;
    auto x = torch::rand({1, 3, 32, 32}) * 2 - 1;
    auto a = g->encode_content(x).grid;
    EXPECT_TRUE(torch::equal(a, g->encode_content(x).grid));
    auto y = x.clone();
    y.index_put_({0, 0, 16, 16}, -y.index({0, 0, 16, 16}) + 0.5);
    EXPECT_FALSE(torch::equal(a, g->encode_content(y).grid));
}

TEST(ContentEncoder, RejectsIndivisibleSizes) {
    auto g = make_generator();
    EXPECT_THROW(g->encode_content(torch::zeros({1, 3, 30, 32})), ShapeError);
}

TEST(StyleEncoder, ShapeNonNegativeAndConstantOnBlack) {
    auto g = make_generator();
    torch::NoGradGuard ng;
    auto s = g->component_style_encoder(torch::rand({1, 3, 256, 256}) * 2 - 1);
    EXPECT_EQ(s.sizes(), (std::vector<int64_t>{1, 48, 64, 64}));
    EXPECT_GE(s.min().item<float>(), 0.0f);

    // A fully masked-out component is constant black; away from the padded border every
    // position sees the same receptive field, so the map is spatially constant there.
    auto black = g->component_style_encoder(torch::full({1, 3, 64, 64}, -1.0));
    auto interior = black.index({0, idx::Slice(), idx::Slice(4, 12), idx::Slice(4, 12)});
    auto centre = black.index({0, idx::Slice(), idx::Slice(8, 9), idx::Slice(8, 9)});
    EXPECT_LE((interior - centre).abs().max().item<float>(), 1e-5f);
}

TEST(StyleEncoder, ComponentAndGlobalDoNotShareWeights) {
    auto g = make_generator();
    EXPECT_FALSE(torch::equal(g->component_style_encoder->conv1->weight, g->global_style_encoder->conv1->weight));
    EXPECT_NE(g->component_style_encoder->conv1->weight.data_ptr(), g->global_style_encoder->conv1->weight.data_ptr());
}

TEST(ChannelAttention, WeightsInUnitIntervalAndScaleChannels) {
    torch::manual_seed(3);
    ChannelAttention ca(48, 16);
    EXPECT_EQ(ca->fc1->weight.size(0), 3);
    auto w = ca(torch::randn({2, 48, 8, 8}) * 5);
    EXPECT_EQ(w.sizes(), (std::vector<int64_t>{2, 48}));
    EXPECT_TRUE((w > 0).all().item<bool>());
    EXPECT_TRUE((w < 1).all().item<bool>());
    auto z1 = ca(torch::zeros({1, 48, 4, 4}));
    auto z2 = ca(torch::zeros({1, 48, 9, 3}));
    EXPECT_TRUE(torch::equal(z1, z2));

    auto content = torch::randn({2, 48, 8, 8});
    auto scaled = content * w.unsqueeze(-1).unsqueeze(-1);
    for (int64_t c : {0, 17, 47}) {
        EXPECT_TRUE(torch::allclose(scaled.index({1, c}), w.index({1, c}) * content.index({1, c})));
    }
    EXPECT_THROW(ca(torch::zeros({1, 32, 4, 4})), ShapeError);
}

TEST(SpatialAttention, MaskRangeAndSharedRatio) {
    torch::manual_seed(4);
    SpatialAttention sa;
    auto x = torch::randn({1, 48, 10, 10});
    auto m = sa->mask(x);
    EXPECT_TRUE((m > 0).all().item<bool>());
    EXPECT_TRUE((m < 1).all().item<bool>());
    auto ratio = sa(x) / x;
    auto spread = std::get<0>(ratio.max(1)) - std::get<0>(ratio.min(1));
    EXPECT_LE(spread.abs().max().item<float>(), 1e-5f);

    auto flat = torch::full({1, 48, 6, 6}, 0.7);
    auto fm = sa->mask(flat);
    EXPECT_TRUE(torch::equal(fm, fm.flatten().index({0}).expand_as(fm)));
}

TEST(PositionMap, ZeroOnesAndRandomMasks) {
    auto a = torch::randn({2, 48, 8, 8});
    auto p = torch::randn({2, 48, 8, 8});
    EXPECT_TRUE(torch::equal(position_map(a, p, torch::zeros({2, 1, 8, 8})), p));
    EXPECT_TRUE(torch::equal(position_map(a, p, torch::ones({2, 1, 8, 8})), a));
    auto m = (torch::rand({2, 1, 8, 8}) > 0.5).to(torch::kFloat);
    auto out = position_map(a, p, m);
    auto oracle = a * m + p * (1 - m);
    EXPECT_TRUE(torch::equal(out, oracle));
    EXPECT_THROW(position_map(a, p, torch::zeros({2, 1, 4, 4})), ShapeError);
}

TEST(ComponentTransfer, IdentityCases) {
    auto g = make_generator();
    torch::NoGradGuard ng;
    auto src = fixtures::fixture_pair(64, 0);
    auto content = g->encode_content(src.source.image.unsqueeze(0));
    auto styles = g->encode_styles(src.reference.image.unsqueeze(0), masks_of(src.reference));

    TransferOptions none;
    none.components = ComponentSet::none();
    EXPECT_TRUE(torch::equal(g->component_transfer(content.grid, styles, masks_of(src.source), none), content.grid));

    ParsingMap blank{torch::zeros({64, 64}, torch::kUInt8)};
    EXPECT_TRUE(torch::equal(g->component_transfer(content.grid, styles, FaceMasks::from(blank), TransferOptions{}),
                             content.grid));
}

TEST(ComponentTransfer, LipsOnlyChangesLipsRegion) {
    auto g = make_generator();
    torch::NoGradGuard ng;
    auto pair = fixtures::fixture_pair(64, 1);
    auto content = g->encode_content(pair.source.image.unsqueeze(0));
    auto styles = g->encode_styles(pair.reference.image.unsqueeze(0), masks_of(pair.reference));
    TransferOptions lips;
    lips.components = ComponentSet::parse("lips");
    auto masks = masks_of(pair.source);
    auto out = g->component_transfer(content.grid, styles, masks, lips);
    auto grid_mask = downsample_mask(masks.lips, 16, 16).gt(0.5).expand_as(out);
    EXPECT_TRUE(torch::equal(out.masked_select(~grid_mask), content.grid.masked_select(~grid_mask)));
    EXPECT_FALSE(torch::equal(out, content.grid));
}

TEST(ComponentTransfer, StepsNeverTouchFeaturesOutsideTheirMask) {
    auto g = make_generator();
    torch::NoGradGuard ng;
    auto gen = at::detail::createCPUGenerator(21);
    for (int trial = 0; trial < 10; ++trial) {
        auto features = at::randn({1, 48, 8, 8}, gen);
        auto style = at::rand({1, 48, 8, 8}, gen);
        auto mask = (at::rand({1, 1, 8, 8}, gen) > 0.6).to(torch::kFloat);
        for (auto c : kTransferComponents) {
            auto out = g->step(c)(features, style, mask);
            auto outside = mask.lt(0.5).expand_as(out);
            EXPECT_TRUE(torch::equal(out.masked_select(outside), features.masked_select(outside)));
        }
    }
}

TEST(ComponentTransfer, OrderIsIrrelevantForDisjointMasks) {
    // Each step is pointwise (1x1 spatial gate, globally pooled channel gate) and only writes
    // inside its own mask, so with disjoint masks the steps commute exactly.
    auto g = make_generator();
    torch::NoGradGuard ng;
    auto pair = fixtures::fixture_pair(64, 2);
    auto content = g->encode_content(pair.source.image.unsqueeze(0));
    auto styles = g->encode_styles(pair.reference.image.unsqueeze(0), masks_of(pair.reference));
    TransferOptions a, b;
    b.order = {Component::Eyes, Component::Skin, Component::Lips};
    EXPECT_TRUE(torch::equal(g->component_transfer(content.grid, styles, masks_of(pair.source), a),
                             g->component_transfer(content.grid, styles, masks_of(pair.source), b)));
}

TEST(LongRange, AttentionRowsSumToOneAndShape) {
    torch::manual_seed(5);
    LongRangeTransfer lr(48, 8, 192);
    LongRangeTransferImpl::Trace trace;
    auto out = lr(torch::randn({1, 48, 64, 64}), torch::rand({1, 48, 64, 64}), &trace);
    EXPECT_EQ(out.sizes(), (std::vector<int64_t>{1, 48, 64, 64}));
    EXPECT_EQ(trace.attention.sizes(), (std::vector<int64_t>{1, 8, 4096, 4096}));
    auto sums = trace.attention.sum(-1);
    EXPECT_LE((sums - 1).abs().max().item<float>(), 1e-5f);
}

TEST(LongRange, PositionsOnQueryAndKeyOnly) {
    torch::manual_seed(6);
    LongRangeTransfer lr(48, 8, 192);
    auto content = torch::randn({1, 48, 4, 4});
    auto style = torch::randn({1, 48, 4, 4});
    LongRangeTransferImpl::Trace t;
    lr(content, style, &t);
    auto pos = sinusoidal_positions(4, 4, 48, content.options());
    auto tokens = [](const torch::Tensor& x) { return x.flatten(2).transpose(1, 2); };
    EXPECT_TRUE(torch::allclose(t.query_in, tokens(style) + pos));
    EXPECT_TRUE(torch::allclose(t.key_in, tokens(content) + pos));
    EXPECT_TRUE(torch::equal(t.value_in, tokens(content)));
    EXPECT_GT(pos.abs().sum().item<float>(), 0.0f);
}

TEST(LongRange, KeyValuePermutationEquivariance) {
    torch::manual_seed(8);
    LongRangeTransfer lr(48, 8, 192);
    auto content = torch::randn({1, 16, 48});
    auto style = torch::randn({1, 16, 48});
    auto pos = sinusoidal_positions(4, 4, 48, content.options());
    auto base = lr->attend_tokens(style, content, pos, pos);
    auto perm = torch::randperm(16);
    auto permuted = lr->attend_tokens(style, content.index_select(1, perm), pos, pos.index_select(0, perm));
    EXPECT_TRUE(torch::allclose(base, permuted, 1e-5, 1e-5));
}

TEST(LongRange, SinusoidalTableHalvesRowsAndColumns) {
    auto pos = sinusoidal_positions(3, 5, 8, torch::TensorOptions().dtype(torch::kDouble));
    // token (r, c) sits at r*5 + c; first half depends on the row only
    EXPECT_TRUE(torch::equal(pos.index({0, idx::Slice(0, 4)}), pos.index({4, idx::Slice(0, 4)})));
    EXPECT_TRUE(torch::equal(pos.index({1, idx::Slice(4, 8)}), pos.index({6, idx::Slice(4, 8)})));
    // row 1, frequency 0: sin(1), cos(1)
    EXPECT_NEAR(pos.index({5, 0}).item<double>(), std::sin(1.0), 1e-12);
    EXPECT_NEAR(pos.index({5, 2}).item<double>(), std::cos(1.0), 1e-12);
    EXPECT_THROW(sinusoidal_positions(2, 2, 6, torch::TensorOptions()), ShapeError);
}

TEST(Decoder, ShapeRangeAndGradient) {
    auto g = make_generator();
    g->train();
    auto x = torch::rand({1, 3, 64, 64}) * 2 - 1;
    auto content = g->encode_content(x);
    auto out = g->reconstruct(content.grid, torch::randn_like(content.grid), content);
    EXPECT_EQ(out.sizes(), (std::vector<int64_t>{1, 3, 64, 64}));
    EXPECT_LE(out.abs().max().item<float>(), 1.0f);
    out.index({0, 1, 30, 30}).backward();
    for (const auto& p : g->decoder->parameters()) {
        ASSERT_TRUE(p.grad().defined());
        EXPECT_GT(p.grad().abs().sum().item<float>(), 0.0f);
    }
}

TEST(Forward, ShapeRangeDeterminismAcrossSizes) {
    auto g = make_generator();
    torch::NoGradGuard ng;
    for (int64_t size : {32, 48, 64}) {
        auto pair = fixtures::fixture_pair(size, 0);
        auto a = g->transfer(pair.source, pair.reference, TransferOptions{});
        EXPECT_EQ(a.sizes(), (std::vector<int64_t>{3, size, size}));
        EXPECT_LE(a.abs().max().item<float>(), 1.0f);
        EXPECT_TRUE(torch::equal(a, g->transfer(pair.source, pair.reference, TransferOptions{})));
    }
}

TEST(Forward, RemovalIsTheSwappedCall) {
    auto g = make_generator();
    torch::NoGradGuard ng;
    auto pair = fixtures::fixture_pair(32, 3);
    auto removal = g->transfer(pair.reference, pair.source, TransferOptions{});
    auto direct = g->forward(pair.reference.image.unsqueeze(0), pair.source.image.unsqueeze(0),
                             masks_of(pair.reference), masks_of(pair.source), TransferOptions{});
    EXPECT_TRUE(torch::equal(removal, direct.squeeze(0)));
}

TEST(Forward, RejectsMismatchedSizes) {
    auto g = make_generator();
    auto a = fixtures::fixture_pair(32, 0);
    auto b = fixtures::fixture_pair(64, 0);
    EXPECT_THROW(g->transfer(a.source, b.reference, TransferOptions{}), ShapeError);
}

TEST(Parameters, CountsAndBudget) {
    nn::Conv2d conv(nn::Conv2dOptions(48, 48, 3));
    int64_t n = 0;
    for (const auto& p : conv->parameters()) n += p.numel();
    EXPECT_EQ(n, 20784);

    auto a = make_generator(1);
    auto b = make_generator(2);
    EXPECT_EQ(a->count_parameters(), b->count_parameters());
    EXPECT_GE(a->count_parameters(), 500000);
    EXPECT_LE(a->count_parameters(), 1300000);
}

TEST(Parameters, EveryGroupReceivesGradient) {
    auto g = make_generator(9);
    g->train();
    DiscriminatorSet d(16);
    IdentityExtractor extractor;
    auto batch = TrainingBatch::from(fixtures::fixture_pair(32, 0));
    auto loss = generator_objective(g, d, extractor, batch, LossWeights{});
    loss.total.backward();
    for (const auto& child : g->named_children()) {
        double total = 0;
        for (const auto& p : child.value()->parameters()) {
            if (p.grad().defined()) total += p.grad().abs().sum().item<double>();
        }
        EXPECT_GT(total, 0.0) << child.key();
    }
    for (auto c : kTransferComponents) {
        double total = 0;
        for (const auto& p : g->step(c)->spatial_attention->parameters()) total += p.grad().abs().sum().item<double>();
        EXPECT_GT(total, 0.0) << "spatial attention " << to_string(c);
    }
}
