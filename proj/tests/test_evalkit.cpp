#include <gtest/gtest.h>

#include <fstream>

#include "beautyrec/errors.hpp"
#include "beautyrec/evalkit.hpp"
#include "support.hpp"

using namespace beautyrec;
using beautyrec::fixtures::TempDir;

namespace {

// Returns basis vectors: e0 for the first image it sees, e1 for anything else.
class OrthogonalProvider final : public EmbeddingProvider {
public:
    torch::Tensor embed(const torch::Tensor& image) override {
        if (!first_.defined()) first_ = image;
        auto v = torch::zeros({4}, torch::kFloat64);
        v[torch::equal(image, first_) ? 0 : 1] = 1.0;
        return v;
    }
    std::string name() const override { return "orthogonal"; }

private:
    torch::Tensor first_;
};

// MACs of the generator written out from the layer table, for one pair at s x s.
int64_t hand_macs(int64_t s) {
    const int64_t c = 48, s2 = s / 2, s4 = s / 4, tokens = s4 * s4;
    auto conv = [](int64_t k, int64_t in, int64_t out, int64_t side) { return k * k * in * out * side * side; };
    int64_t m = 0;
    m += conv(7, 3, c, s) + conv(4, c, c, s2) + conv(4, c, c, s4) + 6 * conv(3, c, c, s4);
    m += 4 * (conv(7, 3, c, s) + conv(4, c, c, s2) + conv(4, c, c, s4) + conv(1, c, c, s4));
    m += 3 * (c * 3 + 3 * c + conv(1, 2, 1, s4));
    m += 4 * tokens * c * c + 2 * tokens * tokens * c + 2 * tokens * c * 192;
    m += conv(1, 2 * c, c, s4) + 6 * conv(3, c, c, s4) + conv(3, 2 * c, c, s2) + conv(3, 2 * c, c, s) + conv(7, c, 3, s);
    return m;
}

}  // namespace

TEST(Identity, IdenticalImagesGiveOne) {
    StubProjection stub;
    auto img = torch::rand({3, 64, 64}) * 2 - 1;
    EXPECT_NEAR(*identity_similarity(img, img, &stub), 1.0, 1e-5);
    EXPECT_NEAR(stub.embed(img).norm().item<double>(), 1.0, 1e-5);
}

TEST(Identity, OrthogonalEmbeddingsGiveZero) {
    OrthogonalProvider p;
    auto a = torch::rand({3, 8, 8}), b = torch::rand({3, 8, 8});
    EXPECT_DOUBLE_EQ(*identity_similarity(a, b, &p), 0.0);
}

TEST(Identity, MissingProviderIsUnavailableNotZero) {
    auto img = torch::rand({3, 8, 8});
    EXPECT_FALSE(identity_similarity(img, img, nullptr).has_value());
    EXPECT_EQ(make_embedding_provider("none"), nullptr);
    EXPECT_EQ(make_embedding_provider("stub")->name(), "stub");
    EXPECT_THROW(make_embedding_provider("arcface"), ConfigError);
}

TEST(Identity, BoundedOnRandomImages) {
    StubProjection stub;
    for (int i = 0; i < 20; ++i) {
        auto s = *identity_similarity(torch::rand({3, 32, 32}) * 2 - 1, torch::rand({3, 32, 32}) * 2 - 1, &stub);
        EXPECT_GE(s, -1.0);
        EXPECT_LE(s, 1.0);
    }
}

TEST(Frechet, SelfZeroSymmetricNonNegative) {
    auto gen = at::detail::createCPUGenerator(3);
    auto a = at::randn({200, 6}, gen, torch::kFloat64);
    auto b = at::randn({150, 6}, gen, torch::kFloat64) * 1.5 + 0.3;
    EXPECT_NEAR(frechet_distance(a, a).value, 0.0, 1e-4);
    EXPECT_NEAR(frechet_distance(a, b).value, frechet_distance(b, a).value, 1e-6);
    EXPECT_GE(frechet_distance(a, b).value, 0.0);
}

TEST(Frechet, OneDimensionalClosedForm) {
    // N(0,1) vs N(1,1): (mu_a - mu_b)^2 + (sigma_a - sigma_b)^2 = 1
    auto gen = at::detail::createCPUGenerator(4);
    auto a = at::randn({40000, 1}, gen, torch::kFloat64);
    auto b = at::randn({40000, 1}, gen, torch::kFloat64) + 1.0;
    EXPECT_NEAR(frechet_distance(a, b).value, 1.0, 0.05);
}

TEST(Frechet, RankDeficientCovarianceStaysNonNegative) {
    // Fewer samples than dimensions: singular covariances, eigenvalues clipped at 0.
    auto gen = at::detail::createCPUGenerator(5);
    auto a = at::randn({3, 10}, gen, torch::kFloat64);
    auto b = at::randn({4, 10}, gen, torch::kFloat64);
    auto r = frechet_distance(a, b);
    EXPECT_GE(r.value, 0.0);
    EXPECT_TRUE(std::isfinite(r.value));
    EXPECT_THROW(frechet_distance(a.narrow(0, 0, 1), b), std::invalid_argument);
}

TEST(Frechet, DirectoriesThroughStub) {
    TempDir dir("fid");
    std::filesystem::create_directories(dir / "a");
    std::filesystem::create_directories(dir / "b");
    for (int i = 0; i < 4; ++i) {
        write_png(synth_face(32, i, false).image, dir.path() / "a" / ("f" + std::to_string(i) + ".png"));
        write_png(synth_face(32, 50 + i, true).image, dir.path() / "b" / ("f" + std::to_string(i) + ".png"));
    }
    StubProjection stub;
    EXPECT_NEAR(fid(dir / "a", dir / "a", stub, 32).value, 0.0, 1e-4);
    EXPECT_GT(fid(dir / "a", dir / "b", stub, 32).value, 0.0);
    EXPECT_THROW(fid(dir / "missing", dir / "a", stub, 32), MissingFileError);
}

TEST(Cost, MatchesLayerTableAndBudget) {
    torch::manual_seed(0);
    Generator g(GeneratorConfig{});
    auto cost = flops_and_params(g, 256);
    EXPECT_EQ(cost.flops, 2 * hand_macs(256));
    EXPECT_EQ(g->count_flops(64, 64).flops(), 2 * hand_macs(64));
    EXPECT_LT(cost.flops, 30'000'000'000LL);
    EXPECT_GE(cost.params, 500'000);
    EXPECT_LE(cost.params, 1'300'000);
    // one 3x3 conv 48->48 on 64x64
    EXPECT_EQ(2 * 3 * 3 * 48 * 48 * 64 * 64, 169869312);
}

TEST(Heatmap, HandNormalisation) {
    // channel means [[1,2],[2,4]] -> (x-1)/3
    auto f = torch::tensor({0.0, 2.0, 4.0, 6.0, 2.0, 2.0, 0.0, 2.0}).view({2, 2, 2});
    auto h = feature_heatmap(f);
    auto expected = torch::tensor({0.0f, 1.0f / 3, 1.0f / 3, 1.0f}).view({2, 2});
    EXPECT_TRUE(torch::allclose(h, expected));
    EXPECT_TRUE(torch::equal(feature_heatmap(torch::full({4, 3, 3}, 2.5)), torch::zeros({3, 3})));
    auto r = feature_heatmap(torch::randn({1, 48, 16, 16}));
    EXPECT_GE(r.min().item<float>(), 0.0f);
    EXPECT_LE(r.max().item<float>(), 1.0f);
}

TEST(OrderDiagnostic, ReportsBothOrders) {
    torch::manual_seed(2);
    Generator g(GeneratorConfig{});
    auto pair = fixtures::fixture_pair(32, 0);
    auto d = transfer_order_divergence(g, pair.source, pair.reference, {Component::Lips, Component::Skin, Component::Eyes},
                                       {Component::Eyes, Component::Skin, Component::Lips});
    EXPECT_EQ(d.order_a, "lips,skin,eyes");
    EXPECT_EQ(d.order_b, "eyes,skin,lips");
    EXPECT_GE(d.output_mean_abs, 0.0);
}

TEST(Evaluate, ReportKeysAndMeanAggregation) {
    TempDir dir("eval");
    std::filesystem::create_directories(dir / "img");
    nlohmann::json pairs = nlohmann::json::array();
    for (int i = 0; i < 10; ++i) {
        auto f = synth_face(32, 300 + i, i % 2 == 1);
        write_png(f.image, dir.path() / "img" / ("f" + std::to_string(i) + ".png"));
        write_parsing_png(f.parsing, dir.path() / "img" / ("s" + std::to_string(i) + ".png"));
    }
    for (int k = 0; k < 100; ++k) {
        const int s = (2 * k) % 10, r = (3 * k + 1) % 10;
        pairs.push_back({{"source", "img/f" + std::to_string(s) + ".png"},
                         {"source_seg", "img/s" + std::to_string(s) + ".png"},
                         {"reference", "img/f" + std::to_string(r) + ".png"},
                         {"reference_seg", "img/s" + std::to_string(r) + ".png"}});
    }
    std::ofstream(dir / "manifest.json") << nlohmann::json{{"pairs", pairs}}.dump();
    auto entries = read_manifest(dir / "manifest.json");
    ASSERT_EQ(entries.size(), 100u);

    torch::manual_seed(1);
    Generator g(GeneratorConfig{});
    StubProjection stub;
    auto report = evaluate(g, entries, &stub, &stub, EvalSettings{32, {}});
    for (const char* key : {"identity_similarity", "fid", "params", "flops", "per_pair"}) {
        EXPECT_TRUE(report.contains(key)) << key;
    }
    double sum = 0;
    for (const auto& e : report["per_pair"]) sum += e["identity_similarity"].get<double>();
    EXPECT_NEAR(report["identity_similarity"].get<double>(), sum / 100.0, 1e-12);
    EXPECT_GE(report["fid"].get<double>(), 0.0);
    EXPECT_NE(format_report_table(report).find("identity_similarity"), std::string::npos);

    auto bare = evaluate(g, {entries[0]}, nullptr, nullptr, EvalSettings{32, {}});
    EXPECT_TRUE(bare["identity_similarity"].is_null());
    EXPECT_TRUE(bare["fid"].is_null());
    EXPECT_NE(format_report_table(bare).find("unavailable"), std::string::npos);
    EXPECT_THROW(evaluate(g, {}, &stub, &stub, EvalSettings{32, {}}), std::invalid_argument);
}

TEST(Manifest, MissingFileAndBadJson) {
    TempDir dir("manifest");
    EXPECT_THROW(read_manifest(dir / "none.json"), MissingFileError);
    std::ofstream(dir / "bad.json") << "{ nope";
    EXPECT_THROW(read_manifest(dir / "bad.json"), ConfigError);
}
