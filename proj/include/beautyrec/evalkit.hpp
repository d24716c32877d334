#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "json.hpp"

#include "beautyrec/generator.hpp"

namespace beautyrec {

/// Face image -> unit-norm identity vector.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    /// image: [3,H,W] in [-1,1]. Returns a 1-D tensor with L2 norm 1.
    virtual torch::Tensor embed(const torch::Tensor& image) = 0;
    virtual std::string name() const = 0;
};

/// Image -> feature vector for distribution distances.
class FeatureProvider {
public:
    virtual ~FeatureProvider() = default;
    virtual torch::Tensor features(const torch::Tensor& image) = 0;
    virtual std::string name() const = 0;
};

/// Fixed random projection of a 32x32 thumbnail. Deterministic, weight-free, and only
/// meaningful as a plumbing check.
class StubProjection final : public EmbeddingProvider, public FeatureProvider {
public:
    explicit StubProjection(int64_t dim = 64, std::uint64_t seed = 0);
    torch::Tensor embed(const torch::Tensor& image) override;
    torch::Tensor features(const torch::Tensor& image) override;
    std::string name() const override { return "stub"; }

private:
    torch::Tensor projection_;  // [3*32*32, dim]
};

/// TorchScript module taking [1,3,S,S] in [-1,1] and returning one vector.
class ScriptedProvider final : public EmbeddingProvider, public FeatureProvider {
public:
    ScriptedProvider(const std::filesystem::path& module_path, int64_t input_size);
    ~ScriptedProvider() override;
    torch::Tensor embed(const torch::Tensor& image) override;
    torch::Tensor features(const torch::Tensor& image) override;
    std::string name() const override { return name_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::string name_;
};

/// Resolves "stub", "none", or "torchscript:<path>". "none" yields null (metric unavailable).
std::shared_ptr<EmbeddingProvider> make_embedding_provider(const std::string& spec, int64_t input_size = 112);
std::shared_ptr<FeatureProvider> make_feature_provider(const std::string& spec, int64_t input_size = 299);

/// Cosine similarity of the two embeddings; nullopt when no provider is configured.
std::optional<double> identity_similarity(const torch::Tensor& before, const torch::Tensor& after,
                                          EmbeddingProvider* provider);

struct FrechetResult {
    double value = 0;
    bool clipped = false;  // a covariance product had negative eigenvalues that were set to 0
};

/// Frechet distance between Gaussian fits of two feature sets, rows are samples.
FrechetResult frechet_distance(const torch::Tensor& a, const torch::Tensor& b);

/// Loads every PNG/JPEG in a directory at the given size.
std::vector<torch::Tensor> load_image_dir(const std::filesystem::path& dir, int64_t size);
FrechetResult fid(const std::vector<torch::Tensor>& set_a, const std::vector<torch::Tensor>& set_b,
                  FeatureProvider& provider);
FrechetResult fid(const std::filesystem::path& dir_a, const std::filesystem::path& dir_b, FeatureProvider& provider,
                  int64_t size);

struct ComputeCost {
    int64_t flops = 0;
    int64_t params = 0;
};
ComputeCost flops_and_params(const Generator& generator, int64_t input_size);

/// Channel mean followed by min-max normalisation. [C,H,W] or [1,C,H,W] -> [H,W] in [0,1];
/// a constant map gives all zeros.
torch::Tensor feature_heatmap(const torch::Tensor& features);

/// How much the output moves when the component transfer order changes.
struct OrderDivergence {
    std::string order_a, order_b;
    double grid_mean_abs = 0;    // after component transfer
    double output_mean_abs = 0;  // final images, in [-1,1] units
};
OrderDivergence transfer_order_divergence(Generator& generator, const FaceSample& source, const FaceSample& reference,
                                          const std::array<Component, 3>& order_a,
                                          const std::array<Component, 3>& order_b);

/// One evaluation pair as listed in a manifest; paths are resolved against the manifest's directory.
struct ManifestEntry {
    std::filesystem::path source, source_seg, reference, reference_seg;
};
/// Reads `{"pairs": [{"source": ..., "source_seg": ..., "reference": ..., "reference_seg": ...}]}`.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

struct EvalSettings {
    int64_t image_size = 256;
    std::filesystem::path output_dir;  // transferred images are written here when non-empty
};

/// Runs the generator over every pair and gathers all metrics into one report.
nlohmann::json evaluate(Generator& generator, const std::vector<ManifestEntry>& pairs, EmbeddingProvider* identity,
                        FeatureProvider* distribution, const EvalSettings& settings);

/// Two-column human-readable rendering of the scalar entries of a report.
std::string format_report_table(const nlohmann::json& report);

}  // namespace beautyrec
