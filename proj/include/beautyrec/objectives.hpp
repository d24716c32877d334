#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>

#include <torch/torch.h>

#include "beautyrec/adversary.hpp"
#include "beautyrec/generator.hpp"

namespace beautyrec {

struct LossWeights {
    double perceptual = 0.005;
    double adversarial = 0.5;
};

/// Scalar values of every term of one generator/discriminator evaluation.
struct LossReport {
    double content = 0;
    double makeup = 0;
    double perceptual = 0;
    double adversarial_g = 0;
    double adversarial_d = 0;
    double total_g = 0;

    bool finite() const;
};

/// total_g = content + makeup + lambda_per * perceptual + lambda_ad * adversarial_g
double compose_total(const LossReport& report, const LossWeights& weights);

/// Frozen feature map used by the perceptual loss. Input: [N,3,H,W] RGB in [-1,1].
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual torch::Tensor extract(const torch::Tensor& images) = 0;
    virtual std::string name() const = 0;
    /// Moves weights to the given dtype so 64-bit checks can run through the extractor.
    virtual void to(torch::Dtype) {}
};

/// Pixels as features. Turns the perceptual loss into pixel MSE.
class IdentityExtractor final : public FeatureExtractor {
public:
    torch::Tensor extract(const torch::Tensor& images) override { return images; }
    std::string name() const override { return "identity"; }
};

/// VGG-19 `features` trunk cut at the first convolution of the fourth block, before its ReLU.
class Vgg19FeaturesImpl : public torch::nn::Module {
public:
    Vgg19FeaturesImpl();
    torch::Tensor forward(torch::Tensor x);

    torch::nn::Sequential features{nullptr};
};
TORCH_MODULE(Vgg19Features);

class Vgg19Extractor final : public FeatureExtractor {
public:
    /// Loads weights named like torchvision's `features.<i>.weight` from a tensor archive
    /// (see tools/export_vgg19.py). Throws ConfigError when the file is missing or incomplete.
    explicit Vgg19Extractor(const std::filesystem::path& weights);
    /// Randomly initialised trunk; only for shape tests.
    Vgg19Extractor();

    torch::Tensor extract(const torch::Tensor& images) override;
    std::string name() const override { return "vgg19"; }
    void to(torch::Dtype dtype) override { net_->to(dtype); }

private:
    Vgg19Features net_;
};

/// Resolves the configured extractor at startup: "identity", or "vgg19" with a weights path.
std::shared_ptr<FeatureExtractor> make_feature_extractor(const std::string& kind, const std::string& weights_path);

/// Mean absolute difference of first-layer content features of source and output.
torch::Tensor content_consistency_loss(ContentEncoder& encoder, const torch::Tensor& source, const torch::Tensor& output);

/// MSE(out_fwd, hm_fwd) + MSE(out_rev, hm_rev); the histogram-matched targets carry no gradient.
torch::Tensor makeup_loss(const torch::Tensor& out_fwd, const torch::Tensor& hm_fwd, const torch::Tensor& out_rev,
                          const torch::Tensor& hm_rev);

torch::Tensor perceptual_loss(const torch::Tensor& source, const torch::Tensor& output, FeatureExtractor& extractor);

/// Least-squares loss averaged over in-mask pixels only; an empty mask contributes exactly 0.
torch::Tensor masked_least_squares(const torch::Tensor& scores, double target, const torch::Tensor& mask);

struct AdversarialLosses {
    torch::Tensor g_loss;
    torch::Tensor d_loss;
    std::array<torch::Tensor, 5> g_terms;  // indexed like kDiscriminatorRoles
    std::array<torch::Tensor, 5> d_terms;
};

/// Generator part only: pushes every discriminator's score on the fakes toward 1.
AdversarialLosses generator_adversarial(DiscriminatorSet& d_set, const torch::Tensor& fakes, const FaceMasks& fake_masks);

/// Discriminator part: reals toward 1, (detached) fakes toward 0.
AdversarialLosses discriminator_adversarial(DiscriminatorSet& d_set, const torch::Tensor& reals,
                                            const FaceMasks& real_masks, const torch::Tensor& fakes,
                                            const FaceMasks& fake_masks);

/// Both parts at once. The discriminator part sees detached fakes.
AdversarialLosses adversarial_losses(DiscriminatorSet& d_set, const torch::Tensor& fakes, const FaceMasks& fake_masks,
                                     const torch::Tensor& reals, const FaceMasks& real_masks);

/// [HM(I,R), HM(R,I)] for one pair: the makeup-loss targets of both directions.
torch::Tensor makeup_targets(const PairSample& pair);

/// Both transfer directions of one training pair, batched as [fwd, rev].
struct TrainingBatch {
    torch::Tensor sources;     // [I, R]
    torch::Tensor references;  // [R, I]
    FaceMasks source_masks;
    FaceMasks reference_masks;
    torch::Tensor targets;  // [HM(I,R), HM(R,I)]

    /// `targets` may be left undefined, in which case they are computed here.
    static TrainingBatch from(const PairSample& pair, const torch::Tensor& targets = {});
    TrainingBatch to(torch::Dtype dtype) const;
};

/// Differentiable generator-side terms plus their scalar report.
struct GeneratorLoss {
    torch::Tensor total;
    torch::Tensor outputs;  // [G(I,R), G(R,I)]
    LossReport report;
};

/// Weighted sum of all generator terms for one batch (discriminators are only read).
GeneratorLoss generator_objective(Generator& generator, DiscriminatorSet& d_set, FeatureExtractor& extractor,
                                  const TrainingBatch& batch, const LossWeights& weights);
/// Same, for outputs the caller already produced with `generator`.
GeneratorLoss generator_losses(Generator& generator, DiscriminatorSet& d_set, FeatureExtractor& extractor,
                               const TrainingBatch& batch, const torch::Tensor& outputs, const LossWeights& weights);

}  // namespace beautyrec
