#include "beautyrec/objectives.hpp"

#include <cmath>

#include "beautyrec/errors.hpp"

namespace beautyrec {

namespace {

torch::Tensor mse(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).pow(2).mean(); }

double item(const torch::Tensor& t) { return t.detach().item<double>(); }

torch::Tensor zero_like_scalar(const torch::Tensor& like) { return torch::zeros({}, like.options()); }

}  // namespace

bool LossReport::finite() const {
    for (double v : {content, makeup, perceptual, adversarial_g, adversarial_d, total_g}) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

double compose_total(const LossReport& r, const LossWeights& w) {
    return r.content + r.makeup + w.perceptual * r.perceptual + w.adversarial * r.adversarial_g;
}

// torchvision layout: conv indices 0,2 | 5,7 | 10,12,14,16 | 19 with ReLUs and max pools between.
Vgg19FeaturesImpl::Vgg19FeaturesImpl() {
    namespace nn = torch::nn;
    features = nn::Sequential();
    auto conv = [&](int64_t in, int64_t out) { features->push_back(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1))); };
    auto relu = [&] { features->push_back(nn::ReLU()); };
    auto pool = [&] { features->push_back(nn::MaxPool2d(nn::MaxPool2dOptions(2).stride(2))); };
    conv(3, 64), relu(), conv(64, 64), relu(), pool();
    conv(64, 128), relu(), conv(128, 128), relu(), pool();
    conv(128, 256), relu(), conv(256, 256), relu(), conv(256, 256), relu(), conv(256, 256), relu(), pool();
    conv(256, 512);
    register_module("features", features);
}

torch::Tensor Vgg19FeaturesImpl::forward(torch::Tensor x) { return features->forward(x); }

Vgg19Extractor::Vgg19Extractor() {
    net_->eval();
    for (auto& p : net_->parameters()) p.requires_grad_(false);
}

Vgg19Extractor::Vgg19Extractor(const std::filesystem::path& weights) : Vgg19Extractor() {
    if (!std::filesystem::exists(weights)) throw ConfigError({"vgg19 weights not found: " + weights.string()});
    const std::string bytes = read_file(weights);
    c10::IValue value;
    try {
        value = torch::pickle_load(std::vector<char>(bytes.begin(), bytes.end()));
        if (!value.isGenericDict()) throw std::runtime_error("expected a dict of tensors");
    } catch (const std::exception& e) {
        throw ConfigError({"vgg19 weights " + weights.string() + " unreadable: " + e.what()});
    }
    std::vector<std::string> problems;
    torch::NoGradGuard no_grad;
    auto dict = value.toGenericDict();
    for (auto& item : net_->named_parameters()) {
        const auto& name = item.key();
        auto& param = item.value();
        auto it = dict.find(c10::IValue(name));
        if (it == dict.end()) {
            problems.push_back("vgg19 weights: missing " + name);
            continue;
        }
        auto t = it->value().toTensor();
        if (t.sizes() != param.sizes()) {
            problems.push_back("vgg19 weights: " + name + " has wrong shape");
            continue;
        }
        param.copy_(t);
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
}

torch::Tensor Vgg19Extractor::extract(const torch::Tensor& images) {
    auto opts = images.options();
    auto mean = torch::tensor({0.485, 0.456, 0.406}, opts).view({1, 3, 1, 1});
    auto std = torch::tensor({0.229, 0.224, 0.225}, opts).view({1, 3, 1, 1});
    return net_->forward(((images + 1) * 0.5 - mean) / std);
}

std::shared_ptr<FeatureExtractor> make_feature_extractor(const std::string& kind, const std::string& weights_path) {
    if (kind == "identity") return std::make_shared<IdentityExtractor>();
    if (kind == "vgg19") {
        if (weights_path.empty()) throw ConfigError({"perceptual extractor vgg19 needs a weights path"});
        return std::make_shared<Vgg19Extractor>(weights_path);
    }
    throw ConfigError({"unknown perceptual extractor '" + kind + "' (expected identity or vgg19)"});
}

torch::Tensor content_consistency_loss(ContentEncoder& encoder, const torch::Tensor& source, const torch::Tensor& output) {
    if (source.sizes() != output.sizes()) throw ShapeError("content loss: source and output shapes differ");
    return (encoder->first_layer(source) - encoder->first_layer(output)).abs().mean();
}

torch::Tensor makeup_loss(const torch::Tensor& out_fwd, const torch::Tensor& hm_fwd, const torch::Tensor& out_rev,
                          const torch::Tensor& hm_rev) {
    return mse(out_fwd, hm_fwd.detach()) + mse(out_rev, hm_rev.detach());
}

torch::Tensor perceptual_loss(const torch::Tensor& source, const torch::Tensor& output, FeatureExtractor& extractor) {
    if (source.sizes() != output.sizes()) throw ShapeError("perceptual loss: source and output shapes differ");
    torch::Tensor reference_features;
    {
        torch::NoGradGuard no_grad;
        reference_features = extractor.extract(source);
    }
    return mse(extractor.extract(output), reference_features);
}

torch::Tensor masked_least_squares(const torch::Tensor& scores, double target, const torch::Tensor& mask) {
    if (scores.sizes() != mask.sizes()) throw ShapeError("masked_least_squares: score and mask shapes differ");
    auto m = mask.to(scores.dtype());
    const double count = item(m.sum());
    if (count == 0) return zero_like_scalar(scores);
    return ((scores - target).pow(2) * m).sum() / count;
}

AdversarialLosses generator_adversarial(DiscriminatorSet& d_set, const torch::Tensor& fakes, const FaceMasks& fake_masks) {
    AdversarialLosses out;
    out.g_loss = zero_like_scalar(fakes);
    for (std::size_t k = 0; k < kDiscriminatorRoles.size(); ++k) {
        const auto role = kDiscriminatorRoles[k];
        auto mask = region_mask(fake_masks, role, fakes);
        auto scores = d_set->get(role)->forward(local_input(fakes, fake_masks, role));
        out.g_terms[k] = masked_least_squares(scores, 1.0, mask);
        out.g_loss = out.g_loss + out.g_terms[k];
    }
    return out;
}

AdversarialLosses discriminator_adversarial(DiscriminatorSet& d_set, const torch::Tensor& reals,
                                            const FaceMasks& real_masks, const torch::Tensor& fakes,
                                            const FaceMasks& fake_masks) {
    AdversarialLosses out;
    out.d_loss = zero_like_scalar(reals);
    auto detached = fakes.detach();
    const auto n_real = reals.size(0);
    for (std::size_t k = 0; k < kDiscriminatorRoles.size(); ++k) {
        const auto role = kDiscriminatorRoles[k];
        auto real_mask = region_mask(real_masks, role, reals);
        auto fake_mask = region_mask(fake_masks, role, detached);
        // One forward over reals and fakes together, so a training-mode pass advances the
        // spectral-norm power iteration once per step.
        auto inputs = torch::cat({local_input(reals, real_masks, role), local_input(detached, fake_masks, role)});
        auto scores = d_set->get(role)->forward(inputs);
        auto real_scores = scores.narrow(0, 0, n_real);
        auto fake_scores = scores.narrow(0, n_real, scores.size(0) - n_real);
        out.d_terms[k] =
            masked_least_squares(real_scores, 1.0, real_mask) + masked_least_squares(fake_scores, 0.0, fake_mask);
        out.d_loss = out.d_loss + out.d_terms[k];
    }
    return out;
}

AdversarialLosses adversarial_losses(DiscriminatorSet& d_set, const torch::Tensor& fakes, const FaceMasks& fake_masks,
                                     const torch::Tensor& reals, const FaceMasks& real_masks) {
    auto g = generator_adversarial(d_set, fakes, fake_masks);
    auto d = discriminator_adversarial(d_set, reals, real_masks, fakes, fake_masks);
    g.d_loss = d.d_loss;
    g.d_terms = d.d_terms;
    return g;
}

torch::Tensor makeup_targets(const PairSample& pair) {
    return torch::stack({makeup_target(pair.source, pair.reference), makeup_target(pair.reference, pair.source)});
}

TrainingBatch TrainingBatch::from(const PairSample& pair, const torch::Tensor& targets) {
    const auto& i = pair.source;
    const auto& r = pair.reference;
    if (i.image.sizes() != r.image.sizes()) throw ShapeError("training pair images differ in size");
    TrainingBatch b;
    b.sources = torch::stack({i.image, r.image});
    b.references = torch::stack({r.image, i.image});
    auto mi = FaceMasks::from(i.parsing);
    auto mr = FaceMasks::from(r.parsing);
    b.source_masks = FaceMasks::cat({mi, mr});
    b.reference_masks = FaceMasks::cat({mr, mi});
    b.targets = targets.defined() ? targets : makeup_targets(pair);
    return b;
}

TrainingBatch TrainingBatch::to(torch::Dtype dtype) const {
    return {sources.to(dtype), references.to(dtype), source_masks.to(dtype), reference_masks.to(dtype),
            targets.to(dtype)};
}

GeneratorLoss generator_objective(Generator& generator, DiscriminatorSet& d_set, FeatureExtractor& extractor,
                                  const TrainingBatch& batch, const LossWeights& weights) {
    auto options = TransferOptions::from(generator->config());
    auto outputs = generator->forward(batch.sources, batch.references, batch.source_masks, batch.reference_masks, options);
    return generator_losses(generator, d_set, extractor, batch, outputs, weights);
}

GeneratorLoss generator_losses(Generator& generator, DiscriminatorSet& d_set, FeatureExtractor& extractor,
                               const TrainingBatch& batch, const torch::Tensor& outputs, const LossWeights& weights) {
    GeneratorLoss out;
    out.outputs = outputs;
    auto content = content_consistency_loss(generator->content_encoder, batch.sources, out.outputs);
    auto makeup = makeup_loss(out.outputs[0], batch.targets[0], out.outputs[1], batch.targets[1]);
    auto perceptual = perceptual_loss(batch.sources, out.outputs, extractor);
    auto adv = generator_adversarial(d_set, out.outputs, batch.source_masks);
    out.total = content + makeup + weights.perceptual * perceptual + weights.adversarial * adv.g_loss;
    out.report.content = item(content);
    out.report.makeup = item(makeup);
    out.report.perceptual = item(perceptual);
    out.report.adversarial_g = item(adv.g_loss);
    out.report.total_g = item(out.total);
    return out;
}

}  // namespace beautyrec
