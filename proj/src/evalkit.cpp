#include "beautyrec/evalkit.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <torch/script.h>

#include "beautyrec/errors.hpp"

namespace beautyrec {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;
using nlohmann::json;

namespace {

constexpr int64_t kThumb = 32;

torch::Tensor as_batch(const torch::Tensor& image) {
    if (image.dim() == 3 && image.size(0) == 3) return image.unsqueeze(0);
    if (image.dim() == 4 && image.size(0) == 1 && image.size(1) == 3) return image;
    throw ShapeError("providers expect a single [3,H,W] image");
}

torch::Tensor resized(const torch::Tensor& batch, int64_t size) {
    if (batch.size(2) == size && batch.size(3) == size) return batch;
    return F::interpolate(batch, F::InterpolateFuncOptions()
                                     .size(std::vector<int64_t>{size, size})
                                     .mode(torch::kBilinear)
                                     .align_corners(false));
}

torch::Tensor unit(const torch::Tensor& v) { return v / v.norm().clamp_min(1e-12); }

/// Square root of a symmetric PSD matrix; negative eigenvalues are clipped.
torch::Tensor sqrtm_psd(const torch::Tensor& s, bool& clipped) {
    auto [vals, vecs] = torch::linalg_eigh(s);
    const double tol = 1e-10 * std::max(1.0, vals.abs().max().item<double>());
    if (vals.min().item<double>() < -tol) clipped = true;
    return vecs.matmul(torch::diag(vals.clamp_min(0).sqrt())).matmul(vecs.t());
}

double trace_sqrt_product(const torch::Tensor& a, const torch::Tensor& b, bool& clipped) {
    auto sa = sqrtm_psd(a, clipped);
    auto m = sa.matmul(b).matmul(sa);
    m = (m + m.t()) / 2;
    auto vals = torch::linalg_eigvalsh(m);
    const double tol = 1e-10 * std::max(1.0, vals.abs().max().item<double>());
    if (vals.min().item<double>() < -tol) clipped = true;
    return vals.clamp_min(0).sqrt().sum().item<double>();
}

std::string order_name(const std::array<Component, 3>& order) {
    std::string out;
    for (auto c : order) out += (out.empty() ? "" : ",") + std::string(to_string(c));
    return out;
}

}  // namespace

StubProjection::StubProjection(int64_t dim, std::uint64_t seed) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    projection_ = torch::randn({3 * kThumb * kThumb, dim}, gen, torch::TensorOptions().dtype(torch::kFloat64)) /
                  std::sqrt(static_cast<double>(3 * kThumb * kThumb));
}

torch::Tensor StubProjection::features(const torch::Tensor& image) {
    torch::NoGradGuard no_grad;
    auto thumb = F::adaptive_avg_pool2d(as_batch(image).to(torch::kFloat64), F::AdaptiveAvgPool2dFuncOptions(kThumb));
    return thumb.reshape({1, -1}).matmul(projection_).reshape({-1});
}

torch::Tensor StubProjection::embed(const torch::Tensor& image) { return unit(features(image)); }

struct ScriptedProvider::Impl {
    torch::jit::script::Module module;
    int64_t input_size;

    torch::Tensor run(const torch::Tensor& image) {
        torch::NoGradGuard no_grad;
        auto batch = resized(as_batch(image).to(torch::kFloat32), input_size);
        return module.forward({batch}).toTensor().reshape({-1}).to(torch::kFloat64);
    }
};

ScriptedProvider::ScriptedProvider(const fs::path& module_path, int64_t input_size)
    : impl_(std::make_unique<Impl>()), name_("torchscript:" + module_path.string()) {
    if (!fs::exists(module_path)) throw ConfigError({"provider module not found: " + module_path.string()});
    try {
        impl_->module = torch::jit::load(module_path.string());
    } catch (const std::exception& e) {
        throw ConfigError({"provider module " + module_path.string() + " failed to load: " + e.what()});
    }
    impl_->module.eval();
    impl_->input_size = input_size;
}

ScriptedProvider::~ScriptedProvider() = default;

torch::Tensor ScriptedProvider::embed(const torch::Tensor& image) { return unit(impl_->run(image)); }
torch::Tensor ScriptedProvider::features(const torch::Tensor& image) { return impl_->run(image); }

namespace {
template <typename T>
std::shared_ptr<T> make_provider(const std::string& spec, int64_t input_size) {
    if (spec == "none" || spec.empty()) return nullptr;
    if (spec == "stub") return std::make_shared<StubProjection>();
    const std::string prefix = "torchscript:";
    if (spec.rfind(prefix, 0) == 0) return std::make_shared<ScriptedProvider>(spec.substr(prefix.size()), input_size);
    throw ConfigError({"unknown provider '" + spec + "' (expected none, stub or torchscript:<path>)"});
}
}  // namespace

std::shared_ptr<EmbeddingProvider> make_embedding_provider(const std::string& spec, int64_t input_size) {
    return make_provider<EmbeddingProvider>(spec, input_size);
}

std::shared_ptr<FeatureProvider> make_feature_provider(const std::string& spec, int64_t input_size) {
    return make_provider<FeatureProvider>(spec, input_size);
}

std::optional<double> identity_similarity(const torch::Tensor& before, const torch::Tensor& after,
                                          EmbeddingProvider* provider) {
    if (!provider) return std::nullopt;
    auto a = provider->embed(before).to(torch::kFloat64);
    auto b = provider->embed(after).to(torch::kFloat64);
    const double cos = a.dot(b).item<double>() / std::max(1e-12, a.norm().item<double>() * b.norm().item<double>());
    return std::clamp(cos, -1.0, 1.0);
}

FrechetResult frechet_distance(const torch::Tensor& a_in, const torch::Tensor& b_in) {
    if (a_in.dim() != 2 || b_in.dim() != 2 || a_in.size(1) != b_in.size(1)) {
        throw ShapeError("frechet_distance expects [N,D] and [M,D] feature matrices");
    }
    if (a_in.size(0) < 2 || b_in.size(0) < 2) throw std::invalid_argument("frechet_distance needs >= 2 samples per set");
    auto a = a_in.to(torch::kFloat64);
    auto b = b_in.to(torch::kFloat64);
    auto mu_a = a.mean(0), mu_b = b.mean(0);
    auto ca = a - mu_a, cb = b - mu_b;
    auto cov_a = ca.t().matmul(ca) / static_cast<double>(a.size(0) - 1);
    auto cov_b = cb.t().matmul(cb) / static_cast<double>(b.size(0) - 1);

    FrechetResult r;
    // Averaging both orderings makes the result exactly symmetric in its arguments.
    const double cross = 0.5 * (trace_sqrt_product(cov_a, cov_b, r.clipped) + trace_sqrt_product(cov_b, cov_a, r.clipped));
    const double mean_term = (mu_a - mu_b).pow(2).sum().item<double>();
    const double traces = cov_a.trace().item<double>() + cov_b.trace().item<double>();
    r.value = std::max(0.0, mean_term + traces - 2 * cross);
    if (r.clipped) std::cerr << "warning: covariance product not PSD; negative eigenvalues clipped to 0\n";
    return r;
}

std::vector<torch::Tensor> load_image_dir(const fs::path& dir, int64_t size) {
    if (!fs::is_directory(dir)) throw MissingFileError("image directory missing: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (e.is_regular_file() && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<torch::Tensor> out;
    for (const auto& f : files) out.push_back(decode_image(read_file(f), size));
    return out;
}

FrechetResult fid(const std::vector<torch::Tensor>& set_a, const std::vector<torch::Tensor>& set_b,
                  FeatureProvider& provider) {
    if (set_a.size() < 2 || set_b.size() < 2) throw std::invalid_argument("fid needs at least 2 images per set");
    auto collect = [&](const std::vector<torch::Tensor>& set) {
        std::vector<torch::Tensor> rows;
        for (const auto& img : set) rows.push_back(provider.features(img).to(torch::kFloat64));
        return torch::stack(rows);
    };
    return frechet_distance(collect(set_a), collect(set_b));
}

FrechetResult fid(const fs::path& dir_a, const fs::path& dir_b, FeatureProvider& provider, int64_t size) {
    return fid(load_image_dir(dir_a, size), load_image_dir(dir_b, size), provider);
}

ComputeCost flops_and_params(const Generator& generator, int64_t input_size) {
    return {generator->count_flops(input_size, input_size).flops(), generator->count_parameters()};
}

torch::Tensor feature_heatmap(const torch::Tensor& features) {
    auto f = features;
    if (f.dim() == 4) {
        if (f.size(0) != 1) throw ShapeError("feature_heatmap takes a single feature map");
        f = f.squeeze(0);
    }
    if (f.dim() != 3) throw ShapeError("feature_heatmap expects [C,H,W] or [1,C,H,W]");
    auto m = f.detach().to(torch::kFloat64).mean(0);
    const double lo = m.min().item<double>(), hi = m.max().item<double>();
    if (!(hi > lo)) return torch::zeros_like(m).to(torch::kFloat32);
    return ((m - lo) / (hi - lo)).to(torch::kFloat32);
}

OrderDivergence transfer_order_divergence(Generator& generator, const FaceSample& source, const FaceSample& reference,
                                          const std::array<Component, 3>& order_a,
                                          const std::array<Component, 3>& order_b) {
    torch::NoGradGuard no_grad;
    auto src = source.image.unsqueeze(0);
    auto ref = reference.image.unsqueeze(0);
    auto src_masks = FaceMasks::from(source.parsing);
    auto ref_masks = FaceMasks::from(reference.parsing);
    auto options_a = TransferOptions::from(generator->config());
    options_a.order = order_a;
    auto options_b = options_a;
    options_b.order = order_b;

    auto content = generator->encode_content(src);
    auto styles = generator->encode_styles(ref, ref_masks);
    auto grid_a = generator->component_transfer(content.grid, styles, src_masks, options_a);
    auto grid_b = generator->component_transfer(content.grid, styles, src_masks, options_b);
    auto out_a = generator->forward(src, ref, src_masks, ref_masks, options_a);
    auto out_b = generator->forward(src, ref, src_masks, ref_masks, options_b);
    return {order_name(order_a), order_name(order_b), (grid_a - grid_b).abs().mean().item<double>(),
            (out_a - out_b).abs().mean().item<double>()};
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
    if (!fs::exists(path)) throw MissingFileError("missing manifest " + path.string());
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const std::exception& e) {
        throw ConfigError({"manifest " + path.string() + ": " + e.what()});
    }
    if (!j.is_object() || !j.contains("pairs") || !j["pairs"].is_array()) {
        throw ConfigError({"manifest " + path.string() + ": expected an object with a 'pairs' list"});
    }
    const auto base = path.parent_path();
    std::vector<ManifestEntry> out;
    std::vector<std::string> problems;
    for (std::size_t i = 0; i < j["pairs"].size(); ++i) {
        const auto& p = j["pairs"][i];
        ManifestEntry e;
        bool ok = true;
        auto field = [&](const char* key, fs::path& dst) {
            if (!p.is_object() || !p.contains(key) || !p[key].is_string()) {
                problems.push_back("manifest pair " + std::to_string(i) + ": missing '" + key + "'");
                ok = false;
                return;
            }
            dst = base / p[key].get<std::string>();
        };
        field("source", e.source);
        field("source_seg", e.source_seg);
        field("reference", e.reference);
        field("reference_seg", e.reference_seg);
        if (ok) out.push_back(std::move(e));
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
    return out;
}

json evaluate(Generator& generator, const std::vector<ManifestEntry>& pairs, EmbeddingProvider* identity,
              FeatureProvider* distribution, const EvalSettings& settings) {
    if (pairs.empty()) throw std::invalid_argument("evaluation manifest lists no pairs");
    torch::NoGradGuard no_grad;
    generator->eval();
    const auto options = TransferOptions::from(generator->config());
    if (!settings.output_dir.empty()) fs::create_directories(settings.output_dir);

    std::vector<torch::Tensor> sources, outputs;
    json per_pair = json::array();
    double similarity_sum = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& p = pairs[i];
        auto src = load_sample(p.source, p.source_seg, settings.image_size);
        auto ref = load_sample(p.reference, p.reference_seg, settings.image_size);
        auto out = generator->transfer(src, ref, options);
        sources.push_back(src.image);
        outputs.push_back(out);
        json entry{{"source", p.source.string()}, {"reference", p.reference.string()}};
        if (auto s = identity_similarity(src.image, out, identity)) {
            entry["identity_similarity"] = *s;
            similarity_sum += *s;
        }
        if (!settings.output_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof(name), "pair_%04zu.png", i);
            write_png(out, settings.output_dir / name);
            entry["output"] = (settings.output_dir / name).string();
        }
        per_pair.push_back(std::move(entry));
    }

    const auto cost = flops_and_params(generator, settings.image_size);
    json report{{"pairs", pairs.size()},
                {"image_size", settings.image_size},
                {"params", cost.params},
                {"flops", cost.flops},
                {"identity_provider", identity ? identity->name() : "none"},
                {"fid_provider", distribution ? distribution->name() : "none"},
                {"per_pair", per_pair}};
    report["identity_similarity"] = identity ? json(similarity_sum / static_cast<double>(pairs.size())) : json();
    if (distribution && pairs.size() >= 2) {
        auto r = fid(outputs, sources, *distribution);
        report["fid"] = r.value;
        report["fid_clipped"] = r.clipped;
    } else {
        report["fid"] = json();
        report["fid_note"] = distribution ? "needs at least 2 pairs" : "no feature provider configured";
    }
    return report;
}

std::string format_report_table(const json& report) {
    std::ostringstream out;
    for (const auto& [key, value] : report.items()) {
        if (value.is_structured()) continue;
        std::string shown = value.is_null() ? "unavailable" : value.is_string() ? value.get<std::string>() : value.dump();
        char line[160];
        std::snprintf(line, sizeof(line), "%-22s %s\n", key.c_str(), shown.c_str());
        out << line;
    }
    return out.str();
}

}  // namespace beautyrec
