#include "beautyrec/config.hpp"

#include <set>
#include <type_traits>

#include "beautyrec/errors.hpp"

namespace beautyrec {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Section {
public:
    Section(const json& root, std::string name, std::vector<std::string>& problems)
        : name_(std::move(name)), problems_(problems) {
        if (!root.contains(name_)) return;
        if (!root[name_].is_object()) {
            problems_.push_back(name_ + " must be an object");
            return;
        }
        obj_ = &root[name_];
    }

    template <typename T>
    void read(const char* key, T& dst) {
        known_.insert(key);
        if (!obj_ || !obj_->contains(key)) return;
        const auto& v = (*obj_)[key];
        bool ok;
        if constexpr (std::is_same_v<T, bool>) {
            ok = v.is_boolean();
        } else if constexpr (std::is_same_v<T, std::string>) {
            ok = v.is_string();
        } else if constexpr (std::is_floating_point_v<T>) {
            ok = v.is_number();
        } else if constexpr (std::is_unsigned_v<T>) {
            ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<int64_t>() >= 0);
        } else {
            ok = v.is_number_integer();
        }
        if (!ok) {
            problems_.push_back(name_ + "." + key + " has the wrong type");
            return;
        }
        dst = v.get<T>();
    }

    /// Strings naming files; made absolute against `base` when relative.
    void read_path(const char* key, std::string& dst, const fs::path& base) {
        read(key, dst);
        if (!dst.empty() && fs::path(dst).is_relative() && !base.empty()) dst = (base / dst).lexically_normal().string();
    }

    void ignore(const char* key) { known_.insert(key); }

    void finish() {
        if (!obj_) return;
        for (const auto& [key, _] : obj_->items()) {
            if (!known_.count(key)) problems_.push_back("unknown key " + name_ + "." + key);
        }
    }

    const json* object() const { return obj_; }

private:
    std::string name_;
    std::vector<std::string>& problems_;
    const json* obj_ = nullptr;
    std::set<std::string> known_;
};

}  // namespace

AppConfig AppConfig::from_json(const json& j, const fs::path& base) {
    if (!j.is_object()) throw ConfigError({"config must be a JSON object"});
    AppConfig c;
    std::vector<std::string> problems;
    static const std::set<std::string> sections{"dataset", "train", "generator", "plugins", "eval", "service"};
    for (const auto& [key, _] : j.items()) {
        if (!sections.count(key)) problems.push_back("unknown section " + key);
    }

    Section dataset(j, "dataset", problems);
    dataset.read_path("root", c.dataset.root, base);
    dataset.read_path("label_mapping", c.dataset.label_mapping, base);
    dataset.finish();

    Section train(j, "train", problems);
    auto& t = c.train;
    train.read("learning_rate", t.learning_rate);
    train.read("beta1", t.beta1);
    train.read("beta2", t.beta2);
    train.read("batch_size", t.batch_size);
    train.read("total_steps", t.total_steps);
    train.read("epochs", t.epochs);
    train.read("checkpoint_every", t.checkpoint_every);
    train.read("image_size", t.image_size);
    train.read("seed", t.seed);
    train.read("fixed_pairs", t.fixed_pairs);
    train.read("discriminator_channels", t.discriminator_channels);
    train.read("lambda_per", t.weights.perceptual);
    train.read("lambda_ad", t.weights.adversarial);
    train.read_path("checkpoint_dir", t.checkpoint_dir, base);
    train.read_path("log_path", t.log_path, base);
    train.read("prefetch", t.prefetch);
    train.finish();
    t.validate(problems);

    Section generator(j, "generator", problems);
    for (const char* key : {"base_channels", "reduction_ratio", "attention_heads", "mlp_hidden", "transfer_order",
                            "enabled_components", "global_path_enabled"}) {
        generator.ignore(key);
    }
    generator.finish();
    if (generator.object()) {
        try {
            c.generator = GeneratorConfig::from_json(*generator.object());
        } catch (const ConfigError& e) {
            problems.insert(problems.end(), e.problems().begin(), e.problems().end());
        }
    }

    Section plugins(j, "plugins", problems);
    plugins.read("perceptual", c.plugins.perceptual);
    plugins.read_path("vgg19_weights", c.plugins.vgg19_weights, base);
    plugins.read("identity", c.plugins.identity);
    plugins.read("fid", c.plugins.fid);
    plugins.finish();
    if (c.plugins.perceptual != "identity" && c.plugins.perceptual != "vgg19") {
        problems.push_back("plugins.perceptual must be identity or vgg19");
    }
    if (c.plugins.perceptual == "vgg19" && c.plugins.vgg19_weights.empty()) {
        problems.push_back("plugins.vgg19_weights is required when plugins.perceptual is vgg19");
    }
    // Provider specs may carry a path after "torchscript:"; resolve it like other paths.
    for (auto* spec : {&c.plugins.identity, &c.plugins.fid}) {
        const std::string prefix = "torchscript:";
        if (spec->rfind(prefix, 0) == 0 && fs::path(spec->substr(prefix.size())).is_relative() && !base.empty()) {
            *spec = prefix + (base / spec->substr(prefix.size())).lexically_normal().string();
        }
    }

    Section eval(j, "eval", problems);
    eval.read_path("manifest", c.eval.manifest, base);
    eval.read_path("report", c.eval.report, base);
    eval.read_path("output_dir", c.eval.output_dir, base);
    eval.read("image_size", c.eval.image_size);
    eval.finish();
    if (c.eval.image_size <= 0 || c.eval.image_size % 4 != 0) {
        problems.push_back("eval.image_size must be a positive multiple of 4");
    }

    Section service(j, "service", problems);
    service.read("bind", c.service.bind);
    service.read("port", c.service.port);
    service.read("max_image_bytes", c.service.max_image_bytes);
    service.read_path("checkpoint", c.service.checkpoint, base);
    service.read("threads", c.service.threads);
    service.finish();
    if (c.service.port < 0 || c.service.port > 65535) problems.push_back("service.port must be in [0, 65535]");
    if (c.service.max_image_bytes == 0) problems.push_back("service.max_image_bytes must be positive");
    if (c.service.threads <= 0) problems.push_back("service.threads must be positive");

    if (!problems.empty()) throw ConfigError(std::move(problems));
    return c;
}

AppConfig AppConfig::load(const fs::path& path) {
    if (!fs::exists(path)) throw MissingFileError("missing config " + path.string());
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError({path.string() + ": " + e.what()});
    }
    return from_json(j, fs::absolute(path).parent_path());
}

}  // namespace beautyrec
