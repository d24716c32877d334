#include "beautyrec/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <zlib.h>

#include "beautyrec/errors.hpp"

namespace beautyrec {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'B', 'R', 'E', 'C', 'C', 'K', 'P', 'T'};
constexpr const char* kGeneratorGroup = "generator";
constexpr const char* kDiscriminatorGroup = "discriminators";
constexpr const char* kAdamGGroup = "adam_g";
constexpr const char* kAdamDGroup = "adam_d";

const std::map<std::string, torch::Dtype>& dtype_names() {
    static const std::map<std::string, torch::Dtype> names{
        {"float32", torch::kFloat32}, {"float64", torch::kFloat64}, {"int64", torch::kInt64}, {"uint8", torch::kUInt8}};
    return names;
}

std::string dtype_name(torch::Dtype d) {
    for (const auto& [name, dtype] : dtype_names()) {
        if (dtype == d) return name;
    }
    throw CheckpointError(std::string("cannot store tensors of type ") + c10::toString(d));
}

template <typename T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view bytes, std::size_t offset) {
    T value;
    std::memcpy(&value, bytes.data() + offset, sizeof(T));
    return value;
}

std::uint32_t crc(std::string_view bytes) {
    return static_cast<std::uint32_t>(
        crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string hex(std::uint32_t v) {
    char buf[9];
    std::snprintf(buf, sizeof(buf), "%08x", v);
    return buf;
}

void add_module(std::map<std::string, torch::Tensor>& out, const std::string& group, const nn::Module& module) {
    for (const auto& item : module.named_parameters()) out[group + "/" + item.key()] = item.value().detach();
    for (const auto& item : module.named_buffers()) out[group + "/" + item.key()] = item.value().detach();
}

void add_adam(CheckpointContents& out, const std::string& group, const nn::Module& module, torch::optim::Adam& opt) {
    auto& state = opt.state();
    for (const auto& item : module.named_parameters()) {
        auto it = state.find(item.value().unsafeGetTensorImpl());
        if (it == state.end()) continue;
        const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
        const auto key = group + "/" + item.key();
        out.tensors[key + "/exp_avg"] = s.exp_avg().detach();
        out.tensors[key + "/exp_avg_sq"] = s.exp_avg_sq().detach();
        out.adam_steps[key] = s.step();
    }
}

void copy_module(const CheckpointContents& c, const std::string& group, nn::Module& module) {
    torch::NoGradGuard no_grad;
    auto load = [&](const std::string& name, torch::Tensor& dst) {
        auto it = c.tensors.find(group + "/" + name);
        if (it == c.tensors.end()) throw CheckpointError("checkpoint lacks tensor " + group + "/" + name);
        if (it->second.sizes() != dst.sizes()) {
            throw CheckpointError("checkpoint tensor " + group + "/" + name + " has the wrong shape");
        }
        dst.copy_(it->second);
    };
    for (auto& item : module.named_parameters()) load(item.key(), item.value());
    for (auto& item : module.named_buffers()) load(item.key(), item.value());
}

void restore_adam(const CheckpointContents& c, const std::string& group, const nn::Module& module,
                  torch::optim::Adam& opt) {
    auto& state = opt.state();
    for (const auto& item : module.named_parameters()) {
        const auto& p = item.value();
        const auto key = group + "/" + item.key();
        state.erase(p.unsafeGetTensorImpl());
        auto step = c.adam_steps.find(key);
        if (step == c.adam_steps.end()) continue;
        auto s = std::make_unique<torch::optim::AdamParamState>();
        s->step(step->second);
        s->exp_avg(c.tensors.at(key + "/exp_avg").clone().to(p.options()));
        s->exp_avg_sq(c.tensors.at(key + "/exp_avg_sq").clone().to(p.options()));
        state[p.unsafeGetTensorImpl()] = std::move(s);
    }
}

}  // namespace

bool CheckpointContents::has_group(std::string_view group) const {
    const std::string prefix = std::string(group) + "/";
    auto it = tensors.lower_bound(prefix);
    return it != tensors.end() && it->first.compare(0, prefix.size(), prefix) == 0;
}

std::string serialize_checkpoint(const CheckpointSource& source) {
    if (!source.generator) throw CheckpointError("checkpoint needs a generator");
    CheckpointContents c;
    c.generator_config = source.generator->config();
    c.step = source.step;
    c.extra = source.extra;
    add_module(c.tensors, kGeneratorGroup, *source.generator);
    if (source.discriminators) add_module(c.tensors, kDiscriminatorGroup, *source.discriminators);
    if (source.generator_optimizer) add_adam(c, kAdamGGroup, *source.generator, *source.generator_optimizer);
    if (source.discriminator_optimizer && source.discriminators) {
        add_adam(c, kAdamDGroup, *source.discriminators, *source.discriminator_optimizer);
    }

    std::string data;
    json entries = json::array();
    for (const auto& [name, tensor] : c.tensors) {
        auto t = tensor.contiguous().cpu();
        const auto nbytes = t.numel() * static_cast<int64_t>(t.element_size());
        entries.push_back({{"name", name},
                           {"dtype", dtype_name(t.scalar_type())},
                           {"shape", t.sizes().vec()},
                           {"offset", data.size()},
                           {"nbytes", nbytes}});
        data.append(static_cast<const char*>(t.data_ptr()), static_cast<std::size_t>(nbytes));
    }
    json header{{"model_version", c.model_version}, {"generator_config", c.generator_config.to_json()},
                {"step", c.step},                   {"extra", c.extra},
                {"adam_steps", c.adam_steps},       {"tensors", entries}};
    const std::string header_text = header.dump();

    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointFormat);
    put<std::uint64_t>(out, header_text.size());
    out += header_text;
    out += data;
    put<std::uint32_t>(out, crc(out));
    return out;
}

void save_checkpoint(const fs::path& path, const CheckpointSource& source) {
    const auto bytes = serialize_checkpoint(source);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

CheckpointContents parse_checkpoint(std::string_view bytes) {
    constexpr std::size_t kPrefix = sizeof(kMagic) + 4 + 8;
    if (bytes.size() < kPrefix + 4 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError("not a checkpoint archive");
    }
    const auto stored_crc = get<std::uint32_t>(bytes, bytes.size() - 4);
    if (crc(bytes.substr(0, bytes.size() - 4)) != stored_crc) throw CheckpointError("checkpoint checksum mismatch");
    const auto format = get<std::uint32_t>(bytes, sizeof(kMagic));
    if (format != kCheckpointFormat) {
        throw CheckpointError("checkpoint format " + std::to_string(format) + " is not supported (expected " +
                              std::to_string(kCheckpointFormat) + ")");
    }
    const auto header_len = get<std::uint64_t>(bytes, sizeof(kMagic) + 4);
    if (header_len > bytes.size() - kPrefix - 4) throw CheckpointError("checkpoint header truncated");

    CheckpointContents c;
    c.format = format;
    c.id = hex(stored_crc);
    try {
        const auto header = json::parse(bytes.substr(kPrefix, header_len));
        c.model_version = header.at("model_version").get<std::string>();
        if (c.model_version != kModelVersion) {
            throw CheckpointError("checkpoint model version " + c.model_version + " does not match " +
                                  std::string(kModelVersion));
        }
        c.generator_config = GeneratorConfig::from_json(header.at("generator_config"));
        c.step = header.at("step").get<int64_t>();
        c.extra = header.at("extra");
        c.adam_steps = header.at("adam_steps").get<std::map<std::string, int64_t>>();
        const auto data = bytes.substr(kPrefix + header_len, bytes.size() - 4 - kPrefix - header_len);
        for (const auto& e : header.at("tensors")) {
            const auto offset = e.at("offset").get<std::size_t>();
            const auto nbytes = e.at("nbytes").get<std::size_t>();
            if (offset + nbytes > data.size()) throw CheckpointError("checkpoint tensor data truncated");
            auto dtype = dtype_names().at(e.at("dtype").get<std::string>());
            auto shape = e.at("shape").get<std::vector<int64_t>>();
            auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
            if (static_cast<std::size_t>(t.numel() * t.element_size()) != nbytes) {
                throw CheckpointError("checkpoint tensor size disagrees with its shape");
            }
            std::memcpy(t.data_ptr(), data.data() + offset, nbytes);
            c.tensors.emplace(e.at("name").get<std::string>(), std::move(t));
        }
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }
    return c;
}

CheckpointContents read_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) throw MissingFileError("missing checkpoint " + path.string());
    return parse_checkpoint(read_file(path));
}

void restore_generator(const CheckpointContents& contents, Generator& generator) {
    if (!generator->config().same_architecture(contents.generator_config)) {
        throw CheckpointError("checkpoint generator config " + contents.generator_config.to_json().dump() +
                              " does not match " + generator->config().to_json().dump());
    }
    copy_module(contents, kGeneratorGroup, *generator);
}

void restore_training(const CheckpointContents& contents, Generator& generator, DiscriminatorSet& discriminators,
                      torch::optim::Adam& generator_optimizer, torch::optim::Adam& discriminator_optimizer) {
    if (!contents.has_group(kDiscriminatorGroup)) {
        throw CheckpointError("checkpoint holds no discriminator weights; it cannot resume training");
    }
    restore_generator(contents, generator);
    copy_module(contents, kDiscriminatorGroup, *discriminators);
    restore_adam(contents, kAdamGGroup, *generator, generator_optimizer);
    restore_adam(contents, kAdamDGroup, *discriminators, discriminator_optimizer);
}

Generator load_generator(const fs::path& path, const std::optional<GeneratorConfig>& expected,
                         CheckpointContents* out) {
    auto contents = read_checkpoint(path);
    if (expected && !expected->same_architecture(contents.generator_config)) {
        throw CheckpointError("checkpoint generator config " + contents.generator_config.to_json().dump() +
                              " does not match the configured " + expected->to_json().dump());
    }
    Generator g(contents.generator_config);
    copy_module(contents, kGeneratorGroup, *g);
    g->eval();
    if (out) *out = std::move(contents);
    return g;
}

}  // namespace beautyrec
