#include "beautyrec/face_data.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <png.h>

namespace beautyrec {

namespace fs = std::filesystem;

std::string_view to_string(Component c) {
    switch (c) {
        case Component::Lips: return "lips";
        case Component::Skin: return "skin";
        case Component::Eyes: return "eyes";
        case Component::LeftEye: return "left_eye";
        case Component::RightEye: return "right_eye";
    }
    return "?";
}

Component parse_component(std::string_view name) {
    for (auto c : {Component::Lips, Component::Skin, Component::Eyes, Component::LeftEye, Component::RightEye}) {
        if (to_string(c) == name) return c;
    }
    throw std::invalid_argument("unknown component '" + std::string(name) + "'");
}

ComponentSet ComponentSet::parse(std::string_view list) {
    ComponentSet out;
    std::size_t pos = 0;
    while (pos <= list.size()) {
        auto end = list.find(',', pos);
        if (end == std::string_view::npos) end = list.size();
        auto token = list.substr(pos, end - pos);
        while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
        while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
        if (!token.empty()) {
            auto c = parse_component(token);
            if (c != Component::Lips && c != Component::Skin && c != Component::Eyes) {
                throw std::invalid_argument("'" + std::string(token) + "' is not a transfer component");
            }
            out.insert(c);
        }
        pos = end + 1;
    }
    return out;
}

std::string ComponentSet::to_string() const {
    std::string out;
    for (auto c : kTransferComponents) {
        if (!contains(c)) continue;
        if (!out.empty()) out += ',';
        out += beautyrec::to_string(c);
    }
    return out;
}

LabelMapping LabelMapping::identity() {
    LabelMapping m;
    for (int i = 0; i < label::kCount; ++i) m.set(i, static_cast<std::uint8_t>(i));
    return m;
}

LabelMapping LabelMapping::from_json_file(const fs::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError({"label mapping " + path.string() + ": " + e.what()});
    }
    if (!doc.contains("mapping") || !doc["mapping"].is_object()) {
        throw ConfigError({"label mapping " + path.string() + ": missing object field 'mapping'"});
    }
    LabelMapping m;
    std::vector<std::string> problems;
    for (const auto& [key, value] : doc["mapping"].items()) {
        int raw = -1;
        try {
            raw = std::stoi(key);
        } catch (const std::exception&) {
        }
        if (raw < 0 || raw > 255) {
            problems.push_back("raw label '" + key + "' is not in 0..255");
            continue;
        }
        if (!value.is_number_integer() || value.get<int>() < 0 || value.get<int>() >= label::kCount) {
            problems.push_back("raw label " + key + " maps outside the canonical set 0..12");
            continue;
        }
        m.set(raw, static_cast<std::uint8_t>(value.get<int>()));
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
    return m;
}

void LabelMapping::set(int raw, std::uint8_t canonical) {
    if (raw < 0 || raw > 255) throw std::out_of_range("raw label out of range");
    if (canonical >= label::kCount) throw std::out_of_range("canonical label out of range");
    table_[static_cast<std::size_t>(raw)] = canonical;
}

std::optional<std::uint8_t> LabelMapping::map(int raw) const {
    if (raw < 0 || raw > 255) return std::nullopt;
    auto v = table_[static_cast<std::size_t>(raw)];
    if (v < 0) return std::nullopt;
    return static_cast<std::uint8_t>(v);
}

int64_t ComponentMask::pixels() const { return static_cast<int64_t>(mask.sum().item<double>()); }

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::optional<std::pair<int64_t, int64_t>> image_dimensions(std::string_view bytes) {
    if (bytes.empty()) return std::nullopt;
    cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8U, const_cast<char*>(bytes.data()));
    cv::Mat img = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
    if (img.empty()) return std::nullopt;
    return std::make_pair(static_cast<int64_t>(img.rows), static_cast<int64_t>(img.cols));
}

torch::Tensor decode_image(std::string_view bytes, int64_t size) {
    if (size <= 0 || size % 4 != 0) throw ShapeError("image size must be a positive multiple of 4");
    if (bytes.empty()) throw DecodeError("image bytes are empty");
    cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8U, const_cast<char*>(bytes.data()));
    cv::Mat bgr = cv::imdecode(buf, cv::IMREAD_COLOR);
    if (bgr.empty()) throw DecodeError("image bytes could not be decoded");
    if (bgr.rows != size || bgr.cols != size) {
        cv::Mat resized;
        cv::resize(bgr, resized, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_LINEAR);
        bgr = resized;
    }
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
    return t.permute({2, 0, 1}).to(torch::kFloat32).div(127.5).sub(1.0).contiguous();
}

namespace {

struct PngMemoryReader {
    const unsigned char* data;
    std::size_t size;
    std::size_t offset;
};

void png_read_from_memory(png_structp png, png_bytep out, png_size_t count) {
    auto* reader = static_cast<PngMemoryReader*>(png_get_io_ptr(png));
    if (reader->offset + count > reader->size) png_error(png, "truncated PNG");
    std::memcpy(out, reader->data + reader->offset, count);
    reader->offset += count;
}

struct RawLabels {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<int> values;
};

// Returns an empty message on success. Kept free of non-trivial locals between
// setjmp and the libpng calls that may longjmp.
std::string read_label_png(std::string_view bytes, RawLabels& out) {
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
        return "parsing map is not a PNG";
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        return "libpng initialisation failed";
    }
    PngMemoryReader reader{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), 0};
    std::vector<unsigned char> pixels;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        return "corrupt parsing PNG";
    }
    png_set_read_fn(png, &reader, png_read_from_memory);
    png_read_info(png, info);
    const auto width = png_get_image_width(png, info);
    const auto height = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_PALETTE && color != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        return "parsing map must be a single-channel (indexed or grayscale) PNG";
    }
    if (depth < 8) png_set_packing(png);
    png_read_update_info(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    pixels.resize(stride * height);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    out.height = height;
    out.width = width;
    out.values.resize(static_cast<std::size_t>(width) * height);
    const bool wide = depth == 16;
    for (png_uint_32 y = 0; y < height; ++y) {
        for (png_uint_32 x = 0; x < width; ++x) {
            const unsigned char* p = rows[y] + (wide ? 2 * x : x);
            out.values[static_cast<std::size_t>(y) * width + x] = wide ? (p[0] << 8 | p[1]) : p[0];
        }
    }
    return {};
}

struct PngFile {
    FILE* fp = nullptr;
    ~PngFile() {
        if (fp) std::fclose(fp);
    }
};

// Fixed display palette for the canonical labels; indices are what matter.
constexpr unsigned char kPalette[label::kCount][3] = {
    {0, 0, 0},     {204, 153, 128}, {102, 51, 0},   {102, 51, 0},   {0, 128, 255},
    {0, 128, 255}, {255, 204, 153}, {220, 20, 60},  {255, 255, 255}, {178, 34, 34},
    {64, 32, 0},   {230, 180, 150}, {128, 128, 128}};

}  // namespace

ParsingMap resize_parsing(const ParsingMap& parsing, int64_t height, int64_t width) {
    const auto in_h = parsing.height();
    const auto in_w = parsing.width();
    if (in_h == height && in_w == width) return parsing;
    auto rows = torch::arange(height, torch::kLong).mul(in_h).div(height, "floor");
    auto cols = torch::arange(width, torch::kLong).mul(in_w).div(width, "floor");
    auto out = parsing.labels.index_select(0, rows).index_select(1, cols).contiguous();
    return ParsingMap{out};
}

ParsingMap decode_parsing(std::string_view bytes, int64_t size, const LabelMapping& mapping) {
    if (size <= 0 || size % 4 != 0) throw ShapeError("parsing size must be a positive multiple of 4");
    RawLabels raw;
    if (auto err = read_label_png(bytes, raw); !err.empty()) throw DecodeError(err);

    std::set<int> offending;
    auto labels = torch::empty({raw.height, raw.width}, torch::kUInt8);
    auto* dst = labels.data_ptr<std::uint8_t>();
    for (std::size_t i = 0; i < raw.values.size(); ++i) {
        auto mapped = mapping.map(raw.values[i]);
        if (!mapped) {
            offending.insert(raw.values[i]);
            continue;
        }
        dst[i] = *mapped;
    }
    if (!offending.empty()) {
        std::string msg = "parsing map contains labels outside the canonical set:";
        for (int v : offending) msg += " " + std::to_string(v);
        throw LabelError(msg, {offending.begin(), offending.end()});
    }
    return resize_parsing(ParsingMap{labels}, size, size);
}

FaceSample load_sample(const fs::path& image_path, const fs::path& parsing_path, int64_t size,
                       const LabelMapping& mapping) {
    if (!fs::exists(image_path)) throw MissingFileError("missing image " + image_path.string());
    if (!fs::exists(parsing_path)) throw MissingFileError("missing parsing map " + parsing_path.string());
    FaceSample s;
    try {
        s.image = decode_image(read_file(image_path), size);
    } catch (const DecodeError& e) {
        throw DecodeError(image_path.string() + ": " + e.what());
    }
    try {
        s.parsing = decode_parsing(read_file(parsing_path), size, mapping);
    } catch (const LabelError& e) {
        throw LabelError(parsing_path.string() + ": " + e.what(), e.offending());
    } catch (const DecodeError& e) {
        throw DecodeError(parsing_path.string() + ": " + e.what());
    }
    return s;
}

std::string encode_png(const torch::Tensor& image) {
    if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("encode_png expects a [3,H,W] image");
    auto u8 = image.detach().to(torch::kCPU, torch::kFloat32).add(1.0).mul(127.5).round().clamp(0, 255)
                  .to(torch::kUInt8).permute({1, 2, 0}).contiguous();
    cv::Mat rgb(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC3, u8.data_ptr());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    std::vector<unsigned char> out;
    cv::imencode(".png", bgr, out);
    return {out.begin(), out.end()};
}

std::string encode_gray_png(const torch::Tensor& map) {
    if (map.dim() != 2) throw ShapeError("encode_gray_png expects a [H,W] map");
    auto u8 = map.detach().to(torch::kCPU, torch::kFloat32).mul(255.0).round().clamp(0, 255).to(torch::kUInt8)
                  .contiguous();
    cv::Mat gray(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC1, u8.data_ptr());
    std::vector<unsigned char> out;
    cv::imencode(".png", gray, out);
    return {out.begin(), out.end()};
}

void write_png(const torch::Tensor& image, const fs::path& path) {
    auto bytes = encode_png(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_parsing_png(const ParsingMap& parsing, const fs::path& path) {
    auto labels = parsing.labels.to(torch::kUInt8).contiguous();
    PngFile file;
    file.fp = std::fopen(path.string().c_str(), "wb");
    if (!file.fp) throw std::runtime_error("cannot write " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng initialisation failed");
    }
    std::vector<png_color> palette(256, png_color{128, 128, 128});
    for (int i = 0; i < label::kCount; ++i) palette[i] = {kPalette[i][0], kPalette[i][1], kPalette[i][2]};
    std::vector<png_bytep> rows(static_cast<std::size_t>(parsing.height()));
    auto* base = labels.data_ptr<std::uint8_t>();
    for (int64_t y = 0; y < parsing.height(); ++y) rows[y] = base + y * parsing.width();
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("failed writing " + path.string());
    }
    png_init_io(png, file.fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(parsing.width()), static_cast<png_uint_32>(parsing.height()), 8,
                 PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_PLTE(png, info, palette.data(), 256);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

int64_t eye_ring_radius(int64_t height, int64_t width) {
    const auto side = std::min(height, width);
    return (side + 15) / 16;
}

torch::Tensor dilate(const torch::Tensor& mask, int64_t radius) {
    if (mask.dim() != 2) throw ShapeError("dilate expects a [H,W] mask");
    auto m = mask.to(torch::kFloat32);
    if (radius <= 0) return (m > 0.5).to(torch::kFloat32);
    auto coords = torch::arange(-radius, radius + 1, torch::kFloat32);
    auto disc = (coords.view({-1, 1}).pow(2) + coords.view({1, -1}).pow(2)).le(static_cast<double>(radius * radius))
                    .to(torch::kFloat32)
                    .view({1, 1, 2 * radius + 1, 2 * radius + 1});
    auto grown = torch::conv2d(m.view({1, 1, m.size(0), m.size(1)}), disc, {}, 1, radius);
    return (grown.view({m.size(0), m.size(1)}) > 0.5).to(torch::kFloat32);
}

namespace {

// Euclidean distance of every pixel to the nearest set pixel of `mask`; large where the mask is empty.
torch::Tensor distance_to(const torch::Tensor& mask) {
    auto inverse = mask.logical_not().to(torch::kUInt8).mul(255).contiguous();
    cv::Mat src(static_cast<int>(inverse.size(0)), static_cast<int>(inverse.size(1)), CV_8UC1, inverse.data_ptr());
    cv::Mat dist;
    cv::distanceTransform(src, dist, cv::DIST_L2, cv::DIST_MASK_PRECISE);
    return torch::from_blob(dist.data, {dist.rows, dist.cols}, torch::kFloat32).clone();
}

}  // namespace

ComponentMask component_mask(const ParsingMap& parsing, Component component) {
    const auto& l = parsing.labels;
    if (l.dim() != 2) throw ShapeError("parsing map must be [H,W]");
    auto is = [&](std::uint8_t v) { return l.eq(v); };
    auto as_float = [](const torch::Tensor& b) { return b.to(torch::kFloat32); };

    if (component == Component::Lips) return {component, as_float(is(label::kUpperLip) | is(label::kLowerLip))};

    const auto skin_labels = is(label::kFaceSkin) | is(label::kNose);
    const auto radius = eye_ring_radius(parsing.height(), parsing.width());
    auto ring = [&](std::uint8_t eye) { return dilate(as_float(is(eye)), radius).gt(0.5) & skin_labels; };

    switch (component) {
        case Component::LeftEye:
        case Component::RightEye: {
            auto left = ring(label::kLeftEye), right = ring(label::kRightEye);
            auto shared = left & right;
            if (shared.any().item<bool>()) {
                // Close-set eyes: a pixel in both rings goes to the nearer eye, ties to the left.
                auto closer_left = distance_to(is(label::kLeftEye)).le(distance_to(is(label::kRightEye)));
                left = left & (shared.logical_not() | closer_left);
                right = right & (shared.logical_not() | closer_left.logical_not());
            }
            return {component, as_float(component == Component::LeftEye ? left : right)};
        }
        case Component::Eyes: return {component, as_float(ring(label::kLeftEye) | ring(label::kRightEye))};
        case Component::Skin: {
            auto eyes = ring(label::kLeftEye) | ring(label::kRightEye);
            return {component, as_float(skin_labels & eyes.logical_not())};
        }
        default: break;
    }
    throw std::invalid_argument("unknown component id");
}

torch::Tensor extract_component(const torch::Tensor& image, const torch::Tensor& mask) {
    auto m = mask;
    if (image.dim() == 3) {
        if (m.dim() == 2) m = m.unsqueeze(0);
        if (m.dim() != 3 || m.size(0) != 1) throw ShapeError("mask must be [H,W] or [1,H,W] for a [3,H,W] image");
    } else if (image.dim() == 4) {
        if (m.dim() == 2) m = m.unsqueeze(0).unsqueeze(0);
        if (m.dim() != 4 || m.size(1) != 1 || (m.size(0) != image.size(0) && m.size(0) != 1)) {
            throw ShapeError("mask must be [N,1,H,W] for an [N,3,H,W] image");
        }
    } else {
        throw ShapeError("image must be [3,H,W] or [N,3,H,W]");
    }
    if (m.size(-1) != image.size(-1) || m.size(-2) != image.size(-2)) {
        throw ShapeError("mask and image spatial sizes differ");
    }
    auto black = torch::full({}, -1.0, image.options());
    return torch::where(m.gt(0.5), image, black);
}

torch::Tensor extract_component(const torch::Tensor& image, const ComponentMask& mask) {
    return extract_component(image, mask.mask);
}

namespace {

template <typename T>
void match_channel(T* src, const T* ref, const std::uint8_t* src_mask, const std::uint8_t* ref_mask,
                   std::size_t n_pixels) {
    auto bin_of = [](T v) {
        auto b = std::lround((static_cast<double>(v) + 1.0) * 127.5);
        return static_cast<int>(std::clamp<long>(b, 0, 255));
    };
    std::array<std::int64_t, 256> hist{};
    std::int64_t n_src = 0;
    std::vector<T> ref_values;
    for (std::size_t i = 0; i < n_pixels; ++i) {
        if (src_mask[i]) {
            ++hist[bin_of(src[i])];
            ++n_src;
        }
        if (ref_mask[i]) ref_values.push_back(ref[i]);
    }
    std::sort(ref_values.begin(), ref_values.end());
    const auto n_ref = static_cast<std::int64_t>(ref_values.size());

    // Each source bin goes to the smallest reference value whose empirical CDF
    // reaches the source CDF at that bin.
    std::array<T, 256> lut{};
    std::int64_t cumulative = 0;
    for (int b = 0; b < 256; ++b) {
        cumulative += hist[b];
        if (hist[b] == 0) continue;
        auto idx = (cumulative * n_ref + n_src - 1) / n_src - 1;
        lut[b] = ref_values[static_cast<std::size_t>(std::clamp<std::int64_t>(idx, 0, n_ref - 1))];
    }
    for (std::size_t i = 0; i < n_pixels; ++i) {
        if (src_mask[i]) src[i] = lut[bin_of(src[i])];
    }
}

}  // namespace

torch::Tensor histogram_match(const torch::Tensor& source, const torch::Tensor& reference,
                              const ComponentMask& src_mask, const ComponentMask& ref_mask) {
    if (source.dim() != 3 || reference.dim() != 3 || source.size(0) != 3 || reference.size(0) != 3) {
        throw ShapeError("histogram_match expects [3,H,W] images");
    }
    if (src_mask.mask.sizes() != source.sizes().slice(1) || ref_mask.mask.sizes() != reference.sizes().slice(1)) {
        throw ShapeError("histogram_match mask/image shape mismatch");
    }
    auto out = source.detach().to(torch::kCPU).contiguous().clone();
    auto ref = reference.detach().to(torch::kCPU, out.scalar_type()).contiguous();
    auto sm = src_mask.mask.gt(0.5).to(torch::kUInt8).contiguous();
    auto rm = ref_mask.mask.gt(0.5).to(torch::kUInt8).contiguous();
    if (sm.sum().item<int64_t>() == 0 || rm.sum().item<int64_t>() == 0) return out;

    const auto plane = static_cast<std::size_t>(source.size(1) * source.size(2));
    const auto rplane = static_cast<std::size_t>(reference.size(1) * reference.size(2));
    if (plane != rplane) throw ShapeError("histogram_match requires source and reference of equal size");
    for (int64_t c = 0; c < 3; ++c) {
        if (out.scalar_type() == torch::kDouble) {
            match_channel(out.data_ptr<double>() + c * plane, ref.data_ptr<double>() + c * plane,
                          sm.data_ptr<std::uint8_t>(), rm.data_ptr<std::uint8_t>(), plane);
        } else if (out.scalar_type() == torch::kFloat) {
            match_channel(out.data_ptr<float>() + c * plane, ref.data_ptr<float>() + c * plane,
                          sm.data_ptr<std::uint8_t>(), rm.data_ptr<std::uint8_t>(), plane);
        } else {
            throw ShapeError("histogram_match expects floating-point images");
        }
    }
    return out;
}

torch::Tensor makeup_target(const FaceSample& source, const FaceSample& reference) {
    auto target = source.image;
    for (auto c : kTransferComponents) {
        target = histogram_match(target, reference.image, component_mask(source.parsing, c),
                                 component_mask(reference.parsing, c));
    }
    return target;
}

FaceMasks FaceMasks::from(const ParsingMap& parsing) {
    auto get = [&](Component c) { return component_mask(parsing, c).mask.unsqueeze(0).unsqueeze(0); };
    return {get(Component::Lips), get(Component::Skin), get(Component::Eyes), get(Component::LeftEye),
            get(Component::RightEye)};
}

FaceMasks FaceMasks::cat(const std::vector<FaceMasks>& items) {
    auto gather = [&](auto member) {
        std::vector<torch::Tensor> parts;
        for (const auto& m : items) parts.push_back(m.*member);
        return torch::cat(parts, 0);
    };
    return {gather(&FaceMasks::lips), gather(&FaceMasks::skin), gather(&FaceMasks::eyes),
            gather(&FaceMasks::left_eye), gather(&FaceMasks::right_eye)};
}

const torch::Tensor& FaceMasks::get(Component c) const {
    switch (c) {
        case Component::Lips: return lips;
        case Component::Skin: return skin;
        case Component::Eyes: return eyes;
        case Component::LeftEye: return left_eye;
        case Component::RightEye: return right_eye;
    }
    throw std::invalid_argument("unknown component id");
}

FaceMasks FaceMasks::to(torch::Dtype dtype) const {
    return {lips.to(dtype), skin.to(dtype), eyes.to(dtype), left_eye.to(dtype), right_eye.to(dtype)};
}

PairDraw sample_pair(std::size_t makeup_pool_size, std::size_t nonmakeup_pool_size, std::uint64_t rng_seed) {
    if (makeup_pool_size == 0 || nonmakeup_pool_size == 0) throw std::invalid_argument("sample_pair: empty pool");
    std::mt19937_64 rng(rng_seed);
    std::uniform_int_distribution<std::size_t> pick_makeup(0, makeup_pool_size - 1);
    std::uniform_int_distribution<std::size_t> pick_plain(0, nonmakeup_pool_size - 1);
    PairDraw d;
    d.makeup_index = pick_makeup(rng);
    d.nonmakeup_index = pick_plain(rng);
    return d;
}

std::string_view domain_dir(FaceDataset::Domain d) { return d == FaceDataset::Domain::Makeup ? "makeup" : "non-makeup"; }

FaceDataset::FaceDataset(fs::path root, int64_t size, LabelMapping mapping)
    : root_(std::move(root)), size_(size), mapping_(std::move(mapping)) {
    for (auto d : {Domain::Makeup, Domain::NonMakeup}) {
        const auto dir = root_ / "images" / domain_dir(d);
        if (!fs::is_directory(dir)) throw MissingFileError("dataset directory missing: " + dir.string());
        auto& ids = d == Domain::Makeup ? makeup_ : nonmakeup_;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file()) continue;
            auto ext = entry.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
            if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") ids.push_back(entry.path().filename().string());
        }
        std::sort(ids.begin(), ids.end());
    }
}

fs::path FaceDataset::image_path(Domain d, const std::string& id) const { return root_ / "images" / domain_dir(d) / id; }

fs::path FaceDataset::seg_path(Domain d, const std::string& id) const {
    return root_ / "segs" / domain_dir(d) / (fs::path(id).stem().string() + ".png");
}

FaceSample FaceDataset::load(Domain d, const std::string& id) const {
    return load_sample(image_path(d, id), seg_path(d, id), size_, mapping_);
}

PairSample FaceDataset::pair(std::uint64_t rng_seed) const {
    auto draw = sample_pair(makeup_.size(), nonmakeup_.size(), rng_seed);
    PairSample p;
    p.source_id = nonmakeup_[draw.nonmakeup_index];
    p.reference_id = makeup_[draw.makeup_index];
    p.source = load(Domain::NonMakeup, p.source_id);
    p.reference = load(Domain::Makeup, p.reference_id);
    return p;
}

}  // namespace beautyrec
