#include "beautyrec/synth.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <random>

#include <opencv2/imgproc.hpp>

namespace beautyrec {

namespace fs = std::filesystem;

namespace {

using Rgb = cv::Vec3f;

struct Rng {
    explicit Rng(std::uint64_t seed) : engine(seed) {}
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine); }
    int pick(int n) { return std::uniform_int_distribution<int>(0, n - 1)(engine); }
    Rgb jitter(Rgb c, double amount) {
        return {static_cast<float>(c[0] + uniform(-amount, amount)), static_cast<float>(c[1] + uniform(-amount, amount)),
                static_cast<float>(c[2] + uniform(-amount, amount))};
    }
    std::mt19937_64 engine;
};

cv::Point pt(double x, double y, int s) { return {static_cast<int>(x * s), static_cast<int>(y * s)}; }
cv::Size axes(double a, double b, int s) {
    return {std::max(1, static_cast<int>(a * s)), std::max(1, static_cast<int>(b * s))};
}

void blend(cv::Mat3f& image, const cv::Mat1f& alpha, Rgb color) {
    for (int y = 0; y < image.rows; ++y) {
        for (int x = 0; x < image.cols; ++x) {
            const float a = alpha(y, x);
            if (a > 0) image(y, x) = image(y, x) * (1 - a) + color * a;
        }
    }
}

}  // namespace

FaceSample synth_face(int64_t size, std::uint64_t seed, bool makeup) {
    const int s = static_cast<int>(size);
    Rng rng(seed);
    cv::Mat1b labels(s, s, label::kBackground);

    const double face_w = rng.uniform(0.25, 0.30), face_h = rng.uniform(0.32, 0.37);
    const double cx = 0.5 + rng.uniform(-0.02, 0.02), cy = 0.53 + rng.uniform(-0.02, 0.02);
    const double eye_dx = rng.uniform(0.09, 0.11), eye_y = cy - rng.uniform(0.06, 0.08);
    const double lip_y = cy + rng.uniform(0.16, 0.19), lip_w = rng.uniform(0.07, 0.10), lip_h = rng.uniform(0.03, 0.04);

    cv::ellipse(labels, pt(cx, cy - 0.1, s), axes(face_w + 0.07, face_h + 0.02, s), 0, 0, 360, label::kHair, -1);
    cv::rectangle(labels, pt(cx - 0.09, cy + 0.2, s), pt(cx + 0.09, 1.0, s), label::kNeck, -1);
    cv::ellipse(labels, pt(cx, cy, s), axes(face_w, face_h, s), 0, 0, 360, label::kFaceSkin, -1);
    for (int side : {-1, 1}) {
        const double ex = cx + side * eye_dx;
        const auto brow = side < 0 ? label::kLeftBrow : label::kRightBrow;
        const auto eye = side < 0 ? label::kLeftEye : label::kRightEye;
        cv::ellipse(labels, pt(ex, eye_y - 0.06, s), axes(0.055, 0.012, s), 0, 0, 360, brow, -1);
        cv::ellipse(labels, pt(ex, eye_y, s), axes(0.042, 0.02, s), 0, 0, 360, eye, -1);
    }
    cv::ellipse(labels, pt(cx, cy + 0.05, s), axes(0.03, 0.07, s), 0, 0, 360, label::kNose, -1);
    cv::ellipse(labels, pt(cx, lip_y, s), axes(lip_w, lip_h, s), 0, 180, 360, label::kUpperLip, -1);
    cv::ellipse(labels, pt(cx, lip_y, s), axes(lip_w, lip_h, s), 0, 0, 180, label::kLowerLip, -1);
    cv::line(labels, pt(cx - lip_w * 0.8, lip_y, s), pt(cx + lip_w * 0.8, lip_y, s), label::kMouth,
             std::max(1, s / 128));

    const Rgb skin = rng.jitter({225, 185, 155}, 25);
    std::array<Rgb, label::kCount> palette{};
    palette[label::kBackground] = rng.jitter({120, 140, 160}, 60);
    palette[label::kFaceSkin] = skin;
    palette[label::kLeftBrow] = palette[label::kRightBrow] = rng.jitter({70, 50, 35}, 20);
    palette[label::kLeftEye] = palette[label::kRightEye] = {235, 235, 230};
    palette[label::kNose] = skin * 0.95f;
    palette[label::kUpperLip] = palette[label::kLowerLip] = rng.jitter({200, 125, 115}, 15);
    palette[label::kMouth] = {90, 30, 30};
    palette[label::kHair] = rng.jitter({60, 45, 35}, 30);
    palette[label::kNeck] = skin * 0.9f;
    palette[label::kOther] = {128, 128, 128};

    if (makeup) {
        static const std::array<Rgb, 4> lipsticks{Rgb{200, 25, 45}, Rgb{225, 70, 135}, Rgb{135, 25, 75},
                                                  Rgb{235, 95, 70}};
        palette[label::kUpperLip] = palette[label::kLowerLip] = rng.jitter(lipsticks[rng.pick(4)], 15);
        // foundation evens and lightens the base tone
        palette[label::kFaceSkin] = rng.jitter(skin * 0.6f + Rgb{240, 215, 195} * 0.4f, 8);
        palette[label::kNose] = palette[label::kFaceSkin] * 0.97f;
    }

    cv::Mat3f image(s, s);
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            Rgb c = palette[labels(y, x)];
            if (labels(y, x) == label::kBackground) c *= static_cast<float>(0.8 + 0.4 * y / s);
            image(y, x) = c;
        }
    }
    // iris
    for (int side : {-1, 1}) {
        const double ex = cx + side * eye_dx + rng.uniform(-0.01, 0.01);
        cv::Mat1b eye_region = labels == (side < 0 ? label::kLeftEye : label::kRightEye);
        cv::Mat1f a(s, s, 0.0F);
        cv::circle(a, pt(ex, eye_y, s), std::max(1, static_cast<int>(0.017 * s)), 1.0F, -1);
        a.setTo(0, ~eye_region);
        blend(image, a, rng.jitter({70, 50, 35}, 20));
    }

    if (makeup) {
        static const std::array<Rgb, 4> shadows{Rgb{120, 60, 150}, Rgb{60, 90, 170}, Rgb{150, 90, 50},
                                                Rgb{200, 160, 70}};
        const Rgb shadow = rng.jitter(shadows[rng.pick(4)], 15);
        cv::Mat1f ring(s, s, 0.0F);
        const int r = static_cast<int>((s + 15) / 16);
        for (int side : {-1, 1}) {
            cv::ellipse(ring, pt(cx + side * eye_dx, eye_y - 0.01, s), axes(0.042, 0.02, s) + cv::Size(r, r), 0, 0,
                        360, 0.75F, -1);
        }
        cv::GaussianBlur(ring, ring, cv::Size(0, 0), std::max(1.0, r / 3.0));
        cv::Mat1b skin_area = (labels == label::kFaceSkin) | (labels == label::kNose);
        ring.setTo(0, ~skin_area);
        blend(image, ring, shadow);

        cv::Mat1f blush(s, s, 0.0F);
        for (int side : {-1, 1}) {
            cv::circle(blush, pt(cx + side * face_w * 0.6, cy + 0.09, s), static_cast<int>(0.05 * s), 0.35F, -1);
        }
        cv::GaussianBlur(blush, blush, cv::Size(0, 0), 0.02 * s + 1);
        blush.setTo(0, labels != label::kFaceSkin);
        blend(image, blush, rng.jitter({230, 90, 100}, 15));
    }

    cv::Mat3f noise(s, s);
    // cv::randn draws from OpenCV's global RNG; reseed it so faces depend on `seed` only.
    cv::theRNG().state = seed * 2654435761ULL + 1;
    cv::randn(noise, cv::Scalar::all(0), cv::Scalar::all(6));
    image += noise;
    cv::GaussianBlur(image, image, cv::Size(3, 3), 0.8);

    auto t = torch::from_blob(image.data, {s, s, 3}, torch::kFloat32).clone();
    t = (t.clamp(0, 255).round() / 127.5 - 1).permute({2, 0, 1}).contiguous();
    auto l = torch::from_blob(labels.data, {s, s}, torch::kUInt8).clone();
    return {t, ParsingMap{l}};
}

void write_synthetic_dataset(const fs::path& root, int64_t per_domain, int64_t size, std::uint64_t seed) {
    for (auto domain : {FaceDataset::Domain::Makeup, FaceDataset::Domain::NonMakeup}) {
        const bool makeup = domain == FaceDataset::Domain::Makeup;
        const auto dir = std::string(domain_dir(domain));
        fs::create_directories(root / "images" / dir);
        fs::create_directories(root / "segs" / dir);
        for (int64_t i = 0; i < per_domain; ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "%s_%03lld.png", makeup ? "mk" : "nm", static_cast<long long>(i));
            const auto face = synth_face(size, seed * 1000003ULL + static_cast<std::uint64_t>(i) * 2 + (makeup ? 1 : 0), makeup);
            write_png(face.image, root / "images" / dir / name);
            write_parsing_png(face.parsing, root / "segs" / dir / name);
        }
    }
    std::ofstream mapping(root / "label_mapping.json");
    mapping << "{\"name\": \"synthetic\", \"mapping\": {";
    for (int i = 0; i < label::kCount; ++i) mapping << (i ? ", " : "") << '"' << i << "\": " << i;
    mapping << "}}\n";
}

}  // namespace beautyrec
