#include "beautyrec/service.hpp"

#include <algorithm>
#include <cctype>
#include <mutex>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "beautyrec/errors.hpp"

namespace beautyrec {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ServiceResponse json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

ServiceResponse error_response(int status, const std::string& message) {
    return json_response(status, {{"error", message}});
}

void require_matching_size(const std::string& image, const std::string& seg, const char* which) {
    auto a = image_dimensions(image);
    auto b = image_dimensions(seg);
    if (!a) throw DecodeError(std::string(which) + " image could not be decoded");
    if (!b) throw DecodeError(std::string(which) + "_seg could not be decoded");
    if (*a != *b) {
        throw ShapeError(std::string(which) + " image is " + std::to_string(a->second) + "x" +
                         std::to_string(a->first) + " but its parsing map is " + std::to_string(b->second) + "x" +
                         std::to_string(b->first));
    }
}

}  // namespace

std::optional<bool> parse_flag(std::string_view text) {
    std::string t(text);
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
    if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
    if (t == "false" || t == "0" || t == "no" || t == "off") return false;
    return std::nullopt;
}

std::shared_ptr<const LoadedModel> load_model(const fs::path& checkpoint) {
    CheckpointContents contents;
    auto model = std::make_shared<LoadedModel>();
    model->generator = load_generator(checkpoint, std::nullopt, &contents);
    model->checkpoint_id = contents.id;
    model->model_version = contents.model_version;
    model->step = contents.step;
    if (contents.extra.contains("image_size") && contents.extra["image_size"].is_number_integer()) {
        model->image_size = contents.extra["image_size"].get<int64_t>();
    }
    return model;
}

std::string run_transfer(const LoadedModel& model, const TransferRequest& request, int64_t size) {
    require_matching_size(request.source, request.source_seg, "source");
    require_matching_size(request.reference, request.reference_seg, "reference");
    auto options = TransferOptions::from(model.generator->config());
    if (request.components) options.components = ComponentSet::parse(*request.components);
    options.global_path = request.global_enabled;

    const auto mapping = LabelMapping::identity();
    FaceSample source{decode_image(request.source, size), {}};
    FaceSample reference{decode_image(request.reference, size), {}};
    try {
        source.parsing = decode_parsing(request.source_seg, size, mapping);
    } catch (const LabelError& e) {
        throw LabelError(std::string("source_seg: ") + e.what(), e.offending());
    }
    try {
        reference.parsing = decode_parsing(request.reference_seg, size, mapping);
    } catch (const LabelError& e) {
        throw LabelError(std::string("reference_seg: ") + e.what(), e.offending());
    }
    // The output belongs to whichever face ends up as the source; it is returned at that face's size.
    auto out_dims = *image_dimensions(request.removal ? request.reference : request.source);
    if (request.removal) std::swap(source, reference);

    torch::NoGradGuard no_grad;
    Generator generator = model.generator;  // forward is logically const
    auto out = generator->transfer(source, reference, options);
    if (out.size(1) != out_dims.first || out.size(2) != out_dims.second) {
        namespace F = torch::nn::functional;
        out = F::interpolate(out.unsqueeze(0), F::InterpolateFuncOptions()
                                                   .size(std::vector<int64_t>{out_dims.first, out_dims.second})
                                                   .mode(torch::kBilinear)
                                                   .align_corners(false))
                  .squeeze(0)
                  .clamp(-1, 1);
    }
    return encode_png(out);
}

TransferService::TransferService(ServiceConfig config) : config_(std::move(config)) {}

TransferService::~TransferService() { stop(); }

void TransferService::load_checkpoint(const fs::path& path) {
    auto model = load_model(path);  // outside the lock; requests keep flowing meanwhile
    std::unique_lock lock(mutex_);
    model_ = std::move(model);
}

bool TransferService::ready() const {
    std::shared_lock lock(mutex_);
    return model_ != nullptr;
}

ServiceResponse TransferService::health() const {
    std::shared_lock lock(mutex_);
    if (!model_) return json_response(503, {{"status", "unavailable"}, {"error", "no checkpoint loaded"}});
    return json_response(200, {{"status", "ok"},
                               {"checkpoint_id", model_->checkpoint_id},
                               {"model_version", model_->model_version},
                               {"step", model_->step},
                               {"image_size", model_->image_size}});
}

ServiceResponse TransferService::transfer(const TransferRequest& request) const {
    // Holding the shared lock for the whole request is what lets a swap wait for in-flight work.
    std::shared_lock lock(mutex_);
    if (!model_) return error_response(503, "no checkpoint loaded");
    for (const auto* field : {&request.source, &request.reference, &request.source_seg, &request.reference_seg}) {
        if (field->size() > config_.max_image_bytes) {
            return error_response(413, "image exceeds " + std::to_string(config_.max_image_bytes) + " bytes");
        }
    }
    try {
        return {200, "image/png", run_transfer(*model_, request, model_->image_size)};
    } catch (const LabelError& e) {
        json body{{"error", e.what()}, {"offending_labels", e.offending()}};
        return json_response(422, body);
    } catch (const DecodeError& e) {
        return error_response(400, e.what());
    } catch (const std::invalid_argument& e) {
        return error_response(400, e.what());
    }
}

void TransferService::mount(httplib::Server& server) {
    server.set_payload_max_length(4 * config_.max_image_bytes + (1U << 16));
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type, X-Request-Id"},
                                {"Access-Control-Expose-Headers", "X-Request-Id"}});

    auto request_id = [this](const httplib::Request& req) {
        auto id = req.get_header_value("X-Request-Id");
        if (id.empty()) id = "req-" + std::to_string(++request_counter_);
        return id;
    };
    auto send = [](httplib::Response& res, const ServiceResponse& r) {
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };

    server.Get("/api/v1/health", [=, this](const httplib::Request& req, httplib::Response& res) {
        res.set_header("X-Request-Id", request_id(req));
        send(res, health());
    });

    server.Options("/api/v1/transfer", [=](const httplib::Request& req, httplib::Response& res) {
        res.set_header("X-Request-Id", request_id(req));
        res.set_header("Access-Control-Allow-Methods", "POST, OPTIONS");
        res.status = 204;
    });

    server.Post("/api/v1/transfer", [=, this](const httplib::Request& req, httplib::Response& res) {
        res.set_header("X-Request-Id", request_id(req));
        if (!req.is_multipart_form_data()) return send(res, error_response(400, "expected multipart/form-data"));
        TransferRequest t;
        for (auto [key, dst] : {std::pair{"source", &t.source}, std::pair{"reference", &t.reference},
                                std::pair{"source_seg", &t.source_seg}, std::pair{"reference_seg", &t.reference_seg}}) {
            if (!req.has_file(key)) return send(res, error_response(400, std::string("missing field ") + key));
            *dst = req.get_file_value(key).content;
        }
        if (req.has_file("components")) t.components = req.get_file_value("components").content;
        for (auto [key, dst] : {std::pair{"global", &t.global_enabled}, std::pair{"removal", &t.removal}}) {
            if (!req.has_file(key)) continue;
            auto flag = parse_flag(req.get_file_value(key).content);
            if (!flag) return send(res, error_response(400, std::string("field ") + key + " must be a boolean"));
            *dst = *flag;
        }
        send(res, transfer(t));
    });
}

bool TransferService::listen(const std::string& host, int port) {
    server_ = std::make_unique<httplib::Server>();
    server_->new_task_queue = [n = config_.threads] { return new httplib::ThreadPool(static_cast<std::size_t>(n)); };
    mount(*server_);
    return server_->listen(host, port);
}

int TransferService::start_background(const std::string& host) {
    server_ = std::make_unique<httplib::Server>();
    server_->new_task_queue = [n = config_.threads] { return new httplib::ThreadPool(static_cast<std::size_t>(n)); };
    mount(*server_);
    const int port = server_->bind_to_any_port(host);
    if (port < 0) throw std::runtime_error("could not bind " + host);
    thread_ = std::make_unique<std::thread>([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port;
}

void TransferService::stop() {
    if (server_) server_->stop();
    if (thread_ && thread_->joinable()) thread_->join();
    thread_.reset();
}

}  // namespace beautyrec
