#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>

#include "beautyrec/checkpoint.hpp"
#include "beautyrec/config.hpp"
#include "beautyrec/generator.hpp"

namespace httplib {
class Server;
}

namespace beautyrec {

/// Inputs of one transfer, as raw encoded bytes.
struct TransferRequest {
    std::string source, reference, source_seg, reference_seg;
    std::optional<std::string> components;  // comma list; absent means all
    bool global_enabled = true;
    bool removal = false;  // swap source and reference roles
};

struct ServiceResponse {
    int status = 200;
    std::string content_type;
    std::string body;
};

/// Read-only generator loaded from a checkpoint, plus what the health endpoint reports.
struct LoadedModel {
    Generator generator{nullptr};
    std::string checkpoint_id;
    std::string model_version;
    int64_t step = 0;
    int64_t image_size = 256;
};

std::shared_ptr<const LoadedModel> load_model(const std::filesystem::path& checkpoint);

/// Runs one request against a model. Shared by the CLI and the HTTP service so both produce
/// identical bytes. Throws DecodeError, LabelError, std::invalid_argument on bad input.
std::string run_transfer(const LoadedModel& model, const TransferRequest& request, int64_t size);

class TransferService {
public:
    explicit TransferService(ServiceConfig config);
    ~TransferService();

    /// Loads (or replaces) the model. In-flight requests finish on the old model first.
    void load_checkpoint(const std::filesystem::path& path);
    bool ready() const;

    ServiceResponse health() const;
    ServiceResponse transfer(const TransferRequest& request) const;

    /// Registers the API routes on `server`.
    void mount(httplib::Server& server);
    /// Blocks serving on host:port until stop(). Returns false if the socket could not be bound.
    bool listen(const std::string& host, int port);
    /// Binds to an ephemeral port and serves on a background thread; returns the port.
    int start_background(const std::string& host);
    void stop();

private:
    ServiceConfig config_;
    mutable std::shared_mutex mutex_;
    std::shared_ptr<const LoadedModel> model_;
    std::unique_ptr<httplib::Server> server_;
    std::unique_ptr<std::thread> thread_;
    mutable std::atomic<std::uint64_t> request_counter_{0};
};

/// "true"/"false", "1"/"0", "yes"/"no", "on"/"off"; anything else is nullopt.
std::optional<bool> parse_flag(std::string_view text);

}  // namespace beautyrec
