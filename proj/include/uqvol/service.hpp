#pragma once

#include <atomic>
#include <filesystem>
#include <json.hpp>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <span>
#include <tuple>
#include <vector>

#include "uqvol/error.hpp"
#include "uqvol/pipeline.hpp"

namespace httplib {
class Server;
}

namespace uqvol {

/// Error carried back to an HTTP client as {"error": message}.
struct HttpError : std::runtime_error {
    int status;
    HttpError(int status_code, const std::string& message)
        : std::runtime_error(message), status(status_code)
    {
    }
};

/// HTTP status for a library error code.
int http_status(ErrorCode code) noexcept;
/// Process exit status for a library error code.
int exit_status(ErrorCode code) noexcept;

std::string base64_encode(std::span<const std::uint8_t> bytes);

/// Registry entry: a run manifest served under `tag`.
struct ModelEntry {
    std::string tag;
    std::filesystem::path manifest;
};

/// Reads {"models": [{"tag": ..., "manifest": ...}, ...]}; relative paths
/// resolve against the registry file's directory.
std::vector<ModelEntry> load_registry(const std::filesystem::path& path);

struct ServiceStats {
    long cache_hits = 0;
    long cache_misses = 0;
    long renders = 0;
};

/// Request handling for the interactive explorer, independent of the
/// transport. Realizations are cached per (model, m, eta, seed).
class RenderService {
public:
    explicit RenderService(std::vector<ModelEntry> entries, std::ostream* log = nullptr);
    ~RenderService();

    /// [{tag, method, dims}]
    nlohmann::json models() const;

    /// Body: {model, tf, camera, m?, eta?, seed?, step?, scale_mode?, scale?}.
    /// Throws HttpError (404 unknown model, 400 bad input, 503 warming).
    nlohmann::json render(const nlohmann::json& request);

    nlohmann::json stats() const;

    /// Loads every model and fills the cache for its default request.
    void warm();

    /// Blocks serving GET /models, POST /render, GET /stats.
    void serve(const std::string& host, int port);
    /// Stops a running serve() from another thread.
    void stop();
    /// Port bound by serve() once listening, 0 before.
    int bound_port() const noexcept { return bound_port_.load(); }

private:
    struct Model {
        ModelEntry entry;
        std::unique_ptr<LoadedRun> run;
    };
    using CacheKey = std::tuple<std::string, int, double, std::uint64_t>;
    struct CacheSlot {
        bool ready = false;
        std::shared_ptr<const RealizationStack> stack;
    };

    const Model& model(const std::string& tag) const;
    std::shared_ptr<const RealizationStack> realizations(const Model& m, ReconstructOptions options,
                                                         bool& hit);

    std::map<std::string, Model> models_;
    std::ostream* log_;

    mutable std::mutex mutex_;
    std::map<CacheKey, CacheSlot> cache_;
    ServiceStats stats_;

    std::atomic<int> bound_port_{0};
    std::mutex server_mutex_;
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace uqvol
