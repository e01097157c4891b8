#include "uqvol/service.hpp"

#include <httplib.h>

#include <chrono>
#include <ostream>

#include "file_util.hpp"

namespace uqvol {

namespace fs = std::filesystem;
using nlohmann::json;

int http_status(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::MissingArtifact: return 404;
    case ErrorCode::Io:
    case ErrorCode::Divergence: return 500;
    default: return 400;
    }
}

int exit_status(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::DegenerateCamera: return 2;
    case ErrorCode::Io:
    case ErrorCode::MissingArtifact: return 3;
    case ErrorCode::FormatMismatch:
    case ErrorCode::SizeMismatch:
    case ErrorCode::ShapeMismatch: return 4;
    case ErrorCode::NonFiniteValue:
    case ErrorCode::DegenerateRange: return 5;
    case ErrorCode::Divergence: return 6;
    }
    return 1;
}

std::string base64_encode(std::span<const std::uint8_t> bytes)
{
    static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += kAlphabet[v & 63];
    }
    if (const std::size_t rest = bytes.size() - i; rest > 0) {
        std::uint32_t v = bytes[i] << 16;
        if (rest == 2) v |= bytes[i + 1] << 8;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

std::vector<ModelEntry> load_registry(const fs::path& path)
{
    const auto bytes = detail::read_file(path);
    std::vector<ModelEntry> entries;
    try {
        const json j = json::parse(bytes.begin(), bytes.end());
        for (const auto& m : j.at("models")) {
            fs::path manifest = m.at("manifest").get<std::string>();
            if (manifest.is_relative()) {
                manifest = fs::absolute(path).parent_path() / manifest;
            }
            entries.push_back({m.at("tag").get<std::string>(), manifest.lexically_normal()});
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::FormatMismatch, path.string() + ": bad registry: " + e.what());
    }
    return entries;
}

RenderService::RenderService(std::vector<ModelEntry> entries, std::ostream* log) : log_(log)
{
    for (auto& e : entries) {
        if (models_.count(e.tag)) {
            throw Error(ErrorCode::InvalidArgument, "duplicate model tag '" + e.tag + "'");
        }
        Model m{e, std::make_unique<LoadedRun>(LoadedRun::load(e.manifest))};
        models_.emplace(e.tag, std::move(m));
    }
}

RenderService::~RenderService() = default;

json RenderService::models() const
{
    json out = json::array();
    for (const auto& [tag, m] : models_) {
        const auto& dims = m.run->reference.geometry().dims;
        out.push_back({{"tag", tag},
                       {"method", to_string(m.run->manifest.method)},
                       {"dims", {dims[0], dims[1], dims[2]}},
                       {"members", m.run->models.size()}});
    }
    return out;
}

const RenderService::Model& RenderService::model(const std::string& tag) const
{
    const auto it = models_.find(tag);
    if (it == models_.end()) {
        throw HttpError(404, "unknown model '" + tag + "'");
    }
    return it->second;
}

std::shared_ptr<const RealizationStack> RenderService::realizations(const Model& m,
                                                                    ReconstructOptions options,
                                                                    bool& hit)
{
    if (options.samples == 0) {
        switch (m.run->manifest.method) {
        case UqMethod::McDropout: options.samples = 100; break;
        case UqMethod::Ensemble: options.samples = static_cast<int>(m.run->models.size()); break;
        case UqMethod::None: options.samples = 1; break;
        }
    }
    const CacheKey key{m.entry.tag, options.samples, options.inference_rate, options.seed};
    {
        std::lock_guard lock(mutex_);
        auto it = cache_.find(key);
        if (it != cache_.end()) {
            if (!it->second.ready) {
                throw HttpError(503, "realizations for '" + m.entry.tag + "' are still being computed");
            }
            ++stats_.cache_hits;
            hit = true;
            return it->second.stack;
        }
        cache_.emplace(key, CacheSlot{});
        ++stats_.cache_misses;
    }
    hit = false;
    try {
        auto stack = std::make_shared<const RealizationStack>(realize(*m.run, options));
        std::lock_guard lock(mutex_);
        cache_[key] = CacheSlot{true, stack};
        return stack;
    } catch (...) {
        std::lock_guard lock(mutex_);
        cache_.erase(key);
        throw;
    }
}

json RenderService::render(const json& request)
{
    const auto t0 = std::chrono::steady_clock::now();
    if (!request.is_object() || !request.contains("model")) {
        throw HttpError(400, "request must be an object with a 'model' field");
    }
    const Model& m = model(request.at("model").get<std::string>());

    TransferFunction tf;
    Camera camera;
    RenderOptions options;
    try {
        tf = request.contains("tf") ? TransferFunction::from_json(request.at("tf")) : default_transfer_function();
        camera = request.contains("camera") ? Camera::from_json(request.at("camera")) : Camera{};
        options.reconstruct.samples = request.value("m", 0);
        options.reconstruct.inference_rate = request.value("eta", 0.1);
        options.reconstruct.seed = request.value("seed", std::uint64_t{0});
        options.step = request.value("step", 0.0);
        options.scale_mode = parse_scale_mode(request.value("scale_mode", std::string("per-image")));
        if (request.contains("scale")) options.scale = request.at("scale").get<double>();
    } catch (const json::exception& e) {
        throw HttpError(400, std::string("bad request: ") + e.what());
    } catch (const Error& e) {
        throw HttpError(400, e.what());
    }
    if (m.run->manifest.method == UqMethod::McDropout &&
        !(options.reconstruct.inference_rate > 0.0 && options.reconstruct.inference_rate < 1.0)) {
        throw HttpError(400, "eta must lie in (0, 1)");
    }
    if (options.reconstruct.samples < 0 || options.reconstruct.samples > 1000) {
        throw HttpError(400, "m must lie in [0, 1000]");
    }
    if (m.run->manifest.method != UqMethod::McDropout) {
        options.reconstruct.inference_rate = 0.0;
        options.reconstruct.seed = 0;
    }

    bool hit = false;
    std::shared_ptr<const RealizationStack> stack;
    try {
        stack = realizations(m, options.reconstruct, hit);
    } catch (const Error& e) {
        throw HttpError(http_status(e.code()), e.what());
    }
    RenderOutputs out;
    try {
        out = render_uncertainty(*stack, &m.run->reference, tf, camera, options);
    } catch (const Error& e) {
        throw HttpError(http_status(e.code()), e.what());
    }
    {
        std::lock_guard lock(mutex_);
        ++stats_.renders;
    }

    json response = out.metrics_json(options.scale_mode);
    response["mean_png_b64"] = base64_encode(encode_png(out.mean_png()));
    response["uncertainty_png_b64"] = base64_encode(encode_png(out.uncertainty_png()));
    if (const auto e = out.error_png()) {
        response["error_png_b64"] = base64_encode(encode_png(*e));
    }
    response["realizations"] = stack->size();
    response["cache_hit"] = hit;
    response["render_ms"] =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return response;
}

json RenderService::stats() const
{
    std::lock_guard lock(mutex_);
    long ready = 0;
    for (const auto& [k, slot] : cache_) ready += slot.ready ? 1 : 0;
    return {{"cache_hits", stats_.cache_hits},
            {"cache_misses", stats_.cache_misses},
            {"renders", stats_.renders},
            {"cached_stacks", ready},
            {"models", models_.size()}};
}

void RenderService::warm()
{
    for (const auto& [tag, m] : models_) {
        bool hit = false;
        ReconstructOptions defaults;
        if (m.run->manifest.method != UqMethod::McDropout) {
            defaults.inference_rate = 0.0;
        }
        realizations(m, defaults, hit);
        if (log_) *log_ << "warmed " << tag << '\n' << std::flush;
    }
}

namespace {

void send_json(httplib::Response& res, int status, const json& body)
{
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

}  // namespace

void RenderService::serve(const std::string& host, int port)
{
    {
        std::lock_guard lock(server_mutex_);
        server_ = std::make_unique<httplib::Server>();
    }
    httplib::Server& server = *server_;

    server.Get("/models", [this](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, models());
    });
    server.Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, stats());
    });
    server.Post("/render", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            json body;
            try {
                body = json::parse(req.body);
            } catch (const json::exception& e) {
                throw HttpError(400, std::string("body is not JSON: ") + e.what());
            }
            send_json(res, 200, render(body));
        } catch (const HttpError& e) {
            if (e.status == 503) res.set_header("Retry-After", "1");
            send_json(res, e.status, {{"error", e.what()}});
        } catch (const std::exception& e) {
            send_json(res, 500, {{"error", e.what()}});
        }
    });

    const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) {
        throw Error(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
    }
    bound_port_ = bound;
    if (log_) *log_ << "listening on " << host << ":" << bound << '\n' << std::flush;
    server.listen_after_bind();
    bound_port_ = 0;
}

void RenderService::stop()
{
    std::lock_guard lock(server_mutex_);
    if (server_) server_->stop();
}

}  // namespace uqvol
