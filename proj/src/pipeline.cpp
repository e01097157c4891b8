#include "uqvol/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include "file_util.hpp"
#include "uqvol/error.hpp"

namespace uqvol {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void say(std::ostream* log, const std::string& line)
{
    if (log) {
        *log << line << '\n' << std::flush;
    }
}

json parse_json_file(const fs::path& path)
{
    const auto bytes = detail::read_file(path);
    try {
        return json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw Error(ErrorCode::FormatMismatch, path.string() + ": " + e.what());
    }
}

void write_json_file(const json& j, const fs::path& path)
{
    detail::write_file(path, j.dump(2) + "\n");
}

fs::path absolute_path(const fs::path& p)
{
    return p.empty() ? p : fs::absolute(p).lexically_normal();
}

TrainConfig train_for_source(const json& j, const VolumeSource& source)
{
    TrainConfig t = j.is_object() ? train_config_from_json(j) : TrainConfig{};
    if (source.teardrop_n && !(j.is_object() && j.contains("train_dropout"))) {
        t.train_dropout = TrainConfig::teardrop_preset().train_dropout;
    }
    return t;
}

[[noreturn]] void rethrow_json(const json::exception& e, const std::string& what)
{
    throw Error(ErrorCode::InvalidArgument, what + ": " + e.what());
}

}  // namespace

// ---------------------------------------------------------------------------
// VolumeSource

Volume VolumeSource::load() const
{
    if (teardrop_n) {
        return generate_teardrop(*teardrop_n);
    }
    if (raw_path.empty()) {
        throw Error(ErrorCode::InvalidArgument, "no volume given");
    }
    return load_volume(raw_path);
}

std::string VolumeSource::describe() const
{
    return teardrop_n ? "teardrop:" + std::to_string(*teardrop_n) : raw_path.string();
}

VolumeSource VolumeSource::from_json(const json& j)
{
    VolumeSource s;
    if (j.is_string()) {
        const auto text = j.get<std::string>();
        if (text.rfind("teardrop:", 0) == 0) {
            int n = 0;
            const auto digits = std::string_view(text).substr(9);
            const auto [end, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), n);
            if (ec != std::errc{} || end != digits.data() + digits.size()) {
                throw Error(ErrorCode::InvalidArgument, "bad teardrop spec '" + text + "'");
            }
            s.teardrop_n = n;
        } else {
            s.raw_path = absolute_path(text);
        }
    } else if (j.is_object() && j.contains("teardrop")) {
        s.teardrop_n = j.at("teardrop").get<int>();
    } else if (j.is_object() && j.contains("raw")) {
        s.raw_path = absolute_path(j.at("raw").get<std::string>());
    } else {
        throw Error(ErrorCode::InvalidArgument, "volume must be a path, \"teardrop:N\" or {\"teardrop\": N}");
    }
    if (s.teardrop_n && *s.teardrop_n < 2) {
        throw Error(ErrorCode::InvalidArgument, "teardrop resolution must be >= 2");
    }
    return s;
}

json VolumeSource::to_json() const
{
    if (teardrop_n) {
        return {{"teardrop", *teardrop_n}};
    }
    return {{"raw", raw_path.string()}};
}

// ---------------------------------------------------------------------------
// RunConfig / manifest

RunConfig RunConfig::from_json(const json& j)
{
    RunConfig c;
    try {
        c.tag = j.value("tag", c.tag);
        c.volume = VolumeSource::from_json(j.at("volume"));
        c.method = parse_uq_method(j.value("method", std::string(to_string(c.method))));
        c.topology = j.contains("topology") ? topology_from_json(j.at("topology")) : FieldTopology{};
        c.train = train_for_source(j.value("train", json::object()), c.volume);
        if (j.contains("ensemble")) {
            c.ensemble.n_members = j.at("ensemble").value("n_members", c.ensemble.n_members);
            c.ensemble.base_seed = j.at("ensemble").value("base_seed", c.train.seed);
        } else {
            c.ensemble.base_seed = c.train.seed;
        }
        c.output_dir = absolute_path(j.value("output_dir", c.output_dir.string()));
    } catch (const json::exception& e) {
        rethrow_json(e, "bad run config");
    }
    if (c.tag.empty()) {
        throw Error(ErrorCode::InvalidArgument, "run tag must not be empty");
    }
    c.ensemble.validate();
    return c;
}

json RunConfig::to_json() const
{
    return {{"tag", tag},
            {"volume", volume.to_json()},
            {"method", uqvol::to_string(method)},
            {"topology", uqvol::to_json(topology)},
            {"train", uqvol::to_json(train)},
            {"ensemble", {{"n_members", ensemble.n_members}, {"base_seed", ensemble.base_seed}}},
            {"output_dir", output_dir.string()}};
}

json ReconstructOptions::to_json() const
{
    return {{"samples", samples}, {"inference_rate", inference_rate}, {"seed", seed}};
}

ReconstructOptions ReconstructOptions::from_json(const json& j)
{
    ReconstructOptions o;
    o.samples = j.value("samples", o.samples);
    o.inference_rate = j.value("inference_rate", o.inference_rate);
    o.seed = j.value("seed", o.seed);
    return o;
}

json RunManifest::to_json() const
{
    json ckpts = json::array();
    for (const auto& p : checkpoints) ckpts.push_back(p.string());
    json arts = json::object();
    for (const auto& [k, v] : artifacts) arts[k] = v.string();
    json j = {{"format_version", 1},
              {"tag", tag},
              {"method", uqvol::to_string(method)},
              {"dataset", config.volume.describe()},
              {"config", config.to_json()},
              {"checkpoints", ckpts},
              {"seeds", seeds},
              {"artifacts", arts}};
    if (reconstruction) {
        j["reconstruction"] = reconstruction->to_json();
    }
    return j;
}

RunManifest RunManifest::load(const fs::path& path)
{
    const json j = parse_json_file(path);
    RunManifest m;
    try {
        if (j.value("format_version", 0) != 1) {
            throw Error(ErrorCode::FormatMismatch, path.string() + ": unsupported manifest version");
        }
        m.tag = j.at("tag").get<std::string>();
        m.method = parse_uq_method(j.at("method").get<std::string>());
        m.config = RunConfig::from_json(j.at("config"));
        for (const auto& p : j.at("checkpoints")) m.checkpoints.emplace_back(p.get<std::string>());
        m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        if (j.contains("reconstruction")) {
            m.reconstruction = ReconstructOptions::from_json(j.at("reconstruction"));
        }
        if (j.contains("artifacts")) {
            for (const auto& [k, v] : j.at("artifacts").items()) {
                m.artifacts[k] = v.get<std::string>();
            }
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::FormatMismatch, path.string() + ": bad manifest: " + e.what());
    }
    return m;
}

void RunManifest::save(const fs::path& path) const
{
    write_json_file(to_json(), path);
}

std::string checkpoint_name(const std::string& tag, int index)
{
    return "model_" + tag + "_m" + std::to_string(index) + ".ckpt";
}

LoadedRun LoadedRun::from_manifest(RunManifest manifest)
{
    if (manifest.checkpoints.empty()) {
        throw Error(ErrorCode::MissingArtifact, "manifest lists no checkpoints");
    }
    Volume reference = manifest.config.volume.load();
    LoadedRun run{std::move(manifest), {}, std::move(reference)};
    for (const auto& p : run.manifest.checkpoints) {
        if (!fs::exists(p)) {
            throw Error(ErrorCode::MissingArtifact, "checkpoint not found: " + p.string());
        }
        run.models.push_back(FieldModel::from_checkpoint(load_checkpoint(p)));
    }
    return run;
}

LoadedRun LoadedRun::load(const fs::path& manifest_path)
{
    return from_manifest(RunManifest::load(manifest_path));
}

RealizationStack realize(const LoadedRun& run, const ReconstructOptions& options)
{
    const auto& geometry = run.reference.geometry();
    switch (run.manifest.method) {
    case UqMethod::McDropout: {
        const int m = options.samples > 0 ? options.samples : 100;
        return reconstruct_mc(run.models.front(), geometry, m, options.inference_rate, options.seed);
    }
    case UqMethod::Ensemble: {
        const int available = static_cast<int>(run.models.size());
        const int m = options.samples > 0 ? options.samples : available;
        if (m > available) {
            throw Error(ErrorCode::InvalidArgument, "requested " + std::to_string(m) +
                                                        " members but the run has " +
                                                        std::to_string(available));
        }
        return reconstruct_ensemble(std::span(run.models).first(static_cast<std::size_t>(m)), geometry);
    }
    case UqMethod::None:
        break;
    }
    RealizationStack stack;
    stack.method = UqMethod::None;
    stack.realizations.push_back(reconstruct(run.models.front(), geometry));
    stack.seeds.push_back(run.manifest.seeds.empty() ? 0 : run.manifest.seeds.front());
    return stack;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_gen_data(int n, const fs::path& raw_path)
{
    save_volume(generate_teardrop(n), raw_path);
}

RunManifest cmd_train(const RunConfig& config, std::ostream* log)
{
    const Volume volume = config.volume.load();
    fs::create_directories(config.output_dir);

    RunManifest manifest;
    manifest.tag = config.tag;
    manifest.method = config.method;
    manifest.config = config;

    auto progress = [&](const std::string& who) {
        return [log, who, epochs = config.train.epochs](int epoch, double loss) {
            if (log && (epoch % 25 == 0 || epoch + 1 == epochs)) {
                std::ostringstream s;
                s << who << " epoch " << epoch + 1 << "/" << epochs << " loss " << loss;
                say(log, s.str());
            }
        };
    };

    std::vector<TrainedModel> models;
    TrainConfig train = config.train;
    if (config.method == UqMethod::Ensemble) {
        say(log, "training " + std::to_string(config.ensemble.n_members) + " ensemble members");
        train.train_dropout = 0.0;
        models = train_ensemble(volume, config.topology, train, config.ensemble, progress("ensemble"));
    } else {
        if (config.method == UqMethod::None) {
            train.train_dropout = 0.0;
        }
        say(log, "training " + std::string(to_string(config.method)) + " model");
        models.push_back(train_single(volume, config.topology, train, progress("model")));
    }

    for (std::size_t i = 0; i < models.size(); ++i) {
        TrainConfig member_config = train;
        member_config.seed = models[i].report.seed;
        const fs::path path = config.output_dir / checkpoint_name(config.tag, static_cast<int>(i));
        save_checkpoint(models[i].to_checkpoint(member_config), path);
        manifest.checkpoints.push_back(path);
        manifest.seeds.push_back(models[i].report.seed);
    }
    manifest.save(config.output_dir / "run.json");
    say(log, "wrote " + (config.output_dir / "run.json").string());
    return manifest;
}

ReconstructResult cmd_reconstruct(const fs::path& manifest_path, const ReconstructOptions& options,
                                  const fs::path& out_dir, std::ostream* log)
{
    LoadedRun run = LoadedRun::load(manifest_path);
    if (run.manifest.method == UqMethod::McDropout &&
        !(options.inference_rate > 0.0 && options.inference_rate < 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "inference rate must lie in (0, 1)");
    }
    say(log, "reconstructing " + run.manifest.tag);
    const RealizationStack stack = realize(run, options);
    const FieldSummary summary = summarize(stack);

    fs::create_directories(out_dir);
    const fs::path mean_path = absolute_path(out_dir / "mean.raw");
    const fs::path std_path = absolute_path(out_dir / "std.raw");
    save_volume(summary.mean_volume(), mean_path);
    save_volume(summary.std_volume(), std_path);

    ReconstructResult result;
    result.metrics = psnr_rmse(run.reference, std::span<const double>(summary.mean));
    double s = 0.0;
    for (double v : summary.stddev) s += v;
    result.mean_std = summary.stddev.empty() ? 0.0 : s / static_cast<double>(summary.stddev.size());

    const json metrics = {{"psnr_db", result.metrics.psnr_db},     {"rmse", result.metrics.rmse},
                          {"mean_std", result.mean_std},           {"realizations", stack.size()},
                          {"method", to_string(run.manifest.method)}, {"reconstruction", options.to_json()}};
    write_json_file(metrics, out_dir / "reconstruct.json");

    run.manifest.reconstruction = options;
    run.manifest.artifacts["mean"] = mean_path;
    run.manifest.artifacts["std"] = std_path;
    run.manifest.save(manifest_path);
    result.manifest = run.manifest;

    std::ostringstream line;
    line << std::setprecision(6) << "psnr " << result.metrics.psnr_db << " dB, rmse "
         << result.metrics.rmse;
    say(log, line.str());
    return result;
}

Image8 RenderOutputs::mean_png() const
{
    return quantize(images.mean);
}

Image8 RenderOutputs::uncertainty_png() const
{
    return to_grayscale(images.combined_uncertainty, uncertainty_scale);
}

Image8 RenderOutputs::channel_png(int channel) const
{
    return to_grayscale(images.channel_std.at(static_cast<std::size_t>(channel)), channel_scales[channel]);
}

std::optional<Image8> RenderOutputs::error_png() const
{
    if (!images.error) {
        return std::nullopt;
    }
    return to_grayscale(*images.error, error_scale);
}

json RenderOutputs::metrics_json(ScaleMode mode) const
{
    json j = {{"scale", uncertainty_scale},
              {"scale_mode", to_string(mode)},
              {"error_scale", error_scale},
              {"mean_uncertainty", images.combined_uncertainty.mean()}};
    if (metrics) {
        j["psnr_db"] = metrics->psnr_db;
        j["rmse"] = metrics->rmse;
    } else {
        j["psnr_db"] = nullptr;
        j["rmse"] = nullptr;
    }
    return j;
}

RenderOutputs render_uncertainty(const RealizationStack& stack, const Volume* reference,
                                 const TransferFunction& tf, const Camera& camera,
                                 const RenderOptions& options)
{
    stack.validate();
    RenderSettings settings;
    settings.step = options.step;
    if (reference) {
        if (reference->geometry().dims != stack.geometry().dims) {
            throw Error(ErrorCode::ShapeMismatch, "reference and realizations differ in dimensions");
        }
        settings.scalar_range = std::array<double, 2>{reference->value_min(), reference->value_max()};
    }

    RenderOutputs out;
    const auto renders = render_stack(stack.realizations, tf, camera, settings);
    out.images = aggregate(renders);
    if (reference && options.with_error) {
        out.ground_truth = raycast(*reference, tf, camera, settings);
        out.images.error = error_map(*out.ground_truth, out.images.mean);
        out.metrics = image_psnr_rmse(*out.ground_truth, out.images.mean);
    }

    if (options.scale) {
        if (!(*options.scale > 0.0)) {
            throw Error(ErrorCode::InvalidArgument, "explicit scale must be positive");
        }
        out.uncertainty_scale = *options.scale;
        out.channel_scales.fill(*options.scale);
        out.error_scale = *options.scale;
    } else if (options.scale_mode == ScaleMode::Shared) {
        std::vector<const GrayImage*> maps{&out.images.combined_uncertainty};
        for (const auto& c : out.images.channel_std) maps.push_back(&c);
        if (out.images.error) maps.push_back(&*out.images.error);
        const double s = shared_scale(maps);
        out.uncertainty_scale = s;
        out.channel_scales.fill(s);
        out.error_scale = s;
    } else {
        out.uncertainty_scale = per_image_scale(out.images.combined_uncertainty);
        for (int c = 0; c < 3; ++c) {
            out.channel_scales[c] = per_image_scale(out.images.channel_std[c]);
        }
        out.error_scale = out.images.error ? per_image_scale(*out.images.error) : 1.0;
    }
    return out;
}

void write_render_outputs(const RenderOutputs& outputs, ScaleMode mode, const fs::path& out_dir)
{
    fs::create_directories(out_dir);
    write_png(outputs.mean_png(), out_dir / "mean.png");
    write_png(outputs.uncertainty_png(), out_dir / "uncertainty.png");
    const char* names[3] = {"uncertainty_r.png", "uncertainty_g.png", "uncertainty_b.png"};
    for (int c = 0; c < 3; ++c) {
        write_png(outputs.channel_png(c), out_dir / names[c]);
    }
    if (const auto e = outputs.error_png()) {
        write_png(*e, out_dir / "error.png");
    }
    write_json_file(outputs.metrics_json(mode), out_dir / "metrics.json");
}

RenderOutputs cmd_render(const fs::path& manifest_path, const TransferFunction& tf,
                         const Camera& camera, const RenderOptions& options, const fs::path& out_dir,
                         std::ostream* log)
{
    camera.validate();
    tf.validate();
    const LoadedRun run = LoadedRun::load(manifest_path);
    say(log, "reconstructing realizations for " + run.manifest.tag);
    const RealizationStack stack = realize(run, options.reconstruct);
    say(log, "rendering " + std::to_string(stack.size()) + " realizations");
    RenderOutputs out = render_uncertainty(stack, &run.reference, tf, camera, options);
    write_render_outputs(out, options.scale_mode, out_dir);
    say(log, "wrote images to " + out_dir.string());
    return out;
}

bool ReplayResult::all_identical() const
{
    return !identical.empty() &&
           std::all_of(identical.begin(), identical.end(), [](const auto& kv) { return kv.second; });
}

namespace {

bool same_bytes(const fs::path& a, const fs::path& b)
{
    if (!fs::exists(a) || !fs::exists(b)) {
        return false;
    }
    return detail::read_file(a) == detail::read_file(b);
}

}  // namespace

ReplayResult cmd_replay(const fs::path& manifest_path, const fs::path& out_dir, std::ostream* log)
{
    const RunManifest original = RunManifest::load(manifest_path);
    RunConfig config = original.config;
    config.output_dir = absolute_path(out_dir);
    if (config.output_dir == absolute_path(original.config.output_dir)) {
        throw Error(ErrorCode::InvalidArgument, "replay output directory must differ from the original run");
    }

    ReplayResult result;
    result.manifest = cmd_train(config, log);
    const fs::path replay_manifest = config.output_dir / "run.json";
    if (original.reconstruction) {
        result.manifest = cmd_reconstruct(replay_manifest, *original.reconstruction, config.output_dir, log)
                              .manifest;
    }

    for (std::size_t i = 0; i < original.checkpoints.size(); ++i) {
        const bool ok = i < result.manifest.checkpoints.size() &&
                        same_bytes(original.checkpoints[i], result.manifest.checkpoints[i]);
        result.identical["checkpoint_m" + std::to_string(i)] = ok;
    }
    for (const auto& [name, path] : original.artifacts) {
        const auto it = result.manifest.artifacts.find(name);
        const bool ok = it != result.manifest.artifacts.end() && same_bytes(path, it->second) &&
                        same_bytes(sidecar_path(path), sidecar_path(it->second));
        result.identical[name] = ok;
    }
    for (const auto& [name, ok] : result.identical) {
        say(log, name + (ok ? ": identical" : ": DIFFERS"));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation harness

EvalConfig EvalConfig::from_json(const json& j)
{
    EvalConfig c;
    try {
        c.tag = j.value("tag", c.tag);
        c.volume = VolumeSource::from_json(j.at("volume"));
        c.workdir = absolute_path(j.value("workdir", c.workdir.string()));
        if (j.contains("topology")) c.topology = topology_from_json(j.at("topology"));
        c.train = train_for_source(j.value("train", json::object()), c.volume);
        c.ensemble.n_members = j.value("ensemble", json::object()).value("n_members", c.ensemble.n_members);
        c.ensemble.base_seed = j.value("ensemble", json::object()).value("base_seed", c.train.seed);
        if (j.contains("mc")) c.mc = ReconstructOptions::from_json(j.at("mc"));
        if (c.mc.samples <= 0) c.mc.samples = 100;
        c.tf = j.contains("tf") ? TransferFunction::from_json(j.at("tf")) : default_transfer_function();
        if (j.contains("camera")) c.camera = Camera::from_json(j.at("camera"));
        c.step = j.value("step", c.step);
    } catch (const json::exception& e) {
        rethrow_json(e, "bad eval config");
    }
    c.ensemble.validate();
    return c;
}

TransferFunction default_transfer_function()
{
    TransferFunction tf;
    tf.points = {{0.0, {0.0, 0.0, 0.0, 0.0}},
                 {0.35, {0.2, 0.3, 0.9, 0.0}},
                 {0.55, {0.3, 0.8, 0.4, 0.35}},
                 {0.75, {0.95, 0.7, 0.2, 0.6}},
                 {1.0, {1.0, 0.2, 0.1, 0.9}}};
    return tf;
}

const char* to_string(Sweep sweep) noexcept
{
    switch (sweep) {
    case Sweep::Methods: return "methods";
    case Sweep::Members: return "members";
    case Sweep::McSamples: return "mc-samples";
    case Sweep::DropoutLayers: return "dropout-layers";
    case Sweep::DropoutProb: return "dropout-prob";
    case Sweep::ImageSpace: return "image-space";
    case Sweep::All: return "all";
    }
    return "?";
}

Sweep parse_sweep(const std::string& name)
{
    for (Sweep s : {Sweep::Methods, Sweep::Members, Sweep::McSamples, Sweep::DropoutLayers,
                    Sweep::DropoutProb, Sweep::ImageSpace, Sweep::All}) {
        if (name == to_string(s)) return s;
    }
    throw Error(ErrorCode::InvalidArgument, "unknown sweep '" + name + "'");
}

Evaluator::Evaluator(EvalConfig config, std::ostream* log)
    : config_(std::move(config)), log_(log), reference_(config_.volume.load())
{
    config_.train.validate();
    fs::create_directories(config_.workdir);
}

FieldModel Evaluator::train_or_load(const std::string& variant, const FieldTopology& topology,
                                    const TrainConfig& train)
{
    const fs::path path = config_.workdir / ("model_" + config_.tag + "_" + variant + ".ckpt");
    const json key = {{"config", to_json(train)},
                      {"topology", to_json(topology)},
                      {"volume", config_.volume.describe()}};
    if (fs::exists(path)) {
        try {
            Checkpoint ck = load_checkpoint(path);
            if (ck.training.value("cache_key", json()) == key && ck.params.topology() == topology) {
                say(log_, "reusing " + path.filename().string());
                return FieldModel::from_checkpoint(ck);
            }
        } catch (const Error&) {
            // stale or corrupt cache entry; retrain below
        }
    }
    say(log_, "training " + variant);
    const auto t0 = std::chrono::steady_clock::now();
    TrainedModel m = train_single(reference_, topology, train);
    Checkpoint ck = m.to_checkpoint(train);
    ck.training["cache_key"] = key;
    save_checkpoint(ck, path);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream s;
    s << "trained " << variant << " in " << std::fixed << std::setprecision(1) << secs << " s";
    say(log_, s.str());
    return FieldModel::from_checkpoint(ck);
}

namespace {

std::string seed_variant(std::uint64_t seed)
{
    return "nodrop_s" + std::to_string(seed);
}

}  // namespace

const FieldModel& Evaluator::single_model()
{
    if (!single_) {
        TrainConfig t = config_.train;
        t.train_dropout = 0.0;
        single_ = train_or_load(seed_variant(t.seed), config_.topology, t);
    }
    return *single_;
}

const FieldModel& Evaluator::mcdropout_model(DropoutPlacement placement)
{
    auto it = mcdropout_.find(placement);
    if (it == mcdropout_.end()) {
        const auto& base = config_.topology;
        const FieldTopology topo =
            FieldTopology::make(base.in_dim, base.hidden_width, base.n_blocks, placement, base.omega0);
        it = mcdropout_
                 .emplace(placement, train_or_load(std::string("mcd_") + to_string(placement), topo, config_.train))
                 .first;
    }
    return it->second;
}

const std::vector<FieldModel>& Evaluator::ensemble_members()
{
    if (!ensemble_) {
        std::vector<FieldModel> members;
        for (int i = 0; i < config_.ensemble.n_members; ++i) {
            TrainConfig t = config_.train;
            t.train_dropout = 0.0;
            t.seed = config_.ensemble.member_seed(i);
            if (t.seed == config_.train.seed && single_) {
                members.push_back(*single_);
                continue;
            }
            members.push_back(train_or_load(seed_variant(t.seed), config_.topology, t));
        }
        ensemble_ = std::move(members);
    }
    return *ensemble_;
}

const RealizationStack& Evaluator::mc_stack(double rate, int samples)
{
    const auto key = std::make_pair(rate, samples);
    auto it = mc_stacks_.find(key);
    if (it == mc_stacks_.end()) {
        const auto& model = mcdropout_model(DropoutPlacement::LastTwo);
        it = mc_stacks_
                 .emplace(key, reconstruct_mc(model, reference_.geometry(), samples, rate, config_.mc.seed))
                 .first;
    }
    return it->second;
}

namespace {

double mean_of(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string format_value(double v)
{
    std::ostringstream s;
    s << v;
    return s.str();
}

}  // namespace

std::vector<EvalRow> Evaluator::run(Sweep sweep)
{
    switch (sweep) {
    case Sweep::Methods: return methods();
    case Sweep::Members: return members();
    case Sweep::McSamples: return mc_samples();
    case Sweep::DropoutLayers: return dropout_layers();
    case Sweep::DropoutProb: return dropout_prob();
    case Sweep::ImageSpace: return image_space();
    case Sweep::All: break;
    }
    std::vector<EvalRow> rows;
    for (Sweep s : {Sweep::Methods, Sweep::Members, Sweep::McSamples, Sweep::DropoutLayers,
                    Sweep::DropoutProb, Sweep::ImageSpace}) {
        auto part = run(s);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    return rows;
}

std::vector<EvalRow> Evaluator::methods()
{
    std::vector<EvalRow> rows;
    auto add = [&](UqMethod method, const FieldSummary& summary) {
        const auto q = psnr_rmse(reference_, std::span<const double>(summary.mean));
        rows.push_back({config_.tag, to_string(method), "method", to_string(method), q.psnr_db, q.rmse,
                        mean_of(summary.stddev)});
    };

    const Volume nodrop = reconstruct(single_model(), reference_.geometry());
    add(UqMethod::None, summarize(std::span(&nodrop, 1)));
    add(UqMethod::McDropout, summarize(mc_stack(config_.mc.inference_rate, config_.mc.samples)));
    add(UqMethod::Ensemble, summarize(reconstruct_ensemble(ensemble_members(), reference_.geometry())));
    return rows;
}

std::vector<EvalRow> Evaluator::members()
{
    const auto stack = reconstruct_ensemble(ensemble_members(), reference_.geometry());
    std::vector<EvalRow> rows;
    for (int k : {2, 5, 7, 10}) {
        if (k > static_cast<int>(stack.size())) break;
        const auto summary = summarize(std::span(stack.realizations).first(static_cast<std::size_t>(k)));
        const auto q = psnr_rmse(reference_, std::span<const double>(summary.mean));
        rows.push_back({config_.tag, "ensemble", "members", std::to_string(k), q.psnr_db, q.rmse,
                        mean_of(summary.stddev)});
    }
    return rows;
}

std::vector<EvalRow> Evaluator::mc_samples()
{
    const auto& stack = mc_stack(config_.mc.inference_rate, 100);
    std::vector<EvalRow> rows;
    for (int k : {10, 25, 50, 75, 100}) {
        const auto summary = summarize(std::span(stack.realizations).first(static_cast<std::size_t>(k)));
        const auto q = psnr_rmse(reference_, std::span<const double>(summary.mean));
        rows.push_back({config_.tag, "mcdropout", "mc-samples", std::to_string(k), q.psnr_db, q.rmse,
                        mean_of(summary.stddev)});
    }
    return rows;
}

std::vector<EvalRow> Evaluator::dropout_layers()
{
    std::vector<EvalRow> rows;
    for (auto placement : {DropoutPlacement::LastTwo, DropoutPlacement::LastHalf, DropoutPlacement::All}) {
        const auto& model = mcdropout_model(placement);
        const auto stack = placement == DropoutPlacement::LastTwo
                               ? mc_stack(config_.mc.inference_rate, config_.mc.samples)
                               : reconstruct_mc(model, reference_.geometry(), config_.mc.samples,
                                                config_.mc.inference_rate, config_.mc.seed);
        const auto summary = summarize(stack);
        const auto q = psnr_rmse(reference_, std::span<const double>(summary.mean));
        rows.push_back({config_.tag, "mcdropout", "dropout-layers", to_string(placement), q.psnr_db, q.rmse,
                        mean_of(summary.stddev)});
    }
    return rows;
}

std::vector<EvalRow> Evaluator::dropout_prob()
{
    std::vector<EvalRow> rows;
    for (double rate : {0.05, 0.1, 0.2, 0.3, 0.4, 0.5}) {
        const auto summary = summarize(mc_stack(rate, config_.mc.samples));
        const auto q = psnr_rmse(reference_, std::span<const double>(summary.mean));
        rows.push_back({config_.tag, "mcdropout", "dropout-prob", format_value(rate), q.psnr_db, q.rmse,
                        mean_of(summary.stddev)});
    }
    return rows;
}

std::vector<EvalRow> Evaluator::image_space()
{
    RenderOptions options;
    options.step = config_.step;
    std::vector<EvalRow> rows;
    auto add = [&](UqMethod method, const RealizationStack& stack) {
        say(log_, std::string("rendering ") + to_string(method) + " realizations");
        const auto out = render_uncertainty(stack, &reference_, config_.tf, config_.camera, options);
        rows.push_back({config_.tag, to_string(method), "image-space", "mean-image", out.metrics->psnr_db,
                        out.metrics->rmse, out.images.combined_uncertainty.mean()});
    };
    add(UqMethod::McDropout, mc_stack(config_.mc.inference_rate, config_.mc.samples));
    add(UqMethod::Ensemble, reconstruct_ensemble(ensemble_members(), reference_.geometry()));
    return rows;
}

void write_eval_csv(const std::vector<EvalRow>& rows, std::ostream& out)
{
    out << "dataset,method,sweep_var,value,psnr_db,rmse,mean_uncertainty\n";
    out << std::setprecision(10);
    for (const auto& r : rows) {
        out << r.dataset << ',' << r.method << ',' << r.sweep_var << ',' << r.value << ',' << r.psnr_db << ','
            << r.rmse << ',';
        if (std::isfinite(r.mean_uncertainty)) out << r.mean_uncertainty;
        out << '\n';
    }
}

}  // namespace uqvol
