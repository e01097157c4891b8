#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uqvol/neural_field.hpp"
#include "uqvol/renderer.hpp"
#include "uqvol/trainer.hpp"
#include "uqvol/uq_field.hpp"
#include "uqvol/uq_imaging.hpp"
#include "uqvol/volume.hpp"

namespace uqvol {

/// Where a run's ground-truth volume comes from: a `.raw` file with
/// sidecar, or the built-in teardrop generator.
struct VolumeSource {
    std::filesystem::path raw_path;
    std::optional<int> teardrop_n;

    Volume load() const;
    std::string describe() const;

    static VolumeSource from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Training run description, read from the CLI config file.
struct RunConfig {
    std::string tag = "teardrop";
    VolumeSource volume;
    UqMethod method = UqMethod::McDropout;
    FieldTopology topology;
    TrainConfig train;
    EnsembleSpec ensemble;
    std::filesystem::path output_dir = "run";

    static RunConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct ReconstructOptions {
    int samples = 0;            // 0 selects 100 (MC) or all members (ensemble)
    double inference_rate = 0.1;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    static ReconstructOptions from_json(const nlohmann::json& j);
};

/// Record of a run: enough to reload its models and to replay it.
struct RunManifest {
    std::string tag;
    UqMethod method = UqMethod::McDropout;
    RunConfig config;
    std::vector<std::filesystem::path> checkpoints;
    std::vector<std::uint64_t> seeds;
    std::optional<ReconstructOptions> reconstruction;
    std::map<std::string, std::filesystem::path> artifacts;

    static RunManifest load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
    nlohmann::json to_json() const;
};

/// Checkpoint file name for member `index` of run `tag`.
std::string checkpoint_name(const std::string& tag, int index);

/// Models of a run, loaded from its checkpoints.
struct LoadedRun {
    RunManifest manifest;
    std::vector<FieldModel> models;
    Volume reference;

    static LoadedRun load(const std::filesystem::path& manifest_path);
    static LoadedRun from_manifest(RunManifest manifest);
};

/// MC passes (mcdropout), the first `samples` members (ensemble), or a
/// single deterministic pass (none).
RealizationStack realize(const LoadedRun& run, const ReconstructOptions& options);

// ---------------------------------------------------------------------------
// Commands. Each writes its artifacts and returns the updated manifest or
// a metrics record; `log` receives progress lines when non-null.

void cmd_gen_data(int n, const std::filesystem::path& raw_path);

RunManifest cmd_train(const RunConfig& config, std::ostream* log = nullptr);

struct ReconstructResult {
    RunManifest manifest;
    QualityMetrics metrics;
    double mean_std = 0.0;
};

ReconstructResult cmd_reconstruct(const std::filesystem::path& manifest_path,
                                  const ReconstructOptions& options,
                                  const std::filesystem::path& out_dir,
                                  std::ostream* log = nullptr);

struct RenderOptions {
    ReconstructOptions reconstruct;
    double step = 0.0;
    ScaleMode scale_mode = ScaleMode::PerImage;
    /// Fixed display scale for every map; overrides `scale_mode`.
    std::optional<double> scale;
    bool with_error = true;
};

struct RenderOutputs {
    UQImageSet images;
    std::optional<RGBImage> ground_truth;
    std::optional<ImageMetrics> metrics;
    double uncertainty_scale = 1.0;
    std::array<double, 3> channel_scales{1.0, 1.0, 1.0};
    double error_scale = 1.0;

    Image8 mean_png() const;
    Image8 uncertainty_png() const;
    Image8 channel_png(int channel) const;
    std::optional<Image8> error_png() const;
    nlohmann::json metrics_json(ScaleMode mode) const;
};

/// Renders every realization, aggregates, and optionally compares against
/// a rendering of the reference volume.
RenderOutputs render_uncertainty(const RealizationStack& stack, const Volume* reference,
                                 const TransferFunction& tf, const Camera& camera,
                                 const RenderOptions& options);

/// Writes mean.png, uncertainty.png, uncertainty_{r,g,b}.png, error.png
/// and metrics.json into `out_dir`.
void write_render_outputs(const RenderOutputs& outputs, ScaleMode mode,
                          const std::filesystem::path& out_dir);

RenderOutputs cmd_render(const std::filesystem::path& manifest_path, const TransferFunction& tf,
                         const Camera& camera, const RenderOptions& options,
                         const std::filesystem::path& out_dir, std::ostream* log = nullptr);

struct ReplayResult {
    RunManifest manifest;
    /// artifact name -> byte-identical to the original
    std::map<std::string, bool> identical;
    bool all_identical() const;
};

/// Re-trains and re-reconstructs from the manifest snapshot into `out_dir`
/// and compares the volume artifacts byte for byte.
ReplayResult cmd_replay(const std::filesystem::path& manifest_path,
                        const std::filesystem::path& out_dir, std::ostream* log = nullptr);

// ---------------------------------------------------------------------------
// Evaluation harness

/// Blue-green-orange ramp with transparent low values.
TransferFunction default_transfer_function();

struct EvalConfig {
    std::string tag = "teardrop";
    VolumeSource volume;
    std::filesystem::path workdir = "eval";
    FieldTopology topology;  // dropout placement overridden per model
    TrainConfig train = TrainConfig::teardrop_preset();
    EnsembleSpec ensemble;
    ReconstructOptions mc{100, 0.1, 0};
    TransferFunction tf;
    Camera camera;
    double step = 0.0;

    static EvalConfig from_json(const nlohmann::json& j);
};

enum class Sweep { Methods, Members, McSamples, DropoutLayers, DropoutProb, ImageSpace, All };

const char* to_string(Sweep sweep) noexcept;
Sweep parse_sweep(const std::string& name);

struct EvalRow {
    std::string dataset;
    std::string method;
    std::string sweep_var;
    std::string value;
    double psnr_db = 0.0;
    double rmse = 0.0;
    /// Mean per-voxel std (volume sweeps) or mean combined pixel
    /// uncertainty (image sweeps); NaN when not applicable.
    double mean_uncertainty = 0.0;
};

/// Trains (or reuses from `workdir`) the models each sweep needs.
class Evaluator {
public:
    explicit Evaluator(EvalConfig config, std::ostream* log = nullptr);

    const Volume& reference() const noexcept { return reference_; }
    const EvalConfig& config() const noexcept { return config_; }

    const FieldModel& single_model();
    const FieldModel& mcdropout_model(DropoutPlacement placement = DropoutPlacement::LastTwo);
    const std::vector<FieldModel>& ensemble_members();

    /// MC stack of the default last-two model at the configured seed.
    const RealizationStack& mc_stack(double rate, int samples);

    std::vector<EvalRow> run(Sweep sweep);

private:
    FieldModel train_or_load(const std::string& variant, const FieldTopology& topology,
                             const TrainConfig& train);

    std::vector<EvalRow> methods();
    std::vector<EvalRow> members();
    std::vector<EvalRow> mc_samples();
    std::vector<EvalRow> dropout_layers();
    std::vector<EvalRow> dropout_prob();
    std::vector<EvalRow> image_space();

    EvalConfig config_;
    std::ostream* log_;
    Volume reference_;
    std::optional<FieldModel> single_;
    std::map<DropoutPlacement, FieldModel> mcdropout_;
    std::optional<std::vector<FieldModel>> ensemble_;
    std::map<std::pair<double, int>, RealizationStack> mc_stacks_;
};

void write_eval_csv(const std::vector<EvalRow>& rows, std::ostream& out);

}  // namespace uqvol
