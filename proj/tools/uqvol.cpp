// uqvol: train neural scalar fields, reconstruct with uncertainty, render,
// evaluate and serve.

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>

#include "../src/file_util.hpp"
#include "uqvol/pipeline.hpp"
#include "uqvol/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path)
{
    const auto bytes = uqvol::detail::read_file(path);
    try {
        return json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw uqvol::Error(uqvol::ErrorCode::FormatMismatch, path.string() + ": " + e.what());
    }
}

uqvol::RenderService* g_service = nullptr;

void on_signal(int)
{
    if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Neural scalar fields with uncertainty"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Suppress progress output");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Write the synthetic teardrop volume");
    int teardrop_n = 64;
    fs::path gen_out = "teardrop.raw";
    gen->add_option("--teardrop", teardrop_n, "Grid resolution per axis")->check(CLI::Range(2, 1024));
    gen->add_option("-o,--out", gen_out, "Output .raw path (sidecar written alongside)");

    // train
    auto* train = app.add_subcommand("train", "Train a model or ensemble from a JSON config");
    fs::path train_config;
    std::optional<int> epochs_override;
    train->add_option("-c,--config", train_config, "Run config JSON")->required()->check(CLI::ExistingFile);
    train->add_option("--epochs", epochs_override, "Override the configured epoch count");

    // shared reconstruction options
    uqvol::ReconstructOptions recon;
    auto add_recon = [&](CLI::App* cmd) {
        cmd->add_option("-m,--samples", recon.samples, "MC passes or members (0 = method default)");
        cmd->add_option("--eta", recon.inference_rate, "MC dropout inference rate");
        cmd->add_option("--seed", recon.seed, "MC seed");
    };

    auto* reconstruct = app.add_subcommand("reconstruct", "Write mean and std volumes");
    fs::path manifest_path;
    fs::path out_dir = "out";
    reconstruct->add_option("--manifest", manifest_path, "run.json")->required()->check(CLI::ExistingFile);
    reconstruct->add_option("-o,--out", out_dir, "Output directory");
    add_recon(reconstruct);

    // render
    auto* render = app.add_subcommand("render", "Render mean, uncertainty and error images");
    fs::path tf_path;
    fs::path camera_path;
    double step = 0.0;
    std::string scale_mode = "per-image";
    std::optional<double> fixed_scale;
    render->add_option("--manifest", manifest_path, "run.json")->required()->check(CLI::ExistingFile);
    render->add_option("--tf", tf_path, "Transfer function JSON")->check(CLI::ExistingFile);
    render->add_option("--camera", camera_path, "Camera JSON")->check(CLI::ExistingFile);
    render->add_option("--step", step, "Sample spacing (0 = half the minimum voxel spacing)");
    render->add_option("--scale-mode", scale_mode, "per-image or shared");
    render->add_option("--scale", fixed_scale, "Fixed grayscale scale for all maps");
    render->add_option("-o,--out", out_dir, "Output directory");
    add_recon(render);

    // eval
    auto* eval = app.add_subcommand("eval", "Run evaluation sweeps and write CSV");
    fs::path eval_config;
    std::string sweep = "all";
    fs::path csv_out = "results.csv";
    eval->add_option("-c,--config", eval_config, "Eval config JSON")->required()->check(CLI::ExistingFile);
    eval->add_option("--sweep", sweep,
                     "methods, members, mc-samples, dropout-layers, dropout-prob, image-space or all");
    eval->add_option("-o,--out", csv_out, "CSV path");

    // replay
    auto* replay = app.add_subcommand("replay", "Re-run a manifest and compare artifacts");
    replay->add_option("--manifest", manifest_path, "run.json")->required()->check(CLI::ExistingFile);
    replay->add_option("-o,--out", out_dir, "Output directory for the replayed run")->required();

    // serve
    auto* serve = app.add_subcommand("serve", "Serve the render API");
    fs::path registry_path;
    std::string host = "127.0.0.1";
    int port = 8080;
    bool warm = false;
    serve->add_option("--registry", registry_path, "Model registry JSON")->required()->check(CLI::ExistingFile);
    serve->add_option("--host", host);
    serve->add_option("--port", port)->check(CLI::Range(0, 65535));
    serve->add_flag("--warm", warm, "Compute default realizations before listening");

    CLI11_PARSE(app, argc, argv);
    std::ostream* log = quiet ? nullptr : &std::cerr;

    try {
        if (*gen) {
            uqvol::cmd_gen_data(teardrop_n, gen_out);
            if (log) *log << "wrote " << gen_out.string() << '\n';
        } else if (*train) {
            auto config = uqvol::RunConfig::from_json(read_json(train_config));
            if (epochs_override) {
                config.train.epochs = *epochs_override;
                config.train.validate();
            }
            uqvol::cmd_train(config, log);
        } else if (*reconstruct) {
            const auto r = uqvol::cmd_reconstruct(manifest_path, recon, out_dir, log);
            std::cout << json{{"psnr_db", r.metrics.psnr_db}, {"rmse", r.metrics.rmse}, {"mean_std", r.mean_std}}
                             .dump()
                      << '\n';
        } else if (*render) {
            const auto tf = tf_path.empty() ? uqvol::default_transfer_function()
                                            : uqvol::TransferFunction::from_json(read_json(tf_path));
            const auto camera = camera_path.empty() ? uqvol::Camera{} : uqvol::Camera::from_json(read_json(camera_path));
            uqvol::RenderOptions options;
            options.reconstruct = recon;
            options.step = step;
            options.scale_mode = uqvol::parse_scale_mode(scale_mode);
            options.scale = fixed_scale;
            const auto out = uqvol::cmd_render(manifest_path, tf, camera, options, out_dir, log);
            std::cout << out.metrics_json(options.scale_mode).dump() << '\n';
        } else if (*eval) {
            uqvol::Evaluator evaluator(uqvol::EvalConfig::from_json(read_json(eval_config)), log);
            const auto rows = evaluator.run(uqvol::parse_sweep(sweep));
            std::ofstream csv(csv_out);
            if (!csv) {
                throw uqvol::Error(uqvol::ErrorCode::Io, "cannot write " + csv_out.string());
            }
            uqvol::write_eval_csv(rows, csv);
            if (log) *log << "wrote " << rows.size() << " rows to " << csv_out.string() << '\n';
        } else if (*replay) {
            const auto r = uqvol::cmd_replay(manifest_path, out_dir, log);
            std::cout << (r.all_identical() ? "identical" : "differs") << '\n';
            return r.all_identical() ? 0 : 7;
        } else if (*serve) {
            uqvol::RenderService service(uqvol::load_registry(registry_path), log);
            if (warm) service.warm();
            g_service = &service;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            service.serve(host, port);
            g_service = nullptr;
        }
    } catch (const uqvol::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return uqvol::exit_status(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
