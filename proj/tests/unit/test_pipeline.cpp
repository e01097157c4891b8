#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>

#include "../../src/file_util.hpp"
#include "test_util.hpp"
#include "uqvol/error.hpp"
#include "uqvol/pipeline.hpp"

using namespace uqvol;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json tiny_config(const fs::path& out, const std::string& method, int members = 2)
{
    return {{"tag", "tiny"},
            {"volume", "teardrop:6"},
            {"method", method},
            {"topology", {{"hidden_width", 8}, {"n_blocks", 2}}},
            {"train", {{"epochs", 3}, {"batch_size", 64}, {"lr", 1e-4}, {"seed", 4}}},
            {"ensemble", {{"n_members", members}}},
            {"output_dir", out.string()}};
}

Camera tiny_camera()
{
    Camera c;
    c.width = 12;
    c.height = 10;
    return c;
}

TransferFunction transparent_tf()
{
    TransferFunction tf;
    tf.points = {{0.0, {0.2, 0.4, 0.6, 0.0}}, {1.0, {0.9, 0.1, 0.3, 0.0}}};
    return tf;
}

int error_code_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return static_cast<int>(e.code());
    }
    return -1;
}

}  // namespace

TEST_CASE("volume sources parse every accepted form")
{
    CHECK(VolumeSource::from_json("teardrop:12").teardrop_n == 12);
    CHECK(VolumeSource::from_json(json{{"teardrop", 8}}).teardrop_n == 8);
    const auto raw = VolumeSource::from_json(json{{"raw", "data/x.raw"}});
    CHECK_FALSE(raw.teardrop_n);
    CHECK(raw.raw_path.is_absolute());
    CHECK(VolumeSource::from_json("a/b.raw").raw_path.filename() == "b.raw");

    for (const json& bad : {json("teardrop:"), json("teardrop:4x"), json("teardrop:1"), json(3), json::object()}) {
        CHECK(error_code_of([&] { VolumeSource::from_json(bad); }) ==
              static_cast<int>(ErrorCode::InvalidArgument));
    }

    const auto s = VolumeSource::from_json("teardrop:5");
    CHECK(VolumeSource::from_json(s.to_json()).teardrop_n == 5);
    CHECK(s.load().geometry().dims == std::array<int, 3>{5, 5, 5});
}

TEST_CASE("teardrop sources default to the teardrop training dropout")
{
    testutil::TempDir dir("cfg");
    auto j = tiny_config(dir.path(), "mcdropout");
    CHECK(RunConfig::from_json(j).train.train_dropout == doctest::Approx(0.05));
    j["train"]["train_dropout"] = 0.01;
    CHECK(RunConfig::from_json(j).train.train_dropout == doctest::Approx(0.01));

    cmd_gen_data(4, dir / "t.raw");
    j = tiny_config(dir.path(), "mcdropout");
    j["volume"] = (dir / "t.raw").string();
    CHECK(RunConfig::from_json(j).train.train_dropout == doctest::Approx(0.001));
}

TEST_CASE("run config survives a JSON round trip")
{
    testutil::TempDir dir("cfg");
    const auto c = RunConfig::from_json(tiny_config(dir.path(), "ensemble", 3));
    const auto r = RunConfig::from_json(c.to_json());
    CHECK(r.tag == c.tag);
    CHECK(r.method == UqMethod::Ensemble);
    CHECK(r.topology == c.topology);
    CHECK(r.ensemble.n_members == 3);
    CHECK(r.ensemble.base_seed == 4);
    CHECK(r.train.epochs == 3);
    CHECK(r.train.batch_size == 64);
    CHECK(r.output_dir == c.output_dir);
    CHECK(r.volume.teardrop_n == 6);

    CHECK(error_code_of([] { RunConfig::from_json(json{{"tag", "x"}}); }) ==
          static_cast<int>(ErrorCode::InvalidArgument));
    auto bad = tiny_config(dir.path(), "bayes");
    CHECK(error_code_of([&] { RunConfig::from_json(bad); }) != -1);
}

TEST_CASE("train, reconstruct and render a tiny MC dropout run")
{
    testutil::TempDir dir("run");
    const auto config = RunConfig::from_json(tiny_config(dir / "run", "mcdropout"));
    const RunManifest m = cmd_train(config);
    REQUIRE(m.checkpoints.size() == 1);
    CHECK(fs::exists(m.checkpoints[0]));
    CHECK(m.checkpoints[0].filename() == checkpoint_name("tiny", 0));
    CHECK(fs::exists(dir / "run" / "run.json"));

    const auto loaded = RunManifest::load(dir / "run" / "run.json");
    CHECK(loaded.tag == "tiny");
    CHECK(loaded.method == UqMethod::McDropout);
    CHECK(loaded.seeds == m.seeds);
    CHECK_FALSE(loaded.reconstruction);

    ReconstructOptions opts{12, 0.2, 3};
    const auto r = cmd_reconstruct(dir / "run" / "run.json", opts, dir / "run");
    CHECK(std::isfinite(r.metrics.psnr_db));
    CHECK(r.mean_std > 0.0);
    const Volume mean = load_volume(dir / "run" / "mean.raw");
    const Volume sd = load_volume(dir / "run" / "std.raw");
    CHECK(mean.geometry().dims == std::array<int, 3>{6, 6, 6});
    CHECK(sd.value_min() >= 0.0f);

    const auto bytes = detail::read_file(dir / "run" / "reconstruct.json");
    const json metrics = json::parse(bytes.begin(), bytes.end());
    CHECK(metrics.at("realizations") == 12);
    CHECK(metrics.at("psnr_db").get<double>() == doctest::Approx(r.metrics.psnr_db));

    const auto after = RunManifest::load(dir / "run" / "run.json");
    REQUIRE(after.reconstruction);
    CHECK(after.reconstruction->samples == 12);
    CHECK(after.reconstruction->inference_rate == doctest::Approx(0.2));
    CHECK(after.artifacts.count("mean") == 1);
    CHECK(after.artifacts.count("std") == 1);

    RenderOptions ro;
    ro.reconstruct = {5, 0.1, 0};
    const auto out =
        cmd_render(dir / "run" / "run.json", default_transfer_function(), tiny_camera(), ro, dir / "img");
    for (const char* f : {"mean.png", "uncertainty.png", "uncertainty_r.png", "uncertainty_g.png",
                          "uncertainty_b.png", "error.png", "metrics.json"}) {
        CHECK_MESSAGE(fs::exists(dir / "img" / f), f);
    }
    const auto raw_png = detail::read_file(dir / "img" / "mean.png");
    const auto png = decode_png(std::vector<std::uint8_t>(raw_png.begin(), raw_png.end()));
    CHECK(png.width == 12);
    CHECK(png.height == 10);
    CHECK(png.channels == 3);
    REQUIRE(out.metrics);
    const auto mj_bytes = detail::read_file(dir / "img" / "metrics.json");
    const json mj = json::parse(mj_bytes.begin(), mj_bytes.end());
    CHECK(mj.at("scale_mode") == "per-image");
    CHECK(mj.at("scale").get<double>() > 0.0);
    CHECK(mj.contains("psnr_db"));
    CHECK(mj.contains("rmse"));

    SUBCASE("out-of-range inference rate is rejected")
    {
        for (double eta : {0.0, 1.0, -0.1}) {
            CHECK(error_code_of([&] {
                      cmd_reconstruct(dir / "run" / "run.json", {4, eta, 0}, dir / "bad");
                  }) == static_cast<int>(ErrorCode::InvalidArgument));
        }
    }

    SUBCASE("missing checkpoint is a missing artifact")
    {
        fs::remove(m.checkpoints[0]);
        CHECK(error_code_of([&] { LoadedRun::load(dir / "run" / "run.json"); }) ==
              static_cast<int>(ErrorCode::MissingArtifact));
    }

    SUBCASE("corrupt manifest is a format mismatch")
    {
        std::ofstream(dir / "run" / "run.json") << "{\"format_version\": 7}";
        CHECK(error_code_of([&] { RunManifest::load(dir / "run" / "run.json"); }) ==
              static_cast<int>(ErrorCode::FormatMismatch));
    }
}

TEST_CASE("ensemble runs write one checkpoint per member with consecutive seeds")
{
    testutil::TempDir dir("ens");
    const auto config = RunConfig::from_json(tiny_config(dir.path(), "ensemble", 3));
    const RunManifest m = cmd_train(config);
    REQUIRE(m.checkpoints.size() == 3);
    CHECK(m.seeds == std::vector<std::uint64_t>{4, 5, 6});
    for (int i = 0; i < 3; ++i) CHECK(m.checkpoints[i].filename() == checkpoint_name("tiny", i));

    const auto run = LoadedRun::load(dir / "run.json");
    CHECK(realize(run, {}).size() == 3);
    CHECK(realize(run, {2, 0.0, 0}).size() == 2);
    CHECK(error_code_of([&] { realize(run, {4, 0.0, 0}); }) == static_cast<int>(ErrorCode::InvalidArgument));
}

TEST_CASE("no-dropout runs give a single realization with zero spread")
{
    testutil::TempDir dir("none");
    cmd_train(RunConfig::from_json(tiny_config(dir.path(), "none")));
    const auto r = cmd_reconstruct(dir / "run.json", {}, dir.path());
    CHECK(r.mean_std == 0.0);
}

TEST_CASE("replay reproduces checkpoints and volumes byte for byte")
{
    testutil::TempDir dir("replay");
    cmd_train(RunConfig::from_json(tiny_config(dir / "a", "mcdropout")));
    cmd_reconstruct(dir / "a" / "run.json", {6, 0.1, 9}, dir / "a");
    const auto r = cmd_replay(dir / "a" / "run.json", dir / "b");
    CHECK(r.all_identical());
    CHECK(r.identical.count("checkpoint_m0") == 1);
    CHECK(r.identical.count("mean") == 1);
    CHECK(r.identical.count("std") == 1);

    CHECK(error_code_of([&] { cmd_replay(dir / "a" / "run.json", dir / "a"); }) ==
          static_cast<int>(ErrorCode::InvalidArgument));
}

TEST_CASE("fully transparent transfer function renders black with white uncertainty")
{
    const auto ref = testutil::random_volume({5, 5, 5}, 3, 0.0f, 1.0f);
    RealizationStack stack;
    stack.method = UqMethod::Ensemble;
    for (std::uint64_t s = 0; s < 3; ++s) {
        stack.realizations.push_back(testutil::random_volume({5, 5, 5}, 10 + s, 0.0f, 1.0f));
        stack.seeds.push_back(s);
    }
    for (ScaleMode mode : {ScaleMode::PerImage, ScaleMode::Shared}) {
        RenderOptions ro;
        ro.scale_mode = mode;
        const auto out = render_uncertainty(stack, &ref, transparent_tf(), tiny_camera(), ro);
        const auto mean = out.mean_png();
        const auto unc = out.uncertainty_png();
        CHECK(std::all_of(mean.pixels.begin(), mean.pixels.end(), [](auto v) { return v == 0; }));
        CHECK(std::all_of(unc.pixels.begin(), unc.pixels.end(), [](auto v) { return v == 255; }));
        REQUIRE(out.metrics);
        CHECK(std::isinf(out.metrics->psnr_db));
    }
}

TEST_CASE("shared scale mode uses one scale for every map of a render")
{
    const auto ref = testutil::random_volume({6, 6, 6}, 1, 0.0f, 1.0f);
    RealizationStack stack;
    stack.method = UqMethod::Ensemble;
    for (std::uint64_t s = 0; s < 4; ++s) {
        stack.realizations.push_back(testutil::random_volume({6, 6, 6}, 20 + s, 0.0f, 1.0f));
        stack.seeds.push_back(s);
    }
    RenderOptions ro;
    ro.scale_mode = ScaleMode::Shared;
    const auto out = render_uncertainty(stack, &ref, default_transfer_function(), tiny_camera(), ro);
    double hi = out.images.combined_uncertainty.max();
    for (const auto& c : out.images.channel_std) hi = std::max(hi, c.max());
    hi = std::max(hi, out.images.error->max());
    CHECK(out.uncertainty_scale == doctest::Approx(hi));
    CHECK(out.error_scale == out.uncertainty_scale);
    for (double s : out.channel_scales) CHECK(s == out.uncertainty_scale);

    ro.scale = 0.5;
    const auto fixed = render_uncertainty(stack, &ref, default_transfer_function(), tiny_camera(), ro);
    CHECK(fixed.uncertainty_scale == 0.5);
    CHECK(fixed.error_scale == 0.5);
    ro.scale = 0.0;
    CHECK(error_code_of([&] { render_uncertainty(stack, &ref, default_transfer_function(), tiny_camera(), ro); }) ==
          static_cast<int>(ErrorCode::InvalidArgument));
}

TEST_CASE("sweep names round trip")
{
    for (Sweep s : {Sweep::Methods, Sweep::Members, Sweep::McSamples, Sweep::DropoutLayers, Sweep::DropoutProb,
                    Sweep::ImageSpace, Sweep::All}) {
        CHECK(parse_sweep(to_string(s)) == s);
    }
    CHECK(error_code_of([] { parse_sweep("psnr"); }) == static_cast<int>(ErrorCode::InvalidArgument));
}

TEST_CASE("evaluator writes the CSV schema and reuses cached models")
{
    testutil::TempDir dir("eval");
    const json j = {{"tag", "tiny"},
                    {"volume", "teardrop:5"},
                    {"workdir", dir.path().string()},
                    {"topology", {{"hidden_width", 8}, {"n_blocks", 2}}},
                    {"train", {{"epochs", 2}, {"batch_size", 64}, {"seed", 1}}},
                    {"ensemble", {{"n_members", 2}}},
                    {"mc", {{"samples", 6}}},
                    {"camera", {{"width", 8}, {"height", 8}}}};
    std::vector<EvalRow> rows;
    {
        Evaluator ev(EvalConfig::from_json(j));
        rows = ev.run(Sweep::All);
    }
    std::ostringstream csv;
    write_eval_csv(rows, csv);
    std::istringstream in(csv.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "dataset,method,sweep_var,value,psnr_db,rmse,mean_uncertainty");
    int n = 0;
    std::map<std::string, int> per_sweep;
    while (std::getline(in, line)) {
        ++n;
        CHECK(std::count(line.begin(), line.end(), ',') == 6);
        std::istringstream f(line);
        std::string cell[4];
        for (auto& c : cell) std::getline(f, c, ',');
        CHECK(cell[0] == "tiny");
        ++per_sweep[cell[2]];
    }
    CHECK(n == static_cast<int>(rows.size()));
    CHECK(per_sweep["method"] == 3);
    CHECK(per_sweep["members"] == 1);
    CHECK(per_sweep["mc-samples"] == 5);
    CHECK(per_sweep["dropout-layers"] == 3);
    CHECK(per_sweep["dropout-prob"] == 6);
    CHECK(per_sweep["image-space"] == 2);

    const auto before = fs::last_write_time(dir / "model_tiny_nodrop_s1.ckpt");
    Evaluator again(EvalConfig::from_json(j));
    const auto methods = again.run(Sweep::Methods);
    CHECK(fs::last_write_time(dir / "model_tiny_nodrop_s1.ckpt") == before);
    CHECK(methods[0].psnr_db == doctest::Approx(rows[0].psnr_db).epsilon(1e-12));
    CHECK(methods[0].mean_uncertainty == 0.0);
}
