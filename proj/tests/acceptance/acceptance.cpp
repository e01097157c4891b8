// Acceptance runner: one PASS/FAIL line per criterion on stdout, progress
// on stderr. Exits 1 when any criterion fails.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "uqvol/neural_field.hpp"
#include "uqvol/pipeline.hpp"
#include "uqvol/renderer.hpp"
#include "uqvol/service.hpp"
#include "uqvol/trainer.hpp"
#include "uqvol/uq_field.hpp"
#include "uqvol/uq_imaging.hpp"
#include "uqvol/volume.hpp"

// after Eigen: resolv.h defines _res
#include <httplib.h>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace uqvol;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4)
{
    std::ostringstream s;
    s << std::setprecision(digits) << v;
    return s.str();
}

void note(const std::string& msg)
{
    std::cerr << "  " << msg << '\n' << std::flush;
}

std::vector<double> as_double(const Volume& v)
{
    return {v.values().begin(), v.values().end()};
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness()
{
    const auto t0 = Clock::now();
    const FieldTopology t = FieldTopology::make(3, 8, 3, DropoutPlacement::LastTwo, 30.0);
    BasicParameterSet<double> p = init_params(t, 12).cast<double>();
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> ub(-1.0 / 30.0, 1.0 / 30.0);
    for (int l = 0; l < p.layer_count(); ++l)
        for (Eigen::Index i = 0; i < p.bias(l).size(); ++i) p.bias(l)[i] = ub(rng);

    std::uniform_real_distribution<double> uc(-1.0, 1.0);
    CoordMatrix<double> x(3, 6);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = uc(rng);
    RowVector<double> go(6);
    for (Eigen::Index i = 0; i < go.size(); ++i) go[i] = uc(rng);

    ActivationTape<double> tape;
    forward(p, x, DropoutState{}, &tape);
    const auto g = backward(p, tape, go);
    auto loss = [&](const BasicParameterSet<double>& q) { return forward(q, x, DropoutState{}).dot(go); };

    const double eps = 1e-4;
    Eigen::VectorXd fd(p.flat().size());
    for (Eigen::Index i = 0; i < p.flat().size(); ++i) {
        auto plus = p, minus = p;
        plus.flat()[i] += eps;
        minus.flat()[i] -= eps;
        fd[i] = (loss(plus) - loss(minus)) / (2 * eps);
    }
    double worst = 0.0;
    for (int l = 0; l < p.layer_count(); ++l) {
        const auto sh = p.shape(l);
        const std::pair<std::size_t, std::size_t> parts[] = {
            {sh.weight_offset, static_cast<std::size_t>(sh.rows * sh.cols)},
            {sh.bias_offset, static_cast<std::size_t>(sh.rows)}};
        for (const auto& [off, n] : parts) {
            const auto a = g.flat().segment(off, n);
            const auto b = fd.segment(off, n);
            worst = std::max(worst, (a - b).norm() / std::max(a.norm(), 1e-12));
        }
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-4 && secs < 60.0,
            "worst per-tensor relative error " + fmt(worst, 3) + " (< 1e-4), " + fmt(secs, 3) + " s (< 60 s)"};
}

Outcome statistics_oracles()
{
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<float> uf(-3.0f, 5.0f);
    std::vector<Volume> vols;
    GridGeometry g;
    g.dims = {8, 8, 8};
    for (int k = 0; k < 7; ++k) {
        std::vector<float> v(g.voxel_count());
        for (auto& x : v) x = uf(rng);
        vols.emplace_back(g, std::move(v));
    }
    const FieldSummary f = summarize(vols);
    double worst_vol = 0.0;
    for (std::size_t i = 0; i < g.voxel_count(); ++i) {
        double sum = 0.0;
        for (const auto& v : vols) sum += v[i];
        const double mean = sum / 7.0;
        double ss = 0.0;
        for (const auto& v : vols) ss += (v[i] - mean) * (v[i] - mean);
        worst_vol = std::max({worst_vol, std::abs(f.mean[i] - mean), std::abs(f.stddev[i] - std::sqrt(ss / 7.0))});
    }

    std::uniform_real_distribution<double> ud(0.0, 1.0);
    std::vector<RGBImage> images;
    for (int k = 0; k < 7; ++k) {
        RGBImage im(16, 16);
        for (auto& x : im.data()) x = ud(rng);
        images.push_back(std::move(im));
    }
    const UQImageSet set = aggregate(images);
    double worst_img = 0.0;
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            double combined = 0.0;
            for (int c = 0; c < 3; ++c) {
                double sum = 0.0;
                for (const auto& im : images) sum += im.at(x, y, c);
                const double mean = sum / 7.0;
                double ss = 0.0;
                for (const auto& im : images) ss += (im.at(x, y, c) - mean) * (im.at(x, y, c) - mean);
                const double sd = std::sqrt(ss / 7.0);
                combined += sd / 3.0;
                worst_img = std::max({worst_img, std::abs(set.mean.at(x, y, c) - mean),
                                      std::abs(set.channel_std[c].data[y * 16 + x] - sd)});
            }
            worst_img = std::max(worst_img, std::abs(set.combined_uncertainty.data[y * 16 + x] - combined));
        }
    }
    return {worst_vol <= 1e-12 && worst_img <= 1e-12,
            "max deviation volumes " + fmt(worst_vol, 3) + ", images " + fmt(worst_img, 3) + " (<= 1e-12)"};
}

Outcome ray_caster_oracle()
{
    GridGeometry g;
    g.dims = {2, 2, 2};
    const std::array<float, 8> vals{0.1f, 0.95f, 0.4f, 0.3f, 0.0f, 0.7f, 0.55f, 1.0f};
    const Volume v(g, std::vector<float>(vals.begin(), vals.end()));

    TransferFunction tf;
    tf.points = {{0.0, {0.8, 0.2, 0.3, 0.15}}, {1.0, {0.1, 0.9, 0.7, 0.6}}};
    Camera cam;
    cam.eye = {0.5, 0.5, -10.0};
    cam.look_at = {0.5, 0.5, 0.5};
    cam.fov_deg = 1.0;
    cam.width = cam.height = 1;
    RenderSettings rs;
    rs.step = 0.5;
    const RGBImage img = raycast(v, tf, cam, rs);

    // three samples on x = y = 0.5 at z = 0, 0.5, 1
    const double z0 = (double(vals[0]) + vals[2] + vals[4] + vals[6]) / 4.0;
    const double z1 = (double(vals[1]) + vals[3] + vals[5] + vals[7]) / 4.0;
    const double samples[3] = {z0, 0.5 * (z0 + z1), z1};
    double C[3] = {0, 0, 0};
    double A = 0.0;
    for (double s : samples) {
        const double u = s;  // volume range is [0, 1]
        double rgba[4];
        for (int c = 0; c < 4; ++c) rgba[c] = tf.points[0].rgba[c] + u * (tf.points[1].rgba[c] - tf.points[0].rgba[c]);
        const double a = 1.0 - std::pow(1.0 - rgba[3], 0.5);
        for (int c = 0; c < 3; ++c) C[c] += (1.0 - A) * a * rgba[c];
        A += (1.0 - A) * a;
    }
    double worst = 0.0;
    for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(img.at(0, 0, c) - C[c]));

    // alpha zero and opaque on a random volume
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    GridGeometry g2;
    g2.dims = {5, 6, 4};
    std::vector<float> rv(g2.voxel_count());
    for (auto& x : rv) x = u(rng);
    const Volume rvol(g2, std::move(rv));
    Camera wide;
    wide.eye = {2.0, 2.5, -9.0};
    wide.look_at = {2.0, 2.5, 1.5};
    wide.fov_deg = 40.0;
    wide.width = wide.height = 24;

    TransferFunction clear;
    clear.points = {{0.0, {1.0, 0.4, 0.2, 0.0}}, {1.0, {0.3, 1.0, 0.9, 0.0}}};
    const RGBImage blank = raycast(rvol, clear, wide);
    bool background = true;
    for (double c : blank.data()) background = background && c == 0.0;

    const Rgba solid{0.3, 0.6, 0.9, 1.0};
    TransferFunction opaque;
    opaque.points = {{0.0, solid}, {1.0, solid}};
    const RGBImage full = raycast(rvol, opaque, wide);
    bool first_sample = true;
    int hits = 0;
    for (int y = 0; y < wide.height; ++y) {
        for (int x = 0; x < wide.width; ++x) {
            if (full.at(x, y, 0) == 0.0 && full.at(x, y, 1) == 0.0 && full.at(x, y, 2) == 0.0) continue;
            ++hits;
            for (int c = 0; c < 3; ++c) first_sample = first_sample && full.at(x, y, c) == solid[c];
        }
    }
    first_sample = first_sample && hits > 0;
    return {worst < 1e-10 && background && first_sample,
            "3-sample ray error " + fmt(worst, 3) + " (< 1e-10); alpha-zero background " +
                (background ? "exact" : "NOT exact") + "; opaque first-sample " +
                (first_sample ? "exact" : "NOT exact") + " on " + std::to_string(hits) + " pixels"};
}

struct TrainedPsnr {
    double psnr = 0.0;
    double seconds = 0.0;
};

TrainedPsnr train_nodrop(int n, int epochs)
{
    const Volume vol = generate_teardrop(n);
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.train_dropout = 0.0;
    const auto t0 = Clock::now();
    const TrainedModel m = train_single(vol, FieldTopology{}, cfg, [&](int epoch, double loss) {
        if ((epoch + 1) % 50 == 0) note(std::to_string(n) + "^3 epoch " + std::to_string(epoch + 1) + " loss " + fmt(loss));
    });
    const double secs = seconds_since(t0);
    const Volume rec = reconstruct(FieldModel{m.params, m.normalizer}, vol.geometry());
    return {psnr_rmse(vol, as_double(rec)).psnr_db, secs};
}

Outcome desk_scale_training()
{
    note("training 32^3 for 100 epochs");
    const TrainedPsnr smoke = train_nodrop(32, 100);
    note("training 64^3 for 300 epochs");
    const TrainedPsnr full = train_nodrop(64, 300);
    const bool ok = full.psnr > 60.0 && smoke.psnr > 40.0 && smoke.seconds < 1800.0;
    return {ok, "64^3/300 epochs " + fmt(full.psnr, 5) + " dB (> 60) in " + fmt(full.seconds, 4) +
                    " s; 32^3/100 epochs " + fmt(smoke.psnr, 5) + " dB (> 40) in " + fmt(smoke.seconds, 4) +
                    " s (< 1800 s)"};
}

// Shared evaluator for the trend criteria.
struct Trends {
    std::unique_ptr<Evaluator> ev;

    Evaluator& get(const fs::path& workdir, int n)
    {
        if (!ev) {
            EvalConfig c;
            c.tag = "teardrop" + std::to_string(n);
            c.volume.teardrop_n = n;
            c.workdir = workdir;
            c.train = TrainConfig::teardrop_preset();
            c.ensemble.n_members = 10;
            c.ensemble.base_seed = c.train.seed;
            c.mc = {100, 0.1, 0};
            c.tf = default_transfer_function();
            ev = std::make_unique<Evaluator>(c, &std::cerr);
        }
        return *ev;
    }
};

double row_psnr(const std::vector<EvalRow>& rows, const std::string& value)
{
    for (const auto& r : rows)
        if (r.value == value) return r.psnr_db;
    throw std::runtime_error("missing eval row " + value);
}

Outcome method_ordering_trend(Evaluator& ev)
{
    const auto rows = ev.run(Sweep::Methods);
    const double ens = row_psnr(rows, "ensemble");
    const double none = row_psnr(rows, "none");
    const double mcd = row_psnr(rows, "mcdropout");
    return {ens >= none && none >= mcd - 0.5,
            "ensemble " + fmt(ens, 5) + " >= no-dropout " + fmt(none, 5) + " >= mcdropout " + fmt(mcd, 5) +
                " - 0.5 dB"};
}

Outcome mc_samples_trend(Evaluator& ev)
{
    const auto rows = ev.run(Sweep::McSamples);
    std::string detail;
    bool ok = true;
    double prev = -INFINITY;
    for (const char* m : {"10", "25", "50", "100"}) {
        const double p = row_psnr(rows, m);
        ok = ok && p >= prev - 0.2;
        prev = p;
        detail += std::string(detail.empty() ? "" : ", ") + "m=" + m + " " + fmt(p, 6);
    }
    return {ok, detail + " dB (non-decreasing within 0.2 dB per step)"};
}

Outcome inference_rate_trend(Evaluator& ev)
{
    const auto rows = ev.run(Sweep::DropoutProb);
    const double lo = row_psnr(rows, "0.05");
    const double hi = row_psnr(rows, "0.5");
    return {lo - hi >= 1.0, "eta=0.05 " + fmt(lo, 5) + " dB, eta=0.5 " + fmt(hi, 5) + " dB, gap " +
                                fmt(lo - hi, 4) + " dB (>= 1)"};
}

Outcome dropout_layers_trend(Evaluator& ev)
{
    const auto rows = ev.run(Sweep::DropoutLayers);
    const double last_two = row_psnr(rows, "last-two");
    const double all = row_psnr(rows, "all");
    return {all < last_two, "all blocks " + fmt(all, 5) + " dB < last two " + fmt(last_two, 5) + " dB"};
}

std::uintmax_t dir_bytes(const fs::path& dir)
{
    std::uintmax_t total = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) total += e.file_size();
    return total;
}

Outcome model_size(const fs::path& workdir)
{
    const FieldTopology topo;
    const std::size_t params = ParameterSet(topo).size();

    auto train_run = [&](const std::string& method, const fs::path& out) {
        RunConfig c;
        c.tag = method;
        c.volume.teardrop_n = 8;
        c.method = parse_uq_method(method);
        c.train.epochs = 1;
        c.ensemble.n_members = 10;
        c.output_dir = out;
        return cmd_train(c);
    };
    const auto single = train_run("mcdropout", workdir / "size_single");
    const auto ensemble = train_run("ensemble", workdir / "size_ensemble");
    const auto file_bytes = fs::file_size(single.checkpoints.at(0));
    const double ratio = static_cast<double>(dir_bytes(workdir / "size_ensemble")) /
                         static_cast<double>(dir_bytes(workdir / "size_single"));
    const double kb = static_cast<double>(file_bytes) / 1000.0;
    const bool ok = params == 51251 && kb >= 200.0 && kb <= 230.0 && ensemble.checkpoints.size() == 10 &&
                    std::abs(ratio - 10.0) <= 0.5;
    return {ok, std::to_string(params) + " parameters (51251), checkpoint " + fmt(kb, 5) +
                    " KB ([200, 230]), ensemble/single directory ratio " + fmt(ratio, 4) + " (10 +- 0.5)"};
}

Outcome determinism(const fs::path& workdir)
{
    setenv("UQVOL_THREADS", "1", 1);
    RunConfig c;
    c.tag = "det";
    c.volume.teardrop_n = 16;
    c.method = UqMethod::McDropout;
    c.train = TrainConfig::teardrop_preset();
    c.train.epochs = 4;
    c.train.seed = 17;
    c.output_dir = workdir / "det_a";
    cmd_train(c);
    const fs::path manifest = c.output_dir / "run.json";
    cmd_reconstruct(manifest, {20, 0.1, 5}, c.output_dir);
    const ReplayResult replay = cmd_replay(manifest, workdir / "det_b");
    const bool volumes = replay.all_identical() && replay.identical.count("mean") && replay.identical.count("std");

    std::ofstream(workdir / "det_registry.json")
        << json{{"models", {{{"tag", "det"}, {"manifest", manifest.string()}}}}}.dump();
    const json request = {{"model", "det"},
                          {"camera", {{"width", 48}, {"height", 48}}},
                          {"m", 12},
                          {"eta", 0.2},
                          {"seed", 3}};

    RenderService service(load_registry(workdir / "det_registry.json"));
    std::thread server([&] { service.serve("127.0.0.1", 0); });
    for (int i = 0; i < 10000 && service.bound_port() == 0; ++i) {
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    std::vector<std::string> bodies;
    if (service.bound_port() > 0) {
        httplib::Client client("127.0.0.1", service.bound_port());
        client.set_read_timeout(600, 0);
        for (int i = 0; i < 2; ++i) {
            auto res = client.Post("/render", request.dump(), "application/json");
            if (res && res->status == 200) bodies.push_back(res->body);
        }
    }
    service.stop();
    server.join();

    // a fresh service must produce the same images from a cold cache
    RenderService fresh(load_registry(workdir / "det_registry.json"));
    const json cold = fresh.render(request);
    bool renders = bodies.size() == 2;
    if (renders) {
        const json a = json::parse(bodies[0]);
        const json b = json::parse(bodies[1]);
        for (const char* k : {"mean_png_b64", "uncertainty_png_b64", "error_png_b64"}) {
            renders = renders && a.at(k) == b.at(k) && a.at(k) == cold.at(k);
        }
    }
    std::string detail = "replay";
    for (const auto& [name, same] : replay.identical) detail += " " + name + (same ? "=identical" : "=DIFFERS");
    detail += std::string("; /render images ") + (renders ? "byte-identical" : "DIFFER") +
              " across repeated and cold-cache requests";
    return {volumes && renders, detail};
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"uqvol acceptance criteria"};
    std::vector<std::string> only;
    fs::path workdir;
    int trend_n = 32;
    fs::path report;
    app.add_option("--only", only, "Run only the named criteria");
    app.add_option("--workdir", workdir, "Keep models here (reused between runs)");
    app.add_option("--trend-resolution", trend_n, "Teardrop resolution for the trend criteria");
    app.add_option("--report", report, "Also write the PASS/FAIL lines to this file");
    CLI11_PARSE(app, argc, argv);

    bool temporary = false;
    if (workdir.empty()) {
        std::random_device rd;
        workdir = fs::temp_directory_path() / ("uqvol_acceptance_" + std::to_string(rd()));
        temporary = true;
    }
    fs::create_directories(workdir);

    Trends trends;
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient-correctness", gradient_correctness},
        {"statistics-oracles", statistics_oracles},
        {"ray-caster-oracle", ray_caster_oracle},
        {"model-size", [&] { return model_size(workdir); }},
        {"determinism", [&] { return determinism(workdir); }},
        {"desk-scale-training", desk_scale_training},
        {"method-ordering-trend", [&] { return method_ordering_trend(trends.get(workdir, trend_n)); }},
        {"mc-samples-trend", [&] { return mc_samples_trend(trends.get(workdir, trend_n)); }},
        {"inference-rate-trend", [&] { return inference_rate_trend(trends.get(workdir, trend_n)); }},
        {"dropout-layers-trend", [&] { return dropout_layers_trend(trends.get(workdir, trend_n)); }},
    };
    const std::set<std::string> selected(only.begin(), only.end());

    std::ofstream report_file;
    if (!report.empty()) report_file.open(report);
    int failures = 0;
    for (const auto& [name, fn] : criteria) {
        if (!selected.empty() && !selected.count(name)) continue;
        std::cerr << "[" << name << "]\n" << std::flush;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failures;
        const std::string line = std::string(o.pass ? "PASS " : "FAIL ") + name + ": " + o.detail + " [" +
                                 fmt(seconds_since(t0), 4) + " s]";
        std::cout << line << '\n' << std::flush;
        if (report_file) report_file << line << '\n' << std::flush;
    }
    if (temporary) {
        std::error_code ec;
        fs::remove_all(workdir, ec);
    }
    return failures == 0 ? 0 : 1;
}
