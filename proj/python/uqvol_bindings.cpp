#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "uqvol/pipeline.hpp"
#include "uqvol/service.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using nlohmann::json;
using namespace uqvol;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::array_t<float> volume_to_array(const Volume& v)
{
    const auto& d = v.dims();
    py::array_t<float> out({d[0], d[1], d[2]});
    std::copy(v.values().begin(), v.values().end(), out.mutable_data());
    return out;
}

Volume array_to_volume(const FloatArray& a, std::array<double, 3> spacing = {1.0, 1.0, 1.0})
{
    if (a.ndim() != 3) {
        throw Error(ErrorCode::ShapeMismatch, "volume array must be 3-D");
    }
    GridGeometry g;
    g.dims = {static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))};
    g.spacing = spacing;
    return Volume(g, std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<double> rgb_to_array(const RGBImage& im)
{
    py::array_t<double> out({im.height(), im.width(), 3});
    std::copy(im.data().begin(), im.data().end(), out.mutable_data());
    return out;
}

py::array_t<double> gray_to_array(const GrayImage& im)
{
    py::array_t<double> out({im.height, im.width});
    std::copy(im.data.begin(), im.data.end(), out.mutable_data());
    return out;
}

json parse(const std::string& text)
{
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("bad JSON: ") + e.what());
    }
}

TransferFunction tf_or_default(const std::string& text)
{
    return text.empty() ? default_transfer_function() : TransferFunction::from_json(parse(text));
}

Camera camera_or_default(const std::string& text)
{
    return text.empty() ? Camera{} : Camera::from_json(parse(text));
}

py::dict outputs_to_dict(const RenderOutputs& out, ScaleMode mode)
{
    py::dict d;
    d["metrics"] = out.metrics_json(mode).dump();
    d["mean"] = rgb_to_array(out.images.mean);
    d["uncertainty"] = gray_to_array(out.images.combined_uncertainty);
    py::list channels;
    for (const auto& c : out.images.channel_std) channels.append(gray_to_array(c));
    d["channel_std"] = channels;
    if (out.images.error) d["error"] = gray_to_array(*out.images.error);
    if (out.ground_truth) d["ground_truth"] = rgb_to_array(*out.ground_truth);
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Neural scalar fields with uncertainty";

    static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
    static py::exception<HttpError> http_error(m, "HttpError", error.ptr());
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const HttpError& e) {
            py::object exc = py::handle(http_error.ptr())(e.what());
            exc.attr("status") = e.status;
            PyErr_SetObject(http_error.ptr(), exc.ptr());
        } catch (const Error& e) {
            py::object exc = py::handle(error.ptr())(e.what());
            exc.attr("code") = to_string(e.code());
            PyErr_SetObject(error.ptr(), exc.ptr());
        }
    });

    m.def("generate_teardrop", [](int n) { return volume_to_array(generate_teardrop(n)); }, py::arg("n"));

    m.def(
        "load_volume",
        [](const fs::path& path) {
            const Volume v = load_volume(path);
            return py::make_tuple(volume_to_array(v), v.geometry().spacing);
        },
        py::arg("path"), "Returns (array, spacing) from a .raw file and its sidecar.");

    m.def(
        "save_volume",
        [](const FloatArray& a, const fs::path& path, std::array<double, 3> spacing) {
            save_volume(array_to_volume(a, spacing), path);
        },
        py::arg("array"), py::arg("path"), py::arg("spacing") = std::array<double, 3>{1.0, 1.0, 1.0});

    m.def(
        "summarize",
        [](const FloatArray& stack) {
            if (stack.ndim() != 4) {
                throw Error(ErrorCode::ShapeMismatch, "stack must be (m, nx, ny, nz)");
            }
            const auto per = static_cast<std::size_t>(stack.shape(1) * stack.shape(2) * stack.shape(3));
            GridGeometry g;
            g.dims = {static_cast<int>(stack.shape(1)), static_cast<int>(stack.shape(2)),
                      static_cast<int>(stack.shape(3))};
            std::vector<Volume> vols;
            for (py::ssize_t k = 0; k < stack.shape(0); ++k) {
                const float* p = stack.data() + k * per;
                vols.emplace_back(g, std::vector<float>(p, p + per));
            }
            const FieldSummary f = summarize(vols);
            py::array_t<double> mean({g.dims[0], g.dims[1], g.dims[2]});
            py::array_t<double> sd({g.dims[0], g.dims[1], g.dims[2]});
            std::copy(f.mean.begin(), f.mean.end(), mean.mutable_data());
            std::copy(f.stddev.begin(), f.stddev.end(), sd.mutable_data());
            return py::make_tuple(mean, sd);
        },
        py::arg("stack"), "Per-voxel mean and population std of an (m, nx, ny, nz) stack.");

    m.def(
        "psnr_rmse",
        [](const FloatArray& reference, const py::array_t<double, py::array::c_style | py::array::forcecast>& cand) {
            const Volume ref = array_to_volume(reference);
            if (static_cast<std::size_t>(cand.size()) != ref.size()) {
                throw Error(ErrorCode::SizeMismatch, "candidate size differs from reference");
            }
            const auto q = psnr_rmse(ref, std::span<const double>(cand.data(), cand.size()));
            return py::make_tuple(q.psnr_db, q.rmse);
        },
        py::arg("reference"), py::arg("candidate"));

    m.def(
        "raycast",
        [](const FloatArray& volume, const std::string& tf, const std::string& camera, double step) {
            const Volume v = array_to_volume(volume);
            RenderSettings rs;
            rs.step = step;
            return rgb_to_array(raycast(v, tf_or_default(tf), camera_or_default(camera), rs));
        },
        py::arg("volume"), py::arg("tf") = "", py::arg("camera") = "", py::arg("step") = 0.0);

    m.def("default_transfer_function", [] { return default_transfer_function().to_json().dump(); });

    m.def(
        "train",
        [](const std::string& config) {
            const RunConfig c = RunConfig::from_json(parse(config));
            py::gil_scoped_release release;
            return cmd_train(c).to_json().dump();
        },
        py::arg("config"), "Trains from a run config (JSON) and returns the manifest JSON.");

    m.def(
        "reconstruct",
        [](const fs::path& manifest, int samples, double eta, std::uint64_t seed, const fs::path& out_dir) {
            py::gil_scoped_release release;
            const auto r = cmd_reconstruct(manifest, {samples, eta, seed}, out_dir);
            return json{{"psnr_db", r.metrics.psnr_db}, {"rmse", r.metrics.rmse}, {"mean_std", r.mean_std}}.dump();
        },
        py::arg("manifest"), py::arg("samples") = 0, py::arg("eta") = 0.1, py::arg("seed") = 0,
        py::arg("out_dir") = fs::path("out"));

    m.def(
        "render",
        [](const fs::path& manifest, const std::string& tf, const std::string& camera, int samples, double eta,
           std::uint64_t seed, double step, const std::string& scale_mode, const fs::path& out_dir) {
            RenderOptions o;
            o.reconstruct = {samples, eta, seed};
            o.step = step;
            o.scale_mode = parse_scale_mode(scale_mode);
            const auto t = tf_or_default(tf);
            const auto c = camera_or_default(camera);
            RenderOutputs out;
            {
                py::gil_scoped_release release;
                if (out_dir.empty()) {
                    c.validate();
                    const LoadedRun run = LoadedRun::load(manifest);
                    out = render_uncertainty(realize(run, o.reconstruct), &run.reference, t, c, o);
                } else {
                    out = cmd_render(manifest, t, c, o, out_dir);
                }
            }
            return outputs_to_dict(out, o.scale_mode);
        },
        py::arg("manifest"), py::arg("tf") = "", py::arg("camera") = "", py::arg("samples") = 0,
        py::arg("eta") = 0.1, py::arg("seed") = 0, py::arg("step") = 0.0, py::arg("scale_mode") = "per-image",
        py::arg("out_dir") = fs::path());

    m.def(
        "replay",
        [](const fs::path& manifest, const fs::path& out_dir) {
            py::gil_scoped_release release;
            return json(cmd_replay(manifest, out_dir).identical).dump();
        },
        py::arg("manifest"), py::arg("out_dir"));

    m.def(
        "evaluate",
        [](const std::string& config, const std::string& sweep) {
            const EvalConfig c = EvalConfig::from_json(parse(config));
            const Sweep s = parse_sweep(sweep);
            std::vector<EvalRow> rows;
            {
                py::gil_scoped_release release;
                Evaluator ev(c);
                rows = ev.run(s);
            }
            py::list out;
            for (const auto& r : rows) {
                py::dict d;
                d["dataset"] = r.dataset;
                d["method"] = r.method;
                d["sweep_var"] = r.sweep_var;
                d["value"] = r.value;
                d["psnr_db"] = r.psnr_db;
                d["rmse"] = r.rmse;
                d["mean_uncertainty"] = r.mean_uncertainty;
                out.append(d);
            }
            return out;
        },
        py::arg("config"), py::arg("sweep") = "all");

    py::class_<RenderService>(m, "RenderService")
        .def(py::init([](const fs::path& registry) { return std::make_unique<RenderService>(load_registry(registry)); }),
             py::arg("registry"))
        .def("models", [](const RenderService& s) { return s.models().dump(); })
        .def(
            "render",
            [](RenderService& s, const std::string& request) {
                const json req = parse(request);
                py::gil_scoped_release release;
                return s.render(req).dump();
            },
            py::arg("request"))
        .def("stats", [](const RenderService& s) { return s.stats().dump(); })
        .def("warm", &RenderService::warm, py::call_guard<py::gil_scoped_release>());
}
