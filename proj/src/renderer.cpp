#include "uqvol/renderer.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "uqvol/error.hpp"
#include "uqvol/parallel.hpp"

namespace uqvol {

using nlohmann::json;

void TransferFunction::validate() const
{
    if (points.size() < 2) {
        throw Error(ErrorCode::InvalidArgument, "transfer function needs at least two points");
    }
    if (points.front().x != 0.0 || points.back().x != 1.0) {
        throw Error(ErrorCode::InvalidArgument, "transfer function must span [0, 1]");
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (i > 0 && !(points[i].x > points[i - 1].x)) {
            throw Error(ErrorCode::InvalidArgument, "transfer function positions must increase");
        }
        for (double c : points[i].rgba) {
            if (!(c >= 0.0 && c <= 1.0)) {
                throw Error(ErrorCode::InvalidArgument, "transfer function channels must lie in [0, 1]");
            }
        }
    }
    if (resolution < 2) {
        throw Error(ErrorCode::InvalidArgument, "transfer function resolution must be >= 2");
    }
}

Rgba TransferFunction::classify(double s) const
{
    s = std::clamp(s, 0.0, 1.0);
    auto hi = std::upper_bound(points.begin(), points.end(), s,
                               [](double v, const ControlPoint& p) { return v < p.x; });
    if (hi == points.begin()) {
        return points.front().rgba;
    }
    if (hi == points.end()) {
        return points.back().rgba;
    }
    const auto lo = hi - 1;
    const double t = (s - lo->x) / (hi->x - lo->x);
    Rgba out;
    for (int c = 0; c < 4; ++c) {
        out[c] = lo->rgba[c] + t * (hi->rgba[c] - lo->rgba[c]);
    }
    return out;
}

std::vector<Rgba> TransferFunction::table() const
{
    std::vector<Rgba> t(static_cast<std::size_t>(resolution));
    for (int i = 0; i < resolution; ++i) {
        t[static_cast<std::size_t>(i)] = classify(static_cast<double>(i) / (resolution - 1));
    }
    return t;
}

TransferFunction TransferFunction::from_json(const json& j)
{
    TransferFunction tf;
    try {
        for (const auto& p : j.at("points")) {
            tf.points.push_back({p.at("x").get<double>(), p.at("rgba").get<Rgba>()});
        }
        tf.resolution = j.value("resolution", tf.resolution);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("bad transfer function: ") + e.what());
    }
    tf.validate();
    return tf;
}

json TransferFunction::to_json() const
{
    json pts = json::array();
    for (const auto& p : points) {
        pts.push_back({{"x", p.x}, {"rgba", p.rgba}});
    }
    return {{"points", pts}, {"resolution", resolution}};
}

void Camera::validate() const
{
    const Eigen::Vector3d view = look_at - eye;
    if (!view.allFinite() || view.norm() < 1e-12) {
        throw Error(ErrorCode::DegenerateCamera, "eye and look_at coincide");
    }
    if (up.norm() < 1e-12 || view.normalized().cross(up.normalized()).norm() < 1e-9) {
        throw Error(ErrorCode::DegenerateCamera, "up vector is parallel to the view direction");
    }
    if (!(fov_deg > 0.0 && fov_deg < 180.0)) {
        throw Error(ErrorCode::DegenerateCamera, "fov must lie in (0, 180) degrees");
    }
    if (width < 1 || height < 1) {
        throw Error(ErrorCode::DegenerateCamera, "image size must be positive");
    }
}

namespace {

Eigen::Vector3d vec3(const json& j)
{
    const auto a = j.get<std::array<double, 3>>();
    return {a[0], a[1], a[2]};
}

json to_array(const Eigen::Vector3d& v)
{
    return json::array({v.x(), v.y(), v.z()});
}

}  // namespace

Camera Camera::from_json(const json& j)
{
    Camera c;
    try {
        if (j.contains("eye")) c.eye = vec3(j.at("eye"));
        if (j.contains("look_at")) c.look_at = vec3(j.at("look_at"));
        if (j.contains("up")) c.up = vec3(j.at("up"));
        c.fov_deg = j.value("fov_deg", c.fov_deg);
        c.width = j.value("width", c.width);
        c.height = j.value("height", c.height);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::DegenerateCamera, std::string("bad camera: ") + e.what());
    }
    c.validate();
    return c;
}

json Camera::to_json() const
{
    return {{"eye", to_array(eye)},       {"look_at", to_array(look_at)}, {"up", to_array(up)},
            {"fov_deg", fov_deg},         {"width", width},               {"height", height}};
}

double sample_trilinear(const Volume& volume, const Eigen::Vector3d& world) noexcept
{
    const auto& g = volume.geometry();
    int i0[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
        const int n = g.dims[a];
        const double q = std::clamp((world[a] - g.origin[a]) / g.spacing[a], 0.0, static_cast<double>(n - 1));
        if (n == 1) {
            i0[a] = 0;
            f[a] = 0.0;
            continue;
        }
        i0[a] = std::min(static_cast<int>(std::floor(q)), n - 2);
        f[a] = q - i0[a];
    }
    auto v = [&](int dx, int dy, int dz) {
        const int x = std::min(i0[0] + dx, g.dims[0] - 1);
        const int y = std::min(i0[1] + dy, g.dims[1] - 1);
        const int z = std::min(i0[2] + dz, g.dims[2] - 1);
        return static_cast<double>(volume.at(x, y, z));
    };
    const double c00 = v(0, 0, 0) * (1 - f[0]) + v(1, 0, 0) * f[0];
    const double c10 = v(0, 1, 0) * (1 - f[0]) + v(1, 1, 0) * f[0];
    const double c01 = v(0, 0, 1) * (1 - f[0]) + v(1, 0, 1) * f[0];
    const double c11 = v(0, 1, 1) * (1 - f[0]) + v(1, 1, 1) * f[0];
    const double c0 = c00 * (1 - f[1]) + c10 * f[1];
    const double c1 = c01 * (1 - f[1]) + c11 * f[1];
    return c0 * (1 - f[2]) + c1 * f[2];
}

namespace {

constexpr double kTerminationOpacity = 0.999;

// Slab test against the box spanned by voxel centers.
bool intersect_box(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                   const Eigen::Vector3d& lo, const Eigen::Vector3d& hi, double& t_near,
                   double& t_far)
{
    t_near = 0.0;
    t_far = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (std::abs(dir[a]) < 1e-300) {
            if (origin[a] < lo[a] || origin[a] > hi[a]) {
                return false;
            }
            continue;
        }
        double t0 = (lo[a] - origin[a]) / dir[a];
        double t1 = (hi[a] - origin[a]) / dir[a];
        if (t0 > t1) std::swap(t0, t1);
        t_near = std::max(t_near, t0);
        t_far = std::min(t_far, t1);
    }
    return t_near <= t_far;
}

}  // namespace

RGBImage raycast(const Volume& volume, const TransferFunction& tf, const Camera& camera,
                 const RenderSettings& settings)
{
    camera.validate();
    tf.validate();
    const auto& g = volume.geometry();
    const double reference_step = g.min_spacing();
    const double step = settings.step > 0.0 ? settings.step : 0.5 * reference_step;
    const double opacity_exponent = step / reference_step;

    double range_lo = volume.value_min();
    double range_hi = volume.value_max();
    if (settings.scalar_range) {
        range_lo = (*settings.scalar_range)[0];
        range_hi = (*settings.scalar_range)[1];
    }
    const double range = range_hi - range_lo;
    const double inv_range = range > 0.0 ? 1.0 / range : 0.0;

    Eigen::Vector3d box_lo, box_hi;
    for (int a = 0; a < 3; ++a) {
        box_lo[a] = g.origin[a];
        box_hi[a] = g.origin[a] + (g.dims[a] - 1) * g.spacing[a];
    }

    const Eigen::Vector3d forward = (camera.look_at - camera.eye).normalized();
    const Eigen::Vector3d right = forward.cross(camera.up).normalized();
    const Eigen::Vector3d up = right.cross(forward);
    const double half_h = std::tan(0.5 * camera.fov_deg * std::numbers::pi / 180.0);
    const double half_w = half_h * static_cast<double>(camera.width) / camera.height;

    RGBImage image(camera.width, camera.height);
    parallel_for(
        static_cast<std::size_t>(camera.height),
        [&](std::size_t row) {
            const int py = static_cast<int>(row);
            for (int px = 0; px < camera.width; ++px) {
                const double sx = (2.0 * (px + 0.5) / camera.width - 1.0) * half_w;
                const double sy = (1.0 - 2.0 * (py + 0.5) / camera.height) * half_h;
                const Eigen::Vector3d dir = (forward + sx * right + sy * up).normalized();

                double t_near, t_far;
                double color[3] = {0.0, 0.0, 0.0};
                double alpha = 0.0;
                if (intersect_box(camera.eye, dir, box_lo, box_hi, t_near, t_far)) {
                    const double t_end = t_far + 1e-9 * step;
                    for (long i = 0;; ++i) {
                        const double t = t_near + static_cast<double>(i) * step;
                        if (t > t_end) break;
                        const double v = sample_trilinear(volume, camera.eye + t * dir);
                        const Rgba c = tf.classify((v - range_lo) * inv_range);
                        if (c[3] <= 0.0) continue;
                        const double a = 1.0 - std::pow(1.0 - c[3], opacity_exponent);
                        const double w = (1.0 - alpha) * a;
                        color[0] += w * c[0];
                        color[1] += w * c[1];
                        color[2] += w * c[2];
                        alpha += w;
                        if (alpha > kTerminationOpacity) break;
                    }
                }
                // Black background contributes (1 - alpha) * 0.
                for (int ch = 0; ch < 3; ++ch) {
                    image.at(px, py, ch) = std::clamp(color[ch], 0.0, 1.0);
                }
            }
        },
        settings.workers);
    return image;
}

std::vector<RGBImage> render_stack(std::span<const Volume> realizations, const TransferFunction& tf,
                                   const Camera& camera, const RenderSettings& settings)
{
    RenderSettings shared = settings;
    if (!shared.scalar_range && !realizations.empty()) {
        double lo = realizations.front().value_min();
        double hi = realizations.front().value_max();
        for (const auto& v : realizations) {
            lo = std::min<double>(lo, v.value_min());
            hi = std::max<double>(hi, v.value_max());
        }
        shared.scalar_range = std::array<double, 2>{lo, hi};
    }
    std::vector<RGBImage> images;
    images.reserve(realizations.size());
    for (const auto& v : realizations) {
        images.push_back(raycast(v, tf, camera, shared));
    }
    return images;
}

}  // namespace uqvol
