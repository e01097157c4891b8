#pragma once

#include <Eigen/Core>
#include <array>
#include <json.hpp>
#include <optional>
#include <span>
#include <vector>

#include "uqvol/volume.hpp"

namespace uqvol {

using Rgba = std::array<double, 4>;

/// Piecewise-linear scalar -> RGBA map over normalized scalars in [0, 1].
struct TransferFunction {
    struct ControlPoint {
        double x = 0.0;
        Rgba rgba{0.0, 0.0, 0.0, 0.0};
    };

    std::vector<ControlPoint> points;
    int resolution = 256;

    /// Positions strictly increasing from 0 to 1, channels in [0, 1].
    void validate() const;

    /// Exact interpolation between the bracketing control points; `s` is
    /// clamped to [0, 1].
    Rgba classify(double s) const;

    /// `resolution` evenly spaced classify() samples, for display.
    std::vector<Rgba> table() const;

    static TransferFunction from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct Camera {
    Eigen::Vector3d eye{0.0, 0.0, 3.0};
    Eigen::Vector3d look_at{0.0, 0.0, 0.0};
    Eigen::Vector3d up{0.0, 1.0, 0.0};
    double fov_deg = 45.0;
    int width = 512;
    int height = 512;

    /// Throws DegenerateCamera on coincident eye/target or parallel up.
    void validate() const;

    static Camera from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Row-major RGB image with channels stored at 64-bit.
class RGBImage {
public:
    RGBImage() = default;
    RGBImage(int width, int height) : width_(width), height_(height), data_(3u * width * height, 0.0) {}

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width_) * height_; }

    double& at(int x, int y, int c) noexcept { return data_[3u * (static_cast<std::size_t>(y) * width_ + x) + c]; }
    double at(int x, int y, int c) const noexcept
    {
        return data_[3u * (static_cast<std::size_t>(y) * width_ + x) + c];
    }
    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    friend bool operator==(const RGBImage&, const RGBImage&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> data_;
};

struct RenderSettings {
    /// World-space sample spacing; <= 0 selects half the minimum voxel spacing.
    double step = 0.0;
    /// Scalar range mapped onto TF [0, 1]; defaults to the volume's own range.
    /// Stacks of realizations should share one range.
    std::optional<std::array<double, 2>> scalar_range;
    int workers = 0;
};

/// Trilinear interpolation at a world position, clamped to the grid.
double sample_trilinear(const Volume& volume, const Eigen::Vector3d& world) noexcept;

/// Front-to-back emission-absorption compositing over a black background.
RGBImage raycast(const Volume& volume, const TransferFunction& tf, const Camera& camera,
                 const RenderSettings& settings = {});

/// One image per realization with identical TF/camera/settings. Without an
/// explicit scalar range the union of all realization ranges is used.
std::vector<RGBImage> render_stack(std::span<const Volume> realizations,
                                   const TransferFunction& tf, const Camera& camera,
                                   const RenderSettings& settings = {});

}  // namespace uqvol
