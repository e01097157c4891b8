#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uqvol/renderer.hpp"

namespace uqvol {

/// Single-channel float image (uncertainty or error map).
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    GrayImage() = default;
    GrayImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0.0) {}

    double max() const noexcept;
    double mean() const noexcept;
};

/// 8-bit interleaved pixels, 1 (gray) or 3 (RGB) channels.
struct Image8 {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;

    friend bool operator==(const Image8&, const Image8&) = default;
};

struct UQImageSet {
    RGBImage mean;
    std::array<GrayImage, 3> channel_std;
    /// (sigma_r + sigma_g + sigma_b) / 3 per pixel.
    GrayImage combined_uncertainty;
    std::optional<GrayImage> error;
};

enum class ScaleMode { PerImage, Shared };

const char* to_string(ScaleMode mode) noexcept;
ScaleMode parse_scale_mode(const std::string& name);

/// Per-pixel, per-channel mean and population std over the renderings.
UQImageSet aggregate(std::span<const RGBImage> images);

/// Mean over channels of |gt - mean|.
GrayImage error_map(const RGBImage& ground_truth, const RGBImage& mean);

/// Display scale for one map: its maximum, or 1 when the map is all zero.
double per_image_scale(const GrayImage& map) noexcept;
/// Shared scale across a comparison set: the maximum over all maps.
double shared_scale(std::span<const GrayImage* const> maps) noexcept;

/// Intensity = round(255 * (1 - clamp(v / scale, 0, 1))); darker is higher.
Image8 to_grayscale(const GrayImage& map, double scale);

/// Channels rounded to 0..255.
Image8 quantize(const RGBImage& image);

struct ImageMetrics {
    double psnr_db = 0.0;  // +infinity when identical
    double rmse = 0.0;     // 8-bit units
};

/// Metrics on 8-bit quantized images with peak 255.
ImageMetrics image_psnr_rmse(const RGBImage& ground_truth, const RGBImage& prediction);

std::vector<std::uint8_t> encode_png(const Image8& image);
Image8 decode_png(std::span<const std::uint8_t> bytes);

void write_png(const Image8& image, const std::filesystem::path& path);
void write_png(const RGBImage& image, const std::filesystem::path& path);
Image8 read_png(const std::filesystem::path& path);

}  // namespace uqvol
