#include "uqvol/uq_imaging.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "file_util.hpp"
#include "uqvol/error.hpp"

namespace uqvol {

double GrayImage::max() const noexcept
{
    return data.empty() ? 0.0 : *std::max_element(data.begin(), data.end());
}

double GrayImage::mean() const noexcept
{
    if (data.empty()) {
        return 0.0;
    }
    double s = 0.0;
    for (double v : data) s += v;
    return s / static_cast<double>(data.size());
}

const char* to_string(ScaleMode mode) noexcept
{
    return mode == ScaleMode::Shared ? "shared" : "per-image";
}

ScaleMode parse_scale_mode(const std::string& name)
{
    if (name == "per-image") return ScaleMode::PerImage;
    if (name == "shared" || name == "consistent") return ScaleMode::Shared;
    throw Error(ErrorCode::InvalidArgument, "unknown scale mode '" + name + "'");
}

UQImageSet aggregate(std::span<const RGBImage> images)
{
    if (images.empty()) {
        throw Error(ErrorCode::InvalidArgument, "cannot aggregate zero images");
    }
    const int w = images.front().width();
    const int h = images.front().height();
    for (const auto& im : images) {
        if (im.width() != w || im.height() != h) {
            throw Error(ErrorCode::ShapeMismatch, "renderings differ in size");
        }
    }

    UQImageSet out;
    out.mean = RGBImage(w, h);
    for (auto& s : out.channel_std) s = GrayImage(w, h);
    out.combined_uncertainty = GrayImage(w, h);

    const std::size_t n = images.front().data().size();
    std::vector<double> m2(n, 0.0);
    auto mean = out.mean.data();
    double count = 0.0;
    for (const auto& im : images) {
        count += 1.0;
        const auto d = im.data();
        for (std::size_t i = 0; i < n; ++i) {
            const double delta = d[i] - mean[i];
            mean[i] += delta / count;
            m2[i] += delta * (d[i] - mean[i]);
        }
    }
    const std::size_t pixels = out.mean.pixel_count();
    for (std::size_t p = 0; p < pixels; ++p) {
        double sum = 0.0;
        for (int c = 0; c < 3; ++c) {
            const double sd = std::sqrt(std::max(0.0, m2[3 * p + c] / count));
            out.channel_std[c].data[p] = sd;
            sum += sd;
        }
        out.combined_uncertainty.data[p] = sum / 3.0;
    }
    return out;
}

GrayImage error_map(const RGBImage& ground_truth, const RGBImage& mean)
{
    if (ground_truth.width() != mean.width() || ground_truth.height() != mean.height()) {
        throw Error(ErrorCode::ShapeMismatch, "ground truth and mean image differ in size");
    }
    GrayImage e(mean.width(), mean.height());
    const auto g = ground_truth.data();
    const auto m = mean.data();
    for (std::size_t p = 0; p < e.data.size(); ++p) {
        e.data[p] = (std::abs(g[3 * p] - m[3 * p]) + std::abs(g[3 * p + 1] - m[3 * p + 1]) +
                     std::abs(g[3 * p + 2] - m[3 * p + 2])) /
                    3.0;
    }
    return e;
}

double per_image_scale(const GrayImage& map) noexcept
{
    const double m = map.max();
    return m > 0.0 ? m : 1.0;
}

double shared_scale(std::span<const GrayImage* const> maps) noexcept
{
    double m = 0.0;
    for (const auto* map : maps) {
        m = std::max(m, map->max());
    }
    return m > 0.0 ? m : 1.0;
}

Image8 to_grayscale(const GrayImage& map, double scale)
{
    if (!(scale > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "grayscale scale must be positive");
    }
    Image8 out{map.width, map.height, 1, std::vector<std::uint8_t>(map.data.size())};
    for (std::size_t i = 0; i < map.data.size(); ++i) {
        if (map.data[i] < 0.0) {
            throw Error(ErrorCode::InvalidArgument, "uncertainty maps must be non-negative");
        }
        const double v = std::clamp(map.data[i] / scale, 0.0, 1.0);
        out.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - v)));
    }
    return out;
}

Image8 quantize(const RGBImage& image)
{
    Image8 out{image.width(), image.height(), 3, std::vector<std::uint8_t>(image.data().size())};
    const auto d = image.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        out.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(d[i], 0.0, 1.0)));
    }
    return out;
}

ImageMetrics image_psnr_rmse(const RGBImage& ground_truth, const RGBImage& prediction)
{
    if (ground_truth.width() != prediction.width() || ground_truth.height() != prediction.height()) {
        throw Error(ErrorCode::ShapeMismatch, "images differ in size");
    }
    const Image8 a = quantize(ground_truth);
    const Image8 b = quantize(prediction);
    double se = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
        se += d * d;
    }
    ImageMetrics m;
    m.rmse = a.pixels.empty() ? 0.0 : std::sqrt(se / static_cast<double>(a.pixels.size()));
    m.psnr_db = m.rmse == 0.0 ? std::numeric_limits<double>::infinity()
                              : 20.0 * std::log10(255.0 / m.rmse);
    return m;
}

namespace {

png_uint_32 png_format(int channels)
{
    switch (channels) {
    case 1: return PNG_FORMAT_GRAY;
    case 3: return PNG_FORMAT_RGB;
    default: throw Error(ErrorCode::InvalidArgument, "PNG images must have 1 or 3 channels");
    }
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image8& image)
{
    if (image.pixels.size() !=
        static_cast<std::size_t>(image.width) * image.height * static_cast<std::size_t>(image.channels)) {
        throw Error(ErrorCode::ShapeMismatch, "pixel buffer does not match image size");
    }
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = png_format(image.channels);

    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.pixels.data(), 0, nullptr)) {
        throw Error(ErrorCode::Io, std::string("PNG encode failed: ") + png.message);
    }
    std::vector<std::uint8_t> bytes(size);
    if (!png_image_write_to_memory(&png, bytes.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
        throw Error(ErrorCode::Io, std::string("PNG encode failed: ") + png.message);
    }
    bytes.resize(size);
    return bytes;
}

Image8 decode_png(std::span<const std::uint8_t> bytes)
{
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
        throw Error(ErrorCode::FormatMismatch, std::string("PNG decode failed: ") + png.message);
    }
    Image8 out;
    out.width = static_cast<int>(png.width);
    out.height = static_cast<int>(png.height);
    out.channels = (png.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
    png.format = png_format(out.channels);
    out.pixels.resize(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&png);
        throw Error(ErrorCode::FormatMismatch, std::string("PNG decode failed: ") + png.message);
    }
    return out;
}

void write_png(const Image8& image, const std::filesystem::path& path)
{
    const auto bytes = encode_png(image);
    detail::write_file(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

void write_png(const RGBImage& image, const std::filesystem::path& path)
{
    write_png(quantize(image), path);
}

Image8 read_png(const std::filesystem::path& path)
{
    const auto bytes = detail::read_file(path);
    return decode_png(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

}  // namespace uqvol
