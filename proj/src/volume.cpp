#include "uqvol/volume.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "byte_io.hpp"
#include "file_util.hpp"
#include "uqvol/error.hpp"

namespace uqvol {

using nlohmann::json;

double GridGeometry::min_spacing() const noexcept
{
    return std::min({spacing[0], spacing[1], spacing[2]});
}

void GridGeometry::validate() const
{
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 1) {
            throw Error(ErrorCode::InvalidArgument, "grid dims must be positive");
        }
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
            throw Error(ErrorCode::InvalidArgument, "grid spacing must be positive and finite");
        }
        if (!std::isfinite(origin[a])) {
            throw Error(ErrorCode::InvalidArgument, "grid origin must be finite");
        }
    }
}

Volume::Volume(GridGeometry geometry, std::vector<float> values)
    : geometry_(geometry), values_(std::move(values))
{
    geometry_.validate();
    if (values_.size() != geometry_.voxel_count()) {
        throw Error(ErrorCode::SizeMismatch,
                    "expected " + std::to_string(geometry_.voxel_count()) + " values, got " +
                        std::to_string(values_.size()));
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i])) {
            throw Error(ErrorCode::NonFiniteValue,
                        "value at linear index " + std::to_string(i) + " is not finite");
        }
    }
    const auto [lo, hi] = std::minmax_element(values_.begin(), values_.end());
    value_min_ = *lo;
    value_max_ = *hi;
}

Normalizer make_normalizer(double src_min, double src_max)
{
    if (!(src_min < src_max)) {
        throw Error(ErrorCode::DegenerateRange,
                    "value range [" + std::to_string(src_min) + ", " + std::to_string(src_max) +
                        "] is empty");
    }
    return Normalizer{src_min, src_max};
}

Normalizer make_normalizer(const Volume& volume)
{
    return make_normalizer(volume.value_min(), volume.value_max());
}

double teardrop_function(double x, double y, double z) noexcept
{
    const double x4 = x * x * x * x;
    return 0.5 * x4 * x + 0.5 * x4 - y * y - z * z;
}

double lattice_coordinate(int i, int n) noexcept
{
    if (n <= 1) {
        return 0.0;
    }
    return -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
}

Volume generate_teardrop(int n)
{
    if (n < 2) {
        throw Error(ErrorCode::InvalidArgument, "teardrop grid size must be >= 2");
    }
    GridGeometry g;
    g.dims = {n, n, n};
    const double h = 2.0 / (n - 1);
    g.spacing = {h, h, h};
    g.origin = {-1.0, -1.0, -1.0};

    std::vector<float> values(g.voxel_count());
    for (int x = 0; x < n; ++x) {
        for (int y = 0; y < n; ++y) {
            for (int z = 0; z < n; ++z) {
                values[g.index(x, y, z)] = static_cast<float>(teardrop_function(
                    lattice_coordinate(x, n), lattice_coordinate(y, n), lattice_coordinate(z, n)));
            }
        }
    }
    return Volume(g, std::move(values));
}

std::filesystem::path sidecar_path(const std::filesystem::path& raw_path)
{
    auto p = raw_path;
    p.replace_extension(".json");
    return p;
}

GridGeometry load_geometry(const std::filesystem::path& sidecar)
{
    const auto bytes = detail::read_file(sidecar);
    GridGeometry g;
    try {
        const auto j = json::parse(bytes.begin(), bytes.end());
        g.dims = j.at("dims").get<std::array<int, 3>>();
        if (j.contains("spacing")) {
            g.spacing = j.at("spacing").get<std::array<double, 3>>();
        }
        if (j.contains("origin")) {
            g.origin = j.at("origin").get<std::array<double, 3>>();
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::FormatMismatch,
                    "bad volume sidecar '" + sidecar.string() + "': " + e.what());
    }
    g.validate();
    return g;
}

void save_geometry(const GridGeometry& geometry, const std::filesystem::path& sidecar)
{
    const json j = {{"dims", geometry.dims},
                    {"spacing", geometry.spacing},
                    {"origin", geometry.origin}};
    detail::write_file(sidecar, j.dump(2) + "\n");
}

Volume load_volume(const std::filesystem::path& raw_path, const GridGeometry& geometry)
{
    geometry.validate();
    const auto bytes = detail::read_file(raw_path);
    const std::size_t expected = geometry.voxel_count() * sizeof(float);
    if (bytes.size() != expected) {
        throw Error(ErrorCode::SizeMismatch,
                    "'" + raw_path.string() + "' holds " + std::to_string(bytes.size()) +
                        " bytes, expected " + std::to_string(expected));
    }
    return Volume(geometry, detail::from_le_bytes(bytes));
}

Volume load_volume(const std::filesystem::path& raw_path)
{
    return load_volume(raw_path, load_geometry(sidecar_path(raw_path)));
}

void save_volume(const Volume& volume, const std::filesystem::path& raw_path)
{
    const auto bytes = detail::to_le_bytes(volume.values());
    detail::write_file(raw_path, std::string_view(bytes.data(), bytes.size()));
    save_geometry(volume.geometry(), sidecar_path(raw_path));
}

}  // namespace uqvol
