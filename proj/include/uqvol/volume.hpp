#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace uqvol {

/// Lattice layout of a dense scalar grid. Voxel centers sit at
/// `origin + index * spacing`.
struct GridGeometry {
    std::array<int, 3> dims{1, 1, 1};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::array<double, 3> origin{0.0, 0.0, 0.0};

    std::size_t voxel_count() const noexcept
    {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(dims[2]);
    }

    /// Row-major linear index: z varies fastest.
    std::size_t index(int x, int y, int z) const noexcept
    {
        return (static_cast<std::size_t>(x) * static_cast<std::size_t>(dims[1]) +
                static_cast<std::size_t>(y)) *
                   static_cast<std::size_t>(dims[2]) +
               static_cast<std::size_t>(z);
    }

    double min_spacing() const noexcept;

    /// Throws InvalidArgument on non-positive dims or spacing.
    void validate() const;

    friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

/// Dense immutable scalar volume with cached value range.
class Volume {
public:
    Volume() = default;

    /// Validates sizes and finiteness; throws SizeMismatch / NonFiniteValue.
    Volume(GridGeometry geometry, std::vector<float> values);

    const GridGeometry& geometry() const noexcept { return geometry_; }
    const std::array<int, 3>& dims() const noexcept { return geometry_.dims; }
    std::span<const float> values() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }

    float at(int x, int y, int z) const noexcept { return values_[geometry_.index(x, y, z)]; }
    float operator[](std::size_t i) const noexcept { return values_[i]; }

    float value_min() const noexcept { return value_min_; }
    float value_max() const noexcept { return value_max_; }
    double value_range() const noexcept
    {
        return static_cast<double>(value_max_) - static_cast<double>(value_min_);
    }

private:
    GridGeometry geometry_{};
    std::vector<float> values_;
    float value_min_ = 0.0f;
    float value_max_ = 0.0f;
};

/// Affine map from [src_min, src_max] onto [-1, 1].
struct Normalizer {
    double src_min = -1.0;
    double src_max = 1.0;

    double apply(double x) const noexcept
    {
        return 2.0 * (x - src_min) / (src_max - src_min) - 1.0;
    }
    double invert(double y) const noexcept
    {
        return (y + 1.0) * 0.5 * (src_max - src_min) + src_min;
    }
};

/// Throws DegenerateRange when the volume is constant.
Normalizer make_normalizer(const Volume& volume);
Normalizer make_normalizer(double src_min, double src_max);

/// g(x,y,z) = 0.5 x^5 + 0.5 x^4 - y^2 - z^2
double teardrop_function(double x, double y, double z) noexcept;

/// Samples the teardrop function on an n^3 lattice spanning [-1,1]^3.
Volume generate_teardrop(int n);

/// Coordinate of lattice index `i` along an axis of `n` points, in [-1, 1].
double lattice_coordinate(int i, int n) noexcept;

// Raw volumes are headerless little-endian float32 with a JSON sidecar.
std::filesystem::path sidecar_path(const std::filesystem::path& raw_path);

GridGeometry load_geometry(const std::filesystem::path& sidecar);
void save_geometry(const GridGeometry& geometry, const std::filesystem::path& sidecar);

Volume load_volume(const std::filesystem::path& raw_path, const GridGeometry& geometry);
/// Reads the geometry from the sidecar next to `raw_path`.
Volume load_volume(const std::filesystem::path& raw_path);

/// Writes the `.raw` file and its sidecar.
void save_volume(const Volume& volume, const std::filesystem::path& raw_path);

}  // namespace uqvol
