#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "uqvol/neural_field.hpp"
#include "uqvol/volume.hpp"

namespace uqvol {

enum class UqMethod { None, McDropout, Ensemble };

const char* to_string(UqMethod method) noexcept;
UqMethod parse_uq_method(const std::string& name);

/// Trained network plus the value mapping it was trained with.
struct FieldModel {
    ParameterSet params;
    Normalizer normalizer;

    static FieldModel from_checkpoint(const Checkpoint& checkpoint);
};

/// Realizations of one field, either MC dropout passes or ensemble members.
struct RealizationStack {
    UqMethod method = UqMethod::McDropout;
    std::vector<Volume> realizations;
    double inference_rate = 0.0;  // MC dropout only
    std::vector<std::uint64_t> seeds;

    std::size_t size() const noexcept { return realizations.size(); }
    const GridGeometry& geometry() const;
    /// Throws ShapeMismatch when realizations disagree on geometry.
    void validate() const;
};

/// Per-voxel mean and population standard deviation, kept at 64-bit.
struct FieldSummary {
    GridGeometry geometry;
    std::vector<double> mean;
    std::vector<double> stddev;

    Volume mean_volume() const;
    Volume std_volume() const;
};

struct QualityMetrics {
    double psnr_db = 0.0;  // +infinity when rmse == 0
    double rmse = 0.0;
};

/// Deterministic reconstruction of a whole grid in data units.
Volume reconstruct(const FieldModel& model, const GridGeometry& geometry,
                   const DropoutState& dropout = {});

/// Seed used for MC realization `index` of a run seeded with `seed`.
std::uint64_t mc_realization_seed(std::uint64_t seed, std::size_t index) noexcept;

/// `m` MC-dropout sweeps with inference rate `rate` in (0, 1).
RealizationStack reconstruct_mc(const FieldModel& model, const GridGeometry& geometry, int m,
                                double rate, std::uint64_t seed);

/// One dropout-free realization per member.
RealizationStack reconstruct_ensemble(std::span<const FieldModel> members,
                                      const GridGeometry& geometry);

FieldSummary summarize(std::span<const Volume> realizations);
FieldSummary summarize(const RealizationStack& stack);

/// rmse in data units; psnr peak = reference value range.
QualityMetrics psnr_rmse(const Volume& reference, std::span<const double> candidate);
QualityMetrics psnr_rmse(const Volume& reference, std::span<const float> candidate);
QualityMetrics psnr_rmse(const Volume& reference, const Volume& candidate);

}  // namespace uqvol
