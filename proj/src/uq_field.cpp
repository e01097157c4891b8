#include "uqvol/uq_field.hpp"

#include <cmath>
#include <limits>

#include "uqvol/error.hpp"
#include "uqvol/parallel.hpp"
#include "uqvol/trainer.hpp"

namespace uqvol {

const char* to_string(UqMethod method) noexcept
{
    switch (method) {
    case UqMethod::None: return "none";
    case UqMethod::McDropout: return "mcdropout";
    case UqMethod::Ensemble: return "ensemble";
    }
    return "none";
}

UqMethod parse_uq_method(const std::string& name)
{
    if (name == "none") return UqMethod::None;
    if (name == "mcdropout") return UqMethod::McDropout;
    if (name == "ensemble") return UqMethod::Ensemble;
    throw Error(ErrorCode::InvalidArgument, "unknown method '" + name + "'");
}

FieldModel FieldModel::from_checkpoint(const Checkpoint& checkpoint)
{
    if (!checkpoint.normalizer) {
        throw Error(ErrorCode::FormatMismatch, "checkpoint carries no value normalizer");
    }
    return FieldModel{checkpoint.params, *checkpoint.normalizer};
}

const GridGeometry& RealizationStack::geometry() const
{
    if (realizations.empty()) {
        throw Error(ErrorCode::InvalidArgument, "realization stack is empty");
    }
    return realizations.front().geometry();
}

void RealizationStack::validate() const
{
    const auto& g = geometry();
    for (const auto& r : realizations) {
        if (!(r.geometry() == g)) {
            throw Error(ErrorCode::ShapeMismatch, "realizations do not share one grid");
        }
    }
}

Volume FieldSummary::mean_volume() const
{
    return Volume(geometry, std::vector<float>(mean.begin(), mean.end()));
}

Volume FieldSummary::std_volume() const
{
    return Volume(geometry, std::vector<float>(stddev.begin(), stddev.end()));
}

namespace {
constexpr Eigen::Index kChunk = 8192;
}

Volume reconstruct(const FieldModel& model, const GridGeometry& geometry,
                   const DropoutState& dropout)
{
    geometry.validate();
    const CoordMatrix<float> coords = lattice_coordinates(geometry, model.params.topology().in_dim);
    std::vector<float> values(geometry.voxel_count());
    DropoutState state = dropout;
    for (Eigen::Index start = 0; start < coords.cols(); start += kChunk) {
        const Eigen::Index count = std::min(kChunk, coords.cols() - start);
        state.sample_offset = static_cast<std::uint64_t>(start);
        const RowVector<float> out =
            forward(model.params, coords.middleCols(start, count), state);
        for (Eigen::Index k = 0; k < count; ++k) {
            values[static_cast<std::size_t>(start + k)] =
                static_cast<float>(model.normalizer.invert(out(k)));
        }
    }
    return Volume(geometry, std::move(values));
}

std::uint64_t mc_realization_seed(std::uint64_t seed, std::size_t index) noexcept
{
    std::uint64_t x = seed + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(index) + 1);
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

RealizationStack reconstruct_mc(const FieldModel& model, const GridGeometry& geometry, int m,
                                double rate, std::uint64_t seed)
{
    if (m < 1) {
        throw Error(ErrorCode::InvalidArgument, "need at least one MC sample");
    }
    if (!(rate > 0.0 && rate < 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "MC inference rate must lie in (0, 1)");
    }
    RealizationStack stack;
    stack.method = UqMethod::McDropout;
    stack.inference_rate = rate;
    stack.realizations.resize(static_cast<std::size_t>(m));
    stack.seeds.resize(static_cast<std::size_t>(m));
    parallel_for(stack.realizations.size(), [&](std::size_t r) {
        DropoutState state;
        state.rate = rate;
        state.mode = DropoutMode::McInference;
        state.seed = mc_realization_seed(seed, r);
        stack.seeds[r] = state.seed;
        stack.realizations[r] = reconstruct(model, geometry, state);
    });
    return stack;
}

RealizationStack reconstruct_ensemble(std::span<const FieldModel> members,
                                      const GridGeometry& geometry)
{
    if (members.empty()) {
        throw Error(ErrorCode::InvalidArgument, "ensemble has no members");
    }
    RealizationStack stack;
    stack.method = UqMethod::Ensemble;
    stack.realizations.resize(members.size());
    stack.seeds.assign(members.size(), 0);
    parallel_for(members.size(), [&](std::size_t i) {
        stack.realizations[i] = reconstruct(members[i], geometry);
    });
    return stack;
}

FieldSummary summarize(std::span<const Volume> realizations)
{
    if (realizations.empty()) {
        throw Error(ErrorCode::InvalidArgument, "cannot summarize an empty stack");
    }
    const auto& g = realizations.front().geometry();
    for (const auto& r : realizations) {
        if (!(r.geometry() == g)) {
            throw Error(ErrorCode::ShapeMismatch, "realizations do not share one grid");
        }
    }
    FieldSummary s;
    s.geometry = g;
    const std::size_t n = g.voxel_count();
    s.mean.assign(n, 0.0);
    s.stddev.assign(n, 0.0);
    // Welford update per voxel, realizations visited in order.
    std::vector<double> m2(n, 0.0);
    double count = 0.0;
    for (const auto& r : realizations) {
        count += 1.0;
        const auto values = r.values();
        for (std::size_t i = 0; i < n; ++i) {
            const double x = values[i];
            const double delta = x - s.mean[i];
            s.mean[i] += delta / count;
            m2[i] += delta * (x - s.mean[i]);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        s.stddev[i] = std::sqrt(std::max(0.0, m2[i] / count));
    }
    return s;
}

FieldSummary summarize(const RealizationStack& stack)
{
    stack.validate();
    return summarize(std::span<const Volume>(stack.realizations));
}

namespace {

template <class T>
QualityMetrics psnr_rmse_impl(const Volume& reference, std::span<const T> candidate)
{
    if (candidate.size() != reference.size()) {
        throw Error(ErrorCode::ShapeMismatch, "reference and candidate sizes differ");
    }
    const auto ref = reference.values();
    double se = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const double d = static_cast<double>(candidate[i]) - static_cast<double>(ref[i]);
        se += d * d;
    }
    QualityMetrics q;
    q.rmse = std::sqrt(se / static_cast<double>(ref.size()));
    q.psnr_db = q.rmse == 0.0 ? std::numeric_limits<double>::infinity()
                              : 20.0 * std::log10(reference.value_range() / q.rmse);
    return q;
}

}  // namespace

QualityMetrics psnr_rmse(const Volume& reference, std::span<const double> candidate)
{
    return psnr_rmse_impl(reference, candidate);
}

QualityMetrics psnr_rmse(const Volume& reference, std::span<const float> candidate)
{
    return psnr_rmse_impl(reference, candidate);
}

QualityMetrics psnr_rmse(const Volume& reference, const Volume& candidate)
{
    if (!(reference.geometry().dims == candidate.geometry().dims)) {
        throw Error(ErrorCode::ShapeMismatch, "reference and candidate dims differ");
    }
    return psnr_rmse_impl(reference, candidate.values());
}

}  // namespace uqvol
