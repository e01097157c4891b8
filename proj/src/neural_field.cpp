#include "uqvol/neural_field.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string_view>

#include "byte_io.hpp"
#include "file_util.hpp"
#include "uqvol/error.hpp"

namespace uqvol {

using nlohmann::json;

const char* to_string(DropoutPlacement placement) noexcept
{
    switch (placement) {
    case DropoutPlacement::None: return "none";
    case DropoutPlacement::LastTwo: return "last-two";
    case DropoutPlacement::LastHalf: return "last-half";
    case DropoutPlacement::All: return "all";
    }
    return "none";
}

DropoutPlacement parse_dropout_placement(const std::string& name)
{
    if (name == "none") return DropoutPlacement::None;
    if (name == "last-two") return DropoutPlacement::LastTwo;
    if (name == "last-half") return DropoutPlacement::LastHalf;
    if (name == "all") return DropoutPlacement::All;
    throw Error(ErrorCode::InvalidArgument, "unknown dropout placement '" + name + "'");
}

FieldTopology FieldTopology::make(int in_dim, int hidden_width, int n_blocks,
                                  DropoutPlacement placement, double omega0)
{
    FieldTopology t;
    t.in_dim = in_dim;
    t.hidden_width = hidden_width;
    t.n_blocks = n_blocks;
    t.omega0 = omega0;
    t.dropout_blocks.clear();
    int first = n_blocks;
    switch (placement) {
    case DropoutPlacement::None: break;
    case DropoutPlacement::LastTwo: first = std::max(0, n_blocks - 2); break;
    case DropoutPlacement::LastHalf: first = n_blocks / 2; break;
    case DropoutPlacement::All: first = 0; break;
    }
    for (int b = first; b < n_blocks; ++b) {
        t.dropout_blocks.push_back(b);
    }
    return t;
}

void FieldTopology::validate() const
{
    if (in_dim != 2 && in_dim != 3) {
        throw Error(ErrorCode::InvalidArgument, "in_dim must be 2 or 3");
    }
    if (hidden_width < 1 || n_blocks < 1) {
        throw Error(ErrorCode::InvalidArgument, "hidden_width and n_blocks must be >= 1");
    }
    if (!(omega0 > 0.0) || !std::isfinite(omega0)) {
        throw Error(ErrorCode::InvalidArgument, "omega0 must be positive");
    }
    for (int b : dropout_blocks) {
        if (b < 0 || b >= n_blocks) {
            throw Error(ErrorCode::InvalidArgument,
                        "dropout block " + std::to_string(b) + " outside [0, n_blocks)");
        }
    }
}

bool FieldTopology::has_dropout(int block) const noexcept
{
    return std::find(dropout_blocks.begin(), dropout_blocks.end(), block) != dropout_blocks.end();
}

std::size_t FieldTopology::parameter_count() const noexcept
{
    const std::size_t d = static_cast<std::size_t>(in_dim);
    const std::size_t h = static_cast<std::size_t>(hidden_width);
    const std::size_t l = static_cast<std::size_t>(n_blocks);
    return (d * h + h) + l * 2 * (h * h + h) + (h + 1);
}

json to_json(const FieldTopology& t)
{
    return {{"in_dim", t.in_dim},
            {"hidden_width", t.hidden_width},
            {"n_blocks", t.n_blocks},
            {"omega0", t.omega0},
            {"dropout_blocks", t.dropout_blocks},
            {"residual_scale", 1.0}};
}

FieldTopology topology_from_json(const json& j)
{
    FieldTopology t;
    t.in_dim = j.value("in_dim", t.in_dim);
    t.hidden_width = j.value("hidden_width", t.hidden_width);
    t.n_blocks = j.value("n_blocks", t.n_blocks);
    t.omega0 = j.value("omega0", t.omega0);
    if (j.contains("dropout_blocks")) {
        t.dropout_blocks = j.at("dropout_blocks").get<std::vector<int>>();
    } else if (j.contains("dropout_placement")) {
        t = FieldTopology::make(t.in_dim, t.hidden_width, t.n_blocks,
                                parse_dropout_placement(j.at("dropout_placement")), t.omega0);
    } else {
        t = FieldTopology::make(t.in_dim, t.hidden_width, t.n_blocks, DropoutPlacement::LastTwo,
                                t.omega0);
    }
    t.validate();
    return t;
}

// ---------------------------------------------------------------------------
// Parameter storage

template <class Scalar>
BasicParameterSet<Scalar>::BasicParameterSet(FieldTopology topology) : topology_(std::move(topology))
{
    topology_.validate();
    const int d = topology_.in_dim;
    const int h = topology_.hidden_width;
    std::size_t offset = 0;
    auto add = [&](int rows, int cols) {
        LayerShape s{rows, cols, offset, offset + static_cast<std::size_t>(rows) * cols};
        offset = s.bias_offset + static_cast<std::size_t>(rows);
        shapes_.push_back(s);
    };
    add(h, d);
    for (int b = 0; b < topology_.n_blocks; ++b) {
        add(h, h);
        add(h, h);
    }
    add(1, h);
    flat_ = Vector::Zero(static_cast<Eigen::Index>(offset));
}

template <class Scalar>
auto BasicParameterSet<Scalar>::weight(int layer) -> MatrixMap
{
    const auto& s = shapes_.at(layer);
    return MatrixMap(flat_.data() + s.weight_offset, s.rows, s.cols);
}

template <class Scalar>
auto BasicParameterSet<Scalar>::weight(int layer) const -> ConstMatrixMap
{
    const auto& s = shapes_.at(layer);
    return ConstMatrixMap(flat_.data() + s.weight_offset, s.rows, s.cols);
}

template <class Scalar>
auto BasicParameterSet<Scalar>::bias(int layer) -> VectorMap
{
    const auto& s = shapes_.at(layer);
    return VectorMap(flat_.data() + s.bias_offset, s.rows);
}

template <class Scalar>
auto BasicParameterSet<Scalar>::bias(int layer) const -> ConstVectorMap
{
    const auto& s = shapes_.at(layer);
    return ConstVectorMap(flat_.data() + s.bias_offset, s.rows);
}

template class BasicParameterSet<float>;
template class BasicParameterSet<double>;

namespace {

// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw.
double unit_uniform(std::uint64_t bits) noexcept
{
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace

ParameterSet init_params(const FieldTopology& topology, std::uint64_t seed)
{
    ParameterSet params(topology);
    std::mt19937_64 rng(seed);
    auto fill = [&](int layer, double bound) {
        auto w = params.weight(layer);
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
            for (Eigen::Index r = 0; r < w.rows(); ++r) {
                w(r, c) = static_cast<float>((2.0 * unit_uniform(rng()) - 1.0) * bound);
            }
        }
    };
    fill(ParameterSet::first_layer(), 1.0 / topology.in_dim);
    const double hidden_bound = std::sqrt(6.0 / topology.hidden_width) / topology.omega0;
    for (int layer = 1; layer < params.layer_count(); ++layer) {
        fill(layer, hidden_bound);
    }
    return params;
}

void DropoutState::validate() const
{
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "dropout rate must lie in [0, 1)");
    }
}

bool dropout_keeps(const DropoutState& state, std::uint64_t sample, int block, int unit) noexcept
{
    std::uint64_t h = splitmix64(state.seed ^ splitmix64(sample));
    h = splitmix64(h + ((static_cast<std::uint64_t>(block) << 32) | static_cast<std::uint32_t>(unit)));
    return unit_uniform(h) >= state.rate;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <class Scalar>
Mat<Scalar> affine_phase(const BasicParameterSet<Scalar>& params, int layer, const Mat<Scalar>& in,
                         Scalar omega)
{
    Mat<Scalar> phase;
    phase.noalias() = params.weight(layer) * in;
    phase.colwise() += params.bias(layer);
    phase *= omega;
    return phase;
}

template <class Scalar>
Mat<Scalar> dropout_mask(const DropoutState& state, int block, int units, Eigen::Index batch)
{
    const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - state.rate));
    Mat<Scalar> mask(units, batch);
    for (Eigen::Index c = 0; c < batch; ++c) {
        const std::uint64_t sample = state.sample_offset + static_cast<std::uint64_t>(c);
        for (int u = 0; u < units; ++u) {
            mask(u, c) = dropout_keeps(state, sample, block, u) ? keep_scale : Scalar(0);
        }
    }
    return mask;
}

}  // namespace

template <class Scalar>
RowVector<Scalar> forward(const BasicParameterSet<Scalar>& params,
                          const CoordRef<Scalar>& coords,
                          const DropoutState& dropout, ActivationTape<Scalar>* tape)
{
    const auto& topo = params.topology();
    if (coords.rows() != topo.in_dim) {
        throw Error(ErrorCode::ShapeMismatch,
                    "coordinates have " + std::to_string(coords.rows()) + " rows, network expects " +
                        std::to_string(topo.in_dim));
    }
    dropout.validate();
    const Scalar omega = static_cast<Scalar>(topo.omega0);
    const Eigen::Index batch = coords.cols();
    const bool masking = dropout.active();

    Mat<Scalar> input = coords;
    Mat<Scalar> phase0 = affine_phase(params, BasicParameterSet<Scalar>::first_layer(), input, omega);
    Mat<Scalar> u = phase0.array().sin();

    if (tape) {
        tape->batch = batch;
        tape->blocks.resize(static_cast<std::size_t>(topo.n_blocks));
    }

    for (int b = 0; b < topo.n_blocks; ++b) {
        Mat<Scalar> phase_a = affine_phase(params, BasicParameterSet<Scalar>::block_layer(b, 0), u, omega);
        Mat<Scalar> hidden = phase_a.array().sin();
        Mat<Scalar> phase_b =
            affine_phase(params, BasicParameterSet<Scalar>::block_layer(b, 1), hidden, omega);
        Mat<Scalar> w = phase_b.array().sin();
        Mat<Scalar> mask;
        if (masking && topo.has_dropout(b)) {
            mask = dropout_mask<Scalar>(dropout, b, topo.hidden_width, batch);
            w.array() *= mask.array();
        }
        Mat<Scalar> next = u + w;
        if (tape) {
            auto& blk = tape->blocks[static_cast<std::size_t>(b)];
            blk.input = std::move(u);
            blk.phase_a = std::move(phase_a);
            blk.hidden = std::move(hidden);
            blk.phase_b = std::move(phase_b);
            blk.mask = std::move(mask);
        }
        u = std::move(next);
    }

    const int last = params.final_layer();
    RowVector<Scalar> out = params.weight(last) * u;
    out.array() += params.bias(last)(0);

    if (tape) {
        tape->input = std::move(input);
        tape->phase0 = std::move(phase0);
        tape->output_features = std::move(u);
    }
    return out;
}

template <class Scalar>
void backward(const BasicParameterSet<Scalar>& params, const ActivationTape<Scalar>& tape,
              const RowRef<Scalar>& grad_output, BasicParameterSet<Scalar>& grads)
{
    using PS = BasicParameterSet<Scalar>;
    const auto& topo = params.topology();
    if (tape.batch != grad_output.cols() || tape.output_features.cols() != grad_output.cols() ||
        static_cast<int>(tape.blocks.size()) != topo.n_blocks ||
        tape.output_features.rows() != topo.hidden_width) {
        throw Error(ErrorCode::ShapeMismatch, "activation tape does not match this network/batch");
    }
    if (grads.size() != params.size() || !(grads.topology() == topo)) {
        grads = PS(topo);
    }
    const Scalar omega = static_cast<Scalar>(topo.omega0);

    const int last = params.final_layer();
    grads.bias(last)(0) = grad_output.sum();
    grads.weight(last).noalias() = grad_output * tape.output_features.transpose();
    Mat<Scalar> du = params.weight(last).transpose() * grad_output;

    for (int b = topo.n_blocks - 1; b >= 0; --b) {
        const auto& blk = tape.blocks[static_cast<std::size_t>(b)];
        const int la = PS::block_layer(b, 0);
        const int lb = PS::block_layer(b, 1);

        Mat<Scalar> dpre_b = du;
        if (blk.mask.size() != 0) {
            dpre_b.array() *= blk.mask.array();
        }
        dpre_b.array() *= omega * blk.phase_b.array().cos();
        grads.weight(lb).noalias() = dpre_b * blk.hidden.transpose();
        grads.bias(lb) = dpre_b.rowwise().sum();

        Mat<Scalar> dpre_a;
        dpre_a.noalias() = params.weight(lb).transpose() * dpre_b;
        dpre_a.array() *= omega * blk.phase_a.array().cos();
        grads.weight(la).noalias() = dpre_a * blk.input.transpose();
        grads.bias(la) = dpre_a.rowwise().sum();

        du.noalias() += params.weight(la).transpose() * dpre_a;
    }

    du.array() *= omega * tape.phase0.array().cos();
    grads.weight(PS::first_layer()).noalias() = du * tape.input.transpose();
    grads.bias(PS::first_layer()) = du.rowwise().sum();
}

template <class Scalar>
BasicParameterSet<Scalar> backward(const BasicParameterSet<Scalar>& params,
                                   const ActivationTape<Scalar>& tape,
                                   const RowRef<Scalar>& grad_output)
{
    BasicParameterSet<Scalar> grads(params.topology());
    backward(params, tape, grad_output, grads);
    return grads;
}

template RowVector<float> forward(const BasicParameterSet<float>&,
                                  const CoordRef<float>&, const DropoutState&,
                                  ActivationTape<float>*);
template RowVector<double> forward(const BasicParameterSet<double>&,
                                   const CoordRef<double>&, const DropoutState&,
                                   ActivationTape<double>*);
template void backward(const BasicParameterSet<float>&, const ActivationTape<float>&,
                       const RowRef<float>&, BasicParameterSet<float>&);
template void backward(const BasicParameterSet<double>&, const ActivationTape<double>&,
                       const RowRef<double>&, BasicParameterSet<double>&);
template BasicParameterSet<float> backward(const BasicParameterSet<float>&,
                                           const ActivationTape<float>&,
                                           const RowRef<float>&);
template BasicParameterSet<double> backward(const BasicParameterSet<double>&,
                                            const ActivationTape<double>&,
                                            const RowRef<double>&);

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr std::string_view kMagic = "UQVOLCK1";
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path)
{
    const auto& params = checkpoint.params;
    json manifest = {{"format_version", kCheckpointFormatVersion},
                     {"topology", to_json(params.topology())},
                     {"seed", checkpoint.seed},
                     {"parameter_count", params.size()},
                     {"blob_bytes", params.size() * sizeof(float)},
                     {"training", checkpoint.training}};
    if (checkpoint.normalizer) {
        manifest["normalizer"] = {{"src_min", checkpoint.normalizer->src_min},
                                  {"src_max", checkpoint.normalizer->src_max}};
    }
    const std::string text = manifest.dump();

    std::vector<char> out(kMagic.begin(), kMagic.end());
    detail::append_u32_le(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    const auto blob = detail::to_le_bytes({params.flat().data(), params.size()});
    out.insert(out.end(), blob.begin(), blob.end());
    detail::write_file(path, std::string_view(out.data(), out.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    const auto bytes = detail::read_file(path);
    const std::string where = "checkpoint '" + path.string() + "'";
    if (bytes.size() < kMagic.size() + 4 ||
        std::string_view(bytes.data(), kMagic.size()) != kMagic) {
        throw Error(ErrorCode::FormatMismatch, where + " has no checkpoint header");
    }
    const std::size_t manifest_len = detail::read_u32_le(bytes.data() + kMagic.size());
    const std::size_t blob_start = kMagic.size() + 4 + manifest_len;
    if (blob_start > bytes.size()) {
        throw Error(ErrorCode::FormatMismatch, where + " manifest is truncated");
    }

    Checkpoint ck;
    json manifest;
    try {
        manifest = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(kMagic.size() + 4),
                               bytes.begin() + static_cast<std::ptrdiff_t>(blob_start));
        if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion) {
            throw Error(ErrorCode::FormatMismatch, where + " has unsupported format_version");
        }
        ck.params = ParameterSet(topology_from_json(manifest.at("topology")));
        ck.seed = manifest.value("seed", std::uint64_t{0});
        if (manifest.contains("normalizer")) {
            const auto& n = manifest.at("normalizer");
            ck.normalizer = Normalizer{n.at("src_min").get<double>(), n.at("src_max").get<double>()};
        }
        ck.training = manifest.value("training", json::object());
    } catch (const json::exception& e) {
        throw Error(ErrorCode::FormatMismatch, where + " manifest is invalid: " + e.what());
    }

    const std::size_t blob_bytes = bytes.size() - blob_start;
    const std::size_t expected = ck.params.size() * sizeof(float);
    if (blob_bytes != expected || manifest.value("parameter_count", std::size_t{0}) != ck.params.size()) {
        throw Error(ErrorCode::FormatMismatch,
                    where + " blob holds " + std::to_string(blob_bytes) + " bytes, manifest implies " +
                        std::to_string(expected));
    }
    const auto values = detail::from_le_bytes(
        std::span<const char>(bytes.data() + blob_start, blob_bytes));
    std::copy(values.begin(), values.end(), ck.params.flat().data());
    for (float v : values) {
        if (!std::isfinite(v)) {
            throw Error(ErrorCode::NonFiniteValue, where + " contains non-finite parameters");
        }
    }
    return ck;
}

}  // namespace uqvol
