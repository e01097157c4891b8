#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <type_traits>
#include <vector>

#include "uqvol/volume.hpp"

namespace uqvol {

enum class DropoutPlacement { None, LastTwo, LastHalf, All };

const char* to_string(DropoutPlacement placement) noexcept;
DropoutPlacement parse_dropout_placement(const std::string& name);

/// Sine-activated residual MLP layout. Each residual block holds two
/// affine+sine layers and an identity skip around them.
struct FieldTopology {
    int in_dim = 3;
    int hidden_width = 50;
    int n_blocks = 10;
    double omega0 = 30.0;
    /// Blocks whose second sine output passes through a dropout mask.
    std::vector<int> dropout_blocks{8, 9};

    static FieldTopology make(int in_dim, int hidden_width, int n_blocks,
                              DropoutPlacement placement = DropoutPlacement::LastTwo,
                              double omega0 = 30.0);

    void validate() const;
    bool has_dropout(int block) const noexcept;

    /// first + 2 per block + final
    int layer_count() const noexcept { return 2 * n_blocks + 2; }
    std::size_t parameter_count() const noexcept;

    friend bool operator==(const FieldTopology&, const FieldTopology&) = default;
};

nlohmann::json to_json(const FieldTopology& topology);
FieldTopology topology_from_json(const nlohmann::json& j);

struct LayerShape {
    int rows = 0;  // outputs
    int cols = 0;  // inputs
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
};

/// All weights and biases of a field network stored in one contiguous
/// buffer. Weight matrices are column-major `rows x cols` views into it.
/// The same type doubles as the gradient container.
template <class Scalar>
class BasicParameterSet {
public:
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    using MatrixMap = Eigen::Map<Matrix>;
    using ConstMatrixMap = Eigen::Map<const Matrix>;
    using VectorMap = Eigen::Map<Vector>;
    using ConstVectorMap = Eigen::Map<const Vector>;

    BasicParameterSet() = default;
    /// Zero-filled parameters for `topology`.
    explicit BasicParameterSet(FieldTopology topology);

    const FieldTopology& topology() const noexcept { return topology_; }
    int layer_count() const noexcept { return static_cast<int>(shapes_.size()); }
    const LayerShape& shape(int layer) const { return shapes_.at(layer); }

    static int first_layer() noexcept { return 0; }
    static int block_layer(int block, int which) noexcept { return 1 + 2 * block + which; }
    int final_layer() const noexcept { return layer_count() - 1; }

    MatrixMap weight(int layer);
    ConstMatrixMap weight(int layer) const;
    VectorMap bias(int layer);
    ConstVectorMap bias(int layer) const;

    Vector& flat() noexcept { return flat_; }
    const Vector& flat() const noexcept { return flat_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(flat_.size()); }

    void set_zero() { flat_.setZero(); }

    template <class Other>
    BasicParameterSet<Other> cast() const
    {
        BasicParameterSet<Other> out(topology_);
        out.flat() = flat_.template cast<Other>();
        return out;
    }

private:
    FieldTopology topology_{};
    std::vector<LayerShape> shapes_;
    Vector flat_;
};

using ParameterSet = BasicParameterSet<float>;

enum class DropoutMode { Off, Train, McInference };

/// Dropout masks are a pure function of (seed, sample index, block, unit),
/// so masks do not depend on how coordinates are batched.
struct DropoutState {
    double rate = 0.0;
    DropoutMode mode = DropoutMode::Off;
    std::uint64_t seed = 0;
    /// Global index of the first column of the batch.
    std::uint64_t sample_offset = 0;

    bool active() const noexcept { return mode != DropoutMode::Off && rate > 0.0; }
    void validate() const;
};

/// Keep decision for one unit. Exposed for testing mask statistics.
bool dropout_keeps(const DropoutState& state, std::uint64_t sample, int block, int unit) noexcept;

/// Intermediate values recorded by `forward` for the reverse pass.
template <class Scalar>
struct ActivationTape {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    struct Block {
        Matrix input;    // u
        Matrix phase_a;  // omega * (W_a u + b_a)
        Matrix hidden;   // sin(phase_a)
        Matrix phase_b;  // omega * (W_b z + b_b)
        Matrix mask;     // empty when the block has no active dropout
    };
    Matrix input;
    Matrix phase0;
    std::vector<Block> blocks;
    Matrix output_features;  // u after the last block
    Eigen::Index batch = 0;
};

template <class Scalar>
using CoordMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
// Non-deduced reference parameters so plain matrices bind without casts.
template <class Scalar>
using CoordRef = Eigen::Ref<const CoordMatrix<std::type_identity_t<Scalar>>>;
template <class Scalar>
using RowRef = Eigen::Ref<const RowVector<std::type_identity_t<Scalar>>>;

/// SIREN initialization: first layer U(-1/d, 1/d), later layers
/// U(-sqrt(6/h)/omega0, sqrt(6/h)/omega0), zero biases.
ParameterSet init_params(const FieldTopology& topology, std::uint64_t seed);

/// Evaluates the network on a `in_dim x batch` coordinate matrix. When
/// `tape` is non-null it is filled for `backward`.
template <class Scalar>
RowVector<Scalar> forward(const BasicParameterSet<Scalar>& params,
                          const CoordRef<Scalar>& coords,
                          const DropoutState& dropout, ActivationTape<Scalar>* tape = nullptr);

/// Accumulates nothing: `grads` is overwritten with d(loss)/d(params)
/// given d(loss)/d(output) for every batch column.
template <class Scalar>
void backward(const BasicParameterSet<Scalar>& params, const ActivationTape<Scalar>& tape,
              const RowRef<Scalar>& grad_output,
              BasicParameterSet<Scalar>& grads);

template <class Scalar>
BasicParameterSet<Scalar> backward(const BasicParameterSet<Scalar>& params,
                                   const ActivationTape<Scalar>& tape,
                                   const RowRef<Scalar>& grad_output);

/// A persisted model: parameters plus what is needed to map outputs back
/// to data units.
struct Checkpoint {
    ParameterSet params;
    std::uint64_t seed = 0;
    std::optional<Normalizer> normalizer;
    nlohmann::json training = nlohmann::json::object();
};

inline constexpr int kCheckpointFormatVersion = 1;

/// Layout: 8-byte magic "UQVOLCK1", u32 LE manifest length, JSON manifest,
/// float32 LE parameter blob.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace uqvol
