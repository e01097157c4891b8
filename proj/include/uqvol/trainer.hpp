#pragma once

#include <cstdint>
#include <functional>
#include <json.hpp>
#include <vector>

#include "uqvol/neural_field.hpp"
#include "uqvol/volume.hpp"

namespace uqvol {

struct TrainConfig {
    int batch_size = 2048;
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double decay_factor = 0.8;
    int decay_step = 15;
    int epochs = 300;
    /// Dropout probability during training; 0 disables dropout entirely.
    double train_dropout = 0.001;
    std::uint64_t seed = 0;

    /// Teardrop runs use a stronger training dropout.
    static TrainConfig teardrop_preset();

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EnsembleSpec {
    int n_members = 10;
    std::uint64_t base_seed = 0;

    std::uint64_t member_seed(int index) const noexcept
    {
        return base_seed + static_cast<std::uint64_t>(index);
    }
    void validate() const;
};

struct TrainReport {
    std::vector<double> epoch_loss;  // mean normalized MSE per epoch
    double final_lr = 0.0;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
};

nlohmann::json to_json(const TrainReport& report);

struct TrainedModel {
    ParameterSet params;
    Normalizer normalizer;
    TrainReport report;

    Checkpoint to_checkpoint(const TrainConfig& config) const;
};

/// Step-decayed learning rate: lr * decay_factor^floor(epoch / decay_step).
double lr_at_epoch(const TrainConfig& config, int epoch);

/// Adam with bias correction over a flat parameter vector.
class AdamOptimizer {
public:
    AdamOptimizer(std::size_t size, double beta1, double beta2, double eps);

    void step(Eigen::Ref<Eigen::VectorXf> params, const Eigen::Ref<const Eigen::VectorXf>& grads,
              double lr);

    long steps() const noexcept { return steps_; }
    const Eigen::VectorXf& first_moment() const noexcept { return m_; }
    const Eigen::VectorXf& second_moment() const noexcept { return v_; }

private:
    double beta1_;
    double beta2_;
    double eps_;
    long steps_ = 0;
    Eigen::VectorXf m_;
    Eigen::VectorXf v_;
};

/// Lattice coordinates in [-1,1]^d as a `d x voxels` matrix, columns in
/// linear voxel order. For d = 2 the z axis must be flat.
CoordMatrix<float> lattice_coordinates(const GridGeometry& geometry, int in_dim);

/// Called after each epoch with (epoch index, mean loss).
using EpochCallback = std::function<void(int, double)>;

TrainedModel train_single(const Volume& volume, const FieldTopology& topology,
                          const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Members are trained independently with dropout disabled and seeds
/// `spec.member_seed(i)`. Members may run in parallel (UQVOL_THREADS).
std::vector<TrainedModel> train_ensemble(const Volume& volume, const FieldTopology& topology,
                                         const TrainConfig& config, const EnsembleSpec& spec,
                                         const EpochCallback& on_epoch = {});

}  // namespace uqvol
