#include "uqvol/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <random>

#include "uqvol/error.hpp"
#include "uqvol/parallel.hpp"

namespace uqvol {

using nlohmann::json;

TrainConfig TrainConfig::teardrop_preset()
{
    TrainConfig c;
    c.train_dropout = 0.05;
    return c;
}

void TrainConfig::validate() const
{
    if (batch_size < 1) {
        throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
    }
    if (epochs < 1) {
        throw Error(ErrorCode::InvalidArgument, "epochs must be >= 1");
    }
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "decay_factor must lie in (0, 1]");
    }
    if (decay_step < 1) {
        throw Error(ErrorCode::InvalidArgument, "decay_step must be >= 1");
    }
    if (!(lr > 0.0) || !(adam_eps > 0.0)) {
        throw Error(ErrorCode::InvalidArgument, "lr and adam_eps must be positive");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "Adam betas must lie in [0, 1)");
    }
    if (!(train_dropout >= 0.0 && train_dropout < 1.0)) {
        throw Error(ErrorCode::InvalidArgument, "train_dropout must lie in [0, 1)");
    }
}

json to_json(const TrainConfig& c)
{
    return {{"batch_size", c.batch_size},     {"lr", c.lr},
            {"beta1", c.beta1},               {"beta2", c.beta2},
            {"adam_eps", c.adam_eps},         {"decay_factor", c.decay_factor},
            {"decay_step", c.decay_step},     {"epochs", c.epochs},
            {"train_dropout", c.train_dropout}, {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j)
{
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.decay_factor = j.value("decay_factor", c.decay_factor);
    c.decay_step = j.value("decay_step", c.decay_step);
    c.epochs = j.value("epochs", c.epochs);
    c.train_dropout = j.value("train_dropout", c.train_dropout);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

void EnsembleSpec::validate() const
{
    if (n_members < 1) {
        throw Error(ErrorCode::InvalidArgument, "ensemble needs at least one member");
    }
}

json to_json(const TrainReport& r)
{
    return {{"epoch_loss", r.epoch_loss},
            {"final_lr", r.final_lr},
            {"wall_seconds", r.wall_seconds},
            {"seed", r.seed}};
}

Checkpoint TrainedModel::to_checkpoint(const TrainConfig& config) const
{
    Checkpoint ck;
    ck.params = params;
    ck.seed = report.seed;
    ck.normalizer = normalizer;
    ck.training = {{"config", to_json(config)},
                   {"final_loss", report.epoch_loss.empty() ? 0.0 : report.epoch_loss.back()},
                   {"final_lr", report.final_lr},
                   {"epochs_run", report.epoch_loss.size()}};
    return ck;
}

double lr_at_epoch(const TrainConfig& config, int epoch)
{
    if (epoch < 0) {
        throw Error(ErrorCode::InvalidArgument, "epoch index must be non-negative");
    }
    return config.lr * std::pow(config.decay_factor, epoch / config.decay_step);
}

AdamOptimizer::AdamOptimizer(std::size_t size, double beta1, double beta2, double eps)
    : beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      m_(Eigen::VectorXf::Zero(static_cast<Eigen::Index>(size))),
      v_(Eigen::VectorXf::Zero(static_cast<Eigen::Index>(size)))
{
}

void AdamOptimizer::step(Eigen::Ref<Eigen::VectorXf> params,
                         const Eigen::Ref<const Eigen::VectorXf>& grads, double lr)
{
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match parameter count");
    }
    ++steps_;
    const float b1 = static_cast<float>(beta1_);
    const float b2 = static_cast<float>(beta2_);
    m_ = b1 * m_ + (1.0f - b1) * grads;
    v_ = b2 * v_ + (1.0f - b2) * grads.cwiseAbs2();
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    const float step_size = static_cast<float>(lr / bc1);
    const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
    const float eps = static_cast<float>(eps_);
    params.array() -= step_size * m_.array() / (v_.array().sqrt() * inv_sqrt_bc2 + eps);
}

CoordMatrix<float> lattice_coordinates(const GridGeometry& geometry, int in_dim)
{
    const auto& d = geometry.dims;
    if (in_dim == 2 && d[2] != 1) {
        throw Error(ErrorCode::ShapeMismatch, "2D fields need a flat z axis");
    }
    CoordMatrix<float> coords(in_dim, static_cast<Eigen::Index>(geometry.voxel_count()));
    for (int x = 0; x < d[0]; ++x) {
        for (int y = 0; y < d[1]; ++y) {
            for (int z = 0; z < d[2]; ++z) {
                const auto col = static_cast<Eigen::Index>(geometry.index(x, y, z));
                coords(0, col) = static_cast<float>(lattice_coordinate(x, d[0]));
                coords(1, col) = static_cast<float>(lattice_coordinate(y, d[1]));
                if (in_dim == 3) {
                    coords(2, col) = static_cast<float>(lattice_coordinate(z, d[2]));
                }
            }
        }
    }
    return coords;
}

namespace {

// Unbiased integer in [0, bound) via rejection; portable across standard
// libraries unlike std::uniform_int_distribution.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound)
{
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t r;
    do {
        r = rng();
    } while (r >= limit);
    return r % bound;
}

void shuffle(std::vector<std::uint32_t>& order, std::mt19937_64& rng)
{
    for (std::size_t i = order.size(); i > 1; --i) {
        const auto j = bounded(rng, i);
        std::swap(order[i - 1], order[j]);
    }
}

constexpr std::uint64_t kShuffleStream = 0x53485546464C45ull;  // "SHUFFLE"
constexpr std::uint64_t kDropoutStream = 0x44524F504F5554ull;  // "DROPOUT"

}  // namespace

TrainedModel train_single(const Volume& volume, const FieldTopology& topology,
                          const TrainConfig& config, const EpochCallback& on_epoch)
{
    config.validate();
    topology.validate();
    const auto started = std::chrono::steady_clock::now();

    const Normalizer normalizer = make_normalizer(volume);
    const CoordMatrix<float> coords = lattice_coordinates(volume.geometry(), topology.in_dim);
    const auto n = static_cast<std::size_t>(coords.cols());
    std::vector<float> targets(n);
    for (std::size_t i = 0; i < n; ++i) {
        targets[i] = static_cast<float>(normalizer.apply(volume[i]));
    }

    ParameterSet params = init_params(topology, config.seed);
    ParameterSet grads(topology);
    AdamOptimizer adam(params.size(), config.beta1, config.beta2, config.adam_eps);
    ActivationTape<float> tape;

    std::mt19937_64 shuffle_rng(config.seed ^ kShuffleStream);
    std::mt19937_64 dropout_rng(config.seed ^ kDropoutStream);
    std::vector<std::uint32_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = static_cast<std::uint32_t>(i);
    }

    DropoutState dropout;
    dropout.rate = config.train_dropout;
    dropout.mode = config.train_dropout > 0.0 ? DropoutMode::Train : DropoutMode::Off;

    const auto batch_cap = static_cast<std::size_t>(config.batch_size);
    CoordMatrix<float> batch_coords(topology.in_dim, static_cast<Eigen::Index>(batch_cap));
    RowVector<float> batch_targets(static_cast<Eigen::Index>(batch_cap));

    TrainReport report;
    report.seed = config.seed;
    report.epoch_loss.reserve(static_cast<std::size_t>(config.epochs));

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = lr_at_epoch(config, epoch);
        shuffle(order, shuffle_rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += batch_cap) {
            const std::size_t count = std::min(batch_cap, n - start);
            const auto cols = static_cast<Eigen::Index>(count);
            batch_coords.resize(topology.in_dim, cols);
            batch_targets.resize(cols);
            for (std::size_t k = 0; k < count; ++k) {
                const auto src = order[start + k];
                batch_coords.col(static_cast<Eigen::Index>(k)) = coords.col(src);
                batch_targets(static_cast<Eigen::Index>(k)) = targets[src];
            }
            if (dropout.active()) {
                dropout.seed = dropout_rng();
            }

            const RowVector<float> pred = forward(params, batch_coords, dropout, &tape);
            const RowVector<float> residual = pred - batch_targets;
            const double batch_loss = static_cast<double>(residual.squaredNorm()) / count;
            if (!std::isfinite(batch_loss)) {
                throw Error(ErrorCode::Divergence,
                            "non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                                std::to_string(start));
            }
            loss_sum += batch_loss * static_cast<double>(count);

            const RowVector<float> grad_out = residual * (2.0f / static_cast<float>(count));
            backward(params, tape, grad_out, grads);
            adam.step(params.flat(), grads.flat(), lr);
        }
        report.epoch_loss.push_back(loss_sum / static_cast<double>(n));
        report.final_lr = lr;
        if (on_epoch) {
            on_epoch(epoch, report.epoch_loss.back());
        }
    }

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return TrainedModel{std::move(params), normalizer, std::move(report)};
}

std::vector<TrainedModel> train_ensemble(const Volume& volume, const FieldTopology& topology,
                                         const TrainConfig& config, const EnsembleSpec& spec,
                                         const EpochCallback& on_epoch)
{
    spec.validate();
    TrainConfig member_config = config;
    member_config.train_dropout = 0.0;
    member_config.validate();

    std::vector<TrainedModel> members(static_cast<std::size_t>(spec.n_members));
    parallel_for(members.size(), [&](std::size_t i) {
        TrainConfig c = member_config;
        c.seed = spec.member_seed(static_cast<int>(i));
        try {
            // Progress is only reported for serial runs to keep callbacks ordered.
            members[i] = train_single(volume, topology, c, worker_count() == 1 ? on_epoch : EpochCallback{});
        } catch (const Error& e) {
            throw Error(e.code(), "ensemble member " + std::to_string(i) + ": " + e.what());
        }
    });
    return members;
}

}  // namespace uqvol
