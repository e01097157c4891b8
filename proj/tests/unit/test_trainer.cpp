#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "uqvol/error.hpp"
#include "uqvol/trainer.hpp"

using namespace uqvol;

TEST_CASE("default config")
{
    const TrainConfig c;
    CHECK(c.batch_size == 2048);
    CHECK(c.lr == 5e-5);
    CHECK(c.beta1 == 0.9);
    CHECK(c.beta2 == 0.999);
    CHECK(c.adam_eps == 1e-8);
    CHECK(c.decay_factor == 0.8);
    CHECK(c.decay_step == 15);
    CHECK(c.epochs == 300);
    CHECK(c.train_dropout == 0.001);
    CHECK(TrainConfig::teardrop_preset().train_dropout == 0.05);
    CHECK(EnsembleSpec{}.n_members == 10);
}

TEST_CASE("config validation")
{
    TrainConfig c;
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = TrainConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = TrainConfig{};
    c.decay_factor = 0.0;
    CHECK_THROWS_AS(c.validate(), Error);
    c.decay_factor = 1.5;
    CHECK_THROWS_AS(c.validate(), Error);
    c = TrainConfig{};
    c.train_dropout = 1.0;
    CHECK_THROWS_AS(c.validate(), Error);
    CHECK_THROWS_AS((EnsembleSpec{0, 0}.validate()), Error);

    const Volume v = testutil::constant_volume({4, 4, 4}, 1.0f);
    c = TrainConfig{};
    c.epochs = 0;
    CHECK_THROWS_AS(train_single(testutil::random_volume({4, 4, 4}, 1), FieldTopology::make(3, 4, 1), c), Error);
    try {
        train_single(v, FieldTopology::make(3, 4, 1), TrainConfig{});
        FAIL("constant volume trained");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DegenerateRange);
    }
}

TEST_CASE("config json round trip")
{
    TrainConfig c;
    c.epochs = 17;
    c.seed = 99;
    c.train_dropout = 0.05;
    const TrainConfig back = train_config_from_json(to_json(c));
    CHECK(back.epochs == 17);
    CHECK(back.seed == 99u);
    CHECK(back.train_dropout == 0.05);
    CHECK(to_json(back) == to_json(c));
}

TEST_CASE("learning-rate schedule")
{
    const TrainConfig c;
    CHECK(lr_at_epoch(c, 0) == 5e-5);
    CHECK(lr_at_epoch(c, 14) == 5e-5);
    CHECK(lr_at_epoch(c, 15) == doctest::Approx(4e-5).epsilon(1e-14));
    CHECK(lr_at_epoch(c, 299) == doctest::Approx(5e-5 * std::pow(0.8, 19)).epsilon(1e-14));
    double prev = lr_at_epoch(c, 0);
    for (int e = 1; e < c.epochs; ++e) {
        const double lr = lr_at_epoch(c, e);
        CHECK(lr <= prev);
        if (e % c.decay_step != 0) CHECK(lr == prev);
        else CHECK(lr < prev);
        prev = lr;
    }
}

TEST_CASE("Adam with zero gradient leaves parameters unchanged")
{
    AdamOptimizer adam(6, 0.9, 0.999, 1e-8);
    Eigen::VectorXf p(6);
    p << 1, -2, 3, 0.5f, 0, 7;
    const Eigen::VectorXf before = p;
    for (int i = 0; i < 5; ++i) adam.step(p, Eigen::VectorXf::Zero(6), 1e-3);
    CHECK(p == before);
    CHECK(adam.first_moment().cwiseAbs().maxCoeff() == 0.0f);
    CHECK(adam.second_moment().cwiseAbs().maxCoeff() == 0.0f);
    CHECK(adam.steps() == 5);
}

TEST_CASE("first Adam step moves each parameter by lr against the gradient sign")
{
    AdamOptimizer adam(3, 0.9, 0.999, 1e-8);
    Eigen::VectorXf p = Eigen::VectorXf::Zero(3);
    Eigen::VectorXf g(3);
    g << 2.0f, -0.5f, 1e-3f;
    adam.step(p, g, 0.01);
    // bias-corrected m/sqrt(v) = sign(g) on the first step
    CHECK(p[0] == doctest::Approx(-0.01).epsilon(1e-4));
    CHECK(p[1] == doctest::Approx(0.01).epsilon(1e-4));
    CHECK(p[2] == doctest::Approx(-0.01).epsilon(1e-3));
}

TEST_CASE("lattice coordinates span [-1, 1] in voxel order")
{
    GridGeometry g;
    g.dims = {3, 2, 5};
    const auto c = lattice_coordinates(g, 3);
    REQUIRE(c.rows() == 3);
    REQUIRE(c.cols() == 30);
    CHECK(c(0, 0) == -1.0f);
    CHECK(c(1, 0) == -1.0f);
    CHECK(c(2, 0) == -1.0f);
    const auto last = g.index(2, 1, 4);
    CHECK(c(0, last) == 1.0f);
    CHECK(c(1, last) == 1.0f);
    CHECK(c(2, last) == 1.0f);
    CHECK(c(2, g.index(0, 0, 2)) == 0.0f);
    CHECK(c(0, g.index(1, 0, 0)) == 0.0f);
}

TEST_CASE("small teardrop trains to low loss")
{
    const Volume v = generate_teardrop(8);
    TrainConfig c;
    c.epochs = 200;
    c.batch_size = 64;
    c.lr = 1e-4;
    c.train_dropout = 0.0;
    std::vector<double> seen;
    const auto m = train_single(v, FieldTopology::make(3, 16, 2), c, [&](int, double l) { seen.push_back(l); });
    REQUIRE(m.report.epoch_loss.size() == 200u);
    CHECK(seen == m.report.epoch_loss);
    for (double l : m.report.epoch_loss) {
        CHECK(std::isfinite(l));
        CHECK(l >= 0.0);
    }
    CHECK(m.report.epoch_loss.back() < 1e-2);
    CHECK(m.report.epoch_loss.back() < m.report.epoch_loss.front() / 10.0);
    CHECK(m.report.final_lr == doctest::Approx(lr_at_epoch(c, 199)));
    CHECK(m.normalizer.src_min == v.value_min());
    CHECK(m.normalizer.src_max == v.value_max());
}

TEST_CASE("training is reproducible for a fixed seed")
{
    const Volume v = generate_teardrop(6);
    TrainConfig c;
    c.epochs = 5;
    c.batch_size = 50;
    c.train_dropout = 0.05;
    c.seed = 3;
    const auto topo = FieldTopology::make(3, 8, 2);
    const auto a = train_single(v, topo, c);
    const auto b = train_single(v, topo, c);
    CHECK(a.params.flat() == b.params.flat());
    CHECK(a.report.epoch_loss == b.report.epoch_loss);
    c.seed = 4;
    CHECK(train_single(v, topo, c).params.flat() != a.params.flat());
}

TEST_CASE("one-member ensemble equals a dropout-free single model")
{
    const Volume v = generate_teardrop(6);
    TrainConfig c;
    c.epochs = 4;
    c.batch_size = 40;
    c.train_dropout = 0.05;
    c.seed = 11;
    const auto topo = FieldTopology::make(3, 8, 2);
    const auto members = train_ensemble(v, topo, c, EnsembleSpec{1, 11});
    REQUIRE(members.size() == 1u);
    TrainConfig plain = c;
    plain.train_dropout = 0.0;
    CHECK(members[0].params.flat() == train_single(v, topo, plain).params.flat());
    // the configured dropout really does change training
    CHECK(members[0].params.flat() != train_single(v, topo, c).params.flat());
}

TEST_CASE("ensemble members differ and use consecutive seeds")
{
    const Volume v = generate_teardrop(6);
    TrainConfig c;
    c.epochs = 3;
    c.batch_size = 40;
    const auto members = train_ensemble(v, FieldTopology::make(3, 8, 2), c, EnsembleSpec{3, 20});
    REQUIRE(members.size() == 3u);
    CHECK(members[0].report.seed == 20u);
    CHECK(members[1].report.seed == 21u);
    CHECK(members[2].report.seed == 22u);
    CHECK(members[0].params.flat() != members[1].params.flat());
    CHECK(members[1].params.flat() != members[2].params.flat());
}

TEST_CASE("divergence is reported")
{
    const Volume v = generate_teardrop(6);
    TrainConfig c;
    c.epochs = 3;
    c.lr = 1e30;
    try {
        train_single(v, FieldTopology::make(3, 8, 2), c);
        FAIL("expected divergence");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Divergence);
    }
}
