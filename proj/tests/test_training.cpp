#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "tempsr/baselines.hpp"
#include "tempsr/error.hpp"
#include "tempsr/metrics.hpp"
#include "tempsr/training.hpp"
#include "test_util.hpp"

using namespace tempsr;
using nn::Tensor;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.stages = parse_stages("simple:8:2:1,mbconv:8:2:1");
    c.stem_channels = 8;
    c.head_channels = 8;
    return c;
}

std::vector<TripletSample> synth_samples(std::size_t events, std::uint32_t size, std::uint64_t seed) {
    std::vector<TripletSample> out;
    for (std::size_t i = 0; i < events; ++i) {
        SynthConfig c;
        c.height = c.width = size;
        c.cell_sigma = 2.0;
        c.n_cells = 2;
        c.frames = 5;
        c.seed = seed + i;
        RainEvent e = synth_event(c);
        e.event_id = "e" + std::to_string(i);
        for (auto& t : make_triplets(e)) out.push_back(std::move(t));
    }
    return out;
}

// One-parameter tensor carrying gradient g.
Tensor scalar_param(float w, float g) {
    Tensor t = Tensor::from_values({1}, {w}, true);
    t.mutable_grad()[0] = g;
    return t;
}

}  // namespace

TEST(MaeLoss, Examples) {
    Tensor a = Tensor::from_values({2}, {0.0f, 2.0f});
    EXPECT_EQ(mae_loss(a, a).item(), 0.0f);
    EXPECT_FLOAT_EQ(mae_loss(nn::scale(a, 1.0f), Tensor::from_values({2}, {1.0f, 0.0f})).item(), 1.5f);
    Tensor b = Tensor::from_values({2}, {1.0f, 3.0f});
    EXPECT_EQ(mae_loss(b, a).item(), 1.0f);
    EXPECT_THROW(mae_loss(a, Tensor::zeros({3})), std::invalid_argument);
}

TEST(MaeLoss, NonNegativeAndZeroOnlyAtEquality) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> u(-3.0f, 3.0f);
    for (int i = 0; i < 100; ++i) {
        std::vector<float> p(10), t(10);
        for (auto& v : p) v = u(rng);
        t = p;
        EXPECT_EQ(mae_loss(Tensor::from_values({10}, p), Tensor::from_values({10}, t)).item(), 0.0f);
        t[rng() % 10] += 0.5f;
        EXPECT_GT(mae_loss(Tensor::from_values({10}, p), Tensor::from_values({10}, t)).item(), 0.0f);
    }
}

TEST(MaeLoss, GradientIsSignOverCount) {
    Tensor p = Tensor::from_values({4}, {1, 2, 3, 4}, true);
    Tensor t = Tensor::from_values({4}, {0, 2, 5, 4});
    nn::backward(mae_loss(p, t));
    EXPECT_EQ(std::vector<float>(p.grad().begin(), p.grad().end()), (std::vector<float>{0.25f, 0.0f, -0.25f, 0.0f}));
}

TEST(RAdam, RhoClosedForm) {
    const double b2 = 0.999, rho_inf = 2.0 / (1.0 - b2) - 1.0;
    for (int t = 1; t <= 10; ++t) {
        const double b2t = std::pow(b2, t);
        EXPECT_NEAR(radam_rho(t, b2), rho_inf - 2.0 * t * b2t / (1.0 - b2t), 1e-9);
    }
    for (int t = 1; t <= 4; ++t) EXPECT_LE(radam_rho(t, b2), 4.0) << t;
    EXPECT_GT(radam_rho(5, b2), 4.0);
}

TEST(RAdam, EarlyStepsAreUnadapted) {
    // With a constant gradient g the bias-corrected first moment equals g, so
    // the first four updates are exactly lr * g.
    const float g = 0.3f;
    Tensor w = scalar_param(1.0f, g);
    OptimizerState s;
    std::vector<Tensor> params{w};
    double expected = 1.0;
    for (int t = 1; t <= 4; ++t) {
        radam_step(params, s);
        expected -= s.lr * g;
        EXPECT_NEAR(w.values()[0], expected, 1e-7) << t;
    }
}

TEST(RAdam, AdaptiveStepUsesRectifier) {
    // Constant gradient: m_hat = g and sqrt(v_hat) = |g|, so step t moves by lr * r_t.
    const float g = 2.0f;
    Tensor w = scalar_param(0.0f, g);
    OptimizerState s;
    std::vector<Tensor> params{w};
    for (int t = 1; t <= 4; ++t) radam_step(params, s);
    const double before = w.values()[0];
    radam_step(params, s);
    const double r5 = radam_rectifier(5, 0.999);
    EXPECT_NEAR(before - w.values()[0], s.lr * r5 * g / (g + s.eps), 1e-6);
}

TEST(RAdam, ZeroGradientWithZeroMomentumIsIdentity) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor w = scalar_param(float(rng() % 100) * 0.1f, 0.0f);
        OptimizerState s;
        s.step = std::int64_t(rng() % 50);
        s.m = {{0.0f}};
        s.v = {{float(rng() % 10) * 0.01f}};
        std::vector<Tensor> params{w};
        const float before = w.values()[0];
        for (int k = 0; k < 5; ++k) radam_step(params, s);
        EXPECT_EQ(w.values()[0], before);
    }
}

TEST(RAdam, QuadraticDescendsMonotonically) {
    Tensor w = Tensor::from_values({1}, {1.0f}, true);
    OptimizerState s;
    std::vector<Tensor> params{w};
    double prev = 1.0;
    for (int t = 0; t < 200; ++t) {
        w.zero_grad();
        nn::backward(nn::sum(nn::mul(w, w)));
        radam_step(params, s);
        const double now = w.values()[0];
        ASSERT_LT(now, prev) << "step " << t;
        ASSERT_GT(now, 0.0);
        prev = now;
    }
}

TEST(RAdam, NonFiniteGradientLeavesEverythingUntouched) {
    Tensor a = scalar_param(1.0f, 0.5f), b = scalar_param(2.0f, std::numeric_limits<float>::quiet_NaN());
    OptimizerState s;
    std::vector<Tensor> params{a, b};
    EXPECT_THROW(radam_step(params, s), NumericError);
    EXPECT_EQ(a.values()[0], 1.0f);
    EXPECT_EQ(b.values()[0], 2.0f);
    EXPECT_EQ(s.step, 0);
    EXPECT_TRUE(s.m.empty());
}

TEST(Plateau, ImprovingKeepsRate) {
    SchedulerState s;
    double lr = 1e-3;
    for (double loss : {1.0, 0.9, 0.8}) lr = plateau_step(s, loss, lr);
    EXPECT_EQ(lr, 1e-3);
}

TEST(Plateau, FiresOnThirdNonImprovingEpoch) {
    SchedulerState s;
    double lr = 1e-3;
    std::vector<double> trace;
    for (double loss : {1.0, 1.0, 1.0, 1.0, 1.0}) trace.push_back(lr = plateau_step(s, loss, lr));
    EXPECT_EQ(trace[0], 1e-3);
    EXPECT_EQ(trace[1], 1e-3);
    EXPECT_EQ(trace[2], 1e-3);
    EXPECT_DOUBLE_EQ(trace[3], 1e-4);
    EXPECT_DOUBLE_EQ(trace[4], 1e-4);
}

TEST(Plateau, ImprovementBelowThresholdDoesNotCount) {
    SchedulerState s;
    double lr = 1.0;
    lr = plateau_step(s, 1.0, lr);
    for (int i = 0; i < 3; ++i) lr = plateau_step(s, 1.0 - 5e-6, lr);
    EXPECT_DOUBLE_EQ(lr, 0.1);
}

TEST(Plateau, FloorAtMinLr) {
    SchedulerState s;
    double lr = 1e-6;
    for (int i = 0; i < 10; ++i) lr = plateau_step(s, 1.0, lr);
    EXPECT_EQ(lr, 1e-6);
    SchedulerState t;
    double lr2 = 5e-7;  // already under the floor: never raised
    for (int i = 0; i < 10; ++i) lr2 = plateau_step(t, 1.0, lr2);
    EXPECT_EQ(lr2, 5e-7);
}

TEST(Plateau, RateNeverIncreases) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SchedulerState s;
    double lr = 1e-3;
    for (int i = 0; i < 500; ++i) {
        const double next = plateau_step(s, u(rng), lr);
        ASSERT_LE(next, lr);
        lr = next;
    }
}

TEST(Shuffle, IsSeededPermutation) {
    for (std::size_t n : {0u, 1u, 2u, 17u, 200u}) {
        const auto a = shuffled_indices(n, 9);
        EXPECT_EQ(a, shuffled_indices(n, 9));
        EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), n);
        for (std::size_t i : a) EXPECT_LT(i, n);
    }
    EXPECT_NE(shuffled_indices(50, 1), shuffled_indices(50, 2));
}

TEST(Fit, DeterministicAcrossRuns) {
    const auto train = synth_samples(3, 8, 10), valid = synth_samples(1, 8, 50);
    TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.batch_size = 4;
    cfg.seed = 5;
    std::ostringstream log_a, log_b;
    Model a = Model::build(small_config(), 1), b = Model::build(small_config(), 1);
    write_training_log_csv(fit(a, train, valid, cfg), log_a);
    write_training_log_csv(fit(b, train, valid, cfg), log_b);
    EXPECT_EQ(log_a.str(), log_b.str());
    EXPECT_EQ(log_a.str().substr(0, 29), "epoch,train_mae,valid_mae,lr\n");
}

TEST(Fit, MicroBatchingMatchesWholeBatch) {
    const auto train = synth_samples(2, 8, 20);
    TrainConfig cfg;
    cfg.max_epochs = 2;
    cfg.batch_size = 6;
    cfg.shuffle = false;
    Model a = Model::build(small_config(), 2), b = Model::build(small_config(), 2);
    const auto la = fit(a, train, {}, cfg);
    cfg.micro_batch = 2;
    const auto lb = fit(b, train, {}, cfg);
    ASSERT_EQ(la.epochs.size(), lb.epochs.size());
    for (std::size_t i = 0; i < la.epochs.size(); ++i) EXPECT_NEAR(la.epochs[i].train_mae, lb.epochs[i].train_mae, 1e-4);
    for (std::size_t p = 0; p < a.parameters().size(); ++p) {
        const auto va = a.parameters()[p].values(), vb = b.parameters()[p].values();
        for (std::size_t i = 0; i < va.size(); ++i) ASSERT_NEAR(va[i], vb[i], 1e-4);
    }
}

TEST(Fit, EmptyValidationFallsBackToTrainLoss) {
    const auto train = synth_samples(1, 8, 30);
    TrainConfig cfg;
    cfg.max_epochs = 2;
    Model m = Model::build(small_config(), 3);
    const auto log = fit(m, train, {}, cfg);
    for (const auto& r : log.epochs) EXPECT_EQ(r.valid_mae, r.train_mae);
}

TEST(Fit, OverfitsSingleTriplet) {
    const auto all = synth_samples(1, 8, 40);
    const std::vector<TripletSample> one{all[1]};
    const double nearest = mae_map(nearest_frame(one[0]), one[0].target);
    ASSERT_GT(nearest, 0.0);
    TrainConfig cfg;
    cfg.max_epochs = 200;
    cfg.batch_size = 1;
    Model m = Model::build(small_config(), 4);
    const auto log = fit(m, one, {}, cfg);
    EXPECT_LT(log.best_valid_mae, 0.1 * nearest) << "nearest-frame MAE " << nearest;
    EXPECT_LT(evaluate_mae(m, one), 0.1 * nearest);
}

TEST(Fit, LrSequenceNonIncreasingAndCheckpointWritten) {
    const auto train = synth_samples(2, 8, 60), valid = synth_samples(1, 8, 70);
    TrainConfig cfg;
    cfg.max_epochs = 6;
    cfg.lr = 3e-2;  // large enough to plateau quickly
    cfg.plateau_patience = 1;
    const auto dir = tempsr::testing::scratch_dir("fit_ckpt");
    cfg.checkpoint_path = dir / "m.ckpt";
    Model m = Model::build(small_config(), 5);
    const auto log = fit(m, train, valid, cfg);
    for (std::size_t i = 1; i < log.epochs.size(); ++i) EXPECT_LE(log.epochs[i].lr, log.epochs[i - 1].lr);
    const CheckpointBundle b = load_checkpoint(*cfg.checkpoint_path);
    EXPECT_EQ(std::stoul(b.metadata.at("train.epoch")), log.best_epoch);
    EXPECT_DOUBLE_EQ(std::stod(b.metadata.at("train.valid_mae")), log.best_valid_mae);
    const Model back = Model::load(b, small_config());
    EXPECT_DOUBLE_EQ(evaluate_mae(back, valid), log.best_valid_mae);
}

TEST(Fit, NonFiniteLossReportsContext) {
    auto train = synth_samples(1, 8, 80);
    train[0].before.values[0] = std::numeric_limits<float>::quiet_NaN();
    TrainConfig cfg;
    cfg.max_epochs = 1;
    cfg.shuffle = false;
    Model m = Model::build(small_config(), 6);
    try {
        fit(m, train, {}, cfg);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 1, batch 0"), std::string::npos) << e.what();
    }
}

TEST(Fit, RejectsEmptyTrainingSet) {
    Model m = Model::build(small_config(), 0);
    EXPECT_THROW(fit(m, {}, {}, TrainConfig{}), DataError);
}
