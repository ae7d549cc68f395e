// SPDX-License-Identifier: Apache-2.0
#include "nopkit/error.hpp"
#include "nopkit/training.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace nopkit;
using nopkit::testing::random_real;

namespace {

constexpr double kPi = std::numbers::pi;

// Field f(x) sampled on [0, 1) as [1, s, 1].
RTensor field_1d(std::size_t s, const std::function<double(double)>& f) {
    RTensor t(Shape{1, s, 1});
    for (std::size_t i = 0; i < s; ++i) t[i] = f(static_cast<double>(i) / static_cast<double>(s));
    return t;
}

Dataset linear_dataset(std::size_t n, std::size_t s, double factor, std::uint64_t seed) {
    GrfSpec g = GrfSpec::burgers();
    Dataset ds;
    ds.inputs = RTensor(Shape{n, s, 1});
    for (std::size_t i = 0; i < n; ++i) {
        const std::vector<std::size_t> ext{s};
        const RTensor a = sample_grf(g, ext, seed + i);
        std::copy(a.storage().begin(), a.storage().end(), ds.inputs.data() + i * s);
    }
    ds.outputs = ds.inputs;
    for (auto& v : ds.outputs.values()) v *= factor;
    return ds;
}

FnoConfig small_linear_config() {
    FnoConfig cfg;
    cfg.d = 1;
    cfg.width = 8;
    cfg.layers = 1;
    cfg.modes = {8};
    cfg.projection_hidden = 16;
    cfg.activation = Activation::identity;
    return cfg;
}

double max_param_diff(FnoModel& a, FnoModel& b) {
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    double m = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i)
        for (std::size_t j = 0; j < pa[i].size; ++j) m = std::max(m, std::abs(pa[i].data[j] - pb[i].data[j]));
    return m;
}

} // namespace

TEST(Losses, RelL2Examples) {
    std::mt19937_64 gen(1);
    const RTensor t = random_real(Shape{3, 16, 1}, gen);
    EXPECT_EQ(rel_l2(t, t), 0.0);
    RTensor twice = t;
    for (auto& v : twice.values()) v *= 2.0;
    EXPECT_NEAR(rel_l2(twice, t), 1.0, 1e-15);

    // ||true|| = 4 and a unit-norm perturbation: 1 / 4.
    RTensor truth(Shape{1, 4, 1}, 2.0);
    RTensor pred = truth;
    pred[0] += 0.6;
    pred[3] -= 0.8;
    EXPECT_NEAR(rel_l2(pred, truth), 0.25, 1e-15);
}

TEST(Losses, ZeroTargetAndShapeErrors) {
    const RTensor z(Shape{2, 8, 1});
    RTensor p(Shape{2, 8, 1}, 1.0);
    EXPECT_THROW((void)rel_l2(p, z), ContractError);
    EXPECT_THROW((void)rel_h1(p, z), ContractError);
    EXPECT_THROW((void)rel_l2(p, RTensor(Shape{2, 4, 1}, 1.0)), ShapeError);
}

TEST(Losses, SobolevSingleModes) {
    const std::size_t s = 32;
    // Zero prediction of a sin(2 pi x): relative error 1 for any amplitude.
    for (double a : {0.1, 1.0, 37.0}) {
        const RTensor u = field_1d(s, [a](double x) { return a * std::sin(2 * kPi * x); });
        EXPECT_NEAR(rel_h1(RTensor(u.shape()), u), 1.0, 1e-14);
    }
    // Constant truth (weight 1) and a sin(2 pi x) error (weight 1 + 1): the squared
    // H1/L2 ratio of the errors is 2.
    const RTensor one = field_1d(s, [](double) { return 1.0; });
    const RTensor pert = field_1d(s, [](double x) { return 1.0 + 0.3 * std::sin(2 * kPi * x); });
    const double l2 = rel_l2(pert, one), h1 = rel_h1(pert, one);
    EXPECT_NEAR(h1 * h1 / (l2 * l2), 2.0, 1e-12);
    EXPECT_NEAR(l2, 0.3 / std::sqrt(2.0), 1e-14);

    // Error and truth on one shared frequency: H1 and L2 agree.
    const RTensor t3 = field_1d(s, [](double x) { return std::sin(6 * kPi * x); });
    RTensor p3 = t3;
    for (auto& v : p3.values()) v *= 1.3;
    EXPECT_NEAR(rel_h1(p3, t3), rel_l2(p3, t3), 1e-14);
    EXPECT_NEAR(rel_l2(p3, t3), 0.3, 1e-14);
}

TEST(Losses, SobolevWeightIn2d) {
    // Truth constant, error cos(2 pi (x + 2y)) with |k|^2 = 5: squared ratio 6.
    const std::size_t s = 16;
    RTensor truth(Shape{1, s, s, 1}, 1.0), pred(Shape{1, s, s, 1});
    for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < s; ++j)
            pred[i * s + j] = 1.0 + 0.5 * std::cos(2 * kPi * (static_cast<double>(i) + 2.0 * j) / s);
    const double l2 = rel_l2(pred, truth), h1 = rel_h1(pred, truth);
    EXPECT_NEAR(h1 * h1 / (l2 * l2), 6.0, 1e-12);
}

TEST(Losses, HomogeneityAndAgreementWithTapeLosses) {
    std::mt19937_64 gen(2);
    for (const Shape& sh : {Shape{4, 24, 1}, Shape{2, 8, 12, 2}}) {
        const RTensor p = random_real(sh, gen), t = random_real(sh, gen);
        for (double c : {-3.0, 0.5, 1e4}) {
            RTensor cp = p, ct = t;
            for (auto& v : cp.values()) v *= c;
            for (auto& v : ct.values()) v *= c;
            EXPECT_NEAR(rel_l2(cp, ct), rel_l2(p, t), 1e-13);
            EXPECT_NEAR(rel_h1(cp, ct), rel_h1(p, t), 1e-13);
        }
        ad::Tape tape;
        const auto v = tape.leaf(p);
        EXPECT_NEAR(ad::rel_l2_loss(v, t).real()[0], rel_l2(p, t), 1e-14);
        EXPECT_NEAR(ad::rel_h1_loss(v, t).real()[0], rel_h1(p, t), 1e-14);
    }
}

namespace {

struct ScalarParam {
    std::vector<double> value;
    std::vector<ParamView> views() { return {ParamView{"x", value.data(), value.size(), false, Shape{value.size()}}}; }
};

} // namespace

TEST(Adam, ZeroGradientOnlyDecays) {
    ScalarParam p{{2.0, -4.0}};
    AdamState st;
    const std::vector<std::vector<double>> g{{0.0, 0.0}};
    adam_step(p.views(), g, st, 0.1, 0.01);
    EXPECT_DOUBLE_EQ(p.value[0], 2.0 * (1.0 - 0.1 * 0.01));
    EXPECT_DOUBLE_EQ(p.value[1], -4.0 * (1.0 - 0.1 * 0.01));
}

TEST(Adam, FirstStepIsSignStep) {
    for (double g0 : {3.0, -0.02, 1e-3}) {
        ScalarParam p{{1.0}};
        AdamState st;
        const std::vector<std::vector<double>> g{{g0}};
        adam_step(p.views(), g, st, 1e-3, 0.0);
        // m_hat = g, v_hat = g^2 after bias correction.
        EXPECT_NEAR(p.value[0] - 1.0, -1e-3 * g0 / (std::abs(g0) + 1e-8), 1e-15);
        EXPECT_NEAR(p.value[0] - 1.0, -1e-3 * (g0 > 0 ? 1.0 : -1.0), 1e-8);
    }
}

TEST(Adam, TwoStepsOnQuadraticMatchHandTrace) {
    // f(x) = 0.5 a x^2, gradient a x.
    const double a = 3.0, lr = 0.05, wd = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ScalarParam p{{1.5}};
    AdamState st;
    double x = 1.5, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
        const double g = a * x;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
        x = x * (1 - lr * wd) - lr * mh / (std::sqrt(vh) + eps);

        const std::vector<std::vector<double>> grad{{a * p.value[0]}};
        adam_step(p.views(), grad, st, lr, wd);
        EXPECT_NEAR(p.value[0], x, 1e-12);
    }
    EXPECT_EQ(st.step, 2u);
}

TEST(Adam, ZeroLearningRateChangesNothing) {
    ScalarParam p{{0.7, -1.1, 3.0}};
    AdamState st;
    const std::vector<std::vector<double>> g{{1.0, -2.0, 0.5}};
    adam_step(p.views(), g, st, 0.0, 1e-4);
    EXPECT_EQ(p.value, (std::vector<double>{0.7, -1.1, 3.0}));
}

TEST(Adam, NonFiniteGradientNamesParameter) {
    ScalarParam p{{1.0, 2.0}};
    AdamState st;
    const std::vector<std::vector<double>> g{{1.0, std::nan("")}};
    try {
        adam_step(p.views(), g, st, 1e-3, 0.0);
        FAIL() << "expected OptimizerError";
    } catch (const OptimizerError& e) {
        EXPECT_NE(std::string(e.what()).find("'x'"), std::string::npos);
    }
    EXPECT_EQ(p.value, (std::vector<double>{1.0, 2.0}));
    EXPECT_EQ(st.step, 0u);
}

TEST(Schedule, StepDecay) {
    TrainConfig cfg;
    for (std::size_t e = 0; e < 500; ++e)
        EXPECT_EQ(cfg.lr_at(e), 1e-3 * std::pow(0.5, static_cast<double>(e / 100)));
    EXPECT_EQ(cfg.lr_at(99), 1e-3);
    EXPECT_EQ(cfg.lr_at(100), 5e-4);
    TrainConfig bad;
    bad.lr_factor = 1.5;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = TrainConfig{};
    bad.batch_size = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Metrics, CsvAndMonotoneEpochs) {
    MetricsLog log;
    log.append({1, 0.5, 0.4, 0.6, 1e-3, 0.1});
    log.append({2, 0.25, 0.2, 0.3, 1e-3, 0.2});
    EXPECT_THROW(log.append({2, 0.1, 0.1, 0.1, 1e-3, 0.3}), ContractError);
    const std::string csv = log.csv();
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_loss,test_l2,test_h1,lr,seconds");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Train, ZeroEpochsLeavesModelUnchanged) {
    FnoModel m(small_linear_config(), 4);
    FnoModel before = m;
    const Dataset ds = linear_dataset(8, 32, 3.0, 10);
    TrainConfig cfg;
    cfg.epochs = 0;
    const MetricsLog log = train(m, ds, Dataset{}, cfg);
    EXPECT_TRUE(log.empty());
    EXPECT_EQ(max_param_diff(m, before), 0.0);
}

TEST(Train, LearnsLinearOperator) {
    FnoConfig mc = small_linear_config();
    mc.projection_hidden = 32;
    FnoModel m(mc, 5);
    const Dataset ds = linear_dataset(200, 32, 3.0, 100);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 4;
    cfg.lr = 3e-2;
    cfg.lr_step = 6;
    cfg.weight_decay = 0.0;
    cfg.loss = LossKind::l2;
    const MetricsLog log = train(m, ds, Dataset{}, cfg);
    ASSERT_EQ(log.rows().size(), 50u);
    const EvalMetrics em = evaluate(m, ds);
    EXPECT_LE(em.rel_l2, 1e-3);
    EXPECT_LT(log.rows().back().train_loss, log.rows().front().train_loss);
}

TEST(Train, DeterministicAndShardInvariant) {
    const Dataset ds = linear_dataset(24, 32, -2.0, 300);
    const Dataset test = linear_dataset(6, 32, -2.0, 400);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.lr = 5e-3;
    cfg.seed = 17;
    const auto run = [&](std::size_t shards) {
        FnoModel m(small_linear_config(), 6);
        TrainConfig c = cfg;
        c.shards = shards;
        auto log = train(m, ds, test, c);
        return std::make_pair(log, m);
    };
    auto [la, ma] = run(1);
    auto [lb, mb] = run(1);
    ASSERT_EQ(la.rows().size(), lb.rows().size());
    for (std::size_t i = 0; i < la.rows().size(); ++i) {
        auto ra = la.rows()[i], rb = lb.rows()[i];
        ra.seconds = rb.seconds = 0.0;
        EXPECT_EQ(ra, rb);
    }
    EXPECT_EQ(max_param_diff(ma, mb), 0.0);

    auto [lc, mc] = run(3);
    auto [ld, md] = run(3);
    EXPECT_EQ(max_param_diff(mc, md), 0.0);
    EXPECT_LT(max_param_diff(ma, mc), 1e-9);

    // The last logged test metric is the evaluation of the final model.
    const EvalMetrics em = evaluate(ma, test);
    EXPECT_EQ(em.rel_l2, la.rows().back().test_l2);
    EXPECT_EQ(em.rel_h1, la.rows().back().test_h1);
}

TEST(Train, DifferentSeedsShuffleDifferently) {
    const Dataset ds = linear_dataset(24, 32, 1.5, 500);
    const auto run = [&](std::uint64_t seed) {
        FnoModel m(small_linear_config(), 6);
        TrainConfig c;
        c.epochs = 1;
        c.batch_size = 4;
        c.seed = seed;
        (void)train(m, ds, Dataset{}, c);
        return m;
    };
    FnoModel a = run(1), b = run(2);
    EXPECT_GT(max_param_diff(a, b), 0.0);
}

TEST(Train, NonFiniteLossReportsEpoch) {
    FnoModel m(small_linear_config(), 7);
    Dataset ds = linear_dataset(4, 32, 3.0, 600);
    ds.inputs[5] = std::nan("");
    TrainConfig cfg;
    cfg.epochs = 2;
    try {
        (void)train(m, ds, Dataset{}, cfg);
        FAIL() << "expected DivergenceError";
    } catch (const DivergenceError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
    }
}

TEST(Train, ChannelMismatch) {
    FnoConfig cfg = small_linear_config();
    cfg.in_channels = 2;
    FnoModel m(cfg, 8);
    TrainConfig tc;
    tc.epochs = 1;
    EXPECT_THROW((void)train(m, linear_dataset(4, 32, 1.0, 0), Dataset{}, tc), ShapeError);
}

TEST(Train, MultiGridLossOnStitchedField) {
    // u = 2a on a 16 x 16 grid with a 4-region plan: training on regions lowers
    // the stitched-field loss, and evaluation goes through the same plan.
    const std::size_t s = 16, n = 12;
    GrfSpec g = GrfSpec::navier_stokes();
    Dataset ds;
    ds.kind = PdeKind::navier_stokes;
    ds.inputs = RTensor(Shape{n, s, s, 1});
    for (std::size_t i = 0; i < n; ++i) {
        const std::vector<std::size_t> ext{s, s};
        const RTensor a = sample_grf(g, ext, 700 + i);
        std::copy(a.storage().begin(), a.storage().end(), ds.inputs.data() + i * s * s);
    }
    ds.outputs = ds.inputs;
    for (auto& v : ds.outputs.values()) v *= 2.0;

    MultiGridPlan plan;
    plan.d = 2;
    plan.grid_exponent = 4;
    plan.levels = 1;
    plan.padding = 2;
    FnoConfig mc;
    mc.d = 2;
    mc.in_channels = plan.channels_for(1);
    mc.width = 6;
    mc.layers = 1;
    mc.modes = {4, 4};
    mc.projection_hidden = 8;
    FnoModel m(mc, 9);
    TrainConfig tc;
    tc.epochs = 15;
    tc.batch_size = 4;
    tc.lr = 1e-2;
    tc.loss = LossKind::l2;
    const MetricsLog log = train(m, ds, ds, tc, &plan);
    EXPECT_LT(log.rows().back().train_loss, 0.5 * log.rows().front().train_loss);
    const RTensor pred = mg_inference(m, ds.inputs, plan);
    EXPECT_NEAR(rel_l2(pred, ds.outputs), log.rows().back().test_l2, 1e-13);

    FnoModel wrong(mc, 9);
    MultiGridPlan other = plan;
    other.grid_exponent = 5;
    EXPECT_THROW((void)train(wrong, ds, Dataset{}, tc, &other), PlanError);
}

TEST(Evaluate, ResamplingAcrossResolutions) {
    // A model that is exactly the identity (zero spectral weights, identity skip
    // path) has zero error at every resolution.
    FnoConfig cfg = small_linear_config();
    cfg.width = 2;
    cfg.projection_hidden = 2;
    FnoModel m(cfg, 10);
    for (auto& t : m.spectral().tensors()) t.fill(0.0);
    RTensor& lift = m.real_param("lift.weight");
    lift[0] = 1.0;
    lift[1] = 0.0;
    m.real_param("lift.bias").fill(0.0);
    m.real_param("block0.bias").fill(0.0);
    RTensor& q = m.real_param("block0.skip.weight");
    q.fill(0.0);
    q[0] = 1.0;
    RTensor& p1 = m.real_param("proj1.weight");
    p1.fill(0.0);
    p1[0] = 1.0;
    p1[2] = -1.0;
    m.real_param("proj1.bias").fill(0.0);
    RTensor& p2 = m.real_param("proj2.weight");
    p2[0] = 1.0;
    p2[1] = -1.0;
    m.real_param("proj2.bias").fill(0.0);

    const Dataset ds = linear_dataset(5, 32, 1.0, 800);
    const std::vector<std::size_t> res{32, 64, 16};
    const auto rows = evaluate(m, ds, res);
    ASSERT_EQ(rows.size(), 3u);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(rows[i].resolution, res[i]);
        EXPECT_LT(rows[i].rel_l2, 1e-14);
        EXPECT_LT(rows[i].rel_h1, 1e-14);
    }
}

TEST(Evaluate, RescaledPlan) {
    MultiGridPlan p;
    p.d = 2;
    p.grid_exponent = 6;
    p.levels = 1;
    p.padding = 4;
    const MultiGridPlan q = rescale_plan(p, 128);
    EXPECT_EQ(q.grid_exponent, 7u);
    EXPECT_EQ(q.padding, 8u);
    EXPECT_EQ(q.region_count(), p.region_count());
    EXPECT_THROW((void)rescale_plan(p, 96), PlanError);
}
