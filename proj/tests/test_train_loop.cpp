#include <gtest/gtest.h>

#include "bakeoff/train_loop.hpp"

using namespace bakeoff;

namespace {

// Scripted model: validation losses come from a fixed sequence and the
// parameter vector records the epoch, so restoration is directly observable.
struct ScriptedModel {
    std::vector<double> script;
    std::size_t epoch = 0;
    std::vector<double> p{0.0};

    std::vector<double>& params() { return p; }
    double run_epoch(Rng&) {
        ++epoch;
        p[0] = double(epoch);
        return 1.0;
    }
    double validation_loss() { return script.at(epoch - 1); }
};

} // namespace

TEST(EarlyStopper, PatienceOneStopsOnFirstFlatEpoch) {
    // losses [3, 2, 2]: stops at epoch 3, best is epoch 2
    EarlyStopper s(1);
    EXPECT_TRUE(s.observe(3.0));
    EXPECT_FALSE(s.should_stop());
    EXPECT_TRUE(s.observe(2.0));
    EXPECT_FALSE(s.should_stop());
    EXPECT_FALSE(s.observe(2.0));  // not a strict improvement
    EXPECT_TRUE(s.should_stop());
    EXPECT_EQ(s.best_epoch(), 2u);
    EXPECT_DOUBLE_EQ(s.best_loss(), 2.0);
    EXPECT_EQ(s.epochs_seen(), 3u);
}

TEST(EarlyStopper, RequiresPositivePatience) {
    EXPECT_THROW(EarlyStopper(0), Error);
}

TEST(TrainIterative, WorseningAfterFirstEpochStopsAtPatiencePlusOne) {
    // strictly worsening from epoch 2 on, patience 100: stops after epoch 101
    // and hands back the epoch-1 parameters
    ScriptedModel m;
    m.script.resize(200);
    for (std::size_t e = 0; e < 200; ++e) m.script[e] = 1.0 + double(e);
    TrainOptions opts;
    opts.patience = 100;
    opts.max_epochs = 200;
    Rng rng(1);
    TrainTrace trace = train_iterative(m, opts, rng);

    EXPECT_EQ(trace.val_losses.size(), 101u);
    EXPECT_EQ(trace.best_epoch, 1u);
    EXPECT_DOUBLE_EQ(trace.best_val, 1.0);
    EXPECT_DOUBLE_EQ(m.p[0], 1.0);  // restored exactly
    EXPECT_FALSE(trace.hit_max_epochs);
}

TEST(TrainIterative, PatienceOneScriptedSequence) {
    ScriptedModel m;
    m.script = {3, 2, 2};
    TrainOptions opts;
    opts.patience = 1;
    opts.max_epochs = 10;
    Rng rng(1);
    TrainTrace trace = train_iterative(m, opts, rng);
    EXPECT_EQ(trace.val_losses.size(), 3u);  // stopped at epoch 3
    EXPECT_EQ(trace.best_epoch, 2u);
    EXPECT_DOUBLE_EQ(m.p[0], 2.0);  // epoch-2 parameters
}

TEST(TrainIterative, MonotonicImprovementHitsMaxEpochsWithFlag) {
    ScriptedModel m;
    m.script = {10, 9, 8, 7, 6, 5, 4, 3, 2, 1};
    TrainOptions opts;
    opts.patience = 100;
    opts.max_epochs = 10;
    Rng rng(1);
    TrainTrace trace = train_iterative(m, opts, rng);
    EXPECT_EQ(trace.val_losses.size(), 10u);
    EXPECT_TRUE(trace.hit_max_epochs);
    EXPECT_EQ(trace.best_epoch, 10u);
    EXPECT_DOUBLE_EQ(m.p[0], 10.0);
}

TEST(TrainIterative, NanValidationLossFailsTrial) {
    ScriptedModel m;
    m.script = {1.0, std::numeric_limits<double>::quiet_NaN()};
    TrainOptions opts;
    opts.patience = 5;
    opts.max_epochs = 5;
    Rng rng(1);
    EXPECT_THROW(train_iterative(m, opts, rng), TrialFailed);
}

TEST(Adam, DescendsASimpleQuadratic) {
    // minimize (p - 3)^2 with analytic gradient
    std::vector<double> p{0.0};
    AdamOptimizer adam;
    adam.lr = 0.1;
    for (int i = 0; i < 500; ++i) {
        std::vector<double> g{2.0 * (p[0] - 3.0)};
        adam.step(p, g);
    }
    EXPECT_NEAR(p[0], 3.0, 1e-3);
}

TEST(Adam, FixedLearningRateNoSchedule) {
    AdamOptimizer adam;
    adam.lr = 0.025;
    std::vector<double> p{1.0};
    std::vector<double> g{1.0};
    adam.step(p, g);
    EXPECT_DOUBLE_EQ(adam.lr, 0.025);  // nothing mutates the rate
    adam.step(p, g);
    EXPECT_DOUBLE_EQ(adam.lr, 0.025);
}
