#include <gtest/gtest.h>

#include <cmath>

#include "driftlearn/stable.hpp"

using namespace driftlearn;

TEST(WindowError, PerfectPredictionIsZero) {
    const std::vector<Vec> p = {{1.0, 2.0}, {3.0, 4.0}};
    EXPECT_DOUBLE_EQ(window_error(p, p), 0.0);
}

TEST(WindowError, SingleAbsoluteDifference) {
    EXPECT_DOUBLE_EQ(window_error({{2.0}}, {{1.0}}), 1.0);
}

TEST(WindowError, EnumeratedFourTermCase) {
    // residuals {(1,-1),(0,2)}: (1+1+0+2)/4 = 1.0
    const std::vector<Vec> preds = {{1.0, -1.0}, {0.0, 2.0}};
    const std::vector<Vec> labels = {{0.0, 0.0}, {0.0, 0.0}};
    EXPECT_DOUBLE_EQ(window_error(preds, labels), 1.0);
}

TEST(Ema, FullReplacementAtLambdaOne) {
    EXPECT_DOUBLE_EQ(ema_update(0.4, 0.9, 1.0), 0.9);
}

TEST(Ema, FixedPoint) {
    EXPECT_DOUBLE_EQ(ema_update(0.35, 0.35, 0.6), 0.35);
}

TEST(Ema, OneStepRecurrence) {
    // lambda=0.6, prev=0, e=1 -> 0.6
    EXPECT_DOUBLE_EQ(ema_update(0.0, 1.0, 0.6), 0.6);
}

TEST(Ema, ConvexCombinationBounds) {
    Rng rng = Rng::seeded(5);
    double ema = 0.0;
    for (int i = 0; i < 200; ++i) {
        const double e = rng.uniform(0.0, 2.0);
        const double next = ema_update(ema, e, 0.6);
        EXPECT_LE(next, std::max(ema, e) + 1e-15);
        EXPECT_GE(next, std::min(ema, e) - 1e-15);
        ema = next;
    }
}

TEST(Trigger, FiresAfterConsecutiveExceedances) {
    StableConfig cfg;  // tau_e = 0.10, K_e = 2
    StableState st;
    EXPECT_FALSE(stable_trigger(0, 0.12, cfg, st));
    EXPECT_EQ(st.consecutive_exceed, 1);
    EXPECT_TRUE(stable_trigger(0, 0.12, cfg, st));
    EXPECT_EQ(st.consecutive_exceed, 0);  // firing resets the tally
}

TEST(Trigger, DriftStateResetsTally) {
    StableConfig cfg;
    StableState st;
    EXPECT_FALSE(stable_trigger(0, 0.12, cfg, st));
    EXPECT_FALSE(stable_trigger(1, 0.12, cfg, st));  // drift step resets
    EXPECT_EQ(st.consecutive_exceed, 0);
    EXPECT_FALSE(stable_trigger(0, 0.12, cfg, st));  // count restarts at 1
    EXPECT_EQ(st.consecutive_exceed, 1);
}

TEST(Trigger, NonConsecutiveNeverFires) {
    StableConfig cfg;
    StableState st;
    EXPECT_FALSE(stable_trigger(0, 0.12, cfg, st));
    EXPECT_FALSE(stable_trigger(0, 0.09, cfg, st));  // below threshold resets
    EXPECT_FALSE(stable_trigger(0, 0.12, cfg, st));
    EXPECT_EQ(st.consecutive_exceed, 1);
}

TEST(Trigger, NeverFiresUnderDrift) {
    StableConfig cfg;
    StableState st;
    for (int level = 1; level <= 3; ++level) {
        for (int i = 0; i < 5; ++i) EXPECT_FALSE(stable_trigger(level, 0.5, cfg, st));
    }
    EXPECT_EQ(st.consecutive_exceed, 0);
}

TEST(StableFinetune, HeadOnlyAndBudget) {
    RunConfig cfg;
    cfg.batch = 8;
    ModelDims d;
    d.F = 2;
    d.C = 3;
    d.L = 3;
    d.K = 1;
    ModelParams params = init_params(d, 11);
    const ModelParams before = params;

    AdaptationSet set;
    Rng rng = Rng::seeded(12);
    for (int i = 0; i < 20; ++i) {
        Mat w(d.F, d.L);
        for (double& v : w.data) v = rng.uniform(0.0, 1.0);
        set.entries.push_back({w, Vec{rng.uniform(-1.0, 1.0)}, i, SampleSource::kCurrentLabeled});
    }
    TrainOptions topt;
    topt.batch = cfg.batch;
    topt.h_seq = cfg.h_seq;
    const StableFineTuneStats stats = stable_finetune(params, set, cfg, {}, topt);
    EXPECT_EQ(stats.iterations, cfg.stable.t_e);

    // backbone and every non-head group bit-identical
    for (int g = 0; g < kNumGroups; ++g) {
        const auto pg = static_cast<ParamGroup>(g);
        if (pg == ParamGroup::kHead) {
            EXPECT_NE(group_hash(params, pg), group_hash(before, pg));
        } else {
            EXPECT_EQ(group_hash(params, pg), group_hash(before, pg));
        }
    }
}

TEST(StableFinetune, CorrectsInjectedHeadBias) {
    // teach a model its own labels, bias the head, calibrate, compare MAE
    RunConfig cfg;
    cfg.batch = 16;
    ModelDims d;
    d.F = 2;
    d.C = 4;
    d.L = 3;
    d.K = 1;
    ModelParams params = init_params(d, 21);

    AdaptationSet set;
    Rng rng = Rng::seeded(22);
    std::vector<Mat> windows;
    for (int i = 0; i < 60; ++i) {
        Mat w(d.F, d.L);
        for (double& v : w.data) v = rng.uniform(0.0, 1.0);
        windows.push_back(w);
        TrainCache c;
        forward_train(params, w, {}, c, true);
        set.entries.push_back({w, c.bb.yhat, i, SampleSource::kCurrentLabeled});
    }
    params.b_head[0] += 0.8;  // injected constant bias

    auto mae = [&](const ModelParams& p) {
        double acc = 0.0;
        for (const auto& e : set.entries) {
            TrainCache c;
            forward_train(p, e.window, {}, c, true);
            acc += std::abs(c.bb.yhat[0] - e.label[0]);
        }
        return acc / static_cast<double>(set.entries.size());
    };
    const double before_mae = mae(params);
    EXPECT_NEAR(before_mae, 0.8, 1e-9);

    TrainOptions topt;
    topt.batch = cfg.batch;
    topt.h_seq = cfg.h_seq;
    stable_finetune(params, set, cfg, {}, topt);
    const double after_mae = mae(params);
    EXPECT_LT(after_mae, 0.25 * before_mae);  // control: no calibration keeps 0.8
}
