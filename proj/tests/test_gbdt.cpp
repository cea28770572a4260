#include <gtest/gtest.h>

#include "bakeoff/gbdt.hpp"
#include "bakeoff/metrics.hpp"
#include "support.hpp"

using namespace bakeoff;

namespace {

DataView all_rows(const Dataset& ds) { return full_view(ds); }

Dataset regression_1d(std::vector<double> x, std::vector<double> y) {
    Dataset ds;
    ds.task = Task::Regression;
    ds.features = Matrix(x.size(), 1);
    for (std::size_t i = 0; i < x.size(); ++i) ds.features.at(i, 0) = x[i];
    ds.missing.assign(x.size(), 0);
    ds.target = std::move(y);
    ds.feature_meta.push_back({"x", FeatureKind::Numeric, {}});
    return ds;
}

GbdtParams exact_params() {
    GbdtParams p;
    p.n_estimators = 1;
    p.eta = 1.0;
    p.max_depth = 1;
    p.lambda = 0.0;
    p.gamma = 0.0;
    p.min_child_weight = 0.0;
    return p;
}

} // namespace

TEST(SplitGain, SymmetricSplitHasZeroGain) {
    EXPECT_DOUBLE_EQ(gbdt_split_gain(1.0, 2.0, 1.0, 2.0, 0.0, 0.0), 0.0);
    // with regularization a symmetric split is strictly unprofitable
    EXPECT_LT(gbdt_split_gain(1.0, 2.0, 1.0, 2.0, 1.0, 0.0), 0.0);
}

TEST(SplitGain, HandEvaluatedValue) {
    // 1/2 [ 4/2 + 4/2 - 0/3 ] = 2.0
    EXPECT_DOUBLE_EQ(gbdt_split_gain(-2.0, 1.0, 2.0, 1.0, 1.0, 0.0), 2.0);
}

TEST(SplitGain, GammaPushesGainNegative) {
    double bracket = gbdt_split_gain(-2.0, 1.0, 2.0, 1.0, 1.0, 0.0);
    EXPECT_LT(gbdt_split_gain(-2.0, 1.0, 2.0, 1.0, 1.0, bracket + 0.5), 0.0);
}

TEST(SplitGain, LeafWeightFormula) {
    EXPECT_DOUBLE_EQ(gbdt_leaf_weight(2.0, 3.0, 1.0), -0.5);
    EXPECT_DOUBLE_EQ(gbdt_leaf_weight(5.0, 0.0, 0.0), 0.0);  // guarded corner
}

TEST(FitGbdt, DepthOneExactFixture) {
    Dataset ds = regression_1d({0, 1, 2, 3}, {0, 0, 1, 1});
    GbdtModel m = fit_gbdt(all_rows(ds), all_rows(ds), exact_params(), 1);

    ASSERT_EQ(m.rounds.size(), 1u);
    const GbdtTree& tree = m.rounds[0][0];
    ASSERT_EQ(tree.nodes.size(), 3u);
    EXPECT_EQ(tree.nodes[0].feature, 0);
    EXPECT_DOUBLE_EQ(tree.nodes[0].threshold, 1.5);
    EXPECT_DOUBLE_EQ(tree.nodes[std::size_t(tree.nodes[0].left)].weight, -0.5);
    EXPECT_DOUBLE_EQ(tree.nodes[std::size_t(tree.nodes[0].right)].weight, 0.5);

    Predictions p = m.predict(ds.features);
    EXPECT_DOUBLE_EQ(p.values[0], 0.0);
    EXPECT_DOUBLE_EQ(p.values[1], 0.0);
    EXPECT_DOUBLE_EQ(p.values[2], 1.0);
    EXPECT_DOUBLE_EQ(p.values[3], 1.0);
}

TEST(FitGbdt, ConstantTargetPredictsConstant) {
    Dataset ds = regression_1d({0, 1, 2, 3}, {4.25, 4.25, 4.25, 4.25});
    GbdtParams p;
    p.n_estimators = 5;
    GbdtModel m = fit_gbdt(all_rows(ds), all_rows(ds), p, 1);
    Predictions pred = m.predict(ds.features);
    for (double v : pred.values) EXPECT_DOUBLE_EQ(v, 4.25);
    // base score is the mean and no split fires
    EXPECT_DOUBLE_EQ(m.base_score[0], 4.25);
    for (const auto& round : m.rounds)
        for (const auto& tree : round)
            for (const auto& node : tree.nodes) EXPECT_TRUE(node.is_leaf());
}

TEST(FitGbdt, ZeroTreesPredictBaseThroughLink) {
    Dataset ds = testsup::make_blobs(40, 2, 2, 7);
    double base_rate = 0.0;
    for (double y : ds.target) base_rate += y;
    base_rate /= double(ds.n_rows());

    GbdtParams p;
    p.n_estimators = 0;
    GbdtModel m = fit_gbdt(all_rows(ds), all_rows(ds), p, 1);
    EXPECT_TRUE(m.rounds.empty());
    Predictions pred = m.predict(ds.features);
    for (std::size_t i = 0; i < pred.probs.rows; ++i)
        EXPECT_NEAR(pred.probs.at(i, 1), base_rate, 1e-9);
}

TEST(FitGbdt, MissingValuesFollowLearnedDefaultDirection) {
    // present x = {0,0,1,1} with y = {0,0,1,1}; two missing rows with y = 1.
    // routing the missing mass right is the better split, so default goes right
    Dataset ds = regression_1d({0, 0, 1, 1, 0, 0}, {0, 0, 1, 1, 1, 1});
    ds.missing[4] = 1;
    ds.missing[5] = 1;

    GbdtModel m = fit_gbdt(all_rows(ds), all_rows(ds), exact_params(), 1);
    ASSERT_EQ(m.rounds.size(), 1u);
    const GbdtNode& root = m.rounds[0][0].nodes[0];
    ASSERT_EQ(root.feature, 0);
    EXPECT_DOUBLE_EQ(root.threshold, 0.5);
    EXPECT_FALSE(root.default_left);

    Matrix X(2, 1);
    X.at(0, 0) = 0.0;
    X.at(1, 0) = 0.0;
    std::vector<std::uint8_t> miss{0, 1};  // row 1 missing
    Predictions p = m.predict(X, &miss);
    EXPECT_NEAR(p.values[0], 0.0, 1e-12);  // routed left
    EXPECT_NEAR(p.values[1], 1.0, 1e-12);  // default direction right
}

TEST(FitGbdt, AddingTreesNeverIncreasesTrainLoss) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        Dataset reg = testsup::make_regression(150, 4, seed);
        DataView view = all_rows(reg);
        DataView no_val{&reg, {}};
        GbdtParams p;
        p.n_estimators = 8;
        p.eta = 0.5;
        p.lambda = 1.0;
        p.max_depth = 3;
        GbdtModel full = fit_gbdt(view, no_val, p, seed);

        double prev = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k <= full.rounds.size(); ++k) {
            GbdtModel prefix = full;
            prefix.rounds.resize(k);
            double loss = squared_error(prefix.predict(reg.features).values, reg.target).mse;
            EXPECT_LE(loss, prev + 1e-12) << "round " << k;
            prev = loss;
        }

        Dataset cls = testsup::make_blobs(150, 4, 2, seed + 10);
        DataView cview = all_rows(cls);
        DataView cno_val{&cls, {}};
        p.eta = 0.3;
        GbdtModel cfull = fit_gbdt(cview, cno_val, p, seed);
        prev = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k <= cfull.rounds.size(); ++k) {
            GbdtModel prefix = cfull;
            prefix.rounds.resize(k);
            double loss = cross_entropy(prefix.predict(cls.features), cls.target);
            EXPECT_LE(loss, prev + 1e-12) << "round " << k;
            prev = loss;
        }
    }
}

TEST(FitGbdt, SubsamplingIsSeedDeterministic) {
    Dataset ds = testsup::make_blobs(120, 5, 2, 9);
    GbdtParams p;
    p.n_estimators = 6;
    p.subsample = 0.6;
    p.colsample_bytree = 0.6;
    p.colsample_bylevel = 0.8;
    p.max_depth = 3;

    GbdtModel a = fit_gbdt(all_rows(ds), all_rows(ds), p, 42);
    GbdtModel b = fit_gbdt(all_rows(ds), all_rows(ds), p, 42);
    ASSERT_EQ(a.rounds.size(), b.rounds.size());
    for (std::size_t r = 0; r < a.rounds.size(); ++r) {
        ASSERT_EQ(a.rounds[r][0].nodes.size(), b.rounds[r][0].nodes.size());
        for (std::size_t n = 0; n < a.rounds[r][0].nodes.size(); ++n) {
            EXPECT_EQ(a.rounds[r][0].nodes[n].feature, b.rounds[r][0].nodes[n].feature);
            EXPECT_DOUBLE_EQ(a.rounds[r][0].nodes[n].threshold, b.rounds[r][0].nodes[n].threshold);
            EXPECT_DOUBLE_EQ(a.rounds[r][0].nodes[n].weight, b.rounds[r][0].nodes[n].weight);
        }
    }

    Predictions pa = a.predict(ds.features), pb = b.predict(ds.features);
    EXPECT_EQ(pa.probs.data, pb.probs.data);
}

TEST(FitGbdt, PredictIsPureAndRepeatable) {
    Dataset ds = testsup::make_blobs(60, 3, 3, 4);
    GbdtParams p;
    p.n_estimators = 4;
    GbdtModel m = fit_gbdt(all_rows(ds), all_rows(ds), p, 3);
    Predictions a = m.predict(ds.features), b = m.predict(ds.features);
    EXPECT_EQ(a.probs.data, b.probs.data);
    for (std::size_t i = 0; i < a.probs.rows; ++i) {
        double sum = 0;
        for (std::size_t c = 0; c < a.probs.cols; ++c) sum += a.probs.at(i, c);
        EXPECT_NEAR(sum, 1.0, 1e-9);
    }
}

TEST(FitGbdt, MulticlassLearnsBlobs) {
    Dataset ds = testsup::make_blobs(300, 4, 3, 21, 0.6);
    SplitPolicy pol;
    pol.fractions = {0.7, 0.3};
    SplitBundle sb = split(ds, pol, 1);
    GbdtParams p;
    p.n_estimators = 40;
    p.max_depth = 3;
    GbdtModel m = fit_gbdt({&ds, sb.train}, {&ds, sb.val}, p, 5);

    DataView val{&ds, sb.val};
    Matrix Xv(sb.val.size(), ds.n_cols());
    std::vector<double> yv;
    for (std::size_t i = 0; i < sb.val.size(); ++i) {
        for (std::size_t j = 0; j < ds.n_cols(); ++j) Xv.at(i, j) = val.x(i, j);
        yv.push_back(val.y(i));
    }
    double ce = cross_entropy(m.predict(Xv), yv);
    EXPECT_LT(ce, std::log(3.0) * 0.6);  // clearly better than uniform guessing
}

TEST(FitGbdt, GammaAboveBracketSuppressesSplit) {
    Dataset ds = regression_1d({0, 1, 2, 3}, {0, 0, 1, 1});
    GbdtParams p = exact_params();
    p.gamma = 10.0;  // far above the 0.5 bracket of the best split
    GbdtModel m = fit_gbdt(all_rows(ds), all_rows(ds), p, 1);
    for (const auto& round : m.rounds)
        for (const auto& tree : round)
            EXPECT_TRUE(tree.nodes[0].is_leaf());
}

TEST(FitGbdt, L1AlphaShrinksLeafWeights) {
    Dataset ds = testsup::make_regression(80, 3, 12);
    GbdtParams base;
    base.n_estimators = 1;
    base.eta = 1.0;
    base.max_depth = 2;
    GbdtParams reg = base;
    reg.alpha = 0.5;

    DataView no_val{&ds, {}};
    GbdtModel plain = fit_gbdt(full_view(ds), no_val, base, 3);
    GbdtModel l1 = fit_gbdt(full_view(ds), no_val, reg, 3);

    auto max_abs_leaf = [](const GbdtModel& m) {
        double v = 0.0;
        for (const auto& round : m.rounds)
            for (const auto& tree : round)
                for (const auto& node : tree.nodes)
                    if (node.is_leaf()) v = std::max(v, std::abs(node.weight));
        return v;
    };
    EXPECT_LT(max_abs_leaf(l1), max_abs_leaf(plain));
}

TEST(FitGbdt, PredictRejectsWrongFeatureCount) {
    Dataset ds = testsup::make_blobs(30, 3, 2, 1);
    GbdtParams p;
    p.n_estimators = 2;
    GbdtModel m = fit_gbdt(all_rows(ds), all_rows(ds), p, 1);
    Matrix wrong(4, 2);
    EXPECT_THROW(m.predict(wrong), Error);
}

TEST(FitGbdt, EmptyTrainRejected) {
    Dataset ds = testsup::make_blobs(10, 2, 2, 1);
    DataView empty{&ds, {}};
    EXPECT_THROW(fit_gbdt(empty, all_rows(ds), GbdtParams{}, 1), Error);
}

// ----------------------------------------------------------------------------
// first-split oracle (small version; the acceptance suite runs 50 datasets)
// ----------------------------------------------------------------------------

namespace {

struct OracleSplit {
    int feature = -1;
    double threshold = 0.0;
    bool default_left = true;
    double gain = 0.0;
    double wl = 0.0, wr = 0.0;
};

// Independent exhaustive enumeration of every (feature, threshold, missing
// direction) candidate at the root, using the published gain formula.
OracleSplit oracle_first_split(const Dataset& ds, const GbdtParams& prm) {
    const std::size_t n = ds.n_rows(), f = ds.n_cols();
    std::vector<double> grad(n), hess(n, 1.0);
    if (ds.task == Task::Regression) {
        double base = 0;
        for (double y : ds.target) base += y;
        base /= double(n);
        for (std::size_t i = 0; i < n; ++i) grad[i] = base - ds.target[i];
    } else {
        double rate = 0;
        for (double y : ds.target) rate += y;
        rate = std::clamp(rate / double(n), 1e-6, 1.0 - 1e-6);
        double margin = std::log(rate / (1.0 - rate));
        double p = 1.0 / (1.0 + std::exp(-margin));
        for (std::size_t i = 0; i < n; ++i) {
            grad[i] = p - ds.target[i];
            hess[i] = p * (1.0 - p);
        }
    }

    OracleSplit best;
    for (std::size_t j = 0; j < f; ++j) {
        std::vector<std::pair<double, std::size_t>> present;
        double gm = 0, hm = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (ds.is_missing(i, j)) {
                gm += grad[i];
                hm += hess[i];
            } else {
                present.emplace_back(ds.features.at(i, j), i);
            }
        }
        std::sort(present.begin(), present.end());
        double gt = gm, ht = hm;
        for (auto& [v, i] : present) gt += grad[i], ht += hess[i];

        double gl = 0, hl = 0;
        for (std::size_t s = 0; s + 1 < present.size(); ++s) {
            gl += grad[present[s].second];
            hl += hess[present[s].second];
            if (present[s].first == present[s + 1].first) continue;
            double thr = 0.5 * (present[s].first + present[s + 1].first);
            for (bool miss_left : {true, false}) {
                double GL = gl + (miss_left ? gm : 0.0), HL = hl + (miss_left ? hm : 0.0);
                double GR = gt - GL, HR = ht - HL;
                if (HL < prm.min_child_weight || HR < prm.min_child_weight) continue;
                double gain = gbdt_split_gain(GL, HL, GR, HR, prm.lambda, prm.gamma);
                if (gain > best.gain) {
                    best = {int(j), thr, miss_left, gain, gbdt_leaf_weight(GL, HL, prm.lambda),
                            gbdt_leaf_weight(GR, HR, prm.lambda)};
                }
            }
        }
    }
    return best;
}

} // namespace

TEST(FitGbdt, FirstSplitMatchesExhaustiveEnumeration) {
    Rng meta(77);
    for (int rep = 0; rep < 10; ++rep) {
        bool classification = rep % 2 == 0;
        std::size_t n = 30 + std::size_t(meta.uniform_int(0, 80));
        std::size_t f = 2 + std::size_t(meta.uniform_int(0, 4));
        Dataset ds = classification ? testsup::make_blobs(n, f, 2, 100 + std::uint64_t(rep), 1.5)
                                    : testsup::make_regression(n, f, 100 + std::uint64_t(rep));

        GbdtParams prm = exact_params();
        prm.lambda = meta.uniform(0.0, 2.0);
        OracleSplit expect = oracle_first_split(ds, prm);
        if (expect.feature < 0) continue;

        GbdtModel m = fit_gbdt(full_view(ds), full_view(ds), prm, 0);
        ASSERT_GE(m.rounds.size(), 1u);
        const GbdtTree& tree = m.rounds[0][0];
        ASSERT_FALSE(tree.nodes[0].is_leaf()) << "rep " << rep;
        EXPECT_EQ(tree.nodes[0].feature, expect.feature) << "rep " << rep;
        EXPECT_DOUBLE_EQ(tree.nodes[0].threshold, expect.threshold) << "rep " << rep;
        EXPECT_EQ(tree.nodes[0].default_left, expect.default_left) << "rep " << rep;
        EXPECT_NEAR(tree.nodes[std::size_t(tree.nodes[0].left)].weight, expect.wl, 1e-10);
        EXPECT_NEAR(tree.nodes[std::size_t(tree.nodes[0].right)].weight, expect.wr, 1e-10);
    }
}
