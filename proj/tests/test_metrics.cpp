#include <gtest/gtest.h>

#include "bakeoff/metrics.hpp"
#include "support.hpp"

using namespace bakeoff;

namespace {

Predictions probs(std::initializer_list<std::initializer_list<double>> rows) {
    Predictions p;
    auto n = rows.size();
    auto k = rows.begin()->size();
    p.task = k == 2 ? Task::Binary : Task::Multiclass;
    p.probs = Matrix(n, k);
    std::size_t i = 0;
    for (const auto& r : rows) {
        std::size_t j = 0;
        for (double v : r) p.probs.at(i, j++) = v;
        ++i;
    }
    return p;
}

} // namespace

TEST(CrossEntropy, OneHotCorrectIsZero) {
    Predictions p = probs({{1.0, 0.0}, {0.0, 1.0}});
    EXPECT_NEAR(cross_entropy(p, {0, 1}), 0.0, 1e-10);
}

TEST(CrossEntropy, UniformBinaryIsLn2) {
    Predictions p = probs({{0.5, 0.5}});
    double loss = cross_entropy(p, {1});
    EXPECT_NEAR(loss, std::log(2.0), 1e-12);  // 0.693147
    EXPECT_EQ(format_cell(loss, 0.0, 100.0).substr(0, 5), "69.31");
}

TEST(CrossEntropy, HundredXDisplayConvention) {
    EXPECT_EQ(format_cell(0.2162, 0.0, 100.0), "21.62 ± 0.00");
}

TEST(CrossEntropy, ClampsAndStaysFinite) {
    Predictions p = probs({{1.0, 0.0}});
    double loss = cross_entropy(p, {1});  // true class got probability zero
    EXPECT_TRUE(std::isfinite(loss));
    EXPECT_GT(loss, 0.0);
}

TEST(CrossEntropy, NonNegativeProperty) {
    Rng rng(3);
    for (int rep = 0; rep < 100; ++rep) {
        Predictions p;
        p.task = Task::Multiclass;
        p.probs = Matrix(5, 3);
        for (std::size_t i = 0; i < 5; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < 3; ++j) s += (p.probs.at(i, j) = rng.uniform() + 1e-3);
            for (std::size_t j = 0; j < 3; ++j) p.probs.at(i, j) /= s;
        }
        std::vector<double> y(5);
        for (auto& v : y) v = double(rng.uniform_int(0, 2));
        EXPECT_GE(cross_entropy(p, y), 0.0);
    }
}

TEST(CrossEntropy, LengthMismatchRejected) {
    Predictions p = probs({{0.5, 0.5}});
    EXPECT_THROW(cross_entropy(p, {0, 1}), Error);
}

TEST(SquaredError, IdentityAndHandValues) {
    auto zero = squared_error({1, 2, 3}, {1, 2, 3});
    EXPECT_DOUBLE_EQ(zero.mse, 0.0);
    EXPECT_DOUBLE_EQ(zero.rmse, 0.0);

    auto r = squared_error({0, 0}, {3, 4});  // (9 + 16) / 2
    EXPECT_DOUBLE_EQ(r.mse, 12.5);
    EXPECT_NEAR(r.rmse, 3.5355339059327378, 1e-12);
}

TEST(SquaredError, MeanMinimizesMse) {
    double at_mean = squared_error({1, 1}, {0, 2}).mse;
    double at_zero = squared_error({0, 0}, {0, 2}).mse;
    EXPECT_DOUBLE_EQ(at_mean, 1.0);
    EXPECT_DOUBLE_EQ(at_zero, 2.0);
    EXPECT_LT(at_mean, at_zero);
}

TEST(SquaredError, RmseSquaredEqualsMse) {
    Rng rng(8);
    std::vector<double> a(50), b(50);
    for (int i = 0; i < 50; ++i) a[std::size_t(i)] = rng.normal(), b[std::size_t(i)] = rng.normal();
    auto r = squared_error(a, b);
    EXPECT_NEAR(r.rmse * r.rmse, r.mse, 1e-12);
}

TEST(SquaredError, EmptyRejected) {
    EXPECT_THROW(squared_error({}, {}), Error);
}

TEST(AggregateSeeds, HandValues) {
    auto ms = aggregate_seeds({1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(ms.mean, 2.5);
    EXPECT_NEAR(ms.sem, 0.6454972243679028, 1e-12);  // s = 1.29099 over sqrt(4)
}

TEST(AggregateSeeds, DegenerateCases) {
    EXPECT_DOUBLE_EQ(aggregate_seeds({7, 7, 7, 7}).sem, 0.0);
    auto single = aggregate_seeds({3.25});
    EXPECT_DOUBLE_EQ(single.mean, 3.25);
    EXPECT_DOUBLE_EQ(single.sem, 0.0);
    EXPECT_THROW(aggregate_seeds({}), Error);
}

TEST(FormatCell, TableConvention) {
    EXPECT_EQ(format_cell(490.18, 1.19), "490.18 ± 1.19");
    EXPECT_EQ(format_cell(490.1849, 1.1901), "490.18 ± 1.19");
}

// ----------------------------------------------------------------------------
// relative deterioration
// ----------------------------------------------------------------------------

namespace {

ComparisonMatrix make_cm(std::initializer_list<std::initializer_list<double>> losses,
                         bool all_unseen = true) {
    ComparisonMatrix cm;
    auto k = losses.size();
    auto n = losses.begin()->size();
    cm.losses = Matrix(k, n);
    std::size_t i = 0;
    for (const auto& row : losses) {
        std::size_t j = 0;
        for (double v : row) cm.losses.at(i, j++) = v;
        cm.model_names.push_back("m" + std::to_string(i));
        ++i;
    }
    for (std::size_t j = 0; j < n; ++j) cm.dataset_names.push_back("d" + std::to_string(j));
    cm.unseen.assign(k * n, all_unseen ? 1 : 0);
    return cm;
}

} // namespace

TEST(RelativeDeterioration, BestEverywhereIsZero) {
    ComparisonMatrix cm = make_cm({{1.0, 2.0, 3.0}, {1.5, 2.5, 3.5}});
    EXPECT_NEAR(relative_deterioration(cm, 0), 0.0, 1e-12);
}

TEST(RelativeDeterioration, HandComputedRatios) {
    // ratios 1.1 and 1.21 -> geometric mean sqrt(1.331) - 1 = 15.369...%
    ComparisonMatrix cm = make_cm({{1.0, 1.0}, {1.1, 1.21}});
    EXPECT_NEAR(relative_deterioration(cm, 1), 15.36897329871667, 1e-6);
}

TEST(RelativeDeterioration, ColumnScaleInvariant) {
    ComparisonMatrix a = make_cm({{1.0, 2.0}, {1.3, 2.2}});
    ComparisonMatrix b = make_cm({{1.0, 14.0}, {1.3, 15.4}});  // column 1 scaled by 7
    EXPECT_NEAR(relative_deterioration(a, 1), relative_deterioration(b, 1), 1e-9);
}

TEST(RelativeDeterioration, Errors) {
    ComparisonMatrix cm = make_cm({{1.0}, {2.0}}, false);
    EXPECT_THROW(relative_deterioration(cm, 0), Error);  // no unseen datasets

    ComparisonMatrix neg = make_cm({{1.0}, {-2.0}});
    EXPECT_THROW(relative_deterioration(neg, 0), Error);
}

// ----------------------------------------------------------------------------
// Friedman test
// ----------------------------------------------------------------------------

TEST(Friedman, IdenticalLossesGiveZeroStatistic) {
    Matrix losses(3, 4, 1.0);
    FriedmanResult r = friedman_test(losses);
    EXPECT_NEAR(r.statistic, 0.0, 1e-12);
    EXPECT_NEAR(r.p_value, 1.0, 1e-12);
    EXPECT_FALSE(r.reject);
}

TEST(Friedman, StrictOrderFixture) {
    // 3 models, 4 datasets, same strict ordering everywhere
    Matrix losses(3, 4);
    for (std::size_t d = 0; d < 4; ++d) {
        losses.at(0, d) = 1.0 + double(d);
        losses.at(1, d) = 2.0 + double(d);
        losses.at(2, d) = 3.0 + double(d);
    }
    FriedmanResult r = friedman_test(losses);
    EXPECT_DOUBLE_EQ(r.statistic, 8.0);
    EXPECT_EQ(r.df, 2u);
    EXPECT_NEAR(r.p_value, std::exp(-4.0), 1e-6);  // 0.0183156
    EXPECT_TRUE(r.reject);
    EXPECT_DOUBLE_EQ(r.rank_sums[0], 4.0);
    EXPECT_DOUBLE_EQ(r.rank_sums[1], 8.0);
    EXPECT_DOUBLE_EQ(r.rank_sums[2], 12.0);
}

TEST(Friedman, TiesGetAverageRanks) {
    Matrix losses(2, 2);
    losses.at(0, 0) = 1.0;
    losses.at(1, 0) = 1.0;  // tied -> both rank 1.5
    losses.at(0, 1) = 1.0;
    losses.at(1, 1) = 2.0;
    FriedmanResult r = friedman_test(losses);
    EXPECT_DOUBLE_EQ(r.rank_sums[0], 1.5 + 1.0);
    EXPECT_DOUBLE_EQ(r.rank_sums[1], 1.5 + 2.0);
}

TEST(Friedman, RankSumsTotalInvariant) {
    Rng rng(5);
    for (int rep = 0; rep < 50; ++rep) {
        std::size_t k = 2 + std::size_t(rng.uniform_int(0, 3));
        std::size_t n = 2 + std::size_t(rng.uniform_int(0, 5));
        Matrix losses(k, n);
        for (auto& v : losses.data) v = double(rng.uniform_int(0, 4));  // force ties
        FriedmanResult r = friedman_test(losses);
        double total = 0;
        for (double s : r.rank_sums) total += s;
        EXPECT_NEAR(total, double(n) * double(k) * double(k + 1) / 2.0, 1e-9);
    }
}

TEST(Friedman, MonotoneTransformInvariant) {
    Rng rng(6);
    Matrix losses(3, 5);
    for (auto& v : losses.data) v = rng.uniform();
    FriedmanResult base = friedman_test(losses);

    Matrix warped = losses;
    for (std::size_t d = 0; d < warped.cols; ++d)
        for (std::size_t m = 0; m < warped.rows; ++m)
            warped.at(m, d) = std::exp(3.0 * warped.at(m, d)) + double(d);  // per-column monotone
    FriedmanResult after = friedman_test(warped);
    EXPECT_NEAR(base.statistic, after.statistic, 1e-9);
    EXPECT_NEAR(base.p_value, after.p_value, 1e-9);
}

TEST(Friedman, ExactPermutationCloseToChi2OnFixture) {
    Matrix losses(3, 4);
    for (std::size_t d = 0; d < 4; ++d) {
        losses.at(0, d) = 1;
        losses.at(1, d) = 2;
        losses.at(2, d) = 3;
    }
    double exact = friedman_exact_p(losses);
    double approx = friedman_test(losses).p_value;
    EXPECT_LT(std::abs(exact - approx), 0.02);
}

TEST(Friedman, DegenerateInputsRejected) {
    EXPECT_THROW(friedman_test(Matrix(1, 4, 1.0)), Error);
    EXPECT_THROW(friedman_test(Matrix(3, 1, 1.0)), Error);
    Matrix with_nan(2, 2, 1.0);
    with_nan.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(friedman_test(with_nan), Error);
}
