#pragma once

// Evaluation losses, seed aggregation, relative deterioration, and the
// Friedman rank test used for significance reporting.

#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "bakeoff/core.hpp"

namespace bakeoff {

// ============================================================================
// Losses
// ============================================================================

// Mean negative log-likelihood of the true class. Probabilities are clamped
// to [1e-12, 1-1e-12] so the 100x-scaled loss stays finite.
inline double cross_entropy(const Predictions& preds, const std::vector<double>& labels) {
    if (!is_classification(preds.task))
        throw Error("cross_entropy: predictions are not classification");
    if (preds.probs.rows != labels.size())
        throw Error("cross_entropy: length mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto c = std::size_t(labels[i]);
        if (c >= preds.probs.cols) throw Error("cross_entropy: label out of class range");
        sum += -std::log(clamp_prob(preds.probs.at(i, c)));
    }
    return sum / double(labels.size());
}

struct MseRmse {
    double mse = 0.0;
    double rmse = 0.0;
};

inline MseRmse squared_error(const std::vector<double>& preds,
                             const std::vector<double>& targets) {
    if (preds.size() != targets.size()) throw Error("squared_error: length mismatch");
    if (preds.empty()) throw Error("squared_error: empty input");
    double sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        double d = preds[i] - targets[i];
        sum += d * d;
    }
    MseRmse out;
    out.mse = sum / double(preds.size());
    out.rmse = std::sqrt(out.mse);
    return out;
}

// Validation/test loss under the task's reporting convention: cross-entropy
// for classification, MSE for regression.
inline double task_loss(const Predictions& preds, const std::vector<double>& target) {
    if (is_classification(preds.task)) return cross_entropy(preds, target);
    return squared_error(preds.values, target).mse;
}

// ============================================================================
// Seed aggregation
// ============================================================================

struct MeanSem {
    double mean = 0.0;
    double sem = 0.0;
};

// sem = sample standard deviation (1/(n-1)) over sqrt(n); 0 for a single run.
inline MeanSem aggregate_seeds(const std::vector<double>& losses) {
    if (losses.empty()) throw Error("aggregate_seeds: no values");
    MeanSem out;
    out.mean = mean_of(losses);
    if (losses.size() == 1) return out;
    double ss = 0.0;
    for (double v : losses) {
        double d = v - out.mean;
        ss += d * d;
    }
    double n = double(losses.size());
    out.sem = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    return out;
}

// Table-2 style cell: two decimals, optional 100x display factor.
inline std::string format_cell(double mean, double sem, double scale = 1.0) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", mean * scale, sem * scale);
    return buf;
}

// ============================================================================
// Comparison matrix and relative deterioration
// ============================================================================

struct ComparisonMatrix {
    Matrix losses;                       // models x datasets, lower better
    std::vector<std::uint8_t> unseen;    // same shape; 1 = unseen for that model
    std::vector<std::string> model_names;
    std::vector<std::string> dataset_names;

    bool is_unseen(std::size_t m, std::size_t d) const {
        return unseen[m * losses.cols + d] != 0;
    }
};

// Geometric mean, over the model's unseen datasets, of its loss divided by
// the per-dataset best loss, minus one, as a percentage.
inline double relative_deterioration(const ComparisonMatrix& cm, std::size_t model) {
    const std::size_t k = cm.losses.rows, n = cm.losses.cols;
    if (model >= k) throw Error("relative_deterioration: model index out of range");
    double log_sum = 0.0;
    std::size_t count = 0;
    for (std::size_t d = 0; d < n; ++d) {
        if (!cm.is_unseen(model, d)) continue;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t m = 0; m < k; ++m) best = std::min(best, cm.losses.at(m, d));
        double loss = cm.losses.at(model, d);
        if (!(best > 0.0) || !(loss > 0.0))
            throw Error("relative_deterioration: nonpositive loss");
        log_sum += std::log(loss / best);
        ++count;
    }
    if (count == 0) throw Error("relative_deterioration: model has no unseen datasets");
    return (std::exp(log_sum / double(count)) - 1.0) * 100.0;
}

// ============================================================================
// Friedman test
// ============================================================================

struct FriedmanResult {
    std::vector<double> rank_sums;  // per model
    double statistic = 0.0;         // chi^2_F
    std::size_t df = 0;             // k - 1
    double p_value = 1.0;
    bool reject = false;            // at the 95% level
};

namespace detail {

// Ranks one dataset column: 1 = smallest loss, ties get the average rank.
inline std::vector<double> rank_column(const std::vector<double>& vals) {
    std::size_t k = vals.size();
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    std::vector<double> ranks(k, 0.0);
    std::size_t i = 0;
    while (i < k) {
        std::size_t j = i;
        while (j + 1 < k && vals[order[j + 1]] == vals[order[i]]) ++j;
        double avg = (double(i + 1) + double(j + 1)) / 2.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
        i = j + 1;
    }
    return ranks;
}

inline double friedman_statistic(const std::vector<double>& rank_sums, std::size_t n_datasets) {
    const double k = double(rank_sums.size());
    const double n = double(n_datasets);
    double sum_sq = 0.0;
    for (double r : rank_sums) sum_sq += r * r;
    return 12.0 / (n * k * (k + 1.0)) * sum_sq - 3.0 * n * (k + 1.0);
}

} // namespace detail

// losses: k models x N datasets. p-value from the chi^2(k-1) approximation.
inline FriedmanResult friedman_test(const Matrix& losses) {
    const std::size_t k = losses.rows, n = losses.cols;
    if (k < 2 || n < 2) throw Error("friedman_test: need >= 2 models and >= 2 datasets");
    for (double v : losses.data)
        if (std::isnan(v)) throw Error("friedman_test: NaN loss cell");

    FriedmanResult res;
    res.rank_sums.assign(k, 0.0);
    for (std::size_t d = 0; d < n; ++d) {
        std::vector<double> col(k);
        for (std::size_t m = 0; m < k; ++m) col[m] = losses.at(m, d);
        auto ranks = detail::rank_column(col);
        for (std::size_t m = 0; m < k; ++m) res.rank_sums[m] += ranks[m];
    }
    res.statistic = detail::friedman_statistic(res.rank_sums, n);
    res.df = k - 1;
    boost::math::chi_squared dist(double(res.df));
    // ties can push the plain statistic slightly negative
    double stat = std::max(0.0, res.statistic);
    res.p_value = boost::math::cdf(boost::math::complement(dist, stat));
    res.reject = res.p_value < 0.05;
    return res;
}

// Exact permutation p-value: all (k!)^N equally likely per-dataset rank
// orders. Only sensible for small k and N.
inline double friedman_exact_p(const Matrix& losses) {
    const std::size_t k = losses.rows, n = losses.cols;
    if (k < 2 || n < 2) throw Error("friedman_exact_p: need >= 2 models and >= 2 datasets");
    if (k > 3 || n > 6) throw Error("friedman_exact_p: exact mode limited to k <= 3, N <= 6");

    double observed = friedman_test(losses).statistic;

    std::vector<std::vector<double>> perms;
    std::vector<double> base(k);
    std::iota(base.begin(), base.end(), 1.0);
    std::sort(base.begin(), base.end());
    do {
        perms.push_back(base);
    } while (std::next_permutation(base.begin(), base.end()));

    const std::size_t p = perms.size();
    std::size_t total = 1;
    for (std::size_t d = 0; d < n; ++d) total *= p;

    std::size_t at_least = 0;
    std::vector<double> sums(k);
    for (std::size_t it = 0; it < total; ++it) {
        std::fill(sums.begin(), sums.end(), 0.0);
        std::size_t rest = it;
        for (std::size_t d = 0; d < n; ++d) {
            const auto& perm = perms[rest % p];
            rest /= p;
            for (std::size_t m = 0; m < k; ++m) sums[m] += perm[m];
        }
        if (detail::friedman_statistic(sums, n) >= observed - 1e-12) ++at_least;
    }
    return double(at_least) / double(total);
}

} // namespace bakeoff
