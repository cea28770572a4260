#pragma once

// Combining heterogeneous members: uniform and validation-loss-weighted
// mixtures, per-example confidence selection, and subset-size curves.

#include <numeric>
#include <vector>

#include "bakeoff/core.hpp"
#include "bakeoff/metrics.hpp"

namespace bakeoff {

enum class WeightMode {
    Uniform,
    InverseLoss,       // w_k proportional to 1 / l_k (default)
    ProportionalLoss,  // w_k proportional to l_k, the paper-exact literal reading
};

inline WeightMode weight_mode_from(const std::string& s) {
    if (s == "uniform") return WeightMode::Uniform;
    if (s == "weighted" || s == "inverse-loss") return WeightMode::InverseLoss;
    if (s == "weighted-literal" || s == "proportional-loss") return WeightMode::ProportionalLoss;
    throw Error("unknown ensemble mode '" + s + "'");
}

struct EnsembleSpec {
    std::vector<std::string> members;
    std::vector<double> val_losses;
    std::vector<double> weights;
    WeightMode mode = WeightMode::Uniform;

    void validate() const {
        if (members.empty()) throw Error("ensemble: no members");
        if (weights.size() != members.size()) throw Error("ensemble: weight count mismatch");
        double sum = 0.0;
        for (double w : weights) {
            if (w < 0.0) throw Error("ensemble: negative weight");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw Error("ensemble: weights must sum to 1");
    }
};

// ============================================================================
// Weights
// ============================================================================

// Validation-loss-derived weights, normalized to 1. Losses are floored at
// 1e-9. Equal losses produce exactly 1/K so uniform combining is recovered
// bit-for-bit.
inline std::vector<double> compute_weights(const std::vector<double>& val_losses,
                                           WeightMode mode = WeightMode::InverseLoss) {
    const std::size_t k = val_losses.size();
    if (k == 0) throw Error("compute_weights: empty loss list");
    std::vector<double> w(k, 1.0 / double(k));
    if (mode == WeightMode::Uniform) return w;

    bool all_equal = true;
    for (double l : val_losses)
        if (l != val_losses[0]) all_equal = false;
    if (all_equal) return w;

    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        double l = std::max(val_losses[i], 1e-9);
        w[i] = mode == WeightMode::InverseLoss ? 1.0 / l : l;
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

// ============================================================================
// Combining
// ============================================================================

// Convex combination sum_k w_k p_k per sample.
inline Predictions combine_weighted(const std::vector<Predictions>& members,
                                    const std::vector<double>& weights) {
    if (members.empty()) throw Error("combine: empty member list");
    if (weights.size() != members.size()) throw Error("combine: weight count mismatch");
    double wsum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw Error("combine: negative weight");
        wsum += w;
    }
    if (std::abs(wsum - 1.0) > 1e-9) throw Error("combine: weights must sum to 1");

    const Predictions& first = members[0];
    for (const auto& m : members)
        if (m.task != first.task || m.size() != first.size() ||
            (is_classification(m.task) && m.probs.cols != first.probs.cols))
            throw Error("combine: member shape mismatch");

    Predictions out;
    out.task = first.task;
    if (out.task == Task::Regression) {
        out.values.assign(first.size(), 0.0);
        for (std::size_t k = 0; k < members.size(); ++k)
            for (std::size_t i = 0; i < out.values.size(); ++i)
                out.values[i] += weights[k] * members[k].values[i];
    } else {
        out.probs = Matrix(first.probs.rows, first.probs.cols);
        for (std::size_t k = 0; k < members.size(); ++k)
            for (std::size_t i = 0; i < out.probs.data.size(); ++i)
                out.probs.data[i] += weights[k] * members[k].probs.data[i];
    }
    return out;
}

// Uniformly weighted mixture; shares the weighted path so equal weights are
// bit-identical by construction.
inline Predictions combine_uniform(const std::vector<Predictions>& members) {
    if (members.empty()) throw Error("combine: empty member list");
    return combine_weighted(members, std::vector<double>(members.size(), 1.0 / double(members.size())));
}

// ============================================================================
// Uncertainty
// ============================================================================

// Shannon entropy of one probability row; higher = less confident.
inline double uncertainty_score(std::span<const double> prob_row) {
    double h = 0.0;
    for (double p : prob_row)
        if (p > 0.0) h -= p * std::log(p);
    return h;
}

// K x n per-member, per-sample uncertainty. Classification uses entropy;
// regression uses absolute deviation from the members' mean prediction.
inline Matrix uncertainty_scores(const std::vector<Predictions>& members) {
    if (members.empty()) throw Error("uncertainty_scores: empty member list");
    const std::size_t k = members.size(), n = members[0].size();
    Matrix scores(k, n);
    if (is_classification(members[0].task)) {
        for (std::size_t m = 0; m < k; ++m)
            for (std::size_t i = 0; i < n; ++i)
                scores.at(m, i) = uncertainty_score(members[m].probs.row(i));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            double mean = 0.0;
            for (std::size_t m = 0; m < k; ++m) mean += members[m].values[i];
            mean /= double(k);
            for (std::size_t m = 0; m < k; ++m)
                scores.at(m, i) = std::abs(members[m].values[i] - mean);
        }
    }
    return scores;
}

// ============================================================================
// Subset selection
// ============================================================================

enum class SubsetStrategy { ValidationLoss, PerExampleUncertainty, Random };

inline SubsetStrategy subset_strategy_from(const std::string& s) {
    if (s == "validation-loss") return SubsetStrategy::ValidationLoss;
    if (s == "uncertainty" || s == "per-example-uncertainty") return SubsetStrategy::PerExampleUncertainty;
    if (s == "random") return SubsetStrategy::Random;
    throw Error("unknown subset strategy '" + s + "'");
}

// Global selection for the validation-loss and random strategies; the result
// is in ascending member order. Ties break toward the lower member index.
inline std::vector<std::size_t> select_subset(const std::vector<double>& val_losses,
                                              SubsetStrategy strategy, std::size_t k,
                                              std::uint64_t seed = 0) {
    const std::size_t n = val_losses.size();
    if (k < 1 || k > n) throw Error("select_subset: k out of range");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (strategy == SubsetStrategy::ValidationLoss) {
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return val_losses[a] < val_losses[b];
        });
    } else if (strategy == SubsetStrategy::Random) {
        Rng rng(seed);
        rng.shuffle(order);
    } else {
        throw Error("select_subset: per-example strategy selects per sample, use combine_topk_confident");
    }
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

// Per sample: uniformly average the k members with the lowest uncertainty.
inline Predictions combine_topk_confident(const std::vector<Predictions>& members, std::size_t k) {
    const std::size_t m = members.size();
    if (k < 1 || k > m) throw Error("combine_topk_confident: k out of range");
    Matrix scores = uncertainty_scores(members);
    const std::size_t n = members[0].size();

    Predictions out;
    out.task = members[0].task;
    std::vector<std::size_t> order(m);
    if (out.task == Task::Regression)
        out.values.assign(n, 0.0);
    else
        out.probs = Matrix(n, members[0].probs.cols);

    for (std::size_t i = 0; i < n; ++i) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return scores.at(a, i) < scores.at(b, i);
        });
        for (std::size_t t = 0; t < k; ++t) {
            std::size_t mem = order[t];
            if (out.task == Task::Regression) {
                out.values[i] += members[mem].values[i] / double(k);
            } else {
                for (std::size_t c = 0; c < out.probs.cols; ++c)
                    out.probs.at(i, c) += members[mem].probs.at(i, c) / double(k);
            }
        }
    }
    return out;
}

// ============================================================================
// Subset curves
// ============================================================================

// Loss of the combined subset at every size k = 1..K under one strategy.
// Members within a subset are averaged uniformly; the random strategy grows
// one seed-deterministic permutation prefix.
inline std::vector<double> subset_curve(const std::vector<Predictions>& member_preds,
                                        const std::vector<double>& val_losses,
                                        SubsetStrategy strategy,
                                        const std::vector<double>& targets,
                                        std::uint64_t seed = 0) {
    const std::size_t K = member_preds.size();
    if (K < 1) throw Error("subset_curve: no members");
    std::vector<double> losses;
    losses.reserve(K);

    std::vector<std::size_t> random_order(K);
    std::iota(random_order.begin(), random_order.end(), 0);
    if (strategy == SubsetStrategy::Random) {
        Rng rng(seed);
        rng.shuffle(random_order);
    }

    for (std::size_t k = 1; k <= K; ++k) {
        Predictions combined;
        if (strategy == SubsetStrategy::PerExampleUncertainty) {
            combined = combine_topk_confident(member_preds, k);
        } else {
            std::vector<std::size_t> subset;
            if (strategy == SubsetStrategy::ValidationLoss) {
                subset = select_subset(val_losses, strategy, k);
            } else {
                subset.assign(random_order.begin(), random_order.begin() + long(k));
                std::sort(subset.begin(), subset.end());
            }
            std::vector<Predictions> chosen;
            for (std::size_t m : subset) chosen.push_back(member_preds[m]);
            combined = combine_uniform(chosen);
        }
        losses.push_back(task_loss(combined, targets));
    }
    return losses;
}

} // namespace bakeoff
