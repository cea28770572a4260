#pragma once

// Second-order gradient-boosted trees: exact greedy split enumeration over
// all (feature, threshold) candidates, sparsity-aware default directions for
// missing values, row/column subsampling, and best-round restoration against
// the validation set.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "bakeoff/core.hpp"
#include "bakeoff/dataset.hpp"
#include "bakeoff/search_space.hpp"

namespace bakeoff {

// ============================================================================
// Split math
// ============================================================================

inline double gbdt_leaf_weight(double G, double H, double lambda) {
    double denom = H + lambda;
    if (denom <= 0.0) return 0.0;
    return -G / denom;
}

// gain = 1/2 [ G_L^2/(H_L+l) + G_R^2/(H_R+l) - (G_L+G_R)^2/(H_L+H_R+l) ] - gamma
inline double gbdt_split_gain(double grad_sum_l, double hess_sum_l, double grad_sum_r,
                              double hess_sum_r, double lambda, double gamma) {
    auto score = [lambda](double g, double h) {
        double denom = h + lambda;
        return denom > 0.0 ? g * g / denom : 0.0;
    };
    return 0.5 * (score(grad_sum_l, hess_sum_l) + score(grad_sum_r, hess_sum_r) -
                  score(grad_sum_l + grad_sum_r, hess_sum_l + hess_sum_r)) -
           gamma;
}

namespace detail {

// XGBoost-style L1 shrinkage on the gradient sum.
inline double l1_shrink(double g, double alpha) {
    if (g > alpha) return g - alpha;
    if (g < -alpha) return g + alpha;
    return 0.0;
}

} // namespace detail

// ============================================================================
// Model
// ============================================================================

struct GbdtParams {
    long long n_estimators = 100;
    double eta = 0.3;
    int max_depth = 6;
    double subsample = 1.0;
    double colsample_bytree = 1.0;
    double colsample_bylevel = 1.0;
    double min_child_weight = 1.0;
    double alpha = 0.0;
    double lambda = 1.0;
    double gamma = 0.0;
    long long patience = 100;  // early-stopping rounds

    static GbdtParams from_hyperparameters(const Hyperparameters& hp) {
        GbdtParams p;
        p.n_estimators = hp_get_int(hp, "n_estimators", p.n_estimators);
        p.eta = hp_get(hp, "eta", p.eta);
        p.max_depth = int(hp_get_int(hp, "max_depth", p.max_depth));
        p.subsample = hp_get(hp, "subsample", p.subsample);
        p.colsample_bytree = hp_get(hp, "colsample_bytree", p.colsample_bytree);
        p.colsample_bylevel = hp_get(hp, "colsample_bylevel", p.colsample_bylevel);
        p.min_child_weight = hp_get(hp, "min_child_weight", p.min_child_weight);
        p.alpha = hp_get(hp, "alpha", p.alpha);
        p.lambda = hp_get(hp, "lambda", p.lambda);
        p.gamma = hp_get(hp, "gamma", p.gamma);
        return p;
    }
};

struct GbdtNode {
    int feature = -1;  // -1 = leaf
    double threshold = 0.0;
    bool default_left = true;
    int left = -1, right = -1;
    double weight = 0.0;  // leaf value, eta already applied

    bool is_leaf() const { return feature < 0; }
};

struct GbdtTree {
    std::vector<GbdtNode> nodes;  // nodes[0] is the root

    double predict_row(std::span<const double> x, const std::uint8_t* miss) const {
        int n = 0;
        while (!nodes[std::size_t(n)].is_leaf()) {
            const GbdtNode& nd = nodes[std::size_t(n)];
            auto f = std::size_t(nd.feature);
            bool left;
            if (miss && miss[f])
                left = nd.default_left;
            else
                left = x[f] < nd.threshold;
            n = left ? nd.left : nd.right;
        }
        return nodes[std::size_t(n)].weight;
    }
};

struct GbdtModel {
    Task task = Task::Regression;
    int n_classes = 0;
    std::size_t n_features = 0;
    std::vector<double> base_score;              // 1 entry, or n_classes for multiclass
    std::vector<std::vector<GbdtTree>> rounds;   // rounds[r][output]
    std::size_t best_round = 0;                  // rounds kept after restoration

    std::size_t out_dim() const { return base_score.size(); }

    Matrix predict_margin(const Matrix& X, const std::vector<std::uint8_t>* missing) const {
        if (X.cols != n_features) throw Error("gbdt predict: feature count mismatch");
        Matrix m(X.rows, out_dim());
        for (std::size_t i = 0; i < X.rows; ++i) {
            const std::uint8_t* miss = missing ? missing->data() + i * X.cols : nullptr;
            for (std::size_t c = 0; c < out_dim(); ++c) m.at(i, c) = base_score[c];
            for (const auto& round : rounds)
                for (std::size_t c = 0; c < round.size(); ++c)
                    m.at(i, c) += round[c].predict_row(X.row(i), miss);
        }
        return m;
    }

    Predictions predict(const Matrix& X, const std::vector<std::uint8_t>* missing = nullptr) const {
        Matrix m = predict_margin(X, missing);
        Predictions out;
        out.task = task;
        if (task == Task::Regression) {
            out.values.resize(X.rows);
            for (std::size_t i = 0; i < X.rows; ++i) out.values[i] = m.at(i, 0);
        } else if (task == Task::Binary) {
            out.probs = Matrix(X.rows, 2);
            for (std::size_t i = 0; i < X.rows; ++i) {
                double p = sigmoid(m.at(i, 0));
                out.probs.at(i, 0) = 1.0 - p;
                out.probs.at(i, 1) = p;
            }
        } else {
            out.probs = m;
            for (std::size_t i = 0; i < X.rows; ++i) softmax_in_place(out.probs.row(i));
        }
        return out;
    }
};

// ============================================================================
// Training
// ============================================================================

namespace detail {

struct GbdtBuilder {
    const Matrix& X;
    const std::vector<std::uint8_t>* miss;
    const GbdtParams& prm;
    std::span<const double> grad, hess;
    const std::vector<std::vector<int>>& level_features;  // per depth level

    GbdtTree tree;

    struct BestSplit {
        double gain = 0.0;
        int feature = -1;
        double threshold = 0.0;
        bool default_left = true;
    };

    bool missing_at(std::size_t row, std::size_t col) const {
        return miss && (*miss)[row * X.cols + col] != 0;
    }

    BestSplit find_split(const std::vector<std::size_t>& rows, int depth) const {
        BestSplit best;
        double a = prm.alpha;
        std::vector<std::pair<double, std::size_t>> present;
        for (int f : level_features[std::size_t(depth)]) {
            present.clear();
            double g_miss = 0.0, h_miss = 0.0;
            for (std::size_t r : rows) {
                if (missing_at(r, std::size_t(f)))
                    g_miss += grad[r], h_miss += hess[r];
                else
                    present.emplace_back(X.at(r, std::size_t(f)), r);
            }
            if (present.size() < 2) continue;
            std::sort(present.begin(), present.end());

            double g_tot = g_miss, h_tot = h_miss;
            for (auto& [v, r] : present) g_tot += grad[r], h_tot += hess[r];

            double g_left = 0.0, h_left = 0.0;
            for (std::size_t i = 0; i + 1 < present.size(); ++i) {
                auto r = present[i].second;
                g_left += grad[r];
                h_left += hess[r];
                if (present[i].first == present[i + 1].first) continue;
                double thr = 0.5 * (present[i].first + present[i + 1].first);
                // missing samples may be routed either way; keep the better
                for (bool miss_left : {true, false}) {
                    double gl = g_left + (miss_left ? g_miss : 0.0);
                    double hl = h_left + (miss_left ? h_miss : 0.0);
                    double gr = g_tot - gl, hr = h_tot - hl;
                    if (hl < prm.min_child_weight || hr < prm.min_child_weight) continue;
                    if (a > 0.0) gl = l1_shrink(gl, a), gr = l1_shrink(gr, a);
                    double gain = gbdt_split_gain(gl, hl, gr, hr, prm.lambda, prm.gamma);
                    if (gain > best.gain) {
                        best.gain = gain;
                        best.feature = f;
                        best.threshold = thr;
                        best.default_left = miss_left;
                    }
                }
            }
        }
        return best;
    }

    int build(const std::vector<std::size_t>& rows, int depth) {
        double g = 0.0, h = 0.0;
        for (std::size_t r : rows) g += grad[r], h += hess[r];

        int id = int(tree.nodes.size());
        tree.nodes.emplace_back();

        BestSplit split;
        if (depth < prm.max_depth && rows.size() >= 2) split = find_split(rows, depth);

        if (split.feature < 0 || split.gain <= 0.0) {
            double gg = prm.alpha > 0.0 ? l1_shrink(g, prm.alpha) : g;
            tree.nodes[std::size_t(id)].weight = prm.eta * gbdt_leaf_weight(gg, h, prm.lambda);
            return id;
        }

        std::vector<std::size_t> left_rows, right_rows;
        for (std::size_t r : rows) {
            bool left;
            if (missing_at(r, std::size_t(split.feature)))
                left = split.default_left;
            else
                left = X.at(r, std::size_t(split.feature)) < split.threshold;
            (left ? left_rows : right_rows).push_back(r);
        }

        int l = build(left_rows, depth + 1);
        int r = build(right_rows, depth + 1);
        GbdtNode& nd = tree.nodes[std::size_t(id)];
        nd.feature = split.feature;
        nd.threshold = split.threshold;
        nd.default_left = split.default_left;
        nd.left = l;
        nd.right = r;
        return id;
    }
};

inline std::vector<int> sample_columns(std::size_t n_features, double fraction, Rng& rng) {
    auto want = std::size_t(std::ceil(fraction * double(n_features)));
    want = std::clamp<std::size_t>(want, 1, n_features);
    std::vector<int> cols(n_features);
    std::iota(cols.begin(), cols.end(), 0);
    if (want < n_features) {
        rng.shuffle(cols);
        cols.resize(want);
        std::sort(cols.begin(), cols.end());
    }
    return cols;
}

inline double gbdt_eval_loss(const GbdtModel& model, const Matrix& margins,
                             std::span<const double> y) {
    double sum = 0.0;
    const std::size_t n = margins.rows;
    if (model.task == Task::Regression) {
        for (std::size_t i = 0; i < n; ++i) {
            double d = margins.at(i, 0) - y[i];
            sum += d * d;
        }
    } else if (model.task == Task::Binary) {
        for (std::size_t i = 0; i < n; ++i) {
            double p = clamp_prob(sigmoid(margins.at(i, 0)));
            sum += y[i] > 0.5 ? -std::log(p) : -std::log(1.0 - p);
        }
    } else {
        std::vector<double> z(margins.cols);
        for (std::size_t i = 0; i < n; ++i) {
            std::copy(margins.row(i).begin(), margins.row(i).end(), z.begin());
            softmax_in_place(z);
            sum += -std::log(clamp_prob(z[std::size_t(y[i])]));
        }
    }
    return sum / double(n);
}

} // namespace detail

// Fits the boosted ensemble, stopping after `patience` rounds without strict
// validation improvement and truncating to the best round seen.
inline GbdtModel fit_gbdt(const DataView& train, const DataView& val, const GbdtParams& prm,
                          std::uint64_t seed) {
    if (train.size() == 0) throw Error("fit_gbdt: empty train set");
    const Dataset& ds = *train.ds;
    const std::size_t n = train.size(), nv = val.size(), f = ds.n_cols();

    // materialize views
    Matrix Xt(n, f), Xv(nv, f);
    std::vector<std::uint8_t> mt(n * f, 0), mv(nv * f, 0);
    std::vector<double> yt(n), yv(nv);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < f; ++j) {
            Xt.at(i, j) = train.x(i, j);
            mt[i * f + j] = train.missing(i, j) ? 1 : 0;
        }
        yt[i] = train.y(i);
    }
    for (std::size_t i = 0; i < nv; ++i) {
        for (std::size_t j = 0; j < f; ++j) {
            Xv.at(i, j) = val.x(i, j);
            mv[i * f + j] = val.missing(i, j) ? 1 : 0;
        }
        yv[i] = val.y(i);
    }

    GbdtModel model;
    model.task = ds.task;
    model.n_classes = ds.n_classes;
    model.n_features = f;

    const std::size_t out = ds.task == Task::Multiclass ? std::size_t(ds.n_classes) : 1;
    model.base_score.assign(out, 0.0);
    if (ds.task == Task::Regression) {
        model.base_score[0] = mean_of(yt);
    } else if (ds.task == Task::Binary) {
        double p = std::clamp(mean_of(yt), 1e-6, 1.0 - 1e-6);
        model.base_score[0] = std::log(p / (1.0 - p));
    } else {
        std::vector<double> prior(out, 0.0);
        for (double y : yt) prior[std::size_t(y)] += 1.0;
        for (std::size_t c = 0; c < out; ++c)
            model.base_score[c] = std::log(std::clamp(prior[c] / double(n), 1e-6, 1.0));
    }

    Matrix margin_t(n, out), margin_v(nv, out);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < out; ++c) margin_t.at(i, c) = model.base_score[c];
    for (std::size_t i = 0; i < nv; ++i)
        for (std::size_t c = 0; c < out; ++c) margin_v.at(i, c) = model.base_score[c];

    Rng rng(seed);
    std::vector<double> grad(n), hess(n);
    Matrix probs;  // multiclass round cache

    double best_val = nv > 0 ? detail::gbdt_eval_loss(model, margin_v, yv)
                             : std::numeric_limits<double>::infinity();
    std::size_t best_round = 0, since_best = 0;

    for (long long round = 0; round < prm.n_estimators; ++round) {
        if (ds.task == Task::Multiclass) {
            probs = margin_t;
            for (std::size_t i = 0; i < n; ++i) softmax_in_place(probs.row(i));
        }

        std::vector<GbdtTree> round_trees;
        for (std::size_t c = 0; c < out; ++c) {
            for (std::size_t i = 0; i < n; ++i) {
                if (ds.task == Task::Regression) {
                    grad[i] = margin_t.at(i, 0) - yt[i];
                    hess[i] = 1.0;
                } else if (ds.task == Task::Binary) {
                    double p = sigmoid(margin_t.at(i, 0));
                    grad[i] = p - yt[i];
                    hess[i] = p * (1.0 - p);
                } else {
                    double p = probs.at(i, c);
                    grad[i] = p - (std::size_t(yt[i]) == c ? 1.0 : 0.0);
                    hess[i] = p * (1.0 - p);
                }
            }

            // row subsample, then per-tree and per-level column samples
            std::vector<std::size_t> rows(n);
            std::iota(rows.begin(), rows.end(), 0);
            if (prm.subsample < 1.0) {
                auto keep = std::max<std::size_t>(1, std::size_t(prm.subsample * double(n)));
                rng.shuffle(rows);
                rows.resize(keep);
                std::sort(rows.begin(), rows.end());
            }
            auto tree_cols = detail::sample_columns(f, prm.colsample_bytree, rng);
            std::vector<std::vector<int>> level_features(std::size_t(std::max(prm.max_depth, 1)));
            for (auto& lf : level_features) {
                if (prm.colsample_bylevel < 1.0) {
                    auto want = std::max<std::size_t>(
                        1, std::size_t(std::ceil(prm.colsample_bylevel * double(tree_cols.size()))));
                    std::vector<int> pool = tree_cols;
                    rng.shuffle(pool);
                    pool.resize(std::min(want, pool.size()));
                    std::sort(pool.begin(), pool.end());
                    lf = std::move(pool);
                } else {
                    lf = tree_cols;
                }
            }

            detail::GbdtBuilder builder{Xt, &mt, prm, grad, hess, level_features, {}};
            builder.build(rows, 0);
            round_trees.push_back(std::move(builder.tree));
        }

        for (std::size_t c = 0; c < out; ++c) {
            for (std::size_t i = 0; i < n; ++i)
                margin_t.at(i, c) += round_trees[c].predict_row(Xt.row(i), mt.data() + i * f);
            for (std::size_t i = 0; i < nv; ++i)
                margin_v.at(i, c) += round_trees[c].predict_row(Xv.row(i), mv.data() + i * f);
        }
        model.rounds.push_back(std::move(round_trees));

        double train_loss = detail::gbdt_eval_loss(model, margin_t, yt);
        if (!std::isfinite(train_loss)) throw TrialFailed("gbdt: non-finite training loss");

        if (nv > 0) {
            double val_loss = detail::gbdt_eval_loss(model, margin_v, yv);
            if (!std::isfinite(val_loss)) throw TrialFailed("gbdt: non-finite validation loss");
            if (val_loss < best_val) {
                best_val = val_loss;
                best_round = model.rounds.size();
                since_best = 0;
            } else if (++since_best >= std::size_t(prm.patience)) {
                break;
            }
        } else {
            best_round = model.rounds.size();
        }
    }

    model.rounds.resize(best_round);
    model.best_round = best_round;
    return model;
}

} // namespace bakeoff
