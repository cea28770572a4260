#pragma once

// Differentiable oblivious-decision-tree ensemble. Each tree picks one soft
// feature mixture per depth level (temperature softmax over selection
// logits), gates it against a learned threshold, and routes a soft
// probability mass to 2^depth leaf response rows. Trees are arranged in
// layers; later layers see the original features plus all earlier trees'
// outputs, and a linear head maps every tree output to logits or a scalar.

#include <cmath>
#include <vector>

#include "bakeoff/core.hpp"
#include "bakeoff/dataset.hpp"
#include "bakeoff/search_space.hpp"
#include "bakeoff/train_loop.hpp"

namespace bakeoff {

struct SoftOdtHyper {
    int num_layers = 1;
    long long tree_count = 8;  // total across layers
    int tree_depth = 3;
    int tree_output_dim = 1;
    double learning_rate = 1e-2;
    long long batch_size = 64;

    static SoftOdtHyper from_hyperparameters(const Hyperparameters& hp) {
        SoftOdtHyper p;
        p.num_layers = int(hp_get_int(hp, "num_layers", p.num_layers));
        p.tree_count = hp_get_int(hp, "tree_count", p.tree_count);
        p.tree_depth = int(hp_get_int(hp, "tree_depth", p.tree_depth));
        p.tree_output_dim = int(hp_get_int(hp, "tree_output_dim", p.tree_output_dim));
        p.learning_rate = hp_get(hp, "learning_rate", p.learning_rate);
        p.batch_size = hp_get_int(hp, "batch_size", p.batch_size);
        return p;
    }
};

// ============================================================================
// Net
// ============================================================================

struct SoftOdtNet {
    Task task = Task::Regression;
    std::size_t n_raw = 0, out_dim = 1;
    int depth = 3, tree_out = 1;
    double tau = 1.0;  // fixed, not trained

    struct TreeInfo {
        int layer = 0;
        std::size_t in_dim = 0;   // n_raw + earlier trees * tree_out
        std::size_t f_off = 0;    // selection logits, [input i][level j]
        std::size_t b_off = 0;    // thresholds, per level
        std::size_t r_off = 0;    // leaf responses, [leaf][output]
        std::size_t out_slot = 0; // offset into the tree-output vector
    };
    std::vector<TreeInfo> trees;
    std::size_t head_w_off = 0, head_b_off = 0;
    std::size_t total_tree_out = 0;
    std::vector<double> params;

    std::size_t n_leaves() const { return std::size_t(1) << depth; }

    void init(Task t, std::size_t in, std::size_t out, const SoftOdtHyper& ph,
              const Matrix& X_train, Rng& rng) {
        task = t;
        n_raw = in;
        out_dim = out;
        depth = std::max(1, ph.tree_depth);
        tree_out = std::max(1, ph.tree_output_dim);

        int total = int(std::max<long long>(1, ph.tree_count));
        int layers = std::clamp(ph.num_layers, 1, total);
        std::vector<int> per_layer(std::size_t(layers), total / layers);
        for (int l = 0; l < total % layers; ++l) per_layer[std::size_t(l)]++;

        trees.clear();
        std::size_t off = 0, slot = 0, earlier = 0;
        for (int l = 0; l < layers; ++l) {
            std::size_t in_dim = n_raw + earlier * std::size_t(tree_out);
            for (int k = 0; k < per_layer[std::size_t(l)]; ++k) {
                TreeInfo ti;
                ti.layer = l;
                ti.in_dim = in_dim;
                ti.f_off = off;
                off += in_dim * std::size_t(depth);
                ti.b_off = off;
                off += std::size_t(depth);
                ti.r_off = off;
                off += n_leaves() * std::size_t(tree_out);
                ti.out_slot = slot;
                slot += std::size_t(tree_out);
                trees.push_back(ti);
            }
            earlier += std::size_t(per_layer[std::size_t(l)]);
        }
        total_tree_out = slot;
        head_w_off = off;
        off += out_dim * total_tree_out;
        head_b_off = off;
        off += out_dim;
        params.assign(off, 0.0);

        // selection logits near-uniform, thresholds at random training-feature
        // values, leaf responses zero, small random head
        for (const auto& ti : trees) {
            for (std::size_t i = 0; i < ti.in_dim * std::size_t(depth); ++i)
                params[ti.f_off + i] = 0.1 * rng.normal();
            for (int j = 0; j < depth; ++j) {
                std::size_t r = std::size_t(rng.uniform_int(0, (long long)X_train.rows - 1));
                std::size_t c = std::size_t(rng.uniform_int(0, (long long)n_raw - 1));
                params[ti.b_off + std::size_t(j)] = X_train.at(r, c);
            }
        }
        double head_scale = 1.0 / std::sqrt(double(std::max<std::size_t>(1, total_tree_out)));
        for (std::size_t i = 0; i < out_dim * total_tree_out; ++i)
            params[head_w_off + i] = head_scale * rng.normal();
    }

    // Selection weights are sample-independent: softmax(F[:,j] / tau) per
    // tree and level, cached once per batch.
    void selector_cache(std::vector<std::vector<double>>& sel) const {
        sel.resize(trees.size());
        for (std::size_t t = 0; t < trees.size(); ++t) {
            const TreeInfo& ti = trees[t];
            sel[t].resize(ti.in_dim * std::size_t(depth));
            for (int j = 0; j < depth; ++j) {
                double m = -std::numeric_limits<double>::infinity();
                for (std::size_t i = 0; i < ti.in_dim; ++i)
                    m = std::max(m, params[ti.f_off + i * std::size_t(depth) + std::size_t(j)] / tau);
                double sum = 0.0;
                for (std::size_t i = 0; i < ti.in_dim; ++i) {
                    double e = std::exp(params[ti.f_off + i * std::size_t(depth) + std::size_t(j)] / tau - m);
                    sel[t][i * std::size_t(depth) + std::size_t(j)] = e;
                    sum += e;
                }
                for (std::size_t i = 0; i < ti.in_dim; ++i)
                    sel[t][i * std::size_t(depth) + std::size_t(j)] /= sum;
            }
        }
    }

    struct Scratch {
        std::vector<double> in_vec;          // raw features + all tree outputs
        std::vector<double> gate;            // per tree: depth sigmoids
        std::vector<double> leaf_chain;      // per tree: 1+2+...+2^depth probs
        std::vector<double> d_in;
        std::vector<double> d_chain;
        std::size_t chain_len = 0;
    };

    std::size_t chain_len() const { return (std::size_t(2) << depth) - 1; }

    // Forward one sample; fills scratch so backward can reuse the internals.
    void forward_sample(std::span<const double> x, const std::vector<std::vector<double>>& sel,
                        Scratch& s, std::span<double> logits) const {
        s.in_vec.assign(n_raw + total_tree_out, 0.0);
        std::copy(x.begin(), x.end(), s.in_vec.begin());
        s.gate.assign(trees.size() * std::size_t(depth), 0.0);
        s.chain_len = chain_len();
        s.leaf_chain.assign(trees.size() * s.chain_len, 0.0);

        for (std::size_t t = 0; t < trees.size(); ++t) {
            const TreeInfo& ti = trees[t];
            double* chain = s.leaf_chain.data() + t * s.chain_len;
            chain[0] = 1.0;
            std::size_t level_off = 0;  // start of the current level inside the chain
            for (int j = 0; j < depth; ++j) {
                double score = 0.0;
                for (std::size_t i = 0; i < ti.in_dim; ++i)
                    score += sel[t][i * std::size_t(depth) + std::size_t(j)] * s.in_vec[i];
                double c = sigmoid((score - params[ti.b_off + std::size_t(j)]) / tau);
                s.gate[t * std::size_t(depth) + std::size_t(j)] = c;
                std::size_t width = std::size_t(1) << j;
                double* cur = chain + level_off;
                double* nxt = cur + width;
                for (std::size_t i = 0; i < width; ++i) {
                    nxt[2 * i] = cur[i] * (1.0 - c);
                    nxt[2 * i + 1] = cur[i] * c;
                }
                level_off += width;
            }
            const double* leaves = chain + level_off;  // 2^depth entries
            const double* R = params.data() + ti.r_off;
            for (int o = 0; o < tree_out; ++o) {
                double v = 0.0;
                for (std::size_t l = 0; l < n_leaves(); ++l)
                    v += leaves[l] * R[l * std::size_t(tree_out) + std::size_t(o)];
                s.in_vec[n_raw + ti.out_slot + std::size_t(o)] = v;
            }
        }

        const double* w = params.data() + head_w_off;
        const double* b = params.data() + head_b_off;
        const double* tree_outputs = s.in_vec.data() + n_raw;
        for (std::size_t k = 0; k < out_dim; ++k) {
            double z = b[k];
            const double* wr = w + k * total_tree_out;
            for (std::size_t q = 0; q < total_tree_out; ++q) z += wr[q] * tree_outputs[q];
            logits[k] = z;
        }
    }

    double loss_and_grad(const Matrix& X, const std::vector<double>& y,
                         const std::vector<std::size_t>& batch, std::vector<double>& grad) const {
        grad.assign(params.size(), 0.0);
        std::vector<std::vector<double>> sel;
        selector_cache(sel);

        // pre-jacobian selector-score gradients accumulate in F's layout
        std::vector<double> sel_grad(params.size(), 0.0);

        Scratch s;
        std::vector<double> logits(out_dim), dz(out_dim);
        double loss_sum = 0.0;

        for (std::size_t bi : batch) {
            forward_sample(X.row(bi), sel, s, logits);

            if (is_classification(task)) {
                std::vector<double> p(logits);
                softmax_in_place(p);
                auto cls = std::size_t(y[bi]);
                loss_sum += -std::log(clamp_prob(p[cls]));
                for (std::size_t k = 0; k < out_dim; ++k) dz[k] = p[k] - (k == cls ? 1.0 : 0.0);
            } else {
                double d = logits[0] - y[bi];
                loss_sum += d * d;
                dz[0] = 2.0 * d;
            }

            s.d_in.assign(n_raw + total_tree_out, 0.0);
            const double* tree_outputs = s.in_vec.data() + n_raw;
            double* gw = grad.data() + head_w_off;
            double* gb = grad.data() + head_b_off;
            const double* w = params.data() + head_w_off;
            for (std::size_t k = 0; k < out_dim; ++k) {
                gb[k] += dz[k];
                double* gwr = gw + k * total_tree_out;
                const double* wr = w + k * total_tree_out;
                for (std::size_t q = 0; q < total_tree_out; ++q) {
                    gwr[q] += dz[k] * tree_outputs[q];
                    s.d_in[n_raw + q] += dz[k] * wr[q];
                }
            }

            s.d_chain.assign(s.chain_len, 0.0);
            for (std::size_t ri = trees.size(); ri-- > 0;) {
                const TreeInfo& ti = trees[ri];
                const double* chain = s.leaf_chain.data() + ri * s.chain_len;
                std::size_t leaf_off = s.chain_len - n_leaves();

                const double* R = params.data() + ti.r_off;
                double* gR = grad.data() + ti.r_off;
                double* d_leaf = s.d_chain.data() + leaf_off;
                std::fill(s.d_chain.begin(), s.d_chain.end(), 0.0);
                for (int o = 0; o < tree_out; ++o) {
                    double g_out = s.d_in[n_raw + ti.out_slot + std::size_t(o)];
                    if (g_out == 0.0) continue;
                    for (std::size_t l = 0; l < n_leaves(); ++l) {
                        gR[l * std::size_t(tree_out) + std::size_t(o)] +=
                            g_out * chain[leaf_off + l];
                        d_leaf[l] += g_out * R[l * std::size_t(tree_out) + std::size_t(o)];
                    }
                }

                std::size_t level_off = leaf_off;
                for (int j = depth - 1; j >= 0; --j) {
                    std::size_t width = std::size_t(1) << j;
                    level_off -= width;
                    const double* cur = chain + level_off;
                    double* d_nxt = s.d_chain.data() + level_off + width;
                    double* d_cur = s.d_chain.data() + level_off;
                    double c = s.gate[ri * std::size_t(depth) + std::size_t(j)];
                    double dc = 0.0;
                    for (std::size_t i = 0; i < width; ++i) {
                        dc += cur[i] * (d_nxt[2 * i + 1] - d_nxt[2 * i]);
                        d_cur[i] = d_nxt[2 * i] * (1.0 - c) + d_nxt[2 * i + 1] * c;
                    }
                    double dscore = dc * c * (1.0 - c) / tau;
                    grad[ti.b_off + std::size_t(j)] += -dscore;
                    if (dscore != 0.0) {
                        for (std::size_t i = 0; i < ti.in_dim; ++i) {
                            sel_grad[ti.f_off + i * std::size_t(depth) + std::size_t(j)] +=
                                dscore * s.in_vec[i];
                            s.d_in[i] += dscore * sel[ri][i * std::size_t(depth) + std::size_t(j)];
                        }
                    }
                }
            }
        }

        // softmax jacobian, once per (tree, level)
        for (std::size_t t = 0; t < trees.size(); ++t) {
            const TreeInfo& ti = trees[t];
            for (int j = 0; j < depth; ++j) {
                double dot = 0.0;
                for (std::size_t i = 0; i < ti.in_dim; ++i)
                    dot += sel[t][i * std::size_t(depth) + std::size_t(j)] *
                           sel_grad[ti.f_off + i * std::size_t(depth) + std::size_t(j)];
                for (std::size_t i = 0; i < ti.in_dim; ++i) {
                    std::size_t idx = ti.f_off + i * std::size_t(depth) + std::size_t(j);
                    grad[idx] = sel[t][i * std::size_t(depth) + std::size_t(j)] *
                                (sel_grad[idx] - dot) / tau;
                }
            }
        }

        double inv = 1.0 / double(batch.size());
        for (double& g : grad) g *= inv;
        return loss_sum * inv;
    }

    Predictions predict(const Matrix& X) const {
        Predictions out;
        out.task = task;
        std::vector<std::vector<double>> sel;
        selector_cache(sel);
        Scratch s;
        std::vector<double> logits(out_dim);
        if (task == Task::Regression) {
            out.values.resize(X.rows);
            for (std::size_t i = 0; i < X.rows; ++i) {
                forward_sample(X.row(i), sel, s, logits);
                out.values[i] = logits[0];
            }
        } else {
            out.probs = Matrix(X.rows, out_dim);
            for (std::size_t i = 0; i < X.rows; ++i) {
                forward_sample(X.row(i), sel, s, logits);
                std::copy(logits.begin(), logits.end(), out.probs.row(i).begin());
                softmax_in_place(out.probs.row(i));
            }
        }
        return out;
    }
};

// ============================================================================
// Learner wrapper
// ============================================================================

struct SoftOdtModel {
    SoftOdtNet net;
    OneHotLayout layout;
    TrainTrace trace;

    Predictions predict(const Matrix& X, const std::vector<std::uint8_t>* missing = nullptr) const {
        return net.predict(layout.expand(X, missing));
    }
};

inline SoftOdtModel fit_soft_odt(const DataView& train, const DataView& val,
                                 const Hyperparameters& hp, std::uint64_t seed,
                                 const TrainOptions& opts = {}) {
    if (train.size() == 0) throw Error("fit_soft_odt: empty train set");
    const Dataset& ds = *train.ds;
    SoftOdtHyper ph = SoftOdtHyper::from_hyperparameters(hp);

    SoftOdtModel model;
    model.layout = OneHotLayout(ds.feature_meta);

    auto materialize = [&](const DataView& view, Matrix& X, std::vector<double>& y) {
        X = Matrix(view.size(), model.layout.expanded_cols);
        y.resize(view.size());
        std::vector<std::uint8_t> miss_row(ds.n_cols());
        std::vector<double> raw(ds.n_cols());
        for (std::size_t i = 0; i < view.size(); ++i) {
            for (std::size_t j = 0; j < ds.n_cols(); ++j) {
                miss_row[j] = view.missing(i, j) ? 1 : 0;
                raw[j] = view.x(i, j);
            }
            model.layout.expand_row(raw, miss_row.data(), X.row(i));
            y[i] = view.y(i);
        }
    };
    Matrix Xt, Xv;
    std::vector<double> yt, yv;
    materialize(train, Xt, yt);
    materialize(val, Xv, yv);

    std::size_t out_dim = ds.task == Task::Regression ? 1 : std::size_t(ds.n_classes);
    Rng rng(seed);
    model.net.init(ds.task, model.layout.expanded_cols, out_dim, ph, Xt, rng);

    NetTrainer<SoftOdtNet> trainer(model.net, Xt, yt, Xv, yv, std::size_t(ph.batch_size),
                                   ph.learning_rate);
    model.trace = train_iterative(trainer, opts, rng);
    return model;
}

} // namespace bakeoff
