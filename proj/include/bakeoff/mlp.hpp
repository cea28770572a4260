#pragma once

// Fully-connected ReLU network baseline with hand-rolled backprop.

#include <cmath>
#include <vector>

#include "bakeoff/core.hpp"
#include "bakeoff/dataset.hpp"
#include "bakeoff/search_space.hpp"
#include "bakeoff/train_loop.hpp"

namespace bakeoff {

struct MlpHyper {
    int hidden_size = 32;
    int num_layers = 1;  // hidden layers
    double learning_rate = 1e-3;
    long long batch_size = 64;

    static MlpHyper from_hyperparameters(const Hyperparameters& hp) {
        MlpHyper p;
        p.hidden_size = int(hp_get_int(hp, "hidden_size", p.hidden_size));
        p.num_layers = int(hp_get_int(hp, "num_layers", p.num_layers));
        p.learning_rate = hp_get(hp, "learning_rate", p.learning_rate);
        p.batch_size = hp_get_int(hp, "batch_size", p.batch_size);
        return p;
    }
};

// ============================================================================
// Net
// ============================================================================

struct MlpNet {
    Task task = Task::Regression;
    std::size_t in_dim = 0, out_dim = 1;
    int hidden = 32, layers = 1;
    std::vector<double> params;  // per layer: row-major W then b

    // layer l in [0, layers]: dims_in -> dims_out; last layer is linear output
    std::size_t layer_in(int l) const { return l == 0 ? in_dim : std::size_t(hidden); }
    std::size_t layer_out(int l) const { return l == layers ? out_dim : std::size_t(hidden); }

    std::size_t weight_offset(int l) const {
        std::size_t off = 0;
        for (int k = 0; k < l; ++k) off += layer_in(k) * layer_out(k) + layer_out(k);
        return off;
    }
    std::size_t param_count() const { return weight_offset(layers + 1); }

    void init(Task t, std::size_t in, std::size_t out, int hidden_size, int n_layers, Rng& rng) {
        task = t;
        in_dim = in;
        out_dim = out;
        hidden = hidden_size;
        layers = n_layers;
        params.assign(param_count(), 0.0);
        for (int l = 0; l <= layers; ++l) {
            std::size_t off = weight_offset(l);
            double scale = std::sqrt(2.0 / double(layer_in(l)));
            for (std::size_t i = 0; i < layer_in(l) * layer_out(l); ++i)
                params[off + i] = scale * rng.normal();
        }
    }

    // z = W x + b for layer l
    void affine(int l, std::span<const double> x, std::span<double> z) const {
        std::size_t ni = layer_in(l), no = layer_out(l);
        const double* w = params.data() + weight_offset(l);
        const double* b = w + ni * no;
        for (std::size_t o = 0; o < no; ++o) {
            double s = b[o];
            const double* wr = w + o * ni;
            for (std::size_t i = 0; i < ni; ++i) s += wr[i] * x[i];
            z[o] = s;
        }
    }

    void forward(std::span<const double> x, std::vector<std::vector<double>>& acts) const {
        acts.resize(std::size_t(layers) + 2);
        acts[0].assign(x.begin(), x.end());
        for (int l = 0; l <= layers; ++l) {
            acts[std::size_t(l) + 1].resize(layer_out(l));
            affine(l, acts[std::size_t(l)], acts[std::size_t(l) + 1]);
            if (l < layers)
                for (double& v : acts[std::size_t(l) + 1]) v = std::max(0.0, v);
        }
    }

    // Mean loss over the batch; grad matches params layout.
    double loss_and_grad(const Matrix& X, const std::vector<double>& y,
                         const std::vector<std::size_t>& batch, std::vector<double>& grad) const {
        grad.assign(params.size(), 0.0);
        std::vector<std::vector<double>> acts;
        std::vector<double> delta, delta_prev;
        double loss_sum = 0.0;

        for (std::size_t bi : batch) {
            forward(X.row(bi), acts);
            std::vector<double>& z = acts[std::size_t(layers) + 1];

            delta.resize(out_dim);
            if (is_classification(task)) {
                std::vector<double> p = z;
                softmax_in_place(p);
                auto cls = std::size_t(y[bi]);
                loss_sum += -std::log(clamp_prob(p[cls]));
                for (std::size_t o = 0; o < out_dim; ++o)
                    delta[o] = p[o] - (o == cls ? 1.0 : 0.0);
            } else {
                double d = z[0] - y[bi];
                loss_sum += d * d;
                delta[0] = 2.0 * d;
            }

            for (int l = layers; l >= 0; --l) {
                std::size_t ni = layer_in(l), no = layer_out(l);
                std::size_t off = weight_offset(l);
                const std::vector<double>& a_in = acts[std::size_t(l)];
                double* gw = grad.data() + off;
                double* gb = gw + ni * no;
                for (std::size_t o = 0; o < no; ++o) {
                    double d = delta[o];
                    gb[o] += d;
                    double* gwr = gw + o * ni;
                    for (std::size_t i = 0; i < ni; ++i) gwr[i] += d * a_in[i];
                }
                if (l == 0) break;
                delta_prev.assign(ni, 0.0);
                const double* w = params.data() + off;
                for (std::size_t o = 0; o < no; ++o) {
                    double d = delta[o];
                    const double* wr = w + o * ni;
                    for (std::size_t i = 0; i < ni; ++i) delta_prev[i] += d * wr[i];
                }
                // ReLU mask of the layer below
                for (std::size_t i = 0; i < ni; ++i)
                    if (a_in[i] <= 0.0) delta_prev[i] = 0.0;
                delta = delta_prev;
            }
        }

        double inv = 1.0 / double(batch.size());
        for (double& g : grad) g *= inv;
        return loss_sum * inv;
    }

    Predictions predict(const Matrix& X) const {
        Predictions out;
        out.task = task;
        std::vector<std::vector<double>> acts;
        if (task == Task::Regression) {
            out.values.resize(X.rows);
            for (std::size_t i = 0; i < X.rows; ++i) {
                forward(X.row(i), acts);
                out.values[i] = acts[std::size_t(layers) + 1][0];
            }
        } else {
            out.probs = Matrix(X.rows, out_dim);
            for (std::size_t i = 0; i < X.rows; ++i) {
                forward(X.row(i), acts);
                auto& z = acts[std::size_t(layers) + 1];
                std::copy(z.begin(), z.end(), out.probs.row(i).begin());
                softmax_in_place(out.probs.row(i));
            }
        }
        return out;
    }
};

// ============================================================================
// Learner wrapper
// ============================================================================

struct MlpModel {
    MlpNet net;
    OneHotLayout layout;
    TrainTrace trace;

    Predictions predict(const Matrix& X, const std::vector<std::uint8_t>* missing = nullptr) const {
        return net.predict(layout.expand(X, missing));
    }
};

inline MlpModel fit_mlp(const DataView& train, const DataView& val, const Hyperparameters& hp,
                        std::uint64_t seed, const TrainOptions& opts = {}) {
    if (train.size() == 0) throw Error("fit_mlp: empty train set");
    const Dataset& ds = *train.ds;
    MlpHyper ph = MlpHyper::from_hyperparameters(hp);

    MlpModel model;
    model.layout = OneHotLayout(ds.feature_meta);

    auto materialize = [&](const DataView& view, Matrix& X, std::vector<double>& y) {
        X = Matrix(view.size(), model.layout.expanded_cols);
        y.resize(view.size());
        std::vector<std::uint8_t> miss_row(ds.n_cols());
        for (std::size_t i = 0; i < view.size(); ++i) {
            for (std::size_t j = 0; j < ds.n_cols(); ++j)
                miss_row[j] = view.missing(i, j) ? 1 : 0;
            std::vector<double> raw(ds.n_cols());
            for (std::size_t j = 0; j < ds.n_cols(); ++j) raw[j] = view.x(i, j);
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
    model.net.init(ds.task, model.layout.expanded_cols, out_dim, ph.hidden_size, ph.num_layers, rng);

    NetTrainer<MlpNet> trainer(model.net, Xt, yt, Xv, yv, std::size_t(ph.batch_size),
                               ph.learning_rate);
    model.trace = train_iterative(trainer, opts, rng);
    return model;
}

} // namespace bakeoff
