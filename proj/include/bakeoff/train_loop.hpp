#pragma once

// Epoch-based training machinery shared by the differentiable learners:
// Adam on a flat parameter vector, patience-based early stopping with
// best-epoch parameter restoration, and the generic training loop.

#include <cmath>
#include <limits>
#include <vector>

#include "bakeoff/core.hpp"
#include "bakeoff/metrics.hpp"

namespace bakeoff {

// ============================================================================
// Adam
// ============================================================================

// Fixed learning rate, no schedule.
struct AdamOptimizer {
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<double> m, v;
    std::size_t t = 0;

    void step(std::vector<double>& params, const std::vector<double>& grad) {
        if (m.size() != params.size()) {
            m.assign(params.size(), 0.0);
            v.assign(params.size(), 0.0);
        }
        ++t;
        const double c1 = 1.0 - std::pow(beta1, double(t));
        const double c2 = 1.0 - std::pow(beta2, double(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
};

// ============================================================================
// Early stopping
// ============================================================================

// Strict-improvement tracker: stop after `patience` consecutive epochs
// without a new best validation loss.
class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience) : patience_(patience) {
        if (patience_ < 1) throw Error("EarlyStopper: patience must be >= 1");
    }

    // Feed one epoch's validation loss; returns true when it set a new best.
    bool observe(double val_loss) {
        ++epoch_;
        if (val_loss < best_) {
            best_ = val_loss;
            best_epoch_ = epoch_;
            since_best_ = 0;
            return true;
        }
        ++since_best_;
        return false;
    }

    bool should_stop() const { return since_best_ >= patience_; }
    std::size_t best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_; }
    std::size_t epochs_seen() const { return epoch_; }

private:
    std::size_t patience_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t best_epoch_ = 0;
    std::size_t since_best_ = 0;
    std::size_t epoch_ = 0;
};

// ============================================================================
// Generic loop
// ============================================================================

struct TrainOptions {
    std::size_t patience = 100;
    std::size_t max_epochs = 1000;
    // false = keep the final epoch's parameters (fixed-epoch refits)
    bool restore_best = true;
};

struct TrainTrace {
    std::vector<double> val_losses;  // one per epoch run
    std::size_t best_epoch = 0;
    double best_val = std::numeric_limits<double>::infinity();
    bool hit_max_epochs = false;
};

// Model concept:
//   std::vector<double>& params();
//   double run_epoch(Rng&);        // one pass over the train set, returns train loss
//   double validation_loss();
// The model is left holding the parameters of its best epoch.
template <class Model>
TrainTrace train_iterative(Model& model, const TrainOptions& opts, Rng& rng) {
    if (opts.patience < 1) throw Error("train_iterative: patience must be >= 1");
    EarlyStopper stopper(opts.patience);
    TrainTrace trace;
    std::vector<double> best_params = model.params();

    std::size_t epoch = 0;
    for (; epoch < opts.max_epochs;) {
        double train_loss = model.run_epoch(rng);
        if (!std::isfinite(train_loss)) throw TrialFailed("training loss went non-finite");
        ++epoch;
        double val_loss = model.validation_loss();
        if (!std::isfinite(val_loss)) throw TrialFailed("validation loss went non-finite");
        trace.val_losses.push_back(val_loss);
        if (stopper.observe(val_loss)) best_params = model.params();
        if (stopper.should_stop()) break;
    }

    trace.best_epoch = stopper.best_epoch();
    trace.best_val = stopper.best_loss();
    trace.hit_max_epochs = epoch == opts.max_epochs && !stopper.should_stop();
    if (opts.restore_best) model.params() = best_params;
    return trace;
}

// ============================================================================
// Net trainer
// ============================================================================

// Binds a differentiable net (flat params + loss_and_grad + predict) to a
// materialized train/val split for use with train_iterative.
template <class Net>
struct NetTrainer {
    Net& net;
    const Matrix& X_train;
    const std::vector<double>& y_train;
    const Matrix& X_val;
    const std::vector<double>& y_val;
    std::size_t batch_size;
    AdamOptimizer adam;

    std::vector<double> grad;
    std::vector<std::size_t> order;

    NetTrainer(Net& n, const Matrix& xt, const std::vector<double>& yt, const Matrix& xv,
               const std::vector<double>& yv, std::size_t batch, double lr)
        : net(n), X_train(xt), y_train(yt), X_val(xv), y_val(yv),
          batch_size(std::max<std::size_t>(1, std::min(batch, xt.rows))) {
        adam.lr = lr;
        order.resize(xt.rows);
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    }

    std::vector<double>& params() { return net.params; }

    double run_epoch(Rng& rng) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            std::size_t end = std::min(start + batch_size, order.size());
            std::vector<std::size_t> batch(order.begin() + long(start), order.begin() + long(end));
            loss_sum += net.loss_and_grad(X_train, y_train, batch, grad);
            adam.step(net.params, grad);
            ++batches;
        }
        return loss_sum / double(std::max<std::size_t>(1, batches));
    }

    double validation_loss() {
        Predictions p = net.predict(X_val);
        return task_loss(p, y_val);
    }
};

} // namespace bakeoff
