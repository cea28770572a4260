#pragma once

// Tree-structured Parzen estimator over SearchSpace dimensions, the trial
// budget loop, the persisted trial-record format, and best-so-far curves.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "bakeoff/core.hpp"
#include "bakeoff/metrics.hpp"
#include "bakeoff/search_space.hpp"

namespace bakeoff {

// ============================================================================
// Trial records
// ============================================================================

struct TrialRecord {
    enum class Status { Ok, Failed, Pruned };

    std::size_t id = 0;
    std::string learner;
    Hyperparameters params;
    std::uint64_t seed = 0;  // evaluation seed
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    double seconds = 0.0;    // wall clock; persisted separately from the log line
    Status status = Status::Failed;
    std::map<std::string, double> test_metrics;  // final configuration only
};

inline const char* status_name(TrialRecord::Status s) {
    switch (s) {
    case TrialRecord::Status::Ok: return "ok";
    case TrialRecord::Status::Failed: return "failed";
    case TrialRecord::Status::Pruned: return "pruned";
    }
    return "?";
}

// One line per trial: fixed fields first, then the flat parameter map.
// Wall-clock seconds are excluded so identical runs produce identical bytes.
inline std::string trial_line(const TrialRecord& t) {
    std::string line = "id=" + std::to_string(t.id) + " learner=" + t.learner +
                       " seed=" + std::to_string(t.seed) + " status=" + status_name(t.status) +
                       " val_loss=" + detail::fmt_double(t.val_loss);
    for (const auto& [k, v] : t.params) line += " " + k + "=" + detail::fmt_double(v);
    return line;
}

inline TrialRecord parse_trial_line(const std::string& line) {
    TrialRecord t;
    auto tokens = detail::split(detail::trim(line), ' ');
    std::size_t field = 0;
    for (const auto& tok : tokens) {
        if (tok.empty()) continue;
        auto eq = tok.find('=');
        if (eq == std::string::npos) throw Error("trial log: bad token '" + tok + "'");
        std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        switch (field) {
        case 0: t.id = std::stoull(val); break;
        case 1: t.learner = val; break;
        case 2: t.seed = std::stoull(val); break;
        case 3:
            t.status = val == "ok"       ? TrialRecord::Status::Ok
                       : val == "pruned" ? TrialRecord::Status::Pruned
                                         : TrialRecord::Status::Failed;
            break;
        case 4: t.val_loss = std::strtod(val.c_str(), nullptr); break;
        default: t.params[key] = std::strtod(val.c_str(), nullptr); break;
        }
        ++field;
    }
    if (field < 5) throw Error("trial log: truncated line '" + line + "'");
    return t;
}

// ============================================================================
// Kernel estimators
// ============================================================================

namespace detail {

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Truncated-Gaussian mixture on [lo, hi] in an already-transformed space.
// Bandwidths: max of the spacing to each neighbor and (hi-lo)/sqrt(n).
struct Kde1D {
    double lo = 0.0, hi = 1.0;
    std::vector<double> centers, bw;

    static Kde1D fit(std::vector<double> pts, double lo, double hi) {
        Kde1D k;
        k.lo = lo;
        k.hi = hi;
        std::sort(pts.begin(), pts.end());
        const double base = (hi - lo) / std::sqrt(double(std::max<std::size_t>(1, pts.size())));
        for (std::size_t i = 0; i < pts.size(); ++i) {
            double b = base;
            if (i > 0) b = std::max(b, pts[i] - pts[i - 1]);
            if (i + 1 < pts.size()) b = std::max(b, pts[i + 1] - pts[i]);
            k.centers.push_back(pts[i]);
            k.bw.push_back(b);
        }
        return k;
    }

    bool empty() const { return centers.empty(); }

    double density(double x) const {
        if (empty()) return 1.0 / (hi - lo);  // uninformative
        double sum = 0.0;
        for (std::size_t i = 0; i < centers.size(); ++i) {
            double z = normal_cdf((hi - centers[i]) / bw[i]) - normal_cdf((lo - centers[i]) / bw[i]);
            if (z <= 0.0) continue;
            sum += normal_pdf((x - centers[i]) / bw[i]) / (bw[i] * z);
        }
        return std::max(sum / double(centers.size()), 1e-300);
    }

    double sample(Rng& rng) const {
        if (empty()) return lo + (hi - lo) * rng.uniform();
        std::size_t i = std::size_t(rng.uniform_int(0, (long long)centers.size() - 1));
        double a = normal_cdf((lo - centers[i]) / bw[i]);
        double b = normal_cdf((hi - centers[i]) / bw[i]);
        double p = a + (b - a) * rng.uniform();
        boost::math::normal dist(centers[i], bw[i]);
        double x = boost::math::quantile(dist, std::clamp(p, 1e-12, 1.0 - 1e-12));
        return std::clamp(x, lo, hi);
    }
};

// Per-dimension estimator over one side (good or bad) of the history split.
struct DimEstimator {
    const Dimension* dim = nullptr;
    Kde1D kde;                       // continuous / discrete / nested branch
    std::vector<double> counts;      // choice: per-option counts + 1 smoothing
    double total = 0.0;
    int nested_option = -1;

    static double transform(DimKind kind, double v) {
        return kind == DimKind::LogUniform ? std::log(v) : v;
    }
    static double untransform(DimKind kind, double v) {
        return kind == DimKind::LogUniform ? std::exp(v) : v;
    }

    static int option_index(const Dimension& d, double v) {
        for (std::size_t i = 0; i < d.options.size(); ++i)
            if (!d.options[i].nested && d.options[i].literal == v) return int(i);
        for (std::size_t i = 0; i < d.options.size(); ++i)
            if (d.options[i].nested) return int(i);
        return 0;
    }

    static DimEstimator fit(const Dimension& d, const std::vector<double>& values) {
        DimEstimator e;
        e.dim = &d;
        if (d.kind == DimKind::Choice) {
            e.counts.assign(d.options.size(), 1.0);  // add-one smoothing
            std::vector<double> branch_pts;
            for (std::size_t i = 0; i < d.options.size(); ++i)
                if (d.options[i].nested) e.nested_option = int(i);
            for (double v : values) {
                int oi = option_index(d, v);
                e.counts[std::size_t(oi)] += 1.0;
                if (oi == e.nested_option) {
                    const auto& o = d.options[std::size_t(oi)];
                    branch_pts.push_back(transform(o.sub_kind, v));
                }
            }
            for (double c : e.counts) e.total += c;
            if (e.nested_option >= 0) {
                const auto& o = d.options[std::size_t(e.nested_option)];
                e.kde = Kde1D::fit(std::move(branch_pts), transform(o.sub_kind, o.sub_lo),
                                   transform(o.sub_kind, o.sub_hi));
            }
        } else {
            std::vector<double> pts;
            pts.reserve(values.size());
            for (double v : values) pts.push_back(transform(d.kind, v));
            e.kde = Kde1D::fit(std::move(pts), transform(d.kind, d.lo), transform(d.kind, d.hi));
        }
        return e;
    }

    double log_density(double v) const {
        const Dimension& d = *dim;
        if (d.kind == DimKind::Choice) {
            int oi = option_index(d, v);
            double p = counts[std::size_t(oi)] / total;
            double ld = std::log(p);
            if (oi == nested_option) {
                const auto& o = d.options[std::size_t(oi)];
                ld += std::log(kde.density(transform(o.sub_kind, v)));
            }
            return ld;
        }
        return std::log(kde.density(transform(d.kind, v)));
    }

    double sample(Rng& rng) const {
        const Dimension& d = *dim;
        if (d.kind == DimKind::Choice) {
            double u = rng.uniform() * total;
            std::size_t oi = 0;
            double acc = 0.0;
            for (; oi < counts.size(); ++oi) {
                acc += counts[oi];
                if (u < acc) break;
            }
            oi = std::min(oi, counts.size() - 1);
            const auto& o = d.options[oi];
            if (!o.nested) return o.literal;
            return untransform(o.sub_kind, kde.sample(rng));
        }
        double x = untransform(d.kind, kde.sample(rng));
        if (d.kind == DimKind::DiscreteUniform)
            x = std::clamp(std::round(x), d.lo, d.hi);
        return x;
    }
};

} // namespace detail

// ============================================================================
// TPE suggestion
// ============================================================================

struct TpeConfig {
    double gamma = 0.25;
    std::size_t n_startup = 20;
    std::size_t n_candidates = 24;
};

// Splits finished trials at the gamma-quantile of validation loss, fits
// kernel estimators per dimension for both sides, draws candidates from the
// good side, and keeps the candidate with the best good/bad density ratio.
// Failed trials sit in the bad set so the search steers away from them.
inline Hyperparameters tpe_suggest(const std::vector<TrialRecord>& history,
                                   const SearchSpace& space, const TpeConfig& cfg,
                                   std::uint64_t seed) {
    Rng rng(seed);

    std::vector<const TrialRecord*> ok, failed;
    for (const auto& t : history) {
        if (t.status == TrialRecord::Status::Ok && std::isfinite(t.val_loss))
            ok.push_back(&t);
        else
            failed.push_back(&t);
    }
    if (ok.size() < std::max<std::size_t>(cfg.n_startup, 2)) return sample(space, rng);

    std::stable_sort(ok.begin(), ok.end(), [](const TrialRecord* a, const TrialRecord* b) {
        if (a->val_loss != b->val_loss) return a->val_loss < b->val_loss;
        return a->id < b->id;
    });
    std::size_t n_good = std::max<std::size_t>(1, std::size_t(std::ceil(cfg.gamma * double(ok.size()))));
    n_good = std::min(n_good, ok.size() - 1);

    std::vector<const TrialRecord*> good(ok.begin(), ok.begin() + long(n_good));
    std::vector<const TrialRecord*> bad(ok.begin() + long(n_good), ok.end());
    bad.insert(bad.end(), failed.begin(), failed.end());

    std::vector<detail::DimEstimator> good_est, bad_est;
    for (const auto& [name, dim] : space.dims) {
        auto collect = [&](const std::vector<const TrialRecord*>& set) {
            std::vector<double> vals;
            for (const auto* t : set) {
                auto it = t->params.find(name);
                if (it != t->params.end()) vals.push_back(it->second);
            }
            return vals;
        };
        good_est.push_back(detail::DimEstimator::fit(dim, collect(good)));
        bad_est.push_back(detail::DimEstimator::fit(dim, collect(bad)));
    }

    Hyperparameters best_hp;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cfg.n_candidates; ++c) {
        Hyperparameters hp;
        double score = 0.0;
        for (std::size_t d = 0; d < space.dims.size(); ++d) {
            double v = good_est[d].sample(rng);
            hp[space.dims[d].first] = v;
            score += good_est[d].log_density(v) - bad_est[d].log_density(v);
        }
        if (score > best_score) {
            best_score = score;
            best_hp = std::move(hp);
        }
    }
    return best_hp;
}

// ============================================================================
// Budgeted optimization
// ============================================================================

using Objective = std::function<double(const Hyperparameters&, std::uint64_t seed)>;

struct OptimizeOptions {
    std::size_t budget = 1000;  // total objective evaluations, resumed included
    TpeConfig tpe;
    std::size_t workers = 1;
    std::string learner_name;
    const Hyperparameters* warm_start = nullptr;  // evaluated as trial 0
    std::function<void(const TrialRecord&)> on_trial;
};

struct OptimizeResult {
    TrialRecord best;
    std::vector<TrialRecord> history;
};

inline std::uint64_t trial_suggest_seed(std::uint64_t master, std::size_t id) {
    return derive_seed(master, 2 * id);
}
inline std::uint64_t trial_eval_seed(std::uint64_t master, std::size_t id) {
    return derive_seed(master, 2 * id + 1);
}

// Runs trials until exactly `budget` evaluations exist (counting any resumed
// history). Suggestions inside a dispatch batch share the same history
// snapshot; records are appended in trial-id order, so a fixed seed gives an
// identical history regardless of worker count.
inline OptimizeResult optimize(const Objective& objective, const SearchSpace& space,
                               const OptimizeOptions& opts, std::uint64_t master_seed,
                               std::vector<TrialRecord> history = {}) {
    if (opts.budget < 1) throw Error("optimize: budget must be >= 1");
    space.validate();

    while (history.size() < opts.budget) {
        std::size_t batch = std::min(std::max<std::size_t>(opts.workers, 1),
                                     opts.budget - history.size());
        std::vector<TrialRecord> pending(batch);
        for (std::size_t b = 0; b < batch; ++b) {
            std::size_t id = history.size() + b;
            TrialRecord& t = pending[b];
            t.id = id;
            t.learner = opts.learner_name;
            t.seed = trial_eval_seed(master_seed, id);
            if (id == 0 && opts.warm_start != nullptr)
                t.params = *opts.warm_start;
            else
                t.params = tpe_suggest(history, space, opts.tpe, trial_suggest_seed(master_seed, id));
        }
        parallel_for(batch, opts.workers, [&](std::size_t b) {
            TrialRecord& t = pending[b];
            auto t0 = std::chrono::steady_clock::now();
            double loss = std::numeric_limits<double>::quiet_NaN();
            try {
                loss = objective(t.params, t.seed);
            } catch (const TrialFailed&) {
                loss = std::numeric_limits<double>::quiet_NaN();
            }
            t.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            t.val_loss = loss;
            t.status = std::isfinite(loss) ? TrialRecord::Status::Ok : TrialRecord::Status::Failed;
        });
        for (auto& t : pending) {
            if (opts.on_trial) opts.on_trial(t);
            history.push_back(std::move(t));
        }
    }

    OptimizeResult res;
    res.history = std::move(history);
    const TrialRecord* best = nullptr;
    for (const auto& t : res.history)
        if (t.status == TrialRecord::Status::Ok &&
            (best == nullptr || t.val_loss < best->val_loss))
            best = &t;
    if (best == nullptr) throw Error("optimize: all trials failed");
    res.best = *best;
    return res;
}

// ============================================================================
// Plateau curves
// ============================================================================

inline std::vector<double> best_so_far(const std::vector<TrialRecord>& history) {
    std::vector<double> out;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& t : history) {
        if (t.status == TrialRecord::Status::Ok) best = std::min(best, t.val_loss);
        out.push_back(best);
    }
    return out;
}

struct PlateauCurve {
    std::vector<std::size_t> iteration;  // 1-based
    std::vector<double> mean, sem;
    std::size_t plateau_iteration = 0;   // 0 when the curve is empty
};

// Mean/SEM of the per-seed best-so-far series; the plateau is the first
// iteration whose remaining improvement is below rho, relatively.
inline PlateauCurve plateau_curve(const std::vector<std::vector<TrialRecord>>& histories,
                                  double rho = 0.01) {
    if (histories.empty()) throw Error("plateau_curve: no histories");
    std::size_t len = std::numeric_limits<std::size_t>::max();
    std::vector<std::vector<double>> curves;
    for (const auto& h : histories) {
        if (h.empty()) throw Error("plateau_curve: empty history");
        curves.push_back(best_so_far(h));
        len = std::min(len, curves.back().size());
    }

    PlateauCurve out;
    for (std::size_t i = 0; i < len; ++i) {
        std::vector<double> vals;
        bool finite = true;
        for (const auto& c : curves) {
            if (!std::isfinite(c[i])) finite = false;
            vals.push_back(c[i]);
        }
        if (!finite) continue;  // before any seed's first ok trial
        MeanSem ms = aggregate_seeds(vals);
        out.iteration.push_back(i + 1);
        out.mean.push_back(ms.mean);
        out.sem.push_back(ms.sem);
    }
    if (out.mean.empty()) return out;

    double final_best = out.mean.back();
    for (std::size_t i = 0; i < out.mean.size(); ++i) {
        double tol = rho * std::abs(out.mean[i]);
        if (out.mean[i] - final_best <= tol) {
            out.plateau_iteration = out.iteration[i];
            break;
        }
    }
    return out;
}

} // namespace bakeoff
