#pragma once

// Hyperparameter search spaces: uniform / log-uniform / discrete-uniform /
// choice dimensions, with the one level of nesting the published spaces use
// (a choice branch may carry its own continuous distribution).

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "bakeoff/core.hpp"

namespace bakeoff {

using Hyperparameters = std::map<std::string, double>;

inline double hp_get(const Hyperparameters& hp, const std::string& key, double fallback) {
    auto it = hp.find(key);
    return it == hp.end() ? fallback : it->second;
}

inline long long hp_get_int(const Hyperparameters& hp, const std::string& key, long long fallback) {
    auto it = hp.find(key);
    return it == hp.end() ? fallback : llround(it->second);
}

// ============================================================================
// Dimensions
// ============================================================================

enum class DimKind { Uniform, LogUniform, DiscreteUniform, Choice };

struct Dimension {
    DimKind kind = DimKind::Uniform;
    double lo = 0.0, hi = 1.0;

    struct Option {
        bool nested = false;
        double literal = 0.0;      // when !nested
        DimKind sub_kind = DimKind::Uniform;  // when nested (non-choice)
        double sub_lo = 0.0, sub_hi = 1.0;
    };
    std::vector<Option> options;   // Choice only

    static Dimension uniform(double lo, double hi) { return {DimKind::Uniform, lo, hi, {}}; }
    static Dimension log_uniform(double lo, double hi) { return {DimKind::LogUniform, lo, hi, {}}; }
    static Dimension discrete(long long lo, long long hi) {
        return {DimKind::DiscreteUniform, double(lo), double(hi), {}};
    }
    static Dimension choice(std::vector<double> values) {
        Dimension d;
        d.kind = DimKind::Choice;
        for (double v : values) d.options.push_back({false, v, DimKind::Uniform, 0, 0});
        return d;
    }
    static Dimension choice_with(std::vector<Option> options) {
        Dimension d;
        d.kind = DimKind::Choice;
        d.options = std::move(options);
        return d;
    }
};

// Maps a unit draw onto a continuous dimension; exposed so endpoint behavior
// is directly testable.
inline double continuous_from_unit(DimKind kind, double lo, double hi, double u) {
    switch (kind) {
    case DimKind::Uniform: return lo + (hi - lo) * u;
    case DimKind::LogUniform: return std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * u);
    default: throw Error("continuous_from_unit: not a continuous kind");
    }
}

struct SearchSpace {
    std::vector<std::pair<std::string, Dimension>> dims;  // ordered

    void add(const std::string& name, Dimension d) { dims.emplace_back(name, std::move(d)); }

    const Dimension* find(const std::string& name) const {
        for (const auto& [n, d] : dims)
            if (n == name) return &d;
        return nullptr;
    }

    void validate() const {
        for (const auto& [name, d] : dims) {
            switch (d.kind) {
            case DimKind::Uniform:
                if (!(d.lo < d.hi)) throw Error("space: uniform '" + name + "' needs lo < hi");
                break;
            case DimKind::LogUniform:
                if (!(d.lo > 0.0) || !(d.lo < d.hi))
                    throw Error("space: log-uniform '" + name + "' needs 0 < lo < hi");
                break;
            case DimKind::DiscreteUniform:
                if (!(d.lo <= d.hi)) throw Error("space: discrete '" + name + "' needs lo <= hi");
                break;
            case DimKind::Choice: {
                if (d.options.empty()) throw Error("space: choice '" + name + "' is empty");
                std::size_t nested = 0;
                for (const auto& o : d.options) {
                    if (!o.nested) continue;
                    ++nested;
                    if (o.sub_kind == DimKind::Choice)
                        throw Error("space: '" + name + "' nests a choice inside a choice");
                    if (o.sub_kind == DimKind::LogUniform && !(o.sub_lo > 0.0))
                        throw Error("space: nested log-uniform in '" + name + "' needs lo > 0");
                    if (!(o.sub_lo < o.sub_hi))
                        throw Error("space: nested branch in '" + name + "' needs lo < hi");
                }
                if (nested > 1)
                    throw Error("space: '" + name + "' has more than one nested branch");
                break;
            }
            }
        }
    }
};

// ============================================================================
// Sampling
// ============================================================================

namespace detail {

inline double sample_plain(DimKind kind, double lo, double hi, Rng& rng) {
    switch (kind) {
    case DimKind::Uniform: return continuous_from_unit(kind, lo, hi, rng.uniform());
    case DimKind::LogUniform: return continuous_from_unit(kind, lo, hi, rng.uniform());
    case DimKind::DiscreteUniform:
        return double(rng.uniform_int((long long)lo, (long long)hi));
    default: throw Error("sample_plain: choice handled elsewhere");
    }
}

} // namespace detail

inline double sample_dimension(const Dimension& d, Rng& rng) {
    if (d.kind != DimKind::Choice) return detail::sample_plain(d.kind, d.lo, d.hi, rng);
    const auto& opt = d.options[std::size_t(rng.uniform_int(0, (long long)d.options.size() - 1))];
    if (!opt.nested) return opt.literal;
    return detail::sample_plain(opt.sub_kind, opt.sub_lo, opt.sub_hi, rng);
}

inline Hyperparameters sample(const SearchSpace& space, Rng& rng) {
    Hyperparameters hp;
    for (const auto& [name, dim] : space.dims) hp[name] = sample_dimension(dim, rng);
    return hp;
}

inline Hyperparameters sample(const SearchSpace& space, std::uint64_t seed) {
    Rng rng(seed);
    return sample(space, rng);
}

// True when a value could have been produced by the dimension.
inline bool in_support(const Dimension& d, double v) {
    switch (d.kind) {
    case DimKind::Uniform:
    case DimKind::LogUniform:
        return v >= d.lo && v <= d.hi;
    case DimKind::DiscreteUniform:
        return v >= d.lo && v <= d.hi && v == std::floor(v);
    case DimKind::Choice:
        for (const auto& o : d.options) {
            if (!o.nested && o.literal == v) return true;
            if (o.nested && v >= o.sub_lo && v <= o.sub_hi) return true;
        }
        return false;
    }
    return false;
}

// ============================================================================
// Published presets
// ============================================================================

// The six spaces the evaluation protocol ships with. The GBDT and the two
// native deep learners consume xgboost / node / mlp; the others exist for
// external-adapter learners.
inline SearchSpace preset_space(const std::string& name) {
    auto e = [](double x) { return std::exp(x); };
    SearchSpace s;
    if (name == "xgboost") {
        s.add("n_estimators", Dimension::uniform(100, 4000));
        s.add("eta", Dimension::log_uniform(e(-7), 1));
        s.add("max_depth", Dimension::discrete(1, 10));
        s.add("subsample", Dimension::uniform(0.2, 1));
        s.add("colsample_bytree", Dimension::uniform(0.2, 1));
        s.add("colsample_bylevel", Dimension::uniform(0.2, 1));
        s.add("min_child_weight", Dimension::log_uniform(e(-16), e(5)));
        for (const char* reg : {"alpha", "lambda", "gamma"})
            s.add(reg, Dimension::choice_with({{false, 0.0, DimKind::Uniform, 0, 0},
                                               {true, 0.0, DimKind::LogUniform, e(-16), e(2)}}));
    } else if (name == "catboost") {
        s.add("learning_rate", Dimension::log_uniform(e(-5), 1));
        s.add("random_strength", Dimension::discrete(1, 20));
        s.add("max_size", Dimension::discrete(0, 25));
        s.add("l2_leaf_reg", Dimension::log_uniform(1, 10));
        s.add("bagging_temperature", Dimension::uniform(0, 1));
        s.add("leaf_estimation_iterations", Dimension::discrete(1, 20));
    } else if (name == "node") {
        // the published space lists learning rate twice; kept as one dimension
        s.add("learning_rate", Dimension::log_uniform(e(-5), 1));
        s.add("num_layers", Dimension::discrete(1, 10));
        s.add("tree_count", Dimension::choice({256, 512, 1024, 2048}));
        s.add("tree_depth", Dimension::discrete(4, 9));
        s.add("tree_output_dim", Dimension::discrete(1, 5));
        s.add("batch_size", Dimension::choice({512, 1024, 2048, 4096, 8192}));
    } else if (name == "tabnet") {
        s.add("learning_rate", Dimension::log_uniform(e(-5), 1));
        s.add("feature_dim", Dimension::discrete(20, 60));
        s.add("output_dim", Dimension::discrete(20, 60));
        s.add("n_steps", Dimension::discrete(1, 8));
        s.add("bn_epsilon", Dimension::uniform(e(-5), e(-1)));
        s.add("relaxation_factor", Dimension::uniform(0.3, 2));
        s.add("batch_size", Dimension::choice({512, 1024, 2048, 4096, 8192}));
    } else if (name == "dnfnet") {
        s.add("n_formulas", Dimension::discrete(256, 2048));
        s.add("feature_selection_beta", Dimension::uniform(1e-2, 2));
        s.add("learning_rate", Dimension::log_uniform(e(-4), 0.5));
        s.add("batch_size", Dimension::choice({512, 1024, 2048, 4096, 8192}));
    } else if (name == "cnn1d") {
        s.add("hidden_size", Dimension::discrete(100, 4000));
        s.add("num_layers", Dimension::discrete(1, 6));
        s.add("learning_rate", Dimension::log_uniform(e(-4), 0.5));
        s.add("batch_size", Dimension::choice({512, 1024, 2048, 4096, 8192}));
    } else if (name == "mlp") {
        // native generic baseline; no published space to mirror
        s.add("hidden_size", Dimension::discrete(8, 256));
        s.add("num_layers", Dimension::discrete(1, 4));
        s.add("learning_rate", Dimension::log_uniform(e(-4), 0.5));
        s.add("batch_size", Dimension::choice({32, 64, 128, 256, 512}));
    } else {
        throw Error("unknown search-space preset '" + name + "'");
    }
    s.validate();
    return s;
}

} // namespace bakeoff
