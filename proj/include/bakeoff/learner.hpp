#pragma once

// Uniform fit/predict surface over the native learners and the external
// adapter. Everything downstream (HPO objectives, ensembles, the runner)
// talks to models through this facade.

#include <variant>

#include "bakeoff/external.hpp"
#include "bakeoff/gbdt.hpp"
#include "bakeoff/mlp.hpp"
#include "bakeoff/soft_odt.hpp"

namespace bakeoff {

enum class LearnerKind { Gbdt, SoftOdt, Mlp, External };

inline LearnerKind learner_kind_from(const std::string& s) {
    if (s == "gbdt" || s == "xgb") return LearnerKind::Gbdt;
    if (s == "soft-odt" || s == "odt") return LearnerKind::SoftOdt;
    if (s == "mlp") return LearnerKind::Mlp;
    if (s == "external") return LearnerKind::External;
    throw Error("unknown learner kind '" + s + "'");
}

inline const char* learner_kind_name(LearnerKind k) {
    switch (k) {
    case LearnerKind::Gbdt: return "gbdt";
    case LearnerKind::SoftOdt: return "soft-odt";
    case LearnerKind::Mlp: return "mlp";
    case LearnerKind::External: return "external";
    }
    return "?";
}

struct FittedModel {
    std::variant<GbdtModel, SoftOdtModel, MlpModel, ExternalModel> model;

    Predictions predict(const Matrix& X, const std::vector<std::uint8_t>* missing = nullptr) const {
        return std::visit([&](const auto& m) { return m.predict(X, missing); }, model);
    }

    Predictions predict(const DataView& view) const {
        const Dataset& ds = *view.ds;
        Matrix X(view.size(), ds.n_cols());
        std::vector<std::uint8_t> miss(view.size() * ds.n_cols(), 0);
        for (std::size_t i = 0; i < view.size(); ++i)
            for (std::size_t j = 0; j < ds.n_cols(); ++j) {
                X.at(i, j) = view.x(i, j);
                miss[i * ds.n_cols() + j] = view.missing(i, j) ? 1 : 0;
            }
        return predict(X, &miss);
    }
};

struct LearnerSpec {
    std::string name;
    LearnerKind kind = LearnerKind::Gbdt;
    SearchSpace space;
    Hyperparameters warm;   // optional warm-start configuration (empty = none)
    std::string command;    // external adapter only
};

struct FitContext {
    TrainOptions train;
    std::string workdir;  // scratch area for the external adapter
};

inline FittedModel fit_learner(const LearnerSpec& spec, const DataView& train, const DataView& val,
                               const Hyperparameters& hp, std::uint64_t seed,
                               const FitContext& ctx) {
    switch (spec.kind) {
    case LearnerKind::Gbdt: {
        GbdtParams p = GbdtParams::from_hyperparameters(hp);
        p.patience = (long long)ctx.train.patience;
        return {fit_gbdt(train, val, p, seed)};
    }
    case LearnerKind::SoftOdt:
        return {fit_soft_odt(train, val, hp, seed, ctx.train)};
    case LearnerKind::Mlp:
        return {fit_mlp(train, val, hp, seed, ctx.train)};
    case LearnerKind::External:
        return {fit_external(spec.command, train, val, hp, seed,
                             ctx.workdir + "/" + spec.name)};
    }
    throw Error("fit_learner: bad kind");
}

} // namespace bakeoff
