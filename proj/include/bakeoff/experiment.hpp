#pragma once

// Experiment configuration and the tune -> train -> ensemble -> report
// pipeline, with flat-file persistence that makes runs resumable and
// byte-reproducible under a fixed master seed.

#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>

#include "bakeoff/core.hpp"
#include "bakeoff/dataset.hpp"
#include "bakeoff/ensemble.hpp"
#include "bakeoff/learner.hpp"
#include "bakeoff/metrics.hpp"
#include "bakeoff/tpe.hpp"

namespace bakeoff {

namespace fs = std::filesystem;

// ============================================================================
// INI config file
// ============================================================================

struct IniSection {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;

    const std::string* find(const std::string& key) const {
        for (const auto& [k, v] : entries)
            if (k == key) return &v;
        return nullptr;
    }
    std::string get(const std::string& key, const std::string& fallback = "") const {
        const std::string* v = find(key);
        return v ? *v : fallback;
    }
    double num(const std::string& key, double fallback) const {
        const std::string* v = find(key);
        if (!v) return fallback;
        double out;
        if (!detail::parse_double(*v, out))
            throw Error("config: '" + key + "' is not a number: " + *v);
        return out;
    }
};

struct IniFile {
    std::vector<IniSection> sections;

    const IniSection* find(const std::string& name) const {
        for (const auto& s : sections)
            if (s.name == name) return &s;
        return nullptr;
    }

    static IniFile parse_text(const std::string& text) {
        IniFile ini;
        IniSection* cur = nullptr;
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            line = detail::trim(line);
            if (line.empty() || line[0] == '#' || line[0] == ';') continue;
            if (line.front() == '[') {
                if (line.back() != ']') throw Error("config: bad section header: " + line);
                ini.sections.push_back({line.substr(1, line.size() - 2), {}});
                cur = &ini.sections.back();
                continue;
            }
            auto eq = line.find('=');
            if (eq == std::string::npos) throw Error("config: expected key = value: " + line);
            if (!cur) throw Error("config: entry before any section: " + line);
            cur->entries.emplace_back(detail::trim(line.substr(0, eq)),
                                      detail::trim(line.substr(eq + 1)));
        }
        return ini;
    }

    static IniFile load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("config: cannot open '" + path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_text(ss.str());
    }
};

// ============================================================================
// Inline dimension syntax
// ============================================================================

namespace detail {

// top-level comma split, respecting parentheses
inline std::vector<std::string> split_args(const std::string& s) {
    std::vector<std::string> out;
    int depth = 0;
    std::string cur;
    for (char c : s) {
        if (c == '(') ++depth;
        if (c == ')') --depth;
        if (c == ',' && depth == 0) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!trim(cur).empty()) out.push_back(trim(cur));
    return out;
}

} // namespace detail

// Parses "uniform(lo,hi)", "loguniform(lo,hi)", "int(lo,hi)" and
// "choice(...)" whose branches are numbers or nested distributions.
inline Dimension parse_dimension(const std::string& text) {
    std::string t = detail::trim(text);
    auto open = t.find('(');
    if (open == std::string::npos || t.back() != ')')
        throw Error("config: bad dimension syntax '" + text + "'");
    std::string fn = detail::trim(t.substr(0, open));
    auto args = detail::split_args(t.substr(open + 1, t.size() - open - 2));

    auto need2 = [&](const char* what) {
        if (args.size() != 2) throw Error(std::string("config: ") + what + " needs two arguments");
        double lo, hi;
        if (!detail::parse_double(args[0], lo) || !detail::parse_double(args[1], hi))
            throw Error(std::string("config: ") + what + " bounds must be numeric");
        return std::pair{lo, hi};
    };

    if (fn == "uniform") {
        auto [lo, hi] = need2("uniform");
        return Dimension::uniform(lo, hi);
    }
    if (fn == "loguniform") {
        auto [lo, hi] = need2("loguniform");
        return Dimension::log_uniform(lo, hi);
    }
    if (fn == "int") {
        auto [lo, hi] = need2("int");
        return Dimension::discrete((long long)lo, (long long)hi);
    }
    if (fn == "choice") {
        std::vector<Dimension::Option> opts;
        for (const auto& a : args) {
            double v;
            if (detail::parse_double(a, v)) {
                opts.push_back({false, v, DimKind::Uniform, 0, 0});
            } else {
                Dimension sub = parse_dimension(a);
                if (sub.kind == DimKind::Choice)
                    throw Error("config: choice cannot nest another choice");
                opts.push_back({true, 0.0, sub.kind, sub.lo, sub.hi});
            }
        }
        return Dimension::choice_with(std::move(opts));
    }
    throw Error("config: unknown dimension kind '" + fn + "'");
}

// ============================================================================
// Experiment configuration
// ============================================================================

struct LearnerConfig {
    std::string name;
    LearnerKind kind = LearnerKind::Gbdt;
    SearchSpace space;
    Hyperparameters warm;
    std::string command;

    LearnerSpec spec() const { return {name, kind, space, warm, command}; }
};

struct ExperimentConfig {
    std::string dataset_name = "dataset";
    std::string dataset_path;
    Schema schema;

    SplitPolicy split_policy;
    std::uint64_t split_seed = 1;

    std::size_t budget = 1000;  // HPO steps per learner
    std::size_t workers = 1;
    TpeConfig tpe;

    std::size_t seed_count = 4;  // final retrains per learner
    std::vector<std::uint64_t> seed_list;
    TrainOptions train_opts;
    bool refit_full = false;

    WeightMode ensemble_mode = WeightMode::InverseLoss;
    SubsetStrategy subset_strategy = SubsetStrategy::ValidationLoss;

    std::string out_dir = "out";
    std::uint64_t master_seed = 17;

    std::vector<LearnerConfig> learners;

    std::uint64_t final_seed(std::size_t i) const {
        if (i < seed_list.size()) return seed_list[i];
        return derive_seed(master_seed, 0xF17A1ULL + i);
    }

    void validate() const {
        if (learners.empty()) throw Error("config: at least one learner required");
        if (budget < 1) throw Error("config: hpo budget must be >= 1");
        if (seed_count < 1) throw Error("config: seed count must be >= 1");
        if (dataset_path.empty()) throw Error("config: dataset path missing");
        for (const auto& l : learners) l.space.validate();
    }
};

inline ExperimentConfig parse_config(const IniFile& ini) {
    ExperimentConfig cfg;

    if (const IniSection* s = ini.find("experiment")) {
        cfg.master_seed = std::uint64_t(s->num("seed", double(cfg.master_seed)));
    }

    const IniSection* ds = ini.find("dataset");
    if (!ds) throw Error("config: [dataset] section required");
    cfg.dataset_path = ds->get("path");
    cfg.dataset_name = ds->get("name", fs::path(cfg.dataset_path).stem().string());
    cfg.schema.target = ds->get("target", "target");
    std::string task = ds->get("task", "binary");
    cfg.schema.task = task == "binary"       ? Task::Binary
                      : task == "multiclass" ? Task::Multiclass
                      : task == "regression" ? Task::Regression
                                             : throw Error("config: unknown task '" + task + "'");
    for (const auto& c : detail::split(ds->get("categorical"), ',')) {
        std::string t = detail::trim(c);
        if (!t.empty()) cfg.schema.categorical.push_back(t);
    }
    cfg.schema.n_classes = int(ds->num("classes", 0));

    if (const IniSection* s = ini.find("split")) {
        std::string policy = s->get("policy", "stratified");
        if (policy == "stratified") {
            cfg.split_policy.kind = SplitPolicy::Kind::Stratified;
            std::string fr = s->get("fractions", "0.8,0.2");
            cfg.split_policy.fractions.clear();
            for (const auto& f : detail::split(fr, ',')) {
                double v;
                if (!detail::parse_double(f, v)) throw Error("config: bad fraction '" + f + "'");
                cfg.split_policy.fractions.push_back(v);
            }
        } else if (policy == "temporal") {
            cfg.split_policy.kind = SplitPolicy::Kind::Temporal;
            cfg.split_policy.boundary_field = s->get("boundary_field");
            cfg.split_policy.boundary = s->num("boundary", 0);
            cfg.split_policy.val_tail = std::size_t(s->num("val_tail", 0));
        } else if (policy == "provided") {
            cfg.split_policy.kind = SplitPolicy::Kind::Provided;
            cfg.split_policy.file = s->get("file");
        } else {
            throw Error("config: unknown split policy '" + policy + "'");
        }
        cfg.split_seed = std::uint64_t(s->num("seed", 1));
    }

    if (const IniSection* s = ini.find("hpo")) {
        cfg.budget = std::size_t(s->num("budget", double(cfg.budget)));
        cfg.workers = std::size_t(s->num("workers", 1));
        cfg.tpe.gamma = s->num("gamma", cfg.tpe.gamma);
        cfg.tpe.n_startup = std::size_t(s->num("n_startup", double(cfg.tpe.n_startup)));
        cfg.tpe.n_candidates = std::size_t(s->num("n_candidates", double(cfg.tpe.n_candidates)));
    }

    if (const IniSection* s = ini.find("train")) {
        cfg.seed_count = std::size_t(s->num("seeds", double(cfg.seed_count)));
        for (const auto& t : detail::split(s->get("seed_list"), ',')) {
            std::string v = detail::trim(t);
            if (!v.empty()) cfg.seed_list.push_back(std::stoull(v));
        }
        if (!cfg.seed_list.empty()) cfg.seed_count = cfg.seed_list.size();
        cfg.train_opts.patience = std::size_t(s->num("patience", 100));
        cfg.train_opts.max_epochs = std::size_t(s->num("max_epochs", 1000));
        cfg.refit_full = s->get("refit_full", "false") == "true";
    }

    if (const IniSection* s = ini.find("ensemble")) {
        cfg.ensemble_mode = weight_mode_from(s->get("mode", "weighted"));
        cfg.subset_strategy = subset_strategy_from(s->get("strategy", "validation-loss"));
    }

    if (const IniSection* s = ini.find("output")) cfg.out_dir = s->get("dir", cfg.out_dir);

    for (const auto& sec : ini.sections) {
        if (sec.name.rfind("learner:", 0) != 0) continue;
        LearnerConfig lc;
        lc.name = sec.name.substr(8);
        if (lc.name.empty()) throw Error("config: learner section needs a name");
        lc.kind = learner_kind_from(sec.get("kind", "gbdt"));
        lc.command = sec.get("command");
        if (lc.kind == LearnerKind::External && lc.command.empty())
            throw Error("config: external learner '" + lc.name + "' needs a command");

        std::string preset = sec.get("space");
        if (!preset.empty()) lc.space = preset_space(preset);
        for (const auto& [k, v] : sec.entries) {
            if (k.rfind("dim.", 0) == 0) {
                std::string dim_name = k.substr(4);
                Dimension d = parse_dimension(v);
                bool replaced = false;
                for (auto& [n, existing] : lc.space.dims)
                    if (n == dim_name) {
                        existing = d;
                        replaced = true;
                    }
                if (!replaced) lc.space.add(dim_name, d);
            } else if (k.rfind("warm.", 0) == 0) {
                double val;
                if (!detail::parse_double(v, val))
                    throw Error("config: warm-start value must be numeric: " + k);
                lc.warm[k.substr(5)] = val;
            }
        }
        if (lc.space.dims.empty())
            throw Error("config: learner '" + lc.name + "' has no search space");
        lc.space.validate();
        cfg.learners.push_back(std::move(lc));
    }

    cfg.validate();
    return cfg;
}

// Loads a config file; relative dataset/split paths resolve against the
// config's directory, and BAKEOFF_SEED overrides the master seed.
inline ExperimentConfig load_config(const std::string& path) {
    ExperimentConfig cfg = parse_config(IniFile::load(path));
    fs::path base = fs::path(path).parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty() && fs::path(p).is_relative()) p = (base / p).string();
    };
    resolve(cfg.dataset_path);
    resolve(cfg.split_policy.file);
    if (const char* env = std::getenv("BAKEOFF_SEED")) cfg.master_seed = std::stoull(env);
    return cfg;
}

// ============================================================================
// Persistence
// ============================================================================

namespace paths {
inline std::string trials(const std::string& out, const std::string& learner) {
    return out + "/trials/" + learner + ".trials";
}
inline std::string times(const std::string& out, const std::string& learner) {
    return out + "/trials/" + learner + ".times";
}
inline std::string best_params(const std::string& out, const std::string& learner) {
    return out + "/best/" + learner + ".params";
}
inline std::string results(const std::string& out, const std::string& learner) {
    return out + "/results/" + learner + ".results";
}
inline std::string report(const std::string& out) { return out + "/report.txt"; }
inline std::string meta(const std::string& out) { return out + "/meta.txt"; }
inline std::string curves_dir(const std::string& out) { return out + "/curves"; }
} // namespace paths

inline std::vector<TrialRecord> load_trials(const std::string& path) {
    std::vector<TrialRecord> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        out.push_back(parse_trial_line(line));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const TrialRecord& a, const TrialRecord& b) { return a.id < b.id; });
    return out;
}

inline void save_params(const std::string& path, const Hyperparameters& hp) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path);
    for (const auto& [k, v] : hp) out << k << '=' << detail::fmt_double(v) << '\n';
}

inline Hyperparameters load_params(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open params file '" + path + "' (run `tune` first)");
    Hyperparameters hp;
    std::string line;
    while (std::getline(in, line)) {
        line = detail::trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw Error("bad params line: " + line);
        hp[line.substr(0, eq)] = std::strtod(line.c_str() + eq + 1, nullptr);
    }
    return hp;
}

// One final-seed evaluation of a tuned configuration.
struct SeedResult {
    std::uint64_t seed = 0;
    double val_loss = 0.0;
    std::map<std::string, double> metrics;  // ce / mse / rmse
};

inline void save_results(const std::string& path, const std::vector<SeedResult>& rows) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path);
    std::vector<std::string> metric_names;
    for (const auto& [k, v] : rows.front().metrics) metric_names.push_back(k);
    for (const auto& r : rows) {
        out << "seed=" << r.seed << " val_loss=" << detail::fmt_double(r.val_loss);
        for (const auto& [k, v] : r.metrics) out << ' ' << k << '=' << detail::fmt_double(v);
        out << '\n';
    }
    auto agg = [&](const std::string& name, auto getter) {
        std::vector<double> vals;
        for (const auto& r : rows) vals.push_back(getter(r));
        MeanSem ms = aggregate_seeds(vals);
        out << "aggregate metric=" << name << " mean=" << detail::fmt_double(ms.mean)
            << " sem=" << detail::fmt_double(ms.sem) << '\n';
    };
    agg("val_loss", [](const SeedResult& r) { return r.val_loss; });
    for (const auto& name : metric_names)
        agg(name, [&](const SeedResult& r) { return r.metrics.at(name); });
}

struct LoadedResults {
    std::vector<SeedResult> rows;
    std::map<std::string, MeanSem> aggregates;
};

inline LoadedResults load_results(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open results file '" + path + "'");
    LoadedResults out;
    std::string line;
    while (std::getline(in, line)) {
        line = detail::trim(line);
        if (line.empty()) continue;
        auto tokens = detail::split(line, ' ');
        if (tokens[0] == "aggregate") {
            std::string name;
            MeanSem ms;
            for (const auto& tok : tokens) {
                auto eq = tok.find('=');
                if (eq == std::string::npos) continue;
                std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
                if (k == "metric") name = v;
                else if (k == "mean") ms.mean = std::strtod(v.c_str(), nullptr);
                else if (k == "sem") ms.sem = std::strtod(v.c_str(), nullptr);
            }
            out.aggregates[name] = ms;
        } else {
            SeedResult r;
            for (const auto& tok : tokens) {
                auto eq = tok.find('=');
                if (eq == std::string::npos) continue;
                std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
                if (k == "seed") r.seed = std::stoull(v);
                else if (k == "val_loss") r.val_loss = std::strtod(v.c_str(), nullptr);
                else r.metrics[k] = std::strtod(v.c_str(), nullptr);
            }
            out.rows.push_back(std::move(r));
        }
    }
    return out;
}

// ============================================================================
// Curves
// ============================================================================

// Writes an x,mean,sem series; bytes are stable for identical inputs.
inline void emit_curve(const std::string& path, const std::vector<std::size_t>& xs,
                       const std::vector<double>& means, const std::vector<double>& sems) {
    if (xs.empty()) throw Error("emit_curve: empty series");
    if (xs.size() != means.size() || xs.size() != sems.size())
        throw Error("emit_curve: column length mismatch");
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path);
    if (!out) throw Error("emit_curve: cannot write '" + path + "'");
    out << "x,mean,sem\n";
    for (std::size_t i = 0; i < xs.size(); ++i)
        out << xs[i] << ',' << detail::fmt_double(means[i]) << ',' << detail::fmt_double(sems[i])
            << '\n';
}

// ============================================================================
// Data preparation
// ============================================================================

struct PreparedData {
    Dataset encoded;       // as loaded
    Dataset standardized;  // train-stats standardization applied
    StandardizationStats stats;
    SplitBundle splits;

    DataView train() const { return {&standardized, splits.train}; }
    DataView val() const { return {&standardized, splits.val}; }
    DataView test() const { return {&standardized, splits.test}; }

    std::vector<double> targets(const std::vector<std::size_t>& idx) const {
        std::vector<double> out;
        out.reserve(idx.size());
        for (std::size_t i : idx) out.push_back(standardized.target[i]);
        return out;
    }
};

inline PreparedData prepare_data(const ExperimentConfig& cfg) {
    PreparedData d;
    d.encoded = load_csv(cfg.dataset_path, cfg.schema);
    d.splits = split(d.encoded, cfg.split_policy, cfg.split_seed);
    d.stats = fit_standardizer(d.encoded, d.splits.train);
    d.standardized = standardize(d.encoded, d.stats);
    return d;
}

// ============================================================================
// Pipeline stages
// ============================================================================

inline std::string summarize_dataset(const Dataset& ds) {
    std::string s = std::to_string(ds.n_rows()) + " rows, " + std::to_string(ds.n_cols()) +
                    " features, task " + task_name(ds.task);
    if (is_classification(ds.task)) s += ", " + std::to_string(ds.n_classes) + " classes";
    std::size_t missing = 0;
    for (auto m : ds.missing) missing += m;
    s += ", " + std::to_string(missing) + " missing cells";
    return s;
}

inline void write_meta(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    std::ofstream out(paths::meta(cfg.out_dir));
    out << "dataset=" << cfg.dataset_name << '\n';
    out << "task=" << task_name(cfg.schema.task) << '\n';
    out << "models=";
    for (std::size_t i = 0; i < cfg.learners.size(); ++i) {
        if (i) out << ',';
        out << cfg.learners[i].name;
    }
    out << ",ensemble\n";
}

// HPO for one learner; appends each trial to the log as it completes and
// returns the best record. With `resume`, continues from the persisted ids.
inline OptimizeResult tune_learner(const ExperimentConfig& cfg, const PreparedData& data,
                                   const LearnerConfig& lc, bool resume) {
    fs::create_directories(cfg.out_dir + "/trials");
    std::string trials_path = paths::trials(cfg.out_dir, lc.name);
    std::string times_path = paths::times(cfg.out_dir, lc.name);

    std::vector<TrialRecord> history;
    if (resume) history = load_trials(trials_path);
    if (!resume) {
        std::ofstream(trials_path, std::ios::trunc);
        std::ofstream(times_path, std::ios::trunc);
    }

    std::ofstream trial_log(trials_path, std::ios::app);
    std::ofstream time_log(times_path, std::ios::app);

    LearnerSpec spec = lc.spec();
    FitContext fit_ctx{cfg.train_opts, cfg.out_dir + "/tmp/" + lc.name};
    DataView train = data.train(), val = data.val();
    std::vector<double> val_y = data.targets(data.splits.val);

    // inside a trial, any learner error counts as a failed trial rather than
    // aborting the search
    Objective objective = [&](const Hyperparameters& hp, std::uint64_t seed) {
        FitContext ctx = fit_ctx;
        ctx.workdir += "/" + std::to_string(seed);
        try {
            FittedModel model = fit_learner(spec, train, val, hp, seed, ctx);
            return task_loss(model.predict(val), val_y);
        } catch (const TrialFailed&) {
            throw;
        } catch (const Error& e) {
            throw TrialFailed(e.what());
        }
    };

    OptimizeOptions opts;
    opts.budget = cfg.budget;
    opts.tpe = cfg.tpe;
    opts.workers = cfg.workers;
    opts.learner_name = lc.name;
    if (!lc.warm.empty()) opts.warm_start = &lc.warm;
    opts.on_trial = [&](const TrialRecord& t) {
        trial_log << trial_line(t) << '\n';
        trial_log.flush();
        char buf[64];
        std::snprintf(buf, sizeof(buf), "id=%zu seconds=%.3f", t.id, t.seconds);
        time_log << buf << '\n';
        time_log.flush();
    };

    std::uint64_t learner_seed = derive_seed(cfg.master_seed, std::hash<std::string>{}(lc.name));
    OptimizeResult res = optimize(objective, lc.space, opts, learner_seed, std::move(history));
    save_params(paths::best_params(cfg.out_dir, lc.name), res.best.params);
    return res;
}

// Final retrains of the tuned configuration under the experiment seeds.
struct FinalModels {
    std::vector<SeedResult> rows;
    std::vector<FittedModel> models;  // one per seed
};

inline FinalModels train_final(const ExperimentConfig& cfg, const PreparedData& data,
                               const LearnerConfig& lc, const Hyperparameters& best) {
    FinalModels out;
    LearnerSpec spec = lc.spec();
    DataView train = data.train(), val = data.val(), test = data.test();
    std::vector<double> val_y = data.targets(data.splits.val);
    std::vector<double> test_y = data.targets(data.splits.test);

    std::vector<SeedResult> rows(cfg.seed_count);
    std::vector<FittedModel> models(cfg.seed_count);

    parallel_for(cfg.seed_count, cfg.workers, [&](std::size_t i) {
        std::uint64_t seed = cfg.final_seed(i);
        FitContext ctx{cfg.train_opts, cfg.out_dir + "/tmp/final/" + lc.name + "/" +
                                           std::to_string(seed)};
        FittedModel model = fit_learner(spec, train, val, best, seed, ctx);
        double val_loss = task_loss(model.predict(val), val_y);

        if (cfg.refit_full) {
            // fold validation back in, training for the epoch/round count the
            // val-split fit settled on
            TrainOptions fixed = cfg.train_opts;
            std::size_t epochs = 1;
            if (const auto* g = std::get_if<GbdtModel>(&model.model))
                epochs = std::max<std::size_t>(1, g->best_round);
            else if (const auto* m = std::get_if<MlpModel>(&model.model))
                epochs = std::max<std::size_t>(1, m->trace.best_epoch);
            else if (const auto* o = std::get_if<SoftOdtModel>(&model.model))
                epochs = std::max<std::size_t>(1, o->trace.best_epoch);
            fixed.max_epochs = epochs;
            fixed.patience = epochs + 1;
            fixed.restore_best = false;  // fixed-epoch refit keeps the final state

            std::vector<std::size_t> full = data.splits.train;
            full.insert(full.end(), data.splits.val.begin(), data.splits.val.end());
            std::sort(full.begin(), full.end());
            DataView full_train{&data.standardized, full};

            Hyperparameters fixed_hp = best;
            if (spec.kind == LearnerKind::Gbdt) fixed_hp["n_estimators"] = double(epochs);
            FitContext refit_ctx = ctx;
            refit_ctx.train = fixed;
            model = fit_learner(spec, full_train, val, fixed_hp, seed, refit_ctx);
        }

        SeedResult r;
        r.seed = seed;
        r.val_loss = val_loss;
        Predictions test_pred = model.predict(test);
        if (is_classification(cfg.schema.task)) {
            r.metrics["ce"] = cross_entropy(test_pred, test_y);
        } else {
            MseRmse se = squared_error(test_pred.values, test_y);
            r.metrics["mse"] = se.mse;
            r.metrics["rmse"] = se.rmse;
        }
        rows[i] = std::move(r);
        models[i] = std::move(model);
    });

    out.rows = std::move(rows);
    out.models = std::move(models);
    save_results(paths::results(cfg.out_dir, lc.name), out.rows);
    return out;
}

// Ensemble of every learner's per-seed models: weighted combination on the
// validation split, test evaluation, exported weights and subset curves.
inline std::vector<SeedResult> ensemble_stage(
    const ExperimentConfig& cfg, const PreparedData& data,
    const std::vector<FinalModels>& finals) {
    if (finals.size() != cfg.learners.size()) throw Error("ensemble: learner/model mismatch");
    DataView val = data.val(), test = data.test();
    std::vector<double> val_y = data.targets(data.splits.val);
    std::vector<double> test_y = data.targets(data.splits.test);
    const std::size_t K = cfg.learners.size();

    std::vector<SeedResult> rows;
    std::vector<double> mean_weights(K, 0.0);
    std::vector<std::vector<double>> curves;  // per seed, loss at k=1..K

    for (std::size_t s = 0; s < cfg.seed_count; ++s) {
        std::vector<Predictions> val_preds, test_preds;
        std::vector<double> member_losses;
        for (std::size_t m = 0; m < K; ++m) {
            val_preds.push_back(finals[m].models[s].predict(val));
            test_preds.push_back(finals[m].models[s].predict(test));
            member_losses.push_back(task_loss(val_preds.back(), val_y));
        }
        std::vector<double> w = compute_weights(member_losses, cfg.ensemble_mode);
        for (std::size_t m = 0; m < K; ++m) mean_weights[m] += w[m] / double(cfg.seed_count);

        Predictions val_comb = combine_weighted(val_preds, w);
        Predictions test_comb = combine_weighted(test_preds, w);

        SeedResult r;
        r.seed = cfg.final_seed(s);
        r.val_loss = task_loss(val_comb, val_y);
        if (is_classification(cfg.schema.task)) {
            r.metrics["ce"] = cross_entropy(test_comb, test_y);
        } else {
            MseRmse se = squared_error(test_comb.values, test_y);
            r.metrics["mse"] = se.mse;
            r.metrics["rmse"] = se.rmse;
        }
        rows.push_back(std::move(r));

        if (K >= 2)
            curves.push_back(subset_curve(test_preds, member_losses, cfg.subset_strategy, test_y,
                                          derive_seed(cfg.master_seed, 0xCU + s)));
    }

    save_results(paths::results(cfg.out_dir, "ensemble"), rows);

    {
        fs::create_directories(paths::curves_dir(cfg.out_dir));
        std::ofstream wout(paths::curves_dir(cfg.out_dir) + "/weights.csv");
        wout << "member,weight\n";
        for (std::size_t m = 0; m < K; ++m)
            wout << cfg.learners[m].name << ',' << detail::fmt_double(mean_weights[m]) << '\n';
    }

    if (!curves.empty()) {
        std::vector<std::size_t> xs;
        std::vector<double> means, sems;
        for (std::size_t k = 0; k < K; ++k) {
            std::vector<double> at_k;
            for (const auto& c : curves) at_k.push_back(c[k]);
            MeanSem ms = aggregate_seeds(at_k);
            xs.push_back(k + 1);
            means.push_back(ms.mean);
            sems.push_back(ms.sem);
        }
        std::string name = cfg.subset_strategy == SubsetStrategy::ValidationLoss ? "validation-loss"
                           : cfg.subset_strategy == SubsetStrategy::Random       ? "random"
                                                                                 : "uncertainty";
        emit_curve(paths::curves_dir(cfg.out_dir) + "/subset_" + name + ".csv", xs, means, sems);
    }
    return rows;
}

// ============================================================================
// Report
// ============================================================================

// Table-2 style: rows are models, one column per run directory (dataset).
// Cross-entropy cells carry the 100x display factor; the best mean per
// column is starred.
inline std::string report_table(const std::vector<std::string>& models,
                                const std::vector<std::string>& datasets,
                                const std::vector<std::vector<MeanSem>>& cells,  // [model][dataset]
                                const std::vector<double>& scales) {             // per dataset
    if (models.empty() || datasets.empty()) throw Error("report_table: empty results");

    std::vector<std::vector<std::string>> text(models.size(),
                                               std::vector<std::string>(datasets.size()));
    for (std::size_t d = 0; d < datasets.size(); ++d) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t m = 0; m < models.size(); ++m)
            best = std::min(best, cells[m][d].mean);
        for (std::size_t m = 0; m < models.size(); ++m) {
            std::string cell = format_cell(cells[m][d].mean, cells[m][d].sem, scales[d]);
            text[m][d] = (cells[m][d].mean == best ? "*" : " ") + cell;
        }
    }

    std::size_t name_w = std::string("model").size();
    for (const auto& m : models) name_w = std::max(name_w, m.size());
    std::vector<std::size_t> col_w(datasets.size());
    for (std::size_t d = 0; d < datasets.size(); ++d) {
        col_w[d] = datasets[d].size();
        for (std::size_t m = 0; m < models.size(); ++m)
            col_w[d] = std::max(col_w[d], text[m][d].size());
    }

    auto pad = [](const std::string& s, std::size_t w) {
        return s + std::string(w > s.size() ? w - s.size() : 0, ' ');
    };
    std::string out = pad("model", name_w);
    for (std::size_t d = 0; d < datasets.size(); ++d) out += "  " + pad(datasets[d], col_w[d]);
    out += '\n';
    for (std::size_t m = 0; m < models.size(); ++m) {
        out += pad(models[m], name_w);
        for (std::size_t d = 0; d < datasets.size(); ++d) out += "  " + pad(text[m][d], col_w[d]);
        out += '\n';
    }
    return out;
}

// Builds the report from one or more run directories; each contributes one
// dataset column.
inline std::string build_report(const std::vector<std::string>& out_dirs) {
    if (out_dirs.empty()) throw Error("report: no run directories");
    std::vector<std::string> models, datasets;
    std::vector<double> scales;
    std::vector<std::vector<MeanSem>> cells;

    for (std::size_t d = 0; d < out_dirs.size(); ++d) {
        const std::string& dir = out_dirs[d];
        std::ifstream meta(paths::meta(dir));
        if (!meta) throw Error("report: missing meta file in '" + dir + "' (run the pipeline first)");
        std::string dataset = "dataset", task = "binary", model_list;
        std::string line;
        while (std::getline(meta, line)) {
            auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string k = line.substr(0, eq), v = detail::trim(line.substr(eq + 1));
            if (k == "dataset") dataset = v;
            else if (k == "task") task = v;
            else if (k == "models") model_list = v;
        }
        std::vector<std::string> dir_models;
        for (const auto& m : detail::split(model_list, ','))
            if (!detail::trim(m).empty()) dir_models.push_back(detail::trim(m));

        if (d == 0) {
            models = dir_models;
            cells.assign(models.size(), {});
        } else if (models != dir_models) {
            throw Error("report: run directories disagree on the model list");
        }

        datasets.push_back(dataset);
        bool classification = task != "regression";
        scales.push_back(classification ? 100.0 : 1.0);
        const std::string metric = classification ? "ce" : "mse";
        for (std::size_t m = 0; m < models.size(); ++m) {
            LoadedResults res = load_results(paths::results(dir, models[m]));
            auto it = res.aggregates.find(metric);
            if (it == res.aggregates.end())
                throw Error("report: results for '" + models[m] + "' lack metric " + metric);
            cells[m].push_back(it->second);
        }
    }
    return report_table(models, datasets, cells, scales);
}

// ============================================================================
// Compare (deterioration + pairwise Friedman)
// ============================================================================

struct CompareInput {
    ComparisonMatrix matrix;
};

inline CompareInput load_comparison(const std::string& losses_csv, const std::string& mask_csv) {
    auto read = [](const std::string& path) {
        std::ifstream in(path);
        if (!in) throw Error("compare: cannot open '" + path + "'");
        std::vector<std::vector<std::string>> rows;
        std::string line;
        while (std::getline(in, line)) {
            if (detail::trim(line).empty()) continue;
            rows.push_back(detail::split(detail::trim(line), ','));
        }
        if (rows.size() < 2) throw Error("compare: '" + path + "' needs a header and rows");
        return rows;
    };

    auto lrows = read(losses_csv);
    CompareInput ci;
    for (std::size_t j = 1; j < lrows[0].size(); ++j)
        ci.matrix.dataset_names.push_back(detail::trim(lrows[0][j]));
    const std::size_t n = ci.matrix.dataset_names.size();
    ci.matrix.losses = Matrix(lrows.size() - 1, n);
    for (std::size_t i = 1; i < lrows.size(); ++i) {
        if (lrows[i].size() != n + 1) throw Error("compare: ragged losses row");
        ci.matrix.model_names.push_back(detail::trim(lrows[i][0]));
        for (std::size_t j = 0; j < n; ++j) {
            double v;
            if (!detail::parse_double(lrows[i][j + 1], v))
                throw Error("compare: non-numeric loss cell");
            ci.matrix.losses.at(i - 1, j) = v;
        }
    }

    ci.matrix.unseen.assign(ci.matrix.losses.data.size(), 0);
    auto mrows = read(mask_csv);
    if (mrows.size() != lrows.size() || mrows[0].size() != lrows[0].size())
        throw Error("compare: mask shape does not match losses");
    for (std::size_t i = 1; i < mrows.size(); ++i)
        for (std::size_t j = 1; j < mrows[i].size(); ++j) {
            std::string v = detail::trim(mrows[i][j]);
            ci.matrix.unseen[(i - 1) * n + (j - 1)] = (v == "1" || v == "true") ? 1 : 0;
        }
    return ci;
}

// Pairwise Friedman tests on 2 x N submatrices.
inline Matrix pairwise_friedman_p(const ComparisonMatrix& cm) {
    const std::size_t k = cm.losses.rows;
    Matrix p(k, k, 1.0);
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = a + 1; b < k; ++b) {
            Matrix sub(2, cm.losses.cols);
            for (std::size_t d = 0; d < cm.losses.cols; ++d) {
                sub.at(0, d) = cm.losses.at(a, d);
                sub.at(1, d) = cm.losses.at(b, d);
            }
            double pv = friedman_test(sub).p_value;
            p.at(a, b) = pv;
            p.at(b, a) = pv;
        }
    return p;
}

inline std::string compare_report(const CompareInput& ci) {
    const auto& cm = ci.matrix;
    const std::size_t k = cm.losses.rows;
    if (k < 2 || cm.losses.cols < 2)
        throw Error("compare: need at least 2 models and 2 datasets");

    std::string out = "relative performance deterioration on unseen datasets\n";
    std::size_t name_w = 0;
    for (const auto& n : cm.model_names) name_w = std::max(name_w, n.size());
    for (std::size_t m = 0; m < k; ++m) {
        std::string pad(name_w - cm.model_names[m].size(), ' ');
        bool any_unseen = false;
        for (std::size_t d = 0; d < cm.losses.cols; ++d)
            if (cm.is_unseen(m, d)) any_unseen = true;
        out += "  " + cm.model_names[m] + pad + "  ";
        if (!any_unseen) {
            out += "(no unseen datasets)\n";
            continue;
        }
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f%%", relative_deterioration(cm, m));
        out += buf;
        out += '\n';
    }

    FriedmanResult omnibus = friedman_test(cm.losses);
    char line[160];
    std::snprintf(line, sizeof(line),
                  "\nomnibus Friedman: chi2=%.4f df=%zu p=%.5f %s\n", omnibus.statistic,
                  omnibus.df, omnibus.p_value,
                  omnibus.reject ? "(reject at 95%)" : "(fail to reject at 95%)");
    out += line;

    Matrix p = pairwise_friedman_p(cm);
    out += "\npairwise Friedman p-values (star = reject at 95%)\n";
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = a + 1; b < k; ++b) {
            std::snprintf(line, sizeof(line), "  %s vs %s: p=%.5f%s\n", cm.model_names[a].c_str(),
                          cm.model_names[b].c_str(), p.at(a, b), p.at(a, b) < 0.05 ? " *" : "");
            out += line;
        }
    return out;
}

// ============================================================================
// Top-level operations
// ============================================================================

struct ExperimentReport {
    std::string table;
    std::vector<SeedResult> ensemble_rows;
};

// The whole protocol: per-learner HPO on the validation split, final
// retrains under the experiment seeds, ensemble construction, report.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, bool resume = false,
                                       std::ostream* log = nullptr) {
    auto note = [&](const std::string& s) {
        if (log) (*log) << s << '\n';
    };
    fs::create_directories(cfg.out_dir);
    write_meta(cfg);

    PreparedData data = prepare_data(cfg);
    note("dataset: " + summarize_dataset(data.encoded));
    note("split: train=" + std::to_string(data.splits.train.size()) +
         " val=" + std::to_string(data.splits.val.size()) +
         " test=" + std::to_string(data.splits.test.size()));

    std::vector<FinalModels> finals;
    for (const auto& lc : cfg.learners) {
        note("tuning " + lc.name + " (" + std::to_string(cfg.budget) + " trials)");
        OptimizeResult tuned = tune_learner(cfg, data, lc, resume);
        note("  best val loss " + detail::fmt_double(tuned.best.val_loss) + " (trial " +
             std::to_string(tuned.best.id) + ")");
        note("training " + lc.name + " under " + std::to_string(cfg.seed_count) + " seeds");
        finals.push_back(train_final(cfg, data, lc, tuned.best.params));

        auto curve = plateau_curve({tuned.history});
        if (!curve.iteration.empty())
            emit_curve(paths::curves_dir(cfg.out_dir) + "/hpo_" + lc.name + ".csv",
                       curve.iteration, curve.mean, curve.sem);
    }

    note("building ensemble");
    ExperimentReport report;
    report.ensemble_rows = ensemble_stage(cfg, data, finals);

    report.table = build_report({cfg.out_dir});
    std::ofstream rout(paths::report(cfg.out_dir));
    rout << report.table;
    note("");
    return report;
}

} // namespace bakeoff
