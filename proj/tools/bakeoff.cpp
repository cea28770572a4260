// bakeoff CLI: tune, train, ensemble, compare, and report heterogeneous
// tabular predictors under a shared hyperparameter-optimization budget.

#include <CLI11.hpp>
#include <iostream>

#include "bakeoff/bakeoff.hpp"

namespace {

using namespace bakeoff;

struct CommonArgs {
    std::string config_path;
    std::string out_override;
    std::size_t workers = 0;
    bool resume = false;
};

ExperimentConfig load(const CommonArgs& args) {
    ExperimentConfig cfg = load_config(args.config_path);
    if (!args.out_override.empty()) cfg.out_dir = args.out_override;
    if (args.workers > 0) cfg.workers = args.workers;
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_config = true) {
    auto* opt = cmd->add_option("--config", args.config_path, "experiment config file");
    if (needs_config) opt->required();
    cmd->add_option("--out", args.out_override, "output directory (overrides config)");
    cmd->add_option("--workers", args.workers, "worker threads (overrides config)");
    cmd->add_flag("--resume", args.resume, "continue from persisted trial ids");
}

int cmd_ingest(const CommonArgs& args) {
    ExperimentConfig cfg = load(args);
    PreparedData data = prepare_data(cfg);
    fs::create_directories(cfg.out_dir + "/cache");
    write_csv(data.encoded, cfg.out_dir + "/cache/dataset.csv", cfg.schema.target);
    write_meta(cfg);
    std::cout << summarize_dataset(data.encoded) << '\n';
    std::cout << "split: train=" << data.splits.train.size() << " val=" << data.splits.val.size()
              << " test=" << data.splits.test.size() << '\n';
    std::cout << "cached encoded dataset under " << cfg.out_dir << "/cache\n";
    return 0;
}

int cmd_tune(const CommonArgs& args) {
    ExperimentConfig cfg = load(args);
    write_meta(cfg);
    PreparedData data = prepare_data(cfg);
    for (const auto& lc : cfg.learners) {
        OptimizeResult res = tune_learner(cfg, data, lc, args.resume);
        std::cout << lc.name << ": best val loss " << detail::fmt_double(res.best.val_loss)
                  << " at trial " << res.best.id << '\n';
        auto curve = plateau_curve({res.history});
        if (!curve.iteration.empty())
            emit_curve(paths::curves_dir(cfg.out_dir) + "/hpo_" + lc.name + ".csv",
                       curve.iteration, curve.mean, curve.sem);
    }
    return 0;
}

int cmd_train(const CommonArgs& args) {
    ExperimentConfig cfg = load(args);
    PreparedData data = prepare_data(cfg);
    for (const auto& lc : cfg.learners) {
        Hyperparameters best = load_params(paths::best_params(cfg.out_dir, lc.name));
        FinalModels fm = train_final(cfg, data, lc, best);
        std::vector<double> losses;
        for (const auto& r : fm.rows)
            losses.push_back(is_classification(cfg.schema.task) ? r.metrics.at("ce")
                                                                : r.metrics.at("mse"));
        MeanSem ms = aggregate_seeds(losses);
        std::cout << lc.name << ": test "
                  << (is_classification(cfg.schema.task) ? "ce x100 " : "mse ")
                  << format_cell(ms.mean, ms.sem,
                                 is_classification(cfg.schema.task) ? 100.0 : 1.0)
                  << '\n';
    }
    return 0;
}

int cmd_ensemble(const CommonArgs& args) {
    ExperimentConfig cfg = load(args);
    PreparedData data = prepare_data(cfg);
    std::vector<FinalModels> finals;
    for (const auto& lc : cfg.learners) {
        Hyperparameters best = load_params(paths::best_params(cfg.out_dir, lc.name));
        finals.push_back(train_final(cfg, data, lc, best));
    }
    auto rows = ensemble_stage(cfg, data, finals);
    std::vector<double> losses;
    for (const auto& r : rows)
        losses.push_back(is_classification(cfg.schema.task) ? r.metrics.at("ce")
                                                            : r.metrics.at("mse"));
    MeanSem ms = aggregate_seeds(losses);
    std::cout << "ensemble: test "
              << (is_classification(cfg.schema.task) ? "ce x100 " : "mse ")
              << format_cell(ms.mean, ms.sem, is_classification(cfg.schema.task) ? 100.0 : 1.0)
              << '\n';
    return 0;
}

int cmd_report(const CommonArgs& args, const std::vector<std::string>& dirs) {
    std::vector<std::string> run_dirs = dirs;
    if (run_dirs.empty()) {
        ExperimentConfig cfg = load(args);
        run_dirs.push_back(cfg.out_dir);
    }
    std::string table = build_report(run_dirs);
    std::ofstream(paths::report(run_dirs.front())) << table;
    std::cout << table;
    return 0;
}

int cmd_compare(const std::string& losses_csv, const std::string& mask_csv,
                const std::string& out_dir) {
    CompareInput ci = load_comparison(losses_csv, mask_csv);
    std::string text = compare_report(ci);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream(out_dir + "/compare.txt") << text;
    }
    std::cout << text;
    return 0;
}

int cmd_curves(const CommonArgs& args, const std::vector<std::string>& extra_dirs) {
    ExperimentConfig cfg = load(args);
    std::vector<std::string> dirs{cfg.out_dir};
    dirs.insert(dirs.end(), extra_dirs.begin(), extra_dirs.end());
    for (const auto& lc : cfg.learners) {
        std::vector<std::vector<TrialRecord>> histories;
        for (const auto& dir : dirs) {
            auto h = load_trials(paths::trials(dir, lc.name));
            if (!h.empty()) histories.push_back(std::move(h));
        }
        if (histories.empty()) {
            std::cerr << "no trials found for " << lc.name << '\n';
            continue;
        }
        PlateauCurve curve = plateau_curve(histories);
        if (curve.iteration.empty()) continue;
        std::string path = paths::curves_dir(cfg.out_dir) + "/hpo_" + lc.name + ".csv";
        emit_curve(path, curve.iteration, curve.mean, curve.sem);
        std::cout << lc.name << ": plateau at iteration " << curve.plateau_iteration << ", wrote "
                  << path << '\n';
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"heterogeneous tabular-model comparison harness"};
    app.require_subcommand(1);

    CommonArgs ingest_args, tune_args, train_args, ens_args, report_args, curves_args, run_args;
    std::vector<std::string> report_dirs, curve_dirs;
    std::string losses_csv, mask_csv, compare_out;

    add_common(app.add_subcommand("ingest", "validate and cache a dataset"), ingest_args);
    add_common(app.add_subcommand("tune", "hyperparameter search only"), tune_args);
    add_common(app.add_subcommand("train", "final retrains of tuned configurations"), train_args);
    add_common(app.add_subcommand("ensemble", "combine tuned learners"), ens_args);

    auto* report_cmd = app.add_subcommand("report", "render the results table");
    add_common(report_cmd, report_args, false);
    report_cmd->add_option("dirs", report_dirs, "run directories (one dataset column each)");

    auto* compare_cmd = app.add_subcommand("compare", "deterioration table + Friedman tests");
    compare_cmd->add_option("losses", losses_csv, "models x datasets loss CSV")->required();
    compare_cmd->add_option("mask", mask_csv, "unseen mask CSV (same shape)")->required();
    compare_cmd->add_option("--out", compare_out, "directory for compare.txt");

    auto* curves_cmd = app.add_subcommand("curves", "emit HPO plateau curves");
    add_common(curves_cmd, curves_args);
    curves_cmd->add_option("dirs", curve_dirs, "additional run directories (seeds)");

    add_common(app.add_subcommand("run", "full tune/train/ensemble/report pipeline"), run_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("ingest")) return cmd_ingest(ingest_args);
        if (app.got_subcommand("tune")) return cmd_tune(tune_args);
        if (app.got_subcommand("train")) return cmd_train(train_args);
        if (app.got_subcommand("ensemble")) return cmd_ensemble(ens_args);
        if (app.got_subcommand("report")) return cmd_report(report_args, report_dirs);
        if (app.got_subcommand("compare")) return cmd_compare(losses_csv, mask_csv, compare_out);
        if (app.got_subcommand("curves")) return cmd_curves(curves_args, curve_dirs);
        if (app.got_subcommand("run")) {
            bakeoff::ExperimentConfig cfg = load(run_args);
            bakeoff::ExperimentReport rep = bakeoff::run_experiment(cfg, run_args.resume, &std::cout);
            std::cout << rep.table;
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
