#pragma once

// Adapter for out-of-process predictors. The child process is invoked as
//   CMD fit <train.csv> <val.csv> <hyperparameter file> <model-out>
//   CMD predict <model> <features.csv> <predictions-out.csv>
// where the hyperparameter file holds flat key=value lines (plus the seed)
// and the predictions file carries one probability row or scalar per input
// row, no header.

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "bakeoff/core.hpp"
#include "bakeoff/dataset.hpp"
#include "bakeoff/search_space.hpp"

namespace bakeoff {

namespace detail {

inline std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    out += "'";
    return out;
}

inline void run_command(const std::string& cmd) {
    int rc = std::system(cmd.c_str());
    if (rc != 0)
        throw Error("external adapter: command failed (exit " + std::to_string(rc) + "): " + cmd);
}

inline void write_features_csv(const Matrix& X, const std::vector<std::uint8_t>* missing,
                               const std::vector<FeatureMeta>& meta, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("external adapter: cannot write '" + path + "'");
    for (std::size_t j = 0; j < meta.size(); ++j) {
        if (j) out << ',';
        out << meta[j].name;
    }
    out << '\n';
    for (std::size_t i = 0; i < X.rows; ++i) {
        for (std::size_t j = 0; j < X.cols; ++j) {
            if (j) out << ',';
            bool miss = missing && (*missing)[i * X.cols + j];
            if (!miss) out << fmt_double(X.at(i, j));
        }
        out << '\n';
    }
}

} // namespace detail

struct ExternalModel {
    std::string command;
    std::string model_path;
    std::string workdir;
    Task task = Task::Binary;
    int n_classes = 2;
    std::vector<FeatureMeta> feature_meta;

    Predictions predict(const Matrix& X, const std::vector<std::uint8_t>* missing = nullptr) const;
};

// Materializes a view as its own dataset (used for the adapter's CSV files).
inline Dataset subset_dataset(const Dataset& ds, const std::vector<std::size_t>& idx) {
    Dataset out;
    out.task = ds.task;
    out.n_classes = ds.n_classes;
    out.feature_meta = ds.feature_meta;
    out.class_labels = ds.class_labels;
    out.features = Matrix(idx.size(), ds.n_cols());
    out.missing.assign(idx.size() * ds.n_cols(), 0);
    out.target.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < ds.n_cols(); ++j) {
            out.features.at(i, j) = ds.features.at(idx[i], j);
            out.missing[i * ds.n_cols() + j] = ds.is_missing(idx[i], j) ? 1 : 0;
        }
        out.target[i] = ds.target[idx[i]];
    }
    return out;
}

inline ExternalModel fit_external(const std::string& command, const DataView& train,
                                  const DataView& val, const Hyperparameters& hp,
                                  std::uint64_t seed, const std::string& workdir) {
    namespace fs = std::filesystem;
    fs::create_directories(workdir);
    const Dataset& ds = *train.ds;

    std::string train_csv = workdir + "/train.csv";
    std::string val_csv = workdir + "/val.csv";
    std::string hp_file = workdir + "/params.txt";
    std::string model_out = workdir + "/model.bin";

    write_csv(subset_dataset(ds, train.idx), train_csv);
    write_csv(subset_dataset(ds, val.idx), val_csv);

    {
        std::ofstream out(hp_file);
        for (const auto& [k, v] : hp) out << k << '=' << detail::fmt_double(v) << '\n';
        out << "seed=" << seed << '\n';
    }

    detail::run_command(command + " fit " + detail::shell_quote(train_csv) + ' ' +
                        detail::shell_quote(val_csv) + ' ' + detail::shell_quote(hp_file) + ' ' +
                        detail::shell_quote(model_out));

    ExternalModel model;
    model.command = command;
    model.model_path = model_out;
    model.workdir = workdir;
    model.task = ds.task;
    model.n_classes = ds.n_classes;
    model.feature_meta = ds.feature_meta;
    return model;
}

inline Predictions ExternalModel::predict(const Matrix& X,
                                          const std::vector<std::uint8_t>* missing) const {
    if (X.cols != feature_meta.size())
        throw Error("external adapter: feature count mismatch");
    std::string feat_csv = workdir + "/predict_in.csv";
    std::string pred_csv = workdir + "/predict_out.csv";
    detail::write_features_csv(X, missing, feature_meta, feat_csv);

    detail::run_command(command + " predict " + detail::shell_quote(model_path) + ' ' +
                        detail::shell_quote(feat_csv) + ' ' + detail::shell_quote(pred_csv));

    std::ifstream in(pred_csv);
    if (!in) throw Error("external adapter: predictor wrote no output file");

    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        line = detail::trim(line);
        if (line.empty()) continue;
        std::vector<double> row;
        for (const auto& tok : detail::split(line, ',')) {
            double v;
            if (!detail::parse_double(tok, v))
                throw Error("external adapter: malformed prediction token '" + tok + "'");
            row.push_back(v);
        }
        rows.push_back(std::move(row));
    }
    if (rows.size() != X.rows)
        throw Error("external adapter: expected " + std::to_string(X.rows) + " prediction rows, got " +
                    std::to_string(rows.size()));

    Predictions out;
    out.task = task;
    if (task == Task::Regression) {
        out.values.reserve(rows.size());
        for (const auto& r : rows) {
            if (r.size() != 1) throw Error("external adapter: regression rows must hold one value");
            out.values.push_back(r[0]);
        }
        return out;
    }

    auto k = std::size_t(n_classes);
    out.probs = Matrix(rows.size(), k);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::vector<double> r = rows[i];
        if (task == Task::Binary && r.size() == 1) r = {1.0 - r[0], r[0]};
        if (r.size() != k)
            throw Error("external adapter: expected " + std::to_string(k) +
                        " probabilities per row, got " + std::to_string(r.size()));
        double sum = 0.0;
        for (double v : r) {
            if (v < -1e-6 || !std::isfinite(v))
                throw Error("external adapter: invalid probability value");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw Error("external adapter: probability row sums to " + std::to_string(sum));
        for (std::size_t c = 0; c < k; ++c) out.probs.at(i, c) = std::max(0.0, r[c]) / sum;
    }
    return out;
}

} // namespace bakeoff
