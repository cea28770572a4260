#pragma once

// Shared fixtures for the test suites: synthetic datasets, scratch
// directories, and a finite-difference gradient checker.

#include <filesystem>
#include <unistd.h>
#include <fstream>
#include <string>
#include <vector>

#include "bakeoff/core.hpp"
#include "bakeoff/dataset.hpp"

namespace testsup {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;

    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path = fs::temp_directory_path() /
               ("bakeoff_" + tag + "_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter.fetch_add(1)));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

// Gaussian blobs, one cluster per class. Purely numeric features.
inline bakeoff::Dataset make_blobs(std::size_t n, std::size_t features, int classes,
                                   std::uint64_t seed, double spread = 1.0) {
    bakeoff::Rng rng(seed);
    bakeoff::Dataset ds;
    ds.task = classes == 2 ? bakeoff::Task::Binary : bakeoff::Task::Multiclass;
    ds.n_classes = classes;
    ds.features = bakeoff::Matrix(n, features);
    ds.missing.assign(n * features, 0);
    ds.target.resize(n);
    for (int c = 0; c < classes; ++c) ds.class_labels.push_back(std::to_string(c));
    for (std::size_t j = 0; j < features; ++j)
        ds.feature_meta.push_back({"f" + std::to_string(j), bakeoff::FeatureKind::Numeric, {}});

    std::vector<std::vector<double>> centers(static_cast<std::size_t>(classes));
    for (auto& c : centers) c.resize(features);
    for (auto& c : centers)
        for (double& v : c) v = 2.0 * rng.normal();

    for (std::size_t i = 0; i < n; ++i) {
        int c = int(rng.uniform_int(0, classes - 1));
        ds.target[i] = double(c);
        for (std::size_t j = 0; j < features; ++j)
            ds.features.at(i, j) = centers[std::size_t(c)][j] + spread * rng.normal();
    }
    return ds;
}

// y = linear combination + noise.
inline bakeoff::Dataset make_regression(std::size_t n, std::size_t features, std::uint64_t seed,
                                        double noise = 0.1) {
    bakeoff::Rng rng(seed);
    bakeoff::Dataset ds;
    ds.task = bakeoff::Task::Regression;
    ds.features = bakeoff::Matrix(n, features);
    ds.missing.assign(n * features, 0);
    ds.target.resize(n);
    for (std::size_t j = 0; j < features; ++j)
        ds.feature_meta.push_back({"f" + std::to_string(j), bakeoff::FeatureKind::Numeric, {}});
    std::vector<double> coef(features);
    for (double& c : coef) c = rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
        double y = 0.0;
        for (std::size_t j = 0; j < features; ++j) {
            double x = rng.normal();
            ds.features.at(i, j) = x;
            y += coef[j] * x;
        }
        ds.target[i] = y + noise * rng.normal();
    }
    return ds;
}

inline void write_dataset_csv(const bakeoff::Dataset& ds, const std::string& path,
                              const std::string& target_name = "target") {
    bakeoff::write_csv(ds, path, target_name);
}

// Relative error between analytic and central-difference gradients, as the
// ratio of L2 norms. `Net` follows the loss_and_grad contract.
template <class Net>
double gradient_check(Net& net, const bakeoff::Matrix& X, const std::vector<double>& y,
                      const std::vector<std::size_t>& batch, double h = 1e-5) {
    std::vector<double> analytic;
    net.loss_and_grad(X, y, batch, analytic);

    std::vector<double> numeric(analytic.size());
    std::vector<double> scratch;
    for (std::size_t i = 0; i < net.params.size(); ++i) {
        double saved = net.params[i];
        net.params[i] = saved + h;
        double up = net.loss_and_grad(X, y, batch, scratch);
        net.params[i] = saved - h;
        double down = net.loss_and_grad(X, y, batch, scratch);
        net.params[i] = saved;
        numeric[i] = (up - down) / (2.0 * h);
    }

    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
}

} // namespace testsup
