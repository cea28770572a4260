#pragma once

// Shared basics: dense matrix, task/prediction types, deterministic RNG,
// small numeric and string helpers used across the library.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <mutex>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace bakeoff {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Thrown when a single training run goes numerically bad (NaN loss). The
// optimizer records such runs as failed trials instead of crashing.
struct TrialFailed : Error {
    using Error::Error;
};

// ============================================================================
// Matrix
// ============================================================================

// Row-major dense matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const {
        return {data.data() + r * cols, cols};
    }

    bool empty() const { return rows == 0 || cols == 0; }
};

enum class Task { Binary, Multiclass, Regression };

inline bool is_classification(Task t) { return t != Task::Regression; }

inline const char* task_name(Task t) {
    switch (t) {
    case Task::Binary: return "binary";
    case Task::Multiclass: return "multiclass";
    case Task::Regression: return "regression";
    }
    return "?";
}

// Model outputs: probability rows for classification, scalars for regression.
struct Predictions {
    Task task = Task::Regression;
    Matrix probs;                // n x n_classes (classification)
    std::vector<double> values;  // n (regression)

    std::size_t size() const {
        return task == Task::Regression ? values.size() : probs.rows;
    }
};

// ============================================================================
// Deterministic RNG
// ============================================================================

inline std::uint64_t mix64(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return mix64(master ^ mix64(stream + 0x51ed2700af5d1a3bULL));
}

// mt19937_64 engine with hand-pinned value mappings so that every draw is
// fully determined by this code, not by library internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t bits() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive on both endpoints
    long long uniform_int(long long lo, long long hi) {
        std::uint64_t span = std::uint64_t(hi - lo) + 1;
        if (span == 0) return lo + (long long)gen_();  // full 64-bit range
        std::uint64_t mask = ~0ULL;
        std::uint64_t pow2 = span - 1;
        pow2 |= pow2 >> 1; pow2 |= pow2 >> 2; pow2 |= pow2 >> 4;
        pow2 |= pow2 >> 8; pow2 |= pow2 >> 16; pow2 |= pow2 >> 32;
        mask = pow2;
        std::uint64_t v;
        do { v = gen_() & mask; } while (v >= span);
        return lo + (long long)v;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // Box-Muller; u1 in (0,1] so log() stays finite
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        if (v.empty()) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = (std::size_t)uniform_int(0, (long long)i);
            std::swap(v[i], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ============================================================================
// Numeric helpers
// ============================================================================

inline double sigmoid(double z) {
    if (z >= 0) {
        double e = std::exp(-z);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(z);
    return e / (1.0 + e);
}

inline void softmax_in_place(std::span<double> z) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (double& v : z) {
        v = std::exp(v - m);
        s += v;
    }
    for (double& v : z) v /= s;
}

inline double clamp_prob(double p) {
    return std::clamp(p, 1e-12, 1.0 - 1e-12);
}

inline double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
}

// ============================================================================
// Strings
// ============================================================================

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline bool parse_double(const std::string& s, double& out) {
    const std::string t = trim(s);
    if (t.empty()) return false;
    char* end = nullptr;
    out = std::strtod(t.c_str(), &end);
    return end == t.c_str() + t.size();
}

// Shortest round-trippable decimal form; byte-stable for identical doubles.
inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double back = std::strtod(buf, nullptr);
    if (back == v) {
        for (int prec = 1; prec <= 16; ++prec) {
            char shorter[40];
            std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
            if (std::strtod(shorter, nullptr) == v) return shorter;
        }
    }
    return buf;
}

} // namespace detail

// ============================================================================
// Tiny parallel-for
// ============================================================================

// Runs fn(i) for i in [0, n) on up to `workers` threads. Results must be
// written to per-index slots so the reduction is order-independent. The
// first worker exception is rethrown on the calling thread.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

} // namespace bakeoff
