#pragma once

// Tabular data ingestion: CSV parsing with categorical encoding, train-only
// standardization, and reproducible train/validation/test splits.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bakeoff/core.hpp"

namespace bakeoff {

enum class FeatureKind { Numeric, Categorical };

struct FeatureMeta {
    std::string name;
    FeatureKind kind = FeatureKind::Numeric;
    std::vector<std::string> categories;  // code -> label, first-appearance order
};

// Column roles for load_csv. Feature columns default to numeric unless listed
// in `categorical`.
struct Schema {
    std::string target;
    std::vector<std::string> categorical;
    Task task = Task::Binary;
    int n_classes = 0;  // optional override for multiclass

    bool is_categorical(const std::string& col) const {
        for (const auto& c : categorical)
            if (c == col) return true;
        return false;
    }
};

// ============================================================================
// Dataset
// ============================================================================

struct Dataset {
    Matrix features;              // encoded: reals, or dense category codes
    std::vector<double> target;   // class index or real value
    Task task = Task::Binary;
    int n_classes = 0;            // classification only
    std::vector<FeatureMeta> feature_meta;
    std::vector<std::uint8_t> missing;       // row-major, 1 where raw cell absent
    std::vector<std::string> class_labels;   // class index -> raw label

    std::size_t n_rows() const { return features.rows; }
    std::size_t n_cols() const { return features.cols; }

    bool is_missing(std::size_t r, std::size_t c) const {
        return missing[r * features.cols + c] != 0;
    }

    int column_index(const std::string& name) const {
        for (std::size_t j = 0; j < feature_meta.size(); ++j)
            if (feature_meta[j].name == name) return int(j);
        return -1;
    }
};

// A subset of dataset rows; learners train and evaluate through views.
struct DataView {
    const Dataset* ds = nullptr;
    std::vector<std::size_t> idx;

    std::size_t size() const { return idx.size(); }
    double y(std::size_t i) const { return ds->target[idx[i]]; }
    double x(std::size_t i, std::size_t j) const { return ds->features.at(idx[i], j); }
    bool missing(std::size_t i, std::size_t j) const { return ds->is_missing(idx[i], j); }
};

inline DataView make_view(const Dataset& ds, std::vector<std::size_t> idx) {
    return DataView{&ds, std::move(idx)};
}

inline DataView full_view(const Dataset& ds) {
    std::vector<std::size_t> idx(ds.n_rows());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return DataView{&ds, std::move(idx)};
}

// ============================================================================
// CSV ingestion
// ============================================================================

namespace detail {

inline std::vector<std::string> csv_fields(const std::string& line) {
    auto fields = split(line, ',');
    for (auto& f : fields) {
        f = trim(f);
        if (f.size() >= 2 && f.front() == '"' && f.back() == '"')
            f = f.substr(1, f.size() - 2);
    }
    return fields;
}

} // namespace detail

inline Dataset load_csv(const std::string& path, const Schema& schema) {
    std::ifstream in(path);
    if (!in) throw Error("load_csv: cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw Error("load_csv: '" + path + "' is empty");
    auto header = detail::csv_fields(line);

    int target_col = -1;
    for (std::size_t j = 0; j < header.size(); ++j)
        if (header[j] == schema.target) target_col = int(j);
    if (target_col < 0)
        throw Error("load_csv: target column '" + schema.target + "' not found in '" + path + "'");

    Dataset ds;
    ds.task = schema.task;
    std::vector<int> feat_cols;
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (int(j) == target_col) continue;
        feat_cols.push_back(int(j));
        FeatureMeta m;
        m.name = header[j];
        m.kind = schema.is_categorical(header[j]) ? FeatureKind::Categorical
                                                  : FeatureKind::Numeric;
        ds.feature_meta.push_back(std::move(m));
    }

    std::vector<std::map<std::string, int>> cat_codes(feat_cols.size());
    std::map<std::string, int> label_codes;
    std::vector<double> cells;
    std::vector<std::uint8_t> miss;
    std::size_t n_rows = 0;
    std::size_t line_no = 1;

    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto fields = detail::csv_fields(line);
        if (fields.size() != header.size())
            throw Error("load_csv: line " + std::to_string(line_no) + " has " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(header.size()));

        for (std::size_t k = 0; k < feat_cols.size(); ++k) {
            const std::string& raw = fields[std::size_t(feat_cols[k])];
            if (raw.empty()) {
                cells.push_back(0.0);
                miss.push_back(1);
                continue;
            }
            miss.push_back(0);
            if (ds.feature_meta[k].kind == FeatureKind::Numeric) {
                double v;
                if (!detail::parse_double(raw, v))
                    throw Error("load_csv: non-numeric token '" + raw + "' in numeric column '" +
                                ds.feature_meta[k].name + "' (line " + std::to_string(line_no) + ")");
                cells.push_back(v);
            } else {
                auto [it, inserted] = cat_codes[k].emplace(raw, int(cat_codes[k].size()));
                if (inserted) ds.feature_meta[k].categories.push_back(raw);
                cells.push_back(double(it->second));
            }
        }

        const std::string& raw_y = fields[std::size_t(target_col)];
        if (raw_y.empty())
            throw Error("load_csv: missing target value at line " + std::to_string(line_no));
        if (schema.task == Task::Regression) {
            double v;
            if (!detail::parse_double(raw_y, v))
                throw Error("load_csv: non-numeric regression target '" + raw_y + "' (line " +
                            std::to_string(line_no) + ")");
            ds.target.push_back(v);
        } else {
            auto [it, inserted] = label_codes.emplace(raw_y, int(label_codes.size()));
            if (inserted) ds.class_labels.push_back(raw_y);
            ds.target.push_back(double(it->second));
        }
        ++n_rows;
    }

    if (n_rows == 0) throw Error("load_csv: '" + path + "' has zero data rows");

    ds.features.rows = n_rows;
    ds.features.cols = feat_cols.size();
    ds.features.data = std::move(cells);
    ds.missing = std::move(miss);

    if (schema.task == Task::Binary) {
        if (ds.class_labels.size() > 2)
            throw Error("load_csv: binary task but " + std::to_string(ds.class_labels.size()) +
                        " distinct labels");
        ds.n_classes = 2;
    } else if (schema.task == Task::Multiclass) {
        ds.n_classes = std::max<int>(int(ds.class_labels.size()), schema.n_classes);
        if (ds.n_classes < 2) throw Error("load_csv: multiclass task needs >= 2 classes");
    }
    return ds;
}

// Writes the encoded matrix back out. Missing cells become empty fields so a
// reload preserves the mask; categorical cells are written as their codes.
inline void write_csv(const Dataset& ds, const std::string& path,
                      const std::string& target_name = "target") {
    std::ofstream out(path);
    if (!out) throw Error("write_csv: cannot open '" + path + "' for writing");
    for (std::size_t j = 0; j < ds.feature_meta.size(); ++j)
        out << ds.feature_meta[j].name << ',';
    out << target_name << '\n';
    for (std::size_t i = 0; i < ds.n_rows(); ++i) {
        for (std::size_t j = 0; j < ds.n_cols(); ++j) {
            if (!ds.is_missing(i, j)) out << detail::fmt_double(ds.features.at(i, j));
            out << ',';
        }
        out << detail::fmt_double(ds.target[i]) << '\n';
    }
}

// ============================================================================
// Standardization
// ============================================================================

struct StandardizationStats {
    std::vector<double> mean;              // per column; 0 for categorical
    std::vector<double> stddev;            // population std; 0 for categorical/constant
    std::vector<std::uint8_t> is_numeric;
    std::vector<std::uint8_t> constant_feature;
};

// Population moments over the training rows only; missing cells are excluded.
inline StandardizationStats fit_standardizer(const Dataset& ds,
                                             const std::vector<std::size_t>& train_idx) {
    if (train_idx.empty()) throw Error("fit_standardizer: empty train index set");
    std::size_t cols = ds.n_cols();
    StandardizationStats st;
    st.mean.assign(cols, 0.0);
    st.stddev.assign(cols, 0.0);
    st.is_numeric.assign(cols, 0);
    st.constant_feature.assign(cols, 0);

    for (std::size_t j = 0; j < cols; ++j) {
        if (ds.feature_meta[j].kind != FeatureKind::Numeric) continue;
        st.is_numeric[j] = 1;
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t i : train_idx) {
            if (ds.is_missing(i, j)) continue;
            sum += ds.features.at(i, j);
            ++n;
        }
        if (n == 0) {  // column entirely missing in train: treat as constant
            st.constant_feature[j] = 1;
            continue;
        }
        double mu = sum / double(n);
        double ss = 0.0;
        for (std::size_t i : train_idx) {
            if (ds.is_missing(i, j)) continue;
            double d = ds.features.at(i, j) - mu;
            ss += d * d;
        }
        st.mean[j] = mu;
        st.stddev[j] = std::sqrt(ss / double(n));
        if (st.stddev[j] == 0.0) st.constant_feature[j] = 1;
    }
    return st;
}

// Applies train-derived stats to every row. Constant columns map to 0 and
// missing cells stay at 0, i.e. imputed at the training mean.
inline Dataset standardize(const Dataset& ds, const StandardizationStats& st) {
    if (st.mean.size() != ds.n_cols())
        throw Error("standardize: stats have " + std::to_string(st.mean.size()) +
                    " columns, dataset has " + std::to_string(ds.n_cols()));
    Dataset out = ds;
    for (std::size_t j = 0; j < ds.n_cols(); ++j) {
        if (!st.is_numeric[j]) continue;
        for (std::size_t i = 0; i < ds.n_rows(); ++i) {
            double& cell = out.features.at(i, j);
            if (ds.is_missing(i, j) || st.constant_feature[j]) {
                cell = 0.0;
            } else {
                cell = (cell - st.mean[j]) / st.stddev[j];
            }
        }
    }
    return out;
}

// ============================================================================
// One-hot expansion (for the differentiable learners)
// ============================================================================

// Maps an encoded row onto a purely numeric vector: numeric columns pass
// through, categorical columns expand to 0/1 indicator blocks. Missing cells
// contribute zeros either way.
struct OneHotLayout {
    std::vector<std::size_t> width;   // per source column: 1 or #categories
    std::vector<std::size_t> offset;
    std::size_t expanded_cols = 0;

    OneHotLayout() = default;
    explicit OneHotLayout(const std::vector<FeatureMeta>& meta) {
        width.reserve(meta.size());
        offset.reserve(meta.size());
        for (const auto& m : meta) {
            std::size_t w = m.kind == FeatureKind::Numeric
                                ? 1
                                : std::max<std::size_t>(1, m.categories.size());
            offset.push_back(expanded_cols);
            width.push_back(w);
            expanded_cols += w;
        }
    }

    void expand_row(std::span<const double> in, const std::uint8_t* miss,
                    std::span<double> out) const {
        std::fill(out.begin(), out.end(), 0.0);
        for (std::size_t j = 0; j < width.size(); ++j) {
            if (miss && miss[j]) continue;
            if (width[j] == 1) {
                out[offset[j]] = in[j];
            } else {
                auto code = std::size_t(in[j]);
                if (code < width[j]) out[offset[j] + code] = 1.0;
            }
        }
    }

    Matrix expand(const Matrix& X, const std::vector<std::uint8_t>* missing) const {
        if (X.cols != width.size())
            throw Error("one-hot expand: expected " + std::to_string(width.size()) +
                        " columns, got " + std::to_string(X.cols));
        Matrix out(X.rows, expanded_cols);
        for (std::size_t i = 0; i < X.rows; ++i) {
            const std::uint8_t* miss =
                missing ? missing->data() + i * X.cols : nullptr;
            expand_row(X.row(i), miss, out.row(i));
        }
        return out;
    }
};

// ============================================================================
// Splits
// ============================================================================

struct SplitPolicy {
    enum class Kind { Stratified, Temporal, Provided };
    Kind kind = Kind::Stratified;

    // stratified: train,val[,test] fractions summing to 1
    std::vector<double> fractions{0.8, 0.2};

    // temporal: rows with boundary_field < boundary go to train+val, the rest
    // to test; the last val_tail of the remaining rows become validation
    std::string boundary_field;
    double boundary = 0.0;
    std::size_t val_tail = 0;

    // provided: file of "<row_index>,<train|val|test>" lines
    std::string file;
};

struct SplitBundle {
    std::vector<std::size_t> train, val, test;
    SplitPolicy policy;
    std::uint64_t seed = 0;
};

namespace detail {

// Largest-remainder apportionment: each split gets floor or ceil of its
// proportional share and the counts sum to n exactly.
inline std::vector<std::size_t> apportion(std::size_t n, const std::vector<double>& fractions) {
    std::vector<std::size_t> counts(fractions.size(), 0);
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < fractions.size(); ++s) {
        double share = double(n) * fractions[s];
        counts[s] = std::size_t(share);
        assigned += counts[s];
        rem.emplace_back(share - double(counts[s]), s);
    }
    std::stable_sort(rem.begin(), rem.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) counts[rem[k % rem.size()].second]++;
    return counts;
}

} // namespace detail

inline SplitBundle split(const Dataset& ds, const SplitPolicy& policy, std::uint64_t seed) {
    SplitBundle out;
    out.policy = policy;
    out.seed = seed;
    const std::size_t n = ds.n_rows();

    if (policy.kind == SplitPolicy::Kind::Stratified) {
        const auto& fr = policy.fractions;
        if (fr.size() < 2 || fr.size() > 3)
            throw Error("split: expected 2 or 3 fractions");
        double sum = 0.0;
        for (double f : fr) sum += f;
        if (std::abs(sum - 1.0) > 1e-9) throw Error("split: fractions must sum to 1");

        // Regression has no classes to stratify over: single shuffled group.
        std::vector<std::vector<std::size_t>> groups;
        if (is_classification(ds.task)) {
            groups.resize(std::size_t(std::max(ds.n_classes, 1)));
            for (std::size_t i = 0; i < n; ++i)
                groups[std::size_t(ds.target[i])].push_back(i);
        } else {
            groups.emplace_back(n);
            for (std::size_t i = 0; i < n; ++i) groups[0][i] = i;
        }

        Rng rng(seed);
        std::vector<std::vector<std::size_t>*> dest{&out.train, &out.val, &out.test};
        for (auto& g : groups) {
            if (g.empty()) continue;
            rng.shuffle(g);
            auto counts = detail::apportion(g.size(), fr);
            std::size_t pos = 0;
            for (std::size_t s = 0; s < counts.size(); ++s)
                for (std::size_t k = 0; k < counts[s]; ++k) dest[s]->push_back(g[pos++]);
        }
        std::sort(out.train.begin(), out.train.end());
        std::sort(out.val.begin(), out.val.end());
        std::sort(out.test.begin(), out.test.end());

        for (std::size_t s = 0; s < fr.size(); ++s)
            if (fr[s] > 0.0 && dest[s]->empty())
                throw Error("split: requested split " + std::to_string(s) + " came out empty");
    } else if (policy.kind == SplitPolicy::Kind::Temporal) {
        int col = ds.column_index(policy.boundary_field);
        if (col < 0)
            throw Error("split: boundary field '" + policy.boundary_field + "' not found");
        std::vector<std::size_t> pre;
        for (std::size_t i = 0; i < n; ++i) {
            if (ds.features.at(i, std::size_t(col)) >= policy.boundary)
                out.test.push_back(i);
            else
                pre.push_back(i);
        }
        if (out.test.empty()) throw Error("split: temporal test set is empty");
        if (policy.val_tail == 0 || policy.val_tail >= pre.size())
            throw Error("split: val_tail must be in (0, #pre-boundary rows)");
        out.val.assign(pre.end() - long(policy.val_tail), pre.end());
        out.train.assign(pre.begin(), pre.end() - long(policy.val_tail));
    } else {
        std::ifstream in(policy.file);
        if (!in) throw Error("split: cannot open split file '" + policy.file + "'");
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            line = detail::trim(line);
            if (line.empty() || line[0] == '#') continue;
            auto parts = detail::split(line, ',');
            if (parts.size() != 2)
                throw Error("split: bad line " + std::to_string(line_no) + " in '" + policy.file + "'");
            std::size_t idx = std::size_t(std::stoull(detail::trim(parts[0])));
            if (idx >= n) throw Error("split: row index " + std::to_string(idx) + " out of range");
            std::string which = detail::trim(parts[1]);
            if (which == "train") out.train.push_back(idx);
            else if (which == "val") out.val.push_back(idx);
            else if (which == "test") out.test.push_back(idx);
            else throw Error("split: unknown split name '" + which + "'");
        }
        if (out.train.empty() || out.val.empty())
            throw Error("split: provided file must populate train and val");
        std::set<std::size_t> seen;
        for (const auto* v : {&out.train, &out.val, &out.test})
            for (std::size_t i : *v)
                if (!seen.insert(i).second)
                    throw Error("split: row " + std::to_string(i) + " assigned twice");
    }
    return out;
}

} // namespace bakeoff
