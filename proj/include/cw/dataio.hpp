#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "cw/rng.hpp"
#include "cw/tensor.hpp"

namespace cw {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class TableFormat { aps_csv, secom_pair, generic_csv };
enum class TableOrigin { aps_train, aps_test, secom, generic };

// Feature matrix with per-cell missingness (NaN encodes an absent value) and
// binary labels: 0 = negative/majority, 1 = positive/minority.
struct DatasetTable {
    std::vector<double> features;  // row-major n x d
    std::vector<int> labels;
    std::vector<std::string> feature_names;
    TableOrigin origin = TableOrigin::generic;

    std::int64_t rows() const { return static_cast<std::int64_t>(labels.size()); }
    std::int64_t cols() const { return static_cast<std::int64_t>(feature_names.size()); }
    double cell(std::int64_t r, std::int64_t c) const {
        return features[static_cast<std::size_t>(r * cols() + c)];
    }
    double& cell(std::int64_t r, std::int64_t c) {
        return features[static_cast<std::size_t>(r * cols() + c)];
    }
    static bool missing(double v) { return std::isnan(v); }

    void validate() const {
        require(features.size() == static_cast<std::size_t>(rows() * cols()),
                "DatasetTable: feature matrix size mismatch");
        for (int l : labels) require(l == 0 || l == 1, "DatasetTable: labels must be 0/1");
        std::set<std::string> seen(feature_names.begin(), feature_names.end());
        require(seen.size() == feature_names.size(), "DatasetTable: feature names not unique");
    }

    DatasetTable subset(const std::vector<std::int64_t>& idx) const {
        DatasetTable out;
        out.feature_names = feature_names;
        out.origin = origin;
        out.labels.reserve(idx.size());
        out.features.reserve(idx.size() * static_cast<std::size_t>(cols()));
        for (std::int64_t r : idx) {
            out.labels.push_back(labels[static_cast<std::size_t>(r)]);
            const double* row = features.data() + r * cols();
            out.features.insert(out.features.end(), row, row + cols());
        }
        return out;
    }
};

struct ClassCounts {
    std::int64_t negatives = 0;
    std::int64_t positives = 0;
    double ratio = 0.0;  // negatives / positives; +inf when positives == 0
};

inline ClassCounts class_counts(const DatasetTable& t) {
    ClassCounts c;
    for (int l : t.labels) (l == 1 ? c.positives : c.negatives) += 1;
    c.ratio = c.positives == 0 ? std::numeric_limits<double>::infinity()
                               : static_cast<double>(c.negatives) / static_cast<double>(c.positives);
    return c;
}

namespace detail {

inline std::string lower(std::string s) {
    for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

inline std::string strip(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(strip(line.substr(start)));
            break;
        }
        out.push_back(strip(line.substr(start, pos - start)));
        start = pos + 1;
    }
    return out;
}

inline std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

inline double parse_cell(const std::string& tok, const std::string& missing_lower,
                         std::size_t row_index) {
    if (lower(tok) == missing_lower) return std::numeric_limits<double>::quiet_NaN();
    double v;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw ParseError("row " + std::to_string(row_index) + ": unparseable value '" + tok + "'");
    return v;
}

inline std::string format_cell(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

}  // namespace detail

// APS distribution files carry license text above the data; skip lines until
// the header row, recognized by its first field being "class".
inline DatasetTable parse_aps_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        auto fields = detail::split_csv(line);
        if (!fields.empty() && detail::lower(fields[0]) == "class") {
            header = fields;
            break;
        }
    }
    if (header.empty()) throw ParseError(path + ": no header row starting with 'class'");
    DatasetTable t;
    t.feature_names.assign(header.begin() + 1, header.end());
    const std::size_t width = header.size();
    std::size_t row_index = 0;
    while (std::getline(in, line)) {
        if (detail::strip(line).empty()) continue;
        auto fields = detail::split_csv(line);
        if (fields.size() != width)
            throw ParseError("row " + std::to_string(row_index) + ": expected " +
                             std::to_string(width) + " fields, got " +
                             std::to_string(fields.size()));
        const std::string lab = detail::lower(fields[0]);
        if (lab == "neg")
            t.labels.push_back(0);
        else if (lab == "pos")
            t.labels.push_back(1);
        else
            throw ParseError("row " + std::to_string(row_index) + ": unknown label token '" +
                             fields[0] + "'");
        for (std::size_t c = 1; c < width; ++c)
            t.features.push_back(detail::parse_cell(fields[c], "na", row_index));
        ++row_index;
    }
    t.validate();
    return t;
}

// SECOM ships as two whitespace-separated files: sensor features (with "NaN"
// as the missing token) and labels (-1 pass / 1 fail) followed by a timestamp
// that is ignored.
inline DatasetTable parse_secom_pair(const std::string& features_path,
                                     const std::string& labels_path) {
    std::ifstream fin(features_path);
    if (!fin) throw IoError("cannot open " + features_path);
    std::ifstream lin(labels_path);
    if (!lin) throw IoError("cannot open " + labels_path);

    DatasetTable t;
    t.origin = TableOrigin::secom;
    std::string line;
    std::size_t width = 0, row_index = 0;
    while (std::getline(fin, line)) {
        if (detail::strip(line).empty()) continue;
        auto fields = detail::split_ws(line);
        if (width == 0) width = fields.size();
        if (fields.size() != width)
            throw ParseError("row " + std::to_string(row_index) + ": expected " +
                             std::to_string(width) + " fields, got " +
                             std::to_string(fields.size()));
        for (const auto& f : fields)
            t.features.push_back(detail::parse_cell(f, "nan", row_index));
        ++row_index;
    }
    for (std::size_t c = 0; c < width; ++c) t.feature_names.push_back("s" + std::to_string(c));

    std::size_t label_index = 0;
    while (std::getline(lin, line)) {
        if (detail::strip(line).empty()) continue;
        auto fields = detail::split_ws(line);
        if (fields.empty())
            throw ParseError("labels row " + std::to_string(label_index) + ": empty");
        if (fields[0] == "-1")
            t.labels.push_back(0);
        else if (fields[0] == "1")
            t.labels.push_back(1);
        else
            throw ParseError("labels row " + std::to_string(label_index) +
                             ": unknown label token '" + fields[0] + "'");
        ++label_index;
    }
    require(t.labels.size() == row_index, "SECOM: " + std::to_string(row_index) +
                                              " feature rows vs " +
                                              std::to_string(t.labels.size()) + " labels");
    t.validate();
    return t;
}

inline DatasetTable parse_generic_csv(const std::string& path, const std::string& missing_token,
                                      const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    auto header = detail::split_csv(line);
    std::ptrdiff_t label_col = -1;
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == label_column) label_col = static_cast<std::ptrdiff_t>(i);
    if (label_col < 0) throw ParseError(path + ": label column '" + label_column + "' not found");

    DatasetTable t;
    for (std::size_t i = 0; i < header.size(); ++i)
        if (static_cast<std::ptrdiff_t>(i) != label_col) t.feature_names.push_back(header[i]);
    const std::string miss = detail::lower(missing_token);
    const std::size_t width = header.size();
    std::size_t row_index = 0;
    while (std::getline(in, line)) {
        if (detail::strip(line).empty()) continue;
        auto fields = detail::split_csv(line);
        if (fields.size() != width)
            throw ParseError("row " + std::to_string(row_index) + ": expected " +
                             std::to_string(width) + " fields, got " +
                             std::to_string(fields.size()));
        for (std::size_t c = 0; c < width; ++c) {
            if (static_cast<std::ptrdiff_t>(c) == label_col) {
                const std::string& tok = fields[c];
                if (tok == "0" || detail::lower(tok) == "neg")
                    t.labels.push_back(0);
                else if (tok == "1" || detail::lower(tok) == "pos")
                    t.labels.push_back(1);
                else
                    throw ParseError("row " + std::to_string(row_index) +
                                     ": unknown label token '" + tok + "'");
            } else {
                t.features.push_back(detail::parse_cell(fields[c], miss, row_index));
            }
        }
        ++row_index;
    }
    t.validate();
    return t;
}

// For secom_pair, `path` is the features file; the labels file is either
// `labels_path` or derived by inserting "_labels" before the extension.
inline DatasetTable parse_table(const std::string& path, TableFormat format,
                                const std::string& missing_token = "na",
                                const std::string& label_column = "class",
                                const std::string& labels_path = {}) {
    switch (format) {
        case TableFormat::aps_csv: {
            DatasetTable t = parse_aps_csv(path);
            t.origin = path.find("test") != std::string::npos ? TableOrigin::aps_test
                                                              : TableOrigin::aps_train;
            return t;
        }
        case TableFormat::secom_pair: {
            std::string lp = labels_path;
            if (lp.empty()) {
                lp = path;
                std::size_t dot = lp.find_last_of('.');
                if (dot == std::string::npos)
                    lp += "_labels";
                else
                    lp.insert(dot, "_labels");
            }
            return parse_secom_pair(path, lp);
        }
        case TableFormat::generic_csv:
            return parse_generic_csv(path, missing_token, label_column);
    }
    throw ParseError("unknown table format");
}

// Shortest-round-trip formatting: every observed value re-parses to the exact
// same double.
inline void write_csv(const DatasetTable& t, const std::string& path,
                      const std::string& missing_token = "na",
                      const std::string& label_column = "class") {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << label_column;
    for (const auto& name : t.feature_names) out << ',' << name;
    out << '\n';
    for (std::int64_t r = 0; r < t.rows(); ++r) {
        out << t.labels[static_cast<std::size_t>(r)];
        for (std::int64_t c = 0; c < t.cols(); ++c) {
            const double v = t.cell(r, c);
            out << ',' << (DatasetTable::missing(v) ? missing_token : detail::format_cell(v));
        }
        out << '\n';
    }
}

struct SplitPlan {
    enum class Kind { holdout, kfold };
    Kind kind = Kind::kfold;
    std::int64_t k = 0;
    double fraction = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::vector<std::int64_t>> folds;  // disjoint, covering all rows
};

namespace detail {
inline std::vector<std::vector<std::int64_t>> per_class_indices(const DatasetTable& t) {
    std::vector<std::vector<std::int64_t>> by_class(2);
    for (std::int64_t r = 0; r < t.rows(); ++r)
        by_class[static_cast<std::size_t>(t.labels[static_cast<std::size_t>(r)])].push_back(r);
    return by_class;
}
}  // namespace detail

// Held set size = round(fraction * n) +- 1 with per-class proportions
// preserved within one sample. Pure function of (table, fraction, seed).
inline std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> stratified_holdout(
    const DatasetTable& t, double fraction, RngStream rng) {
    require(fraction > 0.0 && fraction < 1.0, "stratified_holdout: fraction must be in (0,1)");
    auto by_class = detail::per_class_indices(t);
    for (const auto& cls : by_class)
        require(cls.size() >= 2, "stratified_holdout: each class needs at least 2 samples");
    std::vector<std::int64_t> train, held;
    for (auto& cls : by_class) {
        rng.shuffle(cls);
        const auto take = static_cast<std::size_t>(
            std::llround(fraction * static_cast<double>(cls.size())));
        for (std::size_t i = 0; i < cls.size(); ++i)
            (i < take ? held : train).push_back(cls[i]);
    }
    std::sort(train.begin(), train.end());
    std::sort(held.begin(), held.end());
    return {train, held};
}

inline SplitPlan stratified_kfold(const DatasetTable& t, std::int64_t k, RngStream rng,
                                  std::uint64_t seed_echo = 0) {
    require(k >= 2, "stratified_kfold: K must be >= 2");
    auto by_class = detail::per_class_indices(t);
    for (const auto& cls : by_class)
        require(static_cast<std::int64_t>(cls.size()) >= k,
                "stratified_kfold: a class has fewer than K samples");
    SplitPlan plan;
    plan.kind = SplitPlan::Kind::kfold;
    plan.k = k;
    plan.seed = seed_echo;
    plan.folds.assign(static_cast<std::size_t>(k), {});
    for (auto& cls : by_class) {
        rng.shuffle(cls);
        const std::int64_t q = static_cast<std::int64_t>(cls.size()) / k;
        const std::int64_t r = static_cast<std::int64_t>(cls.size()) % k;
        std::size_t pos = 0;
        for (std::int64_t f = 0; f < k; ++f) {
            const std::int64_t take = q + (f < r ? 1 : 0);
            for (std::int64_t i = 0; i < take; ++i)
                plan.folds[static_cast<std::size_t>(f)].push_back(cls[pos++]);
        }
    }
    for (auto& fold : plan.folds) std::sort(fold.begin(), fold.end());
    return plan;
}

// Complement of one fold: the training rows for that fold.
inline std::vector<std::int64_t> kfold_train_indices(const SplitPlan& plan, std::int64_t fold,
                                                     std::int64_t n_rows) {
    std::vector<char> held(static_cast<std::size_t>(n_rows), 0);
    for (std::int64_t r : plan.folds[static_cast<std::size_t>(fold)])
        held[static_cast<std::size_t>(r)] = 1;
    std::vector<std::int64_t> train;
    for (std::int64_t r = 0; r < n_rows; ++r)
        if (!held[static_cast<std::size_t>(r)]) train.push_back(r);
    return train;
}

}  // namespace cw
