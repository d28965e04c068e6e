#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cw/blas.hpp"
#include "cw/dataio.hpp"
#include "cw/parallel.hpp"
#include "cw/rng.hpp"
#include "cw/tensor.hpp"

namespace cw {

// Per-feature z-standardization for distance work. A zero-variance feature is
// ignored (scale 0): it cannot separate points that share its training value.
struct Standardizer {
    std::vector<double> mean, inv_std;

    static Standardizer fit(const std::vector<double>& rows, std::int64_t n, std::int64_t d) {
        Standardizer s;
        s.mean.assign(static_cast<std::size_t>(d), 0.0);
        s.inv_std.assign(static_cast<std::size_t>(d), 0.0);
        for (std::int64_t r = 0; r < n; ++r)
            for (std::int64_t c = 0; c < d; ++c)
                s.mean[static_cast<std::size_t>(c)] += rows[static_cast<std::size_t>(r * d + c)];
        for (auto& m : s.mean) m /= static_cast<double>(n);
        std::vector<double> var(static_cast<std::size_t>(d), 0.0);
        for (std::int64_t r = 0; r < n; ++r)
            for (std::int64_t c = 0; c < d; ++c) {
                const double dv =
                    rows[static_cast<std::size_t>(r * d + c)] - s.mean[static_cast<std::size_t>(c)];
                var[static_cast<std::size_t>(c)] += dv * dv;
            }
        for (std::int64_t c = 0; c < d; ++c) {
            const double v = var[static_cast<std::size_t>(c)] / static_cast<double>(n);
            s.inv_std[static_cast<std::size_t>(c)] = v > 0.0 ? 1.0 / std::sqrt(v) : 0.0;
        }
        return s;
    }

    void apply(std::vector<double>& rows) const {
        const std::int64_t d = static_cast<std::int64_t>(mean.size());
        const std::int64_t n = static_cast<std::int64_t>(rows.size()) / d;
        for (std::int64_t r = 0; r < n; ++r)
            for (std::int64_t c = 0; c < d; ++c) {
                auto& v = rows[static_cast<std::size_t>(r * d + c)];
                v = (v - mean[static_cast<std::size_t>(c)]) * inv_std[static_cast<std::size_t>(c)];
            }
    }
};

// Exact k-nearest-neighbor search over a fixed reference set. Squared
// Euclidean metric, optional internal per-feature standardization. Distances
// are expanded as |q|^2 + |r|^2 - 2 q.r so reference chunks go through one
// GEMM; ties break toward the smaller reference index.
class NeighborIndex {
public:
    NeighborIndex(std::vector<double> points, std::int64_t n, std::int64_t d, bool standardize)
        : n_(n), d_(d), points_(std::move(points)) {
        require(static_cast<std::int64_t>(points_.size()) == n * d,
                "NeighborIndex: point buffer size mismatch");
        if (standardize) {
            std_ = Standardizer::fit(points_, n, d);
            std_.apply(points_);
        } else {
            std_.mean.assign(static_cast<std::size_t>(d), 0.0);
            std_.inv_std.assign(static_cast<std::size_t>(d), 1.0);
        }
        norms_.resize(static_cast<std::size_t>(n));
        for (std::int64_t r = 0; r < n; ++r) {
            double s = 0.0;
            for (std::int64_t c = 0; c < d; ++c) {
                const double v = points_[static_cast<std::size_t>(r * d + c)];
                s += v * v;
            }
            norms_[static_cast<std::size_t>(r)] = s;
        }
    }

    std::int64_t size() const { return n_; }
    std::int64_t dim() const { return d_; }

    std::vector<std::int64_t> query(const double* point, std::int64_t k,
                                    std::int64_t exclude_self = -1) const {
        std::vector<double> q(point, point + d_);
        std::vector<std::int64_t> excl{exclude_self};
        auto res = query_batch(q, 1, k, exclude_self >= 0 ? &excl : nullptr);
        return res[0];
    }

    // queries: m x d in the original feature space; excludes (optional) holds
    // one reference index per query to skip (-1 for none).
    std::vector<std::vector<std::int64_t>> query_batch(
        const std::vector<double>& queries, std::int64_t m, std::int64_t k,
        const std::vector<std::int64_t>* excludes = nullptr) const {
        require(k >= 1, "knn_query: k must be >= 1");
        require(k <= (excludes ? n_ - 1 : n_),
                "knn_query: k=" + std::to_string(k) + " too large for " + std::to_string(n_) +
                    " reference points");
        std::vector<double> qs(queries.begin(), queries.begin() + m * d_);
        std_.apply(qs);
        std::vector<double> qnorm(static_cast<std::size_t>(m));
        for (std::int64_t r = 0; r < m; ++r) {
            double s = 0.0;
            for (std::int64_t c = 0; c < d_; ++c) {
                const double v = qs[static_cast<std::size_t>(r * d_ + c)];
                s += v * v;
            }
            qnorm[static_cast<std::size_t>(r)] = s;
        }

        std::vector<std::vector<std::int64_t>> out(static_cast<std::size_t>(m));
        const std::int64_t chunk = 64;
        parallel_blocks(static_cast<std::size_t>(m), static_cast<std::size_t>(chunk),
                        [&](std::size_t q0, std::size_t q1) {
            const std::int64_t rows = static_cast<std::int64_t>(q1 - q0);
            std::vector<double> dots(static_cast<std::size_t>(rows * n_));
            gemm_nt(qs.data() + q0 * static_cast<std::size_t>(d_), points_.data(), dots.data(),
                    rows, d_, n_, false);
            std::vector<std::pair<double, std::int64_t>> best;
            for (std::int64_t qi = 0; qi < rows; ++qi) {
                const std::int64_t gq = static_cast<std::int64_t>(q0) + qi;
                const std::int64_t skip =
                    excludes ? (*excludes)[static_cast<std::size_t>(gq)] : -1;
                best.clear();
                const double* dq = dots.data() + qi * n_;
                for (std::int64_t r = 0; r < n_; ++r) {
                    if (r == skip) continue;
                    const double dist =
                        qnorm[static_cast<std::size_t>(gq)] + norms_[static_cast<std::size_t>(r)] -
                        2.0 * dq[r];
                    const std::pair<double, std::int64_t> cand{dist, r};
                    if (static_cast<std::int64_t>(best.size()) < k) {
                        best.insert(std::upper_bound(best.begin(), best.end(), cand), cand);
                    } else if (cand < best.back()) {
                        best.pop_back();
                        best.insert(std::upper_bound(best.begin(), best.end(), cand), cand);
                    }
                }
                auto& res = out[static_cast<std::size_t>(gq)];
                res.reserve(static_cast<std::size_t>(k));
                for (const auto& [dist, idx] : best) res.push_back(idx);
            }
        });
        return out;
    }

private:
    std::int64_t n_, d_;
    std::vector<double> points_;  // standardized
    std::vector<double> norms_;
    Standardizer std_;
};

struct LinearSvmModel {
    std::vector<double> weights;  // d
    double bias = 0.0;
    std::vector<double> duals;    // per sample, in [0, C]
    double c = 1.0;
    bool converged = false;
    double final_violation = 0.0;
    int sweeps = 0;

    double decision(const double* x, std::int64_t d) const {
        double s = bias;
        for (std::int64_t c_ = 0; c_ < d; ++c_) s += weights[static_cast<std::size_t>(c_)] * x[c_];
        return s;
    }

    std::vector<std::int64_t> support_indices() const {
        std::vector<std::int64_t> out;
        for (std::size_t i = 0; i < duals.size(); ++i)
            if (duals[i] > 1e-8) out.push_back(static_cast<std::int64_t>(i));
        return out;
    }
};

// L1-loss soft-margin dual, sequential coordinate descent (bias through an
// appended constant-1 feature). Stops when the largest projected-gradient
// violation in a sweep drops below 1e-3, or after 1000 sweeps; a
// non-converged model is still returned with its final violation.
inline LinearSvmModel fit_linear_svm(const std::vector<double>& X, std::int64_t n, std::int64_t d,
                                     const std::vector<int>& y, double c) {
    require(c > 0.0, "fit_linear_svm: C must be positive");
    require(static_cast<std::int64_t>(y.size()) == n, "fit_linear_svm: label count mismatch");
    bool has_pos = false, has_neg = false;
    for (int yi : y) {
        require(yi == 1 || yi == -1, "fit_linear_svm: labels must be +1/-1");
        (yi == 1 ? has_pos : has_neg) = true;
    }
    require(has_pos && has_neg, "fit_linear_svm: both labels must be present");

    LinearSvmModel model;
    model.c = c;
    model.duals.assign(static_cast<std::size_t>(n), 0.0);
    std::vector<double> w(static_cast<std::size_t>(d) + 1, 0.0);  // last entry is the bias
    std::vector<double> qdiag(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        double s = 1.0;  // constant-1 feature
        const double* xi = X.data() + i * d;
        for (std::int64_t j = 0; j < d; ++j) s += xi[j] * xi[j];
        qdiag[static_cast<std::size_t>(i)] = s;
    }

    const double tol = 1e-3;
    int sweep = 0;
    double violation = 0.0;
    for (; sweep < 1000; ++sweep) {
        violation = 0.0;
        for (std::int64_t i = 0; i < n; ++i) {
            const double* xi = X.data() + i * d;
            const double yi = static_cast<double>(y[static_cast<std::size_t>(i)]);
            double wx = w[static_cast<std::size_t>(d)];
            for (std::int64_t j = 0; j < d; ++j) wx += w[static_cast<std::size_t>(j)] * xi[j];
            const double g = yi * wx - 1.0;
            double& a = model.duals[static_cast<std::size_t>(i)];
            double pg = g;
            if (a <= 0.0)
                pg = std::min(g, 0.0);
            else if (a >= c)
                pg = std::max(g, 0.0);
            violation = std::max(violation, std::abs(pg));
            if (std::abs(pg) > 1e-12) {
                const double a_new =
                    std::min(std::max(a - g / qdiag[static_cast<std::size_t>(i)], 0.0), c);
                const double delta = (a_new - a) * yi;
                for (std::int64_t j = 0; j < d; ++j) w[static_cast<std::size_t>(j)] += delta * xi[j];
                w[static_cast<std::size_t>(d)] += delta;
                a = a_new;
            }
        }
        if (violation < tol) {
            ++sweep;
            break;
        }
    }
    model.weights.assign(w.begin(), w.begin() + d);
    model.bias = w[static_cast<std::size_t>(d)];
    model.converged = violation < tol;
    model.final_violation = violation;
    model.sweeps = sweep;
    return model;
}

struct ResampleReport {
    struct StageCounts {
        bool ran = false;
        std::int64_t majority_before = 0, minority_before = 0;
        std::int64_t majority_after = 0, minority_after = 0;
    };
    StageCounts smote;
    StageCounts enn;
    std::int64_t synthetic_count = 0;
    bool support_vector_fallback = false;
    bool svm_converged = true;
    double svm_final_violation = 0.0;
    int enn_passes = 0;
    std::vector<std::int64_t> removed_per_pass;
    std::string stop_reason;  // converged | max_iter | class_flip

    nlohmann::json to_json() const {
        auto stage = [](const StageCounts& s) {
            return nlohmann::json{{"ran", s.ran},
                                  {"majority_before", s.majority_before},
                                  {"minority_before", s.minority_before},
                                  {"majority_after", s.majority_after},
                                  {"minority_after", s.minority_after}};
        };
        return nlohmann::json{{"smote", stage(smote)},
                              {"enn", stage(enn)},
                              {"synthetic_count", synthetic_count},
                              {"support_vector_fallback", support_vector_fallback},
                              {"svm_converged", svm_converged},
                              {"svm_final_violation", svm_final_violation},
                              {"enn_passes", enn_passes},
                              {"removed_per_pass", removed_per_pass},
                              {"stop_reason", stop_reason}};
    }
};

// Test seam: pins the neighbor pick and the interpolation coefficient beta
// in place of the resample-stream draws.
struct SmoteHooks {
    std::function<std::size_t(std::size_t)> pick_neighbor;  // arg: neighbor count
    std::function<double()> beta;
};

// Oversample the minority class to round(ratio * majority) rows. The SVM is
// fit on the whole table (minority = +1) over z-standardized features;
// generation runs round-robin over minority-class support vectors (all
// minority rows if the SVM finds none) and interpolates in the original
// feature space: s = x + beta (x' - x). Majority rows are untouched.
inline std::pair<DatasetTable, ResampleReport> svm_smote(const DatasetTable& table,
                                                         double target_minority_ratio,
                                                         std::int64_t k, double c, RngStream& rng,
                                                         const SmoteHooks* hooks = nullptr) {
    ClassCounts counts = class_counts(table);
    require(counts.positives >= 2, "svm_smote: minority class needs at least 2 samples");
    const double current = static_cast<double>(counts.positives) /
                           static_cast<double>(counts.negatives);
    require(target_minority_ratio > current && target_minority_ratio <= 1.0,
            "svm_smote: target ratio " + std::to_string(target_minority_ratio) +
                " must lie in (current=" + std::to_string(current) + ", 1]");

    const std::int64_t n = table.rows(), d = table.cols();
    std::vector<double> xs = table.features;
    Standardizer st = Standardizer::fit(xs, n, d);
    st.apply(xs);

    std::vector<int> y(static_cast<std::size_t>(n));
    std::vector<std::int64_t> minority_rows;
    for (std::int64_t r = 0; r < n; ++r) {
        y[static_cast<std::size_t>(r)] = table.labels[static_cast<std::size_t>(r)] == 1 ? 1 : -1;
        if (table.labels[static_cast<std::size_t>(r)] == 1) minority_rows.push_back(r);
    }
    LinearSvmModel svm = fit_linear_svm(xs, n, d, y, c);

    ResampleReport report;
    report.smote.ran = true;
    report.smote.majority_before = counts.negatives;
    report.smote.minority_before = counts.positives;
    report.svm_converged = svm.converged;
    report.svm_final_violation = svm.final_violation;

    std::vector<std::int64_t> generators;
    for (std::int64_t r : minority_rows)
        if (svm.duals[static_cast<std::size_t>(r)] > 1e-8) generators.push_back(r);
    if (generators.empty()) {
        generators = minority_rows;
        report.support_vector_fallback = true;
    }

    // neighbor lists over the minority set, standardized metric, self excluded
    std::vector<double> min_pts(minority_rows.size() * static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < minority_rows.size(); ++i)
        std::copy_n(xs.data() + minority_rows[i] * d, d, min_pts.data() + i * static_cast<std::size_t>(d));
    NeighborIndex index(std::move(min_pts), static_cast<std::int64_t>(minority_rows.size()), d,
                        /*standardize=*/false);
    const std::int64_t k_eff =
        std::min<std::int64_t>(k, static_cast<std::int64_t>(minority_rows.size()) - 1);
    std::vector<std::int64_t> min_pos(static_cast<std::size_t>(n), -1);
    for (std::size_t i = 0; i < minority_rows.size(); ++i)
        min_pos[static_cast<std::size_t>(minority_rows[i])] = static_cast<std::int64_t>(i);
    std::vector<double> gen_queries(generators.size() * static_cast<std::size_t>(d));
    std::vector<std::int64_t> gen_excl(generators.size());
    for (std::size_t g = 0; g < generators.size(); ++g) {
        std::copy_n(xs.data() + generators[g] * d, d,
                    gen_queries.data() + g * static_cast<std::size_t>(d));
        gen_excl[g] = min_pos[static_cast<std::size_t>(generators[g])];
    }
    auto neighbor_lists = index.query_batch(gen_queries, static_cast<std::int64_t>(generators.size()),
                                            k_eff, &gen_excl);

    const std::int64_t target_minority = static_cast<std::int64_t>(
        std::llround(target_minority_ratio * static_cast<double>(counts.negatives)));
    const std::int64_t need = target_minority - counts.positives;

    DatasetTable out = table;
    out.features.reserve(out.features.size() + static_cast<std::size_t>(need * d));
    std::size_t gi = 0;
    for (std::int64_t emitted = 0; emitted < need; ++emitted, ++gi) {
        const std::size_t g = gi % generators.size();
        const std::int64_t x_row = generators[g];
        const auto& nbrs = neighbor_lists[g];
        const std::size_t pick =
            hooks && hooks->pick_neighbor
                ? hooks->pick_neighbor(nbrs.size())
                : static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(nbrs.size())));
        const std::int64_t x_prime_row = minority_rows[static_cast<std::size_t>(nbrs[pick])];
        const double beta = hooks && hooks->beta ? hooks->beta() : rng.uniform_closed();
        const double* xv = table.features.data() + x_row * d;
        const double* xp = table.features.data() + x_prime_row * d;
        for (std::int64_t j = 0; j < d; ++j)
            out.features.push_back(xv[j] + beta * (xp[j] - xv[j]));
        out.labels.push_back(1);
    }
    report.synthetic_count = need;
    report.smote.majority_after = counts.negatives;
    report.smote.minority_after = counts.positives + need;
    return {out, report};
}

namespace detail {

// One simultaneous ENN pass editing only `majority_label` rows: a row is
// marked when strictly more than k/2 of its k nearest neighbors (pass-start
// table, self excluded) carry a different label, then all marks are removed
// at once.
inline std::pair<DatasetTable, std::int64_t> enn_pass_label(const DatasetTable& table,
                                                            std::int64_t k, int majority_label) {
    const std::int64_t n = table.rows(), d = table.cols();
    require(k >= 1 && k % 2 == 1, "enn_pass: k must be odd, got " + std::to_string(k));
    require(k < n, "enn_pass: k=" + std::to_string(k) + " must be smaller than the table (" +
                       std::to_string(n) + " rows)");
    ClassCounts counts = class_counts(table);
    require(counts.negatives > 0 && counts.positives > 0,
            "enn_pass: both classes must be present");

    NeighborIndex index(table.features, n, d, /*standardize=*/true);
    std::vector<std::int64_t> candidates;
    for (std::int64_t r = 0; r < n; ++r)
        if (table.labels[static_cast<std::size_t>(r)] == majority_label) candidates.push_back(r);

    std::vector<double> queries(candidates.size() * static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < candidates.size(); ++i)
        std::copy_n(table.features.data() + candidates[i] * d, d,
                    queries.data() + i * static_cast<std::size_t>(d));
    auto neighbor_lists = index.query_batch(queries, static_cast<std::int64_t>(candidates.size()),
                                            k, &candidates);

    std::vector<char> keep(static_cast<std::size_t>(n), 1);
    std::int64_t removed = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        std::int64_t differ = 0;
        for (std::int64_t nb : neighbor_lists[i])
            if (table.labels[static_cast<std::size_t>(nb)] != majority_label) ++differ;
        if (2 * differ > k) {
            keep[static_cast<std::size_t>(candidates[i])] = 0;
            ++removed;
        }
    }
    std::vector<std::int64_t> kept_rows;
    for (std::int64_t r = 0; r < n; ++r)
        if (keep[static_cast<std::size_t>(r)]) kept_rows.push_back(r);
    return {table.subset(kept_rows), removed};
}

inline int majority_label_of(const DatasetTable& table) {
    ClassCounts counts = class_counts(table);
    return counts.positives > counts.negatives ? 1 : 0;
}

}  // namespace detail

inline std::pair<DatasetTable, std::int64_t> enn_pass(const DatasetTable& table, std::int64_t k) {
    return detail::enn_pass_label(table, k, detail::majority_label_of(table));
}

// Repeated ENN per the three stop conditions: a pass removing nothing
// (converged), the iteration cap, or the majority class falling strictly
// below the minority (class_flip, checked between passes).
inline std::pair<DatasetTable, ResampleReport> repeated_enn(const DatasetTable& table,
                                                            std::int64_t k, int max_iter = 100) {
    require(max_iter >= 1, "repeated_enn: max_iter must be >= 1");
    const int majority_label = detail::majority_label_of(table);
    ClassCounts before = class_counts(table);

    ResampleReport report;
    report.enn.ran = true;
    report.enn.majority_before = majority_label == 0 ? before.negatives : before.positives;
    report.enn.minority_before = majority_label == 0 ? before.positives : before.negatives;

    DatasetTable current = table;
    report.stop_reason = "max_iter";
    for (int pass = 0; pass < max_iter; ++pass) {
        ClassCounts counts = class_counts(current);
        const std::int64_t maj = majority_label == 0 ? counts.negatives : counts.positives;
        const std::int64_t mnr = majority_label == 0 ? counts.positives : counts.negatives;
        if (maj < mnr) {
            report.stop_reason = "class_flip";
            break;
        }
        auto [next, removed] = detail::enn_pass_label(current, k, majority_label);
        current = std::move(next);
        report.enn_passes += 1;
        report.removed_per_pass.push_back(removed);
        if (removed == 0) {
            report.stop_reason = "converged";
            break;
        }
    }
    ClassCounts after = class_counts(current);
    report.enn.majority_after = majority_label == 0 ? after.negatives : after.positives;
    report.enn.minority_after = majority_label == 0 ? after.positives : after.negatives;
    return {current, report};
}

}  // namespace cw
