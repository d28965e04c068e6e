#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "cw/blas.hpp"
#include "cw/dataio.hpp"
#include "cw/parallel.hpp"
#include "cw/tensor.hpp"

namespace cw {

struct MissingnessProfile {
    double threshold = 0.1;
    std::vector<double> fractions;       // per original feature, from the training split
    std::vector<std::int64_t> dropped;   // exactly the features with fraction > threshold
    std::vector<std::int64_t> kept;      // survivors, original column order preserved
};

inline MissingnessProfile missingness_profile(const DatasetTable& train, double threshold) {
    require(threshold >= 0.0 && threshold <= 1.0, "eliminate_features: threshold must be in [0,1]");
    MissingnessProfile p;
    p.threshold = threshold;
    const std::int64_t n = train.rows(), d = train.cols();
    p.fractions.assign(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t c = 0; c < d; ++c) {
        std::int64_t miss = 0;
        for (std::int64_t r = 0; r < n; ++r)
            if (DatasetTable::missing(train.cell(r, c))) ++miss;
        p.fractions[static_cast<std::size_t>(c)] =
            n == 0 ? 0.0 : static_cast<double>(miss) / static_cast<double>(n);
        if (p.fractions[static_cast<std::size_t>(c)] > threshold)
            p.dropped.push_back(c);
        else
            p.kept.push_back(c);
    }
    return p;
}

inline DatasetTable apply_elimination(const DatasetTable& t, const MissingnessProfile& p) {
    require(static_cast<std::size_t>(t.cols()) == p.fractions.size(),
            "apply_elimination: table width " + std::to_string(t.cols()) +
                " does not match profile width " + std::to_string(p.fractions.size()));
    require(!p.kept.empty(), "eliminate_features: all features dropped");
    DatasetTable out;
    out.labels = t.labels;
    out.origin = t.origin;
    for (std::int64_t c : p.kept)
        out.feature_names.push_back(t.feature_names[static_cast<std::size_t>(c)]);
    out.features.reserve(static_cast<std::size_t>(t.rows()) * p.kept.size());
    for (std::int64_t r = 0; r < t.rows(); ++r)
        for (std::int64_t c : p.kept) out.features.push_back(t.cell(r, c));
    return out;
}

// Profile is always computed on the training table and then applied
// identically to any table sharing the schema.
inline std::pair<DatasetTable, MissingnessProfile> eliminate_features(
    const DatasetTable& table, double threshold, const DatasetTable& profile_from) {
    MissingnessProfile p = missingness_profile(profile_from, threshold);
    return {apply_elimination(table, p), p};
}

// Posterior for one regression target under the Gaussian prior/likelihood
// pair: S = (alpha I + lambda X^T X)^-1, m = lambda S X^T y, on centered data.
struct BayesRidgeModel {
    Eigen::VectorXd weights;   // posterior mean m
    Eigen::MatrixXd cov;       // posterior covariance S
    double alpha = 1.0;        // prior precision
    double lambda = 1.0;       // noise precision
    Eigen::VectorXd x_mean;
    double y_mean = 0.0;
    int iterations = 0;
    bool converged = false;
};

struct BayesRidgePrediction {
    double mean = 0.0;
    double variance = 0.0;
};

namespace detail {

struct CenteredDesign {
    Eigen::MatrixXd Xc;
    Eigen::VectorXd yc;
    Eigen::VectorXd x_mean;
    double y_mean;
};

inline CenteredDesign center_design(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    CenteredDesign c;
    c.x_mean = X.colwise().mean();
    c.y_mean = y.mean();
    c.Xc = X.rowwise() - c.x_mean.transpose();
    c.yc = y.array() - c.y_mean;
    return c;
}

}  // namespace detail

// Posterior at fixed precisions; the evidence fixed point iterates this.
inline BayesRidgeModel bayes_ridge_posterior(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                             double alpha, double lambda) {
    auto c = detail::center_design(X, y);
    const std::int64_t d = X.cols();
    Eigen::MatrixXd G = c.Xc.transpose() * c.Xc;
    const double jitter = 1e-10 * G.trace() / static_cast<double>(d);
    G.diagonal().array() += jitter;
    Eigen::MatrixXd A = lambda * G;
    A.diagonal().array() += alpha;
    BayesRidgeModel m;
    m.cov = A.ldlt().solve(Eigen::MatrixXd::Identity(d, d));
    m.weights = lambda * (m.cov * (c.Xc.transpose() * c.yc));
    m.alpha = alpha;
    m.lambda = lambda;
    m.x_mean = c.x_mean;
    m.y_mean = c.y_mean;
    return m;
}

// MacKay evidence maximization: with e_j the eigenvalues of X^T X,
//   gamma  = sum_j lambda e_j / (alpha + lambda e_j)
//   alpha  <- gamma / (m^T m + 1e-12)
//   lambda <- (n - gamma) / (||y - X m||^2 + 1e-12)
// starting from lambda = 1/var(y) (1 if var(y)=0) and alpha = 1, stopping
// after 300 iterations or when both precisions move by < 1e-3 relative.
inline BayesRidgeModel fit_bayes_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    const std::int64_t n = X.rows(), d = X.cols();
    require(n >= 2, "fit_bayes_ridge: need at least 2 rows, got " + std::to_string(n));
    require(d >= 1, "fit_bayes_ridge: need at least 1 feature");

    auto c = detail::center_design(X, y);
    Eigen::MatrixXd G = c.Xc.transpose() * c.Xc;
    const double jitter = 1e-10 * G.trace() / static_cast<double>(d);
    G.diagonal().array() += jitter;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
    if (eig.info() != Eigen::Success)
        throw ShapeError("fit_bayes_ridge: eigendecomposition failed (singular system), "
                         "condition estimate unavailable");
    const Eigen::VectorXd e = eig.eigenvalues().cwiseMax(0.0);
    const Eigen::MatrixXd& U = eig.eigenvectors();
    const Eigen::VectorXd bU = U.transpose() * (c.Xc.transpose() * c.yc);
    const double yty = c.yc.squaredNorm();

    const double var_y = yty / static_cast<double>(n);
    double lambda = var_y > 0.0 ? 1.0 / var_y : 1.0;
    double alpha = 1.0;
    int it = 0;
    bool converged = false;
    Eigen::VectorXd mU(d);
    for (; it < 300; ++it) {
        Eigen::VectorXd denom = (lambda * e).array() + alpha;
        if (!denom.allFinite() || denom.minCoeff() <= 0.0) {
            const double cond = denom.maxCoeff() / std::max(denom.minCoeff(), 1e-300);
            throw ShapeError("fit_bayes_ridge: singular system despite jitter, condition ~" +
                             std::to_string(cond));
        }
        mU = lambda * bU.cwiseQuotient(denom);
        const double gamma = (lambda * e.array() / denom.array()).sum();
        const double mtm = mU.squaredNorm();
        const double residual =
            std::max(yty - 2.0 * mU.dot(bU) + (mU.array().square() * e.array()).sum(), 0.0);
        const double alpha_new = gamma / (mtm + 1e-12);
        const double lambda_new = std::max(static_cast<double>(n) - gamma, 1e-12) /
                                  (residual + 1e-12);
        const double ra = std::abs(alpha_new - alpha) / std::max(alpha, 1e-300);
        const double rl = std::abs(lambda_new - lambda) / std::max(lambda, 1e-300);
        alpha = alpha_new;
        lambda = lambda_new;
        if (ra < 1e-3 && rl < 1e-3) {
            converged = true;
            ++it;
            break;
        }
    }

    BayesRidgeModel m;
    Eigen::VectorXd denom = (lambda * e).array() + alpha;
    m.weights = U * (lambda * bU.cwiseQuotient(denom));
    m.cov = U * denom.cwiseInverse().asDiagonal() * U.transpose();
    m.alpha = alpha;
    m.lambda = lambda;
    m.x_mean = c.x_mean;
    m.y_mean = c.y_mean;
    m.iterations = it;
    m.converged = converged;
    return m;
}

inline BayesRidgePrediction bayes_ridge_predict(const BayesRidgeModel& m,
                                                const Eigen::VectorXd& x) {
    require(x.size() == m.weights.size(), "bayes_ridge_predict: input width " +
                                              std::to_string(x.size()) + " vs model width " +
                                              std::to_string(m.weights.size()));
    const Eigen::VectorXd xc = x - m.x_mean;
    BayesRidgePrediction p;
    p.mean = m.weights.dot(xc) + m.y_mean;
    p.variance = 1.0 / m.lambda + xc.dot(m.cov * xc);
    return p;
}

// Posterior-mean-only regressor retained per (round, feature) so the exact
// training-time transform replays on test tables.
struct ColumnRegressor {
    std::int64_t feature = 0;
    Eigen::VectorXd weights;  // over the d-1 other columns, in column order
    Eigen::VectorXd x_mean;
    double y_mean = 0.0;
    double alpha = 1.0;
    double lambda = 1.0;
};

struct ImputeModel {
    std::vector<double> column_means;          // training means, round-0 fill
    std::vector<std::int64_t> visit_order;     // ascending missingness, ties by index
    std::vector<std::vector<ColumnRegressor>> rounds;  // one list per round, in visit order
};

namespace detail {

// Predictors for column j: every other column of the snapshot, rows `rows`.
inline Eigen::MatrixXd gather_predictors(const std::vector<double>& snapshot, std::int64_t d,
                                         const std::vector<std::int64_t>& rows, std::int64_t j) {
    Eigen::MatrixXd X(static_cast<std::int64_t>(rows.size()), d - 1);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const double* row = snapshot.data() + rows[r] * d;
        std::int64_t k = 0;
        for (std::int64_t c = 0; c < d; ++c)
            if (c != j) X(static_cast<std::int64_t>(r), k++) = row[c];
    }
    return X;
}

}  // namespace detail

// Round 0 fills every missing cell with the training mean; each later round
// refits, per feature that has missing cells, a Bayesian ridge on the rows
// where that feature is observed (all other features at their snapshot fill
// values) and overwrites that feature's missing cells with posterior means.
// Observed cells are never modified.
inline std::pair<DatasetTable, ImputeModel> iterative_impute(const DatasetTable& table,
                                                             int rounds) {
    const std::int64_t n = table.rows(), d = table.cols();
    require(d >= 2, "iterative_impute: need at least 2 features, got " + std::to_string(d));
    require(rounds >= 0, "iterative_impute: rounds must be >= 0");

    std::vector<std::vector<std::int64_t>> observed_rows(static_cast<std::size_t>(d));
    std::vector<std::vector<std::int64_t>> missing_rows(static_cast<std::size_t>(d));
    for (std::int64_t c = 0; c < d; ++c)
        for (std::int64_t r = 0; r < n; ++r)
            (DatasetTable::missing(table.cell(r, c)) ? missing_rows : observed_rows)
                [static_cast<std::size_t>(c)]
                    .push_back(r);

    ImputeModel model;
    model.column_means.assign(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t c = 0; c < d; ++c) {
        const auto& obs = observed_rows[static_cast<std::size_t>(c)];
        require(!obs.empty(), "iterative_impute: feature '" +
                                  table.feature_names[static_cast<std::size_t>(c)] +
                                  "' has no observed values (eliminate it first)");
        double sum = 0.0;
        for (std::int64_t r : obs) sum += table.cell(r, c);
        model.column_means[static_cast<std::size_t>(c)] = sum / static_cast<double>(obs.size());
    }

    std::vector<std::int64_t> with_missing;
    for (std::int64_t c = 0; c < d; ++c)
        if (!missing_rows[static_cast<std::size_t>(c)].empty()) with_missing.push_back(c);
    std::stable_sort(with_missing.begin(), with_missing.end(),
                     [&](std::int64_t a, std::int64_t b) {
                         return missing_rows[static_cast<std::size_t>(a)].size() <
                                missing_rows[static_cast<std::size_t>(b)].size();
                     });
    model.visit_order = with_missing;

    DatasetTable filled = table;
    for (std::int64_t c : with_missing)
        for (std::int64_t r : missing_rows[static_cast<std::size_t>(c)])
            filled.cell(r, c) = model.column_means[static_cast<std::size_t>(c)];

    if (with_missing.empty()) return {filled, model};

    for (int round = 0; round < rounds; ++round) {
        const std::vector<double> snapshot = filled.features;  // round boundary
        std::vector<ColumnRegressor> fits(with_missing.size());
        parallel_blocks(with_missing.size(), 1, [&](std::size_t f0, std::size_t f1) {
            for (std::size_t f = f0; f < f1; ++f) {
                const std::int64_t j = with_missing[f];
                const auto& obs = observed_rows[static_cast<std::size_t>(j)];
                Eigen::MatrixXd X = detail::gather_predictors(snapshot, d, obs, j);
                Eigen::VectorXd y(static_cast<std::int64_t>(obs.size()));
                for (std::size_t r = 0; r < obs.size(); ++r)
                    y(static_cast<std::int64_t>(r)) = table.cell(obs[r], j);
                BayesRidgeModel br = fit_bayes_ridge(X, y);
                fits[f] = ColumnRegressor{j, br.weights, br.x_mean, br.y_mean, br.alpha,
                                          br.lambda};
            }
        });
        // each feature writes only its own column, from the common snapshot
        parallel_blocks(with_missing.size(), 1, [&](std::size_t f0, std::size_t f1) {
            for (std::size_t f = f0; f < f1; ++f) {
                const std::int64_t j = with_missing[f];
                const auto& fit = fits[f];
                Eigen::MatrixXd Xm = detail::gather_predictors(
                    snapshot, d, missing_rows[static_cast<std::size_t>(j)], j);
                Eigen::VectorXd pred =
                    ((Xm.rowwise() - fit.x_mean.transpose()) * fit.weights).array() + fit.y_mean;
                const auto& rows = missing_rows[static_cast<std::size_t>(j)];
                for (std::size_t r = 0; r < rows.size(); ++r)
                    filled.cell(rows[r], j) = pred(static_cast<std::int64_t>(r));
            }
        });
        model.rounds.push_back(std::move(fits));
    }
    return {filled, model};
}

// Replay the fitted transform on another table: mean fill, then every
// round's regressors in training order. Only cells missing in `table` are
// written.
inline DatasetTable apply_impute(const DatasetTable& table, const ImputeModel& model) {
    const std::int64_t n = table.rows(), d = table.cols();
    require(static_cast<std::size_t>(d) == model.column_means.size(),
            "apply_impute: table width " + std::to_string(d) + " does not match model width " +
                std::to_string(model.column_means.size()));
    std::vector<std::vector<std::int64_t>> missing_rows(static_cast<std::size_t>(d));
    for (std::int64_t c = 0; c < d; ++c)
        for (std::int64_t r = 0; r < n; ++r)
            if (DatasetTable::missing(table.cell(r, c)))
                missing_rows[static_cast<std::size_t>(c)].push_back(r);

    DatasetTable filled = table;
    for (std::int64_t c = 0; c < d; ++c)
        for (std::int64_t r : missing_rows[static_cast<std::size_t>(c)])
            filled.cell(r, c) = model.column_means[static_cast<std::size_t>(c)];

    for (const auto& round : model.rounds) {
        const std::vector<double> snapshot = filled.features;
        for (const auto& fit : round) {
            const auto& rows = missing_rows[static_cast<std::size_t>(fit.feature)];
            if (rows.empty()) continue;
            Eigen::MatrixXd Xm = detail::gather_predictors(snapshot, d, rows, fit.feature);
            Eigen::VectorXd pred =
                ((Xm.rowwise() - fit.x_mean.transpose()) * fit.weights).array() + fit.y_mean;
            for (std::size_t r = 0; r < rows.size(); ++r)
                filled.cell(rows[r], fit.feature) = pred(static_cast<std::int64_t>(r));
        }
    }
    return filled;
}

inline nlohmann::json impute_record_json(const MissingnessProfile& profile,
                                         const std::vector<std::string>& feature_names,
                                         const ImputeModel& model) {
    nlohmann::json j;
    j["threshold"] = profile.threshold;
    nlohmann::json fracs = nlohmann::json::object();
    for (std::size_t c = 0; c < profile.fractions.size(); ++c)
        fracs[feature_names[c]] = profile.fractions[c];
    j["missing_fractions"] = fracs;
    nlohmann::json dropped = nlohmann::json::array();
    for (std::int64_t c : profile.dropped)
        dropped.push_back(feature_names[static_cast<std::size_t>(c)]);
    j["dropped_features"] = dropped;
    j["rounds_performed"] = model.rounds.size();
    nlohmann::json precisions = nlohmann::json::object();
    if (!model.rounds.empty()) {
        std::vector<std::string> kept_names;
        for (std::int64_t c : profile.kept)
            kept_names.push_back(feature_names[static_cast<std::size_t>(c)]);
        for (const auto& fit : model.rounds.back())
            precisions[kept_names[static_cast<std::size_t>(fit.feature)]] = {
                {"alpha", fit.alpha}, {"lambda", fit.lambda}};
    }
    j["final_precisions"] = precisions;
    return j;
}

}  // namespace cw
