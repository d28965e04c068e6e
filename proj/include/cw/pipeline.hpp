#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cw/dataio.hpp"
#include "cw/impute.hpp"
#include "cw/resample.hpp"
#include "cw/rng.hpp"

namespace cw {

struct ScalerParams {
    std::vector<double> min, max;

    std::size_t width() const { return min.size(); }
    bool degenerate(std::size_t c) const { return max[c] == min[c]; }
};

inline ScalerParams fit_minmax(const DatasetTable& table) {
    const std::int64_t n = table.rows(), d = table.cols();
    ScalerParams p;
    p.min.assign(static_cast<std::size_t>(d), 0.0);
    p.max.assign(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t c = 0; c < d; ++c) {
        double lo = table.cell(0, c), hi = table.cell(0, c);
        for (std::int64_t r = 1; r < n; ++r) {
            const double v = table.cell(r, c);
            require(!DatasetTable::missing(v), "fit_minmax: table must be fully imputed");
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        p.min[static_cast<std::size_t>(c)] = lo;
        p.max[static_cast<std::size_t>(c)] = hi;
    }
    return p;
}

// m = (x - min) / (max - min). Training rows land in [0,1]; test rows may
// fall outside and are not clipped. Degenerate (constant) features map to 0.
inline DatasetTable apply_minmax(const DatasetTable& table, const ScalerParams& p) {
    require(static_cast<std::size_t>(table.cols()) == p.width(),
            "apply_minmax: table width " + std::to_string(table.cols()) +
                " does not match scaler width " + std::to_string(p.width()));
    DatasetTable out = table;
    const std::int64_t n = table.rows(), d = table.cols();
    for (std::int64_t c = 0; c < d; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        const double range = p.max[cc] - p.min[cc];
        for (std::int64_t r = 0; r < n; ++r)
            out.cell(r, c) = range == 0.0 ? 0.0 : (table.cell(r, c) - p.min[cc]) / range;
    }
    return out;
}

struct PipelineConfig {
    bool eliminate = true;
    double elimination_threshold = 0.10;
    int impute_rounds = 5;
    bool oversample = true;
    double smote_ratio = 0.5;
    std::int64_t smote_k = 5;
    double svm_c = 1.0;
    bool undersample = true;
    std::int64_t enn_k = 3;
    int enn_max_iter = 100;
    std::uint64_t seed = 1;

    nlohmann::json to_json() const {
        return {{"eliminate", eliminate},
                {"elimination_threshold", elimination_threshold},
                {"impute_rounds", impute_rounds},
                {"oversample", oversample},
                {"smote_ratio", smote_ratio},
                {"smote_k", smote_k},
                {"svm_c", svm_c},
                {"undersample", undersample},
                {"enn_k", enn_k},
                {"enn_max_iter", enn_max_iter},
                {"seed", seed}};
    }

    static PipelineConfig from_json(const nlohmann::json& j) {
        PipelineConfig c;
        c.eliminate = j.value("eliminate", c.eliminate);
        c.elimination_threshold = j.value("elimination_threshold", c.elimination_threshold);
        c.impute_rounds = j.value("impute_rounds", c.impute_rounds);
        c.oversample = j.value("oversample", c.oversample);
        c.smote_ratio = j.value("smote_ratio", c.smote_ratio);
        c.smote_k = j.value("smote_k", c.smote_k);
        c.svm_c = j.value("svm_c", c.svm_c);
        c.undersample = j.value("undersample", c.undersample);
        c.enn_k = j.value("enn_k", c.enn_k);
        c.enn_max_iter = j.value("enn_max_iter", c.enn_max_iter);
        c.seed = j.value("seed", c.seed);
        return c;
    }
};

struct ProvenanceRecord {
    struct Stage {
        std::string name;
        bool skipped = false;
        std::int64_t rows_in = 0, cols_in = 0, rows_out = 0, cols_out = 0;
        std::int64_t negatives_out = 0, positives_out = 0;
        double millis = 0.0;
    };
    std::vector<Stage> stages;
    nlohmann::json config_echo;
    std::uint64_t seed = 0;
    nlohmann::json impute_record;
    nlohmann::json resample_report;

    // Timings live under a dedicated key so reproducibility checks can erase
    // the one run-dependent subtree before comparing bytes.
    nlohmann::json to_json() const {
        nlohmann::json stages_json = nlohmann::json::array();
        nlohmann::json timings = nlohmann::json::object();
        for (const auto& s : stages) {
            stages_json.push_back({{"name", s.name},
                                   {"skipped", s.skipped},
                                   {"rows_in", s.rows_in},
                                   {"cols_in", s.cols_in},
                                   {"rows_out", s.rows_out},
                                   {"cols_out", s.cols_out},
                                   {"negatives_out", s.negatives_out},
                                   {"positives_out", s.positives_out}});
            timings[s.name] = s.millis;
        }
        return {{"stages", stages_json}, {"config", config_echo},     {"seed", seed},
                {"impute", impute_record}, {"resample", resample_report}, {"timings_ms", timings}};
    }
};

struct PreprocessResult {
    DatasetTable train;
    DatasetTable test;
    ProvenanceRecord provenance;
    ResampleReport resample_report;
    MissingnessProfile profile;
    ScalerParams scaler;
};

namespace detail {

class StageTimer {
public:
    StageTimer() : start_(std::chrono::steady_clock::now()) {}
    double millis() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                         start_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

inline ProvenanceRecord::Stage stage_entry(const std::string& name, const DatasetTable& in,
                                           const DatasetTable& out, bool skipped, double millis) {
    ProvenanceRecord::Stage s;
    s.name = name;
    s.skipped = skipped;
    s.rows_in = in.rows();
    s.cols_in = in.cols();
    s.rows_out = out.rows();
    s.cols_out = out.cols();
    ClassCounts cc = class_counts(out);
    s.negatives_out = cc.negatives;
    s.positives_out = cc.positives;
    s.millis = millis;
    return s;
}

}  // namespace detail

// The preprocessing chain in order: eliminate (train-fitted, applied to both)
// -> impute (train-fitted, applied to both) -> SVM-SMOTE (train only) ->
// Repeated ENN (train only) -> min-max (fitted on the resampled train,
// applied to both). Disabled stages are recorded as skipped. Every transform
// applied to the test table was fitted exclusively on training data.
inline PreprocessResult run_preprocess(const DatasetTable& train_in, const DatasetTable& test_in,
                                       const PipelineConfig& cfg) {
    require(train_in.feature_names == test_in.feature_names,
            "run_preprocess: train/test tables must share the feature schema");
    PreprocessResult res;
    res.train = train_in;
    res.test = test_in;
    ProvenanceRecord& prov = res.provenance;
    prov.seed = cfg.seed;
    prov.config_echo = cfg.to_json();

    auto run_stage = [&](const std::string& name, bool enabled, auto&& body) {
        detail::StageTimer timer;
        DatasetTable before_train = res.train;
        try {
            if (enabled) body();
        } catch (const std::exception& e) {
            throw ShapeError("stage '" + name + "': " + e.what());
        }
        prov.stages.push_back(
            detail::stage_entry(name, before_train, res.train, !enabled, timer.millis()));
    };

    run_stage("eliminate", cfg.eliminate, [&] {
        res.profile = missingness_profile(res.train, cfg.elimination_threshold);
        res.train = apply_elimination(res.train, res.profile);
        res.test = apply_elimination(res.test, res.profile);
    });

    ImputeModel imodel;
    run_stage("impute", true, [&] {
        auto [filled, model] = iterative_impute(res.train, cfg.impute_rounds);
        res.train = std::move(filled);
        imodel = std::move(model);
        res.test = apply_impute(res.test, imodel);
    });
    if (cfg.eliminate)
        prov.impute_record = impute_record_json(res.profile, train_in.feature_names, imodel);
    else {
        MissingnessProfile identity = missingness_profile(train_in, 1.0);
        prov.impute_record = impute_record_json(identity, train_in.feature_names, imodel);
    }

    run_stage("oversample", cfg.oversample, [&] {
        RngStream rng(cfg.seed, Stream::resample);
        auto [augmented, report] = svm_smote(res.train, cfg.smote_ratio, cfg.smote_k, cfg.svm_c,
                                             rng);
        res.train = std::move(augmented);
        res.resample_report.smote = report.smote;
        res.resample_report.synthetic_count = report.synthetic_count;
        res.resample_report.support_vector_fallback = report.support_vector_fallback;
        res.resample_report.svm_converged = report.svm_converged;
        res.resample_report.svm_final_violation = report.svm_final_violation;
    });

    run_stage("undersample", cfg.undersample, [&] {
        auto [filtered, report] = repeated_enn(res.train, cfg.enn_k, cfg.enn_max_iter);
        res.train = std::move(filtered);
        res.resample_report.enn = report.enn;
        res.resample_report.enn_passes = report.enn_passes;
        res.resample_report.removed_per_pass = report.removed_per_pass;
        res.resample_report.stop_reason = report.stop_reason;
    });

    run_stage("scale", true, [&] {
        res.scaler = fit_minmax(res.train);
        res.train = apply_minmax(res.train, res.scaler);
        res.test = apply_minmax(res.test, res.scaler);
    });

    prov.resample_report = res.resample_report.to_json();
    return res;
}

}  // namespace cw
