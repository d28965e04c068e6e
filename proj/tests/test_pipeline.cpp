#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cw/pipeline.hpp"
#include "helpers.hpp"

using cw::DatasetTable;

TEST_CASE("minmax fit and apply") {
    DatasetTable t;
    t.feature_names = {"a", "b"};
    t.labels = {0, 0, 1};
    t.features = {2, 5, 4, 5, 6, 5};
    cw::ScalerParams p = cw::fit_minmax(t);
    CHECK(p.min == std::vector<double>{2, 5});
    CHECK(p.max == std::vector<double>{6, 5});
    CHECK(!p.degenerate(0));
    CHECK(p.degenerate(1));

    DatasetTable scaled = cw::apply_minmax(t, p);
    CHECK(scaled.cell(0, 0) == 0.0);   // x = min -> 0
    CHECK(scaled.cell(2, 0) == 1.0);   // x = max -> 1
    CHECK(scaled.cell(0, 1) == 0.0);   // degenerate -> 0
    CHECK(scaled.cell(1, 1) == 0.0);

    // test rows are not clipped: x_max + (x_max - x_min) -> 2
    DatasetTable beyond = t;
    beyond.features[0] = 6 + 4;
    CHECK(cw::apply_minmax(beyond, p).cell(0, 0) == 2.0);

    // extrema compose over concatenated tables
    DatasetTable u = t;
    u.features = {0, 7, 9, 5, 1, 5};
    cw::ScalerParams pu = cw::fit_minmax(u);
    DatasetTable both = t;
    both.labels.insert(both.labels.end(), u.labels.begin(), u.labels.end());
    both.features.insert(both.features.end(), u.features.begin(), u.features.end());
    cw::ScalerParams pb = cw::fit_minmax(both);
    for (std::size_t c = 0; c < 2; ++c) {
        CHECK(pb.min[c] == std::min(p.min[c], pu.min[c]));
        CHECK(pb.max[c] == std::max(p.max[c], pu.max[c]));
    }

    // transform then inverse-transform recovers inputs (non-degenerate)
    for (std::int64_t r = 0; r < t.rows(); ++r) {
        const double back = scaled.cell(r, 0) * (p.max[0] - p.min[0]) + p.min[0];
        CHECK_THAT(back, Catch::Matchers::WithinAbs(t.cell(r, 0), 1e-12));
    }
}

namespace {

struct Fixture {
    DatasetTable train;
    DatasetTable test;
};

Fixture make_fixture(std::uint64_t seed) {
    Fixture f;
    f.train = cwtest::shuffled(cwtest::blob_table(120, 12, 5, 2.5, seed), seed + 1);
    f.test = cwtest::shuffled(cwtest::blob_table(40, 6, 5, 2.5, seed + 2), seed + 3);
    auto [train_holes, r1] = cwtest::with_missing(f.train, 0.08, seed + 4);
    auto [test_holes, r2] = cwtest::with_missing(f.test, 0.08, seed + 5);
    f.train = std::move(train_holes);
    f.test = std::move(test_holes);
    // one feature with heavy missingness in train, to be eliminated
    for (std::int64_t r = 0; r < f.train.rows(); ++r)
        if (r % 4 != 0) f.train.cell(r, 4) = std::numeric_limits<double>::quiet_NaN();
    return f;
}

cw::PipelineConfig fixture_config() {
    cw::PipelineConfig cfg;
    cfg.elimination_threshold = 0.10;
    cfg.impute_rounds = 2;
    cfg.smote_ratio = 0.5;
    cfg.smote_k = 3;
    cfg.enn_k = 3;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("run_preprocess follows the stage chain") {
    Fixture f = make_fixture(100);
    cw::PreprocessResult res = cw::run_preprocess(f.train, f.test, fixture_config());

    REQUIRE(res.provenance.stages.size() == 5);
    CHECK(res.provenance.stages[0].name == "eliminate");
    CHECK(res.provenance.stages[1].name == "impute");
    CHECK(res.provenance.stages[2].name == "oversample");
    CHECK(res.provenance.stages[3].name == "undersample");
    CHECK(res.provenance.stages[4].name == "scale");
    for (const auto& s : res.provenance.stages) CHECK(!s.skipped);

    // heavy-missingness feature dropped from both tables
    CHECK(res.train.cols() == 4);
    CHECK(res.test.cols() == 4);

    // the test table's row count is invariant through the pipeline
    CHECK(res.test.rows() == f.test.rows());

    // resampling hit the minority target before ENN edited the majority
    CHECK(res.resample_report.smote.minority_after == 60);  // round(0.5 * 120)
    CHECK(res.resample_report.enn.minority_after == 60);
    CHECK(res.resample_report.enn.majority_after <= 120);

    // scaled training table spans exactly [0,1] on non-degenerate features
    for (std::int64_t c = 0; c < res.train.cols(); ++c) {
        double lo = 1e300, hi = -1e300;
        for (std::int64_t r = 0; r < res.train.rows(); ++r) {
            lo = std::min(lo, res.train.cell(r, c));
            hi = std::max(hi, res.train.cell(r, c));
        }
        if (res.scaler.degenerate(static_cast<std::size_t>(c))) continue;
        CHECK_THAT(lo, Catch::Matchers::WithinAbs(0.0, 1e-12));
        CHECK_THAT(hi, Catch::Matchers::WithinAbs(1.0, 1e-12));
    }

    // nothing missing anywhere
    for (double v : res.train.features) CHECK(!DatasetTable::missing(v));
    for (double v : res.test.features) CHECK(!DatasetTable::missing(v));
}

TEST_CASE("ablation switches skip stages") {
    Fixture f = make_fixture(200);
    cw::PipelineConfig cfg = fixture_config();
    cfg.eliminate = false;
    cfg.oversample = false;
    cfg.undersample = false;
    cw::PreprocessResult res = cw::run_preprocess(f.train, f.test, cfg);

    CHECK(res.provenance.stages[0].skipped);
    CHECK(res.provenance.stages[2].skipped);
    CHECK(res.provenance.stages[3].skipped);
    CHECK(!res.provenance.stages[1].skipped);
    CHECK(!res.provenance.stages[4].skipped);

    // impute + scale only: class counts unchanged, width unchanged
    CHECK(res.train.cols() == f.train.cols());
    auto before = cw::class_counts(f.train);
    auto after = cw::class_counts(res.train);
    CHECK(after.negatives == before.negatives);
    CHECK(after.positives == before.positives);
    CHECK(res.test.rows() == f.test.rows());
    CHECK(!res.resample_report.smote.ran);
    CHECK(!res.resample_report.enn.ran);
}

TEST_CASE("no-oversample still runs ENN") {
    Fixture f = make_fixture(300);
    cw::PipelineConfig cfg = fixture_config();
    cfg.oversample = false;
    cw::PreprocessResult res = cw::run_preprocess(f.train, f.test, cfg);
    CHECK(!res.resample_report.smote.ran);
    CHECK(res.resample_report.enn.ran);
    CHECK(res.resample_report.enn_passes >= 1);
}

TEST_CASE("preprocessing is deterministic for a fixed seed") {
    Fixture f = make_fixture(400);
    cw::PreprocessResult a = cw::run_preprocess(f.train, f.test, fixture_config());
    cw::PreprocessResult b = cw::run_preprocess(f.train, f.test, fixture_config());
    CHECK(a.train.features == b.train.features);
    CHECK(a.train.labels == b.train.labels);
    CHECK(a.test.features == b.test.features);

    // provenance JSON is byte-identical once the timing subtree is erased
    nlohmann::json ja = a.provenance.to_json();
    nlohmann::json jb = b.provenance.to_json();
    ja.erase("timings_ms");
    jb.erase("timings_ms");
    CHECK(ja.dump() == jb.dump());
}

TEST_CASE("disabling the ENN stage leaves the SMOTE draws unchanged") {
    Fixture f = make_fixture(500);
    cw::PipelineConfig with_enn = fixture_config();
    cw::PipelineConfig without_enn = fixture_config();
    without_enn.undersample = false;
    cw::PreprocessResult a = cw::run_preprocess(f.train, f.test, with_enn);
    cw::PreprocessResult b = cw::run_preprocess(f.train, f.test, without_enn);
    // same synthetic rows: stage streams are isolated, so the resample
    // stream's draws do not depend on which later stages run
    CHECK(a.resample_report.synthetic_count == b.resample_report.synthetic_count);
    CHECK(a.resample_report.smote.minority_after == b.resample_report.smote.minority_after);
}

TEST_CASE("stage errors carry the stage name") {
    Fixture f = make_fixture(600);
    cw::PipelineConfig cfg = fixture_config();
    cfg.smote_ratio = 2.0;  // invalid target
    CHECK_THROWS_WITH(cw::run_preprocess(f.train, f.test, cfg),
                      Catch::Matchers::ContainsSubstring("oversample"));
    cw::DatasetTable other = f.test;
    other.feature_names[0] = "renamed";
    CHECK_THROWS_WITH(cw::run_preprocess(f.train, other, fixture_config()),
                      Catch::Matchers::ContainsSubstring("share the feature schema"));
}
