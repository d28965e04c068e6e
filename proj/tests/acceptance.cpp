// Acceptance suite: one pass/fail line per criterion. Criteria 5 and 7 need
// the public APS/SECOM files on disk (see --data-dir / CW_DATA_DIR); when the
// files are absent they are reported SKIP with the reason, never silently
// weakened.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "cw/config.hpp"
#include "cw/gradcheck.hpp"
#include "cw/metrics.hpp"
#include "cw/model.hpp"
#include "cw/pipeline.hpp"
#include "helpers.hpp"
#include "property_suites.hpp"

namespace fs = std::filesystem;

namespace {

int g_failures = 0;

class Timer {
public:
    Timer() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

void report(const std::string& id, bool pass, const std::string& detail, double seconds) {
    if (!pass) ++g_failures;
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << id << " — " << detail << "  ["
              << std::fixed << std::setprecision(1) << seconds << "s]\n"
              << std::defaultfloat << std::setprecision(6);
}

void report_skip(const std::string& id, const std::string& reason) {
    std::cout << "[SKIP] " << id << " — " << reason << "\n";
}

// ---- criterion 1: focal-loss worked example ------------------------------

void criterion1() {
    Timer t;
    const double fn_case = cw::focal_loss_value({0.1}, {1.0}, 0.95, 1.5);
    const double fp_case = cw::focal_loss_value({0.9}, {0.0}, 0.95, 1.5);
    const bool ok = std::abs(fn_case - 1.868) <= 1e-3 && std::abs(fp_case - 0.098) <= 1e-3;
    std::ostringstream d;
    d << "focal(y=1,p=0.1)=" << fn_case << " vs 1.868, focal(y=0,p=0.9)=" << fp_case
      << " vs 0.098 (tol 1e-3)";
    report("C1 focal-loss worked example", ok, d.str(), t.seconds());
}

// ---- published rows of the comparison tables -----------------------------

struct PaperCell {
    double printed;
    int decimals;
    // how the printed cell relates to the counts:
    //   derivable      — round-or-truncate of the derived ratio
    //   seed_averaged  — per-seed metric average, within one print ulp
    //   inconsistent   — off even as an average (checked at 1e-3)
    enum Kind { derivable, seed_averaged, inconsistent } kind = derivable;
};

struct PaperRow {
    std::string name;
    cw::ConfusionMatrix cm;
    // accuracy, precision, sensitivity, specificity, f1, npv, fdr, fpr, fnr, for
    std::vector<PaperCell> cells;
    double fp_cost, fn_cost, total;
};

std::vector<PaperRow> paper_rows() {
    auto c = [](double v, int dp = 4, PaperCell::Kind k = PaperCell::derivable) {
        return PaperCell{v, dp, k};
    };
    std::vector<PaperRow> rows;
    rows.push_back({"train/Syed",
                    {967, 1568, 33, 57432},
                    {c(0.9733), c(0.3815), c(0.967), c(0.9734), c(0.5471), c(0.9994), c(0.6185),
                     c(0.0266), c(0.033), c(0.0006)},
                    15680, 16500, 32180});
    rows.push_back({"train/Proposed",
                    {982.2, 415.6, 17.8, 58584.4},
                    {c(0.9928), c(0.7027), c(0.9822), c(0.9930), c(0.8183, 4, PaperCell::inconsistent),
                     c(0.9997), c(0.2973), c(0.0070), c(0.0178), c(0.0003)},
                    4156, 8900, 13056});
    rows.push_back({"test/Taghandiki",
                    {238, 77, 137, 15548},
                    {c(0.9866), c(0.7556), c(0.6347), c(0.9951), c(0.6899), c(0.9913), c(0.2444),
                     c(0.0049), c(0.3653), c(0.0087)},
                    770, 68500, 69270});
    rows.push_back({"test/Oh2020",
                    {316, 207, 59, 15418},
                    {c(0.983, 3), c(0.6042), c(0.8427), c(0.9868), c(0.7038), c(0.9962), c(0.3958),
                     c(0.0132), c(0.1573), c(0.0038)},
                    2070, 29500, 31570});
    rows.push_back({"test/Syed",
                    {345, 519, 30, 15106},
                    {c(0.96569, 5), c(0.3993), c(0.92), c(0.9668), c(0.5569), c(0.998, 3),
                     c(0.6007), c(0.0332), c(0.08), c(0.0020)},
                    5190, 15000, 20190});
    rows.push_back({"test/Ke",
                    {347, 229, 28, 15396},
                    {c(0.9839), c(0.6024), c(0.9253), c(0.9853), c(0.7298), c(0.9982), c(0.3976),
                     c(0.0147), c(0.0747), c(0.0018)},
                    2290, 14000, 16290});
    rows.push_back({"test/Rafsunjani",
                    {366, 771, 9, 14854},
                    {c(0.9513), c(0.3219), c(0.976), c(0.9507), c(0.4841), c(0.9994), c(0.6781),
                     c(0.0493), c(0.024), c(0.0006)},
                    7710, 4500, 12210});
    rows.push_back({"test/Akarte",
                    {363, 414, 12, 15211},
                    {c(0.9734), c(0.4672), c(0.968), c(0.9735), c(0.6302), c(0.9992), c(0.5328),
                     c(0.0265), c(0.032), c(0.0008)},
                    4140, 6000, 10140});
    rows.push_back({"test/Sun",
                    {369, 608, 6, 15017},
                    {c(0.9616), c(0.3777), c(0.984), c(0.9611), c(0.5459), c(0.9996), c(0.6223),
                     c(0.0389), c(0.016), c(0.0004)},
                    6080, 3000, 9080});
    rows.push_back({"test/RanasingheRF",
                    {371, 405, 4, 15220},
                    {c(0.9744), c(0.4781), c(0.9893), c(0.9741), c(0.6447), c(0.9997), c(0.5219),
                     c(0.0259), c(0.0107), c(0.0003)},
                    4050, 2000, 6050});
    rows.push_back({"test/RanasingheGBM",
                    {369, 255, 6, 15370},
                    {c(0.9837), c(0.5913), c(0.984), c(0.9837), c(0.7387), c(0.9996), c(0.4087),
                     c(0.0163), c(0.016), c(0.0004)},
                    2550, 3000, 5550});
    rows.push_back({"test/Oh2023",
                    {367, 0, 8, 15625},
                    {c(0.9995), c(1.0), c(0.9787), c(1.0), c(0.9892), c(0.9995), c(0.0), c(0.0),
                     c(0.0213), c(0.0005)},
                    0, 4000, 4000});
    // the published proposed-method test row averages five seeds; its F1 and
    // FDR cells are averages of per-seed ratios (one print ulp from the
    // count-derived value) and its FNR cell contradicts sensitivity+FNR=1
    rows.push_back({"test/Proposed",
                    {368.2, 4, 6.8, 15621},
                    {c(0.9993), c(0.9892), c(0.9818), c(0.9997),
                     c(0.9856, 4, PaperCell::seed_averaged),
                     c(0.9996), c(0.0108, 4, PaperCell::seed_averaged), c(0.0003),
                     c(0.0187, 4, PaperCell::inconsistent), c(0.0004)},
                    40, 3400, 3440});
    return rows;
}

// ---- criterion 2: cost formula reproduces Table 2 exactly ----------------

void criterion2() {
    Timer t;
    bool ok = true;
    std::string first_bad;
    for (const auto& row : paper_rows()) {
        cw::Costs costs = cw::total_cost(row.cm);
        if (costs.fp_cost != row.fp_cost || costs.fn_cost != row.fn_cost ||
            costs.total != row.total) {
            ok = false;
            if (first_bad.empty()) first_bad = row.name;
        }
    }
    std::ostringstream d;
    d << paper_rows().size() << " rows, FP/FN/total costs exact";
    if (!ok) d << "; first mismatch " << first_bad;
    report("C2 cost-formula reproduction", ok, d.str(), t.seconds());
}

// ---- criterion 3: metric suite reproduces Table 1 ------------------------

bool cell_matches(double derived, const PaperCell& cell, std::string& why) {
    const double ulp = std::pow(10.0, -cell.decimals);
    switch (cell.kind) {
        case PaperCell::derivable: {
            const bool rounded = std::abs(derived - cell.printed) <= 0.5 * ulp + 1e-12;
            const bool truncated =
                derived >= cell.printed - 1e-12 && derived < cell.printed + ulp;
            if (!(rounded || truncated)) {
                std::ostringstream os;
                os << "derived " << derived << " vs printed " << cell.printed;
                why = os.str();
                return false;
            }
            return true;
        }
        case PaperCell::seed_averaged:
            if (std::abs(derived - cell.printed) > ulp) {
                why = "seed-averaged cell off by more than one print ulp";
                return false;
            }
            return true;
        case PaperCell::inconsistent:
            if (std::abs(derived - cell.printed) > 1e-3) {
                why = "cell drifted beyond the documented discrepancy";
                return false;
            }
            return true;
    }
    return false;
}

void criterion3() {
    Timer t;
    bool ok = true;
    std::string first_bad;
    int cells_checked = 0;
    for (const auto& row : paper_rows()) {
        cw::MetricReport r = cw::metric_suite(row.cm);
        const std::vector<std::optional<double>> derived{
            r.accuracy, r.precision, r.sensitivity, r.specificity, r.f1,
            r.npv,      r.fdr,       r.fpr,         r.fnr,         r.for_rate};
        static const char* names[] = {"accuracy", "precision", "sensitivity", "specificity",
                                      "f1",       "npv",       "fdr",         "fpr",
                                      "fnr",      "for"};
        for (std::size_t i = 0; i < derived.size(); ++i) {
            if (!derived[i]) continue;
            ++cells_checked;
            std::string why;
            if (!cell_matches(*derived[i], row.cells[i], why)) {
                ok = false;
                if (first_bad.empty()) first_bad = row.name + "/" + names[i] + ": " + why;
            }
        }
    }
    // spot anchors on the proposed test row
    cw::MetricReport pr = cw::metric_suite({368.2, 4, 6.8, 15621});
    const bool anchors = std::abs(*pr.precision - 0.9892) <= 1e-4 &&   // truncated in print
                         std::abs(*pr.accuracy - 0.9993) <= 5e-5 &&
                         std::abs(*pr.f1 - 0.9856) <= 1e-4 &&          // seed-averaged cell
                         std::abs(*pr.sensitivity - 0.9818) <= 1e-4;   // truncated in print
    ok = ok && anchors;
    std::ostringstream d;
    d << cells_checked << " cells across " << paper_rows().size()
      << " rows at printed precision; anchors precision/accuracy/F1/sensitivity "
      << (anchors ? "hold" : "FAIL");
    if (!first_bad.empty()) d << "; first mismatch " << first_bad;
    report("C3 metric-formula reproduction", ok, d.str(), t.seconds());
}

// ---- criterion 4: gradient correctness ------------------------------------

void criterion4() {
    Timer t;
    bool ok = true;
    std::string worst_name = "-";
    double worst_ratio = 0.0;
    for (const auto& c : cw::gradcheck_primitives(7)) {
        if (!c.pass()) ok = false;
        if (c.error / c.tolerance > worst_ratio) {
            worst_ratio = c.error / c.tolerance;
            worst_name = c.name;
        }
    }
    cw::GradCheckCase full = cw::gradcheck_full_model(cw::desk_gradcheck_config(), 7);
    if (!full.pass()) ok = false;
    std::ostringstream d;
    d << "primitives <= 1e-5, full desk model " << full.error << " <= 1e-4 (worst primitive "
      << worst_name << ")";
    ok = ok && t.seconds() < 60.0;
    report("C4 gradient correctness", ok, d.str(), t.seconds());
}

// ---- criteria 5 and 7: require the public datasets ------------------------

std::string find_data_dir(int argc, char** argv) {
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--data-dir") return argv[i + 1];
    if (const char* env = std::getenv("CW_DATA_DIR")) return env;
    for (const char* cand : {"data", "../data", "../../data"})
        if (fs::exists(fs::path(cand) / "aps_failure_training_set.csv")) return cand;
    return "data";
}

bool has_aps(const std::string& dir) {
    return fs::exists(fs::path(dir) / "aps_failure_training_set.csv") &&
           fs::exists(fs::path(dir) / "aps_failure_test_set.csv");
}

bool has_secom(const std::string& dir) {
    return fs::exists(fs::path(dir) / "secom.data") &&
           fs::exists(fs::path(dir) / "secom_labels.data");
}

void criterion5(const std::string& data_dir) {
    if (!has_aps(data_dir) && !has_secom(data_dir)) {
        report_skip("C5 preprocessing counts",
                    "APS/SECOM datasets not found under '" + data_dir +
                        "' (pass --data-dir or set CW_DATA_DIR)");
        return;
    }
    Timer t;
    bool ok = true;
    std::ostringstream d;
    if (has_aps(data_dir)) {
        cw::DatasetTable train = cw::parse_table(
            (fs::path(data_dir) / "aps_failure_training_set.csv").string(),
            cw::TableFormat::aps_csv);
        auto cc = cw::class_counts(train);
        ok = ok && train.rows() == 60000 && train.cols() == 170 && cc.positives == 1000 &&
             cc.negatives == 59000;
        d << "APS train " << train.rows() << "x" << train.cols() << " (+" << cc.positives << ")";

        auto [reduced, profile] = cw::eliminate_features(train, 0.10, train);
        ok = ok && profile.dropped.size() == 28 && reduced.cols() == 142;
        d << "; eliminate drops " << profile.dropped.size() << " -> " << reduced.cols();

        auto [filled, imodel] = cw::iterative_impute(reduced, 5);
        cw::RngStream rng(1, cw::Stream::resample);
        auto [augmented, smote_report] = cw::svm_smote(filled, 0.5, 5, 1.0, rng);
        auto cc2 = cw::class_counts(augmented);
        ok = ok && cc2.positives == 29500;
        d << "; SMOTE minority " << cc2.positives;

        auto [final_table, enn_report] = cw::repeated_enn(augmented, 3, 100);
        auto cc3 = cw::class_counts(final_table);
        const double ratio = static_cast<double>(cc3.negatives) / static_cast<double>(cc3.positives);
        ok = ok && cc3.positives == 29500 && ratio >= 1.5 && ratio <= 2.5;
        d << "; ENN majority-only, final ratio " << ratio << ":1";
    } else {
        d << "APS files absent (partial run)";
        ok = false;
    }
    if (has_secom(data_dir)) {
        cw::DatasetTable secom = cw::parse_table((fs::path(data_dir) / "secom.data").string(),
                                                 cw::TableFormat::secom_pair);
        auto cc = cw::class_counts(secom);
        ok = ok && secom.rows() == 1567 && secom.cols() == 590 && cc.positives == 104;
        cw::SplitPlan plan = cw::stratified_kfold(secom, 8, cw::RngStream(1, cw::Stream::split));
        auto train_idx = cw::kfold_train_indices(plan, 0, secom.rows());
        cw::DatasetTable fold_train = secom.subset(train_idx);
        auto [reduced, profile] = cw::eliminate_features(fold_train, 0.10, fold_train);
        ok = ok && profile.dropped.size() == 52 && reduced.cols() == 538;
        d << "; SECOM " << secom.rows() << "x" << secom.cols() << ", fold-0 eliminate drops "
          << profile.dropped.size() << " -> " << reduced.cols();
    } else {
        d << "; SECOM files absent (partial run)";
        ok = false;
    }
    report("C5 preprocessing counts", ok, d.str(), t.seconds());
}

// ---- criterion 6: imputer quality on the synthetic benchmark --------------

void criterion6() {
    Timer t;
    const std::int64_t n = 500, d = 10;
    cw::RngStream rng(2024, cw::Stream::init);
    cw::DatasetTable truth;
    for (std::int64_t c = 0; c < d; ++c) truth.feature_names.push_back("f" + std::to_string(c));
    std::vector<double> a1(d), a2(d);
    for (std::int64_t c = 0; c < d; ++c) {
        a1[static_cast<std::size_t>(c)] = 2.0 * rng.uniform() - 1.0;
        a2[static_cast<std::size_t>(c)] = 2.0 * rng.uniform() - 1.0;
    }
    for (std::int64_t r = 0; r < n; ++r) {
        const double z1 = rng.normal(), z2 = rng.normal();
        truth.labels.push_back(static_cast<int>(r % 2));
        for (std::int64_t c = 0; c < d; ++c)
            truth.features.push_back(a1[static_cast<std::size_t>(c)] * z1 +
                                     a2[static_cast<std::size_t>(c)] * z2 + 0.05 * rng.normal());
    }
    auto [holed, removed] = cwtest::with_missing(truth, 0.2, 2025);
    auto rmse = [&](const cw::DatasetTable& filled) {
        double se = 0.0;
        std::int64_t cnt = 0;
        for (std::size_t i = 0; i < removed.size(); ++i)
            if (removed[i]) {
                const double dv = filled.features[i] - truth.features[i];
                se += dv * dv;
                ++cnt;
            }
        return std::sqrt(se / static_cast<double>(cnt));
    };
    auto [mean_filled, m0] = cw::iterative_impute(holed, 0);
    auto [iter_filled, m5] = cw::iterative_impute(holed, 5);
    const double mean_rmse = rmse(mean_filled);
    const double iter_rmse = rmse(iter_filled);
    const bool ok = iter_rmse <= 0.5 * mean_rmse && t.seconds() < 30.0;
    std::ostringstream det;
    det << "iterative RMSE " << iter_rmse << " vs mean RMSE " << mean_rmse << " (need <= 0.5x)";
    report("C6 imputer quality", ok, det.str(), t.seconds());
}

// ---- criterion 7: desk-scale training efficacy -----------------------------

double median3(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

void criterion7(const std::string& data_dir) {
    if (!has_aps(data_dir)) {
        report_skip("C7 desk-scale training efficacy",
                    "APS dataset not found under '" + data_dir +
                        "' (pass --data-dir or set CW_DATA_DIR)");
        return;
    }
    Timer t;
    cw::RunConfig cfg = cw::preset_config("aps_desk");
    cw::DatasetTable train = cw::parse_table(
        (fs::path(data_dir) / "aps_failure_training_set.csv").string(), cw::TableFormat::aps_csv);
    cw::DatasetTable test = cw::parse_table(
        (fs::path(data_dir) / "aps_failure_test_set.csv").string(), cw::TableFormat::aps_csv);
    auto subsample = [&](const cw::DatasetTable& t_in, std::int64_t target, std::uint64_t seed) {
        const double fraction = static_cast<double>(target) / static_cast<double>(t_in.rows());
        auto [rest, held] =
            cw::stratified_holdout(t_in, fraction, cw::RngStream(seed, cw::Stream::split));
        return t_in.subset(held);
    };
    cw::DatasetTable train_sub = subsample(train, cfg.dataset.subsample_train, cfg.pipeline.seed);
    cw::DatasetTable test_sub = subsample(test, cfg.dataset.subsample_test, cfg.pipeline.seed + 1);

    cw::PreprocessResult pre = cw::run_preprocess(train_sub, test_sub, cfg.pipeline);
    cfg.model.input_dim = pre.train.cols();

    const double always_negative =
        cw::total_cost(cw::confusion(pre.test.labels,
                                     std::vector<int>(pre.test.labels.size(), 0)),
                       cfg.train.cost)
            .total;

    auto run_variant = [&](cw::LossKind kind) {
        std::vector<double> costs;
        cw::LossConfig loss = cfg.loss;
        loss.kind = kind;
        for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
            cw::TrainResult r = cw::train(pre.train, cfg.model, loss, cfg.train, seed);
            std::vector<int> pred =
                cw::predict(r.best, cfg.model, pre.test, cfg.train.threshold);
            costs.push_back(cw::total_cost(cw::confusion(pre.test.labels, pred),
                                           cfg.train.cost)
                                .total);
        }
        return costs;
    };
    const double focal_median = median3(run_variant(cw::LossKind::focal));
    const double ce_median = median3(run_variant(cw::LossKind::cross_entropy));

    const bool ok = focal_median < always_negative && focal_median < ce_median;
    std::ostringstream d;
    d << "median test-subset cost: focal " << focal_median << ", cross-entropy " << ce_median
      << ", always-negative " << always_negative;
    report("C7 desk-scale training efficacy", ok, d.str(), t.seconds());
}

// ---- criterion 8: property suites -----------------------------------------

void criterion8() {
    Timer t;
    bool ok = true;
    std::ostringstream d;
    for (const auto& suite : cwtest::run_property_suites()) {
        ok = ok && suite.ok();
        d << suite.name << " " << (suite.ok() ? "ok" : "FAIL(" + suite.detail + ")") << "; ";
    }
    ok = ok && t.seconds() < 300.0;
    report("C8 property suites", ok, d.str(), t.seconds());
}

// ---- criterion 9: checkpoint round trip ------------------------------------

void criterion9() {
    Timer t;
    cw::TransformerConfig cfg = cw::desk_gradcheck_config();
    cfg.input_dim = 9;
    cw::TransformerParams params =
        cw::TransformerParams::init(cfg, cw::RngStream(5, cw::Stream::init));
    cw::DatasetTable table = cwtest::blob_table(50, 50, 9, 2.0, 8);
    const std::string path =
        (fs::temp_directory_path() / "cw_acceptance_ck.cwcp").string();
    cw::save_checkpoint(params, cfg, {{"seed", 5}}, path);
    cw::Checkpoint ck = cw::load_checkpoint(path);
    std::vector<double> from_disk = cw::predict_probabilities(ck.params, ck.config, table);
    std::vector<double> in_memory =
        cw::predict_probabilities(params.quantized_f32(), cfg, table);
    const bool ok = from_disk == in_memory && t.seconds() < 5.0;
    fs::remove(path);
    report("C9 checkpoint round trip", ok,
           "load-then-predict equals in-memory predict on 100 rows at 32-bit storage precision",
           t.seconds());
}

}  // namespace

int main(int argc, char** argv) {
    std::cout << std::unitbuf;
    const std::string data_dir = find_data_dir(argc, argv);
    std::cout << "acceptance suite (dataset dir: " << data_dir << ")\n";
    criterion1();
    criterion2();
    criterion3();
    criterion4();
    criterion5(data_dir);
    criterion6();
    criterion7(data_dir);
    criterion8();
    criterion9();
    if (g_failures > 0) {
        std::cout << g_failures << " criterion(s) FAILED\n";
        return 1;
    }
    std::cout << "all runnable criteria passed\n";
    return 0;
}
