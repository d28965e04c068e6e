// cwkit: batch front end for the cost-sensitive failure-prediction workflow.
// Subcommands: preprocess, train, evaluate, ablate, gradcheck.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "cw/config.hpp"
#include "cw/dataio.hpp"
#include "cw/gradcheck.hpp"
#include "cw/metrics.hpp"
#include "cw/model.hpp"
#include "cw/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
    std::string preset;
    std::string config_path;
    std::string data_dir;
    std::string out_dir = "out";
    std::vector<std::uint64_t> seeds;
    double threshold = -1.0;
    double cost_fp = -1.0;
    double cost_fn = -1.0;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--preset", o.preset, "preset name (aps_paper, aps_desk, secom_paper, secom_desk)");
    cmd->add_option("--config", o.config_path, "JSON config file; keys override the preset");
    cmd->add_option("--data-dir", o.data_dir, "prefix for relative dataset paths");
    cmd->add_option("--out", o.out_dir, "output directory");
    cmd->add_option("--seeds", o.seeds, "seed list")->delimiter(',');
    cmd->add_option("--seed", [&o](const std::vector<std::string>& v) {
        o.seeds = {static_cast<std::uint64_t>(std::stoull(v.back()))};
        return true;
    }, "single seed (overrides --seeds)");
    cmd->add_option("--threshold", o.threshold, "decision threshold (default from config, 0.5)");
    cmd->add_option("--cost-fp", o.cost_fp, "false-positive cost");
    cmd->add_option("--cost-fn", o.cost_fn, "false-negative cost");
}

cw::RunConfig resolve_config(const CommonOpts& o) {
    cw::RunConfig cfg = cw::load_run_config(o.preset, o.config_path);
    if (!o.seeds.empty()) cfg.seeds = o.seeds;
    if (o.threshold >= 0.0) cfg.train.threshold = o.threshold;
    if (o.cost_fp >= 0.0) cfg.train.cost.c_fp = o.cost_fp;
    if (o.cost_fn >= 0.0) cfg.train.cost.c_fn = o.cost_fn;
    return cfg;
}

std::string join_path(const std::string& dir, const std::string& p) {
    if (dir.empty() || p.empty() || fs::path(p).is_absolute()) return p;
    return (fs::path(dir) / p).string();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw cw::IoError("cannot write " + path);
    f << text;
}

cw::DatasetTable stratified_subsample(const cw::DatasetTable& t, std::int64_t target,
                                      std::uint64_t seed) {
    if (target <= 0 || target >= t.rows()) return t;
    const double fraction = static_cast<double>(target) / static_cast<double>(t.rows());
    auto [rest, held] = cw::stratified_holdout(t, fraction, cw::RngStream(seed, cw::Stream::split));
    return t.subset(held);
}

struct LoadedData {
    cw::DatasetTable train;
    cw::DatasetTable test;
};

LoadedData load_holdout_dataset(const cw::RunConfig& cfg, const std::string& data_dir) {
    LoadedData d;
    d.train = cw::parse_table(join_path(data_dir, cfg.dataset.train_path), cfg.dataset.format,
                              cfg.dataset.missing_token, cfg.dataset.label_column,
                              join_path(data_dir, cfg.dataset.labels_path));
    d.test = cw::parse_table(join_path(data_dir, cfg.dataset.test_path), cfg.dataset.format,
                             cfg.dataset.missing_token, cfg.dataset.label_column);
    d.train = stratified_subsample(d.train, cfg.dataset.subsample_train, cfg.pipeline.seed);
    d.test = stratified_subsample(d.test, cfg.dataset.subsample_test, cfg.pipeline.seed + 1);
    return d;
}

void write_preprocess_outputs(const cw::PreprocessResult& res, const cw::RunConfig& cfg,
                              const std::string& out_dir) {
    fs::create_directories(out_dir);
    cw::write_csv(res.train, (fs::path(out_dir) / "train.csv").string());
    cw::write_csv(res.test, (fs::path(out_dir) / "test.csv").string());
    nlohmann::json prov = res.provenance.to_json();
    prov["run_config"] = cfg.to_json();
    write_text((fs::path(out_dir) / "provenance.json").string(), prov.dump(2) + "\n");
    write_text((fs::path(out_dir) / "impute_record.json").string(),
               res.provenance.impute_record.dump(2) + "\n");
    write_text((fs::path(out_dir) / "resample_report.json").string(),
               res.resample_report.to_json().dump(2) + "\n");
}

int run_preprocess_dir(const cw::RunConfig& cfg, const std::string& data_dir,
                       const std::string& out_dir, std::int64_t fold) {
    if (cfg.dataset.kfold > 0) {
        cw::DatasetTable full = cw::parse_table(
            join_path(data_dir, cfg.dataset.train_path), cfg.dataset.format,
            cfg.dataset.missing_token, cfg.dataset.label_column,
            join_path(data_dir, cfg.dataset.labels_path));
        cw::SplitPlan plan = cw::stratified_kfold(
            full, cfg.dataset.kfold, cw::RngStream(cfg.pipeline.seed, cw::Stream::split),
            cfg.pipeline.seed);
        for (std::int64_t f = 0; f < cfg.dataset.kfold; ++f) {
            if (fold >= 0 && f != fold) continue;
            auto train_idx = cw::kfold_train_indices(plan, f, full.rows());
            cw::PreprocessResult res = cw::run_preprocess(
                full.subset(train_idx), full.subset(plan.folds[static_cast<std::size_t>(f)]),
                cfg.pipeline);
            const std::string fold_dir = (fs::path(out_dir) / ("fold" + std::to_string(f))).string();
            write_preprocess_outputs(res, cfg, fold_dir);
            std::cout << "fold " << f << ": train " << res.train.rows() << "x" << res.train.cols()
                      << ", test " << res.test.rows() << "x" << res.test.cols() << "\n";
        }
        return 0;
    }
    LoadedData d = load_holdout_dataset(cfg, data_dir);
    cw::PreprocessResult res = cw::run_preprocess(d.train, d.test, cfg.pipeline);
    write_preprocess_outputs(res, cfg, out_dir);
    auto cc = cw::class_counts(res.train);
    std::cout << "processed train " << res.train.rows() << "x" << res.train.cols() << " (neg "
              << cc.negatives << ", pos " << cc.positives << "), test " << res.test.rows() << "x"
              << res.test.cols() << "\n";
    return 0;
}

cw::DatasetTable load_processed(const std::string& dir, const std::string& name) {
    return cw::parse_table((fs::path(dir) / name).string(), cw::TableFormat::generic_csv, "na",
                           "class");
}

int run_train_dir(cw::RunConfig cfg, const std::string& processed_dir,
                  const std::string& out_dir) {
    cw::DatasetTable train_table = load_processed(processed_dir, "train.csv");
    if (cfg.model.input_dim != train_table.cols()) {
        std::cout << "note: model input_dim " << cfg.model.input_dim << " -> "
                  << train_table.cols() << " (processed data width)\n";
        cfg.model.input_dim = train_table.cols();
    }
    fs::create_directories(out_dir);
    for (std::uint64_t seed : cfg.seeds) {
        cw::TrainResult result = cw::train(train_table, cfg.model, cfg.loss, cfg.train, seed);
        nlohmann::json meta = {{"seed", seed}, {"run_config", cfg.to_json()}};
        const std::string ck_path =
            (fs::path(out_dir) / ("checkpoint_seed" + std::to_string(seed) + ".cwcp")).string();
        cw::save_checkpoint(result.best, cfg.model, meta, ck_path);
        nlohmann::json hist = result.history_json();
        hist["seed"] = seed;
        hist["run_config"] = cfg.to_json();
        write_text((fs::path(out_dir) / ("history_seed" + std::to_string(seed) + ".json")).string(),
                   hist.dump(2) + "\n");
        std::cout << "seed " << seed << ": best epoch " << result.best_epoch << ", best val cost "
                  << result.best_val_cost << " -> " << ck_path << "\n";
    }
    return 0;
}

// Per-seed reports plus the seed-average: confusion counts are averaged
// first, metrics derived from the averaged counts.
int run_evaluate(const cw::RunConfig& cfg, const std::vector<std::string>& checkpoints,
                 const std::string& processed_dir, const std::string& out_path) {
    cw::require(!checkpoints.empty(), "evaluate: no checkpoints given");
    cw::DatasetTable test_table = load_processed(processed_dir, "test.csv");
    std::vector<std::pair<std::string, cw::MetricReport>> rows;
    cw::ConfusionMatrix avg;
    nlohmann::json per_seed = nlohmann::json::array();
    std::vector<std::uint64_t> seed_list;
    for (const std::string& path : checkpoints) {
        cw::Checkpoint ck = cw::load_checkpoint(path);
        if (ck.config.input_dim != test_table.cols())
            throw cw::CheckpointError(path + ": checkpoint input_dim " +
                                      std::to_string(ck.config.input_dim) +
                                      " does not match processed data width " +
                                      std::to_string(test_table.cols()));
        std::vector<int> pred =
            cw::predict(ck.params, ck.config, test_table, cfg.train.threshold);
        cw::ConfusionMatrix cm = cw::confusion(test_table.labels, pred);
        avg.tp += cm.tp;
        avg.fp += cm.fp;
        avg.fn += cm.fn;
        avg.tn += cm.tn;
        const std::uint64_t seed = ck.metadata.value("seed", 0ull);
        seed_list.push_back(seed);
        cw::MetricReport r = cw::metric_suite(cm, cfg.train.cost);
        rows.emplace_back("seed" + std::to_string(seed), r);
        per_seed.push_back(cw::report_json(r, "seed" + std::to_string(seed)));
    }
    const double k = static_cast<double>(checkpoints.size());
    avg.tp /= k;
    avg.fp /= k;
    avg.fn /= k;
    avg.tn /= k;
    cw::MetricReport avg_report = cw::metric_suite(avg, cfg.train.cost);
    rows.emplace_back("seed_average", avg_report);

    nlohmann::json out;
    out["dataset"] = processed_dir;
    out["seeds"] = seed_list;
    out["threshold"] = cfg.train.threshold;
    out["cost_spec"] = {{"fp", cfg.train.cost.c_fp}, {"fn", cfg.train.cost.c_fn}};
    out["per_seed"] = per_seed;
    out["average"] = cw::report_json(avg_report, "seed_average");
    out["run_config"] = cfg.to_json();
    if (!out_path.empty()) {
        fs::create_directories(fs::path(out_path).parent_path().empty()
                                   ? "."
                                   : fs::path(out_path).parent_path().string());
        write_text(out_path, out.dump(2) + "\n");
    }
    std::cout << cw::render_report(rows, cw::ReportFormat::text_table);
    return 0;
}

int run_gradcheck(std::uint64_t seed, bool sweep) {
    auto cases = cw::gradcheck_primitives(seed);
    cw::GradCheckCase model_case = cw::gradcheck_full_model(cw::desk_gradcheck_config(), seed);
    cases.push_back(model_case);
    bool ok = true;
    const cw::GradCheckCase* worst = &cases.front();
    for (const auto& c : cases) {
        std::cout << (c.pass() ? "[ok]   " : "[FAIL] ") << c.name << ": max rel err " << c.error
                  << " (tolerance " << c.tolerance << ")\n";
        ok = ok && c.pass();
        if (c.error / c.tolerance > worst->error / worst->tolerance) worst = &c;
    }
    std::cout << "worst offender: " << worst->name << " at " << worst->error << "\n";
    if (sweep) {
        std::cout << "h sweep (full model):\n";
        for (double h : {1e-4, 1e-5, 1e-6}) {
            cw::GradCheckCase c = cw::gradcheck_full_model(cw::desk_gradcheck_config(), seed, 3, h);
            std::cout << "  h=" << h << ": " << c.error << "\n";
        }
    }
    return ok ? 0 : 1;
}

// Full chain with one component disabled; "full" runs the unmodified method.
int run_ablate(cw::RunConfig cfg, const std::string& variant, const std::string& data_dir,
               const std::string& out_dir) {
    if (variant == "no-eliminate")
        cfg.pipeline.eliminate = false;
    else if (variant == "no-oversample")
        cfg.pipeline.oversample = false;
    else if (variant == "no-undersample")
        cfg.pipeline.undersample = false;
    else if (variant == "no-focal")
        cfg.loss.kind = cw::LossKind::cross_entropy;
    else if (variant != "full")
        throw cw::ParseError("unknown ablation variant '" + variant + "'");

    const std::string run_dir = (fs::path(out_dir) / variant).string();
    int rc = run_preprocess_dir(cfg, data_dir, run_dir, -1);
    if (rc != 0) return rc;
    rc = run_train_dir(cfg, run_dir, run_dir);
    if (rc != 0) return rc;
    std::vector<std::string> checkpoints;
    for (std::uint64_t seed : cfg.seeds)
        checkpoints.push_back(
            (fs::path(run_dir) / ("checkpoint_seed" + std::to_string(seed) + ".cwcp")).string());
    rc = run_evaluate(cfg, checkpoints, run_dir, (fs::path(run_dir) / "report.json").string());
    if (rc != 0) return rc;
    nlohmann::json tag = {{"variant", variant}};
    write_text((fs::path(run_dir) / "variant.json").string(), tag.dump(2) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cost-sensitive failure prediction toolkit"};
    app.require_subcommand(1);

    CommonOpts pre_opts, train_opts, eval_opts, abl_opts;
    std::int64_t fold = -1;
    std::string processed_dir, eval_data_dir, eval_out;
    std::vector<std::string> checkpoints;
    std::string variant;
    std::uint64_t gc_seed = 7;
    bool gc_sweep = false;

    CLI::App* pre = app.add_subcommand("preprocess", "run the preprocessing workflow");
    add_common(pre, pre_opts);
    pre->add_option("--fold", fold, "process a single fold (kfold datasets)");

    CLI::App* tr = app.add_subcommand("train", "train one checkpoint per seed");
    add_common(tr, train_opts);
    tr->add_option("--data", processed_dir, "directory with processed train.csv")->required();

    CLI::App* ev = app.add_subcommand("evaluate", "evaluate checkpoints on processed test data");
    add_common(ev, eval_opts);
    ev->add_option("--data", eval_data_dir, "directory with processed test.csv")->required();
    ev->add_option("--checkpoints", checkpoints, "checkpoint files")->required()->delimiter(',');
    ev->add_option("--report", eval_out, "report JSON path");

    CLI::App* ab = app.add_subcommand("ablate", "full run with one component disabled");
    add_common(ab, abl_opts);
    ab->add_option("--variant", variant,
                   "full | no-eliminate | no-oversample | no-undersample | no-focal")
        ->required();

    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient suites");
    gc->add_option("--seed", gc_seed, "rng seed");
    gc->add_flag("--sweep", gc_sweep, "also sweep h over {1e-4,1e-5,1e-6}");

    try {
        app.parse(argc, argv);
        if (pre->parsed()) {
            cw::RunConfig cfg = resolve_config(pre_opts);
            return run_preprocess_dir(cfg, pre_opts.data_dir, pre_opts.out_dir, fold);
        }
        if (tr->parsed()) {
            cw::RunConfig cfg = resolve_config(train_opts);
            return run_train_dir(cfg, processed_dir, train_opts.out_dir);
        }
        if (ev->parsed()) {
            cw::RunConfig cfg = resolve_config(eval_opts);
            return run_evaluate(cfg, checkpoints, eval_data_dir, eval_out);
        }
        if (ab->parsed()) {
            cw::RunConfig cfg = resolve_config(abl_opts);
            return run_ablate(cfg, variant, abl_opts.data_dir, abl_opts.out_dir);
        }
        if (gc->parsed()) return run_gradcheck(gc_seed, gc_sweep);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const cw::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const cw::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const cw::CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const cw::ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const cw::TrainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
