#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cw/dataio.hpp"
#include "cw/metrics.hpp"
#include "cw/model.hpp"
#include "cw/pipeline.hpp"

namespace cw {

struct DatasetConfig {
    TableFormat format = TableFormat::generic_csv;
    std::string train_path;
    std::string test_path;    // unused for kfold datasets
    std::string labels_path;  // secom_pair only
    std::string missing_token = "na";
    std::string label_column = "class";
    std::int64_t kfold = 0;           // 0: train/test files; >0: stratified K folds of one table
    std::int64_t subsample_train = 0; // 0: keep all rows (stratified, split stream)
    std::int64_t subsample_test = 0;

    nlohmann::json to_json() const {
        const char* fmt = format == TableFormat::aps_csv      ? "aps_csv"
                          : format == TableFormat::secom_pair ? "secom_pair"
                                                              : "generic_csv";
        return {{"format", fmt},
                {"train_path", train_path},
                {"test_path", test_path},
                {"labels_path", labels_path},
                {"missing_token", missing_token},
                {"label_column", label_column},
                {"kfold", kfold},
                {"subsample_train", subsample_train},
                {"subsample_test", subsample_test}};
    }

    static DatasetConfig from_json(const nlohmann::json& j) {
        DatasetConfig c;
        const std::string fmt = j.value("format", "generic_csv");
        if (fmt == "aps_csv")
            c.format = TableFormat::aps_csv;
        else if (fmt == "secom_pair")
            c.format = TableFormat::secom_pair;
        else if (fmt == "generic_csv")
            c.format = TableFormat::generic_csv;
        else
            throw ParseError("dataset.format: unknown value '" + fmt + "'");
        c.train_path = j.value("train_path", c.train_path);
        c.test_path = j.value("test_path", c.test_path);
        c.labels_path = j.value("labels_path", c.labels_path);
        c.missing_token = j.value("missing_token", c.missing_token);
        c.label_column = j.value("label_column", c.label_column);
        c.kfold = j.value("kfold", c.kfold);
        c.subsample_train = j.value("subsample_train", c.subsample_train);
        c.subsample_test = j.value("subsample_test", c.subsample_test);
        return c;
    }
};

struct RunConfig {
    std::string preset;
    DatasetConfig dataset;
    PipelineConfig pipeline;
    TransformerConfig model;
    LossConfig loss;
    TrainParams train;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

    nlohmann::json to_json() const {
        return {{"preset", preset},
                {"dataset", dataset.to_json()},
                {"pipeline", pipeline.to_json()},
                {"model", model.to_json()},
                {"loss",
                 {{"kind", loss.kind == LossKind::focal ? "focal" : "cross_entropy"},
                  {"alpha", loss.alpha},
                  {"gamma", loss.gamma}}},
                {"train",
                 {{"learning_rate", train.learning_rate},
                  {"batch_size", train.batch_size},
                  {"max_epochs", train.max_epochs},
                  {"val_fraction", train.val_fraction},
                  {"threshold", train.threshold},
                  {"cost_fp", train.cost.c_fp},
                  {"cost_fn", train.cost.c_fn}}},
                {"seeds", seeds}};
    }

    // Explicit keys override whatever the preset set.
    void merge_json(const nlohmann::json& j) {
        if (j.contains("dataset")) {
            nlohmann::json base = dataset.to_json();
            base.update(j.at("dataset"));
            dataset = DatasetConfig::from_json(base);
        }
        if (j.contains("pipeline")) {
            nlohmann::json base = pipeline.to_json();
            base.update(j.at("pipeline"));
            pipeline = PipelineConfig::from_json(base);
        }
        if (j.contains("model")) {
            nlohmann::json base = model.to_json();
            base.update(j.at("model"));
            model = TransformerConfig::from_json(base);
        }
        if (j.contains("loss")) {
            const auto& l = j.at("loss");
            if (l.contains("kind")) {
                const std::string k = l.at("kind").get<std::string>();
                if (k == "focal")
                    loss.kind = LossKind::focal;
                else if (k == "cross_entropy")
                    loss.kind = LossKind::cross_entropy;
                else
                    throw ParseError("loss.kind: unknown value '" + k + "'");
            }
            loss.alpha = l.value("alpha", loss.alpha);
            loss.gamma = l.value("gamma", loss.gamma);
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            train.learning_rate = t.value("learning_rate", train.learning_rate);
            train.batch_size = t.value("batch_size", train.batch_size);
            train.max_epochs = t.value("max_epochs", train.max_epochs);
            train.val_fraction = t.value("val_fraction", train.val_fraction);
            train.threshold = t.value("threshold", train.threshold);
            train.cost.c_fp = t.value("cost_fp", train.cost.c_fp);
            train.cost.c_fn = t.value("cost_fn", train.cost.c_fn);
        }
        if (j.contains("seeds")) seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    }
};

// Named experiment bundles. aps_paper carries the published table values;
// the desk presets shrink the model and budgets to laptop scale.
inline RunConfig preset_config(const std::string& name) {
    RunConfig c;
    c.preset = name;
    if (name == "aps_paper" || name == "aps_desk") {
        c.dataset.format = TableFormat::aps_csv;
        c.dataset.train_path = "data/aps_failure_training_set.csv";
        c.dataset.test_path = "data/aps_failure_test_set.csv";
        c.pipeline = PipelineConfig{};
        c.pipeline.impute_rounds = 100;
        c.model = TransformerConfig{};  // 142 / 4 blocks / 4 heads / 256 / 4 filters
        c.model.input_dim = 142;
        c.loss = LossConfig{};          // focal, alpha 0.95, gamma 1.5
        c.train.learning_rate = 0.0005;
        c.train.batch_size = 72;
        c.train.max_epochs = 8000;
        c.train.val_fraction = 0.10;
        c.seeds = {1, 2, 3, 4, 5};
        if (name == "aps_desk") {
            c.pipeline.impute_rounds = 5;
            c.model.blocks = 1;
            c.model.heads = 2;
            c.model.head_size = 16;
            c.model.mlp1 = 32;
            c.model.mlp2 = 16;
            c.train.max_epochs = 20;
            c.dataset.subsample_train = 6000;
            c.dataset.subsample_test = 4000;
            c.seeds = {1, 2, 3};
        }
    } else if (name == "secom_paper" || name == "secom_desk") {
        c.dataset.format = TableFormat::secom_pair;
        c.dataset.train_path = "data/secom.data";
        c.dataset.labels_path = "data/secom_labels.data";
        c.dataset.kfold = 8;
        c.pipeline = PipelineConfig{};
        c.pipeline.impute_rounds = 100;
        c.model.input_dim = 538;
        c.model.blocks = 1;
        c.model.heads = 1;
        c.model.head_size = 64;
        c.model.ff_filters = 4;
        c.model.mlp1 = 2;
        c.model.mlp2 = 64;
        c.loss = LossConfig{};
        c.train.learning_rate = 0.0005;
        c.train.batch_size = 72;
        c.train.max_epochs = 8000;
        c.train.val_fraction = 0.10;
        c.seeds = {1, 2, 3, 4, 5};
        if (name == "secom_desk") {
            c.pipeline.impute_rounds = 5;
            c.train.max_epochs = 50;
            c.seeds = {1, 2, 3};
        }
    } else {
        throw ParseError("unknown preset '" + name +
                         "' (expected aps_paper, aps_desk, secom_paper, secom_desk)");
    }
    return c;
}

inline RunConfig load_run_config(const std::string& preset, const std::string& config_path) {
    RunConfig c = preset.empty() ? RunConfig{} : preset_config(preset);
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw IoError("cannot open config " + config_path);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(config_path + ": " + e.what());
        }
        if (c.preset.empty() && j.contains("preset")) {
            c = preset_config(j.at("preset").get<std::string>());
        }
        c.merge_json(j);
    }
    return c;
}

}  // namespace cw
