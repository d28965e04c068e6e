#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "cw/dataio.hpp"
#include "cw/graph.hpp"
#include "cw/metrics.hpp"
#include "cw/optim.hpp"
#include "cw/rng.hpp"
#include "cw/tensor.hpp"

namespace cw {

struct TransformerConfig {
    std::int64_t input_dim = 142;   // D: features, read as a length-D sequence of 1-channel tokens
    std::int64_t blocks = 4;        // N
    std::int64_t heads = 4;         // H
    std::int64_t head_size = 256;   // d_k
    std::int64_t ff_filters = 4;    // F
    double encoder_dropout = 0.25;
    std::int64_t mlp1 = 128;
    std::int64_t mlp2 = 64;
    double mlp_dropout = 0.4;
    double layer_norm_eps = 1e-6;

    void validate() const {
        require(input_dim > 0 && blocks > 0 && heads > 0 && head_size > 0 && ff_filters > 0 &&
                    mlp1 > 0 && mlp2 > 0,
                "TransformerConfig: all sizes must be positive");
        require(encoder_dropout >= 0.0 && encoder_dropout < 1.0 && mlp_dropout >= 0.0 &&
                    mlp_dropout < 1.0,
                "TransformerConfig: dropouts must lie in [0,1)");
        require(layer_norm_eps > 0.0, "TransformerConfig: layer_norm_eps must be positive");
    }

    nlohmann::json to_json() const {
        return {{"input_dim", input_dim},   {"blocks", blocks},
                {"heads", heads},           {"head_size", head_size},
                {"ff_filters", ff_filters}, {"encoder_dropout", encoder_dropout},
                {"mlp1", mlp1},             {"mlp2", mlp2},
                {"mlp_dropout", mlp_dropout}, {"layer_norm_eps", layer_norm_eps}};
    }

    static TransformerConfig from_json(const nlohmann::json& j) {
        TransformerConfig c;
        c.input_dim = j.value("input_dim", c.input_dim);
        c.blocks = j.value("blocks", c.blocks);
        c.heads = j.value("heads", c.heads);
        c.head_size = j.value("head_size", c.head_size);
        c.ff_filters = j.value("ff_filters", c.ff_filters);
        c.encoder_dropout = j.value("encoder_dropout", c.encoder_dropout);
        c.mlp1 = j.value("mlp1", c.mlp1);
        c.mlp2 = j.value("mlp2", c.mlp2);
        c.mlp_dropout = j.value("mlp_dropout", c.mlp_dropout);
        c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
        return c;
    }
};

enum class LossKind { focal, cross_entropy };

struct LossConfig {
    LossKind kind = LossKind::focal;
    double alpha = 0.95;
    double gamma = 1.5;

    void validate() const {
        require(alpha > 0.0 && alpha < 1.0, "LossConfig: alpha must lie in (0,1)");
        require(gamma >= 0.0, "LossConfig: gamma must be >= 0");
    }
};

// Scalar loss values on plain vectors, matching the graph primitives exactly
// (same clamping). Used by reporting and worked-example tests.
inline double focal_loss_value(const std::vector<double>& p, const std::vector<double>& y,
                               double alpha, double gamma) {
    require(p.size() == y.size() && !p.empty(), "focal_loss: size mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pc = Graph::clamp_prob(p[i]);
        sum += -y[i] * alpha * std::pow(1.0 - pc, gamma) * std::log(pc) -
               (1.0 - y[i]) * (1.0 - alpha) * std::pow(pc, gamma) * std::log(1.0 - pc);
    }
    return sum / static_cast<double>(p.size());
}

inline double cross_entropy_loss_value(const std::vector<double>& p,
                                       const std::vector<double>& y) {
    require(p.size() == y.size() && !p.empty(), "cross_entropy_loss: size mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pc = Graph::clamp_prob(p[i]);
        sum += -y[i] * std::log(pc) - (1.0 - y[i]) * std::log(1.0 - pc);
    }
    return sum / static_cast<double>(p.size());
}

// All learnable tensors in a fixed order; the order is the checkpoint layout.
struct TransformerParams {
    std::vector<std::pair<std::string, Tensor>> tensors;

    static TransformerParams init(const TransformerConfig& cfg, RngStream rng) {
        cfg.validate();
        TransformerParams p;
        auto weight = [&](const std::string& name, Shape shape) {
            p.tensors.emplace_back(name, glorot_uniform_init(shape, rng));
        };
        auto zeros = [&](const std::string& name, Shape shape) {
            p.tensors.emplace_back(name, Tensor::zeros(std::move(shape)));
        };
        auto ones = [&](const std::string& name, Shape shape) {
            p.tensors.emplace_back(name, Tensor::full(std::move(shape), 1.0));
        };
        for (std::int64_t b = 0; b < cfg.blocks; ++b) {
            const std::string pre = "enc" + std::to_string(b) + ".";
            ones(pre + "ln1.gain", {1});
            zeros(pre + "ln1.shift", {1});
            for (std::int64_t h = 0; h < cfg.heads; ++h) {
                const std::string hp = pre + "h" + std::to_string(h) + ".";
                weight(hp + "wq", {1, cfg.head_size});
                weight(hp + "wk", {1, cfg.head_size});
                weight(hp + "wv", {1, cfg.head_size});
            }
            weight(pre + "attn.wo", {cfg.heads * cfg.head_size, 1});
            ones(pre + "ln2.gain", {1});
            zeros(pre + "ln2.shift", {1});
            weight(pre + "ff1.w", {1, cfg.ff_filters});
            zeros(pre + "ff1.b", {cfg.ff_filters});
            weight(pre + "ff2.w", {cfg.ff_filters, 1});
            zeros(pre + "ff2.b", {1});
        }
        weight("head.fc1.w", {cfg.input_dim, cfg.mlp1});
        zeros("head.fc1.b", {cfg.mlp1});
        weight("head.fc2.w", {cfg.mlp1, cfg.mlp2});
        zeros("head.fc2.b", {cfg.mlp2});
        weight("head.out.w", {cfg.mlp2, 1});
        zeros("head.out.b", {1});
        return p;
    }

    Tensor& find(const std::string& name) {
        for (auto& [n, t] : tensors)
            if (n == name) return t;
        throw ShapeError("TransformerParams: no tensor named " + name);
    }

    // Round parameters through 32-bit storage precision.
    TransformerParams quantized_f32() const {
        TransformerParams out = *this;
        for (auto& [name, t] : out.tensors)
            for (std::int64_t i = 0; i < t.numel(); ++i)
                t[i] = static_cast<double>(static_cast<float>(t[i]));
        return out;
    }
};

struct ModelForward {
    Graph graph;
    NodeId batch = -1;
    NodeId prob = -1;                // [B]
    std::vector<NodeId> param_ids;   // aligned with TransformerParams order
};

// Fig-style wiring: the D tabular features form a length-D sequence of
// 1-channel tokens; each pre-norm block runs multi-head self-attention over
// the sequence and a pointwise (kernel-1) two-layer feed-forward, both with
// residual additions; channel-axis global average pooling then feeds the
// sigmoid MLP head.
inline ModelForward model_forward(const TransformerParams& params, const TransformerConfig& cfg,
                                  const Tensor& batch, RngStream& dropout_rng, bool training) {
    cfg.validate();
    require(batch.rank() == 2, "model_forward: batch must be [rows, features], got " +
                                   shape_str(batch.shape()));
    require(batch.dim(1) == cfg.input_dim,
            "model_forward: batch width " + std::to_string(batch.dim(1)) +
                " does not match configured input_dim " + std::to_string(cfg.input_dim));
    require(batch.all_finite(), "model_forward: batch contains non-finite values");
    const std::int64_t rows = batch.dim(0);

    ModelForward mf;
    Graph& g = mf.graph;
    mf.batch = g.input(batch, "batch");
    std::vector<NodeId> pid;
    pid.reserve(params.tensors.size());
    for (const auto& [name, t] : params.tensors) pid.push_back(g.param(t, name));
    mf.param_ids = pid;
    // parameters are consumed strictly in their init order
    std::size_t next = 0;
    auto take = [&] { return pid[next++]; };

    NodeId x = g.reshape(mf.batch, {rows, cfg.input_dim, 1});
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_size));
    for (std::int64_t b = 0; b < cfg.blocks; ++b) {
        const NodeId ln1_g = take();
        const NodeId ln1_s = take();
        NodeId u = g.layer_norm(x, ln1_g, ln1_s, cfg.layer_norm_eps);
        std::vector<NodeId> heads;
        for (std::int64_t h = 0; h < cfg.heads; ++h) {
            const NodeId wq = take();
            const NodeId wk = take();
            const NodeId wv = take();
            NodeId q = g.matmul(u, wq);
            NodeId kk = g.matmul(u, wk);
            NodeId v = g.matmul(u, wv);
            NodeId scores = g.scale(g.bmm_nt(q, kk), att_scale);
            NodeId attn = g.softmax_last(scores);
            heads.push_back(g.bmm_nn(attn, v));
        }
        NodeId ctx = heads.size() == 1 ? heads[0] : g.concat_last(heads);
        NodeId proj = g.matmul(ctx, take());
        proj = g.dropout(proj, cfg.encoder_dropout, dropout_rng, training);
        NodeId r = g.add(x, proj);
        const NodeId ln2_g = take();
        const NodeId ln2_s = take();
        NodeId z = g.layer_norm(r, ln2_g, ln2_s, cfg.layer_norm_eps);
        const NodeId ff1_w = take();
        const NodeId ff1_b = take();
        NodeId f = g.affine(z, ff1_w, ff1_b);
        f = g.relu(f);
        f = g.dropout(f, cfg.encoder_dropout, dropout_rng, training);
        const NodeId ff2_w = take();
        const NodeId ff2_b = take();
        f = g.affine(f, ff2_w, ff2_b);
        x = g.add(r, f);
        if (!g.value(x).all_finite())
            throw ShapeError("model_forward: non-finite activations in encoder block " +
                             std::to_string(b));
    }

    NodeId pooled = g.mean_axis(x, 2);  // [rows, D]: channel-axis average pooling
    const NodeId fc1_w = take();
    const NodeId fc1_b = take();
    NodeId h1 = g.affine(pooled, fc1_w, fc1_b);
    h1 = g.dropout(g.relu(h1), cfg.mlp_dropout, dropout_rng, training);
    const NodeId fc2_w = take();
    const NodeId fc2_b = take();
    NodeId h2 = g.affine(h1, fc2_w, fc2_b);
    h2 = g.dropout(g.relu(h2), cfg.mlp_dropout, dropout_rng, training);
    const NodeId out_w = take();
    const NodeId out_b = take();
    NodeId logit = g.affine(h2, out_w, out_b);
    mf.prob = g.mean_axis(g.sigmoid(logit), 1);  // [rows]
    require(next == pid.size(), "model_forward: parameter walk out of sync");
    return mf;
}

inline std::vector<double> predict_probabilities(const TransformerParams& params,
                                                 const TransformerConfig& cfg,
                                                 const DatasetTable& table,
                                                 std::int64_t eval_batch = 256) {
    require(table.cols() == cfg.input_dim,
            "predict: table width " + std::to_string(table.cols()) +
                " does not match model input_dim " + std::to_string(cfg.input_dim));
    RngStream unused(0, Stream::dropout);
    std::vector<double> probs;
    probs.reserve(static_cast<std::size_t>(table.rows()));
    for (std::int64_t start = 0; start < table.rows(); start += eval_batch) {
        const std::int64_t stop = std::min(table.rows(), start + eval_batch);
        Tensor batch({stop - start, table.cols()});
        std::copy_n(table.features.data() + start * table.cols(),
                    (stop - start) * table.cols(), batch.data());
        ModelForward mf = model_forward(params, cfg, batch, unused, /*training=*/false);
        const Tensor& p = mf.graph.value(mf.prob);
        probs.insert(probs.end(), p.data(), p.data() + p.numel());
    }
    return probs;
}

// label = 1 iff probability >= threshold; dropout disabled
inline std::vector<int> predict(const TransformerParams& params, const TransformerConfig& cfg,
                                const DatasetTable& table, double threshold = 0.5) {
    std::vector<int> labels;
    for (double p : predict_probabilities(params, cfg, table))
        labels.push_back(p >= threshold ? 1 : 0);
    return labels;
}

struct TrainParams {
    double learning_rate = 0.0005;
    std::int64_t batch_size = 72;
    std::int64_t max_epochs = 100;
    double val_fraction = 0.10;
    double threshold = 0.5;
    CostSpec cost;
};

struct TrainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EpochStats {
    double train_loss = 0.0;
    double val_cost = 0.0;
    ConfusionMatrix val_cm;
};

struct TrainResult {
    TransformerParams best;
    double best_val_cost = std::numeric_limits<double>::infinity();
    std::int64_t best_epoch = -1;
    std::vector<EpochStats> history;

    nlohmann::json history_json() const {
        nlohmann::json epochs = nlohmann::json::array();
        for (std::size_t e = 0; e < history.size(); ++e) {
            const auto& s = history[e];
            epochs.push_back({{"epoch", e},
                              {"train_loss", s.train_loss},
                              {"val_cost", s.val_cost},
                              {"val_confusion",
                               {{"tp", s.val_cm.tp},
                                {"fp", s.val_cm.fp},
                                {"fn", s.val_cm.fn},
                                {"tn", s.val_cm.tn}}}});
        }
        return {{"best_epoch", best_epoch}, {"best_val_cost", best_val_cost}, {"epochs", epochs}};
    }
};

// One epoch = shuffled minibatch Adam over the training carve-out; after each
// epoch the validation total cost (threshold 0.5 unless overridden) decides
// whether to snapshot. Strict improvement only, so ties keep the earlier
// snapshot and the best-cost sequence is nonincreasing.
inline TrainResult train(const DatasetTable& table, const TransformerConfig& cfg,
                         const LossConfig& loss, const TrainParams& tp, std::uint64_t seed) {
    cfg.validate();
    loss.validate();
    require(table.cols() == cfg.input_dim,
            "train: table width " + std::to_string(table.cols()) +
                " does not match configured input_dim " + std::to_string(cfg.input_dim));
    for (double v : table.features)
        require(!DatasetTable::missing(v), "train: table must be fully observed");

    TrainResult result;
    result.best = TransformerParams::init(cfg, RngStream(seed, Stream::init));
    if (tp.max_epochs <= 0) return result;

    auto [train_idx, val_idx] =
        stratified_holdout(table, tp.val_fraction, RngStream(seed, Stream::split));
    DatasetTable train_set = table.subset(train_idx);
    DatasetTable val_set = table.subset(val_idx);
    std::vector<int> val_labels = val_set.labels;

    TransformerParams params = result.best;
    AdamState adam(tp.learning_rate);
    RngStream dropout_rng(seed, Stream::dropout);
    RngStream shuffle_rng(seed, Stream::shuffle);

    std::vector<std::int64_t> order(static_cast<std::size_t>(train_set.rows()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
    const std::int64_t d = train_set.cols();

    for (std::int64_t epoch = 0; epoch < tp.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::int64_t seen = 0;
        for (std::int64_t start = 0; start < train_set.rows(); start += tp.batch_size) {
            const std::int64_t stop = std::min(train_set.rows(), start + tp.batch_size);
            const std::int64_t b = stop - start;
            Tensor batch({b, d});
            std::vector<double> ys(static_cast<std::size_t>(b));
            for (std::int64_t i = 0; i < b; ++i) {
                const std::int64_t row = order[static_cast<std::size_t>(start + i)];
                std::copy_n(train_set.features.data() + row * d, d, batch.data() + i * d);
                ys[static_cast<std::size_t>(i)] =
                    static_cast<double>(train_set.labels[static_cast<std::size_t>(row)]);
            }
            ModelForward mf = model_forward(params, cfg, batch, dropout_rng, /*training=*/true);
            Graph& g = mf.graph;
            const NodeId loss_node =
                loss.kind == LossKind::focal
                    ? g.focal_loss(mf.prob, ys, loss.alpha, loss.gamma)
                    : g.cross_entropy_loss(mf.prob, ys);
            const double loss_value = g.value(loss_node).item();
            if (!std::isfinite(loss_value))
                throw TrainError("train: non-finite loss at epoch " + std::to_string(epoch));
            g.backward(loss_node);
            std::vector<Tensor*> prefs;
            std::vector<const Tensor*> grefs;
            prefs.reserve(params.tensors.size());
            for (std::size_t t = 0; t < params.tensors.size(); ++t) {
                prefs.push_back(&params.tensors[t].second);
                grefs.push_back(&g.node(mf.param_ids[t]).grad);
            }
            adam_step(prefs, grefs, adam);
            loss_sum += loss_value * static_cast<double>(b);
            seen += b;
        }

        EpochStats stats;
        stats.train_loss = loss_sum / static_cast<double>(seen);
        std::vector<int> val_pred;
        for (double p : predict_probabilities(params, cfg, val_set))
            val_pred.push_back(p >= tp.threshold ? 1 : 0);
        stats.val_cm = confusion(val_labels, val_pred);
        stats.val_cost = total_cost(stats.val_cm, tp.cost).total;
        if (stats.val_cost < result.best_val_cost) {
            result.best_val_cost = stats.val_cost;
            result.best = params;
            result.best_epoch = epoch;
        }
        result.history.push_back(stats);
    }
    return result;
}

// ---- checkpoint file -----------------------------------------------------
// layout: 5-byte magic "CWCP1", little-endian uint64 header length, JSON
// header {config, metadata, tensors: [{name, shape, offset}]}, then the
// little-endian IEEE-754 32-bit payload in tensor-table order.

constexpr char kCheckpointMagic[5] = {'C', 'W', 'C', 'P', '1'};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {
inline void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f32_le(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}
inline std::uint64_t get_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}
inline float get_f32_le(const unsigned char* p) {
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}
}  // namespace detail

inline void save_checkpoint(const TransformerParams& params, const TransformerConfig& cfg,
                            const nlohmann::json& metadata, const std::string& path) {
    nlohmann::json header;
    header["config"] = cfg.to_json();
    header["metadata"] = metadata;
    nlohmann::json table = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : params.tensors) {
        table.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(t.numel()) * 4;
    }
    header["tensors"] = table;
    const std::string hj = header.dump();

    std::string out;
    out.append(kCheckpointMagic, 5);
    detail::put_u64_le(out, hj.size());
    out += hj;
    for (const auto& [name, t] : params.tensors)
        for (std::int64_t i = 0; i < t.numel(); ++i)
            detail::put_f32_le(out, static_cast<float>(t[i]));

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

struct Checkpoint {
    TransformerParams params;
    TransformerConfig config;
    nlohmann::json metadata;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 13 || std::memcmp(bytes.data(), kCheckpointMagic, 5) != 0)
        throw CheckpointError(path + ": checkpoint magic/version mismatch");
    const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint64_t hlen = detail::get_u64_le(u + 5);
    if (13 + hlen > bytes.size()) throw CheckpointError(path + ": truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(13, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(path + ": malformed header: " + e.what());
    }

    Checkpoint ck;
    ck.config = TransformerConfig::from_json(header.at("config"));
    ck.metadata = header.value("metadata", nlohmann::json::object());
    const std::size_t payload_start = 13 + hlen;
    const std::size_t payload_size = bytes.size() - payload_start;
    std::uint64_t expected = 0;
    for (const auto& entry : header.at("tensors")) {
        Shape shape = entry.at("shape").get<Shape>();
        expected += static_cast<std::uint64_t>(shape_numel(shape)) * 4;
    }
    if (expected != payload_size)
        throw CheckpointError(path + ": payload length " + std::to_string(payload_size) +
                              " inconsistent with tensor table (" + std::to_string(expected) +
                              " expected)");
    for (const auto& entry : header.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        Shape shape = entry.at("shape").get<Shape>();
        const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
        const std::int64_t count = shape_numel(shape);
        if (offset + static_cast<std::uint64_t>(count) * 4 > payload_size)
            throw CheckpointError(path + ": tensor '" + name + "' exceeds payload");
        Tensor t(shape);
        for (std::int64_t i = 0; i < count; ++i)
            t[i] = static_cast<double>(
                detail::get_f32_le(u + payload_start + offset + static_cast<std::uint64_t>(i) * 4));
        ck.params.tensors.emplace_back(name, std::move(t));
    }
    return ck;
}

}  // namespace cw
