#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cw/graph.hpp"
#include "cw/model.hpp"
#include "cw/optim.hpp"
#include "cw/rng.hpp"

namespace cw {

struct GradCheckCase {
    std::string name;
    double error = 0.0;
    double tolerance = 0.0;
    bool pass() const { return error <= tolerance; }
};

namespace detail {

inline Tensor rand_tensor(Shape shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = lo + (hi - lo) * rng.uniform();
    return t;
}

// Random values bounded away from 0 so relu kinks do not sit inside the
// finite-difference stencil.
inline Tensor rand_tensor_away_from_zero(Shape shape, RngStream& rng) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        const double mag = 0.2 + 1.3 * rng.uniform();
        t[i] = rng.uniform() < 0.5 ? -mag : mag;
    }
    return t;
}

// loss = sum(out * random_weights): a weighted sum catches per-coordinate
// backward mistakes that a plain sum would average away.
inline NodeId weighted_sum(Graph& g, NodeId out, RngStream& rng) {
    Tensor w = rand_tensor(g.value(out).shape(), rng, 0.5, 1.5);
    return g.sum_all(g.mul(out, g.input(std::move(w), "loss_weights")));
}

// Worst finite-difference error over the listed parameters.
inline double check_params(Graph& g, NodeId loss, const std::vector<NodeId>& ps, double h) {
    g.backward(loss);
    double worst = 0.0;
    for (NodeId p : ps) worst = std::max(worst, g.finite_difference_check(loss, p, h));
    return worst;
}

}  // namespace detail

// One finite-difference case per primitive, at small random shapes.
inline std::vector<GradCheckCase> gradcheck_primitives(std::uint64_t seed, double h = 1e-6,
                                                       double tol = 1e-5) {
    std::vector<GradCheckCase> cases;
    RngStream rng(seed, Stream::init);
    auto record = [&](const std::string& name, double err) {
        cases.push_back({name, err, tol});
    };

    {
        Graph g;
        NodeId x = g.param(detail::rand_tensor({3, 4}, rng), "x");
        NodeId w = g.param(detail::rand_tensor({4, 2}, rng), "w");
        NodeId b = g.param(detail::rand_tensor({2}, rng), "b");
        NodeId loss = detail::weighted_sum(g, g.affine(x, w, b), rng);
        record("affine_map", detail::check_params(g, loss, {x, w, b}, h));
    }
    {
        Graph g;
        NodeId x = g.param(detail::rand_tensor({3, 4}, rng), "x");
        NodeId w = g.param(detail::rand_tensor({4, 2}, rng), "w");
        NodeId loss = detail::weighted_sum(g, g.matmul(x, w), rng);
        record("matmul", detail::check_params(g, loss, {x, w}, h));
    }
    {
        Graph g;
        NodeId a = g.param(detail::rand_tensor({2, 3, 4}, rng), "a");
        NodeId b = g.param(detail::rand_tensor({2, 4, 2}, rng), "b");
        NodeId loss = detail::weighted_sum(g, g.bmm_nn(a, b), rng);
        record("bmm_nn", detail::check_params(g, loss, {a, b}, h));
    }
    {
        Graph g;
        NodeId a = g.param(detail::rand_tensor({2, 3, 4}, rng), "a");
        NodeId b = g.param(detail::rand_tensor({2, 5, 4}, rng), "b");
        NodeId loss = detail::weighted_sum(g, g.bmm_nt(a, b), rng);
        record("bmm_nt", detail::check_params(g, loss, {a, b}, h));
    }
    {
        Graph g;
        NodeId a = g.param(detail::rand_tensor({2, 3}, rng), "a");
        NodeId b = g.param(detail::rand_tensor({2, 3}, rng), "b");
        NodeId loss = detail::weighted_sum(g, g.mul(g.add(a, b), b), rng);
        record("add_mul", detail::check_params(g, loss, {a, b}, h));
    }
    {
        Graph g;
        NodeId a = g.param(detail::rand_tensor({4}, rng), "a");
        NodeId loss = detail::weighted_sum(g, g.shift(g.scale(a, 1.7), -0.3), rng);
        record("scale_shift", detail::check_params(g, loss, {a}, h));
    }
    {
        Graph g;
        NodeId x = g.param(detail::rand_tensor_away_from_zero({3, 4}, rng), "x");
        NodeId loss = detail::weighted_sum(g, g.relu(x), rng);
        record("relu", detail::check_params(g, loss, {x}, h));
    }
    {
        Graph g;
        NodeId x = g.param(detail::rand_tensor({3, 4}, rng), "x");
        NodeId loss = detail::weighted_sum(g, g.sigmoid(x), rng);
        record("sigmoid", detail::check_params(g, loss, {x}, h));
    }
    {
        Graph g;
        NodeId x = g.param(detail::rand_tensor({2, 5}, rng), "x");
        NodeId loss = detail::weighted_sum(g, g.softmax_last(x), rng);
        record("softmax_last_axis", detail::check_params(g, loss, {x}, h));
    }
    {
        Graph g;
        NodeId x = g.param(detail::rand_tensor({2, 5}, rng), "x");
        NodeId gain = g.param(detail::rand_tensor({5}, rng, 0.5, 1.5), "gain");
        NodeId shift = g.param(detail::rand_tensor({5}, rng), "shift");
        NodeId loss = detail::weighted_sum(g, g.layer_norm(x, gain, shift, 1e-6), rng);
        record("layer_norm", detail::check_params(g, loss, {x, gain, shift}, h));
    }
    {
        Graph g;
        RngStream drop(seed, Stream::dropout);
        NodeId x = g.param(detail::rand_tensor({4, 5}, rng), "x");
        NodeId loss = detail::weighted_sum(g, g.dropout(x, 0.3, drop, true), rng);
        record("dropout", detail::check_params(g, loss, {x}, h));
    }
    {
        Graph g;
        NodeId x = g.param(detail::rand_tensor({2, 3, 2}, rng), "x");
        NodeId loss = detail::weighted_sum(g, g.mean_axis(x, 1), rng);
        record("reduce_mean_axis", detail::check_params(g, loss, {x}, h));
    }
    {
        Graph g;
        NodeId a = g.param(detail::rand_tensor({2, 3}, rng), "a");
        NodeId b = g.param(detail::rand_tensor({2, 2}, rng), "b");
        NodeId loss = detail::weighted_sum(g, g.concat_last({a, b}), rng);
        record("concat_last", detail::check_params(g, loss, {a, b}, h));
    }
    {
        Graph g;
        NodeId x = g.param(detail::rand_tensor({2, 6}, rng), "x");
        NodeId loss = detail::weighted_sum(g, g.reshape(x, {3, 4}), rng);
        record("reshape", detail::check_params(g, loss, {x}, h));
    }
    {
        Graph g;
        NodeId z = g.param(detail::rand_tensor({6}, rng), "z");
        NodeId p = g.sigmoid(z);
        std::vector<double> y;
        for (int i = 0; i < 6; ++i) y.push_back(rng.uniform() < 0.5 ? 0.0 : 1.0);
        NodeId loss = g.focal_loss(p, y, 0.95, 1.5);
        record("focal_loss", detail::check_params(g, loss, {z}, h));
    }
    {
        Graph g;
        NodeId z = g.param(detail::rand_tensor({6}, rng), "z");
        NodeId p = g.sigmoid(z);
        std::vector<double> y;
        for (int i = 0; i < 6; ++i) y.push_back(rng.uniform() < 0.5 ? 0.0 : 1.0);
        NodeId loss = g.cross_entropy_loss(p, y);
        record("cross_entropy_loss", detail::check_params(g, loss, {z}, h));
    }
    return cases;
}

// Every parameter of the full model against central differences, dropout off.
// Parameters are jittered off the init point: zero-initialized biases and
// layer-norm shifts would otherwise park relu pre-activations exactly on the
// kink, where a central difference does not estimate the subgradient.
inline GradCheckCase gradcheck_full_model(const TransformerConfig& cfg, std::uint64_t seed,
                                          std::int64_t batch_rows = 3, double h = 1e-5,
                                          double tol = 1e-4) {
    TransformerParams params = TransformerParams::init(cfg, RngStream(seed, Stream::init));
    RngStream jitter(seed + 17, Stream::init);
    for (auto& [name, t] : params.tensors)
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] += 0.4 * jitter.uniform() - 0.2;
    RngStream data_rng(seed + 1, Stream::init);
    Tensor batch = detail::rand_tensor({batch_rows, cfg.input_dim}, data_rng, 0.0, 1.0);
    std::vector<double> y;
    for (std::int64_t i = 0; i < batch_rows; ++i)
        y.push_back(data_rng.uniform() < 0.5 ? 0.0 : 1.0);

    RngStream drop(seed, Stream::dropout);
    ModelForward mf = model_forward(params, cfg, batch, drop, /*training=*/false);
    NodeId loss = mf.graph.focal_loss(mf.prob, y, 0.95, 1.5);
    mf.graph.backward(loss);
    double worst = 0.0;
    std::string worst_name = "model";
    for (std::size_t t = 0; t < params.tensors.size(); ++t) {
        const double err = mf.graph.finite_difference_check(loss, mf.param_ids[t], h);
        if (err > worst) {
            worst = err;
            worst_name = "model:" + params.tensors[t].first;
        }
    }
    return {worst_name, worst, tol};
}

inline TransformerConfig desk_gradcheck_config() {
    TransformerConfig cfg;
    cfg.input_dim = 6;
    cfg.blocks = 1;
    cfg.heads = 2;
    cfg.head_size = 16;
    cfg.ff_filters = 4;
    cfg.mlp1 = 32;
    cfg.mlp2 = 16;
    cfg.encoder_dropout = 0.25;
    cfg.mlp_dropout = 0.4;
    return cfg;
}

}  // namespace cw
