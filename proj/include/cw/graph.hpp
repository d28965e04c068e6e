#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cw/blas.hpp"
#include "cw/parallel.hpp"
#include "cw/rng.hpp"
#include "cw/tensor.hpp"

namespace cw {

using NodeId = std::int32_t;

enum class Act { relu, sigmoid, softmax_last_axis };

// Reverse-mode tape. Values are computed eagerly as nodes are recorded; each
// non-leaf node also keeps a re-forward closure (used by the finite-difference
// harness) and a backward closure. Node order is the topological order by
// construction. Stochastic nodes (dropout) freeze their mask at record time,
// so re-running forward() is a pure function of the leaf values.
class Graph {
public:
    struct Node {
        Tensor value;
        Tensor grad;  // empty until backward reaches this node
        std::vector<NodeId> parents;
        std::function<void(Graph&, NodeId)> forward;   // null for leaves
        std::function<void(Graph&, NodeId)> backward;  // null for leaves
        bool is_param = false;
        std::string name;
    };

    NodeId input(Tensor v, std::string name = {}) {
        return push(std::move(v), {}, nullptr, nullptr, false, std::move(name));
    }

    NodeId param(Tensor v, std::string name) {
        NodeId id = push(std::move(v), {}, nullptr, nullptr, true, std::move(name));
        params_.push_back(id);
        return id;
    }

    // Extension point: a node with caller-supplied forward/backward rules.
    NodeId custom(Tensor v, std::vector<NodeId> parents,
                  std::function<void(Graph&, NodeId)> fwd,
                  std::function<void(Graph&, NodeId)> bwd, std::string name = {}) {
        return push(std::move(v), std::move(parents), std::move(fwd), std::move(bwd), false,
                    std::move(name));
    }

    std::size_t size() const { return nodes_.size(); }
    Node& node(NodeId id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }
    const Tensor& value(NodeId id) const { return node(id).value; }
    Tensor& mutable_value(NodeId id) { return node(id).value; }
    const Tensor& grad(NodeId id) const { return node(id).grad; }
    const std::vector<NodeId>& params() const { return params_; }

    // ---- primitives ----------------------------------------------------

    // out[..., j] = sum_i x[..., i] * W[i, j] + b[j]
    NodeId affine(NodeId x, NodeId W, NodeId b) {
        const Tensor& xv = value(x);
        const Tensor& wv = value(W);
        const Tensor& bv = value(b);
        require(xv.rank() >= 1, "affine_map: x must have at least 1 axis");
        require(wv.rank() == 2, "affine_map: W must be 2-D, got " + shape_str(wv.shape()));
        const std::int64_t din = xv.dim(xv.rank() - 1);
        const std::int64_t dout = wv.dim(1);
        require(wv.dim(0) == din, "affine_map: inner dimensions disagree, x " +
                                      shape_str(xv.shape()) + " vs W " + shape_str(wv.shape()));
        require(bv.rank() == 1 && bv.dim(0) == dout,
                "affine_map: bias shape " + shape_str(bv.shape()) + " does not match W " +
                    shape_str(wv.shape()));
        Shape os = xv.shape();
        os.back() = dout;
        auto fwd = [x, W, b, din, dout](Graph& g, NodeId self) {
            const Tensor& xt = g.value(x);
            const Tensor& wt = g.value(W);
            const Tensor& bt = g.value(b);
            Tensor& out = g.node(self).value;
            const std::int64_t rows = xt.numel() / din;
            gemm_nn(xt.data(), wt.data(), out.data(), rows, din, dout, false);
            double* o = out.data();
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t j = 0; j < dout; ++j) o[r * dout + j] += bt[j];
        };
        auto bwd = [x, W, b, din, dout](Graph& g, NodeId self) {
            const Tensor& gout = g.node(self).grad;
            const Tensor& xt = g.value(x);
            const Tensor& wt = g.value(W);
            const std::int64_t rows = xt.numel() / din;
            gemm_nt(gout.data(), wt.data(), g.ensure_grad(x).data(), rows, dout, din, true);
            gemm_tn(xt.data(), gout.data(), g.ensure_grad(W).data(), din, rows, dout, true);
            double* gb = g.ensure_grad(b).data();
            const double* go = gout.data();
            for (std::int64_t r = 0; r < rows; ++r)
                for (std::int64_t j = 0; j < dout; ++j) gb[j] += go[r * dout + j];
        };
        NodeId id = push(Tensor::uninitialized(os), {x, W, b}, fwd, bwd, false, "affine");
        fwd(*this, id);
        return id;
    }

    // out[..., j] = sum_i x[..., i] * W[i, j]
    NodeId matmul(NodeId x, NodeId W) {
        const Tensor& xv = value(x);
        const Tensor& wv = value(W);
        require(wv.rank() == 2, "matmul: W must be 2-D, got " + shape_str(wv.shape()));
        const std::int64_t din = xv.dim(xv.rank() - 1);
        const std::int64_t dout = wv.dim(1);
        require(wv.dim(0) == din, "matmul: inner dimensions disagree, x " +
                                      shape_str(xv.shape()) + " vs W " + shape_str(wv.shape()));
        Shape os = xv.shape();
        os.back() = dout;
        auto fwd = [x, W, din, dout](Graph& g, NodeId self) {
            const Tensor& xt = g.value(x);
            gemm_nn(xt.data(), g.value(W).data(), g.node(self).value.data(), xt.numel() / din,
                    din, dout, false);
        };
        auto bwd = [x, W, din, dout](Graph& g, NodeId self) {
            const Tensor& gout = g.node(self).grad;
            const Tensor& xt = g.value(x);
            const std::int64_t rows = xt.numel() / din;
            gemm_nt(gout.data(), g.value(W).data(), g.ensure_grad(x).data(), rows, dout, din,
                    true);
            gemm_tn(xt.data(), gout.data(), g.ensure_grad(W).data(), din, rows, dout, true);
        };
        NodeId id = push(Tensor::uninitialized(os), {x, W}, fwd, bwd, false, "matmul");
        fwd(*this, id);
        return id;
    }

    // batched: out[s] = a[s] (m,k) * b[s] (k,n), leading axes shared
    NodeId bmm_nn(NodeId a, NodeId b) {
        auto [batch, m, k, n, os] = bmm_shapes(a, b, /*transpose_b=*/false);
        auto fwd = [a, b, batch = batch, m = m, k = k, n = n](Graph& g, NodeId self) {
            const double* av = g.value(a).data();
            const double* bv = g.value(b).data();
            double* ov = g.node(self).value.data();
            parallel_blocks(static_cast<std::size_t>(batch), 4, [&](std::size_t s0, std::size_t s1) {
                for (std::size_t s = s0; s < s1; ++s)
                    gemm_nn(av + s * m * k, bv + s * k * n, ov + s * m * n, m, k, n, false);
            });
        };
        auto bwd = [a, b, batch = batch, m = m, k = k, n = n](Graph& g, NodeId self) {
            const double* go = g.node(self).grad.data();
            const double* av = g.value(a).data();
            const double* bv = g.value(b).data();
            double* ga = g.ensure_grad(a).data();
            double* gb = g.ensure_grad(b).data();
            parallel_blocks(static_cast<std::size_t>(batch), 4, [&](std::size_t s0, std::size_t s1) {
                for (std::size_t s = s0; s < s1; ++s) {
                    gemm_nt(go + s * m * n, bv + s * k * n, ga + s * m * k, m, n, k, true);
                    gemm_tn(av + s * m * k, go + s * m * n, gb + s * k * n, k, m, n, true);
                }
            });
        };
        NodeId id = push(Tensor::uninitialized(os), {a, b}, fwd, bwd, false, "bmm_nn");
        fwd(*this, id);
        return id;
    }

    // batched: out[s] = a[s] (m,k) * b[s] (n,k)^T
    NodeId bmm_nt(NodeId a, NodeId b) {
        auto [batch, m, k, n, os] = bmm_shapes(a, b, /*transpose_b=*/true);
        auto fwd = [a, b, batch = batch, m = m, k = k, n = n](Graph& g, NodeId self) {
            const double* av = g.value(a).data();
            const double* bv = g.value(b).data();
            double* ov = g.node(self).value.data();
            parallel_blocks(static_cast<std::size_t>(batch), 4, [&](std::size_t s0, std::size_t s1) {
                for (std::size_t s = s0; s < s1; ++s)
                    gemm_nt(av + s * m * k, bv + s * n * k, ov + s * m * n, m, k, n, false);
            });
        };
        auto bwd = [a, b, batch = batch, m = m, k = k, n = n](Graph& g, NodeId self) {
            const double* go = g.node(self).grad.data();
            const double* av = g.value(a).data();
            const double* bv = g.value(b).data();
            double* ga = g.ensure_grad(a).data();
            double* gb = g.ensure_grad(b).data();
            parallel_blocks(static_cast<std::size_t>(batch), 4, [&](std::size_t s0, std::size_t s1) {
                for (std::size_t s = s0; s < s1; ++s) {
                    gemm_nn(go + s * m * n, bv + s * n * k, ga + s * m * k, m, n, k, true);
                    gemm_tn(go + s * m * n, av + s * m * k, gb + s * n * k, n, m, k, true);
                }
            });
        };
        NodeId id = push(Tensor::uninitialized(os), {a, b}, fwd, bwd, false, "bmm_nt");
        fwd(*this, id);
        return id;
    }

    NodeId add(NodeId a, NodeId b) {
        require_same_shape(value(a), value(b), "add");
        auto fwd = [a, b](Graph& g, NodeId self) {
            const Tensor& av = g.value(a);
            const Tensor& bv = g.value(b);
            Tensor& out = g.node(self).value;
            for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] + bv[i];
        };
        auto bwd = [a, b](Graph& g, NodeId self) {
            const Tensor& go = g.node(self).grad;
            Tensor& ga = g.ensure_grad(a);
            Tensor& gb = g.ensure_grad(b);
            for (std::int64_t i = 0; i < go.numel(); ++i) {
                ga[i] += go[i];
                gb[i] += go[i];
            }
        };
        NodeId id = push(Tensor::uninitialized(value(a).shape()), {a, b}, fwd, bwd, false, "add");
        fwd(*this, id);
        return id;
    }

    NodeId mul(NodeId a, NodeId b) {
        require_same_shape(value(a), value(b), "mul");
        auto fwd = [a, b](Graph& g, NodeId self) {
            const Tensor& av = g.value(a);
            const Tensor& bv = g.value(b);
            Tensor& out = g.node(self).value;
            for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] * bv[i];
        };
        auto bwd = [a, b](Graph& g, NodeId self) {
            const Tensor& go = g.node(self).grad;
            const Tensor& av = g.value(a);
            const Tensor& bv = g.value(b);
            Tensor& ga = g.ensure_grad(a);
            Tensor& gb = g.ensure_grad(b);
            for (std::int64_t i = 0; i < go.numel(); ++i) {
                ga[i] += go[i] * bv[i];
                gb[i] += go[i] * av[i];
            }
        };
        NodeId id = push(Tensor::uninitialized(value(a).shape()), {a, b}, fwd, bwd, false, "mul");
        fwd(*this, id);
        return id;
    }

    NodeId scale(NodeId a, double c) {
        auto fwd = [a, c](Graph& g, NodeId self) {
            const Tensor& av = g.value(a);
            Tensor& out = g.node(self).value;
            for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] * c;
        };
        auto bwd = [a, c](Graph& g, NodeId self) {
            const Tensor& go = g.node(self).grad;
            Tensor& ga = g.ensure_grad(a);
            for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * c;
        };
        NodeId id = push(Tensor::uninitialized(value(a).shape()), {a}, fwd, bwd, false, "scale");
        fwd(*this, id);
        return id;
    }

    NodeId shift(NodeId a, double c) {
        auto fwd = [a, c](Graph& g, NodeId self) {
            const Tensor& av = g.value(a);
            Tensor& out = g.node(self).value;
            for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = av[i] + c;
        };
        auto bwd = [a](Graph& g, NodeId self) {
            const Tensor& go = g.node(self).grad;
            Tensor& ga = g.ensure_grad(a);
            for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
        };
        NodeId id = push(Tensor::uninitialized(value(a).shape()), {a}, fwd, bwd, false, "shift");
        fwd(*this, id);
        return id;
    }

    NodeId activation(Act kind, NodeId x) {
        switch (kind) {
            case Act::relu: return relu(x);
            case Act::sigmoid: return sigmoid(x);
            case Act::softmax_last_axis: return softmax_last(x);
        }
        throw ShapeError("activation: unknown kind");
    }

    NodeId relu(NodeId x) {
        auto fwd = [x](Graph& g, NodeId self) {
            const Tensor& xv = g.value(x);
            Tensor& out = g.node(self).value;
            for (std::int64_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
        };
        auto bwd = [x](Graph& g, NodeId self) {
            const Tensor& go = g.node(self).grad;
            const Tensor& xv = g.value(x);
            Tensor& gx = g.ensure_grad(x);
            for (std::int64_t i = 0; i < go.numel(); ++i)
                if (xv[i] > 0.0) gx[i] += go[i];
        };
        NodeId id = push(Tensor::uninitialized(value(x).shape()), {x}, fwd, bwd, false, "relu");
        fwd(*this, id);
        return id;
    }

    NodeId sigmoid(NodeId x) {
        auto fwd = [x](Graph& g, NodeId self) {
            const Tensor& xv = g.value(x);
            Tensor& out = g.node(self).value;
            for (std::int64_t i = 0; i < xv.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
        };
        auto bwd = [x](Graph& g, NodeId self) {
            const Tensor& go = g.node(self).grad;
            const Tensor& sv = g.node(self).value;
            Tensor& gx = g.ensure_grad(x);
            for (std::int64_t i = 0; i < go.numel(); ++i) gx[i] += go[i] * sv[i] * (1.0 - sv[i]);
        };
        NodeId id = push(Tensor::uninitialized(value(x).shape()), {x}, fwd, bwd, false, "sigmoid");
        fwd(*this, id);
        return id;
    }

    // softmax over the last axis, max-subtracted for overflow safety
    NodeId softmax_last(NodeId x) {
        const Tensor& xv = value(x);
        require(xv.rank() >= 1 && xv.dim(xv.rank() - 1) >= 1,
                "softmax: last axis must have length >= 1, got " + shape_str(xv.shape()));
        const std::int64_t c = xv.dim(xv.rank() - 1);
        auto fwd = [x, c](Graph& g, NodeId self) {
            const Tensor& xt = g.value(x);
            Tensor& out = g.node(self).value;
            const std::int64_t rows = xt.numel() / c;
            parallel_blocks(static_cast<std::size_t>(rows), 256, [&](std::size_t r0, std::size_t r1) {
                for (std::size_t r = r0; r < r1; ++r) {
                    const double* in = xt.data() + r * c;
                    double* o = out.data() + r * c;
                    double mx = in[0];
                    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
                    double sum = 0.0;
                    for (std::int64_t j = 0; j < c; ++j) {
                        o[j] = std::exp(in[j] - mx);
                        sum += o[j];
                    }
                    for (std::int64_t j = 0; j < c; ++j) o[j] /= sum;
                }
            });
        };
        auto bwd = [x, c](Graph& g, NodeId self) {
            const Tensor& go = g.node(self).grad;
            const Tensor& sv = g.node(self).value;
            Tensor& gx = g.ensure_grad(x);
            const std::int64_t rows = go.numel() / c;
            parallel_blocks(static_cast<std::size_t>(rows), 256, [&](std::size_t r0, std::size_t r1) {
                for (std::size_t r = r0; r < r1; ++r) {
                    const double* gr = go.data() + r * c;
                    const double* s = sv.data() + r * c;
                    double* gxr = gx.data() + r * c;
                    double dot = 0.0;
                    for (std::int64_t j = 0; j < c; ++j) dot += gr[j] * s[j];
                    for (std::int64_t j = 0; j < c; ++j) gxr[j] += s[j] * (gr[j] - dot);
                }
            });
        };
        NodeId id = push(Tensor::uninitialized(xv.shape()), {x}, fwd, bwd, false, "softmax");
        fwd(*this, id);
        return id;
    }

    // out = gain * (x - mean) / sqrt(var + eps) + shift, over the last axis
    NodeId layer_norm(NodeId x, NodeId gain, NodeId shift_p, double eps) {
        const Tensor& xv = value(x);
        require(eps > 0.0, "layer_norm: eps must be positive");
        require(xv.rank() >= 1, "layer_norm: x must have at least 1 axis");
        const std::int64_t c = xv.dim(xv.rank() - 1);
        require(value(gain).rank() == 1 && value(gain).dim(0) == c,
                "layer_norm: gain shape " + shape_str(value(gain).shape()) +
                    " does not match channels of x " + shape_str(xv.shape()));
        require(value(shift_p).rank() == 1 && value(shift_p).dim(0) == c,
                "layer_norm: shift shape " + shape_str(value(shift_p).shape()) +
                    " does not match channels of x " + shape_str(xv.shape()));
        auto xhat = std::make_shared<std::vector<double>>();
        auto istd = std::make_shared<std::vector<double>>();
        auto fwd = [x, gain, shift_p, eps, c, xhat, istd](Graph& g, NodeId self) {
            const Tensor& xt = g.value(x);
            const Tensor& zt = g.value(gain);
            const Tensor& bt = g.value(shift_p);
            Tensor& out = g.node(self).value;
            const std::int64_t rows = xt.numel() / c;
            xhat->resize(static_cast<std::size_t>(xt.numel()));
            istd->resize(static_cast<std::size_t>(rows));
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* in = xt.data() + r * c;
                double mu = 0.0;
                for (std::int64_t j = 0; j < c; ++j) mu += in[j];
                mu /= static_cast<double>(c);
                double var = 0.0;
                for (std::int64_t j = 0; j < c; ++j) var += (in[j] - mu) * (in[j] - mu);
                var /= static_cast<double>(c);
                const double is = 1.0 / std::sqrt(var + eps);
                (*istd)[static_cast<std::size_t>(r)] = is;
                double* xh = xhat->data() + r * c;
                double* o = out.data() + r * c;
                for (std::int64_t j = 0; j < c; ++j) {
                    xh[j] = (in[j] - mu) * is;
                    o[j] = zt[j] * xh[j] + bt[j];
                }
            }
        };
        auto bwd = [x, gain, shift_p, c, xhat, istd](Graph& g, NodeId self) {
            const Tensor& go = g.node(self).grad;
            const Tensor& zt = g.value(gain);
            Tensor& gx = g.ensure_grad(x);
            Tensor& gz = g.ensure_grad(gain);
            Tensor& gb = g.ensure_grad(shift_p);
            const std::int64_t rows = go.numel() / c;
            std::vector<double> h(static_cast<std::size_t>(c));
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* gr = go.data() + r * c;
                const double* xh = xhat->data() + r * c;
                const double is = (*istd)[static_cast<std::size_t>(r)];
                double m1 = 0.0, m2 = 0.0;
                for (std::int64_t j = 0; j < c; ++j) {
                    h[static_cast<std::size_t>(j)] = zt[j] * gr[j];
                    m1 += h[static_cast<std::size_t>(j)];
                    m2 += h[static_cast<std::size_t>(j)] * xh[j];
                    gz[j] += gr[j] * xh[j];
                    gb[j] += gr[j];
                }
                m1 /= static_cast<double>(c);
                m2 /= static_cast<double>(c);
                double* gxr = gx.data() + r * c;
                for (std::int64_t j = 0; j < c; ++j)
                    gxr[j] += is * (h[static_cast<std::size_t>(j)] - m1 - xh[j] * m2);
            }
        };
        NodeId id = push(Tensor::uninitialized(xv.shape()), {x, gain, shift_p}, fwd, bwd, false, "layer_norm");
        fwd(*this, id);
        return id;
    }

    // Inverted dropout; the keep mask is drawn once at record time, so
    // re-running forward() (finite differences) sees the same mask.
    NodeId dropout(NodeId x, double p, RngStream& rng, bool training) {
        require(p >= 0.0 && p < 1.0, "dropout: p must lie in [0,1), got " + std::to_string(p));
        const bool active = training && p > 0.0;
        std::shared_ptr<std::vector<std::uint8_t>> mask;
        if (active) {
            mask = std::make_shared<std::vector<std::uint8_t>>(
                static_cast<std::size_t>(value(x).numel()));
            for (auto& m : *mask) m = rng.uniform() >= p ? 1 : 0;
        }
        const double s = active ? 1.0 / (1.0 - p) : 1.0;
        auto fwd = [x, mask, s](Graph& g, NodeId self) {
            const Tensor& xv = g.value(x);
            Tensor& out = g.node(self).value;
            if (!mask) {
                out.vec() = xv.vec();
                return;
            }
            for (std::int64_t i = 0; i < xv.numel(); ++i)
                out[i] = (*mask)[static_cast<std::size_t>(i)] ? xv[i] * s : 0.0;
        };
        auto bwd = [x, mask, s](Graph& g, NodeId self) {
            const Tensor& go = g.node(self).grad;
            Tensor& gx = g.ensure_grad(x);
            for (std::int64_t i = 0; i < go.numel(); ++i) {
                if (!mask)
                    gx[i] += go[i];
                else if ((*mask)[static_cast<std::size_t>(i)])
                    gx[i] += go[i] * s;
            }
        };
        NodeId id = push(Tensor::uninitialized(value(x).shape()), {x}, fwd, bwd, false, "dropout");
        fwd(*this, id);
        return id;
    }

    // arithmetic mean over one axis; the axis is dropped from the shape
    NodeId mean_axis(NodeId x, std::int64_t axis) {
        const Tensor& xv = value(x);
        require(axis >= 0 && axis < xv.rank(),
                "reduce_mean_axis: axis " + std::to_string(axis) + " out of range for shape " +
                    shape_str(xv.shape()));
        std::int64_t outer = 1, inner = 1;
        for (std::int64_t i = 0; i < axis; ++i) outer *= xv.dim(i);
        const std::int64_t len = xv.dim(axis);
        for (std::int64_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
        Shape os;
        for (std::int64_t i = 0; i < xv.rank(); ++i)
            if (i != axis) os.push_back(xv.dim(i));
        auto fwd = [x, outer, len, inner](Graph& g, NodeId self) {
            const Tensor& xt = g.value(x);
            Tensor& out = g.node(self).value;
            const double inv = 1.0 / static_cast<double>(len);
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t i = 0; i < inner; ++i) {
                    double sum = 0.0;
                    for (std::int64_t l = 0; l < len; ++l)
                        sum += xt[(o * len + l) * inner + i];
                    out[o * inner + i] = sum * inv;
                }
        };
        auto bwd = [x, outer, len, inner](Graph& g, NodeId self) {
            const Tensor& go = g.node(self).grad;
            Tensor& gx = g.ensure_grad(x);
            const double inv = 1.0 / static_cast<double>(len);
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t i = 0; i < inner; ++i) {
                    const double gv = go[o * inner + i] * inv;
                    for (std::int64_t l = 0; l < len; ++l)
                        gx[(o * len + l) * inner + i] += gv;
                }
        };
        NodeId id = push(Tensor::uninitialized(os), {x}, fwd, bwd, false, "reduce_mean");
        fwd(*this, id);
        return id;
    }

    NodeId sum_all(NodeId x) {
        auto fwd = [x](Graph& g, NodeId self) {
            const Tensor& xv = g.value(x);
            double sum = 0.0;
            for (std::int64_t i = 0; i < xv.numel(); ++i) sum += xv[i];
            g.node(self).value[0] = sum;
        };
        auto bwd = [x](Graph& g, NodeId self) {
            const double gv = g.node(self).grad[0];
            Tensor& gx = g.ensure_grad(x);
            for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += gv;
        };
        NodeId id = push(Tensor::scalar(0.0), {x}, fwd, bwd, false, "sum");
        fwd(*this, id);
        return id;
    }

    // concatenate along the last axis
    NodeId concat_last(const std::vector<NodeId>& xs) {
        require(!xs.empty(), "concat: needs at least one input");
        const Tensor& first = value(xs[0]);
        Shape lead = first.shape();
        lead.pop_back();
        std::int64_t ctot = 0;
        std::vector<std::int64_t> widths;
        for (NodeId x : xs) {
            const Tensor& xv = value(x);
            Shape l = xv.shape();
            require(!l.empty(), "concat: inputs must have rank >= 1");
            std::int64_t w = l.back();
            l.pop_back();
            require(l == lead, "concat: leading shapes differ, " + shape_str(xv.shape()) +
                                   " vs " + shape_str(first.shape()));
            widths.push_back(w);
            ctot += w;
        }
        Shape os = lead;
        os.push_back(ctot);
        const std::int64_t rows = shape_numel(lead);
        auto xs_copy = xs;
        auto fwd = [xs_copy, widths, ctot, rows](Graph& g, NodeId self) {
            Tensor& out = g.node(self).value;
            std::int64_t base = 0;
            for (std::size_t q = 0; q < xs_copy.size(); ++q) {
                const Tensor& xv = g.value(xs_copy[q]);
                const std::int64_t w = widths[q];
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < w; ++j)
                        out[r * ctot + base + j] = xv[r * w + j];
                base += w;
            }
        };
        auto bwd = [xs_copy, widths, ctot, rows](Graph& g, NodeId self) {
            const Tensor& go = g.node(self).grad;
            std::int64_t base = 0;
            for (std::size_t q = 0; q < xs_copy.size(); ++q) {
                Tensor& gx = g.ensure_grad(xs_copy[q]);
                const std::int64_t w = widths[q];
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < w; ++j)
                        gx[r * w + j] += go[r * ctot + base + j];
                base += w;
            }
        };
        NodeId id = push(Tensor::uninitialized(os), xs, fwd, bwd, false, "concat");
        fwd(*this, id);
        return id;
    }

    NodeId reshape(NodeId x, Shape s) {
        const Tensor& xv = value(x);
        require(shape_numel(s) == xv.numel(), "reshape: cannot view " + shape_str(xv.shape()) +
                                                  " as " + shape_str(s));
        auto fwd = [x](Graph& g, NodeId self) { g.node(self).value.vec() = g.value(x).vec(); };
        auto bwd = [x](Graph& g, NodeId self) {
            const Tensor& go = g.node(self).grad;
            Tensor& gx = g.ensure_grad(x);
            for (std::int64_t i = 0; i < go.numel(); ++i) gx[i] += go[i];
        };
        NodeId id = push(Tensor::uninitialized(std::move(s)), {x}, fwd, bwd, false, "reshape");
        fwd(*this, id);
        return id;
    }

    // mean over the batch of
    //   -y*alpha*(1-p)^gamma*log(p) - (1-y)*(1-alpha)*p^gamma*log(1-p)
    // p clamped to [1e-7, 1-1e-7]
    NodeId focal_loss(NodeId p, std::vector<double> labels, double alpha, double gamma) {
        check_labels(p, labels, "focal_loss");
        auto y = std::make_shared<std::vector<double>>(std::move(labels));
        auto fwd = [p, y, alpha, gamma](Graph& g, NodeId self) {
            const Tensor& pv = g.value(p);
            double sum = 0.0;
            for (std::int64_t i = 0; i < pv.numel(); ++i) {
                const double pc = clamp_prob(pv[i]);
                const double yi = (*y)[static_cast<std::size_t>(i)];
                sum += -yi * alpha * std::pow(1.0 - pc, gamma) * std::log(pc) -
                       (1.0 - yi) * (1.0 - alpha) * std::pow(pc, gamma) * std::log(1.0 - pc);
            }
            g.node(self).value[0] = sum / static_cast<double>(pv.numel());
        };
        auto bwd = [p, y, alpha, gamma](Graph& g, NodeId self) {
            const double gv = g.node(self).grad[0];
            const Tensor& pv = g.value(p);
            Tensor& gp = g.ensure_grad(p);
            const double invn = 1.0 / static_cast<double>(pv.numel());
            for (std::int64_t i = 0; i < pv.numel(); ++i) {
                if (pv[i] < kProbEps || pv[i] > 1.0 - kProbEps) continue;  // clamp is flat
                const double pc = pv[i];
                const double yi = (*y)[static_cast<std::size_t>(i)];
                double d = 0.0;
                if (yi > 0.5) {
                    d = -alpha * std::pow(1.0 - pc, gamma) / pc;
                    if (gamma != 0.0)
                        d += alpha * gamma * std::pow(1.0 - pc, gamma - 1.0) * std::log(pc);
                } else {
                    d = (1.0 - alpha) * std::pow(pc, gamma) / (1.0 - pc);
                    if (gamma != 0.0)
                        d += -(1.0 - alpha) * gamma * std::pow(pc, gamma - 1.0) *
                             std::log(1.0 - pc);
                }
                gp[i] += gv * d * invn;
            }
        };
        NodeId id = push(Tensor::scalar(0.0), {p}, fwd, bwd, false, "focal_loss");
        fwd(*this, id);
        return id;
    }

    // mean over the batch of -y*log(p) - (1-y)*log(1-p), same clamping
    NodeId cross_entropy_loss(NodeId p, std::vector<double> labels) {
        check_labels(p, labels, "cross_entropy_loss");
        auto y = std::make_shared<std::vector<double>>(std::move(labels));
        auto fwd = [p, y](Graph& g, NodeId self) {
            const Tensor& pv = g.value(p);
            double sum = 0.0;
            for (std::int64_t i = 0; i < pv.numel(); ++i) {
                const double pc = clamp_prob(pv[i]);
                const double yi = (*y)[static_cast<std::size_t>(i)];
                sum += -yi * std::log(pc) - (1.0 - yi) * std::log(1.0 - pc);
            }
            g.node(self).value[0] = sum / static_cast<double>(pv.numel());
        };
        auto bwd = [p, y](Graph& g, NodeId self) {
            const double gv = g.node(self).grad[0];
            const Tensor& pv = g.value(p);
            Tensor& gp = g.ensure_grad(p);
            const double invn = 1.0 / static_cast<double>(pv.numel());
            for (std::int64_t i = 0; i < pv.numel(); ++i) {
                if (pv[i] < kProbEps || pv[i] > 1.0 - kProbEps) continue;
                const double yi = (*y)[static_cast<std::size_t>(i)];
                gp[i] += gv * (-yi / pv[i] + (1.0 - yi) / (1.0 - pv[i])) * invn;
            }
        };
        NodeId id = push(Tensor::scalar(0.0), {p}, fwd, bwd, false, "cross_entropy");
        fwd(*this, id);
        return id;
    }

    // ---- execution ------------------------------------------------------

    // Recompute every non-leaf node from current leaf values.
    void forward_all() {
        for (std::size_t i = 0; i < nodes_.size(); ++i)
            if (nodes_[i].forward) nodes_[i].forward(*this, static_cast<NodeId>(i));
    }

    // Reverse sweep from a scalar loss. Afterwards every parameter node has a
    // gradient tensor (zeros when the loss does not depend on it).
    void backward(NodeId loss) {
        require(value(loss).numel() == 1,
                "backward: loss must be scalar, got shape " + shape_str(value(loss).shape()));
        for (auto& n : nodes_) n.grad = Tensor();
        ensure_grad(loss)[0] = 1.0;
        for (NodeId id = loss; id >= 0; --id) {
            Node& n = node(id);
            if (n.grad.numel() == 0 || !n.backward) continue;
            n.backward(*this, id);
        }
        for (NodeId pid : params_) ensure_grad(pid);
    }

    Tensor& ensure_grad(NodeId id) {
        Node& n = node(id);
        if (n.grad.numel() == 0) n.grad = Tensor::zeros(n.value.shape());
        return n.grad;
    }

    std::map<std::string, Tensor> parameter_gradients() const {
        std::map<std::string, Tensor> out;
        for (NodeId pid : params_) out[node(pid).name] = node(pid).grad;
        return out;
    }

    // Max over coordinates of |analytic - central difference| / max(1, |analytic|)
    // for one parameter leaf. backward(loss) must have run already.
    double finite_difference_check(NodeId loss, NodeId parameter, double h) {
        require(h > 0.0 && h <= 1e-3, "finite_difference_check: h must lie in (0, 1e-3]");
        require(value(loss).numel() == 1, "finite_difference_check: loss must be scalar");
        const Tensor analytic = node(parameter).grad;
        require(analytic.numel() == value(parameter).numel(),
                "finite_difference_check: run backward() first");
        Tensor& pv = mutable_value(parameter);
        double worst = 0.0;
        for (std::int64_t i = 0; i < pv.numel(); ++i) {
            const double saved = pv[i];
            pv[i] = saved + h;
            forward_all();
            const double up = value(loss)[0];
            pv[i] = saved - h;
            forward_all();
            const double down = value(loss)[0];
            pv[i] = saved;
            const double central = (up - down) / (2.0 * h);
            const double err =
                std::abs(analytic[i] - central) / std::max(1.0, std::abs(analytic[i]));
            worst = std::max(worst, err);
        }
        forward_all();
        return worst;
    }

    static constexpr double kProbEps = 1e-7;
    static double clamp_prob(double p) {
        return std::min(std::max(p, kProbEps), 1.0 - kProbEps);
    }

private:
    NodeId push(Tensor v, std::vector<NodeId> parents, std::function<void(Graph&, NodeId)> fwd,
                std::function<void(Graph&, NodeId)> bwd, bool is_param, std::string name) {
        nodes_.push_back(Node{std::move(v), Tensor(), std::move(parents), std::move(fwd),
                              std::move(bwd), is_param, std::move(name)});
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    void check_labels(NodeId p, const std::vector<double>& labels, const char* what) {
        require(static_cast<std::int64_t>(labels.size()) == value(p).numel(),
                std::string(what) + ": " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(value(p).numel()) + " probabilities");
        for (double y : labels)
            require(y == 0.0 || y == 1.0, std::string(what) + ": labels must be 0 or 1");
    }

    struct BmmDims {
        std::int64_t batch, m, k, n;
        Shape out;
    };

    BmmDims bmm_shapes(NodeId a, NodeId b, bool transpose_b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        require(av.rank() >= 2 && bv.rank() == av.rank(),
                "batched matmul: ranks must match and be >= 2, got " + shape_str(av.shape()) +
                    " and " + shape_str(bv.shape()));
        for (std::int64_t i = 0; i < av.rank() - 2; ++i)
            require(av.dim(i) == bv.dim(i), "batched matmul: leading shapes differ, " +
                                                shape_str(av.shape()) + " vs " +
                                                shape_str(bv.shape()));
        const std::int64_t m = av.dim(av.rank() - 2);
        const std::int64_t k = av.dim(av.rank() - 1);
        std::int64_t n;
        if (transpose_b) {
            require(bv.dim(bv.rank() - 1) == k, "batched matmul: inner dims disagree, " +
                                                    shape_str(av.shape()) + " vs " +
                                                    shape_str(bv.shape()) + "^T");
            n = bv.dim(bv.rank() - 2);
        } else {
            require(bv.dim(bv.rank() - 2) == k, "batched matmul: inner dims disagree, " +
                                                    shape_str(av.shape()) + " vs " +
                                                    shape_str(bv.shape()));
            n = bv.dim(bv.rank() - 1);
        }
        std::int64_t batch = 1;
        Shape os;
        for (std::int64_t i = 0; i < av.rank() - 2; ++i) {
            batch *= av.dim(i);
            os.push_back(av.dim(i));
        }
        os.push_back(m);
        os.push_back(n);
        return {batch, m, k, n, os};
    }

    std::vector<Node> nodes_;
    std::vector<NodeId> params_;
};

}  // namespace cw
