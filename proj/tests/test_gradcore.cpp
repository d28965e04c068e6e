#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cw/gradcheck.hpp"
#include "cw/graph.hpp"
#include "cw/optim.hpp"

using cw::Graph;
using cw::NodeId;
using cw::RngStream;
using cw::Stream;
using cw::Tensor;

TEST_CASE("affine_map identity and hand arithmetic") {
    Graph g;
    NodeId x = g.input(Tensor({1, 2}, {1, 0}));
    NodeId w = g.input(Tensor({2, 2}, {1, 0, 0, 1}));
    NodeId b = g.input(Tensor({2}, {0, 0}));
    NodeId out = g.affine(x, w, b);
    CHECK(g.value(out)[0] == 1.0);
    CHECK(g.value(out)[1] == 0.0);

    Graph g2;
    NodeId x2 = g2.input(Tensor({1, 2}, {1, 2}));
    NodeId w2 = g2.input(Tensor({2, 1}, {3, 4}));
    NodeId b2 = g2.input(Tensor({1}, {5}));
    CHECK(g2.value(g2.affine(x2, w2, b2))[0] == 16.0);
}

TEST_CASE("affine_map shape mismatch names both shapes") {
    Graph g;
    NodeId x = g.input(Tensor({1, 3}, {1, 2, 3}));
    NodeId w = g.input(Tensor({2, 1}, {1, 2}));
    NodeId b = g.input(Tensor({1}, {0}));
    CHECK_THROWS_WITH(g.affine(x, w, b),
                      Catch::Matchers::ContainsSubstring("[1,3]") &&
                          Catch::Matchers::ContainsSubstring("[2,1]"));
}

TEST_CASE("affine_map gradient of sum w.r.t. W matches central differences") {
    RngStream rng(3, Stream::init);
    Graph g;
    Tensor xt({3, 4});
    for (std::int64_t i = 0; i < xt.numel(); ++i) xt[i] = 2.0 * rng.uniform() - 1.0;
    Tensor wt({4, 2});
    for (std::int64_t i = 0; i < wt.numel(); ++i) wt[i] = 2.0 * rng.uniform() - 1.0;
    NodeId x = g.input(xt);
    NodeId w = g.param(wt, "w");
    NodeId b = g.param(Tensor({2}, {0.1, -0.2}), "b");
    NodeId loss = g.sum_all(g.affine(x, w, b));
    g.backward(loss);
    // exact linear case: error at roundoff level
    CHECK(g.finite_difference_check(loss, w, 1e-6) <= 1e-8);
    CHECK(g.finite_difference_check(loss, b, 1e-6) <= 1e-8);
}

TEST_CASE("activation examples") {
    Graph g;
    NodeId x = g.input(Tensor({3}, {-1, 0, 2}));
    const Tensor& r = g.value(g.activation(cw::Act::relu, x));
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 0.0);
    CHECK(r[2] == 2.0);

    for (double c : {-3.0, 0.0, 17.5}) {
        Graph gc;
        NodeId xs = gc.input(Tensor({3}, {c, c, c}));
        const Tensor& s = gc.value(gc.softmax_last(xs));
        for (int i = 0; i < 3; ++i) CHECK_THAT(s[i], Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-15));
    }

    Graph gs;
    CHECK(gs.value(gs.sigmoid(gs.input(Tensor::scalar(0.0))))[0] == 0.5);
}

TEST_CASE("layer_norm examples and gradient") {
    Graph g;
    NodeId x = g.input(Tensor({3}, {1, 1, 1}));
    NodeId gain = g.input(Tensor({3}, {1, 1, 1}));
    NodeId shift = g.input(Tensor({3}, {0, 0, 0}));
    const Tensor& out = g.value(g.layer_norm(x, gain, shift, 1e-6));
    for (int i = 0; i < 3; ++i) CHECK(out[i] == 0.0);

    Graph g2;
    NodeId x2 = g2.input(Tensor({2}, {-1, 1}));
    NodeId gain2 = g2.input(Tensor({2}, {1, 1}));
    NodeId shift2 = g2.input(Tensor({2}, {0, 0}));
    const Tensor& out2 = g2.value(g2.layer_norm(x2, gain2, shift2, 1e-12));
    CHECK_THAT(out2[0], Catch::Matchers::WithinAbs(-1.0, 1e-9));
    CHECK_THAT(out2[1], Catch::Matchers::WithinAbs(1.0, 1e-9));

    RngStream rng(5, Stream::init);
    Graph g3;
    Tensor xt({2, 5});
    for (std::int64_t i = 0; i < xt.numel(); ++i) xt[i] = 2.0 * rng.uniform() - 1.0;
    NodeId x3 = g3.param(xt, "x");
    NodeId gain3 = g3.param(Tensor::full({5}, 1.2), "gain");
    NodeId shift3 = g3.param(Tensor::full({5}, -0.1), "shift");
    NodeId loss = g3.sum_all(g3.sigmoid(g3.layer_norm(x3, gain3, shift3, 1e-6)));
    g3.backward(loss);
    CHECK(g3.finite_difference_check(loss, x3, 1e-6) <= 1e-5);
    CHECK(g3.finite_difference_check(loss, gain3, 1e-6) <= 1e-5);
}

TEST_CASE("dropout identities and concentration") {
    RngStream rng(11, Stream::dropout);
    Tensor xt({100});
    for (std::int64_t i = 0; i < 100; ++i) xt[i] = static_cast<double>(i) - 50.0;

    Graph g;
    NodeId x = g.input(xt);
    const Tensor& same = g.value(g.dropout(x, 0.0, rng, true));
    CHECK(same.vec() == xt.vec());
    const Tensor& infer = g.value(g.dropout(x, 0.4, rng, false));
    CHECK(infer.vec() == xt.vec());
    CHECK_THROWS_AS(g.dropout(x, 1.0, rng, true), cw::ShapeError);

    Graph g2;
    NodeId ones = g2.input(Tensor::full({100000}, 1.0));
    const Tensor& dropped = g2.value(g2.dropout(ones, 0.25, rng, true));
    double mean = 0.0;
    for (std::int64_t i = 0; i < dropped.numel(); ++i) mean += dropped[i];
    mean /= static_cast<double>(dropped.numel());
    CHECK(mean > 0.99);
    CHECK(mean < 1.01);
}

TEST_CASE("reduce_mean_axis") {
    Graph g;
    NodeId x = g.input(Tensor({4, 1}, {1, 2, 3, 4}));
    const Tensor& squeezed = g.value(g.mean_axis(x, 1));
    CHECK(squeezed.shape() == cw::Shape{4});
    CHECK(squeezed.vec() == std::vector<double>{1, 2, 3, 4});

    Graph g2;
    NodeId x2 = g2.input(Tensor({2, 2}, {1, 3, 5, 7}));
    const Tensor& m = g2.value(g2.mean_axis(x2, 0));
    CHECK(m.vec() == std::vector<double>{3, 5});
    CHECK_THROWS_AS(g2.mean_axis(x2, 2), cw::ShapeError);

    Graph g3;
    NodeId x3 = g3.param(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), "x");
    NodeId loss = g3.sum_all(g3.mean_axis(x3, 1));
    g3.backward(loss);
    for (std::int64_t i = 0; i < 6; ++i)
        CHECK_THAT(g3.grad(x3)[i], Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-15));
    CHECK(g3.finite_difference_check(loss, x3, 1e-6) <= 1e-8);
}

TEST_CASE("backward basics") {
    Graph g;
    NodeId x = g.param(Tensor({3}, {0.3, -0.4, 2.0}), "x");
    NodeId loss = g.sum_all(x);
    g.backward(loss);
    for (int i = 0; i < 3; ++i) CHECK(g.grad(x)[i] == 1.0);

    // loss = sigmoid(w * x) on scalars: dL/dw = sigmoid'(w x) * x
    const double wv = 0.7, xv = -1.3;
    Graph g2;
    NodeId w = g2.param(Tensor::scalar(wv), "w");
    NodeId xs = g2.input(Tensor::scalar(xv));
    NodeId loss2 = g2.sigmoid(g2.mul(w, xs));
    g2.backward(loss2);
    const double s = 1.0 / (1.0 + std::exp(-wv * xv));
    CHECK_THAT(g2.grad(w)[0], Catch::Matchers::WithinRel(s * (1.0 - s) * xv, 1e-12));

    // non-scalar loss rejected
    Graph g3;
    NodeId y = g3.param(Tensor({2}, {1, 2}), "y");
    CHECK_THROWS_AS(g3.backward(y), cw::ShapeError);
}

TEST_CASE("backward gives zero gradients to unused parameters") {
    Graph g;
    NodeId used = g.param(Tensor({2}, {1, 2}), "used");
    NodeId unused = g.param(Tensor({3}, {1, 2, 3}), "unused");
    NodeId loss = g.sum_all(used);
    g.backward(loss);
    CHECK(g.grad(unused).shape() == cw::Shape{3});
    for (int i = 0; i < 3; ++i) CHECK(g.grad(unused)[i] == 0.0);
}

TEST_CASE("adam zero gradient and first step") {
    Tensor p = Tensor({2}, {0.5, -1.5});
    Tensor zero = Tensor::zeros({2});
    cw::AdamState st(0.0005);
    std::vector<Tensor*> params{&p};
    std::vector<const Tensor*> grads{&zero};
    cw::adam_step(params, grads, st);
    CHECK(st.step == 1);
    CHECK(p[0] == 0.5);
    CHECK(p[1] == -1.5);

    Tensor q = Tensor::scalar(0.0);
    Tensor g1 = Tensor::scalar(1.0);
    cw::AdamState st2(0.0005);
    std::vector<Tensor*> params2{&q};
    std::vector<const Tensor*> grads2{&g1};
    cw::adam_step(params2, grads2, st2);
    // bias-corrected first step moves by ~lr * sign(g)
    CHECK_THAT(q[0], Catch::Matchers::WithinAbs(-0.0005, 1e-9));
}

TEST_CASE("adam optimizes a quadratic") {
    // f(p) = (p - 3)^2, from p = 0, lr = 0.05
    Tensor p = Tensor::scalar(0.0);
    cw::AdamState st(0.05);
    for (int step = 0; step < 200; ++step) {
        Tensor g = Tensor::scalar(2.0 * (p[0] - 3.0));
        std::vector<Tensor*> params{&p};
        std::vector<const Tensor*> grads{&g};
        cw::adam_step(params, grads, st);
    }
    CHECK(std::abs(p[0] - 3.0) < 0.5);
}

TEST_CASE("glorot uniform support, determinism, mean") {
    RngStream rng(9, Stream::init);
    Tensor t = cw::glorot_uniform_init({100, 100}, rng);
    const double limit = std::sqrt(6.0 / 200.0);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        CHECK(t[i] >= -limit);
        CHECK(t[i] <= limit);
    }

    RngStream a(1234, Stream::init), b(1234, Stream::init);
    Tensor ta = cw::glorot_uniform_init({7, 5}, a);
    Tensor tb = cw::glorot_uniform_init({7, 5}, b);
    CHECK(ta.vec() == tb.vec());

    double mean = 0.0;
    for (std::int64_t i = 0; i < t.numel(); ++i) mean += t[i];
    mean /= static_cast<double>(t.numel());
    CHECK(std::abs(mean) <= 3.0 * limit / std::sqrt(3.0 * 1e4));
}

TEST_CASE("finite_difference_check rejects bad h and catches corrupted backward") {
    Graph g;
    NodeId x = g.param(Tensor({2}, {0.4, 0.6}), "x");
    NodeId loss = g.sum_all(x);
    g.backward(loss);
    CHECK_THROWS_AS(g.finite_difference_check(loss, x, 1e-2), cw::ShapeError);

    // fault injection: a custom node whose backward rule is off by 2x
    Graph bad;
    NodeId y = bad.param(Tensor({2}, {0.3, 0.9}), "y");
    NodeId doubled = bad.custom(
        Tensor({2}, {0.6, 1.8}), {y},
        [y](Graph& gg, cw::NodeId self) {
            for (int i = 0; i < 2; ++i) gg.node(self).value[i] = 2.0 * gg.value(y)[i];
        },
        [y](Graph& gg, cw::NodeId self) {
            Tensor& gy = gg.ensure_grad(y);
            for (int i = 0; i < 2; ++i) gy[i] += 4.0 * gg.node(self).grad[i];  // wrong: 4 != 2
        },
        "corrupted_double");
    NodeId bloss = bad.sum_all(doubled);
    bad.backward(bloss);
    CHECK(bad.finite_difference_check(bloss, y, 1e-6) > 1e-5);
    CHECK(bad.node(doubled).name == "corrupted_double");
}

TEST_CASE("gradcheck primitive suite passes at 1e-5") {
    for (const auto& c : cw::gradcheck_primitives(21)) {
        INFO(c.name);
        CHECK(c.error <= c.tolerance);
    }
}

TEST_CASE("rng streams are deterministic and isolated") {
    RngStream a(77, Stream::dropout), b(77, Stream::dropout);
    for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());

    RngStream c(77, Stream::dropout), d(77, Stream::resample);
    bool differ = false;
    for (int i = 0; i < 16; ++i) differ = differ || (c.next_u64() != d.next_u64());
    CHECK(differ);

    RngStream e(77, Stream::resample);
    std::vector<double> first;
    for (int i = 0; i < 10; ++i) first.push_back(e.uniform_closed());
    RngStream f(77, Stream::resample);
    for (int i = 0; i < 10; ++i) {
        const double v = f.uniform_closed();
        CHECK(v == first[static_cast<std::size_t>(i)]);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}
