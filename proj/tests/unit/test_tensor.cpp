#include <doctest.h>

#include <cmath>
#include <set>

#include "common/binio.hpp"
#include "common/error.hpp"
#include "tensor/graph.hpp"
#include "tensor/kernels.hpp"
#include "tensor/param_store.hpp"
#include "test_util.hpp"

using namespace rawdiff;
using testutil::random_tensor;

namespace {

// Direct zero-padded convolution, written independently of the im2col path.
Tensor naive_conv(const Tensor& x, const Tensor& w) {
    const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2), O = w.dim(0), k = w.dim(2);
    const long pad = static_cast<long>(k / 2);
    Tensor y({O, H, W});
    for (std::size_t o = 0; o < O; ++o)
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t a = 0; a < k; ++a)
                        for (std::size_t b = 0; b < k; ++b) {
                            const long yy = static_cast<long>(i + a) - pad, xx = static_cast<long>(j + b) - pad;
                            if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W))
                                continue;
                            s += x.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) *
                                 w[((o * C + c) * k + a) * k + b];
                        }
                y.at(o, i, j) = s;
            }
    return y;
}

// Reduces any node to a scalar through a fixed random weighting so every
// output element carries a distinct gradient.
NodeId weighted_sum(Graph& g, NodeId x, NamedTensors& inputs, Rng& rng) {
    const auto shape = g.node(x).shape;
    inputs["r"] = random_tensor(shape, rng);
    return g.mean(g.mul(x, g.input("r", shape)));
}

struct OpCase {
    std::string name;
    std::function<NodeId(Graph&, ParamStore&, Rng&)> build;  // returns the op output
};

std::vector<OpCase> op_cases(Rng& shape_rng) {
    // Hand-rolled shape generator: channels 1..4 (or 8 for group norm), even
    // spatial extents up to 16.
    auto pick = [&](std::int64_t lo, std::int64_t hi) { return static_cast<std::size_t>(shape_rng.uniform_int(lo, hi)); };
    const std::size_t C = pick(1, 4), O = pick(1, 8), H = 2 * pick(1, 8), W = 2 * pick(1, 8);
    auto p = [](ParamStore& ps, Graph& g, const std::string& n, Shape s, Rng& rng, double lo = -1, double hi = 1) {
        ps.add(n, random_tensor(s, rng, lo, hi));
        return g.param(n, s);
    };
    return {
        {"conv3x3", [=](Graph& g, ParamStore& ps, Rng& r) { return g.conv2d(p(ps, g, "x", {C, H, W}, r), p(ps, g, "w", {O, C, 3, 3}, r)); }},
        {"conv1x1", [=](Graph& g, ParamStore& ps, Rng& r) { return g.conv2d(p(ps, g, "x", {C, H, W}, r), p(ps, g, "w", {O, C, 1, 1}, r)); }},
        {"linear-vec", [=](Graph& g, ParamStore& ps, Rng& r) { return g.linear(p(ps, g, "w", {O, C * 3}, r), p(ps, g, "x", {C * 3}, r)); }},
        {"linear-mat", [=](Graph& g, ParamStore& ps, Rng& r) { return g.linear(p(ps, g, "w", {O, C}, r), p(ps, g, "x", {C, W}, r)); }},
        {"bias-add", [=](Graph& g, ParamStore& ps, Rng& r) { return g.bias_add(p(ps, g, "x", {C, H, W}, r), p(ps, g, "b", {C}, r)); }},
        {"silu", [=](Graph& g, ParamStore& ps, Rng& r) { return g.silu(p(ps, g, "x", {C, H, W}, r, -3, 3)); }},
        {"group-norm", [=](Graph& g, ParamStore& ps, Rng& r) {
             const std::size_t ch = 8;
             return g.group_norm(p(ps, g, "x", {ch, H, W}, r), p(ps, g, "gamma", {ch}, r), p(ps, g, "beta", {ch}, r), 4);
         }},
        {"upsample", [=](Graph& g, ParamStore& ps, Rng& r) { return g.upsample2x(p(ps, g, "x", {C, H / 2, W / 2}, r)); }},
        {"downsample", [=](Graph& g, ParamStore& ps, Rng& r) { return g.downsample2x(p(ps, g, "x", {C, H, W}, r)); }},
        {"concat", [=](Graph& g, ParamStore& ps, Rng& r) { return g.concat(p(ps, g, "a", {C, H, W}, r), p(ps, g, "b", {O, H, W}, r)); }},
        {"add", [=](Graph& g, ParamStore& ps, Rng& r) { return g.add(p(ps, g, "a", {C, H, W}, r), p(ps, g, "b", {C, H, W}, r)); }},
        {"mul", [=](Graph& g, ParamStore& ps, Rng& r) { return g.mul(p(ps, g, "a", {C, H, W}, r), p(ps, g, "b", {C, H, W}, r)); }},
        {"scale", [=](Graph& g, ParamStore& ps, Rng& r) { return g.scale(p(ps, g, "x", {C, H, W}, r), -1.75); }},
        {"mean", [=](Graph& g, ParamStore& ps, Rng& r) { return g.mean(p(ps, g, "x", {C, H, W}, r)); }},
    };
}

} // namespace

TEST_CASE("tensor basics") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(shape_string(t.shape()) == "[2x3]");
    CHECK_THROWS_AS(Tensor({2, 0}), UsageError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), UsageError);
    CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
    CHECK_THROWS(t.reshaped({4, 2}));
    t[4] = std::nan("");
    CHECK_FALSE(t.all_finite());
}

TEST_CASE("primitive examples") {
    Rng rng(1);
    SUBCASE("identity kernel conv returns its input") {
        const Tensor x = random_tensor({3, 6, 5}, rng);
        Tensor w({3, 3, 3, 3});
        for (std::size_t c = 0; c < 3; ++c)
            w[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
        CHECK(testutil::bit_equal(kernels::conv2d(x, w), x));
    }
    SUBCASE("silu(0) = 0") {
        CHECK(kernels::silu(Tensor::vector({0.0}))[0] == 0.0);
    }
    SUBCASE("linear with 2I") {
        Tensor w({3, 3});
        for (std::size_t i = 0; i < 3; ++i)
            w[i * 3 + i] = 2.0;
        CHECK(kernels::linear(w, Tensor::vector({1, 2, 3})) == Tensor::vector({2, 4, 6}));
    }
    SUBCASE("conv matches direct loops") {
        for (int trial = 0; trial < 5; ++trial) {
            const std::size_t C = 1 + trial % 3, O = 2 + trial, H = 3 + trial, W = 7 - trial;
            const std::size_t k = trial % 2 ? 1 : 3;
            const Tensor x = random_tensor({C, H, W}, rng), w = random_tensor({O, C, k, k}, rng);
            CHECK(max_abs_diff(kernels::conv2d(x, w), naive_conv(x, w)) < 1e-12);
        }
    }
    SUBCASE("group norm matches the direct formula") {
        const Tensor x = random_tensor({4, 3, 5}, rng), gamma = random_tensor({4}, rng), beta = random_tensor({4}, rng);
        const Tensor y = kernels::group_norm(x, gamma, beta, 2);
        for (std::size_t g = 0; g < 2; ++g) {
            double m = 0, v = 0;
            for (std::size_t i = 0; i < 30; ++i)
                m += x[g * 30 + i];
            m /= 30;
            for (std::size_t i = 0; i < 30; ++i)
                v += (x[g * 30 + i] - m) * (x[g * 30 + i] - m);
            v /= 30;
            for (std::size_t i = 0; i < 30; ++i) {
                const std::size_t c = (g * 30 + i) / 15;
                const double want = (x[g * 30 + i] - m) / std::sqrt(v + 1e-5) * gamma[c] + beta[c];
                CHECK(std::abs(y[g * 30 + i] - want) < 1e-12);
            }
        }
    }
}

TEST_CASE("backprop examples") {
    SUBCASE("sum(x^2) at 3 has gradient 6") {
        Graph g;
        const auto x = g.param("x", {1});
        const auto loss = g.mean(g.mul(x, x));
        ParamStore ps;
        ps.add("x", Tensor::scalar(3.0));
        const auto grads = backprop(g, loss, {}, ps);
        CHECK(grads.params.at("x")[0] == 6.0);
    }
    SUBCASE("L1 at its optimum has zero gradient") {
        Rng rng(2);
        Graph g;
        const auto w = g.param("w", {3, 4});
        const auto x = g.input("x", {4, 5});
        const auto loss = g.l1_loss(g.linear(w, x), g.input("target", {3, 5}));
        ParamStore ps;
        ps.add("w", random_tensor({3, 4}, rng));
        NamedTensors in{{"x", random_tensor({4, 5}, rng)}};
        in["target"] = kernels::linear(ps.get("w"), in.at("x"));
        const auto grads = backprop(g, loss, in, ps);
        for (double v : grads.params.at("w").values())
            CHECK(v == 0.0);
    }
    SUBCASE("non-scalar loss is rejected") {
        Graph g;
        const auto x = g.param("x", {2});
        ParamStore ps;
        ps.add("x", Tensor({2}, 1.0));
        CHECK_THROWS_AS(backprop(g, g.silu(x), {}, ps), UsageError);
    }
    SUBCASE("frozen parameters get no gradient entry") {
        Graph g;
        const auto a = g.param("a", {2});
        const auto b = g.param("b", {2});
        const auto loss = g.mean(g.mul(a, b));
        ParamStore ps;
        ps.add("a", Tensor({2}, 1.0));
        ps.add("b", Tensor({2}, 2.0), false);
        const auto grads = backprop(g, loss, {}, ps);
        CHECK(grads.params.count("a") == 1);
        CHECK(grads.params.count("b") == 0);
    }
}

TEST_CASE("eval errors name the node") {
    Graph g;
    const auto x = g.input("x", {2, 4, 4});
    const auto w = g.param("w", {3, 2, 3, 3});
    g.conv2d(x, w, "enc0.conv");
    ParamStore ps;
    ps.add("w", Tensor({3, 2, 3, 3}, 1e300));
    SUBCASE("input shape mismatch") {
        try {
            eval_graph(g, {{"x", Tensor({2, 4, 5})}}, ps);
            FAIL("expected an error");
        } catch (const UsageError& e) {
            CHECK(std::string(e.what()).find("'x'") != std::string::npos);
        }
    }
    SUBCASE("non-finite output") {
        try {
            eval_graph(g, {{"x", Tensor({2, 4, 4}, 1e300)}}, ps);
            FAIL("expected an error");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).find("enc0.conv") != std::string::npos);
        }
    }
    SUBCASE("builder rejects inconsistent shapes") {
        Graph h;
        const auto a = h.input("a", {2, 4, 4});
        const auto k = h.param("k", {3, 5, 3, 3});
        CHECK_THROWS_AS(h.conv2d(a, k, "bad"), UsageError);
        CHECK_THROWS_AS(h.add(a, h.input("b", {2, 4, 2})), UsageError);
    }
}

TEST_CASE("every primitive passes the finite-difference check on random shapes") {
    Rng shape_rng(11);
    for (int round = 0; round < 3; ++round) {
        for (const auto& op : op_cases(shape_rng)) {
            CAPTURE(op.name);
            CAPTURE(round);
            Rng rng(100 + static_cast<std::uint64_t>(round));
            Graph g;
            ParamStore ps;
            NamedTensors in;
            const auto out = op.build(g, ps, rng);
            const auto loss = g.node(out).shape == Shape{1} ? out : weighted_sum(g, out, in, rng);
            const auto report = grad_check(g, loss, in, ps, 1e-5);
            CHECK(report.checked == ps.trainable_value_count());
            CHECK(report.max_rel_error < 1e-4);
        }
    }
}

TEST_CASE("grad_check: quadratic and L1 away from kinks") {
    Rng rng(5);
    SUBCASE("quadratic") {
        Graph g;
        const auto x = g.param("x", {6});
        const auto loss = g.mean(g.mul(x, x));
        ParamStore ps;
        ps.add("x", random_tensor({6}, rng));
        CHECK(grad_check(g, loss, {}, ps, 1e-5).max_rel_error < 1e-9);
    }
    SUBCASE("L1 with residuals kept beyond 10 eps") {
        const double eps = 1e-5;
        Graph g;
        const auto w = g.param("w", {3, 4});
        const auto x = g.input("x", {4});
        const auto loss = g.l1_loss(g.linear(w, x), g.input("target", {3}));
        ParamStore ps;
        ps.add("w", random_tensor({3, 4}, rng));
        NamedTensors in{{"x", random_tensor({4}, rng)}};
        Tensor target = kernels::linear(ps.get("w"), in.at("x"));
        // Every residual sits at least 0.5 from zero, far beyond any 10*eps
        // perturbation of the prediction.
        for (std::size_t i = 0; i < 3; ++i)
            target[i] += (i % 2 ? 0.5 : -0.5) - rng.uniform(0, 0.5);
        in["target"] = target;
        const auto pred = kernels::linear(ps.get("w"), in.at("x"));
        for (std::size_t i = 0; i < 3; ++i)
            REQUIRE(std::abs(pred[i] - target[i]) > 10 * eps * 4);
        CHECK(grad_check(g, loss, in, ps, eps).max_rel_error < 1e-4);
    }
}

TEST_CASE("graph properties") {
    Rng rng(9);
    Graph g;
    const auto x = g.input("x", {2, 4, 4});
    const auto w = g.param("w", {3, 2, 3, 3});
    const auto b = g.param("b", {3});
    const auto h = g.silu(g.bias_add(g.conv2d(x, w), b));
    const auto unused = g.silu(x, "dead branch");
    const auto loss = g.l1_loss(h, g.input("target", {3, 4, 4}));
    ParamStore ps;
    ps.add("w", random_tensor({3, 2, 3, 3}, rng));
    ps.add("b", random_tensor({3}, rng));
    const NamedTensors in{{"x", random_tensor({2, 4, 4}, rng)}, {"target", random_tensor({3, 4, 4}, rng)}};

    SUBCASE("evaluation is pure") {
        const auto a1 = eval_graph(g, in, ps);
        const auto a2 = eval_graph(g, in, ps);
        for (std::size_t i = 0; i < g.size(); ++i)
            CHECK(testutil::bit_equal(a1[static_cast<NodeId>(i)], a2[static_cast<NodeId>(i)]));
    }
    SUBCASE("backward visits each ancestor of the loss once") {
        const auto grads = backprop(g, loss, in, ps);
        const std::set<NodeId> seen(grads.visited.begin(), grads.visited.end());
        CHECK(seen.size() == grads.visited.size());
        CHECK(seen.count(unused) == 0);
        CHECK(seen.count(loss) == 1);
        CHECK(seen.count(w) == 1);
        CHECK(grads.visited.size() == g.size() - 1);
    }
    SUBCASE("scaling the seed scales every gradient") {
        const auto acts = eval_graph(g, in, ps);
        const auto g1 = backprop(g, acts, loss, ps, 1.0);
        const auto g4 = backprop(g, acts, loss, ps, 4.0);
        const auto g3 = backprop(g, acts, loss, ps, 3.0);
        for (const auto& [name, t] : g1.params) {
            for (std::size_t i = 0; i < t.size(); ++i) {
                CHECK(g4.params.at(name)[i] == 4.0 * t[i]);
                CHECK(g3.params.at(name)[i] == doctest::Approx(3.0 * t[i]).epsilon(1e-14));
            }
        }
    }
}

TEST_CASE("concat gradients partition the output gradient") {
    Rng rng(12);
    const Tensor a = random_tensor({2, 3, 4}, rng), b = random_tensor({3, 3, 4}, rng), r = random_tensor({5, 3, 4}, rng);
    ParamStore none;
    Graph g1;
    const auto l1 = g1.mean(g1.mul(g1.silu(g1.concat(g1.input("a", {2, 3, 4}), g1.input("b", {3, 3, 4}))),
                                   g1.input("r", {5, 3, 4})));
    const auto ga = backprop(g1, l1, {{"a", a}, {"b", b}, {"r", r}}, none);
    Graph g2;
    const auto l2 = g2.mean(g2.mul(g2.silu(g2.input("c", {5, 3, 4})), g2.input("r", {5, 3, 4})));
    const auto gc = backprop(g2, l2, {{"c", kernels::concat(a, b)}, {"r", r}}, none);
    CHECK(testutil::bit_equal(kernels::concat(ga.inputs.at("a"), ga.inputs.at("b")), gc.inputs.at("c")));
}

TEST_CASE("parameter container") {
    Rng rng(3);
    ParamStore ps;
    ps.add("enc.w", random_tensor({2, 3, 3, 3}, rng));
    ps.add("b", random_tensor({5}, rng), false);
    CHECK_THROWS_AS(ps.add("b", Tensor({1})), UsageError);
    CHECK_THROWS_AS(ps.set("b", Tensor({4})), UsageError);

    SUBCASE("round trip is bit-exact") {
        const auto bytes = ps.serialize();
        const auto back = ParamStore::deserialize(bytes);
        CHECK(back.names() == ps.names());
        for (const auto& n : ps.names())
            CHECK(testutil::bit_equal(back.get(n), ps.get(n)));
        CHECK(back.serialize() == bytes);
    }
    SUBCASE("layout") {
        const auto bytes = ps.serialize();
        binio::Reader r(bytes, "t");
        CHECK(r.magic("RDWT"));
        CHECK(r.u32() == 1);
        CHECK(r.u32() == 2);
        CHECK(r.string_u16() == "b");
        CHECK(r.u8() == 1);
        CHECK(r.u8() == 1);
        CHECK(r.u32() == 5);
    }
    SUBCASE("f32 entries are accepted") {
        binio::Writer w;
        w.magic("RDWT");
        w.u32(1);
        w.u32(1);
        w.string_u16("v");
        w.u8(0);
        w.u8(1);
        w.u32(2);
        w.f32(0.5f);
        w.f32(-2.0f);
        const auto back = ParamStore::deserialize(w.buffer());
        CHECK(back.get("v") == Tensor::vector({0.5, -2.0}));
    }
    SUBCASE("corruption is detected") {
        auto bytes = ps.serialize();
        auto truncated = bytes;
        truncated.resize(bytes.size() - 3);
        CHECK_THROWS_AS(ParamStore::deserialize(truncated), DataError);
        bytes[0] = 'X';
        CHECK_THROWS_AS(ParamStore::deserialize(bytes), DataError);
    }
    SUBCASE("content hash tracks values") {
        const auto h = ps.content_hash();
        ps.get_mut("b")[0] += 1.0;
        CHECK(ps.content_hash() != h);
    }
}
