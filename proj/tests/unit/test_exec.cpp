#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "voxlow/exec.hpp"

#include "../support/random_graph.hpp"

using namespace voxlow;
using voxlow::testing::random_tensor;

namespace {

// Second implementation: gathers each tap through an explicit bounds test on a padded index.
Tensor oracle_conv3d(const Tensor& x, const Tensor& w, const Tensor& b, std::array<int64_t, 3> s,
                     std::array<int64_t, 3> p) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    const int64_t Do = (xs[2] + 2 * p[0] - ws[2]) / s[0] + 1;
    const int64_t Ho = (xs[3] + 2 * p[1] - ws[3]) / s[1] + 1;
    const int64_t Wo = (xs[4] + 2 * p[2] - ws[4]) / s[2] + 1;
    Tensor y{Shape{xs[0], ws[0], Do, Ho, Wo}};
    for (int64_t n = 0; n < xs[0]; ++n)
        for (int64_t o = 0; o < ws[0]; ++o)
            for (int64_t d = 0; d < Do; ++d)
                for (int64_t h = 0; h < Ho; ++h)
                    for (int64_t q = 0; q < Wo; ++q) {
                        long double acc = b.at({o});
                        for (int64_t c = 0; c < xs[1]; ++c)
                            for (int64_t i = 0; i < ws[2]; ++i)
                                for (int64_t j = 0; j < ws[3]; ++j)
                                    for (int64_t k = 0; k < ws[4]; ++k) {
                                        const int64_t zd = d * s[0] - p[0] + i, zh = h * s[1] - p[1] + j,
                                                      zw = q * s[2] - p[2] + k;
                                        const bool in = zd >= 0 && zd < xs[2] && zh >= 0 && zh < xs[3] && zw >= 0 &&
                                                        zw < xs[4];
                                        const double v = in ? x.at({n, c, zd, zh, zw}) : 0.0;
                                        acc += static_cast<long double>(v) * w.at({o, c, i, j, k});
                                    }
                        y.at({n, o, d, h, q}) = static_cast<float>(acc);
                    }
    return y;
}

Graph single(const Node& n, const Shape& in) {
    Graph g;
    g.inputs.push_back({"x", in});
    g.nodes.push_back(n);
    g.outputs = {n.id};
    return g;
}

} // namespace

TEST(Conv3D, IdentityKernel) {
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor(Shape{1, 3, 2, 4, 5}, rng);
    Tensor w{Shape{3, 3, 1, 1, 1}};
    for (int64_t c = 0; c < 3; ++c) w.at({c, c, 0, 0, 0}) = 1.0f;
    EXPECT_TRUE(conv3d(x, w, Tensor{Shape{3}}, {1, 1, 1}, {0, 0, 0}).bit_equal(x));
}

TEST(Conv3D, OnesKernelCountsInRangeTaps) {
    const Tensor x{Shape{1, 1, 3, 3, 3}, 1.0f};
    const Tensor w{Shape{1, 1, 3, 3, 3}, 1.0f};
    const Tensor y = conv3d(x, w, Tensor{Shape{1}}, {1, 1, 1}, {1, 1, 1});
    EXPECT_EQ(y.at({0, 0, 1, 1, 1}), 27.0f);
    EXPECT_EQ(y.at({0, 0, 0, 0, 0}), 8.0f);
    EXPECT_EQ(y.at({0, 0, 0, 1, 1}), 18.0f);
}

TEST(Conv3D, ZeroWeightsGiveBias) {
    std::mt19937_64 rng(2);
    const Tensor y = conv3d(random_tensor(Shape{1, 2, 3, 3, 3}, rng), Tensor{Shape{1, 2, 2, 2, 2}},
                            Tensor{Shape{1}, 5.0f}, {1, 1, 1}, {0, 0, 0});
    for (float v : y.data()) EXPECT_EQ(v, 5.0f);
}

TEST(Conv3D, ShapeMismatch) {
    EXPECT_THROW(conv3d(Tensor{Shape{1, 2, 3, 3, 3}}, Tensor{Shape{1, 3, 1, 1, 1}}, Tensor{Shape{1}}, {1, 1, 1},
                        {0, 0, 0}),
                 ShapeError);
}

TEST(Conv3D, MatchesOracleOverRandomConfigs) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int64_t> ext(1, 5), k(1, 3), st(1, 2);
    for (int t = 0; t < 60; ++t) {
        const Shape xs{1, ext(rng), ext(rng) + 1, ext(rng) + 2, ext(rng) + 2};
        const std::array<int64_t, 3> ks{std::min(k(rng), xs[2]), std::min(k(rng), xs[3]), std::min(k(rng), xs[4])};
        const std::array<int64_t, 3> ss{st(rng), st(rng), st(rng)};
        const std::array<int64_t, 3> ps{ks[0] - 1, ks[1] / 2, 0};
        const Tensor x = random_tensor(xs, rng);
        const Tensor w = random_tensor(Shape{ext(rng), xs[1], ks[0], ks[1], ks[2]}, rng);
        const Tensor b = random_tensor(Shape{w.shape()[0]}, rng);
        EXPECT_LE(max_abs_diff(conv3d(x, w, b, ss, ps), oracle_conv3d(x, w, b, ss, ps)), 1e-6);
    }
}

TEST(Conv2D, IdentityOnesAndStride) {
    std::mt19937_64 rng(4);
    const Tensor x = random_tensor(Shape{2, 2, 4, 4}, rng);
    Tensor id{Shape{2, 2, 1, 1}};
    id.at({0, 0, 0, 0}) = id.at({1, 1, 0, 0}) = 1.0f;
    EXPECT_TRUE(conv2d(x, id, Tensor{Shape{2}}, {1, 1}, {0, 0}).bit_equal(x));

    const Tensor ones = conv2d(Tensor{Shape{1, 1, 3, 3}, 1.0f}, Tensor{Shape{1, 1, 3, 3}, 1.0f}, Tensor{Shape{1}},
                               {1, 1}, {1, 1});
    EXPECT_EQ(ones.at({0, 0, 1, 1}), 9.0f);
    EXPECT_EQ(ones.at({0, 0, 0, 0}), 4.0f);

    EXPECT_EQ(conv2d(Tensor{Shape{1, 1, 8, 6}}, Tensor{Shape{3, 1, 3, 3}}, Tensor{Shape{3}}, {2, 2}, {1, 1}).shape(),
              (Shape{1, 3, 4, 3}));
}

TEST(Conv3D, LinearityWithoutBias) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> alpha(-3.0, 3.0);
    for (int t = 0; t < 10; ++t) {
        const Tensor x = random_tensor(Shape{1, 2, 4, 5, 5}, rng);
        const Tensor w = random_tensor(Shape{3, 2, 3, 3, 3}, rng);
        const float a = static_cast<float>(alpha(rng));
        Tensor ax = x;
        for (float& v : ax.data()) v *= a;
        const Tensor y = conv3d(x, w, Tensor{Shape{3}}, {1, 1, 1}, {1, 1, 1});
        const Tensor ya = conv3d(ax, w, Tensor{Shape{3}}, {1, 1, 1}, {1, 1, 1});
        for (int64_t i = 0; i < y.numel(); ++i) {
            const double want = static_cast<double>(a) * y.data()[i];
            EXPECT_LE(std::abs(ya.data()[i] - want), 1e-6 * std::max(1.0, std::abs(want)));
        }
    }
}

TEST(Conv3D, TranslationShiftsInterior) {
    std::mt19937_64 rng(6);
    const Tensor x = random_tensor(Shape{1, 2, 3, 6, 8}, rng);
    Tensor shifted{x.shape()};
    for (int64_t c = 0; c < 2; ++c)
        for (int64_t d = 0; d < 3; ++d)
            for (int64_t h = 0; h < 6; ++h)
                for (int64_t q = 1; q < 8; ++q) shifted.at({0, c, d, h, q}) = x.at({0, c, d, h, q - 1});
    const Tensor w = random_tensor(Shape{2, 2, 3, 3, 3}, rng);
    const Tensor y = conv3d(x, w, Tensor{Shape{2}}, {1, 1, 1}, {1, 1, 1});
    const Tensor ys = conv3d(shifted, w, Tensor{Shape{2}}, {1, 1, 1}, {1, 1, 1});
    // Outputs whose receptive field stays clear of both W borders.
    for (int64_t o = 0; o < 2; ++o)
        for (int64_t d = 0; d < 3; ++d)
            for (int64_t h = 0; h < 6; ++h)
                for (int64_t q = 2; q < 7; ++q) EXPECT_EQ(ys.at({0, o, d, h, q}), y.at({0, o, d, h, q - 1}));
}

TEST(RunGraph, ReluAndConcat) {
    Graph g = single(Node{"r", ReluAttrs{}, {"x"}, "", ""}, Shape{2});
    const auto r = run_graph(g, {{"x", Tensor{Shape{2}, {-1.0f, 2.0f}}}});
    EXPECT_TRUE(r.outputs.at("r").bit_equal(Tensor{Shape{2}, {0.0f, 2.0f}}));

    std::mt19937_64 rng(7);
    Graph c;
    c.inputs = {{"a", Shape{1, 2, 4, 4}}, {"b", Shape{1, 3, 4, 4}}};
    c.nodes.push_back({"cat", ConcatAttrs{1}, {"a", "b"}, "", ""});
    c.outputs = {"cat"};
    const Tensor a = random_tensor(Shape{1, 2, 4, 4}, rng), b = random_tensor(Shape{1, 3, 4, 4}, rng);
    const Tensor y = run_graph(c, {{"a", a}, {"b", b}}).outputs.at("cat");
    ASSERT_EQ(y.shape(), (Shape{1, 5, 4, 4}));
    for (int64_t ch = 0; ch < 5; ++ch)
        for (int64_t h = 0; h < 4; ++h)
            for (int64_t q = 0; q < 4; ++q)
                EXPECT_EQ(y.at({0, ch, h, q}), ch < 2 ? a.at({0, ch, h, q}) : b.at({0, ch - 2, h, q}));
}

TEST(RunGraph, SliceAddUpsample) {
    std::mt19937_64 rng(8);
    Graph g;
    g.inputs = {{"x", Shape{1, 4, 2, 3}}};
    g.nodes.push_back({"s", ChannelSliceAttrs{1, 2}, {"x"}, "", ""});
    g.nodes.push_back({"a", AddAttrs{}, {"s", "s", "s"}, "", ""});
    g.nodes.push_back({"u", UpsampleAttrs{2, 3}, {"a"}, "", ""});
    g.outputs = {"u"};
    const Tensor x = random_tensor(g.inputs[0].shape, rng);
    const Tensor y = run_graph(g, {{"x", x}}).outputs.at("u");
    ASSERT_EQ(y.shape(), (Shape{1, 2, 4, 9}));
    for (int64_t c = 0; c < 2; ++c)
        for (int64_t h = 0; h < 4; ++h)
            for (int64_t q = 0; q < 9; ++q) {
                const float v = x.at({0, c + 1, h / 2, q / 3});
                EXPECT_EQ(y.at({0, c, h, q}), v + v + v);
            }
}

TEST(RunGraph, ThreeLayerConv3DChainMatchesOracle) {
    std::mt19937_64 rng(9);
    Graph g;
    g.inputs = {{"x", Shape{1, 2, 4, 6, 6}}};
    const std::array<int64_t, 4> ch{2, 3, 4, 2};
    std::string prev = "x";
    for (int l = 0; l < 3; ++l) {
        const std::string id = "c" + std::to_string(l), w = id + ".w";
        g.weights.emplace(w, random_tensor(Shape{ch[l + 1], ch[l], 3, 3, 3}, rng, -0.3, 0.3));
        g.weights.emplace(w + ".bias", random_tensor(Shape{ch[l + 1]}, rng));
        g.nodes.push_back({id, Conv3DAttrs{ch[l + 1], {3, 3, 3}, {1, 1, 1}, {1, 1, 1}}, {prev}, w, ""});
        prev = id;
    }
    g.outputs = {prev};
    const Tensor x = random_tensor(g.inputs[0].shape, rng);
    Tensor want = x;
    for (int l = 0; l < 3; ++l) {
        const std::string w = "c" + std::to_string(l) + ".w";
        want = oracle_conv3d(want, g.weights.at(w), g.weights.at(w + ".bias"), {1, 1, 1}, {1, 1, 1});
    }
    const auto r = run_graph(g, {{"x", x}});
    EXPECT_LE(max_abs_diff(r.outputs.at(prev), want), 1e-6);
    for (const auto& [id, t] : r.node_seconds) EXPECT_GE(t, 0.0) << id;
}

TEST(RunGraph, DeterministicAcrossRuns) {
    std::mt19937_64 rng(10);
    for (int i = 0; i < 20; ++i) {
        const Graph g = voxlow::testing::random_graph(rng);
        const TensorMap in = voxlow::testing::random_inputs(g, rng);
        const auto a = run_graph(g, in), b = run_graph(g, in);
        for (const auto& [id, t] : a.outputs) EXPECT_TRUE(t.bit_equal(b.outputs.at(id)));
    }
}

TEST(RunGraph, ErrorsNameTheProblem) {
    Graph g = single(Node{"r", ReluAttrs{}, {"x"}, "", ""}, Shape{1, 2});
    EXPECT_THROW(run_graph(g, {{"x", Tensor{Shape{1, 3}}}}), ExecError);
    EXPECT_THROW(run_graph(g, {}), ExecError);

    Graph c = single(Node{"conv", Conv2DAttrs{1, {1, 1}, {1, 1}, {0, 0}}, {"x"}, "w", ""}, Shape{1, 1, 2, 2});
    try {
        run_graph(c, {{"x", Tensor{Shape{1, 1, 2, 2}}}});
        FAIL() << "expected ExecError";
    } catch (const ExecError& e) {
        EXPECT_NE(std::string(e.what()).find("conv"), std::string::npos);
    }
}

TEST(RunGraph, HookSeesEveryTensor) {
    Graph g = single(Node{"r", ReluAttrs{}, {"x"}, "", ""}, Shape{2});
    std::vector<std::string> seen;
    ExecOptions opts;
    opts.on_tensor = [&](const std::string& name, const Tensor&) { seen.push_back(name); };
    run_graph(g, {{"x", Tensor{Shape{2}}}}, opts);
    EXPECT_EQ(seen, (std::vector<std::string>{"x", "r"}));
}

TEST(FakeQuantize, RoundingBoundAndClamp) {
    const double scale = 0.01;
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> ud(-1.27, 1.27);
    for (int i = 0; i < 1000; ++i) {
        const float x = static_cast<float>(ud(rng));
        EXPECT_LE(std::abs(fake_quantize(x, scale) - x), scale / 2 + 1e-7);
    }
    EXPECT_FLOAT_EQ(fake_quantize(5.0f, scale), 1.27f);
    EXPECT_FLOAT_EQ(fake_quantize(-5.0f, scale), -1.27f);
}
