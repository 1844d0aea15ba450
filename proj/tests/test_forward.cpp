#include <gtest/gtest.h>

#include <cmath>

#include "relaynet/forward.hpp"
#include "relaynet/netgen.hpp"

using namespace relaynet;

namespace {

Topology single_relay(double h, double g) {
    Topology t;
    t.M = 1;
    t.h = {(Vec(1) << h).finished()};
    t.F = {{}};
    t.g = {{(Vec(1) << g).finished()}};
    t.validate();
    return t;
}

// Two layers of one relay each, layer 1 feeding layer 2.
Topology chain_of_two(double h1, double f21, double g2) {
    Topology t;
    t.M = 1;
    t.h = {(Vec(1) << h1).finished(), Vec::Zero(1)};
    t.F = {{}, {(Mat(1, 1) << f21).finished()}};
    t.g = {{Vec::Zero(1)}, {(Vec(1) << g2).finished()}};
    t.validate();
    return t;
}

}  // namespace

TEST(Forward, SingleRelayHandOracle) {
    const Topology t = single_relay(2.0, 3.0);
    RelayParams p = RelayParams::zeros(t);
    p.w[0][0] = 0.5;
    p.b[0][0] = 0.1;
    Vec s(1);
    s << 0.7;
    const ForwardTrace tr = forward(t, p, s, NoiseBatch::zero(t, 1));
    EXPECT_DOUBLE_EQ(tr.y[0](0, 0), 1.4);
    EXPECT_DOUBLE_EQ(tr.o[0](0, 0), std::tanh(0.5 * 1.4 + 0.1));
    EXPECT_DOUBLE_EQ(tr.r(0, 0), 3.0 * std::tanh(0.8));
}

TEST(Forward, SkipConnectionHandOracle) {
    // Layer 2 hears both the BS and layer 1.
    Topology t;
    t.M = 1;
    t.h = {(Vec(1) << 1.5).finished(), (Vec(1) << 0.25).finished()};
    t.F = {{}, {(Mat(1, 1) << -2.0).finished()}};
    t.g = {{(Vec(1) << 0.5).finished()}, {(Vec(1) << 1.0).finished()}};
    t.validate();
    RelayParams p = RelayParams::zeros(t);
    p.w[0][0] = 0.3;
    p.w[1][0] = -0.6;
    Vec s(1);
    s << -0.4;
    const ForwardTrace tr = forward(t, p, s, NoiseBatch::zero(t, 1));
    const double o1 = std::tanh(0.3 * (1.5 * -0.4));
    const double y2 = 0.25 * -0.4 + -2.0 * o1;
    const double o2 = std::tanh(-0.6 * y2);
    EXPECT_NEAR(tr.r(0, 0), 0.5 * o1 + 1.0 * o2, 1e-15);
}

TEST(Forward, MatchesLayerHelpers) {
    const Topology t = chain_of_two(1.2, 0.8, 2.0);
    RelayParams p = RelayParams::zeros(t);
    p.w[0][0] = 0.9;
    p.w[1][0] = 1.1;
    p.b[1][0] = -0.2;
    const int K = 5;
    Vec s = Vec::LinSpaced(K, -1.0, 1.0);
    NoiseBatch noise = NoiseBatch::draw(t, K, 0.2, 99);
    const ForwardTrace tr = forward(t, p, s, noise);
    for (int k = 0; k < K; ++k) {
        std::vector<Vec> outs;
        for (int i = 0; i < t.d(); ++i) {
            const Vec y = layer_input(t, i, s[k], outs, noise.relay[i].col(k), noise.sigma);
            EXPECT_NEAR(y[0], tr.y[i](0, k), 1e-14);
            outs.push_back(relay_output(y, p.w[i], p.b[i]));
            EXPECT_NEAR(outs[i][0], tr.o[i](0, k), 1e-14);
        }
    }
}

TEST(Forward, LinearRelaysSuperpose) {
    const Topology t = chain_of_two(1.2, 0.8, 2.0);
    RelayParams p = RelayParams::zeros(t);
    p.w[0][0] = 0.9;
    p.w[1][0] = 1.1;
    const NoiseBatch z1 = NoiseBatch::zero(t, 1);
    auto run = [&](double s) {
        Vec sv(1);
        sv << s;
        return forward_linear(t, p, sv, z1).r(0, 0);
    };
    EXPECT_NEAR(run(0.3) + run(0.5), run(0.8), 1e-14);
    EXPECT_NEAR(2.0 * run(0.4), run(0.8), 1e-14);
    // And the end-to-end gain is the product of the chain gains.
    EXPECT_NEAR(run(1.0), 1.2 * 0.9 * 0.8 * 1.1 * 2.0, 1e-14);
}

TEST(Forward, TanhOutputsBounded) {
    const Topology t = single_relay(100.0, 1.0);
    RelayParams p = RelayParams::zeros(t);
    p.w[0][0] = 50.0;
    Vec s(3);
    s << -1.0, 0.0, 1.0;
    const ForwardTrace tr = forward(t, p, s, NoiseBatch::zero(t, 3));
    for (int k = 0; k < 3; ++k) {
        EXPECT_LE(std::fabs(tr.o[0](0, k)), 1.0);
        EXPECT_TRUE(std::isfinite(tr.r(0, k)));
    }
}

TEST(Forward, NonFiniteLinearOutputThrows) {
    const Topology t = single_relay(1e308, 1.0);
    RelayParams p = RelayParams::zeros(t);
    p.w[0][0] = 1e308;
    Vec s(1);
    s << 1.0;
    EXPECT_THROW(forward_linear(t, p, s, NoiseBatch::zero(t, 1)), numerical_error);
}

TEST(Forward, NoiseDeterminism) {
    const Topology t = fixture_fig3();
    const NoiseBatch a = NoiseBatch::draw(t, 32, 0.1, 12345);
    const NoiseBatch b = NoiseBatch::draw(t, 32, 0.1, 12345);
    EXPECT_EQ(a.relay[0], b.relay[0]);
    EXPECT_EQ(a.rx, b.rx);
    const NoiseBatch c = NoiseBatch::draw(t, 32, 0.1, 12346);
    EXPECT_NE(a.rx, c.rx);
}

TEST(Forward, NoiseEntersScaledBySigma) {
    const Topology t = single_relay(1.0, 1.0);
    RelayParams p = RelayParams::zeros(t);
    p.w[0][0] = 0.5;
    NoiseBatch noise = NoiseBatch::zero(t, 1);
    noise.sigma = 0.2;
    noise.relay[0](0, 0) = 1.0;
    noise.rx(0, 0) = -3.0;
    Vec s(1);
    s << 0.0;
    const ForwardTrace tr = forward(t, p, s, noise);
    EXPECT_NEAR(tr.r(0, 0), std::tanh(0.5 * 0.2) + 0.2 * -3.0, 1e-15);
}

TEST(Forward, DirectReferenceGain) {
    Topology t = single_relay(1.0, 0.0);
    t.direct = (Vec(1) << 0.7).finished();
    RelayParams p = RelayParams::zeros(t);
    Vec s(1);
    s << 0.5;
    const ForwardTrace tr = forward(t, p, s, NoiseBatch::zero(t, 1));
    EXPECT_DOUBLE_EQ(tr.r(0, 0), 0.35);
}
