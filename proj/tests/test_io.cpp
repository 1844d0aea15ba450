#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "relaynet/io.hpp"
#include "relaynet/netgen.hpp"

using namespace relaynet;

namespace {

void expect_same(const Topology& a, const Topology& b) {
    ASSERT_EQ(a.d(), b.d());
    ASSERT_EQ(a.M, b.M);
    for (int i = 0; i < a.d(); ++i) {
        EXPECT_EQ(a.h[i], b.h[i]);
        for (int l = 0; l < i; ++l) EXPECT_EQ(a.F[i][l], b.F[i][l]);
        for (int m = 0; m < a.M; ++m) EXPECT_EQ(a.g[i][m], b.g[i][m]);
    }
    EXPECT_EQ(a.direct, b.direct);
}

}  // namespace

TEST(Io, FixtureTopologyRoundTrip) {
    const Topology t = fixture_fig5();
    expect_same(t, topology_from_json(to_json(t)));
}

TEST(Io, SpatialTopologyRoundTripIsExact) {
    // Random fading gains stress the double round-trip: the shortest
    // round-trip decimal representation must restore every bit.
    SpatialConfig cfg;
    cfg.n_relays = 25;
    cfg.seed = 3;
    cfg.direct_reference = true;
    const Topology t = spatial_network(cfg);
    // Serialize through text, not just the DOM.
    const json j = json::parse(to_json(t).dump());
    expect_same(t, topology_from_json(j));
}

TEST(Io, ParamsRoundTrip) {
    const Topology t = fixture_fig5();
    RelayParams p = RelayParams::zeros(t);
    std::mt19937_64 rng(17);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& v : p.w)
        for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = gauss(rng) * 1e3;
    for (auto& v : p.b)
        for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = gauss(rng) * 1e-7;
    for (Eigen::Index m = 0; m < p.rx_w.size(); ++m) p.rx_w[m] = gauss(rng);
    const RelayParams q = params_from_json(json::parse(to_json(p).dump()));
    for (std::size_t i = 0; i < p.w.size(); ++i) {
        EXPECT_EQ(p.w[i], q.w[i]);
        EXPECT_EQ(p.b[i], q.b[i]);
    }
    EXPECT_EQ(p.rx_w, q.rx_w);
    EXPECT_EQ(p.rx_b, q.rx_b);
}

TEST(Io, FileRoundTrip) {
    const std::string path = std::filesystem::temp_directory_path() / "relaynet_io_test.json";
    const Topology t = fixture_fig3();
    save_json(t, path);
    expect_same(t, load_topology(path));
    std::remove(path.c_str());
}

TEST(Io, MissingFileThrows) {
    EXPECT_THROW(load_topology("/nonexistent/topology.json"), config_error);
}
