#pragma once

// Topology generation: the two hard-coded benchmark fixtures and random
// spatial sector networks with directional-antenna connectivity, r^-alpha
// path loss and Gaussian fading.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "relaynet/topology.hpp"

namespace relaynet {

/// Single-layer network: 4 relays, 2 receivers, all physical gains 1,
/// each receiver hearing a different pair of relays.
inline Topology fixture_fig3() {
    Topology t;
    t.M = 2;
    t.h = {(Vec(4) << 1, 1, 1, 1).finished()};
    t.F = {{}};
    t.g = {{(Vec(4) << 1, 1, 0, 0).finished(), (Vec(4) << 0, 0, 1, 1).finished()}};
    t.validate();
    return t;
}

/// Two layers of 5 relays and 3 receivers; only layer 2 feeds the receivers.
inline Topology fixture_fig5() {
    Topology t;
    t.M = 3;
    Mat F21(5, 5);
    F21 << 1, -0.5, -1, -0.5, 1,
        -0.5, 1, -0.5, 1, -0.5,
        -1, -0.5, 1, -0.5, -1,
        -0.5, 1, -0.5, 1, -0.5,
        1, -0.5, -1, -0.5, 1;
    t.h = {(Vec(5) << 1, 1, 1, 1, 1).finished(), Vec::Zero(5)};
    t.F = {{}, {F21}};
    t.g = {{Vec::Zero(5), Vec::Zero(5), Vec::Zero(5)},
           {(Vec(5) << 4, -1, 0, 0, 1).finished(), (Vec(5) << 0, 1, 4, -1, 0).finished(),
            (Vec(5) << -1, 0, 0, 1, 4).finished()}};
    t.validate();
    return t;
}

inline Topology fixture(const std::string& name) {
    if (name == "fig3") return fixture_fig3();
    if (name == "fig5") return fixture_fig5();
    throw config_error("unknown fixture: " + name);
}

/// Random sector network configuration. Angles in degrees, radius in meters.
struct SpatialConfig {
    int n_relays = 10;
    int m_receivers = 2;
    double radius = 100.0;
    double sector = 60.0;
    double alpha = 4.0;
    double antenna_width = 90.0;
    std::uint64_t seed = 0;
    bool direct_reference = false;  // adds a BS->receiver channel (no-relay baseline)

    void validate() const {
        if (radius <= 0 || sector <= 0 || sector > 360 || alpha <= 0 || antenna_width <= 0)
            throw config_error("spatial config: invalid geometry");
        if (n_relays < 0 || m_receivers < 1) throw config_error("spatial config: invalid counts");
    }
};

struct Point {
    double x = 0.0, y = 0.0;
    double norm() const { return std::hypot(x, y); }
};

/// BS at the origin, relays inside the sector, receivers on the cell edge.
struct Placement {
    Point bs;
    std::vector<Point> relays;
    std::vector<Point> receivers;
};

/// Relays uniform over the sector area, receivers equally dividing the arc.
inline Placement sample_placement(const SpatialConfig& cfg) {
    cfg.validate();
    Placement pl;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double half = cfg.sector / 2.0 * std::numbers::pi / 180.0;
    for (int n = 0; n < cfg.n_relays; ++n) {
        const double r = cfg.radius * std::sqrt(unit(rng));
        const double theta = -half + 2.0 * half * unit(rng);
        pl.relays.push_back({r * std::cos(theta), r * std::sin(theta)});
    }
    for (int m = 0; m < cfg.m_receivers; ++m) {
        const double theta = -half + 2.0 * half * (m + 0.5) / cfg.m_receivers;
        pl.receivers.push_back({cfg.radius * std::cos(theta), cfg.radius * std::sin(theta)});
    }
    return pl;
}

namespace detail {

/// True when `target` lies inside the closed cone at `apex` centered on
/// `axis` with the given full width.
inline bool in_cone(const Point& apex, const Point& axis_toward, const Point& target,
                    double width_deg) {
    const double ax = axis_toward.x - apex.x, ay = axis_toward.y - apex.y;
    const double tx = target.x - apex.x, ty = target.y - apex.y;
    const double an = std::hypot(ax, ay), tn = std::hypot(tx, ty);
    if (an == 0.0 || tn == 0.0) return false;
    const double cosang = (ax * tx + ay * ty) / (an * tn);
    const double limit = std::cos(width_deg / 2.0 * std::numbers::pi / 180.0);
    return cosang >= limit - 1e-12;
}

}  // namespace detail

/// Assembles the layered topology from a placement: an edge b -> a exists iff
/// b sits in a's receive cone (facing the BS) and a sits in b's transmit cone
/// (facing away from the BS); layer index is the longest-path depth from the
/// BS. Gains are r^-alpha * v with v standard normal.
inline Topology connect(const Placement& pl, const SpatialConfig& cfg, std::uint64_t fading_seed,
                        std::vector<int>* layer_of_relay = nullptr) {
    cfg.validate();
    const int n = static_cast<int>(pl.relays.size());
    std::mt19937_64 rng(fading_seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    // Path loss acts on power, so amplitudes decay with alpha/2; at the
    // default radius and alpha = 4 the edge power gain is 1e-8, matching the
    // cell-edge SNR convention 1e-8 / sigma^2.
    auto gain = [&](const Point& a, const Point& b) {
        const double r = std::hypot(a.x - b.x, a.y - b.y);
        return std::pow(r, -cfg.alpha / 2.0) * gauss(rng);
    };

    // Edge matrix between relays (row = receiver of the edge).
    std::vector<std::vector<bool>> edge(n, std::vector<bool>(n, false));
    const Point bs = pl.bs;
    for (int a = 0; a < n; ++a) {
        for (int b = 0; b < n; ++b) {
            if (a == b) continue;
            // b transmits into a: b in a's receive cone, a in b's transmit cone.
            const Point away_from_bs{2 * pl.relays[b].x - bs.x, 2 * pl.relays[b].y - bs.y};
            edge[a][b] = detail::in_cone(pl.relays[a], bs, pl.relays[b], cfg.antenna_width) &&
                         detail::in_cone(pl.relays[b], away_from_bs, pl.relays[a], cfg.antenna_width);
        }
    }
    // Boundary degeneracy: keep only the edge from the relay nearer the BS.
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b)
            if (edge[a][b] && edge[b][a]) {
                if (pl.relays[a].norm() >= pl.relays[b].norm())
                    edge[b][a] = false;
                else
                    edge[a][b] = false;
            }

    // Longest-path depth from the BS (every relay hears the BS directly).
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return pl.relays[a].norm() < pl.relays[b].norm();
    });
    // Edges always point away from the BS, so the distance order is a
    // topological order and depths can be filled in one pass.
    std::vector<int> depth(n, 1);
    for (int idx : order)
        for (int b = 0; b < n; ++b)
            if (edge[idx][b]) depth[idx] = std::max(depth[idx], depth[b] + 1);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
            if (edge[a][b] && depth[b] >= depth[a])
                throw numerical_error("connect: cycle or layering violation detected");

    const int d = n == 0 ? 0 : *std::max_element(depth.begin(), depth.end());
    std::vector<std::vector<int>> layers(d);
    for (int i : order) layers[depth[i] - 1].push_back(i);
    if (layer_of_relay) *layer_of_relay = depth;

    Topology t;
    t.M = static_cast<int>(pl.receivers.size());
    t.h.resize(d);
    t.F.resize(d);
    t.g.resize(d);
    // Fading draws in a fixed scan order for reproducibility: per relay in
    // layer order, first the BS link, then incoming relay links, then the
    // receiver links per layer, then (optionally) the direct reference links.
    std::vector<std::vector<double>> bs_gain(d);
    for (int i = 0; i < d; ++i) {
        const int ni = static_cast<int>(layers[i].size());
        t.h[i] = Vec::Zero(ni);
        t.F[i].resize(i);
        for (int l = 0; l < i; ++l) t.F[i][l] = Mat::Zero(ni, static_cast<int>(layers[l].size()));
        for (int a = 0; a < ni; ++a) {
            const int ra = layers[i][a];
            t.h[i][a] = gain(bs, pl.relays[ra]);
            for (int l = 0; l < i; ++l)
                for (int b = 0; b < static_cast<int>(layers[l].size()); ++b)
                    if (edge[ra][layers[l][b]])
                        t.F[i][l](a, b) = gain(pl.relays[ra], pl.relays[layers[l][b]]);
        }
    }
    for (int i = 0; i < d; ++i) {
        t.g[i].assign(t.M, Vec::Zero(static_cast<int>(layers[i].size())));
        for (int a = 0; a < static_cast<int>(layers[i].size()); ++a) {
            const int ra = layers[i][a];
            const Point away{2 * pl.relays[ra].x - bs.x, 2 * pl.relays[ra].y - bs.y};
            for (int m = 0; m < t.M; ++m)
                if (detail::in_cone(pl.relays[ra], away, pl.receivers[m], cfg.antenna_width))
                    t.g[i][m][a] = gain(pl.relays[ra], pl.receivers[m]);
        }
    }
    if (cfg.direct_reference) {
        t.direct = Vec::Zero(t.M);
        for (int m = 0; m < t.M; ++m) t.direct[m] = gain(bs, pl.receivers[m]);
    }
    t.validate();
    return t;
}

/// Convenience: placement + connectivity from one config. The fading seed is
/// derived from the placement seed so a single seed pins the whole network.
inline Topology spatial_network(const SpatialConfig& cfg, Placement* placement_out = nullptr,
                                std::vector<int>* layer_of_relay = nullptr) {
    const Placement pl = sample_placement(cfg);
    if (placement_out) *placement_out = pl;
    return connect(pl, cfg, cfg.seed ^ 0x9e3779b97f4a7c15ull, layer_of_relay);
}

}  // namespace relaynet
