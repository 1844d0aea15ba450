#pragma once

// Cascade relay network description: layered DAG of channel gains between
// a single base station, relay layers and the receivers.

#include <Eigen/Dense>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace relaynet {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Layered relay network. Layer i hears the BS (h[i]), every earlier layer
/// (F[i][l], l < i) and feeds each receiver through g[i][m]. All indices in
/// code are 0-based; the layer count is d() and the receiver count M.
struct Topology {
    std::vector<Vec> h;               // h[i]: BS -> layer i, length N_i
    std::vector<std::vector<Mat>> F;  // F[i][l]: layer l -> layer i (N_i x N_l), l < i
    std::vector<std::vector<Vec>> g;  // g[i][m]: layer i -> receiver m, length N_i
    int M = 0;
    Vec direct;  // optional BS -> receiver gains (reference mode only); empty otherwise

    int d() const { return static_cast<int>(h.size()); }
    int layer_size(int i) const { return static_cast<int>(h[i].size()); }

    int total_relays() const {
        int n = 0;
        for (int i = 0; i < d(); ++i) n += layer_size(i);
        return n;
    }

    bool has_direct() const {
        return direct.size() == M && M > 0 && (direct.array() != 0.0).any();
    }

    /// Checks mutual dimension consistency and finiteness of every gain.
    void validate() const {
        const int depth = d();
        if (static_cast<int>(F.size()) != depth || static_cast<int>(g.size()) != depth)
            throw config_error("topology: h/F/g layer counts disagree");
        for (int i = 0; i < depth; ++i) {
            if (!h[i].allFinite()) throw config_error("topology: non-finite h gain");
            if (static_cast<int>(F[i].size()) != i)
                throw config_error("topology: F[" + std::to_string(i) +
                                   "] must have exactly i predecessor blocks");
            for (int l = 0; l < i; ++l) {
                if (F[i][l].rows() != layer_size(i) || F[i][l].cols() != layer_size(l))
                    throw config_error("topology: F block dimension mismatch");
                if (!F[i][l].allFinite()) throw config_error("topology: non-finite F gain");
            }
            if (static_cast<int>(g[i].size()) != M)
                throw config_error("topology: g receiver count mismatch");
            for (int m = 0; m < M; ++m) {
                if (g[i][m].size() != layer_size(i))
                    throw config_error("topology: g vector length mismatch");
                if (!g[i][m].allFinite()) throw config_error("topology: non-finite g gain");
            }
        }
        if (direct.size() != 0 && direct.size() != M)
            throw config_error("topology: direct gain vector length mismatch");
    }
};

/// Trainable state of the network: per-relay gain/bias plus the per-receiver
/// affine scaling. Flattens to the parameter vector in the order
/// [w_1..w_d, rx_w, b_1..b_d, rx_b].
struct RelayParams {
    std::vector<Vec> w;
    std::vector<Vec> b;
    Vec rx_w;
    Vec rx_b;

    static RelayParams zeros(const Topology& t) {
        RelayParams p;
        p.w.resize(t.d());
        p.b.resize(t.d());
        for (int i = 0; i < t.d(); ++i) {
            p.w[i] = Vec::Zero(t.layer_size(i));
            p.b[i] = Vec::Zero(t.layer_size(i));
        }
        p.rx_w = Vec::Ones(t.M);
        p.rx_b = Vec::Zero(t.M);
        return p;
    }

    void validate(const Topology& t) const {
        if (static_cast<int>(w.size()) != t.d() || static_cast<int>(b.size()) != t.d())
            throw config_error("params: layer count mismatch");
        for (int i = 0; i < t.d(); ++i) {
            if (w[i].size() != t.layer_size(i) || b[i].size() != t.layer_size(i))
                throw config_error("params: w/b length mismatch at layer " + std::to_string(i));
            if (!w[i].allFinite() || !b[i].allFinite())
                throw config_error("params: non-finite entry");
        }
        if (rx_w.size() != t.M || rx_b.size() != t.M)
            throw config_error("params: receiver scale length mismatch");
    }

    int size() const {
        int n = 0;
        for (const auto& v : w) n += static_cast<int>(v.size());
        return 2 * n + 2 * static_cast<int>(rx_w.size());
    }

    Vec flatten() const {
        Vec out(size());
        int k = 0;
        for (const auto& v : w) { out.segment(k, v.size()) = v; k += static_cast<int>(v.size()); }
        out.segment(k, rx_w.size()) = rx_w; k += static_cast<int>(rx_w.size());
        for (const auto& v : b) { out.segment(k, v.size()) = v; k += static_cast<int>(v.size()); }
        out.segment(k, rx_b.size()) = rx_b;
        return out;
    }

    void unflatten(const Vec& x) {
        int k = 0;
        for (auto& v : w) { v = x.segment(k, v.size()); k += static_cast<int>(v.size()); }
        rx_w = x.segment(k, rx_w.size()); k += static_cast<int>(rx_w.size());
        for (auto& v : b) { v = x.segment(k, v.size()); k += static_cast<int>(v.size()); }
        rx_b = x.segment(k, rx_b.size());
    }
};

}  // namespace relaynet
