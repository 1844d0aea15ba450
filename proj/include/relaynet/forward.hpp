#pragma once

// Forward propagation of a symbol batch through the cascade network, both the
// true tanh relays and the linearized relays used by the traditional
// optimizer. Traces keep every intermediate signal for backpropagation.

#include <cmath>
#include <random>

#include "relaynet/topology.hpp"

namespace relaynet {

/// Unit-variance Gaussian draws for every relay and receiver over a batch of
/// K symbols. The current sigma scales the draws at use time, so curriculum
/// stages can reuse the same underlying noise.
struct NoiseBatch {
    std::vector<Mat> relay;  // relay[i]: N_i x K
    Mat rx;                  // M x K
    double sigma = 0.0;
    int K = 0;

    static NoiseBatch zero(const Topology& t, int K) {
        NoiseBatch n;
        n.K = K;
        n.relay.resize(t.d());
        for (int i = 0; i < t.d(); ++i) n.relay[i] = Mat::Zero(t.layer_size(i), K);
        n.rx = Mat::Zero(t.M, K);
        return n;
    }

    static NoiseBatch draw(const Topology& t, int K, double sigma, std::uint64_t seed) {
        NoiseBatch n = zero(t, K);
        n.sigma = sigma;
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (int i = 0; i < t.d(); ++i)
            for (int a = 0; a < t.layer_size(i); ++a)
                for (int k = 0; k < K; ++k) n.relay[i](a, k) = gauss(rng);
        for (int m = 0; m < t.M; ++m)
            for (int k = 0; k < K; ++k) n.rx(m, k) = gauss(rng);
        return n;
    }
};

/// Every intermediate signal of one forward pass: relay inputs y, relay
/// outputs o, and the received values r, per time step.
struct ForwardTrace {
    std::vector<Mat> y;  // y[i]: N_i x K
    std::vector<Mat> o;  // o[i]: N_i x K
    Mat r;               // M x K
};

/// Input of layer i for one time step: y_i = h_i s + sum_{l<i} F_{i,l} o_l + sigma n_i.
inline Vec layer_input(const Topology& t, int i, double s,
                       const std::vector<Vec>& prior_outputs, const Vec& noise_draws,
                       double sigma) {
    if (noise_draws.size() != t.layer_size(i))
        throw config_error("layer_input: noise draw length mismatch");
    Vec y = t.h[i] * s;
    for (int l = 0; l < i; ++l) {
        if (prior_outputs[l].size() != t.layer_size(l))
            throw config_error("layer_input: prior output length mismatch");
        y += t.F[i][l] * prior_outputs[l];
    }
    y += sigma * noise_draws;
    return y;
}

/// o_i = tanh(diag(w_i) y_i + b_i); outputs strictly inside (-1, 1).
inline Vec relay_output(const Vec& y, const Vec& w, const Vec& b) {
    if (y.size() != w.size() || y.size() != b.size())
        throw config_error("relay_output: dimension mismatch");
    return (w.cwiseProduct(y) + b).array().tanh();
}

namespace detail {

template <bool Linear>
ForwardTrace forward_impl(const Topology& t, const RelayParams& p, const Vec& symbols,
                          const NoiseBatch& noise) {
    p.validate(t);
    const int K = static_cast<int>(symbols.size());
    if (noise.K != K) throw config_error("forward: noise batch length mismatch");
    const double sigma = noise.sigma;

    ForwardTrace tr;
    tr.y.resize(t.d());
    tr.o.resize(t.d());
    for (int i = 0; i < t.d(); ++i) {
        Mat y = t.h[i] * symbols.transpose();
        for (int l = 0; l < i; ++l) y.noalias() += t.F[i][l] * tr.o[l];
        y += sigma * noise.relay[i];
        Mat pre = p.w[i].asDiagonal() * y;
        pre.colwise() += p.b[i];
        tr.y[i] = std::move(y);
        if constexpr (Linear)
            tr.o[i] = std::move(pre);
        else
            tr.o[i] = pre.array().tanh();
        if (!tr.o[i].allFinite())
            throw numerical_error("forward: non-finite relay output at layer " +
                                  std::to_string(i + 1));
    }
    tr.r = Mat::Zero(t.M, K);
    for (int i = 0; i < t.d(); ++i)
        for (int m = 0; m < t.M; ++m) tr.r.row(m).noalias() += t.g[i][m].transpose() * tr.o[i];
    if (t.direct.size() == t.M) tr.r.noalias() += t.direct * symbols.transpose();
    tr.r += sigma * noise.rx;
    if (!tr.r.allFinite()) throw numerical_error("forward: non-finite received value");
    return tr;
}

}  // namespace detail

/// Full nonlinear forward pass of a symbol batch; deterministic given
/// (symbols, noise, params).
inline ForwardTrace forward(const Topology& t, const RelayParams& p, const Vec& symbols,
                            const NoiseBatch& noise) {
    return detail::forward_impl<false>(t, p, symbols, noise);
}

/// Forward pass with linear relays o = diag(w) y + b; validates the
/// closed forms of the traditional optimizer by simulation.
inline ForwardTrace forward_linear(const Topology& t, const RelayParams& p, const Vec& symbols,
                                   const NoiseBatch& noise) {
    return detail::forward_impl<true>(t, p, symbols, noise);
}

}  // namespace relaynet
