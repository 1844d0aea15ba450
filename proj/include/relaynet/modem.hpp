#pragma once

// PAM modulation with gray-coded multi-user bit stacking, the f-chain
// receiver processing, hard decisions and Monte-Carlo BER accounting.

#include <cmath>
#include <cstdint>
#include <random>

#include "relaynet/topology.hpp"

namespace relaynet {

enum class ReceiverKind { standard, low_complexity };

/// M users, B bits per user per symbol; the constellation has 2^(MB) points
/// with maximal amplitude exactly 1. epsilon smooths the folding function.
struct ModulationSpec {
    int M = 1;
    int B = 1;
    double epsilon = 0.01;

    ModulationSpec() = default;
    ModulationSpec(int users, int bits, double eps = 0.01) : M(users), B(bits), epsilon(eps) {
        if (M < 1 || B < 1 || M * B > 16) throw config_error("modulation: need M,B >= 1 and M*B <= 16");
    }

    int total_bits() const { return M * B; }
    int points() const { return 1 << total_bits(); }

    /// Transmitted value of symbol index a: (2a - 2^MB + 1) / (2^MB - 1).
    double symbol_value(int a) const {
        return (2.0 * a - points() + 1) / (points() - 1);
    }

    /// Transmitted-bit index c (1-based) carrying bit b of user m (1-based).
    /// Chosen so that the standard receiver's mB - b fold chain lands on
    /// exactly this transmitted bit; users stack MSB-first, bits LSB-first.
    int bit_index(int m, int b) const { return (M - m) * B + b; }

    /// Mean symbol power E[s^2] for uniform bits, by exhaustive enumeration.
    double symbol_power() const {
        double acc = 0;
        for (int a = 0; a < points(); ++a) acc += symbol_value(a) * symbol_value(a);
        return acc / points();
    }
};

/// Gray-code bit c (1-based) of symbol index a: floor((a + 2^(c-1)) / 2^c) mod 2.
inline int bit_of_symbol(int a, int c) {
    return static_cast<int>(((static_cast<std::uint32_t>(a) + (1u << (c - 1))) >> c) & 1u);
}

/// Bit b of user m (both 1-based) carried by symbol index a.
inline int user_bit_of_symbol(const ModulationSpec& spec, int a, int m, int b) {
    return bit_of_symbol(a, spec.bit_index(m, b));
}

/// M x B binary matrix per time step.
struct BitFrame {
    std::vector<Eigen::MatrixXi> u;  // u[k]: M x B
    int K() const { return static_cast<int>(u.size()); }

    static BitFrame random(const ModulationSpec& spec, int K, std::uint64_t seed) {
        BitFrame f;
        f.u.resize(K);
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<int> bit(0, 1);
        for (int k = 0; k < K; ++k) {
            f.u[k].resize(spec.M, spec.B);
            for (int m = 0; m < spec.M; ++m)
                for (int b = 0; b < spec.B; ++b) f.u[k](m, b) = bit(rng);
        }
        return f;
    }
};

/// Symbol index whose gray labeling reproduces the given M x B bit matrix.
inline int symbol_index(const ModulationSpec& spec, const Eigen::MatrixXi& bits) {
    for (int a = 0; a < spec.points(); ++a) {
        bool match = true;
        for (int m = 1; m <= spec.M && match; ++m)
            for (int b = 1; b <= spec.B && match; ++b)
                if (user_bit_of_symbol(spec, a, m, b) != bits(m - 1, b - 1)) match = false;
        if (match) return a;
    }
    throw config_error("modulate: no symbol reproduces the bit pattern");
}

/// PAM-modulates one M x B bit matrix into a value in [-1, 1].
inline double modulate(const ModulationSpec& spec, const Eigen::MatrixXi& bits) {
    return spec.symbol_value(symbol_index(spec, bits));
}

inline Vec modulate_frame(const ModulationSpec& spec, const BitFrame& frame) {
    // Reverse lookup packed-bits -> symbol index, built once per call.
    std::vector<int> table(spec.points(), -1);
    for (int a = 0; a < spec.points(); ++a) {
        int packed = 0;
        for (int m = 1; m <= spec.M; ++m)
            for (int b = 1; b <= spec.B; ++b)
                packed = (packed << 1) | user_bit_of_symbol(spec, a, m, b);
        table[packed] = a;
    }
    Vec s(frame.K());
    for (int k = 0; k < frame.K(); ++k) {
        int packed = 0;
        for (int m = 0; m < spec.M; ++m)
            for (int b = 0; b < spec.B; ++b) packed = (packed << 1) | frame.u[k](m, b);
        s[k] = spec.symbol_value(table[packed]);
    }
    return s;
}

/// Receiver scaling: rbar = w * r + b.
inline double scale(double r, double rx_w, double rx_b) { return rx_w * r + rx_b; }

/// f(x) = 2 sqrt(x^2 + eps^2) - 1, composed z times; f^(0) is the identity.
inline double f_chain(double x, int z, double epsilon) {
    for (int t = 0; t < z; ++t) x = 2.0 * std::sqrt(x * x + epsilon * epsilon) - 1.0;
    return x;
}

/// Derivative of the z-fold f-chain at x.
inline double f_chain_derivative(double x, int z, double epsilon) {
    double deriv = 1.0;
    for (int t = 0; t < z; ++t) {
        const double root = std::sqrt(x * x + epsilon * epsilon);
        deriv *= 2.0 * x / root;
        x = 2.0 * root - 1.0;
    }
    return deriv;
}

/// Fold count of the output processing for bit b of user m (1-based).
inline int fold_count(const ModulationSpec& spec, int m, int b, ReceiverKind kind) {
    return kind == ReceiverKind::standard ? m * spec.B - b : spec.B - b;
}

/// q_{m,b} = f^(z)( -(2^MB - 1)/2^MB * rbar ) with z the receiver fold count.
inline double process_output(double rbar, int m, int b, const ModulationSpec& spec,
                             ReceiverKind kind) {
    const double prefactor = -(static_cast<double>(spec.points()) - 1) / spec.points();
    return f_chain(prefactor * rbar, fold_count(spec, m, b, kind), spec.epsilon);
}

/// Hard decision: bit 1 when the soft value is negative; tie at 0 decides 0.
inline int decide(double q) { return q < 0.0 ? 1 : 0; }

/// Clopper-Pearson two-sided confidence interval for k errors in n trials.
/// Implemented via bisection on the regularized incomplete beta function.
namespace detail {

inline double betacf(double a, double b, double x) {
    // Continued fraction for the incomplete beta function (Lentz).
    const double tiny = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-14) break;
    }
    return h;
}

inline double betai(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - std::exp(std::lgamma(a + b) - std::lgamma(b) - std::lgamma(a) +
                          b * std::log(1.0 - x) + a * std::log(x)) *
                     betacf(b, a, 1.0 - x) / b;
}

inline double beta_quantile(double a, double b, double p) {
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (betai(a, b, mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace detail

struct ConfidenceInterval {
    double low = 0.0;
    double high = 1.0;
};

inline ConfidenceInterval clopper_pearson(long errors, long trials, double confidence = 0.95) {
    const double alpha = 1.0 - confidence;
    ConfidenceInterval ci;
    ci.low = errors == 0 ? 0.0
                         : detail::beta_quantile(static_cast<double>(errors),
                                                 static_cast<double>(trials - errors + 1),
                                                 alpha / 2.0);
    ci.high = errors == trials
                  ? 1.0
                  : detail::beta_quantile(static_cast<double>(errors + 1),
                                          static_cast<double>(trials - errors), 1.0 - alpha / 2.0);
    return ci;
}

/// Per-(user, bit) error counts with rates, worst-case rate and per-rate
/// 95% Clopper-Pearson intervals. Accumulation is a plain sum, so partial
/// reports from concurrent workers can be merged in any order.
struct BerReport {
    Eigen::MatrixXd rate;                           // M x B
    std::vector<std::vector<ConfidenceInterval>> ci;  // [m][b]
    Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> errors;
    long trials = 0;
    double worst = 0.0;
    int worst_m = 0, worst_b = 0;  // 0-based

    ConfidenceInterval worst_ci() const { return ci[worst_m][worst_b]; }
};

class BerCounter {
public:
    BerCounter(int M, int B) : M_(M), B_(B) {
        errors_ = Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>::Zero(M, B);
    }

    void add(const Eigen::MatrixXi& truth, const Eigen::MatrixXi& decisions) {
        for (int m = 0; m < M_; ++m)
            for (int b = 0; b < B_; ++b)
                if (truth(m, b) != decisions(m, b)) ++errors_(m, b);
        ++trials_;
    }

    void merge(const BerCounter& other) {
        errors_ += other.errors_;
        trials_ += other.trials_;
    }

    long worst_errors() const { return errors_.maxCoeff(); }
    long trials() const { return trials_; }

    BerReport report() const {
        if (trials_ == 0) throw config_error("ber: no trials recorded");
        BerReport rep;
        rep.errors = errors_;
        rep.trials = trials_;
        rep.rate.resize(M_, B_);
        rep.ci.assign(M_, std::vector<ConfidenceInterval>(B_));
        for (int m = 0; m < M_; ++m)
            for (int b = 0; b < B_; ++b) {
                rep.rate(m, b) = static_cast<double>(errors_(m, b)) / trials_;
                rep.ci[m][b] = clopper_pearson(errors_(m, b), trials_);
                if (rep.rate(m, b) >= rep.worst) {
                    rep.worst = rep.rate(m, b);
                    rep.worst_m = m;
                    rep.worst_b = b;
                }
            }
        return rep;
    }

private:
    int M_, B_;
    Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> errors_;
    long trials_ = 0;
};

/// Decides every bit of every user from the received values r (M x K) using
/// the given params' receiver scaling, and counts errors against the frame.
inline void accumulate_ber(BerCounter& counter, const Mat& r, const RelayParams& params,
                           const BitFrame& frame, const ModulationSpec& spec, ReceiverKind kind) {
    const int K = frame.K();
    if (K == 0) throw config_error("ber: empty batch");
    Eigen::MatrixXi dec(spec.M, spec.B);
    for (int k = 0; k < K; ++k) {
        for (int m = 1; m <= spec.M; ++m) {
            const double rbar = scale(r(m - 1, k), params.rx_w[m - 1], params.rx_b[m - 1]);
            for (int b = 1; b <= spec.B; ++b)
                dec(m - 1, b - 1) = decide(process_output(rbar, m, b, spec, kind));
        }
        counter.add(frame.u[k], dec);
    }
}

inline BerReport ber(const Mat& r, const RelayParams& params, const BitFrame& frame,
                     const ModulationSpec& spec, ReceiverKind kind) {
    BerCounter counter(spec.M, spec.B);
    accumulate_ber(counter, r, params, frame, spec, kind);
    return counter.report();
}

}  // namespace relaynet
