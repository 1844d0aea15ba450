#include <gtest/gtest.h>

#include <cmath>

#include "relaynet/modem.hpp"

using namespace relaynet;

// Independent oracle: the labeling must coincide with the reflected binary
// gray code g(a) = a XOR (a >> 1), bit c-1.
TEST(Modem, GrayCodeMatchesReflectedOracle) {
    for (int a = 0; a < 256; ++a)
        for (int c = 1; c <= 8; ++c)
            EXPECT_EQ(bit_of_symbol(a, c), ((a ^ (a >> 1)) >> (c - 1)) & 1)
                << "a=" << a << " c=" << c;
}

TEST(Modem, GrayAdjacency) {
    // Adjacent constellation points differ in exactly one transmitted bit.
    for (int total = 1; total <= 8; ++total) {
        const int P = 1 << total;
        for (int a = 0; a + 1 < P; ++a) {
            int flips = 0;
            for (int c = 1; c <= total; ++c)
                flips += bit_of_symbol(a, c) != bit_of_symbol(a + 1, c);
            EXPECT_EQ(flips, 1) << "total=" << total << " a=" << a;
        }
    }
}

TEST(Modem, SymbolValues) {
    ModulationSpec spec(2, 1);  // 4-PAM
    EXPECT_EQ(spec.points(), 4);
    EXPECT_DOUBLE_EQ(spec.symbol_value(0), -1.0);
    EXPECT_DOUBLE_EQ(spec.symbol_value(1), -1.0 / 3.0);
    EXPECT_DOUBLE_EQ(spec.symbol_value(2), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(spec.symbol_value(3), 1.0);
    EXPECT_NEAR(spec.symbol_power(), 5.0 / 9.0, 1e-15);
}

TEST(Modem, BitIndexStacking) {
    // User 1 owns the most significant bits; within a user, larger b is
    // more significant so that the mB - b fold chain reaches bit b.
    ModulationSpec s21(2, 1);
    EXPECT_EQ(s21.bit_index(1, 1), 2);
    EXPECT_EQ(s21.bit_index(2, 1), 1);
    ModulationSpec s22(2, 2);
    EXPECT_EQ(s22.bit_index(1, 1), 3);
    EXPECT_EQ(s22.bit_index(1, 2), 4);
    EXPECT_EQ(s22.bit_index(2, 1), 1);
    EXPECT_EQ(s22.bit_index(2, 2), 2);
}

TEST(Modem, SpecValidation) {
    EXPECT_THROW(ModulationSpec(0, 1), config_error);
    EXPECT_THROW(ModulationSpec(1, 0), config_error);
    EXPECT_THROW(ModulationSpec(5, 4), config_error);  // 20 bits
    EXPECT_NO_THROW(ModulationSpec(4, 4));
}

TEST(Modem, FoldingFunctionValues) {
    // f(x) = 2 sqrt(x^2 + eps^2) - 1 with eps = 0.01.
    EXPECT_NEAR(f_chain(0.0, 1, 0.01), -0.98, 1e-15);
    EXPECT_NEAR(f_chain(0.75, 1, 0.01), 0.5001333274, 1e-9);
    EXPECT_DOUBLE_EQ(f_chain(0.37, 0, 0.01), 0.37);  // zero folds: identity
    // Two folds by hand: f(f(0.75)).
    const double once = 2.0 * std::sqrt(0.75 * 0.75 + 1e-4) - 1.0;
    EXPECT_NEAR(f_chain(0.75, 2, 0.01), 2.0 * std::sqrt(once * once + 1e-4) - 1.0, 1e-15);
}

TEST(Modem, FoldingDerivativeMatchesFiniteDifference) {
    for (double x : {-0.9, -0.3, 0.05, 0.4, 1.2})
        for (int z : {1, 2, 3}) {
            const double h = 1e-7;
            const double fd = (f_chain(x + h, z, 0.01) - f_chain(x - h, z, 0.01)) / (2 * h);
            EXPECT_NEAR(f_chain_derivative(x, z, 0.01), fd, 1e-6) << "x=" << x << " z=" << z;
        }
}

TEST(Modem, FoldCounts) {
    ModulationSpec spec(2, 2);
    EXPECT_EQ(fold_count(spec, 1, 1, ReceiverKind::standard), 1);
    EXPECT_EQ(fold_count(spec, 1, 2, ReceiverKind::standard), 0);
    EXPECT_EQ(fold_count(spec, 2, 1, ReceiverKind::standard), 3);
    EXPECT_EQ(fold_count(spec, 2, 2, ReceiverKind::standard), 2);
    // Low complexity: every user applies the single-user count B - b.
    EXPECT_EQ(fold_count(spec, 2, 1, ReceiverKind::low_complexity), 1);
    EXPECT_EQ(fold_count(spec, 2, 2, ReceiverKind::low_complexity), 0);
}

TEST(Modem, DecideTieBreak) {
    EXPECT_EQ(decide(0.4), 0);
    EXPECT_EQ(decide(-0.4), 1);
    EXPECT_EQ(decide(0.0), 0);  // tie decides 0
}

// A noiseless symbol through the standard receiver chain must recover every
// bit of every user, for every constellation size up to 8 total bits.
TEST(Modem, NoiselessRoundTrip) {
    // The epsilon smoothing biases each fold by up to 2*eps, doubled per
    // remaining fold; exact recovery is the eps -> 0 property, so a tiny
    // eps is used here (0.01 provably flips the deepest bit at 256 points).
    for (int M = 1; M <= 8; ++M)
        for (int B = 1; M * B <= 8; ++B) {
            ModulationSpec spec(M, B, 1e-9);
            for (int a = 0; a < spec.points(); ++a) {
                const double rbar = scale(spec.symbol_value(a), 1.0, 0.0);
                for (int m = 1; m <= M; ++m)
                    for (int b = 1; b <= B; ++b) {
                        const int got =
                            decide(process_output(rbar, m, b, spec, ReceiverKind::standard));
                        EXPECT_EQ(got, user_bit_of_symbol(spec, a, m, b))
                            << "M=" << M << " B=" << B << " a=" << a << " m=" << m << " b=" << b;
                    }
            }
        }
}

TEST(Modem, ModulateRoundTrip) {
    ModulationSpec spec(3, 2);
    for (int a = 0; a < spec.points(); ++a) {
        Eigen::MatrixXi bits(spec.M, spec.B);
        for (int m = 1; m <= spec.M; ++m)
            for (int b = 1; b <= spec.B; ++b) bits(m - 1, b - 1) = user_bit_of_symbol(spec, a, m, b);
        EXPECT_DOUBLE_EQ(modulate(spec, bits), spec.symbol_value(a));
    }
}

TEST(Modem, ModulateFrameMatchesScalarPath) {
    ModulationSpec spec(2, 2);
    const BitFrame frame = BitFrame::random(spec, 200, 42);
    const Vec s = modulate_frame(spec, frame);
    for (int k = 0; k < frame.K(); ++k) EXPECT_DOUBLE_EQ(s[k], modulate(spec, frame.u[k]));
}

TEST(Modem, BitFrameDeterminism) {
    ModulationSpec spec(2, 1);
    const BitFrame a = BitFrame::random(spec, 64, 7), b = BitFrame::random(spec, 64, 7);
    for (int k = 0; k < 64; ++k) EXPECT_EQ(a.u[k], b.u[k]);
}

TEST(Modem, ClopperPearsonKnownValues) {
    // Zero errors in n trials: exact upper bound 1 - (alpha/2)^(1/n).
    const ConfidenceInterval zero = clopper_pearson(0, 100);
    EXPECT_DOUBLE_EQ(zero.low, 0.0);
    EXPECT_NEAR(zero.high, 1.0 - std::pow(0.025, 1.0 / 100.0), 1e-9);
    // All errors mirrors it.
    const ConfidenceInterval all = clopper_pearson(100, 100);
    EXPECT_DOUBLE_EQ(all.high, 1.0);
    EXPECT_NEAR(all.low, std::pow(0.025, 1.0 / 100.0), 1e-9);
    // Binomial symmetry: CI(k, n) = 1 - reversed CI(n-k, n).
    const ConfidenceInterval a = clopper_pearson(30, 100), b = clopper_pearson(70, 100);
    EXPECT_NEAR(a.low, 1.0 - b.high, 1e-9);
    EXPECT_NEAR(a.high, 1.0 - b.low, 1e-9);
    // Bracketing.
    EXPECT_LT(a.low, 0.30);
    EXPECT_GT(a.high, 0.30);
}

TEST(Modem, BerCounterExactRates) {
    BerCounter counter(2, 1);
    Eigen::MatrixXi truth(2, 1), dec(2, 1);
    truth << 1, 0;
    dec << 1, 0;
    for (int i = 0; i < 3; ++i) counter.add(truth, dec);  // no errors
    dec << 0, 0;
    counter.add(truth, dec);  // one error for user 1
    const BerReport rep = counter.report();
    EXPECT_EQ(rep.trials, 4);
    EXPECT_DOUBLE_EQ(rep.rate(0, 0), 0.25);
    EXPECT_DOUBLE_EQ(rep.rate(1, 0), 0.0);
    EXPECT_DOUBLE_EQ(rep.worst, 0.25);
    EXPECT_EQ(rep.worst_m, 0);

    BerCounter other(2, 1);
    other.add(truth, dec);
    counter.merge(other);
    EXPECT_EQ(counter.trials(), 5);
    EXPECT_EQ(counter.worst_errors(), 2);
}
