#pragma once

// Traditional optimization treating relays as power-constrained linear
// amplifiers: closed-form SNR/power through the extended (tilde) matrices,
// the per-layer semidefinite-relaxed subproblem with the rank-one penalty,
// and the outer alternating / bisection / weight-balancing loops.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "relaynet/forward.hpp"
#include "relaynet/modem.hpp"
#include "relaynet/topology.hpp"

namespace relaynet {

class infeasible_error : public std::runtime_error {
public:
    explicit infeasible_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Extended network description: the cascade folded into per-layer extended
/// vectors/matrices so the SNR, powers and subproblem data become traces of
/// quadratic forms in one layer's gain vector.
///
/// Layers are 1-based here to stay close to the matrix recursions. The
/// extended state after layer i has dimension dim(i) = 1 + (N_1 + ... + N_i);
/// dim(0) = 1 (the transmitted symbol alone).
class ExtendedLinearModel {
public:
    ExtendedLinearModel(const Topology& topo, const RelayParams& params, double sigma,
                        double sigma_s2)
        : topo_(&topo), sigma_(sigma), sigma_s2_(sigma_s2) {
        for (int i = 0; i < topo.d(); ++i)
            if ((params.b[i].array() != 0.0).any())
                throw config_error("linear model requires zero biases");
        d_ = topo.d();
        cum_.assign(d_ + 1, 0);
        for (int i = 1; i <= d_; ++i) cum_[i] = cum_[i - 1] + topo.layer_size(i - 1);
        w_.resize(d_ + 1);
        for (int i = 1; i <= d_; ++i) w_[i] = params.w[i - 1];
        build_static();
        rebuild_products();
    }

    int layers() const { return d_; }
    int receivers() const { return topo_->M; }
    int total_relays() const { return cum_[d_]; }
    int dim(int i) const { return 1 + cum_[i]; }
    int layer_size(int i) const { return topo_->layer_size(i - 1); }
    double sigma() const { return sigma_; }
    double sigma2() const { return sigma_ * sigma_; }
    double sigma_s2() const { return sigma_s2_; }
    const Topology& topology() const { return *topo_; }

    const Vec& gain(int v) const { return w_[v]; }

    /// Replaces layer v's gains and refreshes every cached G product.
    void set_gain(int v, const Vec& w) {
        if (w.size() != layer_size(v)) throw config_error("set_gain: length mismatch");
        w_[v] = w;
        rebuild_products();
    }

    RelayParams params() const {
        RelayParams p = RelayParams::zeros(*topo_);
        for (int i = 1; i <= d_; ++i) p.w[i - 1] = w_[i];
        return p;
    }

    const Mat& tilde_F(int i) const { return tilde_F_[i]; }

    Vec tilde_w(int i) const {
        Vec w = Vec::Ones(dim(i));
        w.tail(layer_size(i)) = w_[i];
        return w;
    }

    const Vec& tilde_g(int m) const { return tilde_g_[m]; }

    /// G_{u,i} = prod_{i'=u}^{i} diag(w~_i') F~_i'; identity of dim(u-1) for u > i.
    Mat G(int u, int i) const {
        if (u > i) return Mat::Identity(dim(u - 1), dim(u - 1));
        return Gtab_[u][i];
    }

    /// End-to-end symbol gain seen by receiver m (the scalar g~_m^T G_{1,d}).
    double end_to_end_gain(int m) const { return (tilde_g_[m].transpose() * G(1, d_))(0, 0); }

    /// Row vector g^T G_{u+1,d} diag(w~_u) C~_u, length N_u: the layer-u
    /// noise footprint of the output combination g.
    Vec noise_row(const Vec& g, int u) const {
        Vec front = G(u + 1, d_).transpose() * g;  // dim(u)
        return front.tail(layer_size(u)).cwiseProduct(w_[u]);
    }

    /// Closed-form SNR at receiver m; the denominator is always >= 1.
    double snr(int m) const {
        const double signal = end_to_end_gain(m);
        double den = 1.0;
        for (int u = 1; u <= d_; ++u) den += noise_row(tilde_g_[m], u).squaredNorm();
        return signal * signal * sigma_s2_ / (sigma2() * den);
    }

    /// Noise denominator of the SNR (the Xi_m term).
    double noise_factor(int m) const {
        double den = 1.0;
        for (int u = 1; u <= d_; ++u) den += noise_row(tilde_g_[m], u).squaredNorm();
        return den;
    }

    /// Closed-form output power of global relay j (1-based across layers).
    double relay_power(int j) const {
        const Vec e = unit(j);
        const double signal = (e.transpose() * G(1, d_))(0, 0);
        double p = signal * signal * sigma_s2_;
        for (int u = 1; u <= d_; ++u) p += sigma2() * noise_row(e, u).squaredNorm();
        return p;
    }

    double max_relay_power() const {
        double p = 0.0;
        for (int j = 1; j <= total_relays(); ++j) p = std::max(p, relay_power(j));
        return p;
    }

    /// Indicator for relay j within the extended output vector (entry j+1).
    Vec unit(int j) const {
        Vec e = Vec::Zero(dim(d_));
        e[j] = 1.0;
        return e;
    }

    // --- subproblem building blocks for layer v ------------------------------

    /// alpha(g) = G_{v+1,d}^T g, the downstream footprint of g at layer v.
    Vec alpha(int v, const Vec& g) const { return G(v + 1, d_).transpose() * g; }

    /// L_{v,u}(g) for u < v; L_{v,v}(g) = diag(alpha) C~_v.
    Mat Lvu(int v, int u, const Vec& g) const {
        const Vec a = alpha(v, g);
        if (u == v) {
            Mat L = Mat::Zero(dim(v), layer_size(v));
            const int off = dim(v) - layer_size(v);
            for (int j = 0; j < layer_size(v); ++j) L(off + j, j) = a[off + j];
            return L;
        }
        Mat T = tilde_F_[v] * G(u + 1, v - 1);  // dim(v) x dim(u)
        Mat cols = T.rightCols(layer_size(u)) * w_[u].asDiagonal();
        return a.asDiagonal() * cols;
    }

    /// L_v(g) = sum_{u=1}^{v} L_{v,u} L_{v,u}^T (PSD by construction).
    Mat Lsum(int v, const Vec& g) const {
        Mat L = Mat::Zero(dim(v), dim(v));
        for (int u = 1; u <= v; ++u) {
            const Mat lu = Lvu(v, u, g);
            L.noalias() += lu * lu.transpose();
        }
        return L;
    }

    /// Q_v(g): rank-one signal matrix, including the sigma_s^2/sigma^2 factor.
    Mat Q(int v, const Vec& g) const {
        const Vec a = alpha(v, g);
        Vec q = a.cwiseProduct(tilde_F_[v] * G(1, v - 1));
        return (sigma_s2_ / sigma2()) * q * q.transpose();
    }

    /// ell_v(g): noise injected after layer v (empty sum when v = d).
    double ell(int v, const Vec& g) const {
        double val = 0.0;
        for (int u = v + 1; u <= d_; ++u) val += noise_row(g, u).squaredNorm();
        return val;
    }

private:
    void build_static() {
        tilde_F_.assign(d_ + 1, Mat());
        for (int i = 1; i <= d_; ++i) {
            Mat Fi(dim(i), dim(i - 1));
            Fi.setZero();
            Fi.topLeftCorner(dim(i - 1), dim(i - 1)).setIdentity();
            Fi.block(dim(i - 1), 0, layer_size(i), 1) = topo_->h[i - 1];
            int col = 1;
            for (int l = 1; l < i; ++l) {
                Fi.block(dim(i - 1), col, layer_size(i), layer_size(l)) = topo_->F[i - 1][l - 1];
                col += layer_size(l);
            }
            tilde_F_[i] = std::move(Fi);
        }
        tilde_g_.assign(topo_->M, Vec());
        for (int m = 0; m < topo_->M; ++m) {
            Vec gm = Vec::Zero(dim(d_));
            int off = 1;
            for (int i = 0; i < d_; ++i) {
                gm.segment(off, topo_->layer_size(i)) = topo_->g[i][m];
                off += topo_->layer_size(i);
            }
            tilde_g_[m] = std::move(gm);
        }
    }

    void rebuild_products() {
        Gtab_.assign(d_ + 1, std::vector<Mat>(d_ + 1));
        for (int u = 1; u <= d_; ++u) {
            Mat step = tilde_w(u).asDiagonal() * tilde_F_[u];
            Gtab_[u][u] = step;
            for (int i = u + 1; i <= d_; ++i)
                Gtab_[u][i] = (tilde_w(i).asDiagonal() * tilde_F_[i]) * Gtab_[u][i - 1];
        }
    }

    const Topology* topo_;
    double sigma_, sigma_s2_;
    int d_ = 0;
    std::vector<int> cum_;
    std::vector<Vec> w_;                 // w_[1..d]
    std::vector<Mat> tilde_F_;           // [1..d]
    std::vector<Vec> tilde_g_;           // per receiver
    std::vector<std::vector<Mat>> Gtab_;  // Gtab_[u][i], 1 <= u <= i <= d
};

/// Data of the layer-v relaxed subproblem: objective traces A_{v,j} with
/// offsets, SNR constraints B_{v,m} with right-hand sides, and the raw
/// Q/L/ell pieces kept for consistency checks.
struct SubproblemData {
    int n = 0;      // W~_v dimension
    int n_fix = 0;  // leading entries with pinned unit diagonal
    int v = 0;
    double eta = 0.0;
    std::vector<Mat> A;        // per relay j
    std::vector<double> ell_j;
    std::vector<Mat> B;        // per receiver m (empty when eta == 0)
    std::vector<double> rhs;
    std::vector<Mat> Qm, Lm;   // diagnostics: per receiver
    std::vector<double> ell_m;
};

inline SubproblemData assemble_subproblem(const ExtendedLinearModel& model, int v, double eta,
                                          const Vec& zeta) {
    if (v < 1 || v > model.layers()) throw config_error("assemble_subproblem: bad layer index");
    SubproblemData data;
    data.v = v;
    data.eta = eta;
    data.n = model.dim(v);
    data.n_fix = model.dim(v - 1);
    for (int j = 1; j <= model.total_relays(); ++j) {
        const Vec e = model.unit(j);
        data.A.push_back(model.Q(v, e) + model.Lsum(v, e));
        data.ell_j.push_back(model.ell(v, e));
    }
    for (int m = 0; m < model.receivers(); ++m) {
        const Vec& gm = model.tilde_g(m);
        data.Qm.push_back(model.Q(v, gm));
        data.Lm.push_back(model.Lsum(v, gm));
        data.ell_m.push_back(model.ell(v, gm));
        if (eta > 0.0) {
            data.B.push_back(zeta[m] / eta * data.Qm.back() - data.Lm.back());
            data.rhs.push_back(1.0 + data.ell_m.back());
        }
    }
    return data;
}

// --------------------------------------------------------------------------
// Inner convex solver: epigraph reformulation of the linearized penalty
// problem, solved by an augmented Lagrangian with projected gradient steps.
// The only set constraint kept in projection form is the PSD cone (one
// symmetric eigendecomposition per step); the epigraph, SNR and fixed
// diagonal constraints all live in the Lagrangian.
// --------------------------------------------------------------------------

struct InnerOptions {
    double tol_feas = 1e-6;
    double tol_obj = 1e-5;
    int max_outer = 80;
    int max_inner = 300;
};

struct InnerResult {
    Mat W;
    double objective = 0.0;  // penalized objective, un-linearized lambda_max
    bool feasible = false;
};

namespace detail {

inline Mat project_psd(const Mat& S) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (S + S.transpose()));
    Vec lam = es.eigenvalues().cwiseMax(0.0);
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

inline double lambda_max(const Mat& S, Vec* evec = nullptr) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (S + S.transpose()));
    const Eigen::Index last = S.rows() - 1;
    if (evec) *evec = es.eigenvectors().col(last);
    return es.eigenvalues()[last];
}

}  // namespace detail

/// Solves problem (one pass of the lambda_max linearization):
///   min_W  max_j <A_j,W> + ell_j + mu (Tr W - <vv^T, W>)
///   s.t.   <B_m,W> >= rhs_m,  W PSD,  W_ii = 1 for i < n_fix
/// around the linearization point W_lin (whose principal eigenvector gives v).
/// Returns constraint violation <= tol_feas or feasible=false.
inline InnerResult solve_inner(const SubproblemData& data, double mu, const Mat& W_lin,
                               const Mat& W_start, const InnerOptions& opt = {}) {
    const int n = data.n;
    const int J = static_cast<int>(data.A.size());
    const int M = static_cast<int>(data.B.size());
    const int nfix = data.n_fix;

    // Diagonal rescaling W = D W' D keeps the free block near unit scale.
    Vec Dv = Vec::Ones(n);
    for (int i = nfix; i < n; ++i) Dv[i] = std::sqrt(std::max(W_start(i, i), 1.0));
    const Mat Dm = Dv.asDiagonal();
    const Mat Dinv = Dv.cwiseInverse().asDiagonal();

    std::vector<Mat> A(J);
    std::vector<double> ell(J);
    double obj_scale = 1e-300;
    Mat P = Mat::Zero(n, n);
    if (mu > 0.0) {
        Vec vmax;
        detail::lambda_max(W_lin, &vmax);
        P = Dm * (mu * (Mat::Identity(n, n) - vmax * vmax.transpose())) * Dm;
    }
    for (int j = 0; j < J; ++j) {
        A[j] = Dm * data.A[j] * Dm;
        ell[j] = data.ell_j[j];
        obj_scale = std::max(obj_scale, A[j].norm() + std::fabs(ell[j]));
    }
    obj_scale = std::max(obj_scale, P.norm());
    for (int j = 0; j < J; ++j) {
        A[j] /= obj_scale;
        ell[j] /= obj_scale;
    }
    P /= obj_scale;

    // Each SNR constraint is normalized by its matrix norm so the gradient
    // stays O(1) even when eta is tiny and B_m is huge.
    std::vector<Mat> B(M);
    std::vector<double> rhs(M);
    for (int m = 0; m < M; ++m) {
        B[m] = Dm * data.B[m] * Dm;
        const double bn = std::max(B[m].norm(), 1e-300);
        B[m] /= bn;
        rhs[m] = data.rhs[m] / bn;
    }

    Mat W = Dinv * W_start * Dinv;
    W = detail::project_psd(W);
    auto term = [&](int j, const Mat& Wm) { return (A[j].cwiseProduct(Wm)).sum() + ell[j]; };
    double t = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < J; ++j) t = std::max(t, term(j, W));

    Vec lam = Vec::Zero(J);   // epigraph multipliers
    Vec nu = Vec::Zero(M);    // SNR multipliers
    Vec kap = Vec::Zero(nfix);  // fixed-diagonal multipliers
    double rho = 1.0;

    auto violation = [&](const Mat& Wm, double tv) {
        double viol = 0.0;
        for (int j = 0; j < J; ++j) viol = std::max(viol, term(j, Wm) - tv);
        for (int m = 0; m < M; ++m)
            viol = std::max(viol, rhs[m] - (B[m].cwiseProduct(Wm)).sum());
        for (int i = 0; i < nfix; ++i) viol = std::max(viol, std::fabs(Wm(i, i) - 1.0));
        return viol;
    };

    auto al_value = [&](const Mat& Wm, double tv) {
        double val = tv + (P.cwiseProduct(Wm)).sum();
        for (int j = 0; j < J; ++j) {
            const double h = term(j, Wm) - tv;
            const double s = std::max(0.0, lam[j] + rho * h);
            val += (s * s - lam[j] * lam[j]) / (2.0 * rho);
        }
        for (int m = 0; m < M; ++m) {
            const double gmv = rhs[m] - (B[m].cwiseProduct(Wm)).sum();
            const double s = std::max(0.0, nu[m] + rho * gmv);
            val += (s * s - nu[m] * nu[m]) / (2.0 * rho);
        }
        for (int i = 0; i < nfix; ++i) {
            const double dci = Wm(i, i) - 1.0;
            val += kap[i] * dci + 0.5 * rho * dci * dci;
        }
        return val;
    };

    auto al_grad = [&](const Mat& Wm, double tv, Mat& gW, double& gt) {
        gW = P;
        gt = 1.0;
        for (int j = 0; j < J; ++j) {
            const double s = std::max(0.0, lam[j] + rho * (term(j, Wm) - tv));
            if (s > 0.0) {
                gW.noalias() += s * A[j];
                gt -= s;
            }
        }
        for (int m = 0; m < M; ++m) {
            const double s =
                std::max(0.0, nu[m] + rho * (rhs[m] - (B[m].cwiseProduct(Wm)).sum()));
            if (s > 0.0) gW.noalias() -= s * B[m];
        }
        for (int i = 0; i < nfix; ++i) gW(i, i) += kap[i] + rho * (Wm(i, i) - 1.0);
    };

    double viol_prev = std::numeric_limits<double>::infinity();
    double obj_prev = std::numeric_limits<double>::infinity();
    for (int outer = 0; outer < opt.max_outer; ++outer) {
        // Projected gradient with adaptive step on the AL subproblem. The
        // step resets every round: the AL curvature is about rho.
        double step = 1.0 / rho;
        double fcur = al_value(W, t);
        for (int it = 0; it < opt.max_inner; ++it) {
            Mat gW;
            double gt;
            al_grad(W, t, gW, gt);
            const double gnorm = gW.norm() + std::fabs(gt);
            if (step * gnorm > 1e3) step = 1e3 / gnorm;  // explosion guard
            bool moved = false;
            for (int ls = 0; ls < 60; ++ls) {
                Mat Wn = detail::project_psd(W - step * gW);
                const double tn = t - step * gt;
                const double fn = al_value(Wn, tn);
                if (fn <= fcur - 1e-12 * std::fabs(fcur)) {
                    const double dnorm = (Wn - W).norm() + std::fabs(tn - t);
                    W = std::move(Wn);
                    t = tn;
                    fcur = fn;
                    moved = true;
                    step *= 1.3;
                    if (dnorm < 1e-12 * (1.0 + W.norm())) it = opt.max_inner;  // stalled
                    break;
                }
                step *= 0.5;
            }
            if (!moved) break;
        }

        const double viol = violation(W, t);
        const double obj = t + (P.cwiseProduct(W)).sum();
#ifdef RELAYNET_DEBUG_INNER
        std::fprintf(stderr, "outer=%d rho=%g viol=%g obj=%g t=%g numax=%g\n", outer, rho, viol,
                     obj, t, M ? nu.maxCoeff() : 0.0);
#endif
        if (viol <= opt.tol_feas &&
            std::fabs(obj - obj_prev) <= opt.tol_obj * std::max(1.0, std::fabs(obj)))
            break;
        obj_prev = obj;
        // Multiplier updates.
        for (int j = 0; j < J; ++j) lam[j] = std::max(0.0, lam[j] + rho * (term(j, W) - t));
        for (int m = 0; m < M; ++m)
            nu[m] = std::max(0.0, nu[m] + rho * (rhs[m] - (B[m].cwiseProduct(W)).sum()));
        for (int i = 0; i < nfix; ++i) kap[i] += rho * (W(i, i) - 1.0);
        if (viol > 0.25 * viol_prev) rho = std::min(rho * 4.0, 1e10);
        viol_prev = viol;
    }

    InnerResult res;
    res.W = Dm * W * Dm;
    res.feasible = violation(W, t) <= std::max(opt.tol_feas, 1e-5);
    double maxterm = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < J; ++j)
        maxterm = std::max(maxterm, (data.A[j].cwiseProduct(res.W)).sum() + data.ell_j[j]);
    res.objective = maxterm + mu * (res.W.trace() - detail::lambda_max(res.W));
    return res;
}

// --------------------------------------------------------------------------
// Algorithm 2: min-max relay power at a weighted-SNR target, driving the
// relaxed solution to rank one by doubling the trace penalty.
// --------------------------------------------------------------------------

struct PvOptions {
    double mu_init = 0.25;
    int max_doublings = 18;
    double rank_ratio_tol = 1e-4;
    double inner_rel_tol = 1e-6;
    int max_lin_iters = 40;
    InnerOptions inner;
};

struct PvResult {
    double power = std::numeric_limits<double>::infinity();
    Vec w_v;
    bool feasible = false;
    bool degraded = false;  // rank-one not reached within the mu cap
    std::vector<double> objective_trace;  // penalized objective per iteration
};

/// Evaluates P_v(eta): minimizes the maximal relay power over layer-v gains
/// subject to the weighted SNR constraints, via the rank-one penalty.
inline PvResult evaluate_Pv(ExtendedLinearModel& model, int v, double eta, const Vec& zeta,
                            const PvOptions& opt = {}) {
    const SubproblemData data = assemble_subproblem(model, v, eta, zeta);
    const int n = data.n;

    Vec wtil = Vec::Ones(n);
    wtil.tail(model.layer_size(v)) = model.gain(v);
    Mat W = wtil * wtil.transpose();

    PvResult res;
    // Convex relaxation first (no penalty): start-independent, so a poor
    // incumbent (e.g. destructively interfering gain signs) cannot lock the
    // subsequent rank-one continuation into a bad direction.
    {
        const InnerResult sdr = solve_inner(data, 0.0, W, W, opt.inner);
        if (!sdr.feasible) {
            res.feasible = false;
            return res;
        }
        W = sdr.W;
        res.objective_trace.push_back(sdr.objective);
    }

    // The relaxed optimum is often block diagonal (no correlation between
    // the pinned ones and the gains), and the lambda_max linearization has
    // zero gradient toward coupling there. Seed the first linearization with
    // a coupled rank-one candidate built from the free block instead.
    Mat W_lin;
    {
        // Magnitudes from the free-block diagonal (covers every relay even
        // when the principal eigenspace is degenerate); relative signs from
        // the cross block where present, else propagated over significant
        // off-diagonal correlations.
        const int nfree = n - data.n_fix;
        const Mat S = W.bottomRightCorner(nfree, nfree);
        Vec cavg = Vec::Zero(nfree);
        for (int i = 0; i < data.n_fix; ++i) cavg += W.row(i).tail(nfree).transpose();
        cavg /= data.n_fix;
        std::vector<int> sign(nfree, 0);
        std::vector<int> stack;
        for (int root = 0; root < nfree; ++root) {
            if (sign[root] != 0) continue;
            sign[root] = std::fabs(cavg[root]) > 1e-12 ? (cavg[root] > 0 ? 1 : -1) : 1;
            stack.push_back(root);
            while (!stack.empty()) {
                const int a = stack.back();
                stack.pop_back();
                for (int b = 0; b < nfree; ++b) {
                    if (sign[b] != 0 || b == a) continue;
                    const double thresh = 1e-8 * std::sqrt(S(a, a) * S(b, b));
                    if (std::fabs(S(a, b)) <= thresh) continue;
                    sign[b] = S(a, b) > 0 ? sign[a] : -sign[a];
                    stack.push_back(b);
                }
            }
        }
        Vec wc = Vec::Ones(n);
        for (int j = 0; j < nfree; ++j)
            wc[data.n_fix + j] = sign[j] * std::sqrt(std::max(S(j, j), 0.0));
        W_lin = wc * wc.transpose();
    }

    double mu = opt.mu_init;
    for (int doubling = 0; doubling < opt.max_doublings; ++doubling) {
        mu *= 2.0;
        double prev_obj = std::numeric_limits<double>::infinity();
        for (int u = 0; u < opt.max_lin_iters; ++u) {
            const InnerResult inner = solve_inner(data, mu, W_lin, W, opt.inner);
            if (!inner.feasible) {
                res.feasible = false;
                return res;
            }
            W = inner.W;
            W_lin = W;
            res.objective_trace.push_back(inner.objective);
            if (std::fabs(prev_obj - inner.objective) <=
                opt.inner_rel_tol * std::max(1.0, std::fabs(prev_obj)))
                break;
            prev_obj = inner.objective;
        }
        Eigen::SelfAdjointEigenSolver<Mat> es(W);
        const double l1 = es.eigenvalues()[n - 1];
        const double l2 = n > 1 ? std::fabs(es.eigenvalues()[n - 2]) : 0.0;
        if (l1 <= 0) {
            res.feasible = false;
            return res;
        }
        if (l2 / l1 <= opt.rank_ratio_tol) {
            Vec wext = std::sqrt(l1) * es.eigenvectors().col(n - 1);
            if (wext[0] < 0) wext = -wext;
            // The fixed block must come out as all ones; otherwise the
            // penalty is not yet tight enough.
            if ((wext.head(data.n_fix).array() - 1.0).abs().maxCoeff() > 1e-3) continue;
            res.w_v = wext.tail(model.layer_size(v));
            res.feasible = true;
            break;
        }
    }
    if (!res.feasible) {
        // Best-effort extraction with a degraded-quality flag.
        Eigen::SelfAdjointEigenSolver<Mat> es(W);
        Vec wext = std::sqrt(std::max(es.eigenvalues()[n - 1], 0.0)) * es.eigenvectors().col(n - 1);
        if (wext[0] < 0) wext = -wext;
        res.w_v = wext.tail(model.layer_size(v));
        res.feasible = true;
        res.degraded = true;
    }

    // Exact min-max power at the extracted gains.
    const Vec saved = model.gain(v);
    model.set_gain(v, res.w_v);
    res.power = model.max_relay_power();
    // Verify the SNR target still holds after the rank-one rounding.
    if (eta > 0.0) {
        for (int m = 0; m < model.receivers(); ++m) {
            // Tiny absolute slack so that vanishing targets accept w = 0.
            if (zeta[m] * model.snr(m) + 1e-9 < eta * (1.0 - 1e-3)) {
                model.set_gain(v, saved);
                res.feasible = false;
                res.power = std::numeric_limits<double>::infinity();
                return res;
            }
        }
    }
    model.set_gain(v, saved);
    return res;
}

struct MaxEtaResult {
    double eta = 0.0;
    Vec w_v;
    bool degraded = false;
};

/// Algorithm 1 inner step: the largest weighted-SNR target eta such that
/// P_v(eta) <= P_max, found by doubling + bisection (relative tol 1e-3).
inline MaxEtaResult max_eta(ExtendedLinearModel& model, int v, const Vec& zeta, double P_max,
                            const PvOptions& opt = {}) {
    // Current gains are feasible by construction; their min weighted SNR
    // anchors the bracket.
    double eta_lo = std::numeric_limits<double>::infinity();
    for (int m = 0; m < model.receivers(); ++m)
        eta_lo = std::min(eta_lo, zeta[m] * model.snr(m));
    eta_lo = std::max(eta_lo * (1.0 - 1e-9), 0.0);

    if (model.max_relay_power() > P_max * (1.0 + 1e-6))
        throw infeasible_error("max_eta: current operating point already exceeds P_max");
    // The incumbent gains achieve eta_lo within budget, so they are always a
    // valid fallback even if the solver's re-solve lands a hair over P_max.
    MaxEtaResult best{eta_lo, model.gain(v), false};
    PvResult feas0 = evaluate_Pv(model, v, eta_lo, zeta, opt);
    if (feas0.feasible && feas0.power <= P_max) best = {eta_lo, feas0.w_v, feas0.degraded};

    // Doubling phase: P_v grows without bound in eta, so this terminates.
    double eta_hi = std::max(eta_lo, 1e-12);
    for (int it = 0; it < 200; ++it) {
        eta_hi *= 4.0;
        PvResult r = evaluate_Pv(model, v, eta_hi, zeta, opt);
        if (!r.feasible || r.power > P_max) break;
        best = {eta_hi, r.w_v, r.degraded};
        eta_lo = eta_hi;
        if (it == 199) throw numerical_error("max_eta: doubling phase failed to bracket");
    }

    while (eta_hi - eta_lo > 1e-3 * eta_hi) {
        const double mid = 0.5 * (eta_lo + eta_hi);
        PvResult r = evaluate_Pv(model, v, mid, zeta, opt);
        if (r.feasible && r.power <= P_max) {
            best = {mid, r.w_v, r.degraded};
            eta_lo = mid;
        } else {
            eta_hi = mid;
        }
    }
    return best;
}

// --------------------------------------------------------------------------
// Analytic PAM BER for the linear network: exact enumeration over the
// constellation with ideal (nearest-point) decision boundaries.
// --------------------------------------------------------------------------

inline double gaussian_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Exact BER of bit b of user m for r = s + n, n ~ N(0, sigma_eff^2),
/// under the ideal PAM slicer of a standard receiver.
inline double pam_bit_ber(const ModulationSpec& spec, int m, int b, double sigma_eff) {
    const int P = spec.points();
    double err = 0.0;
    for (int a = 0; a < P; ++a) {
        const int truth = user_bit_of_symbol(spec, a, m, b);
        const double s = spec.symbol_value(a);
        for (int k = 0; k < P; ++k) {
            if (user_bit_of_symbol(spec, k, m, b) == truth) continue;
            const double lo = k == 0 ? -std::numeric_limits<double>::infinity()
                                     : 0.5 * (spec.symbol_value(k - 1) + spec.symbol_value(k));
            const double hi = k == P - 1
                                  ? std::numeric_limits<double>::infinity()
                                  : 0.5 * (spec.symbol_value(k) + spec.symbol_value(k + 1));
            err += gaussian_cdf((hi - s) / sigma_eff) - gaussian_cdf((lo - s) / sigma_eff);
        }
    }
    return err / P;
}

/// Worst-bit analytic BER of user m at the given SNR (unit-slope receiver:
/// sigma_eff^2 = sigma_s^2 / SNR).
inline double pam_user_ber(const ModulationSpec& spec, int m, double snr) {
    const double sigma_eff = std::sqrt(spec.symbol_power() / snr);
    double worst = 0.0;
    for (int b = 1; b <= spec.B; ++b) worst = std::max(worst, pam_bit_ber(spec, m, b, sigma_eff));
    return worst;
}

// --------------------------------------------------------------------------
// Algorithm 1 with the zeta-balancing outer loop.
// --------------------------------------------------------------------------

struct LinOptConfig {
    double P_max = 0.64;
    std::uint64_t seed = 0;
    int max_sweeps = 20;
    double sweep_rel_tol = 1e-3;
    int max_zeta_rounds = 10;
    double ber_ratio_tol = 1.5;
    PvOptions pv;
};

struct ConvergenceRow {
    int zeta_round;
    int sweep;
    int layer;
    double eta;
    double max_power;
};

struct LinOptResult {
    RelayParams params;
    Vec snr;       // per receiver
    Vec ber;       // analytic per-user worst-bit BER
    Vec zeta;
    double eta = 0.0;  // final max-min weighted SNR
    bool degraded = false;
    std::vector<ConvergenceRow> log;
};

/// Feasible start: scale a linear-regime initialization until every relay
/// power is within P_max (powers are monotone in a common gain scale).
inline RelayParams feasible_start(const Topology& t, const ModulationSpec& spec, double sigma,
                                  double P_max, std::uint64_t seed);

inline LinOptResult optimize(const Topology& t, double sigma, const ModulationSpec& spec,
                             const LinOptConfig& cfg = {}) {
    const double sigma_s2 = spec.symbol_power();
    if (spec.M != t.M) throw config_error("optimize: receiver count mismatch");
    // The sign pattern of the random start decides which basin the per-layer
    // subproblems refine; a start that nearly nulls one receiver is never
    // escaped by the later rounds. Take the best of a few deterministic
    // redraws, judged by the worst per-user SNR at the start.
    RelayParams start;
    if (t.total_relays() > 0) {
        double best_start = -std::numeric_limits<double>::infinity();
        for (std::uint64_t c = 0; c < 8; ++c) {
            const std::uint64_t s = cfg.seed + 0x9e3779b97f4a7c15ull * c;
            RelayParams cand = feasible_start(t, spec, sigma, cfg.P_max, s);
            const ExtendedLinearModel probe(t, cand, sigma, sigma_s2);
            double worst = std::numeric_limits<double>::infinity();
            for (int m = 0; m < t.M; ++m) worst = std::min(worst, probe.snr(m));
            if (worst > best_start) {
                best_start = worst;
                start = std::move(cand);
            }
        }
    } else {
        start = feasible_start(t, spec, sigma, cfg.P_max, cfg.seed);
    }
    ExtendedLinearModel model(t, start, sigma, sigma_s2);

    LinOptResult res;
    res.zeta = Vec::Ones(t.M);
    // Weighted max-min under per-relay power caps can lower a non-binding
    // user without helping anyone (disjoint relay sets), so the returned
    // solution is the best iterate over the balancing rounds, not the last.
    RelayParams best_params;
    Vec best_snr, best_ber, best_zeta;
    double best_eta = 0.0;
    double best_worst = std::numeric_limits<double>::infinity();
    for (int round = 0; round < cfg.max_zeta_rounds; ++round) {
        double prev_eta = -std::numeric_limits<double>::infinity();
        for (int sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
            double eta = 0.0;
            for (int v = 1; v <= model.layers(); ++v) {
                MaxEtaResult r = max_eta(model, v, res.zeta, cfg.P_max, cfg.pv);
                model.set_gain(v, r.w_v);
                res.degraded = res.degraded || r.degraded;
                eta = r.eta;
                res.log.push_back({round, sweep, v, eta, model.max_relay_power()});
            }
            res.eta = eta;
            if (eta - prev_eta <= cfg.sweep_rel_tol * std::max(prev_eta, 1e-300) &&
                sweep > 0)
                break;
            prev_eta = eta;
        }

        res.snr = Vec(t.M);
        res.ber = Vec(t.M);
        for (int m = 0; m < t.M; ++m) {
            res.snr[m] = model.snr(m);
            res.ber[m] = pam_user_ber(spec, m + 1, res.snr[m]);
        }
        if (res.ber.maxCoeff() < best_worst) {
            best_worst = res.ber.maxCoeff();
            best_params = model.params();
            best_snr = res.snr;
            best_ber = res.ber;
            best_zeta = res.zeta;
            best_eta = res.eta;
        }
        Vec safe_ber = res.ber.cwiseMax(1e-300);
        const double bmax = safe_ber.maxCoeff(), bmin = safe_ber.minCoeff();
        if (bmax / bmin <= cfg.ber_ratio_tol) break;
        // Multiplicative balancing toward equal per-user BER. The per-user
        // SNR target is eta / zeta_m, so a user whose BER is above the
        // geometric mean needs a smaller zeta_m (a higher target).
        double log_gmean = 0.0;
        for (int m = 0; m < t.M; ++m) log_gmean += std::log(safe_ber[m]);
        log_gmean /= t.M;
        for (int m = 0; m < t.M; ++m)
            res.zeta[m] *= std::sqrt(std::exp(log_gmean) / safe_ber[m]);
        res.zeta *= t.M / res.zeta.sum();
    }

    for (int v = 1; v <= model.layers(); ++v) model.set_gain(v, best_params.w[v - 1]);
    res.params = best_params;
    res.snr = best_snr;
    res.ber = best_ber;
    res.zeta = best_zeta;
    res.eta = best_eta;
    // Receiver scaling equalizes the actual tanh end-to-end slope, probed
    // noiselessly on the constellation. The linear-model slope overstates it
    // once the power cap pushes relays into compression, which systematically
    // misplaces the inner PAM decision levels; the network is odd-symmetric
    // so the receiver bias stays zero.
    {
        Vec symbols(spec.points());
        for (int a = 0; a < spec.points(); ++a) symbols[a] = spec.symbol_value(a);
        const ForwardTrace probe =
            forward(t, res.params, symbols, NoiseBatch::zero(t, spec.points()));
        const double den = symbols.squaredNorm();
        for (int m = 0; m < t.M; ++m) {
            const double slope = (probe.r.row(m) * symbols)(0) / den;
            res.params.rx_w[m] = std::fabs(slope) > 1e-300 ? 1.0 / slope : 1.0;
            res.params.rx_b[m] = 0.0;
        }
    }
    return res;
}

}  // namespace relaynet

#include "relaynet/deepopt.hpp"

namespace relaynet {

inline RelayParams feasible_start(const Topology& t, const ModulationSpec& spec, double sigma,
                                  double P_max, std::uint64_t seed) {
    RelayParams p = initialize(t, spec, sigma, seed);
    for (auto& b : p.b) b.setZero();
    const double sigma_s2 = spec.symbol_power();
    auto max_power = [&](double scale) {
        RelayParams q = p;
        for (auto& w : q.w) w *= scale;
        ExtendedLinearModel m(t, q, sigma, sigma_s2);
        return m.max_relay_power();
    };
    double scale = 1.0;
    if (max_power(1.0) > P_max) {
        double lo = 0.0, hi = 1.0;
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            (max_power(mid) <= P_max ? lo : hi) = mid;
        }
        scale = lo;
    }
    for (auto& w : p.w) w *= scale;
    return p;
}

}  // namespace relaynet
