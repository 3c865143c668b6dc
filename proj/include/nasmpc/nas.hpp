#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "nasmpc/ftocp.hpp"

namespace nasmpc {

/// Solver parameters, named after the corresponding code parameters.
struct NasConfig {
    int maxit = 50;           ///< maximum NAS iterations
    int maxproj = 20;         ///< maximum search-direction projections per iteration
    double dualtol = 1e-10;   ///< multiplier threshold for releasing constraints
    int maxiterref = 1;       ///< iterative refinement passes for the KKT solve
    double backtrack = 0.5;   ///< c_bt, geometric step reduction in (0,1)
    double decrease = 1e-4;   ///< c_dc, Armijo sufficient-decrease factor in (0,1)
    double finitediff = 1e-5; ///< finite-difference step for linearization
};

/// Set of input bounds / rate constraints treated as equalities.
///
/// Redundancy is pruned by cycle detection: bounds tie an input variable to
/// ground, rate constraints tie adjacent input variables together; a new
/// constraint whose edge would close a cycle in this graph is linearly
/// dependent on the active ones and is rejected, keeping G full row rank.
class ActiveSet {
public:
    ActiveSet() = default;
    ActiveSet(int N, int m)
        : N_(N), m_(m), bound_(static_cast<std::size_t>(N * m), 0),
          rate_(static_cast<std::size_t>(std::max(0, (N - 1) * m)), 0) {}

    int N() const { return N_; }
    int m() const { return m_; }

    /// Sign of the active bound at (stage k, channel j): -1 lower, +1 upper, 0 none.
    int bound(int k, int j) const { return bound_[idx(k, j)]; }
    /// Sign of the active rate between u_{r-1} and u_r (r = 1..N-1).
    int rate(int r, int j) const { return rate_[ridx(r, j)]; }

    bool contains(int id) const {
        auto [isRate, k, j, sign] = decode(id);
        return isRate ? rate(k, j) == sign : bound(k, j) == sign;
    }

    /// Adds constraint `id` unless it conflicts with or is implied by the
    /// current set. Returns false when rejected.
    bool try_add(int id) {
        auto [isRate, k, j, sign] = decode(id);
        if (!isRate) {
            if (bound_[idx(k, j)] != 0) return false;
            if (closes_cycle(ground(), node(k, j))) return false;
            bound_[idx(k, j)] = static_cast<std::int8_t>(sign);
        } else {
            if (rate_[ridx(k, j)] != 0) return false;
            if (closes_cycle(node(k - 1, j), node(k, j))) return false;
            rate_[ridx(k, j)] = static_cast<std::int8_t>(sign);
        }
        return true;
    }

    void remove(int id) {
        auto [isRate, k, j, sign] = decode(id);
        (void)sign;
        if (!isRate)
            bound_[idx(k, j)] = 0;
        else
            rate_[ridx(k, j)] = 0;
    }

    int size() const {
        auto nz = [](auto& v) {
            return static_cast<int>(std::count_if(v.begin(), v.end(), [](auto x) { return x != 0; }));
        };
        return nz(bound_) + nz(rate_);
    }

    /// Constraint id encoding, matching constraint_values():
    ///   bounds:  2mk + j (lower), 2mk + m + j (upper), k = 0..N-1
    ///   rates:   2Nm + 2m(r-1) + j (lower), + m (upper), r = 1..N-1
    int bound_id(int k, int j, int sign) const {
        return 2 * m_ * k + (sign > 0 ? m_ : 0) + j;
    }
    int rate_id(int r, int j, int sign) const {
        return 2 * N_ * m_ + 2 * m_ * (r - 1) + (sign > 0 ? m_ : 0) + j;
    }

    /// (is_rate, stage-or-rate index, channel, sign)
    std::tuple<bool, int, int, int> decode(int id) const {
        int off = 2 * N_ * m_;
        if (id < off) {
            int k = id / (2 * m_);
            int rem = id - 2 * m_ * k;
            return {false, k, rem % m_, rem < m_ ? -1 : +1};
        }
        id -= off;
        int r = id / (2 * m_) + 1;
        int rem = id - 2 * m_ * (r - 1);
        return {true, r, rem % m_, rem < m_ ? -1 : +1};
    }

private:
    int N_ = 0, m_ = 0;
    std::vector<std::int8_t> bound_;
    std::vector<std::int8_t> rate_;

    std::size_t idx(int k, int j) const { return static_cast<std::size_t>(k * m_ + j); }
    std::size_t ridx(int r, int j) const { return static_cast<std::size_t>((r - 1) * m_ + j); }
    int node(int k, int j) const { return k * m_ + j; }
    int ground() const { return N_ * m_; }

    bool closes_cycle(int a, int b) const {
        // union-find over the current edges, rebuilt per query (sets are tiny)
        std::vector<int> parent(static_cast<std::size_t>(N_ * m_ + 1));
        std::iota(parent.begin(), parent.end(), 0);
        auto find = [&](int x) {
            while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)];
            return x;
        };
        auto unite = [&](int x, int y) { parent[static_cast<std::size_t>(find(x))] = find(y); };
        for (int k = 0; k < N_; ++k)
            for (int j = 0; j < m_; ++j)
                if (bound_[idx(k, j)] != 0) unite(node(k, j), ground());
        for (int r = 1; r < N_; ++r)
            for (int j = 0; j < m_; ++j)
                if (rate_[ridx(r, j)] != 0) unite(node(r - 1, j), node(r, j));
        return find(a) == find(b);
    }
};

/// Linearized data for the equality-constrained local QP.
struct LocalQp {
    std::vector<Mat> A;  ///< N matrices n x n, linearization at stage k
    std::vector<Mat> B;  ///< N matrices n x m
    std::vector<Vec> e;  ///< N gradients of the stage cost w.r.t. u_k
    std::vector<Vec> f;  ///< N gradients w.r.t. z_{k+1} (state cost + penalties)
    Vec Hu;              ///< m diagonal of the input Hessian block (2 R)
    Vec Hz;              ///< n diagonal of the state Hessian block (2 Q, regularized)
};

/// Builds the local QP around (U, Z): finite-difference model linearization
/// plus exact gradients of the nonlinear stage costs.
inline LocalQp build_local_qp(const Mat& U, const Mat& Z, const FtocpInstance& inst,
                              const NasConfig& cfg) {
    const int N = inst.N, n = inst.n(), m = inst.m();
    LocalQp qp;
    qp.A.resize(static_cast<std::size_t>(N));
    qp.B.resize(static_cast<std::size_t>(N));
    qp.e.resize(static_cast<std::size_t>(N));
    qp.f.resize(static_cast<std::size_t>(N));
    qp.Hu = 2.0 * inst.weights.R;
    qp.Hz = 2.0 * inst.weights.Q.cwiseMax(1e-10);  // keep H positive definite with q_j = 0

    for (int k = 0; k < N; ++k) {
        linearize_discrete(*inst.model, Z.col(k), U.col(k), inst.integ, cfg.finitediff,
                           qp.A[static_cast<std::size_t>(k)], qp.B[static_cast<std::size_t>(k)]);

        const RefPoint& ref = inst.refs[static_cast<std::size_t>(k)];
        const double dir = FtocpInstance::dir_of(ref);

        Vec e(m);
        e[0] = 2.0 * inst.weights.R[0] * (U(0, k) - dir * ref.a_ref);
        e[1] = 2.0 * inst.weights.R[1] * U(1, k);
        for (int j = 2; j < m; ++j) e[j] = 2.0 * inst.weights.R[j] * U(j, k);
        qp.e[static_cast<std::size_t>(k)] = std::move(e);

        const Vec z = Z.col(k + 1);
        auto [es, el] = detail::path_errors(z, ref);
        const double c = std::cos(ref.phi_ref), s = std::sin(ref.phi_ref);
        const double phi_t = dir < 0.0 ? ref.phi_ref + M_PI : ref.phi_ref;
        auto [eps_l, eps_r] = violation(z, ref);
        const double pl = penalty_deriv(eps_l, inst.pen);
        const double pr = penalty_deriv(eps_r, inst.pen);

        Vec f = Vec::Zero(n);
        f[0] = 2.0 * inst.weights.Q[0] * es * c - 2.0 * inst.weights.Q[1] * el * s +
               (pr - pl) * s;
        f[1] = 2.0 * inst.weights.Q[0] * es * s + 2.0 * inst.weights.Q[1] * el * c +
               (pl - pr) * c;
        f[2] = 2.0 * inst.weights.Q[2] * wrap_angle(z[2] - phi_t);
        f[3] = 2.0 * inst.weights.Q[3] * (z[3] - dir * ref.v_ref);
        f[4] = 2.0 * inst.weights.Q[4] * (z[4] - ref.delta_ref);
        for (int j = 5; j < n; ++j) f[j] = 2.0 * inst.weights.Q[j] * z[j];
        qp.f[static_cast<std::size_t>(k)] = std::move(f);
    }
    return qp;
}

/// Search direction and multipliers from the structured KKT solve.
struct KktSolution {
    Mat Utilde;  ///< m x N direction in the inputs
    Mat Ztilde;  ///< n x N linearized state direction, columns z~_1..z~_N
    std::vector<std::pair<int, double>> multipliers;  ///< (constraint id, nu)
};

namespace detail {

/// Per-stage blocks of G for the active-set equality system. Block k
/// (0-based) owns variables (u~_k, z~_{k+1}); its rows are the active
/// bounds on u_k, the active rate between u_{k-1} and u_k, and the dynamics.
struct KktBlocks {
    std::vector<Mat> D;    ///< diagonal blocks of G, (a_k + n) x (m + n)
    std::vector<Mat> C;    ///< subdiagonal blocks (block k, col k-1), k >= 1
    std::vector<std::vector<int>> row_ids;  ///< constraint id per active row
    std::vector<int> a;    ///< active row count per block
};

inline KktBlocks assemble_blocks(const LocalQp& qp, const ActiveSet& act) {
    const int N = act.N(), m = act.m();
    const int n = static_cast<int>(qp.Hz.size());
    KktBlocks kb;
    kb.D.resize(static_cast<std::size_t>(N));
    kb.C.resize(static_cast<std::size_t>(N));
    kb.row_ids.resize(static_cast<std::size_t>(N));
    kb.a.resize(static_cast<std::size_t>(N));

    for (int k = 0; k < N; ++k) {
        std::vector<std::tuple<int, int, bool>> rows;  // (channel, sign, is_rate)
        std::vector<int> ids;
        for (int j = 0; j < m; ++j)
            if (int s = act.bound(k, j); s != 0) {
                rows.emplace_back(j, s, false);
                ids.push_back(act.bound_id(k, j, s));
            }
        if (k >= 1)
            for (int j = 0; j < m; ++j)
                if (int s = act.rate(k, j); s != 0) {
                    rows.emplace_back(j, s, true);
                    ids.push_back(act.rate_id(k, j, s));
                }
        const int a_k = static_cast<int>(rows.size());
        kb.a[static_cast<std::size_t>(k)] = a_k;
        kb.row_ids[static_cast<std::size_t>(k)] = std::move(ids);

        Mat D = Mat::Zero(a_k + n, m + n);
        for (int r = 0; r < a_k; ++r) {
            auto [j, s, isRate] = rows[static_cast<std::size_t>(r)];
            (void)isRate;
            D(r, j) = static_cast<double>(s);
        }
        D.block(a_k, 0, n, m) = qp.B[static_cast<std::size_t>(k)];
        D.block(a_k, m, n, n) = -Mat::Identity(n, n);
        kb.D[static_cast<std::size_t>(k)] = std::move(D);

        if (k >= 1) {
            Mat C = Mat::Zero(a_k + n, m + n);
            for (int r = 0; r < a_k; ++r) {
                auto [j, s, isRate] = rows[static_cast<std::size_t>(r)];
                if (isRate) C(r, j) = -static_cast<double>(s);  // coupling to u~_{k-1}
            }
            C.block(a_k, m, n, n) = qp.A[static_cast<std::size_t>(k)];
            kb.C[static_cast<std::size_t>(k)] = std::move(C);
        }
    }
    return kb;
}

}  // namespace detail

/// Solves the equality-constrained local QP through the KKT system, using a
/// block-tridiagonal Cholesky factorization of G H^-1 G^T (cost linear in N),
/// followed by maxiterref iterative-refinement passes.
inline KktSolution solve_kkt(const LocalQp& qp, const ActiveSet& act, int maxiterref) {
    const int N = act.N(), m = act.m();
    const int n = static_cast<int>(qp.Hz.size());
    const int bw = m + n;  // block variable width

    detail::KktBlocks kb = detail::assemble_blocks(qp, act);

    Vec hinv(bw);
    hinv.head(m) = qp.Hu.cwiseInverse();
    hinv.tail(n) = qp.Hz.cwiseInverse();

    // stacked linear term per block: (e_k, f_{k+1})
    std::vector<Vec> fblk(static_cast<std::size_t>(N));
    for (int k = 0; k < N; ++k) {
        Vec f(bw);
        f.head(m) = qp.e[static_cast<std::size_t>(k)];
        f.tail(n) = qp.f[static_cast<std::size_t>(k)];
        fblk[static_cast<std::size_t>(k)] = std::move(f);
    }

    auto solve_once = [&](const std::vector<Vec>& rhs1, const std::vector<Vec>& rhs2,
                          const std::vector<Eigen::LLT<Mat>>* llt_in,
                          const std::vector<Mat>* Lsub_in,
                          std::vector<Eigen::LLT<Mat>>* llt_out, std::vector<Mat>* Lsub_out,
                          std::vector<Vec>& xi, std::vector<Vec>& nu) {
        // Schur RHS: r_k = (G H^-1 rhs1 - rhs2)_k
        std::vector<Vec> r(static_cast<std::size_t>(N));
        for (int k = 0; k < N; ++k) {
            Vec v = kb.D[static_cast<std::size_t>(k)] *
                    Vec(hinv.cwiseProduct(rhs1[static_cast<std::size_t>(k)]));
            if (k >= 1)
                v += kb.C[static_cast<std::size_t>(k)] *
                     Vec(hinv.cwiseProduct(rhs1[static_cast<std::size_t>(k - 1)]));
            r[static_cast<std::size_t>(k)] = v - rhs2[static_cast<std::size_t>(k)];
        }

        const std::vector<Eigen::LLT<Mat>>* llt = llt_in;
        const std::vector<Mat>* Lsub = Lsub_in;
        if (!llt) {
            // factorize the block-tridiagonal M = G H^-1 G^T
            llt_out->resize(static_cast<std::size_t>(N));
            Lsub_out->resize(static_cast<std::size_t>(N));
            Mat prevLt;  // L_{k,k-1}^T
            for (int k = 0; k < N; ++k) {
                const Mat& D = kb.D[static_cast<std::size_t>(k)];
                Mat M = D * hinv.asDiagonal() * D.transpose();
                if (k >= 1) {
                    const Mat& C = kb.C[static_cast<std::size_t>(k)];
                    M += C * hinv.asDiagonal() * C.transpose();
                    // off-diagonal block M_{k,k-1} = C_k H^-1 D_{k-1}^T
                    Mat Moff = C * hinv.asDiagonal() *
                               kb.D[static_cast<std::size_t>(k - 1)].transpose();
                    // L_{k,k-1} = M_{k,k-1} L_{k-1,k-1}^-T
                    Mat Lkm = (*llt_out)[static_cast<std::size_t>(k - 1)]
                                  .matrixU()
                                  .solve<Eigen::OnTheRight>(Moff);
                    M -= Lkm * Lkm.transpose();
                    (*Lsub_out)[static_cast<std::size_t>(k)] = std::move(Lkm);
                }
                (*llt_out)[static_cast<std::size_t>(k)].compute(M);
                if ((*llt_out)[static_cast<std::size_t>(k)].info() != Eigen::Success)
                    throw CholeskyBreakdown("non-positive pivot in block Cholesky (stage " +
                                            std::to_string(k) + ")");
            }
            llt = llt_out;
            Lsub = Lsub_out;
        }

        // forward substitution L w = r
        std::vector<Vec> w(static_cast<std::size_t>(N));
        for (int k = 0; k < N; ++k) {
            Vec rk = r[static_cast<std::size_t>(k)];
            if (k >= 1) rk -= (*Lsub)[static_cast<std::size_t>(k)] * w[static_cast<std::size_t>(k - 1)];
            w[static_cast<std::size_t>(k)] =
                (*llt)[static_cast<std::size_t>(k)].matrixL().solve(rk);
        }
        // backward substitution L^T nu = w
        nu.resize(static_cast<std::size_t>(N));
        for (int k = N - 1; k >= 0; --k) {
            Vec wk = w[static_cast<std::size_t>(k)];
            if (k + 1 < N)
                wk -= (*Lsub)[static_cast<std::size_t>(k + 1)].transpose() *
                      nu[static_cast<std::size_t>(k + 1)];
            nu[static_cast<std::size_t>(k)] =
                (*llt)[static_cast<std::size_t>(k)].matrixU().solve(wk);
        }
        // xi = H^-1 (rhs1 - G^T nu)
        xi.resize(static_cast<std::size_t>(N));
        for (int k = 0; k < N; ++k) {
            Vec g = kb.D[static_cast<std::size_t>(k)].transpose() * nu[static_cast<std::size_t>(k)];
            if (k + 1 < N)
                g += kb.C[static_cast<std::size_t>(k + 1)].transpose() *
                     nu[static_cast<std::size_t>(k + 1)];
            xi[static_cast<std::size_t>(k)] =
                hinv.cwiseProduct(Vec(rhs1[static_cast<std::size_t>(k)] - g));
        }
    };

    // base solve: rhs1 = -f, rhs2 = 0
    std::vector<Vec> rhs1(static_cast<std::size_t>(N)), rhs2(static_cast<std::size_t>(N));
    for (int k = 0; k < N; ++k) {
        rhs1[static_cast<std::size_t>(k)] = -fblk[static_cast<std::size_t>(k)];
        rhs2[static_cast<std::size_t>(k)] = Vec::Zero(kb.a[static_cast<std::size_t>(k)] + n);
    }
    std::vector<Eigen::LLT<Mat>> llt;
    std::vector<Mat> Lsub;
    std::vector<Vec> xi, nu;
    solve_once(rhs1, rhs2, nullptr, nullptr, &llt, &Lsub, xi, nu);

    // iterative refinement on the full KKT residual
    Vec hfull(bw);
    hfull.head(m) = qp.Hu;
    hfull.tail(n) = qp.Hz;
    for (int pass = 0; pass < maxiterref; ++pass) {
        std::vector<Vec> res1(static_cast<std::size_t>(N)), res2(static_cast<std::size_t>(N));
        for (int k = 0; k < N; ++k) {
            Vec g = kb.D[static_cast<std::size_t>(k)].transpose() * nu[static_cast<std::size_t>(k)];
            if (k + 1 < N)
                g += kb.C[static_cast<std::size_t>(k + 1)].transpose() *
                     nu[static_cast<std::size_t>(k + 1)];
            res1[static_cast<std::size_t>(k)] =
                -fblk[static_cast<std::size_t>(k)] -
                Vec(hfull.cwiseProduct(xi[static_cast<std::size_t>(k)])) - g;
            Vec gx = kb.D[static_cast<std::size_t>(k)] * xi[static_cast<std::size_t>(k)];
            if (k >= 1)
                gx += kb.C[static_cast<std::size_t>(k)] * xi[static_cast<std::size_t>(k - 1)];
            res2[static_cast<std::size_t>(k)] = -gx;
        }
        std::vector<Vec> dxi, dnu;
        solve_once(res1, res2, &llt, &Lsub, nullptr, nullptr, dxi, dnu);
        for (int k = 0; k < N; ++k) {
            xi[static_cast<std::size_t>(k)] += dxi[static_cast<std::size_t>(k)];
            nu[static_cast<std::size_t>(k)] += dnu[static_cast<std::size_t>(k)];
        }
    }

    KktSolution sol;
    sol.Utilde.resize(m, N);
    sol.Ztilde.resize(n, N);
    for (int k = 0; k < N; ++k) {
        sol.Utilde.col(k) = xi[static_cast<std::size_t>(k)].head(m);
        sol.Ztilde.col(k) = xi[static_cast<std::size_t>(k)].tail(n);
        const auto& ids = kb.row_ids[static_cast<std::size_t>(k)];
        for (std::size_t r = 0; r < ids.size(); ++r)
            sol.multipliers.emplace_back(ids[r],
                                         nu[static_cast<std::size_t>(k)][static_cast<Eigen::Index>(r)]);
    }
    return sol;
}

/// Projects the search direction onto a newly hit constraint:
/// bounds zero the entry; rate hits average the two coupled entries, or zero
/// both if a bound on either is active simultaneously.
inline void project_direction(Mat& Utilde, int hit, const ActiveSet& act) {
    auto [isRate, k, j, sign] = act.decode(hit);
    (void)sign;
    if (!isRate) {
        Utilde(j, k) = 0.0;
        return;
    }
    if (act.bound(k - 1, j) != 0 || act.bound(k, j) != 0) {
        Utilde(j, k - 1) = 0.0;
        Utilde(j, k) = 0.0;
    } else {
        double avg = 0.5 * (Utilde(j, k - 1) + Utilde(j, k));
        Utilde(j, k - 1) = avg;
        Utilde(j, k) = avg;
    }
}

/// Removes every active constraint whose multiplier is below -dualtol.
/// Returns the number of released constraints.
inline int release_constraints(const std::vector<std::pair<int, double>>& multipliers,
                               ActiveSet& act, double dualtol) {
    int released = 0;
    for (auto [id, nu] : multipliers)
        if (nu < -dualtol && act.contains(id)) {
            act.remove(id);
            ++released;
        }
    return released;
}

enum class NasTermination { KktSatisfied, MaxIterations, NoProgress };

struct NasResult {
    Mat U;       ///< m x N optimal input sequence
    Mat Z;       ///< n x (N+1) predicted states
    double cost = 0.0;
    int iterations = 0;
    NasTermination reason = NasTermination::MaxIterations;
    ActiveSet active;
};

/// Shifted previous solution (last input duplicated), projected onto the
/// feasible set when needed; all zeros without a previous solution.
inline Mat warm_start(const std::optional<NasResult>& prev, const FtocpInstance& inst) {
    Mat U0 = Mat::Zero(inst.m(), inst.N);
    if (prev && prev->U.cols() == inst.N && prev->U.rows() == inst.m()) {
        U0.leftCols(inst.N - 1) = prev->U.rightCols(inst.N - 1);
        U0.col(inst.N - 1) = prev->U.col(inst.N - 1);
    }
    if (constraint_values(U0, inst).maxCoeff() > 0.0) U0 = project_feasible(U0, inst);
    return U0;
}

namespace detail {

/// Largest feasible step along Utilde (capped at 1) and the blocking
/// constraint id, if any. Ties break to the lowest id.
inline std::pair<double, int> max_feasible_step(const Mat& U, const Mat& Utilde,
                                                const FtocpInstance& inst, const ActiveSet& act) {
    const int N = inst.N, m = inst.m();
    const double ts = inst.t_s();
    double amax = 1.0;
    int blocking = -1;
    auto consider = [&](int id, double g, double dg) {
        if (act.contains(id) || dg <= 1e-14) return;
        double a = std::max(0.0, -g / dg);
        if (a < amax - 1e-15 || (a <= amax && blocking >= 0 && id < blocking && a < 1.0)) {
            if (a < 1.0) {
                amax = a;
                blocking = id;
            }
        }
    };
    Vec lo, hi;
    for (int k = 0; k < N; ++k) {
        inst.effective_bounds(k, lo, hi);
        for (int j = 0; j < m; ++j) {
            consider(act.bound_id(k, j, -1), lo[j] - U(j, k), -Utilde(j, k));
            consider(act.bound_id(k, j, +1), U(j, k) - hi[j], Utilde(j, k));
        }
    }
    for (int r = 1; r < N; ++r)
        for (int j = 0; j < m; ++j) {
            double g_lo = inst.con.du_min[j] - (U(j, r) - U(j, r - 1)) / ts;
            double g_hi = (U(j, r) - U(j, r - 1)) / ts - inst.con.du_max[j];
            double d = (Utilde(j, r) - Utilde(j, r - 1)) / ts;
            consider(act.rate_id(r, j, -1), g_lo, -d);
            consider(act.rate_id(r, j, +1), g_hi, d);
        }
    return {amax, blocking};
}

/// Linear rollout z~_{k+1} = A_k z~_k + B_k u~_k (z~_0 = 0) and the model
/// directional derivative sum e^T u~ + f^T z~ of the cost.
inline double direction_slope(const Mat& Utilde, const LocalQp& qp) {
    const int N = static_cast<int>(Utilde.cols());
    const int n = static_cast<int>(qp.Hz.size());
    double slope = 0.0;
    Vec zt = Vec::Zero(n);
    for (int k = 0; k < N; ++k) {
        zt = qp.A[static_cast<std::size_t>(k)] * zt + qp.B[static_cast<std::size_t>(k)] * Utilde.col(k);
        slope += qp.e[static_cast<std::size_t>(k)].dot(Utilde.col(k)) +
                 qp.f[static_cast<std::size_t>(k)].dot(zt);
    }
    return slope;
}

}  // namespace detail

/// The Nonlinear Active Set iteration: local QP direction via the structured
/// KKT solve, backtracking Armijo line search with projected directions on
/// blocking constraints, constraint release on negative multipliers. Every
/// iterate stays primal feasible and the cost never increases.
inline NasResult nas_solve(const FtocpInstance& inst, const Mat& U0, const NasConfig& cfg) {
    const int N = inst.N;
    NasResult res;
    res.U = U0;
    res.Z = rollout(res.U, inst);
    res.cost = total_cost(res.U, res.Z, inst);
    res.active = ActiveSet(N, inst.m());
    res.reason = NasTermination::MaxIterations;

    // seed the active set with constraints exactly at their boundary
    {
        Vec g = constraint_values(res.U, inst);
        for (int id = 0; id < g.size(); ++id)
            if (g[id] >= -1e-12) res.active.try_add(id);
    }

    const double dir_tol = 1e-10;
    for (int it = 0; it < cfg.maxit; ++it) {
        res.iterations = it + 1;
        LocalQp qp;
        KktSolution sol;
        try {
            qp = build_local_qp(res.U, res.Z, inst, cfg);
            sol = solve_kkt(qp, res.active, cfg.maxiterref);
        } catch (const Error&) {
            res.reason = NasTermination::NoProgress;
            break;  // self-healing: return the best feasible iterate so far
        }

        if (sol.Utilde.lpNorm<Eigen::Infinity>() < dir_tol * (1.0 + res.U.norm())) {
            // KKT of the local QP satisfied; release or stop
            if (release_constraints(sol.multipliers, res.active, cfg.dualtol) == 0) {
                res.reason = NasTermination::KktSatisfied;
                break;
            }
            continue;
        }

        Mat Utilde = sol.Utilde;
        double slope = detail::direction_slope(Utilde, qp);
        int projections = 0;
        bool improved = false;

        while (true) {
            if (slope >= 0.0 || Utilde.lpNorm<Eigen::Infinity>() < dir_tol) break;
            auto [amax, blocking] = detail::max_feasible_step(res.U, Utilde, inst, res.active);
            if (amax < 1e-14) {
                // already sitting on the blocking constraint: project and retry
                if (blocking >= 0 && projections < cfg.maxproj && res.active.try_add(blocking)) {
                    project_direction(Utilde, blocking, res.active);
                    slope = detail::direction_slope(Utilde, qp);
                    ++projections;
                    continue;
                }
                break;
            }

            // backtracking line search from amax; keep the best examined step
            double alpha = amax, best_alpha = 0.0, best_cost = res.cost;
            Mat bestU, bestZ;
            for (int trial = 0; trial < 60 && alpha > 1e-12; ++trial) {
                Mat Ut = res.U + alpha * Utilde;
                double cost;
                Mat Zt;
                try {
                    Zt = rollout(Ut, inst);
                    cost = total_cost(Ut, Zt, inst);
                } catch (const Error&) {
                    alpha *= cfg.backtrack;
                    continue;
                }
                if (cost < best_cost) {
                    best_cost = cost;
                    best_alpha = alpha;
                    bestU = std::move(Ut);
                    bestZ = std::move(Zt);
                }
                if (cost - res.cost <= cfg.decrease * alpha * slope) break;  // Armijo
                alpha *= cfg.backtrack;
            }

            if (best_alpha <= 0.0) break;  // no decrease along this direction

            res.U = std::move(bestU);
            res.Z = std::move(bestZ);
            res.cost = best_cost;
            improved = true;

            if (blocking >= 0 && best_alpha >= amax * (1.0 - 1e-12)) {
                // landed on a new constraint
                bool added = res.active.try_add(blocking);
                if (added && projections < cfg.maxproj) {
                    project_direction(Utilde, blocking, res.active);
                    slope = detail::direction_slope(Utilde, qp);
                    ++projections;
                    continue;
                }
            }
            break;
        }

        // numerical safety: keep the iterate exactly feasible
        if (constraint_values(res.U, inst).maxCoeff() > 0.0) {
            res.U = project_feasible(res.U, inst);
            res.Z = rollout(res.U, inst);
            res.cost = total_cost(res.U, res.Z, inst);
        }

        if (!improved) {
            // stale linearization or fully blocked: try releasing, else stop
            if (release_constraints(sol.multipliers, res.active, cfg.dualtol) == 0) {
                res.reason = NasTermination::NoProgress;
                break;
            }
        }
    }
    return res;
}

}  // namespace nasmpc
