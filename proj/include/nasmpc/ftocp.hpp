#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "nasmpc/integrate.hpp"
#include "nasmpc/refgen.hpp"

namespace nasmpc {

/// Diagonal stage-cost weights.
struct Weights {
    Vec R;  ///< m input weights, all > 0
    Vec Q;  ///< n state weights, all >= 0
};

/// Input bounds and rate limits; all intervals must contain 0.
struct InputConstraints {
    Vec u_min, u_max;    ///< bounds [input units]
    Vec du_min, du_max;  ///< rates [input units / s]

    /// Ingests the stacked 4m vector [U_min; U_max; dU_min; dU_max].
    static InputConstraints from_stacked(const Vec& ucon) {
        const auto m = ucon.size() / 4;
        InputConstraints c;
        c.u_min = ucon.segment(0, m);
        c.u_max = ucon.segment(m, m);
        c.du_min = ucon.segment(2 * m, m);
        c.du_max = ucon.segment(3 * m, m);
        return c;
    }

    Vec to_stacked() const {
        const auto m = u_min.size();
        Vec ucon(4 * m);
        ucon << u_min, u_max, du_min, du_max;
        return ucon;
    }

    bool valid() const {
        return (u_min.array() < 0.0).all() && (u_max.array() > 0.0).all() &&
               (du_min.array() < 0.0).all() && (du_max.array() > 0.0).all();
    }
};

/// Soft-constraint penalty parameters.
struct PenaltyParams {
    double lambda = 100.0;  ///< slope [cost per meter of violation]
    double tau = 0.1;       ///< smoothing width [m]
};

/// Penalty on constraint violation eps [m]:
///   0                        for eps <= 0
///   lambda eps^3 / (3 tau^2) for 0 < eps < tau
///   lambda (eps - 2 tau / 3) for eps >= tau
/// C1 everywhere, C2 at eps = 0.
inline double penalty(double eps, const PenaltyParams& p) {
    if (eps <= 0.0) return 0.0;
    if (eps < p.tau) return p.lambda * eps * eps * eps / (3.0 * p.tau * p.tau);
    return p.lambda * (eps - 2.0 * p.tau / 3.0);
}

/// First derivative of penalty().
inline double penalty_deriv(double eps, const PenaltyParams& p) {
    if (eps <= 0.0) return 0.0;
    if (eps < p.tau) return p.lambda * eps * eps / (p.tau * p.tau);
    return p.lambda;
}

/// Signed lateral offset of (X, Y) from the reference line through
/// (x_ref, y_ref) with direction phi_ref; left of travel is positive.
inline double lateral_offset(double X, double Y, const RefPoint& ref) {
    double dx = X - ref.x_ref, dy = Y - ref.y_ref;
    return -std::sin(ref.phi_ref) * dx + std::cos(ref.phi_ref) * dy;
}

/// Corridor violations (eps_left, eps_right) in meters; positive = violated.
inline std::pair<double, double> violation(const Vec& z, const RefPoint& ref) {
    double l = lateral_offset(z[0], z[1], ref);
    return {l - ref.d_left, -l - ref.d_right};
}

inline double wrap_angle(double a) { return std::atan2(std::sin(a), std::cos(a)); }

/// One FTOCP to be solved at a sampling instant. Immutable once assembled.
/// Reference points are expected in the same (global) frame as the states;
/// driving direction is taken from each reference point's mode: reverse
/// segments target v = -v_ref, a = -a_ref and heading phi_ref + pi.
struct FtocpInstance {
    const ModelSpec* model = nullptr;
    IntegratorConfig integ;
    int N = 1;
    std::vector<RefPoint> refs;  ///< N points, for prediction steps 1..N
    Weights weights;
    InputConstraints con;
    PenaltyParams pen;
    Vec u_prev;  ///< input applied at step -1 (enters the k=0 rate window)
    Vec z0;      ///< initial state

    double t_s() const { return integ.dt; }
    int n() const { return model->n(); }
    int m() const { return model->m(); }

    /// Direction sign of reference k (1-based prediction step).
    static double dir_of(const RefPoint& r) { return r.D == 1 ? 1.0 : r.D == 2 ? -1.0 : 0.0; }

    /// Number of inequality constraints: 2Nm bounds (the k=0 rate window is
    /// folded into the k=0 bounds, as u_prev is fixed) plus 2(N-1)m rates.
    int num_constraints() const { return (4 * N - 2) * m(); }

    /// Effective bounds at step k: the box intersected with the rate window
    /// around u_prev for k = 0.
    void effective_bounds(int k, Vec& lo, Vec& hi) const {
        lo = con.u_min;
        hi = con.u_max;
        if (k == 0) {
            lo = lo.cwiseMax(u_prev + t_s() * con.du_min);
            hi = hi.cwiseMin(u_prev + t_s() * con.du_max);
        }
    }
};

/// Rolls out the model from inst.z0 under the input matrix U (m x N).
/// Returns the n x (N+1) state matrix, column k = z_k.
inline Mat rollout(const Mat& U, const FtocpInstance& inst) {
    Mat Z(inst.n(), inst.N + 1);
    Z.col(0) = inst.z0;
    for (int k = 0; k < inst.N; ++k)
        Z.col(k + 1) = integrate_step(*inst.model, Z.col(k), U.col(k), inst.integ);
    return Z;
}

namespace detail {

/// Path-aligned position errors (longitudinal e_s, lateral e_l).
inline std::pair<double, double> path_errors(const Vec& z, const RefPoint& ref) {
    double c = std::cos(ref.phi_ref), s = std::sin(ref.phi_ref);
    double dx = z[0] - ref.x_ref, dy = z[1] - ref.y_ref;
    return {c * dx + s * dy, -s * dx + c * dy};
}

inline double input_stage_cost(const Vec& u, const RefPoint& ref, const Weights& w) {
    double dir = FtocpInstance::dir_of(ref);
    double c = w.R[0] * std::pow(u[0] - dir * ref.a_ref, 2) + w.R[1] * u[1] * u[1];
    for (Eigen::Index j = 2; j < u.size(); ++j) c += w.R[j] * u[j] * u[j];
    return c;
}

inline double state_stage_cost(const Vec& z, const RefPoint& ref, const Weights& w) {
    double dir = FtocpInstance::dir_of(ref);
    auto [es, el] = path_errors(z, ref);
    double phi_t = dir < 0.0 ? ref.phi_ref + M_PI : ref.phi_ref;
    double c = w.Q[0] * es * es + w.Q[1] * el * el +
               w.Q[2] * std::pow(wrap_angle(z[2] - phi_t), 2) +
               w.Q[3] * std::pow(z[3] - dir * ref.v_ref, 2) +
               w.Q[4] * std::pow(z[4] - ref.delta_ref, 2);
    for (Eigen::Index j = 5; j < z.size(); ++j) c += w.Q[j] * z[j] * z[j];
    return c;
}

}  // namespace detail

/// Objective of the FTOCP: sum over k = 1..N of input stage cost (on u_{k-1}),
/// state stage cost (on z_k) and the left/right corridor penalties.
/// Z must be the rollout of U (columns 0..N); this op does not re-simulate.
inline double total_cost(const Mat& U, const Mat& Z, const FtocpInstance& inst) {
    double cost = 0.0;
    for (int k = 1; k <= inst.N; ++k) {
        const RefPoint& ref = inst.refs[static_cast<std::size_t>(k - 1)];
        cost += detail::input_stage_cost(U.col(k - 1), ref, inst.weights);
        cost += detail::state_stage_cost(Z.col(k), ref, inst.weights);
        auto [el, er] = violation(Z.col(k), ref);
        cost += penalty(el, inst.pen) + penalty(er, inst.pen);
    }
    return cost;
}

/// Constraint residuals g <= 0 in the fixed global ordering:
///   for k = 0..N-1: m lower-bound rows, m upper-bound rows (k = 0 bounds
///   are the effective bounds including the u_prev rate window);
///   then for k = 1..N-1: m lower-rate rows, m upper-rate rows (scaled 1/t_s).
inline Vec constraint_values(const Mat& U, const FtocpInstance& inst) {
    const int N = inst.N, m = inst.m();
    const double ts = inst.t_s();
    Vec g(inst.num_constraints());
    Vec lo, hi;
    for (int k = 0; k < N; ++k) {
        inst.effective_bounds(k, lo, hi);
        g.segment(2 * m * k, m) = lo - U.col(k);
        g.segment(2 * m * k + m, m) = U.col(k) - hi;
    }
    int off = 2 * N * m;
    for (int k = 1; k < N; ++k) {
        Vec rate = (U.col(k) - U.col(k - 1)) / ts;
        g.segment(off + 2 * m * (k - 1), m) = inst.con.du_min - rate;
        g.segment(off + 2 * m * (k - 1) + m, m) = rate - inst.con.du_max;
    }
    return g;
}

/// Forward clamping pass: u_k into [u_min, u_max] intersected with the rate
/// window around the (already clamped) previous input. Idempotent on
/// feasible sequences; the result satisfies constraint_values <= 0.
inline Mat project_feasible(const Mat& U, const FtocpInstance& inst) {
    Mat Up = U;
    Vec prev = inst.u_prev;
    for (int k = 0; k < inst.N; ++k) {
        Vec lo = inst.con.u_min.cwiseMax(prev + inst.t_s() * inst.con.du_min);
        Vec hi = inst.con.u_max.cwiseMin(prev + inst.t_s() * inst.con.du_max);
        Up.col(k) = Up.col(k).cwiseMax(lo).cwiseMin(hi);
        prev = Up.col(k);
    }
    return Up;
}

}  // namespace nasmpc
