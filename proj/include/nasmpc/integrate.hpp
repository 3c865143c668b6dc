#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "nasmpc/errors.hpp"
#include "nasmpc/model.hpp"

namespace nasmpc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Fixed-step integration setup. Sub-step length is dt/(1+supnds).
struct IntegratorConfig {
    int method = 5;           ///< 1=Euler, 2=midpoint, 3=RK3 (Kutta/Simpson), 4=RK3 (Heun),
                              ///< 5=classical RK4, 6=implicit Euler, 7=implicit trapezoidal
    int supnds = 0;           ///< number of evenly spaced support nodes per sampling interval
    double newtontol = 1e-14; ///< Newton residual tolerance (implicit methods)
    int newtonit = 10;        ///< max Newton iterations (implicit methods)
    double dt = 0.1;          ///< sampling time t_s [s]
    double fdstep = 1e-6;     ///< finite-difference step for the Newton Jacobian
};

namespace detail {

inline Vec ode(const ModelSpec& model, const Vec& z, const Vec& u) {
    Vec dz(z.size());
    eval_ode(model, {z.data(), static_cast<std::size_t>(z.size())},
             {u.data(), static_cast<std::size_t>(u.size())},
             {dz.data(), static_cast<std::size_t>(dz.size())});
    return dz;
}

/// Newton-Raphson solve of r(z+) = z+ - z - h*(w_e*f(z) + w_i*f(z+)) = 0,
/// warm-started from the explicit-Euler predictor.
inline Vec implicit_substep(const ModelSpec& model, const Vec& z, const Vec& u, double h,
                            double w_explicit, double w_implicit, const IntegratorConfig& cfg) {
    const Vec f0 = ode(model, z, u);
    const Vec base = z + (h * w_explicit) * f0;
    Vec zn = z + h * f0;  // predictor
    const auto n = z.size();
    Mat jac(n, n);
    for (int it = 0; it < cfg.newtonit; ++it) {
        Vec r = zn - base - (h * w_implicit) * ode(model, zn, u);
        if (r.lpNorm<Eigen::Infinity>() <= cfg.newtontol) return zn;
        // finite-difference Jacobian of the residual w.r.t. zn
        for (Eigen::Index j = 0; j < n; ++j) {
            Vec zp = zn;
            zp[j] += cfg.fdstep;
            Vec rp = zp - base - (h * w_implicit) * ode(model, zp, u);
            jac.col(j) = (rp - r) / cfg.fdstep;
        }
        zn -= jac.partialPivLu().solve(r);
        if (!zn.allFinite()) throw NewtonDivergence("Newton iterate became non-finite");
    }
    Vec r = zn - base - (h * w_implicit) * ode(model, zn, u);
    if (r.lpNorm<Eigen::Infinity>() <= cfg.newtontol) return zn;
    throw NewtonDivergence("Newton did not converge within newtonit iterations");
}

inline Vec substep(const ModelSpec& model, const Vec& z, const Vec& u, double h,
                   const IntegratorConfig& cfg) {
    switch (cfg.method) {
        case 1:
            return z + h * ode(model, z, u);
        case 2: {
            Vec k1 = ode(model, z, u);
            return z + h * ode(model, Vec(z + 0.5 * h * k1), u);
        }
        case 3: {  // Kutta's third-order rule
            Vec k1 = ode(model, z, u);
            Vec k2 = ode(model, Vec(z + 0.5 * h * k1), u);
            Vec k3 = ode(model, Vec(z - h * k1 + 2.0 * h * k2), u);
            return z + (h / 6.0) * (k1 + 4.0 * k2 + k3);
        }
        case 4: {  // Heun's third-order rule
            Vec k1 = ode(model, z, u);
            Vec k2 = ode(model, Vec(z + (h / 3.0) * k1), u);
            Vec k3 = ode(model, Vec(z + (2.0 * h / 3.0) * k2), u);
            return z + (h / 4.0) * (k1 + 3.0 * k3);
        }
        case 5: {  // classical RK4
            Vec k1 = ode(model, z, u);
            Vec k2 = ode(model, Vec(z + 0.5 * h * k1), u);
            Vec k3 = ode(model, Vec(z + 0.5 * h * k2), u);
            Vec k4 = ode(model, Vec(z + h * k3), u);
            return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        case 6:
            return implicit_substep(model, z, u, h, 0.0, 1.0, cfg);
        case 7:
            return implicit_substep(model, z, u, h, 0.5, 0.5, cfg);
        default:
            throw Error("invalid integration method " + std::to_string(cfg.method));
    }
}

}  // namespace detail

/// One discrete step z_{k+1} = f(z_k, u_k) with u held constant (zero-order
/// hold), applied over 1+supnds equal sub-steps.
inline Vec integrate_step(const ModelSpec& model, const Vec& z, const Vec& u,
                          const IntegratorConfig& cfg) {
    const int steps = 1 + cfg.supnds;
    const double h = cfg.dt / steps;
    Vec zn = z;
    for (int i = 0; i < steps; ++i) zn = detail::substep(model, zn, u, h, cfg);
    if (!zn.allFinite()) throw NonFiniteState("integration produced a non-finite state");
    return zn;
}

/// Forward-difference linearization of the discrete dynamics at (z, u):
///   A[:,j] = (f(z+h e_j, u) - f(z, u)) / h,  B[:,j] = (f(z, u+h e_j) - f(z, u)) / h.
inline void linearize_discrete(const ModelSpec& model, const Vec& z, const Vec& u,
                               const IntegratorConfig& cfg, double h, Mat& A, Mat& B) {
    const Vec f0 = integrate_step(model, z, u, cfg);
    const auto n = z.size();
    const auto m = u.size();
    A.resize(n, n);
    B.resize(n, m);
    Vec zp = z, up = u;
    for (Eigen::Index j = 0; j < n; ++j) {
        zp[j] += h;
        A.col(j) = (integrate_step(model, zp, u, cfg) - f0) / h;
        zp[j] = z[j];
    }
    for (Eigen::Index j = 0; j < m; ++j) {
        up[j] += h;
        B.col(j) = (integrate_step(model, z, up, cfg) - f0) / h;
        up[j] = u[j];
    }
}

}  // namespace nasmpc
