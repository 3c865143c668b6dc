#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "nasmpc/nas.hpp"

namespace nasmpc {

struct ControllerConfig {
    double dt = 0.05;           ///< sampling time t_s [s]
    int Npar = 30;              ///< prediction horizon N
    int Nn = 100;               ///< trajectory segment capacity S_max
    int segsearch = 5;          ///< localization window [segments]
    double cuptime = 2.0;       ///< catch-up time for trajectory tracking [s]
    double maxrefvelmod = 0.2;  ///< max relative reference speed modification
    double conpenalty = 100.0;  ///< soft-constraint slope lambda
    double contolerance = 0.1;  ///< soft-constraint smoothing width tau [m]
    int onesteppred = 0;        ///< predict the initial state one step ahead
    double v_still = 0.05;      ///< standstill speed threshold [m/s]
    double switch_dist = 0.3;   ///< distance to a mode boundary at which a
                                ///< standstill transition may engage [m]
    IntegratorConfig integ;     ///< internal prediction model integration
    NasConfig nas;
};

/// Outputs of one MPC step, in the fixed order drivmode, u0, Useq, Ref, Zseq.
struct ControllerOutputs {
    int drivmode = 0;  ///< commanded driving mode
    Vec u0;            ///< m, input to apply now
    Vec useq;          ///< N*m, full predicted input sequence (stage-major)
    Vec ref;           ///< 9N reference fields (x,y,phi,v,a,delta,beta,d_left,d_right)
    Vec zseq;          ///< (N+1)*n predicted states (stage-major)

    // diagnostics (not part of the packed interface)
    bool fault = false;
    double cost = 0.0;
    int nas_iterations = 0;
    int localized_seg = 0;
};

/// Receding-horizon tracking controller: validates inputs, gates trajectories
/// by time stamp, runs the driving-mode state machine, assembles one FTOCP
/// per step and solves it with the NAS method. Any internal failure degrades
/// to a bounded braking output and the controller retries next step.
class Controller {
public:
    Controller(const ModelSpec& model, ControllerConfig cfg) : model_(&model), cfg_(cfg) {
        cfg_.integ.dt = cfg_.dt;
        u_prev_ = Vec::Zero(model.m());
    }

    const ControllerConfig& config() const { return cfg_; }
    double time() const { return time_; }
    int drivmode() const { return drivmode_; }
    bool has_trajectory() const { return traj_.has_value(); }
    const Trajectory& trajectory() const { return *traj_; }

    /// Accepts a raw trajectory array only when it validates and carries a
    /// newer time stamp than the stored one; otherwise the previous
    /// trajectory is retained and the rejection reason recorded.
    bool submit_trajectory(const std::vector<double>& raw) {
        Trajectory t;
        try {
            t = validate_trajectory(raw, cfg_.Nn);
        } catch (const Error& e) {
            last_rejection_ = e.what();
            return false;
        }
        if (traj_ && t.header.T <= traj_->header.T) {
            last_rejection_ = "time stamp not newer than the stored trajectory";
            return false;
        }
        traj_ = std::move(t);
        loc_.reset();
        prev_.reset();
        at_end_ = false;
        pending_seg_.reset();
        last_rejection_.clear();
        return true;
    }

    const std::string& last_rejection() const { return last_rejection_; }

    /// One sampling instant: z_hat is the measured (or estimated) state,
    /// ucon the stacked [U_min; U_max; dU_min; dU_max] input constraints.
    ControllerOutputs mpc_step(const Vec& z_hat, const Weights& weights, const Vec& ucon) {
        const double now = time_;
        time_ += cfg_.dt;
        const int N = cfg_.Npar, n = model_->n(), m = model_->m();
        InputConstraints con = InputConstraints::from_stacked(ucon);

        if (!z_hat.allFinite() || !con.valid() || !traj_)
            return fault_output(z_hat, con, "invalid input or no trajectory");

        // initial condition, optionally predicted one step ahead with the
        // input currently in effect
        Vec z0;
        try {
            z0 = cfg_.onesteppred ? integrate_step(*model_, z_hat, u_prev_, cfg_.integ) : z_hat;
        } catch (const Error& e) {
            return fault_output(z_hat, con, e.what());
        }

        const Trajectory& traj = *traj_;
        const double v = z0[3];
        Eigen::Vector2d pos = to_local(traj, {z0[0], z0[1]});

        std::optional<Localization> loc;
        if (!at_end_) {
            int filter = (drivmode_ == 1 || drivmode_ == 2) ? drivmode_ : kAnyMode;
            loc = localize(traj, pos, loc_, cfg_.segsearch, filter);
            if (!loc && filter != kAnyMode)
                loc = localize(traj, pos, loc_, cfg_.segsearch, kAnyMode);
            if (!loc) return fault_output(z_hat, con, "localization failed");
        }

        // ---- driving-mode state machine ----
        if (!at_end_) {
            if (drivmode_ == 0) {
                if (pending_seg_) {
                    // waiting at a direction change: pick up the next mode run
                    if (std::fabs(v) <= cfg_.v_still) {
                        if (int nxt = next_driving_segment(traj, *pending_seg_); nxt > 0) {
                            drivmode_ = traj.segments[static_cast<std::size_t>(nxt - 1)].D;
                            last_dir_mode_ = drivmode_;
                            std::optional<Localization> seed = Localization{nxt, 0.0, 0.0, 0.0};
                            loc = localize(traj, pos, seed, cfg_.segsearch, drivmode_);
                            if (!loc) return fault_output(z_hat, con, "localization failed");
                            pending_seg_.reset();
                        } else {
                            at_end_ = true;
                        }
                    }
                } else {
                    // initial adoption of the localized segment's mode
                    int d = traj.segments[static_cast<std::size_t>(loc->seg - 1)].D;
                    if (d == 0) {
                        pending_seg_ = loc->seg;
                    } else {
                        drivmode_ = d;
                        last_dir_mode_ = d;
                        loc = localize(traj, pos, loc_, cfg_.segsearch, drivmode_);
                        if (!loc) return fault_output(z_hat, con, "localization failed");
                    }
                }
            }
            if (drivmode_ == 1 || drivmode_ == 2) {
                auto [boundary, remaining] = mode_run_remaining(traj, *loc);
                if (remaining <= cfg_.switch_dist && std::fabs(v) <= cfg_.v_still) {
                    if (boundary > 0) {
                        pending_seg_ = boundary;  // hold at standstill, resume next step
                    } else {
                        at_end_ = true;  // path end reached: emergency stop
                    }
                    drivmode_ = 0;
                }
            }
        }
        loc_ = loc;

        // ---- references ----
        std::vector<RefPoint> refs_local;
        if (drivmode_ == 0 || at_end_ || !loc) {
            refs_local.assign(static_cast<std::size_t>(N), hold_ref(traj, loc));
        } else {
            refs_local = generate_references(traj, *loc, now, N, cfg_.dt, cfg_.cuptime,
                                             cfg_.maxrefvelmod);
        }

        // the solver works in the global frame the states live in
        std::vector<RefPoint> refs_global = refs_local;
        for (RefPoint& r : refs_global) {
            Eigen::Vector2d g = to_global(traj, {r.x_ref, r.y_ref});
            r.x_ref = g.x();
            r.y_ref = g.y();
            r.phi_ref = wrap_angle(r.phi_ref + traj.header.Phi);
        }

        // ---- FTOCP assembly and solve ----
        FtocpInstance inst;
        inst.model = model_;
        inst.integ = cfg_.integ;
        inst.N = N;
        inst.refs = std::move(refs_global);
        inst.weights = weights;
        inst.con = con;
        inst.pen.lambda = cfg_.conpenalty;
        inst.pen.tau = cfg_.contolerance;
        inst.u_prev = u_prev_;
        inst.z0 = z0;

        NasResult res;
        try {
            Mat U0 = warm_start(prev_, inst);
            res = nas_solve(inst, U0, cfg_.nas);
        } catch (const Error& e) {
            return fault_output(z_hat, con, e.what());
        }
        if (!res.U.allFinite() || !res.Z.allFinite())
            return fault_output(z_hat, con, "solver produced non-finite values");
        prev_ = res;
        u_prev_ = res.U.col(0);
        fault_ = false;

        ControllerOutputs out;
        out.drivmode = drivmode_;
        out.u0 = res.U.col(0);
        out.useq.resize(N * m);
        for (int k = 0; k < N; ++k) out.useq.segment(k * m, m) = res.U.col(k);
        out.ref.resize(9 * N);
        for (int k = 0; k < N; ++k) {
            const RefPoint& r = refs_local[static_cast<std::size_t>(k)];
            out.ref.segment(9 * k, 9) << r.x_ref, r.y_ref, r.phi_ref, r.v_ref, r.a_ref,
                r.delta_ref, r.beta_ref, r.d_left, r.d_right;
        }
        out.zseq.resize((N + 1) * n);
        for (int k = 0; k <= N; ++k) out.zseq.segment(k * n, n) = res.Z.col(k);
        out.cost = res.cost;
        out.nas_iterations = res.iterations;
        out.localized_seg = loc ? loc->seg : 0;
        return out;
    }

private:
    const ModelSpec* model_;
    ControllerConfig cfg_;
    std::optional<Trajectory> traj_;
    std::optional<Localization> loc_;
    std::optional<NasResult> prev_;
    Vec u_prev_;
    double time_ = 0.0;
    int drivmode_ = 0;
    int last_dir_mode_ = 1;  ///< last commanded driving direction (heading target while braking)
    std::optional<int> pending_seg_;  ///< boundary segment of the upcoming mode run
    bool at_end_ = false;
    bool fault_ = false;
    std::string last_rejection_;

    /// First segment at or after `from` (wrapping on circular paths) with a
    /// driving mode, or 0 when none exists.
    int next_driving_segment(const Trajectory& traj, int from) const {
        const int S = traj.header.S;
        const bool circular = traj.header.ptype == 2;
        for (int c = 0, i = from; c < S; ++c, ++i) {
            if (i > S) {
                if (!circular) break;
                i = 1;
            }
            int d = traj.segments[static_cast<std::size_t>(i - 1)].D;
            if (d == 1 || d == 2) return i;
        }
        return 0;
    }

    /// (boundary segment index or 0, arc distance from loc to the end of the
    /// current same-mode run). Infinite on single-mode circular paths.
    std::pair<int, double> mode_run_remaining(const Trajectory& traj,
                                              const Localization& loc) const {
        const int S = traj.header.S;
        const bool circular = traj.header.ptype == 2;
        const int mode0 = traj.segments[static_cast<std::size_t>(loc.seg - 1)].D;
        const double arc = loc.arc_position(traj);
        for (int c = 0, i = loc.seg; c < S; ++c, ++i) {
            if (i > S) {
                if (!circular) return {0, traj.total_length() - arc};
                i = 1;
            }
            if (traj.segments[static_cast<std::size_t>(i - 1)].D != mode0) {
                double end = traj.cum_len[static_cast<std::size_t>(i - 1)];
                double rem = (c > 0 && i <= loc.seg) ? end + traj.total_length() - arc
                                                     : end - arc;
                return {i, rem};
            }
        }
        if (circular) return {0, std::numeric_limits<double>::infinity()};
        return {0, traj.total_length() - arc};
    }

    /// Standstill reference at the localization point (path end / mode hold).
    RefPoint hold_ref(const Trajectory& traj, const std::optional<Localization>& loc) const {
        RefPoint r;
        if (loc) {
            r = detail::ref_at(traj, loc->arc_position(traj), loc->seg);
        } else {
            r = detail::ref_at(traj, traj.total_length(), traj.header.S);
        }
        r.v_ref = 0.0;
        r.a_ref = 0.0;
        r.D = last_dir_mode_;  // keep the heading target of the last direction
        return r;
    }

    /// Bounded braking output used whenever a step cannot be completed:
    /// maximum deceleration within the box and rate window, zero steering
    /// rate, driving mode unchanged.
    ControllerOutputs fault_output(const Vec& z_hat, const InputConstraints& con,
                                   const std::string& why) {
        fault_ = true;
        last_rejection_ = why;
        const int N = cfg_.Npar, n = model_->n(), m = model_->m();
        Vec lo = con.u_min.cwiseMax(u_prev_ + cfg_.dt * con.du_min);
        Vec hi = con.u_max.cwiseMin(u_prev_ + cfg_.dt * con.du_max);
        Vec u0 = Vec::Zero(m);
        double v = (z_hat.size() > 3 && std::isfinite(z_hat[3])) ? z_hat[3] : 0.0;
        if (v > cfg_.v_still)
            u0[0] = con.u_min[0];
        else if (v < -cfg_.v_still)
            u0[0] = con.u_max[0];
        u0 = u0.cwiseMax(lo).cwiseMin(hi);
        u_prev_ = u0;
        prev_.reset();

        ControllerOutputs out;
        out.fault = true;
        out.drivmode = drivmode_;
        out.u0 = u0;
        out.useq = u0.replicate(N, 1);
        out.ref = Vec::Zero(9 * N);
        out.zseq = Vec::Zero((N + 1) * n);
        if (z_hat.allFinite() && z_hat.size() == n) {
            try {
                Mat U = u0.replicate(1, N);
                FtocpInstance inst;
                inst.model = model_;
                inst.integ = cfg_.integ;
                inst.N = N;
                inst.z0 = z_hat;
                Mat Z = rollout(U, inst);
                for (int k = 0; k <= N; ++k) out.zseq.segment(k * n, n) = Z.col(k);
            } catch (const Error&) {
                // leave the predicted states zeroed
            }
        }
        return out;
    }
};

}  // namespace nasmpc
