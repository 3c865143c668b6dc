#pragma once

#include <chrono>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nasmpc/controller.hpp"
#include "nasmpc/scenario.hpp"

namespace nasmpc {

struct SimStep {
    double time = 0.0;
    Vec z;           ///< plant state before applying u0
    Vec u0;
    int drivmode = 0;
    int seg = 0;     ///< localized segment
    double cost = 0.0;
    int nas_iterations = 0;
    double solver_ms = 0.0;
    bool fault = false;
};

struct SimLog {
    std::vector<SimStep> steps;
};

struct SimConfig {
    int steps = 1000;
    unsigned seed = 0;
    double noise_sigma = 0.0;  ///< std. dev. of additive measurement noise
    int plant_supnds = 9;      ///< plant integrates finer than the controller model
};

/// Receding-horizon closed loop: measure (optionally with seeded Gaussian
/// noise), run one controller step, apply u0 to the plant. Controller faults
/// are logged and the loop continues. Deterministic for a fixed seed.
inline SimLog run_closed_loop(const Trajectory& traj, const ModelSpec& plant,
                              Controller& ctl, const Weights& weights, const Vec& ucon,
                              const Vec& z_start, const SimConfig& sim) {
    if (sim.steps < 1) throw Error("run_closed_loop: steps must be >= 1");
    ctl.submit_trajectory(trajectory_to_flat(traj, ctl.config().Nn));

    IntegratorConfig plant_integ = ctl.config().integ;
    plant_integ.supnds = sim.plant_supnds;

    std::mt19937_64 rng(sim.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    SimLog log;
    log.steps.reserve(static_cast<std::size_t>(sim.steps));
    Vec z = z_start;
    for (int k = 0; k < sim.steps; ++k) {
        Vec z_meas = z;
        if (sim.noise_sigma > 0.0)
            for (Eigen::Index i = 0; i < z_meas.size(); ++i)
                z_meas[i] += sim.noise_sigma * gauss(rng);

        auto tic = std::chrono::steady_clock::now();
        ControllerOutputs out = ctl.mpc_step(z_meas, weights, ucon);
        auto toc = std::chrono::steady_clock::now();

        SimStep row;
        row.time = k * ctl.config().dt;
        row.z = z;
        row.u0 = out.u0;
        row.drivmode = out.drivmode;
        row.seg = out.localized_seg;
        row.cost = out.cost;
        row.nas_iterations = out.nas_iterations;
        row.solver_ms = std::chrono::duration<double, std::milli>(toc - tic).count();
        row.fault = out.fault;
        log.steps.push_back(std::move(row));

        z = integrate_step(plant, z, out.u0, plant_integ);
    }
    return log;
}

/// CSV dump with a versioned schema comment line.
inline std::string sim_log_to_csv(const SimLog& log) {
    std::ostringstream out;
    out.precision(12);
    out << "# nasmpc simlog v1\n";
    out << "time";
    if (!log.steps.empty()) {
        for (Eigen::Index i = 0; i < log.steps[0].z.size(); ++i) out << ",z" << i;
        for (Eigen::Index i = 0; i < log.steps[0].u0.size(); ++i) out << ",u" << i;
    }
    out << ",drivmode,seg,cost,nas_iterations,solver_ms,fault\n";
    for (const SimStep& s : log.steps) {
        out << s.time;
        for (Eigen::Index i = 0; i < s.z.size(); ++i) out << "," << s.z[i];
        for (Eigen::Index i = 0; i < s.u0.size(); ++i) out << "," << s.u0[i];
        out << "," << s.drivmode << "," << s.seg << "," << s.cost << "," << s.nas_iterations
            << "," << s.solver_ms << "," << (s.fault ? 1 : 0) << "\n";
    }
    return out.str();
}

/// Plot-ready whitespace data: gnuplot-style blocks (reference polyline,
/// left corridor boundary, right corridor boundary, driven path), each a list
/// of global x y pairs separated by blank lines.
inline std::string plot_data(const Trajectory& traj, const SimLog& log) {
    std::ostringstream out;
    out.precision(12);
    out << "# reference polyline (x y)\n";
    for (int i = 0; i <= traj.header.S; ++i) {
        Eigen::Vector2d g = to_global(traj, traj.node(i));
        out << g.x() << " " << g.y() << "\n";
    }
    out << "\n\n# left corridor boundary (x y)\n";
    for (int i = 1; i <= traj.header.S; ++i) {
        const TrajectorySegment& s = traj.segments[static_cast<std::size_t>(i - 1)];
        Eigen::Vector2d nrm(-std::sin(s.phi_seg), std::cos(s.phi_seg));
        for (int end = 0; end < 2; ++end) {
            Eigen::Vector2d p = traj.node(i - 1 + end) + s.d_left * nrm;
            Eigen::Vector2d g = to_global(traj, p);
            out << g.x() << " " << g.y() << "\n";
        }
    }
    out << "\n\n# right corridor boundary (x y)\n";
    for (int i = 1; i <= traj.header.S; ++i) {
        const TrajectorySegment& s = traj.segments[static_cast<std::size_t>(i - 1)];
        Eigen::Vector2d nrm(-std::sin(s.phi_seg), std::cos(s.phi_seg));
        for (int end = 0; end < 2; ++end) {
            Eigen::Vector2d p = traj.node(i - 1 + end) - s.d_right * nrm;
            Eigen::Vector2d g = to_global(traj, p);
            out << g.x() << " " << g.y() << "\n";
        }
    }
    out << "\n\n# driven path (x y)\n";
    for (const SimStep& s : log.steps) out << s.z[0] << " " << s.z[1] << "\n";
    return out.str();
}

}  // namespace nasmpc
