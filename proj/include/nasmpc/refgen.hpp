#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "nasmpc/trajectory.hpp"

namespace nasmpc {

/// Result of projecting the vehicle position onto the reference polyline.
struct Localization {
    int seg = 1;               ///< segment index, 1..S
    double s = 0.0;            ///< arc-length parameter within the segment [m]
    double dist = 0.0;         ///< Euclidean distance vehicle -> projection [m]
    double lagging_time = 0.0; ///< signed schedule error [s], trajectory type only

    double arc_position(const Trajectory& traj) const {
        return traj.cum_len[static_cast<std::size_t>(seg - 1)] + s;
    }
};

/// Any driving mode matches this filter value.
inline constexpr int kAnyMode = -1;

namespace detail {

/// Projection of pos onto segment i; returns (s within segment, distance).
inline std::pair<double, double> project_on_segment(const Trajectory& traj, int i,
                                                    const Eigen::Vector2d& pos) {
    Eigen::Vector2d a = traj.node(i - 1), b = traj.node(i);
    Eigen::Vector2d d = b - a;
    double len = d.norm();
    if (len < 1e-12) return {0.0, (pos - a).norm()};
    double s = std::clamp((pos - a).dot(d) / len, 0.0, len);
    return {s, (pos - (a + (s / len) * d)).norm()};
}

}  // namespace detail

/// Windowed closest-point search on the polyline. Starts max(1, prev.seg -
/// segsearch) segments back (segment 1 without prev), scans forward, and
/// terminates once no new minimum has been found for segsearch consecutive
/// segments. Segments whose driving mode differs from mode_filter are
/// skipped. Circular paths (Ptype = 2) wrap modulo S.
///
/// Returns nullopt when no segment in the window matches the mode filter.
inline std::optional<Localization> localize(const Trajectory& traj, const Eigen::Vector2d& pos,
                                            const std::optional<Localization>& prev,
                                            int segsearch, int mode_filter = kAnyMode) {
    const int S = traj.header.S;
    const bool circular = traj.header.ptype == 2;
    int start = prev ? std::max(1, prev->seg - segsearch) : 1;

    std::optional<Localization> best;
    int since_min = 0;
    for (int step = 0; step < S; ++step) {
        int i = start + step;
        if (i > S) {
            if (!circular) break;
            i = (i - 1) % S + 1;
        }
        const TrajectorySegment& seg = traj.segments[static_cast<std::size_t>(i - 1)];
        if (mode_filter != kAnyMode && seg.D != mode_filter) {
            // skipped segments do not count towards the termination window
            continue;
        }
        auto [s, dist] = detail::project_on_segment(traj, i, pos);
        if (!best || dist < best->dist) {
            best = Localization{i, s, dist, 0.0};
            since_min = 0;
        } else if (++since_min >= segsearch) {
            break;
        }
    }
    return best;
}

/// Arc position scheduled at the given time offset since the trajectory time
/// stamp, interpolating linearly in time along each segment (Ptype = 0 only).
inline double scheduled_arc_position(const Trajectory& traj, double time_since_stamp) {
    double t_prev = 0.0;
    for (int i = 1; i <= traj.header.S; ++i) {
        double t_i = traj.segments[static_cast<std::size_t>(i - 1)].t;
        if (time_since_stamp <= t_prev) return traj.cum_len[static_cast<std::size_t>(i - 1)];
        if (time_since_stamp < t_i) {
            double frac = (time_since_stamp - t_prev) / (t_i - t_prev);
            return traj.cum_len[static_cast<std::size_t>(i - 1)] +
                   frac * traj.segment_length(i);
        }
        t_prev = t_i;
    }
    return traj.total_length();
}

/// Per-prediction-step reference values (the 9 fields of the Ref output),
/// plus the hosting segment's driving mode for the controller.
struct RefPoint {
    double x_ref = 0.0, y_ref = 0.0;  // local frame [m]
    double phi_ref = 0.0;             // [rad]
    double v_ref = 0.0;               // [m/s]
    double a_ref = 0.0;               // [m/s^2]
    double delta_ref = 0.0;           // [rad]
    double beta_ref = 0.0;            // [rad]
    double d_left = 0.0, d_right = 0.0;  // [m]
    int D = 1;  // driving mode of the hosting segment (not part of the 9N output)
};

namespace detail {

/// Hosting segment for an arc position (position exactly on a node belongs to
/// the following segment, except at the path end).
inline int hosting_segment(const Trajectory& traj, double arc) {
    const int S = traj.header.S;
    for (int i = 1; i <= S; ++i)
        if (arc <= traj.cum_len[static_cast<std::size_t>(i)] + 1e-12 &&
            traj.segment_length(i) > 1e-12)
            return i;
    return S;
}

inline RefPoint ref_at(const Trajectory& traj, double arc, int seg_idx) {
    const TrajectorySegment& seg = traj.segments[static_cast<std::size_t>(seg_idx - 1)];
    Eigen::Vector2d a = traj.node(seg_idx - 1), b = traj.node(seg_idx);
    double len = traj.segment_length(seg_idx);
    double s = arc - traj.cum_len[static_cast<std::size_t>(seg_idx - 1)];
    Eigen::Vector2d p = len < 1e-12 ? a : Eigen::Vector2d(a + (std::clamp(s / len, 0.0, 1.0)) * (b - a));
    RefPoint r;
    r.x_ref = p.x();
    r.y_ref = p.y();
    r.phi_ref = seg.phi_seg;
    r.v_ref = seg.v_ref;
    r.a_ref = seg.a_ref;
    r.delta_ref = seg.delta_ref;
    r.beta_ref = seg.beta_ref;
    r.d_left = seg.d_left;
    r.d_right = seg.d_right;
    r.D = seg.D;
    return r;
}

}  // namespace detail

/// Marches forward along the polyline from the localization point, one
/// predicted travel distance v_eff * t_s per step.
///
/// - Ptype 0: v_eff = clamp(v_ref + ds_lag / cuptime, v_ref (1 -
///   maxrefvelmod), v_ref (1 + maxrefvelmod)) with ds_lag the signed arc
///   distance between the timed reference position at `now` and the
///   localization point.
/// - Ptype 2: marching wraps past the final node.
/// - Ptype 0/1: marching past the final node freezes the position with
///   v_ref = 0 (emergency-stop references).
/// - Marching never crosses into a segment with a different driving mode
///   than the localized one; the reference freezes at the boundary instead.
inline std::vector<RefPoint> generate_references(const Trajectory& traj, const Localization& loc,
                                                 double now, int N, double t_s, double cuptime,
                                                 double maxrefvelmod) {
    const int S = traj.header.S;
    const bool circular = traj.header.ptype == 2;
    const double total = traj.total_length();

    double ds_lag = 0.0;
    if (traj.header.ptype == 0 && cuptime > 0.0)
        ds_lag = scheduled_arc_position(traj, now - traj.header.T) - loc.arc_position(traj);

    // end of the same-driving-mode run the localization sits in
    const int mode0 = traj.segments[static_cast<std::size_t>(loc.seg - 1)].D;
    double run_end = total;
    bool run_wraps = false;
    {
        int count = 0;
        for (int i = loc.seg; count < S; ++count, ++i) {
            if (i > S) {
                if (!circular) break;
                i = 1;
            }
            if (traj.segments[static_cast<std::size_t>(i - 1)].D != mode0) {
                run_end = traj.cum_len[static_cast<std::size_t>(i - 1)];
                run_wraps = i < loc.seg || (i == loc.seg && count > 0);
                break;
            }
        }
        if (count == S && circular) run_wraps = true, run_end = std::numeric_limits<double>::infinity();
    }

    std::vector<RefPoint> refs;
    refs.reserve(static_cast<std::size_t>(N));
    double cur = loc.arc_position(traj);
    double travelled = 0.0;  // cumulative march distance, for wrap bookkeeping
    double run_budget;       // distance until the mode boundary (or path end)
    if (std::isinf(run_end)) {
        run_budget = std::numeric_limits<double>::infinity();
    } else if (run_wraps) {
        run_budget = run_end + total - cur;
    } else {
        run_budget = run_end - cur;
    }

    for (int k = 0; k < N; ++k) {
        bool frozen = travelled >= run_budget - 1e-12 || mode0 == 0;
        int seg_idx = detail::hosting_segment(traj, std::min(cur, total));
        const TrajectorySegment& seg = traj.segments[static_cast<std::size_t>(seg_idx - 1)];
        double v_eff = seg.v_ref;
        if (traj.header.ptype == 0 && cuptime > 0.0)
            v_eff = std::clamp(seg.v_ref + ds_lag / cuptime, seg.v_ref * (1.0 - maxrefvelmod),
                               seg.v_ref * (1.0 + maxrefvelmod));
        if (!frozen && v_eff > 0.0) {
            double adv = std::min(v_eff * t_s, run_budget - travelled);
            travelled += adv;
            cur += adv;
            if (circular && cur >= total && total > 0.0) cur = std::fmod(cur, total);
        }
        frozen = travelled >= run_budget - 1e-12 || mode0 == 0;
        seg_idx = detail::hosting_segment(traj, std::min(cur, total));
        RefPoint r = detail::ref_at(traj, std::min(cur, total), seg_idx);
        if (frozen) {
            r.v_ref = 0.0;
            r.a_ref = 0.0;
        }
        refs.push_back(r);
    }
    return refs;
}

}  // namespace nasmpc
