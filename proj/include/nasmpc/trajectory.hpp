#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "nasmpc/errors.hpp"

namespace nasmpc {

/// Global trajectory information (entries 0..5 of the wire format).
struct TrajectoryHeader {
    double T = 0.0;    ///< global time stamp [s]
    double X = 0.0;    ///< global X of the trajectory root [m]
    double Y = 0.0;    ///< global Y of the trajectory root [m]
    double Phi = 0.0;  ///< rotation of the local frame [rad]
    int ptype = 1;     ///< 0 = trajectory, 1 = regular path, 2 = circular path
    int S = 0;         ///< number of active segments, 1 <= S <= S_max
};

/// One linear segment, ending at the node (x, y) in local coordinates.
struct TrajectorySegment {
    double t = 0.0;          ///< local passing time of the node [s]
    double x = 0.0;          ///< node x (local) [m]
    double y = 0.0;          ///< node y (local) [m]
    double phi_seg = 0.0;    ///< segment angle vs local x-axis [rad]
    double v_ref = 0.0;      ///< reference speed >= 0 [m/s]
    double a_ref = 0.0;      ///< reference acceleration [m/s^2]
    double delta_ref = 0.0;  ///< reference steering angle [rad]
    double beta_ref = 0.0;   ///< reference sideslip [rad] (carried, unused)
    int D = 1;               ///< driving mode: 0 standstill, 1 forward, 2 reverse
    double d_left = 0.0;     ///< corridor half-width to the left [m], may be negative
    double d_right = 0.0;    ///< corridor half-width to the right [m], may be negative
};

/// Validated reference path or trajectory. Immutable after validation; safe
/// for concurrent reads.
struct Trajectory {
    TrajectoryHeader header;
    std::vector<TrajectorySegment> segments;  // size S
    std::vector<double> cum_len;              // node arc lengths, size S+1, cum_len[0] = 0
    std::vector<std::string> warnings;

    /// Node position in local coordinates; node 0 is the root (0, 0).
    Eigen::Vector2d node(int i) const {
        if (i <= 0) return {0.0, 0.0};
        const auto& s = segments[static_cast<std::size_t>(i - 1)];
        return {s.x, s.y};
    }

    double total_length() const { return cum_len.back(); }

    /// Length of segment i (1-based).
    double segment_length(int i) const {
        return cum_len[static_cast<std::size_t>(i)] - cum_len[static_cast<std::size_t>(i - 1)];
    }
};

inline constexpr int kSegmentFields = 11;
inline constexpr int kHeaderFields = 6;

/// Number of wire-format entries for a given segment capacity.
inline int trajectory_wire_size(int s_max) { return kHeaderFields + kSegmentFields * s_max; }

/// Parses and validates the flat wire format of Tables 1-2: 6 header entries
/// followed by 11 per segment. Entries beyond segment S are ignored.
/// Integral fields (Ptype, S, D) are carried as doubles and rounded.
inline Trajectory validate_trajectory(const std::vector<double>& raw, int s_max) {
    if (static_cast<int>(raw.size()) != trajectory_wire_size(s_max))
        throw Error("trajectory array has wrong length");

    for (int i = 0; i < kHeaderFields; ++i)
        if (!std::isfinite(raw[static_cast<std::size_t>(i)]))
            throw NonFiniteField("non-finite trajectory header entry " + std::to_string(i));

    Trajectory traj;
    traj.header.T = raw[0];
    traj.header.X = raw[1];
    traj.header.Y = raw[2];
    traj.header.Phi = raw[3];
    traj.header.ptype = static_cast<int>(std::lround(raw[4]));
    traj.header.S = static_cast<int>(std::lround(raw[5]));

    if (traj.header.ptype < 0 || traj.header.ptype > 2)
        throw BadPtype("Ptype must be 0, 1 or 2");
    if (traj.header.S < 1 || traj.header.S > s_max)
        throw BadSegmentCount("segment count S must satisfy 1 <= S <= " + std::to_string(s_max));

    traj.segments.resize(static_cast<std::size_t>(traj.header.S));
    for (int i = 0; i < traj.header.S; ++i) {
        const double* p = raw.data() + kHeaderFields + kSegmentFields * i;
        for (int j = 0; j < kSegmentFields; ++j)
            if (!std::isfinite(p[j]))
                throw NonFiniteField("non-finite field " + std::to_string(j) +
                                     " in segment " + std::to_string(i + 1));
        TrajectorySegment& s = traj.segments[static_cast<std::size_t>(i)];
        s.t = p[0];
        s.x = p[1];
        s.y = p[2];
        s.phi_seg = p[3];
        s.v_ref = p[4];
        s.a_ref = p[5];
        s.delta_ref = p[6];
        s.beta_ref = p[7];
        s.D = static_cast<int>(std::lround(p[8]));
        s.d_left = p[9];
        s.d_right = p[10];
        if (s.v_ref < 0.0)
            throw NegativeRefSpeed("v_ref < 0 in segment " + std::to_string(i + 1));
        if (s.D < 0 || s.D > 2)
            throw Error("driving mode must be 0, 1 or 2 in segment " + std::to_string(i + 1));
    }

    traj.cum_len.resize(static_cast<std::size_t>(traj.header.S) + 1);
    traj.cum_len[0] = 0.0;
    for (int i = 1; i <= traj.header.S; ++i) {
        Eigen::Vector2d d = traj.node(i) - traj.node(i - 1);
        traj.cum_len[static_cast<std::size_t>(i)] =
            traj.cum_len[static_cast<std::size_t>(i - 1)] + d.norm();
        // phi_seg is redundant; warn (never reject) when inconsistent
        if (d.norm() > 1e-12) {
            double phi = std::atan2(d.y(), d.x());
            double err = std::remainder(phi - traj.segments[static_cast<std::size_t>(i - 1)].phi_seg,
                                        2.0 * M_PI);
            if (std::fabs(err) > 1e-6)
                traj.warnings.push_back("phi_seg of segment " + std::to_string(i) +
                                        " deviates from node geometry by " + std::to_string(err) +
                                        " rad");
        }
    }
    return traj;
}

/// Serializes back to the flat wire format (unused tail zero-filled).
inline std::vector<double> trajectory_to_flat(const Trajectory& traj, int s_max) {
    std::vector<double> raw(static_cast<std::size_t>(trajectory_wire_size(s_max)), 0.0);
    raw[0] = traj.header.T;
    raw[1] = traj.header.X;
    raw[2] = traj.header.Y;
    raw[3] = traj.header.Phi;
    raw[4] = static_cast<double>(traj.header.ptype);
    raw[5] = static_cast<double>(traj.header.S);
    for (int i = 0; i < traj.header.S; ++i) {
        const TrajectorySegment& s = traj.segments[static_cast<std::size_t>(i)];
        double* p = raw.data() + kHeaderFields + kSegmentFields * i;
        p[0] = s.t;
        p[1] = s.x;
        p[2] = s.y;
        p[3] = s.phi_seg;
        p[4] = s.v_ref;
        p[5] = s.a_ref;
        p[6] = s.delta_ref;
        p[7] = s.beta_ref;
        p[8] = static_cast<double>(s.D);
        p[9] = s.d_left;
        p[10] = s.d_right;
    }
    return raw;
}

/// Global -> local: translate by the root, rotate by -Phi.
inline Eigen::Vector2d to_local(const Trajectory& traj, const Eigen::Vector2d& global) {
    double c = std::cos(traj.header.Phi), s = std::sin(traj.header.Phi);
    Eigen::Vector2d d = global - Eigen::Vector2d(traj.header.X, traj.header.Y);
    return {c * d.x() + s * d.y(), -s * d.x() + c * d.y()};
}

/// Local -> global: rotate by Phi, translate by the root.
inline Eigen::Vector2d to_global(const Trajectory& traj, const Eigen::Vector2d& local) {
    double c = std::cos(traj.header.Phi), s = std::sin(traj.header.Phi);
    return {traj.header.X + c * local.x() - s * local.y(),
            traj.header.Y + s * local.x() + c * local.y()};
}

/// Human-readable CSV form: one header line, then one line per segment in the
/// wire-format column order.
inline std::string trajectory_to_csv(const Trajectory& traj) {
    std::ostringstream out;
    out.precision(17);
    out << "# nasmpc trajectory v1: T,X,Y,Phi,Ptype,S then t,x,y,phi,v,a,delta,beta,D,dleft,dright\n";
    out << traj.header.T << "," << traj.header.X << "," << traj.header.Y << ","
        << traj.header.Phi << "," << traj.header.ptype << "," << traj.header.S << "\n";
    for (const auto& s : traj.segments)
        out << s.t << "," << s.x << "," << s.y << "," << s.phi_seg << "," << s.v_ref << ","
            << s.a_ref << "," << s.delta_ref << "," << s.beta_ref << "," << s.D << ","
            << s.d_left << "," << s.d_right << "\n";
    return out.str();
}

/// Parses the CSV form produced by trajectory_to_csv.
inline Trajectory trajectory_from_csv(const std::string& text, int s_max) {
    std::vector<std::vector<double>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<double> row;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw Error("malformed trajectory CSV number: " + cell);
            }
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty() || rows[0].size() != kHeaderFields)
        throw Error("malformed trajectory CSV header");
    std::vector<double> raw(static_cast<std::size_t>(trajectory_wire_size(s_max)), 0.0);
    for (int i = 0; i < kHeaderFields; ++i) raw[static_cast<std::size_t>(i)] = rows[0][static_cast<std::size_t>(i)];
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != kSegmentFields) throw Error("malformed trajectory CSV segment row");
        for (int j = 0; j < kSegmentFields; ++j)
            raw[static_cast<std::size_t>(kHeaderFields + kSegmentFields * (static_cast<int>(r) - 1) + j)] =
                rows[r][static_cast<std::size_t>(j)];
    }
    return validate_trajectory(raw, s_max);
}

}  // namespace nasmpc
