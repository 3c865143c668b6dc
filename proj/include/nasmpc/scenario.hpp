#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nasmpc/trajectory.hpp"

namespace nasmpc {

/// Circular test course: Nn nodes on a circle of radius Rad with four
/// obstacles narrowing the driving corridor, two protruding from the inner
/// wall and two from the outer wall.
struct CircularScenario {
    double Rad = 30.0;    ///< circle radius [m]
    double vref = 5.0;    ///< reference speed [m/s]
    double alpha = 0.35;  ///< angular size of the full obstacle protrusion [rad]
    double beta = 0.25;   ///< angular size of each linear transition [rad]
    double Oin = 1.2;     ///< protrusion of the inner-wall obstacles [m]
    double Oout = 1.2;    ///< protrusion of the outer-wall obstacles [m]
    double pwidth = 5.0;  ///< corridor width [m]
    int Nn = 24;          ///< number of polyline segments
    bool reverse = false; ///< drive the course in reverse gear
};

/// Two-arc parking maneuver: straight L1 and a 90-degree arc of radius R1
/// driven in one direction, a standstill point B, then a 90-degree arc of
/// radius R2 and straight L2 driven in the other direction.
struct ParkingScenario {
    double L1 = 20.0;
    double R1 = 12.0;
    double R2 = 12.0;
    double L2 = 10.0;
    double vref = 2.0;
    double pwidth = 5.0;
    double a_lim = 1.0;    ///< ramp acceleration for the speed profile [m/s^2]
    double wheelbase = 2.843;  ///< for the steering feedforward [m]
    bool reverse_park = true;  ///< true: forward first, then reverse (Fig.-9 style)
};

namespace detail {

/// Linear-transition obstacle profile: full depth within +-alpha/2 of the
/// center angle, fading to zero over beta on either side.
inline double obstacle_depth(double theta, double center, double alpha, double beta,
                             double depth) {
    double d = std::fabs(std::remainder(theta - center, 2.0 * M_PI));
    if (d <= alpha / 2.0) return depth;
    if (d <= alpha / 2.0 + beta) return depth * (1.0 - (d - alpha / 2.0) / beta);
    return 0.0;
}

}  // namespace detail

/// Builds the circular course as a Ptype=2 trajectory. The local frame root
/// sits on the circle at global (Rad, 0) with the local x-axis tangential,
/// so the header carries a non-trivial rigid transform.
inline Trajectory scenario_circular(const CircularScenario& sc) {
    if (sc.Rad <= 0.0 || sc.Nn < 8) throw Error("circular scenario: Rad > 0 and Nn >= 8 required");
    if (sc.alpha <= 0.0 || sc.beta <= 0.0 || 4.0 * (sc.alpha + 2.0 * sc.beta) >= 2.0 * M_PI)
        throw Error("circular scenario: obstacle spans must fit the circle");
    if (sc.Oin >= sc.pwidth || sc.Oout >= sc.pwidth)
        throw Error("circular scenario: obstacle protrusion exceeds the corridor width");

    std::vector<double> raw(static_cast<std::size_t>(trajectory_wire_size(sc.Nn)), 0.0);
    raw[0] = 1.0;           // time stamp
    raw[1] = sc.Rad;        // root at global (Rad, 0)
    raw[2] = 0.0;
    raw[3] = M_PI / 2.0;    // local x-axis tangential (counter-clockwise travel)
    raw[4] = 2.0;           // circular path
    raw[5] = static_cast<double>(sc.Nn);

    // local coordinates: circle center at (0, Rad), node k at angle 2 pi k / Nn
    auto node_at = [&](int k) {
        double th = 2.0 * M_PI * k / sc.Nn;
        return Eigen::Vector2d(sc.Rad * std::sin(th), sc.Rad * (1.0 - std::cos(th)));
    };
    const double delta_ff = std::atan(2.843 / sc.Rad);  // steady-cornering feedforward
    for (int i = 1; i <= sc.Nn; ++i) {
        Eigen::Vector2d a = node_at(i - 1), b = node_at(i);
        double th_mid = 2.0 * M_PI * (i - 0.5) / sc.Nn;
        double d_left = sc.pwidth / 2.0, d_right = sc.pwidth / 2.0;
        // inner-wall obstacles at 0 and pi (left of travel is the circle center),
        // outer-wall obstacles at pi/2 and 3 pi/2
        d_left -= detail::obstacle_depth(th_mid, 0.0, sc.alpha, sc.beta, sc.Oin);
        d_left -= detail::obstacle_depth(th_mid, M_PI, sc.alpha, sc.beta, sc.Oin);
        d_right -= detail::obstacle_depth(th_mid, M_PI / 2.0, sc.alpha, sc.beta, sc.Oout);
        d_right -= detail::obstacle_depth(th_mid, 3.0 * M_PI / 2.0, sc.alpha, sc.beta, sc.Oout);

        double* p = raw.data() + kHeaderFields + kSegmentFields * (i - 1);
        p[0] = 2.0 * M_PI * sc.Rad * i / (sc.Nn * std::max(sc.vref, 1e-6));
        p[1] = b.x();
        p[2] = b.y();
        p[3] = std::atan2(b.y() - a.y(), b.x() - a.x());
        p[4] = sc.vref;
        p[5] = 0.0;
        p[6] = sc.reverse ? -delta_ff : delta_ff;
        p[7] = std::atan(0.6113 * std::tan(p[6]));
        p[8] = sc.reverse ? 2.0 : 1.0;
        p[9] = d_left;
        p[10] = d_right;
    }
    return validate_trajectory(raw, sc.Nn);
}

/// Suitable start state (x, y, phi, v, delta) for the circular course in
/// global coordinates: at rest on the path root.
inline Vec circular_start_state(const CircularScenario& sc) {
    Vec z0 = Vec::Zero(5);
    z0[0] = sc.Rad;
    z0[1] = 0.0;
    z0[2] = sc.reverse ? -M_PI / 2.0 : M_PI / 2.0;
    return z0;
}

namespace detail {

struct PathPoint {
    Eigen::Vector2d p;
    double phi;    // travel direction of the following chord's tangent
    double s;      // arc length from the phase start
    double delta;  // steering feedforward
};

}  // namespace detail

/// Builds the parking maneuver as a Ptype=1 trajectory in a trivial frame.
/// Geometry (reverse_park variant): forward along +y for L1, a right-hand
/// 90-degree arc of radius R1 ending at the standstill point B heading +x,
/// then in reverse gear along an arc of radius R2 and a straight of length
/// L2, ending parallel to the initial lane. The forward variant swaps the
/// gears on the same polyline.
inline Trajectory scenario_parking(const ParkingScenario& sc) {
    if (sc.L1 <= 0.0 || sc.R1 <= 0.0 || sc.R2 <= 0.0 || sc.L2 <= 0.0 || sc.vref <= 0.0)
        throw Error("parking scenario: all lengths and vref must be positive");

    // sampled polyline points per phase, phase 1 ending exactly at B
    auto arc_steps = [](double len) { return std::max(6, static_cast<int>(std::ceil(len / 0.5))); };
    std::vector<detail::PathPoint> ph1, ph2;

    {   // phase 1: straight +y then arc (center (R1, L1)) from angle pi to pi/2
        int ns = std::max(1, static_cast<int>(std::ceil(sc.L1 / 1.0)));
        for (int i = 0; i <= ns; ++i)
            ph1.push_back({{0.0, sc.L1 * i / ns}, M_PI / 2.0, sc.L1 * i / ns, 0.0});
        int na = arc_steps(sc.R1 * M_PI / 2.0);
        double dff = std::atan(sc.wheelbase / sc.R1);
        for (int i = 1; i <= na; ++i) {
            double th = M_PI - (M_PI / 2.0) * i / na;  // pi -> pi/2
            Eigen::Vector2d p(sc.R1 + sc.R1 * std::cos(th), sc.L1 + sc.R1 * std::sin(th));
            ph1.push_back({p, th - M_PI / 2.0, sc.L1 + sc.R1 * (M_PI - th), -dff});
        }
    }
    const Eigen::Vector2d B(sc.R1, sc.L1 + sc.R1);
    {   // phase 2: arc (center (R1, L1+R1-R2)) from angle pi/2 to pi, travel -x
        // curving down, then straight -y for L2
        int na = arc_steps(sc.R2 * M_PI / 2.0);
        double dff = std::atan(sc.wheelbase / sc.R2);
        Eigen::Vector2d c(sc.R1, sc.L1 + sc.R1 - sc.R2);
        ph2.push_back({B, M_PI, 0.0, dff});  // left turn in the travel frame
        for (int i = 1; i <= na; ++i) {
            double th = M_PI / 2.0 + (M_PI / 2.0) * i / na;
            Eigen::Vector2d p(c.x() + sc.R2 * std::cos(th), c.y() + sc.R2 * std::sin(th));
            ph2.push_back({p, th + M_PI / 2.0, sc.R2 * (th - M_PI / 2.0), dff});
        }
        int ns = std::max(1, static_cast<int>(std::ceil(sc.L2 / 1.0)));
        Eigen::Vector2d e(sc.R1 - sc.R2, sc.L1 + sc.R1 - sc.R2);
        double s0 = sc.R2 * M_PI / 2.0;
        for (int i = 1; i <= ns; ++i)
            ph2.push_back({{e.x(), e.y() - sc.L2 * i / ns}, -M_PI / 2.0, s0 + sc.L2 * i / ns, 0.0});
    }

    // trapezoidal speed profile per phase (never zero inside a phase, so the
    // reference marching cannot stall)
    auto vel = [&](double s, double total) {
        double v = std::min({sc.vref, std::sqrt(2.0 * sc.a_lim * std::max(s, 0.0)),
                             std::sqrt(2.0 * sc.a_lim * std::max(total - s, 0.0))});
        return std::max(v, 0.3);
    };
    auto acc = [&](double s, double total) {
        if (std::sqrt(2.0 * sc.a_lim * s) < sc.vref && s < total / 2.0) return sc.a_lim;
        if (std::sqrt(2.0 * sc.a_lim * (total - s)) < sc.vref) return -sc.a_lim;
        return 0.0;
    };

    const int d_first = sc.reverse_park ? 1 : 2;
    const int d_second = sc.reverse_park ? 2 : 1;
    const int S = static_cast<int>(ph1.size()) - 1 + 1 + static_cast<int>(ph2.size()) - 1;
    std::vector<double> raw(static_cast<std::size_t>(trajectory_wire_size(S)), 0.0);
    raw[0] = 1.0;  // time stamp; root frame is trivial
    raw[4] = 1.0;  // regular path
    raw[5] = static_cast<double>(S);

    int seg = 0;
    auto emit = [&](const detail::PathPoint& from, const detail::PathPoint& to, double total,
                    int mode, double delta_sign) {
        double* p = raw.data() + kHeaderFields + kSegmentFields * seg++;
        double smid = 0.5 * (from.s + to.s);
        p[0] = 0.0;
        p[1] = to.p.x();
        p[2] = to.p.y();
        p[3] = std::atan2(to.p.y() - from.p.y(), to.p.x() - from.p.x());
        p[4] = vel(smid, total);
        p[5] = acc(smid, total);
        p[6] = delta_sign * from.delta;
        p[7] = std::atan(0.6113 * std::tan(p[6]));
        p[8] = static_cast<double>(mode);
        p[9] = sc.pwidth / 2.0;
        p[10] = sc.pwidth / 2.0;
    };

    double total1 = ph1.back().s, total2 = ph2.back().s;
    // a reversing vehicle needs the opposite steering sign to follow the
    // same travel-frame curvature
    double sign1 = d_first == 2 ? -1.0 : 1.0;
    double sign2 = d_second == 2 ? -1.0 : 1.0;
    for (std::size_t i = 1; i < ph1.size(); ++i) emit(ph1[i - 1], ph1[i], total1, d_first, sign1);
    {   // zero-length standstill segment at B
        double* p = raw.data() + kHeaderFields + kSegmentFields * seg++;
        p[1] = B.x();
        p[2] = B.y();
        p[3] = M_PI;  // travel direction of the upcoming phase
        p[8] = 0.0;
    }
    for (std::size_t i = 1; i < ph2.size(); ++i) emit(ph2[i - 1], ph2[i], total2, d_second, sign2);

    return validate_trajectory(raw, S);
}

/// Start state for the parking maneuver: at rest at the path root, heading
/// +y when the first phase is forward, -y when it is reverse.
inline Vec parking_start_state(const ParkingScenario& sc) {
    Vec z0 = Vec::Zero(5);
    z0[2] = sc.reverse_park ? M_PI / 2.0 : -M_PI / 2.0;
    return z0;
}

/// End pose (x, y, heading) of the parking maneuver in global coordinates.
inline Eigen::Vector3d parking_end_pose(const ParkingScenario& sc) {
    double x = sc.R1 - sc.R2;
    double y = sc.L1 + sc.R1 - sc.R2 - sc.L2;
    // phase 2 travel direction is -y; the vehicle heading is opposite when
    // that phase is driven in reverse
    double heading = sc.reverse_park ? M_PI / 2.0 : -M_PI / 2.0;
    return {x, y, heading};
}

}  // namespace nasmpc
