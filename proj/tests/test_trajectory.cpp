#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "nasmpc/trajectory.hpp"

using namespace nasmpc;

namespace {

// minimal two-segment straight path along +x, corridor 2 m each side
std::vector<double> simple_raw(int s_max) {
    std::vector<double> raw(static_cast<std::size_t>(trajectory_wire_size(s_max)), 0.0);
    raw[4] = 1.0;  // Ptype regular path
    raw[5] = 2.0;  // S
    auto seg = [&](int i, double x) {
        double* p = raw.data() + kHeaderFields + kSegmentFields * i;
        p[0] = x / 2.0;  // t
        p[1] = x;        // node x
        p[2] = 0.0;
        p[3] = 0.0;  // phi_seg
        p[4] = 2.0;  // v_ref
        p[8] = 1.0;  // forward
        p[9] = 2.0;
        p[10] = 2.0;
    };
    seg(0, 5.0);
    seg(1, 10.0);
    return raw;
}

}  // namespace

TEST_CASE("validate_trajectory ignores entries beyond segment S") {
    std::vector<double> raw = simple_raw(6);
    // garbage tail past the S=2 segments must be ignored
    for (std::size_t i = kHeaderFields + 2 * kSegmentFields; i < raw.size(); ++i)
        raw[i] = 1e100 * (i % 3 == 0 ? -1.0 : 1.0);
    Trajectory t = validate_trajectory(raw, 6);
    REQUIRE(t.header.S == 2);
    REQUIRE(t.segments.size() == 2);
    REQUIRE(t.total_length() == Catch::Approx(10.0));
    REQUIRE(t.segment_length(1) == Catch::Approx(5.0));
}

TEST_CASE("validate_trajectory rejections") {
    SECTION("wrong array length") {
        std::vector<double> raw(17, 0.0);
        REQUIRE_THROWS_AS(validate_trajectory(raw, 2), Error);
    }
    SECTION("S = 0") {
        auto raw = simple_raw(6);
        raw[5] = 0.0;
        REQUIRE_THROWS_AS(validate_trajectory(raw, 6), BadSegmentCount);
    }
    SECTION("S exceeds capacity") {
        auto raw = simple_raw(6);
        raw[5] = 7.0;
        REQUIRE_THROWS_AS(validate_trajectory(raw, 6), BadSegmentCount);
    }
    SECTION("bad Ptype") {
        auto raw = simple_raw(6);
        raw[4] = 3.0;
        REQUIRE_THROWS_AS(validate_trajectory(raw, 6), BadPtype);
    }
    SECTION("negative reference speed") {
        auto raw = simple_raw(6);
        raw[kHeaderFields + 4] = -1.0;
        REQUIRE_THROWS_AS(validate_trajectory(raw, 6), NegativeRefSpeed);
    }
    SECTION("non-finite header entry") {
        auto raw = simple_raw(6);
        raw[1] = std::numeric_limits<double>::quiet_NaN();
        REQUIRE_THROWS_AS(validate_trajectory(raw, 6), NonFiniteField);
    }
    SECTION("non-finite active segment field") {
        auto raw = simple_raw(6);
        raw[kHeaderFields + kSegmentFields + 2] = std::numeric_limits<double>::infinity();
        REQUIRE_THROWS_AS(validate_trajectory(raw, 6), NonFiniteField);
    }
    SECTION("invalid driving mode") {
        auto raw = simple_raw(6);
        raw[kHeaderFields + 8] = 3.0;
        REQUIRE_THROWS_AS(validate_trajectory(raw, 6), Error);
    }
}

TEST_CASE("phi_seg inconsistency warns but never rejects") {
    auto raw = simple_raw(6);
    raw[kHeaderFields + 3] = 1.0;  // claimed angle deviates from node geometry
    Trajectory t = validate_trajectory(raw, 6);
    REQUIRE_FALSE(t.warnings.empty());
}

TEST_CASE("local/global transforms") {
    auto raw = simple_raw(4);
    raw[1] = 1.0;  // root X
    raw[2] = 2.0;  // root Y
    raw[3] = M_PI / 2.0;
    Trajectory t = validate_trajectory(raw, 4);

    SECTION("pinned rotation example") {
        Eigen::Vector2d l = to_local(t, {1.0, 3.0});
        REQUIRE(l.x() == Catch::Approx(1.0).margin(1e-12));
        REQUIRE(l.y() == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("round trip is the identity") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> d(-50.0, 50.0);
        for (int i = 0; i < 50; ++i) {
            Eigen::Vector2d p(d(rng), d(rng));
            Eigen::Vector2d q = to_global(t, to_local(t, p));
            REQUIRE((p - q).norm() < 1e-12);
        }
    }
    SECTION("trivial frame is the identity") {
        auto raw0 = simple_raw(4);
        Trajectory t0 = validate_trajectory(raw0, 4);
        Eigen::Vector2d p(3.0, -4.0);
        REQUIRE((to_local(t0, p) - p).norm() == 0.0);
    }
}

TEST_CASE("flat wire format round trip is value-identical") {
    auto raw = simple_raw(6);
    raw[0] = 12.5;
    raw[1] = -3.0;
    raw[3] = 0.7;
    Trajectory t = validate_trajectory(raw, 6);
    std::vector<double> back = trajectory_to_flat(t, 6);
    // every meaningful entry (header + S segments) must round trip exactly
    for (int i = 0; i < kHeaderFields + kSegmentFields * t.header.S; ++i)
        REQUIRE(back[static_cast<std::size_t>(i)] == raw[static_cast<std::size_t>(i)]);
    // the tail is zero-filled
    for (std::size_t i = kHeaderFields + kSegmentFields * 2; i < back.size(); ++i)
        REQUIRE(back[i] == 0.0);
}

TEST_CASE("CSV round trip") {
    auto raw = simple_raw(6);
    raw[0] = 2.25;
    Trajectory t = validate_trajectory(raw, 6);
    Trajectory u = trajectory_from_csv(trajectory_to_csv(t), 6);
    REQUIRE(u.header.T == t.header.T);
    REQUIRE(u.header.S == t.header.S);
    REQUIRE(u.header.ptype == t.header.ptype);
    for (int i = 0; i < t.header.S; ++i) {
        const auto& a = t.segments[static_cast<std::size_t>(i)];
        const auto& b = u.segments[static_cast<std::size_t>(i)];
        REQUIRE(b.x == a.x);
        REQUIRE(b.y == a.y);
        REQUIRE(b.v_ref == a.v_ref);
        REQUIRE(b.D == a.D);
        REQUIRE(b.d_left == a.d_left);
        REQUIRE(b.d_right == a.d_right);
    }
    REQUIRE_THROWS_AS(trajectory_from_csv("not,a,trajectory\n", 6), Error);
}

TEST_CASE("wire size formula") {
    REQUIRE(trajectory_wire_size(1) == 17);
    REQUIRE(trajectory_wire_size(100) == 6 + 11 * 100);
}
