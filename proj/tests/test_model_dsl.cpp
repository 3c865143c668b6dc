#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "nasmpc/model.hpp"

using namespace nasmpc;

namespace {

std::array<double, 5> ode_at(const ModelSpec& m, std::array<double, 5> z,
                             std::array<double, 2> u) {
    std::array<double, 5> dz{};
    eval_ode(m, z, u, dz);
    return dz;
}

}  // namespace

TEST_CASE("KBM text parses with the documented symbols") {
    ModelSpec m = parse_model(kbm_text());
    REQUIRE(m.n() == 5);
    REQUIRE(m.m() == 2);
    REQUIRE(m.state_names == std::vector<std::string>{"x", "y", "phi", "v", "delta"});
    REQUIRE(m.input_names == std::vector<std::string>{"a", "ddelta"});
    REQUIRE(m.param_names == std::vector<std::string>{"lflr", "lrOlflr"});
    REQUIRE(m.param_values[0] == Catch::Approx(2.843));
    REQUIRE(m.param_values[1] == Catch::Approx(0.6113));
}

TEST_CASE("builtin_kbm equals parse_model of the KBM text") {
    ModelSpec a = builtin_kbm();
    ModelSpec b = parse_model(kbm_text());
    REQUIRE(a.state_names == b.state_names);
    REQUIRE(a.input_names == b.input_names);
    REQUIRE(a.param_names == b.param_names);
    REQUIRE(a.param_values == b.param_values);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::array<double, 5> z{dist(rng), dist(rng), dist(rng), dist(rng), 0.5 * dist(rng)};
        std::array<double, 2> u{dist(rng), dist(rng)};
        auto da = ode_at(a, z, u), db = ode_at(b, z, u);
        for (int i = 0; i < 5; ++i) REQUIRE(da[i] == db[i]);
    }
}

TEST_CASE("KBM derivative values at pinned states") {
    ModelSpec m = builtin_kbm();

    SECTION("straight line at unit speed") {
        auto dz = ode_at(m, {0, 0, 0, 1, 0}, {0, 0});
        REQUIRE(dz[0] == Catch::Approx(1.0).margin(1e-15));
        REQUIRE(dz[1] == Catch::Approx(0.0).margin(1e-15));
        REQUIRE(dz[2] == Catch::Approx(0.0).margin(1e-15));
        REQUIRE(dz[3] == Catch::Approx(0.0).margin(1e-15));
        REQUIRE(dz[4] == Catch::Approx(0.0).margin(1e-15));
    }
    SECTION("zero steering passes the inputs through") {
        auto dz = ode_at(m, {0, 0, 0, 2, 0}, {0.5, 0.1});
        REQUIRE(dz[0] == Catch::Approx(2.0).margin(1e-15));
        REQUIRE(dz[3] == Catch::Approx(0.5).margin(1e-15));
        REQUIRE(dz[4] == Catch::Approx(0.1).margin(1e-15));
    }
    SECTION("steered motion includes the sideslip angle") {
        double beta = std::atan(0.6113 * std::tan(0.2));
        auto dz = ode_at(m, {0, 0, 0, 1, 0.2}, {0, 0});
        REQUIRE(dz[0] == Catch::Approx(std::cos(beta)).epsilon(1e-14));
        REQUIRE(dz[1] == Catch::Approx(std::sin(beta)).epsilon(1e-14));
        REQUIRE(dz[2] == Catch::Approx(std::cos(beta) * std::tan(0.2) / 2.843).epsilon(1e-14));
    }
    SECTION("heading rotation symmetry") {
        auto dz = ode_at(m, {0, 0, M_PI / 2.0, 1, 0}, {0, 0});
        REQUIRE(std::fabs(dz[0]) < 1e-14);
        REQUIRE(dz[1] == Catch::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("eval_ode is pure and bit-identical across calls") {
    ModelSpec m = builtin_kbm();
    std::array<double, 5> z{0.3, -1.2, 0.7, 3.1, 0.15};
    std::array<double, 2> u{0.4, -0.2};
    auto d1 = ode_at(m, z, u);
    auto d2 = ode_at(m, z, u);
    for (int i = 0; i < 5; ++i) REQUIRE(d1[i] == d2[i]);
}

TEST_CASE("parameters line may be empty") {
    ModelSpec m = parse_model(
        "states: x, y, phi, v, delta\n"
        "inputs: a, ddelta\n"
        "parameters:\n"
        "dot(x)=v;\ndot(y)=0;\ndot(phi)=0;\ndot(v)=a;\ndot(delta)=ddelta;\n");
    REQUIRE(m.param_names.empty());
    auto dz = ode_at(m, {0, 0, 0, 2, 0}, {1, 0});
    REQUIRE(dz[0] == 2.0);
    REQUIRE(dz[3] == 1.0);
}

TEST_CASE("parser diagnostics") {
    SECTION("missing derivative") {
        REQUIRE_THROWS_AS(parse_model("states: x, y, phi, v, delta\n"
                                      "inputs: a, ddelta\n"
                                      "dot(x)=v;\ndot(phi)=0;\ndot(v)=a;\ndot(delta)=ddelta;\n"),
                          MissingDerivative);
    }
    SECTION("duplicate derivative") {
        REQUIRE_THROWS_AS(parse_model("states: x, y, phi, v, delta\n"
                                      "inputs: a, ddelta\n"
                                      "dot(x)=v;\ndot(x)=v;\ndot(y)=0;\ndot(phi)=0;\n"
                                      "dot(v)=a;\ndot(delta)=ddelta;\n"),
                          DuplicateDerivative);
    }
    SECTION("unknown identifier") {
        REQUIRE_THROWS_AS(parse_model("states: x, y, phi, v, delta\n"
                                      "inputs: a, ddelta\n"
                                      "dot(x)=bogus;\ndot(y)=0;\ndot(phi)=0;\n"
                                      "dot(v)=a;\ndot(delta)=ddelta;\n"),
                          UnknownIdentifier);
    }
    SECTION("empty document") { REQUIRE_THROWS_AS(parse_model(""), SyntaxError); }
    SECTION("malformed equation") {
        REQUIRE_THROWS_AS(parse_model("states: x, y, phi, v, delta\n"
                                      "inputs: a, ddelta\n"
                                      "dot(x)=v+;\ndot(y)=0;\ndot(phi)=0;\n"
                                      "dot(v)=a;\ndot(delta)=ddelta;\n"),
                          SyntaxError);
    }
    SECTION("deleting any mandatory state rejects") {
        const char* names[] = {"x", "y", "phi", "v", "delta"};
        for (const char* drop : names) {
            std::string states = "states:";
            bool first = true;
            for (const char* s : names) {
                if (std::string(s) == drop) continue;
                states += first ? " " : ", ";
                states += s;
                first = false;
            }
            std::string text = states + "\ninputs: a, ddelta\n";
            REQUIRE_THROWS_AS(parse_model(text + "dot(x)=1;\n"), Error);
        }
    }
    SECTION("mandatory ordering enforced") {
        REQUIRE_THROWS_AS(parse_model("states: y, x, phi, v, delta\n"
                                      "inputs: a, ddelta\n"
                                      "dot(x)=v;\ndot(y)=0;\ndot(phi)=0;\n"
                                      "dot(v)=a;\ndot(delta)=ddelta;\n"),
                          MandatoryStateMissing);
    }
}

TEST_CASE("comments and whitespace are ignored") {
    ModelSpec m = parse_model(
        "# leading comment\n"
        "states: x, y, phi, v, delta  // trailing\n"
        "inputs: a, ddelta\n"
        "\n"
        "dot(x) = v ; # hash comment\n"
        "dot(y)=0;\ndot(phi)=0;\ndot(v)=a;\ndot(delta)=ddelta;\n");
    REQUIRE(ode_at(m, {0, 0, 0, 3, 0}, {0, 0})[0] == 3.0);
}

TEST_CASE("expression grammar precedence") {
    auto scalar = [](const std::string& rhs) {
        ModelSpec m = parse_model("states: x, y, phi, v, delta\ninputs: a, ddelta\n"
                                  "dot(x)=" + rhs + ";\ndot(y)=0;\ndot(phi)=0;\n"
                                  "dot(v)=0;\ndot(delta)=0;\n");
        return ode_at(m, {0, 0, 0, 2, 0.5}, {3, 4})[0];
    };
    // unary minus binds tighter than the power operator
    REQUIRE(scalar("-v^2") == Catch::Approx(4.0));
    // power is left-associative
    REQUIRE(scalar("2^3^2") == Catch::Approx(64.0));
    REQUIRE(scalar("1+2*3") == Catch::Approx(7.0));
    REQUIRE(scalar("(1+2)*3") == Catch::Approx(9.0));
    REQUIRE(scalar("6/2/3") == Catch::Approx(1.0));
    REQUIRE(scalar("atan2(1, 1)") == Catch::Approx(M_PI / 4.0));
    REQUIRE(scalar("pow(v, 3)") == Catch::Approx(8.0));
    REQUIRE(scalar("fabs(-v)") == Catch::Approx(2.0));
}

TEST_CASE("serialize-parse round trip is semantically identical") {
    ModelSpec a = builtin_kbm();
    ModelSpec b = parse_model(serialize_model(a));
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dist(-3.0, 3.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::array<double, 5> z{dist(rng), dist(rng), dist(rng), dist(rng), 0.4 * dist(rng)};
        std::array<double, 2> u{dist(rng), dist(rng)};
        auto da = ode_at(a, z, u), db = ode_at(b, z, u);
        for (int i = 0; i < 5; ++i)
            REQUIRE(std::fabs(da[i] - db[i]) <= 1e-15 * std::max(1.0, std::fabs(da[i])));
    }
}

TEST_CASE("non-finite derivative raises NonFiniteResult") {
    ModelSpec m = parse_model("states: x, y, phi, v, delta\ninputs: a, ddelta\n"
                              "dot(x)=1/v;\ndot(y)=0;\ndot(phi)=0;\ndot(v)=a;\ndot(delta)=0;\n");
    std::array<double, 5> z{0, 0, 0, 0, 0};
    std::array<double, 2> u{0, 0};
    std::array<double, 5> dz{};
    REQUIRE_THROWS_AS(eval_ode(m, z, u, dz), NonFiniteResult);
}
