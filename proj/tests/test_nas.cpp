#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "nasmpc/nas.hpp"

using namespace nasmpc;

namespace {

RefPoint line_ref(double x, double v, int D = 1) {
    RefPoint r;
    r.x_ref = x;
    r.phi_ref = 0.0;
    r.v_ref = v;
    r.d_left = 2.0;
    r.d_right = 2.0;
    r.D = D;
    return r;
}

FtocpInstance make_instance(const ModelSpec& model, int N, double v) {
    FtocpInstance inst;
    inst.model = &model;
    inst.integ.method = 5;
    inst.integ.dt = 0.1;
    inst.N = N;
    inst.weights.R = Vec(2);
    inst.weights.R << 0.5, 1.0;
    inst.weights.Q = Vec(5);
    inst.weights.Q << 1.0, 2.0, 1.5, 1.0, 0.2;
    Vec ucon(8);
    ucon << -4.0, -0.5, 3.0, 0.5, -20.0, -5.0, 20.0, 5.0;
    inst.con = InputConstraints::from_stacked(ucon);
    inst.u_prev = Vec::Zero(2);
    inst.z0 = Vec::Zero(5);
    inst.z0[3] = v;
    for (int k = 1; k <= N; ++k) inst.refs.push_back(line_ref(v * 0.1 * k, v));
    return inst;
}

// random equality QP data with a well-conditioned Schur complement
LocalQp random_qp(std::mt19937_64& rng, int N, int n, int m) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::uniform_real_distribution<double> pos(0.5, 2.0);
    LocalQp qp;
    qp.Hu = Vec::NullaryExpr(m, [&](Eigen::Index) { return pos(rng); });
    qp.Hz = Vec::NullaryExpr(n, [&](Eigen::Index) { return pos(rng); });
    for (int k = 0; k < N; ++k) {
        Mat A = 0.3 * Mat::NullaryExpr(n, n, [&](Eigen::Index, Eigen::Index) { return d(rng); });
        A += Mat::Identity(n, n);
        Mat B = Mat::NullaryExpr(n, m, [&](Eigen::Index, Eigen::Index) { return d(rng); });
        qp.A.push_back(std::move(A));
        qp.B.push_back(std::move(B));
        qp.e.push_back(Vec::NullaryExpr(m, [&](Eigen::Index) { return d(rng); }));
        qp.f.push_back(Vec::NullaryExpr(n, [&](Eigen::Index) { return d(rng); }));
    }
    return qp;
}

ActiveSet random_active_set(std::mt19937_64& rng, int N, int m, int tries) {
    ActiveSet act(N, m);
    int total = (4 * N - 2) * m;
    for (int i = 0; i < tries; ++i) act.try_add(static_cast<int>(rng() % total));
    return act;
}

// dense reference solve of the full KKT system of the equality-constrained QP
std::pair<Mat, Mat> dense_kkt(const LocalQp& qp, const ActiveSet& act) {
    const int N = act.N(), m = act.m();
    const int n = static_cast<int>(qp.Hz.size());
    const int bw = m + n, nv = N * bw;

    // count active rows and build G row by row in block order
    std::vector<Eigen::RowVectorXd> rows;
    Vec rhs_f(nv);
    for (int k = 0; k < N; ++k) {
        rhs_f.segment(k * bw, m) = qp.e[static_cast<std::size_t>(k)];
        rhs_f.segment(k * bw + m, n) = qp.f[static_cast<std::size_t>(k)];
        for (int j = 0; j < m; ++j)
            if (int s = act.bound(k, j); s != 0) {
                Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nv);
                row[k * bw + j] = s;
                rows.push_back(std::move(row));
            }
        if (k >= 1)
            for (int j = 0; j < m; ++j)
                if (int s = act.rate(k, j); s != 0) {
                    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nv);
                    row[k * bw + j] = s;
                    row[(k - 1) * bw + j] = -s;
                    rows.push_back(std::move(row));
                }
        // dynamics: B_k u~_k + A_k z~_k - z~_{k+1} = 0 (z~_0 = 0)
        for (int i = 0; i < n; ++i) {
            Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(nv);
            for (int j = 0; j < m; ++j) row[k * bw + j] = qp.B[static_cast<std::size_t>(k)](i, j);
            row[k * bw + m + i] = -1.0;
            if (k >= 1)
                for (int j = 0; j < n; ++j)
                    row[(k - 1) * bw + m + j] = qp.A[static_cast<std::size_t>(k)](i, j);
            rows.push_back(std::move(row));
        }
    }
    const int nc = static_cast<int>(rows.size());
    Mat G(nc, nv);
    for (int i = 0; i < nc; ++i) G.row(i) = rows[static_cast<std::size_t>(i)];

    Vec hdiag(nv);
    for (int k = 0; k < N; ++k) {
        hdiag.segment(k * bw, m) = qp.Hu;
        hdiag.segment(k * bw + m, n) = qp.Hz;
    }
    Mat K = Mat::Zero(nv + nc, nv + nc);
    K.topLeftCorner(nv, nv) = hdiag.asDiagonal();
    K.topRightCorner(nv, nc) = G.transpose();
    K.bottomLeftCorner(nc, nv) = G;
    Vec rhs = Vec::Zero(nv + nc);
    rhs.head(nv) = -rhs_f;
    Vec sol = K.fullPivLu().solve(rhs);

    Mat Ut(m, N), Zt(n, N);
    for (int k = 0; k < N; ++k) {
        Ut.col(k) = sol.segment(k * bw, m);
        Zt.col(k) = sol.segment(k * bw + m, n);
    }
    return {Ut, Zt};
}

// gradient of the rollout cost by central finite differences
Mat fd_gradient(const Mat& U, const FtocpInstance& inst, double h) {
    Mat g(U.rows(), U.cols());
    for (int k = 0; k < U.cols(); ++k)
        for (int j = 0; j < U.rows(); ++j) {
            Mat Up = U, Um = U;
            Up(j, k) += h;
            Um(j, k) -= h;
            g(j, k) = (total_cost(Up, rollout(Up, inst), inst) -
                       total_cost(Um, rollout(Um, inst), inst)) /
                      (2.0 * h);
        }
    return g;
}

}  // namespace

TEST_CASE("active set encoding round trips") {
    ActiveSet act(4, 2);
    for (int k = 0; k < 4; ++k)
        for (int j = 0; j < 2; ++j)
            for (int s : {-1, 1}) {
                int id = act.bound_id(k, j, s);
                auto [isRate, kk, jj, ss] = act.decode(id);
                REQUIRE_FALSE(isRate);
                REQUIRE(kk == k);
                REQUIRE(jj == j);
                REQUIRE(ss == s);
            }
    for (int r = 1; r < 4; ++r)
        for (int j = 0; j < 2; ++j)
            for (int s : {-1, 1}) {
                int id = act.rate_id(r, j, s);
                auto [isRate, rr, jj, ss] = act.decode(id);
                REQUIRE(isRate);
                REQUIRE(rr == r);
                REQUIRE(jj == j);
                REQUIRE(ss == s);
            }
}

TEST_CASE("active set rejects conflicting and redundant rows") {
    ActiveSet act(3, 1);
    REQUIRE(act.try_add(act.bound_id(0, 0, -1)));
    // opposite bound on the same entry conflicts
    REQUIRE_FALSE(act.try_add(act.bound_id(0, 0, +1)));
    // rate chain 0-1 and 1-2 plus a bound on u_2 is fine
    REQUIRE(act.try_add(act.rate_id(1, 0, +1)));
    REQUIRE(act.try_add(act.rate_id(2, 0, -1)));
    // but a second grounded bound would close a cycle through the chain
    REQUIRE_FALSE(act.try_add(act.bound_id(2, 0, +1)));
    REQUIRE(act.size() == 3);
    // releasing the first bound re-opens the chain
    act.remove(act.bound_id(0, 0, -1));
    REQUIRE(act.try_add(act.bound_id(2, 0, +1)));
}

TEST_CASE("structured KKT solve matches the dense oracle") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 25; ++trial) {
        int N = 2 + static_cast<int>(rng() % 5);
        int n = 3 + static_cast<int>(rng() % 3);
        int m = 1 + static_cast<int>(rng() % 2);
        LocalQp qp = random_qp(rng, N, n, m);
        ActiveSet act = random_active_set(rng, N, m, static_cast<int>(rng() % (2 * N)));
        KktSolution sol = solve_kkt(qp, act, 1);
        auto [Ut, Zt] = dense_kkt(qp, act);
        double scale = 1.0 + Ut.lpNorm<Eigen::Infinity>();
        REQUIRE((sol.Utilde - Ut).lpNorm<Eigen::Infinity>() <= 1e-8 * scale);
        REQUIRE((sol.Ztilde - Zt).lpNorm<Eigen::Infinity>() <= 1e-8 * scale);
    }
}

TEST_CASE("active bound rows force zero direction entries") {
    std::mt19937_64 rng(29);
    LocalQp qp = random_qp(rng, 4, 5, 2);
    ActiveSet act(4, 2);
    REQUIRE(act.try_add(act.bound_id(0, 1, +1)));
    REQUIRE(act.try_add(act.bound_id(2, 0, -1)));
    KktSolution sol = solve_kkt(qp, act, 1);
    REQUIRE(std::fabs(sol.Utilde(1, 0)) < 1e-12);
    REQUIRE(std::fabs(sol.Utilde(0, 2)) < 1e-12);
}

TEST_CASE("active rate rows equalize adjacent direction entries") {
    std::mt19937_64 rng(31);
    LocalQp qp = random_qp(rng, 4, 4, 2);
    ActiveSet act(4, 2);
    REQUIRE(act.try_add(act.rate_id(2, 0, +1)));
    KktSolution sol = solve_kkt(qp, act, 1);
    REQUIRE(sol.Utilde(0, 2) == Catch::Approx(sol.Utilde(0, 1)).margin(1e-10));
}

TEST_CASE("project_direction rules") {
    ActiveSet act(3, 2);
    Mat Ut(2, 3);
    Ut << 0.3, 0.2, 0.6, -0.1, 0.4, 0.5;

    SECTION("bound hit zeroes the entry") {
        int id = act.bound_id(1, 1, +1);
        REQUIRE(act.try_add(id));
        project_direction(Ut, id, act);
        REQUIRE(Ut(1, 1) == 0.0);
        REQUIRE(Ut(0, 1) == 0.2);
    }
    SECTION("rate hit averages the coupled entries") {
        int id = act.rate_id(2, 0, +1);
        REQUIRE(act.try_add(id));
        project_direction(Ut, id, act);
        REQUIRE(Ut(0, 1) == Catch::Approx(0.4));
        REQUIRE(Ut(0, 2) == Catch::Approx(0.4));
    }
    SECTION("rate hit with a simultaneous bound zeroes both") {
        REQUIRE(act.try_add(act.bound_id(2, 0, +1)));
        int id = act.rate_id(2, 0, +1);
        REQUIRE(act.try_add(id));
        project_direction(Ut, id, act);
        REQUIRE(Ut(0, 1) == 0.0);
        REQUIRE(Ut(0, 2) == 0.0);
    }
}

TEST_CASE("release_constraints thresholds on the multiplier sign") {
    ActiveSet act(2, 2);
    int a = act.bound_id(0, 0, +1), b = act.bound_id(1, 1, -1), c = act.rate_id(1, 0, +1);
    REQUIRE(act.try_add(a));
    REQUIRE(act.try_add(b));
    REQUIRE(act.try_add(c));
    std::vector<std::pair<int, double>> nu = {{a, -1e-6}, {b, -1e-10}, {c, 0.3}};
    int released = release_constraints(nu, act, 1e-8);
    REQUIRE(released == 1);
    REQUIRE_FALSE(act.contains(a));
    REQUIRE(act.contains(b));
    REQUIRE(act.contains(c));
}

TEST_CASE("warm start shifting and projection") {
    ModelSpec model = builtin_kbm();
    FtocpInstance inst = make_instance(model, 3, 2.0);

    SECTION("no previous solution gives all zeros") {
        Mat U0 = warm_start(std::nullopt, inst);
        REQUIRE(U0.lpNorm<Eigen::Infinity>() == 0.0);
    }
    SECTION("previous solution is shifted with the last input duplicated") {
        NasResult prev;
        prev.U = Mat(2, 3);
        prev.U << 0.1, 0.2, 0.3, 0.0, -0.1, -0.2;
        Mat U0 = warm_start(prev, inst);
        REQUIRE(U0(0, 0) == Catch::Approx(0.2));
        REQUIRE(U0(0, 1) == Catch::Approx(0.3));
        REQUIRE(U0(0, 2) == Catch::Approx(0.3));
        REQUIRE(U0(1, 2) == Catch::Approx(-0.2));
    }
    SECTION("tightened bounds trigger a feasibility projection") {
        NasResult prev;
        prev.U = Mat::Constant(2, 3, 0.3);
        FtocpInstance tight = inst;
        tight.con.u_max << 0.25, 0.25;
        Mat U0 = warm_start(prev, tight);
        REQUIRE(constraint_values(U0, tight).maxCoeff() <= 1e-12);
    }
}

TEST_CASE("nas_solve basic contracts") {
    ModelSpec model = builtin_kbm();
    NasConfig cfg;

    SECTION("stationary start terminates immediately with zero cost") {
        FtocpInstance inst = make_instance(model, 5, 2.0);
        NasResult res = nas_solve(inst, Mat::Zero(2, 5), cfg);
        REQUIRE(res.cost == Catch::Approx(0.0).margin(1e-10));
        REQUIRE(res.iterations <= 2);
        REQUIRE(res.reason == NasTermination::KktSatisfied);
    }
    SECTION("maxit = 0 returns the start point unchanged") {
        FtocpInstance inst = make_instance(model, 4, 1.0);
        NasConfig zero = cfg;
        zero.maxit = 0;
        Mat U0 = Mat::Zero(2, 4);
        NasResult res = nas_solve(inst, U0, zero);
        REQUIRE((res.U - U0).lpNorm<Eigen::Infinity>() == 0.0);
        REQUIRE(res.iterations == 0);
    }
    SECTION("every result is feasible and no worse than the start") {
        std::mt19937_64 rng(53);
        std::uniform_real_distribution<double> d(-1.0, 1.0);
        for (int trial = 0; trial < 10; ++trial) {
            FtocpInstance inst = make_instance(model, 6, 2.0 + d(rng));
            inst.z0[1] = d(rng);
            inst.z0[2] = 0.3 * d(rng);
            Mat U0 = project_feasible(Mat::NullaryExpr(2, 6, [&](Eigen::Index, Eigen::Index) {
                                          return 2.0 * d(rng);
                                      }),
                                      inst);
            double c0 = total_cost(U0, rollout(U0, inst), inst);
            NasResult res = nas_solve(inst, U0, cfg);
            REQUIRE(constraint_values(res.U, inst).maxCoeff() <= 1e-12);
            REQUIRE(res.cost <= c0 + 1e-12);
        }
    }
}

TEST_CASE("nas_solve reaches a constrained stationary point") {
    // the solver's answer must satisfy first-order conditions of the true
    // nonlinear problem: the projected gradient at the solution vanishes
    ModelSpec model = builtin_kbm();
    FtocpInstance inst = make_instance(model, 4, 3.0);
    inst.z0[1] = 0.5;  // lateral offset to make the problem non-trivial
    NasConfig cfg;
    cfg.maxit = 80;
    NasResult res = nas_solve(inst, Mat::Zero(2, 4), cfg);
    Mat g = fd_gradient(res.U, inst, 1e-6);
    // project a small gradient step back onto the feasible set; stationarity
    // means the projected step stays at the solution
    double s = 1e-4;
    Mat moved = project_feasible(res.U - s * g, inst);
    REQUIRE((moved - res.U).lpNorm<Eigen::Infinity>() / s < 5e-2);
}

TEST_CASE("warm start never degrades the first iterate on a repeated problem") {
    ModelSpec model = builtin_kbm();
    FtocpInstance inst = make_instance(model, 5, 2.5);
    inst.z0[1] = 0.4;
    NasConfig cfg;
    NasResult cold = nas_solve(inst, warm_start(std::nullopt, inst), cfg);

    NasConfig one = cfg;
    one.maxit = 1;
    NasResult cold1 = nas_solve(inst, warm_start(std::nullopt, inst), one);
    NasResult warm1 = nas_solve(inst, warm_start(cold, inst), one);
    REQUIRE(warm1.cost <= cold1.cost + 1e-12);
}

TEST_CASE("bound-saturated problems activate constraints") {
    // demand far more acceleration than the box allows
    ModelSpec model = builtin_kbm();
    FtocpInstance inst = make_instance(model, 5, 0.0);
    for (int k = 1; k <= 5; ++k) inst.refs[static_cast<std::size_t>(k - 1)] = line_ref(5.0 * k, 50.0);
    NasConfig cfg;
    NasResult res = nas_solve(inst, Mat::Zero(2, 5), cfg);
    // acceleration input rides a bound or rate limit somewhere
    Vec g = constraint_values(res.U, inst);
    REQUIRE(g.maxCoeff() <= 1e-12);
    REQUIRE(g.maxCoeff() > -1e-6);
    REQUIRE(res.active.size() > 0);
}
