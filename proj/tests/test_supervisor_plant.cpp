#include "cmotion/plant.hpp"
#include "cmotion/supervisor.hpp"
#include "analytic.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <unsupported/Eigen/MatrixFunctions>

#include <random>

using namespace cmotion;
using namespace cmotion::testutil;

namespace {

Curve3D line_tool(double length = 30.0, double spacing = 0.5) {
    std::vector<Vec3> pts;
    const int n = static_cast<int>(std::lround(length / spacing));
    for (int i = 0; i <= n; ++i) pts.emplace_back(0.0, 0.0, spacing * i);
    return Curve3D::from_points(std::move(pts), false);
}

Curve3D z_line(double z0, double z1, double spacing) {
    std::vector<Vec3> pts;
    const int n = static_cast<int>(std::lround((z1 - z0) / spacing));
    for (int i = 0; i <= n; ++i) pts.emplace_back(0.0, 0.0, z0 + spacing * i);
    return Curve3D::from_points(std::move(pts), false);
}

Curve3D circle_wall(double rho, int n = 120) {
    std::vector<Vec3> pts;
    for (int i = 0; i < n; ++i) {
        const double a = 2.0 * M_PI * i / n;
        pts.emplace_back(rho * std::cos(a), rho * std::sin(a), 0.0);
    }
    return Curve3D::from_points(std::move(pts), true);
}

Scene simple_scene() {
    Scene sc;
    sc.w_T_r = Pose{rotation_exp(Vec3(0.2, -0.1, 0.3)), Vec3(10, -5, 20)};
    sc.tool = line_tool();
    sc.path = z_line(-5.0, 20.0, 0.25);
    return sc;
}

/// End-effector pose that places the straight tool's tip exactly at the
/// pre-orifice approach target with the correct orientation.
Pose at_target_pose(const Scene& sc) {
    const Pose w_T_target = sc.w_T_r * Pose{Mat3::Identity(), Vec3(0, 0, -sc.approach_offset)};
    const Pose e_T_t{Mat3::Identity(), sc.tool.back()};
    return w_T_target * e_T_t.inverse();
}

}  // namespace

// ---------------------------------------------------------------------------
// Plant
// ---------------------------------------------------------------------------

TEST_CASE("plant: zero twist only advances the clock") {
    PlantState ps;
    ps.w_T_e = Pose{rotation_exp(Vec3(0.1, 0.2, 0.3)), Vec3(1, 2, 3)};
    const PlantState next = plant_step(ps, Twist{}, 0.008);
    REQUIRE((next.w_T_e.t - ps.w_T_e.t).norm() == 0.0);
    REQUIRE((next.w_T_e.R - ps.w_T_e.R).norm() < 1e-14);
    REQUIRE(next.step_count == 1);
    REQUIRE(next.t == Catch::Approx(0.008));
}

TEST_CASE("plant: 125 steps at 1 mm/s move exactly 1 mm") {
    PlantState ps;
    Twist tw;
    tw.v = Vec3(1, 0, 0);
    for (int i = 0; i < 125; ++i) ps = plant_step(ps, tw, 0.008);
    REQUIRE((ps.w_T_e.t - Vec3(1, 0, 0)).norm() < 1e-12);
    REQUIRE(ps.t == Catch::Approx(1.0));
}

TEST_CASE("plant: constant body twist follows the screw-motion exponential") {
    PlantState ps;
    ps.w_T_e = Pose{rotation_exp(Vec3(0.4, -0.3, 0.7)), Vec3(3, -2, 8)};
    const Pose start = ps.w_T_e;
    Twist tw;
    tw.v = Vec3(0.5, 0, 0);
    tw.w = Vec3(0, 0, 0.05);
    const double dt = 0.001;
    const int n = 1000;
    for (int i = 0; i < n; ++i) ps = plant_step(ps, tw, dt);

    Eigen::Matrix4d xi = Eigen::Matrix4d::Zero();
    xi.topLeftCorner<3, 3>() = skew(tw.w);
    xi.topRightCorner<3, 1>() = tw.v;
    const Eigen::Matrix4d M = Eigen::Matrix4d(xi * (n * dt)).exp();
    const Mat3 R_exact = start.R * M.topLeftCorner<3, 3>();
    const Vec3 t_exact = start.R * Vec3(M.topRightCorner<3, 1>()) + start.t;

    REQUIRE((ps.w_T_e.t - t_exact).norm() < 1e-3);
    REQUIRE((ps.w_T_e.R - R_exact).norm() < 1e-4);
}

TEST_CASE("plant: bit-identical determinism across reruns") {
    std::mt19937_64 rng(107);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::vector<Twist> cmds(400);
    for (auto& c : cmds) {
        c.v = Vec3(uni(rng), uni(rng), uni(rng));
        c.w = 0.3 * Vec3(uni(rng), uni(rng), uni(rng));
    }
    auto run = [&] {
        PlantState ps;
        ps.w_T_e = Pose{rotation_exp(Vec3(0.1, 0.9, -0.4)), Vec3(5, 6, 7)};
        for (const auto& c : cmds) ps = plant_step(ps, c, 0.008);
        return ps;
    };
    const PlantState a = run();
    const PlantState b = run();
    REQUIRE(a.w_T_e.t == b.w_T_e.t);
    REQUIRE(a.w_T_e.R == b.w_T_e.R);
}

TEST_CASE("plant: palindromic command sequence approximately returns home") {
    PlantState ps;
    ps.w_T_e = Pose{rotation_exp(Vec3(-0.2, 0.5, 0.1)), Vec3(1, 1, 1)};
    const Pose start = ps.w_T_e;
    Twist tw;
    tw.v = Vec3(0.4, -0.2, 0.3);
    tw.w = Vec3(0.02, 0.05, -0.03);
    Twist back{-tw.v, -tw.w};
    for (int i = 0; i < 300; ++i) ps = plant_step(ps, tw, 0.001);
    for (int i = 0; i < 300; ++i) ps = plant_step(ps, back, 0.001);
    REQUIRE((ps.w_T_e.t - start.t).norm() < 1e-4);
    REQUIRE((ps.w_T_e.R - start.R).norm() < 1e-6);
}

TEST_CASE("plant: rotation stays orthonormal over long runs") {
    PlantState ps;
    Twist tw;
    tw.v = Vec3(0.1, 0.2, -0.1);
    tw.w = Vec3(0.3, -0.2, 0.5);
    for (int i = 0; i < 100000; ++i) ps = plant_step(ps, tw, 0.008);
    REQUIRE((ps.w_T_e.R.transpose() * ps.w_T_e.R - Mat3::Identity()).norm() < 1e-9);
}

// ---------------------------------------------------------------------------
// Clearance
// ---------------------------------------------------------------------------

TEST_CASE("clearance: axial tool through a circular wall") {
    const Curve3D tool = z_line(-5.0, 5.0, 0.5);
    const Curve3D wall = circle_wall(3.0);
    REQUIRE(clearance(tool, wall) == Catch::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("clearance: parallel offset segments") {
    const Curve3D a = Curve3D::from_points({Vec3(0, 0, 0), Vec3(10, 0, 0)}, false);
    const Curve3D b = Curve3D::from_points({Vec3(0, 2, 0), Vec3(10, 2, 0)}, false);
    REQUIRE(clearance(a, b) == Catch::Approx(2.0).epsilon(1e-12));
    // Non-overlapping in x: closest approach is endpoint to endpoint.
    const Curve3D c = Curve3D::from_points({Vec3(13, 2, 0), Vec3(20, 2, 0)}, false);
    REQUIRE(clearance(a, c) == Catch::Approx(std::sqrt(9.0 + 4.0)).epsilon(1e-12));
}

TEST_CASE("clearance: invariant under a rigid transform and below dense sampling") {
    std::mt19937_64 rng(109);
    const Curve3D tool = line_tool(20.0, 0.5);
    const Curve3D wall = circle_wall(4.0).transformed(
        Pose{rotation_exp(Vec3(0.4, 0.2, -0.1)), Vec3(2, 1, 8)});
    const double base = clearance(tool, wall);

    for (int i = 0; i < 20; ++i) {
        const Pose T = random_pose(rng);
        REQUIRE(clearance(tool.transformed(T), wall.transformed(T)) ==
                Catch::Approx(base).epsilon(1e-9));
    }

    // Dense point sampling can only overestimate the true minimum.
    double sampled = std::numeric_limits<double>::infinity();
    for (const auto& p : tool.points()) {
        sampled = std::min(sampled, (wall.project(p).position - p).norm());
    }
    REQUIRE(base <= sampled + 1e-12);
    REQUIRE(base >= sampled - tool.median_spacing());
}

TEST_CASE("pose noise: zero amplitude is the identity, seeded runs repeat") {
    const Pose p{rotation_exp(Vec3(0.3, 0.1, -0.2)), Vec3(4, 5, 6)};
    PoseNoise none(0.0, 0.0, 42);
    REQUIRE((none.apply(p).t - p.t).norm() == 0.0);

    PoseNoise n1(0.1, 0.01, 99);
    PoseNoise n2(0.1, 0.01, 99);
    for (int i = 0; i < 50; ++i) {
        const Pose a = n1.apply(p);
        const Pose b = n2.apply(p);
        REQUIRE(a.t == b.t);
        REQUIRE(a.R == b.R);
        REQUIRE((a.R.transpose() * a.R - Mat3::Identity()).norm() < 1e-12);
        REQUIRE((a.t - p.t).norm() <= 0.1 * std::sqrt(3.0) + 1e-12);
    }
}

// ---------------------------------------------------------------------------
// Supervisor
// ---------------------------------------------------------------------------

TEST_CASE("supervisor: construction validation") {
    const Scene sc = simple_scene();
    REQUIRE_THROWS_AS(Supervisor(sc, Gains{}, ConstraintMode::Ucm), std::invalid_argument);
    Gains bad;
    bad.lambda = -1.0;
    REQUIRE_THROWS_AS(Supervisor(sc, bad, ConstraintMode::Rcm), std::invalid_argument);
    Scene flat = sc;
    flat.approach_offset = 0.0;
    REQUIRE_THROWS_AS(Supervisor(flat, Gains{}, ConstraintMode::Rcm), std::invalid_argument);

    Supervisor none(sc, Gains{}, ConstraintMode::None);
    REQUIRE(none.state().phase == Phase::Inside);  // unconstrained runs skip the approach
    Supervisor rcm(sc, Gains{}, ConstraintMode::Rcm);
    REQUIRE(rcm.state().phase == Phase::Outside);
}

TEST_CASE("supervisor: at the approach target the handover is immediate") {
    const Scene sc = simple_scene();
    Supervisor sup(sc, Gains{}, ConstraintMode::Rcm);
    LogRecord rec;
    const Twist cmd = sup.step(at_target_pose(sc), 0, &rec);
    REQUIRE(sup.state().phase == Phase::Transition);
    REQUIRE(rec.e_app_lin < 0.05);
    REQUIRE(rec.e_app_ang < 0.01);
    REQUIRE(cmd.v.norm() < 1e-6);
    REQUIRE(cmd.w.norm() < 1e-6);
    // The virtual trocar initializes at the first path point.
    const Vec3 start_w = sc.w_T_r * sc.path.front();
    REQUIRE((sup.state().virtual_trocar_w - start_w).norm() < 1e-9);
}

TEST_CASE("supervisor: full RCM run - phases, trocar geometry, invariants") {
    Scene sc = simple_scene();
    Gains g;
    SolverOptions opts;
    Supervisor sup(sc, g, ConstraintMode::Rcm, opts);

    PlantState ps;
    // Start displaced from the approach target to exercise the outside phase.
    ps.w_T_e = at_target_pose(sc) *
               Pose{rotation_exp(Vec3(0.1, -0.05, 0.15)), Vec3(1.0, -1.5, 2.0)};

    const Vec3 trocar_start = sc.w_T_r * sc.path.front();
    const Vec3 trocar_end = sc.w_T_r.t;

    int last_phase = 0;
    double last_progress = 0.0;
    bool saw_transition = false;
    std::vector<double> inside_rcm_norms;
    std::int64_t inside_since = -1;

    LogRecord rec;
    std::int64_t i = 0;
    for (; i < 30000; ++i) {
        const Twist cmd = sup.step(ps.w_T_e, i, &rec);

        // Saturation limits always hold.
        REQUIRE(cmd.v.norm() <= opts.v_max + 1e-9);
        REQUIRE(cmd.w.norm() <= opts.w_max + 1e-9);

        // Phase index never decreases.
        const int phase = static_cast<int>(sup.state().phase);
        REQUIRE(phase >= last_phase);
        last_phase = phase;

        // Path progress never decreases.
        REQUIRE(sup.state().path_progress >= last_progress - 1e-12);
        last_progress = sup.state().path_progress;

        if (sup.state().phase == Phase::Transition) {
            saw_transition = true;
            // The virtual trocar stays on the segment from the first path
            // point to the orifice center.
            const Vec3 tr = sup.state().virtual_trocar_w;
            const Vec3 seg = trocar_end - trocar_start;
            const double u = (tr - trocar_start).dot(seg) / seg.squaredNorm();
            REQUIRE(u >= -1e-9);
            REQUIRE(u <= 1.0 + 1e-9);
            REQUIRE(((tr - trocar_start).cross(seg)).norm() < 1e-9 * seg.norm());
        }
        if (sup.state().phase == Phase::Inside) {
            if (inside_since < 0) inside_since = i;
            if (i - inside_since > 250) inside_rcm_norms.push_back(rec.d_rcm.norm());
        }

        ps = plant_step(ps, cmd, g.T_e);
        if (sup.path_fraction_done() > 0.95) break;
    }

    REQUIRE(saw_transition);
    REQUIRE(sup.path_fraction_done() > 0.95);
    REQUIRE(i < 30000);
    REQUIRE_FALSE(inside_rcm_norms.empty());
    double mean = 0.0, worst = 0.0;
    for (double v : inside_rcm_norms) {
        mean += v;
        worst = std::max(worst, v);
    }
    mean /= static_cast<double>(inside_rcm_norms.size());
    REQUIRE(mean < 0.01);
    REQUIRE(worst < 0.05);
}

TEST_CASE("supervisor: inside-phase RCM primary is met exactly by the command") {
    Scene sc = simple_scene();
    Gains g;
    Supervisor sup(sc, g, ConstraintMode::Rcm);

    PlantState ps;
    ps.w_T_e = at_target_pose(sc);
    LogRecord rec;
    for (std::int64_t i = 0; i < 12000 && sup.path_fraction_done() < 0.9; ++i) {
        const Twist cmd = sup.step(ps.w_T_e, i, &rec);
        if (sup.state().phase == Phase::Inside) {
            // Reconstruct the primary task at this pose and verify the solved
            // twist satisfies it to solver precision (the stack is feasible,
            // so saturation never engages here).
            const Pose e_T_r = ps.w_T_e.inverse() * sc.w_T_r;
            const auto [d_rcm, tp] = rcm_error(sc.tool, e_T_r.t);
            const TaskSignal primary = rcm_task(d_rcm, tp, e_T_r.t, g);
            REQUIRE((primary.L * cmd.vector() - primary.desired_rate).norm() < 1e-6);
        }
        ps = plant_step(ps, cmd, g.T_e);
    }
    REQUIRE(sup.state().phase == Phase::Inside);
}

TEST_CASE("supervisor: UCM run respects the wall and stays on the path") {
    Scene sc = simple_scene();
    sc.wall = circle_wall(2.8);
    Gains g;
    g.lambda = 0.8;
    g.gamma = 0.8;
    Supervisor sup(sc, g, ConstraintMode::Ucm);

    PlantState ps;
    ps.w_T_e = at_target_pose(sc);
    LogRecord rec;
    double min_clearance = std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < 12000 && sup.path_fraction_done() < 0.9; ++i) {
        const Twist cmd = sup.step(ps.w_T_e, i, &rec);
        // rec reflects the phase the step executed in; the handoff step itself
        // still logs a transition record, so gate on rec.phase.
        if (rec.phase == Phase::Inside) {
            REQUIRE(std::isfinite(rec.d_ucm_norm));
            REQUIRE(std::isfinite(rec.mu));
            min_clearance = std::min(min_clearance, rec.clearance);
        }
        ps = plant_step(ps, cmd, g.T_e);
    }
    REQUIRE(sup.state().phase == Phase::Inside);
    REQUIRE(min_clearance > 0.0);
}
