#pragma once

#include "cmotion/curve.hpp"
#include "cmotion/hierarchy.hpp"
#include "cmotion/plant.hpp"
#include "cmotion/tasks.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace cmotion {

enum class Phase { Outside = 0, Transition = 1, Inside = 2 };

inline const char* phase_name(Phase p) {
    switch (p) {
        case Phase::Outside: return "outside";
        case Phase::Transition: return "transition";
        case Phase::Inside: return "inside";
    }
    return "?";
}

enum class ConstraintMode { None, Rcm, Ucm };

/// Static description of one control session: frames, curves, geometry.
/// The tool lives in the end-effector frame; path and wall live in the
/// orifice reference frame.
struct Scene {
    Pose w_T_r;
    Curve3D tool;
    Curve3D path;
    std::optional<Curve3D> wall;
    double approach_offset = 5.0;  // mm before the orifice center, along its entry (+z) axis
};

struct SupervisorState {
    Phase phase = Phase::Outside;
    Vec3 virtual_trocar_w = Vec3::Zero();
    double path_progress = 0.0;  // arc length reached on the reference path, mm
    ConstraintMode mode = ConstraintMode::Rcm;
};

/// Everything observable about one control step; serialized as one CSV row.
struct LogRecord {
    std::int64_t step = 0;
    double t = 0.0;
    Phase phase = Phase::Outside;
    Pose w_T_e;
    Twist command;
    Vec3 d_pf = Vec3::Zero();
    Vec3 d_rcm = Vec3::Zero();
    Vec3 d_ucm = Vec3::Zero();
    double d_ucm_norm = std::numeric_limits<double>::quiet_NaN();
    double mu = std::numeric_limits<double>::quiet_NaN();
    double alpha = std::numeric_limits<double>::quiet_NaN();
    double beta = std::numeric_limits<double>::quiet_NaN();
    double clearance = std::numeric_limits<double>::quiet_NaN();
    double e_app_lin = std::numeric_limits<double>::quiet_NaN();
    double e_app_ang = std::numeric_limits<double>::quiet_NaN();
};

/// The three-phase state machine: approach the orifice from outside, hand
/// the pivot over from a virtual trocar to the orifice center during the
/// transition, then follow the path inside under the configured constraint.
class Supervisor {
  public:
    Supervisor(Scene scene, Gains gains, ConstraintMode mode, SolverOptions opts = {})
        : scene_(std::move(scene)), gains_(gains), opts_(opts) {
        gains_.validate();
        if (scene_.approach_offset <= 0.0) {
            throw std::invalid_argument("scene: approach_offset must be > 0");
        }
        if (mode == ConstraintMode::Ucm && !scene_.wall) {
            throw std::invalid_argument("scene: UCM mode needs a wall curve");
        }
        state_.mode = mode;
        if (mode == ConstraintMode::None) {
            state_.phase = Phase::Inside;  // unconstrained runs skip the approach
        }
        s_handoff_ = scene_.approach_offset;
    }

    const SupervisorState& state() const { return state_; }
    const Scene& scene() const { return scene_; }
    const Gains& gains() const { return gains_; }
    double path_fraction_done() const { return state_.path_progress / scene_.path.length(); }

    Vec3 tip_in_e() const { return scene_.tool.back(); }

    /// One control period: selects tasks for the current phase, solves the
    /// stack, advances the phase machine, and reports a full log record.
    Twist step(const Pose& w_T_e, std::int64_t step_index, LogRecord* record = nullptr) {
        LogRecord rec;
        rec.step = step_index;
        rec.t = static_cast<double>(step_index) * gains_.T_e;
        rec.w_T_e = w_T_e;

        const Pose e_T_w = w_T_e.inverse();
        const Pose e_T_r = e_T_w * scene_.w_T_r;
        const Curve3D path_e = scene_.path.transformed(e_T_r);
        const Vec3 O_r_e = e_T_r.t;
        const Vec3 tip = tip_in_e();

        // Capture before dispatch: a handoff step may advance the phase, and
        // the record must describe the phase whose tasks actually ran.
        const Phase executing_phase = state_.phase;
        Twist cmd;
        try {
            switch (state_.phase) {
                case Phase::Outside: cmd = step_outside(w_T_e, rec); break;
                case Phase::Transition: cmd = step_transition(e_T_w, path_e, tip, rec); break;
                case Phase::Inside: cmd = step_inside(path_e, O_r_e, e_T_r, tip, rec); break;
            }
        } catch (const singular_configuration& ex) {
            throw singular_configuration(std::string(ex.what()) + " [phase=" +
                                         phase_name(state_.phase) +
                                         ", s_p=" + std::to_string(state_.path_progress) + "]");
        }

        if (scene_.wall) {
            rec.clearance = clearance(scene_.tool.transformed(w_T_e),
                                      scene_.wall->transformed(scene_.w_T_r));
        }
        // Error vectors are computed in the end-effector frame; log them in
        // the world frame so plotted components live in a static basis.
        rec.d_pf = w_T_e.R * rec.d_pf;
        rec.d_rcm = w_T_e.R * rec.d_rcm;
        rec.d_ucm = w_T_e.R * rec.d_ucm;
        rec.phase = executing_phase;
        rec.command = cmd;
        if (record) *record = rec;
        return cmd;
    }

    /// Virtual trocar position for the current transition progress: linear
    /// interpolation from the first path point to the orifice center,
    /// parameterized by path progress over the handoff arc length.
    Vec3 advance_virtual_trocar() const {
        const Vec3 start_w = scene_.w_T_r * scene_.path.front();
        const Vec3 end_w = scene_.w_T_r.t;
        const double u = std::clamp(state_.path_progress / s_handoff_, 0.0, 1.0);
        return start_w + u * (end_w - start_w);
    }

  private:
    Twist step_outside(const Pose& w_T_e, LogRecord& rec) {
        // Pre-orifice target: orifice frame shifted back along its entry axis.
        const Pose r_T_target{Mat3::Identity(), Vec3(0.0, 0.0, -scene_.approach_offset)};
        const Pose w_T_target = scene_.w_T_r * r_T_target;
        const Pose e_T_t{Mat3::Identity(), tip_in_e()};
        const Pose target_T_tip = w_T_target.inverse() * (w_T_e * e_T_t);

        const TaskSignal sig = approach_task(target_T_tip, gains_);
        rec.e_app_lin = sig.e.head<3>().norm();
        rec.e_app_ang = sig.e.tail<3>().norm();

        if (rec.e_app_lin < 0.05 && rec.e_app_ang < 0.01) {
            state_.phase = Phase::Transition;
            state_.virtual_trocar_w = scene_.w_T_r * scene_.path.front();
        }
        return saturate(approach_command(target_T_tip, e_T_t, gains_), opts_);
    }

    Twist step_transition(const Pose& e_T_w, const Curve3D& path_e, const Vec3& tip,
                          LogRecord& rec) {
        state_.virtual_trocar_w = advance_virtual_trocar();
        const Vec3 trocar_e = e_T_w * state_.virtual_trocar_w;

        const auto [d_pf, cp] = pf_error(tip, path_e);
        const Vec3 v_t = pf_velocity(d_pf, cp, gains_);
        const auto [d_rcm, tp] = rcm_error(scene_.tool, trocar_e);

        rec.d_pf = d_pf;
        rec.d_rcm = d_rcm;
        rec.alpha = advance_speed(d_pf, cp);
        rec.beta = pf_beta(d_pf, cp, gains_);

        PriorityStack stack;
        stack.primary = pf_task(tip, v_t);
        stack.secondary = rcm_task(d_rcm, tp, trocar_e, gains_);
        const Twist cmd = solve_two_level(stack, opts_);

        state_.path_progress = std::max(state_.path_progress, cp.s);

        // Hand over once the virtual trocar reached the center and the tip
        // passed it along the entry axis.
        const Pose r_T_e_now = (e_T_w * scene_.w_T_r).inverse();
        const double tip_entry_coord = (r_T_e_now * tip).z();
        if (state_.path_progress >= s_handoff_ && tip_entry_coord > 0.1) {
            state_.phase = Phase::Inside;
        }
        return cmd;
    }

    Twist step_inside(const Curve3D& path_e, const Vec3& O_r_e, const Pose& e_T_r,
                      const Vec3& tip, LogRecord& rec) {
        const auto [d_pf, cp] = pf_error(tip, path_e);
        const Vec3 v_t = pf_velocity(d_pf, cp, gains_);
        rec.d_pf = d_pf;
        rec.alpha = advance_speed(d_pf, cp);
        rec.beta = pf_beta(d_pf, cp, gains_);

        PriorityStack stack;
        Twist cmd;
        switch (state_.mode) {
            case ConstraintMode::None: {
                cmd = solve_single(pf_task(tip, v_t), opts_);
                break;
            }
            case ConstraintMode::Rcm: {
                const auto [d_rcm, tp] = rcm_error(scene_.tool, O_r_e);
                rec.d_rcm = d_rcm;
                stack.primary = rcm_task(d_rcm, tp, O_r_e, gains_);
                stack.secondary = pf_task(tip, v_t);
                cmd = solve_two_level(stack, opts_);
                break;
            }
            case ConstraintMode::Ucm: {
                const auto [d_rcm, tp] = rcm_error(scene_.tool, O_r_e);
                const Curve3D wall_e = scene_.wall->transformed(e_T_r);
                const auto [d_ucm, hp] = ucm_error(tp.position, wall_e, O_r_e);
                rec.d_rcm = d_rcm;
                rec.d_ucm = d_ucm;
                rec.d_ucm_norm = d_ucm.norm();
                rec.mu = mu_obs(d_ucm, gains_);
                stack.primary = pf_task(tip, v_t);
                // The wall constraint is unilateral: it only binds inside the
                // dangerous zone. Beyond d_max the task is inactive, which
                // also keeps the wall projection away from its focal point.
                if (rec.d_ucm_norm <= gains_.d_max) {
                    stack.secondary = ucm_task(d_ucm, hp, tp, d_rcm, O_r_e, gains_);
                }
                cmd = solve_two_level(stack, opts_);
                break;
            }
        }
        state_.path_progress = std::max(state_.path_progress, cp.s);
        return cmd;
    }

    double advance_speed(const Vec3& d_pf, const CurvePoint& cp) const {
        const double beta = pf_beta(d_pf, cp, gains_);
        const double ret2 = (beta * d_pf).squaredNorm();
        const double v2 = gains_.v_tis * gains_.v_tis;
        return (ret2 < v2) ? std::sqrt(v2 - ret2) : 0.0;
    }

    Scene scene_;
    Gains gains_;
    SolverOptions opts_;
    SupervisorState state_;
    double s_handoff_ = 5.0;
};

}  // namespace cmotion
