#pragma once

#include "cmotion/curve.hpp"
#include "cmotion/linalg.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace cmotion {

/// (error, interaction matrix, demanded rate) triple consumed by the
/// hierarchy solver. L maps the end-effector twist to the rate of change of
/// the task quantity; desired_rate is the rate the solver should realize.
struct TaskSignal {
    VecX e;
    MatX L;             // m x 6
    VecX desired_rate;  // m
};

class singular_configuration : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// All tunable scalars of the controller. Sign constraints are stability
/// conditions and are enforced by validate().
struct Gains {
    double lambda = 1.0;        // constraint regulation gain, > 0
    double gamma = 1.0;         // approach regulation gain, > 0
    double v_tis = 4.0;         // advance speed along the path, mm/s, > 0
    double beta_prime = -10.0;  // base return gain, < 0
    double gamma_c = -10.0;     // curvature sensitivity gain, < 0
    double sigma_max = 1.0;     // sigmoid ceiling, > 0
    double sigma_min = 1.25;    // sigmoid midpoint distance, mm, > 0
    double sigma_step = 6.0;    // sigmoid steepness, > 0
    double d_min = 0.5;         // critical-zone radius, mm
    double d_max = 2.0;         // dangerous-zone radius, mm
    double T_e = 0.008;         // control period, s, > 0

    void validate() const {
        if (!(lambda > 0.0)) throw std::invalid_argument("gains: lambda must be > 0");
        if (!(gamma > 0.0)) throw std::invalid_argument("gains: gamma must be > 0");
        if (!(v_tis > 0.0)) throw std::invalid_argument("gains: v_tis must be > 0");
        if (!(beta_prime < 0.0)) throw std::invalid_argument("gains: beta_prime must be < 0");
        if (!(gamma_c < 0.0)) throw std::invalid_argument("gains: gamma_c must be < 0");
        if (!(sigma_max > 0.0)) throw std::invalid_argument("gains: sigma_max must be > 0");
        if (!(sigma_min > 0.0)) throw std::invalid_argument("gains: sigma_min must be > 0");
        if (!(sigma_step > 0.0)) throw std::invalid_argument("gains: sigma_step must be > 0");
        if (!(d_min > 0.0 && d_min < d_max)) {
            throw std::invalid_argument("gains: need 0 < d_min < d_max");
        }
        if (!(T_e > 0.0)) throw std::invalid_argument("gains: T_e must be > 0");
    }
};

// ---------------------------------------------------------------------------
// 6D approach task
// ---------------------------------------------------------------------------

/// Pose-regulation error of the tip frame in the orifice reference frame:
/// e = (translation, theta*u), desired feature zero. The interaction matrix
/// is block-diagonal (-I, L_theta_u) in the tip frame.
inline TaskSignal approach_task(const Pose& r_T_t, const Gains& g) {
    const AngleAxis aa = rotation_to_angle_axis(r_T_t.R);
    if (aa.theta >= M_PI - 1e-9) {
        throw singular_configuration("approach_task: rotation angle at parameterization singularity");
    }
    TaskSignal sig;
    sig.e.resize(6);
    sig.e << r_T_t.t, aa.vector();
    sig.L = MatX::Zero(6, 6);
    sig.L.topLeftCorner<3, 3>() = -Mat3::Identity();
    sig.L.bottomRightCorner<3, 3>() = l_theta_u(aa);
    sig.desired_rate = -g.gamma * sig.e;
    return sig;
}

/// End-effector twist realizing exponential decay of the approach error at
/// rate gamma. The angular command -gamma*theta*u is frame-invariant along
/// the error axis; the linear command is rotated into the tip frame so the
/// translation error decays along itself. The tip-frame twist is mapped to
/// the end-effector through the rigid twist transform.
inline Twist approach_command(const Pose& r_T_t, const Pose& e_T_t, const Gains& g) {
    const AngleAxis aa = rotation_to_angle_axis(r_T_t.R);
    if (aa.theta >= M_PI - 1e-9) {
        throw singular_configuration("approach_command: rotation angle at parameterization singularity");
    }
    Twist tip;
    tip.v = -g.gamma * (r_T_t.R.transpose() * r_T_t.t);
    tip.w = -g.gamma * aa.vector();
    const Vec6 ee = twist_transform(e_T_t) * tip.vector();
    return Twist::from_vector(ee);
}

// ---------------------------------------------------------------------------
// 3D path-following task
// ---------------------------------------------------------------------------

/// Lateral deviation of the tip from the reference path, plus the projection
/// foot carrying the local tangent/curvature.
inline std::pair<Vec3, CurvePoint> pf_error(const Vec3& tip, const Curve3D& path) {
    const CurvePoint cp = path.project(tip);
    return {tip - cp.position, cp};
}

/// Curvature-sensitive return gain:
/// beta = beta' * (1 + sign(d^T (C x k)) * (1 - exp(gamma_c * ||C||))),
/// with sign(0) := 0 so beta is continuous (= beta') at the tie.
inline double pf_beta(const Vec3& d_pf, const CurvePoint& cp, const Gains& g) {
    const double trigger = d_pf.dot(cp.C.cross(cp.k));
    const double sgn = (trigger > 0.0) ? 1.0 : (trigger < 0.0 ? -1.0 : 0.0);
    return g.beta_prime * (1.0 + sgn * (1.0 - std::exp(g.gamma_c * cp.C.norm())));
}

/// Shaped tip velocity: advance along the tangent at speed alpha plus return
/// velocity beta*d_pf, with alpha chosen so the total speed equals v_tis
/// while the return demand fits inside it, and zero otherwise.
inline Vec3 pf_velocity(const Vec3& d_pf, const CurvePoint& cp, const Gains& g) {
    const double beta = pf_beta(d_pf, cp, g);
    const Vec3 v_ret = beta * d_pf;
    const double ret2 = v_ret.squaredNorm();
    const double v2 = g.v_tis * g.v_tis;
    const double alpha = (ret2 < v2) ? std::sqrt(v2 - ret2) : 0.0;
    return alpha * cp.k + v_ret;
}

/// Path-following task signal: L_pf = [I | -[tip]x] maps the end-effector
/// twist to the tip velocity (both in the end-effector frame); the demanded
/// rate is the shaped tip velocity.
inline TaskSignal pf_task(const Vec3& tip_in_e, const Vec3& v_t_in_e) {
    TaskSignal sig;
    sig.e = Vec3::Zero();
    sig.L = MatX::Zero(3, 6);
    sig.L.leftCols<3>() = Mat3::Identity();
    sig.L.rightCols<3>() = -skew(tip_in_e);
    sig.desired_rate = v_t_in_e;
    return sig;
}

// ---------------------------------------------------------------------------
// RCM (bilateral constraint) task
// ---------------------------------------------------------------------------

namespace detail {

// Sliding projector of the foot of a point q on a curve, d = q - foot:
// foot rate = k k^T / (1 - d^T C) * (relative point rate).
inline Mat3 foot_projector(const Vec3& d, const CurvePoint& cp) {
    const double denom = 1.0 - d.dot(cp.C);
    if (std::abs(denom) < 1e-6) {
        throw singular_configuration("projection foot at curvature focal point");
    }
    return (cp.k * cp.k.transpose()) / denom;
}

// [I | -[p]x], the map from an end-effector twist to the velocity of a point
// rigidly attached at p (expressed in the end-effector frame).
inline MatX point_velocity_map(const Vec3& p) {
    MatX L(3, 6);
    L.leftCols<3>() = Mat3::Identity();
    L.rightCols<3>() = -skew(p);
    return L;
}

}  // namespace detail

/// Bilateral error: orthogonal projection of the trocar point onto the tool
/// body gives the foot p_t'; d_rcm = O_r - p_t'.
inline std::pair<Vec3, CurvePoint> rcm_error(const Curve3D& tool_in_e, const Vec3& O_r_in_e) {
    const CurvePoint tp = tool_in_e.project(O_r_in_e);
    return {O_r_in_e - tp.position, tp};
}

/// RCM task signal. The tool is rigid in the end-effector frame, so the
/// trocar point apparently moves with -[I | -[O_r]x] * twist; the projection
/// foot slides after it through the foot projector. Hence
///   d(d_rcm)/dt = -(I - k k^T / (1 - d^T C_t)) [I | -[O_r]x] * twist.
/// Demanded rate is -lambda * d_rcm.
inline TaskSignal rcm_task(const Vec3& d_rcm, const CurvePoint& tp, const Vec3& O_r_in_e,
                           const Gains& g) {
    const Mat3 P_t = detail::foot_projector(d_rcm, tp);
    TaskSignal sig;
    sig.e = d_rcm;
    sig.L = -((Mat3::Identity() - P_t) * detail::point_velocity_map(O_r_in_e));
    sig.desired_rate = -g.lambda * d_rcm;
    return sig;
}

// ---------------------------------------------------------------------------
// UCM (unilateral constraint) task
// ---------------------------------------------------------------------------

/// Unilateral error: the difference of the two trocar-anchored vectors,
/// d_ucm = (O_r - p_t') - (O_r - p_h') = p_h' - p_t', where p_h' is the
/// closest point on the orifice wall to the tool foot p_t'.
inline std::pair<Vec3, CurvePoint> ucm_error(const Vec3& tp_position, const Curve3D& wall_in_e,
                                             const Vec3& O_r_in_e) {
    const CurvePoint hp = wall_in_e.project(tp_position);
    const Vec3 d_rcm_anchor = O_r_in_e - tp_position;
    const Vec3 d_wall_anchor = O_r_in_e - hp.position;
    return {d_rcm_anchor - d_wall_anchor, hp};
}

/// Sigmoid damping gain: sigma_max / (1 + exp(sigma_step (||d|| - sigma_min))).
inline double mu_obs(const Vec3& d_ucm, const Gains& g) {
    return g.sigma_max / (1.0 + std::exp(g.sigma_step * (d_ucm.norm() - g.sigma_min)));
}

/// UCM task signal. With the tool static in the end-effector frame and the
/// wall world-fixed, the full rate of the error in the end-effector frame is
///   d(d_ucm)/dt = [0 | [d_ucm]x] * twist
///               + (I - P_h) (P_t [I | -[O_r]x] - [I | -[p_t']x]) * twist,
/// where P_t is the tool foot projector (denominator 1 - d_rcm^T C_t) and
/// P_h the wall foot projector (denominator 1 + d_ucm^T C_h, since the
/// projected point sits on the tool side of the wall foot). The demanded
/// rate pushes away from the wall: +mu_obs * lambda * d_ucm.
inline TaskSignal ucm_task(const Vec3& d_ucm, const CurvePoint& hp, const CurvePoint& tp,
                           const Vec3& d_rcm, const Vec3& O_r_in_e, const Gains& g) {
    const Mat3 P_t = detail::foot_projector(d_rcm, tp);
    const Mat3 P_h = detail::foot_projector(-d_ucm, hp);  // point - foot = -d_ucm

    MatX L = MatX::Zero(3, 6);
    L.rightCols<3>() = skew(d_ucm);
    L += (Mat3::Identity() - P_h) *
         (P_t * detail::point_velocity_map(O_r_in_e) - detail::point_velocity_map(tp.position));

    TaskSignal sig;
    sig.e = d_ucm;
    sig.L = L;
    sig.desired_rate = mu_obs(d_ucm, g) * g.lambda * d_ucm;
    return sig;
}

}  // namespace cmotion
