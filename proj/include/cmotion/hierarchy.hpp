#pragma once

#include "cmotion/linalg.hpp"
#include "cmotion/tasks.hpp"

#include <optional>

namespace cmotion {

struct SolverOptions {
    double tol = 1e-6;  // relative singular-value cutoff for primary pseudo-inverses
    // Cutoff for the null-space-projected secondary, relative to the scale of
    // the *unprojected* secondary matrix. Directions the primary consumes
    // leave behind singular values at the geometry's discretization noise
    // level (~1e-6 relative); inverting those amplifies noise into huge
    // commands, so they are truncated more aggressively than the primary.
    double tol_secondary = 1e-4;
    double v_max = 20.0;  // mm/s linear saturation
    double w_max = 1.0;   // rad/s angular saturation
};

/// Scales the whole twist by one factor so both limits hold. A single factor
/// preserves the solved direction; clipping the linear and angular parts
/// independently would re-weight the stack and break the task hierarchy.
inline Twist saturate(Twist tw, const SolverOptions& opts) {
    double s = 1.0;
    const double vn = tw.v.norm();
    if (vn > opts.v_max) s = std::min(s, opts.v_max / vn);
    const double wn = tw.w.norm();
    if (wn > opts.w_max) s = std::min(s, opts.w_max / wn);
    tw.v *= s;
    tw.w *= s;
    return tw;
}

/// Minimum-norm least-squares twist for one task: L^+ * desired_rate.
inline Twist solve_single(const TaskSignal& t, const SolverOptions& opts = {}) {
    const Vec6 x = pseudo_inverse(t.L, opts.tol) * t.desired_rate;
    return saturate(Twist::from_vector(x), opts);
}

/// Two tasks in strict priority.
struct PriorityStack {
    TaskSignal primary;
    std::optional<TaskSignal> secondary;
};

namespace detail {

// Simplified two-level form:
// v = L1^+ e1_dot + Ltilde2^+ (e2_dot - L2 L1^+ e1_dot), Ltilde2 = L2 (I - L1^+ L1).
inline Vec6 two_level_simplified(const TaskSignal& t1, const TaskSignal& t2, double tol,
                                 double tol_secondary) {
    const MatX L1_pinv = pseudo_inverse(t1.L, tol);
    const Vec6 v1 = L1_pinv * t1.desired_rate;
    const MatX L2_tilde = t2.L * (Mat6::Identity() - L1_pinv * t1.L);
    // Truncate against the unprojected secondary's scale: directions the
    // primary fully consumes must invert to zero, not to rounding noise.
    return v1 + pseudo_inverse(L2_tilde, tol_secondary, t2.L.norm()) *
                    (t2.desired_rate - t2.L * v1);
}

// Recursive projected form (tertiary criterion fixed to zero):
// v = L1^+ e1_dot + (I - L1^+ L1) Ltilde2^+ (e2_dot - L2 L1^+ e1_dot).
inline Vec6 two_level_projected(const TaskSignal& t1, const TaskSignal& t2, double tol,
                                double tol_secondary) {
    const MatX L1_pinv = pseudo_inverse(t1.L, tol);
    const Vec6 v1 = L1_pinv * t1.desired_rate;
    const Mat6 N1 = Mat6::Identity() - L1_pinv * t1.L;
    const MatX L2_tilde = t2.L * N1;
    return v1 +
           N1 * (pseudo_inverse(L2_tilde, tol_secondary, t2.L.norm()) *
                 (t2.desired_rate - t2.L * v1));
}

}  // namespace detail

/// Two-level task-priority solve: the primary task is met exactly where
/// feasible, the secondary only through the primary's null space. With no
/// secondary this is solve_single(primary).
inline Twist solve_two_level(const PriorityStack& s, const SolverOptions& opts = {}) {
    if (!s.secondary) return solve_single(s.primary, opts);
    const Vec6 x = detail::two_level_simplified(s.primary, *s.secondary, opts.tol, opts.tol_secondary);
    return saturate(Twist::from_vector(x), opts);
}

/// Same stack solved through the unsimplified projected form; kept as the
/// second algebraic route for cross-checking the simplified solver.
inline Twist solve_two_level_projected_form(const PriorityStack& s, const SolverOptions& opts = {}) {
    if (!s.secondary) return solve_single(s.primary, opts);
    const Vec6 x = detail::two_level_projected(s.primary, *s.secondary, opts.tol, opts.tol_secondary);
    return saturate(Twist::from_vector(x), opts);
}

}  // namespace cmotion
