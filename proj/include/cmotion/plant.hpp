#pragma once

#include "cmotion/curve.hpp"
#include "cmotion/linalg.hpp"

#include <cstdint>
#include <random>

namespace cmotion {

/// Perfect-kinematics plant: integrates end-effector twists at a fixed
/// period and reports poses.
struct PlantState {
    Pose w_T_e;
    double t = 0.0;
    std::int64_t step_count = 0;
};

/// One integration step: the e-frame twist is re-expressed in the world
/// through the current rotation, then integrated over T_e.
inline PlantState plant_step(const PlantState& ps, const Twist& e_twist, double T_e) {
    Twist w_twist;
    w_twist.v = ps.w_T_e.R * e_twist.v;
    w_twist.w = ps.w_T_e.R * e_twist.w;
    PlantState out;
    out.w_T_e = integrate_pose(ps.w_T_e, w_twist, T_e);
    out.step_count = ps.step_count + 1;
    out.t = static_cast<double>(out.step_count) * T_e;
    return out;
}

namespace detail {

inline double segment_segment_distance(const Vec3& a0, const Vec3& a1, const Vec3& b0,
                                        const Vec3& b1) {
    // Closest distance between two segments (Ericson-style clamped solve).
    const Vec3 d1 = a1 - a0;
    const Vec3 d2 = b1 - b0;
    const Vec3 r = a0 - b0;
    const double A = d1.squaredNorm();
    const double E = d2.squaredNorm();
    const double F = d2.dot(r);
    double s = 0.0, t = 0.0;
    const double C = d1.dot(r);
    const double B = d1.dot(d2);
    const double den = A * E - B * B;
    if (den > 1e-15) s = std::clamp((B * F - C * E) / den, 0.0, 1.0);
    t = (B * s + F) / E;
    if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-C / A, 0.0, 1.0);
    } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((B - C) / A, 0.0, 1.0);
    }
    return ((a0 + s * d1) - (b0 + t * d2)).norm();
}

}  // namespace detail

/// Minimum distance between the tool polyline and the wall polyline
/// (exact segment-to-segment, not sample-to-sample).
inline double clearance(const Curve3D& tool_in_w, const Curve3D& wall_in_w) {
    double best = std::numeric_limits<double>::infinity();
    const auto& tp = tool_in_w.points();
    const auto& wp = wall_in_w.points();
    for (std::size_t i = 0; i < tool_in_w.segment_count(); ++i) {
        const Vec3& a0 = tp[i];
        const Vec3& a1 = tp[(i + 1) % tp.size()];
        for (std::size_t j = 0; j < wall_in_w.segment_count(); ++j) {
            const Vec3& b0 = wp[j];
            const Vec3& b1 = wp[(j + 1) % wp.size()];
            best = std::min(best, detail::segment_segment_distance(a0, a1, b0, b1));
        }
    }
    return best;
}

/// Optional zero-mean uniform pose disturbance for robustness experiments.
class PoseNoise {
  public:
    PoseNoise(double lin_amp_mm, double ang_amp_rad, std::uint64_t seed)
        : lin_(lin_amp_mm), ang_(ang_amp_rad), rng_(seed), uni_(-1.0, 1.0) {}

    Pose apply(const Pose& p) {
        if (lin_ == 0.0 && ang_ == 0.0) return p;
        const Vec3 dt(uni_(rng_) * lin_, uni_(rng_) * lin_, uni_(rng_) * lin_);
        const Vec3 dr(uni_(rng_) * ang_, uni_(rng_) * ang_, uni_(rng_) * ang_);
        return Pose{orthonormalize(rotation_exp(dr) * p.R), p.t + dt};
    }

  private:
    double lin_;
    double ang_;
    std::mt19937_64 rng_;
    std::uniform_real_distribution<double> uni_;
};

}  // namespace cmotion
