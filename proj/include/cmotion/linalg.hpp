#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace cmotion {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

/// 6D spatial velocity. Linear part in mm/s, angular part in rad/s.
struct Twist {
    Vec3 v = Vec3::Zero();
    Vec3 w = Vec3::Zero();

    Vec6 vector() const {
        Vec6 out;
        out << v, w;
        return out;
    }
    static Twist from_vector(const Vec6& x) { return Twist{x.head<3>(), x.tail<3>()}; }
    bool is_finite() const { return v.allFinite() && w.allFinite(); }
};

inline Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0.0, -v.z(), v.y(),
         v.z(), 0.0, -v.x(),
        -v.y(), v.x(), 0.0;
    return m;
}

/// Rodrigues exponential of a rotation vector.
inline Mat3 rotation_exp(const Vec3& r) {
    const double theta = r.norm();
    if (theta < 1e-12) {
        return Mat3::Identity() + skew(r);
    }
    const Vec3 u = r / theta;
    const Mat3 k = skew(u);
    return Mat3::Identity() + std::sin(theta) * k + (1.0 - std::cos(theta)) * k * k;
}

/// Nearest rotation matrix (polar factor) of a near-rotation matrix.
inline Mat3 orthonormalize(const Mat3& m) {
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0.0) {
        Mat3 d = Mat3::Identity();
        d(2, 2) = -1.0;
        r = svd.matrixU() * d * svd.matrixV().transpose();
    }
    return r;
}

/// Rigid transform: rotation plus translation of one frame in another.
struct Pose {
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();

    Pose() = default;
    Pose(const Mat3& rotation, const Vec3& translation) : R(rotation), t(translation) {}

    Pose inverse() const { return Pose{R.transpose(), -(R.transpose() * t)}; }
    Pose operator*(const Pose& rhs) const { return Pose{R * rhs.R, R * rhs.t + t}; }
    Vec3 operator*(const Vec3& p) const { return R * p + t; }

    bool is_valid(double tol = 1e-9) const {
        return t.allFinite() && R.allFinite() &&
               (R.transpose() * R - Mat3::Identity()).norm() <= tol * 10 &&
               std::abs(R.determinant() - 1.0) <= tol * 10;
    }
};

/// Angle/axis rotation parameterization, theta in [0, pi].
struct AngleAxis {
    double theta = 0.0;
    Vec3 u = Vec3::UnitZ();

    Vec3 vector() const { return theta * u; }
};

/// Extracts angle/axis from a rotation matrix. Near theta = pi the axis is
/// recovered from the diagonal of R + I, which stays well conditioned where
/// the off-diagonal route degenerates.
inline AngleAxis rotation_to_angle_axis(const Mat3& R) {
    if ((R.transpose() * R - Mat3::Identity()).norm() > 1e-6 || R.determinant() < 0.0) {
        throw std::invalid_argument("rotation_to_angle_axis: input is not a rotation matrix");
    }
    const double cos_theta = std::clamp((R.trace() - 1.0) / 2.0, -1.0, 1.0);
    const double theta = std::acos(cos_theta);

    AngleAxis out;
    out.theta = theta;
    if (theta < 1e-12) {
        out.u = Vec3::UnitZ();  // canonical axis at identity
        return out;
    }
    if (theta < M_PI - 1e-4) {
        Vec3 axis(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
        out.u = axis / (2.0 * std::sin(theta));
        out.u.normalize();
        return out;
    }
    // theta close to pi: R + I = 2 u u^T + O(pi - theta); take the largest column.
    const Mat3 B = R + Mat3::Identity();
    int col = 0;
    B.diagonal().maxCoeff(&col);
    Vec3 u = B.col(col);
    u.normalize();
    // Fix the sign ambiguity using the off-diagonal antisymmetric part.
    const Vec3 axis_raw(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
    if (axis_raw.dot(u) < 0.0) u = -u;
    out.u = u;
    return out;
}

inline Mat3 rotation_exp(const AngleAxis& a) { return rotation_exp(a.theta * a.u); }

namespace detail {
// 1 - sinc(theta) / sinc^2(theta/2) == 1 - (theta/2) cot(theta/2),
// with the removable singularity at zero handled by its series.
inline double one_minus_sinc_ratio(double theta) {
    if (std::abs(theta) < 1e-4) {
        const double t2 = theta * theta;
        return t2 / 12.0 + t2 * t2 / 720.0;
    }
    const double half = theta / 2.0;
    return 1.0 - half * std::cos(half) / std::sin(half);
}
}  // namespace detail

/// Interaction matrix of the angle/axis error:
/// I - (theta/2)[u]x + (1 - sinc(theta)/sinc^2(theta/2)) [u]x^2.
/// Invertible for theta < pi.
inline Mat3 l_theta_u(const AngleAxis& a) {
    if (a.theta < 0.0 || a.theta >= M_PI) {
        throw std::domain_error("l_theta_u: theta must lie in [0, pi)");
    }
    const Mat3 k = skew(a.u);
    return Mat3::Identity() - (a.theta / 2.0) * k + detail::one_minus_sinc_ratio(a.theta) * k * k;
}

/// 6x6 twist transform mapping a tip-frame twist to the end-effector frame:
/// [[R, [t]x R], [0, R]] for the fixed pose of the tip in the end-effector.
inline Mat6 twist_transform(const Pose& e_T_t) {
    Mat6 V = Mat6::Zero();
    V.topLeftCorner<3, 3>() = e_T_t.R;
    V.topRightCorner<3, 3>() = skew(e_T_t.t) * e_T_t.R;
    V.bottomRightCorner<3, 3>() = e_T_t.R;
    return V;
}

/// Moore-Penrose pseudo-inverse with relative singular-value truncation.
/// Singular values below tol * max(sigma_max, scale_floor) are treated as
/// zero rank. The scale floor lets callers truncate against the magnitude of
/// an un-projected parent matrix, so a numerically-zero projection inverts to
/// zero instead of amplifying rounding noise.
inline MatX pseudo_inverse(const MatX& m, double tol = 1e-6, double scale_floor = 0.0) {
    if (tol <= 0.0) throw std::invalid_argument("pseudo_inverse: tol must be positive");
    if (!m.allFinite()) throw std::invalid_argument("pseudo_inverse: non-finite input");
    Eigen::JacobiSVD<MatX> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const VecX& s = svd.singularValues();
    if (s.size() == 0 || s(0) <= 0.0) return MatX::Zero(m.cols(), m.rows());
    const double cutoff = tol * std::max(s(0), scale_floor);
    VecX inv = VecX::Zero(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s(i) > cutoff) inv(i) = 1.0 / s(i);
    }
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

/// Integrates a world-frame twist over dt: translation by v*dt, rotation
/// left-multiplied by exp([w dt]x), then re-orthonormalized.
inline Pose integrate_pose(const Pose& p, const Twist& tw, double dt) {
    if (dt <= 0.0) throw std::invalid_argument("integrate_pose: dt must be positive");
    Pose out;
    out.t = p.t + tw.v * dt;
    out.R = orthonormalize(rotation_exp(Vec3(tw.w * dt)) * p.R);
    return out;
}

}  // namespace cmotion
