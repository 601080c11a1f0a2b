#pragma once

#include "cmotion/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmotion {

/// Result of a point query on a curve: the position on the polyline, its arc
/// length, the unit tangent and the curvature vector at that arc length.
struct CurvePoint {
    Vec3 position = Vec3::Zero();
    double s = 0.0;
    Vec3 k = Vec3::UnitX();   // unit tangent
    Vec3 C = Vec3::Zero();    // curvature vector dk/ds, 1/mm
    int segment_index = 0;
};

class curve_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Discretized 3D curve with chord-accumulated arc length. Open curves clamp
/// arc-length queries to their ends; closed curves wrap and own an implicit
/// closing segment from the last point back to the first.
class Curve3D {
  public:
    static Curve3D from_points(std::vector<Vec3> points, bool closed = false) {
        Curve3D c;
        c.closed_ = closed;
        c.pts_ = std::move(points);
        c.finish_build();
        return c;
    }

    /// Parses the plain-text curve format: one point per line (three reals,
    /// mm), '#' comments, optional leading 'closed' directive.
    static Curve3D load(std::istream& in) {
        std::vector<Vec3> points;
        bool closed = false;
        std::string line;
        int line_no = 0;
        bool directive_allowed = true;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            std::istringstream ls(line);
            std::string first;
            if (!(ls >> first)) continue;  // blank or comment-only line
            if (directive_allowed && first == "closed") {
                closed = true;
                directive_allowed = false;
                continue;
            }
            directive_allowed = false;
            double x, y, z;
            std::istringstream ps(line);
            if (!(ps >> x >> y >> z)) {
                throw curve_error("curve parse error at line " + std::to_string(line_no) +
                                  ": expected three reals, got '" + line + "'");
            }
            std::string trailing;
            if (ps >> trailing) {
                throw curve_error("curve parse error at line " + std::to_string(line_no) +
                                  ": trailing token '" + trailing + "'");
            }
            points.emplace_back(x, y, z);
        }
        if (points.size() < 2) {
            throw curve_error("curve format error: fewer than 2 points");
        }
        return from_points(std::move(points), closed);
    }

    /// Writes the curve back in the text format; header lines are emitted as
    /// '#' comments.
    void save(std::ostream& out, const std::vector<std::string>& header = {}) const {
        for (const auto& h : header) out << "# " << h << "\n";
        if (closed_) out << "closed\n";
        char buf[96];
        for (const auto& p : pts_) {
            std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", p.x(), p.y(), p.z());
            out << buf;
        }
    }

    const std::vector<Vec3>& points() const { return pts_; }
    const Vec3& front() const { return pts_.front(); }
    const Vec3& back() const { return pts_.back(); }
    bool closed() const { return closed_; }
    double length() const { return total_length_; }
    double median_spacing() const { return median_spacing_; }
    std::size_t segment_count() const { return closed_ ? pts_.size() : pts_.size() - 1; }

    /// Globally closest point on the polyline; ties resolve to the smallest
    /// arc length.
    CurvePoint project(const Vec3& q) const {
        double best_d2 = std::numeric_limits<double>::infinity();
        Vec3 best_pos = pts_.front();
        double best_s = 0.0;
        int best_seg = 0;
        for (std::size_t i = 0; i < segment_count(); ++i) {
            const Vec3& a = pts_[i];
            const Vec3& b = pts_[(i + 1) % pts_.size()];
            const Vec3 ab = b - a;
            const double len2 = ab.squaredNorm();
            const double u = std::clamp((q - a).dot(ab) / len2, 0.0, 1.0);
            const Vec3 foot = a + u * ab;
            const double d2 = (q - foot).squaredNorm();
            if (d2 < best_d2) {
                best_d2 = d2;
                best_pos = foot;
                best_s = seg_start_s(i) + u * std::sqrt(len2);
                best_seg = static_cast<int>(i);
            }
        }
        CurvePoint cp;
        cp.position = best_pos;
        cp.s = best_s;
        cp.segment_index = best_seg;
        cp.k = tangent_at(best_s);
        cp.C = curvature_at(best_s);
        return cp;
    }

    /// Unit tangent at arc length s. Mid-segment this is the segment
    /// direction; at interior vertices the two adjacent directions are
    /// averaged and renormalized. Open-curve queries clamp to the ends.
    Vec3 tangent_at(double s) const {
        s = normalize_s(s);
        const std::size_t nseg = segment_count();
        // vertex proximity check
        for (std::size_t i = 0; i <= nseg; ++i) {
            const double vs = (i == nseg) ? total_length_ : seg_start_s(i);
            if (std::abs(s - vs) < 1e-9) {
                return vertex_tangent(i % (closed_ ? nseg : nseg + 1), vs);
            }
        }
        const std::size_t i = segment_of(s);
        return seg_dir(i);
    }

    /// Curvature vector dk/ds by central differencing of tangents over a
    /// window of twice the median spacing, projected onto the tangent
    /// complement.
    Vec3 curvature_at(double s) const {
        s = normalize_s(s);
        const double h = median_spacing_;  // half-window; full window 2h
        double s_plus = s + h;
        double s_minus = s - h;
        if (!closed_) {
            s_plus = std::min(s_plus, total_length_);
            s_minus = std::max(s_minus, 0.0);
        }
        const double ds = s_plus - s_minus;
        if (ds < 1e-12) return Vec3::Zero();
        const Vec3 kp = tangent_at(s_plus);
        const Vec3 km = tangent_at(s_minus);
        Vec3 C = (kp - km) / ds;
        const Vec3 k = tangent_at(s);
        C -= k * k.dot(C);
        return C;
    }

    Curve3D transformed(const Pose& T) const {
        Curve3D out = *this;
        for (auto& p : out.pts_) p = T * p;
        return out;
    }

  private:
    void finish_build() {
        if (pts_.size() < 2) throw curve_error("curve needs at least 2 points");
        cum_.resize(pts_.size());
        cum_[0] = 0.0;
        std::vector<double> spacings;
        spacings.reserve(segment_count());
        for (std::size_t i = 1; i < pts_.size(); ++i) {
            const double d = (pts_[i] - pts_[i - 1]).norm();
            if (d <= 1e-9) throw curve_error("curve has coincident consecutive points");
            cum_[i] = cum_[i - 1] + d;
            spacings.push_back(d);
        }
        total_length_ = cum_.back();
        if (closed_) {
            const double d = (pts_.front() - pts_.back()).norm();
            if (d <= 1e-9) throw curve_error("closed curve repeats its first point");
            total_length_ += d;
            spacings.push_back(d);
        }
        std::nth_element(spacings.begin(), spacings.begin() + spacings.size() / 2, spacings.end());
        median_spacing_ = spacings[spacings.size() / 2];
        for (const auto& p : pts_) {
            if (!p.allFinite()) throw curve_error("curve has non-finite point");
        }
    }

    double seg_start_s(std::size_t i) const { return cum_[i]; }

    Vec3 seg_dir(std::size_t i) const {
        const Vec3& a = pts_[i];
        const Vec3& b = pts_[(i + 1) % pts_.size()];
        return (b - a).normalized();
    }

    Vec3 vertex_tangent(std::size_t vi, double) const {
        const std::size_t nseg = segment_count();
        if (!closed_) {
            if (vi == 0) return seg_dir(0);
            if (vi >= pts_.size() - 1) return seg_dir(nseg - 1);
            return (seg_dir(vi - 1) + seg_dir(vi)).normalized();
        }
        const std::size_t prev = (vi + nseg - 1) % nseg;
        return (seg_dir(prev) + seg_dir(vi % nseg)).normalized();
    }

    double normalize_s(double s) const {
        if (closed_) {
            s = std::fmod(s, total_length_);
            if (s < 0.0) s += total_length_;
            return s;
        }
        return std::clamp(s, 0.0, total_length_);
    }

    std::size_t segment_of(double s) const {
        // cum_ indexes point arc lengths; closing segment (closed case) is
        // everything past cum_.back().
        if (closed_ && s >= cum_.back()) return pts_.size() - 1;
        const auto it = std::upper_bound(cum_.begin(), cum_.end(), s);
        const std::size_t idx = static_cast<std::size_t>(std::distance(cum_.begin(), it));
        return std::min(idx > 0 ? idx - 1 : 0, pts_.size() - 2);
    }

    std::vector<Vec3> pts_;
    std::vector<double> cum_;
    bool closed_ = false;
    double total_length_ = 0.0;
    double median_spacing_ = 0.0;
};

}  // namespace cmotion
