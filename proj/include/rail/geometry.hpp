// SPDX-License-Identifier: Apache-2.0
//
// Shared geometric vocabulary. World frame: right-handed, x/y ground plane,
// z up, meters; yaw counterclockwise from +x, radians.
#pragma once

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

namespace rail
{
    using Vec2 = Eigen::Vector2d;
    using Vec3 = Eigen::Vector3d;
    using Mat3 = Eigen::Matrix3d;
    using Quat = Eigen::Quaterniond;

    inline constexpr double pi = std::numbers::pi;

    inline double deg2rad(double d) { return d * pi / 180.0; }
    inline double rad2deg(double r) { return r * 180.0 / pi; }

    /// Wraps an angle into (-pi, pi].
    inline double normalize_angle(double a)
    {
        if (!std::isfinite(a))
            return a;
        if (a > -pi && a <= pi)
            return a;
        double r = std::remainder(a, 2.0 * pi);
        if (r <= -pi)
            r += 2.0 * pi;
        return r;
    }

    inline Mat3 rot_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
    inline Mat3 rot_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
    inline Mat3 rot_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

    struct Transform
    {
        Vec3 position = Vec3::Zero();
        double yaw = 0.0;
        double pitch = 0.0;
        double roll = 0.0;

        bool operator==(const Transform &) const = default;

        /// R = Rz(yaw) * Ry(pitch) * Rx(roll).
        Mat3 rotation() const { return rot_z(yaw) * rot_y(pitch) * rot_x(roll); }

        Eigen::Isometry3d isometry() const
        {
            Eigen::Isometry3d iso = Eigen::Isometry3d::Identity();
            iso.linear() = rotation();
            iso.translation() = position;
            return iso;
        }

        Transform normalized() const
        {
            return {position, normalize_angle(yaw), normalize_angle(pitch), normalize_angle(roll)};
        }

        bool finite() const
        {
            return position.allFinite() && std::isfinite(yaw) && std::isfinite(pitch) && std::isfinite(roll);
        }

        static Transform from_isometry(const Eigen::Isometry3d &iso)
        {
            const Mat3 r = iso.linear();
            Transform t;
            t.position = iso.translation();
            // ZYX decomposition matching rotation().
            t.pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
            t.yaw = std::atan2(r(1, 0), r(0, 0));
            t.roll = std::atan2(r(2, 1), r(2, 2));
            return t.normalized();
        }
    };

    inline Transform make_transform(double x, double y, double z = 0.0, double yaw = 0.0)
    {
        Transform t;
        t.position = Vec3(x, y, z);
        t.yaw = normalize_angle(yaw);
        return t;
    }

    inline Vec2 xy(const Vec3 &v) { return v.head<2>(); }

    inline Vec2 heading_vector(double yaw) { return {std::cos(yaw), std::sin(yaw)}; }

    inline double cross2(const Vec2 &a, const Vec2 &b) { return a.x() * b.y() - a.y() * b.x(); }

    // ---------------------------------------------------------------- polylines

    using Polyline = std::vector<Vec2>;

    inline double polyline_length(std::span<const Vec2> pts)
    {
        double len = 0.0;
        for (std::size_t i = 1; i < pts.size(); ++i)
            len += (pts[i] - pts[i - 1]).norm();
        return len;
    }

    struct PolylineProjection
    {
        double s = 0.0;        // arc length of the closest point
        double distance = 0.0; // distance from the query point
        Vec2 point = Vec2::Zero();
        std::size_t segment = 0;
    };

    inline PolylineProjection project_onto(std::span<const Vec2> pts, const Vec2 &p)
    {
        PolylineProjection best;
        best.distance = std::numeric_limits<double>::infinity();
        double s0 = 0.0;
        for (std::size_t i = 1; i < pts.size(); ++i)
        {
            const Vec2 a = pts[i - 1];
            const Vec2 d = pts[i] - a;
            const double len2 = d.squaredNorm();
            const double len = std::sqrt(len2);
            double u = len2 > 0.0 ? std::clamp((p - a).dot(d) / len2, 0.0, 1.0) : 0.0;
            const Vec2 q = a + u * d;
            const double dist = (p - q).norm();
            if (dist < best.distance)
                best = {s0 + u * len, dist, q, i - 1};
            s0 += len;
        }
        return best;
    }

    /// Point at arc length s, clamped to the polyline ends.
    inline Vec2 point_at(std::span<const Vec2> pts, double s)
    {
        if (pts.empty())
            return Vec2::Zero();
        if (s <= 0.0)
            return pts.front();
        double acc = 0.0;
        for (std::size_t i = 1; i < pts.size(); ++i)
        {
            const double len = (pts[i] - pts[i - 1]).norm();
            if (acc + len >= s && len > 0.0)
                return pts[i - 1] + (pts[i] - pts[i - 1]) * ((s - acc) / len);
            acc += len;
        }
        return pts.back();
    }

    /// Unit tangent of the polyline at arc length s.
    inline Vec2 tangent_at(std::span<const Vec2> pts, double s)
    {
        double acc = 0.0;
        Vec2 last = Vec2::UnitX();
        for (std::size_t i = 1; i < pts.size(); ++i)
        {
            const Vec2 d = pts[i] - pts[i - 1];
            const double len = d.norm();
            if (len > 0.0)
                last = d / len;
            if (acc + len >= s)
                return last;
            acc += len;
        }
        return last;
    }

    struct SegmentHit
    {
        double t = 0.0; // parameter along the first segment, [0,1]
        double u = 0.0; // parameter along the second segment, [0,1]
    };

    /// Proper or touching intersection of segments p0-p1 and q0-q1. Collinear
    /// overlaps report the earliest overlap point along p.
    inline std::optional<SegmentHit> segment_intersection(const Vec2 &p0, const Vec2 &p1, const Vec2 &q0, const Vec2 &q1)
    {
        const Vec2 r = p1 - p0;
        const Vec2 s = q1 - q0;
        const double denom = cross2(r, s);
        const Vec2 qp = q0 - p0;
        constexpr double eps = 1e-12;
        if (std::abs(denom) < eps)
        {
            if (std::abs(cross2(qp, r)) > eps)
                return std::nullopt;
            const double rr = r.squaredNorm();
            if (rr == 0.0)
                return std::nullopt;
            double t0 = qp.dot(r) / rr;
            double t1 = (q1 - p0).dot(r) / rr;
            if (t0 > t1)
                std::swap(t0, t1);
            if (t1 < 0.0 || t0 > 1.0)
                return std::nullopt;
            const double t = std::max(0.0, t0);
            const double ss = s.squaredNorm();
            const double u = ss > 0.0 ? (p0 + t * r - q0).dot(s) / ss : 0.0;
            return SegmentHit{t, std::clamp(u, 0.0, 1.0)};
        }
        const double t = cross2(qp, s) / denom;
        const double u = cross2(qp, r) / denom;
        if (t < -eps || t > 1.0 + eps || u < -eps || u > 1.0 + eps)
            return std::nullopt;
        return SegmentHit{std::clamp(t, 0.0, 1.0), std::clamp(u, 0.0, 1.0)};
    }

    /// Arc length along `route` of its first crossing with segment a-b.
    inline std::optional<double> first_crossing(std::span<const Vec2> route, const Vec2 &a, const Vec2 &b)
    {
        double s0 = 0.0;
        for (std::size_t i = 1; i < route.size(); ++i)
        {
            const double len = (route[i] - route[i - 1]).norm();
            if (auto hit = segment_intersection(route[i - 1], route[i], a, b))
                return s0 + hit->t * len;
            s0 += len;
        }
        return std::nullopt;
    }

    // ---------------------------------------------------------------- polygons

    inline double signed_area(std::span<const Vec2> poly)
    {
        double a = 0.0;
        for (std::size_t i = 0; i < poly.size(); ++i)
            a += cross2(poly[i], poly[(i + 1) % poly.size()]);
        return 0.5 * a;
    }

    inline Vec2 centroid(std::span<const Vec2> poly)
    {
        const double a = signed_area(poly);
        if (a == 0.0)
        {
            Vec2 c = Vec2::Zero();
            for (const auto &p : poly)
                c += p;
            return poly.empty() ? c : Vec2(c / static_cast<double>(poly.size()));
        }
        Vec2 c = Vec2::Zero();
        for (std::size_t i = 0; i < poly.size(); ++i)
        {
            const Vec2 &p = poly[i];
            const Vec2 &q = poly[(i + 1) % poly.size()];
            c += (p + q) * cross2(p, q);
        }
        return c / (6.0 * a);
    }

    inline bool is_convex(std::span<const Vec2> poly)
    {
        if (poly.size() < 3)
            return false;
        int sign = 0;
        for (std::size_t i = 0; i < poly.size(); ++i)
        {
            const Vec2 &a = poly[i];
            const Vec2 &b = poly[(i + 1) % poly.size()];
            const Vec2 &c = poly[(i + 2) % poly.size()];
            const double z = cross2(b - a, c - b);
            if (z == 0.0)
                continue;
            const int s = z > 0.0 ? 1 : -1;
            if (sign == 0)
                sign = s;
            else if (s != sign)
                return false;
        }
        return sign != 0;
    }

    /// Strict interior test for a convex polygon of either winding.
    inline bool convex_contains(std::span<const Vec2> poly, const Vec2 &p)
    {
        if (poly.size() < 3)
            return false;
        const double orient = signed_area(poly) > 0.0 ? 1.0 : -1.0;
        for (std::size_t i = 0; i < poly.size(); ++i)
        {
            const Vec2 &a = poly[i];
            const Vec2 &b = poly[(i + 1) % poly.size()];
            if (orient * cross2(b - a, p - a) <= 0.0)
                return false;
        }
        return true;
    }

    inline double point_segment_distance(const Vec2 &p, const Vec2 &a, const Vec2 &b)
    {
        const Vec2 d = b - a;
        const double len2 = d.squaredNorm();
        const double u = len2 > 0.0 ? std::clamp((p - a).dot(d) / len2, 0.0, 1.0) : 0.0;
        return (p - (a + u * d)).norm();
    }

    /// Distance from p to the polygon boundary, zero when p is inside.
    inline double polygon_distance(std::span<const Vec2> poly, const Vec2 &p)
    {
        if (convex_contains(poly, p))
            return 0.0;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < poly.size(); ++i)
            best = std::min(best, point_segment_distance(p, poly[i], poly[(i + 1) % poly.size()]));
        return best;
    }

    /// Closest point on the polygon boundary (or p itself when inside).
    inline Vec2 polygon_closest_point(std::span<const Vec2> poly, const Vec2 &p)
    {
        if (convex_contains(poly, p))
            return p;
        double best = std::numeric_limits<double>::infinity();
        Vec2 out = p;
        for (std::size_t i = 0; i < poly.size(); ++i)
        {
            const Vec2 &a = poly[i];
            const Vec2 d = poly[(i + 1) % poly.size()] - a;
            const double len2 = d.squaredNorm();
            const double u = len2 > 0.0 ? std::clamp((p - a).dot(d) / len2, 0.0, 1.0) : 0.0;
            const Vec2 q = a + u * d;
            const double dist = (p - q).norm();
            if (dist < best)
            {
                best = dist;
                out = q;
            }
        }
        return out;
    }

    /// True when the open segment a-b passes through the polygon interior.
    inline bool segment_enters_interior(std::span<const Vec2> poly, const Vec2 &a, const Vec2 &b)
    {
        if (convex_contains(poly, a) || convex_contains(poly, b))
            return true;
        // Clip against each edge half-plane (Cyrus-Beck); a non-empty open
        // interval means interior overlap.
        const double orient = signed_area(poly) > 0.0 ? 1.0 : -1.0;
        double t0 = 0.0;
        double t1 = 1.0;
        const Vec2 d = b - a;
        for (std::size_t i = 0; i < poly.size(); ++i)
        {
            const Vec2 &p = poly[i];
            const Vec2 &q = poly[(i + 1) % poly.size()];
            const Vec2 e = q - p;
            const double num = orient * cross2(e, a - p);
            const double den = orient * cross2(e, d);
            if (den == 0.0)
            {
                if (num <= 0.0)
                    return false;
                continue;
            }
            const double t = -num / den;
            if (den > 0.0)
                t0 = std::max(t0, t);
            else
                t1 = std::min(t1, t);
            if (t0 >= t1)
                return false;
        }
        return t1 - t0 > 1e-12;
    }

    // ------------------------------------------------------------- footprints

    struct Rect2
    {
        Vec2 center = Vec2::Zero();
        Vec2 half = Vec2::Ones();
        double yaw = 0.0;

        std::array<Vec2, 2> axes() const
        {
            const double c = std::cos(yaw), s = std::sin(yaw);
            return {Vec2(c, s), Vec2(-s, c)};
        }

        std::array<Vec2, 4> corners() const
        {
            const auto [ax, ay] = axes();
            const Vec2 hx = ax * half.x(), hy = ay * half.y();
            return {center + hx + hy, center - hx + hy, center - hx - hy, center + hx - hy};
        }
    };

    struct Disc
    {
        Vec2 center = Vec2::Zero();
        double radius = 0.3;
    };

    inline double penetration(const Rect2 &r, const Disc &d)
    {
        const auto [ax, ay] = r.axes();
        const Vec2 rel = d.center - r.center;
        const Vec2 local(rel.dot(ax), rel.dot(ay));
        const Vec2 clamped(std::clamp(local.x(), -r.half.x(), r.half.x()),
                           std::clamp(local.y(), -r.half.y(), r.half.y()));
        const bool inside = std::abs(local.x()) < r.half.x() && std::abs(local.y()) < r.half.y();
        if (!inside)
            return d.radius - (local - clamped).norm();
        const double to_edge = std::min(r.half.x() - std::abs(local.x()), r.half.y() - std::abs(local.y()));
        return d.radius + to_edge;
    }

    inline double penetration(const Disc &a, const Disc &b)
    {
        return a.radius + b.radius - (a.center - b.center).norm();
    }

    /// Minimum overlap over the separating-axis candidates (negative when apart).
    inline double penetration(const Rect2 &a, const Rect2 &b)
    {
        double best = std::numeric_limits<double>::infinity();
        const auto ca = a.corners();
        const auto cb = b.corners();
        auto test = [&](const Vec2 &axis) {
            double amin = std::numeric_limits<double>::infinity(), amax = -amin;
            double bmin = amin, bmax = -amin;
            for (const auto &c : ca)
            {
                const double p = c.dot(axis);
                amin = std::min(amin, p);
                amax = std::max(amax, p);
            }
            for (const auto &c : cb)
            {
                const double p = c.dot(axis);
                bmin = std::min(bmin, p);
                bmax = std::max(bmax, p);
            }
            best = std::min(best, std::min(amax, bmax) - std::max(amin, bmin));
        };
        for (const auto &ax : a.axes())
            test(ax);
        for (const auto &ax : b.axes())
            test(ax);
        return best;
    }
} // namespace rail
