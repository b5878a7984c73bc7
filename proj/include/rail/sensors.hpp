// SPDX-License-Identifier: Apache-2.0
//
// Ray-cast sensor synthesis against analytic primitives: planes, oriented
// boxes (vehicles, props) and capsules (avatar bones).
#pragma once

#include "rail/error.hpp"
#include "rail/geometry.hpp"
#include "rail/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace rail
{
    struct Ray
    {
        Vec3 origin = Vec3::Zero();
        Vec3 dir = Vec3::UnitX();
    };

    struct Plane
    {
        Vec3 normal = Vec3::UnitZ(); // unit
        double offset = 0.0;         // normal . x = offset
        SemanticLabel label = SemanticLabel::road;
        ActorId actor{};
    };

    struct OrientedBox
    {
        Vec3 center = Vec3::Zero();
        Vec3 half = Vec3::Ones();
        double yaw = 0.0;
        SemanticLabel label = SemanticLabel::vehicle;
        ActorId actor{};
    };

    struct SensingScene
    {
        std::vector<Plane> planes;
        std::vector<OrientedBox> boxes;
        std::vector<Capsule> capsules;
    };

    struct Hit
    {
        double t = 0.0;
        Vec3 point = Vec3::Zero();
        Vec3 normal = Vec3::UnitZ();
        ActorId actor{};
        SemanticLabel label = SemanticLabel::sky;
    };

    namespace detail
    {
        struct Candidate
        {
            double t = std::numeric_limits<double>::infinity();
            Vec3 normal = Vec3::UnitZ();
        };

        inline std::optional<Candidate> intersect(const Ray &ray, const Plane &p)
        {
            const double denom = p.normal.dot(ray.dir);
            if (std::abs(denom) < 1e-15)
                return std::nullopt;
            const double t = (p.offset - p.normal.dot(ray.origin)) / denom;
            if (!(t > 0.0))
                return std::nullopt;
            return Candidate{t, denom < 0.0 ? p.normal : Vec3(-p.normal)};
        }

        inline std::optional<Candidate> intersect(const Ray &ray, const OrientedBox &box)
        {
            const Mat3 r = rot_z(box.yaw);
            const Vec3 o = r.transpose() * (ray.origin - box.center);
            const Vec3 d = r.transpose() * ray.dir;
            double tnear = -std::numeric_limits<double>::infinity();
            double tfar = std::numeric_limits<double>::infinity();
            int near_axis = -1, far_axis = -1;
            for (int i = 0; i < 3; ++i)
            {
                if (d[i] == 0.0)
                {
                    if (std::abs(o[i]) > box.half[i])
                        return std::nullopt;
                    continue;
                }
                double t1 = (-box.half[i] - o[i]) / d[i];
                double t2 = (box.half[i] - o[i]) / d[i];
                if (t1 > t2)
                    std::swap(t1, t2);
                if (t1 > tnear)
                {
                    tnear = t1;
                    near_axis = i;
                }
                if (t2 < tfar)
                {
                    tfar = t2;
                    far_axis = i;
                }
                if (tnear > tfar)
                    return std::nullopt;
            }
            if (!(tfar > 0.0))
                return std::nullopt;
            Vec3 n = Vec3::Zero();
            double t;
            if (tnear > 0.0)
            {
                t = tnear;
                n[near_axis] = d[near_axis] > 0.0 ? -1.0 : 1.0;
            }
            else
            {
                t = tfar;
                n[far_axis] = d[far_axis] > 0.0 ? 1.0 : -1.0;
            }
            return Candidate{t, r * n};
        }

        /// Positive roots of |o + t d - c|^2 = r^2.
        inline int sphere_roots(const Ray &ray, const Vec3 &c, double radius, double out[2])
        {
            const Vec3 w = ray.origin - c;
            const double b = w.dot(ray.dir);
            const double cc = w.squaredNorm() - radius * radius;
            const double disc = b * b - cc;
            if (disc < 0.0)
                return 0;
            const double sq = std::sqrt(disc);
            int n = 0;
            for (double t : {-b - sq, -b + sq})
                if (t > 0.0)
                    out[n++] = t;
            return n;
        }

        inline std::optional<Candidate> intersect(const Ray &ray, const Capsule &cap)
        {
            Candidate best;
            bool found = false;
            auto consider = [&](double t, const Vec3 &n) {
                if (t > 0.0 && t < best.t)
                {
                    best = {t, n};
                    found = true;
                }
            };
            const Vec3 axis = cap.b - cap.a;
            const double len = axis.norm();
            double roots[2];
            if (len == 0.0)
            {
                const int n = sphere_roots(ray, cap.a, cap.radius, roots);
                for (int i = 0; i < n; ++i)
                    consider(roots[i], (ray.origin + roots[i] * ray.dir - cap.a) / cap.radius);
                return found ? std::optional<Candidate>(best) : std::nullopt;
            }
            const Vec3 u = axis / len;
            // Cylinder body.
            const Vec3 w = ray.origin - cap.a;
            const Vec3 dp = ray.dir - ray.dir.dot(u) * u;
            const Vec3 wp = w - w.dot(u) * u;
            const double A = dp.squaredNorm();
            const double B = 2.0 * dp.dot(wp);
            const double C = wp.squaredNorm() - cap.radius * cap.radius;
            if (A > 1e-300)
            {
                const double disc = B * B - 4.0 * A * C;
                if (disc >= 0.0)
                {
                    const double sq = std::sqrt(disc);
                    const double q = -0.5 * (B + (B >= 0.0 ? sq : -sq));
                    double ts[2] = {q / A, q != 0.0 ? C / q : q / A};
                    for (double t : ts)
                    {
                        if (!(t > 0.0))
                            continue;
                        const Vec3 p = ray.origin + t * ray.dir;
                        const double s = (p - cap.a).dot(u);
                        if (s >= 0.0 && s <= len)
                            consider(t, (p - (cap.a + s * u)) / cap.radius);
                    }
                }
            }
            // End caps.
            int n = sphere_roots(ray, cap.a, cap.radius, roots);
            for (int i = 0; i < n; ++i)
            {
                const Vec3 p = ray.origin + roots[i] * ray.dir;
                if ((p - cap.a).dot(u) <= 0.0)
                    consider(roots[i], (p - cap.a) / cap.radius);
            }
            n = sphere_roots(ray, cap.b, cap.radius, roots);
            for (int i = 0; i < n; ++i)
            {
                const Vec3 p = ray.origin + roots[i] * ray.dir;
                if ((p - cap.b).dot(u) >= 0.0)
                    consider(roots[i], (p - cap.b) / cap.radius);
            }
            return found ? std::optional<Candidate>(best) : std::nullopt;
        }

        struct Bound
        {
            Vec3 center = Vec3::Zero();
            double radius = 0.0;
            std::size_t first = 0, count = 0; // capsule index range
        };

        /// Conservative ray-vs-sphere rejection.
        inline bool may_hit(const Ray &ray, const Bound &b)
        {
            const Vec3 w = ray.origin - b.center;
            const double r = b.radius * (1.0 + 1e-9) + 1e-9;
            const double bb = w.dot(ray.dir);
            const double cc = w.squaredNorm() - r * r;
            if (cc > 0.0 && bb > 0.0)
                return false;
            return bb * bb - cc >= 0.0;
        }
    } // namespace detail

    /// A scene with bounding spheres for culling. Culling never changes the
    /// answer, only how many primitives are tested.
    class PreparedScene
    {
    public:
        explicit PreparedScene(const SensingScene &scene) : scene_(&scene)
        {
            box_bounds_.reserve(scene.boxes.size());
            for (const auto &b : scene.boxes)
                box_bounds_.push_back({b.center, b.half.norm(), 0, 0});
            // Consecutive capsules of one actor share a bound.
            std::size_t i = 0;
            while (i < scene.capsules.size())
            {
                std::size_t j = i;
                Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
                double rmax = 0.0;
                while (j < scene.capsules.size() && scene.capsules[j].actor == scene.capsules[i].actor)
                {
                    const auto &c = scene.capsules[j];
                    lo = lo.cwiseMin(c.a).cwiseMin(c.b);
                    hi = hi.cwiseMax(c.a).cwiseMax(c.b);
                    rmax = std::max(rmax, c.radius);
                    ++j;
                }
                capsule_bounds_.push_back({0.5 * (lo + hi), 0.5 * (hi - lo).norm() + rmax, i, j - i});
                i = j;
            }
        }

        std::optional<Hit> cast(const Ray &ray) const
        {
            std::optional<Hit> best;
            auto offer = [&](const std::optional<detail::Candidate> &c, ActorId actor, SemanticLabel label) {
                if (!c)
                    return;
                if (!best || c->t < best->t || (c->t == best->t && actor < best->actor))
                    best = Hit{c->t, ray.origin + c->t * ray.dir, c->normal, actor, label};
            };
            for (const auto &p : scene_->planes)
                offer(detail::intersect(ray, p), p.actor, p.label);
            for (std::size_t i = 0; i < scene_->boxes.size(); ++i)
                if (detail::may_hit(ray, box_bounds_[i]))
                    offer(detail::intersect(ray, scene_->boxes[i]), scene_->boxes[i].actor, scene_->boxes[i].label);
            for (const auto &g : capsule_bounds_)
                if (detail::may_hit(ray, g))
                    for (std::size_t k = g.first; k < g.first + g.count; ++k)
                        offer(detail::intersect(ray, scene_->capsules[k]), scene_->capsules[k].actor, scene_->capsules[k].label);
            return best;
        }

    private:
        const SensingScene *scene_;
        std::vector<detail::Bound> box_bounds_;
        std::vector<detail::Bound> capsule_bounds_;
    };

    /// Nearest positive-t hit; exact ties go to the lowest actor id.
    inline std::optional<Hit> ray_cast(const Ray &ray, const SensingScene &scene)
    {
        return PreparedScene(scene).cast(ray);
    }

    // ------------------------------------------------------------------- LiDAR

    struct LidarConfig
    {
        int channels = 32;
        double v_fov_min = -30.0; // deg
        double v_fov_max = 10.0;  // deg
        int h_steps = 1000;
        double max_range = 100.0;
        Transform mount = make_transform(0.0, 0.0, 1.9);
        double noise_sigma = 0.0; // m, Gaussian range noise
        std::uint64_t noise_seed = 0;

        void validate() const
        {
            if (channels < 1 || h_steps < 1)
                throw Error(Errc::invalid_config, "lidar: channels and h_steps must be >= 1");
            if (!(max_range > 0.0))
                throw Error(Errc::invalid_config, "lidar: max_range must be > 0");
            if (!(v_fov_min <= v_fov_max) || v_fov_min < -90.0 || v_fov_max > 90.0)
                throw Error(Errc::invalid_config, "lidar: vertical field of view must satisfy -90 <= min <= max <= 90");
            if (noise_sigma < 0.0)
                throw Error(Errc::invalid_config, "lidar: noise_sigma must be >= 0");
        }

        double elevation_deg(int channel) const
        {
            return channels == 1 ? v_fov_min : v_fov_min + (v_fov_max - v_fov_min) * channel / (channels - 1);
        }

        /// Unit direction in the sensor frame (x forward, y left, z up).
        Vec3 local_dir(int channel, int step) const
        {
            const double e = deg2rad(elevation_deg(channel));
            const double a = 2.0 * pi * step / h_steps;
            return {std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e)};
        }
    };

    struct LidarPoint
    {
        Vec3 position = Vec3::Zero(); // sensor frame
        double range = 0.0;
        SemanticLabel label = SemanticLabel::sky;
        ActorId actor{};
        std::uint16_t channel = 0;
        std::uint32_t step = 0;
        bool operator==(const LidarPoint &) const = default;
    };

    struct PointCloud
    {
        std::vector<LidarPoint> points;
        bool operator==(const PointCloud &) const = default;
    };

    /// Casts channels x h_steps rays (azimuth-major order) from the sensor pose.
    inline PointCloud lidar_scan(const LidarConfig &cfg, const Transform &sensor_pose, const SensingScene &scene)
    {
        cfg.validate();
        const PreparedScene prepared(scene);
        const Mat3 rot = sensor_pose.rotation();
        PointCloud cloud;
        cloud.points.reserve(static_cast<std::size_t>(cfg.channels) * cfg.h_steps / 4);
        std::vector<Vec3> dirs(static_cast<std::size_t>(cfg.channels));
        for (int step = 0; step < cfg.h_steps; ++step)
        {
            for (int ch = 0; ch < cfg.channels; ++ch)
            {
                const Vec3 local = cfg.local_dir(ch, step);
                const Ray ray{sensor_pose.position, rot * local};
                const auto hit = prepared.cast(ray);
                if (!hit || hit->t > cfg.max_range)
                    continue;
                cloud.points.push_back({hit->t * local, hit->t, hit->label, hit->actor, static_cast<std::uint16_t>(ch), static_cast<std::uint32_t>(step)});
            }
        }
        if (cfg.noise_sigma > 0.0)
        {
            std::mt19937_64 rng(cfg.noise_seed);
            std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
            for (auto &p : cloud.points)
            {
                const Vec3 dir = p.position / p.range;
                p.range = std::clamp(p.range + noise(rng), 1e-6, cfg.max_range);
                p.position = p.range * dir;
            }
        }
        return cloud;
    }

    // ------------------------------------------------------------------ camera

    struct CameraConfig
    {
        int width = 640;
        int height = 480;
        double h_fov = pi / 2.0; // rad
        double max_range = 100.0;
        Transform mount = make_transform(2.0, 0.0, 1.5);

        void validate() const
        {
            if (width < 1 || height < 1)
                throw Error(Errc::invalid_config, "camera: width and height must be >= 1");
            if (!(h_fov > 0.0 && h_fov < pi))
                throw Error(Errc::invalid_config, "camera: h_fov must be in (0, pi)");
            if (!(max_range > 0.0))
                throw Error(Errc::invalid_config, "camera: max_range must be > 0");
        }

        double focal() const { return 0.5 * width / std::tan(0.5 * h_fov); }

        /// Unit direction through the center of pixel (u, v) in the camera
        /// frame (x forward, y left, z up); v grows downward.
        Vec3 pixel_dir(int u, int v) const
        {
            return Vec3(focal(), -(u + 0.5 - 0.5 * width), -(v + 0.5 - 0.5 * height)).normalized();
        }
    };

    struct CameraFrame
    {
        int width = 0;
        int height = 0;
        std::vector<Rgb> rgb;
        std::vector<double> depth; // Euclidean ray depth, m; max_range for misses
        std::vector<SemanticLabel> labels;
        std::vector<ActorId> actors;

        std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }
        bool operator==(const CameraFrame &) const = default;
    };

    /// Direction toward the light used for Lambert shading.
    inline Vec3 light_direction() { return Vec3(0.3, 0.2, 1.0).normalized(); }

    inline Rgb shade(SemanticLabel label, const Vec3 &normal)
    {
        const Rgb base = palette(label);
        if (label == SemanticLabel::sky)
            return base;
        const double k = 0.25 + 0.75 * std::max(0.0, normal.dot(light_direction()));
        auto ch = [&](std::uint8_t c) { return static_cast<std::uint8_t>(std::lround(std::clamp(c * k, 0.0, 255.0))); };
        return {ch(base.r), ch(base.g), ch(base.b)};
    }

    inline CameraFrame render_camera(const CameraConfig &cfg, const Transform &camera_pose, const SensingScene &scene)
    {
        cfg.validate();
        const PreparedScene prepared(scene);
        const Mat3 rot = camera_pose.rotation();
        CameraFrame frame;
        frame.width = cfg.width;
        frame.height = cfg.height;
        const auto n = static_cast<std::size_t>(cfg.width) * cfg.height;
        frame.rgb.resize(n);
        frame.depth.resize(n);
        frame.labels.resize(n);
        frame.actors.resize(n);
        for (int v = 0; v < cfg.height; ++v)
        {
            for (int u = 0; u < cfg.width; ++u)
            {
                const std::size_t i = frame.index(u, v);
                const Ray ray{camera_pose.position, rot * cfg.pixel_dir(u, v)};
                const auto hit = prepared.cast(ray);
                if (!hit || hit->t > cfg.max_range)
                {
                    frame.labels[i] = SemanticLabel::sky;
                    frame.depth[i] = cfg.max_range;
                    frame.rgb[i] = palette(SemanticLabel::sky);
                    frame.actors[i] = environment_id;
                    continue;
                }
                frame.labels[i] = hit->label;
                frame.depth[i] = hit->t;
                frame.rgb[i] = shade(hit->label, hit->normal);
                frame.actors[i] = hit->actor;
            }
        }
        return frame;
    }
} // namespace rail
