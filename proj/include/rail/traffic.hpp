// SPDX-License-Identifier: Apache-2.0
//
// Vehicle control stack: kinematic bicycle model, pure-pursuit steering,
// longitudinal planner, pedestrian yielding and the eHMI light strip.
#pragma once

#include "rail/error.hpp"
#include "rail/geometry.hpp"
#include "rail/map.hpp"
#include "rail/types.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string_view>

namespace rail
{
    struct VehicleControl
    {
        double throttle = 0.0; // [0, 1]
        double steer = 0.0;    // [-1, 1], positive = left
        double brake = 0.0;    // [0, 1]

        bool operator==(const VehicleControl &) const = default;

        VehicleControl clamped() const
        {
            auto fix = [](double v, double lo, double hi) { return std::isfinite(v) ? std::clamp(v, lo, hi) : 0.0; };
            return {fix(throttle, 0.0, 1.0), fix(steer, -1.0, 1.0), fix(brake, 0.0, 1.0)};
        }
    };

    enum class EhmiMode : std::uint8_t
    {
        off,
        cruising,
        yielding,
        stopped,
    };

    inline constexpr std::string_view to_string(EhmiMode m)
    {
        switch (m)
        {
        case EhmiMode::off: return "off";
        case EhmiMode::cruising: return "cruising";
        case EhmiMode::yielding: return "yielding";
        case EhmiMode::stopped: return "stopped";
        }
        return "off";
    }

    inline std::optional<EhmiMode> ehmi_mode_from_string(std::string_view s)
    {
        for (auto m : {EhmiMode::off, EhmiMode::cruising, EhmiMode::yielding, EhmiMode::stopped})
            if (to_string(m) == s)
                return m;
        return std::nullopt;
    }

    inline constexpr Rgb ehmi_default_color{0, 255, 255};

    struct EhmiState
    {
        EhmiMode mode = EhmiMode::off;
        bool strip_active = false;
        Rgb strip_color{0, 0, 0};
        bool operator==(const EhmiState &) const = default;
    };

    /// Strip is lit exactly while yielding or stopped for a pedestrian.
    inline EhmiState ehmi_update(const EhmiState &prev, bool yielding, double speed, Rgb active_color = ehmi_default_color)
    {
        (void)prev;
        EhmiState s;
        if (yielding)
            s.mode = speed > 0.05 ? EhmiMode::yielding : EhmiMode::stopped;
        else
            s.mode = EhmiMode::cruising;
        s.strip_active = s.mode == EhmiMode::yielding || s.mode == EhmiMode::stopped;
        s.strip_color = s.strip_active ? active_color : Rgb{0, 0, 0};
        return s;
    }

    struct VehicleState
    {
        ActorId id{};
        Transform transform;
        double speed = 0.0;
        double wheelbase = 2.7;
        Vec3 half_extents = Vec3(2.4, 0.95, 0.75);
        VehicleControl control;
        EhmiState ehmi;
        bool frozen = false; // set after a fault, the actor stops advancing

        bool operator==(const VehicleState &) const = default;

        Rect2 footprint() const { return {xy(transform.position), half_extents.head<2>(), transform.yaw}; }
        Vec2 front() const { return xy(transform.position) + half_extents.x() * heading_vector(transform.yaw); }
    };

    struct VehicleDynamics
    {
        double max_accel = 3.5;       // m/s^2 at full throttle
        double max_brake = 8.0;       // m/s^2 at full brake
        double max_steer_angle = 0.6; // rad at |steer| = 1
        double drag = 0.0;            // 1/s, linear
    };

    /// Kinematic bicycle step: speed first, then heading, then position along
    /// the new heading.
    inline VehicleState bicycle_step(const VehicleState &state, const VehicleControl &control, double dt, const VehicleDynamics &dyn)
    {
        if (!(dt > 0.0))
            throw Error(Errc::invalid_value, "bicycle_step: dt must be > 0");
        const VehicleControl c = control.clamped();
        VehicleState next = state;
        next.control = c;
        next.speed = std::max(0.0, state.speed + (dyn.max_accel * c.throttle - dyn.max_brake * c.brake - dyn.drag * state.speed) * dt);
        double yaw = state.transform.yaw;
        if (c.steer != 0.0)
            yaw += next.speed / state.wheelbase * std::tan(dyn.max_steer_angle * c.steer) * dt;
        next.transform.yaw = normalize_angle(yaw);
        next.transform.position.x() += next.speed * dt * std::cos(next.transform.yaw);
        next.transform.position.y() += next.speed * dt * std::sin(next.transform.yaw);
        return next;
    }

    struct Route
    {
        Polyline waypoints;
        double target_speed = 10.0;
        bool operator==(const Route &) const = default;
    };

    /// steer = clamp(atan(kappa * wheelbase) / max_steer_angle) with
    /// kappa = 2 * lateral / lookahead^2.
    inline double pursuit_steer(double lateral, double lookahead, double wheelbase, double max_steer_angle)
    {
        const double kappa = 2.0 * lateral / (lookahead * lookahead);
        return std::clamp(std::atan(kappa * wheelbase) / max_steer_angle, -1.0, 1.0);
    }

    struct PursuitResult
    {
        double steer = 0.0;
        bool finished = false;
        Vec2 target = Vec2::Zero();
    };

    inline PursuitResult pure_pursuit(const VehicleState &state, const Route &route, double lookahead, const VehicleDynamics &dyn)
    {
        if (!(lookahead > 0.0))
            throw Error(Errc::invalid_value, "pure_pursuit: lookahead must be > 0");
        PursuitResult out;
        if (route.waypoints.size() < 2)
        {
            out.finished = true;
            return out;
        }
        const Vec2 pos = xy(state.transform.position);
        const auto proj = project_onto(route.waypoints, pos);
        const double total = polyline_length(route.waypoints);
        out.finished = proj.s >= total - 0.5;
        const double s_target = proj.s + lookahead;
        if (s_target <= total)
            out.target = point_at(route.waypoints, s_target);
        else
            out.target = route.waypoints.back() + (s_target - total) * tangent_at(route.waypoints, total);
        const Vec2 d = out.target - pos;
        const double yaw = state.transform.yaw;
        const double lateral = -std::sin(yaw) * d.x() + std::cos(yaw) * d.y();
        out.steer = pursuit_steer(lateral, lookahead, state.wheelbase, dyn.max_steer_angle);
        return out;
    }

    struct TrafficParams
    {
        double speed_limit_factor = 1.0;
        bool ignore_lights = false;
        bool ignore_pedestrians = false;
        double comfort_decel = 3.0; // m/s^2
        double max_decel = 8.0;     // m/s^2
        bool force_lane_change = false;

        bool operator==(const TrafficParams &) const = default;

        void validate() const
        {
            if (!(speed_limit_factor > 0.0))
                throw Error(Errc::invalid_value, "traffic params: speed_limit_factor must be > 0");
            if (!(comfort_decel > 0.0))
                throw Error(Errc::invalid_value, "traffic params: comfort_decel must be > 0");
            if (!(max_decel >= comfort_decel))
                throw Error(Errc::invalid_value, "traffic params: max_decel must be >= comfort_decel");
        }
    };

    struct Pedal
    {
        double throttle = 0.0;
        double brake = 0.0;
        bool operator==(const Pedal &) const = default;
    };

    /// Speed tracking with an optional stop target `stop_at` meters ahead.
    inline Pedal longitudinal_plan(double speed, double target_speed, std::optional<double> stop_at, const TrafficParams &params, double gain = 0.5)
    {
        double target = target_speed;
        if (stop_at)
        {
            const double d = std::max(0.0, *stop_at);
            if (d < 0.1 && speed < 0.05)
                return {0.0, 1.0};
            const double required = speed * speed / (2.0 * std::max(d, 1e-9));
            if (required >= params.comfort_decel)
                return {0.0, std::clamp(required / params.max_decel, 0.0, 1.0)};
            // Never exceed the speed from which a comfortable stop still fits.
            target = std::min(target, std::sqrt(2.0 * params.comfort_decel * d));
        }
        const double err = target - speed;
        if (err > 0.0)
            return {std::clamp(gain * err, 0.0, 1.0), 0.0};
        if (err < -0.2)
            return {0.0, std::clamp(-0.5 * gain * err, 0.0, 1.0)};
        return {0.0, 0.0};
    }

    /// What the planner needs to know about a pedestrian.
    struct WalkerObservation
    {
        ActorId id{};
        Vec2 position = Vec2::Zero();
        Vec2 velocity = Vec2::Zero();
    };

    /// Distance along the route from the vehicle's projection to the stop line
    /// of the nearest crossing ahead that a pedestrian occupies or is about to
    /// enter; nullopt when there is nothing to yield to.
    inline std::optional<double> pedestrian_yield_decision(const VehicleState &vehicle, const Route &route, std::span<const WalkerObservation> walkers,
                                                           const RoadMap &map, const TrafficParams &params, double intent_radius = 3.0)
    {
        if (params.ignore_pedestrians || route.waypoints.size() < 2 || walkers.empty())
            return std::nullopt;
        const double s_vehicle = project_onto(route.waypoints, xy(vehicle.transform.position)).s;
        std::optional<double> best;
        for (const auto &cw : map.crosswalks)
        {
            if (!route_crosses(route.waypoints, cw))
                continue;
            const auto s_stop = stop_distance_along_route(route.waypoints, cw);
            if (!s_stop || *s_stop < s_vehicle)
                continue;
            bool occupied = false;
            for (const auto &w : walkers)
            {
                if (convex_contains(cw.polygon, w.position))
                {
                    occupied = true;
                    break;
                }
                const double dist = polygon_distance(cw.polygon, w.position);
                if (dist > intent_radius || dist <= 0.0)
                    continue;
                const Vec2 toward = (polygon_closest_point(cw.polygon, w.position) - w.position) / dist;
                if (w.velocity.dot(toward) > 0.1)
                {
                    occupied = true;
                    break;
                }
            }
            if (occupied)
            {
                const double d = *s_stop - s_vehicle;
                if (!best || d < *best)
                    best = d;
            }
        }
        return best;
    }
} // namespace rail
