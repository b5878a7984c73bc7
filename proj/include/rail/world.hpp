// SPDX-License-Identifier: Apache-2.0
//
// The tick-synchronized world: actor state, a tick-boundary command queue,
// fixed-step advancement and immutable snapshots.
#pragma once

#include "rail/audio.hpp"
#include "rail/avatar.hpp"
#include "rail/error.hpp"
#include "rail/geometry.hpp"
#include "rail/map.hpp"
#include "rail/mocap.hpp"
#include "rail/sensors.hpp"
#include "rail/traffic.hpp"
#include "rail/types.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace rail
{
    // ------------------------------------------------------------------ actors

    enum class DriveMode : std::uint8_t
    {
        ui_drive,
        bvh_replay,
        live_fusion,
    };

    inline constexpr std::string_view to_string(DriveMode m)
    {
        switch (m)
        {
        case DriveMode::ui_drive: return "ui-drive";
        case DriveMode::bvh_replay: return "bvh-replay";
        case DriveMode::live_fusion: return "live-fusion";
        }
        return "ui-drive";
    }

    inline std::optional<DriveMode> drive_mode_from_string(std::string_view s)
    {
        for (auto m : {DriveMode::ui_drive, DriveMode::bvh_replay, DriveMode::live_fusion})
            if (to_string(m) == s)
                return m;
        return std::nullopt;
    }

    inline constexpr double walker_radius = 0.3;

    struct WalkerState
    {
        ActorId id{};
        Transform transform;
        double speed = 0.0;
        Vec2 direction = Vec2::UnitX(); // world frame, unit
        DriveMode drive_mode = DriveMode::ui_drive;
        std::optional<SkeletonPose> pose;
        double head_yaw = 0.0; // world yaw of the head
        double distance = 0.0; // accumulated path length, drives the walk cycle
        bool frozen = false;

        bool operator==(const WalkerState &) const = default;

        Disc footprint() const { return {xy(transform.position), walker_radius}; }
        Vec2 velocity() const { return direction * speed; }
    };

    struct TrafficLightState
    {
        ActorId id{};
        int spec_id = 0; // map light id, 0 for free-standing lights
        Transform transform;
        LightPhase phase = LightPhase::red;
        double remaining = 10.0;
        double red = 10.0;
        double green = 10.0;
        double amber = 3.0;
        std::optional<StopLine> stop_line;

        bool operator==(const TrafficLightState &) const = default;

        double duration(LightPhase p) const
        {
            switch (p)
            {
            case LightPhase::red: return red;
            case LightPhase::green: return green;
            case LightPhase::amber: return amber;
            }
            return red;
        }

        Disc footprint() const { return {xy(transform.position), 0.15}; }
    };

    struct PropState
    {
        ActorId id{};
        Transform transform;
        Vec3 half_extents = Vec3(0.5, 0.5, 0.5);
        bool operator==(const PropState &) const = default;
        Rect2 footprint() const { return {xy(transform.position), half_extents.head<2>(), transform.yaw}; }
    };

    inline LightPhase next_phase(LightPhase p)
    {
        switch (p)
        {
        case LightPhase::red: return LightPhase::green;
        case LightPhase::green: return LightPhase::amber;
        case LightPhase::amber: return LightPhase::red;
        }
        return LightPhase::red;
    }

    /// Counts the phase timer down; on expiry moves red -> green -> amber -> red
    /// with the new phase's full duration.
    inline TrafficLightState traffic_light_step(const TrafficLightState &light, double dt)
    {
        TrafficLightState next = light;
        next.remaining = light.remaining - dt;
        if (next.remaining <= 1e-9)
        {
            next.phase = next_phase(light.phase);
            next.remaining = next.duration(next.phase);
        }
        return next;
    }

    // ------------------------------------------------------------------ events

    enum class EventKind : std::uint8_t
    {
        collision,
        complete_stop,
        spawn,
        destroy,
        out_of_bounds,
        fault,
        spawn_failed,
        lane_change_requested,
    };

    inline constexpr std::string_view to_string(EventKind k)
    {
        switch (k)
        {
        case EventKind::collision: return "collision";
        case EventKind::complete_stop: return "complete-stop";
        case EventKind::spawn: return "spawn";
        case EventKind::destroy: return "destroy";
        case EventKind::out_of_bounds: return "out-of-bounds";
        case EventKind::fault: return "fault";
        case EventKind::spawn_failed: return "spawn-failed";
        case EventKind::lane_change_requested: return "lane-change-requested";
        }
        return "fault";
    }

    inline std::optional<EventKind> event_kind_from_string(std::string_view s)
    {
        for (int i = 0; i <= static_cast<int>(EventKind::lane_change_requested); ++i)
            if (to_string(static_cast<EventKind>(i)) == s)
                return static_cast<EventKind>(i);
        return std::nullopt;
    }

    struct Event
    {
        EventKind kind = EventKind::fault;
        std::vector<ActorId> actors;
        double value = 0.0; // penetration depth, speed, ... depending on kind
        std::string detail;
        bool operator==(const Event &) const = default;
    };

    /// One event per overlapping pair with penetration > 0: vehicle vs walker
    /// (rectangle vs disc) and vehicle vs vehicle/prop (rectangle vs rectangle).
    inline std::vector<Event> detect_collisions(std::span<const VehicleState> vehicles, std::span<const WalkerState> walkers, std::span<const PropState> props = {})
    {
        std::vector<Event> out;
        auto pair_event = [&](ActorId a, ActorId b, double depth) {
            if (depth > 0.0)
                out.push_back({EventKind::collision, {std::min(a, b), std::max(a, b)}, depth, ""});
        };
        for (std::size_t i = 0; i < vehicles.size(); ++i)
        {
            const Rect2 fi = vehicles[i].footprint();
            for (const auto &w : walkers)
                pair_event(vehicles[i].id, w.id, penetration(fi, w.footprint()));
            for (std::size_t j = i + 1; j < vehicles.size(); ++j)
                pair_event(vehicles[i].id, vehicles[j].id, penetration(fi, vehicles[j].footprint()));
            for (const auto &p : props)
                pair_event(vehicles[i].id, p.id, penetration(fi, p.footprint()));
        }
        std::sort(out.begin(), out.end(), [](const Event &a, const Event &b) { return a.actors < b.actors; });
        return out;
    }

    // --------------------------------------------------------------- snapshots

    struct WorldSnapshot
    {
        std::uint64_t frame = 0;
        double sim_time = 0.0;
        double dt = 0.05;
        std::uint64_t rng_seed = 0;
        std::vector<VehicleState> vehicles;
        std::vector<WalkerState> walkers;
        std::vector<TrafficLightState> lights;
        std::vector<PropState> props;
        std::vector<Event> events;
        std::optional<ActorId> listener;
        std::vector<AudioCue> audio;

        bool operator==(const WorldSnapshot &) const = default;

        const VehicleState *vehicle(ActorId id) const
        {
            for (const auto &v : vehicles)
                if (v.id == id)
                    return &v;
            return nullptr;
        }

        const WalkerState *walker(ActorId id) const
        {
            for (const auto &w : walkers)
                if (w.id == id)
                    return &w;
            return nullptr;
        }

        std::size_t actor_count() const { return vehicles.size() + walkers.size() + lights.size() + props.size(); }
    };

    using SnapshotPtr = std::shared_ptr<const WorldSnapshot>;

    /// Joint names and parent indices shared by every avatar in a world.
    struct SkeletonInfo
    {
        std::vector<std::string> names;
        std::vector<int> parents;
        bool operator==(const SkeletonInfo &) const = default;

        static SkeletonInfo from(const BvhHierarchy &h)
        {
            SkeletonInfo s;
            for (const auto &j : h)
            {
                s.names.push_back(j.name);
                s.parents.push_back(j.parent ? static_cast<int>(*j.parent) : -1);
            }
            return s;
        }
    };

    /// Analytic primitives for every actor in a snapshot plus the ground.
    /// `exclude` drops the sensor's own vehicle.
    inline SensingScene build_sensing_scene(const WorldSnapshot &snap, const AvatarRig &rig, std::optional<ActorId> exclude = std::nullopt)
    {
        SensingScene scene;
        scene.planes.push_back({Vec3::UnitZ(), 0.0, SemanticLabel::road, environment_id});
        for (const auto &v : snap.vehicles)
        {
            if (exclude && v.id == *exclude)
                continue;
            scene.boxes.push_back({v.transform.position + Vec3(0, 0, v.half_extents.z()), v.half_extents, v.transform.yaw, SemanticLabel::vehicle, v.id});
        }
        for (const auto &p : snap.props)
            scene.boxes.push_back({p.transform.position + Vec3(0, 0, p.half_extents.z()), p.half_extents, p.transform.yaw, SemanticLabel::building, p.id});
        for (const auto &l : snap.lights)
            scene.boxes.push_back({l.transform.position + Vec3(0, 0, 1.5), Vec3(0.1, 0.1, 1.5), l.transform.yaw, SemanticLabel::pole, l.id});
        for (const auto &w : snap.walkers)
        {
            if (w.pose && !rig.bones.empty())
            {
                auto caps = avatar_capsules(*w.pose, rig, w.id);
                scene.capsules.insert(scene.capsules.end(), caps.begin(), caps.end());
            }
            else
            {
                const Vec3 base = w.transform.position;
                scene.capsules.push_back({base + Vec3(0, 0, 0.25), base + Vec3(0, 0, 1.5), 0.25, SemanticLabel::pedestrian, w.id});
            }
        }
        return scene;
    }

    // ------------------------------------------------------------------ world

    struct WorldConfig
    {
        double dt = 0.05; // s, fixed per run
        std::uint64_t seed = 0;
        VehicleDynamics dynamics;
        TrafficParams traffic;
        double lookahead = 8.0;     // m, pure pursuit
        double stop_margin = 2.0;   // m between front bumper and stop line
        double intent_radius = 3.0; // m
        double bounds_margin = 100.0;
        std::optional<std::pair<Vec2, Vec2>> bounds;
        double stride = 1.4; // m per walk cycle
    };

    /// Per-walker motion sources; kept outside snapshots.
    struct WalkerMotion
    {
        std::shared_ptr<const BvhClip> clip;   // bvh-replay motion or live-fusion base
        Mat3 basis = Mat3::Identity();         // file frame -> avatar root frame
        Transform anchor;                      // root parent for bvh-replay
        double start_time = 0.0;               // s of sim time at clip frame 0
        bool loop = false;
        std::shared_ptr<const std::vector<TrackerSample>> tracker;
        std::optional<SkeletonPose> external_pose; // from avatar_pose messages
        Transform root;                            // last applied root (live-fusion gating)
        AvatarConfig avatar;
    };

    struct VehicleControlCommand
    {
        ActorId id{};
        VehicleControl control;
    };
    struct WalkerControlCommand
    {
        ActorId id{};
        Vec2 direction = Vec2::Zero(); // avatar frame (x forward, y left)
        double speed = 0.0;
        double head_yaw = 0.0;         // world yaw; the body follows it
    };
    struct AvatarPoseCommand
    {
        ActorId id{};
        SkeletonPose pose;
    };
    struct TrafficParamsCommand
    {
        std::optional<ActorId> id; // all managed vehicles when empty
        TrafficParams params;
    };
    struct SpawnCommand
    {
        ActorId id{}; // reserved
        std::string blueprint;
        Transform transform;
    };
    struct DestroyCommand
    {
        ActorId id{};
    };
    using Command = std::variant<VehicleControlCommand, WalkerControlCommand, AvatarPoseCommand, TrafficParamsCommand, SpawnCommand, DestroyCommand>;

    enum class ActorKind : std::uint8_t
    {
        vehicle,
        walker,
        light,
        prop,
    };

    inline std::optional<ActorKind> blueprint_kind(std::string_view bp)
    {
        if (bp == "vehicle.sedan")
            return ActorKind::vehicle;
        if (bp == "walker.avatar")
            return ActorKind::walker;
        if (bp == "light.standard")
            return ActorKind::light;
        if (bp == "prop.box")
            return ActorKind::prop;
        return std::nullopt;
    }

    struct ManagedDecision
    {
        VehicleControl control;
        bool yielding = false;
        std::optional<double> stop_at; // m from the front bumper target
        double target_speed = 0.0;
        bool finished = false;
    };

    class World
    {
    public:
        explicit World(RoadMap map = {}, WorldConfig cfg = {})
            : map_(std::make_shared<const RoadMap>(std::move(map))), cfg_(std::move(cfg))
        {
            if (!(cfg_.dt > 0.0))
                throw Error(Errc::invalid_config, "world: dt must be > 0");
            cfg_.traffic.validate();
            skeleton_hierarchy_ = pedestrian_skeleton();
            skeleton_ = SkeletonInfo::from(skeleton_hierarchy_);
            rig_ = AvatarRig::for_hierarchy(skeleton_.names, skeleton_.parents);
            walk_loop_ = std::make_shared<const BvhClip>(make_walk_cycle_clip());
            if (cfg_.bounds)
                bounds_ = *cfg_.bounds;
            else
            {
                auto [lo, hi] = map_->bounds();
                if (map_->segments.empty() && map_->crosswalks.empty())
                    lo = hi = Vec2::Zero();
                bounds_ = {lo - Vec2::Constant(cfg_.bounds_margin), hi + Vec2::Constant(cfg_.bounds_margin)};
            }
            for (const auto &spec : map_->lights)
            {
                TrafficLightState l;
                l.id = ActorId{next_id_++};
                l.spec_id = spec.id;
                l.transform = make_transform(spec.position.x(), spec.position.y());
                l.red = spec.red;
                l.green = spec.green;
                l.amber = spec.amber;
                l.phase = spec.initial;
                l.remaining = std::max(1e-9, l.duration(spec.initial) - spec.offset);
                l.stop_line = spec.stop_line;
                lights_.push_back(l);
            }
            publish({});
        }

        const RoadMap &map() const { return *map_; }
        const WorldConfig &config() const { return cfg_; }
        double dt() const { return cfg_.dt; }
        std::uint64_t frame() const { return frame_; }
        SnapshotPtr snapshot() const { return latest_; }
        const SkeletonInfo &skeleton() const { return skeleton_; }
        const AvatarRig &rig() const { return rig_; }

        /// Reserves the next id for a spawn applied at the following tick.
        ActorId reserve_id() { return ActorId{next_id_++}; }

        std::optional<ActorKind> kind_of(ActorId id) const
        {
            if (find(vehicles_, id))
                return ActorKind::vehicle;
            if (find(walkers_, id))
                return ActorKind::walker;
            if (find(lights_, id))
                return ActorKind::light;
            if (find(props_, id))
                return ActorKind::prop;
            return std::nullopt;
        }

        /// Validates a prospective spawn against the current state.
        void check_spawn(std::string_view blueprint, const Transform &t) const
        {
            const auto kind = blueprint_kind(blueprint);
            if (!kind)
                throw Error(Errc::unknown_blueprint, fmt::format("unknown blueprint '{}'", blueprint));
            if (!t.finite())
                throw Error(Errc::invalid_value, "spawn transform is not finite");
            if (overlaps_existing(*kind, t))
                throw Error(Errc::spawn_overlap, fmt::format("spawn of '{}' overlaps an existing actor", blueprint));
        }

        /// Spawns immediately (setup time). The actor shows in the current
        /// snapshot at once; its spawn event comes with the next tick.
        ActorId spawn_actor(std::string_view blueprint, const Transform &t)
        {
            check_spawn(blueprint, t);
            const ActorId id{next_id_++};
            insert_actor(id, *blueprint_kind(blueprint), t);
            pending_events_.push_back({EventKind::spawn, {id}, 0.0, std::string(blueprint)});
            republish();
            return id;
        }

        void enqueue(Command cmd) { queue_.push_back(std::move(cmd)); }
        std::size_t queued() const { return queue_.size(); }

        void set_route(ActorId id, Route route, bool autopilot = true)
        {
            require(id, ActorKind::vehicle);
            routes_[id] = std::move(route);
            autopilot_[id] = autopilot;
        }

        void set_autopilot(ActorId id, bool on)
        {
            require(id, ActorKind::vehicle);
            autopilot_[id] = on;
        }

        void set_ehmi_enabled(ActorId id, bool on)
        {
            require(id, ActorKind::vehicle);
            ehmi_enabled_[id] = on;
            auto *v = find(vehicles_, id);
            v->ehmi = on ? EhmiState{EhmiMode::cruising, false, {0, 0, 0}} : EhmiState{};
            republish();
        }

        void set_vehicle_speed(ActorId id, double speed)
        {
            require(id, ActorKind::vehicle);
            find(vehicles_, id)->speed = std::max(0.0, speed);
            republish();
        }

        void set_traffic_params(const TrafficParams &p, std::optional<ActorId> id = std::nullopt)
        {
            p.validate();
            if (id)
                vehicle_params_[*id] = p;
            else
            {
                cfg_.traffic = p;
                vehicle_params_.clear();
            }
        }

        const TrafficParams &traffic_params(ActorId id) const
        {
            auto it = vehicle_params_.find(id);
            return it != vehicle_params_.end() ? it->second : cfg_.traffic;
        }

        const std::optional<Route> route(ActorId id) const
        {
            auto it = routes_.find(id);
            return it == routes_.end() ? std::nullopt : std::optional<Route>(it->second);
        }

        /// Attaches motion sources to a walker and switches its drive mode.
        void set_walker_motion(ActorId id, DriveMode mode, WalkerMotion motion)
        {
            require(id, ActorKind::walker);
            auto *w = find(walkers_, id);
            if (mode != DriveMode::ui_drive && !motion.clip && !motion.tracker && !motion.external_pose)
                throw Error(Errc::invalid_config, fmt::format("walker {}: {} needs a motion source", id.value, to_string(mode)));
            if (motion.clip)
                adopt_skeleton(motion.clip->joints);
            motion.avatar = AvatarConfig::for_hierarchy(skeleton_hierarchy_);
            if (mode == DriveMode::bvh_replay && motion.anchor == Transform{})
                motion.anchor = w->transform;
            motion.root = w->transform;
            w->drive_mode = mode;
            motions_[id] = std::move(motion);
            w->pose = pose_for(*w, motions_[id], frame_time(frame_));
            if (w->pose)
                w->head_yaw = head_yaw_of(*w->pose, motions_[id], w->head_yaw);
            republish();
        }

        void set_listener(ActorId id)
        {
            require(id, ActorKind::walker);
            listener_ = id;
            republish();
        }

        /// Advances one fixed step. `dt` must equal the configured step.
        SnapshotPtr step(double dt)
        {
            if (dt != cfg_.dt)
                throw Error(Errc::invalid_value, fmt::format("step: dt {} differs from the fixed step {}", dt, cfg_.dt));
            return step();
        }

        SnapshotPtr step()
        {
            ++frame_;
            const double now = frame_time(frame_);
            std::vector<Event> events = std::move(pending_events_);
            pending_events_.clear();

            apply_commands(events);

            for (auto &l : lights_)
                l = traffic_light_step(l, cfg_.dt);

            const auto decisions = traffic_manager_step();

            for (auto &v : vehicles_)
            {
                if (v.frozen)
                    continue;
                const VehicleState prev = v;
                VehicleControl control = v.control;
                bool yielding = false;
                if (auto it = decisions.find(v.id); it != decisions.end())
                {
                    control = it->second.control;
                    yielding = it->second.yielding;
                }
                v = bicycle_step(v, control, cfg_.dt, cfg_.dynamics);
                if (!v.transform.finite() || !std::isfinite(v.speed))
                {
                    v = prev;
                    v.frozen = true;
                    events.push_back({EventKind::fault, {v.id}, 0.0, "non-finite vehicle state"});
                    continue;
                }
                if (ehmi_on(v.id))
                    v.ehmi = ehmi_update(prev.ehmi, yielding, v.speed);
                if (prev.speed >= 0.05 && v.speed < 0.05)
                    events.push_back({EventKind::complete_stop, {v.id}, v.speed, ""});
            }

            for (auto &w : walkers_)
            {
                if (w.frozen)
                    continue;
                const WalkerState prev = w;
                advance_walker(w, now);
                const bool finite = w.transform.finite() && std::isfinite(w.speed) && w.direction.allFinite() && (!w.pose || w.pose->finite());
                if (!finite)
                {
                    w = prev;
                    w.frozen = true;
                    events.push_back({EventKind::fault, {w.id}, 0.0, "non-finite walker state"});
                }
            }

            // Collision onsets only; a pair in contact stays silent until it separates.
            auto contacts = detect_collisions(vehicles_, walkers_, props_);
            std::set<std::pair<ActorId, ActorId>> now_touching;
            for (auto &e : contacts)
            {
                const std::pair key{e.actors[0], e.actors[1]};
                now_touching.insert(key);
                if (!touching_.contains(key))
                    events.push_back(std::move(e));
            }
            touching_ = std::move(now_touching);

            auto check_bounds = [&](ActorId id, const Vec3 &p) {
                const bool outside = p.x() < bounds_.first.x() || p.y() < bounds_.first.y() || p.x() > bounds_.second.x() || p.y() > bounds_.second.y();
                if (outside && !outside_.contains(id))
                {
                    outside_.insert(id);
                    events.push_back({EventKind::out_of_bounds, {id}, 0.0, ""});
                }
                else if (!outside)
                    outside_.erase(id);
            };
            for (const auto &v : vehicles_)
                check_bounds(v.id, v.transform.position);
            for (const auto &w : walkers_)
                check_bounds(w.id, w.transform.position);

            publish(std::move(events));
            return latest_;
        }

        /// Controls for every autopilot vehicle, computed from the current state.
        std::map<ActorId, ManagedDecision> traffic_manager_step() const
        {
            std::map<ActorId, ManagedDecision> out;
            std::vector<WalkerObservation> obs;
            obs.reserve(walkers_.size());
            for (const auto &w : walkers_)
                obs.push_back({w.id, xy(w.transform.position), w.velocity()});

            for (const auto &v : vehicles_)
            {
                auto rit = routes_.find(v.id);
                auto ait = autopilot_.find(v.id);
                if (rit == routes_.end() || ait == autopilot_.end() || !ait->second)
                    continue;
                const Route &route = rit->second;
                const TrafficParams &params = traffic_params(v.id);
                ManagedDecision d;
                const auto pursuit = pure_pursuit(v, route, cfg_.lookahead, cfg_.dynamics);
                d.finished = pursuit.finished;

                const Vec2 pos = xy(v.transform.position);
                const RoadSegment *seg = map_->segment_at(pos);
                double target = (seg ? seg->speed_limit : route.target_speed) * params.speed_limit_factor;
                if (pursuit.finished)
                    target = 0.0;

                std::optional<double> stop;
                const auto yield = pedestrian_yield_decision(v, route, obs, *map_, params, cfg_.intent_radius);
                const double front = v.half_extents.x() + cfg_.stop_margin;
                if (yield)
                {
                    d.yielding = true;
                    stop = *yield - front;
                }
                if (!params.ignore_lights)
                {
                    const double s_vehicle = project_onto(route.waypoints, pos).s;
                    for (const auto &l : lights_)
                    {
                        if (!l.stop_line || l.phase == LightPhase::green)
                            continue;
                        const auto s = first_crossing(route.waypoints, l.stop_line->a, l.stop_line->b);
                        if (!s || *s < s_vehicle)
                            continue;
                        const double dist = *s - s_vehicle - front;
                        if (l.phase == LightPhase::amber)
                        {
                            // Amber: stop only if that is still comfortable.
                            const double need = v.speed * v.speed / (2.0 * std::max(dist, 1e-9));
                            if (dist <= 0.0 || need > params.comfort_decel)
                                continue;
                        }
                        if (!stop || dist < *stop)
                            stop = dist;
                    }
                }
                d.stop_at = stop;
                d.target_speed = target;
                const Pedal pedal = longitudinal_plan(v.speed, target, stop, params);
                d.control = VehicleControl{pedal.throttle, pursuit.steer, pedal.brake}.clamped();
                out.emplace(v.id, d);
            }
            return out;
        }

    private:
        template <class T>
        static T *find(std::vector<T> &v, ActorId id)
        {
            auto it = std::lower_bound(v.begin(), v.end(), id, [](const T &a, ActorId b) { return a.id < b; });
            return it != v.end() && it->id == id ? &*it : nullptr;
        }

        template <class T>
        static const T *find(const std::vector<T> &v, ActorId id)
        {
            auto it = std::lower_bound(v.begin(), v.end(), id, [](const T &a, ActorId b) { return a.id < b; });
            return it != v.end() && it->id == id ? &*it : nullptr;
        }

        void require(ActorId id, ActorKind kind) const
        {
            const auto k = kind_of(id);
            if (!k)
                throw Error(Errc::dangling_reference, fmt::format("unknown actor {}", id.value));
            if (*k != kind)
                throw Error(Errc::invalid_value, fmt::format("actor {} has the wrong kind", id.value));
        }

        double frame_time(std::uint64_t frame) const { return static_cast<double>(frame) * cfg_.dt; }

        bool ehmi_on(ActorId id) const
        {
            auto it = ehmi_enabled_.find(id);
            return it != ehmi_enabled_.end() && it->second;
        }

        static Rect2 footprint_for(ActorKind kind, const Transform &t)
        {
            const Vec2 c = xy(t.position);
            switch (kind)
            {
            case ActorKind::vehicle: return {c, VehicleState{}.half_extents.head<2>(), t.yaw};
            case ActorKind::prop: return {c, PropState{}.half_extents.head<2>(), t.yaw};
            default: return {c, Vec2::Zero(), t.yaw};
            }
        }

        bool overlaps_existing(ActorKind kind, const Transform &t) const
        {
            const bool is_disc = kind == ActorKind::walker || kind == ActorKind::light;
            const Disc disc{xy(t.position), kind == ActorKind::walker ? walker_radius : 0.15};
            const Rect2 rect = footprint_for(kind, t);
            auto vs_rect = [&](const Rect2 &other) { return is_disc ? penetration(other, disc) : penetration(other, rect); };
            auto vs_disc = [&](const Disc &other) { return is_disc ? penetration(disc, other) : penetration(rect, other); };
            for (const auto &v : vehicles_)
                if (vs_rect(v.footprint()) > 0.0)
                    return true;
            for (const auto &p : props_)
                if (vs_rect(p.footprint()) > 0.0)
                    return true;
            for (const auto &w : walkers_)
                if (vs_disc(w.footprint()) > 0.0)
                    return true;
            for (const auto &l : lights_)
                if (vs_disc(l.footprint()) > 0.0)
                    return true;
            return false;
        }

        void insert_actor(ActorId id, ActorKind kind, const Transform &t)
        {
            auto put = [&](auto &vec, auto actor) {
                vec.insert(std::upper_bound(vec.begin(), vec.end(), id, [](ActorId a, const auto &b) { return a < b.id; }), std::move(actor));
            };
            const Transform tn = t.normalized();
            switch (kind)
            {
            case ActorKind::vehicle:
            {
                VehicleState v;
                v.id = id;
                v.transform = tn;
                put(vehicles_, v);
                break;
            }
            case ActorKind::walker:
            {
                WalkerState w;
                w.id = id;
                w.transform = tn;
                w.direction = heading_vector(tn.yaw);
                w.head_yaw = tn.yaw;
                w.pose = walk_cycle_pose(*walk_loop_, 0.0, cfg_.stride, root_isometry(tn, Mat3::Identity()));
                put(walkers_, w);
                if (!listener_)
                    listener_ = id;
                break;
            }
            case ActorKind::light:
            {
                TrafficLightState l;
                l.id = id;
                l.transform = tn;
                put(lights_, l);
                break;
            }
            case ActorKind::prop:
            {
                PropState p;
                p.id = id;
                p.transform = tn;
                put(props_, p);
                break;
            }
            }
        }

        void remove_actor(ActorId id)
        {
            auto drop = [&](auto &vec) { std::erase_if(vec, [&](const auto &a) { return a.id == id; }); };
            drop(vehicles_);
            drop(walkers_);
            drop(lights_);
            drop(props_);
            routes_.erase(id);
            autopilot_.erase(id);
            ehmi_enabled_.erase(id);
            vehicle_params_.erase(id);
            motions_.erase(id);
            outside_.erase(id);
            std::erase_if(touching_, [&](const auto &p) { return p.first == id || p.second == id; });
            if (listener_ == id)
                listener_ = walkers_.empty() ? std::nullopt : std::optional<ActorId>(walkers_.front().id);
        }

        void adopt_skeleton(const BvhHierarchy &h)
        {
            const auto info = SkeletonInfo::from(h);
            if (info == skeleton_)
                return;
            if (has_custom_skeleton_)
                throw Error(Errc::invalid_config, "all avatars in one world must share a skeleton");
            has_custom_skeleton_ = true;
            skeleton_hierarchy_ = h;
            skeleton_ = info;
            rig_ = AvatarRig::for_hierarchy(skeleton_.names, skeleton_.parents);
        }

        static Eigen::Isometry3d root_isometry(const Transform &t, const Mat3 &basis)
        {
            Eigen::Isometry3d iso = t.isometry();
            iso.linear() = iso.linear() * basis;
            return iso;
        }

        /// World yaw the head faces, from the first neck/head joint.
        double head_yaw_of(const SkeletonPose &pose, const WalkerMotion &m, double fallback) const
        {
            const auto &cfg = m.avatar;
            if (cfg.neck >= pose.joints.size())
                return fallback;
            const Vec3 fwd_file = m.basis.transpose() * Vec3::UnitX();
            const Vec3 f = pose.joints[cfg.neck].orientation * fwd_file;
            if (f.head<2>().norm() < 1e-9)
                return fallback;
            return normalize_angle(std::atan2(f.y(), f.x()));
        }

        std::size_t clip_frame(const WalkerMotion &m, double now) const
        {
            const auto frames = m.clip->frame_count();
            const double t = std::max(0.0, now - m.start_time);
            auto idx = static_cast<std::size_t>(std::floor(t / m.clip->frame_time + 1e-9));
            return m.loop ? idx % frames : std::min(idx, frames - 1);
        }

        std::optional<SkeletonPose> pose_for(const WalkerState &w, WalkerMotion &m, double now) const
        {
            switch (w.drive_mode)
            {
            case DriveMode::ui_drive:
                return walk_cycle_pose(*walk_loop_, w.distance, cfg_.stride, root_isometry(w.transform, Mat3::Identity()));
            case DriveMode::bvh_replay:
                if (m.clip && m.clip->frame_count() > 0)
                    return fk(*m.clip, clip_frame(m, now), root_isometry(m.anchor, m.basis));
                return w.pose;
            case DriveMode::live_fusion:
            {
                if (m.external_pose)
                    return m.external_pose;
                SkeletonPose base;
                if (m.clip && m.clip->frame_count() > 0)
                    base = fk(*m.clip, clip_frame(m, now), root_isometry(m.root, m.basis));
                else
                    base = walk_cycle_pose(*walk_loop_, 0.0, cfg_.stride, root_isometry(m.root, Mat3::Identity()));
                std::optional<TrackerSample> sample;
                if (m.tracker)
                    sample = sample_at(*m.tracker, now);
                auto composed = compose_avatar(base, sample, m.avatar, m.root);
                m.root = composed.root;
                return composed.pose;
            }
            }
            return std::nullopt;
        }

        void advance_walker(WalkerState &w, double now)
        {
            const double dt = cfg_.dt;
            if (w.drive_mode == DriveMode::ui_drive)
            {
                w.transform.position.x() += w.direction.x() * w.speed * dt;
                w.transform.position.y() += w.direction.y() * w.speed * dt;
                w.distance += w.speed * dt;
                w.pose = pose_for(w, motions_[w.id], now);
                return;
            }
            auto &m = motions_[w.id];
            const Vec2 before = xy(w.transform.position);
            w.pose = pose_for(w, m, now);
            if (!w.pose || w.pose->joints.empty())
                return;
            Vec2 after = xy(w.pose->joints.front().position);
            if (w.drive_mode == DriveMode::live_fusion && !m.external_pose)
                after = xy(m.root.position);
            const Vec2 vel = (after - before) / dt;
            w.transform.position.x() = after.x();
            w.transform.position.y() = after.y();
            w.speed = vel.norm();
            if (w.speed > 1e-6)
            {
                w.direction = vel / w.speed;
                w.transform.yaw = normalize_angle(std::atan2(w.direction.y(), w.direction.x()));
            }
            w.distance += w.speed * dt;
            w.head_yaw = head_yaw_of(*w.pose, m, w.head_yaw);
        }

        void apply_commands(std::vector<Event> &events)
        {
            std::deque<Command> cmds;
            cmds.swap(queue_);
            for (auto &cmd : cmds)
            {
                std::visit([&](auto &c) { apply(c, events); }, cmd);
            }
        }

        void apply(VehicleControlCommand &c, std::vector<Event> &)
        {
            if (auto *v = find(vehicles_, c.id))
            {
                v->control = c.control.clamped();
                autopilot_[c.id] = false;
            }
        }

        void apply(WalkerControlCommand &c, std::vector<Event> &)
        {
            auto *w = find(walkers_, c.id);
            if (!w)
                return;
            w->drive_mode = DriveMode::ui_drive;
            motions_.erase(c.id);
            w->transform.yaw = normalize_angle(c.head_yaw);
            w->head_yaw = w->transform.yaw;
            const double n = c.direction.norm();
            if (n > 1e-12 && c.speed > 0.0 && std::isfinite(c.speed))
            {
                const Vec2 local = c.direction / n;
                const double cy = std::cos(w->transform.yaw), sy = std::sin(w->transform.yaw);
                w->direction = Vec2(cy * local.x() - sy * local.y(), sy * local.x() + cy * local.y());
                w->direction.normalize();
                w->speed = c.speed;
            }
            else
            {
                w->speed = 0.0;
            }
        }

        void apply(AvatarPoseCommand &c, std::vector<Event> &)
        {
            auto *w = find(walkers_, c.id);
            if (!w || c.pose.joints.size() != skeleton_.names.size())
                return;
            auto &m = motions_[c.id];
            m.external_pose = std::move(c.pose);
            m.avatar = AvatarConfig::for_hierarchy(skeleton_hierarchy_);
            w->drive_mode = DriveMode::live_fusion;
        }

        void apply(TrafficParamsCommand &c, std::vector<Event> &events)
        {
            set_traffic_params(c.params, c.id);
            if (c.params.force_lane_change)
            {
                std::vector<ActorId> ids;
                if (c.id)
                    ids.push_back(*c.id);
                else
                    for (const auto &v : vehicles_)
                        ids.push_back(v.id);
                events.push_back({EventKind::lane_change_requested, ids, 0.0, "accepted; lane changes are not executed"});
            }
        }

        void apply(SpawnCommand &c, std::vector<Event> &events)
        {
            try
            {
                check_spawn(c.blueprint, c.transform);
                insert_actor(c.id, *blueprint_kind(c.blueprint), c.transform);
                events.push_back({EventKind::spawn, {c.id}, 0.0, c.blueprint});
            }
            catch (const Error &e)
            {
                events.push_back({EventKind::spawn_failed, {c.id}, 0.0, e.what()});
            }
        }

        void apply(DestroyCommand &c, std::vector<Event> &events)
        {
            if (!kind_of(c.id))
                return;
            remove_actor(c.id);
            events.push_back({EventKind::destroy, {c.id}, 0.0, ""});
        }

        std::vector<AudioCue> audio_for_listener() const
        {
            if (!listener_)
                return {};
            const auto *lw = find(walkers_, *listener_);
            if (!lw)
                return {};
            Transform ear = lw->transform;
            ear.yaw = lw->head_yaw;
            std::vector<AudioSource> sources;
            for (const auto &v : vehicles_)
            {
                const auto eng = engine_intensity(v.control.throttle, v.control.brake);
                sources.push_back({v.id, SoundKind::engine, "engine", 1.0, xy(v.transform.position), eng.intensity, eng.brake_cue});
            }
            for (const auto &w : walkers_)
            {
                if (w.id == lw->id)
                    continue;
                sources.push_back({w.id, SoundKind::footsteps, "footsteps", 0.6, xy(w.transform.position), std::min(1.0, w.speed / 3.0), false});
            }
            for (auto &s : ambient_sources())
                sources.push_back(std::move(s));
            return listener_cues(ear, sources);
        }

        void publish(std::vector<Event> events)
        {
            auto snap = std::make_shared<WorldSnapshot>();
            snap->frame = frame_;
            snap->sim_time = frame_time(frame_);
            snap->dt = cfg_.dt;
            snap->rng_seed = cfg_.seed;
            snap->vehicles = vehicles_;
            snap->walkers = walkers_;
            snap->lights = lights_;
            snap->props = props_;
            snap->events = std::move(events);
            snap->listener = listener_;
            snap->audio = audio_for_listener();
            latest_ = std::move(snap);
        }

        // Setup changes between ticks: same frame, same events.
        void republish() { publish(latest_ ? latest_->events : std::vector<Event>{}); }

        std::shared_ptr<const RoadMap> map_;
        WorldConfig cfg_;
        std::uint64_t frame_ = 0;
        std::uint32_t next_id_ = 1;
        std::vector<VehicleState> vehicles_;
        std::vector<WalkerState> walkers_;
        std::vector<TrafficLightState> lights_;
        std::vector<PropState> props_;
        std::map<ActorId, Route> routes_;
        std::map<ActorId, bool> autopilot_;
        std::map<ActorId, bool> ehmi_enabled_;
        std::map<ActorId, TrafficParams> vehicle_params_;
        std::map<ActorId, WalkerMotion> motions_;
        std::optional<ActorId> listener_;
        std::deque<Command> queue_;
        std::vector<Event> pending_events_;
        std::set<std::pair<ActorId, ActorId>> touching_;
        std::set<ActorId> outside_;
        std::pair<Vec2, Vec2> bounds_;
        BvhHierarchy skeleton_hierarchy_;
        SkeletonInfo skeleton_;
        bool has_custom_skeleton_ = false;
        AvatarRig rig_;
        std::shared_ptr<const BvhClip> walk_loop_;
        SnapshotPtr latest_;
    };
} // namespace rail
