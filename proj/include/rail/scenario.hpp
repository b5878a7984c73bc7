// SPDX-License-Identifier: Apache-2.0
//
// Declarative scenarios: load a config, self-tick the world, record every
// tick and check the optional expectations.
#pragma once

#include "rail/avatar.hpp"
#include "rail/error.hpp"
#include "rail/map.hpp"
#include "rail/mocap.hpp"
#include "rail/record.hpp"
#include "rail/world.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace rail
{
    enum ExitCode : int
    {
        exit_ok = 0,
        exit_config = 2,
        exit_runtime = 3,
        exit_expectation = 4,
    };

    struct ActorConfig
    {
        std::string name;
        std::string blueprint;
        Transform transform;
        // vehicles
        double speed = 0.0;
        std::optional<Route> route;
        bool autopilot = true;
        bool ehmi = true;
        std::optional<VehicleControl> control;
        std::optional<TrafficParams> traffic;
        // walkers
        DriveMode drive_mode = DriveMode::ui_drive;
        std::optional<std::filesystem::path> bvh;
        std::optional<std::filesystem::path> tracker;
        bool y_up = true;
        double unit_scale = 100.0;
        bool loop = false;
        double start_time = 0.0;
        std::optional<WalkerControlCommand> walk;
        bool listener = false;
    };

    struct Expectations
    {
        std::optional<std::size_t> collisions_max;
        std::optional<std::size_t> collisions_min;
        std::vector<std::string> complete_stop;  // actors that must report one
        std::vector<std::string> stopped_at_end; // speed < 0.05 on the last tick
        struct Gap
        {
            std::string actor;
            double min = 0.0;
            double max = 0.0;
        };
        std::optional<Gap> stop_line_gap; // front bumper to the next stop line at the end
        bool any() const { return collisions_max || collisions_min || !complete_stop.empty() || !stopped_at_end.empty() || stop_line_gap; }
    };

    struct ScenarioConfig
    {
        std::string name;
        std::string map_ref; // as written in the config, recorded in the log header
        RoadMap map;
        WorldConfig world;
        std::uint64_t duration = 1; // ticks
        std::vector<ActorConfig> actors;
        Expectations expect;
    };

    namespace detail
    {
        inline std::string read_text(const std::filesystem::path &p, const char *what)
        {
            std::ifstream in(p, std::ios::binary);
            if (!in)
                throw Error(Errc::io, fmt::format("cannot read {} '{}'", what, p.string()));
            return std::string(std::istreambuf_iterator<char>(in), {});
        }

        inline TrafficParams traffic_from_json(const nlohmann::json &j, TrafficParams p, const std::string &what)
        {
            require_object(j, what);
            for (auto it = j.begin(); it != j.end(); ++it)
            {
                static const std::set<std::string> known{"speed_limit_factor", "ignore_lights", "ignore_pedestrians", "comfort_decel", "max_decel", "force_lane_change"};
                if (!known.contains(it.key()))
                    throw Error(Errc::invalid_config, fmt::format("{}: unknown key '{}'", what, it.key()));
            }
            p.speed_limit_factor = field_or<double>(j, "speed_limit_factor", p.speed_limit_factor, what);
            p.ignore_lights = field_or<bool>(j, "ignore_lights", p.ignore_lights, what);
            p.ignore_pedestrians = field_or<bool>(j, "ignore_pedestrians", p.ignore_pedestrians, what);
            p.comfort_decel = field_or<double>(j, "comfort_decel", p.comfort_decel, what);
            p.max_decel = field_or<double>(j, "max_decel", p.max_decel, what);
            p.force_lane_change = field_or<bool>(j, "force_lane_change", p.force_lane_change, what);
            p.validate();
            return p;
        }

        inline void check_keys(const nlohmann::json &j, std::initializer_list<std::string_view> keys, const std::string &what)
        {
            for (auto it = j.begin(); it != j.end(); ++it)
                if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
                    throw Error(Errc::invalid_config, fmt::format("{}: unknown key '{}'", what, it.key()));
        }

        inline ActorConfig actor_from_json(const nlohmann::json &j, const std::filesystem::path &base, std::size_t index)
        {
            const std::string what = fmt::format("actors[{}]", index);
            require_object(j, what);
            check_keys(j,
                       {"name", "blueprint", "transform", "speed", "route", "autopilot", "ehmi", "control", "traffic", "drive_mode", "bvh", "tracker", "up_axis",
                        "unit_scale", "loop", "start_time", "walk", "listener"},
                       what);
            ActorConfig a;
            a.name = field_or<std::string>(j, "name", fmt::format("actor{}", index), what);
            a.blueprint = field<std::string>(j, "blueprint", what);
            a.transform = transform_from_json(j.contains("transform") ? j.at("transform") : nlohmann::json::object(), what + ".transform");
            a.speed = field_or<double>(j, "speed", 0.0, what);
            if (j.contains("route"))
            {
                const auto &r = j.at("route");
                Route route;
                route.waypoints = points_from(r.at("waypoints"), what + ".route.waypoints");
                route.target_speed = field_or<double>(r, "target_speed", route.target_speed, what + ".route");
                if (route.waypoints.size() < 2)
                    throw Error(Errc::invalid_config, what + ": a route needs at least 2 waypoints");
                a.route = std::move(route);
            }
            a.autopilot = field_or<bool>(j, "autopilot", a.route.has_value(), what);
            a.ehmi = field_or<bool>(j, "ehmi", true, what);
            if (j.contains("control"))
            {
                const auto &c = j.at("control");
                a.control = VehicleControl{field_or<double>(c, "throttle", 0.0, what), field_or<double>(c, "steer", 0.0, what), field_or<double>(c, "brake", 0.0, what)};
            }
            if (j.contains("traffic"))
                a.traffic = traffic_from_json(j.at("traffic"), {}, what + ".traffic");
            const auto mode = drive_mode_from_string(field_or<std::string>(j, "drive_mode", "ui-drive", what));
            if (!mode)
                throw Error(Errc::invalid_config, what + ": drive_mode must be ui-drive, bvh-replay or live-fusion");
            a.drive_mode = *mode;
            if (j.contains("bvh"))
                a.bvh = base / field<std::string>(j, "bvh", what);
            if (j.contains("tracker"))
                a.tracker = base / field<std::string>(j, "tracker", what);
            const auto up = field_or<std::string>(j, "up_axis", "y", what);
            if (up != "y" && up != "z")
                throw Error(Errc::invalid_config, what + ": up_axis must be \"y\" or \"z\"");
            a.y_up = up == "y";
            a.unit_scale = field_or<double>(j, "unit_scale", 100.0, what);
            a.loop = field_or<bool>(j, "loop", false, what);
            a.start_time = field_or<double>(j, "start_time", 0.0, what);
            if (j.contains("walk"))
            {
                const auto &w = j.at("walk");
                WalkerControlCommand c;
                c.direction = vec2_from(w.at("direction"), what + ".walk.direction");
                c.speed = field<double>(w, "speed", what + ".walk");
                c.head_yaw = field_or<double>(w, "head_yaw", a.transform.yaw, what + ".walk");
                a.walk = c;
            }
            a.listener = field_or<bool>(j, "listener", false, what);
            if (a.drive_mode == DriveMode::bvh_replay && !a.bvh)
                throw Error(Errc::invalid_config, what + ": bvh-replay needs a \"bvh\" file");
            if (a.drive_mode == DriveMode::live_fusion && !a.tracker)
                throw Error(Errc::invalid_config, what + ": live-fusion needs a \"tracker\" file");
            return a;
        }

        inline Expectations expect_from_json(const nlohmann::json &j)
        {
            const std::string what = "expect";
            require_object(j, what);
            check_keys(j, {"collisions_max", "collisions_min", "complete_stop", "stopped_at_end", "stop_line_gap"}, what);
            Expectations e;
            if (j.contains("collisions_max"))
                e.collisions_max = field<std::size_t>(j, "collisions_max", what);
            if (j.contains("collisions_min"))
                e.collisions_min = field<std::size_t>(j, "collisions_min", what);
            e.complete_stop = field_or<std::vector<std::string>>(j, "complete_stop", {}, what);
            e.stopped_at_end = field_or<std::vector<std::string>>(j, "stopped_at_end", {}, what);
            if (j.contains("stop_line_gap"))
            {
                const auto &g = j.at("stop_line_gap");
                e.stop_line_gap = Expectations::Gap{field<std::string>(g, "actor", what), field<double>(g, "min", what), field<double>(g, "max", what)};
            }
            return e;
        }
    } // namespace detail

    /// Parses a scenario; relative paths resolve against `base_dir`.
    /// Every failure is reported as invalid_config.
    inline ScenarioConfig parse_scenario(std::string_view text, const std::filesystem::path &base_dir)
    {
        using namespace detail;
        try
        {
            nlohmann::json j;
            try
            {
                j = nlohmann::json::parse(text);
            }
            catch (const nlohmann::json::parse_error &e)
            {
                throw Error(Errc::syntax, fmt::format("scenario: {}", e.what()), line_of(text, e.byte));
            }
            require_object(j, "scenario");
            check_keys(j, {"name", "map", "dt", "duration_ticks", "seed", "traffic", "actors", "expect", "lookahead", "stop_margin", "intent_radius"}, "scenario");
            ScenarioConfig cfg;
            cfg.name = field_or<std::string>(j, "name", "scenario", "scenario");
            cfg.map_ref = field<std::string>(j, "map", "scenario");
            const auto map_path = base_dir / cfg.map_ref;
            const std::string map_text = read_text(map_path, "map");
            cfg.map = map_path.extension() == ".xodr" ? parse_opendrive_subset(map_text) : parse_scene(map_text);
            cfg.world.dt = field_or<double>(j, "dt", 0.05, "scenario");
            if (!(cfg.world.dt > 0.0))
                throw Error(Errc::invalid_config, "scenario: dt must be > 0");
            const auto duration = field<std::int64_t>(j, "duration_ticks", "scenario");
            if (duration < 1)
                throw Error(Errc::invalid_config, "scenario: duration_ticks must be >= 1");
            cfg.duration = static_cast<std::uint64_t>(duration);
            cfg.world.seed = field_or<std::uint64_t>(j, "seed", 0, "scenario");
            cfg.world.lookahead = field_or<double>(j, "lookahead", cfg.world.lookahead, "scenario");
            cfg.world.stop_margin = field_or<double>(j, "stop_margin", cfg.world.stop_margin, "scenario");
            cfg.world.intent_radius = field_or<double>(j, "intent_radius", cfg.world.intent_radius, "scenario");
            if (j.contains("traffic"))
                cfg.world.traffic = traffic_from_json(j.at("traffic"), {}, "scenario.traffic");
            const auto &actors = array_or_empty(j, "actors", "scenario");
            auto [lo, hi] = cfg.map.bounds();
            const double margin = 10.0; // sidewalks and verges beyond mapped features
            for (std::size_t i = 0; i < actors.size(); ++i)
            {
                auto a = actor_from_json(actors[i], base_dir, i);
                const Vec2 p = xy(a.transform.position);
                if (p.x() < lo.x() - margin || p.y() < lo.y() - margin || p.x() > hi.x() + margin || p.y() > hi.y() + margin)
                    throw Error(Errc::invalid_config, fmt::format("actor '{}' spawns off the map at ({}, {})", a.name, p.x(), p.y()));
                for (const auto &other : cfg.actors)
                    if (other.name == a.name)
                        throw Error(Errc::invalid_config, fmt::format("duplicate actor name '{}'", a.name));
                cfg.actors.push_back(std::move(a));
            }
            if (j.contains("expect"))
                cfg.expect = expect_from_json(j.at("expect"));
            return cfg;
        }
        catch (const Error &e)
        {
            if (e.code() == Errc::invalid_config)
                throw;
            throw Error(Errc::invalid_config, e.what());
        }
        catch (const nlohmann::json::exception &e)
        {
            throw Error(Errc::invalid_config, fmt::format("scenario: {}", e.what()));
        }
    }

    inline ScenarioConfig load_scenario(const std::filesystem::path &path)
    {
        std::string text;
        try
        {
            text = detail::read_text(path, "scenario");
        }
        catch (const Error &e)
        {
            throw Error(Errc::invalid_config, e.what());
        }
        return parse_scenario(text, path.parent_path());
    }

    struct ScenarioSummary
    {
        std::uint64_t ticks = 0;
        std::size_t collisions = 0;
        std::vector<std::pair<std::string, double>> complete_stops; // actor name, sim time
        std::size_t faults = 0;
        double min_gap = std::numeric_limits<double>::infinity(); // vehicle-walker clearance, m
        std::map<std::string, double> final_speed;
        std::map<std::string, double> final_stop_line_gap; // front bumper to next stop line
        std::vector<std::string> failures;                 // unmet expectations
        int exit_code = exit_ok;

        std::string render() const
        {
            std::string out = fmt::format("ticks: {}\ncollisions: {}\ncomplete stops: {}\n", ticks, collisions, complete_stops.size());
            for (const auto &[name, t] : complete_stops)
                out += fmt::format("  {} at t={:.2f} s\n", name, t);
            out += fmt::format("faults: {}\n", faults);
            out += std::isfinite(min_gap) ? fmt::format("min gap: {:.3f} m\n", min_gap) : std::string("min gap: n/a\n");
            for (const auto &[name, v] : final_speed)
                out += fmt::format("final speed {}: {:.3f} m/s\n", name, v);
            for (const auto &[name, g] : final_stop_line_gap)
                out += fmt::format("final stop-line gap {}: {:.3f} m\n", name, g);
            for (const auto &f : failures)
                out += fmt::format("EXPECTATION FAILED: {}\n", f);
            return out;
        }
    };

    /// Front bumper distance to the next stop line along the vehicle's route.
    inline std::optional<double> stop_line_gap(const VehicleState &v, const Route &route, const RoadMap &map)
    {
        const double s_vehicle = project_onto(route.waypoints, xy(v.transform.position)).s;
        std::optional<double> best;
        auto consider = [&](const StopLine &line) {
            const auto s = first_crossing(route.waypoints, line.a, line.b);
            if (!s || *s < s_vehicle)
                return;
            const double gap = *s - s_vehicle - v.half_extents.x();
            if (!best || gap < *best)
                best = gap;
        };
        for (const auto &cw : map.crosswalks)
            for (const auto &sl : cw.stop_lines)
                consider(sl);
        for (const auto &l : map.lights)
            consider(l.stop_line);
        return best;
    }

    /// Builds the world and spawns the roster. Returns actor ids by name.
    inline std::map<std::string, ActorId> setup_world(World &world, const ScenarioConfig &cfg)
    {
        std::map<std::string, ActorId> ids;
        for (const auto &a : cfg.actors)
        {
            const ActorId id = world.spawn_actor(a.blueprint, a.transform);
            ids[a.name] = id;
            const auto kind = *blueprint_kind(a.blueprint);
            if (kind == ActorKind::vehicle)
            {
                world.set_vehicle_speed(id, a.speed);
                if (a.route)
                    world.set_route(id, *a.route, a.autopilot);
                world.set_ehmi_enabled(id, a.ehmi);
                if (a.traffic)
                    world.set_traffic_params(*a.traffic, id);
                if (a.control)
                    world.enqueue(VehicleControlCommand{id, *a.control});
            }
            else if (kind == ActorKind::walker)
            {
                if (a.listener)
                    world.set_listener(id);
                if (a.drive_mode == DriveMode::ui_drive)
                {
                    if (a.walk)
                    {
                        auto c = *a.walk;
                        c.id = id;
                        world.enqueue(c);
                    }
                    continue;
                }
                WalkerMotion m;
                if (a.bvh)
                    m.clip = std::make_shared<const BvhClip>(parse_bvh(detail::read_text(*a.bvh, "bvh"), a.unit_scale));
                if (a.tracker)
                    m.tracker = std::make_shared<const std::vector<TrackerSample>>(parse_tracker_stream(detail::read_text(*a.tracker, "tracker stream")));
                m.basis = a.y_up ? y_up_to_world() : Mat3::Identity();
                m.anchor = a.transform;
                m.loop = a.loop;
                m.start_time = a.start_time;
                world.set_walker_motion(id, a.drive_mode, std::move(m));
            }
        }
        return ids;
    }

    /// Runs the scenario, streaming the log to `log_out` when given.
    inline ScenarioSummary run_scenario(const ScenarioConfig &cfg, std::ostream *log_out = nullptr)
    {
        ScenarioSummary sum;
        World world(cfg.map, cfg.world);
        std::map<std::string, ActorId> ids;
        try
        {
            ids = setup_world(world, cfg);
        }
        catch (const Error &e)
        {
            sum.failures.push_back(fmt::format("setup: {}", e.what()));
            sum.exit_code = e.code() == Errc::io || e.code() == Errc::syntax || e.code() == Errc::invalid_config ? exit_config : exit_runtime;
            return sum;
        }
        std::map<ActorId, std::string> names;
        for (const auto &[n, id] : ids)
            names[id] = n;
        auto name_of = [&](ActorId id) { return names.contains(id) ? names[id] : fmt::format("actor{}", id.value); };

        std::optional<LogWriter> writer;
        if (log_out)
            writer.emplace(*log_out, LogHeader{log_format_version, cfg.map_ref, cfg.world.dt, cfg.world.seed, world.skeleton()});

        auto observe = [&](const WorldSnapshot &s) {
            if (writer)
                writer->write(s);
            for (const auto &e : s.events)
            {
                if (e.kind == EventKind::collision)
                    ++sum.collisions;
                else if (e.kind == EventKind::complete_stop)
                    sum.complete_stops.emplace_back(name_of(e.actors.front()), s.sim_time);
                else if (e.kind == EventKind::fault)
                    ++sum.faults;
            }
            for (const auto &v : s.vehicles)
                for (const auto &w : s.walkers)
                    sum.min_gap = std::min(sum.min_gap, -penetration(v.footprint(), w.footprint()));
        };

        observe(*world.snapshot());
        for (std::uint64_t t = 0; t < cfg.duration; ++t)
            observe(*world.step());
        sum.ticks = cfg.duration;

        const auto last = world.snapshot();
        for (const auto &v : last->vehicles)
        {
            sum.final_speed[name_of(v.id)] = v.speed;
            if (auto r = world.route(v.id))
                if (auto g = stop_line_gap(v, *r, world.map()))
                    sum.final_stop_line_gap[name_of(v.id)] = *g;
        }

        const auto &ex = cfg.expect;
        if (ex.collisions_max && sum.collisions > *ex.collisions_max)
            sum.failures.push_back(fmt::format("{} collisions, at most {} allowed", sum.collisions, *ex.collisions_max));
        if (ex.collisions_min && sum.collisions < *ex.collisions_min)
            sum.failures.push_back(fmt::format("{} collisions, at least {} expected", sum.collisions, *ex.collisions_min));
        for (const auto &n : ex.complete_stop)
            if (std::none_of(sum.complete_stops.begin(), sum.complete_stops.end(), [&](const auto &p) { return p.first == n; }))
                sum.failures.push_back(fmt::format("{} never came to a complete stop", n));
        for (const auto &n : ex.stopped_at_end)
        {
            auto it = sum.final_speed.find(n);
            if (it == sum.final_speed.end() || !(it->second < 0.05))
                sum.failures.push_back(fmt::format("{} is not stopped at the end", n));
        }
        if (ex.stop_line_gap)
        {
            auto it = sum.final_stop_line_gap.find(ex.stop_line_gap->actor);
            if (it == sum.final_stop_line_gap.end())
                sum.failures.push_back(fmt::format("{} has no stop line ahead", ex.stop_line_gap->actor));
            else if (it->second < ex.stop_line_gap->min || it->second > ex.stop_line_gap->max)
                sum.failures.push_back(fmt::format("{} ended {:.3f} m before the stop line, expected {}..{}", ex.stop_line_gap->actor, it->second,
                                                   ex.stop_line_gap->min, ex.stop_line_gap->max));
        }

        if (sum.faults > 0)
            sum.exit_code = exit_runtime;
        else if (!sum.failures.empty())
            sum.exit_code = exit_expectation;
        return sum;
    }
} // namespace rail
