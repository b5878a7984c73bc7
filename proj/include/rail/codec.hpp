// SPDX-License-Identifier: Apache-2.0
//
// Lossless JSON encoding of snapshots. Shared by the log and the wire.
#pragma once

#include "rail/error.hpp"
#include "rail/map.hpp"
#include "rail/world.hpp"

#include <nlohmann/json.hpp>

#include <string>

namespace rail
{
    namespace codec
    {
        using nlohmann::json;
        using detail::field;
        using detail::to_json;

        inline json transform(const Transform &t)
        {
            return {{"position", to_json(t.position)}, {"yaw", t.yaw}, {"pitch", t.pitch}, {"roll", t.roll}};
        }

        // Exact inverse of transform(); no angle normalization.
        inline Transform transform(const json &j, const std::string &what)
        {
            detail::require_object(j, what);
            Transform t;
            t.position = detail::vec3_from(j.at("position"), what + ".position");
            t.yaw = field<double>(j, "yaw", what);
            t.pitch = field<double>(j, "pitch", what);
            t.roll = field<double>(j, "roll", what);
            return t;
        }

        inline json rgb(const Rgb &c) { return json::array({c.r, c.g, c.b}); }

        inline Rgb rgb(const json &j, const std::string &what)
        {
            if (!j.is_array() || j.size() != 3)
                throw Error(Errc::syntax, what + ": expected [r, g, b]");
            Rgb c;
            c.r = j[0].get<std::uint8_t>();
            c.g = j[1].get<std::uint8_t>();
            c.b = j[2].get<std::uint8_t>();
            return c;
        }

        /// Joint world transform as [x, y, z, qw, qx, qy, qz].
        inline json joint(const JointTransform &jt)
        {
            const auto &q = jt.orientation;
            return json::array({jt.position.x(), jt.position.y(), jt.position.z(), q.w(), q.x(), q.y(), q.z()});
        }

        inline JointTransform joint(const json &j, const std::string &what)
        {
            if (!j.is_array() || j.size() != 7)
                throw Error(Errc::syntax, what + ": joint must be [x, y, z, qw, qx, qy, qz]");
            for (const auto &v : j)
                if (!v.is_number())
                    throw Error(Errc::syntax, what + ": joint values must be numbers");
            JointTransform jt;
            jt.position = Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
            jt.orientation = Quat(j[3].get<double>(), j[4].get<double>(), j[5].get<double>(), j[6].get<double>());
            return jt;
        }

        inline json joints(const SkeletonPose &pose)
        {
            json out = json::array();
            for (const auto &jt : pose.joints)
                out.push_back(joint(jt));
            return out;
        }

        inline SkeletonPose joints(const json &j, const std::string &what)
        {
            if (!j.is_array())
                throw Error(Errc::syntax, what + ": joints must be an array");
            SkeletonPose pose;
            pose.joints.reserve(j.size());
            for (std::size_t i = 0; i < j.size(); ++i)
                pose.joints.push_back(joint(j[i], what + ".joints[" + std::to_string(i) + "]"));
            return pose;
        }

        inline json control(const VehicleControl &c) { return {{"throttle", c.throttle}, {"steer", c.steer}, {"brake", c.brake}}; }

        inline VehicleControl control(const json &j, const std::string &what)
        {
            return {field<double>(j, "throttle", what), field<double>(j, "steer", what), field<double>(j, "brake", what)};
        }

        inline json vehicle(const VehicleState &v)
        {
            return {{"id", v.id.value},
                    {"kind", "vehicle"},
                    {"transform", transform(v.transform)},
                    {"speed", v.speed},
                    {"wheelbase", v.wheelbase},
                    {"half_extents", to_json(v.half_extents)},
                    {"control", control(v.control)},
                    {"frozen", v.frozen}};
        }

        inline json walker(const WalkerState &w)
        {
            json j{{"id", w.id.value},
                   {"kind", "walker"},
                   {"transform", transform(w.transform)},
                   {"speed", w.speed},
                   {"direction", to_json(w.direction)},
                   {"drive_mode", to_string(w.drive_mode)},
                   {"head_yaw", w.head_yaw},
                   {"distance", w.distance},
                   {"frozen", w.frozen}};
            j["joints"] = w.pose ? joints(*w.pose) : json(nullptr);
            return j;
        }

        inline json light(const TrafficLightState &l)
        {
            json j{{"id", l.id.value},
                   {"kind", "light"},
                   {"spec_id", l.spec_id},
                   {"transform", transform(l.transform)},
                   {"phase", to_string(l.phase)},
                   {"remaining", l.remaining},
                   {"red", l.red},
                   {"green", l.green},
                   {"amber", l.amber}};
            j["stop_line"] = l.stop_line ? to_json(*l.stop_line) : json(nullptr);
            return j;
        }

        inline json prop(const PropState &p)
        {
            return {{"id", p.id.value}, {"kind", "prop"}, {"transform", transform(p.transform)}, {"half_extents", to_json(p.half_extents)}};
        }

        inline json ehmi(ActorId id, const EhmiState &e)
        {
            return {{"id", id.value}, {"mode", to_string(e.mode)}, {"strip_active", e.strip_active}, {"strip_color", rgb(e.strip_color)}};
        }

        inline json cue(const AudioCue &c)
        {
            return {{"actor", c.actor.value}, {"kind", to_string(c.kind)}, {"name", c.name}, {"gain", c.gain},
                    {"pan", c.pan},          {"intensity", c.intensity},  {"brake_cue", c.brake_cue}};
        }

        inline AudioCue cue(const json &j, const std::string &what)
        {
            AudioCue c;
            c.actor = ActorId{field<std::uint32_t>(j, "actor", what)};
            const auto kind = sound_kind_from_string(field<std::string>(j, "kind", what));
            if (!kind)
                throw Error(Errc::syntax, what + ": unknown sound kind");
            c.kind = *kind;
            c.name = field<std::string>(j, "name", what);
            c.gain = field<double>(j, "gain", what);
            c.pan = field<double>(j, "pan", what);
            c.intensity = field<double>(j, "intensity", what);
            c.brake_cue = field<bool>(j, "brake_cue", what);
            return c;
        }

        inline json event(const Event &e)
        {
            json ids = json::array();
            for (auto id : e.actors)
                ids.push_back(id.value);
            return {{"kind", to_string(e.kind)}, {"actors", ids}, {"value", e.value}, {"detail", e.detail}};
        }

        inline Event event(const json &j, const std::string &what)
        {
            Event e;
            const auto kind = event_kind_from_string(field<std::string>(j, "kind", what));
            if (!kind)
                throw Error(Errc::syntax, what + ": unknown event kind");
            e.kind = *kind;
            for (const auto &id : detail::array_or_empty(j, "actors", what))
                e.actors.push_back(ActorId{id.get<std::uint32_t>()});
            e.value = field<double>(j, "value", what);
            e.detail = field<std::string>(j, "detail", what);
            return e;
        }
    } // namespace codec

    /// Snapshot as a JSON object: actors, eHMI and audio as top-level lists.
    inline nlohmann::json snapshot_to_json(const WorldSnapshot &s)
    {
        using nlohmann::json;
        json actors = json::array();
        json ehmi = json::array();
        for (const auto &v : s.vehicles)
        {
            actors.push_back(codec::vehicle(v));
            ehmi.push_back(codec::ehmi(v.id, v.ehmi));
        }
        for (const auto &w : s.walkers)
            actors.push_back(codec::walker(w));
        for (const auto &l : s.lights)
            actors.push_back(codec::light(l));
        for (const auto &p : s.props)
            actors.push_back(codec::prop(p));
        json audio = json::array();
        for (const auto &c : s.audio)
            audio.push_back(codec::cue(c));
        json events = json::array();
        for (const auto &e : s.events)
            events.push_back(codec::event(e));
        return {{"frame", s.frame},
                {"sim_time", s.sim_time},
                {"dt", s.dt},
                {"seed", s.rng_seed},
                {"actors", actors},
                {"ehmi", ehmi},
                {"audio", audio},
                {"events", events},
                {"listener", s.listener ? json(s.listener->value) : json(nullptr)}};
    }

    inline WorldSnapshot snapshot_from_json(const nlohmann::json &j)
    {
        using namespace codec;
        const std::string what = "snapshot";
        detail::require_object(j, what);
        WorldSnapshot s;
        s.frame = field<std::uint64_t>(j, "frame", what);
        s.sim_time = field<double>(j, "sim_time", what);
        s.dt = field<double>(j, "dt", what);
        s.rng_seed = field<std::uint64_t>(j, "seed", what);
        for (const auto &a : detail::array_or_empty(j, "actors", what))
        {
            const std::string kind = field<std::string>(a, "kind", what);
            const ActorId id{field<std::uint32_t>(a, "id", what)};
            const std::string w = fmt::format("actor {}", id.value);
            if (kind == "vehicle")
            {
                VehicleState v;
                v.id = id;
                v.transform = transform(a.at("transform"), w);
                v.speed = field<double>(a, "speed", w);
                v.wheelbase = field<double>(a, "wheelbase", w);
                v.half_extents = detail::vec3_from(a.at("half_extents"), w);
                v.control = control(a.at("control"), w);
                v.frozen = field<bool>(a, "frozen", w);
                s.vehicles.push_back(v);
            }
            else if (kind == "walker")
            {
                WalkerState ws;
                ws.id = id;
                ws.transform = transform(a.at("transform"), w);
                ws.speed = field<double>(a, "speed", w);
                ws.direction = detail::vec2_from(a.at("direction"), w);
                const auto mode = drive_mode_from_string(field<std::string>(a, "drive_mode", w));
                if (!mode)
                    throw Error(Errc::syntax, w + ": unknown drive_mode");
                ws.drive_mode = *mode;
                ws.head_yaw = field<double>(a, "head_yaw", w);
                ws.distance = field<double>(a, "distance", w);
                ws.frozen = field<bool>(a, "frozen", w);
                if (a.contains("joints") && !a.at("joints").is_null())
                    ws.pose = joints(a.at("joints"), w);
                s.walkers.push_back(std::move(ws));
            }
            else if (kind == "light")
            {
                TrafficLightState l;
                l.id = id;
                l.spec_id = field<int>(a, "spec_id", w);
                l.transform = transform(a.at("transform"), w);
                const auto phase = light_phase_from_string(field<std::string>(a, "phase", w));
                if (!phase)
                    throw Error(Errc::syntax, w + ": unknown phase");
                l.phase = *phase;
                l.remaining = field<double>(a, "remaining", w);
                l.red = field<double>(a, "red", w);
                l.green = field<double>(a, "green", w);
                l.amber = field<double>(a, "amber", w);
                if (a.contains("stop_line") && !a.at("stop_line").is_null())
                    l.stop_line = detail::stop_line_from(a.at("stop_line"), w);
                s.lights.push_back(l);
            }
            else if (kind == "prop")
            {
                PropState p;
                p.id = id;
                p.transform = transform(a.at("transform"), w);
                p.half_extents = detail::vec3_from(a.at("half_extents"), w);
                s.props.push_back(p);
            }
            else
                throw Error(Errc::syntax, w + ": unknown actor kind '" + kind + "'");
        }
        for (const auto &e : detail::array_or_empty(j, "ehmi", what))
        {
            const ActorId id{field<std::uint32_t>(e, "id", what)};
            auto it = std::find_if(s.vehicles.begin(), s.vehicles.end(), [&](const VehicleState &v) { return v.id == id; });
            if (it == s.vehicles.end())
                throw Error(Errc::dangling_reference, fmt::format("ehmi entry for unknown vehicle {}", id.value));
            const auto mode = ehmi_mode_from_string(field<std::string>(e, "mode", what));
            if (!mode)
                throw Error(Errc::syntax, "ehmi: unknown mode");
            it->ehmi = {*mode, field<bool>(e, "strip_active", what), rgb(e.at("strip_color"), "ehmi.strip_color")};
        }
        for (const auto &c : detail::array_or_empty(j, "audio", what))
            s.audio.push_back(cue(c, "audio"));
        for (const auto &e : detail::array_or_empty(j, "events", what))
            s.events.push_back(event(e, "event"));
        if (j.contains("listener") && !j.at("listener").is_null())
            s.listener = ActorId{j.at("listener").get<std::uint32_t>()};
        return s;
    }
} // namespace rail
