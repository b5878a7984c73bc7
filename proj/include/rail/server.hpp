// SPDX-License-Identifier: Apache-2.0
//
// Session handling over a World, independent of any socket.
#pragma once

#include "rail/error.hpp"
#include "rail/protocol.hpp"
#include "rail/sensor_io.hpp"
#include "rail/sensors.hpp"
#include "rail/world.hpp"

#include <fmt/format.h>

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rail
{
    enum class ServerMode : std::uint8_t
    {
        lockstep, // advance only on tick from the authority session
        realtime, // internal clock; tick messages are rejected
    };

    inline constexpr std::string_view to_string(ServerMode m) { return m == ServerMode::lockstep ? "lockstep" : "realtime"; }

    inline std::optional<ServerMode> server_mode_from_string(std::string_view s)
    {
        if (s == "lockstep")
            return ServerMode::lockstep;
        if (s == "realtime")
            return ServerMode::realtime;
        return std::nullopt;
    }

    struct ServerOptions
    {
        ServerMode mode = ServerMode::lockstep;
        std::size_t outbox_limit = 64; // queued snapshots before a session is dropped
    };

    struct SessionLogEntry
    {
        std::uint64_t session = 0;
        std::string what;
    };

    class ServerCore
    {
    public:
        using SessionId = std::uint64_t;

        ServerCore(World &world, ServerOptions opts = {}) : world_(world), opts_(opts) {}

        World &world() { return world_; }
        const ServerOptions &options() const { return opts_; }
        double tick_hz() const { return 1.0 / world_.dt(); }

        SessionId open_session()
        {
            const SessionId id = next_session_++;
            sessions_[id];
            return id;
        }

        void close_session(SessionId id, std::string reason = "closed")
        {
            auto it = sessions_.find(id);
            if (it == sessions_.end())
                return;
            sessions_.erase(it);
            if (authority_ == id)
                authority_.reset();
            log_.push_back({id, "disconnect: " + reason});
        }

        bool is_open(SessionId id) const { return sessions_.contains(id); }
        std::optional<SessionId> authority() const { return authority_; }
        std::size_t session_count() const { return sessions_.size(); }
        const std::vector<SessionLogEntry> &log() const { return log_; }

        /// Pending outgoing messages for a session, oldest first.
        std::deque<Message> take_outbox(SessionId id)
        {
            std::deque<Message> out;
            auto it = sessions_.find(id);
            if (it == sessions_.end())
                return out;
            out.swap(it->second.outbox);
            it->second.queued_snapshots = 0;
            return out;
        }

        /// Pops one message; transports drain this way so a slow reader keeps
        /// snapshots queued here where the limit applies.
        std::optional<Message> pop_outbox(SessionId id)
        {
            auto it = sessions_.find(id);
            if (it == sessions_.end() || it->second.outbox.empty())
                return std::nullopt;
            Message m = std::move(it->second.outbox.front());
            it->second.outbox.pop_front();
            if (std::holds_alternative<msg::Snapshot>(m))
                --it->second.queued_snapshots;
            return m;
        }

        std::size_t outbox_size(SessionId id) const
        {
            auto it = sessions_.find(id);
            return it == sessions_.end() ? 0 : it->second.outbox.size();
        }

        /// Handles one request and returns its single reply, which is also
        /// queued on the session's outbox. A tick also broadcasts.
        Message handle_message(SessionId sid, const Message &m)
        {
            Message reply = dispatch(sid, m);
            if (auto it = sessions_.find(sid); it != sessions_.end())
                it->second.outbox.push_back(reply);
            return reply;
        }

        /// Replies to an undecodable frame.
        Message reject_frame(SessionId sid, const std::string &detail)
        {
            Message reply = msg::ErrorReply{"invalid-message", detail};
            if (auto it = sessions_.find(sid); it != sessions_.end())
                it->second.outbox.push_back(reply);
            return reply;
        }

        /// Steps the world once and broadcasts the snapshot (realtime clock or
        /// authority tick).
        SnapshotPtr tick()
        {
            auto snap = world_.step();
            broadcast_snapshot(*snap);
            if (on_tick)
                on_tick(*snap);
            return snap;
        }

        /// Queues the snapshot on every subscribed session, plus sensor frames.
        /// Sessions whose outbox is full are disconnected.
        void broadcast_snapshot(const WorldSnapshot &snap)
        {
            std::vector<SessionId> drop;
            for (auto &[id, s] : sessions_)
            {
                if (!s.hello)
                    continue;
                if (s.queued_snapshots >= opts_.outbox_limit)
                {
                    drop.push_back(id);
                    continue;
                }
                s.outbox.push_back(msg::Snapshot{snap});
                ++s.queued_snapshots;
                for (const auto &spec : s.sensors)
                {
                    try
                    {
                        s.outbox.push_back(sensor_frame(snap, spec));
                    }
                    catch (const Error &e)
                    {
                        s.outbox.push_back(msg::ErrorReply{"sensor-failed", e.what()});
                    }
                }
            }
            for (auto id : drop)
                close_session(id, "outbox overflow");
        }

        msg::SensorFrame sensor_frame(const WorldSnapshot &snap, const SensorSpec &spec) const
        {
            std::optional<ActorId> exclude;
            if (spec.attach && snap.vehicle(*spec.attach))
                exclude = spec.attach;
            const SensingScene scene = build_sensing_scene(snap, world_.rig(), exclude);
            const Transform pose = sensor_pose(snap, spec);
            msg::SensorFrame f;
            f.frame = snap.frame;
            f.sensor_id = spec.id;
            f.sensor_kind = std::string(to_string(spec.kind));
            if (spec.kind == SensorKind::lidar)
                f.data = encode_point_cloud(lidar_scan(spec.lidar, pose, scene));
            else
                f.data = encode_camera_frame(render_camera(spec.camera, pose, scene));
            return f;
        }

        std::function<void(const WorldSnapshot &)> on_tick;

    private:
        struct Session
        {
            bool hello = false;
            std::string role;
            std::deque<Message> outbox;
            std::size_t queued_snapshots = 0;
            std::vector<SensorSpec> sensors;
        };

        static msg::ErrorReply error(std::string code, std::string detail) { return {std::move(code), std::move(detail)}; }

        std::optional<msg::ErrorReply> check_actor(ActorId id, ActorKind want) const
        {
            const auto k = world_.kind_of(id);
            if (!k)
                return error("unknown-actor", fmt::format("actor {} does not exist", id.value));
            if (*k != want)
                return error("wrong-actor-kind", fmt::format("actor {} is not a {}", id.value, want == ActorKind::vehicle ? "vehicle" : "walker"));
            return std::nullopt;
        }

        static msg::Ack ack(const Message &m, double value = 0.0) { return {std::string(message_type(m)), value}; }

        Message dispatch(SessionId sid, const Message &m)
        {
            auto it = sessions_.find(sid);
            if (it == sessions_.end())
                return error("protocol-state", "session is closed");
            Session &s = it->second;

            if (const auto *h = std::get_if<msg::Hello>(&m))
            {
                if (s.hello)
                    return error("protocol-state", "hello already received");
                if (h->version != protocol_version)
                    return error("version", fmt::format("server speaks version {}, client sent {}", protocol_version, h->version));
                s.hello = true;
                s.role = h->role;
                if (opts_.mode == ServerMode::lockstep && h->role == "runner" && !authority_)
                    authority_ = sid;
                return msg::Welcome{tick_hz(), sid, protocol_version, std::string(to_string(opts_.mode)), authority_ == sid};
            }
            if (!s.hello)
                return error("protocol-state", "hello required before any other message");

            return std::visit(
                [&](const auto &body) -> Message {
                    using T = std::decay_t<decltype(body)>;
                    if constexpr (std::is_same_v<T, msg::Tick>)
                    {
                        if (opts_.mode == ServerMode::realtime)
                            return error("realtime-mode", "the server advances on its own clock");
                        if (authority_ != sid)
                            return error("not-authorized", "only the tick authority may advance the world");
                        auto snap = tick();
                        return ack(m, static_cast<double>(snap->frame));
                    }
                    else if constexpr (std::is_same_v<T, msg::GetSnapshot>)
                        return msg::Snapshot{*world_.snapshot()};
                    else if constexpr (std::is_same_v<T, msg::SpawnActor>)
                    {
                        try
                        {
                            world_.check_spawn(body.blueprint, body.transform);
                        }
                        catch (const Error &e)
                        {
                            return error(std::string(to_string(e.code())), e.what());
                        }
                        const ActorId id = world_.reserve_id();
                        world_.enqueue(SpawnCommand{id, body.blueprint, body.transform});
                        return msg::ActorSpawned{id};
                    }
                    else if constexpr (std::is_same_v<T, msg::DestroyActor>)
                    {
                        if (!world_.kind_of(body.id))
                            return error("unknown-actor", fmt::format("actor {} does not exist", body.id.value));
                        world_.enqueue(DestroyCommand{body.id});
                        return ack(m);
                    }
                    else if constexpr (std::is_same_v<T, msg::VehicleControl>)
                    {
                        if (auto e = check_actor(body.id, ActorKind::vehicle))
                            return *e;
                        world_.enqueue(VehicleControlCommand{body.id, body.control.clamped()});
                        return ack(m);
                    }
                    else if constexpr (std::is_same_v<T, msg::WalkerControl>)
                    {
                        if (auto e = check_actor(body.id, ActorKind::walker))
                            return *e;
                        if (!body.direction.allFinite() || !std::isfinite(body.speed) || !std::isfinite(body.head_yaw) || body.speed < 0.0)
                            return error("invalid-value", "walker_control fields must be finite and speed >= 0");
                        world_.enqueue(WalkerControlCommand{body.id, body.direction, body.speed, body.head_yaw});
                        return ack(m);
                    }
                    else if constexpr (std::is_same_v<T, msg::AvatarPose>)
                    {
                        if (auto e = check_actor(body.id, ActorKind::walker))
                            return *e;
                        if (body.pose.joints.size() != world_.skeleton().names.size())
                            return error("invalid-value", fmt::format("avatar_pose needs {} joints, got {}", world_.skeleton().names.size(), body.pose.joints.size()));
                        if (!body.pose.finite())
                            return error("invalid-value", "avatar_pose joints must be finite");
                        world_.enqueue(AvatarPoseCommand{body.id, body.pose});
                        return ack(m);
                    }
                    else if constexpr (std::is_same_v<T, msg::SetTrafficParams>)
                    {
                        if (body.id)
                            if (auto e = check_actor(*body.id, ActorKind::vehicle))
                                return *e;
                        try
                        {
                            body.params.validate();
                        }
                        catch (const Error &e)
                        {
                            return error("invalid-value", e.what());
                        }
                        world_.enqueue(TrafficParamsCommand{body.id, body.params});
                        return ack(m);
                    }
                    else if constexpr (std::is_same_v<T, msg::SubscribeSensor>)
                    {
                        try
                        {
                            nlohmann::json cfg = body.config;
                            cfg["kind"] = body.sensor_kind;
                            SensorSpec spec = sensor_spec_from_json(cfg, "subscribe_sensor");
                            if (spec.attach && !world_.kind_of(*spec.attach))
                                return error("unknown-actor", fmt::format("actor {} does not exist", spec.attach->value));
                            for (const auto &existing : s.sensors)
                                if (existing.id == spec.id)
                                    return error("duplicate", fmt::format("sensor '{}' already subscribed", spec.id));
                            s.sensors.push_back(std::move(spec));
                        }
                        catch (const Error &e)
                        {
                            return error("invalid-config", e.what());
                        }
                        return ack(m);
                    }
                    else if constexpr (std::is_same_v<T, msg::Unknown>)
                        return error("unknown-type", fmt::format("message type '{}' is not supported", body.type));
                    else
                        return error("unexpected", fmt::format("'{}' is a server-to-client message", message_type(m)));
                },
                m);
        }

        World &world_;
        ServerOptions opts_;
        std::map<SessionId, Session> sessions_;
        SessionId next_session_ = 1;
        std::optional<SessionId> authority_;
        std::vector<SessionLogEntry> log_;
    };
} // namespace rail
