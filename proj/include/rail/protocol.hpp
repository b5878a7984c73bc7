// SPDX-License-Identifier: Apache-2.0
//
// Wire messages and length-prefixed framing. A frame is a 4-byte big-endian
// length followed by that many bytes of compact JSON with a "type" field.
#pragma once

#include "rail/codec.hpp"
#include "rail/error.hpp"
#include "rail/sensor_io.hpp"
#include "rail/world.hpp"

#include <boost/beast/core/detail/base64.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>

namespace rail
{
    inline constexpr int protocol_version = 1;
    inline constexpr std::size_t max_frame_payload = 16u * 1024u * 1024u;

    namespace msg
    {
        struct Hello
        {
            std::string role; // runner, ui, sensor, observer
            int version = protocol_version;
            bool operator==(const Hello &) const = default;
        };
        struct Welcome
        {
            double tick_hz = 20.0;
            std::uint64_t session_id = 0;
            int version = protocol_version;
            std::string mode; // lockstep or realtime
            bool authority = false;
            bool operator==(const Welcome &) const = default;
        };
        struct SpawnActor
        {
            std::string blueprint;
            Transform transform;
            bool operator==(const SpawnActor &) const = default;
        };
        struct ActorSpawned
        {
            ActorId id{};
            bool operator==(const ActorSpawned &) const = default;
        };
        struct DestroyActor
        {
            ActorId id{};
            bool operator==(const DestroyActor &) const = default;
        };
        struct VehicleControl
        {
            ActorId id{};
            rail::VehicleControl control;
            bool operator==(const VehicleControl &) const = default;
        };
        struct WalkerControl
        {
            ActorId id{};
            Vec2 direction = Vec2::Zero(); // avatar frame
            double speed = 0.0;
            double head_yaw = 0.0;
            bool operator==(const WalkerControl &) const = default;
        };
        struct AvatarPose
        {
            ActorId id{};
            SkeletonPose pose;
            bool operator==(const AvatarPose &) const = default;
        };
        struct SetTrafficParams
        {
            std::optional<ActorId> id;
            TrafficParams params;
            bool operator==(const SetTrafficParams &) const = default;
        };
        struct Tick
        {
            bool operator==(const Tick &) const = default;
        };
        struct GetSnapshot
        {
            bool operator==(const GetSnapshot &) const = default;
        };
        struct Snapshot
        {
            WorldSnapshot snapshot;
            bool operator==(const Snapshot &) const = default;
        };
        struct SubscribeSensor
        {
            std::string sensor_kind;
            nlohmann::json config; // sensor spec object, validated on receipt
            bool operator==(const SubscribeSensor &) const = default;
        };
        struct SensorFrame
        {
            std::uint64_t frame = 0;
            std::string sensor_id;
            std::string sensor_kind;
            std::string data; // raw payload bytes; base64 on the wire
            bool operator==(const SensorFrame &) const = default;
        };
        struct Ack
        {
            std::string of;   // type of the acknowledged request
            double value = 0; // e.g. the frame reached by a tick
            bool operator==(const Ack &) const = default;
        };
        struct ErrorReply
        {
            std::string code;
            std::string detail;
            bool operator==(const ErrorReply &) const = default;
        };
        /// A well-formed object whose type this version does not know.
        struct Unknown
        {
            std::string type;
            nlohmann::json body;
            bool operator==(const Unknown &) const = default;
        };
    } // namespace msg

    using Message = std::variant<msg::Hello, msg::Welcome, msg::SpawnActor, msg::ActorSpawned, msg::DestroyActor, msg::VehicleControl, msg::WalkerControl,
                                 msg::AvatarPose, msg::SetTrafficParams, msg::Tick, msg::GetSnapshot, msg::Snapshot, msg::SubscribeSensor, msg::SensorFrame,
                                 msg::Ack, msg::ErrorReply, msg::Unknown>;

    inline std::string base64_encode(std::string_view bytes)
    {
        namespace b64 = boost::beast::detail::base64;
        std::string out(b64::encoded_size(bytes.size()), '\0');
        out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
        return out;
    }

    inline std::string base64_decode(std::string_view text)
    {
        namespace b64 = boost::beast::detail::base64;
        // The decoder stops at padding, so check the shape here.
        std::string_view body = text;
        for (int i = 0; i < 2 && body.ends_with('='); ++i)
            body.remove_suffix(1);
        if (text.size() % 4 != 0)
            throw Error(Errc::bad_payload, "invalid base64 data");
        std::string out(b64::decoded_size(text.size()), '\0');
        const auto [written, read] = b64::decode(out.data(), body.data(), body.size());
        if (read != body.size())
            throw Error(Errc::bad_payload, "invalid base64 data");
        out.resize(written);
        return out;
    }

    namespace detail
    {
        using nlohmann::json;

        struct TypeName
        {
            std::string_view operator()(const msg::Hello &) const { return "hello"; }
            std::string_view operator()(const msg::Welcome &) const { return "welcome"; }
            std::string_view operator()(const msg::SpawnActor &) const { return "spawn_actor"; }
            std::string_view operator()(const msg::ActorSpawned &) const { return "actor_spawned"; }
            std::string_view operator()(const msg::DestroyActor &) const { return "destroy_actor"; }
            std::string_view operator()(const msg::VehicleControl &) const { return "vehicle_control"; }
            std::string_view operator()(const msg::WalkerControl &) const { return "walker_control"; }
            std::string_view operator()(const msg::AvatarPose &) const { return "avatar_pose"; }
            std::string_view operator()(const msg::SetTrafficParams &) const { return "set_traffic_params"; }
            std::string_view operator()(const msg::Tick &) const { return "tick"; }
            std::string_view operator()(const msg::GetSnapshot &) const { return "get_snapshot"; }
            std::string_view operator()(const msg::Snapshot &) const { return "snapshot"; }
            std::string_view operator()(const msg::SubscribeSensor &) const { return "subscribe_sensor"; }
            std::string_view operator()(const msg::SensorFrame &) const { return "sensor_frame"; }
            std::string_view operator()(const msg::Ack &) const { return "ack"; }
            std::string_view operator()(const msg::ErrorReply &) const { return "error"; }
            std::string_view operator()(const msg::Unknown &m) const { return m.type; }
        };

        struct Body
        {
            json operator()(const msg::Hello &m) const { return {{"role", m.role}, {"version", m.version}}; }
            json operator()(const msg::Welcome &m) const
            {
                return {{"tick_hz", m.tick_hz}, {"session_id", m.session_id}, {"version", m.version}, {"mode", m.mode}, {"authority", m.authority}};
            }
            json operator()(const msg::SpawnActor &m) const { return {{"blueprint", m.blueprint}, {"transform", codec::transform(m.transform)}}; }
            json operator()(const msg::ActorSpawned &m) const { return {{"id", m.id.value}}; }
            json operator()(const msg::DestroyActor &m) const { return {{"id", m.id.value}}; }
            json operator()(const msg::VehicleControl &m) const
            {
                return {{"id", m.id.value}, {"throttle", m.control.throttle}, {"steer", m.control.steer}, {"brake", m.control.brake}};
            }
            json operator()(const msg::WalkerControl &m) const
            {
                return {{"id", m.id.value}, {"direction", to_json(m.direction)}, {"speed", m.speed}, {"head_yaw", m.head_yaw}};
            }
            json operator()(const msg::AvatarPose &m) const { return {{"id", m.id.value}, {"joints", codec::joints(m.pose)}}; }
            json operator()(const msg::SetTrafficParams &m) const
            {
                const auto &p = m.params;
                json j{{"speed_limit_factor", p.speed_limit_factor}, {"ignore_lights", p.ignore_lights}, {"ignore_pedestrians", p.ignore_pedestrians},
                       {"comfort_decel", p.comfort_decel},           {"max_decel", p.max_decel},         {"force_lane_change", p.force_lane_change}};
                j["id"] = m.id ? json(m.id->value) : json(nullptr);
                return j;
            }
            json operator()(const msg::Tick &) const { return json::object(); }
            json operator()(const msg::GetSnapshot &) const { return json::object(); }
            json operator()(const msg::Snapshot &m) const { return snapshot_to_json(m.snapshot); }
            json operator()(const msg::SubscribeSensor &m) const { return {{"sensor_kind", m.sensor_kind}, {"config", m.config}}; }
            json operator()(const msg::SensorFrame &m) const
            {
                return {{"frame", m.frame}, {"sensor_id", m.sensor_id}, {"sensor_kind", m.sensor_kind}, {"data", base64_encode(m.data)}};
            }
            json operator()(const msg::Ack &m) const { return {{"of", m.of}, {"value", m.value}}; }
            json operator()(const msg::ErrorReply &m) const { return {{"code", m.code}, {"detail", m.detail}}; }
            json operator()(const msg::Unknown &m) const { return m.body; }
        };

        template <class T>
        T get(const json &j, const char *key, const std::string &type)
        {
            return field<T>(j, key, type);
        }

        template <class T>
        T get_or(const json &j, const char *key, T fallback, const std::string &type)
        {
            return field_or<T>(j, key, fallback, type);
        }
    } // namespace detail

    inline std::string_view message_type(const Message &m) { return std::visit(detail::TypeName{}, m); }

    inline nlohmann::json message_to_json(const Message &m)
    {
        nlohmann::json j = std::visit(detail::Body{}, m);
        j["type"] = std::string(message_type(m));
        return j;
    }

    /// Canonical payload: compact, keys sorted.
    inline std::string encode_payload(const Message &m) { return message_to_json(m).dump(); }

    /// Decodes one payload object. Unknown types become msg::Unknown; a known
    /// type with missing or mistyped fields is a bad_payload error.
    inline Message message_from_json(const nlohmann::json &j)
    {
        using detail::get;
        using detail::get_or;
        if (!j.is_object())
            throw Error(Errc::bad_payload, "payload is not an object");
        if (!j.contains("type") || !j.at("type").is_string())
            throw Error(Errc::bad_payload, "payload has no string \"type\" field");
        const std::string type = j.at("type").get<std::string>();
        nlohmann::json body = j;
        body.erase("type");
        try
        {
            if (type == "hello")
                return msg::Hello{get<std::string>(j, "role", type), get<int>(j, "version", type)};
            if (type == "welcome")
                return msg::Welcome{get<double>(j, "tick_hz", type), get<std::uint64_t>(j, "session_id", type), get<int>(j, "version", type),
                                    get<std::string>(j, "mode", type), get<bool>(j, "authority", type)};
            if (type == "spawn_actor")
                return msg::SpawnActor{get<std::string>(j, "blueprint", type), codec::transform(j.at("transform"), type + ".transform")};
            if (type == "actor_spawned")
                return msg::ActorSpawned{ActorId{get<std::uint32_t>(j, "id", type)}};
            if (type == "destroy_actor")
                return msg::DestroyActor{ActorId{get<std::uint32_t>(j, "id", type)}};
            if (type == "vehicle_control")
                return msg::VehicleControl{ActorId{get<std::uint32_t>(j, "id", type)},
                                           {get<double>(j, "throttle", type), get<double>(j, "steer", type), get<double>(j, "brake", type)}};
            if (type == "walker_control")
                return msg::WalkerControl{ActorId{get<std::uint32_t>(j, "id", type)}, detail::vec2_from(j.at("direction"), type + ".direction"),
                                          get<double>(j, "speed", type), get<double>(j, "head_yaw", type)};
            if (type == "avatar_pose")
                return msg::AvatarPose{ActorId{get<std::uint32_t>(j, "id", type)}, codec::joints(j.at("joints"), type)};
            if (type == "set_traffic_params")
            {
                msg::SetTrafficParams m;
                if (j.contains("id") && !j.at("id").is_null())
                    m.id = ActorId{get<std::uint32_t>(j, "id", type)};
                TrafficParams d;
                m.params.speed_limit_factor = get_or<double>(j, "speed_limit_factor", d.speed_limit_factor, type);
                m.params.ignore_lights = get_or<bool>(j, "ignore_lights", d.ignore_lights, type);
                m.params.ignore_pedestrians = get_or<bool>(j, "ignore_pedestrians", d.ignore_pedestrians, type);
                m.params.comfort_decel = get_or<double>(j, "comfort_decel", d.comfort_decel, type);
                m.params.max_decel = get_or<double>(j, "max_decel", d.max_decel, type);
                m.params.force_lane_change = get_or<bool>(j, "force_lane_change", d.force_lane_change, type);
                return m;
            }
            if (type == "tick")
                return msg::Tick{};
            if (type == "get_snapshot")
                return msg::GetSnapshot{};
            if (type == "snapshot")
                return msg::Snapshot{snapshot_from_json(body)};
            if (type == "subscribe_sensor")
            {
                if (!j.contains("config") || !j.at("config").is_object())
                    throw Error(Errc::bad_payload, "subscribe_sensor: config must be an object");
                return msg::SubscribeSensor{get<std::string>(j, "sensor_kind", type), j.at("config")};
            }
            if (type == "sensor_frame")
                return msg::SensorFrame{get<std::uint64_t>(j, "frame", type), get<std::string>(j, "sensor_id", type), get<std::string>(j, "sensor_kind", type),
                                        base64_decode(get<std::string>(j, "data", type))};
            if (type == "ack")
                return msg::Ack{get<std::string>(j, "of", type), get<double>(j, "value", type)};
            if (type == "error")
                return msg::ErrorReply{get<std::string>(j, "code", type), get<std::string>(j, "detail", type)};
        }
        catch (const Error &e)
        {
            throw Error(Errc::bad_payload, e.what());
        }
        catch (const nlohmann::json::exception &e)
        {
            throw Error(Errc::bad_payload, fmt::format("{}: {}", type, e.what()));
        }
        return msg::Unknown{type, std::move(body)};
    }

    inline Message decode_payload(std::string_view payload)
    {
        nlohmann::json j;
        try
        {
            j = nlohmann::json::parse(payload);
        }
        catch (const nlohmann::json::exception &e)
        {
            throw Error(Errc::bad_payload, fmt::format("payload is not valid JSON: {}", e.what()));
        }
        return message_from_json(j);
    }

    inline std::string encode_frame(const Message &m)
    {
        const std::string payload = encode_payload(m);
        if (payload.size() > max_frame_payload)
            throw Error(Errc::frame_too_large, fmt::format("payload of {} bytes exceeds the 16 MiB limit", payload.size()));
        const auto n = static_cast<std::uint32_t>(payload.size());
        std::string out;
        out.reserve(4 + payload.size());
        out.push_back(static_cast<char>(n >> 24));
        out.push_back(static_cast<char>((n >> 16) & 0xFF));
        out.push_back(static_cast<char>((n >> 8) & 0xFF));
        out.push_back(static_cast<char>(n & 0xFF));
        out += payload;
        return out;
    }

    struct FrameResult
    {
        enum class Status
        {
            need_more, // not enough bytes yet; nothing consumed
            message,   // one frame decoded
            bad_frame, // frame consumed but its payload is invalid
            fatal,     // length prefix over the limit; the stream cannot resync
        };
        Status status = Status::need_more;
        std::size_t consumed = 0;
        Message message;
        std::string error;
    };

    /// Decodes at most one frame from the front of `bytes`.
    inline FrameResult decode_frame(std::string_view bytes)
    {
        FrameResult r;
        if (bytes.size() < 4)
            return r;
        const auto b = [&](int i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i])); };
        const std::uint32_t n = (b(0) << 24) | (b(1) << 16) | (b(2) << 8) | b(3);
        if (n > max_frame_payload)
        {
            r.status = FrameResult::Status::fatal;
            r.error = fmt::format("declared length {} exceeds the 16 MiB limit", n);
            return r;
        }
        if (bytes.size() < 4 + static_cast<std::size_t>(n))
            return r;
        r.consumed = 4 + static_cast<std::size_t>(n);
        try
        {
            r.message = decode_payload(bytes.substr(4, n));
            r.status = FrameResult::Status::message;
        }
        catch (const Error &e)
        {
            r.status = FrameResult::Status::bad_frame;
            r.error = e.what();
        }
        return r;
    }

    /// Accumulates stream bytes and yields complete frames in order.
    class FrameDecoder
    {
    public:
        void feed(std::string_view bytes) { buffer_.append(bytes); }

        /// Next frame result; need_more when the buffer holds no complete frame.
        FrameResult next()
        {
            if (failed_)
            {
                FrameResult r;
                r.status = FrameResult::Status::fatal;
                r.error = "stream already failed";
                return r;
            }
            FrameResult r = decode_frame(std::string_view(buffer_).substr(offset_));
            offset_ += r.consumed;
            if (r.status == FrameResult::Status::fatal)
                failed_ = true;
            if (offset_ > 65536 && offset_ * 2 > buffer_.size())
            {
                buffer_.erase(0, offset_);
                offset_ = 0;
            }
            return r;
        }

        std::size_t buffered() const { return buffer_.size() - offset_; }

    private:
        std::string buffer_;
        std::size_t offset_ = 0;
        bool failed_ = false;
    };
} // namespace rail
