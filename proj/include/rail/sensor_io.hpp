// SPDX-License-Identifier: Apache-2.0
//
// Sensor rig configuration and the binary payload layouts sent to clients.
#pragma once

#include "rail/error.hpp"
#include "rail/map.hpp"
#include "rail/sensors.hpp"
#include "rail/world.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <string>
#include <vector>

namespace rail
{
    enum class SensorKind : std::uint8_t
    {
        lidar,
        camera,
    };

    inline constexpr std::string_view to_string(SensorKind k) { return k == SensorKind::lidar ? "lidar" : "camera"; }

    /// A sensor mounted on an actor, or on the world when `attach` is empty.
    struct SensorSpec
    {
        std::string id;
        SensorKind kind = SensorKind::lidar;
        std::optional<ActorId> attach;
        LidarConfig lidar;
        CameraConfig camera;
        std::vector<std::string> outputs{"depth", "segmentation", "rgb"}; // camera only

        void validate() const
        {
            if (id.empty() || id.find_first_of("/\\ ") != std::string::npos)
                throw Error(Errc::invalid_config, fmt::format("sensor id '{}' must be non-empty without slashes or spaces", id));
            if (kind == SensorKind::lidar)
                lidar.validate();
            else
            {
                camera.validate();
                for (const auto &o : outputs)
                    if (o != "depth" && o != "segmentation" && o != "rgb")
                        throw Error(Errc::invalid_config, fmt::format("sensor {}: unknown camera output '{}'", id, o));
            }
        }
    };

    inline SensorSpec sensor_spec_from_json(const nlohmann::json &j, const std::string &what = "sensor")
    {
        using detail::field_or;
        if (!j.is_object())
            throw Error(Errc::invalid_config, what + ": expected an object");
        SensorSpec s;
        try
        {
            s.id = detail::field<std::string>(j, "id", what);
            const auto kind = detail::field<std::string>(j, "kind", what);
            if (kind == "lidar")
                s.kind = SensorKind::lidar;
            else if (kind == "camera")
                s.kind = SensorKind::camera;
            else
                throw Error(Errc::invalid_config, fmt::format("{}: unknown sensor kind '{}'", what, kind));
            if (j.contains("attach") && !j.at("attach").is_null())
                s.attach = ActorId{detail::field<std::uint32_t>(j, "attach", what)};
            if (s.kind == SensorKind::lidar)
            {
                auto &c = s.lidar;
                c.channels = field_or<int>(j, "channels", c.channels, what);
                c.v_fov_min = field_or<double>(j, "v_fov_min", c.v_fov_min, what);
                c.v_fov_max = field_or<double>(j, "v_fov_max", c.v_fov_max, what);
                c.h_steps = field_or<int>(j, "h_steps", c.h_steps, what);
                c.max_range = field_or<double>(j, "max_range", c.max_range, what);
                c.noise_sigma = field_or<double>(j, "noise_sigma", c.noise_sigma, what);
                c.noise_seed = field_or<std::uint64_t>(j, "noise_seed", c.noise_seed, what);
                if (j.contains("mount"))
                    c.mount = transform_from_json(j.at("mount"), what + ".mount");
            }
            else
            {
                auto &c = s.camera;
                c.width = field_or<int>(j, "width", c.width, what);
                c.height = field_or<int>(j, "height", c.height, what);
                if (j.contains("h_fov_deg"))
                    c.h_fov = deg2rad(detail::field<double>(j, "h_fov_deg", what));
                c.max_range = field_or<double>(j, "max_range", c.max_range, what);
                if (j.contains("mount"))
                    c.mount = transform_from_json(j.at("mount"), what + ".mount");
                if (j.contains("outputs"))
                    s.outputs = detail::field<std::vector<std::string>>(j, "outputs", what);
            }
        }
        catch (const Error &e)
        {
            throw Error(Errc::invalid_config, e.what());
        }
        s.validate();
        return s;
    }

    inline nlohmann::json sensor_spec_to_json(const SensorSpec &s)
    {
        nlohmann::json j{{"id", s.id}, {"kind", to_string(s.kind)}};
        j["attach"] = s.attach ? nlohmann::json(s.attach->value) : nlohmann::json(nullptr);
        if (s.kind == SensorKind::lidar)
        {
            const auto &c = s.lidar;
            j.update({{"channels", c.channels}, {"v_fov_min", c.v_fov_min}, {"v_fov_max", c.v_fov_max}, {"h_steps", c.h_steps},
                      {"max_range", c.max_range}, {"noise_sigma", c.noise_sigma}, {"noise_seed", c.noise_seed}, {"mount", transform_to_json(c.mount)}});
        }
        else
        {
            const auto &c = s.camera;
            j.update({{"width", c.width}, {"height", c.height}, {"h_fov_deg", rad2deg(c.h_fov)}, {"max_range", c.max_range},
                      {"mount", transform_to_json(c.mount)}, {"outputs", s.outputs}});
        }
        return j;
    }

    /// Reads {"sensors": [...]}; ids must be unique.
    inline std::vector<SensorSpec> parse_sensor_configs(std::string_view text)
    {
        nlohmann::json doc;
        try
        {
            doc = nlohmann::json::parse(text);
        }
        catch (const nlohmann::json::parse_error &e)
        {
            throw Error(Errc::invalid_config, fmt::format("sensor config: {}", e.what()), detail::line_of(text, e.byte));
        }
        if (!doc.is_object() || !doc.contains("sensors") || !doc.at("sensors").is_array())
            throw Error(Errc::invalid_config, "sensor config: expected {\"sensors\": [...]}");
        std::vector<SensorSpec> out;
        for (std::size_t i = 0; i < doc.at("sensors").size(); ++i)
        {
            auto s = sensor_spec_from_json(doc.at("sensors")[i], fmt::format("sensors[{}]", i));
            for (const auto &o : out)
                if (o.id == s.id)
                    throw Error(Errc::invalid_config, fmt::format("sensor config: duplicate id '{}'", s.id));
            out.push_back(std::move(s));
        }
        return out;
    }

    /// World pose of a sensor in a snapshot: the attached actor's transform
    /// composed with the mount, or the mount itself for world sensors.
    inline Transform sensor_pose(const WorldSnapshot &snap, const SensorSpec &s)
    {
        const Transform &mount = s.kind == SensorKind::lidar ? s.lidar.mount : s.camera.mount;
        if (!s.attach)
            return mount;
        Transform base;
        if (const auto *v = snap.vehicle(*s.attach))
            base = v->transform;
        else if (const auto *w = snap.walker(*s.attach))
        {
            base = w->transform;
            base.yaw = w->head_yaw;
        }
        else
            throw Error(Errc::dangling_reference, fmt::format("sensor {}: actor {} is not in frame {}", s.id, s.attach->value, snap.frame));
        return Transform::from_isometry(base.isometry() * mount.isometry());
    }

    namespace detail
    {
        inline void put_f32(std::string &out, double v)
        {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            for (int i = 0; i < 4; ++i)
                out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
        }

        inline void put_u32(std::string &out, std::uint32_t v)
        {
            for (int i = 0; i < 4; ++i)
                out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
        }

        inline std::uint32_t get_u32(std::string_view in, std::size_t at)
        {
            std::uint32_t v = 0;
            for (int i = 0; i < 4; ++i)
                v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
            return v;
        }

        inline float get_f32(std::string_view in, std::size_t at) { return std::bit_cast<float>(get_u32(in, at)); }
    } // namespace detail

    /// LiDAR payload: per point 17 bytes, little-endian
    /// {f32 x, f32 y, f32 z, u32 actor_id, u8 label}, sensor frame.
    inline std::string encode_point_cloud(const PointCloud &pc)
    {
        std::string out;
        out.reserve(pc.points.size() * 17);
        for (const auto &p : pc.points)
        {
            detail::put_f32(out, p.position.x());
            detail::put_f32(out, p.position.y());
            detail::put_f32(out, p.position.z());
            detail::put_u32(out, p.actor.value);
            out.push_back(static_cast<char>(p.label));
        }
        return out;
    }

    struct PackedPoint
    {
        float x = 0, y = 0, z = 0;
        std::uint32_t actor = 0;
        std::uint8_t label = 0;
    };

    inline std::vector<PackedPoint> decode_point_cloud(std::string_view bytes)
    {
        if (bytes.size() % 17 != 0)
            throw Error(Errc::bad_payload, "point cloud payload length is not a multiple of 17");
        std::vector<PackedPoint> out(bytes.size() / 17);
        for (std::size_t i = 0; i < out.size(); ++i)
        {
            const std::size_t at = i * 17;
            out[i] = {detail::get_f32(bytes, at), detail::get_f32(bytes, at + 4), detail::get_f32(bytes, at + 8), detail::get_u32(bytes, at + 12),
                      static_cast<std::uint8_t>(bytes[at + 16])};
        }
        return out;
    }

    /// Camera payload: width*height f32 depths (row-major, little-endian)
    /// followed by width*height label bytes.
    inline std::string encode_camera_frame(const CameraFrame &f)
    {
        std::string out;
        out.reserve(f.depth.size() * 5);
        for (double d : f.depth)
            detail::put_f32(out, d);
        for (auto l : f.labels)
            out.push_back(static_cast<char>(l));
        return out;
    }
} // namespace rail
