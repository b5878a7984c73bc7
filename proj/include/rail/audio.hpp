// SPDX-License-Identifier: Apache-2.0
//
// Positional audio cues per listener. Playback belongs to the client; this
// only computes gain, stereo pan and engine intensity.
#pragma once

#include "rail/geometry.hpp"
#include "rail/types.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rail
{
    enum class SoundKind : std::uint8_t
    {
        engine,
        footsteps,
        voice,
        ambient,
    };

    inline constexpr std::string_view to_string(SoundKind k)
    {
        switch (k)
        {
        case SoundKind::engine: return "engine";
        case SoundKind::footsteps: return "footsteps";
        case SoundKind::voice: return "voice";
        case SoundKind::ambient: return "ambient";
        }
        return "ambient";
    }

    inline std::optional<SoundKind> sound_kind_from_string(std::string_view s)
    {
        for (auto k : {SoundKind::engine, SoundKind::footsteps, SoundKind::voice, SoundKind::ambient})
            if (to_string(k) == s)
                return k;
        return std::nullopt;
    }

    struct AudioSource
    {
        ActorId actor{}; // environment for ambient beds
        SoundKind kind = SoundKind::ambient;
        std::string name; // e.g. "birds", "wind"
        double base_gain = 1.0;
        Vec2 position = Vec2::Zero();
        double intensity = 1.0;
        bool brake_cue = false;
    };

    struct AudioCue
    {
        ActorId actor{};
        SoundKind kind = SoundKind::ambient;
        std::string name;
        double gain = 0.0;      // [0, 1]
        double pan = 0.0;       // [-1, 1], positive = right
        double intensity = 0.0; // [0, 1]
        bool brake_cue = false;

        bool operator==(const AudioCue &) const = default;
    };

    struct EngineSound
    {
        double intensity = 0.2;
        bool brake_cue = false;
    };

    inline constexpr double engine_idle = 0.2;

    inline EngineSound engine_intensity(double throttle, double brake)
    {
        const double t = std::clamp(throttle, 0.0, 1.0);
        return {engine_idle + (1.0 - engine_idle) * t, brake > 0.5};
    }

    inline constexpr double reference_distance = 1.0; // m

    /// Inverse-distance gain beyond 1 m and sine panning on the clockwise
    /// bearing from the listener's heading.
    inline std::vector<AudioCue> listener_cues(const Transform &listener, std::span<const AudioSource> sources)
    {
        std::vector<AudioCue> out;
        out.reserve(sources.size());
        const Vec2 fwd = heading_vector(listener.yaw);
        const Vec2 right(fwd.y(), -fwd.x());
        for (const auto &s : sources)
        {
            AudioCue c{s.actor, s.kind, s.name, 0.0, 0.0, std::clamp(s.intensity, 0.0, 1.0), s.brake_cue};
            const double base = std::clamp(s.base_gain, 0.0, 1.0);
            if (s.kind == SoundKind::ambient)
            {
                c.gain = base;
                out.push_back(std::move(c));
                continue;
            }
            const Vec2 rel = s.position - xy(listener.position);
            const double d = rel.norm();
            c.gain = base * reference_distance / std::max(d, reference_distance);
            if (d > 0.0)
            {
                const double bearing = std::atan2(rel.dot(right), rel.dot(fwd));
                c.pan = std::clamp(std::sin(bearing), -1.0, 1.0);
            }
            out.push_back(std::move(c));
        }
        return out;
    }

    /// Birds, wind and distant traffic at fixed gains.
    inline std::vector<AudioSource> ambient_sources()
    {
        return {
            {environment_id, SoundKind::ambient, "birds", 0.3, Vec2::Zero(), 1.0, false},
            {environment_id, SoundKind::ambient, "wind", 0.2, Vec2::Zero(), 1.0, false},
            {environment_id, SoundKind::ambient, "traffic", 0.25, Vec2::Zero(), 1.0, false},
        };
    }
} // namespace rail
