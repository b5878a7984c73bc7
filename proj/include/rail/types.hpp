// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "rail/geometry.hpp"

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>

namespace rail
{
    /// Positive, monotonically assigned per world. Value 0 denotes the static
    /// environment (road, buildings) in sensor hits.
    struct ActorId
    {
        std::uint32_t value = 0;

        constexpr auto operator<=>(const ActorId &) const = default;
        constexpr bool is_environment() const { return value == 0; }
    };

    inline constexpr ActorId environment_id{0};

    enum class SemanticLabel : std::uint8_t
    {
        vehicle = 0,
        pedestrian = 1,
        road = 2,
        building = 3,
        pole = 4,
        sky = 5,
    };

    inline constexpr std::array<SemanticLabel, 6> all_labels{
        SemanticLabel::vehicle, SemanticLabel::pedestrian, SemanticLabel::road,
        SemanticLabel::building, SemanticLabel::pole, SemanticLabel::sky};

    inline constexpr std::string_view to_string(SemanticLabel l)
    {
        switch (l)
        {
        case SemanticLabel::vehicle: return "vehicle";
        case SemanticLabel::pedestrian: return "pedestrian";
        case SemanticLabel::road: return "road";
        case SemanticLabel::building: return "building";
        case SemanticLabel::pole: return "pole";
        case SemanticLabel::sky: return "sky";
        }
        return "sky";
    }

    inline std::optional<SemanticLabel> label_from_string(std::string_view s)
    {
        for (auto l : all_labels)
            if (to_string(l) == s)
                return l;
        return std::nullopt;
    }

    struct Rgb
    {
        std::uint8_t r = 0, g = 0, b = 0;
        constexpr bool operator==(const Rgb &) const = default;
    };

    /// Fixed segmentation palette (Cityscapes-style colors).
    inline constexpr Rgb palette(SemanticLabel l)
    {
        switch (l)
        {
        case SemanticLabel::vehicle: return {0, 0, 142};
        case SemanticLabel::pedestrian: return {220, 20, 60};
        case SemanticLabel::road: return {128, 64, 128};
        case SemanticLabel::building: return {70, 70, 70};
        case SemanticLabel::pole: return {153, 153, 153};
        case SemanticLabel::sky: return {70, 130, 180};
        }
        return {0, 0, 0};
    }

    /// Segment a-b swept by a sphere; a == b degenerates to a sphere.
    struct Capsule
    {
        Vec3 a = Vec3::Zero();
        Vec3 b = Vec3::Zero();
        double radius = 0.1;
        SemanticLabel label = SemanticLabel::pedestrian;
        ActorId actor{};

        bool is_sphere() const { return a == b; }
        bool operator==(const Capsule &) const = default;
    };
} // namespace rail

template <>
struct std::hash<rail::ActorId>
{
    std::size_t operator()(const rail::ActorId &id) const noexcept { return std::hash<std::uint32_t>{}(id.value); }
};
