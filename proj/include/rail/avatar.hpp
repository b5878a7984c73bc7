// SPDX-License-Identifier: Apache-2.0
//
// The articulated pedestrian avatar: tracker fusion (headset gating, neck
// and wrist overrides, two-bone arm IK), walk-cycle sampling and the
// capsule body seen by sensors.
#pragma once

#include "rail/error.hpp"
#include "rail/geometry.hpp"
#include "rail/mocap.hpp"
#include "rail/types.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rail
{
    // ------------------------------------------------------------- headset gate

    /// Applies headset motion to the avatar root only past the thresholds.
    /// Horizontal translation moves when it reaches t_pos meters since the
    /// last applied root; yaw follows when |dyaw| reaches t_rot radians.
    inline Transform gate_headset(const Transform &prev_root, const Transform &headset, double t_pos, double t_rot)
    {
        Transform root = prev_root;
        const Vec2 delta = xy(headset.position) - xy(prev_root.position);
        if (delta.norm() >= t_pos)
        {
            root.position.x() = headset.position.x();
            root.position.y() = headset.position.y();
        }
        if (std::abs(normalize_angle(headset.yaw - prev_root.yaw)) >= t_rot)
            root.yaw = normalize_angle(headset.yaw);
        return root;
    }

    // ------------------------------------------------------------------ arm IK

    struct ArmIkResult
    {
        double elbow_angle = 0.0; // interior angle at the elbow, pi = straight
        bool reachable = true;
        Vec3 elbow = Vec3::Zero();
        Vec3 wrist = Vec3::Zero(); // where the wrist ends up (target when reachable)
    };

    /// Analytic two-bone solve. The shoulder-target distance is clamped to
    /// [|a-b|, a+b]; the elbow lies in the plane of shoulder, target and pole.
    inline ArmIkResult solve_arm_ik(const Vec3 &shoulder, double upper, double fore, const Vec3 &target, const Vec3 &pole = Vec3(0, 0, -1))
    {
        if (!(upper > 0.0) || !(fore > 0.0))
            throw Error(Errc::invalid_value, "solve_arm_ik: limb lengths must be > 0");
        ArmIkResult out;
        const Vec3 to_target = target - shoulder;
        const double d_raw = to_target.norm();
        const double lo = std::abs(upper - fore);
        const double hi = upper + fore;
        const double d = std::clamp(d_raw, lo, hi);
        out.reachable = d == d_raw && !(d_raw == 0.0 && upper != fore);

        // Reach direction; a zero-length target falls back to the pole.
        Vec3 dir;
        if (d_raw > 0.0)
            dir = to_target / d_raw;
        else
            dir = pole.norm() > 0.0 ? Vec3(pole.normalized()) : Vec3(0, 0, -1);

        Vec3 bend = pole - pole.dot(dir) * dir;
        if (bend.norm() < 1e-12)
        {
            // Pole parallel to the reach: any perpendicular will do.
            bend = dir.unitOrthogonal();
        }
        bend.normalize();

        const double cos_elbow = std::clamp((upper * upper + fore * fore - d * d) / (2.0 * upper * fore), -1.0, 1.0);
        out.elbow_angle = std::acos(cos_elbow);
        if (d > 0.0)
        {
            const double cos_sh = std::clamp((upper * upper + d * d - fore * fore) / (2.0 * upper * d), -1.0, 1.0);
            const double sin_sh = std::sqrt(std::max(0.0, 1.0 - cos_sh * cos_sh));
            out.elbow = shoulder + upper * (cos_sh * dir + sin_sh * bend);
        }
        else
        {
            out.elbow = shoulder + upper * bend;
        }
        out.wrist = shoulder + d * dir;
        return out;
    }

    // ----------------------------------------------------------- tracker input

    struct TrackerSample
    {
        double time = 0.0;
        Transform headset;
        std::optional<Transform> left_hand;
        std::optional<Transform> right_hand;
        bool operator==(const TrackerSample &) const = default;
    };

    /// Parses a tracker stream: one sample per line,
    /// `time, hx,hy,hz,hyaw,hpitch,hroll, lx,..,lroll, rx,..,rroll`.
    /// Hand groups may be left empty; `#` starts a comment line.
    inline std::vector<TrackerSample> parse_tracker_stream(std::string_view text)
    {
        std::vector<TrackerSample> out;
        long line_no = 0;
        while (!text.empty())
        {
            ++line_no;
            const std::size_t nl = text.find('\n');
            std::string_view line = text.substr(0, nl);
            text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
            while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back())))
                line.remove_suffix(1);
            while (!line.empty() && std::isspace(static_cast<unsigned char>(line.front())))
                line.remove_prefix(1);
            if (line.empty() || line.front() == '#')
                continue;

            std::vector<std::optional<double>> fields;
            std::size_t pos = 0;
            for (;;)
            {
                const std::size_t comma = line.find(',', pos);
                std::string_view f = line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
                while (!f.empty() && std::isspace(static_cast<unsigned char>(f.front())))
                    f.remove_prefix(1);
                while (!f.empty() && std::isspace(static_cast<unsigned char>(f.back())))
                    f.remove_suffix(1);
                if (f.empty())
                {
                    fields.emplace_back();
                }
                else
                {
                    double v = 0.0;
                    auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
                    if (ec != std::errc{} || p != f.data() + f.size() || !std::isfinite(v))
                        throw Error(Errc::syntax, fmt::format("tracker stream: bad number '{}'", f), line_no);
                    fields.emplace_back(v);
                }
                if (comma == std::string_view::npos)
                    break;
                pos = comma + 1;
            }
            if (fields.size() != 7 && fields.size() != 13 && fields.size() != 19)
                throw Error(Errc::count_mismatch, fmt::format("tracker stream: expected 7, 13 or 19 fields, got {}", fields.size()), line_no);

            auto group = [&](std::size_t first, const char *what) -> std::optional<Transform> {
                if (first + 6 > fields.size())
                    return std::nullopt;
                int present = 0;
                for (std::size_t i = first; i < first + 6; ++i)
                    present += fields[i].has_value();
                if (present == 0)
                    return std::nullopt;
                if (present != 6)
                    throw Error(Errc::syntax, fmt::format("tracker stream: incomplete {} transform", what), line_no);
                Transform t;
                t.position = Vec3(*fields[first], *fields[first + 1], *fields[first + 2]);
                t.yaw = *fields[first + 3];
                t.pitch = *fields[first + 4];
                t.roll = *fields[first + 5];
                return t.normalized();
            };

            TrackerSample s;
            if (!fields[0])
                throw Error(Errc::syntax, "tracker stream: missing time", line_no);
            s.time = *fields[0];
            const auto head = group(1, "headset");
            if (!head)
                throw Error(Errc::syntax, "tracker stream: missing headset transform", line_no);
            s.headset = *head;
            s.left_hand = group(7, "left hand");
            s.right_hand = group(13, "right hand");
            if (!out.empty() && s.time < out.back().time)
                throw Error(Errc::out_of_order, "tracker stream: time decreases", line_no);
            out.push_back(s);
        }
        return out;
    }

    /// Latest sample with time <= t, if any.
    inline std::optional<TrackerSample> sample_at(std::span<const TrackerSample> stream, double t)
    {
        auto it = std::upper_bound(stream.begin(), stream.end(), t, [](double v, const TrackerSample &s) { return v < s.time; });
        if (it == stream.begin())
            return std::nullopt;
        return *std::prev(it);
    }

    // ------------------------------------------------------------- composition

    /// Which hierarchy joints the tracker overrides, plus gating thresholds.
    struct AvatarConfig
    {
        std::size_t neck = 0;
        std::optional<std::size_t> left_shoulder, left_elbow, left_wrist;
        std::optional<std::size_t> right_shoulder, right_elbow, right_wrist;
        double t_pos = 0.01;         // m
        double t_rot = deg2rad(1.0); // rad
        /// Elbow pole in the avatar root frame (x forward, y left, z up).
        Vec3 left_pole = Vec3(-0.5, 0.3, -1.0);
        Vec3 right_pole = Vec3(-0.5, -0.3, -1.0);

        /// Resolves joint indices by the conventional BVH names.
        static AvatarConfig for_hierarchy(const BvhHierarchy &h)
        {
            auto find = [&](std::initializer_list<std::string_view> names) -> std::optional<std::size_t> {
                for (auto n : names)
                    for (std::size_t i = 0; i < h.size(); ++i)
                        if (h[i].name == n)
                            return i;
                return std::nullopt;
            };
            AvatarConfig c;
            c.neck = find({"Neck", "neck", "Head"}).value_or(0);
            c.left_shoulder = find({"LeftArm", "LeftUpperArm"});
            c.left_elbow = find({"LeftForeArm", "LeftLowerArm"});
            c.left_wrist = find({"LeftHand"});
            c.right_shoulder = find({"RightArm", "RightUpperArm"});
            c.right_elbow = find({"RightForeArm", "RightLowerArm"});
            c.right_wrist = find({"RightHand"});
            return c;
        }
    };

    struct ComposedAvatar
    {
        SkeletonPose pose;
        Transform root; // root after gating; feed back as prev_root next time
    };

    /// Fuses tracker data into a base pose computed at `prev_root`. Without a
    /// tracker the base pose is returned untouched.
    inline ComposedAvatar compose_avatar(const SkeletonPose &base, const std::optional<TrackerSample> &tracker, const AvatarConfig &cfg, const Transform &prev_root)
    {
        ComposedAvatar out{base, prev_root};
        if (!tracker)
            return out;

        out.root = gate_headset(prev_root, tracker->headset, cfg.t_pos, cfg.t_rot);
        if (!(out.root == prev_root))
        {
            const Eigen::Isometry3d delta = out.root.isometry() * prev_root.isometry().inverse();
            const Quat dq(delta.linear());
            for (auto &j : out.pose.joints)
            {
                j.position = delta * j.position;
                j.orientation = (dq * j.orientation).normalized();
            }
        }

        if (cfg.neck < out.pose.joints.size())
            out.pose.joints[cfg.neck].orientation = Quat(tracker->headset.rotation()).normalized();

        const Mat3 root_rot = rot_z(out.root.yaw);
        auto attach = [&](const std::optional<Transform> &hand, std::optional<std::size_t> sh, std::optional<std::size_t> el, std::optional<std::size_t> wr, const Vec3 &pole) {
            if (!hand || !sh || !el || !wr)
                return;
            auto &joints = out.pose.joints;
            const double upper = (base.joints[*el].position - base.joints[*sh].position).norm();
            const double fore = (base.joints[*wr].position - base.joints[*el].position).norm();
            if (!(upper > 0.0) || !(fore > 0.0))
                return;
            const auto ik = solve_arm_ik(joints[*sh].position, upper, fore, hand->position, root_rot * pole);
            joints[*el].position = ik.elbow;
            joints[*wr].position = ik.wrist;
            joints[*wr].orientation = Quat(hand->rotation()).normalized();
        };
        attach(tracker->left_hand, cfg.left_shoulder, cfg.left_elbow, cfg.left_wrist, cfg.left_pole);
        attach(tracker->right_hand, cfg.right_shoulder, cfg.right_elbow, cfg.right_wrist, cfg.right_pole);
        return out;
    }

    // -------------------------------------------------------------- walk cycle

    /// Frame index of a looping clip with F frames after travelling `distance`.
    inline std::size_t walk_cycle_frame(double distance, double stride, std::size_t frames)
    {
        if (frames == 0 || !(stride > 0.0) || !std::isfinite(distance))
            return 0;
        double phase = std::fmod(distance, stride) / stride;
        if (phase < 0.0)
            phase += 1.0;
        const auto idx = static_cast<std::size_t>(std::floor(phase * static_cast<double>(frames)));
        return std::min(idx, frames - 1);
    }

    inline SkeletonPose walk_cycle_pose(const BvhClip &loop, double distance, double stride, const Eigen::Isometry3d &root = Eigen::Isometry3d::Identity())
    {
        if (!(stride > 0.0))
            throw Error(Errc::invalid_value, "walk_cycle_pose: stride must be > 0");
        return fk(loop, walk_cycle_frame(distance, stride, loop.frame_count()), root);
    }

    // ---------------------------------------------------------------- capsules

    struct AvatarRig
    {
        struct Bone
        {
            std::size_t parent = 0;
            std::size_t child = 0;
            double radius = 0.05;
            bool operator==(const Bone &) const = default;
        };
        std::vector<Bone> bones;

        /// One bone per hierarchy edge, radius chosen from the joint name.
        static AvatarRig for_hierarchy(std::span<const std::string> names, std::span<const int> parents)
        {
            AvatarRig rig;
            for (std::size_t i = 0; i < names.size() && i < parents.size(); ++i)
            {
                if (parents[i] < 0)
                    continue;
                const std::string &n = names[i];
                const std::string &pn = names[static_cast<std::size_t>(parents[i])];
                double r = 0.05;
                auto has = [](const std::string &s, const char *k) { return s.find(k) != std::string::npos; };
                if (has(n, "Head"))
                    r = 0.11;
                else if (has(n, "Spine") || has(n, "Chest") || (has(n, "Neck") && has(pn, "Spine")))
                    r = 0.14;
                else if (has(n, "Shoulder"))
                    r = 0.07;
                else if (has(n, "UpLeg") || has(n, "Thigh"))
                    r = 0.09;
                else if (has(n, "Leg") || has(n, "Foot"))
                    r = 0.065;
                else if (has(n, "Arm") || has(n, "Hand"))
                    r = 0.05;
                rig.bones.push_back({static_cast<std::size_t>(parents[i]), i, r});
            }
            return rig;
        }

        static AvatarRig for_hierarchy(const BvhHierarchy &h)
        {
            std::vector<std::string> names;
            std::vector<int> parents;
            for (const auto &j : h)
            {
                names.push_back(j.name);
                parents.push_back(j.parent ? static_cast<int>(*j.parent) : -1);
            }
            return for_hierarchy(names, parents);
        }
    };

    /// One capsule per rig bone between the two joint world positions.
    inline std::vector<Capsule> avatar_capsules(const SkeletonPose &pose, const AvatarRig &rig, ActorId actor)
    {
        std::vector<Capsule> out;
        out.reserve(rig.bones.size());
        for (const auto &bone : rig.bones)
        {
            if (bone.parent >= pose.joints.size() || bone.child >= pose.joints.size())
                continue;
            out.push_back({pose.joints[bone.parent].position, pose.joints[bone.child].position, bone.radius, SemanticLabel::pedestrian, actor});
        }
        return out;
    }

    // ------------------------------------------------------ procedural motion

    /// A 19-joint humanoid in the usual BVH layout: Y up, facing +Z, centimeters.
    inline BvhHierarchy pedestrian_skeleton()
    {
        using C = Channel;
        const std::vector<Channel> rot{C::Zrotation, C::Xrotation, C::Yrotation};
        BvhHierarchy h;
        auto add = [&](const char *name, std::optional<std::size_t> parent, Vec3 off, std::optional<Vec3> end = std::nullopt) {
            h.push_back({name, parent, off, parent ? rot : std::vector<Channel>{C::Xposition, C::Yposition, C::Zposition, C::Zrotation, C::Xrotation, C::Yrotation}, end, 0});
            return h.size() - 1;
        };
        const auto hips = add("Hips", std::nullopt, Vec3::Zero());
        const auto spine = add("Spine", hips, {0, 10, 0});
        const auto spine1 = add("Spine1", spine, {0, 25, 0});
        const auto neck = add("Neck", spine1, {0, 22, 0});
        add("Head", neck, {0, 10, 0}, Vec3(0, 17, 0));
        for (double side : {1.0, -1.0})
        {
            const char *pfx = side > 0 ? "Left" : "Right";
            const auto sh = add(fmt::format("{}Shoulder", pfx).c_str(), spine1, {side * 4, 18, 0});
            const auto arm = add(fmt::format("{}Arm", pfx).c_str(), sh, {side * 14, 0, 0});
            const auto fore = add(fmt::format("{}ForeArm", pfx).c_str(), arm, {0, -28, 0});
            add(fmt::format("{}Hand", pfx).c_str(), fore, {0, -25, 0}, Vec3(0, -9, 0));
        }
        for (double side : {1.0, -1.0})
        {
            const char *pfx = side > 0 ? "Left" : "Right";
            const auto up = add(fmt::format("{}UpLeg", pfx).c_str(), hips, {side * 9, 0, 0});
            const auto leg = add(fmt::format("{}Leg", pfx).c_str(), up, {0, -44, 0});
            add(fmt::format("{}Foot", pfx).c_str(), leg, {0, -44, 0}, Vec3(0, -5, 13));
        }
        assign_channel_columns(h);
        return h;
    }

    /// One motion segment of a scripted clip.
    struct MotionSegment
    {
        double duration = 1.0;   // s
        double speed = 0.0;      // m/s along the facing direction
        double head_yaw = 0.0;   // deg, positive turns the head left
    };

    namespace detail
    {
        inline void set_rot(const BvhClip &clip, std::span<double> row, std::string_view joint, Channel ch, double deg)
        {
            const auto j = clip.find(joint);
            if (!j)
                return;
            const auto &jt = clip.joints[*j];
            for (std::size_t c = 0; c < jt.channels.size(); ++c)
                if (jt.channels[c] == ch)
                    row[jt.first_channel + c] = deg;
        }

        /// Gait angles for phase in [0,1); amplitude scales 0 (stand) .. 1 (walk).
        inline void pose_gait(const BvhClip &clip, std::span<double> row, double phase, double amp)
        {
            const double w = 2.0 * pi * phase;
            const double swing = 25.0 * amp * std::sin(w);
            set_rot(clip, row, "LeftUpLeg", Channel::Xrotation, -swing);
            set_rot(clip, row, "RightUpLeg", Channel::Xrotation, swing);
            set_rot(clip, row, "LeftLeg", Channel::Xrotation, 35.0 * amp * std::max(0.0, std::sin(w + 0.8)));
            set_rot(clip, row, "RightLeg", Channel::Xrotation, 35.0 * amp * std::max(0.0, std::sin(w + 0.8 + pi)));
            set_rot(clip, row, "LeftArm", Channel::Xrotation, 0.8 * swing);
            set_rot(clip, row, "RightArm", Channel::Xrotation, -0.8 * swing);
            set_rot(clip, row, "LeftForeArm", Channel::Xrotation, -10.0 * amp);
            set_rot(clip, row, "RightForeArm", Channel::Xrotation, -10.0 * amp);
            set_rot(clip, row, "LeftArm", Channel::Zrotation, 6.0);
            set_rot(clip, row, "RightArm", Channel::Zrotation, -6.0);
        }

        inline constexpr double hip_height_cm = 93.0;
    } // namespace detail

    /// In-place walking loop (no root translation) covering one stride.
    inline BvhClip make_walk_cycle_clip(std::size_t frames = 40, double frame_time = 1.0 / 30.0)
    {
        BvhClip clip;
        clip.joints = pedestrian_skeleton();
        clip.channels = assign_channel_columns(clip.joints);
        clip.frame_time = frame_time;
        clip.unit_scale = 100.0;
        clip.frames.assign(frames * clip.channels, 0.0);
        for (std::size_t f = 0; f < frames; ++f)
        {
            auto row = clip.row(f);
            const double phase = static_cast<double>(f) / static_cast<double>(frames);
            row[1] = detail::hip_height_cm - 1.5 * std::abs(std::cos(2.0 * pi * phase));
            detail::pose_gait(clip, row, phase, 1.0);
        }
        return clip;
    }

    /// Walks/stands along the facing direction (+Z in the file) following the
    /// given segments. Used to author bundled motion files.
    inline BvhClip make_scripted_clip(std::span<const MotionSegment> script, double frame_time = 1.0 / 30.0, double stride = 1.4)
    {
        BvhClip clip;
        clip.joints = pedestrian_skeleton();
        clip.channels = assign_channel_columns(clip.joints);
        clip.frame_time = frame_time;
        clip.unit_scale = 100.0;
        double total = 0.0;
        for (const auto &seg : script)
            total += seg.duration;
        const auto frames = static_cast<std::size_t>(std::llround(total / frame_time)) + 1;
        clip.frames.assign(frames * clip.channels, 0.0);

        double dist = 0.0;     // m travelled
        double amp = 0.0;      // smoothed gait amplitude
        double head = 0.0;     // smoothed head yaw, deg
        for (std::size_t f = 0; f < frames; ++f)
        {
            const double t = static_cast<double>(f) * frame_time;
            const MotionSegment *seg = &script.back();
            double acc = 0.0;
            for (const auto &s : script)
            {
                if (t < acc + s.duration)
                {
                    seg = &s;
                    break;
                }
                acc += s.duration;
            }
            if (f > 0)
                dist += seg->speed * frame_time;
            const double target_amp = seg->speed > 0.0 ? std::min(1.0, seg->speed / 1.2) : 0.0;
            amp += (target_amp - amp) * 0.2;
            head += (seg->head_yaw - head) * 0.1;

            auto row = clip.row(f);
            const double phase = std::fmod(dist / stride, 1.0);
            row[0] = 0.0;
            row[1] = detail::hip_height_cm - 1.5 * amp * std::abs(std::cos(2.0 * pi * phase));
            row[2] = dist * 100.0;
            detail::pose_gait(clip, row, phase, amp);
            detail::set_rot(clip, row, "Neck", Channel::Yrotation, head);
        }
        return clip;
    }
} // namespace rail
