// SPDX-License-Identifier: Apache-2.0
#include "oracles.hpp"
#include "test_util.hpp"

#include <rail/avatar.hpp>
#include <rail/mocap.hpp>

#include <array>
#include <cmath>
#include <random>

using namespace rail;
using namespace rail::oracle;

namespace
{
    const char *kSingleRoot = R"(HIERARCHY
ROOT Hips
{
	OFFSET 0.0 0.0 0.0
	CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
	End Site
	{
		OFFSET 0.0 10.0 0.0
	}
}
MOTION
Frames: 1
Frame Time: 0.05
0 0 0 0 0 0
)";

    const char *kTwoJoint = R"(HIERARCHY
ROOT Hips
{
	OFFSET 0 0 0
	CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
	JOINT Chest
	{
		OFFSET %s
		CHANNELS 3 Zrotation Xrotation Yrotation
		End Site
		{
			OFFSET 0 5 0
		}
	}
}
MOTION
Frames: 1
Frame Time: 0.0333333
%s
)";

    std::string two_joint(const char *offset, const char *row)
    {
        std::string s = kTwoJoint;
        s.replace(s.find("%s"), 2, offset);
        s.replace(s.find("%s"), 2, row);
        return s;
    }

    double interior_angle(const Vec3 &at, const Vec3 &p, const Vec3 &q)
    {
        const Vec3 u = (p - at).normalized(), v = (q - at).normalized();
        return std::atan2(u.cross(v).norm(), u.dot(v));
    }
} // namespace

TEST(ParseBvh, SingleRootOneFrame)
{
    const BvhClip clip = parse_bvh(kSingleRoot);
    EXPECT_EQ(clip.frame_count(), 1u);
    EXPECT_EQ(clip.channel_count(), 6u);
    EXPECT_DOUBLE_EQ(clip.frame_time, 0.05);
    ASSERT_EQ(clip.joints.size(), 1u);
    EXPECT_FALSE(clip.joints[0].parent);
    const std::vector<Channel> order{Channel::Xposition, Channel::Yposition, Channel::Zposition, Channel::Zrotation, Channel::Xrotation, Channel::Yrotation};
    EXPECT_EQ(clip.joints[0].channels, order);
}

TEST(ParseBvh, SixtyHertz)
{
    std::string text = kSingleRoot;
    text.replace(text.find("0.05"), 4, "0.0166667");
    EXPECT_NEAR(parse_bvh(text).sample_rate(), 60.0, 1e-3);
}

TEST(ParseBvh, ShortRowNamesRow)
{
    std::string text = kSingleRoot;
    text.replace(text.find("0 0 0 0 0 0"), 11, "0 0 0 0 0");
    try
    {
        parse_bvh(text);
        FAIL() << "short row accepted";
    }
    catch (const Error &e)
    {
        EXPECT_EQ(e.code(), Errc::count_mismatch);
        EXPECT_NE(std::string(e.what()).find("row 0"), std::string::npos) << e.what();
    }
}

TEST(ParseBvh, DeclaredFramesMismatch)
{
    std::string text = kSingleRoot;
    text.replace(text.find("Frames: 1"), 9, "Frames: 2");
    EXPECT_RAIL_ERROR(parse_bvh(text), Errc::count_mismatch);
}

TEST(ParseBvh, UnknownKeyword)
{
    std::string text = kSingleRoot;
    text.replace(text.find("OFFSET 0.0 0.0 0.0"), 6, "OFSET");
    EXPECT_RAIL_ERROR(parse_bvh(text), Errc::unknown_keyword);
}

TEST(Fk, PureOffsetInCentimetres)
{
    const BvhClip clip = parse_bvh(two_joint("0 10 0", "0 0 0 0 0 0 0 0 0"));
    const auto pose = fk(clip, 0);
    EXPECT_NEAR((pose.joints[1].position - pose.joints[0].position - Vec3(0, 0.1, 0)).norm(), 0.0, 1e-12);
}

TEST(Fk, RootYawNinetyRotatesChild)
{
    const BvhClip clip = parse_bvh(two_joint("10 0 0", "0 0 0 90 0 0 0 0 0"));
    const auto pose = fk(clip, 0);
    const auto oracle = fk_oracle(clip, 0);
    const Vec3 rel = pose.joints[1].position - pose.joints[0].position;
    EXPECT_NEAR((rel - Vec3(0, 0.1, 0)).norm(), 0.0, 1e-12);
    EXPECT_NEAR(pose.joints[1].position.x(), oracle[1][3], 1e-12);
    EXPECT_NEAR(pose.joints[1].position.y(), oracle[1][7], 1e-12);
}

TEST(Fk, FrameOutOfRange)
{
    const BvhClip clip = parse_bvh(kSingleRoot);
    EXPECT_RAIL_ERROR(fk(clip, 1), Errc::out_of_range);
}

TEST(Fk, MatchesMatrixOracleOnRandomHierarchies)
{
    std::mt19937_64 rng(2024);
    for (int h = 0; h < 100; ++h)
    {
        const BvhClip clip = random_clip(rng, 3);
        for (std::size_t f = 0; f < clip.frame_count(); ++f)
        {
            const auto pose = fk(clip, f);
            const auto oracle = fk_oracle(clip, f);
            ASSERT_EQ(pose.joints.size(), clip.joints.size());
            for (std::size_t j = 0; j < oracle.size(); ++j)
            {
                const Vec3 expect(oracle[j][3], oracle[j][7], oracle[j][11]);
                EXPECT_LE((pose.joints[j].position - expect).norm(), 1e-9) << "hierarchy " << h << " joint " << j;
            }
        }
    }
}

TEST(Fk, RootTransformIsParentOfRoot)
{
    std::mt19937_64 rng(9);
    const BvhClip clip = random_clip(rng, 1);
    const Transform root = make_transform(3, -2, 0.5, 1.1);
    const auto moved = fk(clip, 0, root.isometry());
    const auto plain = fk(clip, 0);
    for (std::size_t j = 0; j < clip.joints.size(); ++j)
        EXPECT_LE((moved.joints[j].position - root.isometry() * plain.joints[j].position).norm(), 1e-12);
}

TEST(ExportBvh, RoundTripRandomClips)
{
    std::mt19937_64 rng(77);
    for (int h = 0; h < 100; ++h)
    {
        const BvhClip clip = random_clip(rng, 4);
        const BvhClip back = parse_bvh(export_bvh(clip));
        ASSERT_EQ(back.joints, clip.joints) << "hierarchy " << h;
        ASSERT_EQ(back.frame_count(), clip.frame_count());
        for (std::size_t i = 0; i < clip.frames.size(); ++i)
            EXPECT_NEAR(back.frames[i], clip.frames[i], 1e-4);
        EXPECT_NEAR(back.frame_time, clip.frame_time, 1e-12);
    }
}

TEST(ExportBvh, IdentityFrameAllZero)
{
    const BvhHierarchy h = pedestrian_skeleton();
    std::size_t c = 0;
    for (const auto &j : h)
        c += j.channels.size();
    const std::vector<std::vector<double>> rows{std::vector<double>(c, 0.0)};
    const BvhClip back = parse_bvh(export_bvh(h, rows, 1.0 / 30.0));
    for (const auto &j : back.joints)
        for (std::size_t k = 0; k < j.channels.size(); ++k)
            if (is_rotation(j.channels[k]))
                EXPECT_EQ(back.frames[j.first_channel + k], 0.0);
}

TEST(ExportBvh, ZeroFramesRejected)
{
    const std::vector<std::vector<double>> none;
    EXPECT_RAIL_ERROR(export_bvh(pedestrian_skeleton(), none, 0.05), Errc::empty_input);
}

TEST(GateHeadset, BelowPositionThresholdUnchanged)
{
    const Transform prev = make_transform(1, 2, 0, 0.3);
    const Transform head = make_transform(1.005, 2, 1.7, 0.3);
    const Transform out = gate_headset(prev, head, 0.01, deg2rad(1));
    EXPECT_EQ(out, prev);
    EXPECT_EQ(gate_headset(out, head, 0.01, deg2rad(1)), out);
}

TEST(GateHeadset, AbovePositionThresholdShifts)
{
    const Transform prev = make_transform(1, 2, 0, 0.3);
    const Transform head = make_transform(1.05, 2, 1.7, 0.3);
    const Transform out = gate_headset(prev, head, 0.01, deg2rad(1));
    EXPECT_DOUBLE_EQ(out.position.x(), 1.05);
    EXPECT_DOUBLE_EQ(out.position.y(), 2.0);
    EXPECT_DOUBLE_EQ(out.position.z(), 0.0);
}

TEST(GateHeadset, YawThreshold)
{
    const Transform prev = make_transform(0, 0, 0, 0.0);
    EXPECT_EQ(gate_headset(prev, make_transform(0, 0, 1.7, deg2rad(0.5)), 0.01, deg2rad(1)).yaw, 0.0);
    EXPECT_DOUBLE_EQ(gate_headset(prev, make_transform(0, 0, 1.7, deg2rad(2)), 0.01, deg2rad(1)).yaw, deg2rad(2));
}

TEST(GateHeadset, RandomSubAndSupraThreshold)
{
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 1000; ++i)
    {
        const Transform prev = make_transform(10 * u(rng), 10 * u(rng), 0, 3 * u(rng));
        Transform small = prev;
        small.position += Vec3(0.006 * u(rng), 0.006 * u(rng), u(rng));
        small.yaw = normalize_angle(prev.yaw + deg2rad(0.9) * u(rng));
        EXPECT_EQ(gate_headset(prev, small, 0.01, deg2rad(1)), prev);

        Transform big = prev;
        big.position += Vec3(0.5 + u(rng), 0.3, 1.7);
        big.yaw = normalize_angle(prev.yaw + deg2rad(5.0));
        const Transform out = gate_headset(prev, big, 0.01, deg2rad(1));
        EXPECT_EQ(out.position.x(), big.position.x());
        EXPECT_EQ(out.position.y(), big.position.y());
        EXPECT_EQ(out.position.z(), prev.position.z());
        EXPECT_EQ(out.yaw, big.yaw);
    }
}

TEST(ArmIk, StraightArmAtFullReach)
{
    const auto r = solve_arm_ik(Vec3::Zero(), 0.3, 0.25, Vec3(0.55, 0, 0));
    EXPECT_NEAR(r.elbow_angle, pi, 1e-7);
    EXPECT_TRUE(r.reachable);
}

TEST(ArmIk, RightAngleElbow)
{
    const auto r = solve_arm_ik(Vec3::Zero(), 0.3, 0.3, Vec3(0.3 * std::sqrt(2.0), 0, 0));
    EXPECT_NEAR(r.elbow_angle, pi / 2, 1e-12);
    EXPECT_TRUE(r.reachable);
}

TEST(ArmIk, BeyondReachClamped)
{
    const auto r = solve_arm_ik(Vec3::Zero(), 0.3, 0.25, Vec3(2, 0, 0));
    EXPECT_DOUBLE_EQ(r.elbow_angle, pi);
    EXPECT_FALSE(r.reachable);
    EXPECT_NEAR((r.wrist - Vec3(0.55, 0, 0)).norm(), 0.0, 1e-12);
}

TEST(ArmIk, ZeroTargetFolds)
{
    const auto r = solve_arm_ik(Vec3(1, 1, 1), 0.3, 0.25, Vec3(1, 1, 1));
    EXPECT_FALSE(r.reachable);
    EXPECT_NEAR(r.elbow_angle, 0.0, 1e-12);
    EXPECT_RAIL_ERROR(solve_arm_ik(Vec3::Zero(), 0.0, 0.25, Vec3(0.1, 0, 0)), Errc::invalid_value);
}

TEST(ArmIk, RandomReachableTargets)
{
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> len(0.15, 0.45), u(-1.0, 1.0), frac(0.0, 1.0);
    for (int i = 0; i < 1000; ++i)
    {
        const double a = len(rng), b = len(rng);
        const Vec3 shoulder(u(rng), u(rng), 1.0 + u(rng));
        Vec3 dir(u(rng), u(rng), u(rng));
        if (dir.norm() < 1e-3)
            dir = Vec3::UnitX();
        dir.normalize();
        const double lo = std::abs(a - b), hi = a + b;
        const double d = lo + (hi - lo) * (0.001 + 0.998 * frac(rng));
        const Vec3 target = shoulder + d * dir;
        const Vec3 pole(u(rng), u(rng), -1.0);
        const auto r = solve_arm_ik(shoulder, a, b, target, pole);
        ASSERT_TRUE(r.reachable);
        const double residual = std::cos(r.elbow_angle) - (a * a + b * b - d * d) / (2 * a * b);
        EXPECT_LE(std::abs(residual), 1e-12);
        EXPECT_NEAR((r.elbow - shoulder).norm(), a, 1e-9);
        EXPECT_NEAR((r.elbow - target).norm(), b, 1e-9);
        // Elbow stays in the shoulder/target/pole plane.
        const Vec3 n = (target - shoulder).cross(pole);
        if (n.norm() > 1e-6)
            EXPECT_NEAR((r.elbow - shoulder).dot(n.normalized()), 0.0, 1e-9);
    }
}

TEST(ComposeAvatar, NoTrackerIsIdentity)
{
    const BvhClip clip = make_walk_cycle_clip();
    const auto base = fk(clip, 5);
    const auto cfg = AvatarConfig::for_hierarchy(clip.joints);
    const auto out = compose_avatar(base, std::nullopt, cfg, Transform{});
    EXPECT_EQ(out.pose, base);
    EXPECT_EQ(out.root, Transform{});
}

TEST(ComposeAvatar, HeadsetYawSetsNeckOnly)
{
    const BvhClip clip = make_walk_cycle_clip();
    const auto base = fk(clip, 0);
    AvatarConfig cfg = AvatarConfig::for_hierarchy(clip.joints);
    cfg.t_rot = pi; // root stays put; only the neck override is in play
    TrackerSample s;
    s.headset = make_transform(0, 0, 1.7, deg2rad(30));
    const auto out = compose_avatar(base, s, cfg, Transform{});
    const auto neck = *clip.find("Neck");
    const Vec3 fwd = out.pose.joints[neck].orientation * Vec3::UnitX();
    EXPECT_NEAR(std::atan2(fwd.y(), fwd.x()), deg2rad(30), 1e-12);
    for (std::size_t j = 0; j < base.joints.size(); ++j)
        if (j != neck)
            EXPECT_EQ(out.pose.joints[j], base.joints[j]) << clip.joints[j].name;
}

TEST(ComposeAvatar, LeftControllerAtFullReachStraightensElbow)
{
    const BvhClip clip = make_walk_cycle_clip();
    const auto base = fk(clip, 0);
    AvatarConfig cfg = AvatarConfig::for_hierarchy(clip.joints);
    const std::size_t sh = *cfg.left_shoulder, el = *cfg.left_elbow, wr = *cfg.left_wrist;
    const double a = (base.joints[el].position - base.joints[sh].position).norm();
    const double b = (base.joints[wr].position - base.joints[el].position).norm();
    TrackerSample s;
    s.headset = Transform{};
    Transform hand;
    hand.position = base.joints[sh].position + (a + b) * Vec3(0.6, 0.8, 0.0);
    s.left_hand = hand;
    const auto out = compose_avatar(base, s, cfg, Transform{});
    const auto oracle = solve_arm_ik(base.joints[sh].position, a, b, hand.position);
    EXPECT_NEAR(oracle.elbow_angle, pi, 1e-7);
    EXPECT_NEAR(interior_angle(out.pose.joints[el].position, out.pose.joints[sh].position, out.pose.joints[wr].position), pi, 1e-6);
    EXPECT_NEAR((out.pose.joints[wr].position - hand.position).norm(), 0.0, 1e-9);
    // The right arm had no controller and stays at the base pose.
    EXPECT_EQ(out.pose.joints[*cfg.right_wrist], base.joints[*cfg.right_wrist]);
}

TEST(WalkCycle, FrameSelection)
{
    const BvhClip clip = make_walk_cycle_clip(40);
    const double stride = 1.4;
    EXPECT_EQ(walk_cycle_frame(0.0, stride, 40), 0u);
    EXPECT_EQ(walk_cycle_frame(stride, stride, 40), 0u);
    EXPECT_EQ(walk_cycle_frame(stride / 2, stride, 40), 20u);
    EXPECT_EQ(walk_cycle_pose(clip, 0.0, stride), fk(clip, 0));
    EXPECT_EQ(walk_cycle_pose(clip, stride, stride), fk(clip, 0));
    EXPECT_EQ(walk_cycle_pose(clip, stride / 2, stride), fk(clip, 20));
}

TEST(WalkCycle, PeriodicInStride)
{
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> dist(0.0, 50.0);
    const double stride = 1.25; // exact in binary so k*stride adds no rounding
    for (int i = 0; i < 1000; ++i)
    {
        const double d = std::round(dist(rng) * 64.0) / 64.0;
        const int k = 1 + static_cast<int>(rng() % 20);
        EXPECT_EQ(walk_cycle_frame(d, stride, 40), walk_cycle_frame(d + k * stride, stride, 40)) << d;
    }
}

TEST(Capsules, OneBone)
{
    SkeletonPose pose;
    pose.joints.resize(2);
    pose.joints[0].position = Vec3(0, 0, 1);
    pose.joints[1].position = Vec3(0, 0, 1.5);
    AvatarRig rig;
    rig.bones = {{0, 1, 0.1}};
    const auto caps = avatar_capsules(pose, rig, ActorId{7});
    ASSERT_EQ(caps.size(), 1u);
    EXPECT_EQ(caps[0].a, Vec3(0, 0, 1));
    EXPECT_EQ(caps[0].b, Vec3(0, 0, 1.5));
    EXPECT_DOUBLE_EQ(caps[0].radius, 0.1);
    EXPECT_EQ(caps[0].label, SemanticLabel::pedestrian);
    EXPECT_EQ(caps[0].actor, ActorId{7});
}

TEST(Capsules, CountMatchesRig)
{
    const BvhClip clip = make_walk_cycle_clip();
    const AvatarRig rig = AvatarRig::for_hierarchy(clip.joints);
    EXPECT_EQ(rig.bones.size(), clip.joints.size() - 1);
    EXPECT_EQ(avatar_capsules(fk(clip, 3), rig, ActorId{2}).size(), rig.bones.size());
}

TEST(Capsules, CoincidentJointsBecomeSphere)
{
    SkeletonPose pose;
    pose.joints.resize(2);
    pose.joints[0].position = pose.joints[1].position = Vec3(1, 2, 3);
    AvatarRig rig;
    rig.bones = {{0, 1, 0.1}};
    const auto caps = avatar_capsules(pose, rig, ActorId{1});
    ASSERT_EQ(caps.size(), 1u);
    EXPECT_TRUE(caps[0].is_sphere());
    EXPECT_DOUBLE_EQ(caps[0].radius, 0.1);
}

TEST(TrackerStream, ParsesHandsOptional)
{
    const auto s = parse_tracker_stream("# t, head, left, right\n0.0,0,0,1.7,0,0,0,,,,,,,0.3,-0.2,1.2,0,0,0\n0.5,0.1,0,1.7,0.2,0,0,,,,,,,,,,,,\n");
    ASSERT_EQ(s.size(), 2u);
    EXPECT_FALSE(s[0].left_hand);
    ASSERT_TRUE(s[0].right_hand);
    EXPECT_DOUBLE_EQ(s[0].right_hand->position.x(), 0.3);
    EXPECT_DOUBLE_EQ(s[1].headset.yaw, 0.2);
    EXPECT_EQ(sample_at(s, 0.3)->time, 0.0);
    EXPECT_FALSE(sample_at(s, -1.0));
}
