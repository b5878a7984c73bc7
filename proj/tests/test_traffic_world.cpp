// SPDX-License-Identifier: Apache-2.0
#include "test_util.hpp"

#include <rail/audio.hpp>
#include <rail/traffic.hpp>
#include <rail/world.hpp>

#include <cmath>
#include <limits>
#include <random>

using namespace rail;

namespace
{
    RoadMap straight_road(double limit = 10.0)
    {
        RoadMap m;
        RoadSegment s;
        s.id = 1;
        s.centerline = {{-100, 0}, {200, 0}};
        s.speed_limit = limit;
        m.segments.push_back(s);
        return m;
    }

    RoadMap crossing_road()
    {
        RoadMap m = straight_road();
        Crosswalk c;
        c.id = 1;
        c.segment = 1;
        c.polygon = {{48, -3.5}, {52, -3.5}, {52, 3.5}, {48, 3.5}};
        c.stop_lines = {{{46, -3.5}, {46, 0}}, {{54, 0}, {54, 3.5}}};
        m.crosswalks.push_back(c);
        return m;
    }

    Route straight_route(double target = 10.0)
    {
        return Route{{{0, -1.75}, {150, -1.75}}, target};
    }

    // Distance from a point to an axis-aligned rectangle, computed per axis.
    double rect_distance(double px, double py, double cx, double cy, double hx, double hy)
    {
        const double dx = std::max(std::abs(px - cx) - hx, 0.0);
        const double dy = std::max(std::abs(py - cy) - hy, 0.0);
        return std::sqrt(dx * dx + dy * dy);
    }

    VehicleState vehicle_at(double x, double y, double yaw = 0.0, double speed = 0.0)
    {
        VehicleState v;
        v.id = ActorId{1};
        v.transform = make_transform(x, y, 0, yaw);
        v.speed = speed;
        return v;
    }
} // namespace

// ------------------------------------------------------------------ vehicle

TEST(Bicycle, StraightAdvance)
{
    VehicleDynamics dyn;
    dyn.drag = 0.0;
    const auto next = bicycle_step(vehicle_at(0, 0, 0, 10), VehicleControl{}, 0.05, dyn);
    EXPECT_DOUBLE_EQ(next.transform.position.x(), 0.5);
    EXPECT_DOUBLE_EQ(next.transform.position.y(), 0.0);
    EXPECT_DOUBLE_EQ(next.speed, 10.0);
}

TEST(Bicycle, ConstantSteerCircle)
{
    VehicleDynamics dyn;
    dyn.max_steer_angle = 0.2;
    VehicleState s = vehicle_at(0, 0, 0, 5.0);
    const double radius = s.wheelbase / std::tan(0.2);
    EXPECT_NEAR(radius, 13.32, 0.01);
    std::vector<Vec2> path{xy(s.transform.position)};
    double turned = 0.0;
    while (turned < 2 * pi)
    {
        const double before = s.transform.yaw;
        s = bicycle_step(s, VehicleControl{0, 1, 0}, 0.01, dyn);
        turned += normalize_angle(s.transform.yaw - before);
        path.push_back(xy(s.transform.position));
    }
    Vec2 centre = Vec2::Zero();
    for (const auto &p : path)
        centre += p;
    centre /= static_cast<double>(path.size());
    double mean_r = 0.0;
    for (const auto &p : path)
        mean_r += (p - centre).norm();
    mean_r /= static_cast<double>(path.size());
    EXPECT_LT(std::abs(mean_r - radius) / radius, 0.01);
    EXPECT_LT((path.back() - path.front()).norm() / radius, 0.01);
}

TEST(Bicycle, FullBrakeStoppingTime)
{
    VehicleDynamics dyn;
    dyn.max_brake = 8.0;
    VehicleState s = vehicle_at(0, 0, 0, 10.0);
    const double dt = 0.05;
    int ticks = 0;
    while (s.speed > 0.0 && ticks < 1000)
    {
        s = bicycle_step(s, VehicleControl{0, 0, 1}, dt, dyn);
        ++ticks;
    }
    EXPECT_NEAR(ticks * dt, 10.0 / 8.0, dt + 1e-12);
}

TEST(Bicycle, SpeedNonNegativeAndHeadingConstant)
{
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    VehicleDynamics dyn;
    dyn.drag = 0.1;
    VehicleState s = vehicle_at(0, 0, 0.3, 3.0);
    for (int i = 0; i < 2000; ++i)
    {
        s = bicycle_step(s, VehicleControl{u(rng), 0.0, u(rng)}, 0.05, dyn);
        EXPECT_GE(s.speed, 0.0);
        EXPECT_NEAR(s.transform.yaw, 0.3, 1e-12);
    }
    EXPECT_RAIL_ERROR(bicycle_step(s, VehicleControl{}, 0.0, dyn), Errc::invalid_value);
}

TEST(Control, ClampedToRange)
{
    const auto c = VehicleControl{2.0, -3.0, std::numeric_limits<double>::quiet_NaN()}.clamped();
    EXPECT_EQ(c.throttle, 1.0);
    EXPECT_EQ(c.steer, -1.0);
    EXPECT_EQ(c.brake, 0.0);
}

TEST(Pursuit, StraightAheadZeroSteer)
{
    const auto r = pure_pursuit(vehicle_at(0, 0), Route{{{0, 0}, {100, 0}}, 10}, 8.0, VehicleDynamics{});
    EXPECT_DOUBLE_EQ(r.steer, 0.0);
    EXPECT_FALSE(r.finished);
}

TEST(Pursuit, TargetLeftSteersLeft)
{
    const auto r = pure_pursuit(vehicle_at(0, 0), Route{{{0, 0}, {0, 100}}, 10}, 8.0, VehicleDynamics{});
    EXPECT_GT(r.steer, 0.0);
    const auto right = pure_pursuit(vehicle_at(0, 0), Route{{{0, 0}, {0, -100}}, 10}, 8.0, VehicleDynamics{});
    EXPECT_LT(right.steer, 0.0);
}

TEST(Pursuit, FormulaValue)
{
    const double steer = pursuit_steer(1.0, 10.0, 2.7, 0.5);
    EXPECT_NEAR(steer, std::atan(0.054) / 0.5, 1e-15);
    EXPECT_NEAR(steer, 0.1079, 5e-5);
}

TEST(Pursuit, EmptyRouteFinished)
{
    const auto r = pure_pursuit(vehicle_at(0, 0), Route{{}, 10}, 8.0, VehicleDynamics{});
    EXPECT_TRUE(r.finished);
    EXPECT_EQ(r.steer, 0.0);
}

TEST(Planner, TracksSpeedWithoutStop)
{
    const auto p = longitudinal_plan(5.0, 10.0, std::nullopt, TrafficParams{});
    EXPECT_GT(p.throttle, 0.0);
    EXPECT_EQ(p.brake, 0.0);
}

TEST(Planner, HardStopClampsBrake)
{
    TrafficParams params;
    params.comfort_decel = 3.0;
    params.max_decel = 8.0;
    const auto p = longitudinal_plan(10.0, 10.0, 5.0, params);
    EXPECT_EQ(p.throttle, 0.0);
    EXPECT_EQ(p.brake, 1.0); // required 10 m/s^2 > max 8
}

TEST(Planner, HoldAtLine)
{
    const auto p = longitudinal_plan(0.0, 10.0, 0.0, TrafficParams{});
    EXPECT_EQ(p, (Pedal{0.0, 1.0}));
}

TEST(Planner, ProportionalBrakeBelowMax)
{
    TrafficParams params;
    const auto p = longitudinal_plan(10.0, 10.0, 12.5, params); // required 4 m/s^2
    EXPECT_EQ(p.throttle, 0.0);
    EXPECT_NEAR(p.brake, 4.0 / 8.0, 1e-12);
}

TEST(Yield, WalkerInsideCrossing)
{
    const RoadMap map = crossing_road();
    const VehicleState v = vehicle_at(10, -1.75);
    const std::vector<WalkerObservation> w{{ActorId{2}, {50, -1.0}, {0, 0}}};
    const auto d = pedestrian_yield_decision(v, straight_route(), w, map, TrafficParams{});
    ASSERT_TRUE(d);
    EXPECT_NEAR(*d, 36.0, 1e-9); // stop line at x = 46, vehicle projection at x = 10
}

TEST(Yield, WalkerFarAndLeaving)
{
    const RoadMap map = crossing_road();
    const std::vector<WalkerObservation> w{{ActorId{2}, {50, -23.5}, {0, -1.4}}};
    EXPECT_FALSE(pedestrian_yield_decision(vehicle_at(10, -1.75), straight_route(), w, map, TrafficParams{}));
}

TEST(Yield, ApproachingWithinIntentRadius)
{
    const RoadMap map = crossing_road();
    const std::vector<WalkerObservation> toward{{ActorId{2}, {50, -5.5}, {0, 1.2}}};
    const std::vector<WalkerObservation> away{{ActorId{2}, {50, -5.5}, {0, -1.2}}};
    EXPECT_TRUE(pedestrian_yield_decision(vehicle_at(10, -1.75), straight_route(), toward, map, TrafficParams{}));
    EXPECT_FALSE(pedestrian_yield_decision(vehicle_at(10, -1.75), straight_route(), away, map, TrafficParams{}));
}

TEST(Yield, IgnorePedestriansAlwaysNone)
{
    const RoadMap map = crossing_road();
    TrafficParams ignore;
    ignore.ignore_pedestrians = true;
    const std::vector<WalkerObservation> inside{{ActorId{2}, {50, -1.0}, {0, 0}}};
    EXPECT_FALSE(pedestrian_yield_decision(vehicle_at(10, -1.75), straight_route(), inside, map, ignore));

    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> px(30, 70), py(-8, 8), vel(-2, 2), vx(-20, 45);
    for (int i = 0; i < 2000; ++i)
    {
        std::vector<WalkerObservation> obs;
        for (int k = 0; k < 3; ++k)
            obs.push_back({ActorId{static_cast<std::uint32_t>(k + 2)}, {px(rng), py(rng)}, {vel(rng), vel(rng)}});
        EXPECT_FALSE(pedestrian_yield_decision(vehicle_at(vx(rng), -1.75), straight_route(), obs, map, ignore));
    }
}

TEST(Yield, CrossingBehindIgnored)
{
    const RoadMap map = crossing_road();
    const std::vector<WalkerObservation> w{{ActorId{2}, {50, -1.0}, {0, 0}}};
    EXPECT_FALSE(pedestrian_yield_decision(vehicle_at(60, -1.75), straight_route(), w, map, TrafficParams{}));
}

TEST(Ehmi, Examples)
{
    const EhmiState cruising{EhmiMode::cruising, false, {0, 0, 0}};
    EXPECT_FALSE(ehmi_update(cruising, false, 10.0).strip_active);
    const auto yielding = ehmi_update(cruising, true, 3.0);
    EXPECT_EQ(yielding.mode, EhmiMode::yielding);
    EXPECT_TRUE(yielding.strip_active);
    EXPECT_EQ(yielding.strip_color, ehmi_default_color);
    const auto stopped = ehmi_update(yielding, true, 0.0);
    EXPECT_EQ(stopped.mode, EhmiMode::stopped);
    EXPECT_TRUE(stopped.strip_active);
    const auto resumed = ehmi_update(stopped, false, 1.0);
    EXPECT_EQ(resumed.mode, EhmiMode::cruising);
    EXPECT_FALSE(resumed.strip_active);
}

TEST(Ehmi, StripIffYieldingOrStoppedExhaustive)
{
    for (auto prev : {EhmiMode::off, EhmiMode::cruising, EhmiMode::yielding, EhmiMode::stopped})
        for (bool prev_strip : {false, true})
            for (bool y : {false, true})
                for (double v : {0.0, 0.04, 0.05, 0.0500001, 1.0, 20.0})
                {
                    const auto s = ehmi_update(EhmiState{prev, prev_strip, {1, 2, 3}}, y, v);
                    const bool expect_mode_active = s.mode == EhmiMode::yielding || s.mode == EhmiMode::stopped;
                    EXPECT_EQ(s.strip_active, expect_mode_active);
                    if (y)
                        EXPECT_EQ(s.mode, v > 0.05 ? EhmiMode::yielding : EhmiMode::stopped);
                    else
                        EXPECT_EQ(s.mode, EhmiMode::cruising);
                }
}

TEST(TrafficParamsCheck, Validation)
{
    TrafficParams p;
    p.max_decel = 2.0;
    EXPECT_RAIL_ERROR(p.validate(), Errc::invalid_value);
    p = TrafficParams{};
    p.speed_limit_factor = 0.0;
    EXPECT_RAIL_ERROR(p.validate(), Errc::invalid_value);
}

// ------------------------------------------------------------- traffic manager

namespace
{
    RoadMap red_light_map(double stop_x)
    {
        RoadMap m = straight_road();
        TrafficLightSpec l;
        l.id = 1;
        l.position = {stop_x, -4};
        l.stop_line = {{stop_x, -3.5}, {stop_x, 0}};
        l.red = 60;
        l.initial = LightPhase::red;
        m.lights.push_back(l);
        return m;
    }
} // namespace

TEST(TrafficManager, RedLightBrakesEarly)
{
    World world(red_light_map(20.0));
    const ActorId car = world.spawn_actor("vehicle.sedan", make_transform(0, -1.75));
    world.set_vehicle_speed(car, 10.0);
    world.set_route(car, straight_route());
    const auto d = world.traffic_manager_step().at(car);
    ASSERT_TRUE(d.stop_at);
    EXPECT_GT(d.control.brake, 0.0);
    EXPECT_EQ(d.control.throttle, 0.0);

    TrafficParams ignore;
    ignore.ignore_lights = true;
    world.set_traffic_params(ignore, car);
    const auto free = world.traffic_manager_step().at(car);
    EXPECT_FALSE(free.stop_at);
    EXPECT_EQ(free.control.brake, 0.0);
}

TEST(TrafficManager, RedLightStopsBeforeLine)
{
    World world(red_light_map(40.0));
    const ActorId car = world.spawn_actor("vehicle.sedan", make_transform(0, -1.75));
    world.set_vehicle_speed(car, 10.0);
    world.set_route(car, straight_route());
    SnapshotPtr snap;
    for (int i = 0; i < 300; ++i)
        snap = world.step();
    const auto *v = snap->vehicle(car);
    EXPECT_LT(v->speed, 0.05);
    const double gap = 40.0 - v->front().x();
    EXPECT_GT(gap, 0.0);
    EXPECT_LT(gap, 5.0);
}

TEST(TrafficManager, SpeedLimitFactor)
{
    World world(straight_road(10.0));
    const ActorId car = world.spawn_actor("vehicle.sedan", make_transform(0, -1.75));
    world.set_route(car, straight_route(10.0));
    TrafficParams p;
    p.speed_limit_factor = 1.2;
    world.set_traffic_params(p, car);
    EXPECT_DOUBLE_EQ(world.traffic_manager_step().at(car).target_speed, 12.0);
    SnapshotPtr snap;
    for (int i = 0; i < 200; ++i)
        snap = world.step();
    EXPECT_GT(snap->vehicle(car)->speed, 11.0);
}

TEST(TrafficManager, ForceLaneChangeLogged)
{
    World world(straight_road());
    const ActorId car = world.spawn_actor("vehicle.sedan", make_transform(0, -1.75));
    TrafficParams p;
    p.force_lane_change = true;
    world.enqueue(TrafficParamsCommand{car, p});
    const auto snap = world.step();
    bool seen = false;
    for (const auto &e : snap->events)
        seen = seen || e.kind == EventKind::lane_change_requested;
    EXPECT_TRUE(seen);
}

// ------------------------------------------------------------------- world

TEST(World, MonotoneIds)
{
    World world;
    EXPECT_EQ(world.spawn_actor("vehicle.sedan", make_transform(0, 0)), ActorId{1});
    EXPECT_EQ(world.spawn_actor("walker.avatar", make_transform(0, 10)), ActorId{2});
    world.enqueue(DestroyCommand{ActorId{2}});
    world.step();
    EXPECT_EQ(world.spawn_actor("prop.box", make_transform(20, 20)), ActorId{3});
}

TEST(World, SpawnErrors)
{
    World world;
    world.spawn_actor("vehicle.sedan", make_transform(0, 0));
    EXPECT_RAIL_ERROR(world.spawn_actor("vehicle.sedan", make_transform(0, 0)), Errc::spawn_overlap);
    EXPECT_RAIL_ERROR(world.spawn_actor("vehicle.truck", make_transform(50, 0)), Errc::unknown_blueprint);
}

TEST(World, EmptyStep)
{
    World world;
    const auto snap = world.step(0.05);
    EXPECT_EQ(snap->frame, 1u);
    EXPECT_EQ(snap->actor_count(), 0u);
    EXPECT_TRUE(snap->events.empty());
    EXPECT_RAIL_ERROR(world.step(0.1), Errc::invalid_value);
}

TEST(World, VehicleAdvancesHalfMetre)
{
    WorldConfig cfg;
    cfg.dynamics.drag = 0.0;
    World world({}, cfg);
    const ActorId car = world.spawn_actor("vehicle.sedan", make_transform(0, 0));
    world.set_vehicle_speed(car, 10.0);
    const auto snap = world.step(0.05);
    EXPECT_DOUBLE_EQ(snap->vehicle(car)->transform.position.x(), 0.5);
}

TEST(World, WalkerUiDrive)
{
    World world;
    const ActorId w = world.spawn_actor("walker.avatar", make_transform(0, 0));
    world.enqueue(WalkerControlCommand{w, Vec2(0, 1), 1.4, 0.0});
    const auto snap = world.step(0.05);
    const auto *ws = snap->walker(w);
    EXPECT_NEAR(ws->transform.position.y(), 0.07, 1e-15);
    EXPECT_EQ(ws->transform.position.x(), 0.0);
    EXPECT_NEAR(ws->direction.norm(), 1.0, 1e-9);
    EXPECT_EQ(ws->drive_mode, DriveMode::ui_drive);
}

TEST(World, CommandsApplyAtNextTick)
{
    World world;
    const ActorId car = world.spawn_actor("vehicle.sedan", make_transform(0, 0));
    world.enqueue(VehicleControlCommand{car, VehicleControl{1, 0, 0}});
    EXPECT_EQ(world.snapshot()->frame, 0u);
    EXPECT_EQ(world.snapshot()->vehicles.size(), 1u); // setup spawns show at once
    EXPECT_EQ(world.snapshot()->vehicles[0].control.throttle, 0.0);
    const auto snap = world.step();
    EXPECT_EQ(snap->vehicle(car)->control.throttle, 1.0);
    EXPECT_GT(snap->vehicle(car)->speed, 0.0);
}

TEST(World, SimTimeAndNormalizedAngles)
{
    World world(straight_road());
    const ActorId car = world.spawn_actor("vehicle.sedan", make_transform(0, -1.75));
    world.enqueue(VehicleControlCommand{car, VehicleControl{0.6, 1.0, 0}});
    for (int i = 0; i < 400; ++i)
    {
        const auto snap = world.step();
        EXPECT_EQ(snap->sim_time, static_cast<double>(snap->frame) * 0.05);
        const double yaw = snap->vehicle(car)->transform.yaw;
        EXPECT_GT(yaw, -pi);
        EXPECT_LE(yaw, pi);
    }
}

TEST(World, OutOfBoundsEvent)
{
    WorldConfig cfg;
    cfg.bounds = std::pair{Vec2(-10, -10), Vec2(10, 10)};
    World world({}, cfg);
    const ActorId car = world.spawn_actor("vehicle.sedan", make_transform(0, 0));
    world.set_vehicle_speed(car, 10.0);
    int events = 0;
    for (int i = 0; i < 60; ++i)
        for (const auto &e : world.step()->events)
            if (e.kind == EventKind::out_of_bounds)
            {
                ++events;
                EXPECT_EQ(e.actors.front(), car);
            }
    EXPECT_EQ(events, 1);
}

TEST(World, FaultFreezesActor)
{
    WorldConfig cfg;
    cfg.dynamics.max_accel = std::numeric_limits<double>::infinity();
    World world({}, cfg);
    const ActorId car = world.spawn_actor("vehicle.sedan", make_transform(0, 0));
    world.enqueue(VehicleControlCommand{car, VehicleControl{1, 0, 0}});
    const auto snap = world.step();
    ASSERT_EQ(snap->events.size(), 2u); // spawn, fault
    EXPECT_EQ(snap->events[1].kind, EventKind::fault);
    EXPECT_TRUE(snap->vehicle(car)->frozen);
    const auto later = world.step();
    EXPECT_EQ(later->vehicle(car)->transform, snap->vehicle(car)->transform);
}

TEST(World, DeterministicSnapshots)
{
    auto run = [] {
        WorldConfig cfg;
        cfg.seed = 99;
        World world(crossing_road(), cfg);
        const ActorId car = world.spawn_actor("vehicle.sedan", make_transform(0, -1.75));
        const ActorId walker = world.spawn_actor("walker.avatar", make_transform(50, -6));
        world.set_route(car, straight_route());
        world.set_vehicle_speed(car, 8.0);
        world.set_ehmi_enabled(car, true);
        world.set_listener(walker);
        std::vector<WorldSnapshot> out;
        for (int i = 0; i < 200; ++i)
        {
            if (i == 20)
                world.enqueue(WalkerControlCommand{walker, Vec2(1, 0), 1.4, pi / 2});
            if (i == 60)
                world.enqueue(WalkerControlCommand{walker, Vec2(0, 0), 0.0, pi / 2});
            out.push_back(*world.step());
        }
        return out;
    };
    const auto a = run();
    const auto b = run();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        ASSERT_EQ(a[i], b[i]) << "frame " << i;
}

TEST(World, YieldsToWalkerOnCrossing)
{
    World world(crossing_road());
    const ActorId car = world.spawn_actor("vehicle.sedan", make_transform(0, -1.75));
    const ActorId walker = world.spawn_actor("walker.avatar", make_transform(50, -1.75));
    world.set_route(car, straight_route());
    world.set_vehicle_speed(car, 10.0);
    world.set_ehmi_enabled(car, true);
    SnapshotPtr snap;
    bool strip_seen = false;
    for (int i = 0; i < 300; ++i)
    {
        snap = world.step();
        const auto &e = snap->vehicle(car)->ehmi;
        EXPECT_EQ(e.strip_active, e.mode == EhmiMode::yielding || e.mode == EhmiMode::stopped);
        strip_seen = strip_seen || e.strip_active;
    }
    EXPECT_TRUE(strip_seen);
    EXPECT_LT(snap->vehicle(car)->speed, 0.05);
    EXPECT_EQ(snap->vehicle(car)->ehmi.mode, EhmiMode::stopped);
    EXPECT_LT(snap->vehicle(car)->front().x(), 46.0);
    (void)walker;
}

// ---------------------------------------------------------------- collisions

TEST(Collision, DiscOnRectangleEdge)
{
    VehicleState v = vehicle_at(0, 0);
    v.half_extents = Vec3(1.0, 0.5, 0.75);
    WalkerState w;
    w.id = ActorId{2};
    w.transform = make_transform(1.0, 0.0);
    const std::vector<VehicleState> vs{v};
    const std::vector<WalkerState> ws{w};
    const auto events = detect_collisions(vs, ws);
    ASSERT_EQ(events.size(), 1u);
    const double oracle = walker_radius - rect_distance(1.0, 0.0, 0, 0, 1.0, 0.5);
    EXPECT_NEAR(events[0].value, oracle, 1e-12);
    EXPECT_NEAR(events[0].value, 0.3, 1e-12);
    EXPECT_EQ(events[0].kind, EventKind::collision);
}

TEST(Collision, RandomPlacementsMatchOracle)
{
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    VehicleState v = vehicle_at(0, 0);
    for (int i = 0; i < 5000; ++i)
    {
        WalkerState w;
        w.id = ActorId{2};
        w.transform = make_transform(u(rng), u(rng));
        const double d = rect_distance(w.transform.position.x(), w.transform.position.y(), 0, 0, v.half_extents.x(), v.half_extents.y());
        if (d == 0.0)
            continue; // inside: depth is measured to the nearest edge instead
        const std::vector<VehicleState> vs{v};
        const std::vector<WalkerState> ws{w};
        const auto events = detect_collisions(vs, ws);
        if (walker_radius - d > 1e-12)
        {
            ASSERT_EQ(events.size(), 1u);
            EXPECT_NEAR(events[0].value, walker_radius - d, 1e-12);
        }
        else if (walker_radius - d < -1e-12)
        {
            EXPECT_TRUE(events.empty());
        }
    }
}

TEST(Collision, FarApartNoEvent)
{
    WalkerState w;
    w.id = ActorId{2};
    w.transform = make_transform(10.0, 0.0);
    const std::vector<VehicleState> vs{vehicle_at(0, 0)};
    const std::vector<WalkerState> ws{w};
    EXPECT_TRUE(detect_collisions(vs, ws).empty());
}

TEST(Collision, TangentIsNotCollision)
{
    // 0.5 - 0.2 == 0.3 exactly in binary, so the disc touches with depth 0.
    VehicleState v = vehicle_at(0, 0);
    v.half_extents = Vec3(1.0, 0.2, 0.75);
    WalkerState w;
    w.id = ActorId{2};
    w.transform = make_transform(0.0, 0.5);
    EXPECT_EQ(penetration(v.footprint(), w.footprint()), 0.0);
    const std::vector<VehicleState> vs{v};
    const std::vector<WalkerState> ws{w};
    EXPECT_TRUE(detect_collisions(vs, ws).empty());
}

TEST(Collision, VehiclePairs)
{
    VehicleState a = vehicle_at(0, 0), b = vehicle_at(4.0, 0);
    b.id = ActorId{5};
    const std::vector<VehicleState> vs{a, b};
    const auto events = detect_collisions(vs, std::span<const WalkerState>{});
    ASSERT_EQ(events.size(), 1u);
    EXPECT_NEAR(events[0].value, 0.8, 1e-12);
    b.transform = make_transform(4.8, 0);
    const std::vector<VehicleState> touching{a, b};
    EXPECT_TRUE(detect_collisions(touching, std::span<const WalkerState>{}).empty());
}

TEST(Collision, OnsetOnlyInWorld)
{
    World world;
    const ActorId car = world.spawn_actor("vehicle.sedan", make_transform(0, 0));
    world.spawn_actor("walker.avatar", make_transform(10, 0));
    world.set_vehicle_speed(car, 2.0);
    int collisions = 0;
    for (int i = 0; i < 200; ++i)
        for (const auto &e : world.step()->events)
            collisions += e.kind == EventKind::collision;
    EXPECT_EQ(collisions, 1);
}

// ------------------------------------------------------------------ lights

TEST(Lights, StepExamples)
{
    TrafficLightState red;
    red.phase = LightPhase::red;
    red.remaining = 0.05;
    red.green = 7.0;
    const auto g = traffic_light_step(red, 0.05);
    EXPECT_EQ(g.phase, LightPhase::green);
    EXPECT_EQ(g.remaining, 7.0);

    TrafficLightState green;
    green.phase = LightPhase::green;
    green.remaining = 5.0;
    const auto still = traffic_light_step(green, 0.05);
    EXPECT_EQ(still.phase, LightPhase::green);
    EXPECT_NEAR(still.remaining, 4.95, 1e-12);
}

TEST(Lights, ThreeCyclesReturnHome)
{
    TrafficLightState l;
    l.red = 1.0;
    l.green = 0.5;
    l.amber = 0.25;
    l.phase = LightPhase::red;
    l.remaining = l.red;
    // Oracle: whole-tick counting, phase order red, green, amber.
    const int ticks[3] = {20, 10, 5};
    int phase = 0, left = ticks[0];
    const TrafficLightState start = l;
    for (int i = 0; i < 3 * 35; ++i)
    {
        l = traffic_light_step(l, 0.05);
        if (--left == 0)
        {
            phase = (phase + 1) % 3;
            left = ticks[phase];
        }
        const LightPhase expect[3] = {LightPhase::red, LightPhase::green, LightPhase::amber};
        ASSERT_EQ(l.phase, expect[phase]) << "tick " << i;
        EXPECT_NEAR(l.remaining, left * 0.05, 1e-9);
    }
    EXPECT_EQ(l.phase, start.phase);
    EXPECT_NEAR(l.remaining, start.remaining, 1e-9);
}

TEST(Lights, MapLightsSpawnedFirst)
{
    World world(red_light_map(20.0));
    ASSERT_EQ(world.snapshot()->lights.size(), 1u);
    EXPECT_EQ(world.snapshot()->lights[0].id, ActorId{1});
    EXPECT_EQ(world.spawn_actor("vehicle.sedan", make_transform(0, -1.75)), ActorId{2});
}

// ------------------------------------------------------------------- audio

TEST(Audio, EngineIntensity)
{
    EXPECT_DOUBLE_EQ(engine_intensity(0, 0).intensity, 0.2);
    EXPECT_DOUBLE_EQ(engine_intensity(1, 0).intensity, 1.0);
    EXPECT_TRUE(engine_intensity(0, 0.6).brake_cue);
    EXPECT_FALSE(engine_intensity(0, 0.5).brake_cue);
}

TEST(Audio, GainAndPan)
{
    const Transform ear = make_transform(0, 0, 1.7, 0.0);
    const std::vector<AudioSource> src{
        {ActorId{1}, SoundKind::engine, "engine", 0.8, Vec2(1, 0), 1, false},
        {ActorId{2}, SoundKind::engine, "engine", 0.8, Vec2(2, 0), 1, false},
        {ActorId{3}, SoundKind::footsteps, "footsteps", 0.6, Vec2(0, -3), 1, false},
        {environment_id, SoundKind::ambient, "wind", 0.2, Vec2(50, 50), 1, false},
    };
    const auto cues = listener_cues(ear, src);
    ASSERT_EQ(cues.size(), 4u);
    EXPECT_DOUBLE_EQ(cues[0].gain, 0.8);
    EXPECT_DOUBLE_EQ(cues[1].gain, 0.4);
    EXPECT_NEAR(cues[2].pan, 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(cues[3].gain, 0.2);
    EXPECT_EQ(cues[3].pan, 0.0);
}

TEST(Audio, AheadAndBehindCentred)
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> yaw(-pi, pi), dist(0.5, 50.0);
    for (int i = 0; i < 1000; ++i)
    {
        const Transform ear = make_transform(0, 0, 0, yaw(rng));
        const Vec2 f = heading_vector(ear.yaw);
        const std::vector<AudioSource> src{
            {ActorId{1}, SoundKind::engine, "engine", 1.0, dist(rng) * f, 1, false},
            {ActorId{2}, SoundKind::engine, "engine", 1.0, -dist(rng) * f, 1, false},
        };
        const auto cues = listener_cues(ear, src);
        EXPECT_LE(std::abs(cues[0].pan), 1e-9);
        EXPECT_LE(std::abs(cues[1].pan), 1e-9);
    }
}

TEST(Audio, GainNonIncreasingAndPanBounded)
{
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ang(-pi, pi);
    const Transform ear = make_transform(3, 4, 0, 0.4);
    double prev = 2.0;
    for (double d = 0.0; d < 60.0; d += 0.25)
    {
        const double a = ang(rng);
        const std::vector<AudioSource> src{{ActorId{1}, SoundKind::voice, "voice", 1.0, xy(ear.position) + d * heading_vector(a), 1, false}};
        const auto cue = listener_cues(ear, src).front();
        EXPECT_LE(cue.gain, prev);
        EXPECT_GE(cue.pan, -1.0);
        EXPECT_LE(cue.pan, 1.0);
        prev = cue.gain;
    }
}

TEST(Audio, WorldListenerCues)
{
    World world;
    const ActorId car = world.spawn_actor("vehicle.sedan", make_transform(10, 0));
    const ActorId walker = world.spawn_actor("walker.avatar", make_transform(0, 0));
    world.set_listener(walker);
    const auto snap = world.step();
    ASSERT_FALSE(snap->audio.empty());
    EXPECT_EQ(snap->audio[0].actor, car);
    EXPECT_EQ(snap->audio[0].kind, SoundKind::engine);
    EXPECT_DOUBLE_EQ(snap->audio[0].gain, 0.1);
}
