// SPDX-License-Identifier: Apache-2.0
#include "test_util.hpp"

#include <rail/record.hpp>
#include <rail/server.hpp>

#include <algorithm>
#include <filesystem>
#include <random>
#include <regex>

using namespace rail;

namespace
{
    // A small world with one vehicle and one walker that moves every tick.
    World busy_world()
    {
        World w;
        const auto car = w.spawn_actor("vehicle.sedan", make_transform(-20.0, -1.75, 0.0));
        w.set_vehicle_speed(car, 5.0);
        w.enqueue(VehicleControlCommand{car, {0.3, 0.1, 0.0}});
        const auto walker = w.spawn_actor("walker.avatar", make_transform(0.0, 5.0, 0.0));
        w.enqueue(WalkerControlCommand{walker, Vec2(1, 0), 1.2, 0.3});
        return w;
    }

    RecordLog record_frames(World &w, std::size_t n)
    {
        RecordLog log{LogHeader{log_format_version, "inline", w.dt(), 0, w.skeleton()}, {}};
        record_tick(log, *w.snapshot());
        for (std::size_t i = 1; i < n; ++i)
            record_tick(log, *w.step());
        return log;
    }

    std::size_t count_lines(const std::string &s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

    std::vector<Message> sample_messages()
    {
        World w = busy_world();
        w.step();
        w.step();
        const auto snap = *w.snapshot();
        msg::SetTrafficParams tp;
        tp.id = ActorId{3};
        tp.params.speed_limit_factor = 0.75;
        tp.params.ignore_pedestrians = true;
        msg::AvatarPose pose{ActorId{2}, *snap.walkers.front().pose};
        return {
            msg::Hello{"runner", 1},
            msg::Welcome{20.0, 4, 1, "lockstep", true},
            msg::SpawnActor{"vehicle.sedan", make_transform(1.5, -2.25, 0.0, 0.5)},
            msg::ActorSpawned{ActorId{9}},
            msg::DestroyActor{ActorId{9}},
            msg::VehicleControl{ActorId{1}, {0.5, -0.25, 0.125}},
            msg::WalkerControl{ActorId{2}, Vec2(0.6, 0.8), 1.4, -0.1},
            pose,
            tp,
            msg::Tick{},
            msg::GetSnapshot{},
            msg::Snapshot{snap},
            msg::SubscribeSensor{"lidar", nlohmann::json{{"id", "roof"}, {"channels", 4}}},
            msg::SensorFrame{12, "roof", "lidar", std::string("\x00\x01\xff\x10 bytes", 10)},
            msg::Ack{"tick", 12.0},
            msg::ErrorReply{"not-authorized", "only the tick authority may advance the world"},
        };
    }

    ServerCore::SessionId hello(ServerCore &s, const std::string &role)
    {
        const auto id = s.open_session();
        const auto reply = s.handle_message(id, msg::Hello{role, protocol_version});
        EXPECT_TRUE(std::holds_alternative<msg::Welcome>(reply));
        s.take_outbox(id);
        return id;
    }

    std::string error_code(const Message &m)
    {
        const auto *e = std::get_if<msg::ErrorReply>(&m);
        return e ? e->code : std::string("<no error>");
    }
} // namespace

// ------------------------------------------------------------------ record

TEST(Record, HeaderPlusOneLinePerTick)
{
    World w = busy_world();
    const auto log = record_frames(w, 3);
    const auto text = serialize_log(log);
    EXPECT_EQ(count_lines(text), 4u);
    const auto first = nlohmann::json::parse(text.substr(0, text.find('\n')));
    EXPECT_EQ(first.at("format_version"), 1);
    EXPECT_EQ(first.at("joints").size(), w.skeleton().names.size());
}

TEST(Record, OutOfOrderRejected)
{
    World w = busy_world();
    auto log = record_frames(w, 3);
    auto snap = *w.snapshot();
    snap.frame = 5;
    EXPECT_RAIL_ERROR(record_tick(log, snap), Errc::out_of_order);

    std::ostringstream out;
    LogWriter writer(out, log.header);
    writer.write(log.frames[0]);
    EXPECT_RAIL_ERROR(writer.write(log.frames[2]), Errc::out_of_order);
}

TEST(Record, JointCountMustMatchHeader)
{
    World w = busy_world();
    auto log = record_frames(w, 2);
    auto snap = *w.step();
    ASSERT_FALSE(snap.walkers.empty());
    ASSERT_TRUE(snap.walkers[0].pose);
    snap.walkers[0].pose->joints.pop_back();
    EXPECT_RAIL_ERROR(record_tick(log, snap), Errc::count_mismatch);
}

TEST(Record, WalkerJointArraysMatchHeader)
{
    World w = busy_world();
    const auto log = record_frames(w, 10);
    const auto text = serialize_log(log);
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    const auto joints = nlohmann::json::parse(line).at("joints").size();
    std::size_t checked = 0;
    while (std::getline(in, line))
    {
        const auto frame = nlohmann::json::parse(line);
        for (const auto &walker : frame.at("actors"))
            if (walker.at("kind") == "walker" && !walker.at("joints").is_null())
            {
                EXPECT_EQ(walker.at("joints").size(), joints);
                ++checked;
            }
    }
    EXPECT_GT(checked, 0u);
}

TEST(Replay, ReproducesRecordedSnapshots)
{
    World w = busy_world();
    const auto log = record_frames(w, 40);
    const auto text = serialize_log(log);
    const auto frames = replay(text);
    ASSERT_EQ(frames.size(), log.frames.size());
    for (std::size_t k = 0; k < frames.size(); ++k)
        EXPECT_EQ(frames[k], log.frames[k]) << "frame " << k;
}

TEST(Replay, SeekReturnsThatFrame)
{
    World w = busy_world();
    const auto text = serialize_log(record_frames(w, 25));
    const LogReplay r(text);
    EXPECT_EQ(r.size(), 25u);
    for (std::size_t k : {24u, 0u, 13u, 7u})
        EXPECT_EQ(r.seek(k).frame, k);
    EXPECT_RAIL_ERROR(r.seek(25), Errc::out_of_range);
}

TEST(Replay, ReserializeIsBitExact)
{
    World w = busy_world();
    const auto text = serialize_log(record_frames(w, 30));
    EXPECT_EQ(serialize_log(LogReplay(text).load()), text);
}

TEST(Replay, TruncationNamesLastCompleteFrame)
{
    World w = busy_world();
    const auto text = serialize_log(record_frames(w, 5));
    // Cut in the middle of the last line (frame 4).
    const auto last_start = text.rfind('\n', text.size() - 2) + 1;
    const auto cut = text.substr(0, last_start + (text.size() - last_start) / 2);
    try
    {
        LogReplay r(cut);
        FAIL() << "truncated log accepted";
    }
    catch (const Error &e)
    {
        EXPECT_EQ(e.code(), Errc::truncated);
        EXPECT_NE(std::string(e.what()).find("last complete frame is 3"), std::string::npos) << e.what();
    }
    EXPECT_RAIL_ERROR(LogReplay(text.substr(0, 10)), Errc::truncated);
    EXPECT_RAIL_ERROR(LogReplay(""), Errc::empty_input);
}

TEST(Replay, UnsupportedVersion)
{
    World w = busy_world();
    auto text = serialize_log(record_frames(w, 2));
    const auto at = text.find("\"format_version\":1");
    ASSERT_NE(at, std::string::npos);
    text.replace(at, 18, "\"format_version\":9");
    EXPECT_RAIL_ERROR(LogReplay{text}, Errc::unsupported_element);
}

// ------------------------------------------------------------------ export

namespace
{
    SensorSpec world_camera(int w, int h)
    {
        SensorSpec s;
        s.id = "cam";
        s.kind = SensorKind::camera;
        s.camera.width = w;
        s.camera.height = h;
        s.camera.mount = make_transform(0.0, 0.0, 0.5);
        return s;
    }
} // namespace

TEST(Export, DepthOfWallAtTenMetres)
{
    World w;
    // Box face toward the camera sits at x = 10.
    w.spawn_actor("prop.box", make_transform(10.5, 0.0, 0.0));
    const auto text = serialize_log(record_frames(w, 2));
    const auto dir = test::scratch("export_depth");
    const auto manifest = export_frames(LogReplay(text), {world_camera(3, 3)}, dir);
    EXPECT_EQ(manifest.frames, 2u);
    EXPECT_EQ(manifest.files.size(), 6u); // depth, segmentation, rgb per frame
    const auto pgm = test::slurp(dir / "cam-depth_000001.pgm");
    const std::string head = "P5\n3 3\n65535\n";
    ASSERT_EQ(pgm.size(), head.size() + 18);
    EXPECT_EQ(pgm.substr(0, head.size()), head);
    const auto centre = head.size() + 2 * 4;
    const int mm = (static_cast<unsigned char>(pgm[centre]) << 8) | static_cast<unsigned char>(pgm[centre + 1]);
    EXPECT_EQ(mm, 10000);
    EXPECT_TRUE(std::filesystem::exists(dir / "cam-segmentation_000000.ppm"));
    EXPECT_TRUE(std::filesystem::exists(dir / "cam-rgb_000001.ppm"));
    EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
}

TEST(Export, PlyVertexCountAndPedestrianPoints)
{
    World w;
    w.spawn_actor("walker.avatar", make_transform(6.0, 0.0, 0.0));
    const auto text = serialize_log(record_frames(w, 2));
    SensorSpec s;
    s.id = "lidar";
    s.lidar.channels = 16;
    s.lidar.h_steps = 360;
    s.lidar.mount = make_transform(0.0, 0.0, 1.0);
    const auto dir = test::scratch("export_ply");
    const auto manifest = export_frames(LogReplay(text), {s}, dir);
    ASSERT_EQ(manifest.files.size(), 2u);
    const auto ply = test::slurp(dir / manifest.files[1].path);
    std::smatch m;
    ASSERT_TRUE(std::regex_search(ply, m, std::regex("element vertex (\\d+)")));
    const auto declared = std::stoul(m[1]);
    EXPECT_EQ(declared, manifest.files[1].elements);
    const auto body = ply.substr(ply.find("end_header\n") + 11);
    EXPECT_EQ(count_lines(body), declared);
    const auto label = std::to_string(static_cast<int>(SemanticLabel::pedestrian));
    EXPECT_TRUE(std::regex_search(body, std::regex(" " + label + " 1\n"))) << "no pedestrian point";
}

TEST(Export, SecondRunIsByteIdentical)
{
    World w = busy_world();
    const auto text = serialize_log(record_frames(w, 4));
    SensorSpec lidar;
    lidar.id = "lidar";
    lidar.attach = ActorId{1};
    lidar.lidar.channels = 8;
    lidar.lidar.h_steps = 90;
    lidar.lidar.noise_sigma = 0.02;
    lidar.lidar.noise_seed = 11;
    const std::vector<SensorSpec> specs{lidar, world_camera(16, 12)};
    const auto a = test::scratch("export_a");
    const auto b = test::scratch("export_b");
    const auto ma = export_frames(LogReplay(text), specs, a);
    export_frames(LogReplay(text), specs, b);
    for (const auto &f : ma.files)
        EXPECT_EQ(test::slurp(a / f.path), test::slurp(b / f.path)) << f.path;
    EXPECT_EQ(test::slurp(a / "manifest.json"), test::slurp(b / "manifest.json"));
}

// ---------------------------------------------------------------- protocol

TEST(Protocol, TickFrameBytes)
{
    const auto frame = encode_frame(msg::Tick{});
    ASSERT_EQ(frame.size(), 19u);
    EXPECT_EQ(frame.substr(0, 4), std::string("\x00\x00\x00\x0f", 4));
    EXPECT_EQ(frame.substr(4), R"({"type":"tick"})");
}

TEST(Protocol, EveryVariantRoundTrips)
{
    const auto msgs = sample_messages();
    EXPECT_EQ(msgs.size() + 1, std::variant_size_v<Message>); // all but Unknown
    for (const auto &m : msgs)
    {
        const auto frame = encode_frame(m);
        const auto r = decode_frame(frame);
        ASSERT_EQ(r.status, FrameResult::Status::message) << message_type(m) << ": " << r.error;
        EXPECT_EQ(r.consumed, frame.size());
        EXPECT_EQ(r.message, m) << message_type(m);
        EXPECT_EQ(encode_payload(r.message), encode_payload(m));
    }
}

TEST(Protocol, UnknownTypeKeepsBody)
{
    const auto m = decode_payload(R"({"type":"future_thing","x":[1,2]})");
    const auto *u = std::get_if<msg::Unknown>(&m);
    ASSERT_NE(u, nullptr);
    EXPECT_EQ(u->type, "future_thing");
    EXPECT_EQ(u->body, (nlohmann::json{{"x", {1, 2}}}));
    EXPECT_EQ(encode_payload(m), R"({"type":"future_thing","x":[1,2]})");
}

TEST(Protocol, BadPayloads)
{
    EXPECT_RAIL_ERROR(decode_payload("[1,2]"), Errc::bad_payload);
    EXPECT_RAIL_ERROR(decode_payload(R"({"kind":"tick"})"), Errc::bad_payload);
    EXPECT_RAIL_ERROR(decode_payload(R"({"type":"hello"})"), Errc::bad_payload);
    EXPECT_RAIL_ERROR(decode_payload(R"({"type":"vehicle_control","id":1,"throttle":"x","steer":0,"brake":0})"), Errc::bad_payload);
    EXPECT_RAIL_ERROR(decode_payload("{\"type\":"), Errc::bad_payload);
}

TEST(Protocol, ShortDeclaredLengthConsumesOnlyThatFrame)
{
    std::string bytes("\x00\x00\x00\x02{}", 6);
    bytes += std::string(94, 'z');
    ASSERT_EQ(bytes.size(), 100u);
    const auto r = decode_frame(bytes);
    EXPECT_EQ(r.consumed, 6u);
    EXPECT_EQ(r.status, FrameResult::Status::bad_frame); // {} has no type

    FrameDecoder d;
    d.feed(bytes);
    EXPECT_EQ(d.next().status, FrameResult::Status::bad_frame);
    EXPECT_EQ(d.buffered(), 94u);
}

TEST(Protocol, OversizeLengthIsFatal)
{
    const std::string bytes("\x01\x00\x00\x01{}", 6); // 16 MiB + 1
    const auto r = decode_frame(bytes);
    EXPECT_EQ(r.status, FrameResult::Status::fatal);
    EXPECT_FALSE(r.error.empty());
    FrameDecoder d;
    d.feed(bytes);
    d.feed(encode_frame(msg::Tick{}));
    EXPECT_EQ(d.next().status, FrameResult::Status::fatal);
    EXPECT_EQ(d.next().status, FrameResult::Status::fatal);

    const std::string limit("\x01\x00\x00\x00", 4); // exactly 16 MiB: waits for bytes
    EXPECT_EQ(decode_frame(limit).status, FrameResult::Status::need_more);
}

TEST(Protocol, NeedMoreConsumesNothing)
{
    const auto frame = encode_frame(msg::Hello{"ui", 1});
    for (std::size_t n = 0; n < frame.size(); ++n)
    {
        const auto r = decode_frame(std::string_view(frame).substr(0, n));
        EXPECT_EQ(r.status, FrameResult::Status::need_more);
        EXPECT_EQ(r.consumed, 0u);
    }
}

TEST(Protocol, RandomSplitsYieldSameMessages)
{
    const auto msgs = sample_messages();
    std::string stream;
    for (const auto &m : msgs)
        stream += encode_frame(m);
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial)
    {
        FrameDecoder d;
        std::vector<Message> got;
        std::size_t pos = 0;
        while (pos < stream.size())
        {
            const std::size_t n = std::min<std::size_t>(stream.size() - pos, 1 + rng() % 64);
            d.feed(std::string_view(stream).substr(pos, n));
            pos += n;
            for (auto r = d.next(); r.status != FrameResult::Status::need_more; r = d.next())
            {
                ASSERT_EQ(r.status, FrameResult::Status::message) << r.error;
                got.push_back(r.message);
            }
        }
        ASSERT_EQ(got.size(), msgs.size());
        for (std::size_t i = 0; i < msgs.size(); ++i)
            EXPECT_EQ(got[i], msgs[i]);
        EXPECT_EQ(d.buffered(), 0u);
    }
}

TEST(Protocol, FuzzNeverThrowsAndConsumesSanely)
{
    const auto msgs = sample_messages();
    std::vector<std::string> seeds;
    for (const auto &m : msgs)
        if (!std::holds_alternative<msg::Snapshot>(m))
            seeds.push_back(encode_frame(m));
    std::mt19937_64 rng(99);
    for (int i = 0; i < 20000; ++i)
    {
        std::string bytes;
        if (i % 2 == 0)
        {
            bytes.resize(rng() % 48);
            for (auto &c : bytes)
                c = static_cast<char>(rng());
        }
        else
        {
            bytes = seeds[rng() % seeds.size()];
            const int flips = 1 + static_cast<int>(rng() % 4);
            for (int f = 0; f < flips; ++f)
                bytes[4 + rng() % (bytes.size() - 4)] = static_cast<char>(rng());
        }
        FrameResult r;
        ASSERT_NO_THROW(r = decode_frame(bytes));
        EXPECT_LE(r.consumed, bytes.size());
        if (r.status == FrameResult::Status::need_more || r.status == FrameResult::Status::fatal)
            EXPECT_EQ(r.consumed, 0u);
        else
            EXPECT_GE(r.consumed, 4u);
    }
}

TEST(Protocol, Base64)
{
    EXPECT_EQ(base64_encode("foobar"), "Zm9vYmFy");
    EXPECT_EQ(base64_decode("Zm9vYg=="), "foob");
    EXPECT_RAIL_ERROR(base64_decode("Zm9v!!"), Errc::bad_payload);
}

TEST(Protocol, PointCloudPayload)
{
    PointCloud pc;
    pc.points.push_back({Vec3(1.5, -2.25, 0.125), 9.0, SemanticLabel::pedestrian, ActorId{7}});
    pc.points.push_back({Vec3(-100.0, 0.0, 3.0), 100.0, SemanticLabel::road, environment_id});
    const auto bytes = encode_point_cloud(pc);
    ASSERT_EQ(bytes.size(), 34u);
    const auto back = decode_point_cloud(bytes);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].x, 1.5f);
    EXPECT_EQ(back[0].y, -2.25f);
    EXPECT_EQ(back[0].z, 0.125f);
    EXPECT_EQ(back[0].actor, 7u);
    EXPECT_EQ(back[0].label, static_cast<std::uint8_t>(SemanticLabel::pedestrian));
    EXPECT_EQ(back[1].x, -100.0f);
    EXPECT_RAIL_ERROR(decode_point_cloud(bytes.substr(1)), Errc::bad_payload);
}

// ------------------------------------------------------------------ server

TEST(Server, HelloGetsWelcome)
{
    World w;
    ServerCore s(w);
    const auto id = s.open_session();
    const auto reply = s.handle_message(id, msg::Hello{"runner", protocol_version});
    const auto *welcome = std::get_if<msg::Welcome>(&reply);
    ASSERT_NE(welcome, nullptr);
    EXPECT_DOUBLE_EQ(welcome->tick_hz, 20.0);
    EXPECT_EQ(welcome->session_id, id);
    EXPECT_EQ(welcome->mode, "lockstep");
    EXPECT_TRUE(welcome->authority);
    EXPECT_EQ(s.outbox_size(id), 1u);

    EXPECT_EQ(error_code(s.handle_message(id, msg::Hello{"runner", protocol_version})), "protocol-state");
    const auto other = s.open_session();
    EXPECT_EQ(error_code(s.handle_message(other, msg::Hello{"ui", 2})), "version");
}

TEST(Server, CommandBeforeHello)
{
    World w;
    ServerCore s(w);
    const auto id = s.open_session();
    EXPECT_EQ(error_code(s.handle_message(id, msg::Tick{})), "protocol-state");
    EXPECT_EQ(error_code(s.handle_message(id, msg::VehicleControl{ActorId{1}, {}})), "protocol-state");
    EXPECT_EQ(w.frame(), 0u);
}

TEST(Server, ActorChecks)
{
    World w;
    const auto walker = w.spawn_actor("walker.avatar", make_transform(0, 5, 0));
    ServerCore s(w);
    const auto id = hello(s, "runner");
    EXPECT_EQ(error_code(s.handle_message(id, msg::VehicleControl{walker, {1, 0, 0}})), "wrong-actor-kind");
    EXPECT_EQ(error_code(s.handle_message(id, msg::VehicleControl{ActorId{99}, {1, 0, 0}})), "unknown-actor");
    EXPECT_EQ(error_code(s.handle_message(id, msg::WalkerControl{walker, Vec2(1, 0), -1.0, 0.0})), "invalid-value");
    EXPECT_EQ(error_code(s.handle_message(id, msg::SpawnActor{"vehicle.tank", {}})), "unknown-blueprint");
    EXPECT_EQ(error_code(s.handle_message(id, msg::Unknown{"warp", {}})), "unknown-type");
    EXPECT_EQ(error_code(s.handle_message(id, msg::Welcome{})), "unexpected");

    const auto spawned = s.handle_message(id, msg::SpawnActor{"vehicle.sedan", make_transform(-30, -1.75, 0)});
    const auto *a = std::get_if<msg::ActorSpawned>(&spawned);
    ASSERT_NE(a, nullptr);
    EXPECT_FALSE(w.kind_of(a->id)); // applies at the next tick
    s.handle_message(id, msg::Tick{});
    EXPECT_EQ(w.kind_of(a->id), ActorKind::vehicle);
}

TEST(Server, TickAuthority)
{
    World w;
    ServerCore s(w);
    const auto runner = hello(s, "runner");
    const auto ui = hello(s, "ui");
    EXPECT_EQ(error_code(s.handle_message(ui, msg::Tick{})), "not-authorized");
    EXPECT_EQ(w.frame(), 0u);
    const auto ack = s.handle_message(runner, msg::Tick{});
    ASSERT_TRUE(std::holds_alternative<msg::Ack>(ack));
    EXPECT_EQ(std::get<msg::Ack>(ack).value, 1.0);
    EXPECT_EQ(w.frame(), 1u);

    World rw;
    ServerCore rt(rw, {ServerMode::realtime});
    const auto r = hello(rt, "runner");
    EXPECT_EQ(error_code(rt.handle_message(r, msg::Tick{})), "realtime-mode");
}

TEST(Server, BroadcastToAllSubscribers)
{
    World w = busy_world();
    ServerCore s(w);
    const auto runner = hello(s, "runner");
    const auto ui = hello(s, "ui");
    const auto obs = hello(s, "observer");
    const auto silent = s.open_session(); // no hello, no broadcast
    s.handle_message(runner, msg::Tick{});
    std::vector<std::uint64_t> frames;
    for (auto id : {runner, ui, obs})
        for (const auto &m : s.take_outbox(id))
            if (const auto *snap = std::get_if<msg::Snapshot>(&m))
                frames.push_back(snap->snapshot.frame);
    ASSERT_EQ(frames.size(), 3u);
    EXPECT_EQ(frames[0], 1u);
    EXPECT_EQ(frames[1], 1u);
    EXPECT_EQ(frames[2], 1u);
    EXPECT_EQ(s.outbox_size(silent), 0u);
}

TEST(Server, LidarSubscription)
{
    World w = busy_world();
    ServerCore s(w);
    const auto runner = hello(s, "runner");
    const auto ui = hello(s, "ui");
    const nlohmann::json cfg{{"id", "roof"}, {"attach", 1}, {"channels", 4}, {"h_steps", 90}};
    EXPECT_TRUE(std::holds_alternative<msg::Ack>(s.handle_message(ui, msg::SubscribeSensor{"lidar", cfg})));
    EXPECT_EQ(error_code(s.handle_message(ui, msg::SubscribeSensor{"lidar", cfg})), "duplicate");
    EXPECT_EQ(error_code(s.handle_message(ui, msg::SubscribeSensor{"radar", {{"id", "x"}}})), "invalid-config");
    s.take_outbox(ui);
    s.handle_message(runner, msg::Tick{});
    const auto out = s.take_outbox(ui);
    ASSERT_EQ(out.size(), 2u);
    const auto *snap = std::get_if<msg::Snapshot>(&out[0]);
    const auto *frame = std::get_if<msg::SensorFrame>(&out[1]);
    ASSERT_NE(snap, nullptr);
    ASSERT_NE(frame, nullptr);
    EXPECT_EQ(frame->frame, snap->snapshot.frame);
    EXPECT_EQ(frame->sensor_kind, "lidar");
    EXPECT_EQ(frame->data.size() % 17, 0u);
    EXPECT_GT(frame->data.size(), 0u);
    // The runner did not subscribe.
    for (const auto &m : s.take_outbox(runner))
        EXPECT_FALSE(std::holds_alternative<msg::SensorFrame>(m));
}

TEST(Server, SlowSessionDroppedOthersUnaffected)
{
    World w;
    ServerCore s(w);
    const auto runner = hello(s, "runner");
    const auto slow = hello(s, "ui");
    std::vector<std::uint64_t> seen;
    for (int i = 0; i < 100; ++i)
    {
        s.handle_message(runner, msg::Tick{});
        for (const auto &m : s.take_outbox(runner))
            if (const auto *snap = std::get_if<msg::Snapshot>(&m))
                seen.push_back(snap->snapshot.frame);
    }
    EXPECT_FALSE(s.is_open(slow));
    EXPECT_TRUE(s.is_open(runner));
    ASSERT_EQ(seen.size(), 100u);
    for (std::size_t i = 1; i < seen.size(); ++i)
        EXPECT_LT(seen[i - 1], seen[i]);
    const auto &log = s.log();
    ASSERT_EQ(log.size(), 1u);
    EXPECT_EQ(log[0].session, slow);
    EXPECT_NE(log[0].what.find("overflow"), std::string::npos);
}

TEST(Server, DrainingKeepsSessionAlive)
{
    World w;
    ServerCore s(w);
    const auto runner = hello(s, "runner");
    const auto ui = hello(s, "ui");
    for (int i = 0; i < 200; ++i)
    {
        s.handle_message(runner, msg::Tick{});
        s.take_outbox(runner);
        while (s.pop_outbox(ui))
        {
        }
    }
    EXPECT_TRUE(s.is_open(ui));
    EXPECT_TRUE(s.log().empty());
}

TEST(Server, AuthorityReleasedOnClose)
{
    World w;
    ServerCore s(w);
    const auto a = hello(s, "runner");
    s.close_session(a);
    EXPECT_FALSE(s.authority());
    const auto b = s.open_session();
    const auto reply = s.handle_message(b, msg::Hello{"runner", protocol_version});
    EXPECT_TRUE(std::get<msg::Welcome>(reply).authority);
}
