// SPDX-License-Identifier: Apache-2.0
//
// rail: serve, run, replay, export, score.
// Exit codes: 0 ok, 2 config/input error, 3 runtime fault, 4 scenario expectation failed.
#include "rail/net.hpp"
#include "rail/presence.hpp"
#include "rail/record.hpp"
#include "rail/scenario.hpp"

#include <CLI11.hpp>
#include <boost/asio/signal_set.hpp>
#include <fmt/format.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

namespace
{
    using namespace rail;

    std::string read_file(const std::string &path, const char *what)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw Error(Errc::io, fmt::format("cannot read {} '{}'", what, path));
        return std::string(std::istreambuf_iterator<char>(in), {});
    }

    unsigned short default_port()
    {
        if (const char *env = std::getenv("RAIL_PORT"))
        {
            char *end = nullptr;
            const long v = std::strtol(env, &end, 10);
            if (end != env && *end == '\0' && v > 0 && v < 65536)
                return static_cast<unsigned short>(v);
            std::cerr << "warning: ignoring invalid RAIL_PORT '" << env << "'\n";
        }
        return 2000;
    }

    int report(const Error &e, int code)
    {
        std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
        return code;
    }

    int cmd_serve(const std::string &map_path, const std::string &mode_name, unsigned short port, unsigned short ws_port, const std::string &www,
                  const std::string &responses, double dt)
    {
        RoadMap map;
        ServerOptions opts;
        try
        {
            if (!map_path.empty())
            {
                const std::string text = read_file(map_path, "map");
                map = map_path.ends_with(".xodr") ? parse_opendrive_subset(text) : parse_scene(text);
            }
            const auto mode = server_mode_from_string(mode_name);
            if (!mode)
                throw Error(Errc::invalid_config, "--mode must be lockstep or realtime");
            opts.mode = *mode;
        }
        catch (const Error &e)
        {
            return report(e, exit_config);
        }
        try
        {
            WorldConfig wc;
            wc.dt = dt;
            World world(std::move(map), wc);
            ServerCore core(world, opts);
            boost::asio::io_context io;
            net::NetOptions nopts;
            nopts.tcp_port = port;
            nopts.ws_port = ws_port;
            nopts.http.www_root = www;
            nopts.http.responses_file = responses;
            net::NetServer server(io, core, nopts);
            boost::asio::signal_set signals(io, SIGINT, SIGTERM);
            signals.async_wait([&](auto, int) {
                server.stop();
                io.stop();
            });
            std::cerr << fmt::format("serving {} mode: tcp {} ws {} (/ws)\n", to_string(opts.mode), server.tcp_port(), server.ws_port());
            io.run();
            for (const auto &entry : core.log())
                std::cerr << fmt::format("session {}: {}\n", entry.session, entry.what);
        }
        catch (const Error &e)
        {
            return report(e, exit_runtime);
        }
        catch (const std::exception &e)
        {
            std::cerr << "error: " << e.what() << "\n";
            return exit_runtime;
        }
        return exit_ok;
    }

    int cmd_run(const std::string &scenario, const std::string &out, bool quiet)
    {
        ScenarioConfig cfg;
        try
        {
            cfg = load_scenario(scenario);
        }
        catch (const Error &e)
        {
            return report(e, exit_config);
        }
        try
        {
            std::ofstream log;
            if (!out.empty())
            {
                log.open(out, std::ios::binary | std::ios::trunc);
                if (!log)
                    return report(Error(Errc::io, fmt::format("cannot write log '{}'", out)), exit_config);
            }
            const auto sum = run_scenario(cfg, out.empty() ? nullptr : &log);
            if (!quiet || sum.exit_code != exit_ok)
                std::cout << "scenario: " << cfg.name << "\n" << sum.render();
            return sum.exit_code;
        }
        catch (const Error &e)
        {
            return report(e, exit_runtime);
        }
    }

    int cmd_replay(const std::string &path, double speed)
    {
        std::optional<LogReplay> log;
        try
        {
            log.emplace(LogReplay::open(path));
        }
        catch (const Error &e)
        {
            return report(e, exit_config);
        }
        try
        {
            const auto start = std::chrono::steady_clock::now();
            for (std::size_t k = 0; k < log->size(); ++k)
            {
                const auto s = log->seek(k);
                if (speed > 0.0)
                    std::this_thread::sleep_until(start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                              std::chrono::duration<double>(s.sim_time / speed)));
                std::string line = fmt::format("frame {} t={:.2f}", s.frame, s.sim_time);
                for (const auto &v : s.vehicles)
                    line += fmt::format(" | vehicle {} ({:.2f}, {:.2f}) v={:.2f} ehmi={}", v.id.value, v.transform.position.x(), v.transform.position.y(), v.speed,
                                        to_string(v.ehmi.mode));
                for (const auto &w : s.walkers)
                    line += fmt::format(" | walker {} ({:.2f}, {:.2f}) v={:.2f}", w.id.value, w.transform.position.x(), w.transform.position.y(), w.speed);
                for (const auto &e : s.events)
                    line += fmt::format(" | event {}", to_string(e.kind));
                std::cout << line << "\n";
            }
        }
        catch (const Error &e)
        {
            return report(e, exit_config);
        }
        return exit_ok;
    }

    int cmd_export(const std::string &log_path, const std::string &sensors, const std::string &out)
    {
        try
        {
            const auto log = LogReplay::open(log_path);
            const auto specs = parse_sensor_configs(read_file(sensors, "sensor config"));
            const auto manifest = export_frames(log, specs, out);
            std::cout << fmt::format("exported {} files for {} frames to {}\n", manifest.files.size(), manifest.frames, out);
        }
        catch (const Error &e)
        {
            return report(e, e.code() == Errc::dangling_reference ? exit_runtime : exit_config);
        }
        return exit_ok;
    }

    int cmd_score(const std::string &csv)
    {
        try
        {
            const auto rows = parse_presence_csv(read_file(csv, "responses"));
            std::cout << render_report(score_presence(rows));
        }
        catch (const Error &e)
        {
            return report(e, exit_config);
        }
        return exit_ok;
    }
} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"rail: pedestrian-vehicle interaction simulator"};
    app.require_subcommand(1);

    std::string map_path, mode = "lockstep", www, responses;
    unsigned short port = default_port(), ws_port = 2001;
    double dt = 0.05;
    auto *serve = app.add_subcommand("serve", "serve the world over TCP and web sockets");
    serve->add_option("--map", map_path, "scene (.json) or OpenDRIVE subset (.xodr)");
    serve->add_option("--mode", mode, "lockstep or realtime")->check(CLI::IsMember({"lockstep", "realtime"}));
    serve->add_option("--port", port, "TCP port (default $RAIL_PORT or 2000)");
    serve->add_option("--ws-port", ws_port, "web-socket and static file port");
    serve->add_option("--www", www, "directory of static UI assets");
    serve->add_option("--responses", responses, "append questionnaire CSV posted to /api/responses here");
    serve->add_option("--dt", dt, "fixed step in seconds")->check(CLI::PositiveNumber);

    std::string scenario, out_log;
    bool quiet = false;
    auto *run = app.add_subcommand("run", "run a scenario headless and record it");
    run->add_option("--scenario", scenario, "scenario config")->required();
    run->add_option("--out", out_log, "log file to write");
    run->add_flag("--quiet", quiet, "print the summary only on failure");

    std::string log_path;
    double speed = 1.0;
    auto *replay = app.add_subcommand("replay", "play a recorded log");
    replay->add_option("--log", log_path, "recorded log")->required();
    replay->add_option("--speed", speed, "playback rate; 0 plays as fast as possible")->check(CLI::NonNegativeNumber);

    std::string sensors, out_dir;
    auto *exp = app.add_subcommand("export", "render sensor frames from a log");
    exp->add_option("--log", log_path, "recorded log")->required();
    exp->add_option("--sensors", sensors, "sensor config")->required();
    exp->add_option("--out", out_dir, "output directory")->required();

    std::string csv;
    auto *score = app.add_subcommand("score", "score presence questionnaire responses");
    score->add_option("--responses", csv, "CSV: subject_id,subscale,item,rating")->required();

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError &e)
    {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : exit_config;
    }

    if (*serve)
        return cmd_serve(map_path, mode, port, ws_port, www, responses, dt);
    if (*run)
        return cmd_run(scenario, out_log, quiet);
    if (*replay)
        return cmd_replay(log_path, speed);
    if (*exp)
        return cmd_export(log_path, sensors, out_dir);
    return cmd_score(csv);
}
