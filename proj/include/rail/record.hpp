// SPDX-License-Identifier: Apache-2.0
//
// JSON-lines run logs: one header line, then one snapshot per line.
// Replay restores recorded state; it never re-simulates.
#pragma once

#include "rail/codec.hpp"
#include "rail/error.hpp"
#include "rail/sensor_io.hpp"
#include "rail/sensors.hpp"
#include "rail/world.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace rail
{
    inline constexpr int log_format_version = 1;

    struct LogHeader
    {
        int format_version = log_format_version;
        std::string map; // reference to the map source
        double dt = 0.05;
        std::uint64_t seed = 0;
        SkeletonInfo skeleton;

        bool operator==(const LogHeader &) const = default;
    };

    inline nlohmann::json header_to_json(const LogHeader &h)
    {
        return {{"format_version", h.format_version}, {"map", h.map}, {"dt", h.dt}, {"seed", h.seed}, {"joints", h.skeleton.names}, {"joint_parents", h.skeleton.parents}};
    }

    inline LogHeader header_from_json(const nlohmann::json &j)
    {
        const std::string what = "log header";
        detail::require_object(j, what);
        LogHeader h;
        h.format_version = detail::field<int>(j, "format_version", what);
        if (h.format_version != log_format_version)
            throw Error(Errc::unsupported_element, fmt::format("log format_version {} is not supported", h.format_version), 1);
        h.map = detail::field<std::string>(j, "map", what);
        h.dt = detail::field<double>(j, "dt", what);
        h.seed = detail::field<std::uint64_t>(j, "seed", what);
        h.skeleton.names = detail::field<std::vector<std::string>>(j, "joints", what);
        h.skeleton.parents = detail::field<std::vector<int>>(j, "joint_parents", what);
        if (h.skeleton.names.size() != h.skeleton.parents.size())
            throw Error(Errc::count_mismatch, "log header: joints and joint_parents differ in length", 1);
        return h;
    }

    inline std::string encode_log_line(const nlohmann::json &j) { return j.dump() + "\n"; }

    namespace detail
    {
        inline void check_joint_counts(const LogHeader &h, const WorldSnapshot &s)
        {
            for (const auto &w : s.walkers)
                if (w.pose && w.pose->joints.size() != h.skeleton.names.size())
                    throw Error(Errc::count_mismatch, fmt::format("frame {}: walker {} has {} joints, header lists {}", s.frame, w.id.value,
                                                                  w.pose->joints.size(), h.skeleton.names.size()));
        }
    } // namespace detail

    /// In-memory log.
    struct RecordLog
    {
        LogHeader header;
        std::vector<WorldSnapshot> frames;
    };

    /// Appends a snapshot; frames must arrive as 0, 1, 2, ...
    inline void record_tick(RecordLog &log, const WorldSnapshot &snap)
    {
        if (snap.frame != log.frames.size())
            throw Error(Errc::out_of_order, fmt::format("record: expected frame {}, got {}", log.frames.size(), snap.frame));
        detail::check_joint_counts(log.header, snap);
        log.frames.push_back(snap);
    }

    inline std::string serialize_log(const RecordLog &log)
    {
        std::string out = encode_log_line(header_to_json(log.header));
        for (const auto &f : log.frames)
            out += encode_log_line(snapshot_to_json(f));
        return out;
    }

    /// Streams a log to an ostream as ticks complete.
    class LogWriter
    {
    public:
        LogWriter(std::ostream &out, LogHeader header) : out_(out), header_(std::move(header))
        {
            out_ << encode_log_line(header_to_json(header_));
        }

        void write(const WorldSnapshot &snap)
        {
            if (snap.frame != next_)
                throw Error(Errc::out_of_order, fmt::format("record: expected frame {}, got {}", next_, snap.frame));
            detail::check_joint_counts(header_, snap);
            out_ << encode_log_line(snapshot_to_json(snap));
            if (!out_)
                throw Error(Errc::io, "record: write failed");
            ++next_;
        }

        std::uint64_t frames() const { return next_; }
        const LogHeader &header() const { return header_; }

    private:
        std::ostream &out_;
        LogHeader header_;
        std::uint64_t next_ = 0;
    };

    /// Random-access view over a serialized log. Lines are validated for
    /// completeness on load and decoded on demand.
    class LogReplay
    {
    public:
        explicit LogReplay(std::string text) : text_(std::move(text))
        {
            if (text_.empty())
                throw Error(Errc::empty_input, "log is empty");
            std::size_t pos = 0;
            std::vector<std::pair<std::size_t, std::size_t>> lines;
            while (pos < text_.size())
            {
                const std::size_t nl = text_.find('\n', pos);
                if (nl == std::string::npos)
                {
                    lines.emplace_back(pos, std::string::npos);
                    break;
                }
                lines.emplace_back(pos, nl - pos);
                pos = nl + 1;
            }
            auto truncated = [&](std::size_t complete_frames) {
                const std::string last = complete_frames == 0 ? "no complete frame" : fmt::format("last complete frame is {}", complete_frames - 1);
                return Error(Errc::truncated, fmt::format("log truncated: {}", last), static_cast<long>(complete_frames + 2));
            };
            if (lines.front().second == std::string::npos)
                throw Error(Errc::truncated, "log truncated inside the header", 1);
            try
            {
                header_ = header_from_json(nlohmann::json::parse(line(lines.front())));
            }
            catch (const nlohmann::json::exception &e)
            {
                throw Error(Errc::syntax, fmt::format("log header: {}", e.what()), 1);
            }
            for (std::size_t i = 1; i < lines.size(); ++i)
            {
                const bool last = i + 1 == lines.size();
                if (lines[i].second == std::string::npos)
                    throw truncated(frames_.size());
                if (!nlohmann::json::accept(line(lines[i])))
                {
                    if (last)
                        throw truncated(frames_.size());
                    throw Error(Errc::syntax, fmt::format("log line {} is not a valid record", i + 1), static_cast<long>(i + 1));
                }
                frames_.push_back(lines[i]);
            }
        }

        static LogReplay open(const std::filesystem::path &path)
        {
            std::ifstream in(path, std::ios::binary);
            if (!in)
                throw Error(Errc::io, fmt::format("cannot open log '{}'", path.string()));
            return LogReplay(std::string(std::istreambuf_iterator<char>(in), {}));
        }

        const LogHeader &header() const { return header_; }
        std::size_t size() const { return frames_.size(); }

        /// Snapshot k; the stored frame index must equal k.
        WorldSnapshot seek(std::size_t k) const
        {
            if (k >= frames_.size())
                throw Error(Errc::out_of_range, fmt::format("seek: frame {} not in log of {} frames", k, frames_.size()));
            WorldSnapshot s;
            try
            {
                s = snapshot_from_json(nlohmann::json::parse(line(frames_[k])));
            }
            catch (const nlohmann::json::exception &e)
            {
                throw Error(Errc::syntax, fmt::format("frame {}: {}", k, e.what()), static_cast<long>(k + 2));
            }
            if (s.frame != k)
                throw Error(Errc::out_of_order, fmt::format("log line {} holds frame {}, expected {}", k + 2, s.frame, k), static_cast<long>(k + 2));
            return s;
        }

        RecordLog load() const
        {
            RecordLog log{header_, {}};
            log.frames.reserve(frames_.size());
            for (std::size_t k = 0; k < frames_.size(); ++k)
                log.frames.push_back(seek(k));
            return log;
        }

    private:
        std::string_view line(std::pair<std::size_t, std::size_t> l) const
        {
            return std::string_view(text_).substr(l.first, l.second == std::string::npos ? std::string_view::npos : l.second);
        }

        std::string text_;
        LogHeader header_;
        std::vector<std::pair<std::size_t, std::size_t>> frames_;
    };

    inline std::vector<WorldSnapshot> replay(const std::string &text) { return LogReplay(text).load().frames; }

    // ----------------------------------------------------------------- export

    inline std::string write_ply(const PointCloud &pc)
    {
        std::string out = fmt::format("ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n"
                                      "property uchar label\nproperty uint actor_id\nend_header\n",
                                      pc.points.size());
        for (const auto &p : pc.points)
            out += fmt::format("{:.6f} {:.6f} {:.6f} {} {}\n", p.position.x(), p.position.y(), p.position.z(), static_cast<int>(p.label), p.actor.value);
        return out;
    }

    /// 16-bit binary PGM, big-endian, depth in millimeters clamped to 65535.
    inline std::string write_depth_pgm(const CameraFrame &f)
    {
        std::string out = fmt::format("P5\n{} {}\n65535\n", f.width, f.height);
        out.reserve(out.size() + f.depth.size() * 2);
        for (double d : f.depth)
        {
            const double mm = std::clamp(std::round(d * 1000.0), 0.0, 65535.0);
            const auto v = static_cast<std::uint16_t>(mm);
            out.push_back(static_cast<char>(v >> 8));
            out.push_back(static_cast<char>(v & 0xFF));
        }
        return out;
    }

    inline std::string write_ppm(int width, int height, const std::vector<Rgb> &pixels)
    {
        std::string out = fmt::format("P6\n{} {}\n255\n", width, height);
        out.reserve(out.size() + pixels.size() * 3);
        for (const auto &c : pixels)
        {
            out.push_back(static_cast<char>(c.r));
            out.push_back(static_cast<char>(c.g));
            out.push_back(static_cast<char>(c.b));
        }
        return out;
    }

    inline std::string write_segmentation_ppm(const CameraFrame &f)
    {
        std::vector<Rgb> px;
        px.reserve(f.labels.size());
        for (auto l : f.labels)
            px.push_back(palette(l));
        return write_ppm(f.width, f.height, px);
    }

    struct ExportedFile
    {
        std::string sensor;
        std::uint64_t frame = 0;
        std::string path; // relative to the output directory
        std::size_t elements = 0; // points for PLY, pixels otherwise
    };

    struct ExportManifest
    {
        std::vector<ExportedFile> files;
        std::size_t frames = 0;
    };

    /// Rebuilds each frame's sensing scene from the stored state and writes
    /// one file per sensor output plus manifest.json.
    inline ExportManifest export_frames(const LogReplay &log, const std::vector<SensorSpec> &sensors, const std::filesystem::path &dir)
    {
        for (const auto &s : sensors)
            s.validate();
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec || !std::filesystem::is_directory(dir))
            throw Error(Errc::io, fmt::format("export: cannot create directory '{}'", dir.string()));

        const auto &sk = log.header().skeleton;
        const AvatarRig rig = AvatarRig::for_hierarchy(sk.names, sk.parents);
        ExportManifest manifest;
        manifest.frames = log.size();

        auto write_file = [&](const std::string &sensor, std::uint64_t frame, const std::string &ext, const std::string &bytes, std::size_t elements) {
            const std::string name = fmt::format("{}_{:06}.{}", sensor, frame, ext);
            std::ofstream out(dir / name, std::ios::binary);
            out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
            if (!out)
                throw Error(Errc::io, fmt::format("export: cannot write '{}'", (dir / name).string()));
            manifest.files.push_back({sensor, frame, name, elements});
        };

        for (std::size_t k = 0; k < log.size(); ++k)
        {
            const WorldSnapshot snap = log.seek(k);
            for (const auto &s : sensors)
            {
                std::optional<ActorId> exclude;
                if (s.attach && snap.vehicle(*s.attach))
                    exclude = s.attach;
                const SensingScene scene = build_sensing_scene(snap, rig, exclude);
                const Transform pose = sensor_pose(snap, s);
                if (s.kind == SensorKind::lidar)
                {
                    LidarConfig cfg = s.lidar;
                    cfg.noise_seed = cfg.noise_seed ^ snap.frame; // per-frame noise, still reproducible
                    const auto pc = lidar_scan(cfg, pose, scene);
                    write_file(s.id, snap.frame, "ply", write_ply(pc), pc.points.size());
                }
                else
                {
                    const auto f = render_camera(s.camera, pose, scene);
                    const auto pixels = static_cast<std::size_t>(f.width) * f.height;
                    for (const auto &o : s.outputs)
                    {
                        if (o == "depth")
                            write_file(s.id + "-depth", snap.frame, "pgm", write_depth_pgm(f), pixels);
                        else if (o == "segmentation")
                            write_file(s.id + "-segmentation", snap.frame, "ppm", write_segmentation_ppm(f), pixels);
                        else
                            write_file(s.id + "-rgb", snap.frame, "ppm", write_ppm(f.width, f.height, f.rgb), pixels);
                    }
                }
            }
        }

        nlohmann::json files = nlohmann::json::array();
        for (const auto &f : manifest.files)
            files.push_back({{"sensor", f.sensor}, {"frame", f.frame}, {"path", f.path}, {"elements", f.elements}});
        nlohmann::json specs = nlohmann::json::array();
        for (const auto &s : sensors)
            specs.push_back(sensor_spec_to_json(s));
        const nlohmann::json doc{{"frames", manifest.frames}, {"sensors", specs}, {"files", files}};
        std::ofstream out(dir / "manifest.json", std::ios::binary);
        out << doc.dump(2) << "\n";
        if (!out)
            throw Error(Errc::io, "export: cannot write manifest.json");
        return manifest;
    }
} // namespace rail
