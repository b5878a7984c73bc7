// SPDX-License-Identifier: Apache-2.0
//
// BVH (Biovision Hierarchy) motion clips: parsing, export and forward
// kinematics.
#pragma once

#include "rail/error.hpp"
#include "rail/geometry.hpp"

#include <fmt/format.h>

#include <charconv>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace rail
{
    enum class Channel : std::uint8_t
    {
        Xposition,
        Yposition,
        Zposition,
        Xrotation,
        Yrotation,
        Zrotation,
    };

    inline constexpr std::string_view to_string(Channel c)
    {
        switch (c)
        {
        case Channel::Xposition: return "Xposition";
        case Channel::Yposition: return "Yposition";
        case Channel::Zposition: return "Zposition";
        case Channel::Xrotation: return "Xrotation";
        case Channel::Yrotation: return "Yrotation";
        case Channel::Zrotation: return "Zrotation";
        }
        return "";
    }

    inline std::optional<Channel> channel_from_string(std::string_view s)
    {
        for (int i = 0; i < 6; ++i)
            if (to_string(static_cast<Channel>(i)) == s)
                return static_cast<Channel>(i);
        return std::nullopt;
    }

    inline bool is_rotation(Channel c) { return c >= Channel::Xrotation; }

    struct BvhJoint
    {
        std::string name;
        std::optional<std::size_t> parent;
        Vec3 offset = Vec3::Zero(); // file units
        std::vector<Channel> channels;
        std::optional<Vec3> end_site; // file units
        std::size_t first_channel = 0; // column of channels[0] in a frame row

        bool operator==(const BvhJoint &) const = default;
    };

    /// Joints in file (pre-)order; a parent always precedes its children.
    using BvhHierarchy = std::vector<BvhJoint>;

    struct BvhClip
    {
        BvhHierarchy joints;
        std::vector<double> frames; // row-major, frame_count() x channel_count()
        std::size_t channels = 0;
        double frame_time = 1.0 / 30.0;
        double unit_scale = 100.0; // file units per meter

        std::size_t channel_count() const { return channels; }
        std::size_t frame_count() const { return channels ? frames.size() / channels : 0; }
        double sample_rate() const { return 1.0 / frame_time; }
        double duration() const { return frame_time * static_cast<double>(frame_count()); }

        std::span<const double> row(std::size_t f) const { return {frames.data() + f * channels, channels}; }
        std::span<double> row(std::size_t f) { return {frames.data() + f * channels, channels}; }

        std::optional<std::size_t> find(std::string_view name) const
        {
            for (std::size_t i = 0; i < joints.size(); ++i)
                if (joints[i].name == name)
                    return i;
            return std::nullopt;
        }
    };

    /// Recomputes first_channel for every joint and returns the total count.
    inline std::size_t assign_channel_columns(BvhHierarchy &joints)
    {
        std::size_t col = 0;
        for (auto &j : joints)
        {
            j.first_channel = col;
            col += j.channels.size();
        }
        return col;
    }

    namespace detail
    {
        struct BvhToken
        {
            std::string_view text;
            long line = 0;
        };

        class BvhLexer
        {
        public:
            explicit BvhLexer(std::string_view src) : src_(src) {}

            std::optional<BvhToken> next()
            {
                skip_ws();
                if (pos_ >= src_.size())
                    return std::nullopt;
                const std::size_t start = pos_;
                if (src_[pos_] == '{' || src_[pos_] == '}')
                    ++pos_;
                else
                    while (pos_ < src_.size() && !std::isspace(static_cast<unsigned char>(src_[pos_])) && src_[pos_] != '{' && src_[pos_] != '}')
                        ++pos_;
                return BvhToken{src_.substr(start, pos_ - start), line_};
            }

            BvhToken expect(const char *what)
            {
                auto t = next();
                if (!t)
                    throw Error(Errc::syntax, std::string("BVH: unexpected end of input, expected ") + what, line_);
                return *t;
            }

            /// Remaining text starting at the next line.
            std::string_view rest_of_line()
            {
                const std::size_t start = pos_;
                while (pos_ < src_.size() && src_[pos_] != '\n')
                    ++pos_;
                return src_.substr(start, pos_ - start);
            }

            std::string_view remainder() const { return src_.substr(pos_); }
            long line() const { return line_; }

        private:
            void skip_ws()
            {
                while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_])))
                {
                    if (src_[pos_] == '\n')
                        ++line_;
                    ++pos_;
                }
            }

            std::string_view src_;
            std::size_t pos_ = 0;
            long line_ = 1;
        };

        inline double parse_number(std::string_view tok, long line, const char *what)
        {
            double v = 0.0;
            const char *b = tok.data();
            const char *e = tok.data() + tok.size();
            if (!tok.empty() && *b == '+')
                ++b;
            auto [p, ec] = std::from_chars(b, e, v);
            if (ec != std::errc{} || p != e || !std::isfinite(v))
                throw Error(Errc::syntax, fmt::format("BVH: expected a number for {}, got '{}'", what, tok), line);
            return v;
        }

        inline Vec3 parse_offset(BvhLexer &lex)
        {
            Vec3 v;
            for (int i = 0; i < 3; ++i)
            {
                const auto t = lex.expect("OFFSET value");
                v[i] = parse_number(t.text, t.line, "OFFSET");
            }
            return v;
        }

        inline void parse_joint_body(BvhLexer &lex, BvhHierarchy &joints, std::size_t self)
        {
            const auto open = lex.expect("'{'");
            if (open.text != "{")
                throw Error(Errc::syntax, fmt::format("BVH: expected '{{' after joint name, got '{}'", open.text), open.line);
            for (;;)
            {
                const auto t = lex.expect("'}'");
                if (t.text == "}")
                    return;
                if (t.text == "OFFSET")
                {
                    joints[self].offset = parse_offset(lex);
                }
                else if (t.text == "CHANNELS")
                {
                    const auto n = lex.expect("channel count");
                    const double count = parse_number(n.text, n.line, "CHANNELS count");
                    if (count < 0 || count > 6 || count != std::floor(count))
                        throw Error(Errc::syntax, "BVH: channel count must be 0..6", n.line);
                    joints[self].channels.clear();
                    for (int i = 0; i < static_cast<int>(count); ++i)
                    {
                        const auto c = lex.expect("channel name");
                        const auto ch = channel_from_string(c.text);
                        if (!ch)
                            throw Error(Errc::unknown_keyword, fmt::format("BVH: unknown channel '{}'", c.text), c.line);
                        joints[self].channels.push_back(*ch);
                    }
                }
                else if (t.text == "JOINT")
                {
                    const auto name = lex.expect("joint name");
                    joints.push_back(BvhJoint{std::string(name.text), self, Vec3::Zero(), {}, std::nullopt, 0});
                    parse_joint_body(lex, joints, joints.size() - 1);
                }
                else if (t.text == "End")
                {
                    const auto site = lex.expect("Site");
                    if (site.text != "Site")
                        throw Error(Errc::unknown_keyword, fmt::format("BVH: unknown keyword 'End {}'", site.text), site.line);
                    const auto o = lex.expect("'{'");
                    if (o.text != "{")
                        throw Error(Errc::syntax, "BVH: expected '{' after End Site", o.line);
                    const auto kw = lex.expect("OFFSET");
                    if (kw.text != "OFFSET")
                        throw Error(Errc::unknown_keyword, fmt::format("BVH: unknown keyword '{}' in End Site", kw.text), kw.line);
                    joints[self].end_site = parse_offset(lex);
                    const auto c = lex.expect("'}'");
                    if (c.text != "}")
                        throw Error(Errc::syntax, "BVH: expected '}' closing End Site", c.line);
                }
                else if (t.text == "ROOT")
                {
                    throw Error(Errc::syntax, "BVH: nested ROOT (exactly one root allowed)", t.line);
                }
                else
                {
                    throw Error(Errc::unknown_keyword, fmt::format("BVH: unknown keyword '{}'", t.text), t.line);
                }
            }
        }
    } // namespace detail

    /// Parses HIERARCHY + MOTION text. Rotations stay in degrees and positions
    /// in file units; `unit_scale` converts file units to meters at FK time.
    inline BvhClip parse_bvh(std::string_view text, double unit_scale = 100.0)
    {
        if (!(unit_scale > 0.0))
            throw Error(Errc::invalid_value, "BVH: unit_scale must be > 0");
        detail::BvhLexer lex(text);
        BvhClip clip;
        clip.unit_scale = unit_scale;

        const auto head = lex.expect("HIERARCHY");
        if (head.text != "HIERARCHY")
            throw Error(Errc::unknown_keyword, fmt::format("BVH: expected HIERARCHY, got '{}'", head.text), head.line);
        const auto root = lex.expect("ROOT");
        if (root.text != "ROOT")
            throw Error(Errc::unknown_keyword, fmt::format("BVH: expected ROOT, got '{}'", root.text), root.line);
        const auto root_name = lex.expect("root name");
        clip.joints.push_back(BvhJoint{std::string(root_name.text), std::nullopt, Vec3::Zero(), {}, std::nullopt, 0});
        detail::parse_joint_body(lex, clip.joints, 0);
        clip.channels = assign_channel_columns(clip.joints);

        const auto motion = lex.expect("MOTION");
        if (motion.text == "ROOT")
            throw Error(Errc::syntax, "BVH: more than one ROOT (exactly one root allowed)", motion.line);
        if (motion.text != "MOTION")
            throw Error(Errc::unknown_keyword, fmt::format("BVH: unknown keyword '{}'", motion.text), motion.line);
        const auto frames_kw = lex.expect("Frames:");
        if (frames_kw.text != "Frames:")
            throw Error(Errc::unknown_keyword, fmt::format("BVH: expected 'Frames:', got '{}'", frames_kw.text), frames_kw.line);
        const auto fcount_tok = lex.expect("frame count");
        const double fcount = detail::parse_number(fcount_tok.text, fcount_tok.line, "Frames");
        if (fcount < 0 || fcount != std::floor(fcount))
            throw Error(Errc::syntax, "BVH: frame count must be a non-negative integer", fcount_tok.line);
        const auto ft1 = lex.expect("Frame Time:");
        const auto ft2 = lex.expect("Frame Time:");
        if (ft1.text != "Frame" || ft2.text != "Time:")
            throw Error(Errc::unknown_keyword, fmt::format("BVH: expected 'Frame Time:', got '{} {}'", ft1.text, ft2.text), ft1.line);
        const auto ft = lex.expect("frame time");
        clip.frame_time = detail::parse_number(ft.text, ft.line, "Frame Time");
        if (!(clip.frame_time > 0.0))
            throw Error(Errc::invalid_value, "BVH: Frame Time must be > 0", ft.line);
        lex.rest_of_line();

        // One frame per non-empty line.
        const long first_line = lex.line() + 1;
        std::string_view rest = lex.remainder();
        if (!rest.empty() && rest.front() == '\n')
            rest.remove_prefix(1);
        const auto expected = static_cast<std::size_t>(fcount);
        clip.frames.reserve(expected * clip.channels);
        std::size_t rows = 0;
        long line = first_line;
        while (!rest.empty())
        {
            const std::size_t nl = rest.find('\n');
            std::string_view ln = rest.substr(0, nl);
            rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
            std::size_t values = 0;
            std::size_t i = 0;
            while (i < ln.size())
            {
                while (i < ln.size() && std::isspace(static_cast<unsigned char>(ln[i])))
                    ++i;
                if (i >= ln.size())
                    break;
                std::size_t j = i;
                while (j < ln.size() && !std::isspace(static_cast<unsigned char>(ln[j])))
                    ++j;
                clip.frames.push_back(detail::parse_number(ln.substr(i, j - i), line, "frame value"));
                ++values;
                i = j;
            }
            if (values != 0)
            {
                if (values != clip.channels)
                    throw Error(Errc::count_mismatch, fmt::format("BVH: frame row {} has {} values, expected {}", rows, values, clip.channels), line);
                ++rows;
            }
            ++line;
        }
        if (rows != expected)
            throw Error(Errc::count_mismatch, fmt::format("BVH: declared {} frames but found {} rows", expected, rows));
        return clip;
    }

    /// Writes a BVH document. Values use six decimals; the frame time keeps
    /// full precision.
    inline std::string export_bvh(const BvhHierarchy &hierarchy, std::span<const std::vector<double>> rows, double frame_time)
    {
        if (rows.empty())
            throw Error(Errc::empty_input, "BVH export: no frames");
        if (hierarchy.empty())
            throw Error(Errc::empty_input, "BVH export: empty hierarchy");
        if (!(frame_time > 0.0))
            throw Error(Errc::invalid_value, "BVH export: frame_time must be > 0");
        std::size_t channels = 0;
        for (const auto &j : hierarchy)
            channels += j.channels.size();
        for (std::size_t r = 0; r < rows.size(); ++r)
            if (rows[r].size() != channels)
                throw Error(Errc::count_mismatch, fmt::format("BVH export: row {} has {} values, expected {}", r, rows[r].size(), channels));

        std::string out = "HIERARCHY\n";
        auto emit = [&](auto &&self, std::size_t j, int depth) -> void {
            const std::string ind(static_cast<std::size_t>(depth), '\t');
            const auto &jt = hierarchy[j];
            out += fmt::format("{}{} {}\n{}{{\n", ind, jt.parent ? "JOINT" : "ROOT", jt.name, ind);
            out += fmt::format("{}\tOFFSET {:.6f} {:.6f} {:.6f}\n", ind, jt.offset.x(), jt.offset.y(), jt.offset.z());
            out += fmt::format("{}\tCHANNELS {}", ind, jt.channels.size());
            for (auto c : jt.channels)
                out += fmt::format(" {}", to_string(c));
            out += "\n";
            for (std::size_t k = j + 1; k < hierarchy.size(); ++k)
                if (hierarchy[k].parent == j)
                    self(self, k, depth + 1);
            if (jt.end_site)
                out += fmt::format("{0}\tEnd Site\n{0}\t{{\n{0}\t\tOFFSET {1:.6f} {2:.6f} {3:.6f}\n{0}\t}}\n", ind, jt.end_site->x(), jt.end_site->y(), jt.end_site->z());
            out += fmt::format("{}}}\n", ind);
        };
        emit(emit, 0, 0);
        out += fmt::format("MOTION\nFrames: {}\nFrame Time: {}\n", rows.size(), frame_time);
        for (const auto &row : rows)
        {
            for (std::size_t i = 0; i < row.size(); ++i)
            {
                if (i)
                    out += ' ';
                // Avoid "-0.000000" so identity frames print as zeros.
                const double v = std::abs(row[i]) < 5e-7 ? 0.0 : row[i];
                out += fmt::format("{:.6f}", v);
            }
            out += '\n';
        }
        return out;
    }

    inline std::string export_bvh(const BvhClip &clip)
    {
        std::vector<std::vector<double>> rows;
        rows.reserve(clip.frame_count());
        for (std::size_t f = 0; f < clip.frame_count(); ++f)
        {
            const auto r = clip.row(f);
            rows.emplace_back(r.begin(), r.end());
        }
        return export_bvh(clip.joints, rows, clip.frame_time);
    }

    // ---------------------------------------------------------------- kinematics

    struct JointTransform
    {
        Vec3 position = Vec3::Zero();
        Quat orientation = Quat::Identity();

        friend bool operator==(const JointTransform &a, const JointTransform &b)
        {
            return a.position == b.position && a.orientation.coeffs() == b.orientation.coeffs();
        }

        Eigen::Isometry3d isometry() const
        {
            Eigen::Isometry3d iso = Eigen::Isometry3d::Identity();
            iso.linear() = orientation.toRotationMatrix();
            iso.translation() = position;
            return iso;
        }
    };

    /// World transforms of every joint, indexed like the clip hierarchy.
    struct SkeletonPose
    {
        std::vector<JointTransform> joints;
        bool operator==(const SkeletonPose &) const = default;

        bool finite() const
        {
            for (const auto &j : joints)
                if (!j.position.allFinite() || !j.orientation.coeffs().allFinite())
                    return false;
            return true;
        }
    };

    /// Local transform of one joint for the given frame row:
    /// translation(offset + position channels) * R(rotation channels in listed order).
    inline Eigen::Isometry3d joint_local(const BvhJoint &j, std::span<const double> row, double unit_scale)
    {
        Vec3 t = j.offset;
        Mat3 r = Mat3::Identity();
        for (std::size_t c = 0; c < j.channels.size(); ++c)
        {
            const double v = row[j.first_channel + c];
            switch (j.channels[c])
            {
            case Channel::Xposition: t.x() += v; break;
            case Channel::Yposition: t.y() += v; break;
            case Channel::Zposition: t.z() += v; break;
            case Channel::Xrotation: r = r * rot_x(deg2rad(v)); break;
            case Channel::Yrotation: r = r * rot_y(deg2rad(v)); break;
            case Channel::Zrotation: r = r * rot_z(deg2rad(v)); break;
            }
        }
        Eigen::Isometry3d iso = Eigen::Isometry3d::Identity();
        iso.linear() = r;
        iso.translation() = t / unit_scale;
        return iso;
    }

    /// World pose of `frame`; the root's parent is `root`.
    inline SkeletonPose fk(const BvhClip &clip, std::size_t frame, const Eigen::Isometry3d &root = Eigen::Isometry3d::Identity())
    {
        if (frame >= clip.frame_count())
            throw Error(Errc::out_of_range, fmt::format("fk: frame {} out of range (clip has {})", frame, clip.frame_count()));
        const auto row = clip.row(frame);
        std::vector<Eigen::Isometry3d> world(clip.joints.size());
        SkeletonPose pose;
        pose.joints.resize(clip.joints.size());
        for (std::size_t i = 0; i < clip.joints.size(); ++i)
        {
            const auto &j = clip.joints[i];
            const Eigen::Isometry3d &parent = j.parent ? world[*j.parent] : root;
            world[i] = parent * joint_local(j, row, clip.unit_scale);
            pose.joints[i].position = world[i].translation();
            pose.joints[i].orientation = Quat(world[i].linear()).normalized();
        }
        return pose;
    }

    /// Basis change taking a Y-up, Z-forward file frame into the world frame
    /// (file z -> world x, file x -> world y, file y -> world z).
    inline Mat3 y_up_to_world()
    {
        Mat3 m;
        m << 0, 0, 1,
            1, 0, 0,
            0, 1, 0;
        return m;
    }
} // namespace rail
