// SPDX-License-Identifier: Apache-2.0
//
// Road layouts: the JSON scene format (primary source) and a line-geometry
// subset of OpenDRIVE, loaded into an immutable RoadMap.
#pragma once

#include "rail/error.hpp"
#include "rail/geometry.hpp"

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace rail
{
    struct RoadSegment
    {
        int id = 0;
        Polyline centerline;
        double lane_width = 3.5;
        int lanes_forward = 1;
        int lanes_backward = 1;
        double speed_limit = 13.89;

        bool operator==(const RoadSegment &) const = default;

        double half_width_right() const { return lane_width * lanes_forward; }
        double half_width_left() const { return lane_width * lanes_backward; }
    };

    struct StopLine
    {
        Vec2 a = Vec2::Zero();
        Vec2 b = Vec2::Zero();
        bool operator==(const StopLine &) const = default;
    };

    struct Crosswalk
    {
        int id = 0;
        int segment = 0;
        std::vector<Vec2> polygon;
        std::vector<StopLine> stop_lines;
        bool operator==(const Crosswalk &) const = default;
    };

    enum class LightPhase
    {
        red,
        green,
        amber,
    };

    inline const char *to_string(LightPhase p)
    {
        switch (p)
        {
        case LightPhase::red: return "red";
        case LightPhase::green: return "green";
        case LightPhase::amber: return "amber";
        }
        return "red";
    }

    inline std::optional<LightPhase> light_phase_from_string(std::string_view s)
    {
        if (s == "red")
            return LightPhase::red;
        if (s == "green")
            return LightPhase::green;
        if (s == "amber")
            return LightPhase::amber;
        return std::nullopt;
    }

    struct TrafficLightSpec
    {
        int id = 0;
        Vec2 position = Vec2::Zero();
        StopLine stop_line;
        double red = 10.0;
        double green = 10.0;
        double amber = 3.0;
        LightPhase initial = LightPhase::red;
        /// Seconds already elapsed in the initial phase.
        double offset = 0.0;
        bool operator==(const TrafficLightSpec &) const = default;
    };

    struct RoadMap
    {
        std::vector<RoadSegment> segments;
        std::vector<Crosswalk> crosswalks;
        std::vector<TrafficLightSpec> lights;
        std::vector<Transform> spawn_points;

        bool operator==(const RoadMap &) const = default;

        const RoadSegment *segment(int id) const
        {
            for (const auto &s : segments)
                if (s.id == id)
                    return &s;
            return nullptr;
        }

        const Crosswalk *crosswalk(int id) const
        {
            for (const auto &c : crosswalks)
                if (c.id == id)
                    return &c;
            return nullptr;
        }

        /// Segment whose paved area contains p, nearest centerline first.
        const RoadSegment *segment_at(const Vec2 &p) const
        {
            const RoadSegment *best = nullptr;
            double best_d = std::numeric_limits<double>::infinity();
            for (const auto &s : segments)
            {
                const auto proj = project_onto(s.centerline, p);
                const double side = cross2(tangent_at(s.centerline, proj.s), p - proj.point);
                const double limit = side >= 0.0 ? s.half_width_left() : s.half_width_right();
                if (proj.distance <= limit + 1e-9 && proj.distance < best_d)
                {
                    best = &s;
                    best_d = proj.distance;
                }
            }
            return best;
        }

        /// Axis-aligned bounds of every map feature: {min, max}.
        std::pair<Vec2, Vec2> bounds() const
        {
            Vec2 lo = Vec2::Constant(std::numeric_limits<double>::infinity());
            Vec2 hi = -lo;
            auto grow = [&](const Vec2 &p) {
                lo = lo.cwiseMin(p);
                hi = hi.cwiseMax(p);
            };
            for (const auto &s : segments)
                for (const auto &p : s.centerline)
                    grow(p);
            for (const auto &c : crosswalks)
                for (const auto &p : c.polygon)
                    grow(p);
            for (const auto &l : lights)
                grow(l.position);
            for (const auto &t : spawn_points)
                grow(xy(t.position));
            if (!lo.allFinite())
                return {Vec2::Zero(), Vec2::Zero()};
            return {lo, hi};
        }
    };

    /// Checks every RoadMap / RoadSegment / Crosswalk invariant; throws on the first violation.
    inline void validate(const RoadMap &map)
    {
        std::set<int> ids;
        for (const auto &s : map.segments)
        {
            if (!ids.insert(s.id).second)
                throw Error(Errc::duplicate, "duplicate segment id " + std::to_string(s.id));
            if (s.centerline.size() < 2)
                throw Error(Errc::invalid_geometry, "segment " + std::to_string(s.id) + ": centerline needs at least 2 points");
            for (std::size_t i = 1; i < s.centerline.size(); ++i)
                if (s.centerline[i] == s.centerline[i - 1])
                    throw Error(Errc::invalid_geometry, "segment " + std::to_string(s.id) + ": zero-length piece at point " + std::to_string(i));
            if (!(s.lane_width > 0.0))
                throw Error(Errc::invalid_value, "segment " + std::to_string(s.id) + ": lane_width must be > 0");
            if (!(s.speed_limit > 0.0))
                throw Error(Errc::invalid_value, "segment " + std::to_string(s.id) + ": speed_limit must be > 0");
            if (s.lanes_forward < 0 || s.lanes_backward < 0)
                throw Error(Errc::invalid_value, "segment " + std::to_string(s.id) + ": negative lane count");
        }
        std::set<int> cw_ids;
        for (const auto &c : map.crosswalks)
        {
            const std::string tag = "crosswalk " + std::to_string(c.id);
            if (!cw_ids.insert(c.id).second)
                throw Error(Errc::duplicate, "duplicate " + tag);
            if (!ids.contains(c.segment))
                throw Error(Errc::dangling_reference, tag + " references missing segment " + std::to_string(c.segment));
            if (c.polygon.size() < 3 || std::abs(signed_area(c.polygon)) <= 0.0)
                throw Error(Errc::invalid_geometry, tag + ": polygon needs >= 3 vertices and non-zero area");
            if (!is_convex(c.polygon))
                throw Error(Errc::invalid_geometry, tag + ": polygon is not convex");
            const Vec2 ctr = centroid(c.polygon);
            for (const auto &sl : c.stop_lines)
            {
                if ((sl.a - ctr).norm() > 50.0 || (sl.b - ctr).norm() > 50.0)
                    throw Error(Errc::invalid_geometry, tag + ": stop line farther than 50 m from the crossing");
                if (segment_enters_interior(c.polygon, sl.a, sl.b))
                    throw Error(Errc::invalid_geometry, tag + ": stop line intersects the crossing");
            }
        }
        std::set<int> light_ids;
        for (const auto &l : map.lights)
        {
            if (!light_ids.insert(l.id).second)
                throw Error(Errc::duplicate, "duplicate light id " + std::to_string(l.id));
            if (!(l.red > 0.0 && l.green > 0.0 && l.amber > 0.0))
                throw Error(Errc::invalid_value, "light " + std::to_string(l.id) + ": phase durations must be > 0");
        }
    }

    // ------------------------------------------------------------- JSON codec

    namespace detail
    {
        using nlohmann::json;

        inline long line_of(std::string_view text, std::size_t byte)
        {
            byte = std::min(byte, text.size());
            return 1 + static_cast<long>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
        }

        inline Vec2 vec2_from(const json &j, const std::string &what)
        {
            if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
                throw Error(Errc::syntax, what + ": expected [x, y]");
            return {j[0].get<double>(), j[1].get<double>()};
        }

        inline Vec3 vec3_from(const json &j, const std::string &what)
        {
            if (!j.is_array() || j.size() != 3 || !j[0].is_number() || !j[1].is_number() || !j[2].is_number())
                throw Error(Errc::syntax, what + ": expected [x, y, z]");
            return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
        }

        inline json to_json(const Vec2 &v) { return json::array({v.x(), v.y()}); }
        inline json to_json(const Vec3 &v) { return json::array({v.x(), v.y(), v.z()}); }

        template <class T>
        T field(const json &obj, const char *key, const std::string &what)
        {
            if (!obj.contains(key))
                throw Error(Errc::syntax, what + ": missing field \"" + key + "\"");
            try
            {
                return obj.at(key).get<T>();
            }
            catch (const json::exception &)
            {
                throw Error(Errc::syntax, what + ": field \"" + key + "\" has the wrong type");
            }
        }

        template <class T>
        T field_or(const json &obj, const char *key, T fallback, const std::string &what)
        {
            return obj.contains(key) ? field<T>(obj, key, what) : fallback;
        }

        inline void require_object(const json &j, const std::string &what)
        {
            if (!j.is_object())
                throw Error(Errc::syntax, what + ": expected an object");
        }

        inline const json &array_or_empty(const json &obj, const char *key, const std::string &what)
        {
            static const json empty = json::array();
            if (!obj.contains(key))
                return empty;
            const json &a = obj.at(key);
            if (!a.is_array())
                throw Error(Errc::syntax, what + ": \"" + key + "\" must be an array");
            return a;
        }

        inline std::vector<Vec2> points_from(const json &j, const std::string &what)
        {
            if (!j.is_array())
                throw Error(Errc::syntax, what + ": expected an array of points");
            std::vector<Vec2> out;
            out.reserve(j.size());
            for (std::size_t i = 0; i < j.size(); ++i)
                out.push_back(vec2_from(j[i], what + "[" + std::to_string(i) + "]"));
            return out;
        }

        inline StopLine stop_line_from(const json &j, const std::string &what)
        {
            if (!j.is_array() || j.size() != 2)
                throw Error(Errc::syntax, what + ": stop line must be [[x,y],[x,y]]");
            return {vec2_from(j[0], what), vec2_from(j[1], what)};
        }

        inline json to_json(const StopLine &s) { return json::array({to_json(s.a), to_json(s.b)}); }
    } // namespace detail

    inline nlohmann::json transform_to_json(const Transform &t)
    {
        return {{"position", detail::to_json(t.position)}, {"yaw", t.yaw}, {"pitch", t.pitch}, {"roll", t.roll}};
    }

    inline Transform transform_from_json(const nlohmann::json &j, const std::string &what = "transform")
    {
        detail::require_object(j, what);
        Transform t;
        t.position = detail::vec3_from(j.contains("position") ? j.at("position") : nlohmann::json::array({0, 0, 0}), what + ".position");
        t.yaw = detail::field_or<double>(j, "yaw", 0.0, what);
        t.pitch = detail::field_or<double>(j, "pitch", 0.0, what);
        t.roll = detail::field_or<double>(j, "roll", 0.0, what);
        return t.normalized();
    }

    /// Builds a RoadMap from an already parsed scene object.
    inline RoadMap scene_from_json(const nlohmann::json &doc)
    {
        using namespace detail;
        require_object(doc, "scene");
        static const std::set<std::string> known{"segments", "crosswalks", "lights", "spawn_points", "name"};
        for (const auto &[key, _] : doc.items())
            if (!known.contains(key))
                throw Error(Errc::syntax, "scene: unknown key \"" + key + "\"");

        RoadMap map;
        for (const auto &js : array_or_empty(doc, "segments", "scene"))
        {
            const std::string what = "segment";
            require_object(js, what);
            RoadSegment s;
            s.id = field<int>(js, "id", what);
            const std::string tag = "segment " + std::to_string(s.id);
            if (!js.contains("centerline"))
                throw Error(Errc::syntax, tag + ": missing field \"centerline\"");
            s.centerline = points_from(js.at("centerline"), tag + ".centerline");
            s.lane_width = field_or<double>(js, "lane_width", s.lane_width, tag);
            s.lanes_forward = field_or<int>(js, "lanes_forward", s.lanes_forward, tag);
            s.lanes_backward = field_or<int>(js, "lanes_backward", s.lanes_backward, tag);
            s.speed_limit = field_or<double>(js, "speed_limit", s.speed_limit, tag);
            map.segments.push_back(std::move(s));
        }
        for (const auto &jc : array_or_empty(doc, "crosswalks", "scene"))
        {
            require_object(jc, "crosswalk");
            Crosswalk c;
            c.id = field<int>(jc, "id", "crosswalk");
            const std::string tag = "crosswalk " + std::to_string(c.id);
            c.segment = field<int>(jc, "segment", tag);
            if (!jc.contains("polygon"))
                throw Error(Errc::syntax, tag + ": missing field \"polygon\"");
            c.polygon = points_from(jc.at("polygon"), tag + ".polygon");
            for (const auto &jl : array_or_empty(jc, "stop_lines", tag))
                c.stop_lines.push_back(stop_line_from(jl, tag + ".stop_lines"));
            map.crosswalks.push_back(std::move(c));
        }
        for (const auto &jl : array_or_empty(doc, "lights", "scene"))
        {
            require_object(jl, "light");
            TrafficLightSpec l;
            l.id = field<int>(jl, "id", "light");
            const std::string tag = "light " + std::to_string(l.id);
            if (!jl.contains("position"))
                throw Error(Errc::syntax, tag + ": missing field \"position\"");
            l.position = vec2_from(jl.at("position"), tag + ".position");
            if (!jl.contains("stop_line"))
                throw Error(Errc::syntax, tag + ": missing field \"stop_line\"");
            l.stop_line = stop_line_from(jl.at("stop_line"), tag + ".stop_line");
            l.red = field_or<double>(jl, "red", l.red, tag);
            l.green = field_or<double>(jl, "green", l.green, tag);
            l.amber = field_or<double>(jl, "amber", l.amber, tag);
            const auto initial = field_or<std::string>(jl, "initial", "red", tag);
            const auto phase = light_phase_from_string(initial);
            if (!phase)
                throw Error(Errc::syntax, tag + ": unknown phase \"" + initial + "\"");
            l.initial = *phase;
            l.offset = field_or<double>(jl, "offset", 0.0, tag);
            map.lights.push_back(l);
        }
        for (const auto &jt : array_or_empty(doc, "spawn_points", "scene"))
            map.spawn_points.push_back(transform_from_json(jt, "spawn_point"));

        validate(map);
        return map;
    }

    /// Parses the scene format. Syntax errors carry the 1-based line number.
    inline RoadMap parse_scene(std::string_view text)
    {
        nlohmann::json doc;
        try
        {
            doc = nlohmann::json::parse(text.begin(), text.end());
        }
        catch (const nlohmann::json::parse_error &e)
        {
            throw Error(Errc::syntax, std::string("scene: ") + e.what(), detail::line_of(text, e.byte > 0 ? e.byte - 1 : 0));
        }
        return scene_from_json(doc);
    }

    inline nlohmann::json scene_to_json(const RoadMap &map)
    {
        using detail::json;
        using detail::to_json;
        json doc = json::object();
        json segs = json::array();
        for (const auto &s : map.segments)
        {
            json pts = json::array();
            for (const auto &p : s.centerline)
                pts.push_back(to_json(p));
            segs.push_back({{"id", s.id}, {"centerline", pts}, {"lane_width", s.lane_width}, {"lanes_forward", s.lanes_forward}, {"lanes_backward", s.lanes_backward}, {"speed_limit", s.speed_limit}});
        }
        json cws = json::array();
        for (const auto &c : map.crosswalks)
        {
            json poly = json::array();
            for (const auto &p : c.polygon)
                poly.push_back(to_json(p));
            json lines = json::array();
            for (const auto &l : c.stop_lines)
                lines.push_back(to_json(l));
            cws.push_back({{"id", c.id}, {"segment", c.segment}, {"polygon", poly}, {"stop_lines", lines}});
        }
        json lights = json::array();
        for (const auto &l : map.lights)
            lights.push_back({{"id", l.id}, {"position", to_json(l.position)}, {"stop_line", to_json(l.stop_line)}, {"red", l.red}, {"green", l.green}, {"amber", l.amber}, {"initial", to_string(l.initial)}, {"offset", l.offset}});
        json spawns = json::array();
        for (const auto &t : map.spawn_points)
            spawns.push_back(transform_to_json(t));
        doc["segments"] = segs;
        doc["crosswalks"] = cws;
        doc["lights"] = lights;
        doc["spawn_points"] = spawns;
        return doc;
    }

    inline std::string serialize_scene(const RoadMap &map) { return scene_to_json(map).dump(2) + "\n"; }

    // --------------------------------------------------------- OpenDRIVE subset

    namespace detail
    {
        using boost::property_tree::ptree;

        inline double xml_double(const ptree &node, const char *attr, const std::string &what, std::optional<double> fallback = std::nullopt)
        {
            const auto v = node.get_optional<std::string>(std::string("<xmlattr>.") + attr);
            if (!v)
            {
                if (fallback)
                    return *fallback;
                throw Error(Errc::syntax, what + ": missing attribute \"" + attr + "\"");
            }
            try
            {
                std::size_t used = 0;
                const double d = std::stod(*v, &used);
                if (used != v->size() && v->find_first_not_of(" \t", used) != std::string::npos)
                    throw std::invalid_argument("trailing");
                return d;
            }
            catch (const std::exception &)
            {
                throw Error(Errc::syntax, what + ": attribute \"" + attr + "\" is not a number");
            }
        }

        struct OdrLaneInfo
        {
            int forward = 0;
            int backward = 0;
            double width = 0.0;
            double right_width = 0.0;
            double left_width = 0.0;
        };

        inline OdrLaneInfo odr_lanes(const ptree &road, const std::string &tag)
        {
            OdrLaneInfo info;
            const auto lanes = road.get_child_optional("lanes");
            if (!lanes)
                return info;
            const ptree *first = nullptr;
            for (const auto &[name, child] : *lanes)
                if (name == "laneSection")
                {
                    first = &child;
                    break;
                }
            if (!first)
                return info;
            auto scan = [&](const char *side, int &count, double &total) {
                const auto group = first->get_child_optional(side);
                if (!group)
                    return;
                for (const auto &[name, lane] : *group)
                {
                    if (name != "lane")
                        continue;
                    const auto type = lane.get<std::string>("<xmlattr>.type", "driving");
                    double w = 0.0;
                    for (const auto &[wn, width] : lane)
                    {
                        if (wn != "width")
                            continue;
                        const std::string wtag = tag + " lane width";
                        for (const char *coef : {"b", "c", "d"})
                            if (xml_double(width, coef, wtag, 0.0) != 0.0)
                                throw Error(Errc::unsupported_element, "unsupported element: non-constant <width> in " + tag);
                        w = xml_double(width, "a", wtag);
                        break;
                    }
                    total += w;
                    if (type == "driving")
                    {
                        ++count;
                        if (info.width == 0.0)
                            info.width = w;
                    }
                }
            };
            scan("right", info.forward, info.right_width);
            scan("left", info.backward, info.left_width);
            return info;
        }

        inline double odr_speed(const ptree &road, double fallback)
        {
            for (const auto &[name, child] : road)
            {
                if (name != "type")
                    continue;
                const auto speed = child.get_child_optional("speed");
                if (!speed)
                    continue;
                const double max = speed->get<double>("<xmlattr>.max", 0.0);
                const auto unit = speed->get<std::string>("<xmlattr>.unit", "m/s");
                if (max <= 0.0)
                    continue;
                if (unit == "km/h")
                    return max / 3.6;
                if (unit == "mph")
                    return max * 0.44704;
                return max;
            }
            return fallback;
        }
    } // namespace detail

    struct OpenDriveOptions
    {
        double default_speed_limit = 13.89;
        double default_lane_width = 3.5;
        /// Gap between a crossing edge and its derived stop line.
        double stop_line_offset = 1.0;
    };

    /// Parses OpenDRIVE roads built from <line> geometries. Arcs, spirals and
    /// polynomial geometries are rejected with Errc::unsupported_element.
    inline RoadMap parse_opendrive_subset(const std::string &text, const OpenDriveOptions &opts = {})
    {
        using detail::ptree;
        ptree doc;
        try
        {
            std::istringstream in(text);
            boost::property_tree::read_xml(in, doc);
        }
        catch (const boost::property_tree::xml_parser_error &e)
        {
            throw Error(Errc::syntax, "OpenDRIVE: " + e.message(), static_cast<long>(e.line()));
        }
        const auto root = doc.get_child_optional("OpenDRIVE");
        if (!root)
            throw Error(Errc::syntax, "OpenDRIVE: missing <OpenDRIVE> root element");

        RoadMap map;
        int next_crosswalk = 1;
        for (const auto &[name, road] : *root)
        {
            if (name == "junction" || name == "controller")
                throw Error(Errc::unsupported_element, "unsupported element: <" + name + ">");
            if (name != "road")
                continue;
            RoadSegment seg;
            seg.id = static_cast<int>(detail::xml_double(road, "id", "road"));
            const std::string tag = "road " + std::to_string(seg.id);

            const auto plan = road.get_child_optional("planView");
            if (!plan)
                throw Error(Errc::syntax, tag + ": missing <planView>");
            int gidx = 0;
            for (const auto &[gname, geom] : *plan)
            {
                if (gname != "geometry")
                    continue;
                const std::string gtag = tag + " geometry " + std::to_string(gidx++);
                for (const auto &[kind, _] : geom)
                {
                    if (kind == "<xmlattr>" || kind == "line")
                        continue;
                    throw Error(Errc::unsupported_element, "unsupported element: <" + kind + "> in " + gtag);
                }
                if (!geom.get_child_optional("line"))
                    throw Error(Errc::syntax, gtag + ": missing geometry kind");
                const double x = detail::xml_double(geom, "x", gtag);
                const double y = detail::xml_double(geom, "y", gtag);
                const double hdg = detail::xml_double(geom, "hdg", gtag);
                const double length = detail::xml_double(geom, "length", gtag);
                if (!(length > 0.0))
                    throw Error(Errc::invalid_geometry, gtag + ": zero-length geometry");
                const Vec2 start(x, y);
                const Vec2 end = start + length * heading_vector(hdg);
                if (seg.centerline.empty() || (seg.centerline.back() - start).norm() > 1e-9)
                    seg.centerline.push_back(start);
                seg.centerline.push_back(end);
            }

            const auto lanes = detail::odr_lanes(road, tag);
            seg.lanes_forward = lanes.forward;
            seg.lanes_backward = lanes.backward;
            seg.lane_width = lanes.width > 0.0 ? lanes.width : opts.default_lane_width;
            seg.speed_limit = detail::odr_speed(road, opts.default_speed_limit);
            const double right_w = lanes.right_width > 0.0 ? lanes.right_width : seg.lane_width * seg.lanes_forward;
            const double left_w = lanes.left_width > 0.0 ? lanes.left_width : seg.lane_width * seg.lanes_backward;

            if (const auto objects = road.get_child_optional("objects"))
            {
                for (const auto &[oname, obj] : *objects)
                {
                    if (oname != "object" || obj.get<std::string>("<xmlattr>.type", "") != "crosswalk")
                        continue;
                    const std::string otag = tag + " crosswalk object";
                    const double s = detail::xml_double(obj, "s", otag);
                    const double t = detail::xml_double(obj, "t", otag, 0.0);
                    const double ohdg = detail::xml_double(obj, "hdg", otag, 0.0);
                    const Vec2 tan = tangent_at(seg.centerline, s);
                    const Vec2 nrm(-tan.y(), tan.x());
                    const Vec2 origin = point_at(seg.centerline, s) + t * nrm;
                    const double base = std::atan2(tan.y(), tan.x()) + ohdg;
                    const Vec2 ou = heading_vector(base);
                    const Vec2 ov(-ou.y(), ou.x());

                    Crosswalk cw;
                    cw.id = obj.get<int>("<xmlattr>.id", next_crosswalk);
                    next_crosswalk = std::max(next_crosswalk, cw.id) + 1;
                    cw.segment = seg.id;
                    if (const auto outline = obj.get_child_optional("outline"))
                    {
                        for (const auto &[cn, corner] : *outline)
                            if (cn == "cornerLocal")
                                cw.polygon.push_back(origin + detail::xml_double(corner, "u", otag) * ou + detail::xml_double(corner, "v", otag) * ov);
                    }
                    else
                    {
                        const double len = detail::xml_double(obj, "length", otag);
                        const double wid = detail::xml_double(obj, "width", otag);
                        for (const auto &[u, v] : {std::pair{0.5, 0.5}, {-0.5, 0.5}, {-0.5, -0.5}, {0.5, -0.5}})
                            cw.polygon.push_back(origin + u * len * ou + v * wid * ov);
                    }
                    // One stop line per approach, across that approach's half of the road.
                    double smin = std::numeric_limits<double>::infinity(), smax = -smin;
                    for (const auto &p : cw.polygon)
                    {
                        const double ps = project_onto(seg.centerline, p).s;
                        smin = std::min(smin, ps);
                        smax = std::max(smax, ps);
                    }
                    auto line_at = [&](double ss, double t0, double t1) {
                        const Vec2 c = point_at(seg.centerline, ss);
                        const Vec2 tg = tangent_at(seg.centerline, ss);
                        const Vec2 n(-tg.y(), tg.x());
                        return StopLine{c + t0 * n, c + t1 * n};
                    };
                    if (right_w > 0.0)
                        cw.stop_lines.push_back(line_at(smin - opts.stop_line_offset, -right_w, 0.0));
                    if (left_w > 0.0)
                        cw.stop_lines.push_back(line_at(smax + opts.stop_line_offset, 0.0, left_w));
                    map.crosswalks.push_back(std::move(cw));
                }
            }
            map.segments.push_back(std::move(seg));
        }
        validate(map);
        return map;
    }

    // ---------------------------------------------------------------- queries

    /// Arc length from the route start to its first crossing of any of the
    /// crosswalk's stop lines, or nullopt when the route never crosses one.
    inline std::optional<double> stop_distance_along_route(std::span<const Vec2> route, const Crosswalk &crosswalk)
    {
        std::optional<double> best;
        for (const auto &line : crosswalk.stop_lines)
            if (auto s = first_crossing(route, line.a, line.b); s && (!best || *s < *best))
                best = s;
        return best;
    }

    /// Whether the route passes through the crosswalk polygon.
    inline bool route_crosses(std::span<const Vec2> route, const Crosswalk &crosswalk)
    {
        for (std::size_t i = 1; i < route.size(); ++i)
            if (segment_enters_interior(crosswalk.polygon, route[i - 1], route[i]))
                return true;
        return false;
    }
} // namespace rail
