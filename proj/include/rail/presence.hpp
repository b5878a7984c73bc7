// SPDX-License-Identifier: Apache-2.0
//
// Presence questionnaire scoring. Ratings are pooled per subscale; SD uses
// the sample (n - 1) denominator.
#pragma once

#include "rail/error.hpp"

#include <fmt/format.h>

#include <array>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace rail
{
    enum class Subscale : std::uint8_t
    {
        self,
        vehicle,
        environment,
    };

    inline constexpr std::array<Subscale, 3> all_subscales{Subscale::self, Subscale::vehicle, Subscale::environment};
    inline constexpr int items_per_subscale = 5;

    inline constexpr std::string_view to_string(Subscale s)
    {
        switch (s)
        {
        case Subscale::self: return "self";
        case Subscale::vehicle: return "vehicle";
        case Subscale::environment: return "environment";
        }
        return "self";
    }

    inline std::optional<Subscale> subscale_from_string(std::string_view s)
    {
        for (auto v : all_subscales)
            if (to_string(v) == s)
                return v;
        return std::nullopt;
    }

    struct PresenceResponse
    {
        std::string subject;
        Subscale subscale = Subscale::self;
        int item = 1;   // 1..5 within the subscale
        int rating = 1; // 1..5
        bool operator==(const PresenceResponse &) const = default;
    };

    namespace detail
    {
        inline std::string_view trim(std::string_view s)
        {
            while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
                s.remove_prefix(1);
            while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
                s.remove_suffix(1);
            if (s.size() >= 2 && s.front() == '"' && s.back() == '"')
                s = s.substr(1, s.size() - 2);
            return s;
        }

        inline int parse_int(std::string_view s, const char *what, long line)
        {
            int v = 0;
            const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc{} || p != s.data() + s.size())
                throw Error(Errc::invalid_value, fmt::format("{} '{}' is not an integer", what, s), line);
            return v;
        }
    } // namespace detail

    /// Reads CSV with the header `subject_id,subscale,item,rating`.
    inline std::vector<PresenceResponse> parse_presence_csv(std::string_view text)
    {
        std::vector<PresenceResponse> out;
        long line_no = 0;
        bool header = false;
        std::size_t pos = 0;
        while (pos <= text.size())
        {
            const std::size_t nl = text.find('\n', pos);
            std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
            pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
            ++line_no;
            if (detail::trim(line).empty())
                continue;
            std::vector<std::string_view> cols;
            std::size_t c = 0;
            while (true)
            {
                const std::size_t comma = line.find(',', c);
                cols.push_back(detail::trim(line.substr(c, comma == std::string_view::npos ? std::string_view::npos : comma - c)));
                if (comma == std::string_view::npos)
                    break;
                c = comma + 1;
            }
            if (cols.size() != 4)
                throw Error(Errc::count_mismatch, fmt::format("expected 4 columns, got {}", cols.size()), line_no);
            if (!header)
            {
                if (cols[0] != "subject_id" || cols[1] != "subscale" || cols[2] != "item" || cols[3] != "rating")
                    throw Error(Errc::syntax, "header must be subject_id,subscale,item,rating", line_no);
                header = true;
                continue;
            }
            PresenceResponse r;
            r.subject = std::string(cols[0]);
            if (r.subject.empty())
                throw Error(Errc::invalid_value, "empty subject_id", line_no);
            const auto sub = subscale_from_string(cols[1]);
            if (!sub)
                throw Error(Errc::invalid_value, fmt::format("unknown subscale '{}'", cols[1]), line_no);
            r.subscale = *sub;
            r.item = detail::parse_int(cols[2], "item", line_no);
            r.rating = detail::parse_int(cols[3], "rating", line_no);
            if (r.item < 1 || r.item > items_per_subscale)
                throw Error(Errc::out_of_range, fmt::format("item {} outside 1..5", r.item), line_no);
            if (r.rating < 1 || r.rating > 5)
                throw Error(Errc::out_of_range, fmt::format("rating {} outside 1..5", r.rating), line_no);
            out.push_back(std::move(r));
        }
        if (!header)
            throw Error(Errc::empty_input, "no CSV header");
        return out;
    }

    inline std::string presence_csv(std::span<const PresenceResponse> rows)
    {
        std::string out = "subject_id,subscale,item,rating\n";
        for (const auto &r : rows)
            out += fmt::format("{},{},{},{}\n", r.subject, to_string(r.subscale), r.item, r.rating);
        return out;
    }

    struct SubscaleScore
    {
        std::size_t n = 0; // ratings pooled
        double mean = 0.0;
        double sd = 0.0; // sample standard deviation
        std::array<double, items_per_subscale> item_means{};
    };

    struct PresenceReport
    {
        std::map<Subscale, SubscaleScore> subscales; // only subscales with data
        std::size_t n_subjects = 0;
    };

    /// "(M=x.xx, SD=x.xxx)"
    inline std::string format_m_sd(double mean, double sd) { return fmt::format("(M={:.2f}, SD={:.3f})", mean, sd); }

    inline PresenceReport score_presence(std::span<const PresenceResponse> rows)
    {
        if (rows.empty())
            throw Error(Errc::empty_input, "no responses");
        std::set<std::tuple<std::string, Subscale, int>> seen;
        std::map<std::pair<std::string, Subscale>, int> items_per_group;
        std::set<std::string> subjects;
        for (const auto &r : rows)
        {
            if (r.rating < 1 || r.rating > 5)
                throw Error(Errc::out_of_range, fmt::format("subject {}: rating {} outside 1..5", r.subject, r.rating));
            if (r.item < 1 || r.item > items_per_subscale)
                throw Error(Errc::out_of_range, fmt::format("subject {}: item {} outside 1..5", r.subject, r.item));
            if (!seen.emplace(r.subject, r.subscale, r.item).second)
                throw Error(Errc::duplicate, fmt::format("duplicate response: subject {}, {} item {}", r.subject, to_string(r.subscale), r.item));
            ++items_per_group[{r.subject, r.subscale}];
            subjects.insert(r.subject);
        }
        for (const auto &[key, count] : items_per_group)
            if (count != items_per_subscale)
                for (int i = 1; i <= items_per_subscale; ++i)
                    if (!seen.contains({key.first, key.second, i}))
                        throw Error(Errc::missing, fmt::format("missing response: subject {}, {} item {}", key.first, to_string(key.second), i));

        PresenceReport rep;
        rep.n_subjects = subjects.size();
        for (auto sub : all_subscales)
        {
            std::vector<double> values;
            std::array<double, items_per_subscale> item_sum{};
            std::array<int, items_per_subscale> item_n{};
            for (const auto &r : rows)
                if (r.subscale == sub)
                {
                    values.push_back(r.rating);
                    item_sum[r.item - 1] += r.rating;
                    ++item_n[r.item - 1];
                }
            if (values.empty())
                continue;
            SubscaleScore s;
            s.n = values.size();
            double sum = 0.0;
            for (double v : values)
                sum += v;
            s.mean = sum / static_cast<double>(s.n);
            double ss = 0.0;
            for (double v : values)
                ss += (v - s.mean) * (v - s.mean);
            s.sd = s.n > 1 ? std::sqrt(ss / static_cast<double>(s.n - 1)) : 0.0;
            for (int i = 0; i < items_per_subscale; ++i)
                s.item_means[i] = item_n[i] ? item_sum[i] / item_n[i] : 0.0;
            rep.subscales.emplace(sub, s);
        }
        return rep;
    }

    inline std::string render_report(const PresenceReport &rep)
    {
        std::string out = fmt::format("subjects: {}\n", rep.n_subjects);
        for (const auto &[sub, s] : rep.subscales)
        {
            out += fmt::format("{}: {}  items:", to_string(sub), format_m_sd(s.mean, s.sd));
            for (double m : s.item_means)
                out += fmt::format(" {:.2f}", m);
            out += "\n";
        }
        return out;
    }
} // namespace rail
