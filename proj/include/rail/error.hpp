// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace rail
{
    /// Error kinds shared by every module. The string form doubles as the
    /// `code` field of wire-level error messages.
    enum class Errc
    {
        syntax,
        dangling_reference,
        invalid_geometry,
        unsupported_element,
        unknown_keyword,
        count_mismatch,
        out_of_range,
        empty_input,
        unknown_blueprint,
        spawn_overlap,
        out_of_order,
        truncated,
        io,
        invalid_config,
        frame_too_large,
        bad_payload,
        invalid_value,
        duplicate,
        missing,
    };

    inline const char *to_string(Errc e) noexcept
    {
        switch (e)
        {
        case Errc::syntax: return "syntax";
        case Errc::dangling_reference: return "dangling-reference";
        case Errc::invalid_geometry: return "invalid-geometry";
        case Errc::unsupported_element: return "unsupported-element";
        case Errc::unknown_keyword: return "unknown-keyword";
        case Errc::count_mismatch: return "count-mismatch";
        case Errc::out_of_range: return "out-of-range";
        case Errc::empty_input: return "empty-input";
        case Errc::unknown_blueprint: return "unknown-blueprint";
        case Errc::spawn_overlap: return "spawn-overlap";
        case Errc::out_of_order: return "out-of-order";
        case Errc::truncated: return "truncated";
        case Errc::io: return "io";
        case Errc::invalid_config: return "invalid-config";
        case Errc::frame_too_large: return "frame-too-large";
        case Errc::bad_payload: return "bad-payload";
        case Errc::invalid_value: return "invalid-value";
        case Errc::duplicate: return "duplicate";
        case Errc::missing: return "missing";
        }
        return "unknown";
    }

    class Error : public std::runtime_error
    {
    public:
        Error(Errc code, const std::string &what, long line = -1)
            : std::runtime_error(line >= 0 ? what + " (line " + std::to_string(line) + ")" : what),
              code_(code), line_(line)
        {
        }

        Errc code() const noexcept { return code_; }

        /// 1-based source line for parse errors, -1 when not applicable.
        long line() const noexcept { return line_; }

    private:
        Errc code_;
        long line_;
    };
} // namespace rail
