// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <rail/error.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

// Runs `stmt` and checks it throws rail::Error with code `errc`.
#define EXPECT_RAIL_ERROR(stmt, errc)                                                  \
    do                                                                                 \
    {                                                                                  \
        try                                                                            \
        {                                                                              \
            stmt;                                                                      \
            ADD_FAILURE() << "expected rail::Error(" << rail::to_string(errc) << ")"; \
        }                                                                              \
        catch (const rail::Error &e_)                                                  \
        {                                                                              \
            EXPECT_EQ(e_.code(), errc) << e_.what();                                   \
        }                                                                              \
    } while (0)

namespace rail::test
{
    inline std::string slurp(const std::filesystem::path &p)
    {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    /// Fresh scratch directory under the system temp dir.
    inline std::filesystem::path scratch(const std::string &name)
    {
        auto dir = std::filesystem::temp_directory_path() / ("rail_test_" + name);
        std::filesystem::remove_all(dir);
        std::filesystem::create_directories(dir);
        return dir;
    }
} // namespace rail::test
