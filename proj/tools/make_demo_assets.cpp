// SPDX-License-Identifier: Apache-2.0
//
// Writes the bundled motion files: the crosswalk pedestrian BVH and a
// short headset/controller stream for the live-fusion demo.
#include "rail/avatar.hpp"
#include "rail/mocap.hpp"

#include <fmt/format.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <vector>

namespace
{
    void write(const std::filesystem::path &p, const std::string &text)
    {
        std::ofstream out(p, std::ios::binary);
        out << text;
        if (!out)
            throw std::runtime_error("cannot write " + p.string());
        std::cout << "wrote " << p.string() << "\n";
    }
}

int main(int argc, char **argv)
{
    if (argc != 2)
    {
        std::cerr << "usage: make_demo_assets SCENARIOS_DIR\n";
        return 2;
    }
    const std::filesystem::path root = argv[1];
    try
    {
        // Approach the kerb, step in and wait while looking at traffic,
        // then cross and stay on the far half of the crosswalk.
        const std::vector<rail::MotionSegment> script{
            {4.0, 0.0, 0.0},
            {3.0, 1.2, 0.0},
            {9.0, 0.0, 60.0},
            {3.5, 1.2, 0.0},
            {12.5, 0.0, 0.0},
        };
        const auto clip = rail::make_scripted_clip(script, 1.0 / 30.0);
        std::filesystem::create_directories(root / "crosswalk_demo");
        write(root / "crosswalk_demo" / "pedestrian.bvh", rail::export_bvh(clip));

        // Headset walks 2 m forward over 4 s and glances left; the right hand
        // reaches forward at chest height.
        std::string csv = "# time, headset x y z yaw pitch roll, left hand (empty), right hand x y z yaw pitch roll\n";
        for (int i = 0; i <= 120; ++i)
        {
            const double t = i / 30.0;
            const double x = std::min(t, 4.0) * 0.5;
            const double yaw = 0.5 * std::sin(t);
            csv += fmt::format("{:.4f},{:.4f},{:.4f},{:.4f},{:.4f},0,0,,,,,,,{:.4f},{:.4f},{:.4f},0,0,0\n", t, x, 0.0, 1.65, yaw, x + 0.45, -0.2, 1.2);
        }
        std::filesystem::create_directories(root / "tracker_demo");
        write(root / "tracker_demo" / "tracker.csv", csv);
    }
    catch (const std::exception &e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
