#pragma once

// Shared test data generators. Everything here is deterministic given the
// seed and independent of the library's internal RNG usage.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "evk/core.hpp"

namespace testutil {

inline evk::SensorProps make_props(int width, int height) {
    evk::SensorProps props;
    props.width = width;
    props.height = height;
    props.event_clock_hz = 1000.0;
    props.gray_rate_hz = 25.0;
    props.flow_rate_hz = 25.0;
    props.threshold_pos = 0.5;
    props.threshold_neg = 0.4;
    return props;
}

/// Random sorted stream over [0, t_max_us] with uniform pixels/polarity.
inline evk::EventStream random_events(std::mt19937_64& rng, std::size_t n, int width, int height,
                                      evk::Timestamp t_max_us) {
    std::vector<evk::Timestamp> times(n);
    std::uniform_int_distribution<evk::Timestamp> time_dist(0, t_max_us);
    for (auto& t : times) t = time_dist(rng);
    std::sort(times.begin(), times.end());
    evk::EventStream events;
    events.reserve(n);
    std::uniform_int_distribution<int> x_dist(0, width - 1);
    std::uniform_int_distribution<int> y_dist(0, height - 1);
    for (std::size_t i = 0; i < n; ++i)
        events.push_back(static_cast<std::uint16_t>(x_dist(rng)),
                         static_cast<std::uint16_t>(y_dist(rng)), times[i], (rng() & 1) != 0);
    return events;
}

/// Smooth random flow made of a few low-frequency sinusoid modes, rescaled so
/// the maximum displacement magnitude equals max_disp.
inline evk::FlowField smooth_random_flow(std::mt19937_64& rng, int width, int height,
                                         double max_disp, evk::Timestamp t0 = 0,
                                         evk::Timestamp t1 = 1000) {
    evk::FlowField field(width, height, t0, t1);
    std::uniform_real_distribution<double> amp(-1.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
    struct Mode {
        double ax, ay, fx, fy, px, py;
    };
    std::vector<Mode> modes;
    for (int k = 0; k < 3; ++k)
        modes.push_back({amp(rng), amp(rng), (k + 1) * M_PI / width, (k + 1) * M_PI / height,
                         phase(rng), phase(rng)});
    double peak = 0.0;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double u = 0.0, v = 0.0;
            for (const auto& m : modes) {
                u += m.ax * std::sin(m.fx * x + m.px) * std::cos(m.fy * y + m.py);
                v += m.ay * std::cos(m.fx * x + m.px) * std::sin(m.fy * y + m.py);
            }
            field.u.at(y, x) = u;
            field.v.at(y, x) = v;
            peak = std::max(peak, std::hypot(u, v));
        }
    }
    if (peak > 0.0) {
        const double scale = max_disp / peak;
        for (auto& u : field.u.data) u *= scale;
        for (auto& v : field.v.data) v *= scale;
    }
    return field;
}

inline evk::FlowField constant_flow(int width, int height, double u, double v,
                                    evk::Timestamp t0 = 0, evk::Timestamp t1 = 1000) {
    evk::FlowField field(width, height, t0, t1);
    std::fill(field.u.data.begin(), field.u.data.end(), u);
    std::fill(field.v.data.begin(), field.v.data.end(), v);
    return field;
}

/// Unique scratch directory beneath the build tree's temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
    static std::uint64_t counter = 0;
    const auto dir = std::filesystem::temp_directory_path() /
                     ("evk_test_" + tag + "_" + std::to_string(counter++));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testutil
