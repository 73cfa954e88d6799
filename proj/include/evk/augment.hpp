#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

#include "evk/core.hpp"

namespace evk::augment {

namespace detail {

/// Uniform double in [0, 1) from the top 53 bits of the engine output.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Exact Poisson sample via unit-exponential arrival gaps.
inline std::uint64_t poisson(std::mt19937_64& rng, double mean) {
    if (mean <= 0.0) return 0;
    std::uint64_t count = 0;
    double acc = 0.0;
    while (true) {
        double u = uniform01(rng);
        if (u <= 0.0) u = 0x1.0p-53;
        acc += -std::log(u);
        if (acc > mean) break;
        ++count;
    }
    return count;
}

}  // namespace detail

/// Stretches or compresses time around the first event: ts' = round(ts[0] +
/// factor * (ts - ts[0])). Order and count are preserved.
inline EventStream time_warp(const EventStream& events, double factor) {
    if (factor <= 0.0) throw std::invalid_argument("time_warp: factor must be positive");
    EventStream out = events;
    if (events.empty()) return out;
    const Timestamp origin = events.ts.front();
    for (std::size_t i = 0; i < out.ts.size(); ++i) {
        const double shifted = factor * static_cast<double>(events.ts[i] - origin);
        out.ts[i] = origin + static_cast<Timestamp>(std::llround(shifted));
    }
    return out;
}

/// Adds spurious events from a homogeneous spatiotemporal uniform process
/// at the given rate (events per pixel per second) over the stream extent.
/// The result is merged and sorted; identical seeds give identical streams.
inline EventStream inject_noise(const EventStream& events, const SensorProps& props,
                                double rate, std::uint64_t seed) {
    if (rate < 0.0) throw std::invalid_argument("inject_noise: rate must be >= 0");
    if (events.empty() || rate == 0.0) return events;

    const Timestamp t_first = events.ts.front();
    const Timestamp t_last = events.ts.back();
    const double duration_s = static_cast<double>(t_last - t_first) / 1e6;
    const double mean = rate * props.width * props.height * duration_s;

    std::mt19937_64 rng(seed);
    const std::uint64_t count = detail::poisson(rng, mean);

    EventStream noise;
    noise.reserve(count);
    const std::uint64_t span = static_cast<std::uint64_t>(t_last - t_first);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto x = static_cast<std::uint16_t>(rng() % props.width);
        const auto y = static_cast<std::uint16_t>(rng() % props.height);
        const Timestamp t = t_first + static_cast<Timestamp>(span > 0 ? rng() % (span + 1) : 0);
        const bool p = (rng() & 1) != 0;
        noise.push_back(x, y, t, p);
    }
    std::vector<std::size_t> order(noise.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return noise.ts[a] < noise.ts[b]; });

    EventStream out;
    out.reserve(events.size() + noise.size());
    std::size_t i = 0, j = 0;
    while (i < events.size() || j < noise.size()) {
        const bool take_original =
            j >= noise.size() || (i < events.size() && events.ts[i] <= noise.ts[order[j]]);
        if (take_original) {
            out.push_back(events.xs[i], events.ys[i], events.ts[i], events.ps[i] != 0);
            ++i;
        } else {
            const std::size_t k = order[j];
            out.push_back(noise.xs[k], noise.ys[k], noise.ts[k], noise.ps[k] != 0);
            ++j;
        }
    }
    return out;
}

/// Negates every polarity; an involution.
inline EventStream flip_polarity(const EventStream& events) {
    EventStream out = events;
    for (auto& p : out.ps) p = p ? 0 : 1;
    return out;
}

/// Reverses time: timestamps are mirrored within [ts[0], ts[N-1]], event
/// order is reversed, and polarities are inverted (brightness changes flip
/// sign under reversed time).
inline EventStream temporal_reverse(const EventStream& events) {
    EventStream out;
    const std::size_t n = events.size();
    out.reserve(n);
    if (n == 0) return out;
    const Timestamp lo = events.ts.front();
    const Timestamp hi = events.ts.back();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = n - 1 - i;
        out.push_back(events.xs[k], events.ys[k], lo + (hi - events.ts[k]),
                      events.ps[k] == 0);
    }
    return out;
}

enum class FlipAxis { horizontal, vertical };

/// Events, gray frames, and flow fields transformed together.
struct CoTransformed {
    EventStream events;
    GraySequence grays;
    FlowSequence flows;
    SensorProps props;
};

/// Mirrors all three channels about the given axis. Horizontal flips x and
/// negates u; vertical flips y and negates v.
inline CoTransformed spatial_flip(const EventStream& events, const GraySequence& grays,
                                  const FlowSequence& flows, const SensorProps& props,
                                  FlipAxis axis) {
    for (const auto& f : grays.frames)
        if (f.width != props.width || f.height != props.height)
            throw std::invalid_argument("spatial_flip: gray shape mismatch");
    for (const auto& f : flows.fields)
        if (f.width() != props.width || f.height() != props.height)
            throw std::invalid_argument("spatial_flip: flow shape mismatch");

    CoTransformed out{events, grays, flows, props};
    const int w = props.width;
    const int h = props.height;
    if (axis == FlipAxis::horizontal) {
        for (auto& x : out.events.xs) x = static_cast<std::uint16_t>(w - 1 - x);
    } else {
        for (auto& y : out.events.ys) y = static_cast<std::uint16_t>(h - 1 - y);
    }
    for (auto& frame : out.grays.frames) {
        GrayImage flipped(w, h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                flipped.at(y, x) = axis == FlipAxis::horizontal ? frame.at(y, w - 1 - x)
                                                                : frame.at(h - 1 - y, x);
        frame = std::move(flipped);
    }
    for (auto& field : out.flows.fields) {
        FlowField flipped(w, h, field.t0, field.t1);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                if (axis == FlipAxis::horizontal) {
                    flipped.u.at(y, x) = -field.u.at(y, w - 1 - x);
                    flipped.v.at(y, x) = field.v.at(y, w - 1 - x);
                } else {
                    flipped.u.at(y, x) = field.u.at(h - 1 - y, x);
                    flipped.v.at(y, x) = -field.v.at(h - 1 - y, x);
                }
            }
        }
        field = std::move(flipped);
    }
    return out;
}

struct CropRect {
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;
};

/// Crops all three channels to the rectangle; events outside are dropped and
/// coordinates re-based, and the sensor shape is updated.
inline CoTransformed crop(const EventStream& events, const GraySequence& grays,
                          const FlowSequence& flows, const SensorProps& props,
                          const CropRect& rect) {
    if (rect.width < 1 || rect.height < 1 || rect.x < 0 || rect.y < 0 ||
        rect.x + rect.width > props.width || rect.y + rect.height > props.height)
        throw std::invalid_argument("crop: rectangle does not fit within the frame");

    CoTransformed out;
    out.props = props;
    out.props.width = rect.width;
    out.props.height = rect.height;

    for (std::size_t i = 0; i < events.size(); ++i) {
        const int x = events.xs[i];
        const int y = events.ys[i];
        if (x < rect.x || x >= rect.x + rect.width || y < rect.y || y >= rect.y + rect.height)
            continue;
        out.events.push_back(static_cast<std::uint16_t>(x - rect.x),
                             static_cast<std::uint16_t>(y - rect.y), events.ts[i],
                             events.ps[i] != 0);
    }
    out.grays.ts = grays.ts;
    for (const auto& frame : grays.frames) {
        GrayImage cropped(rect.width, rect.height);
        for (int y = 0; y < rect.height; ++y)
            for (int x = 0; x < rect.width; ++x)
                cropped.at(y, x) = frame.at(rect.y + y, rect.x + x);
        out.grays.frames.push_back(std::move(cropped));
    }
    for (const auto& field : flows.fields) {
        FlowField cropped(rect.width, rect.height, field.t0, field.t1);
        for (int y = 0; y < rect.height; ++y) {
            for (int x = 0; x < rect.width; ++x) {
                cropped.u.at(y, x) = field.u.at(rect.y + y, rect.x + x);
                cropped.v.at(y, x) = field.v.at(rect.y + y, rect.x + x);
            }
        }
        out.flows.fields.push_back(std::move(cropped));
    }
    return out;
}

/// Crop of the given size at a seed-determined position.
inline CoTransformed random_crop(const EventStream& events, const GraySequence& grays,
                                 const FlowSequence& flows, const SensorProps& props,
                                 int width, int height, std::uint64_t seed) {
    if (width < 1 || height < 1 || width > props.width || height > props.height)
        throw std::invalid_argument("random_crop: crop larger than frame");
    std::mt19937_64 rng(seed);
    CropRect rect;
    rect.width = width;
    rect.height = height;
    rect.x = static_cast<int>(rng() % static_cast<std::uint64_t>(props.width - width + 1));
    rect.y = static_cast<int>(rng() % static_cast<std::uint64_t>(props.height - height + 1));
    return crop(events, grays, flows, props, rect);
}

}  // namespace evk::augment
