#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "evk/core.hpp"
#include "evk/encode.hpp"
#include "evk/metrics.hpp"
#include "evk/png.hpp"
#include "evk/store.hpp"

namespace evk::viz {

// Overlay palette: positive events red, negative blue, mixed pixels magenta.
constexpr std::uint8_t kPositiveTint[3] = {220, 30, 30};
constexpr std::uint8_t kNegativeTint[3] = {30, 60, 220};
constexpr std::uint8_t kMixedTint[3] = {200, 30, 200};

namespace detail {

inline void hsv_to_rgb(double hue_deg, double sat, double val, std::uint8_t rgb[3]) {
    const double c = val * sat;
    const double hp = hue_deg / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    if (hp < 1) { r = c; g = x; }
    else if (hp < 2) { r = x; g = c; }
    else if (hp < 3) { g = c; b = x; }
    else if (hp < 4) { g = x; b = c; }
    else if (hp < 5) { r = x; b = c; }
    else { r = c; b = x; }
    const double m = val - c;
    rgb[0] = static_cast<std::uint8_t>(std::lround((r + m) * 255.0));
    rgb[1] = static_cast<std::uint8_t>(std::lround((g + m) * 255.0));
    rgb[2] = static_cast<std::uint8_t>(std::lround((b + m) * 255.0));
}

}  // namespace detail

/// Flow color coding: hue is the flow direction, saturation scales with
/// magnitude / max_magnitude (clamped), value stays 1. Zero flow is white.
/// Pass max_magnitude <= 0 to scale by the field's own maximum.
inline png::RgbImage flow_to_color(const FlowField& field, double max_magnitude = 0.0) {
    const int w = field.width();
    const int h = field.height();
    double max_mag = max_magnitude;
    if (max_mag <= 0.0) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                max_mag = std::max(max_mag, std::hypot(field.u.at(y, x), field.v.at(y, x)));
        if (max_mag == 0.0) max_mag = 1.0;
    }
    png::RgbImage img(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double u = field.u.at(y, x);
            const double v = field.v.at(y, x);
            const double mag = std::hypot(u, v);
            double hue = std::atan2(v, u) * 180.0 / M_PI;
            if (hue < 0.0) hue += 360.0;
            if (hue >= 360.0) hue = 0.0;
            const double sat = std::min(mag / max_mag, 1.0);
            std::uint8_t rgb[3];
            detail::hsv_to_rgb(hue, sat, 1.0, rgb);
            img.set(y, x, rgb[0], rgb[1], rgb[2]);
        }
    }
    return img;
}

/// Grayscale background with event pixels tinted by polarity; a pixel that
/// saw both polarities gets the mixed tint.
inline png::RgbImage render_overlay(const GrayImage& gray, const EventStream& events) {
    const int w = gray.width;
    const int h = gray.height;
    for (std::size_t i = 0; i < events.size(); ++i)
        if (events.xs[i] >= w || events.ys[i] >= h)
            throw std::invalid_argument("render_overlay: event outside the frame");

    png::RgbImage img(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::uint8_t g = gray.at(y, x);
            img.set(y, x, g, g, g);
        }
    }
    Image2D<std::uint8_t> channels(w, h, 0);  // bit 0: positive, bit 1: negative
    for (std::size_t i = 0; i < events.size(); ++i)
        channels.at(events.ys[i], events.xs[i]) |= events.ps[i] ? 1 : 2;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::uint8_t c = channels.at(y, x);
            if (c == 1) img.set(y, x, kPositiveTint[0], kPositiveTint[1], kPositiveTint[2]);
            else if (c == 2) img.set(y, x, kNegativeTint[0], kNegativeTint[1], kNegativeTint[2]);
            else if (c == 3) img.set(y, x, kMixedTint[0], kMixedTint[1], kMixedTint[2]);
        }
    }
    return img;
}

/// Encoded-frame rendering: positive channel in red, negative in blue, each
/// normalized by the frame's own maximum.
inline png::RgbImage render_encoded(const EncodedFrame& frame) {
    const int w = frame.pos.width;
    const int h = frame.pos.height;
    double max_val = 0.0;
    for (double v : frame.pos.data) max_val = std::max(max_val, v);
    for (double v : frame.neg.data) max_val = std::max(max_val, v);
    if (max_val == 0.0) max_val = 1.0;
    png::RgbImage img(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto r = static_cast<std::uint8_t>(
                std::lround(255.0 * frame.pos.at(y, x) / max_val));
            const auto b = static_cast<std::uint8_t>(
                std::lround(255.0 * frame.neg.at(y, x) / max_val));
            img.set(y, x, r, 0, b);
        }
    }
    return img;
}

enum class RenderKind { overlay, flow, encoded };

inline RenderKind render_kind_from_name(const std::string& name) {
    if (name == "overlay") return RenderKind::overlay;
    if (name == "flow") return RenderKind::flow;
    if (name == "encoded") return RenderKind::encoded;
    throw std::invalid_argument("unknown render kind: " + name);
}

namespace detail {

inline std::filesystem::path numbered_png(const std::filesystem::path& dir, std::size_t index) {
    char name[16];
    std::snprintf(name, sizeof(name), "%06zu.png", index);
    return dir / name;
}

}  // namespace detail

/// Strides over the container and writes one numbered PNG per slice.
/// Returns the written file paths.
inline std::vector<std::filesystem::path> export_sequence(const store::Reader& reader,
                                                          store::Stride stride,
                                                          const std::filesystem::path& out_dir,
                                                          RenderKind kind) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    if (!fs::is_directory(out_dir))
        throw std::runtime_error("export_sequence: not a writable directory: " + out_dir.string());

    std::vector<fs::path> written;
    store::SliceIterator it = store::iterate(reader, stride);
    std::size_t index = 0;
    while (auto slice = it.next()) {
        const fs::path file = detail::numbered_png(out_dir, index);
        switch (kind) {
            case RenderKind::overlay: {
                GrayImage background =
                    slice->gray_start ? slice->gray_start->image
                                      : GrayImage(reader.props().width, reader.props().height, 0);
                png::write_rgb(file, render_overlay(background, slice->events));
                break;
            }
            case RenderKind::flow: {
                FlowField field = slice->flow
                                      ? *slice->flow
                                      : FlowField(reader.props().width, reader.props().height,
                                                  slice->t0_us, slice->t1_us + 1);
                png::write_rgb(file, flow_to_color(field));
                break;
            }
            case RenderKind::encoded: {
                EncodedFrame frame;
                if (slice->events.empty()) {
                    frame = EncodedFrame(reader.props().width, reader.props().height,
                                         slice->t0_us, slice->t1_us);
                } else {
                    frame = encode::encode_count(slice->events, slice->t0_us, slice->t1_us + 1, 1,
                                                 reader.props())
                                .front();
                }
                png::write_rgb(file, render_encoded(frame));
                break;
            }
        }
        written.push_back(file);
        ++index;
    }
    return written;
}

/// Per-slice CSV dumps of (x, y, t, p) for external 3-D plotting of the
/// event volume.
inline std::vector<std::filesystem::path> export_events_csv(const store::Reader& reader,
                                                            store::Stride stride,
                                                            const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::vector<fs::path> written;
    store::SliceIterator it = store::iterate(reader, stride);
    std::size_t index = 0;
    while (auto slice = it.next()) {
        char name[16];
        std::snprintf(name, sizeof(name), "%06zu.csv", index);
        const fs::path file = out_dir / name;
        std::ofstream out(file);
        if (!out) throw std::runtime_error("export_events_csv: cannot open " + file.string());
        out << "x,y,t_us,p\n";
        for (std::size_t i = 0; i < slice->events.size(); ++i)
            out << slice->events.xs[i] << "," << slice->events.ys[i] << ","
                << slice->events.ts[i] << "," << (slice->events.ps[i] ? 1 : 0) << "\n";
        written.push_back(file);
        ++index;
    }
    return written;
}

}  // namespace evk::viz
