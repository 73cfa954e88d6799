#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace evk {

/// Timestamps are microseconds, signed 64-bit, non-negative for sensor data.
using Timestamp = std::int64_t;

constexpr Timestamp kMicrosPerMilli = 1000;

/// Dense row-major 2-D grid. (0,0) is the top-left pixel; x indexes
/// columns, y indexes rows.
template <typename T>
struct Image2D {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Image2D() = default;
    Image2D(int w, int h, T fill = T{})
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {
        if (w < 0 || h < 0) throw std::invalid_argument("Image2D: negative shape");
    }

    T& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    const T& at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Image2D& other) const {
        return width == other.width && height == other.height;
    }
};

using GrayImage = Image2D<std::uint8_t>;

inline Image2D<double> to_double(const GrayImage& img) {
    Image2D<double> out(img.width, img.height);
    std::transform(img.data.begin(), img.data.end(), out.data.begin(),
                   [](std::uint8_t v) { return static_cast<double>(v); });
    return out;
}

/// Static sensor configuration shared by every channel of a recording.
struct SensorProps {
    int width = 0;
    int height = 0;
    double event_clock_hz = 0.0;
    double gray_rate_hz = 0.0;
    double flow_rate_hz = 0.0;
    double threshold_pos = 0.0;
    double threshold_neg = 0.0;

    bool valid() const {
        return width >= 1 && height >= 1 && event_clock_hz > 0.0 &&
               gray_rate_hz > 0.0 && flow_rate_hz > 0.0 &&
               threshold_pos > 0.0 && threshold_neg > 0.0;
    }
    void require_valid() const {
        if (!valid()) throw std::invalid_argument("SensorProps: invalid configuration");
    }
};

/// Columnar event stream. All arrays share one length; ts is non-decreasing.
/// Polarity is stored as 0/1; its arithmetic value is -1/+1.
struct EventStream {
    std::vector<std::uint16_t> xs;
    std::vector<std::uint16_t> ys;
    std::vector<Timestamp> ts;
    std::vector<std::uint8_t> ps;

    std::size_t size() const { return ts.size(); }
    bool empty() const { return ts.empty(); }

    void push_back(std::uint16_t x, std::uint16_t y, Timestamp t, bool p) {
        xs.push_back(x);
        ys.push_back(y);
        ts.push_back(t);
        ps.push_back(p ? 1 : 0);
    }

    void reserve(std::size_t n) {
        xs.reserve(n);
        ys.reserve(n);
        ts.reserve(n);
        ps.reserve(n);
    }

    bool operator==(const EventStream& other) const {
        return xs == other.xs && ys == other.ys && ts == other.ts && ps == other.ps;
    }
};

inline int polarity_sign(std::uint8_t p) { return p ? 1 : -1; }

/// Grayscale frames with strictly increasing timestamps.
struct GraySequence {
    std::vector<GrayImage> frames;
    std::vector<Timestamp> ts;

    std::size_t size() const { return frames.size(); }
    bool empty() const { return frames.empty(); }
};

/// Per-pixel forward displacement over [t0, t1]: a point at (x, y) at t0
/// lands at (x + u[y,x], y + v[y,x]) at t1.
struct FlowField {
    Image2D<double> u;
    Image2D<double> v;
    Timestamp t0 = 0;
    Timestamp t1 = 0;

    FlowField() = default;
    FlowField(int w, int h, Timestamp start, Timestamp end)
        : u(w, h), v(w, h), t0(start), t1(end) {
        if (end <= start) throw std::invalid_argument("FlowField: t1 must exceed t0");
    }

    int width() const { return u.width; }
    int height() const { return u.height; }
    Timestamp duration() const { return t1 - t0; }
};

/// Contiguous list of flow fields: fields[k].t1 == fields[k+1].t0.
struct FlowSequence {
    std::vector<FlowField> fields;

    std::size_t size() const { return fields.size(); }
    bool empty() const { return fields.empty(); }

    bool contiguous() const {
        for (std::size_t k = 0; k + 1 < fields.size(); ++k)
            if (fields[k].t1 != fields[k + 1].t0) return false;
        return true;
    }
};

/// Two-channel encoded frame over a bin interval; both channels accumulate
/// non-negative per-polarity weight.
struct EncodedFrame {
    Image2D<double> pos;
    Image2D<double> neg;
    Timestamp t0 = 0;
    Timestamp t1 = 0;

    EncodedFrame() = default;
    EncodedFrame(int w, int h, Timestamp start, Timestamp end)
        : pos(w, h), neg(w, h), t0(start), t1(end) {}
};

// ---------------------------------------------------------------------------
// Stream validation

struct ValidationIssue {
    std::string invariant;  // short name of the violated invariant
    std::size_t index;      // first offending element
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    bool ok() const { return issues.empty(); }
};

/// Checks every EventStream invariant against the given sensor and reports
/// each violated invariant with its first offending index.
inline ValidationReport validate_stream(const EventStream& events, const SensorProps& props) {
    ValidationReport report;
    const std::size_t n = events.ts.size();
    if (events.xs.size() != n || events.ys.size() != n || events.ps.size() != n) {
        report.issues.push_back({"equal array lengths", 0});
    }
    const std::size_t m = std::min({events.xs.size(), events.ys.size(), events.ts.size(),
                                    events.ps.size()});
    for (std::size_t i = 0; i < m; ++i) {
        if (events.ts[i] < 0) {
            report.issues.push_back({"non-negative ts", i});
            break;
        }
    }
    for (std::size_t i = 1; i < m; ++i) {
        if (events.ts[i] < events.ts[i - 1]) {
            report.issues.push_back({"non-decreasing ts", i});
            break;
        }
    }
    for (std::size_t i = 0; i < m; ++i) {
        if (events.xs[i] >= props.width) {
            report.issues.push_back({"xs < width", i});
            break;
        }
    }
    for (std::size_t i = 0; i < m; ++i) {
        if (events.ys[i] >= props.height) {
            report.issues.push_back({"ys < height", i});
            break;
        }
    }
    return report;
}

}  // namespace evk
