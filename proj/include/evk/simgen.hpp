#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "evk/core.hpp"
#include "evk/store.hpp"

namespace evk::simgen {

/// Parametric moving scene: an analytic pattern under rigid motion, sampled
/// at sim_rate with exact closed-form ground-truth flow.
struct SceneSpec {
    enum class Pattern { checkerboard, sinusoid, gaussian_blobs };
    enum class Motion { translation, rotation };

    Pattern pattern = Pattern::checkerboard;
    double cell_px = 8.0;        // checkerboard
    double period_px = 8.0;      // sinusoid
    int blob_count = 30;         // gaussian_blobs
    double blob_radius_px = 3.0;
    std::uint64_t blob_seed = 1;

    Motion motion = Motion::translation;
    double vx_px_s = 0.0;
    double vy_px_s = 0.0;
    double omega_rad_s = 0.0;

    double duration_s = 1.0;
    double sim_rate_hz = 1000.0;
    double frame_rate_hz = 25.0;
    double flow_rate_hz = 25.0;
    SensorProps sensor;

    void require_valid() const {
        sensor.require_valid();
        if (duration_s <= 0.0) throw std::invalid_argument("SceneSpec: duration must be > 0");
        if (sim_rate_hz < frame_rate_hz || sim_rate_hz < flow_rate_hz)
            throw std::invalid_argument("SceneSpec: sim_rate must be >= frame and flow rates");
    }

    static SceneSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

namespace detail {

inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

struct Blob {
    double cx, cy, amplitude;
};

inline std::vector<Blob> make_blobs(const SceneSpec& spec) {
    std::mt19937_64 rng(spec.blob_seed);
    std::vector<Blob> blobs;
    blobs.reserve(spec.blob_count);
    for (int k = 0; k < spec.blob_count; ++k) {
        Blob b;
        b.cx = uniform01(rng) * spec.sensor.width;
        b.cy = uniform01(rng) * spec.sensor.height;
        b.amplitude = 0.4 + 0.5 * uniform01(rng);
        blobs.push_back(b);
    }
    return blobs;
}

/// Box-filtered 1-D square wave: fraction of [x-1/2, x+1/2] covered by the
/// "on" half of a period-2*cell checkerboard stripe.
inline double checker_coverage(double x, double cell) {
    const double period = 2.0 * cell;
    auto on_measure = [&](double t) {  // measure of "on" in [0, t), t >= 0 shifted into range
        const double whole = std::floor(t / period);
        const double rem = t - whole * period;
        return whole * cell + std::min(rem, cell);
    };
    const double a = x - 0.5;
    const double b = x + 0.5;
    // shift both ends by a common multiple of the period so they are >= 0
    const double shift = period * std::ceil(std::max(0.0, -a) / period + 1.0);
    return std::clamp(on_measure(b + shift) - on_measure(a + shift), 0.0, 1.0);
}

}  // namespace detail

/// Pattern intensity in [0, 1] at real scene coordinates (before motion).
inline double pattern_base(const SceneSpec& spec, const std::vector<detail::Blob>& blobs,
                           double x, double y) {
    switch (spec.pattern) {
        case SceneSpec::Pattern::checkerboard: {
            const double cx = detail::checker_coverage(x, spec.cell_px);
            const double cy = detail::checker_coverage(y, spec.cell_px);
            return cx * cy + (1.0 - cx) * (1.0 - cy);
        }
        case SceneSpec::Pattern::sinusoid: {
            const double sx = 0.5 + 0.5 * std::sin(2.0 * M_PI * x / spec.period_px);
            const double sy = 0.5 + 0.5 * std::sin(2.0 * M_PI * y / spec.period_px);
            return sx * sy;
        }
        case SceneSpec::Pattern::gaussian_blobs: {
            double sum = 0.0;
            const double inv = 1.0 / (2.0 * spec.blob_radius_px * spec.blob_radius_px);
            for (const auto& b : blobs) {
                const double dx = x - b.cx;
                const double dy = y - b.cy;
                sum += b.amplitude * std::exp(-(dx * dx + dy * dy) * inv);
            }
            return std::min(1.0, sum);
        }
    }
    return 0.0;
}

/// Scene intensity at pixel coordinates (x, y) and time t seconds: the base
/// pattern evaluated at the motion-inverse-transformed location.
inline double pattern_at(const SceneSpec& spec, const std::vector<detail::Blob>& blobs, double x,
                         double y, double t_s) {
    if (spec.motion == SceneSpec::Motion::translation)
        return pattern_base(spec, blobs, x - spec.vx_px_s * t_s, y - spec.vy_px_s * t_s);
    const double cx = (spec.sensor.width - 1) / 2.0;
    const double cy = (spec.sensor.height - 1) / 2.0;
    const double a = -spec.omega_rad_s * t_s;
    const double rx = std::cos(a) * (x - cx) - std::sin(a) * (y - cy) + cx;
    const double ry = std::sin(a) * (x - cx) + std::cos(a) * (y - cy) + cy;
    return pattern_base(spec, blobs, rx, ry);
}

/// Exact forward displacement of a scene point at (x, y) over [t0_s, t1_s].
inline void ground_truth_displacement(const SceneSpec& spec, double x, double y, double dt_s,
                                      double& u, double& v) {
    if (spec.motion == SceneSpec::Motion::translation) {
        u = spec.vx_px_s * dt_s;
        v = spec.vy_px_s * dt_s;
        return;
    }
    const double cx = (spec.sensor.width - 1) / 2.0;
    const double cy = (spec.sensor.height - 1) / 2.0;
    const double a = spec.omega_rad_s * dt_s;
    u = (std::cos(a) - 1.0) * (x - cx) - std::sin(a) * (y - cy);
    v = std::sin(a) * (x - cx) + (std::cos(a) - 1.0) * (y - cy);
}

/// High-rate real-valued frames plus the closed-form ground-truth flow.
struct RenderedScene {
    std::vector<Image2D<double>> frames;  // intensities in [0, 1] at sim_rate
    std::vector<Timestamp> ts;
    FlowSequence flow;  // forward fields at flow_rate
};

inline RenderedScene render_scene(const SceneSpec& spec) {
    spec.require_valid();
    const int w = spec.sensor.width;
    const int h = spec.sensor.height;
    const auto blobs = spec.pattern == SceneSpec::Pattern::gaussian_blobs
                           ? detail::make_blobs(spec)
                           : std::vector<detail::Blob>{};

    RenderedScene scene;
    const auto n_frames = static_cast<std::int64_t>(std::llround(spec.duration_s * spec.sim_rate_hz)) + 1;
    scene.frames.reserve(n_frames);
    scene.ts.reserve(n_frames);
    for (std::int64_t j = 0; j < n_frames; ++j) {
        const double t_s = static_cast<double>(j) / spec.sim_rate_hz;
        Image2D<double> frame(w, h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) frame.at(y, x) = pattern_at(spec, blobs, x, y, t_s);
        scene.frames.push_back(std::move(frame));
        scene.ts.push_back(static_cast<Timestamp>(std::llround(t_s * 1e6)));
    }

    const auto n_flow = static_cast<std::int64_t>(std::llround(spec.duration_s * spec.flow_rate_hz));
    for (std::int64_t k = 0; k < n_flow; ++k) {
        const auto t0 = static_cast<Timestamp>(std::llround(k / spec.flow_rate_hz * 1e6));
        const auto t1 = static_cast<Timestamp>(std::llround((k + 1) / spec.flow_rate_hz * 1e6));
        const double dt_s = static_cast<double>(t1 - t0) / 1e6;
        FlowField field(w, h, t0, t1);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                ground_truth_displacement(spec, x, y, dt_s, field.u.at(y, x), field.v.at(y, x));
        scene.flow.fields.push_back(std::move(field));
    }
    return scene;
}

struct GenOptions {
    Timestamp refractory_us = 0;       // suppress events closer than this per pixel
    double threshold_noise_sigma = 0;  // relative per-pixel threshold jitter
    std::uint64_t seed = 0;            // used only when threshold noise is on
};

/// Converts high-rate frames to events with the log-intensity threshold
/// model: per pixel, linearly interpolate log(1 + I) between frames and emit
/// an event at each crossing of the reference level plus/minus a threshold,
/// moving the reference to the crossed level. Output is sorted by timestamp
/// with ties broken by (y, x, polarity).
inline EventStream generate_events(const std::vector<Image2D<double>>& frames,
                                   const std::vector<Timestamp>& ts, double threshold_pos,
                                   double threshold_neg, const GenOptions& options = {}) {
    if (frames.size() < 2) throw std::invalid_argument("generate_events: need at least 2 frames");
    if (frames.size() != ts.size())
        throw std::invalid_argument("generate_events: frames/timestamps length mismatch");
    if (threshold_pos <= 0.0 || threshold_neg <= 0.0)
        throw std::invalid_argument("generate_events: thresholds must be positive");
    const int w = frames.front().width;
    const int h = frames.front().height;

    constexpr double kSlack = 1e-12;  // tolerance for crossings that land exactly on a level

    struct RawEvent {
        Timestamp t;
        std::uint16_t x, y;
        std::uint8_t p;
    };
    std::vector<RawEvent> raw;

    std::mt19937_64 rng(options.seed);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double cp = threshold_pos;
            double cm = threshold_neg;
            if (options.threshold_noise_sigma > 0.0) {
                // Box-Muller, two factors per pixel
                const double u1 = std::max(detail::uniform01(rng), 0x1.0p-53);
                const double u2 = detail::uniform01(rng);
                const double r = std::sqrt(-2.0 * std::log(u1));
                cp *= std::max(0.1, 1.0 + options.threshold_noise_sigma * r * std::cos(2 * M_PI * u2));
                cm *= std::max(0.1, 1.0 + options.threshold_noise_sigma * r * std::sin(2 * M_PI * u2));
            }

            auto log_intensity = [&](const Image2D<double>& f) {
                double i = f.at(y, x);
                if (i < 0.0) {
                    if (i < -1e-9)
                        throw std::invalid_argument("generate_events: negative intensity");
                    i = 0.0;  // rounding noise from analytic patterns
                }
                return std::log1p(i);
            };

            double level_prev = log_intensity(frames[0]);
            double level_ref = level_prev;
            Timestamp last_event_t = std::numeric_limits<Timestamp>::min();
            for (std::size_t j = 1; j < frames.size(); ++j) {
                const double level_next = log_intensity(frames[j]);
                const Timestamp ta = ts[j - 1];
                const Timestamp tb = ts[j];
                const double dl = level_next - level_prev;
                if (dl > 0.0) {
                    while (level_ref + cp <= level_next + kSlack) {
                        const double crossed = level_ref + cp;
                        const double f = std::clamp((crossed - level_prev) / dl, 0.0, 1.0);
                        const auto t = ta + static_cast<Timestamp>(std::llround(f * (tb - ta)));
                        level_ref = crossed;
                        if (options.refractory_us > 0 && t - last_event_t < options.refractory_us)
                            continue;
                        raw.push_back({t, static_cast<std::uint16_t>(x),
                                       static_cast<std::uint16_t>(y), 1});
                        last_event_t = t;
                    }
                } else if (dl < 0.0) {
                    while (level_ref - cm >= level_next - kSlack) {
                        const double crossed = level_ref - cm;
                        const double f = std::clamp((crossed - level_prev) / dl, 0.0, 1.0);
                        const auto t = ta + static_cast<Timestamp>(std::llround(f * (tb - ta)));
                        level_ref = crossed;
                        if (options.refractory_us > 0 && t - last_event_t < options.refractory_us)
                            continue;
                        raw.push_back({t, static_cast<std::uint16_t>(x),
                                       static_cast<std::uint16_t>(y), 0});
                        last_event_t = t;
                    }
                }
                level_prev = level_next;
            }
        }
    }

    std::stable_sort(raw.begin(), raw.end(), [](const RawEvent& a, const RawEvent& b) {
        if (a.t != b.t) return a.t < b.t;
        if (a.y != b.y) return a.y < b.y;
        if (a.x != b.x) return a.x < b.x;
        return a.p < b.p;
    });

    EventStream out;
    out.reserve(raw.size());
    for (const auto& e : raw) out.push_back(e.x, e.y, e.t, e.p != 0);
    return out;
}

/// Grayscale frames at frame_rate quantized from the high-rate rendering.
inline GraySequence subsample_gray(const RenderedScene& scene, const SceneSpec& spec) {
    GraySequence grays;
    const auto n_gray = static_cast<std::int64_t>(std::llround(spec.duration_s * spec.frame_rate_hz)) + 1;
    for (std::int64_t k = 0; k < n_gray; ++k) {
        const double t_s = static_cast<double>(k) / spec.frame_rate_hz;
        const auto j = static_cast<std::size_t>(std::llround(t_s * spec.sim_rate_hz));
        if (j >= scene.frames.size()) break;
        const auto& frame = scene.frames[j];
        GrayImage img(frame.width, frame.height);
        for (std::size_t i = 0; i < frame.data.size(); ++i)
            img.data[i] = static_cast<std::uint8_t>(
                std::clamp(std::lround(frame.data[i] * 255.0), 0L, 255L));
        grays.frames.push_back(std::move(img));
        grays.ts.push_back(scene.ts[j]);
    }
    return grays;
}

/// Renders the scene, generates events, subsamples gray frames, and writes
/// everything as a container (thresholds recorded in props.json).
inline store::Container make_dataset(const SceneSpec& spec, const std::filesystem::path& dir,
                                     const store::WriteOptions& options = {},
                                     const GenOptions& gen_options = {}) {
    spec.require_valid();
    const RenderedScene scene = render_scene(spec);
    const EventStream events = generate_events(scene.frames, scene.ts, spec.sensor.threshold_pos,
                                               spec.sensor.threshold_neg, gen_options);
    const GraySequence grays = subsample_gray(scene, spec);
    return store::write_sequence(events, grays, scene.flow, spec.sensor, dir, options,
                                 spec.to_json());
}

// ---------------------------------------------------------------------------
// JSON round trip for scene specs

inline SceneSpec SceneSpec::from_json(const nlohmann::json& j) {
    SceneSpec spec;
    spec.duration_s = j.at("duration_s").get<double>();
    spec.sim_rate_hz = j.value("sim_rate_hz", 1000.0);
    spec.frame_rate_hz = j.value("frame_rate_hz", 25.0);
    spec.flow_rate_hz = j.value("flow_rate_hz", 25.0);

    const auto& p = j.at("pattern");
    const std::string pattern_type = p.at("type").get<std::string>();
    if (pattern_type == "checkerboard") {
        spec.pattern = Pattern::checkerboard;
        spec.cell_px = p.value("cell_px", 8.0);
    } else if (pattern_type == "sinusoid") {
        spec.pattern = Pattern::sinusoid;
        spec.period_px = p.value("period_px", 8.0);
    } else if (pattern_type == "gaussian_blobs") {
        spec.pattern = Pattern::gaussian_blobs;
        spec.blob_count = p.value("count", 30);
        spec.blob_radius_px = p.value("radius_px", 3.0);
        spec.blob_seed = p.value("seed", std::uint64_t{1});
    } else {
        throw std::invalid_argument("SceneSpec: unknown pattern type: " + pattern_type);
    }

    const auto& m = j.at("motion");
    const std::string motion_type = m.at("type").get<std::string>();
    if (motion_type == "translation") {
        spec.motion = Motion::translation;
        spec.vx_px_s = m.value("vx_px_s", 0.0);
        spec.vy_px_s = m.value("vy_px_s", 0.0);
    } else if (motion_type == "rotation") {
        spec.motion = Motion::rotation;
        spec.omega_rad_s = m.value("omega_rad_s", 0.0);
    } else {
        throw std::invalid_argument("SceneSpec: unknown motion type: " + motion_type);
    }

    const auto& s = j.at("sensor");
    spec.sensor.width = s.at("width").get<int>();
    spec.sensor.height = s.at("height").get<int>();
    spec.sensor.event_clock_hz = s.value("event_clock_hz", spec.sim_rate_hz);
    spec.sensor.gray_rate_hz = s.value("gray_rate_hz", spec.frame_rate_hz);
    spec.sensor.flow_rate_hz = s.value("flow_rate_hz", spec.flow_rate_hz);
    spec.sensor.threshold_pos = s.value("threshold_pos", 0.5);
    spec.sensor.threshold_neg = s.value("threshold_neg", 0.4);
    spec.require_valid();
    return spec;
}

inline nlohmann::json SceneSpec::to_json() const {
    nlohmann::json pattern_json;
    switch (pattern) {
        case Pattern::checkerboard:
            pattern_json = {{"type", "checkerboard"}, {"cell_px", cell_px}};
            break;
        case Pattern::sinusoid:
            pattern_json = {{"type", "sinusoid"}, {"period_px", period_px}};
            break;
        case Pattern::gaussian_blobs:
            pattern_json = {{"type", "gaussian_blobs"},
                            {"count", blob_count},
                            {"radius_px", blob_radius_px},
                            {"seed", blob_seed}};
            break;
    }
    nlohmann::json motion_json;
    if (motion == Motion::translation)
        motion_json = {{"type", "translation"}, {"vx_px_s", vx_px_s}, {"vy_px_s", vy_px_s}};
    else
        motion_json = {{"type", "rotation"}, {"omega_rad_s", omega_rad_s}};
    return nlohmann::json{{"pattern", pattern_json},
                          {"motion", motion_json},
                          {"duration_s", duration_s},
                          {"sim_rate_hz", sim_rate_hz},
                          {"frame_rate_hz", frame_rate_hz},
                          {"flow_rate_hz", flow_rate_hz},
                          {"sensor",
                           {{"width", sensor.width},
                            {"height", sensor.height},
                            {"event_clock_hz", sensor.event_clock_hz},
                            {"gray_rate_hz", sensor.gray_rate_hz},
                            {"flow_rate_hz", sensor.flow_rate_hz},
                            {"threshold_pos", sensor.threshold_pos},
                            {"threshold_neg", sensor.threshold_neg}}}};
}

}  // namespace evk::simgen
