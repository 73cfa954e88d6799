#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "evk/core.hpp"

namespace evk::encode {

/// Parameters of the Gaussian encoder.
struct EncoderConfig {
    int num_bins = 1;
    double sigma_us = 1000.0;  // Gaussian width in microseconds
    double lambda = 1.0;       // per-bin amplitude scale

    void require_valid() const {
        if (num_bins < 1 || sigma_us <= 0.0 || lambda <= 0.0)
            throw std::invalid_argument("EncoderConfig: invalid parameters");
    }
};

/// One point of weight to be deposited onto the pixel grid.
struct SplatPoint {
    double x;
    double y;
    double weight;
};

/// Distributes each point's weight to its four neighboring integer pixels
/// with bilinear coefficients; corners falling outside the frame are dropped.
inline Image2D<double> splat_iwe(std::span<const SplatPoint> points, int width, int height) {
    Image2D<double> iwe(width, height, 0.0);
    for (const SplatPoint& p : points) {
        const int x0 = static_cast<int>(std::floor(p.x));
        const int y0 = static_cast<int>(std::floor(p.y));
        const double fx = p.x - x0;
        const double fy = p.y - y0;
        const double cw[4] = {(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy,
                              fx * fy};
        const int cx[4] = {x0, x0 + 1, x0, x0 + 1};
        const int cy[4] = {y0, y0, y0 + 1, y0 + 1};
        for (int c = 0; c < 4; ++c) {
            if (cx[c] < 0 || cx[c] >= width || cy[c] < 0 || cy[c] >= height) continue;
            iwe.at(cy[c], cx[c]) += cw[c] * p.weight;
        }
    }
    return iwe;
}

inline Image2D<double> splat_iwe(const std::vector<SplatPoint>& points, int width, int height) {
    return splat_iwe(std::span<const SplatPoint>(points), width, height);
}

/// Bins events into num_bins equal intervals; each channel holds the absolute
/// per-polarity count, so the signed polarity sum is pos - neg.
inline std::vector<EncodedFrame> encode_count(const EventStream& events, Timestamp t0,
                                              Timestamp t1, int num_bins,
                                              const SensorProps& props) {
    if (t0 >= t1) throw std::invalid_argument("encode_count: empty interval");
    if (num_bins < 1) throw std::invalid_argument("encode_count: num_bins must be >= 1");
    std::vector<EncodedFrame> frames;
    frames.reserve(num_bins);
    const double bin_dt = static_cast<double>(t1 - t0) / num_bins;
    for (int b = 0; b < num_bins; ++b) {
        const Timestamp b0 = t0 + static_cast<Timestamp>(std::llround(b * bin_dt));
        const Timestamp b1 =
            b + 1 == num_bins ? t1 : t0 + static_cast<Timestamp>(std::llround((b + 1) * bin_dt));
        frames.emplace_back(props.width, props.height, b0, b1);
    }
    for (std::size_t i = 0; i < events.size(); ++i) {
        const Timestamp t = events.ts[i];
        if (t < t0 || t >= t1) continue;
        const int b = static_cast<int>(((t - t0) * num_bins) / (t1 - t0));
        auto& channel = events.ps[i] ? frames[b].pos : frames[b].neg;
        channel.at(events.ys[i], events.xs[i]) += 1.0;
    }
    return frames;
}

/// Gaussian encoding: every event contributes to every bin, weighted by a
/// peak-normalized Gaussian of its distance to the bin center, scaled by
/// lambda. Bin centers sit at t0 + (b + 0.5) * (t1 - t0) / num_bins.
inline std::vector<EncodedFrame> encode_gaussian(const EventStream& events, Timestamp t0,
                                                 Timestamp t1, const EncoderConfig& config,
                                                 const SensorProps& props) {
    if (t0 >= t1) throw std::invalid_argument("encode_gaussian: empty interval");
    config.require_valid();
    std::vector<EncodedFrame> frames;
    frames.reserve(config.num_bins);
    const double bin_dt = static_cast<double>(t1 - t0) / config.num_bins;
    for (int b = 0; b < config.num_bins; ++b) {
        const Timestamp b0 = t0 + static_cast<Timestamp>(std::llround(b * bin_dt));
        const Timestamp b1 = b + 1 == config.num_bins
                                 ? t1
                                 : t0 + static_cast<Timestamp>(std::llround((b + 1) * bin_dt));
        frames.emplace_back(props.width, props.height, b0, b1);
    }
    const double inv_two_sigma_sq = 1.0 / (2.0 * config.sigma_us * config.sigma_us);
    for (std::size_t i = 0; i < events.size(); ++i) {
        const double t = static_cast<double>(events.ts[i]);
        for (int b = 0; b < config.num_bins; ++b) {
            const double center = static_cast<double>(t0) + (b + 0.5) * bin_dt;
            const double d = t - center;
            const double w = config.lambda * std::exp(-d * d * inv_two_sigma_sq);
            auto& channel = events.ps[i] ? frames[b].pos : frames[b].neg;
            channel.at(events.ys[i], events.xs[i]) += w;
        }
    }
    return frames;
}

}  // namespace evk::encode
