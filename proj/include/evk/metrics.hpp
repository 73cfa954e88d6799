#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evk/core.hpp"

namespace evk::metrics {

/// Vectors shorter than this are excluded from angular error (the angle of a
/// near-zero vector is undefined).
constexpr double kAngleCutoffPx = 1e-6;

/// True exactly at pixels that saw at least one event.
inline Image2D<std::uint8_t> event_mask(const EventStream& events, int width, int height) {
    Image2D<std::uint8_t> mask(width, height, 0);
    for (std::size_t i = 0; i < events.size(); ++i) mask.at(events.ys[i], events.xs[i]) = 1;
    return mask;
}

namespace detail {

inline void require_shapes(const FlowField& pred, const FlowField& gt,
                           const Image2D<std::uint8_t>& mask) {
    if (!pred.u.same_shape(gt.u) || pred.width() != mask.width || pred.height() != mask.height)
        throw std::invalid_argument("metrics: shape mismatch");
}

inline double endpoint_error(const FlowField& pred, const FlowField& gt, int y, int x) {
    const double du = pred.u.at(y, x) - gt.u.at(y, x);
    const double dv = pred.v.at(y, x) - gt.v.at(y, x);
    return std::sqrt(du * du + dv * dv);
}

/// Unsigned angle in [0, pi] between the two 2-D flow vectors.
inline double angle_between(const FlowField& pred, const FlowField& gt, int y, int x) {
    const double up = pred.u.at(y, x), vp = pred.v.at(y, x);
    const double ug = gt.u.at(y, x), vg = gt.v.at(y, x);
    const double cross = up * vg - vp * ug;
    const double dot = up * ug + vp * vg;
    return std::atan2(std::abs(cross), dot);
}

inline bool angle_defined(const FlowField& f, int y, int x) {
    return std::hypot(f.u.at(y, x), f.v.at(y, x)) >= kAngleCutoffPx;
}

}  // namespace detail

/// Mean Euclidean distance between predicted and ground-truth endpoints over
/// masked pixels.
inline double aee(const FlowField& pred, const FlowField& gt, const Image2D<std::uint8_t>& mask) {
    detail::require_shapes(pred, gt, mask);
    double sum = 0.0;
    std::uint64_t n = 0;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(y, x)) continue;
            sum += detail::endpoint_error(pred, gt, y, x);
            ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("aee: empty mask");
    return sum / static_cast<double>(n);
}

/// Mean angle (radians) between prediction and ground truth over masked
/// pixels; pixels where either vector is shorter than the cutoff are skipped.
inline double aae(const FlowField& pred, const FlowField& gt, const Image2D<std::uint8_t>& mask) {
    detail::require_shapes(pred, gt, mask);
    double sum = 0.0;
    std::uint64_t n = 0;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(y, x)) continue;
            if (!detail::angle_defined(pred, y, x) || !detail::angle_defined(gt, y, x)) continue;
            sum += detail::angle_between(pred, gt, y, x);
            ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("aae: no pixels with a defined angle");
    return sum / static_cast<double>(n);
}

/// Percentage of masked pixels whose endpoint error exceeds threshold_px.
inline double xpe(const FlowField& pred, const FlowField& gt, const Image2D<std::uint8_t>& mask,
                  double threshold_px) {
    detail::require_shapes(pred, gt, mask);
    if (threshold_px <= 0.0) throw std::invalid_argument("xpe: threshold must be positive");
    std::uint64_t outliers = 0;
    std::uint64_t n = 0;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(y, x)) continue;
            if (detail::endpoint_error(pred, gt, y, x) > threshold_px) ++outliers;
            ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("xpe: empty mask");
    return 100.0 * static_cast<double>(outliers) / static_cast<double>(n);
}

struct MetricsReport {
    bool has_data = false;
    double aee = 0.0;
    double aae_rad = 0.0;
    double aae_deg = 0.0;
    std::uint64_t n_pixels = 0;
    std::vector<std::pair<double, double>> outliers;  // (threshold px, percentage)
    std::uint64_t excluded_angle_pixels = 0;

    nlohmann::json to_json() const {
        if (!has_data) return nlohmann::json{{"no_data", true}};
        nlohmann::json out{{"aee", aee},
                           {"aae_deg", aae_deg},
                           {"n_pixels", n_pixels},
                           {"excluded_angle_pixels", excluded_angle_pixels}};
        nlohmann::json pct = nlohmann::json::object();
        for (const auto& [threshold, percentage] : outliers) {
            std::ostringstream key;
            key << threshold << "PE";
            pct[key.str()] = percentage;
        }
        out["outliers"] = pct;
        return out;
    }
};

/// Pixel-weighted running totals, so a report over many slices equals the
/// metric over the union of their masked pixels. Merging is associative.
class MetricsAccumulator {
  public:
    explicit MetricsAccumulator(std::vector<double> thresholds = {1.0, 3.0})
        : thresholds_(std::move(thresholds)), outlier_counts_(thresholds_.size(), 0) {}

    void add(const FlowField& pred, const FlowField& gt, const Image2D<std::uint8_t>& mask) {
        detail::require_shapes(pred, gt, mask);
        for (int y = 0; y < mask.height; ++y) {
            for (int x = 0; x < mask.width; ++x) {
                if (!mask.at(y, x)) continue;
                const double epe = detail::endpoint_error(pred, gt, y, x);
                sum_epe_ += epe;
                ++n_pixels_;
                for (std::size_t k = 0; k < thresholds_.size(); ++k)
                    if (epe > thresholds_[k]) ++outlier_counts_[k];
                if (detail::angle_defined(pred, y, x) && detail::angle_defined(gt, y, x)) {
                    sum_angle_ += detail::angle_between(pred, gt, y, x);
                    ++n_angle_pixels_;
                } else {
                    ++excluded_angle_pixels_;
                }
            }
        }
    }

    void merge(const MetricsAccumulator& other) {
        if (other.thresholds_ != thresholds_)
            throw std::invalid_argument("MetricsAccumulator: threshold sets differ");
        sum_epe_ += other.sum_epe_;
        sum_angle_ += other.sum_angle_;
        n_pixels_ += other.n_pixels_;
        n_angle_pixels_ += other.n_angle_pixels_;
        excluded_angle_pixels_ += other.excluded_angle_pixels_;
        for (std::size_t k = 0; k < outlier_counts_.size(); ++k)
            outlier_counts_[k] += other.outlier_counts_[k];
    }

    std::uint64_t n_pixels() const { return n_pixels_; }

    MetricsReport report() const {
        MetricsReport rep;
        if (n_pixels_ == 0) return rep;  // "no data" marker, not zeros
        rep.has_data = true;
        rep.aee = sum_epe_ / static_cast<double>(n_pixels_);
        rep.n_pixels = n_pixels_;
        rep.excluded_angle_pixels = excluded_angle_pixels_;
        if (n_angle_pixels_ > 0) {
            rep.aae_rad = sum_angle_ / static_cast<double>(n_angle_pixels_);
            rep.aae_deg = rep.aae_rad * 180.0 / 3.14159265358979323846;
        }
        for (std::size_t k = 0; k < thresholds_.size(); ++k)
            rep.outliers.emplace_back(thresholds_[k],
                                      100.0 * static_cast<double>(outlier_counts_[k]) /
                                          static_cast<double>(n_pixels_));
        return rep;
    }

  private:
    std::vector<double> thresholds_;
    std::vector<std::uint64_t> outlier_counts_;
    double sum_epe_ = 0.0;
    double sum_angle_ = 0.0;
    std::uint64_t n_pixels_ = 0;
    std::uint64_t n_angle_pixels_ = 0;
    std::uint64_t excluded_angle_pixels_ = 0;
};

}  // namespace evk::metrics
