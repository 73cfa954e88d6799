#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evk/core.hpp"
#include "evk/encode.hpp"
#include "evk/flow.hpp"

namespace evk::cmax {

enum class Objective { variance, grad_mag, multifocal_normalized };
enum class ReferenceTime { t0, midpoint, t1 };

inline const char* objective_name(Objective o) {
    switch (o) {
        case Objective::variance: return "variance";
        case Objective::grad_mag: return "grad_mag";
        case Objective::multifocal_normalized: return "multifocal_normalized";
    }
    return "?";
}

inline Objective objective_from_name(const std::string& name) {
    if (name == "variance") return Objective::variance;
    if (name == "grad_mag") return Objective::grad_mag;
    if (name == "multifocal_normalized") return Objective::multifocal_normalized;
    throw std::invalid_argument("unknown objective: " + name);
}

struct CmaxConfig {
    int patch_rows = 8;
    int patch_cols = 8;
    int pyramid_levels = 3;
    int max_iters = 250;      // per level
    double step_size = 1.0;   // ascent step in pixels of control-point motion
    double smoothness_weight = 1.0;
    Objective objective = Objective::multifocal_normalized;
    std::vector<ReferenceTime> reference_times = {ReferenceTime::t0, ReferenceTime::t1};
    double charbonnier_alpha = 0.45;
    double charbonnier_eps = 1e-3;

    void require_valid() const {
        if (patch_rows < 1 || patch_cols < 1)
            throw std::invalid_argument("CmaxConfig: patch_grid must be at least 1x1");
        if (pyramid_levels < 1 || max_iters < 1)
            throw std::invalid_argument("CmaxConfig: pyramid_levels and max_iters must be >= 1");
        if (step_size <= 0.0 || smoothness_weight < 0.0)
            throw std::invalid_argument("CmaxConfig: bad step or smoothness weight");
        if (reference_times.empty())
            throw std::invalid_argument("CmaxConfig: reference_times must be non-empty");
        if (charbonnier_eps <= 0.0)
            throw std::invalid_argument("CmaxConfig: charbonnier_eps must be positive");
    }

    static CmaxConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// ---------------------------------------------------------------------------
// Losses

/// Smooth L1 approximation: (x^2 + eps^2)^alpha.
inline double loss_charbonnier(double x, double alpha, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("loss_charbonnier: eps must be positive");
    return std::pow(x * x + eps * eps, alpha);
}

/// Mean Charbonnier penalty of forward-difference flow gradients, both
/// components and both directions.
inline double loss_smoothness(const FlowField& field, double alpha = 0.45, double eps = 1e-3) {
    const int w = field.width();
    const int h = field.height();
    double sum = 0.0;
    std::size_t terms = 0;
    for (const auto* comp : {&field.u, &field.v}) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                if (x + 1 < w) {
                    sum += loss_charbonnier(comp->at(y, x + 1) - comp->at(y, x), alpha, eps);
                    ++terms;
                }
                if (y + 1 < h) {
                    sum += loss_charbonnier(comp->at(y + 1, x) - comp->at(y, x), alpha, eps);
                    ++terms;
                }
            }
        }
    }
    return terms == 0 ? 0.0 : sum / static_cast<double>(terms);
}

/// Mean Charbonnier difference between the t0 image and the t1 image sampled
/// at flow-displaced positions (bilinear, border-clamped).
inline double loss_photometric(const Image2D<double>& gray_t0, const Image2D<double>& gray_t1,
                               const FlowField& field, double alpha = 0.45, double eps = 1e-3) {
    if (!gray_t0.same_shape(gray_t1) || gray_t0.width != field.width() ||
        gray_t0.height != field.height())
        throw std::invalid_argument("loss_photometric: shape mismatch");
    double sum = 0.0;
    for (int y = 0; y < gray_t0.height; ++y) {
        for (int x = 0; x < gray_t0.width; ++x) {
            const double moved = flow::detail::sample_grid(gray_t1, x + field.u.at(y, x),
                                                           y + field.v.at(y, x));
            sum += loss_charbonnier(gray_t0.at(y, x) - moved, alpha, eps);
        }
    }
    return sum / static_cast<double>(gray_t0.size());
}

// ---------------------------------------------------------------------------
// Event warping and contrast objectives

/// Transports each event to t_ref along the flow sampled at its pixel:
/// x' = x + u * (t_ref - t) / (t1 - t0). Weight is +1 unless polarity
/// weighting is requested (+1 / -1).
inline std::vector<encode::SplatPoint> warp_events(const EventStream& events,
                                                   const FlowField& field, Timestamp t_ref,
                                                   bool polarity_weights = false) {
    if (field.t1 <= field.t0)
        throw std::invalid_argument("warp_events: empty flow interval");
    if (t_ref < field.t0 || t_ref > field.t1)
        throw std::invalid_argument("warp_events: t_ref outside the flow interval");
    const double inv_duration = 1.0 / static_cast<double>(field.t1 - field.t0);
    std::vector<encode::SplatPoint> out;
    out.reserve(events.size());
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto [u, v] = flow::sample_bilinear(field, events.xs[i], events.ys[i]);
        const double s = static_cast<double>(t_ref - events.ts[i]) * inv_duration;
        out.push_back({events.xs[i] + s * u, events.ys[i] + s * v,
                       polarity_weights ? static_cast<double>(polarity_sign(events.ps[i])) : 1.0});
    }
    return out;
}

/// Population variance of the image of warped events.
inline double objective_variance(const Image2D<double>& iwe) {
    const double n = static_cast<double>(iwe.size());
    double mean = 0.0;
    for (double v : iwe.data) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : iwe.data) var += (v - mean) * (v - mean);
    return var / n;
}

/// Mean squared forward-difference gradient magnitude of the image.
inline double objective_grad_mag(const Image2D<double>& iwe) {
    double sum = 0.0;
    for (int y = 0; y < iwe.height; ++y) {
        for (int x = 0; x < iwe.width; ++x) {
            if (x + 1 < iwe.width) {
                const double gx = iwe.at(y, x + 1) - iwe.at(y, x);
                sum += gx * gx;
            }
            if (y + 1 < iwe.height) {
                const double gy = iwe.at(y + 1, x) - iwe.at(y, x);
                sum += gy * gy;
            }
        }
    }
    return sum / static_cast<double>(iwe.size());
}

namespace detail {

inline double base_objective(Objective o, const Image2D<double>& iwe) {
    return o == Objective::grad_mag ? objective_grad_mag(iwe) : objective_variance(iwe);
}

// Quadratic B-spline voting kernel used by the estimator's internal IWE.
// Unlike the bilinear vote, it is C1 in the point position, so the objective
// has no kink on the pixel lattice: a plain bilinear vote is sharpest when
// warped points land exactly on integer coordinates, which biases the
// maximum toward flows with zero components.
inline double bspline2(double d) {
    const double a = std::abs(d);
    if (a < 0.5) return 0.75 - a * a;
    if (a < 1.5) {
        const double t = 1.5 - a;
        return 0.5 * t * t;
    }
    return 0.0;
}

inline double bspline2_derivative(double d) {
    const double a = std::abs(d);
    if (a < 0.5) return -2.0 * d;
    if (a < 1.5) return d < 0.0 ? (1.5 - a) : -(1.5 - a);
    return 0.0;
}

/// Per-polarity B-spline IWEs of the given point positions (unit votes).
inline std::array<Image2D<double>, 2> splat_polarity_channels(
    const std::vector<double>& px, const std::vector<double>& py,
    const std::vector<std::uint8_t>& ps, int img_w, int img_h) {
    std::array<Image2D<double>, 2> channels = {Image2D<double>(img_w, img_h, 0.0),
                                               Image2D<double>(img_w, img_h, 0.0)};
    for (std::size_t i = 0; i < px.size(); ++i) {
        auto& iwe = channels[ps[i] ? 1 : 0];
        const int cx = static_cast<int>(std::lround(px[i]));
        const int cy = static_cast<int>(std::lround(py[i]));
        for (int my = cy - 1; my <= cy + 1; ++my) {
            if (my < 0 || my >= img_h) continue;
            const double wy = bspline2(py[i] - my);
            for (int mx = cx - 1; mx <= cx + 1; ++mx) {
                if (mx < 0 || mx >= img_w) continue;
                iwe.at(my, mx) += wy * bspline2(px[i] - mx);
            }
        }
    }
    return channels;
}

/// Base objective summed over the per-polarity IWEs.
inline double split_contrast_value(const std::vector<double>& px, const std::vector<double>& py,
                                   const std::vector<std::uint8_t>& ps, int img_w, int img_h,
                                   Objective base) {
    const auto channels = splat_polarity_channels(px, py, ps, img_w, img_h);
    return base_objective(base, channels[0]) + base_objective(base, channels[1]);
}

inline Timestamp reference_timestamp(ReferenceTime r, Timestamp t0, Timestamp t1) {
    switch (r) {
        case ReferenceTime::t0: return t0;
        case ReferenceTime::midpoint: return t0 + (t1 - t0) / 2;
        case ReferenceTime::t1: return t1;
    }
    return t0;
}

/// Pixels of canvas padding around the splat target. Warped events that
/// leave the sensor would otherwise stop contributing, which turns
/// "push everything out of frame" into a spurious contrast maximum.
constexpr int kCanvasPadPx = 16;

/// Compressive strain below this magnitude is free; folding fields that pile
/// events together run strain toward -1 and pay the collapse guard.
constexpr double kStrainDeadZone = 0.3;

}  // namespace detail

/// Contrast objective of a dense candidate flow, averaged over the configured
/// reference times. The image of warped events is formed per polarity channel
/// with a quadratic B-spline vote on a padded canvas (the same formation the
/// estimator maximizes; see detail::LevelProblem). For multifocal_normalized
/// each term is divided by the same objective at the identity warp, so zero
/// flow scores exactly 1.
inline double contrast_objective(const EventStream& events, const FlowField& field,
                                 const CmaxConfig& config) {
    config.require_valid();
    if (field.t1 <= field.t0)
        throw std::invalid_argument("contrast_objective: empty flow interval");
    const int pad = detail::kCanvasPadPx;
    const int img_w = field.width() + 2 * pad;
    const int img_h = field.height() + 2 * pad;
    const Objective base = config.objective == Objective::multifocal_normalized
                               ? Objective::variance
                               : config.objective;
    const std::size_t n = events.size();

    double identity_value = 0.0;
    if (config.objective == Objective::multifocal_normalized) {
        std::vector<double> ix(n), iy(n);
        for (std::size_t i = 0; i < n; ++i) {
            ix[i] = events.xs[i] + pad;
            iy[i] = events.ys[i] + pad;
        }
        identity_value = detail::split_contrast_value(ix, iy, events.ps, img_w, img_h, base);
        if (identity_value <= 0.0)
            throw std::runtime_error("contrast_objective: degenerate normalizer");
    }

    double total = 0.0;
    std::vector<double> wx(n), wy(n);
    const double inv_duration = 1.0 / static_cast<double>(field.t1 - field.t0);
    for (ReferenceTime r : config.reference_times) {
        const Timestamp t_ref = detail::reference_timestamp(r, field.t0, field.t1);
        for (std::size_t i = 0; i < n; ++i) {
            const auto [u, v] = flow::sample_bilinear(field, events.xs[i], events.ys[i]);
            const double s = static_cast<double>(t_ref - events.ts[i]) * inv_duration;
            wx[i] = events.xs[i] + s * u + pad;
            wy[i] = events.ys[i] + s * v + pad;
        }
        double value = detail::split_contrast_value(wx, wy, events.ps, img_w, img_h, base);
        if (config.objective == Objective::multifocal_normalized) value /= identity_value;
        total += value;
    }
    return total / static_cast<double>(config.reference_times.size());
}

/// Multi-focal normalized contrast of a candidate flow (see
/// contrast_objective); the base objective is the image variance.
inline double objective_multifocal_normalized(const EventStream& events, const FlowField& field,
                                              const CmaxConfig& config) {
    CmaxConfig normalized = config;
    normalized.objective = Objective::multifocal_normalized;
    return contrast_objective(events, field, normalized);
}

// ---------------------------------------------------------------------------
// Estimator internals: flow parameterized on a control grid, bilinearly
// upsampled to dense; analytic gradients through the B-spline vote.

namespace detail {

struct ControlGrid {
    int rows = 0;
    int cols = 0;
    std::vector<double> u;  // row-major rows x cols
    std::vector<double> v;

    ControlGrid() = default;
    ControlGrid(int r, int c)
        : rows(r), cols(c), u(static_cast<std::size_t>(r) * c, 0.0),
          v(static_cast<std::size_t>(r) * c, 0.0) {}

    std::size_t size() const { return u.size(); }
};

/// Bilinear interpolation weights of a pixel position against the control
/// lattice spanning [0, width-1] x [0, height-1].
struct GridWeights {
    int r0, c0;
    double fr, fc;
};

inline GridWeights grid_weights(double x, double y, int rows, int cols, int width, int height) {
    GridWeights gw{0, 0, 0.0, 0.0};
    if (cols > 1) {
        const double gx = x * (cols - 1) / static_cast<double>(width - 1);
        gw.c0 = std::min(static_cast<int>(gx), cols - 2);
        gw.fc = gx - gw.c0;
    }
    if (rows > 1) {
        const double gy = y * (rows - 1) / static_cast<double>(height - 1);
        gw.r0 = std::min(static_cast<int>(gy), rows - 2);
        gw.fr = gy - gw.r0;
    }
    return gw;
}

inline void corner_weights(const GridWeights& gw, int rows, int cols, int idx[4], double w[4]) {
    const int r1 = std::min(gw.r0 + 1, rows - 1);
    const int c1 = std::min(gw.c0 + 1, cols - 1);
    idx[0] = gw.r0 * cols + gw.c0;
    idx[1] = gw.r0 * cols + c1;
    idx[2] = r1 * cols + gw.c0;
    idx[3] = r1 * cols + c1;
    w[0] = (1.0 - gw.fr) * (1.0 - gw.fc);
    w[1] = (1.0 - gw.fr) * gw.fc;
    w[2] = gw.fr * (1.0 - gw.fc);
    w[3] = gw.fr * gw.fc;
}

/// Resamples control values onto a finer lattice by bilinear interpolation of
/// the coarse control field at the fine control-point positions. Exact when
/// the coarse function is bilinear across each fine cell (always true for a
/// 1x1 or 2x2 source).
inline ControlGrid prolong_grid(const ControlGrid& coarse, int rows, int cols, int width,
                                int height) {
    ControlGrid fine(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double px = cols > 1 ? c * (width - 1) / static_cast<double>(cols - 1)
                                       : (width - 1) / 2.0;
            const double py = rows > 1 ? r * (height - 1) / static_cast<double>(rows - 1)
                                       : (height - 1) / 2.0;
            const GridWeights gw = grid_weights(px, py, coarse.rows, coarse.cols, width, height);
            int idx[4];
            double w[4];
            corner_weights(gw, coarse.rows, coarse.cols, idx, w);
            double u = 0.0, v = 0.0;
            for (int k = 0; k < 4; ++k) {
                u += w[k] * coarse.u[idx[k]];
                v += w[k] * coarse.v[idx[k]];
            }
            fine.u[r * cols + c] = u;
            fine.v[r * cols + c] = v;
        }
    }
    return fine;
}

inline FlowField dense_from_grid(const ControlGrid& grid, int width, int height, Timestamp t0,
                                 Timestamp t1) {
    FlowField field(width, height, t0, t1);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const GridWeights gw = grid_weights(x, y, grid.rows, grid.cols, width, height);
            int idx[4];
            double w[4];
            corner_weights(gw, grid.rows, grid.cols, idx, w);
            double u = 0.0, v = 0.0;
            for (int c = 0; c < 4; ++c) {
                u += w[c] * grid.u[idx[c]];
                v += w[c] * grid.v[idx[c]];
            }
            field.u.at(y, x) = u;
            field.v.at(y, x) = v;
        }
    }
    return field;
}

/// Contrast (and optionally its control-grid gradient) at one pyramid scale.
/// Event coordinates are divided by `scale` before splatting, which smooths
/// the objective at coarse levels.
class LevelProblem {
  public:
    LevelProblem(const EventStream& events, const CmaxConfig& config, int width, int height,
                 Timestamp t0, Timestamp t1, int scale)
        : config_(&config),
          width_(width),
          height_(height),
          t0_(t0),
          t1_(t1),
          scale_(scale),
          pad_((kCanvasPadPx + scale - 1) / scale),
          img_w_((width + scale - 1) / scale + 2 * ((kCanvasPadPx + scale - 1) / scale)),
          img_h_((height + scale - 1) / scale + 2 * ((kCanvasPadPx + scale - 1) / scale)) {
        const std::size_t n = events.size();
        ex_.reserve(n);
        ey_.reserve(n);
        ep_.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            ex_.push_back(events.xs[i]);
            ey_.push_back(events.ys[i]);
            ep_.push_back(events.ps[i]);
        }
        const double inv_duration = 1.0 / static_cast<double>(t1 - t0);
        for (ReferenceTime r : config.reference_times) {
            const Timestamp t_ref = reference_timestamp(r, t0, t1);
            std::vector<double> s(n);
            for (std::size_t i = 0; i < n; ++i)
                s[i] = static_cast<double>(t_ref - events.ts[i]) * inv_duration;
            time_scales_.push_back(std::move(s));
        }
        base_ = config.objective == Objective::multifocal_normalized ? Objective::variance
                                                                     : config.objective;
        if (config.objective == Objective::multifocal_normalized) {
            std::vector<double> ix(n), iy(n);
            for (std::size_t i = 0; i < n; ++i) {
                ix[i] = ex_[i] / scale_ + pad_;
                iy[i] = ey_[i] / scale_ + pad_;
            }
            identity_value_ = split_objective(ix, iy, nullptr, nullptr);
            if (identity_value_ <= 0.0)
                throw std::runtime_error("estimate_flow_cmax: degenerate normalizer");
        }

        // Weight of the collapse guard: an IWE of n unit votes has variance
        // (and grad_mag, within 4x) at most n^2 * K2 / M with K2 the squared
        // kernel l2 norm, so pricing compressive strain above that bound
        // makes event-piling fields strictly unprofitable while leaving
        // non-contracting flows untouched.
        const double k2_1d = 0.59375;  // aligned quadratic B-spline, sum of squared taps
        const double m = static_cast<double>(img_w_) * img_h_;
        const double contrast_bound =
            4.0 * static_cast<double>(n) * static_cast<double>(n) * k2_1d * k2_1d / m;
        collapse_weight_ = 10.0 * contrast_bound /
                           (config.objective == Objective::multifocal_normalized
                                ? identity_value_
                                : 1.0);
    }

    std::size_t num_events() const { return ex_.size(); }

    /// Contrast objective; when grad is non-null, also its gradient with
    /// respect to the control values.
    double contrast(const ControlGrid& grid, ControlGrid* grad) const {
        const std::size_t n = ex_.size();
        if (grad) *grad = ControlGrid(grid.rows, grid.cols);

        // per-event control interpolation (same for every reference time)
        std::vector<std::array<int, 4>> eidx(n);
        std::vector<std::array<double, 4>> ew(n);
        std::vector<double> eu(n), ev(n);
        for (std::size_t i = 0; i < n; ++i) {
            const GridWeights gw =
                grid_weights(ex_[i], ey_[i], grid.rows, grid.cols, width_, height_);
            int idx[4];
            double w[4];
            corner_weights(gw, grid.rows, grid.cols, idx, w);
            double u = 0.0, v = 0.0;
            for (int c = 0; c < 4; ++c) {
                u += w[c] * grid.u[idx[c]];
                v += w[c] * grid.v[idx[c]];
                eidx[i][c] = idx[c];
                ew[i][c] = w[c];
            }
            eu[i] = u;
            ev[i] = v;
        }

        double total = 0.0;
        const double inv_scale = 1.0 / scale_;
        std::vector<double> wx(n), wy(n), gx(n), gy(n);
        for (const auto& s : time_scales_) {
            for (std::size_t i = 0; i < n; ++i) {
                wx[i] = (ex_[i] + s[i] * eu[i]) * inv_scale + pad_;
                wy[i] = (ey_[i] + s[i] * ev[i]) * inv_scale + pad_;
            }
            const double norm = config_->objective == Objective::multifocal_normalized
                                    ? identity_value_
                                    : 1.0;
            const double raw = split_objective(wx, wy, grad ? &gx : nullptr, grad ? &gy : nullptr);
            total += raw / norm;
            if (!grad) continue;

            for (std::size_t i = 0; i < n; ++i) {
                // chain rule: position -> flow value -> control values
                const double cu = gx[i] * s[i] * inv_scale / norm;
                const double cv = gy[i] * s[i] * inv_scale / norm;
                for (int c = 0; c < 4; ++c) {
                    grad->u[eidx[i][c]] += cu * ew[i][c];
                    grad->v[eidx[i][c]] += cv * ew[i][c];
                }
            }
        }
        const double count = static_cast<double>(time_scales_.size());
        if (grad) {
            for (auto& g : grad->u) g /= count;
            for (auto& g : grad->v) g /= count;
        }
        return total / count;
    }

    /// Combined ascent objective: contrast minus the smoothness penalty of
    /// the dense field minus the collapse guard (penalty gradients
    /// back-propagated through the control-to-dense upsampling).
    double combined(const ControlGrid& grid, ControlGrid* grad) const {
        double value = contrast(grid, grad);

        const FlowField dense = dense_from_grid(grid, width_, height_, t0_, t1_);
        const double weight = config_->smoothness_weight;
        const double alpha = config_->charbonnier_alpha;
        const double eps = config_->charbonnier_eps;
        const std::size_t terms =
            2u * ((width_ - 1) * height_ + width_ * (height_ - 1));
        if (terms == 0) return value;

        double penalty = 0.0;
        Image2D<double> du(width_, height_, 0.0), dv(width_, height_, 0.0);
        auto add_pair = [&](const Image2D<double>& comp, Image2D<double>& dcomp, int y0, int x0,
                            int y1, int x1) {
            const double g = comp.at(y1, x1) - comp.at(y0, x0);
            const double sq = g * g + eps * eps;
            penalty += std::pow(sq, alpha);
            if (grad) {
                const double d = 2.0 * alpha * g * std::pow(sq, alpha - 1.0);
                dcomp.at(y1, x1) += d;
                dcomp.at(y0, x0) -= d;
            }
        };
        for (int y = 0; y < height_; ++y) {
            for (int x = 0; x < width_; ++x) {
                if (x + 1 < width_) {
                    add_pair(dense.u, du, y, x, y, x + 1);
                    add_pair(dense.v, dv, y, x, y, x + 1);
                }
                if (y + 1 < height_) {
                    add_pair(dense.u, du, y, x, y + 1, x);
                    add_pair(dense.v, dv, y, x, y + 1, x);
                }
            }
        }
        if (weight > 0.0) value -= weight * penalty / static_cast<double>(terms);

        // collapse guard: hinge on compressive normal strain beyond the dead
        // zone; fields that pile events up carry strain near -1 and are
        // priced out of the ascent while ordinary flows stay untouched
        double strain = 0.0;
        const double npx = static_cast<double>(width_) * height_;
        auto hinge = [](double s) { return std::max(0.0, -s - kStrainDeadZone); };
        for (int y = 0; y < height_; ++y) {
            for (int x = 0; x < width_; ++x) {
                if (x + 1 < width_) {
                    const double e = hinge(dense.u.at(y, x + 1) - dense.u.at(y, x));
                    strain += e * e / npx;
                }
                if (y + 1 < height_) {
                    const double e = hinge(dense.v.at(y + 1, x) - dense.v.at(y, x));
                    strain += e * e / npx;
                }
            }
        }
        value -= collapse_weight_ * strain;

        if (grad) {
            // smoothness adjoint (du/dv) scaled by its weight, plus the
            // collapse-guard adjoint, both scattered to control points
            Image2D<double> gu(width_, height_, 0.0), gv(width_, height_, 0.0);
            const double sscale = weight > 0.0 ? weight / static_cast<double>(terms) : 0.0;
            for (std::size_t i = 0; i < gu.data.size(); ++i) {
                gu.data[i] = sscale * du.data[i];
                gv.data[i] = sscale * dv.data[i];
            }
            // hinge adjoint: d/ds max(0, -s - s0)^2 = -2 * max(0, -s - s0)
            for (int y = 0; y < height_; ++y) {
                for (int x = 0; x < width_; ++x) {
                    if (x + 1 < width_) {
                        const double e = hinge(dense.u.at(y, x + 1) - dense.u.at(y, x));
                        if (e > 0.0) {
                            const double d = collapse_weight_ * -2.0 * e / npx;
                            gu.at(y, x + 1) += d;
                            gu.at(y, x) -= d;
                        }
                    }
                    if (y + 1 < height_) {
                        const double e = hinge(dense.v.at(y + 1, x) - dense.v.at(y, x));
                        if (e > 0.0) {
                            const double d = collapse_weight_ * -2.0 * e / npx;
                            gv.at(y + 1, x) += d;
                            gv.at(y, x) -= d;
                        }
                    }
                }
            }
            for (int y = 0; y < height_; ++y) {
                for (int x = 0; x < width_; ++x) {
                    const GridWeights gw = grid_weights(x, y, grid.rows, grid.cols, width_, height_);
                    int idx[4];
                    double w[4];
                    corner_weights(gw, grid.rows, grid.cols, idx, w);
                    for (int c = 0; c < 4; ++c) {
                        grad->u[idx[c]] -= w[c] * gu.at(y, x);
                        grad->v[idx[c]] -= w[c] * gv.at(y, x);
                    }
                }
            }
        }
        return value;
    }

  private:
    /// Base objective summed over per-polarity IWEs (positive and negative
    /// votes in separate channels, as in the 2-channel encoders). A single
    /// unsigned image lets the stacks of opposite polarities reinforce each
    /// other at spurious offsets on strongly structured scenes. When
    /// gradients are requested, writes d(objective)/d(position) per point.
    double split_objective(const std::vector<double>& px, const std::vector<double>& py,
                           std::vector<double>* gx, std::vector<double>* gy) const {
        const auto channels = splat_polarity_channels(px, py, ep_, img_w_, img_h_);
        const double value =
            base_objective(base_, channels[0]) + base_objective(base_, channels[1]);
        if (!gx) return value;

        const Image2D<double> adjoint[2] = {objective_adjoint(channels[0]),
                                            objective_adjoint(channels[1])};
        for (std::size_t i = 0; i < px.size(); ++i) {
            const auto g = splat_position_gradient(adjoint[ep_[i] ? 1 : 0], px[i], py[i]);
            (*gx)[i] = g.first;
            (*gy)[i] = g.second;
        }
        return value;
    }

    /// dObjective/dIWE for the base objective.
    Image2D<double> objective_adjoint(const Image2D<double>& iwe) const {
        const double n = static_cast<double>(iwe.size());
        Image2D<double> adj(iwe.width, iwe.height, 0.0);
        if (base_ == Objective::variance) {
            double mean = 0.0;
            for (double v : iwe.data) mean += v;
            mean /= n;
            for (std::size_t i = 0; i < iwe.data.size(); ++i)
                adj.data[i] = 2.0 * (iwe.data[i] - mean) / n;
        } else {
            for (int y = 0; y < iwe.height; ++y) {
                for (int x = 0; x < iwe.width; ++x) {
                    if (x + 1 < iwe.width) {
                        const double gx = iwe.at(y, x + 1) - iwe.at(y, x);
                        adj.at(y, x + 1) += 2.0 * gx / n;
                        adj.at(y, x) -= 2.0 * gx / n;
                    }
                    if (y + 1 < iwe.height) {
                        const double gy = iwe.at(y + 1, x) - iwe.at(y, x);
                        adj.at(y + 1, x) += 2.0 * gy / n;
                        adj.at(y, x) -= 2.0 * gy / n;
                    }
                }
            }
        }
        return adj;
    }

    /// d(adjoint-weighted splat)/d(point position) for the B-spline vote.
    std::pair<double, double> splat_position_gradient(const Image2D<double>& adj, double px,
                                                      double py) const {
        const int cx = static_cast<int>(std::lround(px));
        const int cy = static_cast<int>(std::lround(py));
        double gx = 0.0, gy = 0.0;
        for (int my = cy - 1; my <= cy + 1; ++my) {
            if (my < 0 || my >= adj.height) continue;
            const double wy = bspline2(py - my);
            const double dwy = bspline2_derivative(py - my);
            for (int mx = cx - 1; mx <= cx + 1; ++mx) {
                if (mx < 0 || mx >= adj.width) continue;
                const double a = adj.at(my, mx);
                gx += a * bspline2_derivative(px - mx) * wy;
                gy += a * bspline2(px - mx) * dwy;
            }
        }
        return {gx, gy};
    }

    const CmaxConfig* config_;
    int width_, height_;
    Timestamp t0_, t1_;
    int scale_;
    int pad_;
    int img_w_, img_h_;
    Objective base_;
    double identity_value_ = 1.0;
    double collapse_weight_ = 0.0;
    std::vector<double> ex_, ey_;
    std::vector<std::uint8_t> ep_;
    std::vector<std::vector<double>> time_scales_;  // one per reference time
};

}  // namespace detail

struct EstimateResult {
    FlowField flow;
    std::vector<double> trace;               // combined objective per accepted step
    std::vector<std::size_t> level_starts;   // index into trace where each level begins
    double objective_initial = 0.0;          // combined objective at zero flow
    double objective_final = 0.0;            // combined objective of the result
    int iterations = 0;
};

/// Contrast maximization, coarse-to-fine over the control-grid resolution:
/// a translation-only grid search seeds the flow, then each pyramid level
/// refines a finer control lattice by gradient ascent with step halving on
/// objective decrease.
inline EstimateResult estimate_flow_cmax(const EventStream& events, const CmaxConfig& config,
                                         const SensorProps& props, Timestamp t0, Timestamp t1) {
    config.require_valid();
    props.require_valid();
    if (events.empty()) throw std::invalid_argument("estimate_flow_cmax: empty slice");
    if (t0 >= t1) throw std::invalid_argument("estimate_flow_cmax: empty interval");

    const int w = props.width;
    const int h = props.height;
    EstimateResult result;

    constexpr double kMinStep = 1e-4;
    constexpr double kGradTol = 1e-12;
    // covers slice displacements with margin while staying well inside the
    // padded canvas; larger motions are reached by the per-level ascent
    constexpr double kSearchRadiusPx = 6.0;
    // noise floors produce an essentially flat landscape; stay at zero
    // unless the best translation clearly beats it
    constexpr double kSearchGainMargin = 1.02;

    const detail::LevelProblem problem(events, config, w, h, t0, t1, 1);
    detail::ControlGrid grid(1, 1);
    result.objective_initial = problem.combined(grid, nullptr);

    {  // translation-only seed
        const double zero_value = problem.contrast(grid, nullptr);
        double best = zero_value;
        double best_u = 0.0, best_v = 0.0;
        detail::ControlGrid candidate(1, 1);
        for (double v = -kSearchRadiusPx; v <= kSearchRadiusPx; v += 1.0) {
            for (double u = -kSearchRadiusPx; u <= kSearchRadiusPx; u += 1.0) {
                candidate.u[0] = u;
                candidate.v[0] = v;
                const double value = problem.contrast(candidate, nullptr);
                if (value > best) {
                    best = value;
                    best_u = u;
                    best_v = v;
                }
            }
        }
        if (best > zero_value * kSearchGainMargin) {
            grid.u[0] = best_u;
            grid.v[0] = best_v;
        }
    }

    for (int level = config.pyramid_levels - 1; level >= 0; --level) {
        // coarse levels use a coarser control grid, down to a constant
        // (translation-only) model at the base of a deep pyramid
        const int rows = std::max(1, config.patch_rows >> level);
        const int cols = std::max(1, config.patch_cols >> level);
        if (grid.rows != rows || grid.cols != cols)
            grid = detail::prolong_grid(grid, rows, cols, w, h);

        result.level_starts.push_back(result.trace.size());
        detail::ControlGrid grad;
        double value = problem.combined(grid, &grad);
        if (!std::isfinite(value))
            throw std::runtime_error("estimate_flow_cmax: non-finite objective");
        result.trace.push_back(value);
        double step = config.step_size;

        for (int iter = 0; iter < config.max_iters; ++iter) {
            ++result.iterations;
            double gmax = 0.0;
            for (double g : grad.u) gmax = std::max(gmax, std::abs(g));
            for (double g : grad.v) gmax = std::max(gmax, std::abs(g));
            if (gmax < kGradTol) break;

            detail::ControlGrid candidate = grid;
            const double rate = step / gmax;
            for (std::size_t i = 0; i < grid.size(); ++i) {
                candidate.u[i] += rate * grad.u[i];
                candidate.v[i] += rate * grad.v[i];
            }
            detail::ControlGrid candidate_grad;
            const double candidate_value = problem.combined(candidate, &candidate_grad);
            if (!std::isfinite(candidate_value))
                throw std::runtime_error("estimate_flow_cmax: non-finite objective");
            if (candidate_value > value) {
                grid = std::move(candidate);
                grad = std::move(candidate_grad);
                value = candidate_value;
                result.trace.push_back(value);
            } else {
                step *= 0.5;
                if (step < kMinStep) break;
            }
        }
    }

    result.objective_final = problem.combined(grid, nullptr);
    if (result.objective_final < result.objective_initial) {
        // optimization failed to improve; report the zero field honestly
        grid = detail::ControlGrid(config.patch_rows, config.patch_cols);
        result.objective_final = result.objective_initial;
    }
    result.flow = detail::dense_from_grid(grid, w, h, t0, t1);
    return result;
}

// ---------------------------------------------------------------------------
// JSON round trip for estimator configs

inline CmaxConfig CmaxConfig::from_json(const nlohmann::json& j) {
    CmaxConfig config;
    if (j.contains("patch_grid")) {
        config.patch_rows = j.at("patch_grid").at(0).get<int>();
        config.patch_cols = j.at("patch_grid").at(1).get<int>();
    }
    config.pyramid_levels = j.value("pyramid_levels", config.pyramid_levels);
    config.max_iters = j.value("max_iters", config.max_iters);
    config.step_size = j.value("step_size", config.step_size);
    config.smoothness_weight = j.value("smoothness_weight", config.smoothness_weight);
    if (j.contains("objective"))
        config.objective = objective_from_name(j.at("objective").get<std::string>());
    if (j.contains("reference_times")) {
        config.reference_times.clear();
        for (const auto& r : j.at("reference_times")) {
            const std::string name = r.get<std::string>();
            if (name == "t0") config.reference_times.push_back(ReferenceTime::t0);
            else if (name == "midpoint") config.reference_times.push_back(ReferenceTime::midpoint);
            else if (name == "t1") config.reference_times.push_back(ReferenceTime::t1);
            else throw std::invalid_argument("CmaxConfig: unknown reference time: " + name);
        }
    }
    config.charbonnier_alpha = j.value("charbonnier_alpha", config.charbonnier_alpha);
    config.charbonnier_eps = j.value("charbonnier_eps", config.charbonnier_eps);
    config.require_valid();
    return config;
}

inline nlohmann::json CmaxConfig::to_json() const {
    nlohmann::json refs = nlohmann::json::array();
    for (ReferenceTime r : reference_times) {
        switch (r) {
            case ReferenceTime::t0: refs.push_back("t0"); break;
            case ReferenceTime::midpoint: refs.push_back("midpoint"); break;
            case ReferenceTime::t1: refs.push_back("t1"); break;
        }
    }
    return nlohmann::json{{"patch_grid", {patch_rows, patch_cols}},
                          {"pyramid_levels", pyramid_levels},
                          {"max_iters", max_iters},
                          {"step_size", step_size},
                          {"smoothness_weight", smoothness_weight},
                          {"objective", objective_name(objective)},
                          {"reference_times", refs},
                          {"charbonnier_alpha", charbonnier_alpha},
                          {"charbonnier_eps", charbonnier_eps}};
}

}  // namespace evk::cmax
