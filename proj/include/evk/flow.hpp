#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "evk/core.hpp"

namespace evk::flow {

namespace detail {

inline double clampd(double v, double lo, double hi) {
    return v < lo ? lo : (v > hi ? hi : v);
}

/// Border-clamped bilinear read of a dense scalar grid.
inline double sample_grid(const Image2D<double>& g, double x, double y) {
    x = clampd(x, 0.0, static_cast<double>(g.width - 1));
    y = clampd(y, 0.0, static_cast<double>(g.height - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, g.width - 1);
    const int y1 = std::min(y0 + 1, g.height - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    return (1.0 - fx) * (1.0 - fy) * g.at(y0, x0) + fx * (1.0 - fy) * g.at(y0, x1) +
           (1.0 - fx) * fy * g.at(y1, x0) + fx * fy * g.at(y1, x1);
}

}  // namespace detail

/// Bilinear interpolation of (u, v) at real pixel coordinates, border-clamped.
inline std::pair<double, double> sample_bilinear(const FlowField& field, double x, double y) {
    return {detail::sample_grid(field.u, x, y), detail::sample_grid(field.v, x, y)};
}

/// Linearly rescales displacements onto a new non-empty time interval.
inline FlowField scale_flow(const FlowField& field, Timestamp t0, Timestamp t1) {
    if (t0 >= t1) throw std::invalid_argument("scale_flow: empty target interval");
    const double factor =
        static_cast<double>(t1 - t0) / static_cast<double>(field.t1 - field.t0);
    FlowField out(field.width(), field.height(), t0, t1);
    for (std::size_t i = 0; i < field.u.data.size(); ++i) {
        out.u.data[i] = field.u.data[i] * factor;
        out.v.data[i] = field.v.data[i] * factor;
    }
    return out;
}

/// Composes contiguous fields: C(x) = F1(x) + F2(x + F1(x)) + ..., with each
/// subsequent field sampled bilinearly at the displaced location.
inline FlowField accumulate(std::span<const FlowField> fields) {
    if (fields.empty()) throw std::invalid_argument("accumulate: no fields");
    for (std::size_t k = 0; k + 1 < fields.size(); ++k) {
        if (fields[k].t1 != fields[k + 1].t0)
            throw std::invalid_argument("accumulate: fields are not contiguous");
        if (!fields[k].u.same_shape(fields[k + 1].u))
            throw std::invalid_argument("accumulate: shape mismatch");
    }
    FlowField out = fields.front();
    out.t1 = fields.back().t1;
    const int w = out.width();
    const int h = out.height();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double dx = fields.front().u.at(y, x);
            double dy = fields.front().v.at(y, x);
            for (std::size_t k = 1; k < fields.size(); ++k) {
                const auto [du, dv] = sample_bilinear(fields[k], x + dx, y + dy);
                dx += du;
                dy += dv;
            }
            out.u.at(y, x) = dx;
            out.v.at(y, x) = dy;
        }
    }
    return out;
}

inline FlowField accumulate(const std::vector<FlowField>& fields) {
    return accumulate(std::span<const FlowField>(fields));
}

/// Inverts a displacement field by forward bilinear splatting: each pixel's
/// negated displacement is deposited at its landing position, weighted
/// averages are taken where several splats land, and remaining holes are
/// filled by repeated 3x3 averaging of already-valid neighbors.
inline FlowField invert_flow(const FlowField& field) {
    const int w = field.width();
    const int h = field.height();
    FlowField out(w, h, field.t0, field.t1);
    Image2D<double> weight(w, h, 0.0);
    Image2D<double> acc_u(w, h, 0.0);
    Image2D<double> acc_v(w, h, 0.0);

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double u = field.u.at(y, x);
            const double v = field.v.at(y, x);
            const double lx = x + u;
            const double ly = y + v;
            const int x0 = static_cast<int>(std::floor(lx));
            const int y0 = static_cast<int>(std::floor(ly));
            const double fx = lx - x0;
            const double fy = ly - y0;
            const double cw[4] = {(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy),
                                  (1.0 - fx) * fy, fx * fy};
            const int cx[4] = {x0, x0 + 1, x0, x0 + 1};
            const int cy[4] = {y0, y0, y0 + 1, y0 + 1};
            for (int c = 0; c < 4; ++c) {
                if (cx[c] < 0 || cx[c] >= w || cy[c] < 0 || cy[c] >= h) continue;
                weight.at(cy[c], cx[c]) += cw[c];
                acc_u.at(cy[c], cx[c]) += cw[c] * (-u);
                acc_v.at(cy[c], cx[c]) += cw[c] * (-v);
            }
        }
    }

    std::vector<std::uint8_t> valid(static_cast<std::size_t>(w) * h, 0);
    std::size_t holes = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            if (weight.at(y, x) > 0.0) {
                out.u.at(y, x) = acc_u.at(y, x) / weight.at(y, x);
                out.v.at(y, x) = acc_v.at(y, x) / weight.at(y, x);
                valid[i] = 1;
            } else {
                ++holes;
            }
        }
    }
    if (holes == static_cast<std::size_t>(w) * h) return out;  // nothing landed; all zero

    // Fill holes from the valid region inward, one ring per pass.
    while (holes > 0) {
        auto next_valid = valid;
        std::size_t filled = 0;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * w + x;
                if (valid[i]) continue;
                double su = 0.0, sv = 0.0;
                int cnt = 0;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = y + dy;
                        const int nx = x + dx;
                        if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
                        const std::size_t j = static_cast<std::size_t>(ny) * w + nx;
                        if (!valid[j]) continue;
                        su += out.u.at(ny, nx);
                        sv += out.v.at(ny, nx);
                        ++cnt;
                    }
                }
                if (cnt > 0) {
                    out.u.at(y, x) = su / cnt;
                    out.v.at(y, x) = sv / cnt;
                    next_valid[i] = 1;
                    ++filled;
                }
            }
        }
        valid = std::move(next_valid);
        holes -= filled;
    }
    return out;
}

enum class WarpDirection { forward_to_t1, backward_to_t0 };

/// Inverse-warps an image across the flow interval. backward_to_t0 samples
/// the t1 image at (x + u, y + v) to reconstruct the t0 view; forward_to_t1
/// inverts the field first and then inverse-warps.
inline Image2D<double> warp_image(const Image2D<double>& image, const FlowField& field,
                                  WarpDirection direction) {
    if (image.width != field.width() || image.height != field.height())
        throw std::invalid_argument("warp_image: image/field shape mismatch");
    const FlowField* f = &field;
    FlowField inverted;
    if (direction == WarpDirection::forward_to_t1) {
        inverted = invert_flow(field);
        f = &inverted;
    }
    Image2D<double> out(image.width, image.height);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            out.at(y, x) =
                detail::sample_grid(image, x + f->u.at(y, x), y + f->v.at(y, x));
    return out;
}

}  // namespace evk::flow
