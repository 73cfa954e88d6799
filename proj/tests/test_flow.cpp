#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "evk/flow.hpp"
#include "helpers.hpp"

using namespace evk;
using Catch::Approx;

TEST_CASE("sample_bilinear returns stored values at integer coordinates") {
    std::mt19937_64 rng(11);
    const auto field = testutil::smooth_random_flow(rng, 16, 12, 2.0);
    for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 16; ++x) {
            const auto [u, v] = flow::sample_bilinear(field, x, y);
            CHECK(u == Approx(field.u.at(y, x)));
            CHECK(v == Approx(field.v.at(y, x)));
        }
}

TEST_CASE("sample_bilinear interpolates midpoints and clamps the border") {
    FlowField field(4, 4, 0, 1000);
    field.u.at(0, 0) = 1.0;
    field.u.at(0, 1) = 3.0;
    const auto [u_mid, v_mid] = flow::sample_bilinear(field, 0.5, 0.0);
    CHECK(u_mid == Approx(2.0));
    CHECK(v_mid == Approx(0.0));
    const auto [u_clamped, v_clamped] = flow::sample_bilinear(field, -5.0, -5.0);
    CHECK(u_clamped == Approx(field.u.at(0, 0)));
    CHECK(v_clamped == Approx(field.v.at(0, 0)));
}

TEST_CASE("scale_flow scales linearly with the interval") {
    std::mt19937_64 rng(12);
    const auto field = testutil::smooth_random_flow(rng, 8, 8, 3.0, 0, 1000);

    SECTION("half interval halves displacements") {
        const auto half = flow::scale_flow(field, 0, 500);
        for (std::size_t i = 0; i < field.u.data.size(); ++i)
            CHECK(half.u.data[i] == Approx(field.u.data[i] / 2.0));
        CHECK(half.t0 == 0);
        CHECK(half.t1 == 500);
    }
    SECTION("full interval is unchanged") {
        const auto same = flow::scale_flow(field, 0, 1000);
        CHECK(same.u.data == field.u.data);
        CHECK(same.v.data == field.v.data);
    }
    SECTION("scale there and back recovers the field") {
        const auto down = flow::scale_flow(field, 100, 400);
        const auto back = flow::scale_flow(down, 0, 1000);
        for (std::size_t i = 0; i < field.u.data.size(); ++i) {
            CHECK(back.u.data[i] == Approx(field.u.data[i]).margin(1e-12));
            CHECK(back.v.data[i] == Approx(field.v.data[i]).margin(1e-12));
        }
    }
    SECTION("empty target interval is rejected") {
        CHECK_THROWS_AS(flow::scale_flow(field, 500, 500), std::invalid_argument);
    }
}

TEST_CASE("accumulate composes constant translations additively") {
    const auto f1 = testutil::constant_flow(8, 8, 1.0, 0.0, 0, 100);
    const auto f2 = testutil::constant_flow(8, 8, 2.0, 0.0, 100, 200);
    const auto composed = flow::accumulate(std::vector<FlowField>{f1, f2});
    for (double u : composed.u.data) CHECK(u == Approx(3.0));
    for (double v : composed.v.data) CHECK(v == Approx(0.0));
    CHECK(composed.t0 == 0);
    CHECK(composed.t1 == 200);
}

TEST_CASE("accumulate of a single field is the identity") {
    std::mt19937_64 rng(13);
    const auto field = testutil::smooth_random_flow(rng, 8, 8, 2.0);
    const auto same = flow::accumulate(std::vector<FlowField>{field});
    CHECK(same.u.data == field.u.data);
    CHECK(same.v.data == field.v.data);
}

TEST_CASE("accumulate rejects non-contiguous fields") {
    const auto f1 = testutil::constant_flow(8, 8, 1.0, 0.0, 0, 100);
    const auto f2 = testutil::constant_flow(8, 8, 1.0, 0.0, 150, 200);
    CHECK_THROWS_AS(flow::accumulate(std::vector<FlowField>{f1, f2}), std::invalid_argument);
}

TEST_CASE("accumulate matches a sub-stepping particle advection oracle") {
    std::mt19937_64 rng(14);
    const int w = 32, h = 32;
    std::vector<FlowField> fields;
    for (int k = 0; k < 3; ++k) {
        auto f = testutil::smooth_random_flow(rng, w, h, 1.5, k * 100, (k + 1) * 100);
        fields.push_back(std::move(f));
    }
    const auto composed = flow::accumulate(fields);

    // oracle: advect each sample point one field at a time, re-sampling the
    // next field at the tracked (real-valued) position
    std::uniform_real_distribution<double> px(4.0, w - 5.0);
    std::uniform_real_distribution<double> py(4.0, h - 5.0);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const double x0 = px(rng);
        const double y0 = py(rng);
        double x = x0, y = y0;
        for (const auto& f : fields) {
            const auto [u, v] = flow::sample_bilinear(f, x, y);
            x += u;
            y += v;
        }
        const auto [cu, cv] = flow::sample_bilinear(composed, x0, y0);
        worst = std::max(worst, std::hypot(x0 + cu - x, y0 + cv - y));
    }
    CHECK(worst < 0.05);
}

TEST_CASE("invert_flow inverts a constant translation") {
    const auto field = testutil::constant_flow(32, 32, 2.0, 0.0);
    const auto inverse = flow::invert_flow(field);
    for (int y = 4; y < 28; ++y) {
        for (int x = 4; x < 28; ++x) {
            CHECK(std::abs(inverse.u.at(y, x) + 2.0) < 1e-6);
            CHECK(std::abs(inverse.v.at(y, x)) < 1e-6);
        }
    }
}

TEST_CASE("invert_flow maps the zero field to itself") {
    const auto inverse = flow::invert_flow(testutil::constant_flow(16, 16, 0.0, 0.0));
    for (double u : inverse.u.data) CHECK(u == 0.0);
    for (double v : inverse.v.data) CHECK(v == 0.0);
}

TEST_CASE("double inversion recovers smooth fields") {
    std::mt19937_64 rng(15);
    for (int trial = 0; trial < 5; ++trial) {
        const int w = 48, h = 48;
        const double max_disp = 3.0;
        const auto field = testutil::smooth_random_flow(rng, w, h, max_disp);
        const auto twice = flow::invert_flow(flow::invert_flow(field));
        double total = 0.0;
        int count = 0;
        const int margin = static_cast<int>(std::ceil(max_disp));
        for (int y = margin; y < h - margin; ++y) {
            for (int x = margin; x < w - margin; ++x) {
                total += std::hypot(twice.u.at(y, x) - field.u.at(y, x),
                                    twice.v.at(y, x) - field.v.at(y, x));
                ++count;
            }
        }
        CHECK(total / count < 0.1);
    }
}

TEST_CASE("warp_image with zero flow is the identity") {
    std::mt19937_64 rng(16);
    Image2D<double> img(16, 16);
    for (auto& v : img.data) v = static_cast<double>(rng() % 256);
    const auto field = testutil::constant_flow(16, 16, 0.0, 0.0);
    const auto warped = flow::warp_image(img, field, flow::WarpDirection::backward_to_t0);
    CHECK(warped.data == img.data);
}

TEST_CASE("warp_image recovers an analytically translated image") {
    // smooth periodic image translated by (3, 0); period divides the width so
    // the translation is exact everywhere
    const int w = 32, h = 32;
    Image2D<double> at_t0(w, h), at_t1(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            at_t0.at(y, x) = 0.5 + 0.5 * std::sin(2.0 * M_PI * x / 8.0);
            at_t1.at(y, x) = 0.5 + 0.5 * std::sin(2.0 * M_PI * (x - 3) / 8.0);
        }
    }
    const auto field = testutil::constant_flow(w, h, 3.0, 0.0);
    const auto recovered = flow::warp_image(at_t1, field, flow::WarpDirection::backward_to_t0);
    // interior excludes the displacement-wide clamped band on the right
    for (int y = 2; y < h - 2; ++y)
        for (int x = 2; x < w - 3; ++x)
            CHECK(std::abs(recovered.at(y, x) - at_t0.at(y, x)) < 1e-6);
}

TEST_CASE("warp_image preserves constant images under any flow") {
    std::mt19937_64 rng(17);
    Image2D<double> img(24, 24, 0.7);
    const auto field = testutil::smooth_random_flow(rng, 24, 24, 3.0);
    for (auto direction : {flow::WarpDirection::backward_to_t0, flow::WarpDirection::forward_to_t1}) {
        const auto warped = flow::warp_image(img, field, direction);
        for (double v : warped.data) CHECK(v == Approx(0.7));
    }
}

TEST_CASE("warp_image rejects shape mismatches") {
    Image2D<double> img(8, 8);
    const auto field = testutil::constant_flow(16, 16, 0.0, 0.0);
    CHECK_THROWS_AS(flow::warp_image(img, field, flow::WarpDirection::backward_to_t0),
                    std::invalid_argument);
}
