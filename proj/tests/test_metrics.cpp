#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <set>

#include "evk/metrics.hpp"
#include "helpers.hpp"

using namespace evk;
using Catch::Approx;

namespace {

Image2D<std::uint8_t> full_mask(int w, int h) { return {w, h, 1}; }

}  // namespace

TEST_CASE("event_mask marks exactly the pixels that saw events") {
    SECTION("empty stream gives an all-false mask") {
        const auto mask = metrics::event_mask(EventStream{}, 8, 8);
        for (auto v : mask.data) CHECK(v == 0);
    }
    SECTION("single event marks one pixel") {
        EventStream events;
        events.push_back(3, 4, 0, true);
        const auto mask = metrics::event_mask(events, 8, 8);
        int count = 0;
        for (auto v : mask.data) count += v;
        CHECK(count == 1);
        CHECK(mask.at(4, 3) == 1);
    }
    SECTION("mask count equals the distinct pixel count") {
        std::mt19937_64 rng(51);
        const auto events = testutil::random_events(rng, 500, 16, 12, 10000);
        const auto mask = metrics::event_mask(events, 16, 12);
        std::set<std::pair<int, int>> distinct;
        for (std::size_t i = 0; i < events.size(); ++i)
            distinct.emplace(events.xs[i], events.ys[i]);
        int count = 0;
        for (auto v : mask.data) count += v;
        CHECK(static_cast<std::size_t>(count) == distinct.size());
    }
}

TEST_CASE("aee analytic cases") {
    const int w = 4, h = 4;
    auto gt = testutil::constant_flow(w, h, 0.0, 0.0);
    auto pred = testutil::constant_flow(w, h, 0.0, 0.0);

    SECTION("identical fields give zero") {
        CHECK(metrics::aee(pred, gt, full_mask(w, h)) == 0.0);
    }
    SECTION("unit offset at one masked pixel gives exactly one") {
        Image2D<std::uint8_t> mask(w, h, 0);
        mask.at(1, 2) = 1;
        pred.u.at(1, 2) = 1.0;
        CHECK(metrics::aee(pred, gt, mask) == Approx(1.0).epsilon(1e-12));
    }
    SECTION("empty mask is an error") {
        CHECK_THROWS_AS(metrics::aee(pred, gt, Image2D<std::uint8_t>(w, h, 0)),
                        std::invalid_argument);
    }
}

TEST_CASE("aee matches a scalar loop oracle on random fields") {
    std::mt19937_64 rng(52);
    const int w = 12, h = 9;
    const auto pred = testutil::smooth_random_flow(rng, w, h, 3.0);
    const auto gt = testutil::smooth_random_flow(rng, w, h, 3.0);
    const auto events = testutil::random_events(rng, 150, w, h, 1000);
    const auto mask = metrics::event_mask(events, w, h);

    double sum = 0.0;
    int n = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask.at(y, x)) {
                sum += std::sqrt(std::pow(pred.u.at(y, x) - gt.u.at(y, x), 2) +
                                 std::pow(pred.v.at(y, x) - gt.v.at(y, x), 2));
                ++n;
            }
    CHECK(metrics::aee(pred, gt, mask) == Approx(sum / n).epsilon(1e-9));
}

TEST_CASE("aae analytic cases") {
    const int w = 4, h = 4;
    SECTION("orthogonal unit vectors give pi/2") {
        const auto pred = testutil::constant_flow(w, h, 1.0, 0.0);
        const auto gt = testutil::constant_flow(w, h, 0.0, 1.0);
        CHECK(metrics::aae(pred, gt, full_mask(w, h)) == Approx(M_PI / 2).epsilon(1e-12));
    }
    SECTION("colinear vectors give zero") {
        const auto pred = testutil::constant_flow(w, h, 2.0, 2.0);
        const auto gt = testutil::constant_flow(w, h, 1.0, 1.0);
        CHECK(metrics::aae(pred, gt, full_mask(w, h)) == Approx(0.0).margin(1e-12));
    }
    SECTION("near-zero vectors are excluded") {
        const auto pred = testutil::constant_flow(w, h, 0.0, 0.0);
        const auto gt = testutil::constant_flow(w, h, 1.0, 0.0);
        CHECK_THROWS_AS(metrics::aae(pred, gt, full_mask(w, h)), std::invalid_argument);
    }
}

TEST_CASE("aae matches an atan2 loop oracle and scale invariance") {
    std::mt19937_64 rng(53);
    const int w = 10, h = 8;
    auto pred = testutil::smooth_random_flow(rng, w, h, 3.0);
    auto gt = testutil::smooth_random_flow(rng, w, h, 3.0);
    // keep every vector comfortably above the cutoff
    for (auto& u : pred.u.data) u += 5.0;
    for (auto& u : gt.u.data) u += 5.0;
    const auto mask = full_mask(w, h);

    double sum = 0.0;
    int n = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double ap = std::atan2(pred.v.at(y, x), pred.u.at(y, x));
            const double ag = std::atan2(gt.v.at(y, x), gt.u.at(y, x));
            double d = std::abs(ap - ag);
            if (d > M_PI) d = 2 * M_PI - d;
            sum += d;
            ++n;
        }
    const double direct = metrics::aae(pred, gt, mask);
    CHECK(direct == Approx(sum / n).epsilon(1e-9));

    auto pred_scaled = pred;
    for (auto& u : pred_scaled.u.data) u *= 3.0;
    for (auto& v : pred_scaled.v.data) v *= 3.0;
    CHECK(metrics::aae(pred_scaled, gt, mask) == Approx(direct).epsilon(1e-12));
}

TEST_CASE("xpe analytic cases and monotonicity") {
    const int w = 4, h = 2;
    auto gt = testutil::constant_flow(w, h, 0.0, 0.0);
    auto pred = testutil::constant_flow(w, h, 0.0, 0.0);

    SECTION("identical fields give zero percent") {
        CHECK(metrics::xpe(pred, gt, full_mask(w, h), 1.0) == 0.0);
    }
    SECTION("half the pixels offset by twice the threshold gives 50 percent") {
        for (int x = 0; x < w; ++x) pred.u.at(0, x) = 2.0;  // top row off by 2, X = 1
        CHECK(metrics::xpe(pred, gt, full_mask(w, h), 1.0) == Approx(50.0));
    }
    SECTION("monotone non-increasing in the threshold") {
        std::mt19937_64 rng(54);
        const auto p = testutil::smooth_random_flow(rng, 16, 16, 4.0);
        const auto g = testutil::smooth_random_flow(rng, 16, 16, 4.0);
        double previous = 100.0;
        for (double threshold : {0.5, 1.0, 2.0, 3.0, 5.0}) {
            const double value = metrics::xpe(p, g, full_mask(16, 16), threshold);
            CHECK(value <= previous);
            previous = value;
        }
    }
}

TEST_CASE("3PE matches a loop oracle on random fields") {
    std::mt19937_64 rng(55);
    const int w = 14, h = 11;
    const auto pred = testutil::smooth_random_flow(rng, w, h, 6.0);
    const auto gt = testutil::smooth_random_flow(rng, w, h, 6.0);
    int outliers = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double epe = std::hypot(pred.u.at(y, x) - gt.u.at(y, x),
                                          pred.v.at(y, x) - gt.v.at(y, x));
            if (epe > 3.0) ++outliers;
        }
    CHECK(metrics::xpe(pred, gt, full_mask(w, h), 3.0) ==
          Approx(100.0 * outliers / (w * h)).epsilon(1e-12));
}

TEST_CASE("accumulator over split slices equals a whole-set evaluation") {
    std::mt19937_64 rng(56);
    const int w = 16, h = 12;
    metrics::MetricsAccumulator split({1.0, 3.0});
    metrics::MetricsAccumulator merged_a({1.0, 3.0});
    metrics::MetricsAccumulator merged_b({1.0, 3.0});

    double epe_sum = 0.0;
    std::uint64_t n = 0;
    for (int slice = 0; slice < 4; ++slice) {
        const auto pred = testutil::smooth_random_flow(rng, w, h, 3.0);
        const auto gt = testutil::smooth_random_flow(rng, w, h, 3.0);
        const auto events = testutil::random_events(rng, 120, w, h, 1000);
        const auto mask = metrics::event_mask(events, w, h);
        split.add(pred, gt, mask);
        (slice < 2 ? merged_a : merged_b).add(pred, gt, mask);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (mask.at(y, x)) {
                    epe_sum += std::hypot(pred.u.at(y, x) - gt.u.at(y, x),
                                          pred.v.at(y, x) - gt.v.at(y, x));
                    ++n;
                }
    }
    const auto report = split.report();
    REQUIRE(report.has_data);
    CHECK(report.aee == Approx(epe_sum / static_cast<double>(n)).epsilon(1e-9));
    CHECK(report.n_pixels == n);

    merged_a.merge(merged_b);
    const auto merged_report = merged_a.report();
    CHECK(merged_report.aee == Approx(report.aee).epsilon(1e-12));
    CHECK(merged_report.n_pixels == report.n_pixels);
    REQUIRE(merged_report.outliers.size() == 2);
    CHECK(merged_report.outliers[0].second == Approx(report.outliers[0].second));
}

TEST_CASE("single-slice accumulation equals the direct metric") {
    std::mt19937_64 rng(57);
    const int w = 10, h = 10;
    const auto pred = testutil::smooth_random_flow(rng, w, h, 2.0);
    const auto gt = testutil::smooth_random_flow(rng, w, h, 2.0);
    const auto mask = full_mask(w, h);
    metrics::MetricsAccumulator acc({1.0});
    acc.add(pred, gt, mask);
    CHECK(acc.report().aee == Approx(metrics::aee(pred, gt, mask)).epsilon(1e-12));
}

TEST_CASE("empty accumulator reports a no-data marker") {
    metrics::MetricsAccumulator acc;
    const auto report = acc.report();
    CHECK_FALSE(report.has_data);
    CHECK(report.to_json().contains("no_data"));
}

TEST_CASE("report JSON carries the outlier keys") {
    const int w = 4, h = 4;
    const auto pred = testutil::constant_flow(w, h, 2.0, 0.0);
    const auto gt = testutil::constant_flow(w, h, 0.0, 0.0);
    metrics::MetricsAccumulator acc({1.0, 3.0});
    acc.add(pred, gt, full_mask(w, h));
    const auto j = acc.report().to_json();
    CHECK(j.at("outliers").at("1PE").get<double>() == Approx(100.0));
    CHECK(j.at("outliers").at("3PE").get<double>() == Approx(0.0));
    CHECK(j.at("aee").get<double>() == Approx(2.0));
}

TEST_CASE("aee scales linearly when both fields scale") {
    std::mt19937_64 rng(58);
    const int w = 8, h = 8;
    auto pred = testutil::smooth_random_flow(rng, w, h, 2.0);
    auto gt = testutil::smooth_random_flow(rng, w, h, 2.0);
    const auto mask = full_mask(w, h);
    const double base = metrics::aee(pred, gt, mask);
    for (auto* field : {&pred, &gt}) {
        for (auto& u : field->u.data) u *= -2.5;
        for (auto& v : field->v.data) v *= -2.5;
    }
    CHECK(metrics::aee(pred, gt, mask) == Approx(2.5 * base).epsilon(1e-12));
}
