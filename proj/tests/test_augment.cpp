#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <set>

#include "evk/augment.hpp"
#include "evk/encode.hpp"
#include "evk/metrics.hpp"
#include "helpers.hpp"

using namespace evk;
using Catch::Approx;

TEST_CASE("time_warp with factor 1 is the identity") {
    std::mt19937_64 rng(31);
    const auto events = testutil::random_events(rng, 200, 16, 16, 50000);
    CHECK(augment::time_warp(events, 1.0) == events);
}

TEST_CASE("time_warp doubles the duration and keeps the count") {
    std::mt19937_64 rng(32);
    auto events = testutil::random_events(rng, 200, 16, 16, 50000);
    events.ts.front() = 0;  // anchor the origin for an exact duration check
    std::sort(events.ts.begin(), events.ts.end());
    const auto warped = augment::time_warp(events, 2.0);
    CHECK(warped.size() == events.size());
    CHECK(warped.ts.back() - warped.ts.front() == 2 * (events.ts.back() - events.ts.front()));
    CHECK(std::is_sorted(warped.ts.begin(), warped.ts.end()));
}

TEST_CASE("time_warp round trip stays within one microsecond") {
    std::mt19937_64 rng(33);
    const auto events = testutil::random_events(rng, 500, 16, 16, 987654);
    const auto round_trip = augment::time_warp(augment::time_warp(events, 2.0), 0.5);
    for (std::size_t i = 0; i < events.size(); ++i)
        CHECK(std::abs(round_trip.ts[i] - events.ts[i]) <= 1);
}

TEST_CASE("inject_noise with rate 0 is the identity") {
    std::mt19937_64 rng(34);
    const auto events = testutil::random_events(rng, 100, 16, 16, 50000);
    CHECK(augment::inject_noise(events, testutil::make_props(16, 16), 0.0, 42) == events);
}

TEST_CASE("inject_noise adds the expected number of events on average") {
    std::mt19937_64 rng(35);
    const auto props = testutil::make_props(20, 10);
    auto events = testutil::random_events(rng, 50, 20, 10, 1000000);
    events.ts.front() = 0;
    events.ts.back() = 1000000;  // one-second extent
    std::sort(events.ts.begin(), events.ts.end());

    const double rate = 2.0;  // events per pixel per second
    const double expected = rate * 20 * 10 * 1.0;
    double total_added = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto noisy = augment::inject_noise(events, props, rate, seed);
        CHECK(std::is_sorted(noisy.ts.begin(), noisy.ts.end()));
        total_added += static_cast<double>(noisy.size() - events.size());
    }
    const double mean_added = total_added / 100.0;
    CHECK(std::abs(mean_added - expected) / expected < 0.05);
}

TEST_CASE("inject_noise is deterministic per seed") {
    std::mt19937_64 rng(36);
    const auto events = testutil::random_events(rng, 100, 16, 16, 100000);
    const auto props = testutil::make_props(16, 16);
    CHECK(augment::inject_noise(events, props, 5.0, 7) ==
          augment::inject_noise(events, props, 5.0, 7));
}

TEST_CASE("flip_polarity is an involution that swaps encoder channels") {
    std::mt19937_64 rng(37);
    const auto events = testutil::random_events(rng, 300, 16, 16, 50000);
    const auto flipped = augment::flip_polarity(events);
    CHECK(augment::flip_polarity(flipped) == events);

    const auto props = testutil::make_props(16, 16);
    const auto original_frames = encode::encode_count(events, 0, 50001, 2, props);
    const auto flipped_frames = encode::encode_count(flipped, 0, 50001, 2, props);
    for (std::size_t b = 0; b < original_frames.size(); ++b) {
        CHECK(original_frames[b].pos.data == flipped_frames[b].neg.data);
        CHECK(original_frames[b].neg.data == flipped_frames[b].pos.data);
    }
}

TEST_CASE("flip_polarity turns an all-positive stream all-negative") {
    EventStream events;
    events.push_back(1, 1, 10, true);
    events.push_back(2, 2, 20, true);
    const auto flipped = augment::flip_polarity(events);
    for (auto p : flipped.ps) CHECK(p == 0);
}

TEST_CASE("temporal_reverse is an involution and keeps timestamps sorted") {
    std::mt19937_64 rng(38);
    auto events = testutil::random_events(rng, 400, 16, 16, 77777);
    for (auto& t : events.ts) t += 123;  // non-zero start exercises the offset handling
    const auto reversed = augment::temporal_reverse(events);
    CHECK(std::is_sorted(reversed.ts.begin(), reversed.ts.end()));
    CHECK(augment::temporal_reverse(reversed) == events);
}

TEST_CASE("temporal_reverse inverts polarity") {
    EventStream events;
    events.push_back(3, 4, 100, true);
    const auto reversed = augment::temporal_reverse(events);
    CHECK(reversed.ps[0] == 0);
    CHECK(reversed.xs[0] == 3);
    CHECK(reversed.ts[0] == 100);
}

namespace {

augment::CoTransformed make_triple(std::mt19937_64& rng, int w, int h) {
    augment::CoTransformed data;
    data.props = testutil::make_props(w, h);
    data.events = testutil::random_events(rng, 300, w, h, 40000);
    GrayImage frame(w, h);
    for (auto& v : frame.data) v = static_cast<std::uint8_t>(rng() % 256);
    data.grays.frames.push_back(frame);
    data.grays.ts.push_back(0);
    data.flows.fields.push_back(testutil::smooth_random_flow(rng, w, h, 2.0, 0, 40000));
    return data;
}

}  // namespace

TEST_CASE("spatial_flip is an involution on all channels") {
    std::mt19937_64 rng(39);
    const auto data = make_triple(rng, 20, 14);
    for (auto axis : {augment::FlipAxis::horizontal, augment::FlipAxis::vertical}) {
        const auto once =
            augment::spatial_flip(data.events, data.grays, data.flows, data.props, axis);
        const auto twice =
            augment::spatial_flip(once.events, once.grays, once.flows, once.props, axis);
        CHECK(twice.events == data.events);
        CHECK(twice.grays.frames[0].data == data.grays.frames[0].data);
        CHECK(twice.flows.fields[0].u.data == data.flows.fields[0].u.data);
        CHECK(twice.flows.fields[0].v.data == data.flows.fields[0].v.data);
    }
}

TEST_CASE("horizontal flip negates u for constant flow") {
    std::mt19937_64 rng(40);
    augment::CoTransformed data = make_triple(rng, 16, 16);
    data.flows.fields[0] = testutil::constant_flow(16, 16, 2.0, 0.0, 0, 40000);
    const auto flipped = augment::spatial_flip(data.events, data.grays, data.flows, data.props,
                                               augment::FlipAxis::horizontal);
    for (double u : flipped.flows.fields[0].u.data) CHECK(u == Approx(-2.0));
    for (double v : flipped.flows.fields[0].v.data) CHECK(v == Approx(0.0).margin(1e-15));
}

TEST_CASE("AEE is invariant under co-flipping prediction, truth, and mask") {
    std::mt19937_64 rng(41);
    const int w = 20, h = 14;
    auto data = make_triple(rng, w, h);
    const auto pred = testutil::smooth_random_flow(rng, w, h, 2.5, 0, 40000);

    augment::CoTransformed pred_data = data;
    pred_data.flows.fields[0] = pred;

    const auto mask = metrics::event_mask(data.events, w, h);
    const double before = metrics::aee(pred, data.flows.fields[0], mask);

    const auto gt_flip = augment::spatial_flip(data.events, data.grays, data.flows, data.props,
                                               augment::FlipAxis::horizontal);
    const auto pred_flip = augment::spatial_flip(pred_data.events, pred_data.grays,
                                                 pred_data.flows, pred_data.props,
                                                 augment::FlipAxis::horizontal);
    const auto mask_flip = metrics::event_mask(gt_flip.events, w, h);
    const double after =
        metrics::aee(pred_flip.flows.fields[0], gt_flip.flows.fields[0], mask_flip);
    CHECK(after == Approx(before).epsilon(1e-12));
}

TEST_CASE("crop keeps exactly the events inside the rectangle") {
    std::mt19937_64 rng(42);
    const auto data = make_triple(rng, 24, 18);
    const augment::CropRect rect{5, 3, 10, 8};
    const auto cropped = augment::crop(data.events, data.grays, data.flows, data.props, rect);

    std::size_t expected = 0;
    for (std::size_t i = 0; i < data.events.size(); ++i)
        if (data.events.xs[i] >= 5 && data.events.xs[i] < 15 && data.events.ys[i] >= 3 &&
            data.events.ys[i] < 11)
            ++expected;
    CHECK(cropped.events.size() == expected);
    CHECK(cropped.props.width == 10);
    CHECK(cropped.props.height == 8);
    for (auto x : cropped.events.xs) CHECK(x < 10);
    for (auto y : cropped.events.ys) CHECK(y < 8);
    CHECK(validate_stream(cropped.events, cropped.props).ok());
    CHECK(cropped.flows.fields[0].u.at(0, 0) == data.flows.fields[0].u.at(3, 5));
}

TEST_CASE("full-frame crop is the identity") {
    std::mt19937_64 rng(43);
    const auto data = make_triple(rng, 16, 16);
    const auto cropped = augment::crop(data.events, data.grays, data.flows, data.props,
                                       augment::CropRect{0, 0, 16, 16});
    CHECK(cropped.events == data.events);
    CHECK(cropped.grays.frames[0].data == data.grays.frames[0].data);
    CHECK(cropped.flows.fields[0].u.data == data.flows.fields[0].u.data);
}

TEST_CASE("crop rejects rectangles that do not fit") {
    std::mt19937_64 rng(44);
    const auto data = make_triple(rng, 16, 16);
    CHECK_THROWS_AS(augment::crop(data.events, data.grays, data.flows, data.props,
                                  augment::CropRect{10, 0, 10, 8}),
                    std::invalid_argument);
    CHECK_THROWS_AS(
        augment::random_crop(data.events, data.grays, data.flows, data.props, 20, 8, 1),
        std::invalid_argument);
}

TEST_CASE("random_crop is deterministic per seed and fits the frame") {
    std::mt19937_64 rng(45);
    const auto data = make_triple(rng, 24, 18);
    const auto a = augment::random_crop(data.events, data.grays, data.flows, data.props, 8, 6, 9);
    const auto b = augment::random_crop(data.events, data.grays, data.flows, data.props, 8, 6, 9);
    CHECK(a.events == b.events);
    CHECK(a.props.width == 8);
    CHECK(a.props.height == 6);
}

TEST_CASE("augmentations preserve stream validity") {
    std::mt19937_64 rng(46);
    const auto props = testutil::make_props(16, 16);
    const auto events = testutil::random_events(rng, 300, 16, 16, 50000);
    CHECK(validate_stream(augment::time_warp(events, 3.7), props).ok());
    CHECK(validate_stream(augment::inject_noise(events, props, 10.0, 3), props).ok());
    CHECK(validate_stream(augment::flip_polarity(events), props).ok());
    CHECK(validate_stream(augment::temporal_reverse(events), props).ok());
}
