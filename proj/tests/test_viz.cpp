#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "evk/metrics.hpp"
#include "evk/simgen.hpp"
#include "evk/store.hpp"
#include "evk/viz.hpp"
#include "helpers.hpp"

using namespace evk;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

/// Hue in degrees recovered from an RGB pixel (undefined for gray pixels).
double hue_of(const std::uint8_t* rgb) {
    const double r = rgb[0] / 255.0, g = rgb[1] / 255.0, b = rgb[2] / 255.0;
    const double max = std::max({r, g, b});
    const double min = std::min({r, g, b});
    const double c = max - min;
    if (c == 0.0) return 0.0;
    double hue;
    if (max == r) hue = std::fmod((g - b) / c + 6.0, 6.0);
    else if (max == g) hue = (b - r) / c + 2.0;
    else hue = (r - g) / c + 4.0;
    return hue * 60.0;
}

std::vector<char> read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

store::Container write_test_container(const fs::path& dir) {
    simgen::SceneSpec spec;
    spec.sensor = testutil::make_props(32, 32);
    spec.duration_s = 0.4;
    spec.pattern = simgen::SceneSpec::Pattern::checkerboard;
    spec.cell_px = 8.0;
    spec.motion = simgen::SceneSpec::Motion::translation;
    spec.vx_px_s = 50.0;
    spec.vy_px_s = -25.0;
    return simgen::make_dataset(spec, dir);
}

}  // namespace

TEST_CASE("flow_to_color maps zero flow to white") {
    const auto img = viz::flow_to_color(testutil::constant_flow(8, 8, 0.0, 0.0));
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            const auto* p = img.pixel(y, x);
            CHECK(p[0] == 255);
            CHECK(p[1] == 255);
            CHECK(p[2] == 255);
        }
}

TEST_CASE("flow_to_color gives full saturation at the maximum magnitude") {
    const double m = 3.0;
    const auto img = viz::flow_to_color(testutil::constant_flow(8, 8, m, 0.0), m);
    const auto* p = img.pixel(4, 4);
    // hue 0 at angle 0: pure red at full saturation
    CHECK(p[0] == 255);
    CHECK(p[1] == 0);
    CHECK(p[2] == 0);
}

TEST_CASE("negating the field rotates the hue by 180 degrees") {
    std::mt19937_64 rng(91);
    auto field = testutil::smooth_random_flow(rng, 12, 12, 3.0);
    for (auto& u : field.u.data) u += 4.0;  // keep magnitudes well away from zero
    auto negated = field;
    for (auto& u : negated.u.data) u = -u;
    for (auto& v : negated.v.data) v = -v;

    const auto img = viz::flow_to_color(field, 8.0);
    const auto img_neg = viz::flow_to_color(negated, 8.0);
    for (int y = 2; y < 10; ++y) {
        for (int x = 2; x < 10; ++x) {
            double diff = std::abs(hue_of(img.pixel(y, x)) - hue_of(img_neg.pixel(y, x)));
            if (diff > 180.0) diff = 360.0 - diff;
            CHECK(diff == Approx(180.0).margin(3.0));
        }
    }
}

TEST_CASE("render_overlay passes gray through and tints exactly the event mask") {
    std::mt19937_64 rng(92);
    GrayImage gray(16, 16);
    for (auto& v : gray.data) v = static_cast<std::uint8_t>(rng() % 256);

    SECTION("empty slice is a grayscale passthrough") {
        const auto img = viz::render_overlay(gray, EventStream{});
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                const auto* p = img.pixel(y, x);
                CHECK(p[0] == gray.at(y, x));
                CHECK(p[1] == gray.at(y, x));
                CHECK(p[2] == gray.at(y, x));
            }
    }
    SECTION("single positive event tints one pixel") {
        EventStream events;
        events.push_back(3, 4, 0, true);
        const auto img = viz::render_overlay(gray, events);
        int tinted = 0;
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                const auto* p = img.pixel(y, x);
                if (!(p[0] == p[1] && p[1] == p[2] && p[0] == gray.at(y, x))) ++tinted;
            }
        CHECK(tinted == 1);
        CHECK(img.pixel(4, 3)[0] == viz::kPositiveTint[0]);
    }
    SECTION("tinted pixels equal the event mask") {
        const auto events = testutil::random_events(rng, 200, 16, 16, 1000);
        const auto mask = metrics::event_mask(events, 16, 16);
        const auto img = viz::render_overlay(gray, events);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) {
                const auto* p = img.pixel(y, x);
                const bool tinted =
                    !(p[0] == p[1] && p[1] == p[2] && p[0] == gray.at(y, x));
                // a gray pixel could coincide with a tint color only if the
                // tints were gray, which they are not
                CHECK(tinted == (mask.at(y, x) != 0));
            }
    }
}

TEST_CASE("export_sequence numbers files and renders deterministically") {
    const auto container_dir = testutil::temp_dir("viz_container");
    write_test_container(container_dir);
    store::Reader reader(container_dir);

    const auto out_a = testutil::temp_dir("viz_out_a");
    const auto files_a = viz::export_sequence(reader, store::Stride::millis(40), out_a,
                                              viz::RenderKind::overlay);
    auto it = store::iterate(reader, store::Stride::millis(40));
    CHECK(files_a.size() == it.size());
    CHECK(files_a.front().filename() == "000000.png");
    CHECK(files_a.back().filename() ==
          (std::ostringstream{} << std::setw(6) << std::setfill('0') << files_a.size() - 1
                                << ".png")
              .str());

    const auto out_b = testutil::temp_dir("viz_out_b");
    const auto files_b = viz::export_sequence(reader, store::Stride::millis(40), out_b,
                                              viz::RenderKind::overlay);
    for (std::size_t k = 0; k < files_a.size(); ++k)
        CHECK(read_file(files_a[k]) == read_file(files_b[k]));

    for (const auto& dir : {container_dir, out_a, out_b}) fs::remove_all(dir);
}

TEST_CASE("export_sequence renders zero flow as white frames") {
    // static scene: no events, flow fields all zero
    simgen::SceneSpec spec;
    spec.sensor = testutil::make_props(16, 16);
    spec.duration_s = 0.2;
    spec.pattern = simgen::SceneSpec::Pattern::checkerboard;
    spec.motion = simgen::SceneSpec::Motion::translation;
    const auto scene = simgen::render_scene(spec);
    const auto container_dir = testutil::temp_dir("viz_zeroflow");
    store::write_sequence(EventStream{}, simgen::subsample_gray(scene, spec), scene.flow,
                          spec.sensor, container_dir);
    store::Reader reader(container_dir);
    REQUIRE(reader.num_flow() > 0);

    const auto out = testutil::temp_dir("viz_zeroflow_out");
    // event-duration is zero here, so stride over gray frames
    const auto files = viz::export_sequence(reader, store::Stride::gray_frames(1), out,
                                            viz::RenderKind::flow);
    REQUIRE_FALSE(files.empty());

    // decode-free check: all-white frames of the same size are byte-identical
    const auto reference = read_file(files.front());
    for (const auto& f : files) CHECK(read_file(f) == reference);

    // and the rendered image itself is white before encoding
    const auto slice = reader.slice_by_gray_index(0, 1);
    REQUIRE(slice.flow.has_value());
    const auto img = viz::flow_to_color(*slice.flow);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) CHECK(img.pixel(y, x)[0] == 255);

    fs::remove_all(container_dir);
    fs::remove_all(out);
}

TEST_CASE("export_sequence renders encoded frames") {
    const auto container_dir = testutil::temp_dir("viz_encoded");
    write_test_container(container_dir);
    store::Reader reader(container_dir);
    const auto out = testutil::temp_dir("viz_encoded_out");
    const auto files = viz::export_sequence(reader, store::Stride::millis(100), out,
                                            viz::RenderKind::encoded);
    auto it = store::iterate(reader, store::Stride::millis(100));
    CHECK(files.size() == it.size());
    for (const auto& f : files) CHECK(fs::file_size(f) > 0);
    fs::remove_all(container_dir);
    fs::remove_all(out);
}

TEST_CASE("export_events_csv writes one csv per slice") {
    const auto container_dir = testutil::temp_dir("viz_csv");
    write_test_container(container_dir);
    store::Reader reader(container_dir);
    const auto out = testutil::temp_dir("viz_csv_out");
    const auto files = viz::export_events_csv(reader, store::Stride::millis(100), out);
    auto it = store::iterate(reader, store::Stride::millis(100));
    CHECK(files.size() == it.size());
    std::ifstream in(files.front());
    std::string header;
    std::getline(in, header);
    CHECK(header == "x,y,t_us,p");
    fs::remove_all(container_dir);
    fs::remove_all(out);
}

TEST_CASE("pgm round trip") {
    std::mt19937_64 rng(93);
    GrayImage img(13, 7);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(rng() % 256);
    const auto dir = testutil::temp_dir("pgm");
    write_pgm(dir / "frame.pgm", img);
    const auto back = read_pgm(dir / "frame.pgm");
    CHECK(back.width == 13);
    CHECK(back.height == 7);
    CHECK(back.data == img.data);
    fs::remove_all(dir);
}
