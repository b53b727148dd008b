#include "evsr/synth.hpp"

#include "evsr/metrics.hpp"

#include "doctest.h"

using namespace evsr;

namespace {

SynthConfig default_bar() {
    SynthConfig cfg;
    cfg.pattern = SynthConfig::Pattern::bar;
    cfg.geometry = {32, 32};
    cfg.bar_width = 8.0;
    cfg.velocity_x = 3.0;
    cfg.velocity_y = 0.0;
    cfg.duration_ms = 10.0;
    return cfg;
}

}  // namespace

TEST_CASE("simulate: static pattern emits nothing") {
    SynthConfig cfg = default_bar();
    cfg.velocity_x = 0.0;
    const EventStream s = simulate(cfg);
    CHECK(s.empty());
    CHECK(s.t_end == 10000);
}

TEST_CASE("simulate: events appear only where edges pass") {
    SynthConfig cfg = default_bar();
    const EventStream s = simulate(cfg);
    CHECK(!s.empty());

    // leading edge travels 30 px in 10 ms; columns beyond stay silent
    for (const Event& e : s.events) CHECK(e.x < 31);

    // every active pixel saw threshold crossings in groups; with the default
    // contrast of 0.2 a lo->hi edge yields floor(ln(5)/0.2) = 8 events
    const auto trains = group_by_pixel(s);
    const auto& first_col = trains.at(PixelKey{0, 0});
    CHECK(first_col.entries.size() == 16);  // bar enters and leaves
    for (std::size_t i = 0; i < 8; ++i) CHECK(first_col.entries[i].p == +1);
    for (std::size_t i = 8; i < 16; ++i) CHECK(first_col.entries[i].p == -1);
}

TEST_CASE("simulate: doubling the contrast halves the crossing count") {
    SynthConfig cfg = default_bar();
    const EventStream s1 = simulate(cfg);
    cfg.contrast = 0.4;
    const EventStream s2 = simulate(cfg);

    const auto t1 = group_by_pixel(s1);
    const auto t2 = group_by_pixel(s2);
    for (const auto& [key, train] : t2) {
        const auto it = t1.find(key);
        REQUIRE(it != t1.end());
        const long n1 = static_cast<long>(it->second.entries.size());
        const long n2 = static_cast<long>(train.entries.size());
        // crossing arithmetic: floor(D/c) vs floor(D/2c), within one event
        // per edge of the exact half
        CHECK(std::abs(n2 - n1 / 2) <= 2);
    }
}

TEST_CASE("simulate: polarity balances when both edges sweep") {
    SynthConfig cfg = default_bar();
    cfg.velocity_x = 5.0;  // trailing edge clears every column it enters
    const StreamStats st = stats(simulate(cfg));
    CHECK(st.polarity_ratio == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("simulate: deterministic and assumption-2 structure") {
    const EventStream a = simulate(default_bar());
    const EventStream b = simulate(default_bar());
    REQUIRE(a.size() == b.size());
    CHECK(a.events == b.events);

    // uniform velocity: a column's first event time grows linearly with x
    const auto trains = group_by_pixel(a);
    const double t0 = static_cast<double>(trains.at(PixelKey{4, 16}).entries.front().t);
    const double t1 = static_cast<double>(trains.at(PixelKey{10, 16}).entries.front().t);
    const double t2 = static_cast<double>(trains.at(PixelKey{16, 16}).entries.front().t);
    CHECK(t2 - t1 == doctest::Approx(t1 - t0).epsilon(0.05));
}

TEST_CASE("simulate: checkerboard and disk patterns produce valid streams") {
    SynthConfig cfg = default_bar();
    cfg.pattern = SynthConfig::Pattern::checkerboard;
    cfg.tile_size = 8.0;
    CHECK(!simulate(cfg).empty());
    cfg.pattern = SynthConfig::Pattern::disk;
    cfg.disk_radius = 6.0;
    CHECK(!simulate(cfg).empty());
}

TEST_CASE("downsample_stream: identity at factor 1 with zero window") {
    SynthConfig cfg = default_bar();
    const EventStream s = simulate(cfg);
    const EventStream d = downsample_stream(s, 1, 0);
    CHECK(d.events == s.events);
    CHECK(d.geometry == s.geometry);
}

TEST_CASE("downsample_stream: same-polarity merge keeps the earliest") {
    const EventStream hr = validate_stream({{0, 0, 100, +1}, {1, 1, 100, +1}}, {2, 2});
    const EventStream lr = downsample_stream(hr, 2, 100);
    REQUIRE(lr.size() == 1);
    CHECK(lr.events[0] == Event{0, 0, 100, +1});
    CHECK(lr.geometry.width == 1);
}

TEST_CASE("downsample_stream: opposite polarities both kept") {
    const EventStream hr = validate_stream({{0, 0, 100, +1}, {1, 1, 120, -1}}, {2, 2});
    const EventStream lr = downsample_stream(hr, 2, 100);
    CHECK(lr.size() == 2);
}

TEST_CASE("downsample_stream: strict window boundary") {
    // exactly tau apart: kept, merging applies only strictly inside
    const EventStream hr = validate_stream({{0, 0, 100, +1}, {0, 0, 200, +1}}, {2, 2});
    CHECK(downsample_stream(hr, 1, 100).size() == 2);
    CHECK(downsample_stream(hr, 1, 101).size() == 1);
}

TEST_CASE("downsample_stream: LR count never exceeds HR count") {
    const EventStream hr = simulate(default_bar());
    for (int sigma : {1, 2, 4}) {
        const EventStream lr = downsample_stream(hr, sigma);
        CHECK(lr.size() <= hr.size());
        CHECK(lr.t_end == hr.t_end);
    }
}

TEST_CASE("synth config validation") {
    SynthConfig cfg = default_bar();
    cfg.contrast = 0.0;
    CHECK_THROWS_AS(simulate(cfg), Error);
    cfg = default_bar();
    cfg.dt_us = 0;
    CHECK_THROWS_AS(simulate(cfg), Error);
    CHECK_THROWS_AS(downsample_stream(simulate(default_bar()), 0), BadFactor);
}
