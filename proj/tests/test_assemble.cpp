#include "evsr/assemble.hpp"

#include "evsr/metrics.hpp"

#include "doctest.h"

using namespace evsr;

namespace {

TimestampField true_field(const EventStream& s, const VoxelGrid& grid) {
    TimestampField f;
    f.width = grid.geometry.width;
    f.height = grid.geometry.height;
    f.depth = grid.depth;
    f.values.assign(static_cast<std::size_t>(f.width) * f.height * f.depth, 0.0);
    std::vector<int> cursor(static_cast<std::size_t>(f.width) * f.height, 0);
    for (const Event& e : s.events) {
        const std::size_t pix = static_cast<std::size_t>(e.y) * f.width + e.x;
        f.values[pix * f.depth + cursor[pix]++] =
            static_cast<double>(e.t) / static_cast<double>(s.t_end);
    }
    return f;
}

}  // namespace

TEST_CASE("assemble: single decoded event becomes one stream event") {
    const EventStream src = validate_stream({{0, 0, 50, +1}}, {1, 1}, Timestamp{100});
    const VoxelGrid grid = encode(src);
    TimestampField ts;
    ts.width = 1;
    ts.height = 1;
    ts.depth = 1;
    ts.values = {0.5};
    const EventStream out = assemble(grid, ts, 100, grid.geometry);
    REQUIRE(out.size() == 1);
    CHECK(out.events[0] == Event{0, 0, 50, +1});
}

TEST_CASE("assemble: all-pad grid yields the empty stream") {
    const EventStream src = validate_stream({}, {3, 2}, Timestamp{100});
    const VoxelGrid grid = encode(src);
    TimestampField ts;
    ts.width = 3;
    ts.height = 2;
    ts.depth = 0;
    const EventStream out = assemble(grid, ts, 100, grid.geometry);
    CHECK(out.empty());
    CHECK(out.t_end == 100);
}

TEST_CASE("assemble: inverse construction reproduces the source exactly") {
    SynthConfig scene;
    scene.geometry = {16, 16};
    scene.bar_width = 5.0;
    scene.velocity_x = 1.4;
    scene.duration_ms = 8.0;
    const EventStream src = simulate(scene);
    REQUIRE(!src.empty());
    const VoxelGrid grid = encode(src);
    const EventStream out = assemble(grid, true_field(src, grid), src.t_end, grid.geometry);
    REQUIRE(out.size() == src.size());
    CHECK(out.events == src.events);
    CHECK(out.t_end == src.t_end);
}

TEST_CASE("assemble: field mismatch rejected") {
    const EventStream src = validate_stream({{0, 0, 1, 1}}, {2, 2}, Timestamp{10});
    const VoxelGrid grid = encode(src);
    TimestampField ts;
    ts.width = 3;
    ts.height = 2;
    ts.depth = grid.depth;
    CHECK_THROWS_AS(assemble(grid, ts, 10, grid.geometry), FieldMismatch);
}

TEST_CASE("naive_upsample_stream: replication and geometry") {
    const EventStream src = validate_stream({{1, 0, 5, -1}}, {2, 1}, Timestamp{10});
    const EventStream up = naive_upsample_stream(src, 2);
    CHECK(up.geometry.width == 4);
    CHECK(up.geometry.height == 2);
    REQUIRE(up.size() == 4);
    for (const Event& e : up.events) {
        CHECK(e.t == 5);
        CHECK(e.p == -1);
        CHECK(e.x >= 2);
        CHECK(e.x < 4);
    }
    CHECK_THROWS_AS(naive_upsample_stream(src, 0), BadFactor);
}

TEST_CASE("super_resolve: full pipeline contract on a small scene") {
    SynthConfig scene;
    scene.geometry = {16, 16};
    scene.bar_width = 6.0;
    scene.velocity_x = 0.8;
    scene.duration_ms = 8.0;
    const EventStream lr = simulate(scene);

    SpatialConfig scfg;
    scfg.iterations = 150;
    scfg.seed = 11;
    TemporalConfig tcfg;
    tcfg.epochs = 250;
    tcfg.seed = 11;
    const SRResult res = super_resolve(lr, 2, scfg, tcfg);

    // output geometry is exactly (sigma W, sigma H)
    CHECK(res.stream.geometry.width == 32);
    CHECK(res.stream.geometry.height == 32);
    // polarity closure and temporal extent preservation
    for (const Event& e : res.stream.events) {
        CHECK((e.p == 1 || e.p == -1));
        CHECK(e.t <= lr.t_end);
    }
    // SR event count grows for sigma >= 2 on the synthetic scene
    CHECK(res.stream.size() >= lr.size());
    // diagnostics populated
    CHECK(res.diagnostics.lr_event_count == lr.size());
    CHECK(res.diagnostics.sr_event_count == res.stream.size());
    CHECK(res.diagnostics.voxel_depth == encode(lr).depth);
    CHECK(res.diagnostics.seconds_spatial_train > 0.0);
    CHECK(res.spatial_log.size() == 150);
    CHECK(res.temporal_log.size() == 250);
}

TEST_CASE("super_resolve: deterministic under fixed seeds") {
    SynthConfig scene;
    scene.geometry = {16, 16};
    scene.bar_width = 6.0;
    scene.velocity_x = 0.8;
    scene.duration_ms = 8.0;
    const EventStream lr = simulate(scene);
    SpatialConfig scfg;
    scfg.iterations = 60;
    scfg.seed = 21;
    TemporalConfig tcfg;
    tcfg.epochs = 80;
    tcfg.seed = 21;
    const SRResult a = super_resolve(lr, 2, scfg, tcfg);
    const SRResult b = super_resolve(lr, 2, scfg, tcfg);
    CHECK(a.stream.events == b.stream.events);
}

TEST_CASE("super_resolve: block containment of LR events in SR blocks") {
    SynthConfig scene;
    scene.geometry = {16, 16};
    scene.bar_width = 6.0;
    scene.velocity_x = 0.8;
    scene.duration_ms = 8.0;
    const EventStream lr = simulate(scene);
    SpatialConfig scfg;
    scfg.iterations = 200;
    scfg.seed = 31;
    TemporalConfig tcfg;
    tcfg.epochs = 100;
    tcfg.seed = 31;
    const SRResult res = super_resolve(lr, 2, scfg, tcfg);

    // per LR pixel and polarity, count how many LR events find a
    // same-polarity decoded SR event inside the 2x2 block
    std::map<std::pair<int, int>, std::array<int, 2>> lr_counts, sr_counts;
    for (const Event& e : lr.events) ++lr_counts[{e.x, e.y}][e.p > 0 ? 1 : 0];
    for (const Event& e : res.stream.events) ++sr_counts[{e.x / 2, e.y / 2}][e.p > 0 ? 1 : 0];
    std::size_t total = 0, matched = 0;
    for (const auto& [pix, counts] : lr_counts) {
        for (int pol = 0; pol < 2; ++pol) {
            total += counts[pol];
            const auto it = sr_counts.find(pix);
            if (it != sr_counts.end())
                matched += std::min(counts[pol], it->second[pol]);
        }
    }
    REQUIRE(total > 0);
    CHECK(static_cast<double>(matched) / total >= 0.9);
}

TEST_CASE("super_resolve: rejects empty input and propagates stage tags") {
    const EventStream empty = validate_stream({}, {8, 8}, Timestamp{10});
    CHECK_THROWS_AS(super_resolve(empty, 2, {}, {}), Error);

    // a stream too small for the scale fails inside the spatial stage
    const EventStream tiny = validate_stream({{0, 0, 1, 1}}, {6, 6}, Timestamp{10});
    try {
        super_resolve(tiny, 2, {}, {});
        FAIL("expected PipelineError");
    } catch (const PipelineError& e) {
        CHECK(e.stage_name == "spatial_train");
    }
}
