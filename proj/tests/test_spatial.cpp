#include "evsr/spatial.hpp"

#include "evsr/synth.hpp"

#include "doctest.h"

using namespace evsr;

namespace {

// small sparse scene: bar relocating over part of a 16x16 field
EventStream small_scene() {
    SynthConfig cfg;
    cfg.geometry = {16, 16};
    cfg.bar_width = 6.0;
    cfg.velocity_x = 0.8;
    cfg.duration_ms = 8.0;
    return simulate(cfg);
}

}  // namespace

TEST_CASE("train_spatial: the identity task is learnable at scale 1") {
    const VoxelGrid grid = encode(small_scene());
    SpatialConfig cfg;
    cfg.scale = 1;
    cfg.iterations = 250;
    cfg.seed = 3;
    SpatialModel model = train_spatial(grid, cfg);

    const Tensor in = spatial_detail::as_conv_input(grid_to_tensor(grid));
    const Tensor out = model.net.forward(in);
    CHECK(nn::l1_loss(out, in) < 0.01);

    // decoded polarity sequences match on nearly every pixel
    VoxelGrid sr = infer_spatial(model, grid, 1);
    const auto a = decode(grid);
    const auto b = decode(sr);
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] == b[i]) ++same;
    CHECK(static_cast<double>(same) / a.size() >= 0.99);
}

TEST_CASE("train_spatial: loss decreases and best-so-far never rises") {
    const VoxelGrid grid = encode(small_scene());
    SpatialConfig cfg;
    cfg.scale = 2;
    cfg.iterations = 200;
    cfg.seed = 1;
    const SpatialModel model = train_spatial(grid, cfg);
    REQUIRE(model.log.size() == 200);
    CHECK(model.log.back().loss <= model.log.front().loss);
    CHECK(model.log.back().loss < 0.1 * model.log.front().loss);

    double best = model.log.front().loss;
    for (const TrainRecord& r : model.log) {
        const double next_best = std::min(best, r.loss);
        CHECK(next_best <= best);
        best = next_best;
    }
}

TEST_CASE("train_spatial: augmentation controls the per-iteration pair count") {
    const VoxelGrid grid = encode(small_scene());
    SpatialConfig cfg;
    cfg.scale = 2;
    cfg.iterations = 1;
    cfg.seed = 1;
    CHECK(train_spatial(grid, cfg).pairs_per_iteration == 6);
    cfg.augment = false;
    CHECK(train_spatial(grid, cfg).pairs_per_iteration == 1);
}

TEST_CASE("train_spatial: rejects empty and too-small grids") {
    const VoxelGrid empty = encode(validate_stream({}, {16, 16}, Timestamp{10}));
    SpatialConfig cfg;
    cfg.scale = 2;
    CHECK_THROWS_AS(train_spatial(empty, cfg), GridTooSmall);

    const VoxelGrid tiny = encode(validate_stream({{0, 0, 1, 1}}, {6, 6}, Timestamp{10}));
    cfg.scale = 2;  // 6/2 = 3 < 4
    CHECK_THROWS_AS(train_spatial(tiny, cfg), GridTooSmall);
}

TEST_CASE("infer_spatial: scale mismatch rejected, output geometry correct") {
    const VoxelGrid grid = encode(small_scene());
    SpatialConfig cfg;
    cfg.scale = 2;
    cfg.iterations = 30;
    cfg.seed = 5;
    SpatialModel model = train_spatial(grid, cfg);
    CHECK_THROWS_AS(infer_spatial(model, grid, 3), ScaleMismatch);

    const VoxelGrid sr = infer_spatial(model, grid, 2);
    CHECK(sr.geometry.width == 32);
    CHECK(sr.geometry.height == 32);
    CHECK(sr.depth == grid.depth);
    for (double v : sr.data) {
        CHECK(v >= grid.coding.code_minus);
        CHECK(v <= grid.coding.code_plus);
    }
}

TEST_CASE("infer_spatial: an almost-empty grid stays almost empty") {
    // one lone event in a 16x16 field
    const EventStream s = validate_stream({{8, 8, 500, +1}}, {16, 16}, Timestamp{1000});
    const VoxelGrid grid = encode(s);
    SpatialConfig cfg;
    cfg.scale = 2;
    cfg.iterations = 120;
    cfg.seed = 2;
    SpatialModel model = train_spatial(grid, cfg);
    const VoxelGrid sr = infer_spatial(model, grid, 2);
    std::size_t non_empty = 0;
    for (int c : sr.fill_counts)
        if (c > 0) ++non_empty;
    CHECK(static_cast<double>(non_empty) / sr.fill_counts.size() <= 0.01);
}

TEST_CASE("train_spatial: determinism under a fixed seed") {
    const VoxelGrid grid = encode(small_scene());
    SpatialConfig cfg;
    cfg.scale = 2;
    cfg.iterations = 40;
    cfg.seed = 9;
    SpatialModel a = train_spatial(grid, cfg);
    SpatialModel b = train_spatial(grid, cfg);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss == b.log[i].loss);
    const VoxelGrid sra = infer_spatial(a, grid, 2);
    const VoxelGrid srb = infer_spatial(b, grid, 2);
    CHECK(sra.data == srb.data);
}

TEST_CASE("train_spatial: patch mode activates above the threshold") {
    const VoxelGrid grid = encode(small_scene());
    SpatialConfig cfg;
    cfg.scale = 2;
    cfg.iterations = 2;
    cfg.seed = 1;
    cfg.patch_threshold = 8;  // force patch mode on the 16x16 grid
    cfg.patch_size = 8;
    const SpatialModel model = train_spatial(grid, cfg);  // must simply run
    CHECK(model.log.size() == 2);
}

TEST_CASE("spatial pipeline: 180-degree equivariance smoke test") {
    const EventStream s = small_scene();
    const VoxelGrid grid = encode(s);
    SpatialConfig cfg;
    cfg.scale = 2;
    cfg.iterations = 150;
    cfg.seed = 4;

    SpatialModel m1 = train_spatial(grid, cfg);
    const VoxelGrid sr1 = infer_spatial(m1, grid, 2);
    std::size_t count1 = 0;
    for (int c : sr1.fill_counts) count1 += c;

    VoxelGrid rotated = grid;
    rotated.data = apply_transform(grid_to_tensor(grid), SpatialTransform::rot180).data;
    SpatialModel m2 = train_spatial(rotated, cfg);
    const VoxelGrid sr2 = infer_spatial(m2, rotated, 2);
    std::size_t count2 = 0;
    for (int c : sr2.fill_counts) count2 += c;

    REQUIRE(count1 > 0);
    const double ratio = static_cast<double>(count2) / static_cast<double>(count1);
    CHECK(ratio > 0.9);
    CHECK(ratio < 1.1);
}
