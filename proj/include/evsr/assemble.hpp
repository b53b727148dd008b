#pragma once

#include "evsr/spatial.hpp"
#include "evsr/synth.hpp"
#include "evsr/temporal.hpp"

#include <chrono>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

namespace evsr {

/// Fuses the SR polarity grid with the regressed timestamps: each decoded
/// event of a pixel gets its depth-matched timestamp, rounded half-up to
/// integer microseconds. The result is a fully validated stream.
inline EventStream assemble(const VoxelGrid& sr_grid, const TimestampField& ts, Timestamp t_end,
                            SensorGeometry geometry_out) {
    if (ts.width != sr_grid.geometry.width || ts.height != sr_grid.geometry.height ||
        ts.depth != sr_grid.depth)
        throw FieldMismatch("timestamp field does not cover the SR grid");
    if (!(geometry_out == sr_grid.geometry))
        throw FieldMismatch("output geometry differs from the SR grid's");

    const auto sequences = decode(sr_grid);
    std::vector<Event> events;
    for (int y = 0; y < sr_grid.geometry.height; ++y) {
        for (int x = 0; x < sr_grid.geometry.width; ++x) {
            const auto& seq = sequences[static_cast<std::size_t>(y) * sr_grid.geometry.width + x];
            for (std::size_t k = 0; k < seq.size(); ++k) {
                Timestamp t = static_cast<Timestamp>(
                    ts.at(x, y, k) * static_cast<double>(t_end) + 0.5);
                if (t > t_end) t = t_end;
                events.push_back({x, y, t, seq[k]});
            }
        }
    }
    return validate_stream(std::move(events), geometry_out, t_end);
}

/// The comparison baseline: every LR event copied into its sigma x sigma
/// block of SR pixels with an unchanged timestamp (nearest-neighbour
/// upsampling of the stream).
inline EventStream naive_upsample_stream(const EventStream& stream, int sigma) {
    if (sigma < 1) throw BadFactor("upsample factor must be >= 1");
    std::vector<Event> events;
    events.reserve(stream.size() * sigma * sigma);
    for (const Event& e : stream.events)
        for (int dy = 0; dy < sigma; ++dy)
            for (int dx = 0; dx < sigma; ++dx)
                events.push_back({e.x * sigma + dx, e.y * sigma + dy, e.t, e.p});
    return validate_stream(std::move(events),
                           {stream.geometry.width * sigma, stream.geometry.height * sigma},
                           stream.t_end);
}

/// Everything a run reports next to its output stream.
struct Diagnostics {
    int scale = 1;
    std::uint64_t seed = 0;
    std::size_t lr_event_count = 0;
    std::size_t sr_event_count = 0;
    std::size_t voxel_depth = 0;
    std::string kernel;
    int spatial_iterations = 0;
    int temporal_epochs = 0;
    double spatial_loss_first = 0.0;
    double spatial_loss_last = 0.0;
    double temporal_loss_first = 0.0;
    double temporal_loss_last = 0.0;
    double seconds_encode = 0.0;
    double seconds_spatial_train = 0.0;
    double seconds_spatial_infer = 0.0;
    double seconds_temporal_train = 0.0;
    double seconds_predict = 0.0;
    double seconds_assemble = 0.0;
    bool fallback_used = false;

    std::vector<std::pair<std::string, std::string>> key_values() const {
        auto fmt = [](double v) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.6g", v);
            return std::string(buf);
        };
        return {
            {"scale", std::to_string(scale)},
            {"seed", std::to_string(seed)},
            {"lr_event_count", std::to_string(lr_event_count)},
            {"sr_event_count", std::to_string(sr_event_count)},
            {"voxel_depth", std::to_string(voxel_depth)},
            {"kernel", kernel},
            {"spatial_iterations", std::to_string(spatial_iterations)},
            {"temporal_epochs", std::to_string(temporal_epochs)},
            {"spatial_loss_first", fmt(spatial_loss_first)},
            {"spatial_loss_last", fmt(spatial_loss_last)},
            {"temporal_loss_first", fmt(temporal_loss_first)},
            {"temporal_loss_last", fmt(temporal_loss_last)},
            {"seconds_encode", fmt(seconds_encode)},
            {"seconds_spatial_train", fmt(seconds_spatial_train)},
            {"seconds_spatial_infer", fmt(seconds_spatial_infer)},
            {"seconds_temporal_train", fmt(seconds_temporal_train)},
            {"seconds_predict", fmt(seconds_predict)},
            {"seconds_assemble", fmt(seconds_assemble)},
            {"fallback_used", fallback_used ? "1" : "0"},
        };
    }
};

struct SRResult {
    EventStream stream;
    Diagnostics diagnostics;
    TrainLog spatial_log;
    TrainLog temporal_log;
};

/// One-call pipeline: encode, train and apply the spatial branch, train the
/// temporal branch, predict subpixel timestamps, assemble. Errors abort and
/// carry the failing stage's name; degradation to a naive upsample is the
/// caller's explicit choice.
inline SRResult super_resolve(const EventStream& stream, int scale, SpatialConfig spatial_cfg,
                              TemporalConfig temporal_cfg) {
    if (scale < 1) throw BadFactor("scale must be >= 1");
    if (stream.empty()) throw Error("cannot super-resolve an empty stream");
    spatial_cfg.scale = scale;

    using Clock = std::chrono::steady_clock;
    auto seconds = [](Clock::time_point a, Clock::time_point b) {
        return std::chrono::duration<double>(b - a).count();
    };

    SRResult result;
    Diagnostics& diag = result.diagnostics;
    diag.scale = scale;
    diag.seed = spatial_cfg.seed;
    diag.kernel = spatial_cfg.kernel.name();
    diag.spatial_iterations = spatial_cfg.iterations;
    diag.temporal_epochs = temporal_cfg.epochs;
    diag.lr_event_count = stream.size();

    auto run_stage = [](const char* stage, auto&& fn) {
        try {
            return fn();
        } catch (const PipelineError&) {
            throw;
        } catch (const std::exception& e) {
            throw PipelineError(stage, e.what());
        }
    };

    const auto t0 = Clock::now();
    const VoxelGrid grid = run_stage("encode", [&] { return encode(stream); });
    diag.voxel_depth = grid.depth;
    const auto t1 = Clock::now();
    diag.seconds_encode = seconds(t0, t1);

    SpatialModel spatial =
        run_stage("spatial_train", [&] { return train_spatial(grid, spatial_cfg); });
    const auto t2 = Clock::now();
    diag.seconds_spatial_train = seconds(t1, t2);

    const VoxelGrid sr_grid =
        run_stage("spatial_infer", [&] { return infer_spatial(spatial, grid, scale); });
    const auto t3 = Clock::now();
    diag.seconds_spatial_infer = seconds(t2, t3);

    TemporalModel temporal = run_stage(
        "temporal_train", [&] { return train_temporal(stream, grid, temporal_cfg); });
    const auto t4 = Clock::now();
    diag.seconds_temporal_train = seconds(t3, t4);

    const TimestampField field = run_stage(
        "predict", [&] { return predict_timestamps(temporal, sr_grid, stream.t_end); });
    const auto t5 = Clock::now();
    diag.seconds_predict = seconds(t4, t5);

    result.stream = run_stage("assemble", [&] {
        return assemble(sr_grid, field, stream.t_end, sr_grid.geometry);
    });
    const auto t6 = Clock::now();
    diag.seconds_assemble = seconds(t5, t6);

    diag.sr_event_count = result.stream.size();
    diag.spatial_loss_first = spatial.log.front().loss;
    diag.spatial_loss_last = spatial.log.back().loss;
    diag.temporal_loss_first = temporal.log.front().loss;
    diag.temporal_loss_last = temporal.log.back().loss;
    result.spatial_log = std::move(spatial.log);
    result.temporal_log = std::move(temporal.log);
    return result;
}

}  // namespace evsr
