#pragma once

#include "evsr/events.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace evsr {

/// Moving test pattern rendered into log-intensity space. Intensities are
/// piecewise constant in {background, foreground} so edges are crisp and
/// the log never sees zero.
struct SynthConfig {
    enum class Pattern { bar, checkerboard, disk };

    Pattern pattern = Pattern::bar;
    double bar_width = 0.0;         ///< pixels; 0 picks width/4
    double tile_size = 8.0;         ///< checkerboard tile, pixels
    double disk_radius = 0.0;       ///< pixels; 0 picks min(W,H)/4
    double velocity_x = 3.0;        ///< pixels per millisecond
    double velocity_y = 0.0;
    double duration_ms = 10.0;
    SensorGeometry geometry{32, 32};
    double contrast = 0.2;          ///< threshold c on log-intensity change
    std::uint64_t dt_us = 50;       ///< simulation step
    double intensity_lo = 0.2;
    double intensity_hi = 1.0;

    void validate() const {
        if (contrast <= 0.0) throw Error("contrast threshold must be positive");
        if (dt_us == 0) throw Error("time step must be positive");
        if (duration_ms <= 0.0) throw Error("duration must be positive");
        if (geometry.width < 1 || geometry.height < 1) throw Error("bad geometry");
        if (intensity_lo <= 0.0 || intensity_hi <= intensity_lo)
            throw Error("intensities must satisfy 0 < lo < hi");
        // travel may exceed the field for full sweeps, but a pattern that
        // leaves it many times over is a misconfiguration
        const double travel =
            std::hypot(velocity_x, velocity_y) * duration_ms;
        if (travel > 8.0 * std::max(geometry.width, geometry.height))
            throw Error("|u| * duration travels far beyond the field of view");
    }
};

namespace synth_detail {

/// Pattern indicator at a point in pattern space (foreground = true).
inline bool pattern_at(const SynthConfig& cfg, double px, double py) {
    switch (cfg.pattern) {
        case SynthConfig::Pattern::bar: {
            const double width = cfg.bar_width > 0.0 ? cfg.bar_width : cfg.geometry.width / 4.0;
            // bar body starts just left of the field so its leading edge
            // enters at x = 0 at t = 0 when moving right
            return px >= -width && px < 0.0;
        }
        case SynthConfig::Pattern::checkerboard: {
            const double s = cfg.tile_size > 0.0 ? cfg.tile_size : 8.0;
            const long ix = static_cast<long>(std::floor(px / s));
            const long iy = static_cast<long>(std::floor(py / s));
            return ((ix + iy) & 1) == 0;
        }
        case SynthConfig::Pattern::disk: {
            const double r =
                cfg.disk_radius > 0.0 ? cfg.disk_radius
                                      : std::min(cfg.geometry.width, cfg.geometry.height) / 4.0;
            const double cx = cfg.geometry.width / 2.0;
            const double cy = cfg.geometry.height / 2.0;
            const double dx = px - cx, dy = py - cy;
            return dx * dx + dy * dy <= r * r;
        }
    }
    return false;
}

inline double log_intensity(const SynthConfig& cfg, double px, double py) {
    return std::log(pattern_at(cfg, px, py) ? cfg.intensity_hi : cfg.intensity_lo);
}

}  // namespace synth_detail

/// Simulates a stream from the moving pattern: per time step, per pixel,
/// the accumulated log-intensity change emits one signed event every time
/// it crosses the contrast threshold, the threshold being subtracted on
/// each crossing so large jumps yield several events at the same step.
/// A static pattern (zero velocity) yields an empty stream.
inline EventStream simulate(const SynthConfig& cfg) {
    cfg.validate();
    const int w = cfg.geometry.width;
    const int h = cfg.geometry.height;
    const Timestamp duration_us = static_cast<Timestamp>(cfg.duration_ms * 1000.0 + 0.5);
    const std::size_t steps = duration_us / cfg.dt_us;

    std::vector<double> residual(static_cast<std::size_t>(w) * h, 0.0);
    std::vector<double> last_log(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            last_log[static_cast<std::size_t>(y) * w + x] =
                synth_detail::log_intensity(cfg, x + 0.5, y + 0.5);

    std::vector<Event> events;
    for (std::size_t step = 1; step <= steps; ++step) {
        const Timestamp t = static_cast<Timestamp>(step) * cfg.dt_us;
        const double t_ms = static_cast<double>(t) / 1000.0;
        const double ox = cfg.velocity_x * t_ms;
        const double oy = cfg.velocity_y * t_ms;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::size_t pix = static_cast<std::size_t>(y) * w + x;
                const double now =
                    synth_detail::log_intensity(cfg, x + 0.5 - ox, y + 0.5 - oy);
                double& res = residual[pix];
                res += now - last_log[pix];
                last_log[pix] = now;
                while (res >= cfg.contrast) {
                    events.push_back({x, y, t, +1});
                    res -= cfg.contrast;
                }
                while (res <= -cfg.contrast) {
                    events.push_back({x, y, t, -1});
                    res += cfg.contrast;
                }
            }
        }
    }
    return validate_stream(std::move(events), cfg.geometry, duration_us);
}

/// Synthesizes the LR counterpart of a HR stream: events map to pixel
/// (x/sigma, y/sigma) keeping time and polarity, then same-polarity events
/// closer than the refractory window within one LR pixel merge into the
/// earliest one. The window is strict, so tau = 0 is the exact identity
/// even for duplicate timestamps.
inline EventStream downsample_stream(const EventStream& hr, int sigma,
                                     Timestamp refractory_us = 100) {
    if (sigma < 1) throw BadFactor("stream downsample factor must be >= 1");
    const SensorGeometry lr_geom{(hr.geometry.width + sigma - 1) / sigma,
                                 (hr.geometry.height + sigma - 1) / sigma};

    std::vector<Event> mapped;
    mapped.reserve(hr.size());
    for (const Event& e : hr.events)
        mapped.push_back({e.x / sigma, e.y / sigma, e.t, e.p});
    std::sort(mapped.begin(), mapped.end(), event_less);

    // per pixel, per polarity: time of the last kept event
    std::vector<Timestamp> last_kept(static_cast<std::size_t>(lr_geom.width) * lr_geom.height * 2);
    std::vector<bool> has_kept(last_kept.size(), false);

    std::vector<Event> kept;
    kept.reserve(mapped.size());
    for (const Event& e : mapped) {
        const std::size_t slot =
            (static_cast<std::size_t>(e.y) * lr_geom.width + e.x) * 2 + (e.p > 0 ? 1 : 0);
        if (has_kept[slot] && e.t - last_kept[slot] < refractory_us && e.t >= last_kept[slot])
            continue;
        has_kept[slot] = true;
        last_kept[slot] = e.t;
        kept.push_back(e);
    }
    return validate_stream(std::move(kept), lr_geom, hr.t_end);
}

}  // namespace evsr
