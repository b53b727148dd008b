#pragma once

#include "evsr/errors.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <tuple>
#include <vector>

namespace evsr {

/// Microsecond timestamp.
using Timestamp = std::uint64_t;

/// One camera event: pixel position, time, and brightness-change sign.
/// Coordinates are 0-based in memory; file formats convert at the boundary.
struct Event {
    int x = 0;          ///< column, 0 <= x < width
    int y = 0;          ///< row, 0 <= y < height
    Timestamp t = 0;    ///< microseconds
    int p = 1;          ///< polarity, -1 or +1

    friend bool operator==(const Event&, const Event&) = default;
};

/// Total order used everywhere: time first, then (y, x, p) so that
/// simultaneous events still sort deterministically.
inline bool event_less(const Event& a, const Event& b) {
    return std::tie(a.t, a.y, a.x, a.p) < std::tie(b.t, b.y, b.x, b.p);
}

struct SensorGeometry {
    int width = 0;
    int height = 0;

    friend bool operator==(const SensorGeometry&, const SensorGeometry&) = default;
    bool contains(int x, int y) const {
        return x >= 0 && x < width && y >= 0 && y < height;
    }
};

/// A validated, time-sorted event collection. Immutable by convention once
/// built through validate_stream; safe for concurrent reads.
struct EventStream {
    SensorGeometry geometry;
    std::vector<Event> events;
    Timestamp t_end = 0;  ///< recording extent, >= every event timestamp

    bool empty() const { return events.empty(); }
    std::size_t size() const { return events.size(); }
};

/// One entry of an impulse train: event time and polarity at a fixed pixel.
struct TimedPolarity {
    Timestamp t = 0;
    int p = 1;

    friend bool operator==(const TimedPolarity&, const TimedPolarity&) = default;
};

/// Per-pixel event sequence, sorted by time. The temporal ground truth:
/// each entry is one unit impulse of signed magnitude.
struct ImpulseTrain {
    int x = 0;
    int y = 0;
    std::vector<TimedPolarity> entries;
};

/// Map key for per-pixel containers; ordered (y, x) for deterministic walks.
struct PixelKey {
    int x = 0;
    int y = 0;

    friend bool operator==(const PixelKey&, const PixelKey&) = default;
    friend bool operator<(const PixelKey& a, const PixelKey& b) {
        return std::tie(a.y, a.x) < std::tie(b.y, b.x);
    }
};

/// Builds a sorted, validated stream from events in any order.
/// Duplicate identical events are legal and preserved. If t_hint is absent
/// the extent defaults to the last event timestamp (0 for empty input).
inline EventStream validate_stream(std::vector<Event> raw_events,
                                   SensorGeometry geometry,
                                   std::optional<Timestamp> t_hint = std::nullopt) {
    if (geometry.width < 1 || geometry.height < 1)
        throw OutOfBounds("geometry must be at least 1x1");

    Timestamp t_max = 0;
    for (const Event& e : raw_events) {
        if (!geometry.contains(e.x, e.y))
            throw OutOfBounds("event at (" + std::to_string(e.x) + "," + std::to_string(e.y) +
                              ") outside " + std::to_string(geometry.width) + "x" +
                              std::to_string(geometry.height) + " sensor");
        if (e.p != -1 && e.p != 1)
            throw BadPolarity("polarity must be -1 or +1, got " + std::to_string(e.p));
        t_max = std::max(t_max, e.t);
    }
    if (t_hint && !raw_events.empty() && *t_hint < t_max)
        throw TimeExtentTooSmall("t_hint " + std::to_string(*t_hint) +
                                 " < last event timestamp " + std::to_string(t_max));

    std::sort(raw_events.begin(), raw_events.end(), event_less);

    EventStream s;
    s.geometry = geometry;
    s.events = std::move(raw_events);
    s.t_end = t_hint ? *t_hint : t_max;
    return s;
}

/// Splits a stream into per-pixel impulse trains. Pixels with no events do
/// not appear; the union of all trains is exactly the stream.
inline std::map<PixelKey, ImpulseTrain> group_by_pixel(const EventStream& stream) {
    std::map<PixelKey, ImpulseTrain> trains;
    for (const Event& e : stream.events) {
        ImpulseTrain& train = trains[PixelKey{e.x, e.y}];
        if (train.entries.empty()) {
            train.x = e.x;
            train.y = e.y;
        }
        train.entries.push_back({e.t, e.p});
    }
    return trains;
}

/// Event coordinates mapped to the unit cube.
struct NormalizedEvent {
    double x = 0.0;
    double y = 0.0;
    double t = 0.0;
};

/// x -> x/(W-1), y -> y/(H-1), t -> t/T. Degenerate axes (W=1 or H=1) map
/// to 0. Throws ZeroExtent for a non-empty stream with T = 0.
inline std::vector<NormalizedEvent> normalize(const EventStream& stream) {
    if (!stream.empty() && stream.t_end == 0)
        throw ZeroExtent("non-empty stream with zero time extent");
    const double sx = stream.geometry.width > 1 ? 1.0 / (stream.geometry.width - 1) : 0.0;
    const double sy = stream.geometry.height > 1 ? 1.0 / (stream.geometry.height - 1) : 0.0;
    const double st = stream.t_end > 0 ? 1.0 / static_cast<double>(stream.t_end) : 0.0;

    std::vector<NormalizedEvent> out;
    out.reserve(stream.size());
    for (const Event& e : stream.events)
        out.push_back({e.x * sx, e.y * sy, static_cast<double>(e.t) * st});
    return out;
}

/// Inverse of the spatial part of normalize for a given axis length.
inline int denormalize_coord(double v, int extent) {
    if (extent <= 1) return 0;
    return static_cast<int>(v * (extent - 1) + 0.5);
}

/// Inverse of the temporal part of normalize.
inline Timestamp denormalize_time(double v, Timestamp t_end) {
    return static_cast<Timestamp>(v * static_cast<double>(t_end) + 0.5);
}

/// Normalized position of a pixel center in the shared coordinate frame.
inline double normalized_pixel(int i, int extent) {
    return extent > 1 ? static_cast<double>(i) / (extent - 1) : 0.0;
}

}  // namespace evsr
