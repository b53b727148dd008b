#pragma once

#include "evsr/events.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

namespace evsr {

/// Spatiotemporal count histogram of a stream: B time bins x H x W x 2
/// polarity channels (channel 0 negative, channel 1 positive).
struct BinnedGrid {
    int bins = 16;
    SensorGeometry geometry;
    std::vector<double> data;  ///< [b][y][x][pol]
    bool normalized = false;

    double& at(int b, int y, int x, int pol) {
        return data[((static_cast<std::size_t>(b) * geometry.height + y) * geometry.width + x) *
                        2 +
                    pol];
    }
    double at(int b, int y, int x, int pol) const {
        return data[((static_cast<std::size_t>(b) * geometry.height + y) * geometry.width + x) *
                        2 +
                    pol];
    }
    double total() const {
        double s = 0.0;
        for (double v : data) s += v;
        return s;
    }

    /// Scales the grid by its own max count; a no-op on an empty grid.
    void normalize_by_max() {
        double mx = 0.0;
        for (double v : data) mx = std::max(mx, v);
        if (mx > 0.0)
            for (double& v : data) v /= mx;
        normalized = true;
    }
};

/// Bins a stream over [0, T]; an event at t lands in min(floor(t*B/T), B-1).
/// t_override replaces the stream's own extent when comparing streams that
/// must share a time axis.
inline BinnedGrid bin(const EventStream& stream, int bins, Timestamp t_override = 0) {
    if (bins < 1) throw BadBinCount("bin count must be >= 1");
    BinnedGrid grid;
    grid.bins = bins;
    grid.geometry = stream.geometry;
    grid.data.assign(static_cast<std::size_t>(bins) * stream.geometry.height *
                         stream.geometry.width * 2,
                     0.0);
    const Timestamp t_end = t_override ? t_override : stream.t_end;
    for (const Event& e : stream.events) {
        int b = 0;
        if (t_end > 0) {
            // integer arithmetic keeps the bin edge exact
            const unsigned long long num =
                static_cast<unsigned long long>(e.t) * static_cast<unsigned long long>(bins);
            b = static_cast<int>(num / t_end);
            if (b >= bins) b = bins - 1;
        }
        grid.at(b, e.y, e.x, e.p > 0 ? 1 : 0) += 1.0;
    }
    return grid;
}

/// RMSE between the max-normalized binned grids of two streams at equal
/// geometry; the time axis is the larger of the two extents.
inline double rmse(const EventStream& a, const EventStream& b, int bins = 16) {
    if (!(a.geometry == b.geometry))
        throw GeometryMismatch("rmse requires equal geometries, got " +
                               std::to_string(a.geometry.width) + "x" +
                               std::to_string(a.geometry.height) + " vs " +
                               std::to_string(b.geometry.width) + "x" +
                               std::to_string(b.geometry.height));
    const Timestamp t_common = std::max(a.t_end, b.t_end);
    BinnedGrid ga = bin(a, bins, t_common);
    BinnedGrid gb = bin(b, bins, t_common);
    ga.normalize_by_max();
    gb.normalize_by_max();
    double sum = 0.0;
    for (std::size_t i = 0; i < ga.data.size(); ++i) {
        const double d = ga.data[i] - gb.data[i];
        sum += d * d;
    }
    return std::sqrt(sum / static_cast<double>(ga.data.size()));
}

/// Descriptive statistics of one stream.
struct StreamStats {
    std::size_t event_count = 0;
    double events_per_second = 0.0;
    std::size_t positive_count = 0;
    std::size_t negative_count = 0;
    double polarity_ratio = 0.0;          ///< positive / negative
    std::map<int, std::size_t> count_histogram;  ///< per-pixel count -> pixels
    int max_per_pixel = 0;                ///< the voxel-grid depth L
};

inline StreamStats stats(const EventStream& stream) {
    StreamStats s;
    s.event_count = stream.size();
    if (stream.t_end > 0)
        s.events_per_second =
            static_cast<double>(stream.size()) / (static_cast<double>(stream.t_end) * 1e-6);

    std::vector<int> per_pixel(
        static_cast<std::size_t>(stream.geometry.width) * stream.geometry.height, 0);
    for (const Event& e : stream.events) {
        if (e.p > 0)
            ++s.positive_count;
        else
            ++s.negative_count;
        ++per_pixel[static_cast<std::size_t>(e.y) * stream.geometry.width + e.x];
    }
    if (s.negative_count > 0)
        s.polarity_ratio = static_cast<double>(s.positive_count) / s.negative_count;
    else if (s.positive_count > 0)
        s.polarity_ratio = std::numeric_limits<double>::infinity();

    for (int c : per_pixel) {
        ++s.count_histogram[c];
        s.max_per_pixel = std::max(s.max_per_pixel, c);
    }
    return s;
}

}  // namespace evsr
