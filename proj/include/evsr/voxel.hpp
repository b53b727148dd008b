#pragma once

#include "evsr/events.hpp"

#include <cstddef>
#include <vector>

namespace evsr {

/// Value coding of the voxel grid. Polarities map to two codes placed
/// symmetrically around a non-zero padding value; decode thresholds sit at
/// the midpoints. Any strictly ordered quintuple works.
struct VoxelCoding {
    double code_plus = 0.75;
    double code_minus = 0.25;
    double code_pad = 0.5;
    double thresh_plus = 0.625;
    double thresh_minus = 0.375;

    void validate() const {
        if (!(code_minus < thresh_minus && thresh_minus < code_pad &&
              code_pad < thresh_plus && thresh_plus < code_plus))
            throw Error("voxel coding values must satisfy code_minus < thresh_minus < "
                        "code_pad < thresh_plus < code_plus");
    }

    double code(int p) const { return p > 0 ? code_plus : code_minus; }

    /// +1 / -1 for polarity codes, 0 for padding.
    int classify(double v) const {
        if (v >= thresh_plus) return 1;
        if (v <= thresh_minus) return -1;
        return 0;
    }
};

/// Time-free L x H x W tensor of polarity codes. Depth index k at pixel
/// (x, y) holds the code of that pixel's (k+1)-th event; indices at and
/// above the pixel's event count hold the padding code.
///
/// Grids produced by a network hold arbitrary reals in the coding range;
/// decode() applies the thresholds either way.
struct VoxelGrid {
    std::vector<double> data;       ///< depth-major: data[(k*H + y)*W + x]
    std::size_t depth = 0;          ///< L, max per-pixel event count
    SensorGeometry geometry;
    VoxelCoding coding;
    std::vector<int> fill_counts;   ///< per pixel, row-major H*W

    double at(std::size_t k, int y, int x) const {
        return data[(k * geometry.height + y) * geometry.width + x];
    }
    double& at(std::size_t k, int y, int x) {
        return data[(k * geometry.height + y) * geometry.width + x];
    }
    bool empty() const { return depth == 0; }
};

/// Packs a stream into its voxel grid. Timestamps are discarded; only
/// order, polarity, and per-pixel counts survive. An empty stream yields a
/// 0 x H x W grid.
inline VoxelGrid encode(const EventStream& stream, VoxelCoding coding = {}) {
    coding.validate();
    const int w = stream.geometry.width;
    const int h = stream.geometry.height;

    VoxelGrid grid;
    grid.geometry = stream.geometry;
    grid.coding = coding;
    grid.fill_counts.assign(static_cast<std::size_t>(w) * h, 0);

    for (const Event& e : stream.events)
        ++grid.fill_counts[static_cast<std::size_t>(e.y) * w + e.x];
    int l_max = 0;
    for (int c : grid.fill_counts) l_max = std::max(l_max, c);
    grid.depth = static_cast<std::size_t>(l_max);

    grid.data.assign(grid.depth * w * h, coding.code_pad);
    std::vector<int> cursor(static_cast<std::size_t>(w) * h, 0);
    for (const Event& e : stream.events) {
        const std::size_t pix = static_cast<std::size_t>(e.y) * w + e.x;
        grid.at(static_cast<std::size_t>(cursor[pix]++), e.y, e.x) = coding.code(e.p);
    }
    return grid;
}

/// Per-pixel polarity sequences recovered from a grid, row-major H*W.
/// A pixel's sequence stops at its first padding voxel; entries beyond it
/// are ignored.
inline std::vector<std::vector<int>> decode(const VoxelGrid& grid) {
    const int w = grid.geometry.width;
    const int h = grid.geometry.height;
    std::vector<std::vector<int>> sequences(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            auto& seq = sequences[static_cast<std::size_t>(y) * w + x];
            for (std::size_t k = 0; k < grid.depth; ++k) {
                const int c = grid.coding.classify(grid.at(k, y, x));
                if (c == 0) break;
                seq.push_back(c);
            }
        }
    }
    return sequences;
}

/// Number of decodable events at one pixel.
inline int decoded_count(const VoxelGrid& grid, int x, int y) {
    int n = 0;
    for (std::size_t k = 0; k < grid.depth; ++k) {
        if (grid.coding.classify(grid.at(k, y, x)) == 0) break;
        ++n;
    }
    return n;
}

/// The depth fiber at one pixel, by value; length L.
inline std::vector<double> column(const VoxelGrid& grid, int x, int y) {
    if (!grid.geometry.contains(x, y))
        throw OutOfBounds("column position (" + std::to_string(x) + "," + std::to_string(y) +
                          ") outside grid");
    std::vector<double> col(grid.depth);
    for (std::size_t k = 0; k < grid.depth; ++k) col[k] = grid.at(k, y, x);
    return col;
}

}  // namespace evsr
