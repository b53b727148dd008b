#pragma once

#include "evsr/tensor.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace evsr {

/// Spatial degradation kernel selector. The random kernel is a seeded
/// non-negative normalized 4x4 convolution followed by stride sampling.
struct Kernel {
    enum class Kind { bicubic, bilinear, random };
    Kind kind = Kind::bicubic;
    std::uint64_t random_seed = 0;

    static Kernel bicubic() { return {Kind::bicubic, 0}; }
    static Kernel bilinear() { return {Kind::bilinear, 0}; }
    static Kernel random(std::uint64_t seed) { return {Kind::random, seed}; }

    const char* name() const {
        switch (kind) {
            case Kind::bicubic: return "bicubic";
            case Kind::bilinear: return "bilinear";
            default: return "random";
        }
    }
};

namespace resample_detail {

/// Catmull-Rom cubic convolution weight (a = -0.5).
inline double cubic_weight(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

inline double linear_weight(double x) {
    x = std::abs(x);
    return x < 1.0 ? 1.0 - x : 0.0;
}

inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

/// Sample positions and normalized weights for one output axis under the
/// pixel-center convention: out o reads input coordinate (o + 0.5)*step - 0.5.
struct AxisTaps {
    std::vector<int> index;     // flat [out][tap]
    std::vector<double> weight; // flat [out][tap]
    int taps = 0;
};

inline AxisTaps make_axis_taps(int n_out, int n_in, double step, bool cubic) {
    AxisTaps t;
    t.taps = cubic ? 4 : 2;
    t.index.resize(static_cast<std::size_t>(n_out) * t.taps);
    t.weight.resize(static_cast<std::size_t>(n_out) * t.taps);
    for (int o = 0; o < n_out; ++o) {
        const double c = (o + 0.5) * step - 0.5;
        const int base = static_cast<int>(std::floor(c)) - (cubic ? 1 : 0);
        double wsum = 0.0;
        for (int k = 0; k < t.taps; ++k) {
            const double w = cubic ? cubic_weight(c - (base + k)) : linear_weight(c - (base + k));
            t.weight[o * t.taps + k] = w;
            wsum += w;
        }
        for (int k = 0; k < t.taps; ++k) {
            t.index[o * t.taps + k] = reflect_index(base + k, n_in);
            if (wsum != 0.0) t.weight[o * t.taps + k] /= wsum;
        }
    }
    return t;
}

/// Separable resampling of every depth slice of a [L,H,W] tensor.
inline Tensor resample_slices(const Tensor& t, int oh, int ow, bool cubic) {
    const int l = static_cast<int>(t.shape[0]);
    const int h = static_cast<int>(t.shape[1]);
    const int w = static_cast<int>(t.shape[2]);
    const AxisTaps tx = make_axis_taps(ow, w, static_cast<double>(w) / ow, cubic);
    const AxisTaps ty = make_axis_taps(oh, h, static_cast<double>(h) / oh, cubic);

    Tensor out({static_cast<std::size_t>(l), static_cast<std::size_t>(oh),
                static_cast<std::size_t>(ow)});
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);  // x-resampled slice
    for (int k = 0; k < l; ++k) {
        const double* src = t.ptr() + static_cast<std::size_t>(k) * h * w;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (int tap = 0; tap < tx.taps; ++tap)
                    acc += tx.weight[x * tx.taps + tap] *
                           src[y * w + tx.index[x * tx.taps + tap]];
                rows[static_cast<std::size_t>(y) * ow + x] = acc;
            }
        }
        double* dst = out.ptr() + static_cast<std::size_t>(k) * oh * ow;
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                double acc = 0.0;
                for (int tap = 0; tap < ty.taps; ++tap)
                    acc += ty.weight[y * ty.taps + tap] *
                           rows[static_cast<std::size_t>(ty.index[y * ty.taps + tap]) * ow + x];
                dst[y * ow + x] = acc;
            }
        }
    }
    return out;
}

inline void require_lhw(const Tensor& t, const char* where) {
    if (t.shape.size() != 3)
        throw ShapeMismatch(std::string(where) + " expects [L,H,W], got " + t.shape_str());
}

/// Reflect-pads the spatial plane so both dims are multiples of the factor.
inline Tensor reflect_pad_to_multiple(const Tensor& t, int factor) {
    const int l = static_cast<int>(t.shape[0]);
    const int h = static_cast<int>(t.shape[1]);
    const int w = static_cast<int>(t.shape[2]);
    const int nh = (h + factor - 1) / factor * factor;
    const int nw = (w + factor - 1) / factor * factor;
    if (nh == h && nw == w) return t;
    Tensor out({static_cast<std::size_t>(l), static_cast<std::size_t>(nh),
                static_cast<std::size_t>(nw)});
    for (int k = 0; k < l; ++k)
        for (int y = 0; y < nh; ++y)
            for (int x = 0; x < nw; ++x)
                out.data[(static_cast<std::size_t>(k) * nh + y) * nw + x] =
                    t.data[(static_cast<std::size_t>(k) * h + reflect_index(y, h)) * w +
                           reflect_index(x, w)];
    return out;
}

}  // namespace resample_detail

/// Downsamples every depth slice of a [L,H,W] tensor by an integer factor.
/// Spatial dims not divisible by the factor are reflect-padded up first.
/// Output values are reals; nothing is re-quantized to voxel codes.
inline Tensor downsample(const Tensor& grid, int factor, const Kernel& kernel) {
    resample_detail::require_lhw(grid, "downsample");
    if (factor < 1) throw BadFactor("downsample factor must be >= 1");
    if (factor == 1 && kernel.kind != Kernel::Kind::random) return grid;

    const Tensor padded = resample_detail::reflect_pad_to_multiple(grid, factor);
    const int l = static_cast<int>(padded.shape[0]);
    const int h = static_cast<int>(padded.shape[1]);
    const int w = static_cast<int>(padded.shape[2]);
    const int oh = h / factor;
    const int ow = w / factor;

    if (kernel.kind == Kernel::Kind::bicubic || kernel.kind == Kernel::Kind::bilinear)
        return resample_detail::resample_slices(padded, oh, ow,
                                                kernel.kind == Kernel::Kind::bicubic);

    // random kernel: seeded 4x4 non-negative convolution, unit sum per tap,
    // then stride-factor sampling at block centers
    std::mt19937_64 rng(kernel.random_seed);
    std::array<double, 16> taps{};
    double sum = 0.0;
    for (double& v : taps) {
        v = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
        sum += v;
    }
    for (double& v : taps) v /= sum;

    Tensor out({static_cast<std::size_t>(l), static_cast<std::size_t>(oh),
                static_cast<std::size_t>(ow)});
    for (int k = 0; k < l; ++k) {
        const double* src = padded.ptr() + static_cast<std::size_t>(k) * h * w;
        double* dst = out.ptr() + static_cast<std::size_t>(k) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const int cy = oy * factor + (factor - 1) / 2;
                const int cx = ox * factor + (factor - 1) / 2;
                double acc = 0.0;
                for (int ty = 0; ty < 4; ++ty)
                    for (int tx = 0; tx < 4; ++tx)
                        acc += taps[ty * 4 + tx] *
                               src[resample_detail::reflect_index(cy + ty - 1, h) * w +
                                   resample_detail::reflect_index(cx + tx - 1, w)];
                dst[oy * ow + ox] = acc;
            }
        }
    }
    return out;
}

enum class UpsampleMode { nearest, bicubic };

/// Naive spatial upsampling of a [L,H,W] tensor by an integer factor;
/// nearest replicates each pixel factor x factor, bicubic interpolates per
/// depth slice. Depth is never resampled.
inline Tensor upsample_naive(const Tensor& grid, int factor, UpsampleMode mode) {
    resample_detail::require_lhw(grid, "upsample_naive");
    if (factor < 1) throw BadFactor("upsample factor must be >= 1");
    if (factor == 1) return grid;
    const int l = static_cast<int>(grid.shape[0]);
    const int h = static_cast<int>(grid.shape[1]);
    const int w = static_cast<int>(grid.shape[2]);
    const int oh = h * factor;
    const int ow = w * factor;

    if (mode == UpsampleMode::bicubic)
        return resample_detail::resample_slices(grid, oh, ow, true);

    Tensor out({static_cast<std::size_t>(l), static_cast<std::size_t>(oh),
                static_cast<std::size_t>(ow)});
    for (int k = 0; k < l; ++k)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x)
                out.data[(static_cast<std::size_t>(k) * oh + y) * ow + x] =
                    grid.data[(static_cast<std::size_t>(k) * h + y / factor) * w + x / factor];
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation group
// ---------------------------------------------------------------------------

enum class SpatialTransform { identity, rot90, rot180, rot270, hflip, vflip };

constexpr std::array<SpatialTransform, 6> kAugmentTransforms = {
    SpatialTransform::identity, SpatialTransform::rot90,  SpatialTransform::rot180,
    SpatialTransform::rot270,   SpatialTransform::hflip,  SpatialTransform::vflip,
};

/// Applies a transform to the spatial plane of a [L,H,W] tensor; the depth
/// axis is untouched. Rotations are counter-clockwise.
inline Tensor apply_transform(const Tensor& t, SpatialTransform tr) {
    resample_detail::require_lhw(t, "apply_transform");
    const int l = static_cast<int>(t.shape[0]);
    const int h = static_cast<int>(t.shape[1]);
    const int w = static_cast<int>(t.shape[2]);
    const bool swaps = tr == SpatialTransform::rot90 || tr == SpatialTransform::rot270;
    const int oh = swaps ? w : h;
    const int ow = swaps ? h : w;
    Tensor out({static_cast<std::size_t>(l), static_cast<std::size_t>(oh),
                static_cast<std::size_t>(ow)});
    for (int k = 0; k < l; ++k) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                int oy = y, ox = x;
                switch (tr) {
                    case SpatialTransform::identity: break;
                    case SpatialTransform::rot90:   oy = w - 1 - x; ox = y; break;
                    case SpatialTransform::rot180:  oy = h - 1 - y; ox = w - 1 - x; break;
                    case SpatialTransform::rot270:  oy = x; ox = h - 1 - y; break;
                    case SpatialTransform::hflip:   ox = w - 1 - x; break;
                    case SpatialTransform::vflip:   oy = h - 1 - y; break;
                }
                out.data[(static_cast<std::size_t>(k) * oh + oy) * ow + ox] =
                    t.data[(static_cast<std::size_t>(k) * h + y) * w + x];
            }
        }
    }
    return out;
}

/// Inverse transform, for mapping results back.
inline SpatialTransform inverse_transform(SpatialTransform tr) {
    switch (tr) {
        case SpatialTransform::rot90: return SpatialTransform::rot270;
        case SpatialTransform::rot270: return SpatialTransform::rot90;
        default: return tr;  // identity, rot180 and the flips are involutions
    }
}

struct AugmentedPairSet {
    struct Pair {
        Tensor lr;
        Tensor hr;
        SpatialTransform transform;
    };
    std::vector<Pair> pairs;
};

/// The original pair plus its three rotations and two mirror reflections,
/// the identical transform applied to both members.
inline AugmentedPairSet augment(const Tensor& lr, const Tensor& hr) {
    resample_detail::require_lhw(lr, "augment");
    resample_detail::require_lhw(hr, "augment");
    AugmentedPairSet set;
    set.pairs.reserve(kAugmentTransforms.size());
    for (SpatialTransform tr : kAugmentTransforms)
        set.pairs.push_back({apply_transform(lr, tr), apply_transform(hr, tr), tr});
    return set;
}

}  // namespace evsr
