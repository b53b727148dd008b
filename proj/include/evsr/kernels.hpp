#pragma once

// Hot inner loops shared by the conv and dense layers. Every kernel sums in
// a fixed order for a given length, so results are bitwise reproducible
// across runs and thread counts of the same binary.

#include <cstddef>

#if defined(__AVX512F__)
#include <immintrin.h>
#elif defined(__AVX2__)
#include <immintrin.h>
#endif

namespace evsr::kernels {

/// acc[x] += w0*src[x] + w1*src[x+1] + w2*src[x+2] for x in [0, n)
inline void accum_tap3(double* __restrict__ acc, const double* __restrict__ src, double w0,
                       double w1, double w2, long n) {
#if defined(__AVX512F__)
    const __m512d v0 = _mm512_set1_pd(w0);
    const __m512d v1 = _mm512_set1_pd(w1);
    const __m512d v2 = _mm512_set1_pd(w2);
    long x = 0;
    for (; x + 8 <= n; x += 8) {
        __m512d a = _mm512_loadu_pd(acc + x);
        a = _mm512_fmadd_pd(v0, _mm512_loadu_pd(src + x), a);
        a = _mm512_fmadd_pd(v1, _mm512_loadu_pd(src + x + 1), a);
        a = _mm512_fmadd_pd(v2, _mm512_loadu_pd(src + x + 2), a);
        _mm512_storeu_pd(acc + x, a);
    }
    for (; x < n; ++x) acc[x] += w0 * src[x] + w1 * src[x + 1] + w2 * src[x + 2];
#elif defined(__AVX2__)
    const __m256d v0 = _mm256_set1_pd(w0);
    const __m256d v1 = _mm256_set1_pd(w1);
    const __m256d v2 = _mm256_set1_pd(w2);
    long x = 0;
    for (; x + 4 <= n; x += 4) {
        __m256d a = _mm256_loadu_pd(acc + x);
        a = _mm256_fmadd_pd(v0, _mm256_loadu_pd(src + x), a);
        a = _mm256_fmadd_pd(v1, _mm256_loadu_pd(src + x + 1), a);
        a = _mm256_fmadd_pd(v2, _mm256_loadu_pd(src + x + 2), a);
        _mm256_storeu_pd(acc + x, a);
    }
    for (; x < n; ++x) acc[x] += w0 * src[x] + w1 * src[x + 1] + w2 * src[x + 2];
#else
    for (long x = 0; x < n; ++x) acc[x] += w0 * src[x] + w1 * src[x + 1] + w2 * src[x + 2];
#endif
}

/// acc[x] += w * src[x] for x in [0, n)
inline void accum_axpy(double* __restrict__ acc, const double* __restrict__ src, double w,
                       long n) {
#if defined(__AVX512F__)
    const __m512d vw = _mm512_set1_pd(w);
    long x = 0;
    for (; x + 8 <= n; x += 8)
        _mm512_storeu_pd(acc + x, _mm512_fmadd_pd(vw, _mm512_loadu_pd(src + x),
                                                  _mm512_loadu_pd(acc + x)));
    for (; x < n; ++x) acc[x] += w * src[x];
#elif defined(__AVX2__)
    const __m256d vw = _mm256_set1_pd(w);
    long x = 0;
    for (; x + 4 <= n; x += 4)
        _mm256_storeu_pd(acc + x, _mm256_fmadd_pd(vw, _mm256_loadu_pd(src + x),
                                                  _mm256_loadu_pd(acc + x)));
    for (; x < n; ++x) acc[x] += w * src[x];
#else
    for (long x = 0; x < n; ++x) acc[x] += w * src[x];
#endif
}

/// out[dx] += sum_x g[x] * src[x + dx] for dx in {0,1,2}
inline void dot_tap3(const double* __restrict__ g, const double* __restrict__ src, long n,
                     double* __restrict__ out) {
#if defined(__AVX512F__)
    __m512d a0 = _mm512_setzero_pd();
    __m512d a1 = _mm512_setzero_pd();
    __m512d a2 = _mm512_setzero_pd();
    long x = 0;
    for (; x + 8 <= n; x += 8) {
        const __m512d gv = _mm512_loadu_pd(g + x);
        a0 = _mm512_fmadd_pd(gv, _mm512_loadu_pd(src + x), a0);
        a1 = _mm512_fmadd_pd(gv, _mm512_loadu_pd(src + x + 1), a1);
        a2 = _mm512_fmadd_pd(gv, _mm512_loadu_pd(src + x + 2), a2);
    }
    double s0 = _mm512_reduce_add_pd(a0);
    double s1 = _mm512_reduce_add_pd(a1);
    double s2 = _mm512_reduce_add_pd(a2);
    for (; x < n; ++x) {
        s0 += g[x] * src[x];
        s1 += g[x] * src[x + 1];
        s2 += g[x] * src[x + 2];
    }
    out[0] += s0;
    out[1] += s1;
    out[2] += s2;
#elif defined(__AVX2__)
    __m256d a0 = _mm256_setzero_pd();
    __m256d a1 = _mm256_setzero_pd();
    __m256d a2 = _mm256_setzero_pd();
    long x = 0;
    for (; x + 4 <= n; x += 4) {
        const __m256d gv = _mm256_loadu_pd(g + x);
        a0 = _mm256_fmadd_pd(gv, _mm256_loadu_pd(src + x), a0);
        a1 = _mm256_fmadd_pd(gv, _mm256_loadu_pd(src + x + 1), a1);
        a2 = _mm256_fmadd_pd(gv, _mm256_loadu_pd(src + x + 2), a2);
    }
    alignas(32) double t[4];
    double s0 = 0, s1 = 0, s2 = 0;
    _mm256_store_pd(t, a0);
    s0 = (t[0] + t[1]) + (t[2] + t[3]);
    _mm256_store_pd(t, a1);
    s1 = (t[0] + t[1]) + (t[2] + t[3]);
    _mm256_store_pd(t, a2);
    s2 = (t[0] + t[1]) + (t[2] + t[3]);
    for (; x < n; ++x) {
        s0 += g[x] * src[x];
        s1 += g[x] * src[x + 1];
        s2 += g[x] * src[x + 2];
    }
    out[0] += s0;
    out[1] += s1;
    out[2] += s2;
#else
    double s0 = 0, s1 = 0, s2 = 0;
    for (long x = 0; x < n; ++x) {
        s0 += g[x] * src[x];
        s1 += g[x] * src[x + 1];
        s2 += g[x] * src[x + 2];
    }
    out[0] += s0;
    out[1] += s1;
    out[2] += s2;
#endif
}

/// sum_x a[x] * b[x]
inline double dot(const double* __restrict__ a, const double* __restrict__ b, long n) {
#if defined(__AVX512F__)
    __m512d acc = _mm512_setzero_pd();
    long x = 0;
    for (; x + 8 <= n; x += 8)
        acc = _mm512_fmadd_pd(_mm512_loadu_pd(a + x), _mm512_loadu_pd(b + x), acc);
    double s = _mm512_reduce_add_pd(acc);
    for (; x < n; ++x) s += a[x] * b[x];
    return s;
#elif defined(__AVX2__)
    __m256d acc = _mm256_setzero_pd();
    long x = 0;
    for (; x + 4 <= n; x += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + x), _mm256_loadu_pd(b + x), acc);
    alignas(32) double t[4];
    _mm256_store_pd(t, acc);
    double s = (t[0] + t[1]) + (t[2] + t[3]);
    for (; x < n; ++x) s += a[x] * b[x];
    return s;
#else
    double s = 0;
    for (long x = 0; x < n; ++x) s += a[x] * b[x];
    return s;
#endif
}

#if defined(__AVX512F__)
namespace detail {

/// One x-block (NB lane groups of 8) of a 3x3x3 correlation row for one or
/// two output channels. NB is a compile-time constant so the accumulators
/// stay in registers; MASKED guards the final lane group.
template <int NB, bool TWO, bool MASKED>
inline void conv3_block512(const double* __restrict__ in_base, long cstride, long zstride,
                           long ystride, long ic, const double* __restrict__ w0,
                           const double* __restrict__ w1, double bias0, double bias1,
                           double* __restrict__ out0, double* __restrict__ out1,
                           __mmask8 mask) {
    __m512d a0[NB], a1[NB];
    for (int b = 0; b < NB; ++b) {
        a0[b] = _mm512_set1_pd(bias0);
        if constexpr (TWO) a1[b] = _mm512_set1_pd(bias1);
    }
    const double* wp0 = w0;
    const double* wp1 = w1;
    for (long ci = 0; ci < ic; ++ci) {
        const double* cbase = in_base + ci * cstride;
        for (long dz = 0; dz < 3; ++dz) {
            for (long dy = 0; dy < 3; ++dy) {
                const double* row = cbase + dz * zstride + dy * ystride;
                for (long dx = 0; dx < 3; ++dx) {
                    const __m512d b0 = _mm512_set1_pd(wp0[dx]);
                    __m512d b1;
                    if constexpr (TWO) b1 = _mm512_set1_pd(wp1[dx]);
                    for (int b = 0; b < NB; ++b) {
                        __m512d s;
                        if constexpr (MASKED) {
                            s = b == NB - 1 ? _mm512_maskz_loadu_pd(mask, row + dx + 8 * b)
                                            : _mm512_loadu_pd(row + dx + 8 * b);
                        } else {
                            s = _mm512_loadu_pd(row + dx + 8 * b);
                        }
                        a0[b] = _mm512_fmadd_pd(b0, s, a0[b]);
                        if constexpr (TWO) a1[b] = _mm512_fmadd_pd(b1, s, a1[b]);
                    }
                }
                wp0 += 3;
                if constexpr (TWO) wp1 += 3;
            }
        }
    }
    for (int b = 0; b < NB; ++b) {
        if (MASKED && b == NB - 1) {
            _mm512_mask_storeu_pd(out0 + 8 * b, mask, a0[b]);
            if constexpr (TWO) _mm512_mask_storeu_pd(out1 + 8 * b, mask, a1[b]);
        } else {
            _mm512_storeu_pd(out0 + 8 * b, a0[b]);
            if constexpr (TWO) _mm512_storeu_pd(out1 + 8 * b, a1[b]);
        }
    }
}

template <bool TWO>
inline void conv3_row512(const double* in_base, long cstride, long zstride, long ystride,
                         long ic, const double* w0, const double* w1, double bias0,
                         double bias1, double* out0, double* out1, long n) {
    long x = 0;
    for (; x + 32 <= n; x += 32)
        conv3_block512<4, TWO, false>(in_base + x, cstride, zstride, ystride, ic, w0, w1,
                                      bias0, bias1, out0 + x, TWO ? out1 + x : nullptr,
                                      0xff);
    const long rem = n - x;
    if (rem == 0) return;
    const int nb = static_cast<int>((rem + 7) / 8);
    const long tail = rem - (nb - 1) * 8;
    const __mmask8 mask = static_cast<__mmask8>((1u << tail) - 1u);
    const bool full = tail == 8;
    const double* ib = in_base + x;
    double* o0 = out0 + x;
    double* o1 = TWO ? out1 + x : nullptr;
    switch (nb) {
        case 1:
            full ? conv3_block512<1, TWO, false>(ib, cstride, zstride, ystride, ic, w0, w1,
                                                 bias0, bias1, o0, o1, 0xff)
                 : conv3_block512<1, TWO, true>(ib, cstride, zstride, ystride, ic, w0, w1,
                                                bias0, bias1, o0, o1, mask);
            break;
        case 2:
            full ? conv3_block512<2, TWO, false>(ib, cstride, zstride, ystride, ic, w0, w1,
                                                 bias0, bias1, o0, o1, 0xff)
                 : conv3_block512<2, TWO, true>(ib, cstride, zstride, ystride, ic, w0, w1,
                                                bias0, bias1, o0, o1, mask);
            break;
        case 3:
            full ? conv3_block512<3, TWO, false>(ib, cstride, zstride, ystride, ic, w0, w1,
                                                 bias0, bias1, o0, o1, 0xff)
                 : conv3_block512<3, TWO, true>(ib, cstride, zstride, ystride, ic, w0, w1,
                                                bias0, bias1, o0, o1, mask);
            break;
        default:
            full ? conv3_block512<4, TWO, false>(ib, cstride, zstride, ystride, ic, w0, w1,
                                                 bias0, bias1, o0, o1, 0xff)
                 : conv3_block512<4, TWO, true>(ib, cstride, zstride, ystride, ic, w0, w1,
                                                bias0, bias1, o0, o1, mask);
            break;
    }
}

}  // namespace detail
#endif  // __AVX512F__

/// One output row of a 3x3x3 correlation over a zero-padded volume, for one
/// or two output channels at once. `in_base` points at the padded row that
/// tap (0,0,0) reads; weights are laid out [ci][dz][dy][dx] per channel.
/// Accumulating two channels per pass halves the source-row loads, which is
/// what the FMA ports otherwise starve on.
inline void conv3_row(const double* __restrict__ in_base, long cstride, long zstride,
                      long ystride, long ic, const double* __restrict__ w0,
                      const double* __restrict__ w1, double bias0, double bias1,
                      double* __restrict__ out0, double* __restrict__ out1, long n) {
#if defined(__AVX512F__)
    if (w1)
        detail::conv3_row512<true>(in_base, cstride, zstride, ystride, ic, w0, w1, bias0,
                                   bias1, out0, out1, n);
    else
        detail::conv3_row512<false>(in_base, cstride, zstride, ystride, ic, w0, nullptr,
                                    bias0, 0.0, out0, nullptr, n);
#else
    for (long x = 0; x < n; ++x) {
        out0[x] = bias0;
        if (w1) out1[x] = bias1;
    }
    const double* wp0 = w0;
    const double* wp1 = w1;
    for (long ci = 0; ci < ic; ++ci) {
        const double* cbase = in_base + ci * cstride;
        for (long dz = 0; dz < 3; ++dz) {
            for (long dy = 0; dy < 3; ++dy) {
                const double* row = cbase + dz * zstride + dy * ystride;
                accum_tap3(out0, row, wp0[0], wp0[1], wp0[2], n);
                if (w1) accum_tap3(out1, row, wp1[0], wp1[1], wp1[2], n);
                wp0 += 3;
                if (w1) wp1 += 3;
            }
        }
    }
#endif
}

/// out[dx] += sum over an (nz x ny x nx) volume of g * in(+dx), dx in {0,1,2},
/// with independent row strides for the two operands. One horizontal
/// reduction per call instead of per row.
inline void dot_tap3_vol(const double* __restrict__ g, long gzs, long gys,
                         const double* __restrict__ in0, long izs, long iys, long nz, long ny,
                         long nx, double* __restrict__ out) {
#if defined(__AVX512F__)
    __m512d a0 = _mm512_setzero_pd();
    __m512d a1 = _mm512_setzero_pd();
    __m512d a2 = _mm512_setzero_pd();
    const long full = nx & ~7L;
    const __mmask8 mask = static_cast<__mmask8>((1u << (nx - full)) - 1u);
    for (long z = 0; z < nz; ++z) {
        for (long y = 0; y < ny; ++y) {
            const double* grow = g + z * gzs + y * gys;
            const double* irow = in0 + z * izs + y * iys;
            long x = 0;
            for (; x + 8 <= nx; x += 8) {
                const __m512d gv = _mm512_loadu_pd(grow + x);
                a0 = _mm512_fmadd_pd(gv, _mm512_loadu_pd(irow + x), a0);
                a1 = _mm512_fmadd_pd(gv, _mm512_loadu_pd(irow + x + 1), a1);
                a2 = _mm512_fmadd_pd(gv, _mm512_loadu_pd(irow + x + 2), a2);
            }
            if (x < nx) {
                const __m512d gv = _mm512_maskz_loadu_pd(mask, grow + x);
                a0 = _mm512_fmadd_pd(gv, _mm512_maskz_loadu_pd(mask, irow + x), a0);
                a1 = _mm512_fmadd_pd(gv, _mm512_maskz_loadu_pd(mask, irow + x + 1), a1);
                a2 = _mm512_fmadd_pd(gv, _mm512_maskz_loadu_pd(mask, irow + x + 2), a2);
            }
        }
    }
    out[0] += _mm512_reduce_add_pd(a0);
    out[1] += _mm512_reduce_add_pd(a1);
    out[2] += _mm512_reduce_add_pd(a2);
#else
    for (long z = 0; z < nz; ++z)
        for (long y = 0; y < ny; ++y)
            dot_tap3(g + z * gzs + y * gys, in0 + z * izs + y * iys, nx, out);
#endif
}

/// Like dot_tap3_vol but for two gradient planes sharing one source volume;
/// out has 6 entries (g0 taps then g1 taps).
inline void dot_tap3_vol2(const double* __restrict__ g0, const double* __restrict__ g1,
                          long gzs, long gys, const double* __restrict__ in0, long izs,
                          long iys, long nz, long ny, long nx, double* __restrict__ out) {
#if defined(__AVX512F__)
    __m512d a00 = _mm512_setzero_pd(), a01 = _mm512_setzero_pd(), a02 = _mm512_setzero_pd();
    __m512d a10 = _mm512_setzero_pd(), a11 = _mm512_setzero_pd(), a12 = _mm512_setzero_pd();
    const long full = nx & ~7L;
    const __mmask8 mask = static_cast<__mmask8>((1u << (nx - full)) - 1u);
    for (long z = 0; z < nz; ++z) {
        for (long y = 0; y < ny; ++y) {
            const double* g0row = g0 + z * gzs + y * gys;
            const double* g1row = g1 + z * gzs + y * gys;
            const double* irow = in0 + z * izs + y * iys;
            long x = 0;
            for (; x + 8 <= nx; x += 8) {
                const __m512d s0 = _mm512_loadu_pd(irow + x);
                const __m512d s1 = _mm512_loadu_pd(irow + x + 1);
                const __m512d s2 = _mm512_loadu_pd(irow + x + 2);
                const __m512d gv0 = _mm512_loadu_pd(g0row + x);
                a00 = _mm512_fmadd_pd(gv0, s0, a00);
                a01 = _mm512_fmadd_pd(gv0, s1, a01);
                a02 = _mm512_fmadd_pd(gv0, s2, a02);
                const __m512d gv1 = _mm512_loadu_pd(g1row + x);
                a10 = _mm512_fmadd_pd(gv1, s0, a10);
                a11 = _mm512_fmadd_pd(gv1, s1, a11);
                a12 = _mm512_fmadd_pd(gv1, s2, a12);
            }
            if (x < nx) {
                const __m512d s0 = _mm512_maskz_loadu_pd(mask, irow + x);
                const __m512d s1 = _mm512_maskz_loadu_pd(mask, irow + x + 1);
                const __m512d s2 = _mm512_maskz_loadu_pd(mask, irow + x + 2);
                const __m512d gv0 = _mm512_maskz_loadu_pd(mask, g0row + x);
                a00 = _mm512_fmadd_pd(gv0, s0, a00);
                a01 = _mm512_fmadd_pd(gv0, s1, a01);
                a02 = _mm512_fmadd_pd(gv0, s2, a02);
                const __m512d gv1 = _mm512_maskz_loadu_pd(mask, g1row + x);
                a10 = _mm512_fmadd_pd(gv1, s0, a10);
                a11 = _mm512_fmadd_pd(gv1, s1, a11);
                a12 = _mm512_fmadd_pd(gv1, s2, a12);
            }
        }
    }
    out[0] += _mm512_reduce_add_pd(a00);
    out[1] += _mm512_reduce_add_pd(a01);
    out[2] += _mm512_reduce_add_pd(a02);
    out[3] += _mm512_reduce_add_pd(a10);
    out[4] += _mm512_reduce_add_pd(a11);
    out[5] += _mm512_reduce_add_pd(a12);
#else
    dot_tap3_vol(g0, gzs, gys, in0, izs, iys, nz, ny, nx, out);
    dot_tap3_vol(g1, gzs, gys, in0, izs, iys, nz, ny, nx, out + 3);
#endif
}

#if defined(__AVX512F__)
namespace detail {

template <int NB, bool MASKED>
inline void awr_block512(double* __restrict__ acc, const double* __restrict__ base,
                         long stride, const double* __restrict__ sbase, long sstride,
                         long k_count, __mmask8 mask) {
    __m512d a[NB];
    for (int b = 0; b < NB; ++b) {
        if (MASKED && b == NB - 1)
            a[b] = _mm512_maskz_loadu_pd(mask, acc + 8 * b);
        else
            a[b] = _mm512_loadu_pd(acc + 8 * b);
    }
    for (long k = 0; k < k_count; ++k) {
        const __m512d s = _mm512_set1_pd(sbase[k * sstride]);
        const double* row = base + k * stride;
        for (int b = 0; b < NB; ++b) {
            __m512d r;
            if (MASKED && b == NB - 1)
                r = _mm512_maskz_loadu_pd(mask, row + 8 * b);
            else
                r = _mm512_loadu_pd(row + 8 * b);
            a[b] = _mm512_fmadd_pd(s, r, a[b]);
        }
    }
    for (int b = 0; b < NB; ++b) {
        if (MASKED && b == NB - 1)
            _mm512_mask_storeu_pd(acc + 8 * b, mask, a[b]);
        else
            _mm512_storeu_pd(acc + 8 * b, a[b]);
    }
}

}  // namespace detail
#endif

#if defined(__AVX512F__)
namespace detail {

template <int NB, bool MASKED>
inline void awr2_block512(double* __restrict__ acc0, double* __restrict__ acc1,
                          const double* __restrict__ base, long stride,
                          const double* __restrict__ s0base, const double* __restrict__ s1base,
                          long sstride, long k_count, __mmask8 mask) {
    __m512d a0[NB], a1[NB];
    for (int b = 0; b < NB; ++b) {
        if (MASKED && b == NB - 1) {
            a0[b] = _mm512_maskz_loadu_pd(mask, acc0 + 8 * b);
            a1[b] = _mm512_maskz_loadu_pd(mask, acc1 + 8 * b);
        } else {
            a0[b] = _mm512_loadu_pd(acc0 + 8 * b);
            a1[b] = _mm512_loadu_pd(acc1 + 8 * b);
        }
    }
    for (long k = 0; k < k_count; ++k) {
        const __m512d s0 = _mm512_set1_pd(s0base[k * sstride]);
        const __m512d s1 = _mm512_set1_pd(s1base[k * sstride]);
        const double* row = base + k * stride;
        for (int b = 0; b < NB; ++b) {
            __m512d r;
            if (MASKED && b == NB - 1)
                r = _mm512_maskz_loadu_pd(mask, row + 8 * b);
            else
                r = _mm512_loadu_pd(row + 8 * b);
            a0[b] = _mm512_fmadd_pd(s0, r, a0[b]);
            a1[b] = _mm512_fmadd_pd(s1, r, a1[b]);
        }
    }
    for (int b = 0; b < NB; ++b) {
        if (MASKED && b == NB - 1) {
            _mm512_mask_storeu_pd(acc0 + 8 * b, mask, a0[b]);
            _mm512_mask_storeu_pd(acc1 + 8 * b, mask, a1[b]);
        } else {
            _mm512_storeu_pd(acc0 + 8 * b, a0[b]);
            _mm512_storeu_pd(acc1 + 8 * b, a1[b]);
        }
    }
}

}  // namespace detail
#endif

/// Two accumulator rows sharing every base-row load:
/// acc0[x] += sum_k s0base[k*sstride] * base[k*stride + x], acc1 likewise.
inline void accum_weighted_rows2(double* __restrict__ acc0, double* __restrict__ acc1, long n,
                                 const double* __restrict__ base, long stride,
                                 const double* __restrict__ s0base,
                                 const double* __restrict__ s1base, long sstride,
                                 long k_count) {
#if defined(__AVX512F__)
    long x = 0;
    for (; x + 32 <= n; x += 32)
        detail::awr2_block512<4, false>(acc0 + x, acc1 + x, base + x, stride, s0base, s1base,
                                        sstride, k_count, 0xff);
    const long rem = n - x;
    if (rem == 0) return;
    const int nb = static_cast<int>((rem + 7) / 8);
    const long tail = rem - (nb - 1) * 8;
    const __mmask8 mask = static_cast<__mmask8>((1u << tail) - 1u);
    const bool full = tail == 8;
    double* a0 = acc0 + x;
    double* a1 = acc1 + x;
    const double* bs = base + x;
    switch (nb) {
        case 1: full ? detail::awr2_block512<1, false>(a0, a1, bs, stride, s0base, s1base, sstride, k_count, 0xff)
                     : detail::awr2_block512<1, true>(a0, a1, bs, stride, s0base, s1base, sstride, k_count, mask);
            break;
        case 2: full ? detail::awr2_block512<2, false>(a0, a1, bs, stride, s0base, s1base, sstride, k_count, 0xff)
                     : detail::awr2_block512<2, true>(a0, a1, bs, stride, s0base, s1base, sstride, k_count, mask);
            break;
        case 3: full ? detail::awr2_block512<3, false>(a0, a1, bs, stride, s0base, s1base, sstride, k_count, 0xff)
                     : detail::awr2_block512<3, true>(a0, a1, bs, stride, s0base, s1base, sstride, k_count, mask);
            break;
        default: full ? detail::awr2_block512<4, false>(a0, a1, bs, stride, s0base, s1base, sstride, k_count, 0xff)
                      : detail::awr2_block512<4, true>(a0, a1, bs, stride, s0base, s1base, sstride, k_count, mask);
            break;
    }
#else
    accum_weighted_rows(acc0, n, base, stride, s0base, sstride, k_count);
    accum_weighted_rows(acc1, n, base, stride, s1base, sstride, k_count);
#endif
}

/// acc[x] += sum_k sbase[k*sstride] * base[k*stride + x] for x in [0, n).
/// The accumulator chunk stays in registers across the whole k loop, which
/// is what batched dense layers need to stop thrashing the store port.
inline void accum_weighted_rows(double* __restrict__ acc, long n,
                                const double* __restrict__ base, long stride,
                                const double* __restrict__ sbase, long sstride, long k_count) {
#if defined(__AVX512F__)
    long x = 0;
    for (; x + 64 <= n; x += 64)
        detail::awr_block512<8, false>(acc + x, base + x, stride, sbase, sstride, k_count, 0xff);
    const long rem = n - x;
    if (rem == 0) return;
    const int nb = static_cast<int>((rem + 7) / 8);
    const long tail = rem - (nb - 1) * 8;
    const __mmask8 mask = static_cast<__mmask8>((1u << tail) - 1u);
    const bool full = tail == 8;
    double* ac = acc + x;
    const double* bs = base + x;
    switch (nb) {
        case 1: full ? detail::awr_block512<1, false>(ac, bs, stride, sbase, sstride, k_count, 0xff)
                     : detail::awr_block512<1, true>(ac, bs, stride, sbase, sstride, k_count, mask);
            break;
        case 2: full ? detail::awr_block512<2, false>(ac, bs, stride, sbase, sstride, k_count, 0xff)
                     : detail::awr_block512<2, true>(ac, bs, stride, sbase, sstride, k_count, mask);
            break;
        case 3: full ? detail::awr_block512<3, false>(ac, bs, stride, sbase, sstride, k_count, 0xff)
                     : detail::awr_block512<3, true>(ac, bs, stride, sbase, sstride, k_count, mask);
            break;
        case 4: full ? detail::awr_block512<4, false>(ac, bs, stride, sbase, sstride, k_count, 0xff)
                     : detail::awr_block512<4, true>(ac, bs, stride, sbase, sstride, k_count, mask);
            break;
        case 5: full ? detail::awr_block512<5, false>(ac, bs, stride, sbase, sstride, k_count, 0xff)
                     : detail::awr_block512<5, true>(ac, bs, stride, sbase, sstride, k_count, mask);
            break;
        case 6: full ? detail::awr_block512<6, false>(ac, bs, stride, sbase, sstride, k_count, 0xff)
                     : detail::awr_block512<6, true>(ac, bs, stride, sbase, sstride, k_count, mask);
            break;
        case 7: full ? detail::awr_block512<7, false>(ac, bs, stride, sbase, sstride, k_count, 0xff)
                     : detail::awr_block512<7, true>(ac, bs, stride, sbase, sstride, k_count, mask);
            break;
        default: full ? detail::awr_block512<8, false>(ac, bs, stride, sbase, sstride, k_count, 0xff)
                      : detail::awr_block512<8, true>(ac, bs, stride, sbase, sstride, k_count, mask);
            break;
    }
#else
    for (long k = 0; k < k_count; ++k) accum_axpy(acc, base + k * stride, sbase[k * sstride], n);
#endif
}

/// sum_x a[x]
inline double sum(const double* __restrict__ a, long n) {
#if defined(__AVX512F__)
    __m512d acc = _mm512_setzero_pd();
    long x = 0;
    for (; x + 8 <= n; x += 8) acc = _mm512_add_pd(acc, _mm512_loadu_pd(a + x));
    double s = _mm512_reduce_add_pd(acc);
    for (; x < n; ++x) s += a[x];
    return s;
#else
    double s = 0;
    for (long x = 0; x < n; ++x) s += a[x];
    return s;
#endif
}

}  // namespace evsr::kernels
