#pragma once

#include "evsr/kernels.hpp"
#include "evsr/tensor.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <utility>

namespace evsr::nn {

// ---------------------------------------------------------------------------
// Layer specs
// ---------------------------------------------------------------------------

struct LayerSpec {
    enum class Kind : std::uint8_t {
        conv3d = 0,
        dense = 1,
        relu = 2,
        leaky_relu = 3,
        residual_save = 4,
        residual_add = 5,
    };

    Kind kind = Kind::relu;
    int in_ch = 0, out_ch = 0, kernel = 3, padding = 1;  // conv3d
    int in_dim = 0, out_dim = 0;                         // dense
    double slope = 0.01;                                 // leaky_relu
    int slot = 0;                                        // residual markers

    static LayerSpec conv3d(int in_ch, int out_ch, int kernel = 3, int padding = 1) {
        LayerSpec s;
        s.kind = Kind::conv3d;
        s.in_ch = in_ch;
        s.out_ch = out_ch;
        s.kernel = kernel;
        s.padding = padding;
        return s;
    }
    static LayerSpec dense(int in_dim, int out_dim) {
        LayerSpec s;
        s.kind = Kind::dense;
        s.in_dim = in_dim;
        s.out_dim = out_dim;
        return s;
    }
    static LayerSpec relu() {
        LayerSpec s;
        s.kind = Kind::relu;
        return s;
    }
    static LayerSpec leaky_relu(double slope) {
        LayerSpec s;
        s.kind = Kind::leaky_relu;
        s.slope = slope;
        return s;
    }
    static LayerSpec residual_save(int slot) {
        LayerSpec s;
        s.kind = Kind::residual_save;
        s.slot = slot;
        return s;
    }
    static LayerSpec residual_add(int slot) {
        LayerSpec s;
        s.kind = Kind::residual_add;
        s.slot = slot;
        return s;
    }

    std::size_t parameter_count() const {
        switch (kind) {
            case Kind::conv3d:
                return static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel * kernel +
                       static_cast<std::size_t>(out_ch);
            case Kind::dense:
                return static_cast<std::size_t>(out_dim) * in_dim +
                       static_cast<std::size_t>(out_dim);
            default:
                return 0;
        }
    }
};

/// Ordered layer list plus an optional additive skip from the network input
/// to its output (the network then predicts a residual).
struct NetworkSpec {
    std::vector<LayerSpec> layers;
    bool input_skip = false;

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.parameter_count();
        return n;
    }
};

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

namespace detail {

/// Portable uniform double in [0, 1) built from the top 53 bits, so seeded
/// initialization is identical across standard libraries.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
}

inline double he_uniform(std::mt19937_64& rng, double fan_in) {
    const double limit = std::sqrt(6.0 / fan_in);
    return (2.0 * uniform01(rng) - 1.0) * limit;
}

}  // namespace detail

/// Storage for activations captured by residual_save markers.
struct SkipStore {
    std::vector<Tensor> saved;
    std::vector<Tensor> grads;

    void ensure(int slot) {
        if (slot < 0) throw Error("residual slot must be non-negative");
        if (static_cast<std::size_t>(slot) >= saved.size()) {
            saved.resize(slot + 1);
            grads.resize(slot + 1);
        }
    }
};

class Layer {
public:
    virtual ~Layer() = default;

    /// Runs the layer, caching whatever backward() needs.
    virtual Tensor forward(const Tensor& in) = 0;

    /// Consumes the gradient w.r.t. the output, accumulates parameter
    /// gradients, and returns the gradient w.r.t. the input. Callers that
    /// do not need the input gradient (the first layer of a training loop)
    /// pass need_input_grad = false and get an empty tensor back.
    virtual Tensor backward(const Tensor& grad_out, bool need_input_grad = true) = 0;

    virtual std::vector<Tensor*> parameters() { return {}; }
    virtual std::vector<Tensor*> gradients() { return {}; }
    virtual LayerSpec spec() const = 0;

protected:
    void require_trace() const {
        if (!has_trace_) throw NoTrace("backward called before forward");
    }
    bool has_trace_ = false;
};

/// 3D convolution, stride 1, zero padding, on [C, D, H, W] tensors.
class Conv3dLayer final : public Layer {
public:
    Conv3dLayer(int in_ch, int out_ch, int kernel, int padding, std::mt19937_64& rng)
        : ic_(in_ch), oc_(out_ch), k_(kernel), pad_(padding) {
        if (in_ch < 1 || out_ch < 1 || kernel < 1 || padding < 0 || padding > kernel - 1)
            throw Error("bad conv3d geometry");
        const std::size_t kk = static_cast<std::size_t>(k_) * k_ * k_;
        w_ = Tensor({static_cast<std::size_t>(oc_), static_cast<std::size_t>(ic_),
                     static_cast<std::size_t>(k_), static_cast<std::size_t>(k_),
                     static_cast<std::size_t>(k_)});
        b_ = Tensor({static_cast<std::size_t>(oc_)});
        const double fan_in = static_cast<double>(ic_) * static_cast<double>(kk);
        for (double& v : w_.data) v = detail::he_uniform(rng, fan_in);
        gw_ = Tensor(w_.shape);
        gb_ = Tensor(b_.shape);
    }

    Tensor forward(const Tensor& in) override {
        if (in.shape.size() != 4)
            throw ShapeMismatch("conv3d expects [C,D,H,W], got " + in.shape_str());
        if (in.shape[0] != static_cast<std::size_t>(ic_))
            throw ShapeMismatch("conv3d expects " + std::to_string(ic_) + " channels, got " +
                                in.shape_str());
        in_shape_ = in.shape;
        const long d = static_cast<long>(in.shape[1]);
        const long h = static_cast<long>(in.shape[2]);
        const long w = static_cast<long>(in.shape[3]);
        od_ = d + 2 * pad_ - k_ + 1;
        oh_ = h + 2 * pad_ - k_ + 1;
        ow_ = w + 2 * pad_ - k_ + 1;
        if (od_ < 1 || oh_ < 1 || ow_ < 1)
            throw ShapeMismatch("conv3d input " + in.shape_str() + " too small for kernel " +
                                std::to_string(k_));

        pad_volume(in, pad_, pin_, pd_, ph_, pw_);
        has_trace_ = true;

        Tensor out({static_cast<std::size_t>(oc_), static_cast<std::size_t>(od_),
                    static_cast<std::size_t>(oh_), static_cast<std::size_t>(ow_)});
        const double* pin = pin_.data();
        const long k = k_, ic = ic_, od = od_, oh = oh_, ow = ow_, pd = pd_, ph = ph_,
                   pw = pw_;
        if (k == 3) {
            const long cstride = pd * ph * pw;
            const std::size_t pairs = static_cast<std::size_t>((oc_ + 1) / 2);
            parallel_for(pairs, [&](std::size_t pi) {
                const long oc0 = static_cast<long>(2 * pi);
                const long oc1 = oc0 + 1 < oc_ ? oc0 + 1 : -1;
                const double* w0 = w_.ptr() + oc0 * ic * 27;
                const double* w1 = oc1 >= 0 ? w_.ptr() + oc1 * ic * 27 : nullptr;
                for (long z = 0; z < od; ++z) {
                    for (long y = 0; y < oh; ++y) {
                        kernels::conv3_row(
                            pin + (z * ph + y) * pw, cstride, ph * pw, pw, ic, w0, w1,
                            b_.data[oc0], oc1 >= 0 ? b_.data[oc1] : 0.0,
                            out.ptr() + ((oc0 * od + z) * oh + y) * ow,
                            oc1 >= 0 ? out.ptr() + ((oc1 * od + z) * oh + y) * ow : nullptr,
                            ow);
                    }
                }
            });
            return out;
        }
        parallel_for(static_cast<std::size_t>(oc_), [&](std::size_t oc) {
            const double bias = b_.data[oc];
            std::vector<double> acc(static_cast<std::size_t>(ow));
            for (long z = 0; z < od; ++z) {
                for (long y = 0; y < oh; ++y) {
                    for (long x = 0; x < ow; ++x) acc[x] = bias;
                    for (long ci = 0; ci < ic; ++ci) {
                        const double* wch = w_.ptr() + (oc * ic + ci) * k * k * k;
                        for (long dz = 0; dz < k; ++dz) {
                            for (long dy = 0; dy < k; ++dy) {
                                const double* irow =
                                    pin + ((ci * pd + z + dz) * ph + y + dy) * pw;
                                const double* wrow = wch + (dz * k + dy) * k;
                                for (long dx = 0; dx < k; ++dx)
                                    kernels::accum_axpy(acc.data(), irow + dx, wrow[dx], ow);
                            }
                        }
                    }
                    std::memcpy(out.ptr() + ((oc * od + z) * oh + y) * ow, acc.data(),
                                static_cast<std::size_t>(ow) * sizeof(double));
                }
            }
        });
        return out;
    }

    Tensor backward(const Tensor& gout, bool need_input_grad = true) override {
        require_trace();
        if (gout.shape != std::vector<std::size_t>{static_cast<std::size_t>(oc_),
                                                   static_cast<std::size_t>(od_),
                                                   static_cast<std::size_t>(oh_),
                                                   static_cast<std::size_t>(ow_)})
            throw ShapeMismatch("conv3d backward got " + gout.shape_str());

        const double* pin = pin_.data();
        const long k = k_, ic = ic_, od = od_, oh = oh_, ow = ow_, pd = pd_, ph = ph_,
                   pw = pw_;
        // bias and weight gradients, one output-channel pair per worker
        const std::size_t gw_pairs = static_cast<std::size_t>((oc_ + 1) / 2);
        parallel_for(gw_pairs, [&](std::size_t pi) {
            const long oc0 = static_cast<long>(2 * pi);
            const long oc1 = oc0 + 1 < oc_ ? oc0 + 1 : -1;
            const double* gch0 = gout.ptr() + oc0 * od * oh * ow;
            const double* gch1 = oc1 >= 0 ? gout.ptr() + oc1 * od * oh * ow : nullptr;
            gb_.data[oc0] += kernels::sum(gch0, od * oh * ow);
            if (oc1 >= 0) gb_.data[oc1] += kernels::sum(gch1, od * oh * ow);

            for (long ci = 0; ci < ic; ++ci) {
                double* gwch0 = gw_.ptr() + (oc0 * ic + ci) * k * k * k;
                double* gwch1 = oc1 >= 0 ? gw_.ptr() + (oc1 * ic + ci) * k * k * k : nullptr;
                for (long dz = 0; dz < k; ++dz) {
                    for (long dy = 0; dy < k; ++dy) {
                        if (k == 3) {
                            const double* ibase = pin + ((ci * pd + dz) * ph + dy) * pw;
                            if (oc1 >= 0) {
                                double acc6[6] = {0, 0, 0, 0, 0, 0};
                                kernels::dot_tap3_vol2(gch0, gch1, oh * ow, ow, ibase, ph * pw,
                                                       pw, od, oh, ow, acc6);
                                for (int dx = 0; dx < 3; ++dx) {
                                    gwch0[(dz * 3 + dy) * 3 + dx] += acc6[dx];
                                    gwch1[(dz * 3 + dy) * 3 + dx] += acc6[3 + dx];
                                }
                            } else {
                                double acc3[3] = {0, 0, 0};
                                kernels::dot_tap3_vol(gch0, oh * ow, ow, ibase, ph * pw, pw,
                                                      od, oh, ow, acc3);
                                for (int dx = 0; dx < 3; ++dx)
                                    gwch0[(dz * 3 + dy) * 3 + dx] += acc3[dx];
                            }
                        } else {
                            for (long sel = 0; sel < (oc1 >= 0 ? 2 : 1); ++sel) {
                                const double* gch = sel ? gch1 : gch0;
                                double* gwch = sel ? gwch1 : gwch0;
                                for (long dx = 0; dx < k; ++dx) {
                                    double acc = 0.0;
                                    for (long z = 0; z < od; ++z) {
                                        for (long y = 0; y < oh; ++y) {
                                            const double* grow = gch + (z * oh + y) * ow;
                                            const double* irow =
                                                pin + ((ci * pd + z + dz) * ph + y + dy) * pw +
                                                dx;
                                            acc += kernels::dot(grow, irow, ow);
                                        }
                                    }
                                    gwch[(dz * k + dy) * k + dx] += acc;
                                }
                            }
                        }
                    }
                }
            }
        });

        if (!need_input_grad) return Tensor();

        // input gradient: full correlation of gout with the flipped kernel
        const long q = k_ - 1 - pad_;
        long gd, gh, gw;
        pad_volume(gout, q, pgout_, gd, gh, gw);

        const long d = static_cast<long>(in_shape_[1]);
        const long h = static_cast<long>(in_shape_[2]);
        const long w = static_cast<long>(in_shape_[3]);
        Tensor gin(in_shape_);
        const double* pg = pgout_.data();
        const long kk = k_, oc_n = oc_, ic_n = ic_;
        if (kk == 3) {
            // repack flipped weights as [ci][oc][dz][dy][dx] so the forward
            // row kernel also serves the transposed pass
            wflip_.assign(w_.size(), 0.0);
            for (long oc = 0; oc < oc_n; ++oc)
                for (long ci = 0; ci < ic_n; ++ci)
                    for (long t = 0; t < 27; ++t)
                        wflip_[(ci * oc_n + oc) * 27 + t] =
                            w_.data[(oc * ic_n + ci) * 27 + 26 - t];

            const long cstride = gd * gh * gw;
            const std::size_t pairs = static_cast<std::size_t>((ic_n + 1) / 2);
            parallel_for(pairs, [&](std::size_t pi) {
                const long ci0 = static_cast<long>(2 * pi);
                const long ci1 = ci0 + 1 < ic_n ? ci0 + 1 : -1;
                const double* w0 = wflip_.data() + ci0 * oc_n * 27;
                const double* w1 = ci1 >= 0 ? wflip_.data() + ci1 * oc_n * 27 : nullptr;
                for (long z = 0; z < d; ++z) {
                    for (long y = 0; y < h; ++y) {
                        kernels::conv3_row(
                            pg + (z * gh + y) * gw, cstride, gh * gw, gw, oc_n, w0, w1, 0.0,
                            0.0, gin.ptr() + ((ci0 * d + z) * h + y) * w,
                            ci1 >= 0 ? gin.ptr() + ((ci1 * d + z) * h + y) * w : nullptr, w);
                    }
                }
            });
            return gin;
        }
        parallel_for(static_cast<std::size_t>(ic_), [&](std::size_t ci) {
            std::vector<double> acc(static_cast<std::size_t>(w));
            for (long z = 0; z < d; ++z) {
                for (long y = 0; y < h; ++y) {
                    std::fill(acc.begin(), acc.end(), 0.0);
                    for (long oc = 0; oc < oc_n; ++oc) {
                        const double* wch = w_.ptr() + (oc * ic_n + ci) * kk * kk * kk;
                        for (long dz = 0; dz < kk; ++dz) {
                            for (long dy = 0; dy < kk; ++dy) {
                                const double* srow =
                                    pg + ((oc * gd + z + dz) * gh + y + dy) * gw;
                                const double* wrow =
                                    wch + ((kk - 1 - dz) * kk + (kk - 1 - dy)) * kk;
                                for (long dx = 0; dx < kk; ++dx)
                                    kernels::accum_axpy(acc.data(), srow + dx,
                                                        wrow[kk - 1 - dx], w);
                            }
                        }
                    }
                    std::memcpy(gin.ptr() + ((ci * d + z) * h + y) * w, acc.data(),
                                static_cast<std::size_t>(w) * sizeof(double));
                }
            }
        });
        return gin;
    }

    std::vector<Tensor*> parameters() override { return {&w_, &b_}; }
    std::vector<Tensor*> gradients() override { return {&gw_, &gb_}; }
    LayerSpec spec() const override { return LayerSpec::conv3d(ic_, oc_, k_, pad_); }

private:
    // Copies a [C,*,*,*] volume into a zero-padded buffer, border `p` wide.
    static void pad_volume(const Tensor& t, long p, std::vector<double>& out, long& pd,
                           long& ph, long& pw) {
        const long c = static_cast<long>(t.shape[0]);
        const long d = static_cast<long>(t.shape[1]);
        const long h = static_cast<long>(t.shape[2]);
        const long w = static_cast<long>(t.shape[3]);
        pd = d + 2 * p;
        ph = h + 2 * p;
        pw = w + 2 * p;
        out.assign(static_cast<std::size_t>(c) * pd * ph * pw, 0.0);
        for (long ci = 0; ci < c; ++ci)
            for (long z = 0; z < d; ++z)
                for (long y = 0; y < h; ++y)
                    std::memcpy(out.data() + ((ci * pd + z + p) * ph + y + p) * pw + p,
                                t.ptr() + ((ci * d + z) * h + y) * w,
                                static_cast<std::size_t>(w) * sizeof(double));
    }

    int ic_, oc_, k_, pad_;
    Tensor w_, b_, gw_, gb_;

    std::vector<std::size_t> in_shape_;
    std::vector<double> pin_;
    std::vector<double> pgout_;
    std::vector<double> wflip_;
    long pd_ = 0, ph_ = 0, pw_ = 0;
    long od_ = 0, oh_ = 0, ow_ = 0;
};

/// Fully connected layer on [N, in_dim] batches.
class DenseLayer final : public Layer {
public:
    DenseLayer(int in_dim, int out_dim, std::mt19937_64& rng) : in_(in_dim), out_(out_dim) {
        if (in_dim < 1 || out_dim < 1) throw Error("bad dense geometry");
        w_ = Tensor({static_cast<std::size_t>(out_), static_cast<std::size_t>(in_)});
        b_ = Tensor({static_cast<std::size_t>(out_)});
        for (double& v : w_.data) v = detail::he_uniform(rng, in_);
        gw_ = Tensor(w_.shape);
        gb_ = Tensor(b_.shape);
    }

    Tensor forward(const Tensor& in) override {
        if (in.shape.size() != 2 || in.shape[1] != static_cast<std::size_t>(in_))
            throw ShapeMismatch("dense(" + std::to_string(in_) + "->" + std::to_string(out_) +
                                ") got " + in.shape_str());
        in_cache_ = in;
        has_trace_ = true;
        const std::size_t n = in.shape[0];

        // transposed weight copy keeps the inner loop contiguous
        wt_.assign(w_.size(), 0.0);
        for (long j = 0; j < out_; ++j)
            for (long i = 0; i < in_; ++i) wt_[i * out_ + j] = w_.data[j * in_ + i];

        Tensor out({n, static_cast<std::size_t>(out_)});
        parallel_for((n + 1) / 2, [&](std::size_t pair) {
            const std::size_t r0 = 2 * pair;
            const std::size_t r1 = r0 + 1;
            double* o0 = out.ptr() + r0 * out_;
            std::memcpy(o0, b_.ptr(), static_cast<std::size_t>(out_) * sizeof(double));
            if (r1 < n) {
                double* o1 = out.ptr() + r1 * out_;
                std::memcpy(o1, b_.ptr(), static_cast<std::size_t>(out_) * sizeof(double));
                kernels::accum_weighted_rows2(o0, o1, out_, wt_.data(), out_,
                                              in.ptr() + r0 * in_, in.ptr() + r1 * in_, 1, in_);
            } else {
                kernels::accum_weighted_rows(o0, out_, wt_.data(), out_, in.ptr() + r0 * in_, 1,
                                             in_);
            }
        });
        return out;
    }

    Tensor backward(const Tensor& gout, bool need_input_grad = true) override {
        require_trace();
        const std::size_t n = in_cache_.shape[0];
        if (gout.shape != std::vector<std::size_t>{n, static_cast<std::size_t>(out_)})
            throw ShapeMismatch("dense backward got " + gout.shape_str());

        parallel_for(static_cast<std::size_t>(out_), [&](std::size_t j) {
            const double* gcol = gout.ptr() + j;
            double bsum = 0.0;
            for (std::size_t row = 0; row < n; ++row) bsum += gcol[row * out_];
            gb_.data[j] += bsum;
        });
        // row blocks stay cache-resident while every output unit consumes
        // them; the per-weight accumulation order is the fixed block order
        const std::size_t block = 64;
        for (std::size_t row0 = 0; row0 < n; row0 += block) {
            const long rows = static_cast<long>(std::min(block, n - row0));
            parallel_for(static_cast<std::size_t>((out_ + 1) / 2), [&](std::size_t pair) {
                const long j0 = static_cast<long>(2 * pair);
                const long j1 = j0 + 1;
                if (j1 < out_)
                    kernels::accum_weighted_rows2(gw_.ptr() + j0 * in_, gw_.ptr() + j1 * in_,
                                                  in_, in_cache_.ptr() + row0 * in_, in_,
                                                  gout.ptr() + row0 * out_ + j0,
                                                  gout.ptr() + row0 * out_ + j1, out_, rows);
                else
                    kernels::accum_weighted_rows(gw_.ptr() + j0 * in_, in_,
                                                 in_cache_.ptr() + row0 * in_, in_,
                                                 gout.ptr() + row0 * out_ + j0, out_, rows);
            });
        }

        if (!need_input_grad) return Tensor();

        Tensor gin({n, static_cast<std::size_t>(in_)});
        parallel_for((n + 1) / 2, [&](std::size_t pair) {
            const std::size_t r0 = 2 * pair;
            const std::size_t r1 = r0 + 1;
            if (r1 < n)
                kernels::accum_weighted_rows2(gin.ptr() + r0 * in_, gin.ptr() + r1 * in_, in_,
                                              w_.ptr(), in_, gout.ptr() + r0 * out_,
                                              gout.ptr() + r1 * out_, 1, out_);
            else
                kernels::accum_weighted_rows(gin.ptr() + r0 * in_, in_, w_.ptr(), in_,
                                             gout.ptr() + r0 * out_, 1, out_);
        });
        return gin;
    }

    std::vector<Tensor*> parameters() override { return {&w_, &b_}; }
    std::vector<Tensor*> gradients() override { return {&gw_, &gb_}; }
    LayerSpec spec() const override { return LayerSpec::dense(in_, out_); }

private:
    int in_, out_;
    Tensor w_, b_, gw_, gb_;
    Tensor in_cache_;
    std::vector<double> wt_;
};

class ReluLayer final : public Layer {
public:
    explicit ReluLayer(double slope = 0.0) : slope_(slope) {}

    Tensor forward(const Tensor& in) override {
        shape_cache_ = in.shape;
        mask_.assign(in.size(), 0);
        has_trace_ = true;
        Tensor out(in.shape);
        for (std::size_t i = 0; i < in.size(); ++i) {
            const bool pos = in.data[i] > 0.0;
            mask_[i] = pos;
            out.data[i] = pos ? in.data[i] : slope_ * in.data[i];
        }
        return out;
    }

    Tensor backward(const Tensor& gout, bool = true) override {
        require_trace();
        if (gout.shape != shape_cache_) throw ShapeMismatch("relu backward shape");
        Tensor gin(gout.shape);
        for (std::size_t i = 0; i < gout.size(); ++i)
            gin.data[i] = mask_[i] ? gout.data[i] : slope_ * gout.data[i];
        return gin;
    }

    LayerSpec spec() const override {
        return slope_ == 0.0 ? LayerSpec::relu() : LayerSpec::leaky_relu(slope_);
    }

private:
    double slope_;
    std::vector<std::size_t> shape_cache_;
    std::vector<unsigned char> mask_;
};

/// Marker pair implementing skip connections inside a sequential stack:
/// residual_save(s) remembers the activation, residual_add(s) adds it back.
class ResidualSaveLayer final : public Layer {
public:
    ResidualSaveLayer(int slot, SkipStore* store) : slot_(slot), store_(store) {
        store_->ensure(slot_);
    }
    Tensor forward(const Tensor& in) override {
        store_->saved[slot_] = in;
        store_->grads[slot_] = Tensor(in.shape);
        has_trace_ = true;
        return in;
    }
    Tensor backward(const Tensor& gout, bool = true) override {
        require_trace();
        Tensor gin = gout;
        const Tensor& extra = store_->grads[slot_];
        if (extra.same_shape(gin))
            for (std::size_t i = 0; i < gin.size(); ++i) gin.data[i] += extra.data[i];
        return gin;
    }
    LayerSpec spec() const override { return LayerSpec::residual_save(slot_); }

private:
    int slot_;
    SkipStore* store_;
};

class ResidualAddLayer final : public Layer {
public:
    ResidualAddLayer(int slot, SkipStore* store) : slot_(slot), store_(store) {
        store_->ensure(slot_);
    }
    Tensor forward(const Tensor& in) override {
        const Tensor& saved = store_->saved[slot_];
        require_same_shape(in, saved, "residual_add");
        Tensor out = in;
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += saved.data[i];
        has_trace_ = true;
        return out;
    }
    Tensor backward(const Tensor& gout, bool = true) override {
        require_trace();
        store_->grads[slot_] = gout;
        return gout;
    }
    LayerSpec spec() const override { return LayerSpec::residual_add(slot_); }

private:
    int slot_;
    SkipStore* store_;
};

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

class Network {
public:
    Network() = default;

    /// Builds and He-initializes all layers; the seed fixes every weight.
    Network(const NetworkSpec& spec, std::uint64_t seed) : spec_(spec) {
        std::mt19937_64 rng(seed);
        store_ = std::make_unique<SkipStore>();
        for (const LayerSpec& l : spec.layers) {
            switch (l.kind) {
                case LayerSpec::Kind::conv3d:
                    layers_.push_back(
                        std::make_unique<Conv3dLayer>(l.in_ch, l.out_ch, l.kernel, l.padding, rng));
                    break;
                case LayerSpec::Kind::dense:
                    layers_.push_back(std::make_unique<DenseLayer>(l.in_dim, l.out_dim, rng));
                    break;
                case LayerSpec::Kind::relu:
                    layers_.push_back(std::make_unique<ReluLayer>());
                    break;
                case LayerSpec::Kind::leaky_relu:
                    layers_.push_back(std::make_unique<ReluLayer>(l.slope));
                    break;
                case LayerSpec::Kind::residual_save:
                    layers_.push_back(std::make_unique<ResidualSaveLayer>(l.slot, store_.get()));
                    break;
                case LayerSpec::Kind::residual_add:
                    layers_.push_back(std::make_unique<ResidualAddLayer>(l.slot, store_.get()));
                    break;
            }
        }
    }

    Network(Network&&) = default;
    Network& operator=(Network&&) = default;

    Tensor forward(const Tensor& in) {
        check_finite(in, "network input");
        Tensor x = in;
        if (spec_.input_skip) input_cache_ = in;
        for (auto& layer : layers_) {
            x = layer->forward(x);
            check_finite(x, "activation after layer kind " +
                                std::to_string(static_cast<int>(layer->spec().kind)));
        }
        if (spec_.input_skip) {
            require_same_shape(x, input_cache_, "input skip");
            for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += input_cache_.data[i];
        }
        has_trace_ = true;
        return x;
    }

    /// Training loops that only want parameter gradients pass
    /// need_input_grad = false; the first layer then skips its input-grad
    /// pass and an empty tensor is returned.
    Tensor backward(const Tensor& grad_out, bool need_input_grad = true) {
        if (!has_trace_) throw NoTrace("network backward called before forward");
        Tensor g = grad_out;
        for (std::size_t i = layers_.size(); i-- > 0;)
            g = layers_[i]->backward(g, need_input_grad || i > 0);
        if (spec_.input_skip && need_input_grad) {
            require_same_shape(g, grad_out, "input skip backward");
            for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += grad_out.data[i];
        }
        return g;
    }

    void zero_grad() {
        for (auto& layer : layers_)
            for (Tensor* g : layer->gradients()) g->fill(0.0);
    }

    std::vector<Tensor*> parameters() {
        std::vector<Tensor*> out;
        for (auto& layer : layers_)
            for (Tensor* p : layer->parameters()) out.push_back(p);
        return out;
    }
    std::vector<Tensor*> gradients() {
        std::vector<Tensor*> out;
        for (auto& layer : layers_)
            for (Tensor* g : layer->gradients()) out.push_back(g);
        return out;
    }

    std::size_t parameter_count() const { return spec_.parameter_count(); }
    const NetworkSpec& spec() const { return spec_; }

private:
    // an addition poisoned by any NaN/Inf stays non-finite, so one summed
    // pass detects bad values without a per-element branch
    static void check_finite(const Tensor& t, const std::string& what) {
        if (!std::isfinite(kernels::sum(t.ptr(), static_cast<long>(t.size()))))
            throw NonFiniteActivation("non-finite " + what);
    }

    NetworkSpec spec_;
    std::vector<std::unique_ptr<Layer>> layers_;
    std::unique_ptr<SkipStore> store_;
    Tensor input_cache_;
    bool has_trace_ = false;
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline double l1_loss(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "l1_loss");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a.data[i] - b.data[i]);
    return sum / static_cast<double>(a.size());
}

/// L1 loss plus its gradient w.r.t. the first argument (sign(0) = 0).
inline std::pair<double, Tensor> l1_loss_grad(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "l1_loss");
    Tensor grad(a.shape);
    double sum = 0.0;
    const double inv_n = 1.0 / static_cast<double>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sum += std::abs(d);
        grad.data[i] = d > 0.0 ? inv_n : (d < 0.0 ? -inv_n : 0.0);
    }
    return {sum * inv_n, std::move(grad)};
}

/// Mean squared error over unmasked entries; mask entries must be 0 or 1.
inline std::pair<double, Tensor> mse_loss_grad(const Tensor& a, const Tensor& b,
                                               const Tensor* mask = nullptr) {
    require_same_shape(a, b, "mse_loss");
    double count = static_cast<double>(a.size());
    if (mask) {
        require_same_shape(a, *mask, "mse_loss mask");
        count = 0.0;
        for (double m : mask->data) {
            if (m != 0.0 && m != 1.0) throw Error("mse_loss mask entries must be 0 or 1");
            count += m;
        }
        if (count == 0.0) throw EmptyMask("mse_loss mask selects no entries");
    }
    Tensor grad(a.shape);
    double sum = 0.0;
    const double inv_n = 1.0 / count;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double m = mask ? mask->data[i] : 1.0;
        const double d = (a.data[i] - b.data[i]) * m;
        sum += d * d;
        grad.data[i] = 2.0 * d * inv_n;
    }
    return {sum * inv_n, std::move(grad)};
}

inline double mse_loss(const Tensor& a, const Tensor& b, const Tensor* mask = nullptr) {
    // value path shares the grad path so the two can never disagree
    Tensor a_copy = a;
    return mse_loss_grad(a_copy, b, mask).first;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double decay_factor = 0.1;
};

/// Standard bias-corrected Adam over a fixed parameter list.
class Adam {
public:
    Adam(std::vector<Tensor*> params, AdamConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg), lr_(cfg.lr) {
        for (Tensor* p : params_) {
            m_.emplace_back(p->shape);
            v_.emplace_back(p->shape);
        }
    }

    void step(const std::vector<Tensor*>& grads) {
        if (grads.size() != params_.size()) throw ShapeMismatch("adam: parameter/gradient count");
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = *params_[i];
            const Tensor& g = *grads[i];
            require_same_shape(p, g, "adam step");
            Tensor& m = m_[i];
            Tensor& v = v_[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double gj = g.data[j];
                m.data[j] = cfg_.beta1 * m.data[j] + (1.0 - cfg_.beta1) * gj;
                v.data[j] = cfg_.beta2 * v.data[j] + (1.0 - cfg_.beta2) * gj * gj;
                const double mhat = m.data[j] / bc1;
                const double vhat = v.data[j] / bc2;
                p.data[j] -= lr_ * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    void decay() { lr_ *= cfg_.decay_factor; }
    double lr() const { return lr_; }
    std::int64_t step_count() const { return t_; }

private:
    std::vector<Tensor*> params_;
    AdamConfig cfg_;
    double lr_;
    std::int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

/// Learning-rate decay trigger. With milestones set, fires at those step
/// numbers; otherwise fires when the running-mean loss over `window` steps
/// stops improving by `min_delta`. At most `max_decays` firings.
class DecaySchedule {
public:
    std::vector<int> milestones;
    int window = 100;
    double min_delta = 1e-4;
    int max_decays = 2;

    /// Feed one loss value; returns true when the lr should decay now.
    bool observe(double loss) {
        ++step_;
        if (fired_ >= max_decays) return false;
        if (!milestones.empty()) {
            for (int m : milestones)
                if (m == step_) {
                    ++fired_;
                    return true;
                }
            return false;
        }
        window_sum_ += loss;
        ++window_n_;
        if (window_n_ < window) return false;
        const double mean = window_sum_ / window_n_;
        window_sum_ = 0.0;
        window_n_ = 0;
        if (!has_best_) {
            has_best_ = true;
            best_mean_ = mean;
            return false;
        }
        if (best_mean_ - mean < min_delta) {
            best_mean_ = std::min(best_mean_, mean);
            ++fired_;
            return true;
        }
        best_mean_ = mean;
        return false;
    }

private:
    int step_ = 0;
    int fired_ = 0;
    double window_sum_ = 0.0;
    int window_n_ = 0;
    double best_mean_ = 0.0;
    bool has_best_ = false;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
//
// Flat little-endian file:
//   magic "EVNP" | u16 version=1 | u16 flags (bit0 input_skip) | u32 layer count
//   per layer: u8 kind | 6 x i32 (in_ch,out_ch,kernel,padding / in_dim,out_dim, slot)
//              | f64 slope
//   then per parameterized layer, in order: raw f64 arrays (weights, bias)

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw TruncatedFile("checkpoint ends early");
    return v;
}

}  // namespace detail

inline void save_network(Network& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open checkpoint for writing: " + path);
    os.write("EVNP", 4);
    detail::put<std::uint16_t>(os, 1);
    detail::put<std::uint16_t>(os, net.spec().input_skip ? 1 : 0);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(net.spec().layers.size()));
    for (const LayerSpec& l : net.spec().layers) {
        detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(l.kind));
        detail::put<std::int32_t>(os, l.in_ch);
        detail::put<std::int32_t>(os, l.out_ch);
        detail::put<std::int32_t>(os, l.kernel);
        detail::put<std::int32_t>(os, l.padding);
        detail::put<std::int32_t>(os, l.in_dim);
        detail::put<std::int32_t>(os, l.out_dim);
        detail::put<std::int32_t>(os, l.slot);
        detail::put<double>(os, l.slope);
    }
    for (Tensor* p : net.parameters())
        os.write(reinterpret_cast<const char*>(p->ptr()),
                 static_cast<std::streamsize>(p->size() * sizeof(double)));
}

inline Network load_network(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "EVNP", 4) != 0)
        throw MagicMismatch("not a network checkpoint: " + path);
    const auto version = detail::get<std::uint16_t>(is);
    if (version != 1) throw ParseError("unsupported checkpoint version");
    const auto flags = detail::get<std::uint16_t>(is);
    const auto count = detail::get<std::uint32_t>(is);

    NetworkSpec spec;
    spec.input_skip = (flags & 1) != 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        LayerSpec l;
        l.kind = static_cast<LayerSpec::Kind>(detail::get<std::uint8_t>(is));
        l.in_ch = detail::get<std::int32_t>(is);
        l.out_ch = detail::get<std::int32_t>(is);
        l.kernel = detail::get<std::int32_t>(is);
        l.padding = detail::get<std::int32_t>(is);
        l.in_dim = detail::get<std::int32_t>(is);
        l.out_dim = detail::get<std::int32_t>(is);
        l.slot = detail::get<std::int32_t>(is);
        l.slope = detail::get<double>(is);
        spec.layers.push_back(l);
    }

    Network net(spec, 0);
    for (Tensor* p : net.parameters()) {
        is.read(reinterpret_cast<char*>(p->ptr()),
                static_cast<std::streamsize>(p->size() * sizeof(double)));
        if (!is) throw TruncatedFile("checkpoint parameter block ends early");
    }
    return net;
}

// ---------------------------------------------------------------------------
// The two fixed architectures
// ---------------------------------------------------------------------------

/// The spatial network: an 8-layer 3D CNN on a single-channel volume with a
/// global additive skip, so it predicts a residual on top of its input.
inline NetworkSpec spatial_cnn_spec(int hidden_channels) {
    NetworkSpec spec;
    spec.input_skip = true;
    spec.layers.push_back(LayerSpec::conv3d(1, hidden_channels));
    spec.layers.push_back(LayerSpec::relu());
    for (int i = 0; i < 6; ++i) {
        spec.layers.push_back(LayerSpec::conv3d(hidden_channels, hidden_channels));
        spec.layers.push_back(LayerSpec::relu());
    }
    spec.layers.push_back(LayerSpec::conv3d(hidden_channels, 1));
    return spec;
}

/// The temporal network: an 11-layer MLP (input, 9 hidden layers of ReLU
/// units, linear output) from [x, y, voxel column] features of length
/// depth+2 to one normalized timestamp per depth index.
inline NetworkSpec temporal_mlp_spec(int depth, int hidden_width = 128) {
    NetworkSpec spec;
    spec.layers.push_back(LayerSpec::dense(depth + 2, hidden_width));
    spec.layers.push_back(LayerSpec::relu());
    for (int i = 0; i < 8; ++i) {
        spec.layers.push_back(LayerSpec::dense(hidden_width, hidden_width));
        spec.layers.push_back(LayerSpec::relu());
    }
    spec.layers.push_back(LayerSpec::dense(hidden_width, depth));
    return spec;
}

}  // namespace evsr::nn
