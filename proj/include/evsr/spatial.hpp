#pragma once

#include "evsr/nn.hpp"
#include "evsr/resample.hpp"
#include "evsr/trainlog.hpp"
#include "evsr/voxel.hpp"

#include <cstdint>
#include <random>

namespace evsr {

/// Test-time training setup of the spatial branch.
struct SpatialConfig {
    int scale = 2;
    int iterations = 1000;
    double lr = 1e-3;
    Kernel kernel = Kernel::bicubic();
    bool augment = true;
    std::uint64_t seed = 0;

    /// Hidden channel count of the 8-layer CNN. Kept small so whole-sample
    /// training in double precision stays interactive on plain CPUs.
    int hidden_channels = 6;

    /// Above this spatial size training switches to random crops.
    int patch_threshold = 128;
    int patch_size = 64;

    std::vector<int> lr_milestones;  ///< empty selects the plateau trigger
};

/// The trained spatial network plus everything needed to apply it.
struct SpatialModel {
    nn::Network net;
    int scale = 1;
    VoxelCoding coding;
    TrainLog log;
    int pairs_per_iteration = 0;
};

inline Tensor grid_to_tensor(const VoxelGrid& grid) {
    return Tensor({grid.depth, static_cast<std::size_t>(grid.geometry.height),
                   static_cast<std::size_t>(grid.geometry.width)},
                  grid.data);
}

namespace spatial_detail {

inline Tensor crop_spatial(const Tensor& t, std::size_t y0, std::size_t x0, std::size_t h,
                           std::size_t w) {
    const std::size_t l = t.shape[0], th = t.shape[1], tw = t.shape[2];
    Tensor out({l, h, w});
    for (std::size_t k = 0; k < l; ++k)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                out.data[(k * h + y) * w + x] = t.data[(k * th + y0 + y) * tw + x0 + x];
    return out;
}

inline Tensor as_conv_input(const Tensor& lhw) {
    Tensor t = lhw;
    t.shape = {1, lhw.shape[0], lhw.shape[1], lhw.shape[2]};
    return t;
}

inline Tensor as_lhw(const Tensor& cdhw) {
    Tensor t = cdhw;
    t.shape = {cdhw.shape[1], cdhw.shape[2], cdhw.shape[3]};
    return t;
}

/// Degrade-and-restore input of the training pair: downsample by the
/// degradation kernel, bicubically pre-upsample back, crop off any
/// divisibility padding.
inline Tensor make_pair_input(const Tensor& grid, int scale, const Kernel& kernel) {
    const Tensor down = downsample(grid, scale, kernel);
    Tensor up = upsample_naive(down, scale, UpsampleMode::bicubic);
    if (up.shape[1] != grid.shape[1] || up.shape[2] != grid.shape[2])
        up = crop_spatial(up, 0, 0, grid.shape[1], grid.shape[2]);
    return up;
}

}  // namespace spatial_detail

/// Trains f_v on the grid's own cross-scale recurrence: the pair is the
/// bicubically pre-upsampled degraded grid against the grid itself, plus
/// the five rotated/mirrored copies. Loss is the plain L1 of Eq.-style
/// residual training; the per-iteration loss is the mean over the pairs.
inline SpatialModel train_spatial(const VoxelGrid& grid, const SpatialConfig& cfg) {
    if (grid.empty()) throw GridTooSmall("cannot train on an empty voxel grid");
    if (cfg.scale < 1) throw BadFactor("scale must be >= 1");
    if (cfg.iterations < 1) throw Error("iterations must be >= 1");
    const int down_h = grid.geometry.height / cfg.scale;
    const int down_w = grid.geometry.width / cfg.scale;
    if (down_h < 4 || down_w < 4)
        throw GridTooSmall("grid " + std::to_string(grid.geometry.width) + "x" +
                           std::to_string(grid.geometry.height) + " leaves less than 4x4 after /" +
                           std::to_string(cfg.scale));

    const Tensor full = grid_to_tensor(grid);
    const Tensor pair_input = spatial_detail::make_pair_input(full, cfg.scale, cfg.kernel);

    std::vector<std::pair<Tensor, Tensor>> pairs;  // [L,H,W] members
    if (cfg.augment) {
        AugmentedPairSet set = augment(pair_input, full);
        for (auto& p : set.pairs) pairs.emplace_back(std::move(p.lr), std::move(p.hr));
    } else {
        pairs.emplace_back(pair_input, full);
    }

    const bool patch_mode = grid.geometry.height > cfg.patch_threshold ||
                            grid.geometry.width > cfg.patch_threshold;
    if (!patch_mode) {
        // reshape once; the training loop then feeds the cached tensors
        for (auto& [lr, hr] : pairs) {
            lr = spatial_detail::as_conv_input(lr);
            hr = spatial_detail::as_conv_input(hr);
        }
    }

    SpatialModel model{nn::Network(nn::spatial_cnn_spec(cfg.hidden_channels), cfg.seed),
                       cfg.scale, grid.coding, {}, static_cast<int>(pairs.size())};
    nn::AdamConfig adam_cfg;
    adam_cfg.lr = cfg.lr;
    nn::Adam adam(model.net.parameters(), adam_cfg);
    nn::DecaySchedule decay;
    decay.milestones = cfg.lr_milestones;

    std::mt19937_64 crop_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    model.log.reserve(cfg.iterations);
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        model.net.zero_grad();
        double loss_sum = 0.0;
        const double pair_scale = 1.0 / static_cast<double>(pairs.size());
        for (const auto& [in_cached, target_cached] : pairs) {
            Tensor in_crop, target_crop;
            const Tensor* in = &in_cached;
            const Tensor* target = &target_cached;
            if (patch_mode) {
                const std::size_t ph = std::min<std::size_t>(cfg.patch_size, in_cached.shape[1]);
                const std::size_t pw = std::min<std::size_t>(cfg.patch_size, in_cached.shape[2]);
                const std::size_t y0 = crop_rng() % (in_cached.shape[1] - ph + 1);
                const std::size_t x0 = crop_rng() % (in_cached.shape[2] - pw + 1);
                in_crop = spatial_detail::as_conv_input(
                    spatial_detail::crop_spatial(in_cached, y0, x0, ph, pw));
                target_crop = spatial_detail::as_conv_input(
                    spatial_detail::crop_spatial(target_cached, y0, x0, ph, pw));
                in = &in_crop;
                target = &target_crop;
            }
            const Tensor out = model.net.forward(*in);
            auto [loss, g] = nn::l1_loss_grad(out, *target);
            loss_sum += loss;
            for (double& v : g.data) v *= pair_scale;
            model.net.backward(g, false);
        }
        const double mean_loss = loss_sum * pair_scale;
        if (!std::isfinite(mean_loss))
            throw NonFiniteLoss("spatial training diverged at iteration " +
                                std::to_string(iter) + " (loss not finite)");
        adam.step(model.net.gradients());
        if (decay.observe(mean_loss)) adam.decay();
        model.log.push_back({iter, mean_loss, adam.lr()});
    }
    return model;
}

/// Applies the trained network to the bicubically pre-upsampled grid and
/// clamps the result into the coding range so it stays decodable.
inline VoxelGrid infer_spatial(SpatialModel& model, const VoxelGrid& grid, int scale) {
    if (scale != model.scale)
        throw ScaleMismatch("model trained for x" + std::to_string(model.scale) +
                            ", asked for x" + std::to_string(scale));
    if (grid.empty()) throw GridTooSmall("cannot super-resolve an empty voxel grid");

    const Tensor pre = upsample_naive(grid_to_tensor(grid), scale, UpsampleMode::bicubic);
    Tensor out = model.net.forward(spatial_detail::as_conv_input(pre));
    for (double& v : out.data)
        v = std::min(grid.coding.code_plus, std::max(grid.coding.code_minus, v));

    VoxelGrid sr;
    sr.geometry = {grid.geometry.width * scale, grid.geometry.height * scale};
    sr.coding = grid.coding;
    sr.depth = grid.depth;
    sr.data = std::move(spatial_detail::as_lhw(out).data);
    sr.fill_counts.assign(static_cast<std::size_t>(sr.geometry.width) * sr.geometry.height, 0);
    for (int y = 0; y < sr.geometry.height; ++y)
        for (int x = 0; x < sr.geometry.width; ++x)
            sr.fill_counts[static_cast<std::size_t>(y) * sr.geometry.width + x] =
                decoded_count(sr, x, y);
    return sr;
}

}  // namespace evsr
