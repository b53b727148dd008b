#pragma once

#include "evsr/nn.hpp"
#include "evsr/trainlog.hpp"
#include "evsr/voxel.hpp"

#include <cstdint>
#include <numeric>
#include <random>

namespace evsr {

/// Test-time training setup of the temporal branch.
struct TemporalConfig {
    int epochs = 1000;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    int batch = 0;  ///< pixels per step; 0 trains on all pixels at once
    int hidden_width = 128;
    std::vector<int> lr_milestones;  ///< empty selects the plateau trigger
};

/// The trained timestamp regressor with the source context it memorized.
struct TemporalModel {
    nn::Network net;
    std::size_t depth = 0;  ///< voxel depth L the feature length is bound to
    SensorGeometry lr_geometry;
    TrainLog log;
};

/// Normalized timestamps per SR pixel, values in [0,1], length L per pixel;
/// entries at or beyond a pixel's decoded event count carry no meaning.
struct TimestampField {
    int width = 0;
    int height = 0;
    std::size_t depth = 0;
    std::vector<double> values;  ///< [y][x][k]

    double at(int x, int y, std::size_t k) const {
        return values[(static_cast<std::size_t>(y) * width + x) * depth + k];
    }
};

/// The hard-rule encoder g: stacks the normalized pixel position with the
/// pixel's voxel column into one feature vector of length L + 2.
inline std::vector<double> encode_features(const std::vector<double>& column, double x_norm,
                                           double y_norm) {
    if (!(x_norm >= 0.0 && x_norm <= 1.0 && y_norm >= 0.0 && y_norm <= 1.0))
        throw BadPosition("normalized position must lie in [0,1]^2");
    std::vector<double> f;
    f.reserve(column.size() + 2);
    f.push_back(x_norm);
    f.push_back(y_norm);
    f.insert(f.end(), column.begin(), column.end());
    return f;
}

namespace temporal_detail {

/// Feature rows for every pixel of a grid, row-major, shape [H*W, L+2].
inline Tensor feature_matrix(const VoxelGrid& grid) {
    const int w = grid.geometry.width;
    const int h = grid.geometry.height;
    const std::size_t depth = grid.depth;
    Tensor f({static_cast<std::size_t>(w) * h, depth + 2});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double* row = f.ptr() + (static_cast<std::size_t>(y) * w + x) * (depth + 2);
            row[0] = normalized_pixel(x, w);
            row[1] = normalized_pixel(y, h);
            for (std::size_t k = 0; k < depth; ++k) row[2 + k] = grid.at(k, y, x);
        }
    }
    return f;
}

inline Tensor gather_rows(const Tensor& m, const std::vector<std::size_t>& rows) {
    const std::size_t cols = m.shape[1];
    Tensor out({rows.size(), cols});
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(m.ptr() + rows[i] * cols, cols, out.ptr() + i * cols);
    return out;
}

}  // namespace temporal_detail

/// Trains f_t to regress each pixel's normalized timestamps from its
/// (position, voxel column) features. The loss is the MSE over real event
/// entries only; padding depths are masked out.
inline TemporalModel train_temporal(const EventStream& stream, const VoxelGrid& grid,
                                    const TemporalConfig& cfg) {
    if (!(grid.geometry == stream.geometry))
        throw SourceMismatch("voxel grid geometry differs from the stream's");
    if (grid.empty()) throw SourceMismatch("cannot train the temporal branch on no events");
    if (cfg.epochs < 1) throw Error("epochs must be >= 1");
    if (stream.t_end == 0) throw ZeroExtent("stream extent is zero");

    const int w = grid.geometry.width;
    const int h = grid.geometry.height;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    const std::size_t depth = grid.depth;

    const Tensor features = temporal_detail::feature_matrix(grid);
    Tensor targets({n, depth});
    Tensor mask({n, depth});
    const double inv_t = 1.0 / static_cast<double>(stream.t_end);
    {
        std::vector<int> cursor(n, 0);
        for (const Event& e : stream.events) {
            const std::size_t pix = static_cast<std::size_t>(e.y) * w + e.x;
            const std::size_t k = static_cast<std::size_t>(cursor[pix]++);
            targets.data[pix * depth + k] = static_cast<double>(e.t) * inv_t;
            mask.data[pix * depth + k] = 1.0;
        }
    }

    TemporalModel model{
        nn::Network(nn::temporal_mlp_spec(static_cast<int>(depth), cfg.hidden_width), cfg.seed),
        depth, grid.geometry, {}};
    nn::AdamConfig adam_cfg;
    adam_cfg.lr = cfg.lr;
    nn::Adam adam(model.net.parameters(), adam_cfg);
    nn::DecaySchedule decay;
    decay.milestones = cfg.lr_milestones;

    std::mt19937_64 shuffle_rng(cfg.seed ^ 0xda3e39cb94b95bdbULL);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    model.log.reserve(cfg.epochs);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        if (cfg.batch <= 0 || static_cast<std::size_t>(cfg.batch) >= n) {
            model.net.zero_grad();
            const Tensor pred = model.net.forward(features);
            auto [loss, g] = nn::mse_loss_grad(pred, targets, &mask);
            epoch_loss = loss;
            model.net.backward(g, false);
            adam.step(model.net.gradients());
        } else {
            std::shuffle(order.begin(), order.end(), shuffle_rng);
            double sum = 0.0;
            std::size_t steps = 0;
            for (std::size_t start = 0; start < n; start += cfg.batch) {
                const std::size_t stop = std::min(n, start + cfg.batch);
                const std::vector<std::size_t> rows(order.begin() + start,
                                                    order.begin() + stop);
                const Tensor bf = temporal_detail::gather_rows(features, rows);
                const Tensor bt = temporal_detail::gather_rows(targets, rows);
                const Tensor bm = temporal_detail::gather_rows(mask, rows);
                bool any = false;
                for (double v : bm.data)
                    if (v != 0.0) {
                        any = true;
                        break;
                    }
                if (!any) continue;  // batch of empty pixels carries no loss
                model.net.zero_grad();
                const Tensor pred = model.net.forward(bf);
                auto [loss, g] = nn::mse_loss_grad(pred, bt, &bm);
                sum += loss;
                ++steps;
                model.net.backward(g, false);
                adam.step(model.net.gradients());
            }
            epoch_loss = steps ? sum / static_cast<double>(steps) : 0.0;
        }
        if (!std::isfinite(epoch_loss))
            throw NonFiniteLoss("temporal training diverged at epoch " + std::to_string(epoch));
        if (decay.observe(epoch_loss)) adam.decay();
        model.log.push_back({epoch, epoch_loss, adam.lr()});
    }
    return model;
}

/// Predicts normalized timestamps for every pixel of the SR grid in the
/// shared normalized frame. The features come from the (network-refined,
/// clamped) SR columns, and predictions are clamped to [0,1] so the
/// de-normalized times stay within the recording.
inline TimestampField predict_timestamps(TemporalModel& model, const VoxelGrid& sr_grid,
                                         Timestamp t_end) {
    if (sr_grid.depth != model.depth)
        throw SourceMismatch("SR grid depth " + std::to_string(sr_grid.depth) +
                             " does not match the trained feature length " +
                             std::to_string(model.depth));
    (void)t_end;  // de-normalization happens at assembly

    const Tensor features = temporal_detail::feature_matrix(sr_grid);
    const Tensor pred = model.net.forward(features);

    TimestampField field;
    field.width = sr_grid.geometry.width;
    field.height = sr_grid.geometry.height;
    field.depth = sr_grid.depth;
    field.values.resize(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i)
        field.values[i] = std::min(1.0, std::max(0.0, pred.data[i]));
    return field;
}

}  // namespace evsr
