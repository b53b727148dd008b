// evsr: self-supervised spatiotemporal super-resolution for event streams.
//
// Subcommands: sr, downsample, synth, rmse, render, stats.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 pipeline failure.

#include "evsr/assemble.hpp"
#include "evsr/io.hpp"
#include "evsr/metrics.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <string>

namespace {

using namespace evsr;

int parse_pair(const std::string& s, char sep, double& a, double& b) {
    const auto pos = s.find(sep);
    if (pos == std::string::npos) return 1;
    try {
        a = std::stod(s.substr(0, pos));
        b = std::stod(s.substr(pos + 1));
    } catch (...) {
        return 1;
    }
    return 0;
}

/// "100us", "2ms" or a bare microsecond count.
Timestamp parse_duration_us(std::string s) {
    double scale = 1.0;
    if (s.size() > 2 && s.substr(s.size() - 2) == "us") {
        s.resize(s.size() - 2);
    } else if (s.size() > 2 && s.substr(s.size() - 2) == "ms") {
        scale = 1000.0;
        s.resize(s.size() - 2);
    }
    return static_cast<Timestamp>(std::stod(s) * scale + 0.5);
}

Kernel parse_kernel(const std::string& name, std::uint64_t seed) {
    if (name == "bicubic") return Kernel::bicubic();
    if (name == "bilinear") return Kernel::bilinear();
    if (name == "random") return Kernel::random(seed);
    throw CLI::ValidationError("--kernel", "must be bicubic, bilinear or random");
}

int cmd_sr(const std::string& in, const std::string& out, int scale, int iters, int epochs,
           double lr, const std::string& kernel_name, std::uint64_t seed,
           const std::string& fallback, const std::string& report,
           const std::string& logs_prefix) {
    const EventStream stream = io::read(in);

    SpatialConfig scfg;
    scfg.scale = scale;
    scfg.iterations = iters;
    scfg.lr = lr;
    scfg.seed = seed;
    scfg.kernel = parse_kernel(kernel_name, seed);
    TemporalConfig tcfg;
    tcfg.epochs = epochs;
    tcfg.lr = lr;
    tcfg.seed = seed;

    SRResult result;
    try {
        result = super_resolve(stream, scale, scfg, tcfg);
    } catch (const PipelineError& e) {
        if (fallback != "naive") {
            std::cerr << "pipeline failed: " << e.what() << "\n";
            return 3;
        }
        std::cerr << "warning: " << e.what() << "; falling back to naive upsampling\n";
        result.stream = naive_upsample_stream(stream, scale);
        result.diagnostics.scale = scale;
        result.diagnostics.seed = seed;
        result.diagnostics.kernel = scfg.kernel.name();
        result.diagnostics.lr_event_count = stream.size();
        result.diagnostics.sr_event_count = result.stream.size();
        result.diagnostics.fallback_used = true;
    }

    io::write(result.stream, out);
    if (!report.empty()) io::write_report(result.diagnostics, report);
    if (!logs_prefix.empty()) {
        io::write_train_log(result.spatial_log, logs_prefix + ".spatial.csv");
        io::write_train_log(result.temporal_log, logs_prefix + ".temporal.csv");
    }
    std::printf("events_in: %zu\nevents_out: %zu\nwrote: %s\n", stream.size(),
                result.stream.size(), out.c_str());
    return 0;
}

int cmd_synth(const std::string& pattern, const std::string& velocity, double duration_ms,
              const std::string& size, double contrast, double bar_width, double tile,
              double radius, const std::string& dt, const std::string& out) {
    SynthConfig cfg;
    if (pattern == "bar")
        cfg.pattern = SynthConfig::Pattern::bar;
    else if (pattern == "checkerboard")
        cfg.pattern = SynthConfig::Pattern::checkerboard;
    else if (pattern == "disk")
        cfg.pattern = SynthConfig::Pattern::disk;
    else
        throw CLI::ValidationError("--pattern", "must be bar, checkerboard or disk");

    if (parse_pair(velocity, ',', cfg.velocity_x, cfg.velocity_y))
        throw CLI::ValidationError("--velocity", "expected VX,VY");
    double w = 0, h = 0;
    if (parse_pair(size, 'x', w, h) || w < 1 || h < 1)
        throw CLI::ValidationError("--size", "expected WxH");
    cfg.geometry = {static_cast<int>(w), static_cast<int>(h)};
    cfg.duration_ms = duration_ms;
    cfg.contrast = contrast;
    cfg.bar_width = bar_width;
    cfg.tile_size = tile;
    cfg.disk_radius = radius;
    if (!dt.empty()) cfg.dt_us = parse_duration_us(dt);

    const EventStream stream = simulate(cfg);
    if (stream.empty())
        std::cerr << "warning: the configured motion triggers no events (static scene?)\n";
    io::write(stream, out);
    std::printf("events: %zu\nwrote: %s\n", stream.size(), out.c_str());
    return 0;
}

int cmd_stats(const std::string& in) {
    const EventStream s = io::read(in);
    const StreamStats st = stats(s);
    std::printf("geometry: %dx%d\n", s.geometry.width, s.geometry.height);
    std::printf("t_end_us: %llu\n", static_cast<unsigned long long>(s.t_end));
    std::printf("events: %zu\n", st.event_count);
    std::printf("events_per_second: %.6g\n", st.events_per_second);
    std::printf("positive: %zu\nnegative: %zu\n", st.positive_count, st.negative_count);
    std::printf("polarity_ratio: %.6g\n", st.polarity_ratio);
    std::printf("max_per_pixel: %d\n", st.max_per_pixel);
    std::printf("count_histogram:");
    for (const auto& [count, pixels] : st.count_histogram)
        std::printf(" %d:%zu", count, pixels);
    std::printf("\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"self-supervised event-stream super-resolution"};
    app.require_subcommand(1);

    // sr
    auto* sr = app.add_subcommand("sr", "super-resolve a stream at test time");
    std::string sr_in, sr_out, sr_kernel = "bicubic", sr_fallback, sr_report, sr_logs;
    int sr_scale = 2, sr_iters = 1000, sr_epochs = 1000;
    double sr_lr = 1e-3;
    std::uint64_t sr_seed = 0;
    sr->add_option("--in", sr_in, "input event file")->required();
    sr->add_option("--scale", sr_scale, "integer upscaling factor")->required();
    sr->add_option("--out", sr_out, "output event file")->required();
    sr->add_option("--iters", sr_iters, "spatial training iterations");
    sr->add_option("--epochs", sr_epochs, "temporal training epochs");
    sr->add_option("--lr", sr_lr, "learning rate for both branches");
    sr->add_option("--kernel", sr_kernel, "degradation kernel: bicubic|bilinear|random");
    sr->add_option("--seed", sr_seed, "seed fixing initialization and crops");
    sr->add_option("--fallback", sr_fallback, "'naive' degrades instead of failing");
    sr->add_option("--report", sr_report, "write a key: value diagnostics report");
    sr->add_option("--logs", sr_logs, "prefix for per-step training-log CSVs");

    // downsample
    auto* ds = app.add_subcommand("downsample", "synthesize a LR stream from a HR one");
    std::string ds_in, ds_out, ds_refractory = "100us";
    int ds_scale = 2;
    ds->add_option("--in", ds_in)->required();
    ds->add_option("--scale", ds_scale)->required();
    ds->add_option("--out", ds_out)->required();
    ds->add_option("--refractory", ds_refractory, "same-polarity merge window (e.g. 100us)");

    // synth
    auto* sy = app.add_subcommand("synth", "simulate a moving-pattern event stream");
    std::string sy_pattern = "bar", sy_velocity = "3,0", sy_size = "32x32", sy_dt, sy_out;
    double sy_duration = 10.0, sy_contrast = 0.2, sy_bar = 0.0, sy_tile = 8.0, sy_radius = 0.0;
    sy->add_option("--pattern", sy_pattern, "bar|checkerboard|disk");
    sy->add_option("--velocity", sy_velocity, "VX,VY in pixels/ms");
    sy->add_option("--duration", sy_duration, "recording length in ms");
    sy->add_option("--size", sy_size, "sensor geometry WxH");
    sy->add_option("--contrast", sy_contrast, "contrast threshold c");
    sy->add_option("--bar-width", sy_bar, "bar width in pixels (0 = width/4)");
    sy->add_option("--tile", sy_tile, "checkerboard tile size");
    sy->add_option("--radius", sy_radius, "disk radius (0 = min(W,H)/4)");
    sy->add_option("--dt", sy_dt, "simulation step (e.g. 50us)");
    sy->add_option("--out", sy_out)->required();

    // rmse
    auto* rm = app.add_subcommand("rmse", "compare two streams on binned grids");
    std::string rm_a, rm_b;
    int rm_bins = 16;
    rm->add_option("--a", rm_a)->required();
    rm->add_option("--b", rm_b)->required();
    rm->add_option("--bins", rm_bins, "time bin count");

    // render
    auto* rd = app.add_subcommand("render", "rasterize a stream to an image");
    std::string rd_in, rd_out, rd_mode = "accumulate", rd_window;
    rd->add_option("--in", rd_in)->required();
    rd->add_option("--out", rd_out)->required();
    rd->add_option("--mode", rd_mode, "accumulate|polarity-color");
    rd->add_option("--window", rd_window, "time window T0,T1 in microseconds");

    // stats
    auto* st = app.add_subcommand("stats", "print stream statistics");
    std::string st_in;
    st->add_option("--in", st_in)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : 1;
    }

    try {
        if (sr->parsed())
            return cmd_sr(sr_in, sr_out, sr_scale, sr_iters, sr_epochs, sr_lr, sr_kernel,
                          sr_seed, sr_fallback, sr_report, sr_logs);
        if (ds->parsed()) {
            const EventStream hr = io::read(ds_in);
            const EventStream lr =
                evsr::downsample_stream(hr, ds_scale, parse_duration_us(ds_refractory));
            io::write(lr, ds_out);
            std::printf("events_in: %zu\nevents_out: %zu\nwrote: %s\n", hr.size(), lr.size(),
                        ds_out.c_str());
            return 0;
        }
        if (sy->parsed())
            return cmd_synth(sy_pattern, sy_velocity, sy_duration, sy_size, sy_contrast, sy_bar,
                             sy_tile, sy_radius, sy_dt, sy_out);
        if (rm->parsed()) {
            const double value = rmse(io::read(rm_a), io::read(rm_b), rm_bins);
            std::printf("metric: rmse\nbins: %d\nvalue: %.6f\n", rm_bins, value);
            return 0;
        }
        if (rd->parsed()) {
            io::RenderSpec spec;
            if (rd_mode == "accumulate")
                spec.mode = io::RenderSpec::Mode::accumulate;
            else if (rd_mode == "polarity-color")
                spec.mode = io::RenderSpec::Mode::polarity_color;
            else
                throw CLI::ValidationError("--mode", "must be accumulate or polarity-color");
            if (!rd_window.empty()) {
                double a = 0, b = 0;
                if (parse_pair(rd_window, ',', a, b))
                    throw CLI::ValidationError("--window", "expected T0,T1");
                spec.window_start = static_cast<Timestamp>(a);
                spec.window_end = static_cast<Timestamp>(b);
            }
            io::render(io::read(rd_in), spec, rd_out);
            if (spec.window_empty_flag)
                std::cerr << "warning: the time window contains no events\n";
            std::printf("wrote: %s\n", rd_out.c_str());
            return 0;
        }
        if (st->parsed()) return cmd_stats(st_in);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const PipelineError& e) {
        std::cerr << "pipeline failure: " << e.what() << "\n";
        return 3;
    } catch (const NonFiniteLoss& e) {
        std::cerr << "pipeline failure: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 1;
}
