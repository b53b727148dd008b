// Acceptance suite: one pass/fail line per criterion, exit 1 if any fails.
//
// Criteria 3 and 7 drive the evsr binary itself (path in EVSR_BIN); the
// rest run against the library. Every tolerance is pinned here in code.

#include "evsr/assemble.hpp"
#include "evsr/io.hpp"
#include "evsr/metrics.hpp"

#include "grad_check.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace evsr;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int criterion, const std::string& name, bool pass, const std::string& detail,
            double seconds) {
    std::printf("[%s] criterion %d: %s (%s; %.1f s)\n", pass ? "PASS" : "FAIL", criterion,
                name.c_str(), detail.c_str(), seconds);
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

void run_criterion(int criterion, const std::string& name,
                   const std::function<std::pair<bool, std::string>()>& body) {
    const auto t0 = Clock::now();
    bool pass = false;
    std::string detail;
    try {
        std::tie(pass, detail) = body();
    } catch (const std::exception& e) {
        pass = false;
        detail = std::string("exception: ") + e.what();
    }
    report(criterion, name, pass, detail, std::chrono::duration<double>(Clock::now() - t0).count());
}

std::string evsr_bin() {
    const char* env = std::getenv("EVSR_BIN");
    return env ? env : "evsr";
}

int run_cli(const std::string& args, const std::string& stdout_file = "") {
    std::string cmd = evsr_bin() + " " + args;
    if (!stdout_file.empty()) cmd += " > " + stdout_file;
    const int status = std::system(cmd.c_str());
    return status < 0 ? status : WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// the evaluation scene: a bar relocating across part of the field at
// uniform velocity, simulated at 64x64 and used as HR ground truth
EventStream hr_scene() {
    SynthConfig cfg;
    cfg.geometry = {64, 64};
    cfg.bar_width = 16.0;
    cfg.velocity_x = 1.8;
    cfg.velocity_y = 0.0;
    cfg.duration_ms = 9.0;
    return simulate(cfg);
}

struct SrVsNaive {
    bool pass = true;
    std::string detail;
};

// the criterion-4 rule: SR must beat the nearest-upsampled baseline by at
// least 10% relative RMSE on every seed, at 2x from 32x32 and 4x from 16x16
SrVsNaive run_sr_vs_naive(const Kernel& kernel) {
    const EventStream hr = hr_scene();
    SrVsNaive out;
    char buf[128];
    for (int sigma : {2, 4}) {
        const EventStream lr = downsample_stream(hr, sigma);
        const double r_naive = rmse(naive_upsample_stream(lr, sigma), hr, 16);
        for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
            SpatialConfig scfg;
            scfg.seed = seed;
            scfg.kernel = kernel;
            TemporalConfig tcfg;
            tcfg.seed = seed;
            const SRResult res = super_resolve(lr, sigma, scfg, tcfg);
            const double r_sr = rmse(res.stream, hr, 16);
            const bool ok = r_sr < 0.9 * r_naive;
            std::snprintf(buf, sizeof(buf), "%dx s%llu %.4f/%.4f%s ", sigma,
                          static_cast<unsigned long long>(seed), r_sr, r_naive,
                          ok ? "" : "(!)");
            out.detail += buf;
            out.pass = out.pass && ok;
        }
    }
    return out;
}

}  // namespace

int main() {
    std::printf("acceptance suite, evsr binary: %s\n", evsr_bin().c_str());

    // ------------------------------------------------------------------
    run_criterion(1, "round-trip suite", []() -> std::pair<bool, std::string> {
        SynthConfig cfg;  // default 32x32 bar
        const EventStream s = simulate(cfg);

        // voxel encode/decode reproduces per-pixel polarity sequences
        const VoxelGrid grid = encode(s);
        const auto seqs = decode(grid);
        const auto trains = group_by_pixel(s);
        bool voxel_ok = true;
        std::size_t total = 0;
        for (int y = 0; y < 32 && voxel_ok; ++y)
            for (int x = 0; x < 32 && voxel_ok; ++x) {
                const auto& seq = seqs[static_cast<std::size_t>(y) * 32 + x];
                total += seq.size();
                const auto it = trains.find(PixelKey{x, y});
                const std::size_t want = it == trains.end() ? 0 : it->second.entries.size();
                if (seq.size() != want) voxel_ok = false;
                for (std::size_t k = 0; voxel_ok && k < seq.size(); ++k)
                    if (seq[k] != it->second.entries[k].p) voxel_ok = false;
            }
        voxel_ok = voxel_ok && total == s.size();

        // file formats round-trip byte-exactly
        std::stringstream t1, t2, b1, b2;
        io::write_text(s, t1);
        io::write_text(io::read_text(t1), t2);
        io::write_binary(s, b1);
        io::write_binary(io::read_binary(b1), b2);
        const bool files_ok = t1.str() == t2.str() && b1.str() == b2.str();

        // assemble(encode, true timestamps) reproduces the source exactly
        TimestampField field;
        field.width = 32;
        field.height = 32;
        field.depth = grid.depth;
        field.values.assign(static_cast<std::size_t>(32) * 32 * grid.depth, 0.0);
        std::vector<int> cursor(1024, 0);
        for (const Event& e : s.events) {
            const std::size_t pix = static_cast<std::size_t>(e.y) * 32 + e.x;
            field.values[pix * grid.depth + cursor[pix]++] =
                static_cast<double>(e.t) / static_cast<double>(s.t_end);
        }
        const EventStream back = assemble(grid, field, s.t_end, grid.geometry);
        const bool assemble_ok = back.events == s.events && back.t_end == s.t_end;

        char d[128];
        std::snprintf(d, sizeof(d), "voxel=%d files=%d assemble=%d", voxel_ok, files_ok,
                      assemble_ok);
        return {voxel_ok && files_ok && assemble_ok, d};
    });

    // ------------------------------------------------------------------
    run_criterion(2, "gradient correctness", []() -> std::pair<bool, std::string> {
        using evsr::testing::check_gradients;
        using evsr::testing::random_tensor;
        const double tol = 1e-4;
        double worst = 0.0;
        int checked = 0;
        bool pass = true;

        auto probe = [&](nn::NetworkSpec spec, std::uint64_t seed, std::vector<std::size_t> in,
                         std::vector<std::size_t> out, std::size_t per_tensor) {
            nn::Network net(spec, seed);
            const auto r = check_gradients(net, random_tensor(in, seed + 1),
                                           random_tensor(out, seed + 2), per_tensor);
            worst = std::max(worst, r.worst_rel);
            checked += r.checked;
            pass = pass && r.worst_rel <= tol;
        };

        // every layer kind in isolation, all parameters
        nn::NetworkSpec conv;
        conv.layers.push_back(nn::LayerSpec::conv3d(2, 3, 3, 1));
        probe(conv, 5, {2, 3, 4, 5}, {3, 3, 4, 5}, 1u << 20);
        nn::NetworkSpec dense;
        dense.layers.push_back(nn::LayerSpec::dense(7, 4));
        probe(dense, 6, {5, 7}, {5, 4}, 1u << 20);
        nn::NetworkSpec relu;
        relu.layers.push_back(nn::LayerSpec::dense(4, 4));
        relu.layers.push_back(nn::LayerSpec::relu());
        probe(relu, 7, {3, 4}, {3, 4}, 1u << 20);
        nn::NetworkSpec leaky;
        leaky.layers.push_back(nn::LayerSpec::dense(4, 4));
        leaky.layers.push_back(nn::LayerSpec::leaky_relu(0.1));
        probe(leaky, 8, {3, 4}, {3, 4}, 1u << 20);
        nn::NetworkSpec res;
        res.layers.push_back(nn::LayerSpec::residual_save(0));
        res.layers.push_back(nn::LayerSpec::dense(4, 4));
        res.layers.push_back(nn::LayerSpec::relu());
        res.layers.push_back(nn::LayerSpec::dense(4, 4));
        res.layers.push_back(nn::LayerSpec::residual_add(0));
        probe(res, 9, {3, 4}, {3, 4}, 1u << 20);

        // both full architectures at toy sizes: grid 4x8x8 and MLP L = 4,
        // parameters sampled from every layer
        probe(nn::spatial_cnn_spec(6), 21, {1, 4, 8, 8}, {1, 4, 8, 8}, 20);
        probe(nn::temporal_mlp_spec(4, 128), 22, {6, 6}, {6, 4}, 12);

        char d[96];
        std::snprintf(d, sizeof(d), "%d gradients checked, worst rel err %.2e (tol 1e-4)",
                      checked, worst);
        return {pass && checked > 500, d};
    });

    // ------------------------------------------------------------------
    run_criterion(3, "identity-scale fidelity via CLI", []() -> std::pair<bool, std::string> {
        if (run_cli("synth --pattern bar --velocity 3,0 --duration 10 --size 32x32 "
                    "--contrast 0.2 --out acc_c3_in.csv",
                    "acc_c3_synth.out") != 0)
            return {false, "synth failed"};
        if (run_cli("sr --in acc_c3_in.csv --scale 1 --out acc_c3_out.csv --seed 1",
                    "acc_c3_sr.out") != 0)
            return {false, "sr --scale 1 failed"};
        if (run_cli("rmse --a acc_c3_in.csv --b acc_c3_out.csv --bins 16", "acc_c3_rmse.out") !=
            0)
            return {false, "rmse failed"};
        const std::string text = slurp("acc_c3_rmse.out");
        const auto pos = text.find("value: ");
        if (pos == std::string::npos) return {false, "rmse output unparseable"};
        const double value = std::atof(text.c_str() + pos + 7);
        char d[64];
        std::snprintf(d, sizeof(d), "rmse %.4f <= 0.05 at B=16", value);
        return {value <= 0.05, d};
    });

    // ------------------------------------------------------------------
    run_criterion(4, "SR beats naive upsampling (bicubic)",
                  []() -> std::pair<bool, std::string> {
                      const SrVsNaive r = run_sr_vs_naive(Kernel::bicubic());
                      return {r.pass, r.detail + ">=10% margin 3/3 seeds both scales"};
                  });

    // ------------------------------------------------------------------
    run_criterion(5, "temporal correlation suite", []() -> std::pair<bool, std::string> {
        const EventStream hr = hr_scene();
        const EventStream lr = downsample_stream(hr, 2);
        const int sigma = 2;
        const VoxelGrid grid = encode(lr);

        SpatialConfig scfg;
        scfg.seed = 1;
        TemporalConfig tcfg;
        tcfg.seed = 1;
        SpatialModel spatial = train_spatial(grid, scfg);
        const VoxelGrid sr_grid = infer_spatial(spatial, grid, sigma);
        TemporalModel temporal = train_temporal(lr, grid, tcfg);
        const TimestampField field = predict_timestamps(temporal, sr_grid, lr.t_end);

        const int w = lr.geometry.width, h = lr.geometry.height;
        const int sw = sr_grid.geometry.width, sh = sr_grid.geometry.height;
        const auto trains = group_by_pixel(lr);
        const double t_end = static_cast<double>(lr.t_end);

        // (a) memorization at LR-coincident SR pixels
        std::size_t mem_total = 0, mem_ok = 0;
        auto coincident = [&](int x, int extent_lr, int extent_sr) {
            return extent_lr > 1
                       ? static_cast<int>(static_cast<double>(x) * (extent_sr - 1) /
                                              (extent_lr - 1) +
                                          0.5)
                       : 0;
        };
        for (const auto& [pix, train] : trains) {
            const int sx = coincident(pix.x, w, sw);
            const int sy = coincident(pix.y, h, sh);
            for (std::size_t k = 0; k < train.entries.size(); ++k) {
                const double truth = static_cast<double>(train.entries[k].t) / t_end;
                ++mem_total;
                if (std::abs(field.at(sx, sy, k) - truth) <= 0.05) ++mem_ok;
            }
        }
        const double mem_rate = mem_total ? static_cast<double>(mem_ok) / mem_total : 0.0;

        // (b) subpixels between anchors stay inside the anchor interval
        std::size_t sub_total = 0, sub_ok = 0;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x + 1 < w; ++x) {
                const auto a = trains.find(PixelKey{x, y});
                const auto b = trains.find(PixelKey{x + 1, y});
                if (a == trains.end() || b == trains.end()) continue;
                const int sx0 = coincident(x, w, sw);
                const int sx1 = coincident(x + 1, w, sw);
                const int sy = coincident(y, h, sh);
                const std::size_t depths =
                    std::min(a->second.entries.size(), b->second.entries.size());
                for (int sx = sx0 + 1; sx < sx1; ++sx) {
                    for (std::size_t k = 0; k < depths; ++k) {
                        const double t0 = static_cast<double>(a->second.entries[k].t) / t_end;
                        const double t1 = static_cast<double>(b->second.entries[k].t) / t_end;
                        const double lo = std::min(t0, t1) - 0.1;
                        const double hi = std::max(t0, t1) + 0.1;
                        const double pred = field.at(sx, sy, k);
                        ++sub_total;
                        if (pred >= lo && pred <= hi) ++sub_ok;
                    }
                }
            }
        }
        const double sub_rate = sub_total ? static_cast<double>(sub_ok) / sub_total : 0.0;

        char d[128];
        std::snprintf(d, sizeof(d),
                      "memorization %.1f%% (need >=90%%) of %zu; interval %.1f%% (need >=80%%) "
                      "of %zu",
                      100 * mem_rate, mem_total, 100 * sub_rate, sub_total);
        return {mem_rate >= 0.9 && sub_rate >= 0.8 && mem_total > 100 && sub_total > 50, d};
    });

    // ------------------------------------------------------------------
    run_criterion(6, "kernel robustness (bilinear, random)",
                  []() -> std::pair<bool, std::string> {
                      const SrVsNaive a = run_sr_vs_naive(Kernel::bilinear());
                      const SrVsNaive b = run_sr_vs_naive(Kernel::random(123));
                      return {a.pass && b.pass,
                              "bilinear: " + a.detail + "| random: " + b.detail};
                  });

    // ------------------------------------------------------------------
    run_criterion(7, "determinism: byte-identical outputs",
                  []() -> std::pair<bool, std::string> {
                      const EventStream hr = hr_scene();
                      io::write(downsample_stream(hr, 2), "acc_c7_lr.evsr");
                      for (int run : {1, 2}) {
                          char cmd[256];
                          std::snprintf(cmd, sizeof(cmd),
                                        "sr --in acc_c7_lr.evsr --scale 2 --out acc_c7_%d.evsr "
                                        "--seed 7 --report acc_c7_%d.report",
                                        run, run);
                          if (run_cli(cmd, "acc_c7_sr.out") != 0)
                              return {false, "sr run failed"};
                      }
                      const std::string a = slurp("acc_c7_1.evsr");
                      const std::string b = slurp("acc_c7_2.evsr");
                      char d[64];
                      std::snprintf(d, sizeof(d), "two runs, %zu bytes each", a.size());
                      return {!a.empty() && a == b, d};
                  });

    // ------------------------------------------------------------------
    run_criterion(8, "training-cost sanity at 34x34", []() -> std::pair<bool, std::string> {
        SynthConfig cfg;
        cfg.geometry = {34, 34};
        cfg.velocity_x = 3.0;
        cfg.duration_ms = 10.0;
        const EventStream sample = simulate(cfg);
        SpatialConfig scfg;
        scfg.seed = 1;
        scfg.iterations = 1000;
        TemporalConfig tcfg;
        tcfg.seed = 1;
        tcfg.epochs = 1000;
        const auto t0 = Clock::now();
        const SRResult res = super_resolve(sample, 2, scfg, tcfg);
        const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
        char d[128];
        std::snprintf(d, sizeof(d),
                      "spatial %.0fs + temporal %.0fs, pipeline %.0fs < 600s, %zu events out",
                      res.diagnostics.seconds_spatial_train,
                      res.diagnostics.seconds_temporal_train, secs, res.stream.size());
        return {secs < 600.0, d};
    });

    // ------------------------------------------------------------------
    run_criterion(9, "metric properties", []() -> std::pair<bool, std::string> {
        SynthConfig cfg;
        const EventStream s = simulate(cfg);
        SynthConfig cfg2 = cfg;
        cfg2.velocity_x = 2.2;
        const EventStream t = simulate(cfg2);

        const bool identity = rmse(s, s, 16) == 0.0;
        const bool symmetric = rmse(s, t, 16) == rmse(t, s, 16);
        const bool conserve = bin(s, 16).total() == static_cast<double>(s.size());

        std::mt19937 rng(4);
        Tensor g({3, 8, 8});
        for (double& v : g.data) v = static_cast<double>(rng() % 100) / 99.0;
        const Tensor twice =
            apply_transform(apply_transform(g, SpatialTransform::rot180), SpatialTransform::rot180);
        const bool closure = twice.data == g.data;

        char d[96];
        std::snprintf(d, sizeof(d), "identity=%d symmetry=%d conservation=%d rot180^2=%d",
                      identity, symmetric, conserve, closure);
        return {identity && symmetric && conserve && closure, d};
    });

    std::printf("%s: %d criterion(s) failed\n", g_failures ? "FAIL" : "ALL PASS", g_failures);
    return g_failures ? 1 : 0;
}
