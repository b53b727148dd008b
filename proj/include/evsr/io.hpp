#pragma once

#include "evsr/assemble.hpp"
#include "evsr/events.hpp"
#include "evsr/trainlog.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

namespace evsr::io {

enum class Format { auto_detect, text, binary };

// ---------------------------------------------------------------------------
// Text format
//
// UTF-8, one event per line as `t_us,x,y,p` with 1-based x/y on disk (the
// header line names the columns). A leading comment line carries geometry
// and extent so streams round-trip exactly; files without it fall back to
// inferring both from the events.
// ---------------------------------------------------------------------------

inline void write_text(const EventStream& stream, std::ostream& os) {
    os << "# evsr width=" << stream.geometry.width << " height=" << stream.geometry.height
       << " t_end=" << stream.t_end << "\n";
    os << "t_us,x,y,p\n";
    for (const Event& e : stream.events)
        os << e.t << ',' << (e.x + 1) << ',' << (e.y + 1) << ',' << e.p << '\n';
}

inline EventStream read_text(std::istream& is) {
    std::string line;
    std::size_t line_no = 0;
    int width = 0, height = 0;
    Timestamp t_end = 0;
    bool have_meta = false, have_header = false;

    std::vector<Event> events;
    auto fail = [&](const std::string& why) {
        throw ParseError("line " + std::to_string(line_no) + ": " + why);
    };

    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            int w = 0, h = 0;
            unsigned long long t = 0;
            if (std::sscanf(line.c_str(), "# evsr width=%d height=%d t_end=%llu", &w, &h, &t) ==
                3) {
                width = w;
                height = h;
                t_end = t;
                have_meta = true;
            }
            continue;
        }
        if (!have_header) {
            if (line != "t_us,x,y,p") fail("expected header 't_us,x,y,p', got '" + line + "'");
            have_header = true;
            continue;
        }
        unsigned long long t = 0;
        long x = 0, y = 0, p = 0;
        char extra = 0;
        const int got = std::sscanf(line.c_str(), "%llu,%ld,%ld,%ld%c", &t, &x, &y, &p, &extra);
        if (got != 4) fail("expected 4 comma-separated fields, got '" + line + "'");
        if (line[0] == '-') fail("timestamps must be non-negative");
        if (x < 1 || y < 1) fail("coordinates on disk are 1-based");
        if (p != 1 && p != -1) fail("polarity must be -1 or 1");
        events.push_back({static_cast<int>(x - 1), static_cast<int>(y - 1),
                          static_cast<Timestamp>(t), static_cast<int>(p)});
    }
    if (!have_header) throw ParseError("missing header line 't_us,x,y,p'");

    if (!have_meta) {
        for (const Event& e : events) {
            width = std::max(width, e.x + 1);
            height = std::max(height, e.y + 1);
            t_end = std::max(t_end, e.t);
        }
        if (events.empty()) {
            width = 1;
            height = 1;
        }
    }
    return validate_stream(std::move(events), {width, height}, t_end);
}

// ---------------------------------------------------------------------------
// Binary format
//
// magic "EVSR" | u16 version=1 | u16 reserved | u32 W | u32 H | u64 T_us |
// u64 count | count * { u64 t_us, u16 x, u16 y, i8 p, u8 pad } —
// little-endian throughout, coordinates 0-based.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw TruncatedFile("event file ends early");
    return v;
}

}  // namespace detail

inline void write_binary(const EventStream& stream, std::ostream& os) {
    if (stream.geometry.width > 0xffff || stream.geometry.height > 0xffff)
        throw Error("binary format stores 16-bit coordinates; geometry too large");
    os.write("EVSR", 4);
    detail::put<std::uint16_t>(os, 1);
    detail::put<std::uint16_t>(os, 0);
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(stream.geometry.width));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(stream.geometry.height));
    detail::put<std::uint64_t>(os, stream.t_end);
    detail::put<std::uint64_t>(os, stream.size());
    for (const Event& e : stream.events) {
        detail::put<std::uint64_t>(os, e.t);
        detail::put<std::uint16_t>(os, static_cast<std::uint16_t>(e.x));
        detail::put<std::uint16_t>(os, static_cast<std::uint16_t>(e.y));
        detail::put<std::int8_t>(os, static_cast<std::int8_t>(e.p));
        detail::put<std::uint8_t>(os, 0);
    }
}

inline EventStream read_binary(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "EVSR", 4) != 0)
        throw MagicMismatch("not an EVSR binary event file");
    const auto version = detail::get<std::uint16_t>(is);
    if (version != 1) throw ParseError("unsupported EVSR version " + std::to_string(version));
    detail::get<std::uint16_t>(is);  // reserved
    const auto w = detail::get<std::uint32_t>(is);
    const auto h = detail::get<std::uint32_t>(is);
    const auto t_end = detail::get<std::uint64_t>(is);
    const auto count = detail::get<std::uint64_t>(is);

    std::vector<Event> events;
    events.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto t = detail::get<std::uint64_t>(is);
        const auto x = detail::get<std::uint16_t>(is);
        const auto y = detail::get<std::uint16_t>(is);
        const auto p = detail::get<std::int8_t>(is);
        detail::get<std::uint8_t>(is);  // pad
        events.push_back({x, y, t, p});
    }
    return validate_stream(std::move(events), {static_cast<int>(w), static_cast<int>(h)}, t_end);
}

// ---------------------------------------------------------------------------
// Path-level entry points with format auto-detection
// ---------------------------------------------------------------------------

inline Format sniff(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path);
    char magic[4] = {0, 0, 0, 0};
    is.read(magic, 4);
    return std::memcmp(magic, "EVSR", 4) == 0 ? Format::binary : Format::text;
}

inline Format format_for_path(const std::string& path) {
    const auto dot = path.rfind('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    return (ext == "evsr" || ext == "bin") ? Format::binary : Format::text;
}

inline EventStream read(const std::string& path, Format format = Format::auto_detect) {
    if (format == Format::auto_detect) format = sniff(path);
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open " + path);
    return format == Format::binary ? read_binary(is) : read_text(is);
}

inline void write(const EventStream& stream, const std::string& path,
                  Format format = Format::auto_detect) {
    if (format == Format::auto_detect) format = format_for_path(path);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path + " for writing");
    if (format == Format::binary)
        write_binary(stream, os);
    else
        write_text(stream, os);
    if (!os) throw Error("write to " + path + " failed");
}

// ---------------------------------------------------------------------------
// Frame rendering
// ---------------------------------------------------------------------------

struct RenderSpec {
    enum class Mode { accumulate, polarity_color };
    Mode mode = Mode::accumulate;
    Timestamp window_start = 0;
    Timestamp window_end = 0;  ///< 0 means the whole stream
    bool window_empty_flag = false;  ///< set by render when the window had no events
};

/// Accumulate mode: the per-pixel signed polarity sum mapped affinely onto
/// [0,255] gray with zero at mid-gray (PGM). Polarity-color mode: positive
/// counts drive red, negative counts blue, over a mid-gray background (PPM).
inline void render(const EventStream& stream, RenderSpec& spec, const std::string& path) {
    const int w = stream.geometry.width;
    const int h = stream.geometry.height;
    std::vector<double> pos(static_cast<std::size_t>(w) * h, 0.0);
    std::vector<double> neg(static_cast<std::size_t>(w) * h, 0.0);
    const Timestamp t1 = spec.window_end ? spec.window_end : stream.t_end;
    std::size_t inside = 0;
    for (const Event& e : stream.events) {
        if (e.t < spec.window_start || e.t > t1) continue;
        ++inside;
        if (e.p > 0)
            pos[static_cast<std::size_t>(e.y) * w + e.x] += 1.0;
        else
            neg[static_cast<std::size_t>(e.y) * w + e.x] += 1.0;
    }
    spec.window_empty_flag = inside == 0 && !stream.empty();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open " + path + " for writing");

    if (spec.mode == RenderSpec::Mode::accumulate) {
        double max_abs = 0.0;
        for (std::size_t i = 0; i < pos.size(); ++i)
            max_abs = std::max(max_abs, std::abs(pos[i] - neg[i]));
        os << "P5\n" << w << " " << h << "\n255\n";
        for (std::size_t i = 0; i < pos.size(); ++i) {
            const double v = max_abs > 0 ? (pos[i] - neg[i]) / max_abs : 0.0;
            const int gray = static_cast<int>(128.0 + 127.0 * v + (v >= 0 ? 0.5 : -0.5));
            os.put(static_cast<char>(std::min(255, std::max(0, gray))));
        }
    } else {
        double max_count = 0.0;
        for (std::size_t i = 0; i < pos.size(); ++i)
            max_count = std::max({max_count, pos[i], neg[i]});
        os << "P6\n" << w << " " << h << "\n255\n";
        for (std::size_t i = 0; i < pos.size(); ++i) {
            int r = 128, g = 128, b = 128;
            if (max_count > 0) {
                r = static_cast<int>(128.0 + 127.0 * pos[i] / max_count + 0.5);
                b = static_cast<int>(128.0 + 127.0 * neg[i] / max_count + 0.5);
            }
            os.put(static_cast<char>(std::min(255, r)));
            os.put(static_cast<char>(std::min(255, g)));
            os.put(static_cast<char>(std::min(255, b)));
        }
    }
    if (!os) throw Error("write to " + path + " failed");
}

// ---------------------------------------------------------------------------
// Reports and training logs
// ---------------------------------------------------------------------------

inline void write_report(const Diagnostics& diag, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path + " for writing");
    for (const auto& [key, value] : diag.key_values()) os << key << ": " << value << "\n";
}

inline void write_train_log(const TrainLog& log, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path + " for writing");
    os << "step,loss,lr\n";
    for (const TrainRecord& r : log) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g\n", r.step, r.loss, r.lr);
        os << buf;
    }
}

}  // namespace evsr::io
