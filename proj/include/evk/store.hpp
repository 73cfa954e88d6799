#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include <nlohmann/json.hpp>

#include "evk/core.hpp"
#include "evk/flow.hpp"
#include "evk/pgm.hpp"

namespace evk::store {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

enum class Codec : std::uint8_t { none = 0, deflate = 1, zstd = 2 };

inline const char* codec_name(Codec c) {
    switch (c) {
        case Codec::none: return "none";
        case Codec::deflate: return "deflate";
        case Codec::zstd: return "zstd";
    }
    return "?";
}

inline Codec codec_from_name(const std::string& name) {
    if (name == "none") return Codec::none;
    if (name == "deflate") return Codec::deflate;
    if (name == "zstd") return Codec::zstd;
    throw std::invalid_argument("unknown codec: " + name);
}

/// Precomputed timestamp/index tables. time_to_* entry m is the leftmost
/// index whose timestamp is >= m*1000 us; event_to_* entry i is the index of
/// the last gray frame / flow field starting at or before event i (-1 when
/// there is none).
struct TimeIndexMaps {
    std::vector<std::uint64_t> time_to_event;
    std::vector<std::uint64_t> time_to_gray;
    std::vector<std::uint64_t> time_to_flow;
    std::vector<std::int64_t> event_to_gray;
    std::vector<std::int64_t> event_to_flow;
};

struct WriteOptions {
    std::uint32_t chunk_size = 65536;
    Codec codec = Codec::deflate;
};

struct Container {
    std::filesystem::path path;
    SensorProps props;
    std::uint32_t chunk_size = 0;
    Codec codec = Codec::none;
};

// ---------------------------------------------------------------------------
// Binary primitives. Every payload block is framed as
//   u32 crc32(payload) | u32 payload_size | payload bytes
// where the payload is the codec-compressed raw array.

namespace detail {

constexpr std::uint16_t kFormatVersion = 1;

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
  public:
    explicit ByteReader(std::ifstream& in) : in_(in) {}

    std::uint16_t u16() { return static_cast<std::uint16_t>(byte() | (byte() << 8)); }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
        return v;
    }
    std::uint8_t u8() { return byte(); }

  private:
    std::uint8_t byte() {
        int c = in_.get();
        if (c == EOF) throw std::runtime_error("container: unexpected end of file");
        return static_cast<std::uint8_t>(c);
    }
    std::ifstream& in_;
};

inline std::vector<std::uint8_t> compress_bytes(Codec codec, const std::uint8_t* data,
                                                std::size_t n) {
    switch (codec) {
        case Codec::none:
            return std::vector<std::uint8_t>(data, data + n);
        case Codec::deflate: {
            uLongf bound = compressBound(static_cast<uLong>(n));
            std::vector<std::uint8_t> out(bound);
            if (compress2(out.data(), &bound, data, static_cast<uLong>(n), 6) != Z_OK)
                throw std::runtime_error("container: deflate compression failed");
            out.resize(bound);
            return out;
        }
        case Codec::zstd:
            throw std::runtime_error("container: codec zstd is not available in this build");
    }
    throw std::runtime_error("container: unknown codec");
}

inline std::vector<std::uint8_t> decompress_bytes(Codec codec,
                                                  const std::vector<std::uint8_t>& payload,
                                                  std::size_t raw_size) {
    switch (codec) {
        case Codec::none: {
            if (payload.size() != raw_size)
                throw std::runtime_error("container: stored block has wrong size");
            return payload;
        }
        case Codec::deflate: {
            std::vector<std::uint8_t> out(raw_size);
            uLongf dest_len = static_cast<uLongf>(raw_size);
            if (uncompress(out.data(), &dest_len, payload.data(),
                           static_cast<uLong>(payload.size())) != Z_OK ||
                dest_len != raw_size)
                throw std::runtime_error("container: deflate decompression failed");
            return out;
        }
        case Codec::zstd:
            throw std::runtime_error("container: codec zstd is not available in this build");
    }
    throw std::runtime_error("container: unknown codec");
}

inline void write_block(std::ofstream& out, Codec codec, const std::uint8_t* data,
                        std::size_t n) {
    const auto payload = compress_bytes(codec, data, n);
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, payload.data(), static_cast<uInt>(payload.size())));
    std::string header;
    put_u32(header, crc);
    put_u32(header, static_cast<std::uint32_t>(payload.size()));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
}

template <typename T>
void write_array_block(std::ofstream& out, Codec codec, const std::vector<T>& values) {
    static_assert(std::is_trivially_copyable_v<T>);
    write_block(out, codec, reinterpret_cast<const std::uint8_t*>(values.data()),
                values.size() * sizeof(T));
}

/// Reads a block at the current position and returns the decoded raw bytes.
inline std::vector<std::uint8_t> read_block(std::ifstream& in, Codec codec,
                                            std::size_t raw_size) {
    ByteReader r(in);
    const std::uint32_t crc_expected = r.u32();
    const std::uint32_t payload_size = r.u32();
    std::vector<std::uint8_t> payload(payload_size);
    in.read(reinterpret_cast<char*>(payload.data()), payload_size);
    if (!in) throw std::runtime_error("container: truncated block");
    const auto crc_actual = static_cast<std::uint32_t>(
        crc32(0L, payload.data(), static_cast<uInt>(payload.size())));
    if (crc_actual != crc_expected) throw std::runtime_error("container: chunk checksum mismatch");
    return decompress_bytes(codec, payload, raw_size);
}

template <typename T>
std::vector<T> read_array_block(std::ifstream& in, Codec codec, std::size_t count) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto raw = read_block(in, codec, count * sizeof(T));
    std::vector<T> values(count);
    std::memcpy(values.data(), raw.data(), raw.size());
    return values;
}

/// Advances past one block without decoding it; returns its file offset.
inline std::uint64_t skip_block(std::ifstream& in) {
    const auto offset = static_cast<std::uint64_t>(in.tellg());
    ByteReader r(in);
    r.u32();  // crc
    const std::uint32_t payload_size = r.u32();
    in.seekg(payload_size, std::ios::cur);
    if (!in) throw std::runtime_error("container: truncated block");
    return offset;
}

inline std::ifstream open_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("container: missing header: " + path.string());
    return in;
}

inline void expect_magic(std::ifstream& in, const char* magic, const char* file) {
    char buf[4];
    in.read(buf, 4);
    if (!in || std::memcmp(buf, magic, 4) != 0)
        throw std::runtime_error(std::string("container: bad magic in ") + file);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Index map construction

inline TimeIndexMaps build_maps(const EventStream& events, const std::vector<Timestamp>& gray_ts,
                                const std::vector<Timestamp>& flow_t0s) {
    TimeIndexMaps maps;
    const std::size_t n = events.size();
    const std::int64_t duration_ms =
        n == 0 ? 0 : events.ts.back() / kMicrosPerMilli + 1;

    maps.time_to_event.reserve(duration_ms + 1);
    maps.time_to_gray.reserve(duration_ms + 1);
    maps.time_to_flow.reserve(duration_ms + 1);
    for (std::int64_t m = 0; m <= duration_ms; ++m) {
        const Timestamp boundary = m * kMicrosPerMilli;
        maps.time_to_event.push_back(static_cast<std::uint64_t>(
            std::lower_bound(events.ts.begin(), events.ts.end(), boundary) - events.ts.begin()));
        maps.time_to_gray.push_back(static_cast<std::uint64_t>(
            std::lower_bound(gray_ts.begin(), gray_ts.end(), boundary) - gray_ts.begin()));
        maps.time_to_flow.push_back(static_cast<std::uint64_t>(
            std::lower_bound(flow_t0s.begin(), flow_t0s.end(), boundary) - flow_t0s.begin()));
    }

    maps.event_to_gray.reserve(n);
    maps.event_to_flow.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Timestamp t = events.ts[i];
        maps.event_to_gray.push_back(
            (std::upper_bound(gray_ts.begin(), gray_ts.end(), t) - gray_ts.begin()) - 1);
        maps.event_to_flow.push_back(
            (std::upper_bound(flow_t0s.begin(), flow_t0s.end(), t) - flow_t0s.begin()) - 1);
    }
    return maps;
}

// ---------------------------------------------------------------------------
// Writer

inline Container write_sequence(const EventStream& events, const GraySequence& grays,
                                const FlowSequence& flows, const SensorProps& props,
                                const std::filesystem::path& dir,
                                const WriteOptions& options = {},
                                const nlohmann::json& meta = nlohmann::json::object()) {
    namespace fs = std::filesystem;
    props.require_valid();
    if (options.chunk_size < 1)
        throw std::invalid_argument("write_sequence: chunk_size must be >= 1");

    const ValidationReport report = validate_stream(events, props);
    if (!report.ok())
        throw std::invalid_argument("write_sequence: invalid event stream: " +
                                    report.issues.front().invariant + " at index " +
                                    std::to_string(report.issues.front().index));

    for (std::size_t k = 0; k + 1 < grays.ts.size(); ++k)
        if (grays.ts[k + 1] <= grays.ts[k])
            throw std::invalid_argument("write_sequence: gray timestamps not increasing");
    if (grays.frames.size() != grays.ts.size())
        throw std::invalid_argument("write_sequence: gray frames/timestamps length mismatch");
    for (const auto& f : grays.frames)
        if (f.width != props.width || f.height != props.height)
            throw std::invalid_argument("write_sequence: gray frame shape mismatch");
    if (!flows.contiguous())
        throw std::invalid_argument("write_sequence: flow fields are not contiguous");
    for (const auto& f : flows.fields)
        if (f.width() != props.width || f.height() != props.height)
            throw std::invalid_argument("write_sequence: flow field shape mismatch");

    if (!events.empty()) {
        const Timestamp t_first = events.ts.front();
        const Timestamp t_last = events.ts.back();
        const auto gray_pad = static_cast<Timestamp>(1e6 / props.gray_rate_hz);
        for (Timestamp t : grays.ts)
            if (t < t_first - gray_pad || t > t_last + gray_pad)
                throw std::invalid_argument(
                    "write_sequence: gray timestamp outside the padded event extent");
        const auto flow_pad = static_cast<Timestamp>(1e6 / props.flow_rate_hz);
        for (const auto& f : flows.fields)
            if (f.t0 < t_first - flow_pad || f.t1 > t_last + flow_pad)
                throw std::invalid_argument(
                    "write_sequence: flow interval outside the padded event extent");
    }

    fs::create_directories(dir);
    const Codec codec = options.codec;
    const std::uint32_t chunk_size = options.chunk_size;
    const std::uint64_t n = events.size();

    {  // events.bin
        std::ofstream out(dir / "events.bin", std::ios::binary);
        if (!out) throw std::runtime_error("write_sequence: path not writable: " + dir.string());
        std::string header = "EVKZ";
        detail::put_u16(header, detail::kFormatVersion);
        header.push_back(static_cast<char>(codec));
        detail::put_u32(header, chunk_size);
        detail::put_u64(header, n);
        detail::put_u16(header, static_cast<std::uint16_t>(props.width));
        detail::put_u16(header, static_cast<std::uint16_t>(props.height));
        out.write(header.data(), static_cast<std::streamsize>(header.size()));

        for (std::uint64_t start = 0; start < n; start += chunk_size) {
            const std::uint64_t count = std::min<std::uint64_t>(chunk_size, n - start);
            std::vector<std::uint16_t> xs(events.xs.begin() + start,
                                          events.xs.begin() + start + count);
            std::vector<std::uint16_t> ys(events.ys.begin() + start,
                                          events.ys.begin() + start + count);
            std::vector<std::int64_t> ts_delta(count);
            ts_delta[0] = events.ts[start];
            for (std::uint64_t k = 1; k < count; ++k)
                ts_delta[k] = events.ts[start + k] - events.ts[start + k - 1];
            std::vector<std::uint8_t> ps(events.ps.begin() + start,
                                         events.ps.begin() + start + count);
            detail::write_array_block(out, codec, xs);
            detail::write_array_block(out, codec, ys);
            detail::write_array_block(out, codec, ts_delta);
            detail::write_array_block(out, codec, ps);
        }
        if (!out) throw std::runtime_error("write_sequence: write failed for events.bin");
    }

    {  // gray.bin
        std::ofstream out(dir / "gray.bin", std::ios::binary);
        std::string header = "EVKG";
        detail::put_u16(header, detail::kFormatVersion);
        header.push_back(static_cast<char>(codec));
        detail::put_u32(header, static_cast<std::uint32_t>(grays.size()));
        detail::put_u16(header, static_cast<std::uint16_t>(props.width));
        detail::put_u16(header, static_cast<std::uint16_t>(props.height));
        out.write(header.data(), static_cast<std::streamsize>(header.size()));
        detail::write_array_block(out, codec, grays.ts);
        for (const auto& frame : grays.frames) detail::write_array_block(out, codec, frame.data);
        if (!out) throw std::runtime_error("write_sequence: write failed for gray.bin");
    }

    {  // flow.bin
        std::ofstream out(dir / "flow.bin", std::ios::binary);
        std::string header = "EVKF";
        detail::put_u16(header, detail::kFormatVersion);
        header.push_back(static_cast<char>(codec));
        detail::put_u32(header, static_cast<std::uint32_t>(flows.size()));
        detail::put_u16(header, static_cast<std::uint16_t>(props.width));
        detail::put_u16(header, static_cast<std::uint16_t>(props.height));
        out.write(header.data(), static_cast<std::streamsize>(header.size()));
        std::vector<Timestamp> t0s, t1s;
        for (const auto& f : flows.fields) {
            t0s.push_back(f.t0);
            t1s.push_back(f.t1);
        }
        detail::write_array_block(out, codec, t0s);
        detail::write_array_block(out, codec, t1s);
        for (const auto& f : flows.fields) {
            detail::write_array_block(out, codec, f.u.data);
            detail::write_array_block(out, codec, f.v.data);
        }
        if (!out) throw std::runtime_error("write_sequence: write failed for flow.bin");
    }

    {  // maps.bin
        std::vector<Timestamp> gray_ts = grays.ts;
        std::vector<Timestamp> flow_t0s;
        for (const auto& f : flows.fields) flow_t0s.push_back(f.t0);
        const TimeIndexMaps maps = build_maps(events, gray_ts, flow_t0s);

        std::ofstream out(dir / "maps.bin", std::ios::binary);
        std::string header = "EVKM";
        detail::put_u16(header, detail::kFormatVersion);
        header.push_back(static_cast<char>(codec));
        out.write(header.data(), static_cast<std::streamsize>(header.size()));
        auto write_map = [&](const auto& values) {
            std::string len;
            detail::put_u64(len, values.size());
            out.write(len.data(), static_cast<std::streamsize>(len.size()));
            detail::write_array_block(out, codec, values);
        };
        write_map(maps.time_to_event);
        write_map(maps.time_to_gray);
        write_map(maps.time_to_flow);
        write_map(maps.event_to_gray);
        write_map(maps.event_to_flow);
        if (!out) throw std::runtime_error("write_sequence: write failed for maps.bin");
    }

    {  // props.json
        nlohmann::json j{{"width", props.width},
                         {"height", props.height},
                         {"event_clock_hz", props.event_clock_hz},
                         {"gray_rate_hz", props.gray_rate_hz},
                         {"flow_rate_hz", props.flow_rate_hz},
                         {"threshold_pos", props.threshold_pos},
                         {"threshold_neg", props.threshold_neg},
                         {"codec", codec_name(codec)},
                         {"meta", meta}};
        std::ofstream out(dir / "props.json");
        out << j.dump(2) << "\n";
        if (!out) throw std::runtime_error("write_sequence: write failed for props.json");
    }

    return Container{dir, props, chunk_size, codec};
}

// ---------------------------------------------------------------------------
// Reader

struct GrayFrameAt {
    std::size_t index = 0;
    Timestamp ts = 0;
    GrayImage image;
};

struct Slice {
    EventStream events;
    std::optional<GrayFrameAt> gray_start;
    std::optional<GrayFrameAt> gray_end;
    std::optional<FlowField> flow;
    Timestamp t0_us = 0;
    Timestamp t1_us = 0;
};

class Reader {
  public:
    explicit Reader(const std::filesystem::path& dir) : dir_(dir) {
        namespace fs = std::filesystem;

        {  // props.json
            std::ifstream in(dir / "props.json");
            if (!in) throw std::runtime_error("container: missing header: no props.json in " +
                                              dir.string());
            props_json_ = nlohmann::json::parse(in);
            props_.width = props_json_.at("width").get<int>();
            props_.height = props_json_.at("height").get<int>();
            props_.event_clock_hz = props_json_.at("event_clock_hz").get<double>();
            props_.gray_rate_hz = props_json_.at("gray_rate_hz").get<double>();
            props_.flow_rate_hz = props_json_.at("flow_rate_hz").get<double>();
            props_.threshold_pos = props_json_.at("threshold_pos").get<double>();
            props_.threshold_neg = props_json_.at("threshold_neg").get<double>();
        }

        {  // events.bin: header + chunk directory; payload stays on disk
            auto in = detail::open_binary(dir / "events.bin");
            detail::expect_magic(in, "EVKZ", "events.bin");
            detail::ByteReader r(in);
            const std::uint16_t version = r.u16();
            if (version != detail::kFormatVersion)
                throw std::runtime_error("container: unsupported format version");
            const std::uint8_t codec_id = r.u8();
            if (codec_id > static_cast<std::uint8_t>(Codec::zstd))
                throw std::runtime_error("container: unknown codec");
            codec_ = static_cast<Codec>(codec_id);
            chunk_size_ = r.u32();
            n_events_ = r.u64();
            r.u16();  // width (authoritative copy lives in props.json)
            r.u16();  // height
            const std::uint64_t num_chunks =
                n_events_ == 0 ? 0 : (n_events_ + chunk_size_ - 1) / chunk_size_;
            chunk_offsets_.reserve(num_chunks);
            for (std::uint64_t c = 0; c < num_chunks; ++c) {
                chunk_offsets_.push_back(static_cast<std::uint64_t>(in.tellg()));
                for (int b = 0; b < 4; ++b) detail::skip_block(in);
            }
        }

        {  // gray.bin: timestamps eager, frames lazy
            auto in = detail::open_binary(dir / "gray.bin");
            detail::expect_magic(in, "EVKG", "gray.bin");
            detail::ByteReader r(in);
            if (r.u16() != detail::kFormatVersion)
                throw std::runtime_error("container: unsupported format version");
            r.u8();
            const std::uint32_t count = r.u32();
            r.u16();
            r.u16();
            gray_ts_ = detail::read_array_block<Timestamp>(in, codec_, count);
            gray_offsets_.reserve(count);
            for (std::uint32_t g = 0; g < count; ++g) gray_offsets_.push_back(detail::skip_block(in));
        }

        {  // flow.bin: intervals eager, fields lazy
            auto in = detail::open_binary(dir / "flow.bin");
            detail::expect_magic(in, "EVKF", "flow.bin");
            detail::ByteReader r(in);
            if (r.u16() != detail::kFormatVersion)
                throw std::runtime_error("container: unsupported format version");
            r.u8();
            const std::uint32_t count = r.u32();
            r.u16();
            r.u16();
            flow_t0s_ = detail::read_array_block<Timestamp>(in, codec_, count);
            flow_t1s_ = detail::read_array_block<Timestamp>(in, codec_, count);
            flow_offsets_.reserve(count);
            for (std::uint32_t k = 0; k < count; ++k) {
                flow_offsets_.push_back(static_cast<std::uint64_t>(in.tellg()));
                detail::skip_block(in);
                detail::skip_block(in);
            }
        }

        {  // maps.bin
            auto in = detail::open_binary(dir / "maps.bin");
            detail::expect_magic(in, "EVKM", "maps.bin");
            detail::ByteReader r(in);
            if (r.u16() != detail::kFormatVersion)
                throw std::runtime_error("container: unsupported format version");
            r.u8();
            auto read_map = [&](auto& values) {
                detail::ByteReader rr(in);
                const std::uint64_t len = rr.u64();
                using T = typename std::decay_t<decltype(values)>::value_type;
                values = detail::read_array_block<T>(in, codec_, len);
            };
            read_map(maps_.time_to_event);
            read_map(maps_.time_to_gray);
            read_map(maps_.time_to_flow);
            read_map(maps_.event_to_gray);
            read_map(maps_.event_to_flow);
        }
    }

    Reader(const Reader&) = delete;
    Reader& operator=(const Reader&) = delete;

    const SensorProps& props() const { return props_; }
    const nlohmann::json& props_json() const { return props_json_; }
    const TimeIndexMaps& maps() const { return maps_; }
    Codec codec() const { return codec_; }
    std::uint32_t chunk_size() const { return chunk_size_; }
    std::uint64_t num_events() const { return n_events_; }
    std::size_t num_gray() const { return gray_ts_.size(); }
    std::size_t num_flow() const { return flow_t0s_.size(); }
    const std::vector<Timestamp>& gray_timestamps() const { return gray_ts_; }
    const std::vector<Timestamp>& flow_starts() const { return flow_t0s_; }
    const std::vector<Timestamp>& flow_ends() const { return flow_t1s_; }

    /// Whole-sequence duration in milliseconds; 1 + floor of the last event
    /// timestamp, so the final events fall inside the last millisecond.
    std::int64_t duration_ms() const {
        return n_events_ == 0 ? 0 : static_cast<std::int64_t>(maps_.time_to_event.size()) - 1;
    }

    std::uint64_t chunks_decompressed() const { return chunks_decompressed_.load(); }

    /// Events with i0 <= index < i1; touches only the chunks that overlap.
    EventStream read_events(std::uint64_t i0, std::uint64_t i1) const {
        if (i0 > i1 || i1 > n_events_)
            throw std::out_of_range("read_events: index range out of range");
        EventStream out;
        if (i0 == i1) return out;
        out.reserve(i1 - i0);
        const std::uint64_t c0 = i0 / chunk_size_;
        const std::uint64_t c1 = (i1 - 1) / chunk_size_;
        for (std::uint64_t c = c0; c <= c1; ++c) {
            EventStream chunk = decode_chunk(c);
            const std::uint64_t base = c * chunk_size_;
            const std::uint64_t lo = std::max(i0, base) - base;
            const std::uint64_t hi = std::min(i1, base + chunk.size()) - base;
            for (std::uint64_t k = lo; k < hi; ++k)
                out.push_back(chunk.xs[k], chunk.ys[k], chunk.ts[k], chunk.ps[k] != 0);
        }
        return out;
    }

    EventStream read_all_events() const { return read_events(0, n_events_); }

    GrayImage gray_frame(std::size_t g) const {
        if (g >= gray_offsets_.size()) throw std::out_of_range("gray_frame: index out of range");
        auto in = detail::open_binary(dir_ / "gray.bin");
        in.seekg(static_cast<std::streamoff>(gray_offsets_[g]));
        GrayImage img(props_.width, props_.height);
        img.data = detail::read_array_block<std::uint8_t>(in, codec_, img.size());
        return img;
    }

    GraySequence read_all_gray() const {
        GraySequence out;
        out.ts = gray_ts_;
        for (std::size_t g = 0; g < gray_ts_.size(); ++g) out.frames.push_back(gray_frame(g));
        return out;
    }

    FlowField flow_field(std::size_t k) const {
        if (k >= flow_offsets_.size()) throw std::out_of_range("flow_field: index out of range");
        auto in = detail::open_binary(dir_ / "flow.bin");
        in.seekg(static_cast<std::streamoff>(flow_offsets_[k]));
        FlowField field(props_.width, props_.height, flow_t0s_[k], flow_t1s_[k]);
        field.u.data = detail::read_array_block<double>(in, codec_, field.u.size());
        field.v.data = detail::read_array_block<double>(in, codec_, field.v.size());
        return field;
    }

    FlowSequence read_all_flow() const {
        FlowSequence out;
        for (std::size_t k = 0; k < flow_t0s_.size(); ++k) out.fields.push_back(flow_field(k));
        return out;
    }

    Slice slice_by_time(std::int64_t t0_ms, std::int64_t t1_ms) const {
        if (t0_ms < 0 || t0_ms >= t1_ms || t1_ms > duration_ms())
            throw std::out_of_range("slice_by_time: interval out of range");
        Slice slice;
        slice.t0_us = t0_ms * kMicrosPerMilli;
        slice.t1_us = t1_ms * kMicrosPerMilli;
        slice.events = read_events(maps_.time_to_event[t0_ms], maps_.time_to_event[t1_ms]);
        attach_gray_pair(slice);
        slice.flow = flow_between(slice.t0_us, slice.t1_us);
        return slice;
    }

    Slice slice_by_event_index(std::uint64_t i0, std::uint64_t i1) const {
        if (i0 >= i1 || i1 > n_events_)
            throw std::out_of_range(i0 == i1 ? "slice_by_event_index: empty range"
                                             : "slice_by_event_index: index out of range");
        Slice slice;
        slice.events = read_events(i0, i1);
        slice.t0_us = slice.events.ts.front();
        slice.t1_us = slice.events.ts.back();
        const std::int64_t g0 = maps_.event_to_gray[i0];
        const std::int64_t g1 = maps_.event_to_gray[i1 - 1] + 1;
        if (g0 >= 0) slice.gray_start = make_gray_at(static_cast<std::size_t>(g0));
        if (g1 >= 0 && g1 < static_cast<std::int64_t>(gray_ts_.size()))
            slice.gray_end = make_gray_at(static_cast<std::size_t>(g1));
        if (slice.t1_us > slice.t0_us) slice.flow = flow_between(slice.t0_us, slice.t1_us);
        return slice;
    }

    Slice slice_by_gray_index(std::size_t g0, std::size_t g1) const {
        if (g0 >= g1 || g1 >= gray_ts_.size())
            throw std::out_of_range("slice_by_gray_index: index out of range");
        Slice slice;
        slice.t0_us = gray_ts_[g0];
        slice.t1_us = gray_ts_[g1];
        slice.events = read_events(find_event_index(slice.t0_us), find_event_index(slice.t1_us));
        slice.gray_start = make_gray_at(g0);
        slice.gray_end = make_gray_at(g1);
        slice.flow = flow_between(slice.t0_us, slice.t1_us);
        return slice;
    }

    /// Leftmost event index with ts >= t_us, resolved through the millisecond
    /// map and a search within the bracketing chunk range.
    std::uint64_t find_event_index(Timestamp t_us) const {
        if (n_events_ == 0) return 0;
        if (t_us <= 0) return 0;
        const std::int64_t m = std::min<std::int64_t>(t_us / kMicrosPerMilli, duration_ms());
        std::uint64_t lo = maps_.time_to_event[m];
        std::uint64_t hi =
            m + 1 <= duration_ms() ? maps_.time_to_event[m + 1] : n_events_;
        if (t_us > static_cast<Timestamp>(duration_ms()) * kMicrosPerMilli) return n_events_;
        if (lo >= hi) return lo;
        const EventStream window = read_events(lo, hi);
        const auto it = std::lower_bound(window.ts.begin(), window.ts.end(), t_us);
        return lo + static_cast<std::uint64_t>(it - window.ts.begin());
    }

    /// Flow composed over the overlap of [a, b] with the flow channel, with
    /// boundary fields rescaled to partial intervals; nullopt if no overlap.
    std::optional<FlowField> flow_between(Timestamp a, Timestamp b) const {
        std::vector<FlowField> clips;
        for (std::size_t k = 0; k < flow_t0s_.size(); ++k) {
            if (flow_t1s_[k] <= a || flow_t0s_[k] >= b) continue;
            FlowField field = flow_field(k);
            const Timestamp c0 = std::max(field.t0, a);
            const Timestamp c1 = std::min(field.t1, b);
            clips.push_back(c0 == field.t0 && c1 == field.t1 ? std::move(field)
                                                             : flow::scale_flow(field, c0, c1));
        }
        if (clips.empty()) return std::nullopt;
        return flow::accumulate(clips);
    }

  private:
    GrayFrameAt make_gray_at(std::size_t g) const { return {g, gray_ts_[g], gray_frame(g)}; }

    void attach_gray_pair(Slice& slice) const {
        // last frame at or before the slice start
        const auto it0 = std::upper_bound(gray_ts_.begin(), gray_ts_.end(), slice.t0_us);
        if (it0 != gray_ts_.begin())
            slice.gray_start = make_gray_at(static_cast<std::size_t>(it0 - gray_ts_.begin()) - 1);
        // first frame at or after the slice end
        const auto it1 = std::lower_bound(gray_ts_.begin(), gray_ts_.end(), slice.t1_us);
        if (it1 != gray_ts_.end())
            slice.gray_end = make_gray_at(static_cast<std::size_t>(it1 - gray_ts_.begin()));
    }

    EventStream decode_chunk(std::uint64_t c) const {
        const std::uint64_t base = c * chunk_size_;
        const std::uint64_t count = std::min<std::uint64_t>(chunk_size_, n_events_ - base);
        auto in = detail::open_binary(dir_ / "events.bin");
        in.seekg(static_cast<std::streamoff>(chunk_offsets_[c]));
        EventStream out;
        out.xs = detail::read_array_block<std::uint16_t>(in, codec_, count);
        out.ys = detail::read_array_block<std::uint16_t>(in, codec_, count);
        const auto deltas = detail::read_array_block<std::int64_t>(in, codec_, count);
        out.ts.resize(count);
        Timestamp t = 0;
        for (std::uint64_t k = 0; k < count; ++k) {
            t = k == 0 ? deltas[0] : t + deltas[k];
            out.ts[k] = t;
        }
        out.ps = detail::read_array_block<std::uint8_t>(in, codec_, count);
        chunks_decompressed_.fetch_add(1, std::memory_order_relaxed);
        return out;
    }

    std::filesystem::path dir_;
    nlohmann::json props_json_;
    SensorProps props_;
    Codec codec_ = Codec::none;
    std::uint32_t chunk_size_ = 0;
    std::uint64_t n_events_ = 0;
    std::vector<std::uint64_t> chunk_offsets_;
    std::vector<Timestamp> gray_ts_;
    std::vector<std::uint64_t> gray_offsets_;
    std::vector<Timestamp> flow_t0s_;
    std::vector<Timestamp> flow_t1s_;
    std::vector<std::uint64_t> flow_offsets_;
    TimeIndexMaps maps_;
    mutable std::atomic<std::uint64_t> chunks_decompressed_{0};
};

inline Reader open(const std::filesystem::path& dir) { return Reader(dir); }

// ---------------------------------------------------------------------------
// Iteration

struct Stride {
    enum class Kind { events, millis, gray_frames };
    Kind kind;
    std::uint64_t n;

    static Stride events(std::uint64_t n) { return {Kind::events, n}; }
    static Stride millis(std::uint64_t n) { return {Kind::millis, n}; }
    static Stride gray_frames(std::uint64_t n) { return {Kind::gray_frames, n}; }
};

/// Yields consecutive, non-overlapping slices covering the sequence; the last
/// slice may be short.
class SliceIterator {
  public:
    SliceIterator(const Reader& reader, Stride stride) : reader_(reader), stride_(stride) {
        if (stride.n < 1) throw std::invalid_argument("iterate: stride must be positive");
        switch (stride.kind) {
            case Stride::Kind::events:
                limit_ = reader.num_events();
                break;
            case Stride::Kind::millis:
                limit_ = static_cast<std::uint64_t>(reader.duration_ms());
                break;
            case Stride::Kind::gray_frames:
                limit_ = reader.num_gray() > 0 ? reader.num_gray() - 1 : 0;
                break;
        }
    }

    std::size_t size() const {
        return limit_ == 0 ? 0 : static_cast<std::size_t>((limit_ + stride_.n - 1) / stride_.n);
    }

    std::optional<Slice> next() {
        if (cursor_ >= limit_) return std::nullopt;
        const std::uint64_t lo = cursor_;
        const std::uint64_t hi = std::min(limit_, cursor_ + stride_.n);
        cursor_ = hi;
        switch (stride_.kind) {
            case Stride::Kind::events:
                return reader_.slice_by_event_index(lo, hi);
            case Stride::Kind::millis:
                return reader_.slice_by_time(static_cast<std::int64_t>(lo),
                                             static_cast<std::int64_t>(hi));
            case Stride::Kind::gray_frames:
                return reader_.slice_by_gray_index(static_cast<std::size_t>(lo),
                                                   static_cast<std::size_t>(hi));
        }
        return std::nullopt;
    }

    void reset() { cursor_ = 0; }

  private:
    const Reader& reader_;
    Stride stride_;
    std::uint64_t limit_ = 0;
    std::uint64_t cursor_ = 0;
};

inline SliceIterator iterate(const Reader& reader, Stride stride) {
    return SliceIterator(reader, stride);
}

// ---------------------------------------------------------------------------
// Raw flow interchange file (for import_csv)

inline void write_flow_file(const std::filesystem::path& path, const FlowSequence& flows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_flow_file: cannot open " + path.string());
    std::string header = "EVFL";
    detail::put_u32(header, static_cast<std::uint32_t>(flows.size()));
    const int w = flows.empty() ? 0 : flows.fields.front().width();
    const int h = flows.empty() ? 0 : flows.fields.front().height();
    detail::put_u16(header, static_cast<std::uint16_t>(w));
    detail::put_u16(header, static_cast<std::uint16_t>(h));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& f : flows.fields) {
        std::string ts;
        detail::put_u64(ts, static_cast<std::uint64_t>(f.t0));
        detail::put_u64(ts, static_cast<std::uint64_t>(f.t1));
        out.write(ts.data(), static_cast<std::streamsize>(ts.size()));
        out.write(reinterpret_cast<const char*>(f.u.data.data()),
                  static_cast<std::streamsize>(f.u.data.size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(f.v.data.data()),
                  static_cast<std::streamsize>(f.v.data.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("write_flow_file: write failed");
}

inline FlowSequence read_flow_file(const std::filesystem::path& path) {
    auto in = detail::open_binary(path);
    detail::expect_magic(in, "EVFL", path.string().c_str());
    detail::ByteReader r(in);
    const std::uint32_t count = r.u32();
    const int w = r.u16();
    const int h = r.u16();
    FlowSequence out;
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto t0 = static_cast<Timestamp>(r.u64());
        const auto t1 = static_cast<Timestamp>(r.u64());
        FlowField field(w, h, t0, t1);
        in.read(reinterpret_cast<char*>(field.u.data.data()),
                static_cast<std::streamsize>(field.u.data.size() * sizeof(double)));
        in.read(reinterpret_cast<char*>(field.v.data.data()),
                static_cast<std::streamsize>(field.v.data.size() * sizeof(double)));
        if (!in) throw std::runtime_error("read_flow_file: truncated file");
        out.fields.push_back(std::move(field));
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV import

/// Parses a t_us,x,y,p CSV (polarity in {0,1} or {-1,1}; an optional header
/// row is skipped) and writes a container identical to write_sequence on the
/// parsed arrays. Gray frames come from <t_us>.pgm files in grays_dir; flows
/// from an EVFL file. Either auxiliary source may be empty.
inline Container import_csv(const std::filesystem::path& events_csv,
                            const std::filesystem::path& grays_dir,
                            const std::filesystem::path& flows_file,
                            const std::filesystem::path& props_json,
                            const std::filesystem::path& out_dir,
                            const WriteOptions& options = {}) {
    namespace fs = std::filesystem;

    std::ifstream props_in(props_json);
    if (!props_in) throw std::runtime_error("import_csv: cannot open " + props_json.string());
    const nlohmann::json pj = nlohmann::json::parse(props_in);
    SensorProps props;
    props.width = pj.at("width").get<int>();
    props.height = pj.at("height").get<int>();
    props.event_clock_hz = pj.at("event_clock_hz").get<double>();
    props.gray_rate_hz = pj.at("gray_rate_hz").get<double>();
    props.flow_rate_hz = pj.at("flow_rate_hz").get<double>();
    props.threshold_pos = pj.at("threshold_pos").get<double>();
    props.threshold_neg = pj.at("threshold_neg").get<double>();
    const nlohmann::json meta = pj.contains("meta") ? pj.at("meta") : nlohmann::json::object();

    std::ifstream in(events_csv);
    if (!in) throw std::runtime_error("import_csv: cannot open " + events_csv.string());
    EventStream events;
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& why) {
        throw std::runtime_error("import_csv: line " + std::to_string(line_no) + ": " + why);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        if (line_no == 1 && line.find_first_not_of("0123456789-+, \r\t") != std::string::npos)
            continue;  // header row
        std::istringstream row(line);
        std::string cell;
        long long values[4];
        for (int c = 0; c < 4; ++c) {
            if (!std::getline(row, cell, ',')) fail("expected 4 columns t_us,x,y,p");
            try {
                values[c] = std::stoll(cell);
            } catch (const std::exception&) {
                fail("cannot parse \"" + cell + "\" as an integer");
            }
        }
        const long long t = values[0], x = values[1], y = values[2], p = values[3];
        if (t < 0) fail("negative timestamp");
        if (!events.ts.empty() && t < events.ts.back()) fail("timestamps not sorted");
        if (x < 0 || x >= props.width) fail("x out of range");
        if (y < 0 || y >= props.height) fail("y out of range");
        if (p != 0 && p != 1 && p != -1) fail("polarity must be in {0,1} or {-1,1}");
        events.push_back(static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                         static_cast<Timestamp>(t), p == 1);
    }

    GraySequence grays;
    if (!grays_dir.empty() && fs::exists(grays_dir)) {
        std::vector<std::pair<Timestamp, fs::path>> files;
        for (const auto& entry : fs::directory_iterator(grays_dir)) {
            if (entry.path().extension() != ".pgm") continue;
            const std::string stem = entry.path().stem().string();
            if (stem.empty() || stem.find_first_not_of("0123456789") != std::string::npos)
                continue;  // frames are named by their timestamp
            files.emplace_back(static_cast<Timestamp>(std::stoll(stem)), entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& [t, file] : files) {
            grays.ts.push_back(t);
            grays.frames.push_back(read_pgm(file));
        }
    }

    FlowSequence flows;
    if (!flows_file.empty() && fs::exists(flows_file)) flows = read_flow_file(flows_file);

    return write_sequence(events, grays, flows, props, out_dir, options, meta);
}

}  // namespace evk::store
