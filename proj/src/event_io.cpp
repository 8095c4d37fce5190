#include "evt/event_io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iterator>
#include <sstream>

#include "evt/error.hpp"

namespace evt {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::uint8_t>(u & 0xFFu));
        u = static_cast<U>(u >> 8);
    }
}

template <typename T>
T get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        u = static_cast<U>(u | (static_cast<U>(bytes[offset + i]) << (8 * i)));
    }
    return static_cast<T>(u);
}

std::string record_error(std::string_view what, std::size_t index) {
    std::ostringstream os;
    os << what << " at index " << index;
    return os.str();
}

}  // namespace

EventStream::EventStream(std::uint16_t width, std::uint16_t height, std::vector<Event> events,
                         std::optional<std::int32_t> label)
    : width_(width), height_(height), events_(std::move(events)), label_(label) {
    for (std::size_t i = 0; i < events_.size(); ++i) {
        const Event& e = events_[i];
        if (e.x >= width_ || e.y >= height_) {
            throw DataError(record_error("coordinate out of range", i));
        }
        if (e.p > 1) {
            throw DataError(record_error("polarity not in {0,1}", i));
        }
        if (i > 0 && e.t < events_[i - 1].t) {
            throw DataError(record_error("timestamp regression", i));
        }
    }
}

std::pair<std::size_t, std::size_t> EventStream::range(std::uint64_t window_start,
                                                       std::uint64_t window_end) const {
    auto by_time = [](const Event& e, std::uint64_t t) { return e.t < t; };
    auto first = std::lower_bound(events_.begin(), events_.end(), window_start, by_time);
    auto last = std::lower_bound(first, events_.end(), window_end, by_time);
    return {static_cast<std::size_t>(first - events_.begin()),
            static_cast<std::size_t>(last - events_.begin())};
}

std::vector<std::uint8_t> encode_binary(const EventStream& stream) {
    std::vector<std::uint8_t> out;
    out.reserve(kEvt1HeaderSize + kEvt1RecordSize * stream.size());
    out.insert(out.end(), {0x45, 0x56, 0x54, 0x31});
    put_le<std::uint16_t>(out, kEvt1Version);
    put_le<std::uint16_t>(out, stream.width());
    put_le<std::uint16_t>(out, stream.height());
    put_le<std::int32_t>(out, stream.label().value_or(-1));
    put_le<std::uint64_t>(out, stream.size());
    for (const Event& e : stream.events()) {
        put_le<std::uint64_t>(out, e.t);
        put_le<std::uint16_t>(out, e.x);
        put_le<std::uint16_t>(out, e.y);
        out.push_back(e.p);
        out.push_back(0);
    }
    return out;
}

EventStream decode_binary(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kEvt1HeaderSize) {
        throw DataError("truncated EVT1 header");
    }
    if (bytes[0] != 0x45 || bytes[1] != 0x56 || bytes[2] != 0x54 || bytes[3] != 0x31) {
        throw DataError("bad magic, expected EVT1");
    }
    const auto version = get_le<std::uint16_t>(bytes, 4);
    if (version != kEvt1Version) {
        throw DataError("unsupported EVT1 version " + std::to_string(version));
    }
    const auto width = get_le<std::uint16_t>(bytes, 6);
    const auto height = get_le<std::uint16_t>(bytes, 8);
    const auto label = get_le<std::int32_t>(bytes, 10);
    const auto count = get_le<std::uint64_t>(bytes, 14);
    if (label < -1) {
        throw DataError("malformed EVT1 header: label " + std::to_string(label));
    }
    const std::size_t body = bytes.size() - kEvt1HeaderSize;
    if (count > body / kEvt1RecordSize) {
        throw DataError("truncated EVT1 file: header declares " + std::to_string(count) +
                        " events, body holds " + std::to_string(body / kEvt1RecordSize));
    }
    if (body != count * kEvt1RecordSize) {
        throw DataError("trailing bytes after EVT1 records");
    }

    std::vector<Event> events(count);
    std::size_t offset = kEvt1HeaderSize;
    for (std::size_t i = 0; i < count; ++i, offset += kEvt1RecordSize) {
        Event& e = events[i];
        e.t = get_le<std::uint64_t>(bytes, offset);
        e.x = get_le<std::uint16_t>(bytes, offset + 8);
        e.y = get_le<std::uint16_t>(bytes, offset + 10);
        e.p = bytes[offset + 12];
        if (bytes[offset + 13] != 0) {
            throw DataError(record_error("nonzero reserved byte", i));
        }
    }
    std::optional<std::int32_t> maybe_label;
    if (label >= 0) maybe_label = label;
    return EventStream(width, height, std::move(events), maybe_label);
}

std::string encode_csv(const EventStream& stream) {
    std::string out = "t,x,y,p\n";
    out.reserve(out.size() + stream.size() * 20);
    for (const Event& e : stream.events()) {
        out += std::to_string(e.t);
        out += ',';
        out += std::to_string(e.x);
        out += ',';
        out += std::to_string(e.y);
        out += ',';
        out += std::to_string(static_cast<int>(e.p));
        out += '\n';
    }
    return out;
}

EventStream decode_csv(std::string_view text, const CsvGeometry& geometry) {
    std::vector<Event> events;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (!header_seen) {
            if (line != "t,x,y,p") {
                throw DataError("malformed CSV header, expected 't,x,y,p'");
            }
            header_seen = true;
            continue;
        }
        if (line.empty()) continue;

        std::uint64_t fields[4] = {};
        const char* cur = line.data();
        const char* stop = line.data() + line.size();
        for (int f = 0; f < 4; ++f) {
            auto [ptr, ec] = std::from_chars(cur, stop, fields[f]);
            const bool last = f == 3;
            if (ec != std::errc() || (last ? ptr != stop : (ptr == stop || *ptr != ','))) {
                throw DataError(record_error("malformed CSV record", events.size()));
            }
            cur = last ? ptr : ptr + 1;
        }
        const std::size_t index = events.size();
        if (fields[1] >= geometry.width || fields[2] >= geometry.height) {
            throw DataError(record_error("coordinate out of range", index));
        }
        if (fields[3] > 1) {
            throw DataError(record_error("polarity not in {0,1}", index));
        }
        events.push_back(Event{fields[0], static_cast<std::uint16_t>(fields[1]),
                               static_cast<std::uint16_t>(fields[2]),
                               static_cast<std::uint8_t>(fields[3])});
    }
    if (!header_seen) {
        throw DataError("malformed CSV header, expected 't,x,y,p'");
    }
    return EventStream(geometry.width, geometry.height, std::move(events), geometry.label);
}

EventStream read_stream(const std::filesystem::path& path, StreamFormat format,
                        const CsvGeometry& geometry) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (format == StreamFormat::binary) {
        return decode_binary(bytes);
    }
    return decode_csv(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                      geometry);
}

void write_stream(const EventStream& stream, const std::filesystem::path& path,
                  StreamFormat format) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    if (format == StreamFormat::binary) {
        const auto bytes = encode_binary(stream);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    } else {
        const auto text = encode_csv(stream);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
    }
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

StreamFormat format_from_path(const std::filesystem::path& path) {
    return path.extension() == ".csv" ? StreamFormat::csv : StreamFormat::binary;
}

}  // namespace evt
