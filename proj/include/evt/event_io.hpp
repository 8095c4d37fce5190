#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace evt {

// A single polarity change at a sensor pixel. t is absolute microseconds.
struct Event {
    std::uint64_t t = 0;
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::uint8_t p = 0;  // 0 darkening, 1 brightening

    friend bool operator==(const Event&, const Event&) = default;
};

// Time-ordered events over a W x H sensor. Validated on construction and
// immutable afterwards.
class EventStream {
public:
    EventStream() = default;

    // Throws DataError naming the offending record index when the events are
    // out of bounds, have a polarity outside {0, 1}, or regress in time.
    EventStream(std::uint16_t width, std::uint16_t height, std::vector<Event> events,
                std::optional<std::int32_t> label = std::nullopt);

    std::uint16_t width() const { return width_; }
    std::uint16_t height() const { return height_; }
    std::span<const Event> events() const { return events_; }
    std::size_t size() const { return events_.size(); }
    bool empty() const { return events_.empty(); }
    const std::optional<std::int32_t>& label() const { return label_; }

    // Timestamp of the last event; 0 for an empty stream.
    std::uint64_t last_timestamp() const { return events_.empty() ? 0 : events_.back().t; }

    // Index range [first, last) of events with window_start <= t < window_end.
    std::pair<std::size_t, std::size_t> range(std::uint64_t window_start,
                                              std::uint64_t window_end) const;

    friend bool operator==(const EventStream&, const EventStream&) = default;

private:
    std::uint16_t width_ = 0;
    std::uint16_t height_ = 0;
    std::vector<Event> events_;
    std::optional<std::int32_t> label_;
};

enum class StreamFormat { binary, csv };

// EVT1 binary layout, all little-endian:
//   "EVT1" | version u16 = 1 | W u16 | H u16 | label i32 (-1 unlabeled) | count u64
//   count x { t u64 | x u16 | y u16 | p u8 | reserved u8 = 0 }
inline constexpr std::size_t kEvt1HeaderSize = 4 + 2 + 2 + 2 + 4 + 8;
inline constexpr std::size_t kEvt1RecordSize = 14;
inline constexpr std::uint16_t kEvt1Version = 1;

// Geometry for CSV input, which stores only `t,x,y,p` rows.
struct CsvGeometry {
    std::uint16_t width = 0;
    std::uint16_t height = 0;
    std::optional<std::int32_t> label;
};

std::vector<std::uint8_t> encode_binary(const EventStream& stream);
EventStream decode_binary(std::span<const std::uint8_t> bytes);

std::string encode_csv(const EventStream& stream);
EventStream decode_csv(std::string_view text, const CsvGeometry& geometry);

EventStream read_stream(const std::filesystem::path& path, StreamFormat format,
                        const CsvGeometry& geometry = {});
void write_stream(const EventStream& stream, const std::filesystem::path& path,
                  StreamFormat format);

// Picks the format from the extension: ".csv" is CSV, anything else EVT1.
StreamFormat format_from_path(const std::filesystem::path& path);

}  // namespace evt
