#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "evt/event_io.hpp"

namespace evt {

struct ReprConfig {
    std::uint64_t delta_t = 24'000;  // us
    int bins = 2;
    int patch_size = 6;
    double min_pixel_pct = 7.5;
    int min_patches = 16;
    std::uint64_t expansion_step = 0;  // us; 0 means "one more delta_t"

    std::uint64_t step() const { return expansion_step == 0 ? delta_t : expansion_step; }

    // Throws std::invalid_argument when a field is out of range.
    void validate() const;

    // Smallest pixel count that satisfies "at least m percent of P*P".
    int activation_threshold() const;

    int token_length() const { return patch_size * patch_size * bins * 2; }
    int grid_rows(int sensor_height) const { return sensor_height / patch_size; }
    int grid_cols(int sensor_width) const { return sensor_width / patch_size; }
};

// Per-window histogram F (H x W x B x 2) and its log-smoothed form
// F' = log(F + 1). Layout is row-major with polarity fastest:
// index = ((y * W + x) * B + bin) * 2 + p.
struct EventFrame {
    int height = 0;
    int width = 0;
    int bins = 0;
    std::uint64_t window_start = 0;
    std::uint64_t window_end = 0;
    std::vector<std::uint32_t> counts;
    std::vector<double> smoothed;

    std::size_t index(int y, int x, int bin, int p) const {
        return ((static_cast<std::size_t>(y) * width + x) * bins + bin) * 2 + p;
    }
    std::uint32_t count(int y, int x, int bin, int p) const { return counts[index(y, x, bin, p)]; }
};

// A flattened activated patch: pixel row-major inside the patch, then bin,
// then polarity. Length P*P*B*2.
struct PatchToken {
    std::vector<double> values;
    int grid_row = 0;
    int grid_col = 0;
};

struct WindowResult {
    std::vector<PatchToken> tokens;
    std::uint64_t window_start = 0;
    std::uint64_t window_end = 0;
    bool exhausted = false;
};

// Throws std::invalid_argument when window_end <= window_start.
EventFrame build_frame(const EventStream& stream, std::uint64_t window_start,
                       std::uint64_t window_end, const ReprConfig& cfg);

// Activated patches in grid row-major order. Trailing rows/columns that do
// not fill a whole patch are ignored.
std::vector<PatchToken> activated_patches(const EventFrame& frame, const ReprConfig& cfg);

WindowResult next_window(const EventStream& stream, std::uint64_t cursor, const ReprConfig& cfg);

// Single-consumer cursor over consecutive windows starting at t = 0.
class WindowIterator {
public:
    WindowIterator(const EventStream& stream, ReprConfig cfg);

    std::optional<WindowResult> next();

private:
    const EventStream* stream_;
    ReprConfig cfg_;
    std::uint64_t cursor_ = 0;
    bool done_ = false;
};

std::vector<WindowResult> collect_windows(const EventStream& stream, const ReprConfig& cfg);

}  // namespace evt
