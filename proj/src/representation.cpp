#include "evt/representation.hpp"

#include <cmath>
#include <stdexcept>

namespace evt {

void ReprConfig::validate() const {
    if (delta_t == 0) throw std::invalid_argument("delta_t must be positive");
    if (bins < 1) throw std::invalid_argument("bins must be >= 1");
    if (patch_size < 1) throw std::invalid_argument("patch_size must be >= 1");
    if (!(min_pixel_pct >= 0.0 && min_pixel_pct <= 100.0)) {
        throw std::invalid_argument("min_pixel_pct must be in [0, 100]");
    }
    if (min_patches < 0) throw std::invalid_argument("min_patches must be >= 0");
}

int ReprConfig::activation_threshold() const {
    const double area = static_cast<double>(patch_size) * patch_size;
    // The epsilon absorbs representation error in m (e.g. 7.5 * 36 / 100).
    return static_cast<int>(std::ceil(min_pixel_pct * area / 100.0 - 1e-9));
}

EventFrame build_frame(const EventStream& stream, std::uint64_t window_start,
                       std::uint64_t window_end, const ReprConfig& cfg) {
    if (window_end <= window_start) {
        throw std::invalid_argument("inverted window: end must exceed start");
    }
    EventFrame frame;
    frame.height = stream.height();
    frame.width = stream.width();
    frame.bins = cfg.bins;
    frame.window_start = window_start;
    frame.window_end = window_end;
    const std::size_t size = static_cast<std::size_t>(frame.height) * frame.width * cfg.bins * 2;
    frame.counts.assign(size, 0);
    frame.smoothed.assign(size, 0.0);

    const auto [first, last] = stream.range(window_start, window_end);
    const auto events = stream.events();
    const std::uint64_t span = window_end - window_start;
    const auto bins = static_cast<std::uint64_t>(cfg.bins);
    for (std::size_t i = first; i < last; ++i) {
        const Event& e = events[i];
        const unsigned __int128 scaled = static_cast<unsigned __int128>(e.t - window_start) * bins;
        const auto bin = static_cast<int>(std::min<std::uint64_t>(
            static_cast<std::uint64_t>(scaled / span), bins - 1));
        ++frame.counts[frame.index(e.y, e.x, bin, e.p)];
    }

    const auto n = static_cast<std::ptrdiff_t>(size);
#pragma omp parallel for schedule(static) if (n > (1 << 16))
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        frame.smoothed[i] = std::log1p(static_cast<double>(frame.counts[i]));
    }
    return frame;
}

std::vector<PatchToken> activated_patches(const EventFrame& frame, const ReprConfig& cfg) {
    const int p = cfg.patch_size;
    const int rows = frame.height / p;
    const int cols = frame.width / p;
    const int threshold = cfg.activation_threshold();
    const int per_pixel = frame.bins * 2;

    std::vector<char> active(static_cast<std::size_t>(rows) * cols, 0);
#pragma omp parallel for schedule(static) if (rows * cols > 256)
    for (int cell = 0; cell < rows * cols; ++cell) {
        const int gr = cell / cols;
        const int gc = cell % cols;
        int lit = 0;
        for (int dy = 0; dy < p; ++dy) {
            const std::size_t base = frame.index(gr * p + dy, gc * p, 0, 0);
            for (int dx = 0; dx < p; ++dx) {
                const std::uint32_t* px = &frame.counts[base + static_cast<std::size_t>(dx) * per_pixel];
                for (int k = 0; k < per_pixel; ++k) {
                    if (px[k] != 0) {
                        ++lit;
                        break;
                    }
                }
            }
        }
        active[cell] = lit >= threshold;
    }

    std::vector<PatchToken> tokens;
    const std::size_t row_len = static_cast<std::size_t>(p) * per_pixel;
    for (int cell = 0; cell < rows * cols; ++cell) {
        if (!active[cell]) continue;
        PatchToken token;
        token.grid_row = cell / cols;
        token.grid_col = cell % cols;
        token.values.reserve(row_len * p);
        for (int dy = 0; dy < p; ++dy) {
            const std::size_t base = frame.index(token.grid_row * p + dy, token.grid_col * p, 0, 0);
            token.values.insert(token.values.end(), frame.smoothed.begin() + base,
                                frame.smoothed.begin() + base + row_len);
        }
        tokens.push_back(std::move(token));
    }
    return tokens;
}

WindowResult next_window(const EventStream& stream, std::uint64_t cursor, const ReprConfig& cfg) {
    WindowResult result;
    result.window_start = cursor;
    const std::uint64_t last = stream.last_timestamp();
    std::uint64_t end = cursor + cfg.delta_t;
    while (true) {
        const EventFrame frame = build_frame(stream, cursor, end, cfg);
        result.tokens = activated_patches(frame, cfg);
        result.window_end = end;
        if (result.tokens.size() >= static_cast<std::size_t>(cfg.min_patches) && !stream.empty()) {
            return result;
        }
        if (stream.empty() || end > last) {
            result.exhausted = true;
            return result;
        }
        end += cfg.step();
    }
}

WindowIterator::WindowIterator(const EventStream& stream, ReprConfig cfg)
    : stream_(&stream), cfg_(cfg) {
    cfg_.validate();
    done_ = stream.empty();
}

std::optional<WindowResult> WindowIterator::next() {
    if (done_) return std::nullopt;
    if (cursor_ > stream_->last_timestamp()) {
        done_ = true;
        return std::nullopt;
    }
    WindowResult result = next_window(*stream_, cursor_, cfg_);
    cursor_ = result.window_end;
    if (result.exhausted) {
        done_ = true;
        if (result.tokens.empty()) return std::nullopt;
    }
    return result;
}

std::vector<WindowResult> collect_windows(const EventStream& stream, const ReprConfig& cfg) {
    std::vector<WindowResult> out;
    WindowIterator it(stream, cfg);
    while (auto w = it.next()) out.push_back(std::move(*w));
    return out;
}

}  // namespace evt
