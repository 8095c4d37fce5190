#pragma once

#include <cstdint>
#include <string_view>

#include "evt/event_io.hpp"

namespace evt {

// Motion patterns of the synthetic gesture generator. The first four form the
// 4-class benchmark set.
enum class MotionClass : std::int32_t {
    bar_right = 0,
    bar_left = 1,
    bar_down = 2,
    bar_up = 3,
    dot_clockwise = 4,
    dot_counterclockwise = 5,
};

inline constexpr std::int32_t kNumMotionClasses = 6;

std::string_view motion_class_name(MotionClass c);

struct SynthSpec {
    std::int32_t class_id = 0;
    std::uint64_t duration = 500'000;  // us
    std::uint16_t width = 128;
    std::uint16_t height = 128;
    double signal_rate = 1.0;  // expected events per pixel transition of the shape
    double noise_rate = 0.0;   // expected events per pixel per second
    std::uint64_t seed = 0;
};

// Pure function of the spec. Throws std::invalid_argument on zero duration,
// zero geometry or an unknown class id.
EventStream generate_synthetic(const SynthSpec& spec);

}  // namespace evt
