#include "evt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

#include "evt/rng.hpp"

namespace evt {

std::string_view motion_class_name(MotionClass c) {
    switch (c) {
        case MotionClass::bar_right: return "bar_right";
        case MotionClass::bar_left: return "bar_left";
        case MotionClass::bar_down: return "bar_down";
        case MotionClass::bar_up: return "bar_up";
        case MotionClass::dot_clockwise: return "dot_clockwise";
        case MotionClass::dot_counterclockwise: return "dot_counterclockwise";
    }
    return "unknown";
}

namespace {

constexpr std::uint64_t kStepUs = 1000;

struct Box {
    double x0, y0, x1, y1;
};

// Shape geometry sampled once per stream; position is a function of time.
class Shape {
public:
    Shape(MotionClass cls, const SynthSpec& spec, Rng& rng)
        : cls_(cls), width_(spec.width), height_(spec.height), duration_(spec.duration) {
        const double w = width_;
        const double h = height_;
        if (is_bar()) {
            const bool horizontal_motion = cls_ == MotionClass::bar_right || cls_ == MotionClass::bar_left;
            const double travel_axis = horizontal_motion ? w : h;
            const double cross_axis = horizontal_motion ? h : w;
            thickness_ = std::max(2.0, std::round(rng.uniform(0.03, 0.06) * travel_axis));
            const double span = std::max(1.0, std::round(rng.uniform(0.5, 1.0) * cross_axis));
            const double offset = std::floor(rng.uniform(0.0, cross_axis - span + 1.0));
            span_lo_ = offset;
            span_hi_ = offset + span;
            start_ = rng.uniform(-thickness_, 0.1 * travel_axis);
            const double distance = travel_axis + thickness_ - start_;
            speed_ = distance * rng.uniform(0.8, 1.0);  // pixels per stream duration
        } else {
            const double m = std::min(w, h);
            radius_ = std::max(1.5, rng.uniform(0.04, 0.07) * m);
            orbit_ = rng.uniform(0.22, 0.32) * m;
            cx_ = w / 2.0 + rng.uniform(-0.05, 0.05) * w;
            cy_ = h / 2.0 + rng.uniform(-0.05, 0.05) * h;
            phase_ = rng.uniform(0.0, 2.0 * M_PI);
            revolutions_ = rng.uniform(1.0, 1.5);
        }
    }

    bool inside(int px, int py, double t_us) const {
        const double x = px + 0.5;
        const double y = py + 0.5;
        if (is_bar()) {
            const double lead = position(t_us);
            switch (cls_) {
                case MotionClass::bar_right:
                    return y >= span_lo_ && y < span_hi_ && x >= lead - thickness_ && x < lead;
                case MotionClass::bar_left: {
                    const double mx = width_ - x;
                    return y >= span_lo_ && y < span_hi_ && mx >= lead - thickness_ && mx < lead;
                }
                case MotionClass::bar_down:
                    return x >= span_lo_ && x < span_hi_ && y >= lead - thickness_ && y < lead;
                case MotionClass::bar_up: {
                    const double my = height_ - y;
                    return x >= span_lo_ && x < span_hi_ && my >= lead - thickness_ && my < lead;
                }
                default: return false;
            }
        }
        const auto [dx, dy] = dot_center(t_us);
        return (x - dx) * (x - dx) + (y - dy) * (y - dy) <= radius_ * radius_;
    }

    Box bounds(double t_us) const {
        if (is_bar()) {
            const double lead = position(t_us);
            const double lo = lead - thickness_;
            switch (cls_) {
                case MotionClass::bar_right: return {lo, span_lo_, lead, span_hi_};
                case MotionClass::bar_left: return {width_ - lead, span_lo_, width_ - lo, span_hi_};
                case MotionClass::bar_down: return {span_lo_, lo, span_hi_, lead};
                case MotionClass::bar_up: return {span_lo_, height_ - lead, span_hi_, height_ - lo};
                default: break;
            }
        }
        const auto [dx, dy] = dot_center(t_us);
        return {dx - radius_, dy - radius_, dx + radius_, dy + radius_};
    }

private:
    bool is_bar() const {
        return cls_ == MotionClass::bar_right || cls_ == MotionClass::bar_left ||
               cls_ == MotionClass::bar_down || cls_ == MotionClass::bar_up;
    }

    double position(double t_us) const {
        return start_ + speed_ * (t_us / static_cast<double>(duration_));
    }

    std::pair<double, double> dot_center(double t_us) const {
        const double dir = cls_ == MotionClass::dot_clockwise ? 1.0 : -1.0;
        // Image y grows downward, so a positive angle step is clockwise on screen.
        const double angle =
            phase_ + dir * 2.0 * M_PI * revolutions_ * (t_us / static_cast<double>(duration_));
        return {cx_ + orbit_ * std::cos(angle), cy_ + orbit_ * std::sin(angle)};
    }

    MotionClass cls_;
    double width_, height_;
    std::uint64_t duration_;
    // bars
    double thickness_ = 0, span_lo_ = 0, span_hi_ = 0, start_ = 0, speed_ = 0;
    // dots
    double radius_ = 0, orbit_ = 0, cx_ = 0, cy_ = 0, phase_ = 0, revolutions_ = 0;
};

}  // namespace

EventStream generate_synthetic(const SynthSpec& spec) {
    if (spec.duration == 0) throw std::invalid_argument("synthetic stream needs a nonzero duration");
    if (spec.width == 0 || spec.height == 0) {
        throw std::invalid_argument("synthetic stream needs a nonzero sensor size");
    }
    if (spec.class_id < 0 || spec.class_id >= kNumMotionClasses) {
        throw std::invalid_argument("unknown synthetic class id " + std::to_string(spec.class_id));
    }
    if (spec.signal_rate < 0.0 || spec.noise_rate < 0.0) {
        throw std::invalid_argument("synthetic rates must be non-negative");
    }

    Rng shape_rng(Rng::mix(spec.seed, 1));
    Rng signal_rng(Rng::mix(spec.seed, 2));
    Rng noise_rng(Rng::mix(spec.seed, 3));
    const Shape shape(static_cast<MotionClass>(spec.class_id), spec, shape_rng);
    const int w = spec.width;
    const int h = spec.height;

    std::vector<Event> events;
    if (spec.signal_rate > 0.0) {
        for (std::uint64_t t0 = 0; t0 < spec.duration; t0 += kStepUs) {
            const std::uint64_t t1 = std::min(t0 + kStepUs, spec.duration);
            const Box a = shape.bounds(static_cast<double>(t0));
            const Box b = shape.bounds(static_cast<double>(t1));
            const int x_lo = std::max(0, static_cast<int>(std::floor(std::min(a.x0, b.x0))) - 1);
            const int y_lo = std::max(0, static_cast<int>(std::floor(std::min(a.y0, b.y0))) - 1);
            const int x_hi = std::min(w, static_cast<int>(std::ceil(std::max(a.x1, b.x1))) + 1);
            const int y_hi = std::min(h, static_cast<int>(std::ceil(std::max(a.y1, b.y1))) + 1);
            for (int y = y_lo; y < y_hi; ++y) {
                for (int x = x_lo; x < x_hi; ++x) {
                    const bool before = shape.inside(x, y, static_cast<double>(t0));
                    const bool after = shape.inside(x, y, static_cast<double>(t1));
                    if (before == after) continue;
                    const std::uint8_t p = after ? 1 : 0;
                    const std::uint32_t k = signal_rng.poisson(spec.signal_rate);
                    for (std::uint32_t i = 0; i < k; ++i) {
                        const auto jitter = signal_rng.below(t1 - t0);
                        events.push_back(Event{t0 + jitter, static_cast<std::uint16_t>(x),
                                               static_cast<std::uint16_t>(y), p});
                    }
                }
            }
        }
    }

    if (spec.noise_rate > 0.0) {
        const double rate_per_us =
            spec.noise_rate * static_cast<double>(w) * static_cast<double>(h) * 1e-6;
        double t = 0.0;
        while (true) {
            t += -std::log1p(-noise_rng.uniform()) / rate_per_us;
            if (t >= static_cast<double>(spec.duration)) break;
            Event e;
            e.t = static_cast<std::uint64_t>(t);
            e.x = static_cast<std::uint16_t>(noise_rng.below(w));
            e.y = static_cast<std::uint16_t>(noise_rng.below(h));
            e.p = static_cast<std::uint8_t>(noise_rng.below(2));
            events.push_back(e);
        }
    }

    std::sort(events.begin(), events.end(), [](const Event& l, const Event& r) {
        return std::tie(l.t, l.y, l.x, l.p) < std::tie(r.t, r.y, r.x, r.p);
    });
    return EventStream(spec.width, spec.height, std::move(events), spec.class_id);
}

}  // namespace evt
