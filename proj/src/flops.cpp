#include "evt/flops.hpp"

#include <numeric>

namespace evt {

namespace {
thread_local FlopCounter* t_active = nullptr;
thread_local FlopComponent t_component = FlopComponent::other;
}  // namespace

std::string_view flop_component_name(FlopComponent c) {
    switch (c) {
        case FlopComponent::ff1: return "ff1";
        case FlopComponent::ff2: return "ff2";
        case FlopComponent::cross_attention: return "cross_attention";
        case FlopComponent::self_attention: return "self_attention";
        case FlopComponent::classifier: return "classifier";
        case FlopComponent::other: return "other";
    }
    return "unknown";
}

std::uint64_t FlopTally::total() const {
    return std::accumulate(by_component.begin(), by_component.end(), std::uint64_t{0});
}

FlopCounter::FlopCounter() : previous_(t_active) { t_active = this; }
FlopCounter::~FlopCounter() { t_active = previous_; }

FlopScope::FlopScope(FlopComponent c) : previous_(t_component) { t_component = c; }
FlopScope::~FlopScope() { t_component = previous_; }

FlopPause::FlopPause() : paused_(t_active) { t_active = nullptr; }
FlopPause::~FlopPause() { t_active = paused_; }

void count_flops_executed(std::uint64_t n) {
    if (t_active != nullptr) t_active->tally_.by_component[static_cast<int>(t_component)] += n;
}

}  // namespace evt
