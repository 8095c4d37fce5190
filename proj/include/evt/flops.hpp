#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace evt {

enum class FlopComponent : int {
    ff1 = 0,
    ff2,
    cross_attention,
    self_attention,
    classifier,
    other,
};
inline constexpr int kNumFlopComponents = 6;

std::string_view flop_component_name(FlopComponent c);

// Scalar-op costs shared by the kernels (instrumented counts) and the
// analytic model. Matrix products cost 2 per multiply-accumulate.
namespace flop_cost {
inline constexpr std::uint64_t kElementwise = 1;  // add, scale, residual, bias, dropout
inline constexpr std::uint64_t kLayerNorm = 7;    // mean 1, var 3, normalize 1, affine 2
inline constexpr std::uint64_t kSoftmax = 5;      // max, sub, exp, sum, div
inline constexpr std::uint64_t kLogSoftmax = 5;   // max, sub, exp, sum, sub-log
inline constexpr std::uint64_t kGelu = 8;
inline constexpr std::uint64_t kMeanRows = 1;

constexpr std::uint64_t matmul(std::uint64_t m, std::uint64_t k, std::uint64_t n) {
    return 2 * m * k * n;
}
}  // namespace flop_cost

struct FlopTally {
    std::array<std::uint64_t, kNumFlopComponents> by_component{};

    std::uint64_t operator[](FlopComponent c) const { return by_component[static_cast<int>(c)]; }
    std::uint64_t total() const;
};

// Installs itself as the calling thread's active counter for its lifetime.
// Kernels called on that thread add their executed operation counts to it.
class FlopCounter {
public:
    FlopCounter();
    ~FlopCounter();
    FlopCounter(const FlopCounter&) = delete;
    FlopCounter& operator=(const FlopCounter&) = delete;

    const FlopTally& tally() const { return tally_; }

private:
    friend void count_flops_executed(std::uint64_t n);
    friend class FlopPause;
    FlopTally tally_;
    FlopCounter* previous_;
};

// Attributes counted work on this thread to a component until destroyed.
class FlopScope {
public:
    explicit FlopScope(FlopComponent c);
    ~FlopScope();
    FlopScope(const FlopScope&) = delete;
    FlopScope& operator=(const FlopScope&) = delete;

private:
    FlopComponent previous_;
};

// Suspends counting on this thread (used while running reverse passes).
class FlopPause {
public:
    FlopPause();
    ~FlopPause();
    FlopPause(const FlopPause&) = delete;
    FlopPause& operator=(const FlopPause&) = delete;

private:
    FlopCounter* paused_;
};

// No-op unless a FlopCounter is active on this thread.
void count_flops_executed(std::uint64_t n);

}  // namespace evt
