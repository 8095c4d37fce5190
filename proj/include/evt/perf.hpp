#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "evt/backbone.hpp"
#include "evt/event_io.hpp"
#include "evt/flops.hpp"
#include "evt/representation.hpp"

namespace evt {

// Per-window forward cost; classifier included so the total is the cost of
// producing an up-to-date prediction after each window.
struct FlopReport {
    std::uint64_t ff1 = 0;
    std::uint64_t ff2 = 0;
    std::uint64_t cross_attention = 0;
    std::uint64_t self_attention = 0;
    std::uint64_t classifier = 0;
    std::uint64_t total = 0;
    std::size_t tokens = 0;
    std::size_t parameters = 0;
};

// Analytic model. Throws std::invalid_argument for tokens == 0.
FlopReport count_flops(const ModelConfig& cfg, std::size_t tokens);

// Closed-form parameter count for a config (no allocation).
std::size_t count_parameters(const ModelConfig& cfg);

struct FlopVerification {
    FlopReport analytic;
    FlopTally instrumented;
    double relative_deviation = 0.0;  // |analytic - instrumented| / instrumented, totals
};

// Runs process_window + classify on random tokens with a FlopCounter active.
FlopVerification verify_flops(const ModelConfig& cfg, std::size_t tokens, std::uint64_t seed = 0);

struct LatencyOptions {
    int warmup = 5;
    int reps = 10;
    bool include_representation = false;
    double budget_ms = 0.0;  // 0: use the representation delta_t
};

struct LatencyReport {
    std::vector<std::vector<double>> samples_ms;  // per window, `reps` entries each
    std::vector<std::size_t> tokens;              // per window
    double mean_ms = 0.0;
    double median_ms = 0.0;
    double p95_ms = 0.0;
    double budget_ms = 0.0;
    bool budget_met = false;  // median < budget
};

// Times process_window + memory_update per window, single-threaded.
LatencyReport measure_latency(const EventStream& stream, const ModelParams& params,
                              const ModelConfig& cfg, const ReprConfig& repr,
                              const LatencyOptions& options = {});

// Same measurement over one fixed window of tokens.
LatencyReport measure_window_latency(std::span<const PatchToken> tokens, const ModelParams& params,
                                     const ModelConfig& cfg, double budget_ms,
                                     const LatencyOptions& options = {});

// `count` random tokens at distinct grid cells, values shaped like log(1 + counts).
std::vector<PatchToken> random_tokens(const ModelConfig& cfg, std::size_t count, std::uint64_t seed);

struct PatchStats {
    std::size_t windows = 0;
    double mean_tokens = 0.0;
    double median_tokens = 0.0;
    std::map<std::size_t, std::size_t> histogram;  // T -> window count
    double mean_active_fraction = 0.0;             // T / grid capacity, averaged over windows
};

// Throws std::invalid_argument on an empty dataset.
PatchStats patch_stats(std::span<const EventStream> dataset, const ReprConfig& repr);

}  // namespace evt
