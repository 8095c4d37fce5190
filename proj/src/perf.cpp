#include "evt/perf.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <omp.h>

#include "evt/rng.hpp"

namespace evt {

namespace {

using flop_cost::matmul;

std::uint64_t linear_flops(std::uint64_t rows, std::uint64_t in, std::uint64_t out) {
    return matmul(rows, in, out) + flop_cost::kElementwise * rows * out;
}

std::uint64_t block_flops(const ModelConfig& cfg, std::uint64_t nq, std::uint64_t nkv, bool cross) {
    const std::uint64_t d = cfg.dim;
    const std::uint64_t h = cfg.ff_hidden();
    const std::uint64_t heads = cfg.heads;
    const std::uint64_t dh = cfg.head_dim();
    std::uint64_t f = flop_cost::kLayerNorm * nq * d;
    if (cross) f += flop_cost::kLayerNorm * nkv * d;
    f += linear_flops(nq, d, d);       // Q
    f += 2 * linear_flops(nkv, d, d);  // K, V
    f += heads * (matmul(nq, dh, nkv)                          // scores
                  + flop_cost::kElementwise * nq * nkv          // 1/sqrt(dh)
                  + flop_cost::kSoftmax * nq * nkv
                  + matmul(nq, nkv, dh));                      // mix
    f += linear_flops(nq, d, d);                               // output projection
    f += flop_cost::kElementwise * nq * d;                     // residual
    f += flop_cost::kLayerNorm * nq * d;
    f += linear_flops(nq, d, h) + flop_cost::kGelu * nq * h + linear_flops(nq, h, d);
    f += flop_cost::kElementwise * nq * d;                     // residual
    return f;
}

double percentile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

void summarize(LatencyReport& r) {
    std::vector<double> all;
    for (const auto& w : r.samples_ms) all.insert(all.end(), w.begin(), w.end());
    if (all.empty()) return;
    r.mean_ms = std::accumulate(all.begin(), all.end(), 0.0) / static_cast<double>(all.size());
    r.median_ms = percentile(all, 0.5);
    r.p95_ms = percentile(all, 0.95);
    r.budget_met = r.median_ms < r.budget_ms;
}

// Runs f with OpenMP limited to one thread, restoring the previous setting.
template <typename F>
void single_threaded(F&& f) {
    const int previous = omp_get_max_threads();
    omp_set_num_threads(1);
    try {
        f();
    } catch (...) {
        omp_set_num_threads(previous);
        throw;
    }
    omp_set_num_threads(previous);
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

std::size_t count_parameters(const ModelConfig& cfg) {
    const std::size_t d = cfg.dim;
    const std::size_t h = cfg.ff_hidden();
    auto lin = [](std::size_t in, std::size_t out) { return in * out + out; };
    const std::size_t norm = 2 * d;
    const std::size_t block = norm + 4 * lin(d, d) + norm + lin(d, h) + lin(h, d);
    std::size_t n = static_cast<std::size_t>(cfg.latents) * d;
    n += static_cast<std::size_t>(cfg.grid_h) * cfg.grid_w * cfg.pos_dim();
    n += lin(cfg.token_in, d) + lin(d + cfg.pos_dim(), d);
    n += lin(d, h) + lin(h, d);
    n += block + norm;  // cross block has the extra key/value norm
    n += static_cast<std::size_t>(cfg.self_blocks) * block;
    n += lin(d, d) + lin(d, cfg.num_classes);
    return n;
}

FlopReport count_flops(const ModelConfig& cfg, std::size_t tokens) {
    if (tokens == 0) throw std::invalid_argument("count_flops needs at least one token");
    const std::uint64_t t = tokens;
    const std::uint64_t d = cfg.dim;
    const std::uint64_t m = cfg.latents;
    const std::uint64_t h = cfg.ff_hidden();
    FlopReport r;
    r.tokens = tokens;
    r.ff1 = linear_flops(t, cfg.token_in, d) + linear_flops(t, d + cfg.pos_dim(), d);
    r.ff2 = linear_flops(t, d, h) + flop_cost::kGelu * t * h + linear_flops(t, h, d) +
            flop_cost::kElementwise * t * d;
    r.cross_attention = block_flops(cfg, m, t, true);
    r.self_attention = static_cast<std::uint64_t>(cfg.self_blocks) * block_flops(cfg, m, m, false);
    r.classifier = linear_flops(m, d, d) + flop_cost::kGelu * m * d + flop_cost::kMeanRows * m * d +
                   linear_flops(1, d, cfg.num_classes) + flop_cost::kLogSoftmax * cfg.num_classes;
    r.total = r.ff1 + r.ff2 + r.cross_attention + r.self_attention + r.classifier;
    r.parameters = count_parameters(cfg);
    return r;
}

std::vector<PatchToken> random_tokens(const ModelConfig& cfg, std::size_t count, std::uint64_t seed) {
    const std::size_t cells = static_cast<std::size_t>(cfg.grid_h) * cfg.grid_w;
    Rng rng(seed);
    std::vector<std::size_t> order(cells);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = cells; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    std::vector<PatchToken> tokens(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t cell = order[i % cells];
        tokens[i].grid_row = static_cast<int>(cell / cfg.grid_w);
        tokens[i].grid_col = static_cast<int>(cell % cfg.grid_w);
        tokens[i].values.resize(cfg.token_in);
        for (double& v : tokens[i].values) v = rng.bernoulli(0.3) ? std::log1p(1.0 + rng.below(3)) : 0.0;
    }
    return tokens;
}

FlopVerification verify_flops(const ModelConfig& cfg, std::size_t tokens, std::uint64_t seed) {
    FlopVerification out;
    out.analytic = count_flops(cfg, tokens);
    const ModelParams params = init_params(cfg, seed);
    const auto toks = random_tokens(cfg, tokens, Rng::mix(seed, 7));
    {
        FlopCounter counter;
        const LatentMemory mem = LatentMemory::fresh(params);
        const LatentMemory next = memory_update(mem, process_window(toks, mem, params, cfg).latents);
        (void)classify(next, params, cfg);
        out.instrumented = counter.tally();
    }
    const double inst = static_cast<double>(out.instrumented.total());
    out.relative_deviation = std::abs(static_cast<double>(out.analytic.total) - inst) / inst;
    return out;
}

LatencyReport measure_latency(const EventStream& stream, const ModelParams& params,
                              const ModelConfig& cfg, const ReprConfig& repr,
                              const LatencyOptions& options) {
    if (options.reps < 1) throw std::invalid_argument("measure_latency needs reps >= 1");
    LatencyReport report;
    report.budget_ms = options.budget_ms > 0.0 ? options.budget_ms : static_cast<double>(repr.delta_t) / 1000.0;
    single_threaded([&] {
        const auto windows = collect_windows(stream, repr);
        if (windows.empty()) return;
        LatentMemory memory = LatentMemory::fresh(params);
        for (int i = 0; i < options.warmup; ++i) {
            (void)process_window(windows.front().tokens, memory, params, cfg);
        }
        for (const WindowResult& win : windows) {
            std::vector<double> samples;
            LatentMemory next;
            for (int rep = 0; rep < options.reps; ++rep) {
                const auto t0 = std::chrono::steady_clock::now();
                if (options.include_representation) {
                    const WindowResult rebuilt = next_window(stream, win.window_start, repr);
                    next = memory_update(memory, process_window(rebuilt.tokens, memory, params, cfg).latents);
                } else {
                    next = memory_update(memory, process_window(win.tokens, memory, params, cfg).latents);
                }
                samples.push_back(elapsed_ms(t0));
            }
            memory = std::move(next);
            report.samples_ms.push_back(std::move(samples));
            report.tokens.push_back(win.tokens.size());
        }
    });
    summarize(report);
    return report;
}

LatencyReport measure_window_latency(std::span<const PatchToken> tokens, const ModelParams& params,
                                     const ModelConfig& cfg, double budget_ms,
                                     const LatencyOptions& options) {
    if (options.reps < 1) throw std::invalid_argument("measure_window_latency needs reps >= 1");
    LatencyReport report;
    report.budget_ms = budget_ms;
    single_threaded([&] {
        const LatentMemory memory = LatentMemory::fresh(params);
        for (int i = 0; i < options.warmup; ++i) (void)process_window(tokens, memory, params, cfg);
        std::vector<double> samples;
        for (int rep = 0; rep < options.reps; ++rep) {
            const auto t0 = std::chrono::steady_clock::now();
            const LatentMemory next = memory_update(memory, process_window(tokens, memory, params, cfg).latents);
            samples.push_back(elapsed_ms(t0));
            (void)next;
        }
        report.samples_ms.push_back(std::move(samples));
        report.tokens.push_back(tokens.size());
    });
    summarize(report);
    return report;
}

PatchStats patch_stats(std::span<const EventStream> dataset, const ReprConfig& repr) {
    if (dataset.empty()) throw std::invalid_argument("patch_stats needs a non-empty dataset");
    PatchStats stats;
    std::vector<double> counts;
    double fraction_sum = 0.0;
    for (const EventStream& s : dataset) {
        const double capacity = static_cast<double>(repr.grid_rows(s.height())) * repr.grid_cols(s.width());
        for (const WindowResult& w : collect_windows(s, repr)) {
            const std::size_t t = w.tokens.size();
            counts.push_back(static_cast<double>(t));
            ++stats.histogram[t];
            if (capacity > 0) fraction_sum += static_cast<double>(t) / capacity;
        }
    }
    stats.windows = counts.size();
    if (!counts.empty()) {
        stats.mean_tokens = std::accumulate(counts.begin(), counts.end(), 0.0) / static_cast<double>(counts.size());
        stats.median_tokens = percentile(counts, 0.5);
        stats.mean_active_fraction = fraction_sum / static_cast<double>(counts.size());
    }
    return stats;
}

}  // namespace evt
