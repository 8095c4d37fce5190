#include <stdexcept>
#include "doctest.h"

#include "evt/checkpoint.hpp"
#include "evt/flops.hpp"
#include "evt/perf.hpp"
#include "evt/synth.hpp"

using namespace evt;

namespace {

ModelConfig small() {
    ModelConfig c;
    c.dim = 16;
    c.latents = 8;
    c.heads = 2;
    c.num_classes = 4;
    return c;
}

}  // namespace

TEST_CASE("analytic FLOPs: structure in T") {
    for (const ModelConfig& cfg : {ModelConfig{}, small()}) {
        const auto r1 = count_flops(cfg, 10), r2 = count_flops(cfg, 20), r3 = count_flops(cfg, 30);
        CHECK(r2.cross_attention - r1.cross_attention == r3.cross_attention - r2.cross_attention);
        CHECK(r2.total - r1.total == r3.total - r2.total);
        CHECK(count_flops(cfg, 10).self_attention == count_flops(cfg, 1000).self_attention);
        CHECK(count_flops(cfg, 10).classifier == count_flops(cfg, 1000).classifier);
        CHECK(r1.total == r1.ff1 + r1.ff2 + r1.cross_attention + r1.self_attention + r1.classifier);
        CHECK(r1.tokens == 10);
        CHECK(r1.parameters == count_parameters(cfg));
    }
    CHECK_THROWS_AS(count_flops(ModelConfig{}, 0), std::invalid_argument);
}

TEST_CASE("analytic FLOPs agree with instrumented kernels") {
    for (std::size_t t : {1u, 5u, 45u}) {
        const auto v = verify_flops(small(), t, 3);
        CHECK(v.relative_deviation < 0.05);
        CHECK(v.analytic.ff1 == v.instrumented[FlopComponent::ff1]);
        CHECK(v.analytic.self_attention == v.instrumented[FlopComponent::self_attention]);
    }
    const auto def = verify_flops(ModelConfig{}, 45, 1);
    CHECK(def.relative_deviation < 0.05);

    // doubling T doubles the token-side components and leaves the rest alone
    const auto a = verify_flops(small(), 6, 1).instrumented, b = verify_flops(small(), 12, 1).instrumented;
    CHECK(b[FlopComponent::ff1] == 2 * a[FlopComponent::ff1]);
    CHECK(b[FlopComponent::ff2] == 2 * a[FlopComponent::ff2]);
    CHECK(b[FlopComponent::cross_attention] > a[FlopComponent::cross_attention]);
    CHECK(b[FlopComponent::cross_attention] < 2 * a[FlopComponent::cross_attention]);
    CHECK(b[FlopComponent::self_attention] == a[FlopComponent::self_attention]);
    CHECK(b[FlopComponent::classifier] == a[FlopComponent::classifier]);
    CHECK(a[FlopComponent::other] == 0);
}

TEST_CASE("parameter count equals the checkpoint's array elements") {
    const ModelConfig cfg = small();
    const auto params = init_params(cfg, 0);
    const auto bytes = encode_checkpoint({cfg, ReprConfig{}, params});
    const auto back = decode_checkpoint(bytes);
    std::size_t elements = 0;
    back.params.visit([&](const std::string&, const Matrix& m) { elements += m.size(); });
    CHECK(count_flops(cfg, 5).parameters == elements);
}

TEST_CASE("latency measurement bookkeeping") {
    const ModelConfig cfg = small();
    const auto params = init_params(cfg, 0);
    LatencyOptions o;
    o.warmup = 1;
    o.reps = 10;
    const auto w = measure_window_latency(random_tokens(cfg, 20, 1), params, cfg, 24.0, o);
    REQUIRE(w.samples_ms.size() == 1);
    CHECK(w.samples_ms[0].size() == 10);
    CHECK(w.budget_ms == 24.0);
    CHECK(w.median_ms > 0);
    CHECK(w.p95_ms >= w.median_ms);
    CHECK(w.budget_met == (w.median_ms < 24.0));

    SynthSpec spec;
    spec.duration = 100'000;
    ReprConfig repr;
    ModelConfig full = ModelConfig::for_sensor(128, 128, repr, 4);
    full.dim = 16;
    full.latents = 8;
    full.heads = 2;
    const auto p2 = init_params(full, 1);
    o.reps = 3;
    const auto s = measure_latency(generate_synthetic(spec), p2, full, repr, o);
    CHECK(s.budget_ms == 24.0);  // from delta_t
    REQUIRE_FALSE(s.samples_ms.empty());
    CHECK(s.samples_ms.size() == s.tokens.size());
    for (const auto& per : s.samples_ms) CHECK(per.size() == 3);
}

TEST_CASE("latency grows with T") {
    const ModelConfig cfg;  // defaults
    const auto params = init_params(cfg, 0);
    LatencyOptions o;
    o.warmup = 2;
    o.reps = 7;
    double prev = 0;
    for (std::size_t t : {16u, 150u, 440u}) {
        const auto r = measure_window_latency(random_tokens(cfg, t, t), params, cfg, 24.0, o);
        CHECK(r.median_ms >= prev);
        prev = r.median_ms;
    }
}

TEST_CASE("patch statistics") {
    CHECK_THROWS_AS(patch_stats(std::vector<EventStream>{}, ReprConfig{}), std::invalid_argument);
    std::vector<EventStream> data;
    for (int c = 0; c < 4; ++c) {
        SynthSpec spec;
        spec.class_id = c;
        spec.seed = 10 + c;
        spec.duration = 200'000;
        data.push_back(generate_synthetic(spec));
    }
    data.emplace_back(128, 128, std::vector<Event>{});  // contributes nothing
    ReprConfig repr;
    const auto st = patch_stats(data, repr);
    CHECK(st.windows > 0);
    CHECK(st.mean_active_fraction < 0.5);
    std::size_t hist_total = 0;
    for (auto [t, n] : st.histogram) {
        CHECK(t >= 1);
        hist_total += n;
    }
    CHECK(hist_total == st.windows);

    repr.min_pixel_pct = 5;
    const auto lo = patch_stats(data, repr);
    repr.min_pixel_pct = 10;
    const auto hi = patch_stats(data, repr);
    CHECK(hi.mean_tokens < lo.mean_tokens);
}
