#include <stdexcept>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "doctest.h"

#include "evt/backbone.hpp"
#include "evt/checkpoint.hpp"
#include "evt/error.hpp"
#include "evt/grad_check.hpp"
#include "evt/perf.hpp"
#include "evt/rng.hpp"
#include "evt/synth.hpp"
#include "evt/training.hpp"
#include "oracles.hpp"

using namespace evt;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.dim = 16;
    c.latents = 8;
    c.heads = 2;
    c.self_blocks = 2;
    c.pos_bands = 2;
    c.num_classes = 4;
    c.grid_h = 5;
    c.grid_w = 6;
    c.token_in = 8;
    c.dropout_p = 0.0;
    return c;
}

// Every array random, including norms and biases, so nothing is trivially zero.
void randomize(ModelParams& p, Rng& rng, double scale = 0.5) {
    p.visit([&](const std::string&, Matrix& m) {
        for (double& v : m.data()) v = rng.uniform(-scale, scale);
    });
}

Matrix rand_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    Matrix m(r, c);
    for (double& v : m.data()) v = rng.uniform(-scale, scale);
    return m;
}

double max_diff(const oracle::Rows& a, const Matrix& b) {
    double d = 0;
    for (std::size_t i = 0; i < b.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) d = std::max(d, std::abs(a[i][j] - b(i, j)));
    return d;
}

Matrix run_block(const ModelParams& params, const BlockWeights<Matrix>& which, const ModelConfig& cfg,
                 const Matrix& q, const Matrix* kv, std::vector<Matrix>* att = nullptr) {
    ad::Tape tape(false);
    const ParamVars w = bind_params(tape, params);
    const BlockWeights<ad::Var>& b = (&which == &params.cross) ? w.cross : w.self[0];
    ForwardOptions opts;
    const ad::Var qv = tape.constant(q);
    const ad::Var kvv = kv ? tape.constant(*kv) : qv;
    return attention_block(qv, kvv, b, cfg, opts, att).value();
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("fourier positions") {
    const Matrix t = fourier_positions(21, 21, 16);
    CHECK(t.cols() == 64);
    CHECK(t.rows() == 441);
    for (double v : t.data()) REQUIRE((v >= -1.0 && v <= 1.0));
    for (std::size_t a = 0; a < t.rows(); ++a)
        for (std::size_t b = a + 1; b < t.rows(); ++b) {
            double d = 0;
            for (std::size_t c = 0; c < t.cols(); ++c) d = std::max(d, std::abs(t(a, c) - t(b, c)));
            REQUIRE(d > 1e-9);
        }
    CHECK_THROWS_AS(fourier_positions(3, 3, 0), std::invalid_argument);
}

TEST_CASE("config validation") {
    ModelConfig c;
    CHECK_NOTHROW(c.validate());
    c.heads = 3;  // 128 % 3 != 0
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.num_classes = 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    const auto s = ModelConfig::for_sensor(240, 180, ReprConfig{}, 101);
    CHECK(s.grid_h == 30);
    CHECK(s.grid_w == 40);
    CHECK(s.token_in == 144);
}

TEST_CASE("ff1: position sensitivity and the zero-token case") {
    const ModelConfig cfg = tiny_config();
    Rng rng(1);
    ModelParams p = init_params(cfg, 3);
    randomize(p, rng);
    p.ff1_in.bias = Matrix(1, cfg.dim);
    p.ff1_out.bias = Matrix(1, cfg.dim);

    ad::Tape tape(false);
    const ParamVars w = bind_params(tape, p);
    std::vector<PatchToken> toks = {{std::vector<double>(cfg.token_in, 0.0), 2, 3}};
    const Matrix out = ff1(tokens_matrix(tape, toks, cfg), toks, w, cfg).value();
    REQUIRE(out.rows() == 1);
    REQUIRE(out.cols() == static_cast<std::size_t>(cfg.dim));
    // second layer applied to (0 ++ pos)
    const std::size_t cell = 2 * cfg.grid_w + 3;
    for (int o = 0; o < cfg.dim; ++o) {
        double s = 0;
        for (int i = 0; i < cfg.pos_dim(); ++i) s += p.pos_table(cell, i) * p.ff1_out.weight(cfg.dim + i, o);
        CHECK(out(0, o) == doctest::Approx(s).epsilon(1e-12));
    }

    std::vector<double> vals(cfg.token_in);
    for (double& v : vals) v = rng.uniform(0, 2);
    std::vector<PatchToken> two = {{vals, 0, 0}, {vals, 4, 5}};
    const Matrix both = ff1(tokens_matrix(tape, two, cfg), two, w, cfg).value();
    double d = 0;
    for (int o = 0; o < cfg.dim; ++o) d = std::max(d, std::abs(both(0, o) - both(1, o)));
    CHECK(d > 1e-6);

    std::vector<PatchToken> off = {{vals, 5, 0}};
    CHECK_THROWS_AS(ff1(tokens_matrix(tape, off, cfg), off, w, cfg), std::out_of_range);
    std::vector<PatchToken> short_tok = {{std::vector<double>(3), 0, 0}};
    CHECK_THROWS_AS(tokens_matrix(tape, short_tok, cfg), std::invalid_argument);

    // default widths
    ModelConfig def;
    const ModelParams dp = init_params(def, 1);
    ad::Tape t2(false);
    const ParamVars dw = bind_params(t2, dp);
    std::vector<PatchToken> one = {{std::vector<double>(def.token_in, 0.5), 1, 1}};
    CHECK(ff1(tokens_matrix(t2, one, def), one, dw, def).cols() == 128);
}

TEST_CASE("ff2: zero weights is the identity; gradient") {
    const ModelConfig cfg = tiny_config();
    ModelParams p = init_params(cfg, 4);
    p.ff2_in = {Matrix(cfg.dim, cfg.ff_hidden()), Matrix(1, cfg.ff_hidden())};
    p.ff2_out = {Matrix(cfg.ff_hidden(), cfg.dim), Matrix(1, cfg.dim)};
    Rng rng(2);
    const Matrix x = rand_matrix(3, cfg.dim, rng);
    {
        ad::Tape tape(false);
        const ParamVars w = bind_params(tape, p);
        ForwardOptions opts;
        CHECK(ff2(tape.constant(x), w, cfg, opts).value() == x);
    }
    auto f = [&](ad::Tape& t, std::span<const ad::Var> v) {
        ParamVars w;
        w.ff2_in = {v[1], v[2]};
        w.ff2_out = {v[3], v[4]};
        ForwardOptions opts;
        const ad::Var y = ff2(v[0], w, cfg, opts);
        return ad::sum(ad::matmul_nt(y, t.constant(Matrix(1, cfg.dim, 0.3))));
    };
    const std::vector<Matrix> params = {x, rand_matrix(cfg.dim, cfg.ff_hidden(), rng), rand_matrix(1, cfg.ff_hidden(), rng),
                                        rand_matrix(cfg.ff_hidden(), cfg.dim, rng), rand_matrix(1, cfg.dim, rng)};
    GradCheckOptions o;
    o.max_coords_per_param = 40;
    CHECK(grad_check(f, params, o).max_rel_error < 1e-4);
}

TEST_CASE("attention block matches the naive loop reference") {
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        ModelConfig cfg = tiny_config();
        cfg.heads = 1 << rng.below(3);  // 1, 2, 4
        cfg.dim = cfg.heads * static_cast<int>(2 + rng.below(6));
        ModelParams p = init_params(cfg, trial);
        randomize(p, rng);
        const std::size_t nq = 1 + rng.below(9), nkv = 1 + rng.below(12);
        const Matrix q = rand_matrix(nq, cfg.dim, rng, 2.0), kv = rand_matrix(nkv, cfg.dim, rng, 2.0);

        const Matrix cross = run_block(p, p.cross, cfg, q, &kv);
        CHECK(max_diff(oracle::attention_block(oracle::to_rows(q), oracle::to_rows(kv), p.cross, cfg.heads, false),
                       cross) < 1e-6);
        const Matrix self = run_block(p, p.self[0], cfg, q, nullptr);
        CHECK(max_diff(oracle::attention_block(oracle::to_rows(q), oracle::to_rows(q), p.self[0], cfg.heads, true),
                       self) < 1e-6);
    }
}

TEST_CASE("attention block: single key, key permutation, query permutation") {
    const ModelConfig cfg = tiny_config();
    Rng rng(6);
    ModelParams p = init_params(cfg, 1);
    randomize(p, rng);
    const Matrix q = rand_matrix(5, cfg.dim, rng);

    std::vector<Matrix> att;
    const Matrix one = rand_matrix(1, cfg.dim, rng);
    (void)run_block(p, p.cross, cfg, q, &one, &att);
    REQUIRE(att.size() == static_cast<std::size_t>(cfg.heads));
    for (const auto& a : att) CHECK(a == Matrix(5, 1, 1.0));

    const Matrix kv = rand_matrix(7, cfg.dim, rng);
    Matrix perm(7, cfg.dim);
    const std::size_t order[] = {3, 6, 0, 2, 5, 1, 4};
    for (std::size_t i = 0; i < 7; ++i)
        for (int c = 0; c < cfg.dim; ++c) perm(i, c) = kv(order[i], c);
    CHECK(max_abs_diff(run_block(p, p.cross, cfg, q, &kv), run_block(p, p.cross, cfg, q, &perm)) < 1e-6);

    // self-attention: permuting the rows permutes the output the same way
    const Matrix s = run_block(p, p.self[0], cfg, kv, nullptr);
    const Matrix sp = run_block(p, p.self[0], cfg, perm, nullptr);
    double d = 0;
    for (std::size_t i = 0; i < 7; ++i)
        for (int c = 0; c < cfg.dim; ++c) d = std::max(d, std::abs(sp(i, c) - s(order[i], c)));
    CHECK(d < 1e-6);

    const Matrix bad = rand_matrix(2, cfg.dim + 1, rng);
    CHECK_THROWS_AS(run_block(p, p.cross, cfg, q, &bad), std::invalid_argument);
}

TEST_CASE("process_window: shape, permutation invariance, degenerate depth") {
    SUBCASE("defaults: M x D for T = 5 and T = 500") {
        ModelConfig cfg;
        cfg.grid_h = 30;
        cfg.grid_w = 40;
        const ModelParams p = init_params(cfg, 2);
        const LatentMemory mem = LatentMemory::fresh(p);
        for (std::size_t t : {5u, 500u}) {
            const auto out = process_window(random_tokens(cfg, t, t), mem, p, cfg);
            CHECK(out.latents.rows() == 96);
            CHECK(out.latents.cols() == 128);
        }
    }
    const ModelConfig cfg = tiny_config();
    Rng rng(7);
    ModelParams p = init_params(cfg, 5);
    randomize(p, rng);
    const LatentMemory mem = LatentMemory::fresh(p);
    auto toks = random_tokens(cfg, 12, 3);
    const auto base = process_window(toks, mem, p, cfg, true);
    REQUIRE(base.cross_attention.size() == static_cast<std::size_t>(cfg.heads));
    CHECK(base.cross_attention[0].rows() == static_cast<std::size_t>(cfg.latents));
    CHECK(base.cross_attention[0].cols() == 12);
    std::reverse(toks.begin(), toks.end());
    std::swap(toks[2], toks[7]);
    CHECK(max_abs_diff(base.latents, process_window(toks, mem, p, cfg).latents) < 1e-6);

    CHECK_THROWS_AS(process_window(std::vector<PatchToken>{}, mem, p, cfg), std::invalid_argument);

    // no self blocks: output is the bare cross-attention block
    ModelConfig shallow = cfg;
    shallow.self_blocks = 0;
    ModelParams sp = p;
    sp.self.clear();
    ad::Tape tape(false);
    const ParamVars w = bind_params(tape, sp);
    ForwardOptions opts;
    const ad::Var x = ff2(ff1(tokens_matrix(tape, toks, shallow), toks, w, shallow), w, shallow, opts);
    const Matrix bare = attention_block(tape.constant(mem.state), x, w.cross, shallow, opts).value();
    CHECK(process_window(toks, mem, sp, shallow).latents == bare);
}

TEST_CASE("memory update") {
    const ModelConfig cfg = tiny_config();
    const ModelParams p = init_params(cfg, 1);
    Rng rng(8);
    const LatentMemory m0 = LatentMemory::fresh(p);
    CHECK(m0.state == p.latent_init);
    CHECK(m0.windows_seen == 0);
    const LatentMemory same = memory_update(m0, Matrix(cfg.latents, cfg.dim));
    CHECK(same.state == m0.state);
    CHECK(same.windows_seen == 1);

    const Matrix a = rand_matrix(cfg.latents, cfg.dim, rng), b = rand_matrix(cfg.latents, cfg.dim, rng);
    const LatentMemory m2 = memory_update(memory_update(m0, a), b);
    Matrix want = p.latent_init;
    want += a;
    want += b;
    CHECK(m2.state == want);
    CHECK(m2.windows_seen == 2);
    CHECK(m0.state == p.latent_init);  // untouched
    CHECK_THROWS_AS(memory_update(m0, Matrix(2, 2)), std::invalid_argument);

    Matrix huge(cfg.latents, cfg.dim, 1.5e308);
    LatentMemory big{huge, 3};
    CHECK_THROWS_AS(memory_update(big, huge), DataError);
}

TEST_CASE("classify") {
    const ModelConfig cfg = tiny_config();
    Rng rng(9);
    ModelParams p = init_params(cfg, 1);
    randomize(p, rng);
    LatentMemory mem{rand_matrix(cfg.latents, cfg.dim, rng, 3.0), 1};
    const auto lp = classify(mem, p, cfg);
    REQUIRE(lp.size() == 4u);
    double s = 0;
    for (double v : lp) s += std::exp(v);
    CHECK(std::abs(s - 1.0) < 1e-6);

    LatentMemory rev = mem;
    for (int r = 0; r < cfg.latents; ++r)
        for (int c = 0; c < cfg.dim; ++c) rev.state(r, c) = mem.state(cfg.latents - 1 - r, c);
    const auto lp2 = classify(rev, p, cfg);
    for (std::size_t i = 0; i < lp.size(); ++i) CHECK(std::abs(lp[i] - lp2[i]) < 1e-6);
}

TEST_CASE("untrained classifier is near-uniform across initializations") {
    ModelConfig cfg;  // defaults, 4 classes
    int near_uniform = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const ModelParams p = init_params(cfg, seed);
        Rng rng(seed + 1000);
        LatentMemory mem{rand_matrix(cfg.latents, cfg.dim, rng), 1};
        const auto lp = classify(mem, p, cfg);
        const double top = std::exp(*std::max_element(lp.begin(), lp.end()));
        near_uniform += top < 0.5;
    }
    CHECK(near_uniform >= 95);
}

TEST_CASE("stream classification") {
    ModelConfig cfg = tiny_config();
    ReprConfig repr;
    repr.patch_size = 16;
    repr.bins = 1;
    repr.min_patches = 2;
    repr.min_pixel_pct = 2;
    cfg.grid_h = 4;
    cfg.grid_w = 4;
    cfg.token_in = repr.token_length();
    Rng rng(10);
    ModelParams p = init_params(cfg, 2);
    randomize(p, rng, 0.3);

    SynthSpec spec;
    spec.width = 64;
    spec.height = 64;
    spec.duration = 150'000;
    spec.seed = 4;
    spec.noise_rate = 2;
    const auto stream = generate_synthetic(spec);
    const auto windows = collect_windows(stream, repr);
    REQUIRE(windows.size() >= 3);

    const auto live = classify_stream(stream, p, cfg, repr);
    const auto batched = classify_windows(windows, p, cfg);
    CHECK(live.log_probs == batched.log_probs);
    CHECK(live.windows == windows.size());

    // one window: same as calling the pieces directly
    const auto single = classify_windows(std::span(windows).first(1), p, cfg);
    const LatentMemory m = memory_update(LatentMemory::fresh(p), process_window(windows[0].tokens, LatentMemory::fresh(p), p, cfg).latents);
    CHECK(single.log_probs == classify(m, p, cfg));

    // token order inside windows does not matter
    auto shuffled = windows;
    for (auto& w : shuffled) std::reverse(w.tokens.begin(), w.tokens.end());
    const auto sh = classify_windows(shuffled, p, cfg);
    for (std::size_t i = 0; i < sh.log_probs.size(); ++i) CHECK(std::abs(sh.log_probs[i] - live.log_probs[i]) < 1e-6);

    // no state leaks between streams
    spec.seed = 5;
    spec.class_id = 2;
    (void)classify_stream(generate_synthetic(spec), p, cfg, repr);
    CHECK(classify_stream(stream, p, cfg, repr).log_probs == live.log_probs);

    CHECK_THROWS_AS(classify_stream(EventStream(64, 64, {}), p, cfg, repr), NoInformationError);
    CHECK_THROWS_AS(classify_windows({}, p, cfg), NoInformationError);
}

TEST_CASE("end-to-end gradient through two windows") {
    ModelConfig cfg = tiny_config();
    cfg.grid_h = 3;
    cfg.grid_w = 3;
    cfg.num_classes = 3;
    Rng rng(11);
    ModelParams p = init_params(cfg, 7);
    randomize(p, rng, 0.4);
    std::vector<WindowResult> windows(2);
    windows[0].tokens = random_tokens(cfg, 4, 1);
    windows[1].tokens = random_tokens(cfg, 3, 2);

    std::vector<Matrix> flat;
    p.visit([&](const std::string&, const Matrix& m) { flat.push_back(m); });
    auto f = [&](ad::Tape&, std::span<const ad::Var> v) {
        ParamVars w;
        w.cross.has_kv_norm = true;
        w.self.resize(cfg.self_blocks);
        std::size_t i = 0;
        w.visit([&](const std::string&, ad::Var& slot) { slot = v[i++]; });
        ForwardOptions opts;
        return nll_loss(stream_log_probs(windows, w, cfg, opts), 1);
    };
    GradCheckOptions o;
    o.max_coords_per_param = 6;
    o.seed = 3;
    const auto r = grad_check(f, flat, o);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.coords_checked > 100);
}

TEST_CASE("parameter count") {
    const ModelConfig cfg = ModelConfig::for_sensor(240, 180, ReprConfig{}, 101);
    const ModelParams p = init_params(cfg, 0);
    const std::size_t n = parameter_count(p);
    CHECK(n == count_parameters(cfg));
    CHECK(n >= 300'000);
    CHECK(n <= 700'000);
    CHECK(p.latent_init.rows() == 96);
    // latent init is N(0, 0.2)
    double mean = 0, var = 0;
    for (double v : p.latent_init.data()) mean += v;
    mean /= p.latent_init.size();
    for (double v : p.latent_init.data()) var += (v - mean) * (v - mean);
    var /= p.latent_init.size();
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::sqrt(var) == doctest::Approx(0.2).epsilon(0.05));
}

TEST_CASE("checkpoint format") {
    const ModelConfig cfg = tiny_config();
    Rng rng(12);
    ModelParams p = init_params(cfg, 9);
    randomize(p, rng);
    p.latent_init(0, 0) = -0.0;
    p.latent_init(0, 1) = 5e-324;  // denormal survives
    ReprConfig repr;
    repr.min_pixel_pct = 12.25;
    const Checkpoint ck{cfg, repr, p};
    const auto bytes = encode_checkpoint(ck);
    const Checkpoint back = decode_checkpoint(bytes);
    CHECK(encode_checkpoint(back) == bytes);
    CHECK(back.params.latent_init == p.latent_init);
    CHECK(std::signbit(back.params.latent_init(0, 0)));
    CHECK(back.repr.min_pixel_pct == 12.25);
    CHECK(back.model.dim == cfg.dim);

    const auto path = fs::temp_directory_path() / "evt_unit_ck.evtc";
    save_checkpoint(ck, path);
    CHECK(slurp(path) == bytes);
    CHECK(encode_checkpoint(load_checkpoint(path)) == bytes);

    auto bad = bytes;
    SUBCASE("truncated") {
        bad.resize(bad.size() - 3);
        CHECK_THROWS_AS(decode_checkpoint(bad), DataError);
    }
    SUBCASE("trailing") {
        bad.push_back(1);
        CHECK_THROWS_AS(decode_checkpoint(bad), DataError);
    }
    SUBCASE("magic") {
        bad[1] = 'X';
        CHECK_THROWS_AS(decode_checkpoint(bad), DataError);
    }
    SUBCASE("shape does not fit the config") {
        ModelParams wrong = p;
        wrong.cls_out.weight = Matrix(cfg.dim, cfg.num_classes + 1);
        CHECK_THROWS_AS(decode_checkpoint(encode_checkpoint({cfg, repr, wrong})), DataError);
    }
}

TEST_CASE("golden checkpoint byte-compares") {
    // must mirror tests/golden/make_golden.py
    ModelConfig cfg;
    cfg.dim = 4;
    cfg.latents = 2;
    cfg.self_blocks = 1;
    cfg.heads = 2;
    cfg.ff_mult = 1;
    cfg.pos_bands = 1;
    cfg.num_classes = 2;
    cfg.grid_h = 1;
    cfg.grid_w = 2;
    cfg.token_in = 8;
    cfg.dropout_p = 0.0;
    ReprConfig repr;
    repr.delta_t = 1000;
    repr.bins = 1;
    repr.patch_size = 2;
    repr.min_pixel_pct = 25.0;
    repr.min_patches = 1;
    ModelParams p = init_params(cfg, 0);
    std::uint64_t g = 0;
    p.visit([&](const std::string&, Matrix& m) {
        for (double& v : m.data()) v = (static_cast<double>((g++ * 37) % 64) - 32.0) / 16.0;
    });
    const auto golden = slurp(fs::path(EVT_GOLDEN_DIR) / "tiny.evtc");
    CHECK(encode_checkpoint({cfg, repr, p}) == golden);
    const auto loaded = decode_checkpoint(golden);
    CHECK(loaded.params.cls_out.bias == p.cls_out.bias);
    CHECK(encode_checkpoint(loaded) == golden);
}
