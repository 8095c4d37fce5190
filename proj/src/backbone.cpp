#include "evt/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "evt/flops.hpp"
#include "evt/rng.hpp"

namespace evt {

void ModelConfig::validate() const {
    if (dim < 1 || latents < 1 || heads < 1 || ff_mult < 1 || pos_bands < 1 || token_in < 1) {
        throw std::invalid_argument("model sizes must be positive");
    }
    if (self_blocks < 0) throw std::invalid_argument("self_blocks must be >= 0");
    if (dim % heads != 0) throw std::invalid_argument("dim must be divisible by heads");
    if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
    if (grid_h < 1 || grid_w < 1) throw std::invalid_argument("patch grid must be non-empty");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw std::invalid_argument("dropout_p must be in [0, 1)");
}

ModelConfig ModelConfig::for_sensor(int sensor_width, int sensor_height, const ReprConfig& repr,
                                    int num_classes) {
    ModelConfig cfg;
    cfg.grid_h = repr.grid_rows(sensor_height);
    cfg.grid_w = repr.grid_cols(sensor_width);
    cfg.token_in = repr.token_length();
    cfg.num_classes = num_classes;
    return cfg;
}

Matrix fourier_positions(int grid_h, int grid_w, int bands) {
    if (bands < 1) throw std::invalid_argument("fourier_positions needs bands >= 1");
    if (grid_h < 1 || grid_w < 1) throw std::invalid_argument("fourier_positions needs a grid");
    auto frequencies = [bands](int extent) {
        std::vector<double> f(bands);
        const double top = std::log(std::max(1.0, extent / 2.0));
        for (int k = 0; k < bands; ++k) {
            const double a = bands == 1 ? 0.0 : static_cast<double>(k) / (bands - 1);
            f[k] = std::exp(a * top);
        }
        return f;
    };
    auto coord = [](int i, int extent) {
        return extent == 1 ? 0.0 : -1.0 + 2.0 * i / (extent - 1);
    };
    const auto fu = frequencies(grid_h);
    const auto fv = frequencies(grid_w);
    Matrix table(static_cast<std::size_t>(grid_h) * grid_w, 4 * static_cast<std::size_t>(bands));
    for (int r = 0; r < grid_h; ++r) {
        const double u = coord(r, grid_h);
        for (int c = 0; c < grid_w; ++c) {
            const double v = coord(c, grid_w);
            auto row = table.row(static_cast<std::size_t>(r) * grid_w + c);
            for (int k = 0; k < bands; ++k) {
                row[k] = std::sin(M_PI * fu[k] * u);
                row[bands + k] = std::cos(M_PI * fu[k] * u);
                row[2 * bands + k] = std::sin(M_PI * fv[k] * v);
                row[3 * bands + k] = std::cos(M_PI * fv[k] * v);
            }
        }
    }
    return table;
}

namespace {

LinearWeights<Matrix> init_linear(int in, int out, Rng& rng) {
    LinearWeights<Matrix> l{Matrix(in, out), Matrix(1, out)};
    const double bound = std::sqrt(6.0 / (in + out));
    for (double& v : l.weight.data()) v = rng.uniform(-bound, bound);
    return l;
}

NormWeights<Matrix> init_norm(int d) { return {Matrix(1, d, 1.0), Matrix(1, d, 0.0)}; }

BlockWeights<Matrix> init_block(const ModelConfig& cfg, bool cross, Rng& rng) {
    const int d = cfg.dim;
    BlockWeights<Matrix> b;
    b.norm_q = init_norm(d);
    b.has_kv_norm = cross;
    if (cross) b.norm_kv = init_norm(d);
    b.q = init_linear(d, d, rng);
    b.k = init_linear(d, d, rng);
    b.v = init_linear(d, d, rng);
    b.o = init_linear(d, d, rng);
    b.norm_ff = init_norm(d);
    b.ff_in = init_linear(d, cfg.ff_hidden(), rng);
    b.ff_out = init_linear(cfg.ff_hidden(), d, rng);
    return b;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ModelParams p;
    p.latent_init = Matrix(cfg.latents, cfg.dim);
    for (double& v : p.latent_init.data()) v = rng.normal(0.0, cfg.latent_init_std);
    p.pos_table = fourier_positions(cfg.grid_h, cfg.grid_w, cfg.pos_bands);
    p.ff1_in = init_linear(cfg.token_in, cfg.dim, rng);
    p.ff1_out = init_linear(cfg.dim + cfg.pos_dim(), cfg.dim, rng);
    p.ff2_in = init_linear(cfg.dim, cfg.ff_hidden(), rng);
    p.ff2_out = init_linear(cfg.ff_hidden(), cfg.dim, rng);
    p.cross = init_block(cfg, true, rng);
    for (int i = 0; i < cfg.self_blocks; ++i) p.self.push_back(init_block(cfg, false, rng));
    p.cls_hidden = init_linear(cfg.dim, cfg.dim, rng);
    p.cls_out = init_linear(cfg.dim, cfg.num_classes, rng);
    return p;
}

std::size_t parameter_count(const ModelParams& params) {
    std::size_t n = 0;
    params.visit([&](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
}

ParamVars bind_params(ad::Tape& tape, const ModelParams& params) {
    ParamVars vars;
    vars.cross.has_kv_norm = params.cross.has_kv_norm;
    vars.self.resize(params.self.size());
    for (std::size_t i = 0; i < params.self.size(); ++i) vars.self[i].has_kv_norm = params.self[i].has_kv_norm;
    std::vector<ad::Var*> slots;
    vars.visit([&](const std::string&, ad::Var& v) { slots.push_back(&v); });
    std::size_t i = 0;
    params.visit([&](const std::string&, const Matrix& m) { *slots[i++] = tape.parameter(m); });
    return vars;
}

LatentMemory memory_update(const LatentMemory& memory, const Matrix& window_output) {
    if (!memory.state.same_shape(window_output)) {
        throw std::invalid_argument("memory_update: window output shape differs from memory");
    }
    LatentMemory next = memory;
    next.state += window_output;
    // The residual blocks already carry the queries through, so the running sum
    // roughly doubles per window; a very long stream eventually overflows.
    for (double v : next.state.data()) {
        if (!std::isfinite(v)) throw DataError("latent memory overflow after " +
                                               std::to_string(next.windows_seen + 1) + " windows");
    }
    ++next.windows_seen;
    return next;
}

// ---- tape-level ---------------------------------------------------------------

ad::Var tokens_matrix(ad::Tape& tape, std::span<const PatchToken> tokens, const ModelConfig& cfg) {
    Matrix x(tokens.size(), cfg.token_in);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto& vals = tokens[i].values;
        if (vals.size() != static_cast<std::size_t>(cfg.token_in)) {
            throw std::invalid_argument("token length " + std::to_string(vals.size()) +
                                        " differs from model token_in " + std::to_string(cfg.token_in));
        }
        std::copy(vals.begin(), vals.end(), x.row(i).begin());
    }
    return tape.constant(std::move(x));
}

ad::Var ff1(ad::Var tokens, std::span<const PatchToken> meta, const ParamVars& w,
            const ModelConfig& cfg) {
    FlopScope scope(FlopComponent::ff1);
    std::vector<std::size_t> cells(meta.size());
    for (std::size_t i = 0; i < meta.size(); ++i) {
        const auto& t = meta[i];
        if (t.grid_row < 0 || t.grid_row >= cfg.grid_h || t.grid_col < 0 || t.grid_col >= cfg.grid_w) {
            throw std::out_of_range("token grid coordinate (" + std::to_string(t.grid_row) + "," +
                                    std::to_string(t.grid_col) + ") outside the patch grid");
        }
        cells[i] = static_cast<std::size_t>(t.grid_row) * cfg.grid_w + t.grid_col;
    }
    const ad::Var h = ad::linear(tokens, w.ff1_in.weight, w.ff1_in.bias);
    const ad::Var pos = ad::gather_rows(w.pos_table, cells);
    const ad::Var parts[] = {h, pos};
    return ad::linear(ad::concat_cols(parts), w.ff1_out.weight, w.ff1_out.bias);
}

namespace {

ad::Var maybe_dropout(ad::Var x, const ModelConfig& cfg, ForwardOptions& opts) {
    if (!opts.training || cfg.dropout_p <= 0.0) return x;
    if (opts.rng == nullptr) throw std::invalid_argument("training dropout needs an rng");
    return ad::dropout(x, cfg.dropout_p, *opts.rng);
}

}  // namespace

ad::Var ff2(ad::Var x, const ParamVars& w, const ModelConfig& cfg, ForwardOptions& opts) {
    FlopScope scope(FlopComponent::ff2);
    ad::Var h = ad::gelu(ad::linear(x, w.ff2_in.weight, w.ff2_in.bias));
    h = maybe_dropout(h, cfg, opts);
    return ad::add(x, ad::linear(h, w.ff2_out.weight, w.ff2_out.bias));
}

ad::Var attention_block(ad::Var queries, ad::Var keys_values, const BlockWeights<ad::Var>& b,
                        const ModelConfig& cfg, ForwardOptions& opts,
                        std::vector<Matrix>* attention_out) {
    const auto d = static_cast<std::size_t>(cfg.dim);
    if (queries.cols() != d || keys_values.cols() != d) {
        throw std::invalid_argument("attention_block: inputs must have D columns");
    }
    if (keys_values.rows() == 0) throw std::invalid_argument("attention_block: no keys");
    const bool self_attention = queries.id() == keys_values.id() && queries.tape() == keys_values.tape();

    const ad::Var q_in = ad::layer_norm(queries, b.norm_q.gain, b.norm_q.bias);
    ad::Var kv_in = q_in;
    if (!self_attention) {
        kv_in = b.has_kv_norm ? ad::layer_norm(keys_values, b.norm_kv.gain, b.norm_kv.bias)
                              : ad::layer_norm(keys_values, b.norm_q.gain, b.norm_q.bias);
    }
    const ad::Var q = ad::linear(q_in, b.q.weight, b.q.bias);
    const ad::Var k = ad::linear(kv_in, b.k.weight, b.k.bias);
    const ad::Var v = ad::linear(kv_in, b.v.weight, b.v.bias);

    const auto dh = static_cast<std::size_t>(cfg.head_dim());
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<ad::Var> heads;
    heads.reserve(cfg.heads);
    for (int h = 0; h < cfg.heads; ++h) {
        const std::size_t off = static_cast<std::size_t>(h) * dh;
        const ad::Var qh = ad::slice_cols(q, off, dh);
        const ad::Var kh = ad::slice_cols(k, off, dh);
        const ad::Var vh = ad::slice_cols(v, off, dh);
        const ad::Var probs = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt));
        if (attention_out != nullptr) attention_out->push_back(probs.value());
        heads.push_back(ad::matmul(probs, vh));
    }
    const ad::Var mixed = ad::linear(ad::concat_cols(heads), b.o.weight, b.o.bias);
    const ad::Var a = ad::add(queries, maybe_dropout(mixed, cfg, opts));

    const ad::Var n = ad::layer_norm(a, b.norm_ff.gain, b.norm_ff.bias);
    ad::Var hidden = ad::gelu(ad::linear(n, b.ff_in.weight, b.ff_in.bias));
    hidden = maybe_dropout(hidden, cfg, opts);
    return ad::add(a, ad::linear(hidden, b.ff_out.weight, b.ff_out.bias));
}

ad::Var process_window(ad::Var memory, std::span<const PatchToken> tokens, const ParamVars& w,
                       const ModelConfig& cfg, ForwardOptions& opts) {
    if (tokens.empty()) throw std::invalid_argument("process_window: empty token list");
    ad::Tape& tape = *memory.tape();
    const ad::Var x = tokens_matrix(tape, tokens, cfg);
    const ad::Var embedded = ff1(x, tokens, w, cfg);
    const ad::Var refined = ff2(embedded, w, cfg, opts);
    ad::Var latents;
    {
        FlopScope scope(FlopComponent::cross_attention);
        latents = attention_block(memory, refined, w.cross, cfg, opts, opts.cross_attention);
    }
    FlopScope scope(FlopComponent::self_attention);
    for (const auto& block : w.self) latents = attention_block(latents, latents, block, cfg, opts);
    return latents;
}

ad::Var classify(ad::Var memory, const ParamVars& w, const ModelConfig& cfg) {
    (void)cfg;
    FlopScope scope(FlopComponent::classifier);
    const ad::Var hidden = ad::gelu(ad::linear(memory, w.cls_hidden.weight, w.cls_hidden.bias));
    const ad::Var pooled = ad::mean_rows(hidden);
    return ad::log_softmax_rows(ad::linear(pooled, w.cls_out.weight, w.cls_out.bias));
}

ad::Var stream_log_probs(std::span<const WindowResult> windows, const ParamVars& w,
                         const ModelConfig& cfg, ForwardOptions& opts) {
    if (windows.empty()) throw NoInformationError();
    ad::Var memory = w.latent_init;
    for (const WindowResult& win : windows) {
        const ad::Var out = process_window(memory, win.tokens, w, cfg, opts);
        memory = ad::add(memory, out);
    }
    return classify(memory, w, cfg);
}

// ---- value-level --------------------------------------------------------------

WindowOutput process_window(std::span<const PatchToken> tokens, const LatentMemory& memory,
                            const ModelParams& params, const ModelConfig& cfg,
                            bool record_attention) {
    ad::Tape tape(false);
    const ParamVars w = bind_params(tape, params);
    WindowOutput out;
    ForwardOptions opts;
    if (record_attention) opts.cross_attention = &out.cross_attention;
    const ad::Var mem = tape.constant_ref(memory.state);
    out.latents = process_window(mem, tokens, w, cfg, opts).value();
    return out;
}

std::vector<double> classify(const LatentMemory& memory, const ModelParams& params,
                             const ModelConfig& cfg) {
    ad::Tape tape(false);
    const ParamVars w = bind_params(tape, params);
    const Matrix& lp = classify(tape.constant_ref(memory.state), w, cfg).value();
    return {lp.data().begin(), lp.data().end()};
}

int argmax(std::span<const double> values) {
    return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

StreamPrediction classify_windows(std::span<const WindowResult> windows, const ModelParams& params,
                                  const ModelConfig& cfg) {
    if (windows.empty()) throw NoInformationError();
    LatentMemory memory = LatentMemory::fresh(params);
    for (const WindowResult& win : windows) {
        memory = memory_update(memory, process_window(win.tokens, memory, params, cfg).latents);
    }
    StreamPrediction pred;
    pred.log_probs = classify(memory, params, cfg);
    pred.predicted = argmax(pred.log_probs);
    pred.windows = windows.size();
    return pred;
}

StreamPrediction classify_stream(const EventStream& stream, const ModelParams& params,
                                 const ModelConfig& cfg, const ReprConfig& repr) {
    WindowIterator it(stream, repr);
    LatentMemory memory = LatentMemory::fresh(params);
    while (auto win = it.next()) {
        memory = memory_update(memory, process_window(win->tokens, memory, params, cfg).latents);
    }
    if (memory.windows_seen == 0) throw NoInformationError();
    StreamPrediction pred;
    pred.log_probs = classify(memory, params, cfg);
    pred.predicted = argmax(pred.log_probs);
    pred.windows = memory.windows_seen;
    return pred;
}

}  // namespace evt
