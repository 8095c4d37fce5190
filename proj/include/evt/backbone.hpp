#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "evt/autodiff.hpp"
#include "evt/error.hpp"
#include "evt/event_io.hpp"
#include "evt/matrix.hpp"
#include "evt/representation.hpp"

namespace evt {

class Rng;

struct ModelConfig {
    int dim = 128;        // D
    int latents = 96;     // M
    int self_blocks = 2;  // N
    int heads = 4;
    int ff_mult = 2;
    int pos_bands = 16;
    int num_classes = 4;
    int grid_h = 21;
    int grid_w = 21;
    int token_in = 144;  // P*P*B*2
    double dropout_p = 0.1;
    double latent_init_std = 0.2;

    int pos_dim() const { return 4 * pos_bands; }
    int head_dim() const { return dim / heads; }
    int ff_hidden() const { return ff_mult * dim; }

    // Throws std::invalid_argument on inconsistent sizes.
    void validate() const;

    // Grid and token geometry derived from a sensor and representation config.
    static ModelConfig for_sensor(int sensor_width, int sensor_height, const ReprConfig& repr,
                                  int num_classes);
};

template <typename T>
struct LinearWeights {
    T weight;  // in x out
    T bias;    // 1 x out
};

template <typename T>
struct NormWeights {
    T gain;
    T bias;
};

template <typename T>
struct BlockWeights {
    NormWeights<T> norm_q;
    bool has_kv_norm = false;  // cross-attention normalizes keys/values separately
    NormWeights<T> norm_kv;
    LinearWeights<T> q, k, v, o;
    NormWeights<T> norm_ff;
    LinearWeights<T> ff_in, ff_out;
};

// All learnable arrays of the network. Instantiated with Matrix for storage
// and with ad::Var when bound to a tape.
template <typename T>
struct ModelWeights {
    T latent_init;  // M x D
    T pos_table;    // (grid_h * grid_w) x 4*bands
    LinearWeights<T> ff1_in, ff1_out;
    LinearWeights<T> ff2_in, ff2_out;
    BlockWeights<T> cross;
    std::vector<BlockWeights<T>> self;
    LinearWeights<T> cls_hidden, cls_out;

    // Calls f(name, T&) for every array in a fixed order.
    template <typename F>
    void visit(F&& f) {
        visit_impl(*this, f);
    }
    template <typename F>
    void visit(F&& f) const {
        visit_impl(*this, f);
    }

private:
    template <typename Self, typename F>
    static void visit_impl(Self& w, F& f) {
        auto lin = [&](const std::string& n, auto& l) {
            f(n + ".weight", l.weight);
            f(n + ".bias", l.bias);
        };
        auto norm = [&](const std::string& n, auto& l) {
            f(n + ".gain", l.gain);
            f(n + ".bias", l.bias);
        };
        auto block = [&](const std::string& n, auto& b) {
            norm(n + ".norm_q", b.norm_q);
            if (b.has_kv_norm) norm(n + ".norm_kv", b.norm_kv);
            lin(n + ".q", b.q);
            lin(n + ".k", b.k);
            lin(n + ".v", b.v);
            lin(n + ".o", b.o);
            norm(n + ".norm_ff", b.norm_ff);
            lin(n + ".ff_in", b.ff_in);
            lin(n + ".ff_out", b.ff_out);
        };
        f(std::string("latent_init"), w.latent_init);
        f(std::string("pos_table"), w.pos_table);
        lin("ff1_in", w.ff1_in);
        lin("ff1_out", w.ff1_out);
        lin("ff2_in", w.ff2_in);
        lin("ff2_out", w.ff2_out);
        block("cross", w.cross);
        for (std::size_t i = 0; i < w.self.size(); ++i) block("self" + std::to_string(i), w.self[i]);
        lin("cls_hidden", w.cls_hidden);
        lin("cls_out", w.cls_out);
    }
};

using ModelParams = ModelWeights<Matrix>;
using ParamVars = ModelWeights<ad::Var>;

// Fourier positional features on a grid_h x grid_w grid; row r*grid_w + c
// holds [sin(pi f u), cos(pi f u), sin(pi f v), cos(pi f v)] for each band f,
// with u, v the cell coordinates scaled to [-1, 1].
Matrix fourier_positions(int grid_h, int grid_w, int bands);

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);
std::size_t parameter_count(const ModelParams& params);

// Binds every parameter as a tape leaf (by reference; params must outlive the tape).
ParamVars bind_params(ad::Tape& tape, const ModelParams& params);

// Cross-window state: M x D.
struct LatentMemory {
    Matrix state;
    std::size_t windows_seen = 0;

    static LatentMemory fresh(const ModelParams& params) { return {params.latent_init, 0}; }
};

// Returns a new memory; the input is untouched.
LatentMemory memory_update(const LatentMemory& memory, const Matrix& window_output);

struct ForwardOptions {
    bool training = false;  // enables dropout
    Rng* rng = nullptr;     // required when training with dropout_p > 0
    // When non-null, receives one (M x T) cross-attention weight matrix per head.
    std::vector<Matrix>* cross_attention = nullptr;
};

// ---- tape-level building blocks ---------------------------------------------

ad::Var tokens_matrix(ad::Tape& tape, std::span<const PatchToken> tokens, const ModelConfig& cfg);

// Linear(token_in -> D), concat positional features, Linear(D + 4*bands -> D).
ad::Var ff1(ad::Var tokens, std::span<const PatchToken> meta, const ParamVars& w,
            const ModelConfig& cfg);
// x + W2 gelu(W1 x + b1) + b2
ad::Var ff2(ad::Var x, const ParamVars& w, const ModelConfig& cfg, ForwardOptions& opts);

// Pre-norm residual block:
//   a = q + MHA(LN(q), LN(kv)); out = a + FF(LN(a)).
// Self-attention passes the same Var as queries and keys_values.
ad::Var attention_block(ad::Var queries, ad::Var keys_values, const BlockWeights<ad::Var>& b,
                        const ModelConfig& cfg, ForwardOptions& opts,
                        std::vector<Matrix>* attention_out = nullptr);

// One window: ff1 -> ff2 -> cross-attention from `memory` -> self-attention blocks.
ad::Var process_window(ad::Var memory, std::span<const PatchToken> tokens, const ParamVars& w,
                       const ModelConfig& cfg, ForwardOptions& opts);

// Per-latent FF + gelu, mean over latents, FF to classes, log-softmax. 1 x C.
ad::Var classify(ad::Var memory, const ParamVars& w, const ModelConfig& cfg);

// Runs a whole window sequence from latent_init and returns 1 x C log-probabilities.
ad::Var stream_log_probs(std::span<const WindowResult> windows, const ParamVars& w,
                         const ModelConfig& cfg, ForwardOptions& opts);

// ---- value-level API (inference) --------------------------------------------

struct WindowOutput {
    Matrix latents;                      // M x D
    std::vector<Matrix> cross_attention;  // per head, only when requested
};

WindowOutput process_window(std::span<const PatchToken> tokens, const LatentMemory& memory,
                            const ModelParams& params, const ModelConfig& cfg,
                            bool record_attention = false);

std::vector<double> classify(const LatentMemory& memory, const ModelParams& params,
                             const ModelConfig& cfg);

class NoInformationError : public DataError {
public:
    NoInformationError() : DataError("stream produced no windows: no information to classify") {}
};

struct StreamPrediction {
    int predicted = -1;
    std::vector<double> log_probs;
    std::size_t windows = 0;
};

StreamPrediction classify_stream(const EventStream& stream, const ModelParams& params,
                                 const ModelConfig& cfg, const ReprConfig& repr);
// Same fold over precomputed windows.
StreamPrediction classify_windows(std::span<const WindowResult> windows, const ModelParams& params,
                                  const ModelConfig& cfg);

int argmax(std::span<const double> values);

}  // namespace evt
