#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "evt/matrix.hpp"

namespace evt {
class Rng;
}

// Tape-based reverse-mode differentiation over Matrix values.
namespace evt::ad {

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Matrix& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    // Receives the node's own forward value and the gradient flowing into it.
    using BackwardFn =
        std::function<void(Tape&, const Matrix& out_value, const Matrix& out_grad)>;

    // With record_gradients = false the tape only holds forward values
    // (inference mode): no closures are kept and backward() is rejected.
    explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    std::size_t size() const { return nodes_.size(); }

    Var constant(Matrix value);
    // Leaves referring to caller-owned storage, which must outlive the tape.
    Var constant_ref(const Matrix& value);
    Var parameter(const Matrix& value);

    const Matrix& value(Var v) const;
    bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }

    // Gradient of the last backward() root w.r.t. v; zeros if v was not reached.
    Matrix grad(Var v) const;

    // Reverse accumulation from a 1x1 root. Throws std::invalid_argument otherwise.
    void backward(Var root);

    // Appends an op node. `fn` runs during backward only if some input requires grad.
    Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);
    Var record(Matrix value, std::span<const Var> inputs, BackwardFn fn);

    // For use inside BackwardFn: adds g into v's gradient if v requires grad.
    void accumulate(Var v, const Matrix& g);
    void accumulate(Var v, Matrix&& g);

private:
    struct Node {
        Matrix owned;
        const Matrix* external = nullptr;
        bool requires_grad = false;
        BackwardFn backward;
        Matrix grad;  // empty until something flows in
    };

    const Matrix& node_value(const Node& n) const { return n.external ? *n.external : n.owned; }

    bool recording_;
    std::deque<Node> nodes_;  // deque: node references stay valid while recording
};

// Fault injection for negative-control tests: corrupts one backward rule on
// the current thread while alive.
enum class GradientFault { none, softmax, gelu, layer_norm, matmul };

class ScopedGradientFault {
public:
    explicit ScopedGradientFault(GradientFault f);
    ~ScopedGradientFault();
    ScopedGradientFault(const ScopedGradientFault&) = delete;
    ScopedGradientFault& operator=(const ScopedGradientFault&) = delete;

private:
    GradientFault previous_;
};

// ---- ops -------------------------------------------------------------------

Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast 1 x cols bias
Var linear(Var x, Var weight, Var bias);  // x * W + b
Var scale(Var a, double s);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var gather_rows(Var table, std::span<const std::size_t> rows);
Var softmax_rows(Var x);
Var log_softmax_rows(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var gelu(Var x);
Var mean_rows(Var x);  // 1 x cols
Var sum(Var x);        // 1 x 1
Var pick(Var x, std::size_t r, std::size_t c);  // 1 x 1
// Inverted dropout: zeroes with probability p and scales survivors by 1/(1-p).
Var dropout(Var x, double p, Rng& rng);

}  // namespace evt::ad
