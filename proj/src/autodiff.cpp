#include "evt/autodiff.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "evt/flops.hpp"
#include "evt/kernels.hpp"
#include "evt/rng.hpp"

namespace evt::ad {

namespace {

thread_local GradientFault t_fault = GradientFault::none;

bool faulty(GradientFault f) { return t_fault == f; }

Tape& tape_of(std::initializer_list<Var> vars) {
    Tape* t = nullptr;
    for (const Var& v : vars) {
        if (!v.valid()) throw std::invalid_argument("op on an empty Var");
        if (t == nullptr) t = v.tape();
        if (v.tape() != t) throw std::invalid_argument("op mixes Vars from different tapes");
    }
    return *t;
}

// Sum over rows, giving a 1 x cols row.
Matrix column_sums(const Matrix& g) {
    Matrix s(1, g.cols());
    for (std::size_t r = 0; r < g.rows(); ++r) {
        const auto row = g.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) s[j] += row[j];
    }
    return s;
}

}  // namespace

ScopedGradientFault::ScopedGradientFault(GradientFault f) : previous_(t_fault) { t_fault = f; }
ScopedGradientFault::~ScopedGradientFault() { t_fault = previous_; }

const Matrix& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Matrix value) {
    Node n;
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant_ref(const Matrix& value) {
    Node n;
    n.external = &value;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const Matrix& value) {
    Node n;
    n.external = &value;
    n.requires_grad = recording_;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

const Matrix& Tape::value(Var v) const {
    if (v.tape_ != this || v.id_ >= nodes_.size()) {
        throw std::invalid_argument("Var does not belong to this tape");
    }
    return node_value(nodes_[v.id_]);
}

Matrix Tape::grad(Var v) const {
    const Node& n = nodes_.at(v.id_);
    if (n.grad.empty()) {
        const Matrix& val = node_value(n);
        return Matrix(val.rows(), val.cols());
    }
    return n.grad;
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(fn));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    if (recording_) {
        for (const Var& in : inputs) {
            if (nodes_[in.id_].requires_grad) {
                n.requires_grad = true;
                break;
            }
        }
        if (n.requires_grad) n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var v, const Matrix& g) {
    Node& n = nodes_[v.id_];
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
        n.grad = g;
    } else {
        n.grad += g;
    }
}

void Tape::accumulate(Var v, Matrix&& g) {
    Node& n = nodes_[v.id_];
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
        n.grad = std::move(g);
    } else {
        n.grad += g;
    }
}

void Tape::backward(Var root) {
    if (!recording_) throw std::logic_error("backward() on an inference tape");
    const Matrix& rv = value(root);
    if (rv.rows() != 1 || rv.cols() != 1) {
        throw std::invalid_argument("backward() needs a scalar root, got " +
                                    std::to_string(rv.rows()) + "x" + std::to_string(rv.cols()));
    }
    FlopPause pause;
    for (Node& n : nodes_) n.grad = Matrix();
    Node& r = nodes_[root.id_];
    if (!r.requires_grad) return;
    r.grad = Matrix(1, 1, 1.0);
    for (std::size_t i = root.id_ + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.grad.empty() || !n.backward) continue;
        n.backward(*this, node_value(n), n.grad);
    }
}

// ---- ops -------------------------------------------------------------------

Var matmul(Var a, Var b) {
    Tape& t = tape_of({a, b});
    return t.record(kernels::matmul(a.value(), b.value()), {a, b},
                    [a, b](Tape& tp, const Matrix&, const Matrix& g) {
                        if (tp.requires_grad(a)) {
                            Matrix da = kernels::matmul_nt(g, b.value());
                            if (faulty(GradientFault::matmul)) da *= 1.5;
                            tp.accumulate(a, std::move(da));
                        }
                        if (tp.requires_grad(b)) tp.accumulate(b, kernels::matmul_tn(a.value(), g));
                    });
}

Var matmul_nt(Var a, Var b) {
    Tape& t = tape_of({a, b});
    return t.record(kernels::matmul_nt(a.value(), b.value()), {a, b},
                    [a, b](Tape& tp, const Matrix&, const Matrix& g) {
                        if (tp.requires_grad(a)) tp.accumulate(a, kernels::matmul(g, b.value()));
                        if (tp.requires_grad(b)) tp.accumulate(b, kernels::matmul_tn(g, a.value()));
                    });
}

Var add(Var a, Var b) {
    Tape& t = tape_of({a, b});
    return t.record(kernels::add(a.value(), b.value()), {a, b},
                    [a, b](Tape& tp, const Matrix&, const Matrix& g) {
                        tp.accumulate(a, g);
                        tp.accumulate(b, g);
                    });
}

Var add_row(Var a, Var row) {
    Tape& t = tape_of({a, row});
    return t.record(kernels::add_row(a.value(), row.value()), {a, row},
                    [a, row](Tape& tp, const Matrix&, const Matrix& g) {
                        tp.accumulate(a, g);
                        if (tp.requires_grad(row)) tp.accumulate(row, column_sums(g));
                    });
}

Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }

Var scale(Var a, double s) {
    Tape& t = tape_of({a});
    return t.record(kernels::scale(a.value(), s), {a},
                    [a, s](Tape& tp, const Matrix&, const Matrix& g) {
                        Matrix da = g;
                        da *= s;
                        tp.accumulate(a, std::move(da));
                    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
    Tape& t = *parts.front().tape();
    const std::size_t rows = parts.front().rows();
    std::size_t cols = 0;
    for (const Var& p : parts) {
        if (p.tape() != &t) throw std::invalid_argument("concat_cols mixes tapes");
        if (p.rows() != rows) throw std::invalid_argument("concat_cols: row counts differ");
        cols += p.cols();
    }
    Matrix out(rows, cols);
    std::size_t offset = 0;
    for (const Var& p : parts) {
        const Matrix& v = p.value();
        for (std::size_t r = 0; r < rows; ++r) {
            const auto src = v.row(r);
            std::copy(src.begin(), src.end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
        }
        offset += v.cols();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return t.record(std::move(out), parts, [inputs](Tape& tp, const Matrix&, const Matrix& g) {
        std::size_t off = 0;
        for (const Var& p : inputs) {
            const std::size_t c = p.cols();
            if (tp.requires_grad(p)) {
                Matrix gp(g.rows(), c);
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    const auto src = g.row(r).subspan(off, c);
                    std::copy(src.begin(), src.end(), gp.row(r).begin());
                }
                tp.accumulate(p, std::move(gp));
            }
            off += c;
        }
    });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
    Tape& t = tape_of({a});
    const Matrix& v = a.value();
    if (start + count > v.cols()) throw std::invalid_argument("slice_cols out of range");
    Matrix out(v.rows(), count);
    for (std::size_t r = 0; r < v.rows(); ++r) {
        const auto src = v.row(r).subspan(start, count);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return t.record(std::move(out), {a}, [a, start](Tape& tp, const Matrix&, const Matrix& g) {
        Matrix ga(a.rows(), a.cols());
        for (std::size_t r = 0; r < g.rows(); ++r) {
            const auto src = g.row(r);
            std::copy(src.begin(), src.end(), ga.row(r).begin() + static_cast<std::ptrdiff_t>(start));
        }
        tp.accumulate(a, std::move(ga));
    });
}

Var gather_rows(Var table, std::span<const std::size_t> rows) {
    Tape& t = tape_of({table});
    const Matrix& v = table.value();
    Matrix out(rows.size(), v.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= v.rows()) throw std::out_of_range("gather_rows index out of range");
        const auto src = v.row(rows[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return t.record(std::move(out), {table}, [table, idx](Tape& tp, const Matrix&, const Matrix& g) {
        Matrix gt(table.rows(), table.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            auto dst = gt.row(idx[i]);
            const auto src = g.row(i);
            for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
        tp.accumulate(table, std::move(gt));
    });
}

Var softmax_rows(Var x) {
    Tape& t = tape_of({x});
    return t.record(kernels::softmax_rows(x.value()), {x},
                    [x](Tape& tp, const Matrix& y, const Matrix& g) {
                        Matrix dx(y.rows(), y.cols());
                        const bool drop_correction = faulty(GradientFault::softmax);
                        for (std::size_t r = 0; r < y.rows(); ++r) {
                            const auto yr = y.row(r);
                            const auto gr = g.row(r);
                            double dot = 0.0;
                            for (std::size_t j = 0; j < yr.size(); ++j) dot += gr[j] * yr[j];
                            if (drop_correction) dot = 0.0;
                            auto dr = dx.row(r);
                            for (std::size_t j = 0; j < yr.size(); ++j) dr[j] = yr[j] * (gr[j] - dot);
                        }
                        tp.accumulate(x, std::move(dx));
                    });
}

Var log_softmax_rows(Var x) {
    Tape& t = tape_of({x});
    return t.record(kernels::log_softmax_rows(x.value()), {x},
                    [x](Tape& tp, const Matrix& y, const Matrix& g) {
                        Matrix dx(y.rows(), y.cols());
                        for (std::size_t r = 0; r < y.rows(); ++r) {
                            const auto yr = y.row(r);
                            const auto gr = g.row(r);
                            double gsum = 0.0;
                            for (double v : gr) gsum += v;
                            auto dr = dx.row(r);
                            for (std::size_t j = 0; j < yr.size(); ++j) {
                                dr[j] = gr[j] - std::exp(yr[j]) * gsum;
                            }
                        }
                        tp.accumulate(x, std::move(dx));
                    });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    Tape& t = tape_of({x, gain, bias});
    auto res = kernels::layer_norm(x.value(), gain.value(), bias.value(), eps);
    auto saved = std::make_shared<kernels::LayerNormResult>(
        kernels::LayerNormResult{Matrix(), std::move(res.normalized), std::move(res.rstd)});
    return t.record(std::move(res.out), {x, gain, bias},
                    [x, gain, bias, saved](Tape& tp, const Matrix&, const Matrix& g) {
                        const Matrix& xhat = saved->normalized;
                        const Matrix& gm = gain.value();
                        const std::size_t n = xhat.cols();
                        if (tp.requires_grad(x)) {
                            const bool drop_term = faulty(GradientFault::layer_norm);
                            Matrix dx(xhat.rows(), n);
                            std::vector<double> dxhat(n);
                            for (std::size_t r = 0; r < xhat.rows(); ++r) {
                                const auto gr = g.row(r);
                                const auto xr = xhat.row(r);
                                double mean_d = 0.0;
                                double mean_dx = 0.0;
                                for (std::size_t j = 0; j < n; ++j) {
                                    dxhat[j] = gr[j] * gm[j];
                                    mean_d += dxhat[j];
                                    mean_dx += dxhat[j] * xr[j];
                                }
                                mean_d /= static_cast<double>(n);
                                mean_dx /= static_cast<double>(n);
                                if (drop_term) mean_dx = 0.0;
                                auto dr = dx.row(r);
                                const double rstd = saved->rstd[r];
                                for (std::size_t j = 0; j < n; ++j) {
                                    dr[j] = rstd * (dxhat[j] - mean_d - xr[j] * mean_dx);
                                }
                            }
                            tp.accumulate(x, std::move(dx));
                        }
                        if (tp.requires_grad(gain)) {
                            Matrix dg(1, n);
                            for (std::size_t r = 0; r < xhat.rows(); ++r) {
                                for (std::size_t j = 0; j < n; ++j) dg[j] += g(r, j) * xhat(r, j);
                            }
                            tp.accumulate(gain, std::move(dg));
                        }
                        if (tp.requires_grad(bias)) tp.accumulate(bias, column_sums(g));
                    });
}

Var gelu(Var x) {
    Tape& t = tape_of({x});
    return t.record(kernels::gelu(x.value()), {x}, [x](Tape& tp, const Matrix&, const Matrix& g) {
        const Matrix& xv = x.value();
        Matrix dx(xv.rows(), xv.cols());
        const bool wrong = faulty(GradientFault::gelu);
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const double d = wrong ? 0.5 * (1.0 + std::tanh(xv[i])) : kernels::gelu_derivative(xv[i]);
            dx[i] = g[i] * d;
        }
        tp.accumulate(x, std::move(dx));
    });
}

Var mean_rows(Var x) {
    Tape& t = tape_of({x});
    return t.record(kernels::mean_rows(x.value()), {x},
                    [x](Tape& tp, const Matrix&, const Matrix& g) {
                        const std::size_t rows = x.rows();
                        Matrix dx(rows, x.cols());
                        const double inv = 1.0 / static_cast<double>(rows);
                        for (std::size_t r = 0; r < rows; ++r) {
                            auto dr = dx.row(r);
                            for (std::size_t j = 0; j < dr.size(); ++j) dr[j] = g[j] * inv;
                        }
                        tp.accumulate(x, std::move(dx));
                    });
}

Var sum(Var x) {
    Tape& t = tape_of({x});
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    count_flops_executed(x.value().size());
    return t.record(Matrix(1, 1, s), {x}, [x](Tape& tp, const Matrix&, const Matrix& g) {
        tp.accumulate(x, Matrix(x.rows(), x.cols(), g[0]));
    });
}

Var pick(Var x, std::size_t r, std::size_t c) {
    Tape& t = tape_of({x});
    const Matrix& v = x.value();
    if (r >= v.rows() || c >= v.cols()) throw std::out_of_range("pick index out of range");
    return t.record(Matrix(1, 1, v(r, c)), {x}, [x, r, c](Tape& tp, const Matrix&, const Matrix& g) {
        Matrix dx(x.rows(), x.cols());
        dx(r, c) = g[0];
        tp.accumulate(x, std::move(dx));
    });
}

Var dropout(Var x, double p, Rng& rng) {
    Tape& t = tape_of({x});
    if (p <= 0.0) return x;
    if (p >= 1.0) throw std::invalid_argument("dropout probability must be < 1");
    const Matrix& v = x.value();
    auto mask = std::make_shared<Matrix>(v.rows(), v.cols());
    const double keep_scale = 1.0 / (1.0 - p);
    Matrix out(v.rows(), v.cols());
    for (std::size_t i = 0; i < v.size(); ++i) {
        (*mask)[i] = rng.uniform() < p ? 0.0 : keep_scale;
        out[i] = v[i] * (*mask)[i];
    }
    count_flops_executed(flop_cost::kElementwise * v.size());
    return t.record(std::move(out), {x}, [x, mask](Tape& tp, const Matrix&, const Matrix& g) {
        Matrix dx = g;
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= (*mask)[i];
        tp.accumulate(x, std::move(dx));
    });
}

}  // namespace evt::ad
