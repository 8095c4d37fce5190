#include "evt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "evt/flops.hpp"

namespace evt::kernels {

namespace {

constexpr std::size_t kParallelWork = 1 << 15;

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileCols = 16;

// 8 doubles; one zmm register with AVX-512, two ymm otherwise.
typedef double v8d __attribute__((vector_size(64)));

inline v8d load8(const double* p) {
    v8d v;
    __builtin_memcpy(&v, p, sizeof(v));
    return v;
}
inline void store8(double* p, v8d v) { __builtin_memcpy(p, &v, sizeof(v)); }

// One kTileRows x kTileCols block of c = a * b held in registers. Every
// element is still summed from 0.0 in increasing k, like the reference loop
// (separate multiply and add; contraction is disabled for this file).
inline void tile_full(const double* a, const double* b, double* c, std::size_t k, std::size_t n) {
    v8d c00 = {}, c01 = {}, c10 = {}, c11 = {}, c20 = {}, c21 = {}, c30 = {}, c31 = {};
    const double* a0 = a;
    const double* a1 = a + k;
    const double* a2 = a + 2 * k;
    const double* a3 = a + 3 * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
        const v8d b0 = load8(b + kk * n);
        const v8d b1 = load8(b + kk * n + 8);
        const double x0 = a0[kk], x1 = a1[kk], x2 = a2[kk], x3 = a3[kk];
        c00 += x0 * b0;
        c01 += x0 * b1;
        c10 += x1 * b0;
        c11 += x1 * b1;
        c20 += x2 * b0;
        c21 += x2 * b1;
        c30 += x3 * b0;
        c31 += x3 * b1;
    }
    store8(c, c00);
    store8(c + 8, c01);
    store8(c + n, c10);
    store8(c + n + 8, c11);
    store8(c + 2 * n, c20);
    store8(c + 2 * n + 8, c21);
    store8(c + 3 * n, c30);
    store8(c + 3 * n + 8, c31);
}

// Ragged edge tiles.
inline void tile_any(const double* a, const double* b, double* c, std::size_t rows, std::size_t cols,
                     std::size_t k, std::size_t n) {
    double acc[kTileRows][kTileCols] = {};
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double* brow = b + kk * n;
        for (std::size_t r = 0; r < rows; ++r) {
            const double av = a[r * k + kk];
            for (std::size_t j = 0; j < cols; ++j) acc[r][j] += av * brow[j];
        }
    }
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) c[r * n + j] = acc[r][j];
}

// c = a * b; a is m x k, b is k x n, all row-major.
void matmul_rows(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
    const auto blocks = static_cast<std::ptrdiff_t>((m + kTileRows - 1) / kTileRows);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
    for (std::ptrdiff_t ib = 0; ib < blocks; ++ib) {
        const std::size_t i0 = static_cast<std::size_t>(ib) * kTileRows;
        const std::size_t rows = std::min(kTileRows, m - i0);
        for (std::size_t j0 = 0; j0 < n; j0 += kTileCols) {
            const std::size_t cols = std::min(kTileCols, n - j0);
            const double* ap = a + i0 * k;
            const double* bp = b + j0;
            double* cp = c + i0 * n + j0;
            if (rows == kTileRows && cols == kTileCols) {
                tile_full(ap, bp, cp, k, n);
            } else {
                tile_any(ap, bp, cp, rows, cols, k, n);
            }
        }
    }
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Matrix c(a.rows(), b.cols());
    matmul_rows(a.data().data(), b.data().data(), c.data().data(), a.rows(), a.cols(), b.cols());
    count_flops_executed(flop_cost::matmul(a.rows(), a.cols(), b.cols()));
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
    const Matrix bt = transpose(b);
    Matrix c(a.rows(), b.rows());
    matmul_rows(a.data().data(), bt.data().data(), c.data().data(), a.rows(), a.cols(), b.rows());
    count_flops_executed(flop_cost::matmul(a.rows(), a.cols(), b.rows()));
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows(), "matmul_tn: inner dimensions differ");
    const Matrix at = transpose(a);
    Matrix c(a.cols(), b.cols());
    matmul_rows(at.data().data(), b.data().data(), c.data().data(), a.cols(), a.rows(), b.cols());
    count_flops_executed(flop_cost::matmul(a.cols(), a.rows(), b.cols()));
    return c;
}

Matrix add(const Matrix& a, const Matrix& b) {
    require(a.same_shape(b), "add: shape mismatch");
    Matrix c = a;
    c += b;
    count_flops_executed(flop_cost::kElementwise * c.size());
    return c;
}

Matrix add_row(const Matrix& a, const Matrix& row) {
    require(row.rows() == 1 && row.cols() == a.cols(), "add_row: bias shape mismatch");
    Matrix c = a;
    for (std::size_t r = 0; r < c.rows(); ++r) {
        auto cr = c.row(r);
        for (std::size_t j = 0; j < cr.size(); ++j) cr[j] += row[j];
    }
    count_flops_executed(flop_cost::kElementwise * c.size());
    return c;
}

Matrix scale(const Matrix& a, double s) {
    Matrix c = a;
    c *= s;
    count_flops_executed(flop_cost::kElementwise * c.size());
    return c;
}

Matrix softmax_rows(const Matrix& x) {
    Matrix y(x.rows(), x.cols());
    const auto rows = static_cast<std::ptrdiff_t>(x.rows());
#pragma omp parallel for schedule(static) if (x.size() > kParallelWork)
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
        const auto in = x.row(r);
        auto out = y.row(r);
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
        }
        for (double& v : out) v /= sum;
    }
    count_flops_executed(flop_cost::kSoftmax * x.size());
    return y;
}

Matrix log_softmax_rows(const Matrix& x) {
    Matrix y(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto in = x.row(r);
        auto out = y.row(r);
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (double v : in) sum += std::exp(v - mx);
        const double lse = mx + std::log(sum);
        for (std::size_t j = 0; j < in.size(); ++j) out[j] = in[j] - lse;
    }
    count_flops_executed(flop_cost::kLogSoftmax * x.size());
    return y;
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Matrix gelu(const Matrix& x) {
    Matrix y(x.rows(), x.cols());
    const auto in = x.data();
    auto out = y.data();
    for (std::size_t i = 0; i < in.size(); ++i) {
        const double v = in[i];
        out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
    }
    count_flops_executed(flop_cost::kGelu * x.size());
    return y;
}

double gelu_derivative(double v) {
    const double u = kGeluC * (v + kGeluA * v * v * v);
    const double th = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
    return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
}

LayerNormResult layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps) {
    require(gain.rows() == 1 && gain.cols() == x.cols(), "layer_norm: gain length mismatch");
    require(bias.rows() == 1 && bias.cols() == x.cols(), "layer_norm: bias length mismatch");
    LayerNormResult res{Matrix(x.rows(), x.cols()), Matrix(x.rows(), x.cols()),
                        std::vector<double>(x.rows())};
    const double n = static_cast<double>(x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto in = x.row(r);
        auto xhat = res.normalized.row(r);
        auto out = res.out.row(r);
        double mean = 0.0;
        for (double v : in) mean += v;
        mean /= n;
        double var = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            xhat[j] = in[j] - mean;
            var += xhat[j] * xhat[j];
        }
        var /= n;
        const double rstd = 1.0 / std::sqrt(var + eps);
        res.rstd[r] = rstd;
        for (std::size_t j = 0; j < in.size(); ++j) {
            xhat[j] *= rstd;
            out[j] = xhat[j] * gain[j] + bias[j];
        }
    }
    count_flops_executed(flop_cost::kLayerNorm * x.size());
    return res;
}

Matrix mean_rows(const Matrix& x) {
    Matrix y(1, x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto in = x.row(r);
        for (std::size_t j = 0; j < in.size(); ++j) y[j] += in[j];
    }
    const double inv = x.rows() == 0 ? 0.0 : 1.0 / static_cast<double>(x.rows());
    y *= inv;
    count_flops_executed(flop_cost::kMeanRows * x.size());
    return y;
}

namespace reference {

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    }
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
            c(i, j) = s;
        }
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    require(a.rows() == b.rows(), "matmul_tn: inner dimensions differ");
    Matrix c(a.cols(), b.cols());
    for (std::size_t i = 0; i < a.cols(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.rows(); ++k) s += a(k, i) * b(k, j);
            c(i, j) = s;
        }
    }
    return c;
}

Matrix softmax_rows(const Matrix& x) {
    Matrix y(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double mx = x(r, 0);
        for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x(r, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            y(r, j) = std::exp(x(r, j) - mx);
            sum += y(r, j);
        }
        for (std::size_t j = 0; j < x.cols(); ++j) y(r, j) /= sum;
    }
    return y;
}

}  // namespace reference

}  // namespace evt::kernels
