#pragma once

#include <vector>

#include "evt/matrix.hpp"

// Dense kernels used by the autodiff ops. The default versions parallelize
// over output rows with OpenMP; every output element is still reduced in the
// same order as the serial `reference` twins, so results are bitwise equal.
// Forward kernels report executed work to the active FlopCounter.
namespace evt::kernels {

Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b

Matrix add(const Matrix& a, const Matrix& b);
Matrix add_row(const Matrix& a, const Matrix& row);  // row is 1 x cols, broadcast down
Matrix scale(const Matrix& a, double s);

Matrix softmax_rows(const Matrix& x);
Matrix log_softmax_rows(const Matrix& x);
Matrix gelu(const Matrix& x);
double gelu_derivative(double x);

struct LayerNormResult {
    Matrix out;
    Matrix normalized;          // (x - mean) * rstd, before the affine part
    std::vector<double> rstd;   // per row
};
LayerNormResult layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, double eps);

Matrix mean_rows(const Matrix& x);  // 1 x cols

namespace reference {
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix softmax_rows(const Matrix& x);
}  // namespace reference

}  // namespace evt::kernels
