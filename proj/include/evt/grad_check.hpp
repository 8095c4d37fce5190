#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "evt/autodiff.hpp"
#include "evt/matrix.hpp"

namespace evt {

// Builds a scalar (1x1) on `tape` from one Var per parameter.
using ScalarFunction = std::function<ad::Var(ad::Tape& tape, std::span<const ad::Var> params)>;

struct GradCheckOptions {
    double step = 1e-5;
    // Coordinates checked per parameter; 0 checks all of them.
    std::size_t max_coords_per_param = 0;
    std::uint64_t seed = 0;
    // Denominator floor so vanishing gradients do not read as large relative error.
    double abs_floor = 1e-6;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Compares reverse-mode gradients against central differences
// (f(x+h) - f(x-h)) / 2h, coordinate by coordinate. Relative error is
// |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
GradCheckResult grad_check(const ScalarFunction& f, std::span<const Matrix> params,
                           const GradCheckOptions& options = {});

}  // namespace evt
