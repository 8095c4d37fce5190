#include "evt/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "evt/rng.hpp"

namespace evt {

namespace {

double evaluate(const ScalarFunction& f, std::span<const Matrix> params) {
    ad::Tape tape(false);
    std::vector<ad::Var> vars;
    vars.reserve(params.size());
    for (const Matrix& p : params) vars.push_back(tape.constant_ref(p));
    const ad::Var out = f(tape, vars);
    if (out.rows() != 1 || out.cols() != 1) throw std::invalid_argument("grad_check: f is not scalar");
    return out.value()[0];
}

}  // namespace

GradCheckResult grad_check(const ScalarFunction& f, std::span<const Matrix> params,
                           const GradCheckOptions& options) {
    std::vector<Matrix> analytic;
    {
        ad::Tape tape;
        std::vector<ad::Var> vars;
        vars.reserve(params.size());
        for (const Matrix& p : params) vars.push_back(tape.parameter(p));
        const ad::Var out = f(tape, vars);
        tape.backward(out);
        for (const ad::Var& v : vars) analytic.push_back(tape.grad(v));
    }

    std::vector<Matrix> work(params.begin(), params.end());
    Rng rng(options.seed);
    GradCheckResult result;
    for (std::size_t pi = 0; pi < work.size(); ++pi) {
        std::vector<std::size_t> coords(work[pi].size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (options.max_coords_per_param != 0 && coords.size() > options.max_coords_per_param) {
            // Partial Fisher-Yates: the first k entries become a uniform sample.
            for (std::size_t i = 0; i < options.max_coords_per_param; ++i) {
                std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
            }
            coords.resize(options.max_coords_per_param);
        }
        for (std::size_t idx : coords) {
            const double original = work[pi][idx];
            work[pi][idx] = original + options.step;
            const double up = evaluate(f, work);
            work[pi][idx] = original - options.step;
            const double down = evaluate(f, work);
            work[pi][idx] = original;

            const double numeric = (up - down) / (2.0 * options.step);
            const double a = analytic[pi][idx];
            const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
            const double rel = std::abs(a - numeric) / denom;
            ++result.coords_checked;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = pi;
                result.worst_index = idx;
                result.worst_analytic = a;
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

}  // namespace evt
