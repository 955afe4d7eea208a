#pragma once

#include <functional>
#include <string>

#include "ustep/param_store.hpp"

namespace ustep {

struct GradCheckOptions {
    double eps = 1e-5;
    /// Added to the first analytic gradient element before comparison.
    /// Exists so failure handling (for example the CLI's nonzero exit) can
    /// be exercised against a known-bad gradient.
    double inject_error = 0.0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    int64_t worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Compares backward() gradients of the scalar `f(params)` against central
/// finite differences, elementwise over every parameter. The relative error
/// uses denominator max(|analytic|, |numeric|, 1e-8). `f` must be
/// deterministic. Gradients in `params` are clobbered.
GradCheckResult gradcheck(const std::function<Tensor()>& f, ParamStore& params,
                          const GradCheckOptions& opts = {});

} // namespace ustep
