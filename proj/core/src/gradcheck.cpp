#include "ustep/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace ustep {

GradCheckResult gradcheck(const std::function<Tensor()>& f, ParamStore& params,
                          const GradCheckOptions& opts) {
    if (opts.eps <= 0.0) {
        throw ConfigError("gradcheck: eps must be positive");
    }

    params.zero_grad();
    {
        Tensor loss = f();
        backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& [name, p] : params) {
        auto g = p.grad();
        analytic.emplace_back(g.begin(), g.end());
    }
    if (opts.inject_error != 0.0 && !analytic.empty() && !analytic.front().empty()) {
        analytic.front().front() += opts.inject_error;
    }

    GradCheckResult result;
    NoGradGuard no_grad; // finite differences only need values
    size_t param_index = 0;
    for (auto& [name, p] : params) {
        auto values = p.mutable_data();
        const auto& grads = analytic[param_index++];
        for (size_t i = 0; i < values.size(); ++i) {
            const double original = values[i];
            values[i] = original + opts.eps;
            const double plus = f().item();
            values[i] = original - opts.eps;
            const double minus = f().item();
            values[i] = original;

            const double numeric = (plus - minus) / (2.0 * opts.eps);
            const double a = grads[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = name;
                result.worst_index = static_cast<int64_t>(i);
                result.worst_analytic = a;
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

} // namespace ustep
