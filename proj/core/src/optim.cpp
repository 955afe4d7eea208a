#include "ustep/optim.hpp"

#include <cmath>

namespace ustep {

void adamw_step(ParamStore& params, AdamState& state, const AdamWOptions& opts) {
    if (state.slots.empty()) {
        state.slots.resize(params.size());
    } else if (state.slots.size() != params.size()) {
        throw ConfigError("adamw: state does not match parameter store");
    }

    state.step += 1;
    const double bias1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.step));
    const double bias2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.step));

    size_t slot_index = 0;
    for (auto& [name, param] : params) {
        if (!param.has_grad()) {
            throw ConfigError("adamw: parameter '" + name + "' has no gradient");
        }
        auto& slot = state.slots[slot_index++];
        const auto g = param.grad();
        auto p = param.mutable_data();
        if (slot.m.empty()) {
            slot.m.assign(p.size(), 0.0);
            slot.v.assign(p.size(), 0.0);
        }
        for (size_t i = 0; i < p.size(); ++i) {
            slot.m[i] = opts.beta1 * slot.m[i] + (1.0 - opts.beta1) * g[i];
            slot.v[i] = opts.beta2 * slot.v[i] + (1.0 - opts.beta2) * g[i] * g[i];
            const double m_hat = slot.m[i] / bias1;
            const double v_hat = slot.v[i] / bias2;
            p[i] -= opts.lr * (m_hat / (std::sqrt(v_hat) + opts.eps) + opts.weight_decay * p[i]);
            if (!std::isfinite(p[i])) {
                throw DataError("adamw: non-finite value in parameter '" + name + "'");
            }
        }
    }
}

} // namespace ustep
