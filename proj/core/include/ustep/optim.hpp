#pragma once

#include <cstdint>
#include <vector>

#include "ustep/param_store.hpp"

namespace ustep {

struct AdamWOptions {
    double lr = 0.01;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment buffers plus the shared step counter. Slots follow
/// the parameter store's insertion order and are allocated on first use.
struct AdamState {
    struct Slot {
        std::vector<double> m;
        std::vector<double> v;
    };
    std::vector<Slot> slots;
    int64_t step = 0;
};

/// One decoupled-weight-decay Adam update with bias correction. Gradients
/// are left untouched; the caller zeroes them. Throws ConfigError when a
/// parameter has no gradient buffer and DataError when an update produces a
/// non-finite parameter.
void adamw_step(ParamStore& params, AdamState& state, const AdamWOptions& opts = {});

} // namespace ustep
