#pragma once

#include <cstdint>
#include <vector>

#include "spdda/tensor.hpp"

namespace spdda::optim {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First/second moments, one entry per parameter tensor, plus the shared
// step counter used for bias correction.
struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    uint64_t step = 0;

    void init_for(const std::vector<Tensor*>& params);
    bool initialized() const { return !m.empty(); }
};

// One Adam update over a flat parameter list. Gradients may be null for
// parameters that received no gradient this step (treated as zero).
void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, const AdamConfig& cfg);

}  // namespace spdda::optim
