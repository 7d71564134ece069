#include "spdda/optim.hpp"

#include <cmath>

#include "spdda/errors.hpp"

namespace spdda::optim {

void AdamState::init_for(const std::vector<Tensor*>& params) {
    m.clear();
    v.clear();
    for (const Tensor* p : params) {
        m.emplace_back(p->shape);
        v.emplace_back(p->shape);
    }
    step = 0;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, const AdamConfig& cfg) {
    if (!state.initialized()) state.init_for(params);
    if (state.m.size() != params.size() || grads.size() != params.size())
        throw shape_error("adam_step: state/grad count mismatch");
    state.step += 1;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        if (m.shape != p.shape)
            throw shape_error("adam_step: moment shape " + shape_str(m.shape) +
                              " does not match parameter " + shape_str(p.shape));
        for (size_t j = 0; j < p.data.size(); ++j) {
            double g = grads[i] ? grads[i]->data[j] : 0.0;
            m.data[j] = cfg.beta1 * m.data[j] + (1.0 - cfg.beta1) * g;
            v.data[j] = cfg.beta2 * v.data[j] + (1.0 - cfg.beta2) * g * g;
            double mh = m.data[j] / bc1;
            double vh = v.data[j] / bc2;
            p.data[j] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
        }
    }
}

}  // namespace spdda::optim
