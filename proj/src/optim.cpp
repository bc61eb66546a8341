#include "msef/optim.hpp"

#include <cmath>

#include "msef/errors.hpp"

namespace msef {

void adam_step(Tensor& param, const std::vector<double>& grad, std::vector<double>& m,
               std::vector<double>& v, int64_t step, const AdamHyper& hp) {
    if (grad.size() != param.data.size()) throw ShapeError("adam_step: grad/param size mismatch");
    if (m.size() != param.data.size()) m.assign(param.data.size(), 0.0);
    if (v.size() != param.data.size()) v.assign(param.data.size(), 0.0);
    if (hp.lr <= 0.0) throw InputError("adam_step: learning rate must be positive");
    const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
    for (size_t i = 0; i < param.data.size(); ++i) {
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * grad[i];
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param.data[i] -= hp.lr * mhat / (std::sqrt(vhat) + hp.eps);
    }
}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<const std::vector<double>*>& grads) {
    if (params.size() != grads.size()) throw ShapeError("Adam::step: params/grads count mismatch");
    if (m_.size() < params.size()) {
        m_.resize(params.size());
        v_.resize(params.size());
    }
    ++step_;
    for (size_t i = 0; i < params.size(); ++i) {
        const std::vector<double>* g = grads[i];
        if (g == nullptr || g->empty()) {
            // No gradient reached this parameter this step: treat as zero.
            if (m_[i].empty()) {
                m_[i].assign(params[i]->data.size(), 0.0);
                v_[i].assign(params[i]->data.size(), 0.0);
            }
            std::vector<double> zeros(params[i]->data.size(), 0.0);
            adam_step(*params[i], zeros, m_[i], v_[i], step_, hp_);
            continue;
        }
        adam_step(*params[i], *g, m_[i], v_[i], step_, hp_);
    }
}

}  // namespace msef
