#pragma once

#include <cstdint>
#include <vector>

#include "msef/tensor.hpp"

namespace msef {

struct AdamHyper {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are keyed by slot index; the
// caller must pass parameters in the same order every step.
class Adam {
public:
    explicit Adam(AdamHyper hp = {}) : hp_(hp) {}

    void step(const std::vector<Tensor*>& params, const std::vector<const std::vector<double>*>& grads);

    int64_t step_count() const { return step_; }
    const AdamHyper& hyper() const { return hp_; }
    AdamHyper& hyper() { return hp_; }

    // Exposed for checkpoint round-trips.
    std::vector<std::vector<double>>& first_moments() { return m_; }
    std::vector<std::vector<double>>& second_moments() { return v_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }
    void set_step_count(int64_t s) { step_ = s; }

private:
    AdamHyper hp_;
    int64_t step_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

// Single-tensor update used by the class; exposed for direct tests.
void adam_step(Tensor& param, const std::vector<double>& grad, std::vector<double>& m,
               std::vector<double>& v, int64_t step, const AdamHyper& hp);

}  // namespace msef
