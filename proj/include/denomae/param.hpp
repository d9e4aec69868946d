#pragma once

#include <span>
#include <string>
#include <vector>

#include "denomae/tensor.hpp"

namespace denomae {

// A learnable tensor with its gradient and Adam moment buffers. The moments
// are zero until the first optimizer step.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;
    int64_t step_count = 0;

    Parameter() = default;
    Parameter(std::string n, std::vector<int> shape)
        : name(std::move(n)), value(shape), grad(shape), adam_m(shape), adam_v(shape) {}

    void zero_grad() {
        for (auto& g : grad.data) g = 0.0f;
    }
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// Decoupled-weight-decay Adam with bias correction. Updates in double,
// stores back to f32. Increments step_count; zeroes grads only on request.
void adamw_step(std::span<Parameter* const> params, const AdamConfig& cfg, bool zero_grads);

// Plain Adam: adamw with the decay term pinned to zero.
void adam_step(std::span<Parameter* const> params, const AdamConfig& cfg, bool zero_grads);

}  // namespace denomae
