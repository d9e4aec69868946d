#include "denomae/param.hpp"

#include <cmath>

#include "denomae/errors.hpp"

namespace denomae {

namespace {

void validate(const AdamConfig& cfg) {
    if (!(cfg.lr > 0.0)) throw ConfigError("adam: lr must be > 0, got " + std::to_string(cfg.lr));
    if (!(cfg.beta1 > 0.0 && cfg.beta1 < 1.0)) {
        throw ConfigError("adam: beta1 must be in (0,1), got " + std::to_string(cfg.beta1));
    }
    if (!(cfg.beta2 > 0.0 && cfg.beta2 < 1.0)) {
        throw ConfigError("adam: beta2 must be in (0,1), got " + std::to_string(cfg.beta2));
    }
    if (cfg.eps < 0.0) throw ConfigError("adam: eps must be >= 0");
    if (cfg.weight_decay < 0.0) throw ConfigError("adam: weight_decay must be >= 0");
}

}  // namespace

void adamw_step(std::span<Parameter* const> params, const AdamConfig& cfg, bool zero_grads) {
    validate(cfg);
    for (Parameter* p : params) {
        const int64_t t = p->step_count + 1;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        for (int64_t i = 0; i < p->value.numel(); ++i) {
            const double g = p->grad.data[i];
            const double m = cfg.beta1 * p->adam_m.data[i] + (1.0 - cfg.beta1) * g;
            const double v = cfg.beta2 * p->adam_v.data[i] + (1.0 - cfg.beta2) * g * g;
            p->adam_m.data[i] = static_cast<float>(m);
            p->adam_v.data[i] = static_cast<float>(v);
            const double m_hat = m / bc1;
            const double v_hat = v / bc2;
            const double denom = std::sqrt(v_hat) + cfg.eps;
            const double adam_term = (m_hat == 0.0 && denom == 0.0) ? 0.0 : m_hat / denom;
            const double step =
                cfg.lr * (adam_term + cfg.weight_decay * static_cast<double>(p->value.data[i]));
            p->value.data[i] = static_cast<float>(static_cast<double>(p->value.data[i]) - step);
        }
        p->step_count = t;
        require_finite(p->value, "adamw_step");
        if (zero_grads) p->zero_grad();
    }
}

void adam_step(std::span<Parameter* const> params, const AdamConfig& cfg, bool zero_grads) {
    AdamConfig plain = cfg;
    plain.weight_decay = 0.0;
    adamw_step(params, plain, zero_grads);
}

}  // namespace denomae
