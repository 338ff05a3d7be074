/*
 * Copyright 2026 The srwm-acl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "srwm/trainer.hpp"

#include <cmath>

namespace srwm {

Real lr_schedule(std::size_t step, std::size_t warmup_steps, std::size_t d_model, Real scale) {
    if (step == 0) throw ContractError("lr_schedule: steps are 1-based");
    if (warmup_steps == 0 || d_model == 0) throw ContractError("lr_schedule: warmup_steps and d_model must be positive");
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup_steps);
    const double r = std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
    return static_cast<Real>(static_cast<double>(scale) / std::sqrt(static_cast<double>(d_model)) * r);
}

OptimState make_optim_state(const ModelParams& params, const OptimConfig& cfg) {
    OptimState s;
    for (const auto& [_, t] : params.named()) {
        s.m.emplace_back(t->shape());
        s.v.emplace_back(t->shape());
    }
    s.beta1 = cfg.beta1;
    s.beta2 = cfg.beta2;
    s.eps = cfg.eps;
    return s;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimState& opt, Real lr) {
    if (params.size() != grads.size() || params.size() != opt.m.size())
        throw DimensionError("adam_step: parameter, gradient and moment counts differ");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape() != params[i]->shape() || opt.m[i].shape() != params[i]->shape())
            throw DimensionError("adam_step: shape mismatch for parameter " + std::to_string(i));
        if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(i));
    }
    ++opt.step;
    const double t = static_cast<double>(opt.step);
    const double c1 = 1.0 - std::pow(static_cast<double>(opt.beta1), t);
    const double c2 = 1.0 - std::pow(static_cast<double>(opt.beta2), t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i]->mutable_data();
        auto g = grads[i].data();
        auto m = opt.m[i].mutable_data();
        auto v = opt.v[i].mutable_data();
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = opt.beta1 * m[k] + (Real(1) - opt.beta1) * g[k];
            v[k] = opt.beta2 * v[k] + (Real(1) - opt.beta2) * g[k] * g[k];
            const double mhat = static_cast<double>(m[k]) / c1;
            const double vhat = static_cast<double>(v[k]) / c2;
            p[k] -= static_cast<Real>(static_cast<double>(lr) * mhat / (std::sqrt(vhat) + static_cast<double>(opt.eps)));
        }
    }
}

Real clip_grad_norm(std::span<Tensor> grads, Real max_norm) {
    double sq = 0;
    for (const Tensor& g : grads)
        for (Real v : g.data()) sq += static_cast<double>(v) * static_cast<double>(v);
    const Real norm = static_cast<Real>(std::sqrt(sq));
    if (max_norm > 0 && norm > max_norm) {
        const Real f = max_norm / norm;
        for (Tensor& g : grads)
            for (Real& v : g.mutable_data()) v *= f;
    }
    return norm;
}

}  // namespace srwm
