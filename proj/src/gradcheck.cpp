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

#include "srwm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace srwm {

namespace {

struct Stream {
    std::vector<std::vector<Real>> xs;
    std::vector<std::optional<std::size_t>> labels;
    std::vector<std::size_t> targets;

    std::vector<LabeledInput> inputs() const {
        std::vector<LabeledInput> out;
        for (std::size_t t = 0; t < xs.size(); ++t) out.push_back({xs[t], labels[t]});
        return out;
    }
};

Var stream_loss(Tape& tape, const ModelParams& params, const Stream& s) {
    const auto inputs = s.inputs();
    const ForwardResult fr = model_forward(tape, params, inputs);
    std::vector<Var> terms;
    for (std::size_t t = 0; t < fr.logits.size(); ++t) terms.push_back(tape.cross_entropy(fr.logits[t], s.targets[t]));
    return tape.sum(tape.concat(terms));
}

Real loss_value(const ModelParams& params, const Stream& s) {
    Tape tape(Tape::Mode::Inference);
    return stream_loss(tape, params, s).value().item();
}

}  // namespace

GradCheckReport model_gradcheck(const GradCheckConfig& cfg) {
    cfg.model.validate();
    if (cfg.seq_len == 0) throw ConfigError("gradcheck seq_len must be positive");
    if (!(cfg.eps > 0)) throw ConfigError("gradcheck eps must be positive");
    ModelConfig mc = cfg.model;
    if (mc.input_dim == 0) throw ConfigError("gradcheck needs model.input_dim > 0");
    ModelParams params = init_model(mc);

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> label(0, mc.n_outputs - 1);
    Stream s;
    for (std::size_t t = 0; t < cfg.seq_len; ++t) {
        std::vector<Real> x(mc.input_dim);
        for (Real& v : x) v = static_cast<Real>(normal(rng));
        s.xs.push_back(std::move(x));
        s.labels.push_back(t % 3 == 2 ? std::nullopt : std::optional<std::size_t>(label(rng)));
        s.targets.push_back(label(rng));
    }

    Tape tape;
    const Gradients grads = tape.backward(stream_loss(tape, params, s));

    GradCheckReport report;
    for (auto& [name, p] : params.named()) {
        const Tensor analytic = grads.contains(*p) ? grads.at(*p) : Tensor(p->shape());
        auto a = analytic.data();
        auto w = p->mutable_data();
        TensorCheck tc{name, p->size(), 0, 0};
        Real amax = 0, nmax = 0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const Real keep = w[i];
            w[i] = keep + cfg.eps;
            const Real up = loss_value(params, s);
            w[i] = keep - cfg.eps;
            const Real down = loss_value(params, s);
            w[i] = keep;
            const Real numeric = (up - down) / (2 * cfg.eps);
            tc.max_abs_error = std::max(tc.max_abs_error, std::abs(a[i] - numeric));
            amax = std::max(amax, std::abs(a[i]));
            nmax = std::max(nmax, std::abs(numeric));
        }
        const Real scale = std::max(amax, nmax);
        tc.rel_error = scale > 0 ? tc.max_abs_error / scale : Real(0);
        report.max_rel_error = std::max(report.max_rel_error, tc.rel_error);
        report.tensors.push_back(std::move(tc));
    }
    return report;
}

}  // namespace srwm
