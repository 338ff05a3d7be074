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

#pragma once

// Tape gradients of a small model against central finite differences.

#include "srwm/model.hpp"

#include <string>
#include <vector>

namespace srwm {

struct GradCheckConfig {
    ModelConfig model = [] {
        ModelConfig m;
        m.d_model = 16;
        m.n_layers = 2;
        m.n_heads = 2;
        m.input_dim = 4;
        m.n_outputs = 3;
        return m;
    }();
    std::size_t seq_len = 10;
    Real eps = Real(1e-5);
    std::uint64_t seed = 0;
};

struct TensorCheck {
    std::string name;
    std::size_t size = 0;
    Real max_abs_error = 0;
    // max |analytic - numeric| / max(max |analytic|, max |numeric|)
    Real rel_error = 0;
};

struct GradCheckReport {
    std::vector<TensorCheck> tensors;
    Real max_rel_error = 0;
};

// Loss: summed cross-entropy of every step's logits against random targets
// over a random labeled/unlabeled input stream.
GradCheckReport model_gradcheck(const GradCheckConfig& cfg);

}  // namespace srwm
