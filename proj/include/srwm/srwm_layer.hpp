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

// Self-referential weight matrix (SRWM), 4-learning-rate multi-head form.
//
// Each head owns a fast weight matrix W of shape (d_out + 2*d_in + 4) x d_in,
// row-partitioned into [o | k | q | beta] sub-blocks. Per step:
//
//   [o, k, q, beta] = W u
//   v_s    = W_s softmax(q),  vbar_s = W_s softmax(k)       for s in {o,k,q,beta}
//   W_s'   = W_s + sigmoid(beta_s) (v_s - vbar_s) (x) softmax(k)
//
// The output o is read from W before the self-update. W0 is the only
// trainable tensor of the layer.

#include "srwm/tensor.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace srwm {

enum class SrwmBlock { Out = 0, Key = 1, Query = 2, Rate = 3 };

struct SrwmDims {
    std::size_t d_in = 0;
    std::size_t d_out = 0;
    std::size_t n_heads = 1;

    std::size_t rows() const { return d_out + 2 * d_in + 4; }
    std::size_t d_model() const { return n_heads * d_in; }
    // Half-open row range of a sub-block.
    std::pair<std::size_t, std::size_t> block_rows(SrwmBlock b) const;
};

struct SrwmSeed {
    SrwmDims dims;
    std::vector<Tensor> heads;  // W0 per head, requires_grad
};

SrwmSeed srwm_init(std::size_t d_in, std::size_t d_out, std::size_t n_heads, std::uint64_t seed);

// Value-level view of one step, for inspection and tests.
struct SrwmTrace {
    std::vector<Real> o, k, q, beta;
    std::vector<Real> phi_k, phi_q;
    std::vector<Real> v, vbar;
    std::array<Real, 4> rates{};  // sigmoid(beta) per sub-block
    Tensor next;                  // W after the update
};

SrwmTrace srwm_trace(const Tensor& w, std::span<const Real> u, const SrwmDims& dims);

struct SrwmStep {
    Var output;   // d_out, from the pre-update W
    Var weights;  // updated W
};

// One head, one step. Differentiable w.r.t. both W and u.
SrwmStep srwm_step(Tape& tape, const Var& w, const Var& u, const SrwmDims& dims);

// Per-sequence fast weights of every head.
struct SrwmState {
    std::vector<Var> heads;
    std::size_t step = 0;
};

SrwmState srwm_start(Tape& tape, const SrwmSeed& seed);

// Multi-head step: splits x (d_model) into per-head inputs, advances every
// head and returns the concatenated head outputs.
Var srwm_layer_step(Tape& tape, SrwmState& state, const Var& x, const SrwmDims& dims);

// Runs a whole sequence from fresh states. `final_state` receives the state
// after the last input when non-null.
std::vector<Var> srwm_forward(Tape& tape, const SrwmSeed& seed, std::span<const Var> inputs,
                              SrwmState* final_state = nullptr);

}  // namespace srwm
