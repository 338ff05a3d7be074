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

// Recursive Self-Transformer: encoder -> [feature | one-hot label] projection
// -> stack of pre-norm {SRWM, feedforward} residual blocks -> linear head.

#include "srwm/srwm_layer.hpp"
#include "srwm/tensor.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace srwm {

enum class EncoderKind { Identity, Mlp };

struct ModelConfig {
    std::size_t n_layers = 2;
    std::size_t d_model = 256;
    std::size_t n_heads = 16;
    std::size_t ff_multiplier = 2;
    std::size_t n_outputs = 5;
    std::size_t input_dim = 0;
    EncoderKind encoder = EncoderKind::Identity;
    std::size_t mlp_hidden = 128;
    std::size_t mlp_features = 64;
    Real norm_eps = Real(1e-5);
    std::uint64_t seed = 0;

    std::size_t label_slots() const { return n_outputs + 1; }
    std::size_t feature_dim() const { return encoder == EncoderKind::Mlp ? mlp_features : input_dim; }
    std::size_t d_head() const { return d_model / n_heads; }

    // Throws ConfigError on inconsistent values.
    void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Linear {
    Tensor weight;  // out x in
    Tensor bias;    // out
};

struct Norm {
    Tensor gain;
    Tensor bias;
};

struct Block {
    Norm pre_srwm;
    SrwmSeed srwm;
    Norm pre_ff;
    Linear ff_in;
    Linear ff_out;
};

struct ModelParams {
    ModelConfig config;
    std::optional<Linear> enc_hidden;
    std::optional<Linear> enc_out;
    Linear proj;
    std::vector<Block> blocks;
    Norm final_norm;
    Linear head;

    // Stable ordering used by the optimizer and checkpoints.
    std::vector<std::pair<std::string, Tensor*>> named();
    std::vector<std::pair<std::string, const Tensor*>> named() const;
};

ModelParams init_model(const ModelConfig& cfg);
ModelParams clone_params(const ModelParams& params);

struct LabeledInput {
    std::span<const Real> x;
    std::optional<std::size_t> label;  // nullopt is the unknown-label token
};

// Fast weights of every layer for one sequence.
struct ModelState {
    std::vector<SrwmState> layers;
};

ModelState start_state(Tape& tape, const ModelParams& params);

Var encode_input(Tape& tape, const ModelParams& params, const LabeledInput& in);

// Consumes one input, advances `state`, returns logits.
Var model_step(Tape& tape, const ModelParams& params, ModelState& state, const LabeledInput& in);

struct ForwardResult {
    std::vector<Var> logits;
    ModelState state;
};

ForwardResult model_forward(Tape& tape, const ModelParams& params, std::span<const LabeledInput> inputs);
// Continues from an existing state (taken by value).
ForwardResult model_forward(Tape& tape, const ModelParams& params, ModelState state,
                            std::span<const LabeledInput> inputs);

// Logits for a query fed with the unknown-label token. `state` is untouched.
Var query_logits(Tape& tape, const ModelParams& params, const ModelState& state, std::span<const Real> x);
std::vector<Real> predict(Tape& tape, const ModelParams& params, const ModelState& state, std::span<const Real> x);

}  // namespace srwm
