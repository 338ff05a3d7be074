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

// Meta-training: batched CL sequences, ACL loss, Adam with the Transformer
// warmup schedule, periodic meta-validation and checkpoints.

#include "srwm/model.hpp"
#include "srwm/objective.hpp"
#include "srwm/tasks.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace srwm {

// scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5). The default
// scale puts the peak at 3e-4 for d_model = 256, warmup = 400.
inline constexpr Real kDefaultLrScale = Real(0.096);

Real lr_schedule(std::size_t step, std::size_t warmup_steps, std::size_t d_model, Real scale = kDefaultLrScale);

struct OptimConfig {
    Real lr_scale = kDefaultLrScale;
    std::size_t warmup_steps = 400;
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.98);
    Real eps = Real(1e-9);
    Real clip_norm = Real(1);  // <= 0 disables clipping
};

struct OptimState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::size_t step = 0;
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.98);
    Real eps = Real(1e-9);
};

OptimState make_optim_state(const ModelParams& params, const OptimConfig& cfg);

// Bias-corrected Adam. Throws NumericError (leaving everything untouched)
// when a gradient is not finite.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimState& opt, Real lr);

// Scales grads in place so their global L2 norm is at most max_norm; returns
// the norm before clipping.
Real clip_grad_norm(std::span<Tensor> grads, Real max_norm);

struct TrainConfig {
    ModelConfig model;
    std::vector<std::shared_ptr<const TaskSource>> sources;
    std::vector<std::shared_ptr<const TaskSource>> validation_sources;  // empty: use `sources`
    std::size_t n_way = 5;
    std::size_t k_shot = 15;
    std::size_t num_tasks = 2;
    LabelMode mode = LabelMode::Domain;
    std::size_t queries_per_class = 1;
    // Tasks of one sequence drawn from the same source may share classes.
    bool allow_class_overlap = false;
    AclFlags objective;
    OptimConfig optim;
    std::size_t steps = 0;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;
    std::size_t log_every = 1;  // log rows hold per-term means over the steps since the previous row
    std::size_t validate_every = 0;  // 0: only at the end
    std::size_t validation_episodes = 64;
    std::size_t threads = 1;
    nlohmann::json resolved;  // the config document this was built from
};

struct ModelCheckpoint {
    ModelParams params;
    OptimState optim;
    nlohmann::json run_config;
    std::string rng_state;
    std::size_t step = 0;
    std::uint64_t config_hash = 0;
};

std::uint64_t config_hash(const ModelConfig& cfg);

// Self-describing binary container; tensors are little-endian.
void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
// Throws FormatError on corrupt or truncated files and ConfigError when
// `expected` is given and its hash differs from the stored one.
ModelCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

struct ValidationRecord {
    std::size_t step = 0;
    Real accuracy = 0;
};

struct TrainResult {
    ModelCheckpoint last;
    ModelCheckpoint best;
    std::vector<ValidationRecord> validation;
    bool diverged = false;
    std::string message;
};

// Task-source order used for the batch at `step`: round-robin over all
// permutations of the source list, position m taking perm[m % sources].
std::vector<std::size_t> source_order(std::size_t step, std::size_t num_sources, std::size_t num_tasks);

// Samples the CL sequence for batch element `index` of `step`.
CLSequence sample_training_sequence(const TrainConfig& cfg, std::size_t step, std::size_t index);

// Mean final-boundary accuracy over the validation episodes.
Real meta_validate(const ModelParams& params, const TrainConfig& cfg);

// Writes CSV rows step,lr,boundary,task,source,kind,value to `log` when
// given. kind is one of learn, bwd, bwd_monitor, aux, total, grad_norm, val_acc.
TrainResult meta_train(const TrainConfig& cfg, std::ostream* log = nullptr);

void write_train_log_header(std::ostream& os);

}  // namespace srwm
