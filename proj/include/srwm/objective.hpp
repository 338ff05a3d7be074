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

// ACL meta-training loss: at every task boundary m of a CL sequence, a query
// cross-entropy for every task j <= m, evaluated on a copy of the fast
// weights (queries never feed back into the demo stream).

#include "srwm/model.hpp"
#include "srwm/tasks.hpp"

#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace srwm {

struct AclFlags {
    // j < m terms. Off reproduces the plain metalearning objective.
    bool backward_terms = true;
    // Per task, a query loss after only the first demo of each class.
    bool aux_one_shot = false;
    // When backward terms are off, still evaluate them for logging.
    bool monitor_backward = false;
    // Queries averaged per term; the episode must hold at least this many.
    std::size_t queries_per_term = 1;
    // Keyed by 1-based (boundary, task); missing entries weigh 1.
    std::map<std::pair<std::size_t, std::size_t>, Real> term_weights;
    Real aux_weight = Real(1);
};

enum class TermKind { Learn, Backward, Aux, Monitor };

std::string to_string(TermKind kind);

struct LossTerm {
    std::size_t boundary = 0;  // 1-based
    std::size_t task = 0;      // 1-based
    std::string source;
    TermKind kind = TermKind::Learn;
    Var loss;
    Real value() const { return loss.value().item(); }
};

struct LossBreakdown {
    std::vector<LossTerm> entries;   // terms of the objective, schedule order
    std::vector<LossTerm> aux_terms;
    std::vector<LossTerm> monitors;  // evaluated but excluded from the total
    Var total;
};

// 1-based (boundary, task) pairs in lexicographic order.
std::vector<std::pair<std::size_t, std::size_t>> term_schedule(std::size_t num_tasks, bool backward_terms);

struct AclTrace {
    ModelState demo_state;                 // after the whole demo stream
    std::vector<ModelState> at_boundary;   // state snapshot after each task
};

LossBreakdown acl_loss(Tape& tape, const ModelParams& params, const CLSequence& seq, const AclFlags& flags,
                       AclTrace* trace = nullptr);

// CSV rows: step,boundary,task,source,kind,value
void write_loss_header(std::ostream& os);
void write_loss_rows(std::ostream& os, std::size_t step, const LossBreakdown& loss);

}  // namespace srwm
