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

// Meta-testing: boundary accuracy matrices and continual-learning metrics,
// plus loss-curve extraction and fast-weight snapshot dumps.

#include "srwm/model.hpp"
#include "srwm/tasks.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <vector>

namespace srwm {

// acc[m][j]: accuracy on task j after observing tasks 0..m (j <= m).
using AccuracyMatrix = std::vector<std::vector<Real>>;

struct SequenceCounts {
    std::vector<std::vector<std::size_t>> correct;
    std::vector<std::vector<std::size_t>> total;
};

// Runs the demo stream once and classifies `max_queries` queries (0 = all)
// of every seen task at every boundary, each on a copy of the state.
SequenceCounts evaluate_sequence(const ModelParams& params, const CLSequence& seq, std::size_t max_queries = 0);

AccuracyMatrix to_accuracy(const SequenceCounts& counts);

Real average_accuracy(const AccuracyMatrix& acc);
// mean_{j<M} acc[M][j] - acc[j][j]; absent for M < 2.
std::optional<Real> backward_transfer(const AccuracyMatrix& acc);
// mean_{m>=2} acc[m][m] - baseline[m]; absent without baselines or for M < 2.
std::optional<Real> forward_transfer(const AccuracyMatrix& acc, const std::vector<Real>& baseline);

struct EvalReport {
    AccuracyMatrix acc;
    Real avg_acc = 0;
    std::optional<Real> backward_transfer;
    std::optional<Real> forward_transfer;
    std::vector<Real> baseline;  // single-task accuracy per position, when computed
    nlohmann::json meta;
};

nlohmann::json to_json(const EvalReport& r);

enum class Protocol {
    Episodic,  // random episodes from each source
    Fixed      // fixed tasks: random demo draws, every test item as a query
};

struct MetaTestProtocol {
    Protocol kind = Protocol::Episodic;
    std::size_t n_way = 5;
    std::size_t k_shot = 15;
    LabelMode mode = LabelMode::Domain;
    std::size_t n_runs = 5;
    std::size_t episodes_per_run = 2000;  // Episodic only
    std::size_t queries_per_class = 1;    // Episodic only
    bool allow_class_overlap = false;     // Episodic only, see sample_task_episodes
    bool baselines = true;                // single-task runs for forward transfer
    std::uint64_t seed = 0;
};

// Task order for one CL sequence: demo source and (Fixed only) query source.
struct TaskSlot {
    std::shared_ptr<const TaskSource> demos;
    std::shared_ptr<const DatasetSource> queries;
};

struct MetaTestResult {
    std::vector<EvalReport> runs;
    EvalReport mean;
    nlohmann::json summary;  // mean/std of every metric across runs
};

MetaTestResult meta_test(const ModelParams& params, const std::vector<TaskSlot>& tasks,
                         const MetaTestProtocol& protocol);

void write_accuracy_csv(std::ostream& os, const EvalReport& r);

// Loss-curve extraction from a training log (long CSV format). Series are
// named learn/<source>/<task> and bwd/<source>/<task> (bwd also covers
// bwd_monitor rows); values are averaged per
// step. Output rows: series,step,value.
struct CurveSet {
    std::map<std::string, std::map<std::size_t, Real>> series;
};
CurveSet curve_extract(std::istream& log);
void write_curves_csv(std::ostream& os, const CurveSet& curves);

struct SnapshotSelection {
    std::vector<std::size_t> layers;  // empty = all
    std::vector<std::size_t> heads;   // empty = all
    std::vector<SrwmBlock> blocks;    // empty = all four
};

// Writes step,layer,head,block,row,col,value for W after every `stride`
// demos (step 0 is the seed W0).
std::size_t dump_weight_snapshots(const ModelParams& params, std::span<const LabeledInput> demos,
                                  std::size_t stride, const SnapshotSelection& selection, std::ostream& os);

std::string to_string(SrwmBlock b);
SrwmBlock srwm_block_from_string(const std::string& s);

}  // namespace srwm
