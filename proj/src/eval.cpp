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

#include "srwm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace srwm {

SequenceCounts evaluate_sequence(const ModelParams& params, const CLSequence& seq, std::size_t max_queries) {
    const std::size_t M = seq.num_tasks();
    SequenceCounts c;
    c.correct.assign(M, std::vector<std::size_t>(M, 0));
    c.total.assign(M, std::vector<std::size_t>(M, 0));
    Tape tape(Tape::Mode::Inference);
    ModelState state = start_state(tape, params);
    for (std::size_t m = 0; m < M; ++m) {
        const auto demos = seq.episodes[m].demo_inputs();
        state = model_forward(tape, params, std::move(state), demos).state;
        for (std::size_t j = 0; j <= m; ++j) {
            const auto& queries = seq.episodes[j].queries;
            const std::size_t n = max_queries == 0 ? queries.size() : std::min(max_queries, queries.size());
            for (std::size_t i = 0; i < n; ++i) {
                const Var logits = query_logits(tape, params, state, queries[i].x);
                auto d = logits.value().data();
                const auto pred = static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
                c.correct[m][j] += pred == queries[i].label ? 1 : 0;
                ++c.total[m][j];
            }
        }
    }
    return c;
}

AccuracyMatrix to_accuracy(const SequenceCounts& counts) {
    const std::size_t M = counts.total.size();
    AccuracyMatrix acc(M);
    for (std::size_t m = 0; m < M; ++m) {
        acc[m].resize(m + 1);
        for (std::size_t j = 0; j <= m; ++j)
            acc[m][j] = counts.total[m][j] ? static_cast<Real>(counts.correct[m][j]) /
                                                 static_cast<Real>(counts.total[m][j])
                                           : Real(0);
    }
    return acc;
}

Real average_accuracy(const AccuracyMatrix& acc) {
    if (acc.empty()) throw ContractError("average_accuracy on an empty matrix");
    const auto& last = acc.back();
    return std::accumulate(last.begin(), last.end(), Real(0)) / static_cast<Real>(last.size());
}

std::optional<Real> backward_transfer(const AccuracyMatrix& acc) {
    const std::size_t M = acc.size();
    if (M < 2) return std::nullopt;
    Real s = 0;
    for (std::size_t j = 0; j + 1 < M; ++j) s += acc[M - 1][j] - acc[j][j];
    return s / static_cast<Real>(M - 1);
}

std::optional<Real> forward_transfer(const AccuracyMatrix& acc, const std::vector<Real>& baseline) {
    const std::size_t M = acc.size();
    if (M < 2 || baseline.size() < M) return std::nullopt;
    Real s = 0;
    for (std::size_t m = 1; m < M; ++m) s += acc[m][m] - baseline[m];
    return s / static_cast<Real>(M - 1);
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json j;
    j["acc"] = r.acc;
    j["avg_acc"] = r.avg_acc;
    j["backward_transfer"] = r.backward_transfer ? nlohmann::json(*r.backward_transfer) : nlohmann::json(nullptr);
    j["forward_transfer"] = r.forward_transfer ? nlohmann::json(*r.forward_transfer) : nlohmann::json(nullptr);
    if (!r.baseline.empty()) j["baseline"] = r.baseline;
    if (!r.meta.is_null()) j["meta"] = r.meta;
    return j;
}

namespace {

void finish_report(EvalReport& r) {
    r.avg_acc = average_accuracy(r.acc);
    r.backward_transfer = backward_transfer(r.acc);
    r.forward_transfer = forward_transfer(r.acc, r.baseline);
}

std::size_t width_of(const MetaTestProtocol& p, std::size_t num_tasks) {
    return OutputSpace{p.mode, p.n_way, num_tasks}.width();
}

struct Stat {
    std::vector<Real> values;
    nlohmann::json json() const {
        if (values.empty()) return nullptr;
        const Real n = static_cast<Real>(values.size());
        const Real mean = std::accumulate(values.begin(), values.end(), Real(0)) / n;
        Real var = 0;
        for (Real v : values) var += (v - mean) * (v - mean);
        const Real sd = values.size() > 1 ? std::sqrt(var / (n - 1)) : Real(0);
        return {{"mean", mean}, {"std", sd}, {"n", values.size()}};
    }
};

}  // namespace

MetaTestResult meta_test(const ModelParams& params, const std::vector<TaskSlot>& tasks,
                         const MetaTestProtocol& protocol) {
    const std::size_t M = tasks.size();
    if (M == 0) throw ConfigError("meta_test needs at least one task");
    if (protocol.n_runs == 0) throw ConfigError("meta_test needs n_runs > 0");
    const std::size_t width = width_of(protocol, M);
    if (params.config.n_outputs != width)
        throw ConfigError("checkpoint has a " + std::to_string(params.config.n_outputs) + "-way output but the " +
                          to_string(protocol.mode) + " protocol needs " + std::to_string(width));
    for (const TaskSlot& s : tasks) {
        if (!s.demos) throw ConfigError("meta_test task without a demo source");
        if (s.demos->dim() != params.config.input_dim)
            throw ConfigError("task source " + s.demos->name() + " has dimension " + std::to_string(s.demos->dim()) +
                              ", model expects " + std::to_string(params.config.input_dim));
        if (protocol.kind == Protocol::Fixed && !dynamic_cast<const DatasetSource*>(s.demos.get()))
            throw ConfigError("fixed protocol needs dataset-backed task sources");
    }
    const OutputSpace space{protocol.mode, protocol.n_way, M};

    MetaTestResult result;
    for (std::size_t run = 0; run < protocol.n_runs; ++run) {
        Rng rng(protocol.seed * 1000003ull + run);
        SequenceCounts total;
        total.correct.assign(M, std::vector<std::size_t>(M, 0));
        total.total = total.correct;
        std::vector<std::size_t> base_correct(M, 0), base_total(M, 0);
        const std::size_t n_seq = protocol.kind == Protocol::Episodic ? protocol.episodes_per_run : 1;

        for (std::size_t e = 0; e < n_seq; ++e) {
            std::vector<Episode> eps;
            if (protocol.kind == Protocol::Episodic) {
                std::vector<const TaskSource*> sources;
                for (const TaskSlot& s : tasks) sources.push_back(s.demos.get());
                eps = sample_task_episodes(sources, protocol.n_way, protocol.k_shot, protocol.queries_per_class, rng,
                                           space, protocol.allow_class_overlap);
            } else {
                for (std::size_t m = 0; m < M; ++m) {
                    const auto& ds = static_cast<const DatasetSource&>(*tasks[m].demos);
                    eps.push_back(fixed_task_episode(ds, protocol.k_shot, rng, space.offset(m), tasks[m].queries.get()));
                }
            }
            const CLSequence seq = build_cl_sequence(eps, protocol.mode);
            const SequenceCounts c = evaluate_sequence(params, seq);
            for (std::size_t m = 0; m < M; ++m)
                for (std::size_t j = 0; j <= m; ++j) {
                    total.correct[m][j] += c.correct[m][j];
                    total.total[m][j] += c.total[m][j];
                }
            if (protocol.baselines && M > 1) {
                base_correct[0] += c.correct[0][0];
                base_total[0] += c.total[0][0];
                for (std::size_t m = 1; m < M; ++m) {
                    const SequenceCounts b = evaluate_sequence(params, build_cl_sequence({eps[m]}, protocol.mode));
                    base_correct[m] += b.correct[0][0];
                    base_total[m] += b.total[0][0];
                }
            }
        }

        EvalReport r;
        r.acc = to_accuracy(total);
        if (protocol.baselines && M > 1)
            for (std::size_t m = 0; m < M; ++m)
                r.baseline.push_back(base_total[m] ? static_cast<Real>(base_correct[m]) / static_cast<Real>(base_total[m])
                                                   : Real(0));
        finish_report(r);
        r.meta = {{"run", run},
                  {"seed", protocol.seed * 1000003ull + run},
                  {"k_shot", protocol.k_shot},
                  {"n_way", protocol.n_way},
                  {"mode", to_string(protocol.mode)},
                  {"protocol", protocol.kind == Protocol::Episodic ? "episodic" : "fixed"},
                  {"sequences", n_seq},
                  {"queries", total.total}};
        result.runs.push_back(std::move(r));
    }

    // Mean report and summary statistics.
    EvalReport& mean = result.mean;
    mean.acc.assign(M, {});
    for (std::size_t m = 0; m < M; ++m) mean.acc[m].assign(m + 1, Real(0));
    if (!result.runs.front().baseline.empty()) mean.baseline.assign(M, Real(0));
    const Real n = static_cast<Real>(result.runs.size());
    Stat avg, bwt, fwt;
    std::vector<std::vector<Stat>> cells(M, std::vector<Stat>(M));
    for (const EvalReport& r : result.runs) {
        for (std::size_t m = 0; m < M; ++m)
            for (std::size_t j = 0; j <= m; ++j) {
                mean.acc[m][j] += r.acc[m][j] / n;
                cells[m][j].values.push_back(r.acc[m][j]);
            }
        for (std::size_t m = 0; m < mean.baseline.size(); ++m) mean.baseline[m] += r.baseline[m] / n;
        avg.values.push_back(r.avg_acc);
        if (r.backward_transfer) bwt.values.push_back(*r.backward_transfer);
        if (r.forward_transfer) fwt.values.push_back(*r.forward_transfer);
    }
    finish_report(mean);
    mean.meta = result.runs.front().meta;
    mean.meta.erase("run");
    mean.meta.erase("seed");
    mean.meta.erase("queries");
    mean.meta["n_runs"] = protocol.n_runs;

    nlohmann::json acc = nlohmann::json::array();
    for (std::size_t m = 0; m < M; ++m) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t j = 0; j <= m; ++j) row.push_back(cells[m][j].json());
        acc.push_back(std::move(row));
    }
    result.summary = {{"avg_acc", avg.json()},
                      {"backward_transfer", bwt.json()},
                      {"forward_transfer", fwt.json()},
                      {"acc", std::move(acc)},
                      {"meta", mean.meta}};
    return result;
}

void write_accuracy_csv(std::ostream& os, const EvalReport& r) {
    const auto old = os.precision(std::numeric_limits<Real>::max_digits10);
    os << "boundary,task,accuracy\n";
    for (std::size_t m = 0; m < r.acc.size(); ++m)
        for (std::size_t j = 0; j <= m; ++j) os << m + 1 << ',' << j + 1 << ',' << r.acc[m][j] << '\n';
    os.precision(old);
}

}  // namespace srwm
