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

#include "srwm/objective.hpp"

#include <iomanip>
#include <limits>

namespace srwm {

std::string to_string(TermKind kind) {
    switch (kind) {
        case TermKind::Learn: return "learn";
        case TermKind::Backward: return "bwd";
        case TermKind::Aux: return "aux";
        case TermKind::Monitor: return "bwd_monitor";
    }
    return "?";
}

std::vector<std::pair<std::size_t, std::size_t>> term_schedule(std::size_t num_tasks, bool backward_terms) {
    if (num_tasks == 0) throw ContractError("term_schedule needs at least one task");
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t m = 1; m <= num_tasks; ++m) {
        if (backward_terms)
            for (std::size_t j = 1; j <= m; ++j) out.emplace_back(m, j);
        else
            out.emplace_back(m, m);
    }
    return out;
}

namespace {

void check_label_space(const ModelParams& params, const CLSequence& seq, std::size_t queries_per_term) {
    const std::size_t width = params.config.n_outputs;
    for (const Episode& ep : seq.episodes) {
        if (ep.label_offset + ep.n_way > width)
            throw ConfigError("episode labels [" + std::to_string(ep.label_offset) + "," +
                              std::to_string(ep.label_offset + ep.n_way) + ") exceed the model's " +
                              std::to_string(width) + "-way output");
        if (ep.queries.size() < queries_per_term)
            throw ConfigError("episode from " + ep.source + " has " + std::to_string(ep.queries.size()) +
                              " queries, objective needs " + std::to_string(queries_per_term));
        if (ep.demos.empty()) throw ConfigError("episode from " + ep.source + " has no demonstrations");
    }
}

Var query_loss(Tape& tape, const ModelParams& params, const ModelState& state, const Episode& ep, std::size_t n) {
    if (n == 1) {
        const Example& q = ep.queries.front();
        return tape.cross_entropy(query_logits(tape, params, state, q.x), q.label);
    }
    std::vector<Var> losses;
    losses.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Example& q = ep.queries[i];
        losses.push_back(tape.cross_entropy(query_logits(tape, params, state, q.x), q.label));
    }
    return tape.mean(tape.concat(losses));
}

}  // namespace

LossBreakdown acl_loss(Tape& tape, const ModelParams& params, const CLSequence& seq, const AclFlags& flags,
                       AclTrace* trace) {
    if (seq.episodes.empty()) throw ConfigError("acl_loss on an empty CL sequence");
    check_label_space(params, seq, flags.queries_per_term);

    LossBreakdown out;
    std::vector<Var> weighted;
    ModelState state = start_state(tape, params);
    std::vector<ModelState> snapshots;

    for (std::size_t m = 0; m < seq.episodes.size(); ++m) {
        const Episode& ep = seq.episodes[m];

        if (flags.aux_one_shot) {
            const auto shots = ep.one_shot_inputs();
            ForwardResult r = model_forward(tape, params, state, shots);
            LossTerm t{m + 1, m + 1, ep.source, TermKind::Aux,
                       query_loss(tape, params, r.state, ep, flags.queries_per_term)};
            weighted.push_back(flags.aux_weight == 1 ? t.loss : tape.scale(t.loss, flags.aux_weight));
            out.aux_terms.push_back(std::move(t));
        }

        const auto demos = ep.demo_inputs();
        state = model_forward(tape, params, std::move(state), demos).state;
        snapshots.push_back(state);

        for (std::size_t j = 0; j <= m; ++j) {
            const bool learn = j == m;
            if (!learn && !flags.backward_terms && !flags.monitor_backward) continue;
            const Episode& qep = seq.episodes[j];
            LossTerm t{m + 1, j + 1, qep.source,
                       learn ? TermKind::Learn : (flags.backward_terms ? TermKind::Backward : TermKind::Monitor),
                       query_loss(tape, params, state, qep, flags.queries_per_term)};
            if (t.kind == TermKind::Monitor) {
                out.monitors.push_back(std::move(t));
                continue;
            }
            auto w = flags.term_weights.find({m + 1, j + 1});
            const Real weight = w == flags.term_weights.end() ? Real(1) : w->second;
            weighted.push_back(weight == 1 ? t.loss : tape.scale(t.loss, weight));
            out.entries.push_back(std::move(t));
        }
    }

    out.total = weighted.size() == 1 ? weighted.front() : tape.sum(tape.concat(weighted));
    if (trace) {
        trace->demo_state = state;
        trace->at_boundary = std::move(snapshots);
    }
    return out;
}

void write_loss_header(std::ostream& os) { os << "step,boundary,task,source,kind,value\n"; }

void write_loss_rows(std::ostream& os, std::size_t step, const LossBreakdown& loss) {
    const auto old = os.precision(std::numeric_limits<Real>::max_digits10);
    auto row = [&](const LossTerm& t) {
        os << step << ',' << t.boundary << ',' << t.task << ',' << t.source << ',' << to_string(t.kind) << ','
           << t.value() << '\n';
    };
    for (const auto& t : loss.entries) row(t);
    for (const auto& t : loss.aux_terms) row(t);
    for (const auto& t : loss.monitors) row(t);
    os.precision(old);
}

}  // namespace srwm
