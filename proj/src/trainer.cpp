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

#include "srwm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>
#include <utility>

namespace srwm {

namespace {

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return mix(mix(mix(seed) ^ a) ^ (b * 0x2545f4914f6cdd1dull));
}

OptimState clone_optim(const OptimState& o) {
    OptimState c = o;
    for (auto& t : c.m) t = t.clone();
    for (auto& t : c.v) t = t.clone();
    return c;
}

ModelCheckpoint snapshot(const ModelParams& params, const OptimState& opt, const TrainConfig& cfg,
                         std::size_t step, const std::string& rng_state) {
    ModelCheckpoint ck;
    ck.params = clone_params(params);
    ck.optim = clone_optim(opt);
    ck.run_config = cfg.resolved;
    ck.rng_state = rng_state;
    ck.step = step;
    ck.config_hash = config_hash(params.config);
    return ck;
}

// Per batch element: loss values in breakdown order plus parameter gradients.
struct ElementResult {
    std::vector<Real> values;
    std::vector<Tensor> grads;
    Real total = 0;
};

struct TermInfo {
    std::size_t boundary, task;
    std::string source;
    TermKind kind;
};

// Per-term means over the steps since the last log point. Rows keep first-seen order.
struct LogWindow {
    struct Row {
        TermInfo info;
        double sum = 0;
        std::size_t count = 0;
    };
    std::vector<Row> rows;
    double total = 0, norm = 0;
    std::size_t steps = 0;

    void add(const std::vector<TermInfo>& info, const std::vector<Real>& values, Real step_total, Real step_norm) {
        for (std::size_t i = 0; i < info.size(); ++i) {
            const TermInfo& t = info[i];
            auto it = std::find_if(rows.begin(), rows.end(), [&](const Row& r) {
                return r.info.boundary == t.boundary && r.info.task == t.task && r.info.source == t.source &&
                       r.info.kind == t.kind;
            });
            if (it == rows.end()) it = rows.insert(rows.end(), Row{t, 0, 0});
            it->sum += values[i];
            ++it->count;
        }
        total += step_total;
        norm += step_norm;
        ++steps;
    }

    void flush(std::ostream& os, std::size_t step, Real lr) {
        for (const Row& r : rows)
            os << step << ',' << lr << ',' << r.info.boundary << ',' << r.info.task << ',' << r.info.source << ','
               << to_string(r.info.kind) << ',' << static_cast<Real>(r.sum / static_cast<double>(r.count)) << '\n';
        os << step << ',' << lr << ",0,0,batch,total," << static_cast<Real>(total / static_cast<double>(steps)) << '\n';
        os << step << ',' << lr << ",0,0,batch,grad_norm," << static_cast<Real>(norm / static_cast<double>(steps))
           << '\n';
        *this = LogWindow{};
    }
};

std::vector<const LossTerm*> flatten(const LossBreakdown& b) {
    std::vector<const LossTerm*> out;
    for (const auto& t : b.entries) out.push_back(&t);
    for (const auto& t : b.aux_terms) out.push_back(&t);
    for (const auto& t : b.monitors) out.push_back(&t);
    return out;
}

ElementResult run_element(const TrainConfig& cfg, const ModelParams& params,
                          const std::vector<std::pair<std::string, const Tensor*>>& named, std::size_t step,
                          std::size_t index, std::vector<TermInfo>* info) {
    const CLSequence seq = sample_training_sequence(cfg, step, index);
    Tape tape;
    const LossBreakdown loss = acl_loss(tape, params, seq, cfg.objective);
    ElementResult r;
    r.total = loss.total.value().item();
    for (const LossTerm* t : flatten(loss)) {
        r.values.push_back(t->value());
        if (info) info->push_back(TermInfo{t->boundary, t->task, t->source, t->kind});
    }
    const Gradients g = tape.backward(loss.total);
    r.grads.reserve(named.size());
    for (const auto& [_, p] : named) r.grads.push_back(g.contains(*p) ? g.at(*p) : Tensor(p->shape()));
    return r;
}

std::string rng_string(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

}  // namespace

std::vector<std::size_t> source_order(std::size_t step, std::size_t num_sources, std::size_t num_tasks) {
    if (num_sources == 0) throw ConfigError("no task sources configured");
    std::vector<std::size_t> perm(num_sources);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::size_t count = 1;
    for (std::size_t i = 2; i <= num_sources; ++i) count *= i;
    for (std::size_t i = 0; i < step % count; ++i) std::next_permutation(perm.begin(), perm.end());
    std::vector<std::size_t> order(num_tasks);
    for (std::size_t m = 0; m < num_tasks; ++m) order[m] = perm[m % num_sources];
    return order;
}

CLSequence sample_training_sequence(const TrainConfig& cfg, std::size_t step, std::size_t index) {
    Rng rng(derive_seed(cfg.seed, step, index));
    const auto order = source_order(step, cfg.sources.size(), cfg.num_tasks);
    std::vector<const TaskSource*> sources;
    for (std::size_t i : order) sources.push_back(cfg.sources[i].get());
    return build_cl_sequence(sample_task_episodes(sources, cfg.n_way, cfg.k_shot, cfg.queries_per_class, rng,
                                                  OutputSpace{cfg.mode, cfg.n_way, cfg.num_tasks},
                                                  cfg.allow_class_overlap),
                             cfg.mode);
}

Real meta_validate(const ModelParams& params, const TrainConfig& cfg) {
    const auto& sources = cfg.validation_sources.empty() ? cfg.sources : cfg.validation_sources;
    if (cfg.validation_episodes == 0) return Real(0);
    Rng rng(derive_seed(cfg.seed, 0x76616c6964ull, 0));
    const OutputSpace space{cfg.mode, cfg.n_way, cfg.num_tasks};
    double sum = 0;
    for (std::size_t e = 0; e < cfg.validation_episodes; ++e) {
        std::vector<const TaskSource*> order;
        for (std::size_t i : source_order(e, sources.size(), cfg.num_tasks)) order.push_back(sources[i].get());
        auto eps = sample_task_episodes(order, cfg.n_way, cfg.k_shot, 1, rng, space, cfg.allow_class_overlap);
        const auto acc = to_accuracy(evaluate_sequence(params, build_cl_sequence(std::move(eps), cfg.mode)));
        sum += static_cast<double>(average_accuracy(acc));
    }
    return static_cast<Real>(sum / static_cast<double>(cfg.validation_episodes));
}

void write_train_log_header(std::ostream& os) { os << "step,lr,boundary,task,source,kind,value\n"; }

TrainResult meta_train(const TrainConfig& cfg, std::ostream* log) {
    cfg.model.validate();
    if (cfg.sources.empty()) throw ConfigError("tasks.sources is empty");
    if (cfg.batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (cfg.num_tasks == 0) throw ConfigError("tasks.num_tasks must be positive");
    const std::size_t width = OutputSpace{cfg.mode, cfg.n_way, cfg.num_tasks}.width();
    if (cfg.model.n_outputs != width)
        throw ConfigError("model.n_outputs is " + std::to_string(cfg.model.n_outputs) + " but the " +
                          to_string(cfg.mode) + " setting needs " + std::to_string(width));
    for (const auto& s : cfg.sources)
        if (s->dim() != cfg.model.input_dim)
            throw ConfigError("source " + s->name() + " has dimension " + std::to_string(s->dim()) +
                              ", model.input_dim is " + std::to_string(cfg.model.input_dim));

    ModelParams params = init_model(cfg.model);
    OptimState opt = make_optim_state(params, cfg.optim);
    Rng master(cfg.seed);
    auto named_mut = params.named();
    std::vector<Tensor*> ptrs;
    for (auto& [_, t] : named_mut) ptrs.push_back(t);
    const auto named = std::as_const(params).named();

    const auto old_precision = log ? log->precision(std::numeric_limits<Real>::max_digits10) : 0;
    if (log) write_train_log_header(*log);

    TrainResult result;
    Real best_acc = -1;
    auto validate = [&](std::size_t step) {
        if (cfg.validation_episodes == 0) return;
        const Real acc = meta_validate(params, cfg);
        result.validation.push_back({step, acc});
        if (log) *log << step << ",," << 0 << ',' << 0 << ",validation,val_acc," << acc << '\n';
        if (acc > best_acc) {
            best_acc = acc;
            result.best = snapshot(params, opt, cfg, step, rng_string(master));
        }
    };

    const std::size_t threads = std::max<std::size_t>(1, std::min(cfg.threads, cfg.batch_size));
    LogWindow window;
    std::size_t step = 0;
    for (; step < cfg.steps; ++step) {
        const Real lr = lr_schedule(step + 1, cfg.optim.warmup_steps, cfg.model.d_model, cfg.optim.lr_scale);
        std::vector<ElementResult> elems(cfg.batch_size);
        std::vector<TermInfo> info;
        try {
            if (threads == 1) {
                for (std::size_t b = 0; b < cfg.batch_size; ++b)
                    elems[b] = run_element(cfg, params, named, step, b, b == 0 ? &info : nullptr);
            } else {
                std::vector<std::thread> pool;
                std::vector<std::exception_ptr> errors(threads);
                for (std::size_t t = 0; t < threads; ++t)
                    pool.emplace_back([&, t] {
                        try {
                            for (std::size_t b = t; b < cfg.batch_size; b += threads)
                                elems[b] = run_element(cfg, params, named, step, b, b == 0 ? &info : nullptr);
                        } catch (...) {
                            errors[t] = std::current_exception();
                        }
                    });
                for (auto& th : pool) th.join();
                for (auto& e : errors)
                    if (e) std::rethrow_exception(e);
            }
        } catch (const NumericError& e) {
            result.diverged = true;
            result.message = std::string(e.what()) + " at step " + std::to_string(step + 1);
            break;
        }

        // Serialized reduction in batch order.
        std::vector<Tensor> grads;
        for (const auto& [_, p] : named) grads.emplace_back(p->shape());
        std::vector<Real> values(elems.front().values.size(), Real(0));
        Real total = 0;
        const Real inv = Real(1) / static_cast<Real>(cfg.batch_size);
        for (const ElementResult& e : elems) {
            total += e.total * inv;
            for (std::size_t i = 0; i < values.size(); ++i) values[i] += e.values[i] * inv;
            for (std::size_t i = 0; i < grads.size(); ++i) {
                auto g = grads[i].mutable_data();
                auto s = e.grads[i].data();
                for (std::size_t k = 0; k < g.size(); ++k) g[k] += s[k] * inv;
            }
        }

        const bool finite = std::isfinite(total) &&
                            std::all_of(grads.begin(), grads.end(), [](const Tensor& g) { return g.all_finite(); });
        if (!finite) {
            result.diverged = true;
            result.message = "non-finite loss or gradient at step " + std::to_string(step + 1);
            break;
        }
        const Real norm = clip_grad_norm(grads, cfg.optim.clip_norm);
        adam_step(ptrs, grads, opt, lr);

        const std::size_t logged_step = step + 1;
        window.add(info, values, total, norm);
        if (log && (cfg.log_every <= 1 || logged_step % cfg.log_every == 0 || logged_step == cfg.steps))
            window.flush(*log, logged_step, lr);
        if (cfg.validate_every > 0 && logged_step % cfg.validate_every == 0 && logged_step != cfg.steps)
            validate(logged_step);
    }
    if (!result.diverged) validate(step);

    result.last = snapshot(params, opt, cfg, step, rng_string(master));
    if (best_acc < 0) result.best = snapshot(params, opt, cfg, step, rng_string(master));
    if (log) log->precision(old_precision);
    return result;
}

}  // namespace srwm
