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

#include "srwm/config.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <type_traits>

namespace srwm {

namespace {

using nlohmann::json;

// Strict view of one JSON object: typed getters record what was used in
// `out`, finish() rejects anything left over.
class Section {
public:
    Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError((where_.empty() ? std::string("config") : where_) + " must be a JSON object");
    }

    bool has(const std::string& k) const { return j_.contains(k); }

    template <class T>
    T get(const std::string& k, T def) {
        if (!has(k)) {
            used_.insert(k);
            out[k] = def;
            return def;
        }
        return take<T>(k);
    }

    template <class T>
    T require(const std::string& k) {
        if (!has(k)) throw ConfigError("missing required key " + qual(k));
        return take<T>(k);
    }

    const json& child(const std::string& k) {
        if (!has(k)) throw ConfigError("missing required key " + qual(k));
        used_.insert(k);
        return j_.at(k);
    }

    void finish() const {
        for (const auto& [k, _] : j_.items())
            if (!used_.count(k)) throw ConfigError("unknown key " + qual(k));
    }

    std::string qual(const std::string& k) const { return where_.empty() ? k : where_ + "." + k; }

    json out = json::object();

private:
    template <class T>
    T take(const std::string& k) {
        used_.insert(k);
        const json& v = j_.at(k);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(qual(k) + " must be true or false");
        } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
            if (!v.is_number_unsigned()) throw ConfigError(qual(k) + " must be a non-negative integer");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(qual(k) + " must be a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(qual(k) + " must be a string");
        }
        try {
            T r = v.get<T>();
            out[k] = v;
            return r;
        } catch (const json::exception& e) {
            throw ConfigError(qual(k) + ": " + e.what());
        }
    }

    const json& j_;
    std::string where_;
    std::set<std::string> used_;
};

std::map<std::string, std::shared_ptr<const Dataset>>& dataset_cache() {
    static std::map<std::string, std::shared_ptr<const Dataset>> cache;
    return cache;
}

std::shared_ptr<const Dataset> cached_mnist(const std::filesystem::path& images, const std::filesystem::path& labels,
                                            const std::optional<FeatureStats>& stats, const std::string& stats_key) {
    const std::string key = "mnist|" + images.string() + "|" + labels.string() + "|" + stats_key;
    auto& cache = dataset_cache();
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    auto d = std::make_shared<const Dataset>(load_mnist_idx(images, labels, stats));
    cache.emplace(key, d);
    return d;
}

std::shared_ptr<const Dataset> cached_image_dir(const std::filesystem::path& root, std::size_t size,
                                                const std::optional<FeatureStats>& stats,
                                                const std::string& stats_key) {
    const std::string key = "dir|" + root.string() + "|" + std::to_string(size) + "|" + stats_key;
    auto& cache = dataset_cache();
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    auto d = std::make_shared<const Dataset>(load_image_dir(root, size, stats));
    cache.emplace(key, d);
    return d;
}

std::vector<int> checked_classes(const std::vector<int>& wanted, const Dataset& data, const std::string& where) {
    if (wanted.empty()) return data.classes();
    for (int c : wanted)
        if (!data.class_index().count(c))
            throw ConfigError(where + ": class " + std::to_string(c) + " does not occur in the dataset");
    return wanted;
}

LabelMode mode_from(Section& s, const std::string& key) {
    const std::string m = s.get<std::string>(key, "dil");
    try {
        return label_mode_from_string(m);
    } catch (const Error&) {
        throw ConfigError(s.qual(key) + " must be \"dil\" or \"cil\", got \"" + m + "\"");
    }
}

std::vector<std::shared_ptr<const TaskSource>> sources_from(const json& list, const std::string& where,
                                                           const ConfigContext& ctx, json& resolved) {
    if (!list.is_array()) throw ConfigError(where + " must be a list of task sources");
    std::vector<std::shared_ptr<const TaskSource>> out;
    resolved = json::array();
    std::set<std::string> names;
    for (std::size_t i = 0; i < list.size(); ++i) {
        json r;
        out.push_back(source_from_json(list[i], ctx, &r));
        if (!names.insert(out.back()->name()).second)
            throw ConfigError(where + ": duplicate source name \"" + out.back()->name() + "\"");
        resolved.push_back(std::move(r));
    }
    return out;
}

ModelConfig model_from(const json& j, std::size_t input_dim, std::size_t n_outputs, json& resolved) {
    if (!j.is_object()) throw ConfigError("model must be a JSON object");
    json filled = j;
    if (!filled.contains("input_dim")) filled["input_dim"] = input_dim;
    if (!filled.contains("n_outputs")) filled["n_outputs"] = n_outputs;
    ModelConfig m = model_config_from_json(filled);
    m.validate();
    resolved = to_json(m);
    return m;
}

std::vector<std::size_t> index_list(Section& s, const std::string& key) {
    return s.get<std::vector<std::size_t>>(key, {});
}

}  // namespace

std::filesystem::path ConfigContext::resolve_data(const std::string& p) const {
    const std::filesystem::path path(p);
    if (path.is_absolute()) return path;
    return (data_root ? *data_root : config_dir) / path;
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config " + path.string());
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

ConfigContext make_context(const std::filesystem::path& config_path, const json& doc) {
    ConfigContext ctx;
    ctx.config_dir = config_path.parent_path();
    if (ctx.config_dir.empty()) ctx.config_dir = ".";
    if (doc.is_object() && doc.contains("data_root")) {
        if (!doc.at("data_root").is_string()) throw ConfigError("data_root must be a string");
        std::filesystem::path root(doc.at("data_root").get<std::string>());
        ctx.data_root = root.is_absolute() ? root : ctx.config_dir / root;
    } else if (const char* env = std::getenv(kDataRootEnv); env && *env) {
        ctx.data_root = std::filesystem::path(env);
    }
    return ctx;
}

std::shared_ptr<const TaskSource> source_from_json(const json& j, const ConfigContext& ctx, json* resolved) {
    if (!j.is_object()) throw ConfigError("task source must be a JSON object");
    if (!j.contains("type")) throw ConfigError("missing required key type in task source");
    if (!j.at("type").is_string()) throw ConfigError("task source type must be a string");
    const std::string type = j.at("type").get<std::string>();

    if (type == "synthetic") {
        json spec = j;
        spec.erase("type");
        SynthSpec s;
        try {
            s = synth_spec_from_json(spec);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("synthetic source: ") + e.what());
        }
        if (resolved) {
            *resolved = to_json(s);
            (*resolved)["type"] = "synthetic";
        }
        return std::make_shared<SynthFamily>(std::move(s));
    }
    if (type == "mnist") {
        Section s(j, "mnist source");
        s.require<std::string>("type");
        const std::string name = s.get<std::string>("name", "mnist");
        const auto images = ctx.resolve_data(s.require<std::string>("images"));
        const auto labels = ctx.resolve_data(s.require<std::string>("labels"));
        const auto classes = s.get<std::vector<int>>("classes", {});
        s.finish();
        auto data = cached_mnist(images, labels, std::nullopt, "");
        if (resolved) *resolved = s.out;
        return std::make_shared<DatasetSource>(name, data, checked_classes(classes, *data, "mnist source " + name));
    }
    if (type == "image_dir") {
        Section s(j, "image_dir source");
        s.require<std::string>("type");
        const std::string root_str = s.require<std::string>("root");
        const auto root = ctx.resolve_data(root_str);
        const std::string name = s.get<std::string>("name", std::filesystem::path(root_str).filename().string());
        const std::size_t size = s.get<std::size_t>("size", 28);
        const auto classes = s.get<std::vector<int>>("classes", {});
        s.finish();
        if (size == 0) throw ConfigError("image_dir source size must be positive");
        auto data = cached_image_dir(root, size, std::nullopt, "");
        if (resolved) *resolved = s.out;
        return std::make_shared<DatasetSource>(name, data, checked_classes(classes, *data, "image_dir source " + name));
    }
    throw ConfigError("unknown task source type \"" + type + "\" (expected synthetic, mnist or image_dir)");
}

AclFlags acl_flags_from_json(const json& j, json* resolved) {
    Section s(j, "objective");
    AclFlags f;
    f.backward_terms = s.get<bool>("backward_terms", f.backward_terms);
    f.aux_one_shot = s.get<bool>("aux_one_shot", f.aux_one_shot);
    f.monitor_backward = s.get<bool>("monitor_backward", f.monitor_backward);
    f.queries_per_term = s.get<std::size_t>("queries_per_term", f.queries_per_term);
    f.aux_weight = s.get<Real>("aux_weight", f.aux_weight);
    if (f.queries_per_term == 0) throw ConfigError("objective.queries_per_term must be positive");
    if (s.has("term_weights")) {
        const json& list = s.child("term_weights");
        if (!list.is_array()) throw ConfigError("objective.term_weights must be a list");
        json out = json::array();
        for (const json& e : list) {
            Section w(e, "objective.term_weights[]");
            const auto b = w.require<std::size_t>("boundary");
            const auto t = w.require<std::size_t>("task");
            const auto v = w.require<Real>("weight");
            w.finish();
            if (b == 0 || t == 0 || t > b)
                throw ConfigError("objective.term_weights entry needs 1 <= task <= boundary");
            f.term_weights[{b, t}] = v;
            out.push_back(w.out);
        }
        s.out["term_weights"] = out;
    } else {
        s.out["term_weights"] = json::array();
    }
    s.finish();
    if (resolved) *resolved = s.out;
    return f;
}

TrainConfig train_config_from_json(const json& doc, const ConfigContext& ctx) {
    Section top(doc, "");
    TrainConfig cfg;
    json resolved = json::object();
    if (top.has("data_root")) resolved["data_root"] = top.require<std::string>("data_root");

    Section tasks(top.child("tasks"), "tasks");
    cfg.sources = sources_from(tasks.child("sources"), "tasks.sources", ctx, tasks.out["sources"]);
    if (cfg.sources.empty()) throw ConfigError("tasks.sources is empty");
    if (tasks.has("validation_sources"))
        cfg.validation_sources = sources_from(tasks.child("validation_sources"), "tasks.validation_sources", ctx,
                                              tasks.out["validation_sources"]);
    cfg.n_way = tasks.get<std::size_t>("n_way", cfg.n_way);
    cfg.k_shot = tasks.get<std::size_t>("k_shot", cfg.k_shot);
    cfg.num_tasks = tasks.get<std::size_t>("num_tasks", cfg.num_tasks);
    cfg.mode = mode_from(tasks, "mode");
    cfg.queries_per_class = tasks.get<std::size_t>("queries_per_class", cfg.queries_per_class);
    cfg.allow_class_overlap = tasks.get<bool>("allow_class_overlap", cfg.allow_class_overlap);
    tasks.finish();
    if (cfg.n_way == 0 || cfg.k_shot == 0 || cfg.num_tasks == 0 || cfg.queries_per_class == 0)
        throw ConfigError("tasks.n_way, k_shot, num_tasks and queries_per_class must be positive");
    resolved["tasks"] = tasks.out;

    const std::size_t width = OutputSpace{cfg.mode, cfg.n_way, cfg.num_tasks}.width();
    cfg.model = model_from(top.child("model"), cfg.sources.front()->dim(), width, resolved["model"]);

    if (top.has("objective"))
        cfg.objective = acl_flags_from_json(top.child("objective"), &resolved["objective"]);
    else
        cfg.objective = acl_flags_from_json(json::object(), &resolved["objective"]);

    const json empty = json::object();
    Section opt(top.has("optim") ? top.child("optim") : empty, "optim");
    cfg.optim.lr_scale = opt.get<Real>("lr_scale", cfg.optim.lr_scale);
    cfg.optim.warmup_steps = opt.get<std::size_t>("warmup_steps", cfg.optim.warmup_steps);
    cfg.optim.beta1 = opt.get<Real>("beta1", cfg.optim.beta1);
    cfg.optim.beta2 = opt.get<Real>("beta2", cfg.optim.beta2);
    cfg.optim.eps = opt.get<Real>("eps", cfg.optim.eps);
    cfg.optim.clip_norm = opt.get<Real>("clip_norm", cfg.optim.clip_norm);
    opt.finish();
    if (cfg.optim.warmup_steps == 0) throw ConfigError("optim.warmup_steps must be positive");
    if (!(cfg.optim.lr_scale > 0)) throw ConfigError("optim.lr_scale must be positive");
    resolved["optim"] = opt.out;

    Section train(top.child("train"), "train");
    cfg.steps = train.require<std::size_t>("steps");
    cfg.batch_size = train.get<std::size_t>("batch_size", cfg.batch_size);
    cfg.seed = train.get<std::uint64_t>("seed", cfg.seed);
    cfg.log_every = train.get<std::size_t>("log_every", cfg.log_every);
    cfg.validate_every = train.get<std::size_t>("validate_every", cfg.validate_every);
    cfg.validation_episodes = train.get<std::size_t>("validation_episodes", cfg.validation_episodes);
    cfg.threads = train.get<std::size_t>("threads", cfg.threads);
    train.finish();
    if (cfg.batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (cfg.threads == 0) throw ConfigError("train.threads must be positive");
    resolved["train"] = train.out;

    top.finish();
    cfg.resolved = resolved;
    return cfg;
}

TestConfig test_config_from_json(const json& doc, const ConfigContext& ctx) {
    Section top(doc, "");
    TestConfig cfg;
    json resolved = json::object();
    if (top.has("data_root")) resolved["data_root"] = top.require<std::string>("data_root");
    const std::string ckpt = top.require<std::string>("checkpoint");
    cfg.checkpoint = ckpt;
    resolved["checkpoint"] = ckpt;

    if (top.has("tasks") == top.has("split")) throw ConfigError("meta-test config needs exactly one of tasks or split");

    const json empty = json::object();
    Section p(top.has("protocol") ? top.child("protocol") : empty, "protocol");
    MetaTestProtocol& pr = cfg.protocol;
    const std::string kind = p.get<std::string>("kind", top.has("split") ? "fixed" : "episodic");
    if (kind == "episodic") pr.kind = Protocol::Episodic;
    else if (kind == "fixed") pr.kind = Protocol::Fixed;
    else throw ConfigError("protocol.kind must be \"episodic\" or \"fixed\", got \"" + kind + "\"");
    pr.k_shot = p.get<std::size_t>("k_shot", pr.k_shot);
    pr.mode = mode_from(p, "mode");
    pr.n_runs = p.get<std::size_t>("n_runs", top.has("split") ? std::size_t{10} : pr.n_runs);
    pr.episodes_per_run = p.get<std::size_t>("episodes_per_run", pr.episodes_per_run);
    pr.queries_per_class = p.get<std::size_t>("queries_per_class", pr.queries_per_class);
    pr.allow_class_overlap = p.get<bool>("allow_class_overlap", pr.allow_class_overlap);
    pr.baselines = p.get<bool>("baselines", pr.baselines);
    pr.seed = p.get<std::uint64_t>("seed", pr.seed);

    if (top.has("tasks")) {
        pr.n_way = p.get<std::size_t>("n_way", pr.n_way);
        json r;
        for (auto& src : sources_from(top.child("tasks"), "tasks", ctx, r)) {
            if (pr.kind == Protocol::Fixed && !std::dynamic_pointer_cast<const DatasetSource>(src))
                throw ConfigError("protocol.kind fixed needs dataset task sources");
            cfg.tasks.push_back(TaskSlot{src, nullptr});
        }
        resolved["tasks"] = r;
    } else {
        Section s(top.child("split"), "split");
        const std::string format = s.get<std::string>("format", "mnist");
        const std::size_t n_way = s.get<std::size_t>("n_way", 2);
        const std::string name = s.get<std::string>("name", "split-" + format);
        std::shared_ptr<const Dataset> train, test;
        if (format == "mnist") {
            const auto ti = ctx.resolve_data(s.require<std::string>("train_images"));
            const auto tl = ctx.resolve_data(s.require<std::string>("train_labels"));
            const auto qi = ctx.resolve_data(s.require<std::string>("test_images"));
            const auto ql = ctx.resolve_data(s.require<std::string>("test_labels"));
            train = cached_mnist(ti, tl, std::nullopt, "");
            test = cached_mnist(qi, ql, train->stats(), "train:" + ti.string());
        } else if (format == "image_dir") {
            const auto size = s.get<std::size_t>("size", 28);
            const auto tr = ctx.resolve_data(s.require<std::string>("train_root"));
            const auto te = ctx.resolve_data(s.require<std::string>("test_root"));
            train = cached_image_dir(tr, size, std::nullopt, "");
            test = cached_image_dir(te, size, train->stats(), "train:" + tr.string());
        } else {
            throw ConfigError("split.format must be \"mnist\" or \"image_dir\", got \"" + format + "\"");
        }
        s.finish();
        if (p.has("n_way") && p.get<std::size_t>("n_way", n_way) != n_way)
            throw ConfigError("protocol.n_way differs from split.n_way");
        pr.n_way = n_way;
        p.out["n_way"] = n_way;
        const SplitResult demos = split_dataset(train, n_way, pr.mode, name);
        const SplitResult queries = split_dataset(test, n_way, pr.mode, name);
        if (demos.tasks.size() != queries.tasks.size())
            throw ConfigError("split: train and test parts have different class sets");
        for (std::size_t i = 0; i < demos.tasks.size(); ++i) {
            if (demos.tasks[i]->classes() != queries.tasks[i]->classes())
                throw ConfigError("split: train and test parts have different class sets");
            cfg.tasks.push_back(TaskSlot{demos.tasks[i], queries.tasks[i]});
        }
        resolved["split"] = s.out;
    }
    p.finish();
    if (pr.n_way == 0 || pr.k_shot == 0 || pr.n_runs == 0 || pr.queries_per_class == 0)
        throw ConfigError("protocol.n_way, k_shot, n_runs and queries_per_class must be positive");
    if (pr.kind == Protocol::Episodic && pr.episodes_per_run == 0)
        throw ConfigError("protocol.episodes_per_run must be positive");
    resolved["protocol"] = p.out;
    top.finish();
    cfg.resolved = resolved;
    return cfg;
}

SnapshotConfig snapshot_config_from_json(const json& doc, const ConfigContext& ctx) {
    Section top(doc, "");
    SnapshotConfig cfg;
    json resolved = json::object();
    if (top.has("data_root")) resolved["data_root"] = top.require<std::string>("data_root");
    const std::string ckpt = top.require<std::string>("checkpoint");
    cfg.checkpoint = ckpt;
    resolved["checkpoint"] = ckpt;

    Section tasks(top.child("tasks"), "tasks");
    cfg.sources = sources_from(tasks.child("sources"), "tasks.sources", ctx, tasks.out["sources"]);
    if (cfg.sources.empty()) throw ConfigError("tasks.sources is empty");
    cfg.n_way = tasks.get<std::size_t>("n_way", cfg.n_way);
    cfg.k_shot = tasks.get<std::size_t>("k_shot", cfg.k_shot);
    cfg.num_tasks = tasks.get<std::size_t>("num_tasks", cfg.num_tasks);
    cfg.mode = mode_from(tasks, "mode");
    cfg.allow_class_overlap = tasks.get<bool>("allow_class_overlap", cfg.allow_class_overlap);
    tasks.finish();
    resolved["tasks"] = tasks.out;

    cfg.stride = top.get<std::size_t>("stride", cfg.stride);
    cfg.seed = top.get<std::uint64_t>("seed", cfg.seed);
    resolved["stride"] = cfg.stride;
    resolved["seed"] = cfg.seed;
    if (cfg.stride == 0) throw ConfigError("stride must be positive");

    const json empty = json::object();
    Section sel(top.has("selection") ? top.child("selection") : empty, "selection");
    cfg.selection.layers = index_list(sel, "layers");
    cfg.selection.heads = index_list(sel, "heads");
    for (const std::string& b : sel.get<std::vector<std::string>>("blocks", {})) {
        try {
            cfg.selection.blocks.push_back(srwm_block_from_string(b));
        } catch (const Error&) {
            throw ConfigError("selection.blocks entries must be o, k, q or beta, got \"" + b + "\"");
        }
    }
    sel.finish();
    resolved["selection"] = sel.out;
    top.finish();
    cfg.resolved = resolved;
    return cfg;
}

GradCheckRun gradcheck_config_from_json(const json& doc) {
    Section top(doc, "");
    GradCheckRun run;
    json model = to_json(run.check.model);
    model.erase("precision");
    if (top.has("model")) {
        const json& m = top.child("model");
        if (!m.is_object()) throw ConfigError("model must be a JSON object");
        for (const auto& [k, v] : m.items()) model[k] = v;
    }
    run.check.model = model_config_from_json(model);
    run.check.model.validate();
    run.check.seq_len = top.get<std::size_t>("seq_len", run.check.seq_len);
    run.check.eps = top.get<Real>("eps", run.check.eps);
    run.check.seed = top.get<std::uint64_t>("seed", run.check.seed);
    run.tolerance = top.get<Real>("tolerance", run.tolerance);
    top.finish();
    run.resolved = top.out;
    run.resolved["model"] = to_json(run.check.model);
    return run;
}

}  // namespace srwm
