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

#include "srwm/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_set>

namespace srwm {

// ---------------------------------------------------------------------------
// Dataset

void Dataset::add(std::span<const Real> x, int cls) {
    if (x.size() != dim_)
        throw DimensionError("dataset item has " + std::to_string(x.size()) + " features, expected " +
                             std::to_string(dim_));
    class_index_[cls].push_back(labels_.size());
    labels_.push_back(cls);
    features_.insert(features_.end(), x.begin(), x.end());
}

std::span<const Real> Dataset::feature(std::size_t i) const {
    if (i >= labels_.size()) throw IndexError("dataset item " + std::to_string(i) + " out of range");
    return std::span<const Real>(features_).subspan(i * dim_, dim_);
}

std::vector<int> Dataset::classes() const {
    std::vector<int> out;
    out.reserve(class_index_.size());
    for (const auto& [cls, _] : class_index_) out.push_back(cls);
    return out;
}

FeatureStats Dataset::compute_stats() const {
    const std::size_t per = dim_ / channels_;
    FeatureStats s;
    s.mean.assign(channels_, Real(0));
    s.std.assign(channels_, Real(0));
    if (labels_.empty()) return s;
    const double count = static_cast<double>(labels_.size() * per);
    for (std::size_t c = 0; c < channels_; ++c) {
        double sum = 0, sq = 0;
        for (std::size_t i = 0; i < labels_.size(); ++i)
            for (std::size_t p = 0; p < per; ++p) {
                const double v = features_[i * dim_ + c * per + p];
                sum += v;
                sq += v * v;
            }
        const double mu = sum / count;
        s.mean[c] = static_cast<Real>(mu);
        s.std[c] = static_cast<Real>(std::sqrt(std::max(0.0, sq / count - mu * mu)));
    }
    return s;
}

void Dataset::normalize(const FeatureStats& stats) {
    if (stats.mean.size() != channels_ || stats.std.size() != channels_)
        throw DimensionError("normalization statistics do not match the channel count");
    const std::size_t per = dim_ / channels_;
    for (std::size_t i = 0; i < labels_.size(); ++i)
        for (std::size_t c = 0; c < channels_; ++c) {
            const Real sd = stats.std[c] > 0 ? stats.std[c] : Real(1);
            for (std::size_t p = 0; p < per; ++p) {
                Real& v = features_[i * dim_ + c * per + p];
                v = (v - stats.mean[c]) / sd;
            }
        }
    stats_ = stats;
}

// ---------------------------------------------------------------------------
// Sources

DatasetSource::DatasetSource(std::string name, std::shared_ptr<const Dataset> data, std::vector<int> classes)
    : name_(std::move(name)), data_(std::move(data)), classes_(std::move(classes)) {
    for (int c : classes_)
        if (!data_->class_index().count(c))
            throw ConfigError("class " + std::to_string(c) + " not present in dataset " + name_);
}

std::size_t DatasetSource::class_size(int cls) const {
    auto it = data_->class_index().find(cls);
    return it == data_->class_index().end() ? 0 : it->second.size();
}

std::vector<Real> DatasetSource::item(const ItemRef& ref) const {
    const auto& idx = data_->class_index().at(ref.cls);
    auto f = data_->feature(idx.at(ref.index));
    return {f.begin(), f.end()};
}

nlohmann::json to_json(const SynthSpec& s) {
    return nlohmann::json{
        {"name", s.name},
        {"dim", s.dim},
        {"num_classes", s.num_classes},
        {"noise", s.noise},
        {"prototype_scale", s.prototype_scale},
        {"seed", s.seed},
        {"items_per_class", s.items_per_class},
        {"transform",
         {{"rotation_seed", s.transform.rotation_seed},
          {"scales", s.transform.scales},
          {"shift", s.transform.shift}}},
    };
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("synthetic family spec must be a JSON object");
    static const std::set<std::string> known{"name", "dim", "num_classes", "noise", "prototype_scale",
                                             "seed", "items_per_class", "transform"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ConfigError("unknown key in synthetic family spec: " + key);
    SynthSpec s;
    try {
        s.name = j.value("name", s.name);
        s.dim = j.value("dim", s.dim);
        s.num_classes = j.value("num_classes", s.num_classes);
        s.noise = j.value("noise", s.noise);
        s.prototype_scale = j.value("prototype_scale", s.prototype_scale);
        s.seed = j.value("seed", s.seed);
        s.items_per_class = j.value("items_per_class", s.items_per_class);
        if (j.contains("transform")) {
            const auto& t = j.at("transform");
            for (const auto& [key, _] : t.items())
                if (key != "rotation_seed" && key != "scales" && key != "shift")
                    throw ConfigError("unknown key in synthetic transform: " + key);
            s.transform.rotation_seed = t.value("rotation_seed", std::uint64_t{0});
            s.transform.scales = t.value("scales", std::vector<Real>{});
            s.transform.shift = t.value("shift", std::vector<Real>{});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synthetic family spec: ") + e.what());
    }
    return s;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Orthogonal matrix from Gram-Schmidt on a Gaussian draw.
std::vector<Real> random_rotation(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> m(n * n);
    for (double& v : m) v = normal(rng);
    for (std::size_t i = 0; i < n; ++i) {
        double* row = m.data() + i * n;
        for (std::size_t j = 0; j < i; ++j) {
            const double* prev = m.data() + j * n;
            double dot = 0;
            for (std::size_t c = 0; c < n; ++c) dot += row[c] * prev[c];
            for (std::size_t c = 0; c < n; ++c) row[c] -= dot * prev[c];
        }
        double norm = 0;
        for (std::size_t c = 0; c < n; ++c) norm += row[c] * row[c];
        norm = std::sqrt(norm);
        for (std::size_t c = 0; c < n; ++c) row[c] /= norm;
    }
    return {m.begin(), m.end()};
}

}  // namespace

SynthFamily::SynthFamily(SynthSpec spec) : spec_(std::move(spec)) {
    const std::size_t d = spec_.dim;
    if (d < 2) throw ConfigError("synthetic family dim must be at least 2");
    if (spec_.num_classes == 0) throw ConfigError("synthetic family needs at least one class");
    if (spec_.items_per_class == 0) throw ConfigError("synthetic family needs items_per_class > 0");
    if (!spec_.transform.scales.empty() && spec_.transform.scales.size() != d)
        throw ConfigError("synthetic transform.scales must have dim entries");
    if (!spec_.transform.shift.empty() && spec_.transform.shift.size() != d)
        throw ConfigError("synthetic transform.shift must have dim entries");

    classes_.resize(spec_.num_classes);
    std::iota(classes_.begin(), classes_.end(), 0);

    Rng rng(spec_.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    prototypes_.resize(spec_.num_classes * d);
    for (Real& v : prototypes_) v = spec_.prototype_scale * static_cast<Real>(normal(rng));

    std::vector<Real> rot(d * d, Real(0));
    if (spec_.transform.rotation_seed == 0) {
        for (std::size_t i = 0; i < d; ++i) rot[i * d + i] = Real(1);
    } else {
        rot = random_rotation(d, spec_.transform.rotation_seed);
    }
    linear_ = rot;
    if (!spec_.transform.scales.empty())
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < d; ++c) linear_[r * d + c] *= spec_.transform.scales[c];
    shift_ = spec_.transform.shift.empty() ? std::vector<Real>(d, Real(0)) : spec_.transform.shift;
}

std::span<const Real> SynthFamily::prototype(int cls) const {
    if (cls < 0 || static_cast<std::size_t>(cls) >= spec_.num_classes)
        throw IndexError("synthetic class " + std::to_string(cls) + " out of range");
    return std::span<const Real>(prototypes_).subspan(static_cast<std::size_t>(cls) * spec_.dim, spec_.dim);
}

std::vector<Real> SynthFamily::raw_item(const ItemRef& ref) const {
    auto proto = prototype(ref.cls);
    if (ref.index >= spec_.items_per_class) throw IndexError("synthetic item index out of range");
    std::vector<Real> x(proto.begin(), proto.end());
    if (spec_.noise > 0) {
        Rng rng(splitmix64(spec_.seed ^ splitmix64(static_cast<std::uint64_t>(ref.cls) * 0x100000001b3ull +
                                                   splitmix64(ref.index))));
        std::normal_distribution<double> normal(0.0, 1.0);
        for (Real& v : x) v += spec_.noise * static_cast<Real>(normal(rng));
    }
    return x;
}

std::vector<Real> SynthFamily::transform(std::span<const Real> x) const {
    const std::size_t d = spec_.dim;
    std::vector<Real> y(shift_);
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) y[r] += linear_[r * d + c] * x[c];
    return y;
}

std::vector<Real> SynthFamily::item(const ItemRef& ref) const { return transform(raw_item(ref)); }

SynthFamily synth_family(std::size_t dim, std::size_t num_classes, Real noise, DomainTransform transform,
                         std::uint64_t seed) {
    SynthSpec s;
    s.dim = dim;
    s.num_classes = num_classes;
    s.noise = noise;
    s.transform = std::move(transform);
    s.seed = seed;
    return SynthFamily(std::move(s));
}

// ---------------------------------------------------------------------------
// Episodes

std::vector<LabeledInput> Episode::demo_inputs() const {
    std::vector<LabeledInput> out;
    out.reserve(demos.size());
    for (const Example& e : demos) out.push_back(LabeledInput{e.x, e.label});
    return out;
}

std::vector<LabeledInput> Episode::one_shot_inputs() const {
    std::vector<LabeledInput> out;
    std::unordered_set<std::size_t> seen;
    for (const Example& e : demos)
        if (seen.insert(e.label).second) out.push_back(LabeledInput{e.x, e.label});
    return out;
}

namespace {

// k distinct values from [0, n), Floyd's algorithm, returned in draw order.
std::vector<std::size_t> distinct_indices(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> out;
    out.reserve(k);
    std::unordered_set<std::size_t> taken;
    for (std::size_t j = n - k; j < n; ++j) {
        const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
        if (taken.insert(t).second) {
            out.push_back(t);
        } else {
            taken.insert(j);
            out.push_back(j);
        }
    }
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

}  // namespace

Episode sample_episode(const TaskSource& source, std::size_t n_way, std::size_t k_shot,
                       std::size_t queries_per_class, Rng& rng, std::size_t label_offset,
                       const std::set<int>* exclude) {
    if (n_way == 0 || k_shot == 0) throw SamplingError("episodes need n_way > 0 and k_shot > 0");
    std::vector<int> pool = source.classes();
    if (exclude && !exclude->empty())
        std::erase_if(pool, [&](int c) { return exclude->count(c) > 0; });
    if (pool.size() < n_way)
        throw SamplingError("source " + source.name() + " has " + std::to_string(pool.size()) +
                            (exclude && !exclude->empty() ? " unused" : "") + " classes, episode needs " +
                            std::to_string(n_way));
    const std::size_t per_class = k_shot + queries_per_class;

    // Partial Fisher-Yates: the first n_way entries are a uniform draw.
    for (std::size_t i = 0; i < n_way; ++i) {
        const std::size_t j = std::uniform_int_distribution<std::size_t>(i, pool.size() - 1)(rng);
        std::swap(pool[i], pool[j]);
    }
    std::vector<int> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_way));
    std::vector<std::size_t> labels(n_way);
    std::iota(labels.begin(), labels.end(), std::size_t{0});
    std::shuffle(labels.begin(), labels.end(), rng);

    Episode ep;
    ep.source = source.name();
    ep.n_way = n_way;
    ep.k_shot = k_shot;
    ep.label_offset = label_offset;
    for (std::size_t i = 0; i < n_way; ++i) {
        const int cls = chosen[i];
        const std::size_t available = source.class_size(cls);
        if (available < per_class)
            throw SamplingError("class " + std::to_string(cls) + " of " + source.name() + " has " +
                                std::to_string(available) + " items, episode needs " + std::to_string(per_class));
        ep.label_map[cls] = labels[i];
        const auto idx = distinct_indices(available, per_class, rng);
        for (std::size_t j = 0; j < per_class; ++j) {
            ItemRef ref{cls, idx[j]};
            Example e{source.item(ref), labels[i] + label_offset, ref};
            (j < k_shot ? ep.demos : ep.queries).push_back(std::move(e));
        }
    }
    std::shuffle(ep.demos.begin(), ep.demos.end(), rng);
    std::shuffle(ep.queries.begin(), ep.queries.end(), rng);
    return ep;
}

std::vector<Episode> sample_task_episodes(const std::vector<const TaskSource*>& sources, std::size_t n_way,
                                          std::size_t k_shot, std::size_t queries_per_class, Rng& rng,
                                          const OutputSpace& space, bool allow_class_overlap) {
    std::map<const TaskSource*, std::set<int>> used;
    std::vector<Episode> eps;
    eps.reserve(sources.size());
    for (std::size_t m = 0; m < sources.size(); ++m) {
        std::set<int>& seen = used[sources[m]];
        eps.push_back(sample_episode(*sources[m], n_way, k_shot, queries_per_class, rng, space.offset(m),
                                     allow_class_overlap ? nullptr : &seen));
        for (const auto& [cls, _] : eps.back().label_map) seen.insert(cls);
    }
    return eps;
}

std::string to_string(LabelMode mode) { return mode == LabelMode::Class ? "cil" : "dil"; }

LabelMode label_mode_from_string(const std::string& s) {
    if (s == "dil" || s == "DIL" || s == "domain") return LabelMode::Domain;
    if (s == "cil" || s == "CIL" || s == "class") return LabelMode::Class;
    throw ConfigError("label mode must be \"dil\" or \"cil\", got \"" + s + "\"");
}

SplitResult split_dataset(std::shared_ptr<const Dataset> data, std::size_t n_way, LabelMode mode,
                          const std::string& name) {
    std::vector<int> classes = data->classes();
    if (n_way == 0 || classes.empty() || classes.size() % n_way != 0)
        throw ConfigError("cannot split " + std::to_string(classes.size()) + " classes into groups of " +
                          std::to_string(n_way));
    SplitResult out;
    out.space = OutputSpace{mode, n_way, classes.size() / n_way};
    for (std::size_t t = 0; t < out.space.n_tasks; ++t) {
        std::vector<int> group(classes.begin() + static_cast<std::ptrdiff_t>(t * n_way),
                               classes.begin() + static_cast<std::ptrdiff_t>((t + 1) * n_way));
        std::string task_name = name + "-" + std::to_string(group.front()) + std::to_string(group.back());
        out.tasks.push_back(std::make_shared<DatasetSource>(std::move(task_name), data, std::move(group)));
    }
    return out;
}

Episode fixed_task_episode(const DatasetSource& demos, std::size_t k_shot, Rng& rng, std::size_t label_offset,
                           const DatasetSource* queries) {
    Episode ep;
    ep.source = demos.name();
    ep.n_way = demos.classes().size();
    ep.k_shot = k_shot;
    ep.label_offset = label_offset;
    for (std::size_t i = 0; i < demos.classes().size(); ++i) {
        const int cls = demos.classes()[i];
        ep.label_map[cls] = i;
        const std::size_t available = demos.class_size(cls);
        if (available < k_shot)
            throw SamplingError("class " + std::to_string(cls) + " has " + std::to_string(available) +
                                " items, need " + std::to_string(k_shot));
        for (std::size_t idx : distinct_indices(available, k_shot, rng)) {
            ItemRef ref{cls, idx};
            ep.demos.push_back(Example{demos.item(ref), i + label_offset, ref});
        }
    }
    std::shuffle(ep.demos.begin(), ep.demos.end(), rng);
    std::set<ItemRef> used;
    if (!queries)
        for (const Example& d : ep.demos) used.insert(d.ref);
    const DatasetSource& pool = queries ? *queries : demos;
    for (std::size_t i = 0; i < demos.classes().size(); ++i) {
        const int cls = demos.classes()[i];
        for (std::size_t idx = 0; idx < pool.class_size(cls); ++idx) {
            const ItemRef ref{cls, idx};
            if (!used.count(ref)) ep.queries.push_back(Example{pool.item(ref), i + label_offset, ref});
        }
    }
    return ep;
}

// ---------------------------------------------------------------------------
// CL sequences

std::size_t CLSequence::num_terms() const {
    std::size_t n = 0;
    for (const auto& e : eval_points) n += e.size();
    return n;
}

std::vector<LabeledInput> CLSequence::demo_stream() const {
    std::vector<LabeledInput> out;
    out.reserve(boundaries.empty() ? 0 : boundaries.back());
    for (const Episode& ep : episodes)
        for (const Example& e : ep.demos) out.push_back(LabeledInput{e.x, e.label});
    return out;
}

CLSequence build_cl_sequence(std::vector<Episode> episodes, LabelMode mode) {
    if (episodes.empty()) throw ConfigError("a CL sequence needs at least one episode");
    if (mode == LabelMode::Class) {
        for (std::size_t a = 0; a < episodes.size(); ++a)
            for (std::size_t b = a + 1; b < episodes.size(); ++b) {
                const auto& ea = episodes[a];
                const auto& eb = episodes[b];
                const bool disjoint = ea.label_offset + ea.n_way <= eb.label_offset ||
                                      eb.label_offset + eb.n_way <= ea.label_offset;
                if (!disjoint)
                    throw ConfigError("class-incremental episodes " + std::to_string(a) + " and " +
                                      std::to_string(b) + " have overlapping label ranges");
            }
    }
    CLSequence seq;
    seq.mode = mode;
    std::size_t offset = 0;
    for (std::size_t m = 0; m < episodes.size(); ++m) {
        offset += episodes[m].demos.size();
        seq.boundaries.push_back(offset);
        std::vector<std::size_t> tasks(m + 1);
        std::iota(tasks.begin(), tasks.end(), std::size_t{0});
        seq.eval_points.push_back(std::move(tasks));
    }
    seq.episodes = std::move(episodes);
    return seq;
}

}  // namespace srwm
