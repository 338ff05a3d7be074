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

// Data sources, episodic sampling and continual-learning sequence assembly.

#include "srwm/common.hpp"
#include "srwm/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace srwm {

using Rng = std::mt19937_64;

// Per-channel normalization statistics. Features are stored channel-major
// (all pixels of channel 0, then channel 1, ...).
struct FeatureStats {
    std::vector<Real> mean;
    std::vector<Real> std;
};

class Dataset {
public:
    Dataset() = default;
    Dataset(std::size_t dim, std::size_t channels = 1) : dim_(dim), channels_(channels) {}

    void add(std::span<const Real> x, int cls);

    std::size_t dim() const { return dim_; }
    std::size_t channels() const { return channels_; }
    std::size_t size() const { return labels_.size(); }
    std::span<const Real> feature(std::size_t i) const;
    int label(std::size_t i) const { return labels_.at(i); }
    const std::map<int, std::vector<std::size_t>>& class_index() const { return class_index_; }
    std::vector<int> classes() const;
    const std::optional<FeatureStats>& stats() const { return stats_; }

    FeatureStats compute_stats() const;
    // Standardizes every feature in place with the given statistics.
    void normalize(const FeatureStats& stats);

private:
    std::size_t dim_ = 0;
    std::size_t channels_ = 1;
    std::vector<Real> features_;
    std::vector<int> labels_;
    std::map<int, std::vector<std::size_t>> class_index_;
    std::optional<FeatureStats> stats_;
};

// IDX (big-endian) image/label pair. Pixels are scaled to [0,1] and then
// normalized with `stats`, or with the file's own statistics when absent.
Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                       const std::optional<FeatureStats>& stats = std::nullopt);

// One class per subdirectory; .png, .pgm and .ppm files. Images are resized
// to size x size, replicated to 3 channels and normalized.
Dataset load_image_dir(const std::filesystem::path& root, std::size_t size,
                       const std::optional<FeatureStats>& stats = std::nullopt);

struct ItemRef {
    int cls = 0;
    std::size_t index = 0;
    bool operator==(const ItemRef&) const = default;
    bool operator<(const ItemRef& o) const { return cls != o.cls ? cls < o.cls : index < o.index; }
};

// A pool of classes that episodes are drawn from.
class TaskSource {
public:
    virtual ~TaskSource() = default;
    virtual const std::string& name() const = 0;
    virtual std::size_t dim() const = 0;
    virtual const std::vector<int>& classes() const = 0;
    virtual std::size_t class_size(int cls) const = 0;
    virtual std::vector<Real> item(const ItemRef& ref) const = 0;
};

class DatasetSource final : public TaskSource {
public:
    DatasetSource(std::string name, std::shared_ptr<const Dataset> data, std::vector<int> classes);

    const std::string& name() const override { return name_; }
    std::size_t dim() const override { return data_->dim(); }
    const std::vector<int>& classes() const override { return classes_; }
    std::size_t class_size(int cls) const override;
    std::vector<Real> item(const ItemRef& ref) const override;

    const Dataset& dataset() const { return *data_; }

private:
    std::string name_;
    std::shared_ptr<const Dataset> data_;
    std::vector<int> classes_;
};

// Affine map x -> R diag(scales) x + shift that distinguishes synthetic domains.
struct DomainTransform {
    std::uint64_t rotation_seed = 0;  // 0 keeps the identity rotation
    std::vector<Real> scales;         // empty means all ones
    std::vector<Real> shift;          // empty means zero

    bool operator==(const DomainTransform&) const = default;
};

struct SynthSpec {
    std::string name = "synth";
    std::size_t dim = 16;
    std::size_t num_classes = 64;
    Real noise = Real(0.1);
    Real prototype_scale = Real(1);
    std::uint64_t seed = 1;
    std::size_t items_per_class = 1u << 20;
    DomainTransform transform;

    bool operator==(const SynthSpec&) const = default;
};

nlohmann::json to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& j);

// Gaussian class prototypes plus per-item noise, pushed through a domain
// transform. Item (cls, index) is a pure function of (seed, cls, index).
class SynthFamily final : public TaskSource {
public:
    explicit SynthFamily(SynthSpec spec);

    const std::string& name() const override { return spec_.name; }
    std::size_t dim() const override { return spec_.dim; }
    const std::vector<int>& classes() const override { return classes_; }
    std::size_t class_size(int) const override { return spec_.items_per_class; }
    std::vector<Real> item(const ItemRef& ref) const override;

    // The sample before the domain transform.
    std::vector<Real> raw_item(const ItemRef& ref) const;
    std::span<const Real> prototype(int cls) const;
    std::vector<Real> transform(std::span<const Real> x) const;
    const SynthSpec& spec() const { return spec_; }

private:
    SynthSpec spec_;
    std::vector<int> classes_;
    std::vector<Real> prototypes_;  // num_classes x dim
    std::vector<Real> linear_;      // dim x dim
    std::vector<Real> shift_;
};

SynthFamily synth_family(std::size_t dim, std::size_t num_classes, Real noise, DomainTransform transform,
                         std::uint64_t seed);

struct Example {
    std::vector<Real> x;
    std::size_t label = 0;
    ItemRef ref;
};

struct Episode {
    std::string source;
    std::size_t n_way = 0;
    std::size_t k_shot = 0;
    std::size_t label_offset = 0;
    std::vector<Example> demos;
    std::vector<Example> queries;
    std::map<int, std::size_t> label_map;  // original class -> episode label (without offset)

    std::vector<LabeledInput> demo_inputs() const;
    // First demonstration of every class, in stream order.
    std::vector<LabeledInput> one_shot_inputs() const;
};

// Draws N distinct classes, a fresh uniform label bijection, K shuffled
// demonstrations per class and `queries_per_class` disjoint query items per
// class (shuffled). Labels are shifted by `label_offset`. Classes in
// `exclude` are never drawn.
Episode sample_episode(const TaskSource& source, std::size_t n_way, std::size_t k_shot,
                       std::size_t queries_per_class, Rng& rng, std::size_t label_offset = 0,
                       const std::set<int>* exclude = nullptr);

enum class LabelMode { Domain, Class };  // DIL and CIL

std::string to_string(LabelMode mode);
LabelMode label_mode_from_string(const std::string& s);

struct OutputSpace {
    LabelMode mode = LabelMode::Domain;
    std::size_t n_way = 0;
    std::size_t n_tasks = 0;

    std::size_t width() const { return mode == LabelMode::Class ? n_way * n_tasks : n_way; }
    std::size_t offset(std::size_t task) const { return mode == LabelMode::Class ? n_way * task : 0; }
};

// One episode per task position, drawn from sources[m] with the label offset
// of position m. Positions sharing a source get disjoint classes unless
// allow_class_overlap is set.
std::vector<Episode> sample_task_episodes(const std::vector<const TaskSource*>& sources, std::size_t n_way,
                                          std::size_t k_shot, std::size_t queries_per_class, Rng& rng,
                                          const OutputSpace& space, bool allow_class_overlap = false);

struct SplitResult {
    std::vector<std::shared_ptr<DatasetSource>> tasks;
    OutputSpace space;
};

// Fixed-order partition of the sorted class ids into groups of n_way.
SplitResult split_dataset(std::shared_ptr<const Dataset> data, std::size_t n_way, LabelMode mode,
                          const std::string& name = "split");

// Demonstrations for a fixed task: classes keep their order within the
// source (label i for the i-th class), K shuffled demos per class. Every
// item of `queries` becomes a query; without it, every non-demo item does.
Episode fixed_task_episode(const DatasetSource& demos, std::size_t k_shot, Rng& rng, std::size_t label_offset,
                           const DatasetSource* queries);

struct CLSequence {
    LabelMode mode = LabelMode::Domain;
    std::vector<Episode> episodes;
    std::vector<std::size_t> boundaries;               // stream offset after each episode
    std::vector<std::vector<std::size_t>> eval_points;  // per boundary: tasks seen so far

    std::size_t num_tasks() const { return episodes.size(); }
    std::size_t num_terms() const;
    std::vector<LabeledInput> demo_stream() const;
};

CLSequence build_cl_sequence(std::vector<Episode> episodes, LabelMode mode = LabelMode::Domain);

}  // namespace srwm
