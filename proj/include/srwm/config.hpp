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

// JSON run configs for the command-line tools. Every section rejects unknown
// keys; each parser also returns the fully resolved document (defaults
// filled in) so runs can record exactly what they used.

#include "srwm/eval.hpp"
#include "srwm/gradcheck.hpp"
#include "srwm/trainer.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace srwm {

// Environment variable naming the default directory for relative data paths.
inline constexpr const char* kDataRootEnv = "SRWM_DATA_ROOT";

struct ConfigContext {
    std::filesystem::path config_dir;  // base for relative paths when no data root is set
    std::optional<std::filesystem::path> data_root;

    std::filesystem::path resolve_data(const std::string& p) const;
};

// Reads a JSON file: IoError when unreadable, ConfigError when not JSON.
nlohmann::json read_json_file(const std::filesystem::path& path);

// data_root key, else $SRWM_DATA_ROOT, else the config file's directory.
ConfigContext make_context(const std::filesystem::path& config_path, const nlohmann::json& doc);

// One task source. `type` is synthetic, mnist or image_dir.
std::shared_ptr<const TaskSource> source_from_json(const nlohmann::json& j, const ConfigContext& ctx,
                                                   nlohmann::json* resolved = nullptr);

AclFlags acl_flags_from_json(const nlohmann::json& j, nlohmann::json* resolved = nullptr);

TrainConfig train_config_from_json(const nlohmann::json& doc, const ConfigContext& ctx);

struct TestConfig {
    std::filesystem::path checkpoint;
    MetaTestProtocol protocol;
    std::vector<TaskSlot> tasks;
    nlohmann::json resolved;
};

// Tasks come from `tasks` (a list of sources) or `split` (a dataset cut into
// fixed class groups, demos from the train part and queries from the test part).
TestConfig test_config_from_json(const nlohmann::json& doc, const ConfigContext& ctx);

struct SnapshotConfig {
    std::filesystem::path checkpoint;
    std::vector<std::shared_ptr<const TaskSource>> sources;
    std::size_t n_way = 5;
    std::size_t k_shot = 5;
    std::size_t num_tasks = 1;
    LabelMode mode = LabelMode::Domain;
    bool allow_class_overlap = false;
    std::size_t stride = 1;
    std::uint64_t seed = 0;
    SnapshotSelection selection;
    nlohmann::json resolved;
};

SnapshotConfig snapshot_config_from_json(const nlohmann::json& doc, const ConfigContext& ctx);

struct GradCheckRun {
    GradCheckConfig check;
    Real tolerance = Real(1e-4);
    nlohmann::json resolved;
};

GradCheckRun gradcheck_config_from_json(const nlohmann::json& doc);

}  // namespace srwm
