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

#include "srwm/cli.hpp"

#include "srwm/config.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>

namespace srwm {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct CommonArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::string out = ".";
};

std::ofstream open_out(const fs::path& p) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + p.string());
    return f;
}

void write_json(const fs::path& p, const json& j) {
    auto f = open_out(p);
    f << j.dump(2) << '\n';
    if (!f) throw IoError("failed writing " + p.string());
}

void make_out_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

// Applies --seed / --threads to a config document before parsing so the
// resolved config records them.
void override_key(json& doc, const char* section, const char* key, const json& value) {
    if (!doc.is_object()) return;
    if (section) {
        json& s = doc[section];
        if (s.is_null()) s = json::object();
        if (s.is_object()) s[key] = value;
    } else {
        doc[key] = value;
    }
}

std::string run_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "run_%02zu", i + 1);
    return buf;
}

int cmd_meta_train(const CommonArgs& a, std::ostream& out) {
    json doc = read_json_file(a.config);
    if (a.seed) override_key(doc, "train", "seed", *a.seed);
    if (a.threads) override_key(doc, "train", "threads", *a.threads);
    const TrainConfig cfg = train_config_from_json(doc, make_context(a.config, doc));
    const fs::path dir(a.out);
    make_out_dir(dir);
    write_json(dir / "resolved_config.json", cfg.resolved);

    auto log = open_out(dir / "train_log.csv");
    const TrainResult r = meta_train(cfg, &log);
    log.close();
    if (!log) throw IoError("failed writing " + (dir / "train_log.csv").string());
    save_checkpoint(r.best, dir / "checkpoint.bin");
    save_checkpoint(r.last, dir / "last.bin");
    if (r.diverged) {
        out << "training diverged: " << r.message << "; last good parameters saved to " << (dir / "last.bin").string()
            << '\n';
        return kExitRuntime;
    }
    out << "trained " << r.last.step << " steps; checkpoint " << (dir / "checkpoint.bin").string();
    if (!r.validation.empty()) out << " (best meta-validation accuracy at step " << r.best.step << ")";
    out << '\n';
    return kExitOk;
}

int cmd_meta_test(const CommonArgs& a, std::ostream& out) {
    json doc = read_json_file(a.config);
    if (a.seed) override_key(doc, "protocol", "seed", *a.seed);
    const TestConfig cfg = test_config_from_json(doc, make_context(a.config, doc));
    const ModelCheckpoint ck = load_checkpoint(cfg.checkpoint);
    const MetaTestResult r = meta_test(ck.params, cfg.tasks, cfg.protocol);

    const fs::path dir(a.out);
    make_out_dir(dir);
    write_json(dir / "resolved_config.json", cfg.resolved);
    auto runs = open_out(dir / "runs.csv");
    runs << std::setprecision(std::numeric_limits<Real>::max_digits10) << "run,boundary,task,accuracy\n";
    for (std::size_t i = 0; i < r.runs.size(); ++i) {
        write_json(dir / (run_name(i) + ".json"), to_json(r.runs[i]));
        const auto& acc = r.runs[i].acc;
        for (std::size_t m = 0; m < acc.size(); ++m)
            for (std::size_t j = 0; j <= m; ++j) runs << i + 1 << ',' << m + 1 << ',' << j + 1 << ',' << acc[m][j] << '\n';
    }
    json summary = r.summary;
    summary["mean_report"] = to_json(r.mean);
    write_json(dir / "summary.json", summary);
    auto csv = open_out(dir / "summary.csv");
    write_accuracy_csv(csv, r.mean);

    const auto& avg = r.summary.at("avg_acc");
    out << "avg_acc " << avg.at("mean").get<double>() << " +- " << avg.at("std").get<double>() << " over "
        << r.runs.size() << " runs\n";
    return kExitOk;
}

int cmd_analyze(const std::string& log_path, const std::string& out_dir, std::ostream& out) {
    std::ifstream in(log_path);
    if (!in) throw IoError("cannot read training log " + log_path);
    const CurveSet curves = curve_extract(in);
    const fs::path dir(out_dir);
    make_out_dir(dir);
    auto f = open_out(dir / "curves.csv");
    write_curves_csv(f, curves);
    out << curves.series.size() << " curve series written to " << (dir / "curves.csv").string() << '\n';
    return kExitOk;
}

int cmd_snapshots(const CommonArgs& a, std::ostream& out) {
    json doc = read_json_file(a.config);
    if (a.seed) override_key(doc, nullptr, "seed", *a.seed);
    const SnapshotConfig cfg = snapshot_config_from_json(doc, make_context(a.config, doc));
    const ModelCheckpoint ck = load_checkpoint(cfg.checkpoint);
    const OutputSpace space{cfg.mode, cfg.n_way, cfg.num_tasks};
    if (ck.params.config.n_outputs != space.width())
        throw ConfigError("checkpoint has a " + std::to_string(ck.params.config.n_outputs) +
                          "-way output, snapshot tasks need " + std::to_string(space.width()));
    Rng rng(cfg.seed);
    std::vector<const TaskSource*> sources;
    for (std::size_t m = 0; m < cfg.num_tasks; ++m) sources.push_back(cfg.sources[m % cfg.sources.size()].get());
    const CLSequence seq = build_cl_sequence(
        sample_task_episodes(sources, cfg.n_way, cfg.k_shot, 1, rng, space, cfg.allow_class_overlap), cfg.mode);
    const auto demos = seq.demo_stream();

    const fs::path dir(a.out);
    make_out_dir(dir);
    write_json(dir / "resolved_config.json", cfg.resolved);
    auto f = open_out(dir / "snapshots.csv");
    const std::size_t n = dump_weight_snapshots(ck.params, demos, cfg.stride, cfg.selection, f);
    out << n << " snapshots of " << demos.size() << " demos written to " << (dir / "snapshots.csv").string() << '\n';
    return kExitOk;
}

int cmd_gradcheck(const CommonArgs& a, std::ostream& out) {
    json doc = a.config.empty() ? json::object() : read_json_file(a.config);
    if (a.seed) override_key(doc, nullptr, "seed", *a.seed);
    const GradCheckRun run = gradcheck_config_from_json(doc);
    const GradCheckReport rep = model_gradcheck(run.check);
    out << std::setprecision(3) << std::scientific;
    for (const TensorCheck& t : rep.tensors) out << t.name << " size " << t.size << " rel_error " << t.rel_error << '\n';
    out << "max relative error " << rep.max_rel_error << " (tolerance " << run.tolerance << ")\n";
    out << std::defaultfloat;
    if (!(rep.max_rel_error < run.tolerance)) {
        out << "gradcheck FAILED\n";
        return kExitRuntime;
    }
    out << "gradcheck ok\n";
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"SRWM continual metalearning: meta-train, meta-test and analysis tools", "srwm_acl"};
    app.require_subcommand(1);
    app.footer(std::string("Relative data paths resolve against data_root, $") + kDataRootEnv +
               " or the config file's directory.\nExit codes: 0 ok, 2 config error, 3 runtime/numerics error, 4 I/O error.");

    CommonArgs args;
    std::string log_path;
    auto add_common = [&](CLI::App* sub, bool config_required, bool with_threads) {
        auto* c = sub->add_option("--config", args.config, "JSON config file");
        if (config_required) c->required();
        sub->add_option("--seed", args.seed, "override the config seed");
        if (with_threads) sub->add_option("--threads", args.threads, "worker threads (1 = deterministic)");
        sub->add_option("--out", args.out, "output directory")->capture_default_str();
    };
    auto* train = app.add_subcommand("meta-train", "meta-train a model; writes checkpoint, log and resolved config");
    add_common(train, true, true);
    auto* test = app.add_subcommand("meta-test", "evaluate a checkpoint; writes per-run and summary reports");
    add_common(test, true, true);
    auto* analyze = app.add_subcommand("analyze", "extract per-term loss curves from a training log");
    analyze->add_option("--log", log_path, "train_log.csv from meta-train")->required();
    analyze->add_option("--out", args.out, "output directory")->capture_default_str();
    auto* snaps = app.add_subcommand("snapshots", "dump SRWM weight snapshots while processing demonstrations");
    add_common(snaps, true, false);
    auto* grad = app.add_subcommand("gradcheck", "compare tape gradients with finite differences");
    add_common(grad, false, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*train) return cmd_meta_train(args, out);
        if (*test) return cmd_meta_test(args, out);
        if (*analyze) return cmd_analyze(log_path, args.out, out);
        if (*snaps) return cmd_snapshots(args, out);
        if (*grad) return cmd_gradcheck(args, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const FormatError& e) {
        err << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitConfig;
}

}  // namespace srwm
