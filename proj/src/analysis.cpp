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

#include <limits>
#include <sstream>

namespace srwm {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

CurveSet curve_extract(std::istream& log) {
    CurveSet out;
    std::string line;
    if (!std::getline(log, line)) return out;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv_line(line);
    auto col = [&](const char* name) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw FormatError(std::string("line 1: training log has no '") + name + "' column");
    };
    const std::size_t c_step = col("step"), c_task = col("task"), c_source = col("source"), c_kind = col("kind"),
                      c_value = col("value");
    const std::size_t needed = std::max({c_step, c_task, c_source, c_kind, c_value}) + 1;

    // (series, step) -> (sum, count)
    std::map<std::string, std::map<std::size_t, std::pair<double, std::size_t>>> acc;
    std::size_t lineno = 1;
    while (std::getline(log, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() < needed)
            throw FormatError("line " + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                              " columns, got " + std::to_string(cells.size()));
        const std::string& kind = cells[c_kind];
        std::string family;
        if (kind == "learn") family = "learn";
        else if (kind == "bwd" || kind == "bwd_monitor") family = "bwd";
        else continue;
        try {
            std::size_t pos = 0;
            const std::size_t step = std::stoul(cells[c_step], &pos);
            if (pos != cells[c_step].size()) throw std::invalid_argument("step");
            const std::size_t task = std::stoul(cells[c_task], &pos);
            if (pos != cells[c_task].size()) throw std::invalid_argument("task");
            const double value = std::stod(cells[c_value], &pos);
            if (pos != cells[c_value].size()) throw std::invalid_argument("value");
            auto& slot = acc[family + "/" + cells[c_source] + "/" + std::to_string(task)][step];
            slot.first += value;
            ++slot.second;
        } catch (const std::logic_error&) {
            throw FormatError("line " + std::to_string(lineno) + ": malformed numeric field");
        }
    }
    for (const auto& [name, steps] : acc)
        for (const auto& [step, sc] : steps)
            out.series[name][step] = static_cast<Real>(sc.first / static_cast<double>(sc.second));
    return out;
}

void write_curves_csv(std::ostream& os, const CurveSet& curves) {
    const auto old = os.precision(std::numeric_limits<Real>::max_digits10);
    os << "series,step,value\n";
    for (const auto& [name, steps] : curves.series)
        for (const auto& [step, value] : steps) os << name << ',' << step << ',' << value << '\n';
    os.precision(old);
}

std::string to_string(SrwmBlock b) {
    switch (b) {
        case SrwmBlock::Out: return "o";
        case SrwmBlock::Key: return "k";
        case SrwmBlock::Query: return "q";
        case SrwmBlock::Rate: return "beta";
    }
    return "?";
}

SrwmBlock srwm_block_from_string(const std::string& s) {
    if (s == "o") return SrwmBlock::Out;
    if (s == "k") return SrwmBlock::Key;
    if (s == "q") return SrwmBlock::Query;
    if (s == "beta" || s == "b") return SrwmBlock::Rate;
    throw ConfigError("unknown SRWM sub-block \"" + s + "\" (expected o, k, q or beta)");
}

std::size_t dump_weight_snapshots(const ModelParams& params, std::span<const LabeledInput> demos, std::size_t stride,
                                  const SnapshotSelection& selection, std::ostream& os) {
    if (stride == 0) throw ConfigError("snapshot stride must be positive");
    const std::size_t n_layers = params.blocks.size();
    const std::size_t n_heads = params.config.n_heads;
    auto all = [](std::size_t n) {
        std::vector<std::size_t> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = i;
        return v;
    };
    const auto layers = selection.layers.empty() ? all(n_layers) : selection.layers;
    const auto heads = selection.heads.empty() ? all(n_heads) : selection.heads;
    const std::vector<SrwmBlock> blocks = selection.blocks.empty()
                                              ? std::vector<SrwmBlock>{SrwmBlock::Out, SrwmBlock::Key,
                                                                       SrwmBlock::Query, SrwmBlock::Rate}
                                              : selection.blocks;
    for (std::size_t l : layers)
        if (l >= n_layers) throw ConfigError("snapshot layer " + std::to_string(l) + " out of range");
    for (std::size_t h : heads)
        if (h >= n_heads) throw ConfigError("snapshot head " + std::to_string(h) + " out of range");

    const auto old = os.precision(std::numeric_limits<Real>::max_digits10);
    os << "step,layer,head,block,row,col,value\n";
    auto dump = [&](std::size_t step, const ModelState& state) {
        for (std::size_t l : layers)
            for (std::size_t h : heads) {
                const Tensor& w = state.layers[l].heads[h].value();
                const SrwmDims& dims = params.blocks[l].srwm.dims;
                for (SrwmBlock b : blocks) {
                    const auto [r0, r1] = dims.block_rows(b);
                    for (std::size_t r = r0; r < r1; ++r)
                        for (std::size_t c = 0; c < dims.d_in; ++c)
                            os << step << ',' << l << ',' << h << ',' << to_string(b) << ',' << r - r0 << ',' << c
                               << ',' << w.at(r, c) << '\n';
                }
            }
    };

    Tape tape(Tape::Mode::Inference);
    ModelState state = start_state(tape, params);
    dump(0, state);
    std::size_t count = 1;
    for (std::size_t t = 0; t < demos.size(); ++t) {
        model_step(tape, params, state, demos[t]);
        if ((t + 1) % stride == 0) {
            dump(t + 1, state);
            ++count;
        }
    }
    os.precision(old);
    return count;
}

}  // namespace srwm
