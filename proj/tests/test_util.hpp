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

#include "srwm/tensor.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace srwm::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> n(0.0, sd);
    for (Real& v : t.mutable_data()) v = static_cast<Real>(n(rng));
    return t;
}

// max |a - n| / max(max|a|, max|n|) between tape gradients of f at x and
// central differences. f builds a scalar from the watched input.
inline double fd_rel_error(Tensor x, const std::function<Var(Tape&, const Var&)>& f, double eps = 1e-5) {
    Tape tape;
    const Var xv = tape.watch(x);
    const Tensor g = tape.backward(f(tape, xv)).at(x);
    double err = 0, scale = 0;
    auto d = x.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        const Real keep = d[i];
        auto eval = [&](Real v) {
            d[i] = v;
            Tape t(Tape::Mode::Inference);
            return static_cast<double>(f(t, t.constant(x)).value().item());
        };
        const double num = (eval(keep + eps) - eval(keep - eps)) / (2 * eps);
        d[i] = keep;
        err = std::max(err, std::abs(num - g[i]));
        scale = std::max({scale, std::abs(num), std::abs(static_cast<double>(g[i]))});
    }
    return scale > 0 ? err / scale : 0.0;
}

// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("srwm_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream f(p, std::ios::binary);
    f << bytes;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

inline void put_be32(std::string& s, std::uint32_t v) {
    for (int i = 3; i >= 0; --i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

// IDX image/label files with n items of rows x cols; pixel(i, r, c) and
// label(i) supply the contents.
inline void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::uint32_t n,
                      std::uint32_t rows, std::uint32_t cols,
                      const std::function<unsigned char(std::uint32_t, std::uint32_t, std::uint32_t)>& pixel,
                      const std::function<unsigned char(std::uint32_t)>& label) {
    std::string im, lb;
    put_be32(im, 0x803);
    put_be32(im, n);
    put_be32(im, rows);
    put_be32(im, cols);
    for (std::uint32_t i = 0; i < n; ++i)
        for (std::uint32_t r = 0; r < rows; ++r)
            for (std::uint32_t c = 0; c < cols; ++c) im.push_back(static_cast<char>(pixel(i, r, c)));
    put_be32(lb, 0x801);
    put_be32(lb, n);
    for (std::uint32_t i = 0; i < n; ++i) lb.push_back(static_cast<char>(label(i)));
    write_file(images, im);
    write_file(labels, lb);
}

}  // namespace srwm::testing
