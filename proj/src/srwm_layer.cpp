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

#include "srwm/srwm_layer.hpp"

#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

namespace srwm {

std::pair<std::size_t, std::size_t> SrwmDims::block_rows(SrwmBlock b) const {
    switch (b) {
        case SrwmBlock::Out: return {0, d_out};
        case SrwmBlock::Key: return {d_out, d_out + d_in};
        case SrwmBlock::Query: return {d_out + d_in, d_out + 2 * d_in};
        case SrwmBlock::Rate: return {d_out + 2 * d_in, d_out + 2 * d_in + 4};
    }
    return {0, 0};
}

SrwmSeed srwm_init(std::size_t d_in, std::size_t d_out, std::size_t n_heads, std::uint64_t seed) {
    if (d_in == 0 || d_out == 0 || n_heads == 0) throw ConfigError("srwm_init: dimensions must be positive");
    SrwmSeed out;
    out.dims = SrwmDims{d_in, d_out, n_heads};
    const auto [q0, q1] = out.dims.block_rows(SrwmBlock::Query);
    const Real std_main = Real(1) / std::sqrt(static_cast<Real>(d_in));
    const Real std_query = Real(0.01) * std_main;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t h = 0; h < n_heads; ++h) {
        Tensor w(Shape{out.dims.rows(), d_in});
        auto d = w.mutable_data();
        for (std::size_t r = 0; r < out.dims.rows(); ++r) {
            const Real s = (r >= q0 && r < q1) ? std_query : std_main;
            for (std::size_t c = 0; c < d_in; ++c) d[r * d_in + c] = s * static_cast<Real>(normal(rng));
        }
        w.set_requires_grad(true);
        out.heads.push_back(std::move(w));
    }
    return out;
}

namespace {

void softmax_into(std::span<const Real> x, std::span<Real> y) {
    const Real mx = *std::max_element(x.begin(), x.end());
    Real z = 0;
    for (std::size_t i = 0; i < x.size(); ++i) z += (y[i] = std::exp(x[i] - mx));
    for (Real& v : y) v /= z;
}

Real sigmoid_scalar(Real x) {
    if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
    const Real e = std::exp(x);
    return e / (Real(1) + e);
}

// y[r] = sum_c W[r,c] x[c]
void matvec(std::span<const Real> w, std::size_t rows, std::size_t cols, std::span<const Real> x,
            std::span<Real> y) {
    for (std::size_t r = 0; r < rows; ++r) y[r] = kernels::dot(w.data() + r * cols, x.data(), cols);
}

// y[c] += sum_r W[r,c] x[r]
void matvec_t_add(std::span<const Real> w, std::size_t rows, std::size_t cols, std::span<const Real> x,
                  std::span<Real> y) {
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* row = w.data() + r * cols;
        const Real xr = x[r];
        if (xr == 0) continue;
        for (std::size_t c = 0; c < cols; ++c) y[c] += row[c] * xr;
    }
}

// Everything the update needs, shared by forward and backward.
struct Intermediates {
    std::vector<Real> y, phi_k, phi_q, v, vbar;
    std::array<Real, 4> rates{};
    std::vector<std::uint8_t> block_of_row;
};

Intermediates compute(std::span<const Real> w, std::span<const Real> u, const SrwmDims& dims) {
    const std::size_t rows = dims.rows(), d = dims.d_in;
    Intermediates im;
    im.y.resize(rows);
    matvec(w, rows, d, u, im.y);
    im.phi_k.resize(d);
    im.phi_q.resize(d);
    const auto [k0, k1] = dims.block_rows(SrwmBlock::Key);
    const auto [q0, q1] = dims.block_rows(SrwmBlock::Query);
    const auto [b0, b1] = dims.block_rows(SrwmBlock::Rate);
    softmax_into(std::span<const Real>(im.y).subspan(k0, d), im.phi_k);
    softmax_into(std::span<const Real>(im.y).subspan(q0, d), im.phi_q);
    im.v.resize(rows);
    im.vbar.resize(rows);
    matvec(w, rows, d, im.phi_q, im.v);
    matvec(w, rows, d, im.phi_k, im.vbar);
    for (std::size_t s = 0; s < 4; ++s) im.rates[s] = sigmoid_scalar(im.y[b0 + s]);
    im.block_of_row.resize(rows);
    for (std::size_t r = 0; r < rows; ++r)
        im.block_of_row[r] = r < k0 ? 0 : r < k1 ? 1 : r < q1 ? 2 : 3;
    (void)b1;
    return im;
}

void check_step_dims(const Var& w, const Var& u, const SrwmDims& dims) {
    if (w.shape() != Shape{dims.rows(), dims.d_in})
        throw DimensionError("srwm_step: W has shape " + shape_str(w.shape()) + ", expected " +
                             shape_str(Shape{dims.rows(), dims.d_in}));
    if (u.shape() != Shape{dims.d_in})
        throw DimensionError("srwm_step: input has shape " + shape_str(u.shape()) + ", expected [" +
                             std::to_string(dims.d_in) + "]");
}

}  // namespace

SrwmTrace srwm_trace(const Tensor& w, std::span<const Real> u, const SrwmDims& dims) {
    if (w.shape() != Shape{dims.rows(), dims.d_in} || u.size() != dims.d_in)
        throw DimensionError("srwm_trace: dimension mismatch");
    Intermediates im = compute(w.data(), u, dims);
    SrwmTrace t;
    auto part = [&](SrwmBlock b) {
        const auto [r0, r1] = dims.block_rows(b);
        return std::vector<Real>(im.y.begin() + static_cast<std::ptrdiff_t>(r0),
                                 im.y.begin() + static_cast<std::ptrdiff_t>(r1));
    };
    t.o = part(SrwmBlock::Out);
    t.k = part(SrwmBlock::Key);
    t.q = part(SrwmBlock::Query);
    t.beta = part(SrwmBlock::Rate);
    t.phi_k = im.phi_k;
    t.phi_q = im.phi_q;
    t.v = im.v;
    t.vbar = im.vbar;
    t.rates = im.rates;
    Tensor next = w.clone().set_requires_grad(false);
    auto nd = next.mutable_data();
    const std::size_t d = dims.d_in;
    for (std::size_t r = 0; r < dims.rows(); ++r) {
        const Real a = im.rates[im.block_of_row[r]] * (im.v[r] - im.vbar[r]);
        for (std::size_t c = 0; c < d; ++c) nd[r * d + c] += a * im.phi_k[c];
    }
    t.next = std::move(next);
    return t;
}

SrwmStep srwm_step(Tape& tape, const Var& w, const Var& u, const SrwmDims& dims) {
    check_step_dims(w, u, dims);
    const std::size_t rows = dims.rows(), d = dims.d_in, d_out = dims.d_out;
    auto shared = std::make_shared<const Intermediates>(compute(w.value().data(), u.value().data(), dims));
    const Intermediates& im = *shared;

    Tensor o(Shape{d_out}, std::vector<Real>(im.y.begin(), im.y.begin() + static_cast<std::ptrdiff_t>(d_out)));
    Var output = tape.record(std::move(o), {&w, &u}, [&tape, w, u, d, d_out](std::span<const Real> g) {
        auto wd = w.value().data();
        auto ud = u.value().data();
        if (auto gw = tape.grad_of(w); !gw.empty())
            for (std::size_t r = 0; r < d_out; ++r)
                for (std::size_t c = 0; c < d; ++c) gw[r * d + c] += g[r] * ud[c];
        if (auto gu = tape.grad_of(u); !gu.empty()) matvec_t_add(wd, d_out, d, g, gu);
    });

    Tensor next = w.value().clone().set_requires_grad(false);
    {
        auto nd = next.mutable_data();
        for (std::size_t r = 0; r < rows; ++r) {
            const Real a = im.rates[im.block_of_row[r]] * (im.v[r] - im.vbar[r]);
            Real* row = nd.data() + r * d;
            for (std::size_t c = 0; c < d; ++c) row[c] += a * im.phi_k[c];
        }
    }

    Var weights = tape.record(std::move(next), {&w, &u}, [&tape, w, u, dims, shared](std::span<const Real> g) {
        const std::size_t rows = dims.rows(), d = dims.d_in;
        auto wd = w.value().data();
        auto ud = u.value().data();
        const Intermediates& im = *shared;

        // gphi[r] = (G phi_k)[r]
        std::vector<Real> gphi(rows);
        matvec(g, rows, d, im.phi_k, gphi);

        std::array<Real, 4> d_rate{};
        std::vector<Real> d_delta(rows), a(rows);
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t s = im.block_of_row[r];
            const Real delta = im.v[r] - im.vbar[r];
            d_rate[s] += delta * gphi[r];
            d_delta[r] = im.rates[s] * gphi[r];
            a[r] = im.rates[s] * delta;
        }

        // Through phi_k as the outer-product key, and through v / vbar.
        std::vector<Real> d_phi_k(d, Real(0)), d_phi_q(d, Real(0));
        matvec_t_add(g, rows, d, a, d_phi_k);
        matvec_t_add(wd, rows, d, d_delta, d_phi_q);
        std::vector<Real> neg(d_delta);
        for (Real& x : neg) x = -x;
        matvec_t_add(wd, rows, d, neg, d_phi_k);

        // Softmax and sigmoid backward into dy = d(W u).
        std::vector<Real> dy(rows, Real(0));
        const auto [k0, k1] = dims.block_rows(SrwmBlock::Key);
        const auto [q0, q1] = dims.block_rows(SrwmBlock::Query);
        const auto [b0, b1] = dims.block_rows(SrwmBlock::Rate);
        (void)k1;
        (void)q1;
        (void)b1;
        Real dot_k = 0, dot_q = 0;
        for (std::size_t c = 0; c < d; ++c) {
            dot_k += d_phi_k[c] * im.phi_k[c];
            dot_q += d_phi_q[c] * im.phi_q[c];
        }
        for (std::size_t c = 0; c < d; ++c) {
            dy[k0 + c] = im.phi_k[c] * (d_phi_k[c] - dot_k);
            dy[q0 + c] = im.phi_q[c] * (d_phi_q[c] - dot_q);
        }
        for (std::size_t s = 0; s < 4; ++s) dy[b0 + s] = d_rate[s] * im.rates[s] * (Real(1) - im.rates[s]);

        if (auto gw = tape.grad_of(w); !gw.empty()) {
            for (std::size_t r = 0; r < rows; ++r) {
                Real* row = gw.data() + r * d;
                const Real* grow = g.data() + r * d;
                const Real dq = d_delta[r], dk = -d_delta[r], du = dy[r];
                for (std::size_t c = 0; c < d; ++c)
                    row[c] += grow[c] + dq * im.phi_q[c] + dk * im.phi_k[c] + du * ud[c];
            }
        }
        if (auto gu = tape.grad_of(u); !gu.empty()) matvec_t_add(wd, rows, d, dy, gu);
    });

    return SrwmStep{std::move(output), std::move(weights)};
}

SrwmState srwm_start(Tape& tape, const SrwmSeed& seed) {
    SrwmState s;
    s.heads.reserve(seed.heads.size());
    for (const Tensor& w0 : seed.heads) s.heads.push_back(tape.param(w0));
    return s;
}

Var srwm_layer_step(Tape& tape, SrwmState& state, const Var& x, const SrwmDims& dims) {
    if (x.shape() != Shape{dims.d_model()})
        throw DimensionError("srwm layer input has shape " + shape_str(x.shape()) + ", expected [" +
                             std::to_string(dims.d_model()) + "]");
    if (state.heads.size() != dims.n_heads) throw DimensionError("srwm state head count mismatch");
    std::vector<Var> outs;
    outs.reserve(dims.n_heads);
    for (std::size_t h = 0; h < dims.n_heads; ++h) {
        Var u = dims.n_heads == 1 ? x : tape.slice(x, h * dims.d_in, (h + 1) * dims.d_in);
        SrwmStep step = srwm_step(tape, state.heads[h], u, dims);
        state.heads[h] = std::move(step.weights);
        outs.push_back(std::move(step.output));
    }
    ++state.step;
    return dims.n_heads == 1 ? outs.front() : tape.concat(outs);
}

std::vector<Var> srwm_forward(Tape& tape, const SrwmSeed& seed, std::span<const Var> inputs,
                              SrwmState* final_state) {
    SrwmState state = srwm_start(tape, seed);
    std::vector<Var> outs;
    outs.reserve(inputs.size());
    for (const Var& x : inputs) outs.push_back(srwm_layer_step(tape, state, x, seed.dims));
    if (final_state) *final_state = std::move(state);
    return outs;
}

}  // namespace srwm
