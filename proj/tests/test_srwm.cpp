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

#include "test_util.hpp"

#include <array>
#include <cmath>

using namespace srwm;
using srwm::testing::random_tensor;

namespace {

// One step written out with plain arrays, row by row.
struct Manual {
    std::vector<double> o, k, q, beta, v, vbar, rates;
    std::vector<double> next;  // row-major
};

Manual manual_step(const Tensor& w, const std::vector<double>& u, std::size_t d_in, std::size_t d_out) {
    const std::size_t rows = d_out + 2 * d_in + 4;
    auto W = [&](std::size_t r, std::size_t c) { return static_cast<double>(w.at(r, c)); };
    std::vector<double> y(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d_in; ++c) y[r] += W(r, c) * u[c];
    Manual m;
    m.o.assign(y.begin(), y.begin() + static_cast<long>(d_out));
    m.k.assign(y.begin() + static_cast<long>(d_out), y.begin() + static_cast<long>(d_out + d_in));
    m.q.assign(y.begin() + static_cast<long>(d_out + d_in), y.begin() + static_cast<long>(d_out + 2 * d_in));
    m.beta.assign(y.begin() + static_cast<long>(d_out + 2 * d_in), y.end());
    auto softmax = [](const std::vector<double>& x) {
        double mx = x[0];
        for (double v : x) mx = std::max(mx, v);
        std::vector<double> e(x.size());
        double z = 0;
        for (std::size_t i = 0; i < x.size(); ++i) z += e[i] = std::exp(x[i] - mx);
        for (double& v : e) v /= z;
        return e;
    };
    const auto pk = softmax(m.k), pq = softmax(m.q);
    m.v.assign(rows, 0.0);
    m.vbar.assign(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d_in; ++c) {
            m.v[r] += W(r, c) * pq[c];
            m.vbar[r] += W(r, c) * pk[c];
        }
    for (double b : m.beta) m.rates.push_back(1.0 / (1.0 + std::exp(-b)));
    const std::array<std::size_t, 5> edge{0, d_out, d_out + d_in, d_out + 2 * d_in, rows};
    m.next.resize(rows * d_in);
    for (std::size_t blk = 0; blk < 4; ++blk)
        for (std::size_t r = edge[blk]; r < edge[blk + 1]; ++r)
            for (std::size_t c = 0; c < d_in; ++c)
                m.next[r * d_in + c] = W(r, c) + m.rates[blk] * (m.v[r] - m.vbar[r]) * pk[c];
    return m;
}

// The same step composed from tape primitives (slice/matmul/softmax/...).
SrwmStep composed_step(Tape& t, const Var& w, const Var& u, const SrwmDims& d) {
    const Var y = t.matmul(w, u);
    const Var k = t.slice(y, d.d_out, d.d_out + d.d_in);
    const Var q = t.slice(y, d.d_out + d.d_in, d.d_out + 2 * d.d_in);
    const Var beta = t.slice(y, d.d_out + 2 * d.d_in, d.rows());
    const Var pk = t.softmax(k), pq = t.softmax(q);
    const Var rates = t.sigmoid(beta);
    std::vector<Var> parts;
    for (std::size_t b = 0; b < 4; ++b) {
        const auto [lo, hi] = d.block_rows(static_cast<SrwmBlock>(b));
        const Var ws = t.slice(w, lo, hi);
        const Var delta = t.sub(t.matmul(ws, pq), t.matmul(ws, pk));
        const Var rate = t.sum(t.slice(rates, b, b + 1));
        const Var scaled = t.mul(delta, t.matmul(t.constant(Tensor(Shape{hi - lo, 1}, Real(1))), t.concat({rate})));
        parts.push_back(t.add(ws, t.outer(scaled, pk)));
    }
    return {t.slice(y, 0, d.d_out), t.concat(parts)};
}

double rank1_residual(const Tensor& d, std::size_t lo, std::size_t hi) {
    // Largest |2x2 minor| relative to the squared max entry.
    double worst = 0, scale = 0;
    const std::size_t cols = d.dim(1);
    for (std::size_t r = lo; r < hi; ++r)
        for (std::size_t c = 0; c < cols; ++c) scale = std::max(scale, std::abs(static_cast<double>(d.at(r, c))));
    if (scale == 0) return 0;
    for (std::size_t r1 = lo; r1 < hi; ++r1)
        for (std::size_t r2 = r1 + 1; r2 < hi; ++r2)
            for (std::size_t c1 = 0; c1 < cols; ++c1)
                for (std::size_t c2 = c1 + 1; c2 < cols; ++c2) {
                    const double m = d.at(r1, c1) * d.at(r2, c2) - d.at(r1, c2) * d.at(r2, c1);
                    worst = std::max(worst, std::abs(m));
                }
    return worst / (scale * scale);
}

}  // namespace

TEST_CASE("srwm_init shapes, determinism and errors") {
    const SrwmSeed s = srwm_init(4, 3, 2, 7);
    REQUIRE(s.heads.size() == 2);
    CHECK(s.heads[0].shape() == Shape{15, 4});
    CHECK(s.heads[0].requires_grad());
    CHECK(bitwise_equal(s.heads[1], srwm_init(4, 3, 2, 7).heads[1]));
    CHECK_FALSE(bitwise_equal(s.heads[0], s.heads[1]));
    CHECK_FALSE(bitwise_equal(s.heads[0], srwm_init(4, 3, 2, 8).heads[0]));
    CHECK_THROWS_AS(srwm_init(0, 3, 1, 0), ConfigError);
    CHECK_THROWS_AS(srwm_init(4, 0, 1, 0), ConfigError);
    CHECK_THROWS_AS(srwm_init(4, 3, 0, 0), ConfigError);
    const SrwmDims d{4, 3, 2};
    CHECK(d.block_rows(SrwmBlock::Out) == std::pair<std::size_t, std::size_t>{0, 3});
    CHECK(d.block_rows(SrwmBlock::Key) == std::pair<std::size_t, std::size_t>{3, 7});
    CHECK(d.block_rows(SrwmBlock::Query) == std::pair<std::size_t, std::size_t>{7, 11});
    CHECK(d.block_rows(SrwmBlock::Rate) == std::pair<std::size_t, std::size_t>{11, 15});
}

TEST_CASE("srwm_init block statistics") {
    // 25 heads x 64 x 64 query entries = 102400 draws.
    const std::size_t d_in = 64;
    const SrwmSeed s = srwm_init(d_in, d_in, 25, 3);
    const SrwmDims& d = s.dims;
    auto block_std = [&](SrwmBlock b) {
        const auto [lo, hi] = d.block_rows(b);
        double sum = 0, sq = 0, n = 0;
        for (const Tensor& w : s.heads)
            for (std::size_t r = lo; r < hi; ++r)
                for (std::size_t c = 0; c < d_in; ++c) {
                    sum += w.at(r, c);
                    sq += w.at(r, c) * w.at(r, c);
                    ++n;
                }
        const double mean = sum / n;
        return std::sqrt(sq / n - mean * mean);
    };
    const double base = 1.0 / std::sqrt(static_cast<double>(d_in));
    CHECK(block_std(SrwmBlock::Query) == doctest::Approx(0.01 * base).epsilon(0.05));
    CHECK(block_std(SrwmBlock::Out) == doctest::Approx(base).epsilon(0.05));
    CHECK(block_std(SrwmBlock::Key) == doctest::Approx(base).epsilon(0.05));
    CHECK(block_std(SrwmBlock::Rate) == doctest::Approx(base).epsilon(0.1));
}

TEST_CASE("step matches a hand-written oracle for d_in=2, d_out=1") {
    // Rows: o | k1 k2 | q1 q2 | b_o b_k b_q b_beta
    const Tensor w = Tensor::matrix(9, 2, {0.5, -0.25,  //
                                           0.3, 0.8,    //
                                           -0.6, 0.1,   //
                                           0.2, -0.4,   //
                                           0.9, 0.05,   //
                                           0.1, 0.2,    //
                                           -0.3, 0.7,   //
                                           0.4, -0.9,   //
                                           1.2, 0.6});
    const std::vector<double> u{0.7, -1.3};
    const SrwmDims d{2, 1, 1};
    const SrwmTrace tr = srwm_trace(w, std::vector<Real>(u.begin(), u.end()), d);
    const Manual m = manual_step(w, u, 2, 1);
    CHECK(tr.o[0] == doctest::Approx(m.o[0]).epsilon(1e-6));
    for (int i = 0; i < 2; ++i) {
        CHECK(tr.k[i] == doctest::Approx(m.k[i]).epsilon(1e-6));
        CHECK(tr.q[i] == doctest::Approx(m.q[i]).epsilon(1e-6));
    }
    for (int i = 0; i < 4; ++i) {
        CHECK(tr.beta[i] == doctest::Approx(m.beta[i]).epsilon(1e-6));
        CHECK(tr.rates[i] == doctest::Approx(m.rates[i]).epsilon(1e-6));
    }
    for (std::size_t i = 0; i < m.next.size(); ++i) CHECK(tr.next[i] == doctest::Approx(m.next[i]).epsilon(1e-6));
    // Hand values: o = 0.5*0.7 + (-0.25)(-1.3) = 0.675.
    CHECK(tr.o[0] == doctest::Approx(0.675).epsilon(1e-12));

    Tape t;
    const SrwmStep st = srwm_step(t, t.constant(w), t.constant(Tensor::vector(std::vector<Real>(u.begin(), u.end()))), d);
    CHECK(st.output.value()[0] == doctest::Approx(0.675).epsilon(1e-12));
    for (std::size_t i = 0; i < m.next.size(); ++i)
        CHECK(st.weights.value()[i] == doctest::Approx(m.next[i]).epsilon(1e-6));
}

TEST_CASE("property suite over 100 random instances") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> dim(1, 6);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t d_in = dim(rng) + 1, d_out = dim(rng);
        const SrwmDims d{d_in, d_out, 1};
        Tensor w = random_tensor({d.rows(), d_in}, rng, 1.0 / std::sqrt(static_cast<double>(d_in)));
        const Tensor u = random_tensor({d_in}, rng, 2.0);
        const SrwmTrace tr = srwm_trace(w, u.data(), d);

        CAPTURE(rep);
        // (c) rates strictly inside (0,1)
        for (Real r : tr.rates) {
            CHECK(r > 0);
            CHECK(r < 1);
        }
        // (b) per-block rank of the change is at most one
        Tensor delta(Shape{d.rows(), d_in});
        for (std::size_t i = 0; i < delta.size(); ++i) delta.mutable_data()[i] = tr.next[i] - w[i];
        for (int b = 0; b < 4; ++b) {
            const auto [lo, hi] = d.block_rows(static_cast<SrwmBlock>(b));
            CHECK(rank1_residual(delta, lo, hi) < 1e-10);
        }
        // Fixed-point identity: W_t phi(k) = W_{t-1} phi(k) + rate (v - vbar) |phi(k)|^2 per block
        double pk2 = 0;
        for (Real p : tr.phi_k) pk2 += p * p;
        for (int b = 0; b < 4; ++b) {
            const auto [lo, hi] = d.block_rows(static_cast<SrwmBlock>(b));
            for (std::size_t r = lo; r < hi; ++r) {
                double lhs = 0;
                for (std::size_t c = 0; c < d_in; ++c) lhs += tr.next.at(r, c) * tr.phi_k[c];
                const double rhs = tr.vbar[r] + tr.rates[b] * (tr.v[r] - tr.vbar[r]) * pk2;
                CHECK(std::abs(lhs - rhs) < 1e-5);
            }
        }
        // (a) q == k gives no change at all
        Tensor tied = w.clone();
        const auto [klo, khi] = d.block_rows(SrwmBlock::Key);
        const auto [qlo, qhi] = d.block_rows(SrwmBlock::Query);
        for (std::size_t r = 0; r < d_in; ++r)
            for (std::size_t c = 0; c < d_in; ++c) tied.mutable_data()[(qlo + r) * d_in + c] = tied.at(klo + r, c);
        (void)khi;
        (void)qhi;
        CHECK(bitwise_equal(srwm_trace(tied, u.data(), d).next, tied));
    }
}

TEST_CASE("prefix replay: states depend only on W0 and the prefix") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 100; ++rep) {
        const SrwmSeed seed = srwm_init(3, 3, 2, static_cast<std::uint64_t>(rep));
        std::vector<Var> xs;
        Tape t(Tape::Mode::Inference);
        for (int i = 0; i < 12; ++i) xs.push_back(t.constant(random_tensor({6}, rng)));
        SrwmState full = srwm_start(t, seed);
        std::vector<SrwmState> snaps;
        for (const Var& x : xs) {
            srwm_layer_step(t, full, x, seed.dims);
            snaps.push_back(full);
        }
        const std::size_t cut = static_cast<std::size_t>(rep % 12);
        SrwmState replay;
        srwm_forward(t, seed, std::span<const Var>(xs.data(), cut + 1), &replay);
        CHECK(replay.step == cut + 1);
        for (std::size_t h = 0; h < 2; ++h) CHECK(bitwise_equal(replay.heads[h].value(), snaps[cut].heads[h].value()));
    }
}

TEST_CASE("srwm_forward edge cases and multi-head split") {
    std::mt19937_64 rng(3);
    Tape t;
    SUBCASE("empty sequence keeps W0") {
        const SrwmSeed seed = srwm_init(2, 2, 2, 1);
        SrwmState st;
        const auto out = srwm_forward(t, seed, {}, &st);
        CHECK(out.empty());
        CHECK(st.step == 0);
        for (std::size_t h = 0; h < 2; ++h) CHECK(bitwise_equal(st.heads[h].value(), seed.heads[h]));
    }
    SUBCASE("one head is repeated srwm_step") {
        const SrwmSeed seed = srwm_init(3, 2, 1, 5);
        std::vector<Var> xs;
        for (int i = 0; i < 5; ++i) xs.push_back(t.constant(random_tensor({3}, rng)));
        const auto out = srwm_forward(t, seed, xs);
        Var w = t.constant(seed.heads[0]);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const SrwmStep s = srwm_step(t, w, xs[i], seed.dims);
            CHECK(bitwise_equal(s.output.value(), out[i].value()));
            w = s.weights;
        }
    }
    SUBCASE("two heads equal two single-head runs") {
        const SrwmSeed seed = srwm_init(3, 2, 2, 6);
        std::vector<Var> xs, left, right;
        for (int i = 0; i < 6; ++i) {
            xs.push_back(t.constant(random_tensor({6}, rng)));
            left.push_back(t.slice(xs.back(), 0, 3));
            right.push_back(t.slice(xs.back(), 3, 6));
        }
        const auto out = srwm_forward(t, seed, xs);
        SrwmSeed s0{SrwmDims{3, 2, 1}, {seed.heads[0]}}, s1{SrwmDims{3, 2, 1}, {seed.heads[1]}};
        const auto a = srwm_forward(t, s0, left), b = srwm_forward(t, s1, right);
        for (std::size_t i = 0; i < xs.size(); ++i) CHECK(bitwise_equal(out[i].value(), t.concat({a[i], b[i]}).value()));
    }
    SUBCASE("input size mismatch") {
        const SrwmSeed seed = srwm_init(3, 2, 2, 6);
        SrwmState st = srwm_start(t, seed);
        CHECK_THROWS_AS(srwm_layer_step(t, st, t.constant(Tensor(Shape{5})), seed.dims), DimensionError);
        CHECK_THROWS_AS(srwm_step(t, t.constant(seed.heads[0]), t.constant(Tensor(Shape{2})), seed.dims), DimensionError);
    }
}

TEST_CASE("fused step agrees with the primitive composition") {
    std::mt19937_64 rng(8);
    for (int rep = 0; rep < 20; ++rep) {
        const SrwmDims d{3, 2, 1};
        Tensor w = random_tensor({d.rows(), 3}, rng, 0.6).set_requires_grad(true);
        Tensor u0 = random_tensor({3}, rng).set_requires_grad(true);
        const Tensor target = random_tensor({d.rows(), 3}, rng);
        // Three chained steps, loss reads outputs and the final weights.
        auto loss = [&](Tape& t, bool fused) {
            Var wv = t.param(w);
            Var u = t.param(u0);
            std::vector<Var> terms;
            for (int s = 0; s < 3; ++s) {
                const SrwmStep st = fused ? srwm_step(t, wv, u, d) : composed_step(t, wv, u, d);
                terms.push_back(t.sum(t.mul(st.output, st.output)));
                wv = st.weights;
                u = t.add(u, t.scale(t.concat({st.output, t.slice(st.output, 0, 1)}), 0.5));
            }
            terms.push_back(t.sum(t.mul(wv, t.constant(target))));
            return t.sum(t.concat(terms));
        };
        Tape tf, tc;
        const Var lf = loss(tf, true), lc = loss(tc, false);
        CHECK(lf.value().item() == doctest::Approx(lc.value().item()).epsilon(1e-12));
        const Gradients gf = tf.backward(lf), gc = tc.backward(lc);
        for (const Tensor* p : {&w, &u0})
            for (std::size_t i = 0; i < p->size(); ++i)
                CHECK(gf.at(*p)[i] == doctest::Approx(gc.at(*p)[i]).epsilon(1e-9));
    }
}

TEST_CASE("two-layer SRWM over 8 steps: gradients vs finite differences") {
    const SrwmSeed l1 = srwm_init(4, 4, 2, 21), l2 = srwm_init(4, 2, 2, 22);
    std::mt19937_64 rng(4);
    std::vector<Tensor> inputs;
    for (int i = 0; i < 8; ++i) inputs.push_back(random_tensor({8}, rng));
    auto loss = [&](Tape& t) {
        std::vector<Var> xs;
        for (const Tensor& x : inputs) xs.push_back(t.constant(x));
        const auto h = srwm_forward(t, l1, xs);
        const auto out = srwm_forward(t, l2, h);
        // Only the last prediction: gradients must flow through the updates.
        return t.cross_entropy(out.back(), 1);
    };
    Tape tape;
    const Gradients g = tape.backward(loss(tape));
    double worst = 0;
    for (const SrwmSeed* s : {&l1, &l2})
        for (Tensor w : s->heads) {
            const Tensor ga = g.at(w);
            auto d = w.mutable_data();
            double err = 0, scale = 0, gnorm = 0;
            for (std::size_t i = 0; i < d.size(); ++i) {
                const Real keep = d[i];
                Tape ti(Tape::Mode::Inference);
                d[i] = keep + 1e-5;
                const double up = loss(ti).value().item();
                d[i] = keep - 1e-5;
                const double dn = loss(ti).value().item();
                d[i] = keep;
                const double num = (up - dn) / 2e-5;
                err = std::max(err, std::abs(num - ga[i]));
                scale = std::max({scale, std::abs(num), std::abs(static_cast<double>(ga[i]))});
                gnorm += ga[i] * ga[i];
            }
            CHECK(gnorm > 0);
            worst = std::max(worst, err / scale);
        }
    CHECK(worst < 1e-4);
}

TEST_CASE("sequences never share fast weights") {
    const SrwmSeed seed = srwm_init(3, 3, 1, 2);
    std::mt19937_64 rng(6);
    std::vector<Tensor> a, b;
    for (int i = 0; i < 7; ++i) {
        a.push_back(random_tensor({3}, rng));
        b.push_back(random_tensor({3}, rng));
    }
    Tape t(Tape::Mode::Inference);
    SrwmState sa = srwm_start(t, seed), sb = srwm_start(t, seed);
    std::vector<Tensor> ia, ib;
    for (int i = 0; i < 7; ++i) {
        ia.push_back(srwm_layer_step(t, sa, t.constant(a[i]), seed.dims).value());
        ib.push_back(srwm_layer_step(t, sb, t.constant(b[i]), seed.dims).value());
    }
    std::vector<Var> xa, xb;
    for (int i = 0; i < 7; ++i) {
        xa.push_back(t.constant(a[i]));
        xb.push_back(t.constant(b[i]));
    }
    const auto ra = srwm_forward(t, seed, xa), rb = srwm_forward(t, seed, xb);
    for (int i = 0; i < 7; ++i) {
        CHECK(bitwise_equal(ia[i], ra[i].value()));
        CHECK(bitwise_equal(ib[i], rb[i].value()));
    }
    // W0 itself is never written.
    CHECK(bitwise_equal(seed.heads[0], srwm_init(3, 3, 1, 2).heads[0]));
}
