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

#include "srwm/tensor.hpp"

#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace srwm {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

namespace {

void check_extents(const Shape& shape) {
    for (std::size_t e : shape)
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
}

}  // namespace

Tensor::Tensor() : storage_(std::make_shared<std::vector<Real>>()) {}

Tensor::Tensor(Shape shape, Real fill) : shape_(std::move(shape)) {
    check_extents(shape_);
    storage_ = std::make_shared<std::vector<Real>>(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<Real> values) : shape_(std::move(shape)) {
    check_extents(shape_);
    if (values.size() != shape_size(shape_))
        throw DimensionError("tensor of shape " + shape_str(shape_) + " given " +
                             std::to_string(values.size()) + " values");
    storage_ = std::make_shared<std::vector<Real>>(std::move(values));
}

Tensor Tensor::scalar(Real v) { return Tensor(Shape{}, std::vector<Real>{v}); }

Tensor Tensor::vector(std::initializer_list<Real> values) {
    return Tensor(Shape{values.size()}, std::vector<Real>(values));
}

Tensor Tensor::vector(std::vector<Real> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<Real> values) {
    return Tensor(Shape{rows, cols}, std::vector<Real>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size())
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
    return shape_[axis];
}

Real Tensor::at(std::size_t row, std::size_t col) const {
    if (rank() != 2 || row >= shape_[0] || col >= shape_[1])
        throw IndexError("at(" + std::to_string(row) + "," + std::to_string(col) + ") on " + shape_str(shape_));
    return (*storage_)[row * shape_[1] + col];
}

Real Tensor::item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
    return (*storage_)[0];
}

Tensor Tensor::clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.storage_ = std::make_shared<std::vector<Real>>(*storage_);
    t.requires_grad_ = requires_grad_;
    return t;
}

bool Tensor::all_finite() const {
    return std::all_of(storage_->begin(), storage_->end(), [](Real v) { return std::isfinite(v); });
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(Real)) == 0;
}

// ---------------------------------------------------------------------------
// Gradients

const Tensor& Gradients::at(const Tensor& param) const {
    auto it = grads_.find(param.id());
    if (it == grads_.end()) throw LookupError("tensor was not registered on the tape");
    return it->second;
}

bool Gradients::contains(const Tensor& param) const { return grads_.count(param.id()) != 0; }

void Gradients::insert(const Tensor& param, Tensor grad) { grads_[param.id()] = std::move(grad); }

// ---------------------------------------------------------------------------
// Tape bookkeeping

Tape::Tape(Mode mode) : mode_(mode) {}

Var Tape::make_leaf(const Tensor& value) {
    if (!recording()) return Var(value, -1);
    auto it = leaf_index_.find(value.id());
    if (it != leaf_index_.end()) return Var(value, it->second);
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{value.size(), nullptr, {}});
    leaves_.emplace_back(value, id);
    leaf_index_.emplace(value.id(), id);
    return Var(value, id);
}

Var Tape::param(const Tensor& value) {
    if (!value.requires_grad()) return Var(value, -1);
    return make_leaf(value);
}

Var Tape::watch(const Tensor& value) { return make_leaf(value); }

void Tape::check_finite(const Tensor& t, const char* op) const {
#ifndef NDEBUG
    if (!t.all_finite()) throw NumericError(std::string("non-finite output from ") + op);
#else
    (void)t;
    (void)op;
#endif
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
    check_finite(value, "op");
    if (!recording()) return Var(std::move(value), -1);
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.tracked(); });
    if (!any) return Var(std::move(value), -1);
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{value.size(), std::move(fn), {}});
    return Var(std::move(value), id);
}

Var Tape::record(Tensor value, std::initializer_list<const Var*> inputs, BackwardFn fn) {
    check_finite(value, "op");
    if (!recording()) return Var(std::move(value), -1);
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var* v) { return v->tracked(); });
    if (!any) return Var(std::move(value), -1);
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{value.size(), std::move(fn), {}});
    return Var(std::move(value), id);
}

std::span<Real> Tape::grad_of(const Var& v) {
    if (!v.tracked()) return {};
    Node& n = nodes_[static_cast<std::size_t>(v.node())];
    if (n.grad.empty()) n.grad.assign(n.size, Real(0));
    return n.grad;
}

Gradients Tape::backward(const Var& loss) {
    if (backward_done_) throw ContractError("backward called twice without reset");
    if (loss.size() != 1) throw ContractError("backward needs a scalar loss, got " + shape_str(loss.shape()));
    if (loss.tracked() && static_cast<std::size_t>(loss.node()) >= nodes_.size())
        throw LookupError("loss was not produced on this tape");
    backward_done_ = true;

    if (loss.tracked()) {
        grad_of(loss)[0] = Real(1);
        for (std::size_t i = static_cast<std::size_t>(loss.node()) + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.grad.empty() || !n.fn) continue;
            n.fn(n.grad);
        }
    }

    Gradients out;
    for (const auto& [tensor, id] : leaves_) {
        const auto& g = nodes_[static_cast<std::size_t>(id)].grad;
        out.insert(tensor, g.empty() ? Tensor(tensor.shape()) : Tensor(tensor.shape(), g));
    }
    return out;
}

void Tape::reset() {
    nodes_.clear();
    leaves_.clear();
    leaf_index_.clear();
    backward_done_ = false;
}

// ---------------------------------------------------------------------------
// Primitives

namespace {

void axpy(std::span<Real> y, std::span<const Real> x, Real a = Real(1)) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
}

void require_vector(const Var& v, const char* op) {
    if (v.value().rank() != 1) throw DimensionError(std::string(op) + ": expected a vector, got " + shape_str(v.shape()));
}

}  // namespace

Var Tape::matmul(const Var& a, const Var& b) {
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rank() != 2 || (B.rank() != 1 && B.rank() != 2))
        throw DimensionError("matmul: unsupported ranks " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
    const std::size_t m = A.dim(0), k = A.dim(1);
    if (B.dim(0) != k)
        throw DimensionError("matmul: inner extents differ " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
    const std::size_t n = B.rank() == 2 ? B.dim(1) : 1;

    Tensor out(B.rank() == 2 ? Shape{m, n} : Shape{m});
    auto o = out.mutable_data();
    auto ad = A.data();
    auto bd = B.data();
    if (n == 1) {
        for (std::size_t i = 0; i < m; ++i) o[i] = kernels::dot(ad.data() + i * k, bd.data(), k);
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            const Real* arow = ad.data() + i * k;
            Real* orow = o.data() + i * n;
            for (std::size_t p = 0; p < k; ++p) kernels::axpy(orow, bd.data() + p * n, arow[p], n);
        }
    }
    return record(std::move(out), {&a, &b}, [this, a, b, m, k, n](std::span<const Real> g) {
        auto ad = a.value().data();
        auto bd = b.value().data();
        if (auto ga = grad_of(a); !ga.empty()) {
            // dA = G B^T
            for (std::size_t i = 0; i < m; ++i) {
                if (n == 1) {
                    kernels::axpy(ga.data() + i * k, bd.data(), g[i], k);
                    continue;
                }
                for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += kernels::dot(g.data() + i * n, bd.data() + p * n, n);
            }
        }
        if (auto gb = grad_of(b); !gb.empty()) {
            // dB = A^T G
            for (std::size_t i = 0; i < m; ++i) {
                if (n == 1) {
                    kernels::axpy(gb.data(), ad.data() + i * k, g[i], k);
                    continue;
                }
                for (std::size_t p = 0; p < k; ++p) kernels::axpy(gb.data() + p * n, g.data() + i * n, ad[i * k + p], n);
            }
        }
    });
}

Var Tape::outer(const Var& u, const Var& v) {
    require_vector(u, "outer");
    require_vector(v, "outer");
    const std::size_t m = u.size(), n = v.size();
    Tensor out(Shape{m, n});
    auto o = out.mutable_data();
    auto ud = u.value().data();
    auto vd = v.value().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) o[i * n + j] = ud[i] * vd[j];
    return record(std::move(out), {&u, &v}, [this, u, v, m, n](std::span<const Real> g) {
        auto ud = u.value().data();
        auto vd = v.value().data();
        if (auto gu = grad_of(u); !gu.empty())
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gu[i] += g[i * n + j] * vd[j];
        if (auto gv = grad_of(v); !gv.empty())
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j] * ud[i];
    });
}

Var Tape::transpose(const Var& a) {
    if (a.value().rank() != 2) throw DimensionError("transpose: expected a matrix, got " + shape_str(a.shape()));
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    Tensor out(Shape{c, r});
    auto o = out.mutable_data();
    auto ad = a.value().data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) o[j * r + i] = ad[i * c + j];
    return record(std::move(out), {&a}, [this, a, r, c](std::span<const Real> g) {
        auto ga = grad_of(a);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    });
}

Var Tape::add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value().clone().set_requires_grad(false);
    axpy(out.mutable_data(), b.value().data());
    return record(std::move(out), {&a, &b}, [this, a, b](std::span<const Real> g) {
        if (auto ga = grad_of(a); !ga.empty()) axpy(ga, g);
        if (auto gb = grad_of(b); !gb.empty()) axpy(gb, g);
    });
}

Var Tape::sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.value().clone().set_requires_grad(false);
    axpy(out.mutable_data(), b.value().data(), Real(-1));
    return record(std::move(out), {&a, &b}, [this, a, b](std::span<const Real> g) {
        if (auto ga = grad_of(a); !ga.empty()) axpy(ga, g);
        if (auto gb = grad_of(b); !gb.empty()) axpy(gb, g, Real(-1));
    });
}

Var Tape::mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    auto o = out.mutable_data();
    auto ad = a.value().data();
    auto bd = b.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[i] * bd[i];
    return record(std::move(out), {&a, &b}, [this, a, b](std::span<const Real> g) {
        auto ad = a.value().data();
        auto bd = b.value().data();
        if (auto ga = grad_of(a); !ga.empty())
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
        if (auto gb = grad_of(b); !gb.empty())
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
    });
}

Var Tape::scale(const Var& a, Real s) {
    Tensor out(a.shape());
    auto o = out.mutable_data();
    auto ad = a.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = s * ad[i];
    return record(std::move(out), {&a}, [this, a, s](std::span<const Real> g) { axpy(grad_of(a), g, s); });
}

Var Tape::sigmoid(const Var& a) {
    Tensor out(a.shape());
    auto o = out.mutable_data();
    auto ad = a.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        // Branch on sign so exp never overflows.
        const Real x = ad[i];
        if (x >= 0) {
            o[i] = Real(1) / (Real(1) + std::exp(-x));
        } else {
            const Real e = std::exp(x);
            o[i] = e / (Real(1) + e);
        }
    }
    Tensor y = out;
    return record(std::move(out), {&a}, [this, a, y](std::span<const Real> g) {
        auto ga = grad_of(a);
        auto yd = y.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yd[i] * (Real(1) - yd[i]);
    });
}

Var Tape::relu(const Var& a) {
    Tensor out(a.shape());
    auto o = out.mutable_data();
    auto ad = a.value().data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = ad[i] > 0 ? ad[i] : Real(0);
    return record(std::move(out), {&a}, [this, a](std::span<const Real> g) {
        auto ga = grad_of(a);
        auto ad = a.value().data();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (ad[i] > 0) ga[i] += g[i];
    });
}

Var Tape::softmax(const Var& v) {
    require_vector(v, "softmax");
    auto vd = v.value().data();
    const Real mx = *std::max_element(vd.begin(), vd.end());
    Tensor out(v.shape());
    auto o = out.mutable_data();
    Real z = 0;
    for (std::size_t i = 0; i < o.size(); ++i) z += (o[i] = std::exp(vd[i] - mx));
    for (Real& x : o) x /= z;
    Tensor y = out;
    return record(std::move(out), {&v}, [this, v, y](std::span<const Real> g) {
        auto gv = grad_of(v);
        auto yd = y.data();
        Real dot = 0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * yd[i];
        for (std::size_t i = 0; i < g.size(); ++i) gv[i] += yd[i] * (g[i] - dot);
    });
}

Var Tape::cross_entropy(const Var& logits, std::size_t target) {
    require_vector(logits, "cross_entropy");
    if (target >= logits.size())
        throw IndexError("cross_entropy: target " + std::to_string(target) + " out of range for " +
                         std::to_string(logits.size()) + " classes");
    auto ld = logits.value().data();
    const Real mx = *std::max_element(ld.begin(), ld.end());
    std::vector<Real> p(ld.size());
    Real z = 0;
    for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(ld[i] - mx));
    for (Real& x : p) x /= z;
    const Real loss = std::log(z) + mx - ld[target];
    return record(Tensor::scalar(loss), {&logits},
                  [this, logits, p = std::move(p), target](std::span<const Real> g) {
                      auto gl = grad_of(logits);
                      for (std::size_t i = 0; i < p.size(); ++i)
                          gl[i] += g[0] * (p[i] - (i == target ? Real(1) : Real(0)));
                  });
}

Var Tape::sum(const Var& a) {
    auto ad = a.value().data();
    const Real s = std::accumulate(ad.begin(), ad.end(), Real(0));
    return record(Tensor::scalar(s), {&a}, [this, a](std::span<const Real> g) {
        for (Real& x : grad_of(a)) x += g[0];
    });
}

Var Tape::mean(const Var& a) {
    auto ad = a.value().data();
    const Real n = static_cast<Real>(ad.size());
    const Real s = std::accumulate(ad.begin(), ad.end(), Real(0)) / n;
    return record(Tensor::scalar(s), {&a}, [this, a, n](std::span<const Real> g) {
        for (Real& x : grad_of(a)) x += g[0] / n;
    });
}

Var Tape::variance(const Var& a) {
    auto ad = a.value().data();
    const Real n = static_cast<Real>(ad.size());
    const Real mu = std::accumulate(ad.begin(), ad.end(), Real(0)) / n;
    Real var = 0;
    for (Real x : ad) var += (x - mu) * (x - mu);
    var /= n;
    return record(Tensor::scalar(var), {&a}, [this, a, mu, n](std::span<const Real> g) {
        auto ga = grad_of(a);
        auto ad = a.value().data();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * Real(2) * (ad[i] - mu) / n;
    });
}

Var Tape::standardize(const Var& v, Real eps) {
    require_vector(v, "standardize");
    auto vd = v.value().data();
    const std::size_t n = vd.size();
    const Real mu = std::accumulate(vd.begin(), vd.end(), Real(0)) / static_cast<Real>(n);
    Real var = 0;
    for (Real x : vd) var += (x - mu) * (x - mu);
    var /= static_cast<Real>(n);
    const Real inv = Real(1) / std::sqrt(var + eps);
    Tensor out(v.shape());
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < n; ++i) o[i] = (vd[i] - mu) * inv;
    Tensor y = out;
    return record(std::move(out), {&v}, [this, v, y, inv, n](std::span<const Real> g) {
        auto gv = grad_of(v);
        auto yd = y.data();
        Real gmean = 0, gy = 0;
        for (std::size_t i = 0; i < n; ++i) {
            gmean += g[i];
            gy += g[i] * yd[i];
        }
        gmean /= static_cast<Real>(n);
        gy /= static_cast<Real>(n);
        for (std::size_t i = 0; i < n; ++i) gv[i] += inv * (g[i] - gmean - yd[i] * gy);
    });
}

Var Tape::concat(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    // Scalars join as length-1 vectors.
    auto as_rows = [](const Shape& s) { return s.empty() ? Shape{1} : s; };
    const Shape first = as_rows(parts[0].shape());
    std::size_t rows = 0;
    for (const Var& p : parts) {
        const Shape s = as_rows(p.shape());
        if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1))
            throw DimensionError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
        rows += s[0];
    }
    Shape shape = first;
    shape[0] = rows;
    std::vector<Real> values;
    values.reserve(shape_size(shape));
    for (const Var& p : parts) values.insert(values.end(), p.value().data().begin(), p.value().data().end());
    std::vector<Var> inputs(parts.begin(), parts.end());
    return record(Tensor(std::move(shape), std::move(values)), parts, [this, inputs](std::span<const Real> g) {
        std::size_t off = 0;
        for (const Var& p : inputs) {
            if (auto gp = grad_of(p); !gp.empty()) axpy(gp, g.subspan(off, p.size()));
            off += p.size();
        }
    });
}

Var Tape::concat(std::initializer_list<Var> parts) {
    return concat(std::span<const Var>(parts.begin(), parts.size()));
}

Var Tape::slice(const Var& a, std::size_t begin, std::size_t end) {
    const Shape& s = a.shape();
    if (s.empty()) throw DimensionError("slice: scalar input");
    if (begin >= end || end > s[0])
        throw IndexError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                         shape_str(s));
    const std::size_t stride = shape_size(s) / s[0];
    Shape shape = s;
    shape[0] = end - begin;
    auto ad = a.value().data();
    std::vector<Real> values(ad.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                             ad.begin() + static_cast<std::ptrdiff_t>(end * stride));
    const std::size_t off = begin * stride;
    return record(Tensor(std::move(shape), std::move(values)), {&a}, [this, a, off](std::span<const Real> g) {
        axpy(grad_of(a).subspan(off, g.size()), g);
    });
}

}  // namespace srwm
