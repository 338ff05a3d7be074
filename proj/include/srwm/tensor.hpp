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

// Dense tensors and a tape for reverse-mode differentiation.
//
// A Tensor is an immutable-by-convention value with shared storage. Graph
// construction happens through a Tape: every op takes Vars (a Tensor plus
// an optional node id on the tape) and returns a new Var. Only Vars that
// depend on a tracked parameter get a node, so pure-constant subgraphs and
// inference-mode tapes record nothing.
//
// Gradients live on the tape, never on the parameter tensors. Several tapes
// can therefore read the same parameters from different threads.

#include "srwm/common.hpp"

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace srwm {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
public:
    Tensor();
    explicit Tensor(Shape shape, Real fill = Real(0));
    Tensor(Shape shape, std::vector<Real> values);

    static Tensor scalar(Real v);
    static Tensor vector(std::initializer_list<Real> values);
    static Tensor vector(std::vector<Real> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<Real> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const { return storage_->size(); }
    bool empty() const { return storage_->empty(); }

    std::span<const Real> data() const { return *storage_; }
    // Writes through to every copy sharing this storage.
    std::span<Real> mutable_data() { return *storage_; }

    Real operator[](std::size_t i) const { return (*storage_)[i]; }
    Real at(std::size_t row, std::size_t col) const;
    Real item() const;

    bool requires_grad() const { return requires_grad_; }
    Tensor& set_requires_grad(bool on = true) {
        requires_grad_ = on;
        return *this;
    }

    // Identity of the underlying storage; parameters are keyed by it.
    const void* id() const { return storage_.get(); }

    Tensor clone() const;
    bool all_finite() const;

private:
    Shape shape_;
    std::shared_ptr<std::vector<Real>> storage_;
    bool requires_grad_ = false;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);

// A value flowing through a tape. node() < 0 means no gradient is tracked.
class Var {
public:
    Var() = default;
    Var(Tensor value, int node) : value_(std::move(value)), node_(node) {}

    const Tensor& value() const { return value_; }
    const Shape& shape() const { return value_.shape(); }
    std::size_t size() const { return value_.size(); }
    int node() const { return node_; }
    bool tracked() const { return node_ >= 0; }

private:
    Tensor value_;
    int node_ = -1;
};

// Gradients of a loss with respect to every parameter seen by the tape.
class Gradients {
public:
    // Throws LookupError if the tensor was never registered on the tape.
    const Tensor& at(const Tensor& param) const;
    bool contains(const Tensor& param) const;
    std::size_t size() const { return grads_.size(); }

    void insert(const Tensor& param, Tensor grad);

private:
    std::unordered_map<const void*, Tensor> grads_;
};

class Tape {
public:
    enum class Mode { Record, Inference };

    // out_grad: gradient of the loss w.r.t. this node's value.
    using BackwardFn = std::function<void(std::span<const Real> out_grad)>;

    explicit Tape(Mode mode = Mode::Record);
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return mode_ == Mode::Record; }
    std::size_t num_nodes() const { return nodes_.size(); }

    Var constant(Tensor value) const { return Var(std::move(value), -1); }
    // Registers a trainable tensor (requires_grad) as a leaf, once per storage.
    Var param(const Tensor& value);
    // Forces a leaf for any tensor, e.g. to differentiate w.r.t. an input.
    Var watch(const Tensor& value);

    // Extension point for fused ops. The node is created only when one of
    // the inputs is tracked; fn receives the output gradient and must push
    // input gradients through grad_of().
    Var record(Tensor value, std::initializer_list<const Var*> inputs, BackwardFn fn);
    Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);
    // Zero-initialised gradient accumulator of v; empty span if v is untracked.
    std::span<Real> grad_of(const Var& v);

    Gradients backward(const Var& loss);
    void reset();

    // Primitives.
    Var matmul(const Var& a, const Var& b);
    Var outer(const Var& u, const Var& v);
    Var transpose(const Var& a);
    Var add(const Var& a, const Var& b);
    Var sub(const Var& a, const Var& b);
    Var mul(const Var& a, const Var& b);
    Var scale(const Var& a, Real s);
    Var sigmoid(const Var& a);
    Var relu(const Var& a);
    Var softmax(const Var& v);
    Var cross_entropy(const Var& logits, std::size_t target);
    Var sum(const Var& a);
    Var mean(const Var& a);
    // Sample variance over all elements (population form, divides by n).
    Var variance(const Var& a);
    // (v - mean(v)) / sqrt(var(v) + eps) over a vector.
    Var standardize(const Var& v, Real eps);
    // Along axis 0: vectors join end to end, matrices stack rows, scalars
    // count as length-1 vectors.
    Var concat(std::span<const Var> parts);
    Var concat(std::initializer_list<Var> parts);
    // Half-open range [begin, end) along axis 0.
    Var slice(const Var& a, std::size_t begin, std::size_t end);

private:
    struct Node {
        std::size_t size = 0;
        BackwardFn fn;
        std::vector<Real> grad;
    };

    Var make_leaf(const Tensor& value);
    void check_finite(const Tensor& t, const char* op) const;

    Mode mode_;
    std::vector<Node> nodes_;
    std::vector<std::pair<Tensor, int>> leaves_;
    std::unordered_map<const void*, int> leaf_index_;
    bool backward_done_ = false;
};

}  // namespace srwm
