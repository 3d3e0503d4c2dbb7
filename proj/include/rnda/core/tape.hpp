// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/core/error.hpp>
#include <rnda/core/tensor.hpp>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rnda::ad {

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
  public:
    Var() = default;
    Var(Tape *tape, std::size_t id) : tape_(tape), id_(id) {}

    bool valid() const noexcept { return tape_ != nullptr; }
    Tape &tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }

    const Tensor &value() const;
    const Shape &shape() const { return value().shape(); }
    std::size_t dim(std::size_t i) const { return value().dim(i); }

  private:
    Tape *tape_ = nullptr;
    std::size_t id_ = 0;
};

using InputValues = std::span<const Tensor *const>;
using InputGrads = std::span<Tensor *const>;
/// Computes a node value from its input values. Must be a pure function of them.
using ForwardFn = std::function<Tensor(InputValues)>;
/// Accumulates (+=) vector-Jacobian products into the non-null input gradient slots.
using BackwardFn =
    std::function<void(const Tensor &grad_out, const Tensor &out, InputValues in, InputGrads grads)>;

/// Multiply-add counter bumped by the dense primitives (matmul, attention, conv).
/// Used to cross-check closed-form FLOP counts.
inline thread_local std::uint64_t g_mac_count = 0;

/// Define-by-run reverse-mode tape. Recording evaluates the forward value
/// immediately; `eval` replays the recorded graph after leaves change.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;

    Var leaf(Tensor value, bool requires_grad = true) {
        Node n;
        n.op = "leaf";
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1);
    }

    Var constant(Tensor value) { return leaf(std::move(value), false); }

    Var record(std::string op, const std::vector<Var> &inputs, ForwardFn forward, BackwardFn backward) {
        Node n;
        n.op = std::move(op);
        n.inputs.reserve(inputs.size());
        for (const Var &v : inputs) {
            if (&v.tape() != this) throw Error("input of " + n.op + " belongs to another tape");
            n.inputs.push_back(v.id());
            n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
        }
        std::vector<const Tensor *> in = input_values(n);
        n.value = forward(in);
        if (!n.value.all_finite()) {
            throw NumericError("non-finite value produced at node " + std::to_string(nodes_.size()) +
                               " (" + n.op + ")");
        }
        n.forward = std::move(forward);
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1);
    }

    [[noreturn]] void shape_error(const std::string &op, const std::string &detail) const {
        throw ShapeError(nodes_.size(), op, detail);
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    const std::string &op(Var v) const { return nodes_.at(v.id()).op; }
    const Tensor &value(Var v) const { return nodes_.at(v.id()).value; }
    bool requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }
    bool stale() const noexcept { return stale_; }

    /// Gradient of the last backward output with respect to `v`; zeros if unreached.
    Tensor grad(Var v) const {
        const Tensor &g = adjoints_.size() > v.id() ? adjoints_[v.id()] : empty_;
        if (g.empty()) return Tensor::zeros_like(nodes_.at(v.id()).value);
        return g;
    }

    /// Replaces a leaf value. The tape is stale until `eval` runs.
    void set_input(Var v, Tensor value) {
        Node &n = nodes_.at(v.id());
        if (n.forward) throw Error("set_input on non-leaf node " + std::to_string(v.id()));
        if (value.shape() != n.value.shape())
            shape_error("set_input", "expected " + to_string(n.value.shape()) + ", got " + to_string(value.shape()));
        n.value = std::move(value);
        stale_ = true;
    }

    /// Re-evaluates every recorded node in recording order.
    void eval() {
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            Node &n = nodes_[i];
            if (!n.forward) continue;
            std::vector<const Tensor *> in = input_values(n);
            Tensor out = n.forward(in);
            if (out.shape() != n.value.shape())
                throw ShapeError(i, n.op, "replay produced " + to_string(out.shape()));
            if (!out.all_finite())
                throw NumericError("non-finite value produced at node " + std::to_string(i) + " (" + n.op + ")");
            n.value = std::move(out);
        }
        stale_ = false;
        adjoints_.clear();
    }

    void backward(Var output, const Tensor &seed) {
        if (stale_) throw Error("backward called before forward evaluation of the current inputs");
        const Node &out = nodes_.at(output.id());
        if (seed.shape() != out.value.shape())
            throw ShapeError(output.id(), "backward", "seed shape " + to_string(seed.shape()) +
                                                           " vs output " + to_string(out.value.shape()));
        adjoints_.assign(nodes_.size(), Tensor());
        adjoints_[output.id()] = seed;
        for (std::size_t i = output.id() + 1; i-- > 0;) {
            Node &n = nodes_[i];
            if (adjoints_[i].empty() || !n.backward || !n.requires_grad) continue;
            std::vector<const Tensor *> in = input_values(n);
            std::vector<Tensor *> grads(n.inputs.size(), nullptr);
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                std::size_t src = n.inputs[k];
                if (!nodes_[src].requires_grad) continue;
                if (adjoints_[src].empty()) adjoints_[src] = Tensor::zeros_like(nodes_[src].value);
                grads[k] = &adjoints_[src];
            }
            n.backward(adjoints_[i], n.value, in, grads);
        }
    }

    void backward(Var output) {
        const Tensor &v = value(output);
        if (v.size() != 1) throw ShapeError(output.id(), "backward", "implicit seed requires a scalar output");
        backward(output, Tensor(v.shape(), 1.0));
    }

  private:
    struct Node {
        std::string op;
        std::vector<std::size_t> inputs;
        Tensor value;
        ForwardFn forward;
        BackwardFn backward;
        bool requires_grad = false;
    };

    std::vector<const Tensor *> input_values(const Node &n) const {
        std::vector<const Tensor *> in;
        in.reserve(n.inputs.size());
        for (std::size_t id : n.inputs) in.push_back(&nodes_[id].value);
        return in;
    }

    std::vector<Node> nodes_;
    std::vector<Tensor> adjoints_;
    Tensor empty_;
    bool stale_ = false;
};

inline const Tensor &Var::value() const { return tape_->value(*this); }

} // namespace rnda::ad
