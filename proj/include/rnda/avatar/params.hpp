// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/core/tape.hpp>

#include <functional>
#include <map>
#include <string>
#include <string_view>

namespace rnda {

/// Named parameter tensors. Iteration order is lexicographic by name, which
/// keeps optimizer updates and checkpoints deterministic.
class ParamStore {
  public:
    void add(const std::string &name, ad::Tensor value) {
        if (!values_.emplace(name, std::move(value)).second) throw Error("duplicate parameter " + name);
    }
    bool contains(const std::string &name) const { return values_.count(name) != 0; }
    ad::Tensor &at(const std::string &name) {
        auto it = values_.find(name);
        if (it == values_.end()) throw Error("unknown parameter " + name);
        return it->second;
    }
    const ad::Tensor &at(const std::string &name) const {
        auto it = values_.find(name);
        if (it == values_.end()) throw Error("unknown parameter " + name);
        return it->second;
    }
    /// Removes every parameter whose name starts with `prefix`; returns the count.
    std::size_t erase_prefix(std::string_view prefix) {
        std::size_t n = 0;
        for (auto it = values_.begin(); it != values_.end();) {
            if (std::string_view(it->first).substr(0, prefix.size()) == prefix) {
                it = values_.erase(it);
                ++n;
            } else {
                ++it;
            }
        }
        return n;
    }
    bool has_prefix(std::string_view prefix) const {
        for (const auto &[k, v] : values_)
            if (std::string_view(k).substr(0, prefix.size()) == prefix) return true;
        return false;
    }
    std::size_t count() const { return values_.size(); }
    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto &[k, v] : values_) n += v.size();
        return n;
    }
    std::map<std::string, ad::Tensor> &all() { return values_; }
    const std::map<std::string, ad::Tensor> &all() const { return values_; }

    friend bool operator==(const ParamStore &, const ParamStore &) = default;

  private:
    std::map<std::string, ad::Tensor> values_;
};

/// Leaves of a ParamStore recorded on one tape. `trainable` decides which
/// leaves require gradients; the rest are constants.
class Binding {
  public:
    using Filter = std::function<bool(const std::string &)>;

    Binding(ad::Tape &tape, const ParamStore &store, const Filter &trainable = {}) : tape_(&tape) {
        for (const auto &[name, value] : store.all()) {
            bool grad = trainable ? trainable(name) : true;
            vars_.emplace(name, grad ? tape.leaf(value, true) : tape.constant(value));
        }
    }

    ad::Var operator()(const std::string &name) const {
        auto it = vars_.find(name);
        if (it == vars_.end()) throw Error("parameter not bound: " + name);
        return it->second;
    }
    bool contains(const std::string &name) const { return vars_.count(name) != 0; }
    /// Rebinds one parameter to another node (used to probe gradients).
    void set(const std::string &name, ad::Var v) { vars_.at(name) = v; }
    ad::Tape &tape() const { return *tape_; }
    const std::map<std::string, ad::Var> &vars() const { return vars_; }

    /// Gradients of the last backward pass, keyed by parameter name.
    std::map<std::string, ad::Tensor> gradients() const {
        std::map<std::string, ad::Tensor> g;
        for (const auto &[name, v] : vars_)
            if (tape_->requires_grad(v)) g.emplace(name, tape_->grad(v));
        return g;
    }

  private:
    ad::Tape *tape_;
    std::map<std::string, ad::Var> vars_;
};

/// True when `name` starts with any of the given prefixes.
inline bool has_any_prefix(const std::string &name, std::initializer_list<std::string_view> prefixes) {
    for (auto p : prefixes)
        if (std::string_view(name).substr(0, p.size()) == p) return true;
    return false;
}

} // namespace rnda
