// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/avatar/params.hpp>
#include <rnda/core/ops.hpp>
#include <rnda/core/rng.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace rnda {

/// Fully connected network: tanh on hidden layers, linear output.
/// Parameters live in a ParamStore as `<prefix>.w<i>` (in x out) and
/// `<prefix>.b<i>` (1 x out).
struct Mlp {
    std::string prefix;
    std::vector<std::size_t> widths; ///< input, hidden..., output

    std::size_t layers() const { return widths.size() - 1; }
    std::size_t input_width() const { return widths.front(); }
    std::size_t output_width() const { return widths.back(); }

    std::string weight(std::size_t i) const { return prefix + ".w" + std::to_string(i); }
    std::string bias(std::size_t i) const { return prefix + ".b" + std::to_string(i); }

    /// Glorot-uniform weights, zero biases. `output_gain` scales the last layer.
    void init(ParamStore &store, Rng &rng, double output_gain = 1.0) const {
        for (std::size_t i = 0; i < layers(); ++i) {
            std::size_t in = widths[i], out = widths[i + 1];
            double lim = std::sqrt(6.0 / static_cast<double>(in + out));
            if (i + 1 == layers()) lim *= output_gain;
            ad::Tensor w({in, out});
            for (double &v : w.values()) v = rng.uniform(-lim, lim);
            store.add(weight(i), std::move(w));
            store.add(bias(i), ad::Tensor({1, out}));
        }
    }

    /// All weights and biases zero.
    void init_zero(ParamStore &store) const {
        for (std::size_t i = 0; i < layers(); ++i) {
            store.add(weight(i), ad::Tensor({widths[i], widths[i + 1]}));
            store.add(bias(i), ad::Tensor({1, widths[i + 1]}));
        }
    }

    void set_output_bias(ParamStore &store, const std::vector<double> &b) const {
        ad::Tensor &t = store.at(bias(layers() - 1));
        if (b.size() != t.size()) throw Error("output bias length mismatch for " + prefix);
        for (std::size_t i = 0; i < b.size(); ++i) t[i] = b[i];
    }

    ad::Var forward(const Binding &p, ad::Var x) const {
        if (x.shape().size() != 2 || x.dim(1) != input_width())
            x.tape().shape_error(prefix, "input " + ad::to_string(x.shape()) + ", expected width " +
                                             std::to_string(input_width()));
        ad::Var h = x;
        for (std::size_t i = 0; i < layers(); ++i) {
            h = ad::add(ad::matmul(h, p(weight(i))), p(bias(i)));
            if (i + 1 < layers()) h = ad::tanh(h);
        }
        return h;
    }

    /// Multiply-adds of one forward pass over `rows` inputs.
    std::uint64_t macs(std::size_t rows) const {
        std::uint64_t m = 0;
        for (std::size_t i = 0; i < layers(); ++i) m += static_cast<std::uint64_t>(rows) * widths[i] * widths[i + 1];
        return m;
    }
};

} // namespace rnda
