// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/avatar/params.hpp>

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

namespace rnda::train {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const {
        if (!(lr > 0) || !std::isfinite(lr)) throw Error("learning rate must be positive");
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw Error("Adam betas must lie in [0, 1)");
        if (!(eps > 0)) throw Error("Adam epsilon must be positive");
    }
};

/// Adam with bias correction over named parameters. Moments are created on
/// first use of a name.
class Adam {
  public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

    /// Applies one update. When any gradient holds a non-finite value the
    /// step is skipped, nothing changes, and false is returned.
    bool step(ParamStore &params, const std::map<std::string, ad::Tensor> &grads) {
        for (const auto &[name, g] : grads) {
            if (!g.all_finite()) {
                ++skipped_;
                return false;
            }
            if (g.shape() != params.at(name).shape()) throw Error("gradient shape mismatch for " + name);
        }
        ++t_;
        double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (const auto &[name, g] : grads) {
            ad::Tensor &p = params.at(name);
            ad::Tensor &m = moment(m_, name, p.shape());
            ad::Tensor &v = moment(v_, name, p.shape());
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                p[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
            }
        }
        return true;
    }

    std::uint64_t steps() const { return t_; }
    std::uint64_t skipped() const { return skipped_; }
    const AdamConfig &config() const { return cfg_; }

    const std::map<std::string, ad::Tensor> &first_moments() const { return m_; }
    const std::map<std::string, ad::Tensor> &second_moments() const { return v_; }

    /// Restores saved state (checkpoint resume).
    void restore(std::uint64_t steps, std::map<std::string, ad::Tensor> m, std::map<std::string, ad::Tensor> v) {
        t_ = steps;
        m_ = std::move(m);
        v_ = std::move(v);
    }

  private:
    static ad::Tensor &moment(std::map<std::string, ad::Tensor> &store, const std::string &name, const ad::Shape &s) {
        auto it = store.find(name);
        if (it == store.end()) it = store.emplace(name, ad::Tensor(s)).first;
        return it->second;
    }

    AdamConfig cfg_;
    std::uint64_t t_ = 0;
    std::uint64_t skipped_ = 0;
    std::map<std::string, ad::Tensor> m_, v_;
};

} // namespace rnda::train
