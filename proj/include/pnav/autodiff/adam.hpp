#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "pnav/autodiff/array.hpp"

namespace pnav::ad {

struct AdamState {
    std::uint64_t step = 0;
    std::vector<Array> m;
    std::vector<Array> v;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    explicit AdamState(double learning_rate, double b1 = 0.9, double b2 = 0.999, double e = 1e-8)
        : lr(learning_rate), beta1(b1), beta2(b2), eps(e) {}
};

/// One bias-corrected Adam update, in place. Moments are created on the first call.
inline void adam_step(AdamState& s, std::span<Array> params, std::span<const Array> grads) {
    if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
    if (s.m.empty()) {
        for (const auto& p : params) {
            s.m.emplace_back(p.shape(), 0.0);
            s.v.emplace_back(p.shape(), 0.0);
        }
    }
    if (s.m.size() != params.size()) throw ShapeError("adam_step: state does not match parameter list");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].shape() != grads[i].shape() || params[i].shape() != s.m[i].shape())
            throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i));

    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].data();
        const auto g = grads[i].data();
        auto m = s.m[i].data();
        auto v = s.v[i].data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = s.beta1 * m[j] + (1.0 - s.beta1) * g[j];
            v[j] = s.beta2 * v[j] + (1.0 - s.beta2) * g[j] * g[j];
            const double mh = m[j] / c1;
            const double vh = v[j] / c2;
            p[j] -= s.lr * mh / (std::sqrt(vh) + s.eps);
        }
    }
}

}  // namespace pnav::ad
