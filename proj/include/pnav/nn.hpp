#pragma once

// Dense layers over the autodiff tape, plus a tape-free forward pass with the
// same arithmetic order for inference.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "pnav/autodiff.hpp"

namespace pnav::nn {

enum class Activation { Linear, Tanh };

/// Indices of one layer's weight [in,out] and bias [1,out] inside a ParamList.
struct Layer {
    std::size_t w = 0;
    std::size_t b = 0;
    Activation act = Activation::Linear;
};

/// Appends a Xavier-uniform initialised layer scaled by `gain`; biases start at zero.
template <class Rng>
Layer add_dense(ad::ParamList& params, const std::string& name, std::size_t in, std::size_t out, Activation act,
                Rng& rng, double gain = 1.0) {
    const double limit = gain * std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    ad::Array w({in, out});
    for (double& v : w.data()) v = u(rng);
    Layer l{params.size(), params.size() + 1, act};
    params.push_back({name + ".w", std::move(w)});
    params.push_back({name + ".b", ad::Array({1, out})});
    return l;
}

/// Records every parameter on the tape; trainable ones as params, others as constants.
inline std::vector<ad::Var> record(ad::Tape& tape, const ad::ParamList& params, bool trainable) {
    std::vector<ad::Var> vars;
    vars.reserve(params.size());
    for (const auto& p : params) vars.push_back(trainable ? tape.param(p.value) : tape.constant(p.value));
    return vars;
}

inline ad::Var apply(const std::vector<ad::Var>& vars, const std::vector<Layer>& layers, ad::Var x) {
    for (const Layer& l : layers) {
        x = ad::matmul(x, vars[l.w]) + vars[l.b];
        if (l.act == Activation::Tanh) x = ad::tanh(x);
    }
    return x;
}

/// Tape-free forward; bit-identical to `apply` on the same inputs.
inline ad::Array apply(const ad::ParamList& params, const std::vector<Layer>& layers, ad::Array x) {
    for (const Layer& l : layers) {
        const ad::Array& w = params[l.w].value;
        const ad::Array& b = params[l.b].value;
        const std::size_t rows = x.dim(0), in = x.dim(1), out = w.dim(1);
        if (w.dim(0) != in) throw ad::ShapeError("nn::apply: input width " + std::to_string(in) + " vs layer " +
                                                 ad::shape_str(w.shape()));
        ad::Array y({rows, out});
        ad::detail::gemm_nn(x.data().data(), w.data().data(), y.data().data(), rows, in, out);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < out; ++c) {
                double v = y[r * out + c] + b[c];
                if (l.act == Activation::Tanh) v = std::tanh(v);
                y[r * out + c] = v;
            }
        x = std::move(y);
    }
    return x;
}

/// Gradients of `vars` in ParamList order.
inline std::vector<ad::Array> collect(const ad::Gradients& g, const std::vector<ad::Var>& vars) {
    std::vector<ad::Array> out;
    out.reserve(vars.size());
    for (const auto& v : vars) out.push_back(g[v]);
    return out;
}

/// Adam over a ParamList in place.
inline void adam_update(ad::AdamState& state, ad::ParamList& params, const std::vector<ad::Array>& grads) {
    std::vector<ad::Array> values;
    values.reserve(params.size());
    for (auto& p : params) values.push_back(std::move(p.value));
    ad::adam_step(state, values, grads);
    for (std::size_t i = 0; i < params.size(); ++i) params[i].value = std::move(values[i]);
}

/// target <- tau * online + (1 - tau) * target, element-wise.
inline void soft_update(ad::ParamList& target, const ad::ParamList& online, double tau) {
    if (target.size() != online.size()) throw ad::ShapeError("soft_update: parameter count mismatch");
    for (std::size_t i = 0; i < target.size(); ++i) {
        auto t = target[i].value.data();
        const auto o = online[i].value.data();
        if (t.size() != o.size()) throw ad::ShapeError("soft_update: shape mismatch at " + target[i].name);
        if (tau == 1.0) {
            std::copy(o.begin(), o.end(), t.begin());
            continue;
        }
        for (std::size_t k = 0; k < t.size(); ++k) t[k] = tau * o[k] + (1.0 - tau) * t[k];
    }
}

}  // namespace pnav::nn
