#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "pnav/autodiff/tape.hpp"

namespace pnav::ad {

struct GradCheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    bool passed = false;
};

/// Builds a scalar on the given tape from differentiable inputs.
using TapeFunction = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Compares tape gradients with central differences at `point`.
/// Relative error per coordinate is |g - fd| / max(|g|, |fd|, floor).
inline GradCheckReport grad_check(const TapeFunction& f, const std::vector<Array>& point, double h, double tol,
                                  double floor = 1e-6) {
    auto eval = [&](const std::vector<Array>& x) {
        Tape t;
        std::vector<Var> vars;
        for (const auto& a : x) vars.push_back(t.constant(a));
        return f(t, vars).value().item();
    };

    Tape tape;
    std::vector<Var> vars;
    for (const auto& a : point) vars.push_back(tape.param(a));
    const Var root = f(tape, vars);
    const Gradients grads = tape.backward(root);

    GradCheckReport rep;
    std::vector<Array> x = point;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const Array g = grads[vars[i]];
        for (std::size_t j = 0; j < point[i].size(); ++j) {
            const double orig = x[i][j];
            x[i][j] = orig + h;
            const double fp = eval(x);
            x[i][j] = orig - h;
            const double fm = eval(x);
            x[i][j] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double abs_err = std::abs(g[j] - fd);
            const double rel = abs_err / std::max({std::abs(g[j]), std::abs(fd), floor});
            rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
            if (rel > rep.max_rel_error) {
                rep.max_rel_error = rel;
                rep.worst_input = i;
                rep.worst_index = j;
            }
        }
    }
    rep.passed = rep.max_rel_error < tol;
    return rep;
}

}  // namespace pnav::ad
