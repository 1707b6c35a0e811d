#pragma once

// The shared residual objective of RL and IL. For a goal state, current state
// and action a = (dtheta, dt, dz):
//   L = l1 * |q(goal.theta - s.theta) - q(dtheta)|^2
//     + l2 * |(goal.t - s.t) - dt|^2
//     + l3 * |(goal.z - s.z) - dz|^2
// where q() is the canonical quaternion of a wrapped Euler triple. The RL
// reward is -L and the imitation loss is L; both go through il_loss below.

#include <array>
#include <span>
#include <vector>

#include "pnav/autodiff.hpp"
#include "pnav/geometry.hpp"
#include "pnav/policy.hpp"

namespace pnav {

struct LossWeights {
    double lambda1 = 10.0;
    double lambda2 = 5.0;
    double lambda3 = 1.0;
    friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

/// Exact residual to the goal: wrapped Euler difference, raw translation and latent differences.
inline Action residual_action(const PoseState& goal, const PoseState& s) {
    Action a;
    const EulerPose d = euler_difference(goal.theta, s.theta);
    a.dtheta = d.as_array();
    a.dt = {goal.t.tx - s.t.tx, goal.t.ty - s.t.ty, goal.t.scale - s.t.scale};
    for (std::size_t i = 0; i < kLatentDim; ++i) a.dz[i] = goal.z[i] - s.z[i];
    return a;
}

/// Expert label: the residual clamped to the action bounds.
inline Action expert_action(const PoseState& goal, const PoseState& s) { return clamp_action(residual_action(goal, s)); }

/// Loss of `pred` against residual terms `residual`; the latent term is dropped when use_latent is off.
inline double il_loss(const Action& residual, const Action& pred, const LossWeights& w, bool use_latent = true) {
    const auto qr = euler_to_quaternion(EulerPose(residual.dtheta[0], residual.dtheta[1], residual.dtheta[2])).as_array();
    const auto qp = euler_to_quaternion(EulerPose(pred.dtheta[0], pred.dtheta[1], pred.dtheta[2])).as_array();
    double rot = 0.0, tr = 0.0, lat = 0.0;
    for (std::size_t i = 0; i < 4; ++i) rot += (qr[i] - qp[i]) * (qr[i] - qp[i]);
    for (std::size_t i = 0; i < 3; ++i) tr += (residual.dt[i] - pred.dt[i]) * (residual.dt[i] - pred.dt[i]);
    for (std::size_t i = 0; i < kLatentDim; ++i) lat += (residual.dz[i] - pred.dz[i]) * (residual.dz[i] - pred.dz[i]);
    double loss = w.lambda1 * rot + w.lambda2 * tr;
    if (use_latent) loss += w.lambda3 * lat;
    return loss;
}

inline double reward(const PoseState& goal, const PoseState& s, const Action& a, const LossWeights& w = {}) {
    return -il_loss(residual_action(goal, s), a, w, true);
}

namespace detail {

/// Sign that makes a quaternion canonical (w >= 0, else first nonzero component positive).
inline double canonical_sign(double w, double x, double y, double z) {
    if (w != 0.0) return w > 0.0 ? 1.0 : -1.0;
    if (x != 0.0) return x > 0.0 ? 1.0 : -1.0;
    if (y != 0.0) return y > 0.0 ? 1.0 : -1.0;
    return z >= 0.0 ? 1.0 : -1.0;
}

}  // namespace detail

/// Canonical quaternions [B,4] of Euler rows [B,3] on the tape (q = qz * qx * qy).
inline ad::Var euler_to_quaternion(const ad::Var& angles) {
    using namespace ad;
    const std::size_t b = angles.shape()[0];
    const Var half = angles * 0.5;
    const Var ha = slice(half, {0, 0}, {b, 1}), he = slice(half, {0, 1}, {b, 2}), hi = slice(half, {0, 2}, {b, 3});
    const Var ca = cos(ha), sa = sin(ha), ce = cos(he), se = sin(he), ci = cos(hi), si = sin(hi);
    const Var aw = ci * ce, ax = ci * se, ay = si * se, az = si * ce;  // qz * qx
    const Var q = concat({aw * ca - ay * sa, ax * ca - az * sa, aw * sa + ay * ca, ax * sa + az * ca}, 1);
    Array sign({b, 1});
    const auto v = q.value().data();
    for (std::size_t r = 0; r < b; ++r)
        sign[r] = pnav::detail::canonical_sign(v[4 * r], v[4 * r + 1], v[4 * r + 2], v[4 * r + 3]);
    return q * angles.tape().constant(std::move(sign));
}

/// Batch mean of il_loss on the tape. `pred` is [B,22] actions, `residuals` [B,22] labels.
inline ad::Var il_loss(const ad::Var& pred, const ad::Array& residuals, const LossWeights& w, bool use_latent = true) {
    using namespace ad;
    const std::size_t b = pred.shape()[0];
    if (residuals.shape() != Shape{b, kActionDim}) throw ShapeError("il_loss: label batch must be [B,22]");
    Array q_label({b, 4});
    for (std::size_t r = 0; r < b; ++r) {
        const auto q = pnav::euler_to_quaternion(
                           EulerPose(residuals[r * kActionDim], residuals[r * kActionDim + 1], residuals[r * kActionDim + 2]))
                           .as_array();
        for (std::size_t i = 0; i < 4; ++i) q_label[4 * r + i] = q[i];
    }
    Tape& tape = pred.tape();
    const Var labels = tape.constant(residuals);
    const Var q_pred = euler_to_quaternion(slice(pred, {0, 0}, {b, 3}));
    Var loss = sum(square(tape.constant(std::move(q_label)) - q_pred)) * w.lambda1;
    loss = loss + sum(square(slice(labels, {0, 3}, {b, 6}) - slice(pred, {0, 3}, {b, 6}))) * w.lambda2;
    if (use_latent) loss = loss + sum(square(slice(labels, {0, 6}, {b, kActionDim}) - slice(pred, {0, 6}, {b, kActionDim}))) * w.lambda3;
    return loss / static_cast<double>(b);
}

/// bounds * tanh(raw) on the tape, [B,22].
inline ad::Var squash_actions(const ad::Var& raw) {
    ad::Array b({1, kActionDim});
    for (std::size_t i = 0; i < kActionDim; ++i) b[i] = action_bounds()[i];
    return ad::tanh(raw) * raw.tape().constant(std::move(b));
}

}  // namespace pnav
