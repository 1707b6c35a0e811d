#pragma once

// Reverse-mode automatic differentiation over dense Arrays.
//
// A Tape records primitive applications in execution order; every node only
// references earlier nodes, so a reverse sweep over node ids is a valid
// topological order for backpropagation. Gradients accumulate by summation
// into freshly zeroed buffers.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <utility>
#include <vector>

#include "pnav/autodiff/array.hpp"

namespace pnav::ad {

enum class Op : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    AddConst,
    MulConst,
    MatMul,
    Sum,
    SumAxis,
    Mean,
    Relu,
    Tanh,
    Exp,
    Log,
    Square,
    Sqrt,
    Sigmoid,
    Sin,
    Cos,
    Broadcast,
    Reshape,
    Slice,
    Concat,
    AvgPool2x2,
    Clip,
    Transpose,
};

class Tape;

/// Handle to a node on a Tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

    [[nodiscard]] Tape& tape() const { return *tape_; }
    [[nodiscard]] std::uint32_t id() const { return id_; }
    [[nodiscard]] const Array& value() const;
    [[nodiscard]] const Shape& shape() const { return value().shape(); }
    [[nodiscard]] std::size_t size() const { return value().size(); }

private:
    Tape* tape_ = nullptr;
    std::uint32_t id_ = 0;
};

namespace detail {

/// Iterates an output shape while tracking two strided input offsets.
/// Strides of zero implement broadcasting.
template <class F>
void for_each_strided(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb,
                      std::size_t base_a, std::size_t base_b, F&& f) {
    const std::size_t total = shape_size(out);
    if (total == 0) return;
    const std::size_t r = out.size();
    if (r == 0) {
        f(std::size_t{0}, base_a, base_b);
        return;
    }
    const std::size_t inner = out[r - 1];
    const std::size_t ia = sa[r - 1], ib = sb[r - 1];
    std::vector<std::size_t> idx(r, 0);
    std::size_t oa = base_a, ob = base_b;
    for (std::size_t o = 0; o < total; o += inner) {
        for (std::size_t j = 0; j < inner; ++j) f(o + j, oa + j * ia, ob + j * ib);
        for (std::size_t d = r - 1; d-- > 0;) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < out[d]) break;
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

inline std::vector<std::size_t> contiguous_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t d = s.size(); d-- > 1;) st[d - 1] = st[d] * s[d];
    return st;
}

/// Strides of `in` viewed as broadcast to `out` (numpy rules, left-padded).
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    const std::size_t r = out.size();
    std::vector<std::size_t> st(r, 0);
    const auto cs = contiguous_strides(in);
    const std::size_t off = r - in.size();
    for (std::size_t d = 0; d < in.size(); ++d) {
        if (in[d] == out[d + off]) st[d + off] = (in[d] == 1) ? 0 : cs[d];
        else if (in[d] == 1) st[d + off] = 0;
        else throw ShapeError("broadcast: " + shape_str(in) + " incompatible with " + shape_str(out));
    }
    return st;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError("broadcast: incompatible shapes " + shape_str(a) + " and " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

using v8d = double __attribute__((vector_size(64)));

inline v8d load8(const double* p) {
    v8d v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline void store8(double* p, v8d v) { std::memcpy(p, &v, sizeof v); }

/// C[M,N] += A[M,K] * B[K,N]. A 4 x 16 tile of C is held in registers while p
/// runs over K, and the 16-column panel of B is reused by every row block.
/// Every C element accumulates in p order.
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    constexpr std::size_t R = 4;
    const std::size_t m4 = m - m % R, n16 = n - n % 16;
    for (std::size_t j = 0; j < n16; j += 16) {
        for (std::size_t i = 0; i < m4; i += R) {
            v8d acc[R][2];
            for (std::size_t r = 0; r < R; ++r) {
                acc[r][0] = load8(c + (i + r) * n + j);
                acc[r][1] = load8(c + (i + r) * n + j + 8);
            }
            for (std::size_t p = 0; p < k; ++p) {
                const v8d b0 = load8(b + p * n + j), b1 = load8(b + p * n + j + 8);
                for (std::size_t r = 0; r < R; ++r) {
                    const double av = a[(i + r) * k + p];
                    acc[r][0] += av * b0;
                    acc[r][1] += av * b1;
                }
            }
            for (std::size_t r = 0; r < R; ++r) {
                store8(c + (i + r) * n + j, acc[r][0]);
                store8(c + (i + r) * n + j + 8, acc[r][1]);
            }
        }
    }
    // Remainder columns for the row blocks, then remainder rows.
    for (std::size_t i = 0; i < m4; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            for (std::size_t j = n16; j < n; ++j) c[i * n + j] += av * b[p * n + j];
        }
    for (std::size_t i = m4; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            for (std::size_t j = 0; j < n; ++j) c[i * n + j] += av * b[p * n + j];
        }
}

/// C[M,N] += A[M,K] * B[N,K]^T. Row dot products with eight interleaved partial sums.
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    const std::size_t k8 = k - k % 8;
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double part[8] = {0, 0, 0, 0, 0, 0, 0, 0};
            for (std::size_t p = 0; p < k8; p += 8)
                for (std::size_t l = 0; l < 8; ++l) part[l] += arow[p + l] * brow[p + l];
            double s = ((part[0] + part[4]) + (part[1] + part[5])) + ((part[2] + part[6]) + (part[3] + part[7]));
            for (std::size_t p = k8; p < k; ++p) s += arow[p] * brow[p];
            c[i * n + j] += s;
        }
    }
}

inline std::vector<double> transpose2d(std::span<const double> x, std::size_t rows, std::size_t cols) {
    std::vector<double> t(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) t[c * rows + r] = x[r * cols + c];
    return t;
}

}  // namespace detail

/// Gradients of a scalar root with respect to every node that requires grad.
class Gradients {
public:
    Gradients(const Tape* tape, std::vector<Array> grads) : tape_(tape), grads_(std::move(grads)) {}

    /// Gradient for `v`; zeros when the root does not depend on it.
    [[nodiscard]] Array operator[](const Var& v) const;

private:
    const Tape* tape_;
    std::vector<Array> grads_;
};

class Tape {
public:
    struct Node {
        Op op = Op::Leaf;
        std::vector<std::uint32_t> in;
        Array value;
        std::vector<std::size_t> ip;  // integer parameters (axis, slice begins)
        double c0 = 0.0;
        double c1 = 0.0;
        bool requires_grad = false;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Differentiable leaf.
    Var param(Array value) { return push(Op::Leaf, {}, std::move(value), true); }
    /// Non-differentiable leaf.
    Var constant(Array value) { return push(Op::Leaf, {}, std::move(value), false); }
    Var constant(double v) { return constant(Array::scalar(v)); }

    [[nodiscard]] const Node& node(std::uint32_t id) const { return nodes_[id]; }
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

    Var push(Op op, std::vector<std::uint32_t> in, Array value, bool leaf_grad = false, std::vector<std::size_t> ip = {},
             double c0 = 0.0, double c1 = 0.0) {
        if (!value.all_finite()) throw NumericalError("non-finite value produced by primitive " + op_name(op));
        Node n;
        n.op = op;
        n.requires_grad = leaf_grad;
        for (auto i : in) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
        n.in = std::move(in);
        n.value = std::move(value);
        n.ip = std::move(ip);
        n.c0 = c0;
        n.c1 = c1;
        nodes_.push_back(std::move(n));
        return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
    }

    /// Reverse sweep from a scalar root.
    Gradients backward(const Var& root) const {
        if (root.value().size() != 1) throw ShapeError("backward: root must be scalar, got " + shape_str(root.shape()));
        std::vector<Array> g(nodes_.size());
        g[root.id()] = Array(root.shape(), 1.0);
        for (std::size_t id = root.id() + 1; id-- > 0;) {
            const Node& n = nodes_[id];
            if (g[id].size() == 0 || !n.requires_grad || n.op == Op::Leaf) continue;
            propagate(n, g[id], g);
            // Intermediate gradients are not needed after propagation.
            if (n.op != Op::Leaf) g[id] = Array();
        }
        return Gradients(this, std::move(g));
    }

    static std::string op_name(Op op) {
        static const char* names[] = {"leaf", "add", "sub", "mul", "div", "neg", "add_const", "mul_const",
                                      "matmul", "sum", "sum_axis", "mean", "relu", "tanh", "exp", "log",
                                      "square", "sqrt", "sigmoid", "sin", "cos", "broadcast", "reshape", "slice",
                                      "concat", "avgpool2x2", "clip", "transpose"};
        return names[static_cast<std::size_t>(op)];
    }

private:
    Array& acc(std::vector<Array>& g, std::uint32_t id) const {
        if (g[id].size() == 0) g[id] = Array(nodes_[id].value.shape(), 0.0);
        return g[id];
    }

    bool wants(std::uint32_t id) const { return nodes_[id].requires_grad; }

    /// Sums `grad` (shaped like out) down to the shape of input node `id` through a broadcast.
    template <class F>
    void reduce_into(std::vector<Array>& g, std::uint32_t id, const Shape& out, F&& value_at) const {
        Array& dst = acc(g, id);
        const auto st = detail::broadcast_strides(nodes_[id].value.shape(), out);
        const std::vector<std::size_t> zero(out.size(), 0);
        auto d = dst.data();
        detail::for_each_strided(out, st, zero, 0, 0,
                                 [&](std::size_t o, std::size_t ia, std::size_t) { d[ia] += value_at(o); });
    }

    void propagate(const Node& n, const Array& gout, std::vector<Array>& g) const {
        const auto go = gout.data();
        const Shape& os = n.value.shape();
        auto unary = [&](auto&& dfdx) {
            const std::uint32_t a = n.in[0];
            if (!wants(a)) return;
            auto ga = acc(g, a).data();
            const auto x = nodes_[a].value.data();
            const auto y = n.value.data();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * dfdx(x[i], y[i]);
        };
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Add:
            case Op::Sub: {
                const double sign = n.op == Op::Add ? 1.0 : -1.0;
                if (wants(n.in[0])) reduce_into(g, n.in[0], os, [&](std::size_t o) { return go[o]; });
                if (wants(n.in[1])) reduce_into(g, n.in[1], os, [&](std::size_t o) { return sign * go[o]; });
                break;
            }
            case Op::Mul:
            case Op::Div: {
                const Array& av = nodes_[n.in[0]].value;
                const Array& bv = nodes_[n.in[1]].value;
                const auto sa = detail::broadcast_strides(av.shape(), os);
                const auto sb = detail::broadcast_strides(bv.shape(), os);
                const auto ad = av.data();
                const auto bd = bv.data();
                const bool div = n.op == Op::Div;
                if (wants(n.in[0])) {
                    auto ga = acc(g, n.in[0]).data();
                    detail::for_each_strided(os, sa, sb, 0, 0, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                        ga[ia] += div ? go[o] / bd[ib] : go[o] * bd[ib];
                    });
                }
                if (wants(n.in[1])) {
                    auto gb = acc(g, n.in[1]).data();
                    detail::for_each_strided(os, sa, sb, 0, 0, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                        gb[ib] += div ? -go[o] * ad[ia] / (bd[ib] * bd[ib]) : go[o] * ad[ia];
                    });
                }
                break;
            }
            case Op::Neg:
                unary([](double, double) { return -1.0; });
                break;
            case Op::AddConst:
                unary([](double, double) { return 1.0; });
                break;
            case Op::MulConst: {
                const double c = n.c0;
                unary([c](double, double) { return c; });
                break;
            }
            case Op::MatMul: {
                const Array& av = nodes_[n.in[0]].value;
                const Array& bv = nodes_[n.in[1]].value;
                const std::size_t m = av.dim(0), k = av.dim(1), nn = bv.dim(1);
                if (wants(n.in[0])) {
                    // dA = dC * B^T
                    detail::gemm_nt(go.data(), bv.data().data(), acc(g, n.in[0]).data().data(), m, nn, k);
                }
                if (wants(n.in[1])) {
                    // dB = A^T * dC
                    const auto at = detail::transpose2d(av.data(), m, k);
                    detail::gemm_nn(at.data(), go.data(), acc(g, n.in[1]).data().data(), k, m, nn);
                }
                break;
            }
            case Op::Sum:
            case Op::Mean: {
                const std::uint32_t a = n.in[0];
                if (!wants(a)) break;
                auto ga = acc(g, a).data();
                const double s = n.op == Op::Mean ? go[0] / static_cast<double>(ga.size()) : go[0];
                for (double& v : ga) v += s;
                break;
            }
            case Op::SumAxis:
            case Op::Broadcast: {
                // Both are broadcasts in reverse: sum_axis spreads, broadcast reduces.
                const std::uint32_t a = n.in[0];
                if (!wants(a)) break;
                if (n.op == Op::Broadcast) {
                    reduce_into(g, a, os, [&](std::size_t o) { return go[o]; });
                } else {
                    auto ga = acc(g, a).data();
                    const Shape& is = nodes_[a].value.shape();
                    const auto st = detail::broadcast_strides(os, is);
                    const std::vector<std::size_t> zero(is.size(), 0);
                    detail::for_each_strided(is, st, zero, 0, 0,
                                             [&](std::size_t i, std::size_t io, std::size_t) { ga[i] += go[io]; });
                }
                break;
            }
            case Op::Relu:
                unary([](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
                break;
            case Op::Tanh:
                unary([](double, double y) { return 1.0 - y * y; });
                break;
            case Op::Exp:
                unary([](double, double y) { return y; });
                break;
            case Op::Log:
                unary([](double x, double) { return 1.0 / x; });
                break;
            case Op::Square:
                unary([](double x, double) { return 2.0 * x; });
                break;
            case Op::Sqrt:
                unary([](double, double y) { return 0.5 / y; });
                break;
            case Op::Sigmoid:
                unary([](double, double y) { return y * (1.0 - y); });
                break;
            case Op::Sin:
                unary([](double x, double) { return std::cos(x); });
                break;
            case Op::Cos:
                unary([](double x, double) { return -std::sin(x); });
                break;
            case Op::Clip: {
                const double lo = n.c0, hi = n.c1;
                unary([lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
                break;
            }
            case Op::Reshape:
                unary([](double, double) { return 1.0; });
                break;
            case Op::Transpose: {
                const std::uint32_t a = n.in[0];
                if (!wants(a)) break;
                auto ga = acc(g, a).data();
                const std::size_t rows = os[0], cols = os[1];
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) ga[c * rows + r] += go[r * cols + c];
                break;
            }
            case Op::Slice: {
                const std::uint32_t a = n.in[0];
                if (!wants(a)) break;
                auto ga = acc(g, a).data();
                const auto st = detail::contiguous_strides(nodes_[a].value.shape());
                std::size_t base = 0;
                for (std::size_t d = 0; d < st.size(); ++d) base += n.ip[d] * st[d];
                const std::vector<std::size_t> zero(os.size(), 0);
                detail::for_each_strided(os, st, zero, base, 0,
                                         [&](std::size_t o, std::size_t ia, std::size_t) { ga[ia] += go[o]; });
                break;
            }
            case Op::Concat: {
                const std::size_t axis = n.ip[0];
                std::size_t outer = 1;
                for (std::size_t d = 0; d < axis; ++d) outer *= os[d];
                const std::size_t row = gout.size() / outer;
                std::size_t offset = 0;
                for (auto a : n.in) {
                    const std::size_t chunk = nodes_[a].value.size() / outer;
                    if (wants(a)) {
                        auto ga = acc(g, a).data();
                        for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t j = 0; j < chunk; ++j) ga[o * chunk + j] += go[o * row + offset + j];
                    }
                    offset += chunk;
                }
                break;
            }
            case Op::AvgPool2x2: {
                const std::uint32_t a = n.in[0];
                if (!wants(a)) break;
                auto ga = acc(g, a).data();
                const Shape& is = nodes_[a].value.shape();
                const std::size_t h = is[is.size() - 2], w = is[is.size() - 1];
                const std::size_t planes = ga.size() / (h * w);
                const std::size_t oh = h / 2, ow = w / 2;
                for (std::size_t p = 0; p < planes; ++p)
                    for (std::size_t y = 0; y < h; ++y)
                        for (std::size_t x = 0; x < w; ++x)
                            ga[p * h * w + y * w + x] += 0.25 * go[p * oh * ow + (y / 2) * ow + x / 2];
                break;
            }
        }
    }

    std::vector<Node> nodes_;
};

inline const Array& Var::value() const { return tape_->node(id_).value; }

inline Array Gradients::operator[](const Var& v) const {
    if (v.id() < grads_.size() && grads_[v.id()].size() != 0) return grads_[v.id()];
    return Array(tape_->node(v.id()).value.shape(), 0.0);
}

// ---------------------------------------------------------------------------
// Primitives

namespace detail {

template <class F>
Array binary_forward(const Array& a, const Array& b, F&& f) {
    if (a.shape() == b.shape()) {
        Array out(a.shape());
        auto o = out.data();
        const auto x = a.data();
        const auto y = b.data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i], y[i]);
        return out;
    }
    const Shape os = broadcast_shape(a.shape(), b.shape());
    Array out(os);
    auto o = out.data();
    const auto x = a.data();
    const auto y = b.data();
    for_each_strided(os, broadcast_strides(a.shape(), os), broadcast_strides(b.shape(), os), 0, 0,
                     [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = f(x[ia], y[ib]); });
    return out;
}

template <class F>
Array unary_forward(const Array& a, F&& f) {
    Array out(a.shape());
    auto o = out.data();
    const auto x = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i]);
    return out;
}

inline void same_tape(const Var& a, const Var& b) {
    if (&a.tape() != &b.tape()) throw std::invalid_argument("operands recorded on different tapes");
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
    detail::same_tape(a, b);
    return a.tape().push(Op::Add, {a.id(), b.id()},
                         detail::binary_forward(a.value(), b.value(), [](double x, double y) { return x + y; }));
}
inline Var sub(const Var& a, const Var& b) {
    detail::same_tape(a, b);
    return a.tape().push(Op::Sub, {a.id(), b.id()},
                         detail::binary_forward(a.value(), b.value(), [](double x, double y) { return x - y; }));
}
inline Var mul(const Var& a, const Var& b) {
    detail::same_tape(a, b);
    return a.tape().push(Op::Mul, {a.id(), b.id()},
                         detail::binary_forward(a.value(), b.value(), [](double x, double y) { return x * y; }));
}
inline Var div(const Var& a, const Var& b) {
    detail::same_tape(a, b);
    return a.tape().push(Op::Div, {a.id(), b.id()},
                         detail::binary_forward(a.value(), b.value(), [](double x, double y) { return x / y; }));
}
inline Var neg(const Var& a) {
    return a.tape().push(Op::Neg, {a.id()}, detail::unary_forward(a.value(), [](double x) { return -x; }));
}
inline Var add_const(const Var& a, double c) {
    return a.tape().push(Op::AddConst, {a.id()}, detail::unary_forward(a.value(), [c](double x) { return x + c; }),
                         false, {}, c);
}
inline Var mul_const(const Var& a, double c) {
    return a.tape().push(Op::MulConst, {a.id()}, detail::unary_forward(a.value(), [c](double x) { return x * c; }),
                         false, {}, c);
}

inline Var matmul(const Var& a, const Var& b) {
    detail::same_tape(a, b);
    const Array& av = a.value();
    const Array& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
        throw ShapeError("matmul: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    Array out(Shape{av.dim(0), bv.dim(1)});
    detail::gemm_nn(av.data().data(), bv.data().data(), out.data().data(), av.dim(0), av.dim(1), bv.dim(1));
    return a.tape().push(Op::MatMul, {a.id(), b.id()}, std::move(out));
}

inline Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return a.tape().push(Op::Sum, {a.id()}, Array::scalar(s));
}

/// Sum over one axis, keeping it with extent 1.
inline Var sum(const Var& a, std::size_t axis) {
    const Shape& is = a.shape();
    if (axis >= is.size()) throw ShapeError("sum: axis out of range");
    Shape os = is;
    os[axis] = 1;
    Array out(os);
    auto o = out.data();
    const auto x = a.value().data();
    const auto st = detail::broadcast_strides(os, is);
    const std::vector<std::size_t> zero(is.size(), 0);
    detail::for_each_strided(is, st, zero, 0, 0, [&](std::size_t i, std::size_t io, std::size_t) { o[io] += x[i]; });
    return a.tape().push(Op::SumAxis, {a.id()}, std::move(out), false, {axis});
}

inline Var mean(const Var& a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return a.tape().push(Op::Mean, {a.id()}, Array::scalar(s / static_cast<double>(a.size())));
}

inline Var relu(const Var& a) {
    return a.tape().push(Op::Relu, {a.id()}, detail::unary_forward(a.value(), [](double x) { return x > 0 ? x : 0.0; }));
}
inline Var tanh(const Var& a) {
    return a.tape().push(Op::Tanh, {a.id()}, detail::unary_forward(a.value(), [](double x) { return std::tanh(x); }));
}
inline Var exp(const Var& a) {
    return a.tape().push(Op::Exp, {a.id()}, detail::unary_forward(a.value(), [](double x) { return kernel::exp(x); }));
}
inline Var log(const Var& a) {
    return a.tape().push(Op::Log, {a.id()}, detail::unary_forward(a.value(), [](double x) { return std::log(x); }));
}
inline Var square(const Var& a) {
    return a.tape().push(Op::Square, {a.id()}, detail::unary_forward(a.value(), [](double x) { return x * x; }));
}
inline Var sqrt(const Var& a) {
    return a.tape().push(Op::Sqrt, {a.id()}, detail::unary_forward(a.value(), [](double x) { return std::sqrt(x); }));
}
inline Var sigmoid(const Var& a) {
    return a.tape().push(Op::Sigmoid, {a.id()}, detail::unary_forward(a.value(), [](double x) { return kernel::sigmoid(x); }));
}
inline Var sin(const Var& a) {
    return a.tape().push(Op::Sin, {a.id()}, detail::unary_forward(a.value(), [](double x) { return std::sin(x); }));
}
inline Var cos(const Var& a) {
    return a.tape().push(Op::Cos, {a.id()}, detail::unary_forward(a.value(), [](double x) { return std::cos(x); }));
}
/// Hard clamp; gradient passes only strictly inside (lo, hi).
inline Var clip(const Var& a, double lo, double hi) {
    return a.tape().push(Op::Clip, {a.id()},
                         detail::unary_forward(a.value(), [lo, hi](double x) { return std::clamp(x, lo, hi); }), false,
                         {}, lo, hi);
}

inline Var broadcast_to(const Var& a, const Shape& shape) {
    Array out(shape);
    auto o = out.data();
    const auto x = a.value().data();
    const std::vector<std::size_t> zero(shape.size(), 0);
    detail::for_each_strided(shape, detail::broadcast_strides(a.shape(), shape), zero, 0, 0,
                             [&](std::size_t i, std::size_t ia, std::size_t) { o[i] = x[ia]; });
    return a.tape().push(Op::Broadcast, {a.id()}, std::move(out));
}

inline Var reshape(const Var& a, Shape shape) {
    return a.tape().push(Op::Reshape, {a.id()}, a.value().reshaped(std::move(shape)));
}

inline Var transpose(const Var& a) {
    if (a.value().rank() != 2) throw ShapeError("transpose: rank-2 input required");
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    return a.tape().push(Op::Transpose, {a.id()}, Array(Shape{c, r}, detail::transpose2d(a.value().data(), r, c)));
}

/// Sub-block [begin[d], end[d]) along every dimension.
inline Var slice(const Var& a, const std::vector<std::size_t>& begin, const std::vector<std::size_t>& end) {
    const Shape& is = a.shape();
    if (begin.size() != is.size() || end.size() != is.size()) throw ShapeError("slice: rank mismatch");
    Shape os(is.size());
    for (std::size_t d = 0; d < is.size(); ++d) {
        if (begin[d] > end[d] || end[d] > is[d]) throw ShapeError("slice: range out of bounds on " + shape_str(is));
        os[d] = end[d] - begin[d];
    }
    const auto st = detail::contiguous_strides(is);
    std::size_t base = 0;
    for (std::size_t d = 0; d < st.size(); ++d) base += begin[d] * st[d];
    Array out(os);
    auto o = out.data();
    const auto x = a.value().data();
    const std::vector<std::size_t> zero(os.size(), 0);
    detail::for_each_strided(os, st, zero, base, 0, [&](std::size_t i, std::size_t ia, std::size_t) { o[i] = x[ia]; });
    return a.tape().push(Op::Slice, {a.id()}, std::move(out), false, begin);
}

/// Rows [begin, end) of the leading axis.
inline Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
    std::vector<std::size_t> b(a.shape().size(), 0), e = a.shape();
    b[0] = begin;
    e[0] = end;
    return slice(a, b, e);
}

inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Shape os = parts[0].shape();
    if (axis >= os.size()) throw ShapeError("concat: axis out of range");
    os[axis] = 0;
    for (const auto& p : parts) {
        detail::same_tape(parts[0], p);
        const Shape& s = p.shape();
        if (s.size() != os.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != axis && s[d] != parts[0].shape()[d]) throw ShapeError("concat: extent mismatch");
        os[axis] += s[axis];
    }
    std::size_t outer = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= os[d];
    Array out(os);
    auto o = out.data();
    const std::size_t row = out.size() / outer;
    std::size_t offset = 0;
    std::vector<std::uint32_t> ids;
    for (const auto& p : parts) {
        const auto x = p.value().data();
        const std::size_t chunk = x.size() / outer;
        for (std::size_t r = 0; r < outer; ++r)
            std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(r * chunk), chunk,
                        o.begin() + static_cast<std::ptrdiff_t>(r * row + offset));
        offset += chunk;
        ids.push_back(p.id());
    }
    return parts[0].tape().push(Op::Concat, std::move(ids), std::move(out), false, {axis});
}

/// 2x2 average pooling over the last two axes (both extents must be even).
inline Var avgpool2x2(const Var& a) {
    const Shape& is = a.shape();
    if (is.size() < 2) throw ShapeError("avgpool2x2: rank >= 2 required");
    const std::size_t h = is[is.size() - 2], w = is[is.size() - 1];
    if (h % 2 || w % 2) throw ShapeError("avgpool2x2: odd spatial extent " + shape_str(is));
    Shape os = is;
    os[os.size() - 2] = h / 2;
    os[os.size() - 1] = w / 2;
    Array out(os);
    auto o = out.data();
    const auto x = a.value().data();
    const std::size_t planes = x.size() / (h * w), oh = h / 2, ow = w / 2;
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) {
                const double* src = x.data() + p * h * w + 2 * y * w + 2 * xx;
                o[p * oh * ow + y * ow + xx] = 0.25 * (src[0] + src[1] + src[w] + src[w + 1]);
            }
    return a.tape().push(Op::AvgPool2x2, {a.id()}, std::move(out));
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator+(const Var& a, double c) { return add_const(a, c); }
inline Var operator+(double c, const Var& a) { return add_const(a, c); }
inline Var operator-(const Var& a, double c) { return add_const(a, -c); }
inline Var operator-(double c, const Var& a) { return add_const(neg(a), c); }
inline Var operator*(const Var& a, double c) { return mul_const(a, c); }
inline Var operator*(double c, const Var& a) { return mul_const(a, c); }
inline Var operator/(const Var& a, double c) { return mul_const(a, 1.0 / c); }
inline Var operator/(double c, const Var& a) { return div(a.tape().constant(c), a); }

}  // namespace pnav::ad
