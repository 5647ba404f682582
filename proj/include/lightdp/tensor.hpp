#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <utility>

#include "lightdp/common.hpp"
#include "lightdp/kernels.hpp"

// Reverse-mode autodiff on dense n-d tensors. The engine is templated on the
// scalar type: float for training, double for the finite-difference
// verification mode. A Tape owns the recorded graph; tensors without a tape
// are plain immutable values and all ops degrade to eager evaluation on them.
//
// The tape is single-threaded by contract: one tape per training step.
// Parallelism lives inside the kernels, never across tape nodes.

namespace lightdp {

template <class R> class Tape;

template <class R>
struct TensorData {
    Shape shape;
    std::vector<R> v;
};

template <class R>
class Tensor {
  public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<R> data, Tape<R> * tape = nullptr, int node = -1)
        : d_(std::make_shared<TensorData<R>>(TensorData<R>{std::move(shape), std::move(data)})),
          tape_(tape), node_(node) {
        if (numel(d_->shape) != i64(d_->v.size()))
            throw dimension_error("tensor data size does not match shape " + shape_str(d_->shape));
    }

    static Tensor zeros(Shape shape) {
        std::vector<R> v(static_cast<size_t>(numel(shape)), R(0));
        return Tensor(std::move(shape), std::move(v));
    }
    static Tensor full(Shape shape, R value) {
        std::vector<R> v(static_cast<size_t>(numel(shape)), value);
        return Tensor(std::move(shape), std::move(v));
    }
    static Tensor scalar_of(R value) { return Tensor({1}, {value}); }

    bool defined() const { return bool(d_); }
    const Shape & shape() const { return d_->shape; }
    const std::vector<R> & data() const { return d_->v; }
    std::vector<R> & data() { return d_->v; }
    i64 size() const { return i64(d_->v.size()); }
    int ndim() const { return int(d_->shape.size()); }

    R item() const {
        if (size() != 1) throw contract_error("item() on non-scalar tensor " + shape_str(shape()));
        return d_->v[0];
    }

    Tape<R> * tape() const { return tape_; }
    int node() const { return node_; }
    bool on_tape() const { return tape_ != nullptr && node_ >= 0; }

    std::shared_ptr<TensorData<R>> ptr() const { return d_; }

  private:
    std::shared_ptr<TensorData<R>> d_;
    Tape<R> * tape_ = nullptr;
    int node_ = -1;
};

template <class R>
class Tape {
  public:
    // Invoked with (tape, own node id); reads its output grad and accumulates
    // into its parents' grad buffers.
    using BackFn = std::function<void(Tape &, int)>;

    int push(BackFn back) {
        nodes_.push_back(std::move(back));
        grads_.emplace_back();
        return int(nodes_.size()) - 1;
    }

    // Registers a leaf (parameter) value; gradients accumulate for it.
    Tensor<R> leaf(const Tensor<R> & value) {
        int id = push(nullptr);
        return Tensor<R>(value.shape(), value.data(), this, id);
    }

    std::vector<R> & grad_buf(int node, i64 n) {
        auto & g = grads_[size_t(node)];
        if (g.empty()) g.assign(size_t(n), R(0));
        return g;
    }

    const std::vector<R> & out_grad(int node) const { return grads_[size_t(node)]; }

    bool has_grad(int node) const { return !grads_[size_t(node)].empty(); }

    // Gradient of the last backward() w.r.t. an on-tape tensor. Returns zeros
    // for tensors the loss never reached.
    std::vector<R> grad(const Tensor<R> & t) const {
        if (!t.on_tape() || t.tape() != this)
            throw contract_error("grad() queried for a tensor not on this tape");
        const auto & g = grads_[size_t(t.node())];
        if (g.empty()) return std::vector<R>(static_cast<size_t>(t.size()), R(0));
        return g;
    }

    // Reverse pass from a scalar loss. Visits each node at most once, in
    // reverse creation order (a valid topological order by construction).
    void backward(const Tensor<R> & loss) {
        if (!loss.on_tape() || loss.tape() != this)
            throw contract_error("backward: loss is not on the active tape");
        if (loss.size() != 1)
            throw contract_error("backward: loss must be scalar, got " + shape_str(loss.shape()));
        for (auto & g : grads_) g.clear();
        grads_[size_t(loss.node())].assign(1, R(1));
        for (int i = loss.node(); i >= 0; --i) {
            if (grads_[size_t(i)].empty()) continue;
            if (nodes_[size_t(i)]) nodes_[size_t(i)](*this, i);
        }
    }

    size_t num_nodes() const { return nodes_.size(); }

  private:
    std::vector<BackFn> nodes_;
    std::vector<std::vector<R>> grads_;
};

namespace detail {

template <class R>
Tape<R> * common_tape(const Tensor<R> & a, const Tensor<R> & b) {
    if (a.on_tape() && b.on_tape() && a.tape() != b.tape())
        throw contract_error("operands live on different tapes");
    return a.on_tape() ? a.tape() : (b.on_tape() ? b.tape() : nullptr);
}

// True when `small` equals the trailing dims of `big` (or is 1-element).
// The only broadcast form the engine supports.
template <class R>
bool suffix_broadcast(const Tensor<R> & big, const Tensor<R> & small) {
    if (small.size() == 1) return true;
    const auto & bs = big.shape();
    const auto & ss = small.shape();
    if (ss.size() > bs.size()) return false;
    for (size_t i = 0; i < ss.size(); ++i)
        if (ss[ss.size() - 1 - i] != bs[bs.size() - 1 - i]) return false;
    return true;
}

template <class R>
Tensor<R> make_result(Shape shape, std::vector<R> data, Tape<R> * tape,
                      typename Tape<R>::BackFn back) {
    if (!tape) return Tensor<R>(std::move(shape), std::move(data));
    int id = tape->push(std::move(back));
    return Tensor<R>(std::move(shape), std::move(data), tape, id);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------
// a: [..., m, k] with b: [k, n]      -> [..., m, n]   (leading dims folded)
// a: [..., m, k] with b: [..., k, n] -> [..., m, n]   (identical leading dims)
template <class R>
Tensor<R> matmul(const Tensor<R> & a, const Tensor<R> & b) {
    if (a.ndim() < 2 || b.ndim() < 2)
        throw dimension_error("matmul: operands must have >= 2 dims, got " +
                              shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const i64 K = a.shape().back();
    const i64 m = a.shape()[size_t(a.ndim() - 2)];

    const bool shared_rhs = b.ndim() == 2;
    if (!shared_rhs) {
        if (b.ndim() != a.ndim())
            throw dimension_error("matmul: batched operands must share rank, got " +
                                  shape_str(a.shape()) + " and " + shape_str(b.shape()));
        for (int i = 0; i < a.ndim() - 2; ++i)
            if (a.shape()[size_t(i)] != b.shape()[size_t(i)])
                throw dimension_error("matmul: batch dims differ, " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
    }
    if (b.shape()[size_t(b.ndim() - 2)] != K)
        throw dimension_error("matmul: inner dims disagree, " + shape_str(a.shape()) +
                              " vs " + shape_str(b.shape()));
    const i64 n = b.shape().back();

    // rows per gemm and number of batched gemms
    const i64 rows = shared_rhs ? a.size() / K : m;
    const i64 batch = shared_rhs ? 1 : a.size() / (m * K);

    Shape out_shape(a.shape());
    out_shape.back() = int(n);

    std::vector<R> out(static_cast<size_t>(numel(out_shape)));
    if (batch == 1) {
        kern::gemm_nn(a.data().data(), b.data().data(), out.data(), rows, n, K);
    } else {
        kern::gemm_nn_batched(a.data().data(), b.data().data(), out.data(), batch, rows, n, K,
                              false, rows * K, K * n, rows * n);
    }

    Tape<R> * tape = detail::common_tape(a, b);
    if (!tape) return Tensor<R>(std::move(out_shape), std::move(out));

    auto ad = a.ptr();
    auto bd = b.ptr();
    const int an = a.on_tape() ? a.node() : -1;
    const int bn = b.on_tape() ? b.node() : -1;
    auto back = [ad, bd, an, bn, rows, n, K, batch, shared_rhs](Tape<R> & tp, int self) {
        const auto & g = tp.out_grad(self);
        if (an >= 0) {
            auto & ga = tp.grad_buf(an, i64(ad->v.size()));
            if (batch == 1) {
                kern::gemm_nt(g.data(), bd->v.data(), ga.data(), rows, K, n, true);
            } else {
                kern::gemm_nt_batched(g.data(), bd->v.data(), ga.data(), batch, rows, K, n, true,
                                      rows * n, K * n, rows * K);
            }
        }
        if (bn >= 0) {
            auto & gb = tp.grad_buf(bn, i64(bd->v.size()));
            if (batch == 1) {
                kern::gemm_tn(ad->v.data(), g.data(), gb.data(), rows, n, K, true);
            } else {
                kern::gemm_tn_batched(ad->v.data(), g.data(), gb.data(), batch, rows, n, K, true,
                                      rows * K, rows * n, K * n);
            }
        }
    };
    return detail::make_result(std::move(out_shape), std::move(out), tape, std::move(back));
}

// ---------------------------------------------------------------------------
// elementwise add / sub / mul with trailing-dimension broadcast
// ---------------------------------------------------------------------------
namespace detail {

enum class EwOp { Add, Sub, Mul };

template <class R>
Tensor<R> elementwise(const Tensor<R> & a, const Tensor<R> & b, EwOp op) {
    const Tensor<R> * big = &a;
    const Tensor<R> * small = &b;
    bool swapped = false;
    if (a.size() < b.size()) {
        big = &b; small = &a; swapped = true;
    }
    if (!suffix_broadcast(*big, *small))
        throw dimension_error("elementwise: incompatible shapes " + shape_str(a.shape()) +
                              " and " + shape_str(b.shape()));
    if (op == EwOp::Sub && swapped)
        throw dimension_error("sub: broadcast only supported on the right operand, got " +
                              shape_str(a.shape()) + " - " + shape_str(b.shape()));

    const i64 n = big->size();
    const i64 s = small->size();
    const R * bp = big->data().data();
    const R * sp = small->data().data();
    std::vector<R> out(static_cast<size_t>(n));
    // three layouts: equal shapes, scalar, repeated suffix
    auto apply = [op](R a, R b) {
        switch (op) {
            case EwOp::Add: return a + b;
            case EwOp::Sub: return a - b;
            default: return a * b;
        }
    };
    if (s == n) {
        for (i64 i = 0; i < n; ++i) out[size_t(i)] = apply(bp[i], sp[i]);
    } else if (s == 1) {
        const R v = sp[0];
        for (i64 i = 0; i < n; ++i) out[size_t(i)] = apply(bp[i], v);
    } else {
        for (i64 base = 0; base < n; base += s)
            for (i64 j = 0; j < s; ++j) out[size_t(base + j)] = apply(bp[base + j], sp[j]);
    }

    Tape<R> * tape = common_tape(a, b);
    if (!tape) return Tensor<R>(big->shape(), std::move(out));

    auto big_d = big->ptr();
    auto small_d = small->ptr();
    const int big_node = big->on_tape() ? big->node() : -1;
    const int small_node = small->on_tape() ? small->node() : -1;
    auto back = [big_d, small_d, big_node, small_node, n, s, op, swapped](Tape<R> & tp, int self) {
        const auto & g = tp.out_grad(self);
        // sign of the small operand's contribution (only Sub flips it and
        // Sub guarantees small == rhs)
        const R small_sign = (op == EwOp::Sub) ? R(-1) : R(1);
        if (big_node >= 0) {
            auto & gb = tp.grad_buf(big_node, n);
            if (op == EwOp::Mul) {
                const R * sp2 = small_d->v.data();
                if (s == n) {
                    for (i64 i = 0; i < n; ++i) gb[size_t(i)] += g[size_t(i)] * sp2[i];
                } else if (s == 1) {
                    const R v = sp2[0];
                    for (i64 i = 0; i < n; ++i) gb[size_t(i)] += g[size_t(i)] * v;
                } else {
                    for (i64 base = 0; base < n; base += s)
                        for (i64 j = 0; j < s; ++j)
                            gb[size_t(base + j)] += g[size_t(base + j)] * sp2[j];
                }
            } else {
                for (i64 i = 0; i < n; ++i) gb[size_t(i)] += g[size_t(i)];
            }
        }
        if (small_node >= 0) {
            auto & gs = tp.grad_buf(small_node, s);
            if (op == EwOp::Mul) {
                const R * bp2 = big_d->v.data();
                if (s == n) {
                    for (i64 i = 0; i < n; ++i) gs[size_t(i)] += g[size_t(i)] * bp2[i];
                } else if (s == 1) {
                    R acc = R(0);
                    for (i64 i = 0; i < n; ++i) acc += g[size_t(i)] * bp2[i];
                    gs[0] += acc;
                } else {
                    for (i64 base = 0; base < n; base += s)
                        for (i64 j = 0; j < s; ++j)
                            gs[size_t(j)] += g[size_t(base + j)] * bp2[base + j];
                }
            } else {
                if (s == 1) {
                    R acc = R(0);
                    for (i64 i = 0; i < n; ++i) acc += g[size_t(i)];
                    gs[0] += small_sign * acc;
                } else {
                    for (i64 base = 0; base < n; base += s)
                        for (i64 j = 0; j < s; ++j) gs[size_t(j)] += small_sign * g[size_t(base + j)];
                }
            }
        }
        (void)swapped;
    };
    return make_result(big->shape(), std::move(out), tape, std::move(back));
}

}  // namespace detail

template <class R>
Tensor<R> add(const Tensor<R> & a, const Tensor<R> & b) {
    return detail::elementwise(a, b, detail::EwOp::Add);
}
template <class R>
Tensor<R> sub(const Tensor<R> & a, const Tensor<R> & b) {
    return detail::elementwise(a, b, detail::EwOp::Sub);
}
template <class R>
Tensor<R> mul(const Tensor<R> & a, const Tensor<R> & b) {
    return detail::elementwise(a, b, detail::EwOp::Mul);
}

// out = c * a for a compile-time-known constant
template <class R>
Tensor<R> scale(const Tensor<R> & a, R c) {
    std::vector<R> out(a.data());
    for (auto & x : out) x *= c;
    if (!a.on_tape()) return Tensor<R>(a.shape(), std::move(out));
    const int an = a.node();
    const i64 n = a.size();
    auto back = [an, n, c](Tape<R> & tp, int self) {
        const auto & g = tp.out_grad(self);
        auto & ga = tp.grad_buf(an, n);
        for (i64 i = 0; i < n; ++i) ga[size_t(i)] += c * g[size_t(i)];
    };
    return detail::make_result(a.shape(), std::move(out), a.tape(), std::move(back));
}

template <class R>
Tensor<R> add_const(const Tensor<R> & a, R c) {
    std::vector<R> out(a.data());
    for (auto & x : out) x += c;
    if (!a.on_tape()) return Tensor<R>(a.shape(), std::move(out));
    const int an = a.node();
    const i64 n = a.size();
    auto back = [an, n](Tape<R> & tp, int self) {
        const auto & g = tp.out_grad(self);
        auto & ga = tp.grad_buf(an, n);
        for (i64 i = 0; i < n; ++i) ga[size_t(i)] += g[size_t(i)];
    };
    return detail::make_result(a.shape(), std::move(out), a.tape(), std::move(back));
}

// Per-leading-index scaling: x viewed as [rows, cols], out[r, :] = s[r] * x[r, :].
// The scale vector is a constant (no gradient flows into it).
template <class R>
Tensor<R> scale_rows(const Tensor<R> & x, const std::vector<R> & s) {
    const i64 rows = i64(s.size());
    if (rows == 0 || x.size() % rows != 0)
        throw dimension_error("scale_rows: row count " + std::to_string(s.size()) +
                              " does not divide tensor " + shape_str(x.shape()));
    const i64 cols = x.size() / rows;
    std::vector<R> out(static_cast<size_t>(x.size()));
    for (i64 r = 0; r < rows; ++r)
        for (i64 j = 0; j < cols; ++j)
            out[size_t(r * cols + j)] = s[size_t(r)] * x.data()[size_t(r * cols + j)];
    if (!x.on_tape()) return Tensor<R>(x.shape(), std::move(out));
    const int xn = x.node();
    auto sv = std::make_shared<std::vector<R>>(s);
    auto back = [xn, sv, rows, cols](Tape<R> & tp, int self) {
        const auto & g = tp.out_grad(self);
        auto & gx = tp.grad_buf(xn, rows * cols);
        for (i64 r = 0; r < rows; ++r)
            for (i64 j = 0; j < cols; ++j)
                gx[size_t(r * cols + j)] += (*sv)[size_t(r)] * g[size_t(r * cols + j)];
    };
    return detail::make_result(x.shape(), std::move(out), x.tape(), std::move(back));
}

// ---------------------------------------------------------------------------
// gelu (tanh approximation)
// ---------------------------------------------------------------------------
namespace detail {
inline constexpr double kGeluC = 0.044715;
inline constexpr double kGeluS = 0.7978845608028654;  // sqrt(2/pi)

// double path: exact libm tanh (verification mode)
inline double tanh_eval(double u) { return std::tanh(u); }

// float path: rational 13/6 approximation (~1e-7 abs error), branch-free and
// vectorizable; libm tanhf per element dominates the FFN otherwise
inline float tanh_eval(float u) {
    const float x = std::min(std::max(u, -7.90531110763549f), 7.90531110763549f);
    const float x2 = x * x;
    float p = -2.76076847742355e-16f;
    p = p * x2 + 2.00018790482477e-13f;
    p = p * x2 + -8.60467152213735e-11f;
    p = p * x2 + 5.12229709037114e-08f;
    p = p * x2 + 1.48572235717979e-05f;
    p = p * x2 + 6.37261928875436e-04f;
    p = p * x2 + 4.89352455891786e-03f;
    p = p * x;
    float q = 1.19825839466702e-06f;
    q = q * x2 + 1.18534705686654e-04f;
    q = q * x2 + 2.26843463243900e-03f;
    q = q * x2 + 4.89352518554385e-03f;
    return p / q;
}
}  // namespace detail

template <class R>
Tensor<R> gelu(const Tensor<R> & x) {
    const i64 n = x.size();
    std::vector<R> out(static_cast<size_t>(n));
    auto tcache = std::make_shared<std::vector<R>>(static_cast<size_t>(n));
    const R * xp = x.data().data();
    const R s = R(detail::kGeluS), c = R(detail::kGeluC);
    R * tc = tcache->data();
    R * op = out.data();
    if (n >= (i64(1) << 16)) {
#pragma omp parallel for schedule(static)
        for (i64 i = 0; i < n; ++i) {
            const R v = xp[i];
            const R t = detail::tanh_eval(s * (v + c * v * v * v));
            tc[i] = t;
            op[i] = R(0.5) * v * (R(1) + t);
        }
    } else {
        for (i64 i = 0; i < n; ++i) {
            const R v = xp[i];
            const R t = detail::tanh_eval(s * (v + c * v * v * v));
            tc[i] = t;
            op[i] = R(0.5) * v * (R(1) + t);
        }
    }
    if (!x.on_tape()) return Tensor<R>(x.shape(), std::move(out));
    auto xd = x.ptr();
    const int xn = x.node();
    auto back = [xd, xn, tcache, n, s, c](Tape<R> & tp, int self) {
        const auto & g = tp.out_grad(self);
        auto & gx = tp.grad_buf(xn, n);
        const R * xp2 = xd->v.data();
        const R * tc2 = tcache->data();
        R * gxp = gx.data();
        const R * gp = g.data();
        if (n >= (i64(1) << 16)) {
#pragma omp parallel for schedule(static)
            for (i64 i = 0; i < n; ++i) {
                const R v = xp2[i];
                const R t = tc2[i];
                const R du = s * (R(1) + R(3) * c * v * v);
                const R d = R(0.5) * (R(1) + t) + R(0.5) * v * (R(1) - t * t) * du;
                gxp[i] += gp[i] * d;
            }
        } else {
            for (i64 i = 0; i < n; ++i) {
                const R v = xp2[i];
                const R t = tc2[i];
                const R du = s * (R(1) + R(3) * c * v * v);
                const R d = R(0.5) * (R(1) + t) + R(0.5) * v * (R(1) - t * t) * du;
                gxp[i] += gp[i] * d;
            }
        }
    };
    return detail::make_result(x.shape(), std::move(out), x.tape(), std::move(back));
}

// ---------------------------------------------------------------------------
// softmax over the last axis, max-stabilized
// ---------------------------------------------------------------------------
template <class R>
Tensor<R> softmax(const Tensor<R> & x) {
    if (x.ndim() < 1) throw dimension_error("softmax: rank-0 input");
    const i64 L = x.shape().back();
    const i64 rows = x.size() / L;
    std::vector<R> out(static_cast<size_t>(x.size()));
    const R * xp = x.data().data();
    const bool par = rows * L >= (i64(1) << 16);
#pragma omp parallel for schedule(static) if (par)
    for (i64 r = 0; r < rows; ++r) {
        const R * row = xp + r * L;
        R * o = out.data() + r * L;
        R mx = row[0];
        for (i64 j = 1; j < L; ++j) mx = std::max(mx, row[j]);
        R sum = R(0);
        for (i64 j = 0; j < L; ++j) {
            o[j] = std::exp(row[j] - mx);
            sum += o[j];
        }
        const R inv = R(1) / sum;
        for (i64 j = 0; j < L; ++j) o[j] *= inv;
    }
    if (!x.on_tape()) return Tensor<R>(x.shape(), std::move(out));
    const int xn = x.node();
    auto od = std::make_shared<std::vector<R>>(out);
    auto back = [xn, od, rows, L](Tape<R> & tp, int self) {
        const auto & g = tp.out_grad(self);
        auto & gx = tp.grad_buf(xn, rows * L);
        for (i64 r = 0; r < rows; ++r) {
            const R * s = od->data() + r * L;
            const R * gr = g.data() + r * L;
            R dot = R(0);
            for (i64 j = 0; j < L; ++j) dot += gr[j] * s[j];
            for (i64 j = 0; j < L; ++j) gx[size_t(r * L + j)] += s[j] * (gr[j] - dot);
        }
    };
    return detail::make_result(x.shape(), std::move(out), x.tape(), std::move(back));
}

// ---------------------------------------------------------------------------
// layernorm over the last axis with affine gain/bias
// ---------------------------------------------------------------------------
template <class R>
Tensor<R> layernorm(const Tensor<R> & x, const Tensor<R> & gain, const Tensor<R> & bias,
                    R eps = R(1e-5)) {
    const i64 L = x.shape().back();
    if (gain.size() != L || bias.size() != L)
        throw dimension_error("layernorm: gain/bias must match last axis " + std::to_string(L));
    const i64 rows = x.size() / L;
    std::vector<R> out(static_cast<size_t>(x.size()));
    auto xhat = std::make_shared<std::vector<R>>(static_cast<size_t>(x.size()));
    auto istd = std::make_shared<std::vector<R>>(static_cast<size_t>(rows));
    const R * xp = x.data().data();
    const R * gp = gain.data().data();
    const R * bp = bias.data().data();
    const bool par = rows * L >= (i64(1) << 16);
#pragma omp parallel for schedule(static) if (par)
    for (i64 r = 0; r < rows; ++r) {
        const R * row = xp + r * L;
        R mean = R(0);
        for (i64 j = 0; j < L; ++j) mean += row[j];
        mean /= R(L);
        R var = R(0);
        for (i64 j = 0; j < L; ++j) {
            const R d = row[j] - mean;
            var += d * d;
        }
        var /= R(L);
        const R is = R(1) / std::sqrt(var + eps);
        (*istd)[size_t(r)] = is;
        for (i64 j = 0; j < L; ++j) {
            const R xh = (row[j] - mean) * is;
            (*xhat)[size_t(r * L + j)] = xh;
            out[size_t(r * L + j)] = xh * gp[j] + bp[j];
        }
    }
    Tape<R> * tape = detail::common_tape(x, gain);
    if (!tape && bias.on_tape()) tape = bias.tape();
    if (!tape) return Tensor<R>(x.shape(), std::move(out));

    auto gd = gain.ptr();
    const int xn = x.on_tape() ? x.node() : -1;
    const int gn = gain.on_tape() ? gain.node() : -1;
    const int bn = bias.on_tape() ? bias.node() : -1;
    auto back = [xn, gn, bn, gd, xhat, istd, rows, L](Tape<R> & tp, int self) {
        const auto & g = tp.out_grad(self);
        if (gn >= 0) {
            auto & gg = tp.grad_buf(gn, L);
            for (i64 r = 0; r < rows; ++r)
                for (i64 j = 0; j < L; ++j)
                    gg[size_t(j)] += g[size_t(r * L + j)] * (*xhat)[size_t(r * L + j)];
        }
        if (bn >= 0) {
            auto & gb = tp.grad_buf(bn, L);
            for (i64 r = 0; r < rows; ++r)
                for (i64 j = 0; j < L; ++j) gb[size_t(j)] += g[size_t(r * L + j)];
        }
        if (xn >= 0) {
            auto & gx = tp.grad_buf(xn, rows * L);
            const R * gp2 = gd->v.data();
            for (i64 r = 0; r < rows; ++r) {
                // dxhat = g * gain; dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                R m1 = R(0), m2 = R(0);
                for (i64 j = 0; j < L; ++j) {
                    const R dxh = g[size_t(r * L + j)] * gp2[j];
                    m1 += dxh;
                    m2 += dxh * (*xhat)[size_t(r * L + j)];
                }
                m1 /= R(L);
                m2 /= R(L);
                const R is = (*istd)[size_t(r)];
                for (i64 j = 0; j < L; ++j) {
                    const R dxh = g[size_t(r * L + j)] * gp2[j];
                    gx[size_t(r * L + j)] += is * (dxh - m1 - (*xhat)[size_t(r * L + j)] * m2);
                }
            }
        }
    };
    return detail::make_result(x.shape(), std::move(out), tape, std::move(back));
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------
template <class R>
Tensor<R> reshape(const Tensor<R> & x, Shape new_shape) {
    if (numel(new_shape) != x.size())
        throw dimension_error("reshape: " + shape_str(x.shape()) + " -> " +
                              shape_str(new_shape) + " changes element count");
    std::vector<R> out(x.data());
    if (!x.on_tape()) return Tensor<R>(std::move(new_shape), std::move(out));
    const int xn = x.node();
    const i64 n = x.size();
    auto back = [xn, n](Tape<R> & tp, int self) {
        const auto & g = tp.out_grad(self);
        auto & gx = tp.grad_buf(xn, n);
        for (i64 i = 0; i < n; ++i) gx[size_t(i)] += g[size_t(i)];
    };
    return detail::make_result(std::move(new_shape), std::move(out), x.tape(), std::move(back));
}

namespace detail {

// Scatter an input-layout walk into the permuted output layout:
// out[out_index(i)] = in[i]. Iterates with incremental strides, no index map.
template <class R, bool Accumulate>
void permute_scatter(const R * in, R * out, const Shape & in_shape,
                     const std::vector<int> & perm) {
    const int nd = int(in_shape.size());
    Shape out_shape(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) out_shape[size_t(i)] = in_shape[size_t(perm[size_t(i)])];
    std::vector<i64> out_strides(static_cast<size_t>(nd));
    i64 s = 1;
    for (int i = nd - 1; i >= 0; --i) {
        out_strides[size_t(i)] = s;
        s *= out_shape[size_t(i)];
    }
    // stride of input axis d inside the output layout
    std::vector<i64> axis_stride(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) axis_stride[size_t(perm[size_t(i)])] = out_strides[size_t(i)];

    if (nd == 4) {  // the attention path
        const i64 d0 = in_shape[0], d1 = in_shape[1], d2 = in_shape[2], d3 = in_shape[3];
        const i64 s0 = axis_stride[0], s1 = axis_stride[1], s2 = axis_stride[2],
                  s3 = axis_stride[3];
        i64 lin = 0;
        for (i64 a = 0; a < d0; ++a)
            for (i64 b = 0; b < d1; ++b)
                for (i64 c = 0; c < d2; ++c) {
                    i64 o = a * s0 + b * s1 + c * s2;
                    for (i64 d = 0; d < d3; ++d, ++lin, o += s3) {
                        if constexpr (Accumulate) out[o] += in[lin];
                        else out[o] = in[lin];
                    }
                }
        return;
    }

    const i64 n = numel(in_shape);
    std::vector<i64> idx(static_cast<size_t>(nd), 0);
    i64 o = 0;
    for (i64 lin = 0; lin < n; ++lin) {
        if constexpr (Accumulate) out[o] += in[lin];
        else out[o] = in[lin];
        for (int d = nd - 1; d >= 0; --d) {
            o += axis_stride[size_t(d)];
            if (++idx[size_t(d)] < in_shape[size_t(d)]) break;
            o -= axis_stride[size_t(d)] * in_shape[size_t(d)];
            idx[size_t(d)] = 0;
        }
    }
}

// gather form: out[i] += in[out_index(i)], the backward pass
template <class R>
void permute_gather_add(const R * in, R * out, const Shape & in_shape,
                        const std::vector<int> & perm) {
    const int nd = int(in_shape.size());
    Shape out_shape(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) out_shape[size_t(i)] = in_shape[size_t(perm[size_t(i)])];
    std::vector<i64> out_strides(static_cast<size_t>(nd));
    i64 s = 1;
    for (int i = nd - 1; i >= 0; --i) {
        out_strides[size_t(i)] = s;
        s *= out_shape[size_t(i)];
    }
    std::vector<i64> axis_stride(static_cast<size_t>(nd));
    for (int i = 0; i < nd; ++i) axis_stride[size_t(perm[size_t(i)])] = out_strides[size_t(i)];

    if (nd == 4) {
        const i64 d0 = in_shape[0], d1 = in_shape[1], d2 = in_shape[2], d3 = in_shape[3];
        const i64 s0 = axis_stride[0], s1 = axis_stride[1], s2 = axis_stride[2],
                  s3 = axis_stride[3];
        i64 lin = 0;
        for (i64 a = 0; a < d0; ++a)
            for (i64 b = 0; b < d1; ++b)
                for (i64 c = 0; c < d2; ++c) {
                    i64 o = a * s0 + b * s1 + c * s2;
                    for (i64 d = 0; d < d3; ++d, ++lin, o += s3) out[lin] += in[o];
                }
        return;
    }

    const i64 n = numel(in_shape);
    std::vector<i64> idx(static_cast<size_t>(nd), 0);
    i64 o = 0;
    for (i64 lin = 0; lin < n; ++lin) {
        out[lin] += in[o];
        for (int d = nd - 1; d >= 0; --d) {
            o += axis_stride[size_t(d)];
            if (++idx[size_t(d)] < in_shape[size_t(d)]) break;
            o -= axis_stride[size_t(d)] * in_shape[size_t(d)];
            idx[size_t(d)] = 0;
        }
    }
}

}  // namespace detail

// Axis permutation: out dim i = in dim perm[i].
template <class R>
Tensor<R> permute(const Tensor<R> & x, const std::vector<int> & perm) {
    if (int(perm.size()) != x.ndim())
        throw dimension_error("permute: perm rank mismatch for " + shape_str(x.shape()));
    Shape out_shape(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) out_shape[i] = x.shape()[size_t(perm[i])];
    const i64 n = x.size();
    std::vector<R> out(static_cast<size_t>(n));
    detail::permute_scatter<R, false>(x.data().data(), out.data(), x.shape(), perm);
    if (!x.on_tape()) return Tensor<R>(std::move(out_shape), std::move(out));
    const int xn = x.node();
    auto in_shape = std::make_shared<Shape>(x.shape());
    auto perm_copy = std::make_shared<std::vector<int>>(perm);
    auto back = [xn, in_shape, perm_copy, n](Tape<R> & tp, int self) {
        const auto & g = tp.out_grad(self);
        auto & gx = tp.grad_buf(xn, n);
        detail::permute_gather_add(g.data(), gx.data(), *in_shape, *perm_copy);
    };
    return detail::make_result(std::move(out_shape), std::move(out), x.tape(), std::move(back));
}

// [rows, H] -> [rows, reps, H], every token position gets the same row.
template <class R>
Tensor<R> expand_tokens(const Tensor<R> & x, int reps) {
    if (x.ndim() != 2) throw dimension_error("expand_tokens: expects [B,H], got " + shape_str(x.shape()));
    const i64 B = x.shape()[0], H = x.shape()[1];
    Shape out_shape{int(B), reps, int(H)};
    std::vector<R> out(static_cast<size_t>(B * reps * H));
    const R * xp = x.data().data();
    for (i64 b = 0; b < B; ++b)
        for (i64 t = 0; t < reps; ++t)
            std::copy(xp + b * H, xp + (b + 1) * H, out.data() + (b * reps + t) * H);
    if (!x.on_tape()) return Tensor<R>(std::move(out_shape), std::move(out));
    const int xn = x.node();
    auto back = [xn, B, H, reps](Tape<R> & tp, int self) {
        const auto & g = tp.out_grad(self);
        auto & gx = tp.grad_buf(xn, B * H);
        for (i64 b = 0; b < B; ++b)
            for (i64 t = 0; t < reps; ++t)
                for (i64 h = 0; h < H; ++h)
                    gx[size_t(b * H + h)] += g[size_t((b * i64(reps) + t) * H + h)];
    };
    return detail::make_result(std::move(out_shape), std::move(out), x.tape(), std::move(back));
}

// Slice [off, off+len) of the last axis.
template <class R>
Tensor<R> slice_last(const Tensor<R> & x, int off, int len) {
    const i64 L = x.shape().back();
    if (off < 0 || len <= 0 || off + len > L)
        throw dimension_error("slice_last: [" + std::to_string(off) + "," +
                              std::to_string(off + len) + ") out of axis " + std::to_string(L));
    const i64 rows = x.size() / L;
    Shape out_shape(x.shape());
    out_shape.back() = len;
    std::vector<R> out(static_cast<size_t>(rows * len));
    const R * xp = x.data().data();
    for (i64 r = 0; r < rows; ++r)
        std::copy(xp + r * L + off, xp + r * L + off + len, out.data() + r * len);
    if (!x.on_tape()) return Tensor<R>(std::move(out_shape), std::move(out));
    const int xn = x.node();
    auto back = [xn, rows, L, off, len](Tape<R> & tp, int self) {
        const auto & g = tp.out_grad(self);
        auto & gx = tp.grad_buf(xn, rows * L);
        for (i64 r = 0; r < rows; ++r)
            for (i64 j = 0; j < len; ++j) gx[size_t(r * L + off + j)] += g[size_t(r * len + j)];
    };
    return detail::make_result(std::move(out_shape), std::move(out), x.tape(), std::move(back));
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------
template <class R>
Tensor<R> sum_all(const Tensor<R> & x) {
    R acc = R(0);
    for (const R v : x.data()) acc += v;
    if (!x.on_tape()) return Tensor<R>::scalar_of(acc);
    const int xn = x.node();
    const i64 n = x.size();
    auto back = [xn, n](Tape<R> & tp, int self) {
        const R g = tp.out_grad(self)[0];
        auto & gx = tp.grad_buf(xn, n);
        for (i64 i = 0; i < n; ++i) gx[size_t(i)] += g;
    };
    return detail::make_result(Shape{1}, std::vector<R>{acc}, x.tape(), std::move(back));
}

// x viewed as [rows, rest] -> per-row sum, shape [rows].
template <class R>
Tensor<R> sum_per_row(const Tensor<R> & x, i64 rows) {
    if (rows <= 0 || x.size() % rows != 0)
        throw dimension_error("sum_per_row: rows " + std::to_string(rows) +
                              " does not divide " + shape_str(x.shape()));
    const i64 cols = x.size() / rows;
    std::vector<R> out(size_t(rows), R(0));
    const R * xp = x.data().data();
    for (i64 r = 0; r < rows; ++r) {
        R acc = R(0);
        for (i64 j = 0; j < cols; ++j) acc += xp[r * cols + j];
        out[size_t(r)] = acc;
    }
    if (!x.on_tape()) return Tensor<R>(Shape{int(rows)}, std::move(out));
    const int xn = x.node();
    auto back = [xn, rows, cols](Tape<R> & tp, int self) {
        const auto & g = tp.out_grad(self);
        auto & gx = tp.grad_buf(xn, rows * cols);
        for (i64 r = 0; r < rows; ++r)
            for (i64 j = 0; j < cols; ++j) gx[size_t(r * cols + j)] += g[size_t(r)];
    };
    return detail::make_result(Shape{int(rows)}, std::move(out), x.tape(), std::move(back));
}

template <class R>
Tensor<R> dot(const Tensor<R> & a, const Tensor<R> & b) {
    if (a.size() != b.size())
        throw dimension_error("dot: size mismatch " + shape_str(a.shape()) + " vs " +
                              shape_str(b.shape()));
    R acc = R(0);
    for (i64 i = 0; i < a.size(); ++i) acc += a.data()[size_t(i)] * b.data()[size_t(i)];
    Tape<R> * tape = detail::common_tape(a, b);
    if (!tape) return Tensor<R>::scalar_of(acc);
    auto ad = a.ptr();
    auto bd = b.ptr();
    const int an = a.on_tape() ? a.node() : -1;
    const int bn = b.on_tape() ? b.node() : -1;
    const i64 n = a.size();
    auto back = [ad, bd, an, bn, n](Tape<R> & tp, int self) {
        const R g = tp.out_grad(self)[0];
        if (an >= 0) {
            auto & ga = tp.grad_buf(an, n);
            for (i64 i = 0; i < n; ++i) ga[size_t(i)] += g * bd->v[size_t(i)];
        }
        if (bn >= 0) {
            auto & gb = tp.grad_buf(bn, n);
            for (i64 i = 0; i < n; ++i) gb[size_t(i)] += g * ad->v[size_t(i)];
        }
    };
    return detail::make_result(Shape{1}, std::vector<R>{acc}, tape, std::move(back));
}

// Cuts the tape: returns the same values as a constant.
template <class R>
Tensor<R> detach(const Tensor<R> & x) {
    return Tensor<R>(x.shape(), x.data());
}

}  // namespace lightdp
