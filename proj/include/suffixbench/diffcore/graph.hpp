#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "suffixbench/common.hpp"
#include "suffixbench/diffcore/blas.hpp"
#include "suffixbench/diffcore/tensor.hpp"
#include "suffixbench/rng.hpp"

namespace suffixbench::diffcore {

template <class S>
struct Node;

template <class S>
using NodePtr = std::shared_ptr<Node<S>>;

// One value on the reverse-mode tape. Creation order doubles as the
// topological identity used by backward().
template <class S>
struct Node {
    Tensor<S> value;
    Tensor<S> grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    bool needs_grad = false;
    std::uint64_t id = 0;
    std::string name;      // parameters only
    std::string init_tag;  // parameters only
    std::vector<NodePtr<S>> inputs;
    std::function<void()> backward_fn;
    bool backward_root_done = false;

    void ensure_grad() {
        if (grad.data.empty()) grad = Tensor<S>(value.shape);
    }
    bool has_grad() const { return !grad.data.empty(); }
};

inline std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter{0};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

// Forward-only evaluation: while a guard is alive on this thread, new ops do
// not register backward rules and gradient tracking stops at their outputs.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
    ~NoGradGuard() { grad_mode() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline std::atomic<long>& zero_mask_warnings() {
    static std::atomic<long> counter{0};
    return counter;
}

template <class S>
NodePtr<S> leaf(Tensor<S> value, bool requires_grad = false, std::string name = "") {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->needs_grad = requires_grad;
    n->name = std::move(name);
    n->id = next_node_id();
    return n;
}

template <class S>
NodePtr<S> make_op(Tensor<S> value, std::vector<NodePtr<S>> inputs) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    if (grad_mode()) {
        n->inputs = std::move(inputs);
        for (const auto& in : n->inputs)
            if (in->needs_grad) n->needs_grad = true;
    }
    n->id = next_node_id();
    return n;
}

[[noreturn]] inline void shape_error(const std::string& op, const std::vector<long>& a,
                                     const std::vector<long>& b) {
    throw Error(op + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

// ---------------------------------------------------------------------------
// Matrix products

template <class S>
NodePtr<S> matmul(NodePtr<S> a, NodePtr<S> b) {
    if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(0))
        shape_error("matmul", a->value.shape, b->value.shape);
    long m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
    Tensor<S> out({m, n});
    gemm(false, false, m, n, k, S(1), a->value.ptr(), k, b->value.ptr(), n, S(0), out.ptr(), n);
    auto node = make_op(std::move(out), {a, b});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, a, b, m, n, k]() {
            const S* g = raw->grad.ptr();
            if (a->needs_grad) {
                a->ensure_grad();
                gemm(false, true, m, k, n, S(1), g, n, b->value.ptr(), n, S(1), a->grad.ptr(), k);
            }
            if (b->needs_grad) {
                b->ensure_grad();
                gemm(true, false, k, n, m, S(1), a->value.ptr(), k, g, n, S(1), b->grad.ptr(), n);
            }
        };
    }
    return node;
}

// C[g] = alpha * op(A[g]) * op(B[g]) over the leading (batch) dimension.
template <class S>
NodePtr<S> batched_matmul(NodePtr<S> a, NodePtr<S> b, bool trans_a = false, bool trans_b = false,
                          S alpha = S(1)) {
    if (a->value.rank() != 3 || b->value.rank() != 3 || a->value.dim(0) != b->value.dim(0))
        shape_error("batched_matmul", a->value.shape, b->value.shape);
    long groups = a->value.dim(0);
    long m = trans_a ? a->value.dim(2) : a->value.dim(1);
    long k = trans_a ? a->value.dim(1) : a->value.dim(2);
    long kb = trans_b ? b->value.dim(2) : b->value.dim(1);
    long n = trans_b ? b->value.dim(1) : b->value.dim(2);
    if (k != kb) shape_error("batched_matmul", a->value.shape, b->value.shape);

    long a_ld = a->value.dim(2), b_ld = b->value.dim(2);
    long a_stride = a->value.dim(1) * a_ld, b_stride = b->value.dim(1) * b_ld;
    Tensor<S> out({groups, m, n});
    for (long g = 0; g < groups; ++g) {
        gemm(trans_a, trans_b, m, n, k, alpha, a->value.ptr() + g * a_stride, a_ld,
             b->value.ptr() + g * b_stride, b_ld, S(0), out.ptr() + g * m * n, n);
    }
    auto node = make_op(std::move(out), {a, b});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, a, b, trans_a, trans_b, alpha, groups, m, n, k, a_ld, b_ld, a_stride,
                             b_stride]() {
            for (long g = 0; g < groups; ++g) {
                const S* gp = raw->grad.ptr() + g * m * n;
                const S* ap = a->value.ptr() + g * a_stride;
                const S* bp = b->value.ptr() + g * b_stride;
                if (a->needs_grad) {
                    a->ensure_grad();
                    S* gap = a->grad.ptr() + g * a_stride;
                    if (!trans_a)  // dA += alpha * dC * op(B)^T
                        gemm(false, !trans_b, m, k, n, alpha, gp, n, bp, b_ld, S(1), gap, a_ld);
                    else  // dA_raw += alpha * op(B) * dC^T
                        gemm(trans_b, true, k, m, n, alpha, bp, b_ld, gp, n, S(1), gap, a_ld);
                }
                if (b->needs_grad) {
                    b->ensure_grad();
                    S* gbp = b->grad.ptr() + g * b_stride;
                    if (!trans_b)  // dB += alpha * op(A)^T * dC
                        gemm(!trans_a, false, k, n, m, alpha, ap, a_ld, gp, n, S(1), gbp, b_ld);
                    else  // dB_raw += alpha * dC^T * op(A)
                        gemm(true, trans_a, n, k, m, alpha, gp, n, ap, a_ld, S(1), gbp, b_ld);
                }
            }
        };
    }
    return node;
}

// y = x*W (+ bias), with x flattened over its leading dimensions.
template <class S>
NodePtr<S> linear(NodePtr<S> x, NodePtr<S> w, NodePtr<S> bias = nullptr) {
    if (x->value.rank() < 2 || w->value.rank() != 2 ||
        x->value.dim(x->value.rank() - 1) != w->value.dim(0))
        shape_error("linear", x->value.shape, w->value.shape);
    long din = w->value.dim(0), dout = w->value.dim(1);
    long rows = x->value.size() / din;
    if (bias && bias->value.size() != dout) shape_error("linear bias", bias->value.shape, w->value.shape);

    std::vector<long> out_shape = x->value.shape;
    out_shape.back() = dout;
    Tensor<S> out(out_shape);
    gemm(false, false, rows, dout, din, S(1), x->value.ptr(), din, w->value.ptr(), dout, S(0),
         out.ptr(), dout);
    if (bias) {
        S* o = out.ptr();
        const S* bp = bias->value.ptr();
        for (long r = 0; r < rows; ++r)
            for (long c = 0; c < dout; ++c) o[r * dout + c] += bp[c];
    }
    std::vector<NodePtr<S>> ins = {x, w};
    if (bias) ins.push_back(bias);
    auto node = make_op(std::move(out), std::move(ins));
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, x, w, bias, rows, din, dout]() {
            const S* g = raw->grad.ptr();
            if (x->needs_grad) {
                x->ensure_grad();
                gemm(false, true, rows, din, dout, S(1), g, dout, w->value.ptr(), dout, S(1),
                     x->grad.ptr(), din);
            }
            if (w->needs_grad) {
                w->ensure_grad();
                gemm(true, false, din, dout, rows, S(1), x->value.ptr(), din, g, dout, S(1),
                     w->grad.ptr(), dout);
            }
            if (bias && bias->needs_grad) {
                bias->ensure_grad();
                S* bg = bias->grad.ptr();
                for (long r = 0; r < rows; ++r)
                    for (long c = 0; c < dout; ++c) bg[c] += g[r * dout + c];
            }
        };
    }
    return node;
}

// ---------------------------------------------------------------------------
// Elementwise

template <class S>
NodePtr<S> add(NodePtr<S> a, NodePtr<S> b) {
    if (!same_shape(a->value.shape, b->value.shape)) shape_error("add", a->value.shape, b->value.shape);
    Tensor<S> out = a->value;
    for (long i = 0; i < out.size(); ++i) out.data[static_cast<size_t>(i)] += b->value.data[static_cast<size_t>(i)];
    auto node = make_op(std::move(out), {a, b});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, a, b]() {
            for (auto& in : {a, b}) {
                if (!in->needs_grad) continue;
                in->ensure_grad();
                for (long i = 0; i < raw->grad.size(); ++i)
                    in->grad.data[static_cast<size_t>(i)] += raw->grad.data[static_cast<size_t>(i)];
            }
        };
    }
    return node;
}

template <class S>
NodePtr<S> sub(NodePtr<S> a, NodePtr<S> b) {
    if (!same_shape(a->value.shape, b->value.shape)) shape_error("sub", a->value.shape, b->value.shape);
    Tensor<S> out = a->value;
    for (long i = 0; i < out.size(); ++i) out.data[static_cast<size_t>(i)] -= b->value.data[static_cast<size_t>(i)];
    auto node = make_op(std::move(out), {a, b});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, a, b]() {
            if (a->needs_grad) {
                a->ensure_grad();
                for (long i = 0; i < raw->grad.size(); ++i)
                    a->grad.data[static_cast<size_t>(i)] += raw->grad.data[static_cast<size_t>(i)];
            }
            if (b->needs_grad) {
                b->ensure_grad();
                for (long i = 0; i < raw->grad.size(); ++i)
                    b->grad.data[static_cast<size_t>(i)] -= raw->grad.data[static_cast<size_t>(i)];
            }
        };
    }
    return node;
}

template <class S>
NodePtr<S> mul(NodePtr<S> a, NodePtr<S> b) {
    if (!same_shape(a->value.shape, b->value.shape)) shape_error("mul", a->value.shape, b->value.shape);
    Tensor<S> out = a->value;
    for (long i = 0; i < out.size(); ++i) out.data[static_cast<size_t>(i)] *= b->value.data[static_cast<size_t>(i)];
    auto node = make_op(std::move(out), {a, b});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, a, b]() {
            if (a->needs_grad) {
                a->ensure_grad();
                for (long i = 0; i < raw->grad.size(); ++i)
                    a->grad.data[static_cast<size_t>(i)] +=
                        raw->grad.data[static_cast<size_t>(i)] * b->value.data[static_cast<size_t>(i)];
            }
            if (b->needs_grad) {
                b->ensure_grad();
                for (long i = 0; i < raw->grad.size(); ++i)
                    b->grad.data[static_cast<size_t>(i)] +=
                        raw->grad.data[static_cast<size_t>(i)] * a->value.data[static_cast<size_t>(i)];
            }
        };
    }
    return node;
}

// y = scale*x + shift
template <class S>
NodePtr<S> affine(NodePtr<S> x, S scale, S shift = S(0)) {
    Tensor<S> out = x->value;
    for (auto& v : out.data) v = scale * v + shift;
    auto node = make_op(std::move(out), {x});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, x, scale]() {
            x->ensure_grad();
            for (long i = 0; i < raw->grad.size(); ++i)
                x->grad.data[static_cast<size_t>(i)] += scale * raw->grad.data[static_cast<size_t>(i)];
        };
    }
    return node;
}

template <class S, class Fwd, class Bwd>
NodePtr<S> unary_op(NodePtr<S> x, Fwd fwd, Bwd grad_from_in_out) {
    Tensor<S> out = x->value;
    for (auto& v : out.data) v = fwd(v);
    auto node = make_op(std::move(out), {x});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, x, grad_from_in_out]() {
            x->ensure_grad();
            for (long i = 0; i < raw->grad.size(); ++i) {
                size_t j = static_cast<size_t>(i);
                x->grad.data[j] += raw->grad.data[j] * grad_from_in_out(x->value.data[j], raw->value.data[j]);
            }
        };
    }
    return node;
}

template <class S>
NodePtr<S> sigmoid(NodePtr<S> x) {
    return unary_op(
        x, [](S v) { return S(1) / (S(1) + std::exp(-v)); }, [](S, S y) { return y * (S(1) - y); });
}

template <class S>
NodePtr<S> tanh_op(NodePtr<S> x) {
    return unary_op(
        x, [](S v) { return std::tanh(v); }, [](S, S y) { return S(1) - y * y; });
}

template <class S>
NodePtr<S> relu(NodePtr<S> x) {
    return unary_op(
        x, [](S v) { return v > S(0) ? v : S(0); }, [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <class S>
NodePtr<S> exp_op(NodePtr<S> x) {
    return unary_op(
        x, [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

template <class S>
NodePtr<S> log_op(NodePtr<S> x) {
    return unary_op(
        x, [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; });
}

template <class S>
NodePtr<S> softplus(NodePtr<S> x) {
    return unary_op(
        x,
        [](S v) { return v > S(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
        [](S v, S) { return S(1) / (S(1) + std::exp(-v)); });
}

// log sigmoid(x), the gradient-safe form of log D used by the adversarial losses
template <class S>
NodePtr<S> logsigmoid(NodePtr<S> x) {
    return affine(softplus(affine(x, S(-1))), S(-1));
}

// ---------------------------------------------------------------------------
// Shape ops

template <class S>
NodePtr<S> reshape(NodePtr<S> x, std::vector<long> shape) {
    if (Tensor<S>::count(shape) != x->value.size()) shape_error("reshape", x->value.shape, shape);
    Tensor<S> out;
    out.shape = std::move(shape);
    out.data = x->value.data;
    auto node = make_op(std::move(out), {x});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, x]() {
            x->ensure_grad();
            for (long i = 0; i < raw->grad.size(); ++i)
                x->grad.data[static_cast<size_t>(i)] += raw->grad.data[static_cast<size_t>(i)];
        };
    }
    return node;
}

// Extract `len` entries starting at `start` along dimension `dim`.
template <class S>
NodePtr<S> slice(NodePtr<S> x, int dim, long start, long len) {
    const auto& shp = x->value.shape;
    if (dim < 0 || dim >= x->value.rank() || start < 0 || start + len > shp[static_cast<size_t>(dim)])
        throw Error("slice: range out of bounds for " + shape_str(shp));
    long outer = 1, inner = 1;
    for (int i = 0; i < dim; ++i) outer *= shp[static_cast<size_t>(i)];
    for (int i = dim + 1; i < x->value.rank(); ++i) inner *= shp[static_cast<size_t>(i)];
    long dim_size = shp[static_cast<size_t>(dim)];

    std::vector<long> out_shape = shp;
    out_shape[static_cast<size_t>(dim)] = len;
    Tensor<S> out(out_shape);
    for (long o = 0; o < outer; ++o)
        std::copy_n(x->value.ptr() + (o * dim_size + start) * inner, len * inner,
                    out.ptr() + o * len * inner);
    auto node = make_op(std::move(out), {x});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, x, outer, inner, dim_size, start, len]() {
            x->ensure_grad();
            for (long o = 0; o < outer; ++o) {
                const S* g = raw->grad.ptr() + o * len * inner;
                S* xg = x->grad.ptr() + (o * dim_size + start) * inner;
                for (long i = 0; i < len * inner; ++i) xg[i] += g[i];
            }
        };
    }
    return node;
}

template <class S>
NodePtr<S> concat_lastdim(NodePtr<S> a, NodePtr<S> b) {
    if (a->value.rank() != b->value.rank()) shape_error("concat", a->value.shape, b->value.shape);
    for (int i = 0; i + 1 < a->value.rank(); ++i)
        if (a->value.dim(i) != b->value.dim(i)) shape_error("concat", a->value.shape, b->value.shape);
    long da = a->value.dim(a->value.rank() - 1), db = b->value.dim(b->value.rank() - 1);
    long rows = a->value.size() / da;
    std::vector<long> out_shape = a->value.shape;
    out_shape.back() = da + db;
    Tensor<S> out(out_shape);
    for (long r = 0; r < rows; ++r) {
        std::copy_n(a->value.ptr() + r * da, da, out.ptr() + r * (da + db));
        std::copy_n(b->value.ptr() + r * db, db, out.ptr() + r * (da + db) + da);
    }
    auto node = make_op(std::move(out), {a, b});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, a, b, rows, da, db]() {
            if (a->needs_grad) {
                a->ensure_grad();
                for (long r = 0; r < rows; ++r)
                    for (long i = 0; i < da; ++i)
                        a->grad.data[static_cast<size_t>(r * da + i)] +=
                            raw->grad.data[static_cast<size_t>(r * (da + db) + i)];
            }
            if (b->needs_grad) {
                b->ensure_grad();
                for (long r = 0; r < rows; ++r)
                    for (long i = 0; i < db; ++i)
                        b->grad.data[static_cast<size_t>(r * db + i)] +=
                            raw->grad.data[static_cast<size_t>(r * (da + db) + da + i)];
            }
        };
    }
    return node;
}

// Stack per-position [B,d] nodes into a [B,n,d] sequence.
template <class S>
NodePtr<S> stack_positions(const std::vector<NodePtr<S>>& parts) {
    if (parts.empty()) throw Error("stack_positions: empty input");
    long b = parts[0]->value.dim(0), d = parts[0]->value.dim(1);
    long n = static_cast<long>(parts.size());
    Tensor<S> out({b, n, d});
    for (long t = 0; t < n; ++t) {
        if (!same_shape(parts[static_cast<size_t>(t)]->value.shape, parts[0]->value.shape))
            shape_error("stack_positions", parts[static_cast<size_t>(t)]->value.shape, parts[0]->value.shape);
        for (long r = 0; r < b; ++r)
            std::copy_n(parts[static_cast<size_t>(t)]->value.ptr() + r * d, d,
                        out.ptr() + (r * n + t) * d);
    }
    auto node = make_op(std::move(out), std::vector<NodePtr<S>>(parts.begin(), parts.end()));
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        auto held = parts;
        node->backward_fn = [raw, held, b, n, d]() {
            for (long t = 0; t < n; ++t) {
                auto& part = held[static_cast<size_t>(t)];
                if (!part->needs_grad) continue;
                part->ensure_grad();
                for (long r = 0; r < b; ++r)
                    for (long i = 0; i < d; ++i)
                        part->grad.data[static_cast<size_t>(r * d + i)] +=
                            raw->grad.data[static_cast<size_t>((r * n + t) * d + i)];
            }
        };
    }
    return node;
}

// [A,B,C,D] -> [A,C,B,D]; used to regroup attention heads.
template <class S>
NodePtr<S> permute_0213(NodePtr<S> x) {
    if (x->value.rank() != 4) throw Error("permute_0213: expects rank 4, got " + shape_str(x->value.shape));
    long d0 = x->value.dim(0), d1 = x->value.dim(1), d2 = x->value.dim(2), d3 = x->value.dim(3);
    Tensor<S> out({d0, d2, d1, d3});
    for (long a = 0; a < d0; ++a)
        for (long b = 0; b < d1; ++b)
            for (long c = 0; c < d2; ++c)
                std::copy_n(x->value.ptr() + ((a * d1 + b) * d2 + c) * d3, d3,
                            out.ptr() + ((a * d2 + c) * d1 + b) * d3);
    auto node = make_op(std::move(out), {x});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, x, d0, d1, d2, d3]() {
            x->ensure_grad();
            for (long a = 0; a < d0; ++a)
                for (long b = 0; b < d1; ++b)
                    for (long c = 0; c < d2; ++c) {
                        const S* g = raw->grad.ptr() + ((a * d2 + c) * d1 + b) * d3;
                        S* xg = x->grad.ptr() + ((a * d1 + b) * d2 + c) * d3;
                        for (long i = 0; i < d3; ++i) xg[i] += g[i];
                    }
        };
    }
    return node;
}

// Regroup [B,n,H*dk] into per-head matrices [B*H,n,dk] (and back). One copy
// instead of the reshape/permute/reshape chain.
template <class S>
NodePtr<S> split_heads(NodePtr<S> x, int heads) {
    if (x->value.rank() != 3 || x->value.dim(2) % heads != 0)
        throw Error("split_heads: bad shape " + shape_str(x->value.shape));
    long b = x->value.dim(0), n = x->value.dim(1), d = x->value.dim(2);
    long dk = d / heads;
    Tensor<S> out({b * heads, n, dk});
    for (long bi = 0; bi < b; ++bi)
        for (long t = 0; t < n; ++t)
            for (long h = 0; h < heads; ++h)
                std::copy_n(x->value.ptr() + (bi * n + t) * d + h * dk, dk,
                            out.ptr() + ((bi * heads + h) * n + t) * dk);
    auto node = make_op(std::move(out), {x});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, x, b, n, d, dk, heads]() {
            x->ensure_grad();
            for (long bi = 0; bi < b; ++bi)
                for (long t = 0; t < n; ++t)
                    for (long h = 0; h < heads; ++h) {
                        const S* g = raw->grad.ptr() + ((bi * heads + h) * n + t) * dk;
                        S* xg = x->grad.ptr() + (bi * n + t) * d + h * dk;
                        for (long i = 0; i < dk; ++i) xg[i] += g[i];
                    }
        };
    }
    return node;
}

template <class S>
NodePtr<S> merge_heads(NodePtr<S> x, int heads) {
    if (x->value.rank() != 3 || x->value.dim(0) % heads != 0)
        throw Error("merge_heads: bad shape " + shape_str(x->value.shape));
    long b = x->value.dim(0) / heads, n = x->value.dim(1), dk = x->value.dim(2);
    long d = dk * heads;
    Tensor<S> out({b, n, d});
    for (long bi = 0; bi < b; ++bi)
        for (long t = 0; t < n; ++t)
            for (long h = 0; h < heads; ++h)
                std::copy_n(x->value.ptr() + ((bi * heads + h) * n + t) * dk, dk,
                            out.ptr() + (bi * n + t) * d + h * dk);
    auto node = make_op(std::move(out), {x});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, x, b, n, d, dk, heads]() {
            x->ensure_grad();
            for (long bi = 0; bi < b; ++bi)
                for (long t = 0; t < n; ++t)
                    for (long h = 0; h < heads; ++h) {
                        const S* g = raw->grad.ptr() + (bi * n + t) * d + h * dk;
                        S* xg = x->grad.ptr() + ((bi * heads + h) * n + t) * dk;
                        for (long i = 0; i < dk; ++i) xg[i] += g[i];
                    }
        };
    }
    return node;
}

// Additive attention mask on grouped scores [B*H,m,n], broadcast over heads.
template <class S>
NodePtr<S> add_mask_grouped(NodePtr<S> scores, const Tensor<S>& mask, int heads) {
    if (scores->value.rank() != 3 || mask.rank() != 4 || mask.dim(1) != 1 ||
        mask.dim(0) * heads != scores->value.dim(0) || mask.dim(2) != scores->value.dim(1) ||
        mask.dim(3) != scores->value.dim(2))
        shape_error("add_mask_grouped", scores->value.shape, mask.shape);
    long b = mask.dim(0);
    long inner = scores->value.dim(1) * scores->value.dim(2);
    Tensor<S> out = scores->value;
    for (long bi = 0; bi < b; ++bi)
        for (long h = 0; h < heads; ++h) {
            S* o = out.ptr() + (bi * heads + h) * inner;
            const S* m = mask.ptr() + bi * inner;
            for (long i = 0; i < inner; ++i) o[i] += m[i];
        }
    auto node = make_op(std::move(out), {scores});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, scores]() {
            scores->ensure_grad();
            for (long i = 0; i < raw->grad.size(); ++i)
                scores->grad.data[static_cast<size_t>(i)] += raw->grad.data[static_cast<size_t>(i)];
        };
    }
    return node;
}

// ---------------------------------------------------------------------------
// Reductions

template <class S>
NodePtr<S> sum_all(NodePtr<S> x) {
    double acc = 0;
    for (S v : x->value.data) acc += static_cast<double>(v);
    auto node = make_op(Tensor<S>::scalar(static_cast<S>(acc)), {x});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, x]() {
            x->ensure_grad();
            S g = raw->grad.data[0];
            for (auto& v : x->grad.data) v += g;
        };
    }
    return node;
}

template <class S>
NodePtr<S> mean_all(NodePtr<S> x) {
    return affine(sum_all(x), S(1) / static_cast<S>(x->value.size()));
}

// ---------------------------------------------------------------------------
// Softmax and friends

// Softmax over the last dimension with max subtraction.
template <class S>
NodePtr<S> softmax_lastdim(NodePtr<S> x) {
    long d = x->value.dim(x->value.rank() - 1);
    long rows = x->value.size() / d;
    Tensor<S> out = x->value;
    for (long r = 0; r < rows; ++r) {
        S* row = out.ptr() + r * d;
        S mx = row[0];
        for (long i = 1; i < d; ++i) mx = std::max(mx, row[i]);
        double sum = 0;
        for (long i = 0; i < d; ++i) {
            row[i] = std::exp(row[i] - mx);
            sum += static_cast<double>(row[i]);
        }
        S inv = static_cast<S>(1.0 / sum);
        for (long i = 0; i < d; ++i) row[i] *= inv;
    }
    auto node = make_op(std::move(out), {x});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, x, rows, d]() {
            x->ensure_grad();
            for (long r = 0; r < rows; ++r) {
                const S* y = raw->value.ptr() + r * d;
                const S* g = raw->grad.ptr() + r * d;
                S* xg = x->grad.ptr() + r * d;
                double dot = 0;
                for (long i = 0; i < d; ++i) dot += static_cast<double>(g[i]) * y[i];
                for (long i = 0; i < d; ++i) xg[i] += (g[i] - static_cast<S>(dot)) * y[i];
            }
        };
    }
    return node;
}

// Additive attention mask, broadcast over dimension 1 (heads).
template <class S>
NodePtr<S> add_mask(NodePtr<S> scores, const Tensor<S>& mask) {
    if (scores->value.rank() != 4 || mask.rank() != 4 || mask.dim(1) != 1 ||
        mask.dim(0) != scores->value.dim(0) || mask.dim(2) != scores->value.dim(2) ||
        mask.dim(3) != scores->value.dim(3))
        shape_error("add_mask", scores->value.shape, mask.shape);
    long b = scores->value.dim(0), h = scores->value.dim(1);
    long inner = scores->value.dim(2) * scores->value.dim(3);
    Tensor<S> out = scores->value;
    for (long bi = 0; bi < b; ++bi)
        for (long hi = 0; hi < h; ++hi) {
            S* o = out.ptr() + (bi * h + hi) * inner;
            const S* m = mask.ptr() + bi * inner;
            for (long i = 0; i < inner; ++i) o[i] += m[i];
        }
    auto node = make_op(std::move(out), {scores});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, scores]() {
            scores->ensure_grad();
            for (long i = 0; i < raw->grad.size(); ++i)
                scores->grad.data[static_cast<size_t>(i)] += raw->grad.data[static_cast<size_t>(i)];
        };
    }
    return node;
}

// ---------------------------------------------------------------------------
// Embedding fusion primitives

// Gather rows of `table` [V,d] by integer index: out[b,i,:] = table[idx(b,i),:].
template <class S>
NodePtr<S> embedding_lookup(NodePtr<S> table, const IMat& idx) {
    long v = table->value.dim(0), d = table->value.dim(1);
    Tensor<S> out({idx.rows, idx.cols, d});
    for (long r = 0; r < idx.rows; ++r)
        for (long c = 0; c < idx.cols; ++c) {
            int a = idx.at(r, c);
            if (a < 0 || a >= v) throw Error("embedding_lookup: index " + std::to_string(a) + " out of range");
            std::copy_n(table->value.ptr() + a * d, d, out.ptr() + (r * idx.cols + c) * d);
        }
    auto node = make_op(std::move(out), {table});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        IMat idx_copy = idx;
        node->backward_fn = [raw, table, idx_copy, d]() {
            table->ensure_grad();
            for (long r = 0; r < idx_copy.rows; ++r)
                for (long c = 0; c < idx_copy.cols; ++c) {
                    const S* g = raw->grad.ptr() + (r * idx_copy.cols + c) * d;
                    S* tg = table->grad.ptr() + idx_copy.at(r, c) * d;
                    for (long i = 0; i < d; ++i) tg[i] += g[i];
                }
        };
    }
    return node;
}

// Rank expansion of per-position scalars: out[b,i,:] = scalars[b,i] * vec[:].
template <class S>
NodePtr<S> outer_scale(NodePtr<S> scalars, NodePtr<S> vec) {
    if (scalars->value.rank() != 2 || vec->value.rank() != 1)
        shape_error("outer_scale", scalars->value.shape, vec->value.shape);
    long b = scalars->value.dim(0), n = scalars->value.dim(1), d = vec->value.dim(0);
    Tensor<S> out({b, n, d});
    for (long r = 0; r < b * n; ++r) {
        S s = scalars->value.data[static_cast<size_t>(r)];
        for (long i = 0; i < d; ++i) out.data[static_cast<size_t>(r * d + i)] = s * vec->value.data[static_cast<size_t>(i)];
    }
    auto node = make_op(std::move(out), {scalars, vec});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, scalars, vec, b, n, d]() {
            if (scalars->needs_grad) {
                scalars->ensure_grad();
                for (long r = 0; r < b * n; ++r) {
                    double acc = 0;
                    for (long i = 0; i < d; ++i)
                        acc += static_cast<double>(raw->grad.data[static_cast<size_t>(r * d + i)]) *
                               vec->value.data[static_cast<size_t>(i)];
                    scalars->grad.data[static_cast<size_t>(r)] += static_cast<S>(acc);
                }
            }
            if (vec->needs_grad) {
                vec->ensure_grad();
                for (long r = 0; r < b * n; ++r) {
                    S s = scalars->value.data[static_cast<size_t>(r)];
                    for (long i = 0; i < d; ++i)
                        vec->grad.data[static_cast<size_t>(i)] +=
                            raw->grad.data[static_cast<size_t>(r * d + i)] * s;
                }
            }
        };
    }
    return node;
}

// Per-row constant scaling: out[r,:] = x[r,:] * col[r]. Used to mix
// teacher-forced and sampled decoder inputs row-wise.
template <class S>
NodePtr<S> mul_rows(NodePtr<S> x, const std::vector<S>& col) {
    if (x->value.rank() != 2 || static_cast<long>(col.size()) != x->value.dim(0))
        throw Error("mul_rows: column length mismatch for " + shape_str(x->value.shape));
    long rows = x->value.dim(0), cols = x->value.dim(1);
    Tensor<S> out = x->value;
    for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c) out.data[static_cast<size_t>(r * cols + c)] *= col[static_cast<size_t>(r)];
    auto node = make_op(std::move(out), {x});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        std::vector<S> col_copy = col;
        node->backward_fn = [raw, x, col_copy, rows, cols]() {
            x->ensure_grad();
            for (long r = 0; r < rows; ++r)
                for (long c = 0; c < cols; ++c)
                    x->grad.data[static_cast<size_t>(r * cols + c)] +=
                        raw->grad.data[static_cast<size_t>(r * cols + c)] * col_copy[static_cast<size_t>(r)];
        };
    }
    return node;
}

// ---------------------------------------------------------------------------
// Fused LSTM cell arithmetic. Gate preactivations are laid out [i | f | g | o]
// along the last dimension of `gates` [B, 4*dh].

// c' = sigmoid(f) * c + sigmoid(i) * tanh(g)
template <class S>
NodePtr<S> lstm_cell_state(NodePtr<S> gates, NodePtr<S> cell) {
    if (gates->value.rank() != 2 || cell->value.rank() != 2 ||
        gates->value.dim(1) != 4 * cell->value.dim(1) || gates->value.dim(0) != cell->value.dim(0))
        shape_error("lstm_cell_state", gates->value.shape, cell->value.shape);
    long b = cell->value.dim(0), dh = cell->value.dim(1);
    Tensor<S> out({b, dh});
    for (long r = 0; r < b; ++r) {
        const S* g = gates->value.ptr() + r * 4 * dh;
        const S* c = cell->value.ptr() + r * dh;
        S* o = out.ptr() + r * dh;
        for (long j = 0; j < dh; ++j) {
            S in_g = S(1) / (S(1) + std::exp(-g[j]));
            S f_g = S(1) / (S(1) + std::exp(-g[dh + j]));
            S cand = std::tanh(g[2 * dh + j]);
            o[j] = f_g * c[j] + in_g * cand;
        }
    }
    auto node = make_op(std::move(out), {gates, cell});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, gates, cell, b, dh]() {
            for (long r = 0; r < b; ++r) {
                const S* g = gates->value.ptr() + r * 4 * dh;
                const S* c = cell->value.ptr() + r * dh;
                const S* dy = raw->grad.ptr() + r * dh;
                S* gg = nullptr;
                S* gc = nullptr;
                if (gates->needs_grad) {
                    gates->ensure_grad();
                    gg = gates->grad.ptr() + r * 4 * dh;
                }
                if (cell->needs_grad) {
                    cell->ensure_grad();
                    gc = cell->grad.ptr() + r * dh;
                }
                for (long j = 0; j < dh; ++j) {
                    S in_g = S(1) / (S(1) + std::exp(-g[j]));
                    S f_g = S(1) / (S(1) + std::exp(-g[dh + j]));
                    S cand = std::tanh(g[2 * dh + j]);
                    if (gg) {
                        gg[j] += dy[j] * cand * in_g * (S(1) - in_g);
                        gg[dh + j] += dy[j] * c[j] * f_g * (S(1) - f_g);
                        gg[2 * dh + j] += dy[j] * in_g * (S(1) - cand * cand);
                    }
                    if (gc) gc[j] += dy[j] * f_g;
                }
            }
        };
    }
    return node;
}

// h' = sigmoid(o) * tanh(c')
template <class S>
NodePtr<S> lstm_cell_output(NodePtr<S> gates, NodePtr<S> cell_next) {
    if (gates->value.rank() != 2 || cell_next->value.rank() != 2 ||
        gates->value.dim(1) != 4 * cell_next->value.dim(1) ||
        gates->value.dim(0) != cell_next->value.dim(0))
        shape_error("lstm_cell_output", gates->value.shape, cell_next->value.shape);
    long b = cell_next->value.dim(0), dh = cell_next->value.dim(1);
    Tensor<S> out({b, dh});
    for (long r = 0; r < b; ++r) {
        const S* g = gates->value.ptr() + r * 4 * dh;
        const S* c = cell_next->value.ptr() + r * dh;
        S* o = out.ptr() + r * dh;
        for (long j = 0; j < dh; ++j) {
            S o_g = S(1) / (S(1) + std::exp(-g[3 * dh + j]));
            o[j] = o_g * std::tanh(c[j]);
        }
    }
    auto node = make_op(std::move(out), {gates, cell_next});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, gates, cell_next, b, dh]() {
            for (long r = 0; r < b; ++r) {
                const S* g = gates->value.ptr() + r * 4 * dh;
                const S* c = cell_next->value.ptr() + r * dh;
                const S* dy = raw->grad.ptr() + r * dh;
                S* gg = nullptr;
                S* gc = nullptr;
                if (gates->needs_grad) {
                    gates->ensure_grad();
                    gg = gates->grad.ptr() + r * 4 * dh;
                }
                if (cell_next->needs_grad) {
                    cell_next->ensure_grad();
                    gc = cell_next->grad.ptr() + r * dh;
                }
                for (long j = 0; j < dh; ++j) {
                    S o_g = S(1) / (S(1) + std::exp(-g[3 * dh + j]));
                    S th = std::tanh(c[j]);
                    if (gg) gg[3 * dh + j] += dy[j] * th * o_g * (S(1) - o_g);
                    if (gc) gc[j] += dy[j] * o_g * (S(1) - th * th);
                }
            }
        };
    }
    return node;
}

// ---------------------------------------------------------------------------
// Regularization

// Inverted dropout. Identity at p=0 or in eval mode (no rng draws either way).
template <class S>
NodePtr<S> dropout(NodePtr<S> x, double p, RngStream* rng, bool train) {
    if (!train || p == 0.0) return x;
    if (p < 0.0 || p >= 1.0) throw Error("dropout: p must be in [0,1)");
    if (!rng) throw Error("dropout: rng required in train mode");
    Tensor<S> out = x->value;
    std::vector<S> mask(out.data.size());
    const S scale = static_cast<S>(1.0 / (1.0 - p));
    for (size_t i = 0; i < out.data.size(); ++i) {
        mask[i] = rng->uniform01() >= p ? scale : S(0);
        out.data[i] *= mask[i];
    }
    auto node = make_op(std::move(out), {x});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        auto mask_copy = std::move(mask);
        node->backward_fn = [raw, x, mask_copy]() {
            x->ensure_grad();
            for (size_t i = 0; i < mask_copy.size(); ++i)
                x->grad.data[i] += raw->grad.data[i] * mask_copy[i];
        };
    }
    return node;
}

// Layer normalization over the last dimension, with learnable gain and shift.
template <class S>
NodePtr<S> layer_norm(NodePtr<S> x, NodePtr<S> gamma, NodePtr<S> beta, S eps = S(1e-5)) {
    long d = x->value.dim(x->value.rank() - 1);
    if (gamma->value.size() != d || beta->value.size() != d)
        shape_error("layer_norm", x->value.shape, gamma->value.shape);
    long rows = x->value.size() / d;
    Tensor<S> out(x->value.shape);
    Tensor<S> xhat(x->value.shape);
    std::vector<S> inv_std(static_cast<size_t>(rows));
    for (long r = 0; r < rows; ++r) {
        const S* xr = x->value.ptr() + r * d;
        double mean = 0;
        for (long i = 0; i < d; ++i) mean += xr[i];
        mean /= d;
        double var = 0;
        for (long i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
        var /= d;
        S istd = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        inv_std[static_cast<size_t>(r)] = istd;
        for (long i = 0; i < d; ++i) {
            S xh = (xr[i] - static_cast<S>(mean)) * istd;
            xhat.data[static_cast<size_t>(r * d + i)] = xh;
            out.data[static_cast<size_t>(r * d + i)] = xh * gamma->value.data[static_cast<size_t>(i)] +
                                                       beta->value.data[static_cast<size_t>(i)];
        }
    }
    auto node = make_op(std::move(out), {x, gamma, beta});
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        auto xhat_copy = std::make_shared<Tensor<S>>(std::move(xhat));
        auto istd_copy = std::make_shared<std::vector<S>>(std::move(inv_std));
        node->backward_fn = [raw, x, gamma, beta, xhat_copy, istd_copy, rows, d]() {
            for (long r = 0; r < rows; ++r) {
                const S* g = raw->grad.ptr() + r * d;
                const S* xh = xhat_copy->ptr() + r * d;
                if (gamma->needs_grad) {
                    gamma->ensure_grad();
                    for (long i = 0; i < d; ++i) gamma->grad.data[static_cast<size_t>(i)] += g[i] * xh[i];
                }
                if (beta->needs_grad) {
                    beta->ensure_grad();
                    for (long i = 0; i < d; ++i) beta->grad.data[static_cast<size_t>(i)] += g[i];
                }
                if (x->needs_grad) {
                    x->ensure_grad();
                    double mean_gy = 0, mean_gyxh = 0;
                    for (long i = 0; i < d; ++i) {
                        double gy = static_cast<double>(g[i]) * gamma->value.data[static_cast<size_t>(i)];
                        mean_gy += gy;
                        mean_gyxh += gy * xh[i];
                    }
                    mean_gy /= d;
                    mean_gyxh /= d;
                    S istd = (*istd_copy)[static_cast<size_t>(r)];
                    S* xg = x->grad.ptr() + r * d;
                    for (long i = 0; i < d; ++i) {
                        double gy = static_cast<double>(g[i]) * gamma->value.data[static_cast<size_t>(i)];
                        xg[i] += static_cast<S>((gy - mean_gy - xh[i] * mean_gyxh) * istd);
                    }
                }
            }
        };
    }
    return node;
}

// ---------------------------------------------------------------------------
// Causal dilated 1-D convolution (left-padded, output length = input length)

template <class S>
NodePtr<S> causal_dilated_conv1d(NodePtr<S> x, NodePtr<S> w, NodePtr<S> bias, long dilation) {
    if (x->value.rank() != 3 || w->value.rank() != 3 || x->value.dim(2) != w->value.dim(1))
        shape_error("causal_dilated_conv1d", x->value.shape, w->value.shape);
    if (dilation < 1) throw Error("causal_dilated_conv1d: dilation must be >= 1");
    long b = x->value.dim(0), n = x->value.dim(1), cin = x->value.dim(2);
    long k = w->value.dim(0), cout = w->value.dim(2);
    if (bias && bias->value.size() != cout) shape_error("conv bias", bias->value.shape, w->value.shape);

    Tensor<S> out({b, n, cout});
    if (bias) {
        for (long r = 0; r < b * n; ++r)
            std::copy_n(bias->value.ptr(), cout, out.ptr() + r * cout);
    }
    // tap j looks back by (k-1-j)*dilation positions
    for (long j = 0; j < k; ++j) {
        long shift = (k - 1 - j) * dilation;
        if (shift >= n) continue;
        const S* wj = w->value.ptr() + j * cin * cout;
        for (long bi = 0; bi < b; ++bi) {
            const S* xs = x->value.ptr() + (bi * n) * cin;
            S* os = out.ptr() + (bi * n + shift) * cout;
            gemm(false, false, n - shift, cout, cin, S(1), xs, cin, wj, cout, S(1), os, cout);
        }
    }
    std::vector<NodePtr<S>> ins = {x, w};
    if (bias) ins.push_back(bias);
    auto node = make_op(std::move(out), std::move(ins));
    if (node->needs_grad) {
        Node<S>* raw = node.get();
        node->backward_fn = [raw, x, w, bias, dilation, b, n, cin, k, cout]() {
            for (long j = 0; j < k; ++j) {
                long shift = (k - 1 - j) * dilation;
                if (shift >= n) continue;
                const S* wj = w->value.ptr() + j * cin * cout;
                for (long bi = 0; bi < b; ++bi) {
                    const S* g = raw->grad.ptr() + (bi * n + shift) * cout;
                    if (x->needs_grad) {
                        x->ensure_grad();
                        S* xg = x->grad.ptr() + (bi * n) * cin;
                        gemm(false, true, n - shift, cin, cout, S(1), g, cout, wj, cout, S(1), xg, cin);
                    }
                    if (w->needs_grad) {
                        w->ensure_grad();
                        S* wg = w->grad.ptr() + j * cin * cout;
                        const S* xs = x->value.ptr() + (bi * n) * cin;
                        gemm(true, false, cin, cout, n - shift, S(1), xs, cin, g, cout, S(1), wg, cout);
                    }
                }
            }
            if (bias && bias->needs_grad) {
                bias->ensure_grad();
                for (long r = 0; r < b * n; ++r)
                    for (long c = 0; c < cout; ++c)
                        bias->grad.data[static_cast<size_t>(c)] += raw->grad.data[static_cast<size_t>(r * cout + c)];
            }
        };
    }
    return node;
}

// ---------------------------------------------------------------------------
// Losses

// Mean of -log softmax(logits)[target] over mask=1 positions.
template <class S>
NodePtr<S> cross_entropy_masked(NodePtr<S> logits, const IMat& targets, const FMat& mask) {
    if (logits->value.rank() != 3 || logits->value.dim(0) != targets.rows ||
        logits->value.dim(1) != targets.cols || targets.rows != mask.rows || targets.cols != mask.cols)
        throw Error("cross_entropy_masked: shape mismatch " + shape_str(logits->value.shape));
    long b = targets.rows, n = targets.cols, v = logits->value.dim(2);

    double count = 0;
    for (float m : mask.v) count += m;
    auto probs = std::make_shared<Tensor<S>>();
    double total = 0;
    if (count > 0) {
        *probs = Tensor<S>({b, n, v});
        for (long r = 0; r < b * n; ++r) {
            if (mask.v[static_cast<size_t>(r)] == 0.f) continue;
            int tgt = targets.v[static_cast<size_t>(r)];
            if (tgt < 0 || tgt >= v) throw Error("cross_entropy_masked: target out of range");
            const S* row = logits->value.ptr() + r * v;
            S mx = row[0];
            for (long i = 1; i < v; ++i) mx = std::max(mx, row[i]);
            double sum = 0;
            for (long i = 0; i < v; ++i) sum += std::exp(static_cast<double>(row[i] - mx));
            double lse = static_cast<double>(mx) + std::log(sum);
            total += lse - static_cast<double>(row[tgt]);
            S* pr = probs->ptr() + r * v;
            for (long i = 0; i < v; ++i)
                pr[i] = static_cast<S>(std::exp(static_cast<double>(row[i] - mx)) / sum);
        }
    } else {
        zero_mask_warnings().fetch_add(1, std::memory_order_relaxed);
    }
    auto node = make_op(Tensor<S>::scalar(count > 0 ? static_cast<S>(total / count) : S(0)), {logits});
    if (node->needs_grad && count > 0) {
        Node<S>* raw = node.get();
        IMat tgt_copy = targets;
        FMat mask_copy = mask;
        node->backward_fn = [raw, logits, probs, tgt_copy, mask_copy, b, n, v, count]() {
            logits->ensure_grad();
            S g = raw->grad.data[0];
            S inv = static_cast<S>(1.0 / count);
            for (long r = 0; r < b * n; ++r) {
                if (mask_copy.v[static_cast<size_t>(r)] == 0.f) continue;
                const S* pr = probs->ptr() + r * v;
                S* lg = logits->grad.ptr() + r * v;
                int tgt = tgt_copy.v[static_cast<size_t>(r)];
                for (long i = 0; i < v; ++i) lg[i] += g * inv * (pr[i] - (i == tgt ? S(1) : S(0)));
            }
        };
    }
    return node;
}

// Mean of (pred - target)^2 over mask=1 positions.
template <class S>
NodePtr<S> mse_masked(NodePtr<S> pred, const FMat& target, const FMat& mask) {
    if (pred->value.size() != target.rows * target.cols || target.rows != mask.rows ||
        target.cols != mask.cols)
        throw Error("mse_masked: shape mismatch " + shape_str(pred->value.shape));
    double count = 0;
    for (float m : mask.v) count += m;
    double total = 0;
    if (count > 0) {
        for (long i = 0; i < pred->value.size(); ++i) {
            size_t j = static_cast<size_t>(i);
            if (mask.v[j] == 0.f) continue;
            double diff = static_cast<double>(pred->value.data[j]) - static_cast<double>(target.v[j]);
            total += diff * diff;
        }
    } else {
        zero_mask_warnings().fetch_add(1, std::memory_order_relaxed);
    }
    auto node = make_op(Tensor<S>::scalar(count > 0 ? static_cast<S>(total / count) : S(0)), {pred});
    if (node->needs_grad && count > 0) {
        Node<S>* raw = node.get();
        FMat tgt_copy = target;
        FMat mask_copy = mask;
        node->backward_fn = [raw, pred, tgt_copy, mask_copy, count]() {
            pred->ensure_grad();
            S g = raw->grad.data[0];
            S inv = static_cast<S>(2.0 / count);
            for (long i = 0; i < pred->value.size(); ++i) {
                size_t j = static_cast<size_t>(i);
                if (mask_copy.v[j] == 0.f) continue;
                pred->grad.data[j] +=
                    g * inv * (pred->value.data[j] - static_cast<S>(tgt_copy.v[j]));
            }
        };
    }
    return node;
}

// softmax((logits + Gumbel noise) / tau); differentiable w.r.t. logits.
template <class S>
NodePtr<S> gumbel_softmax_sample(NodePtr<S> logits, double tau, RngStream& rng) {
    if (tau <= 0.0) throw Error("gumbel_softmax_sample: tau must be > 0");
    Tensor<S> noise(logits->value.shape);
    for (auto& v : noise.data) v = static_cast<S>(rng.gumbel());
    auto noise_leaf = leaf(std::move(noise));
    auto shifted = add(logits, noise_leaf);
    return softmax_lastdim(affine(shifted, static_cast<S>(1.0 / tau)));
}

// ---------------------------------------------------------------------------
// Reverse pass

template <class S>
void backward(const NodePtr<S>& loss) {
    if (loss->value.size() != 1) throw Error("backward: root must be scalar, got " + shape_str(loss->value.shape));
    if (loss->backward_root_done) throw Error("backward: repeated backward without reset");
    loss->backward_root_done = true;

    // Collect the reachable subgraph that needs gradients.
    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> seen;
    std::vector<Node<S>*> stack{loss.get()};
    seen.insert(loss.get());
    while (!stack.empty()) {
        Node<S>* cur = stack.back();
        stack.pop_back();
        order.push_back(cur);
        for (const auto& in : cur->inputs) {
            if (!in->needs_grad) continue;
            if (seen.insert(in.get()).second) stack.push_back(in.get());
        }
    }
    std::sort(order.begin(), order.end(), [](Node<S>* a, Node<S>* b) { return a->id > b->id; });

    loss->ensure_grad();
    loss->grad.data[0] = S(1);
    for (Node<S>* node : order) {
        if (node->backward_fn && node->has_grad()) node->backward_fn();
    }
}

template <class S>
int argmax_row(const Tensor<S>& t, long row, long width) {
    const S* p = t.ptr() + row * width;
    int best = 0;
    for (long i = 1; i < width; ++i)
        if (p[i] > p[best]) best = static_cast<int>(i);
    return best;
}

}  // namespace suffixbench::diffcore
