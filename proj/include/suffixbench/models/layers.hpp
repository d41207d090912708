#pragma once

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "suffixbench/diffcore/graph.hpp"
#include "suffixbench/preprocess.hpp"

namespace suffixbench::models {

using diffcore::NodePtr;
using diffcore::Tensor;

template <class S>
constexpr S neg_inf() {
    return S(-1e30);  // additive mask value; exp() underflows to exactly 0
}

enum class Init { FanInUniform, Zeros, Ones };

// Parameter registry. Creation order is the checkpoint order and fixes the
// rng consumption of initialization.
template <class S>
struct ParamSet {
    std::vector<NodePtr<S>> params;

    NodePtr<S> add(const std::string& name, std::vector<long> shape, Init init, long fan_in,
                   RngStream& rng) {
        Tensor<S> t(shape);
        switch (init) {
            case Init::FanInUniform: {
                S bound = static_cast<S>(1.0 / std::sqrt(static_cast<double>(std::max(1L, fan_in))));
                for (auto& v : t.data) v = static_cast<S>((rng.uniform01() * 2.0 - 1.0)) * bound;
                break;
            }
            case Init::Zeros: break;
            case Init::Ones:
                for (auto& v : t.data) v = S(1);
                break;
        }
        auto p = diffcore::leaf(std::move(t), true, name);
        p->init_tag = init == Init::FanInUniform ? "fan_in_uniform" : (init == Init::Zeros ? "zeros" : "ones");
        params.push_back(p);
        return p;
    }
};

template <class S>
struct LinearLayer {
    NodePtr<S> w;
    NodePtr<S> b;

    static LinearLayer create(ParamSet<S>& ps, const std::string& name, long din, long dout,
                              RngStream& rng) {
        LinearLayer l;
        l.w = ps.add(name + ".w", {din, dout}, Init::FanInUniform, din, rng);
        l.b = ps.add(name + ".b", {dout}, Init::Zeros, din, rng);
        return l;
    }

    NodePtr<S> apply(NodePtr<S> x) const { return diffcore::linear(x, w, b); }
};

// ---------------------------------------------------------------------------
// LSTM

template <class S>
struct LstmLayer {
    NodePtr<S> wx;  // [din, 4*dh]
    NodePtr<S> wh;  // [dh, 4*dh]
    NodePtr<S> b;   // [4*dh]
    long dh = 0;

    static LstmLayer create(ParamSet<S>& ps, const std::string& name, long din, long dh,
                            RngStream& rng) {
        LstmLayer l;
        l.dh = dh;
        l.wx = ps.add(name + ".wx", {din, 4 * dh}, Init::FanInUniform, din, rng);
        l.wh = ps.add(name + ".wh", {dh, 4 * dh}, Init::FanInUniform, dh, rng);
        l.b = ps.add(name + ".b", {4 * dh}, Init::Zeros, din, rng);
        return l;
    }

    // (h', c') from input x [B,din] and previous (h, c) [B,dh]
    std::pair<NodePtr<S>, NodePtr<S>> step(NodePtr<S> x, NodePtr<S> h, NodePtr<S> c) const {
        auto gates = diffcore::add(diffcore::linear(x, wx, b), diffcore::matmul(h, wh));
        auto c_next = diffcore::lstm_cell_state(gates, c);
        auto h_next = diffcore::lstm_cell_output(gates, c_next);
        return {h_next, c_next};
    }
};

template <class S>
struct LstmStack {
    std::vector<LstmLayer<S>> layers;
    double dropout_p = 0.0;

    struct State {
        std::vector<std::pair<NodePtr<S>, NodePtr<S>>> hc;  // (h, c) per layer
    };

    static LstmStack create(ParamSet<S>& ps, const std::string& name, int n_layers, long d,
                            double dropout_p, RngStream& rng) {
        LstmStack s;
        s.dropout_p = dropout_p;
        for (int l = 0; l < n_layers; ++l)
            s.layers.push_back(LstmLayer<S>::create(ps, name + "." + std::to_string(l), d, d, rng));
        return s;
    }

    State initial_state(long batch) const {
        State st;
        for (const auto& layer : layers) {
            auto h = diffcore::leaf(Tensor<S>({batch, layer.dh}));
            auto c = diffcore::leaf(Tensor<S>({batch, layer.dh}));
            st.hc.emplace_back(h, c);
        }
        return st;
    }

    // One time step through the stack; returns the top-layer output.
    NodePtr<S> step(NodePtr<S> x, State& state, bool train, RngStream* rng) const {
        for (size_t l = 0; l < layers.size(); ++l) {
            auto [h, c] = layers[l].step(x, state.hc[l].first, state.hc[l].second);
            state.hc[l] = {h, c};
            x = diffcore::dropout(h, dropout_p, rng, train);
        }
        return x;
    }

    // Full sequence [B,n,d] -> per-position top outputs [B,n,d].
    NodePtr<S> forward_seq(NodePtr<S> z, State& state, bool train, RngStream* rng) const {
        long b = z->value.dim(0), n = z->value.dim(1), d = z->value.dim(2);
        std::vector<NodePtr<S>> outputs;
        outputs.reserve(static_cast<size_t>(n));
        for (long t = 0; t < n; ++t) {
            auto x = diffcore::reshape(diffcore::slice(z, 1, t, 1), {b, d});
            outputs.push_back(step(x, state, train, rng));
        }
        return diffcore::stack_positions(outputs);
    }
};

// ---------------------------------------------------------------------------
// Attention masks ({0, -inf} additive, [B,1,q,k])

template <class S>
Tensor<S> bidirectional_mask(const std::vector<int>& lengths, long n) {
    long b = static_cast<long>(lengths.size());
    Tensor<S> m({b, 1, n, n});
    for (long bi = 0; bi < b; ++bi)
        for (long q = 0; q < n; ++q)
            for (long k = 0; k < n; ++k)
                m.data[static_cast<size_t>(((bi * n) + q) * n + k)] =
                    k < lengths[static_cast<size_t>(bi)] ? S(0) : neg_inf<S>();
    return m;
}

template <class S>
Tensor<S> causal_mask(const std::vector<int>& lengths, long n) {
    long b = static_cast<long>(lengths.size());
    Tensor<S> m({b, 1, n, n});
    for (long bi = 0; bi < b; ++bi)
        for (long q = 0; q < n; ++q)
            for (long k = 0; k < n; ++k)
                m.data[static_cast<size_t>(((bi * n) + q) * n + k)] =
                    (k <= q && k < lengths[static_cast<size_t>(bi)]) ? S(0) : neg_inf<S>();
    return m;
}

template <class S>
Tensor<S> cross_mask(const std::vector<int>& memory_lengths, long n_query, long n_memory) {
    long b = static_cast<long>(memory_lengths.size());
    Tensor<S> m({b, 1, n_query, n_memory});
    for (long bi = 0; bi < b; ++bi)
        for (long q = 0; q < n_query; ++q)
            for (long k = 0; k < n_memory; ++k)
                m.data[static_cast<size_t>(((bi * n_query) + q) * n_memory + k)] =
                    k < memory_lengths[static_cast<size_t>(bi)] ? S(0) : neg_inf<S>();
    return m;
}

// ---------------------------------------------------------------------------
// Transformer

template <class S>
struct AttentionParams {
    NodePtr<S> ln_gamma, ln_beta;
    LinearLayer<S> q, k, v, o;

    static AttentionParams create(ParamSet<S>& ps, const std::string& name, long d, RngStream& rng) {
        AttentionParams a;
        a.ln_gamma = ps.add(name + ".ln.g", {d}, Init::Ones, d, rng);
        a.ln_beta = ps.add(name + ".ln.b", {d}, Init::Zeros, d, rng);
        a.q = LinearLayer<S>::create(ps, name + ".q", d, d, rng);
        a.k = LinearLayer<S>::create(ps, name + ".k", d, d, rng);
        a.v = LinearLayer<S>::create(ps, name + ".v", d, d, rng);
        a.o = LinearLayer<S>::create(ps, name + ".o", d, d, rng);
        return a;
    }
};

// softmax(Q K^T / sqrt(d_k) + M) V per head, heads split from d_latent.
template <class S>
NodePtr<S> multi_head_attention(const AttentionParams<S>& p, NodePtr<S> queries_in,
                                NodePtr<S> keys_in, const Tensor<S>& mask, int heads) {
    long d = queries_in->value.dim(2);
    long dk = d / heads;

    auto q = diffcore::split_heads(p.q.apply(queries_in), heads);
    auto k = diffcore::split_heads(p.k.apply(keys_in), heads);
    auto v = diffcore::split_heads(p.v.apply(keys_in), heads);

    auto scores = diffcore::batched_matmul(q, k, false, true,
                                           static_cast<S>(1.0 / std::sqrt(static_cast<double>(dk))));
    scores = diffcore::add_mask_grouped(scores, mask, heads);
    auto weights = diffcore::softmax_lastdim(scores);
    auto ctx = diffcore::merge_heads(diffcore::batched_matmul(weights, v), heads);
    return p.o.apply(ctx);
}

template <class S>
struct FfnParams {
    NodePtr<S> ln_gamma, ln_beta;
    LinearLayer<S> w1, w2;

    static FfnParams create(ParamSet<S>& ps, const std::string& name, long d, RngStream& rng) {
        FfnParams f;
        f.ln_gamma = ps.add(name + ".ln.g", {d}, Init::Ones, d, rng);
        f.ln_beta = ps.add(name + ".ln.b", {d}, Init::Zeros, d, rng);
        f.w1 = LinearLayer<S>::create(ps, name + ".w1", d, 4 * d, rng);
        f.w2 = LinearLayer<S>::create(ps, name + ".w2", 4 * d, d, rng);
        return f;
    }
};

// Pre-norm block: self-attention, optional cross-attention, feed-forward,
// each wrapped in x + dropout(sublayer(LN(x))).
template <class S>
struct TransformerBlock {
    AttentionParams<S> self_attn;
    std::optional<AttentionParams<S>> cross_attn;
    FfnParams<S> ffn;

    static TransformerBlock create(ParamSet<S>& ps, const std::string& name, long d, bool with_cross,
                                   RngStream& rng) {
        TransformerBlock blk;
        blk.self_attn = AttentionParams<S>::create(ps, name + ".self", d, rng);
        if (with_cross) blk.cross_attn = AttentionParams<S>::create(ps, name + ".cross", d, rng);
        blk.ffn = FfnParams<S>::create(ps, name + ".ffn", d, rng);
        return blk;
    }

    NodePtr<S> forward(NodePtr<S> x, const Tensor<S>& self_mask, NodePtr<S> memory,
                       const Tensor<S>* cross_mask_p, int heads, double dropout_p, bool train,
                       RngStream* rng) const {
        auto h = diffcore::layer_norm(x, self_attn.ln_gamma, self_attn.ln_beta);
        auto a = multi_head_attention(self_attn, h, h, self_mask, heads);
        x = diffcore::add(x, diffcore::dropout(a, dropout_p, rng, train));
        if (cross_attn) {
            auto hc = diffcore::layer_norm(x, cross_attn->ln_gamma, cross_attn->ln_beta);
            auto c = multi_head_attention(*cross_attn, hc, memory, *cross_mask_p, heads);
            x = diffcore::add(x, diffcore::dropout(c, dropout_p, rng, train));
        }
        auto hf = diffcore::layer_norm(x, ffn.ln_gamma, ffn.ln_beta);
        auto f = ffn.w2.apply(diffcore::relu(ffn.w1.apply(hf)));
        return diffcore::add(x, diffcore::dropout(f, dropout_p, rng, train));
    }
};

template <class S>
struct TransformerStack {
    std::vector<TransformerBlock<S>> blocks;
    NodePtr<S> final_gamma, final_beta;
    int heads = 1;
    double dropout_p = 0.0;

    static TransformerStack create(ParamSet<S>& ps, const std::string& name, int n_layers, long d,
                                   int heads, bool with_cross, double dropout_p, RngStream& rng) {
        TransformerStack s;
        s.heads = heads;
        s.dropout_p = dropout_p;
        for (int l = 0; l < n_layers; ++l)
            s.blocks.push_back(
                TransformerBlock<S>::create(ps, name + "." + std::to_string(l), d, with_cross, rng));
        s.final_gamma = ps.add(name + ".final_ln.g", {d}, Init::Ones, d, rng);
        s.final_beta = ps.add(name + ".final_ln.b", {d}, Init::Zeros, d, rng);
        return s;
    }

    NodePtr<S> forward(NodePtr<S> x, const Tensor<S>& self_mask, NodePtr<S> memory,
                       const Tensor<S>* cross_mask_p, bool train, RngStream* rng) const {
        for (const auto& blk : blocks)
            x = blk.forward(x, self_mask, memory, cross_mask_p, heads, dropout_p, train, rng);
        return diffcore::layer_norm(x, final_gamma, final_beta);
    }
};

// Sinusoidal absolute positions, tiled over the batch as a constant.
template <class S>
Tensor<S> sinusoidal_positions(long batch, long n, long d) {
    Tensor<S> pe({batch, n, d});
    for (long t = 0; t < n; ++t)
        for (long i = 0; i < d; ++i) {
            double angle = static_cast<double>(t) /
                           std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
            double v = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
            pe.data[static_cast<size_t>(t * d + i)] = static_cast<S>(v);
        }
    for (long b = 1; b < batch; ++b)
        std::copy_n(pe.ptr(), n * d, pe.ptr() + b * n * d);
    return pe;
}

// ---------------------------------------------------------------------------
// Dilated causal convolution stack (dilation doubles per layer)

template <class S>
struct ConvStack {
    struct Layer {
        NodePtr<S> w;  // [k, C, C]
        NodePtr<S> b;  // [C]
        long dilation = 1;
    };
    std::vector<Layer> layers;
    double dropout_p = 0.0;

    static ConvStack create(ParamSet<S>& ps, const std::string& name, int n_layers, long d,
                            long filter, double dropout_p, RngStream& rng) {
        ConvStack s;
        s.dropout_p = dropout_p;
        long dilation = 1;
        for (int l = 0; l < n_layers; ++l) {
            Layer layer;
            layer.w = ps.add(name + "." + std::to_string(l) + ".w", {filter, d, d}, Init::FanInUniform,
                             filter * d, rng);
            layer.b = ps.add(name + "." + std::to_string(l) + ".b", {d}, Init::Zeros, filter * d, rng);
            layer.dilation = dilation;
            dilation *= 2;
            s.layers.push_back(layer);
        }
        return s;
    }

    NodePtr<S> forward(NodePtr<S> x, bool train, RngStream* rng) const {
        for (const auto& layer : layers) {
            auto y = diffcore::tanh_op(diffcore::causal_dilated_conv1d(x, layer.w, layer.b, layer.dilation));
            x = diffcore::add(x, diffcore::dropout(y, dropout_p, rng, train));
        }
        return x;
    }
};

}  // namespace suffixbench::models
