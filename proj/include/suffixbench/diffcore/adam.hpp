#pragma once

#include <cmath>
#include <vector>

#include "suffixbench/diffcore/graph.hpp"

namespace suffixbench::diffcore {

template <class S>
struct AdamState {
    struct Moments {
        Tensor<S> m;
        Tensor<S> v;
    };
    std::vector<Moments> moments;  // parallel to the parameter list
    long step_count = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void init(const std::vector<NodePtr<S>>& params) {
        moments.clear();
        for (const auto& p : params)
            moments.push_back({Tensor<S>(p->value.shape), Tensor<S>(p->value.shape)});
        step_count = 0;
    }
};

// One Adam update with bias correction. Gradients are zeroed afterwards.
template <class S>
void adam_step(std::vector<NodePtr<S>>& params, AdamState<S>& state) {
    if (state.moments.size() != params.size()) state.init(params);
    state.step_count += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        p->ensure_grad();
        auto& mom = state.moments[pi];
        for (size_t i = 0; i < p->value.data.size(); ++i) {
            double g = static_cast<double>(p->grad.data[i]);
            if (!std::isfinite(g)) throw Error("NaN gradient in parameter '" + p->name + "'");
            double m = state.beta1 * mom.m.data[i] + (1.0 - state.beta1) * g;
            double v = state.beta2 * mom.v.data[i] + (1.0 - state.beta2) * g * g;
            mom.m.data[i] = static_cast<S>(m);
            mom.v.data[i] = static_cast<S>(v);
            double update = state.lr * (m / bc1) / (std::sqrt(v / bc2) + state.eps);
            double next = static_cast<double>(p->value.data[i]) - update;
            if (!std::isfinite(next)) throw Error("non-finite value in parameter '" + p->name + "'");
            p->value.data[i] = static_cast<S>(next);
            p->grad.data[i] = S(0);
        }
    }
}

template <class S>
void zero_gradients(std::vector<NodePtr<S>>& params) {
    for (auto& p : params) {
        if (p->has_grad()) std::fill(p->grad.data.begin(), p->grad.data.end(), S(0));
    }
}

// Scales all gradients so their global L2 norm is at most max_norm.
template <class S>
double clip_global_norm(std::vector<NodePtr<S>>& params, double max_norm) {
    double sq = 0;
    for (const auto& p : params) {
        if (!p->has_grad()) continue;
        for (S g : p->grad.data) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0) {
        S scale = static_cast<S>(max_norm / norm);
        for (auto& p : params) {
            if (!p->has_grad()) continue;
            for (auto& g : p->grad.data) g *= scale;
        }
    }
    return norm;
}

}  // namespace suffixbench::diffcore
