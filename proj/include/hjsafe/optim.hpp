#pragma once

#include <cmath>
#include <cstdint>

#include "hjsafe/nn.hpp"

namespace hjsafe::nn {

enum class OptAlgo : uint32_t { sgd = 0, adam = 1 };

template <class T>
struct OptimizerState {
    OptAlgo algo = OptAlgo::sgd;
    int64_t step_count = 0;
    T lr = T(1e-3);
    T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);
    std::vector<Tensor<T>> m_W, m_b, v_W, v_b;  // adam moments, empty for sgd

    static OptimizerState sgd_for(const Net<T>&, T lr) {
        OptimizerState s;
        s.algo = OptAlgo::sgd;
        s.lr = lr;
        return s;
    }

    static OptimizerState adam_for(const Net<T>& net, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
                                   T eps = T(1e-8)) {
        OptimizerState s;
        s.algo = OptAlgo::adam;
        s.lr = lr;
        s.beta1 = beta1;
        s.beta2 = beta2;
        s.eps = eps;
        for (const auto& l : net.layers) {
            s.m_W.emplace_back(l.W.shape);
            s.m_b.emplace_back(l.b.shape);
            s.v_W.emplace_back(l.W.shape);
            s.v_b.emplace_back(l.b.shape);
        }
        return s;
    }
};

namespace detail {

template <class T>
void adam_update(T* p, const T* g, T* m, T* v, size_t n, T lr, T b1, T b2, T eps, int64_t t) {
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(b1), static_cast<double>(t)));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(b2), static_cast<double>(t)));
    for (size_t i = 0; i < n; ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        const T mh = m[i] / bc1;
        const T vh = v[i] / bc2;
        p[i] -= lr * mh / (static_cast<T>(std::sqrt(static_cast<double>(vh))) + eps);
    }
}

}  // namespace detail

// Requires exclusive access to net and opt. Rejects non-finite gradients.
template <class T>
void optimizer_step(Net<T>& net, const GradientBundle<T>& grads, OptimizerState<T>& opt) {
    if (grads.dW.size() != net.layers.size())
        throw ShapeError("gradient bundle does not mirror the net");
    if (!grads.all_finite()) throw Error("optimizer_step: non-finite gradient entries");
    opt.step_count += 1;
    for (size_t i = 0; i < net.layers.size(); ++i) {
        auto& l = net.layers[i];
        if (!l.has_params()) continue;
        if (grads.dW[i].shape != l.W.shape || grads.db[i].shape != l.b.shape)
            throw ShapeError("gradient shape mismatch at layer " + std::to_string(i));
        if (opt.algo == OptAlgo::sgd) {
            for (size_t j = 0; j < l.W.numel(); ++j) l.W[j] -= opt.lr * grads.dW[i][j];
            for (size_t j = 0; j < l.b.numel(); ++j) l.b[j] -= opt.lr * grads.db[i][j];
        } else {
            detail::adam_update(l.W.ptr(), grads.dW[i].ptr(), opt.m_W[i].ptr(), opt.v_W[i].ptr(),
                                l.W.numel(), opt.lr, opt.beta1, opt.beta2, opt.eps,
                                opt.step_count);
            detail::adam_update(l.b.ptr(), grads.db[i].ptr(), opt.m_b[i].ptr(), opt.v_b[i].ptr(),
                                l.b.numel(), opt.lr, opt.beta1, opt.beta2, opt.eps,
                                opt.step_count);
        }
    }
}

}  // namespace hjsafe::nn
