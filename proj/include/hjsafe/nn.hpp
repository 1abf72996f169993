#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hjsafe/rng.hpp"
#include "hjsafe/tensor.hpp"

namespace hjsafe::nn {

enum class LayerKind : uint32_t { dense = 0, conv2d = 1, relu = 2, flatten = 3 };

inline const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::flatten: return "flatten";
    }
    return "?";
}

// One layer record. dense: W [out,in], b [out]. conv2d: W [oc,ic,kh,kw],
// b [oc], stride >= 1, zero padding. relu/flatten carry no parameters.
template <class T>
struct Layer {
    LayerKind kind;
    int in = 0, out = 0;                              // dense
    int in_c = 0, out_c = 0, kh = 0, kw = 0;          // conv2d
    int stride = 1, pad = 0;                          // conv2d
    Tensor<T> W, b;

    bool has_params() const { return kind == LayerKind::dense || kind == LayerKind::conv2d; }
};

template <class T>
struct Net {
    std::vector<int> input_shape;
    std::vector<Layer<T>> layers;

    size_t param_count() const {
        size_t n = 0;
        for (const auto& l : layers) n += l.W.numel() + l.b.numel();
        return n;
    }

    template <class U>
    Net<U> cast() const {
        Net<U> out;
        out.input_shape = input_shape;
        for (const auto& l : layers) {
            Layer<U> m;
            m.kind = l.kind;
            m.in = l.in; m.out = l.out;
            m.in_c = l.in_c; m.out_c = l.out_c; m.kh = l.kh; m.kw = l.kw;
            m.stride = l.stride; m.pad = l.pad;
            m.W = l.W.template cast<U>();
            m.b = l.b.template cast<U>();
            out.layers.push_back(std::move(m));
        }
        return out;
    }
};

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// Shape of the data flowing out of layer index `upto` (exclusive end).
template <class T>
std::vector<int> shape_after(const Net<T>& net, size_t upto) {
    std::vector<int> s = net.input_shape;
    for (size_t i = 0; i < upto; ++i) {
        const auto& l = net.layers[i];
        switch (l.kind) {
            case LayerKind::dense:
                if (s.size() != 1 || s[0] != l.in)
                    throw ShapeError("layer " + std::to_string(i) + " (dense): input shape " +
                                     shape_str(s) + " does not match in=" + std::to_string(l.in));
                s = {l.out};
                break;
            case LayerKind::conv2d: {
                if (s.size() != 3 || s[0] != l.in_c)
                    throw ShapeError("layer " + std::to_string(i) + " (conv2d): input shape " +
                                     shape_str(s) + " does not match in_c=" + std::to_string(l.in_c));
                const int oh = conv_out_dim(s[1], l.kh, l.stride, l.pad);
                const int ow = conv_out_dim(s[2], l.kw, l.stride, l.pad);
                if (oh <= 0 || ow <= 0)
                    throw ShapeError("layer " + std::to_string(i) + " (conv2d): kernel exceeds input");
                s = {l.out_c, oh, ow};
                break;
            }
            case LayerKind::relu:
                break;
            case LayerKind::flatten: {
                int n = 1;
                for (int d : s) n *= d;
                s = {n};
                break;
            }
        }
    }
    return s;
}

template <class T>
std::vector<int> output_shape(const Net<T>& net) {
    return shape_after(net, net.layers.size());
}

// --- builders ---

template <class T>
void add_dense(Net<T>& net, int out) {
    auto s = output_shape(net);
    if (s.size() != 1)
        throw ShapeError("dense after non-flat shape " + shape_str(s) + "; add flatten first");
    Layer<T> l;
    l.kind = LayerKind::dense;
    l.in = s[0];
    l.out = out;
    l.W = Tensor<T>({out, s[0]});
    l.b = Tensor<T>({out});
    net.layers.push_back(std::move(l));
}

template <class T>
void add_conv2d(Net<T>& net, int out_c, int k, int stride, int pad) {
    auto s = output_shape(net);
    if (s.size() != 3) throw ShapeError("conv2d needs a CHW input, got " + shape_str(s));
    Layer<T> l;
    l.kind = LayerKind::conv2d;
    l.in_c = s[0];
    l.out_c = out_c;
    l.kh = l.kw = k;
    l.stride = stride;
    l.pad = pad;
    l.W = Tensor<T>({out_c, s[0], k, k});
    l.b = Tensor<T>({out_c});
    net.layers.push_back(std::move(l));
    output_shape(net);  // validates
}

template <class T>
void add_relu(Net<T>& net) {
    Layer<T> l;
    l.kind = LayerKind::relu;
    net.layers.push_back(std::move(l));
}

template <class T>
void add_flatten(Net<T>& net) {
    Layer<T> l;
    l.kind = LayerKind::flatten;
    net.layers.push_back(std::move(l));
}

// Glorot-uniform weights, zero biases.
template <class T>
void init_params(Net<T>& net, Rng& rng) {
    for (auto& l : net.layers) {
        if (!l.has_params()) continue;
        double fan_in, fan_out;
        if (l.kind == LayerKind::dense) {
            fan_in = l.in;
            fan_out = l.out;
        } else {
            fan_in = static_cast<double>(l.in_c) * l.kh * l.kw;
            fan_out = static_cast<double>(l.out_c) * l.kh * l.kw;
        }
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& w : l.W.data) w = static_cast<T>(rng.uniform(-bound, bound));
        l.b.fill(T(0));
    }
}

// Mirrors a net's parameters; also carries the gradient w.r.t. the input.
template <class T>
struct GradientBundle {
    std::vector<Tensor<T>> dW, db;
    Tensor<T> dinput;
    T loss = T(0);

    static GradientBundle like(const Net<T>& net) {
        GradientBundle g;
        g.dW.reserve(net.layers.size());
        g.db.reserve(net.layers.size());
        for (const auto& l : net.layers) {
            g.dW.emplace_back(l.W.shape);
            g.db.emplace_back(l.b.shape);
        }
        return g;
    }

    void add(const GradientBundle& o) {
        for (size_t i = 0; i < dW.size(); ++i) {
            for (size_t j = 0; j < dW[i].numel(); ++j) dW[i][j] += o.dW[i][j];
            for (size_t j = 0; j < db[i].numel(); ++j) db[i][j] += o.db[i][j];
        }
        loss += o.loss;
    }

    void scale(T s) {
        for (auto& t : dW)
            for (auto& v : t.data) v *= s;
        for (auto& t : db)
            for (auto& v : t.data) v *= s;
        loss *= s;
    }

    void zero() {
        for (auto& t : dW) t.fill(T(0));
        for (auto& t : db) t.fill(T(0));
        loss = T(0);
    }

    bool all_finite() const {
        for (const auto& t : dW)
            if (!t.all_finite()) return false;
        for (const auto& t : db)
            if (!t.all_finite()) return false;
        return true;
    }
};

// Per-call activation storage so forward/backward stay pure w.r.t. the net.
// Reuse one cache per thread to avoid reallocation.
template <class T>
struct ForwardCache {
    std::vector<Tensor<T>> inputs;  // input of each layer
    std::vector<Tensor<T>> cols;    // im2col scratch per conv layer (empty otherwise)
    Tensor<T> output;
};

namespace detail {

template <class T>
void im2col(const T* x, int ic, int h, int w, int kh, int kw, int stride, int pad, int oh, int ow,
            T* cols) {
    // cols layout: [ic*kh*kw][oh*ow]
    const int n = oh * ow;
    for (int c = 0; c < ic; ++c) {
        const T* xc = x + static_cast<size_t>(c) * h * w;
        for (int r = 0; r < kh; ++r) {
            for (int q = 0; q < kw; ++q) {
                T* dst = cols + (static_cast<size_t>(c) * kh * kw + static_cast<size_t>(r) * kw + q) * n;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + r;
                    T* drow = dst + static_cast<size_t>(oy) * ow;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < ow; ++ox) drow[ox] = T(0);
                        continue;
                    }
                    const T* xrow = xc + static_cast<size_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + q;
                        drow[ox] = (ix >= 0 && ix < w) ? xrow[ix] : T(0);
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_add(const T* cols, int ic, int h, int w, int kh, int kw, int stride, int pad, int oh,
                int ow, T* dx) {
    const int n = oh * ow;
    for (int c = 0; c < ic; ++c) {
        T* xc = dx + static_cast<size_t>(c) * h * w;
        for (int r = 0; r < kh; ++r) {
            for (int q = 0; q < kw; ++q) {
                const T* src = cols + (static_cast<size_t>(c) * kh * kw + static_cast<size_t>(r) * kw + q) * n;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + r;
                    if (iy < 0 || iy >= h) continue;
                    const T* srow = src + static_cast<size_t>(oy) * ow;
                    T* xrow = xc + static_cast<size_t>(iy) * w;
                    for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride - pad + q;
                        if (ix >= 0 && ix < w) xrow[ix] += srow[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

template <class T>
void forward_cached(const Net<T>& net, const Tensor<T>& input, ForwardCache<T>& cache) {
    if (input.shape != net.input_shape)
        throw ShapeError("net input shape " + shape_str(input.shape) + " expected " +
                         shape_str(net.input_shape));
    const size_t L = net.layers.size();
    cache.inputs.resize(L);
    cache.cols.resize(L);

    Tensor<T> cur = input;
    for (size_t i = 0; i < L; ++i) {
        const auto& l = net.layers[i];
        cache.inputs[i] = cur;
        switch (l.kind) {
            case LayerKind::dense: {
                if (cur.numel() != static_cast<size_t>(l.in))
                    throw ShapeError("layer " + std::to_string(i) + " (dense): got " +
                                     shape_str(cur.shape));
                Tensor<T> y({l.out});
                const T* x = cur.ptr();
                for (int o = 0; o < l.out; ++o) {
                    const T* wr = l.W.ptr() + static_cast<size_t>(o) * l.in;
                    T acc = l.b[o];
                    for (int j = 0; j < l.in; ++j) acc += wr[j] * x[j];
                    y[o] = acc;
                }
                cur = std::move(y);
                break;
            }
            case LayerKind::conv2d: {
                if (cur.shape.size() != 3 || cur.shape[0] != l.in_c)
                    throw ShapeError("layer " + std::to_string(i) + " (conv2d): got " +
                                     shape_str(cur.shape));
                const int h = cur.shape[1], w = cur.shape[2];
                const int oh = conv_out_dim(h, l.kh, l.stride, l.pad);
                const int ow = conv_out_dim(w, l.kw, l.stride, l.pad);
                const int K = l.in_c * l.kh * l.kw, N = oh * ow;
                auto& cols = cache.cols[i];
                if (cols.shape != std::vector<int>{K, N}) cols = Tensor<T>({K, N});
                detail::im2col(cur.ptr(), l.in_c, h, w, l.kh, l.kw, l.stride, l.pad, oh, ow,
                               cols.ptr());
                Tensor<T> y({l.out_c, oh, ow});
                for (int oc = 0; oc < l.out_c; ++oc) {
                    T* yr = y.ptr() + static_cast<size_t>(oc) * N;
                    const T bias = l.b[oc];
                    for (int t = 0; t < N; ++t) yr[t] = bias;
                    const T* wr = l.W.ptr() + static_cast<size_t>(oc) * K;
                    for (int k = 0; k < K; ++k) {
                        const T wv = wr[k];
                        const T* cr = cols.ptr() + static_cast<size_t>(k) * N;
                        for (int t = 0; t < N; ++t) yr[t] += wv * cr[t];
                    }
                }
                cur = std::move(y);
                break;
            }
            case LayerKind::relu: {
                for (auto& v : cur.data) v = v > T(0) ? v : T(0);
                break;
            }
            case LayerKind::flatten: {
                cur.shape = {static_cast<int>(cur.numel())};
                break;
            }
        }
    }
    cache.output = std::move(cur);
}

template <class T>
Tensor<T> forward(const Net<T>& net, const Tensor<T>& input) {
    ForwardCache<T> cache;
    forward_cached(net, input, cache);
    return cache.output;
}

// Gradient of the scalar loss whose output-gradient is loss_grad, with
// respect to every parameter and to the input. Accumulates into `grads`
// (zero it first for a standalone result).
template <class T>
void backward_into(const Net<T>& net, const ForwardCache<T>& cache, const Tensor<T>& loss_grad,
                   GradientBundle<T>& grads) {
    const auto out_shape = output_shape(net);
    if (loss_grad.numel() != Tensor<T>::numel_of(out_shape))
        throw ShapeError("loss_grad shape " + shape_str(loss_grad.shape) +
                         " does not match net output " + shape_str(out_shape));

    Tensor<T> d = loss_grad;
    for (size_t ii = net.layers.size(); ii-- > 0;) {
        const auto& l = net.layers[ii];
        const Tensor<T>& x = cache.inputs[ii];
        switch (l.kind) {
            case LayerKind::dense: {
                Tensor<T> dx(x.shape);
                T* dxp = dx.ptr();
                const T* dyp = d.ptr();
                for (int o = 0; o < l.out; ++o) {
                    const T g = dyp[o];
                    grads.db[ii][o] += g;
                    T* dwr = grads.dW[ii].ptr() + static_cast<size_t>(o) * l.in;
                    const T* wr = l.W.ptr() + static_cast<size_t>(o) * l.in;
                    const T* xp = x.ptr();
                    for (int j = 0; j < l.in; ++j) {
                        dwr[j] += g * xp[j];
                        dxp[j] += g * wr[j];
                    }
                }
                d = std::move(dx);
                break;
            }
            case LayerKind::conv2d: {
                const int h = x.shape[1], w = x.shape[2];
                const int oh = conv_out_dim(h, l.kh, l.stride, l.pad);
                const int ow = conv_out_dim(w, l.kw, l.stride, l.pad);
                const int K = l.in_c * l.kh * l.kw, N = oh * ow;
                const auto& cols = cache.cols[ii];
                // dW, db
                for (int oc = 0; oc < l.out_c; ++oc) {
                    const T* dyr = d.ptr() + static_cast<size_t>(oc) * N;
                    T dbacc = T(0);
                    for (int t = 0; t < N; ++t) dbacc += dyr[t];
                    grads.db[ii][oc] += dbacc;
                    T* dwr = grads.dW[ii].ptr() + static_cast<size_t>(oc) * K;
                    for (int k = 0; k < K; ++k) {
                        const T* cr = cols.ptr() + static_cast<size_t>(k) * N;
                        T acc = T(0);
                        for (int t = 0; t < N; ++t) acc += dyr[t] * cr[t];
                        dwr[k] += acc;
                    }
                }
                // dcols -> dx
                Tensor<T> dcols({K, N});
                for (int oc = 0; oc < l.out_c; ++oc) {
                    const T* dyr = d.ptr() + static_cast<size_t>(oc) * N;
                    const T* wr = l.W.ptr() + static_cast<size_t>(oc) * K;
                    for (int k = 0; k < K; ++k) {
                        const T wv = wr[k];
                        T* dcr = dcols.ptr() + static_cast<size_t>(k) * N;
                        for (int t = 0; t < N; ++t) dcr[t] += wv * dyr[t];
                    }
                }
                Tensor<T> dx(x.shape);
                detail::col2im_add(dcols.ptr(), l.in_c, h, w, l.kh, l.kw, l.stride, l.pad, oh, ow,
                                   dx.ptr());
                d = std::move(dx);
                break;
            }
            case LayerKind::relu: {
                Tensor<T> dx(x.shape);
                for (size_t j = 0; j < x.numel(); ++j) dx[j] = x[j] > T(0) ? d[j] : T(0);
                d = std::move(dx);
                break;
            }
            case LayerKind::flatten: {
                d.shape = x.shape;
                break;
            }
        }
    }
    grads.dinput = std::move(d);
}

template <class T>
GradientBundle<T> backward(const Net<T>& net, const ForwardCache<T>& cache,
                           const Tensor<T>& loss_grad) {
    auto grads = GradientBundle<T>::like(net);
    backward_into(net, cache, loss_grad, grads);
    return grads;
}

// Convenience: MLP builder (dense layers with relu between, none after last).
template <class T>
Net<T> make_mlp(const std::vector<int>& widths, Rng& rng) {
    if (widths.size() < 2) throw ShapeError("mlp needs at least input and output widths");
    Net<T> net;
    net.input_shape = {widths[0]};
    for (size_t i = 1; i < widths.size(); ++i) {
        add_dense(net, widths[i]);
        if (i + 1 < widths.size()) add_relu(net);
    }
    init_params(net, rng);
    return net;
}

}  // namespace hjsafe::nn
