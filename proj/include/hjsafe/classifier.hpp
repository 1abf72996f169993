#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hjsafe/dataset.hpp"
#include "hjsafe/encoder.hpp"
#include "hjsafe/optim.hpp"
#include "hjsafe/stats.hpp"

namespace hjsafe {

// Failure classifier h over latents. Sign convention: h <= -alpha on failure
// samples, h >= +alpha on safe samples, so the 0-sublevel set is the failure
// region and h plugs directly into the HJ margin role.
struct ClassifierHandle {
    nn::Net<float> net;  // d_z -> 64 -> 64 -> 1
    EncoderHandle encoder;
};

struct ClassifierConfig {
    float alpha = 0.1f;      // hinge margin
    float lambda_gp = 1.0f;  // target gradient norm
    float beta = 0.1f;       // penalty weight
    float lr = 1e-3f;
    int batch = 256;
    int epochs = 50;
    uint64_t seed = 0;
    double holdout_frac = 0.1;
    int batches_per_epoch = 0;  // 0: one pass over the training pool per epoch
};

inline ClassifierHandle build_classifier(const EncoderHandle& encoder, uint64_t seed) {
    ClassifierHandle c;
    c.encoder = encoder;
    Rng rng(seed);
    c.net = nn::make_mlp<float>({encoder.d_z, 64, 64, 1}, rng);
    return c;
}

// Hinge loss over a batch of latents: sum of relu(alpha + h) on failures and
// relu(alpha - h) on safe samples. Parameter gradients accumulate into
// `grads`; per-sample input gradients go to `dz` when provided (encoder
// chaining).
template <class T>
double hinge_loss_batch(const nn::Net<T>& net, const std::vector<std::vector<T>>& zs,
                        const std::vector<uint8_t>& is_failure, T alpha,
                        nn::GradientBundle<T>& grads,
                        std::vector<std::vector<T>>* dz = nullptr) {
    if (zs.empty()) throw Error("hinge_loss: empty batch");
    if (zs.size() != is_failure.size()) throw ShapeError("hinge_loss: label count mismatch");
    if (dz) dz->resize(zs.size());
    double loss = 0;
    nn::ForwardCache<T> cache;
    for (size_t i = 0; i < zs.size(); ++i) {
        nn::forward_cached(net, Tensor<T>({static_cast<int>(zs[i].size())}, zs[i]), cache);
        const T h = cache.output[0];
        T dh;
        if (is_failure[i]) {
            const T m = alpha + h;
            loss += m > T(0) ? static_cast<double>(m) : 0.0;
            dh = m > T(0) ? T(1) : T(0);
        } else {
            const T m = alpha - h;
            loss += m > T(0) ? static_cast<double>(m) : 0.0;
            dh = m > T(0) ? T(-1) : T(0);
        }
        nn::backward_into(net, cache, Tensor<T>({1}, {dh}), grads);
        if (dz) (*dz)[i] = grads.dinput.data;
    }
    return loss;
}

// Gradient penalty (||grad_z h(z)||_2 - lambda)^2 at a fixed interpolate,
// differentiated w.r.t. the MLP parameters by a tangent/adjoint double
// backward with the relu activation pattern held fixed (h is piecewise
// linear, so the pattern is locally constant). Bias gradients are zero for
// the same reason. Accumulates into `grads`, returns the penalty.
template <class T>
double gradient_penalty_at(const nn::Net<T>& net, const std::vector<T>& z_tilde, T lambda,
                           nn::GradientBundle<T>& grads) {
    for (const auto& l : net.layers)
        if (l.kind != nn::LayerKind::dense && l.kind != nn::LayerKind::relu)
            throw ShapeError("gradient_penalty: classifier must be a dense/relu MLP");
    const auto out_shape = nn::output_shape(net);
    if (out_shape != std::vector<int>{1})
        throw ShapeError("gradient_penalty: classifier output must be scalar");

    nn::ForwardCache<T> cache;
    nn::forward_cached(net, Tensor<T>({static_cast<int>(z_tilde.size())}, z_tilde), cache);
    const auto gb = nn::backward(net, cache, Tensor<T>({1}, {T(1)}));
    const std::vector<T>& g = gb.dinput.data;

    double gnorm = l2_norm(g);
    const double penalty = (gnorm - static_cast<double>(lambda)) * (gnorm - static_cast<double>(lambda));
    if (gnorm < 1e-12) return penalty;  // subgradient 0 at the kink

    // c = dP/dg
    const double scale = 2.0 * (gnorm - static_cast<double>(lambda)) / gnorm;
    std::vector<T> t(g.size());
    for (size_t i = 0; i < g.size(); ++i) t[i] = static_cast<T>(scale * static_cast<double>(g[i]));

    // tangent pass: directional derivative of h along c, masks fixed
    std::vector<std::vector<T>> t_in(net.layers.size());
    for (size_t k = 0; k < net.layers.size(); ++k) {
        const auto& l = net.layers[k];
        if (l.kind == nn::LayerKind::dense) {
            t_in[k] = t;
            std::vector<T> nt(static_cast<size_t>(l.out), T(0));
            for (int o = 0; o < l.out; ++o) {
                const T* wr = l.W.ptr() + static_cast<size_t>(o) * l.in;
                T acc = T(0);
                for (int j = 0; j < l.in; ++j) acc += wr[j] * t[j];
                nt[o] = acc;
            }
            t = std::move(nt);
        } else {  // relu: mask from the cached pre-activation
            const auto& pre = cache.inputs[k];
            for (size_t j = 0; j < t.size(); ++j)
                if (pre[j] <= T(0)) t[j] = T(0);
        }
    }

    // adjoint pass: dS/dW_k = l_k (x) t_in[k]
    std::vector<T> lvec{T(1)};
    for (size_t k = net.layers.size(); k-- > 0;) {
        const auto& l = net.layers[k];
        if (l.kind == nn::LayerKind::dense) {
            for (int o = 0; o < l.out; ++o) {
                const T lo = lvec[o];
                if (lo == T(0)) continue;
                T* dwr = grads.dW[k].ptr() + static_cast<size_t>(o) * l.in;
                const std::vector<T>& ti = t_in[k];
                for (int j = 0; j < l.in; ++j) dwr[j] += lo * ti[j];
            }
            std::vector<T> prev(static_cast<size_t>(l.in), T(0));
            for (int o = 0; o < l.out; ++o) {
                const T lo = lvec[o];
                const T* wr = l.W.ptr() + static_cast<size_t>(o) * l.in;
                for (int j = 0; j < l.in; ++j) prev[j] += lo * wr[j];
            }
            lvec = std::move(prev);
        } else {
            const auto& pre = cache.inputs[k];
            for (size_t j = 0; j < lvec.size(); ++j)
                if (pre[j] <= T(0)) lvec[j] = T(0);
        }
    }
    return penalty;
}

// The sampled form: z~ = u z_fail + (1-u) z_safe, u ~ U(0,1) from rng.
template <class T>
double gradient_penalty(const nn::Net<T>& net, const std::vector<T>& z_fail,
                        const std::vector<T>& z_safe, T lambda, Rng& rng,
                        nn::GradientBundle<T>& grads) {
    if (z_fail.size() != z_safe.size()) throw ShapeError("gradient_penalty: latent width mismatch");
    const double u = rng.uniform();
    std::vector<T> z(z_fail.size());
    for (size_t i = 0; i < z.size(); ++i)
        z[i] = static_cast<T>(u * static_cast<double>(z_fail[i]) +
                              (1.0 - u) * static_cast<double>(z_safe[i]));
    return gradient_penalty_at(net, z, lambda, grads);
}

struct ClassifierEpochRow {
    int epoch = 0;
    double loss = 0, acc_fail = 0, acc_safe = 0, pearson_r = 0;
};

struct ClassifierReport {
    std::vector<ClassifierEpochRow> rows;
    size_t penalty_pairs_evaluated = 0;
    size_t train_failure_samples = 0, train_safe_samples = 0;
    double final_acc_fail = 0, final_acc_safe = 0, final_pearson = 0;

    std::string to_csv() const {
        std::string s = "epoch,loss,acc_fail,acc_safe,pearson_r\n";
        char buf[160];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof(buf), "%d,%.6g,%.6g,%.6g,%.6g\n", r.epoch, r.loss,
                          r.acc_fail, r.acc_safe, r.pearson_r);
            s += buf;
        }
        return s;
    }
};

namespace detail {

struct SampleRef {
    uint32_t episode;
    uint32_t index;
};

}  // namespace detail

// Trains h on the dataset's observations; labels are failure_signal < 0.
// Balanced batches (half failure, half safe, drawn with replacement).
// Frozen encoders have their latents precomputed once; finetune mode chains
// hinge gradients through the encoder.
inline std::pair<ClassifierHandle, ClassifierReport> train_classifier(
    const ClassifierConfig& cfg, const EpisodeDataset& data, const EncoderHandle& encoder) {
    if (cfg.alpha <= 0 || cfg.lambda_gp <= 0) throw ConfigError("classifier: alpha, lambda > 0");
    if (cfg.beta < 0) throw ConfigError("classifier: beta >= 0");
    const size_t n_train_ep = data.train_episode_count(cfg.holdout_frac);

    std::vector<detail::SampleRef> train_fail, train_safe, hold_fail, hold_safe;
    for (size_t e = 0; e < data.episodes.size(); ++e) {
        const auto& ep = data.episodes[e];
        if (ep.frames.empty()) throw Error("train_classifier: dataset was collected without frames");
        for (size_t k = 0; k < ep.h.size(); ++k) {
            auto& fail_pool = e < n_train_ep ? train_fail : hold_fail;
            auto& safe_pool = e < n_train_ep ? train_safe : hold_safe;
            (ep.h[k] < 0 ? fail_pool : safe_pool)
                .push_back({static_cast<uint32_t>(e), static_cast<uint32_t>(k)});
        }
    }
    if (train_fail.empty() || train_safe.empty())
        throw Error("train_classifier: training episodes contain a single class");

    ClassifierHandle c = build_classifier(encoder, cfg.seed);
    const bool finetune = c.encoder.mode == EncoderMode::finetune;

    // frozen path: one latent per referenced sample, computed once
    auto precompute = [&](const std::vector<detail::SampleRef>& refs) {
        std::vector<LatentState> out(refs.size());
        parallel_for(static_cast<int64_t>(refs.size()), [&](int64_t i) {
            const auto& r = refs[static_cast<size_t>(i)];
            out[i] = encode(c.encoder, data.episodes[r.episode].frames[r.index]);
        });
        return out;
    };
    std::vector<LatentState> z_train_fail, z_train_safe;
    if (!finetune) {
        z_train_fail = precompute(train_fail);
        z_train_safe = precompute(train_safe);
    }

    auto opt = nn::OptimizerState<float>::adam_for(c.net, cfg.lr);
    auto enc_opt = nn::OptimizerState<float>::adam_for(c.encoder.net, cfg.lr);
    Rng rng(cfg.seed + 0x5eedULL);

    ClassifierReport report;
    report.train_failure_samples = train_fail.size();
    report.train_safe_samples = train_safe.size();

    const int half = std::max(1, cfg.batch / 2);
    int batches = cfg.batches_per_epoch;
    if (batches <= 0)
        batches = static_cast<int>(
            (train_fail.size() + train_safe.size() + cfg.batch - 1) / cfg.batch);

    auto evaluate = [&](ClassifierEpochRow& row) {
        const auto& ref_fail = hold_fail.empty() ? train_fail : hold_fail;
        const auto& ref_safe = hold_safe.empty() ? train_safe : hold_safe;
        nn::ForwardCache<float> cache;
        std::vector<double> hs, sig;
        size_t ok_fail = 0, ok_safe = 0;
        for (const auto& r : ref_fail) {
            const auto z = encode(c.encoder, data.episodes[r.episode].frames[r.index]);
            nn::forward_cached(c.net, Tensor<float>({c.encoder.d_z}, z), cache);
            const double h = cache.output[0];
            if (h <= 0) ++ok_fail;
            hs.push_back(h);
            sig.push_back(data.episodes[r.episode].h[r.index]);
        }
        for (const auto& r : ref_safe) {
            const auto z = encode(c.encoder, data.episodes[r.episode].frames[r.index]);
            nn::forward_cached(c.net, Tensor<float>({c.encoder.d_z}, z), cache);
            const double h = cache.output[0];
            if (h >= 0) ++ok_safe;
            hs.push_back(h);
            sig.push_back(data.episodes[r.episode].h[r.index]);
        }
        row.acc_fail = ref_fail.empty() ? 0 : double(ok_fail) / double(ref_fail.size());
        row.acc_safe = ref_safe.empty() ? 0 : double(ok_safe) / double(ref_safe.size());
        row.pearson_r = pearson(hs, sig);
    };

    std::vector<std::vector<float>> zs(static_cast<size_t>(2 * half));
    std::vector<uint8_t> labels(static_cast<size_t>(2 * half));
    std::vector<const Image*> batch_obs(zs.size());
    std::vector<std::vector<float>> dz;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0;
        for (int b = 0; b < batches; ++b) {
            for (int i = 0; i < half; ++i) {
                const size_t fi = static_cast<size_t>(rng.uniform_int(0, train_fail.size() - 1));
                const size_t si = static_cast<size_t>(rng.uniform_int(0, train_safe.size() - 1));
                labels[i] = 1;
                labels[half + i] = 0;
                if (finetune) {
                    const auto& rf = train_fail[fi];
                    const auto& rs = train_safe[si];
                    batch_obs[i] = &data.episodes[rf.episode].frames[rf.index];
                    batch_obs[half + i] = &data.episodes[rs.episode].frames[rs.index];
                } else {
                    zs[i] = z_train_fail[fi];
                    zs[half + i] = z_train_safe[si];
                }
            }
            if (finetune) {
                nn::ForwardCache<float> cache;
                for (size_t i = 0; i < batch_obs.size(); ++i)
                    zs[i] = encode_chw(c.encoder, image_to_chw(*batch_obs[i]), cache);
            }

            auto grads = nn::GradientBundle<float>::like(c.net);
            double loss = hinge_loss_batch<float>(c.net, zs, labels, cfg.alpha, grads,
                                                  finetune ? &dz : nullptr);
            if (cfg.beta > 0) {
                auto pgrads = nn::GradientBundle<float>::like(c.net);
                double penalty = 0;
                for (int i = 0; i < half; ++i) {
                    penalty += gradient_penalty<float>(c.net, zs[i], zs[half + i], cfg.lambda_gp,
                                                       rng, pgrads);
                    ++report.penalty_pairs_evaluated;
                }
                penalty /= half;
                pgrads.scale(cfg.beta / static_cast<float>(half));
                grads.add(pgrads);
                loss += cfg.beta * penalty;
            }
            if (!std::isfinite(loss))
                throw DivergenceError("classifier loss diverged at epoch " +
                                      std::to_string(epoch));
            optimizer_step(c.net, grads, opt);
            if (finetune) {
                auto egrads = nn::GradientBundle<float>::like(c.encoder.net);
                encode_batch_with_grad(c.encoder, batch_obs, dz, egrads);
                optimizer_step(c.encoder.net, egrads, enc_opt);
            }
            epoch_loss += loss;
        }
        ClassifierEpochRow row;
        row.epoch = epoch;
        row.loss = epoch_loss / batches;
        evaluate(row);
        report.rows.push_back(row);
    }
    if (!report.rows.empty()) {
        report.final_acc_fail = report.rows.back().acc_fail;
        report.final_acc_safe = report.rows.back().acc_safe;
        report.final_pearson = report.rows.back().pearson_r;
    }
    return {std::move(c), std::move(report)};
}

inline double h_value(const ClassifierHandle& c, const Image& o) {
    const auto z = encode(c.encoder, o);
    nn::ForwardCache<float> cache;
    nn::forward_cached(c.net, Tensor<float>({c.encoder.d_z}, z), cache);
    return cache.output[0];
}

inline void save_classifier(const ClassifierHandle& c, const std::string& base) {
    nn::save_net(c.net, base + ".nnck");
    save_encoder(c.encoder, base + "_encoder");
}

inline ClassifierHandle load_classifier(const std::string& base) {
    ClassifierHandle c;
    c.net = nn::load_net(base + ".nnck");
    c.encoder = load_encoder(base + "_encoder");
    return c;
}

}  // namespace hjsafe
