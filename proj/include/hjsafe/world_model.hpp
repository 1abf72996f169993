#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hjsafe/dataset.hpp"
#include "hjsafe/encoder.hpp"
#include "hjsafe/optim.hpp"

namespace hjsafe {

// Latent dynamics model: history-conditioned MLP predictor over encoded
// frames and encoded actions, trained with teacher forcing on the latent
// consistency loss, plus an optional half-resolution decoder that anchors
// the representation in the co-training regime.

// Scalar-templated nets so the full loss (including the encoder path) can be
// finite-difference checked in double.
template <class T>
struct WMCore {
    nn::Net<T> encoder;     // {3,h,w} -> {d_z}
    nn::Net<T> predictor;   // {H*(d_z+d_a)} -> {d_z}
    nn::Net<T> action_enc;  // {|A|} -> {d_a}
    std::optional<nn::Net<T>> decoder;  // {d_z} -> {3*(h/2)*(w/2)}
    int H = 3, d_z = 64, d_a = 8;
};

// One teacher-forced training window: H+1 ground-truth frames (CHW), H
// actions, and the half-resolution target for the decoder.
template <class T>
struct WMWindow {
    std::vector<Tensor<T>> frames;  // H+1, oldest first
    std::vector<int> actions;       // H
    Tensor<T> target_half;          // {3, h/2, w/2}; unused when no decoder
};

template <class T>
struct WMGrads {
    nn::GradientBundle<T> encoder, predictor, action_enc, decoder;

    static WMGrads like(const WMCore<T>& c) {
        WMGrads g;
        g.encoder = nn::GradientBundle<T>::like(c.encoder);
        g.predictor = nn::GradientBundle<T>::like(c.predictor);
        g.action_enc = nn::GradientBundle<T>::like(c.action_enc);
        if (c.decoder) g.decoder = nn::GradientBundle<T>::like(*c.decoder);
        return g;
    }
};

template <class T>
Tensor<T> action_one_hot(int action, int n = kNumActions) {
    Tensor<T> t({n});
    if (action < 0 || action >= n) throw ShapeError("action id out of range");
    t[action] = T(1);
    return t;
}

// Consistency term per Eq-style contract: mean over the batch of
// ||p(enc(o_{t-H:t}), phi(a_{t-H:t})) - enc(o_{t+1})||^2, plus
// decoder_weight * mean pixel MSE of reconstructing the target frame from
// its latent. Gradients accumulate into `grads`; the encoder only receives
// gradients when co_train is set.
template <class T>
double wm_loss(const WMCore<T>& core, const std::vector<WMWindow<T>>& batch, T decoder_weight,
               bool co_train, WMGrads<T>& grads, double* consistency_out = nullptr,
               double* recon_out = nullptr) {
    if (batch.empty()) throw Error("wm_loss: empty batch");
    const int H = core.H;
    const size_t B = batch.size();
    const int slot = core.d_z + core.d_a;

    double consistency = 0, recon = 0;
    std::vector<nn::ForwardCache<T>> enc_caches(static_cast<size_t>(H) + 1);
    std::vector<nn::ForwardCache<T>> act_caches(static_cast<size_t>(H));
    nn::ForwardCache<T> pred_cache, dec_cache;

    for (const auto& w : batch) {
        if (static_cast<int>(w.frames.size()) != H + 1 ||
            static_cast<int>(w.actions.size()) != H)
            throw ShapeError("wm_loss: window must hold H+1 frames and H actions");

        Tensor<T> pin({H * slot});
        for (int i = 0; i < H; ++i) {
            nn::forward_cached(core.encoder, w.frames[i], enc_caches[i]);
            nn::forward_cached(core.action_enc, action_one_hot<T>(w.actions[i]), act_caches[i]);
            for (int j = 0; j < core.d_z; ++j) pin[i * slot + j] = enc_caches[i].output[j];
            for (int j = 0; j < core.d_a; ++j)
                pin[i * slot + core.d_z + j] = act_caches[i].output[j];
        }
        nn::forward_cached(core.encoder, w.frames[H], enc_caches[H]);
        const auto& z_next = enc_caches[H].output;

        nn::forward_cached(core.predictor, pin, pred_cache);
        Tensor<T> dpred({core.d_z});
        double err = 0;
        for (int j = 0; j < core.d_z; ++j) {
            const T e = pred_cache.output[j] - z_next[j];
            err += static_cast<double>(e) * static_cast<double>(e);
            dpred[j] = T(2) * e / static_cast<T>(B);
        }
        consistency += err;

        nn::backward_into(core.predictor, pred_cache, dpred, grads.predictor);
        Tensor<T> dz_next({core.d_z});
        for (int j = 0; j < core.d_z; ++j) dz_next[j] = -dpred[j];

        for (int i = 0; i < H; ++i) {
            Tensor<T> dphi({core.d_a});
            for (int j = 0; j < core.d_a; ++j)
                dphi[j] = grads.predictor.dinput[i * slot + core.d_z + j];
            nn::backward_into(core.action_enc, act_caches[i], dphi, grads.action_enc);
            if (co_train) {
                Tensor<T> dz({core.d_z});
                for (int j = 0; j < core.d_z; ++j) dz[j] = grads.predictor.dinput[i * slot + j];
                nn::backward_into(core.encoder, enc_caches[i], dz, grads.encoder);
            }
        }

        if (core.decoder && decoder_weight > T(0)) {
            nn::forward_cached(*core.decoder, Tensor<T>({core.d_z}, z_next.data), dec_cache);
            const size_t npix = dec_cache.output.numel();
            if (w.target_half.numel() != npix)
                throw ShapeError("wm_loss: decoder target size mismatch");
            Tensor<T> ddec(dec_cache.output.shape);
            double rerr = 0;
            for (size_t j = 0; j < npix; ++j) {
                const T e = dec_cache.output[j] - w.target_half[j];
                rerr += static_cast<double>(e) * static_cast<double>(e);
                ddec[j] = T(2) * e * decoder_weight / static_cast<T>(npix) / static_cast<T>(B);
            }
            recon += rerr / static_cast<double>(npix);
            nn::backward_into(*core.decoder, dec_cache, ddec, grads.decoder);
            for (int j = 0; j < core.d_z; ++j) dz_next[j] += grads.decoder.dinput[j];
        }

        if (co_train) nn::backward_into(core.encoder, enc_caches[H], dz_next, grads.encoder);
    }
    consistency /= static_cast<double>(B);
    recon /= static_cast<double>(B);
    if (consistency_out) *consistency_out = consistency;
    if (recon_out) *recon_out = recon;
    return consistency + static_cast<double>(decoder_weight) * recon;
}

// Runtime handle over float nets.
struct WMHandle {
    EncoderHandle encoder;
    nn::Net<float> predictor;
    nn::Net<float> action_enc;
    std::optional<nn::Net<float>> decoder;
    int H = 3, d_z = 64, d_a = 8;
    uint64_t enc_hash = 0;
    mutable uint64_t predict_calls = 0;  // instrumentation for mode audits
};

inline WMHandle build_world_model(const EncoderHandle& encoder, int H, int d_a, uint64_t seed,
                                  bool with_decoder) {
    WMHandle wm;
    wm.encoder = encoder;
    wm.H = H;
    wm.d_z = encoder.d_z;
    wm.d_a = d_a;
    Rng rng(seed);
    wm.predictor = nn::make_mlp<float>({H * (wm.d_z + d_a), 256, 256, wm.d_z}, rng);
    wm.action_enc = nn::make_mlp<float>({kNumActions, d_a}, rng);
    if (with_decoder)
        wm.decoder =
            nn::make_mlp<float>({wm.d_z, 256, 3 * (encoder.img_h / 2) * (encoder.img_w / 2)}, rng);
    wm.enc_hash = encoder_hash(encoder);
    return wm;
}

// Deterministic next-latent prediction from exactly H latents and H actions,
// oldest first.
inline LatentState wm_predict(const WMHandle& wm, const std::vector<LatentState>& latents,
                              const std::vector<int>& actions) {
    if (static_cast<int>(latents.size()) != wm.H || static_cast<int>(actions.size()) != wm.H)
        throw ShapeError("wm_predict: need exactly H=" + std::to_string(wm.H) +
                         " latents and actions, got " + std::to_string(latents.size()) + "/" +
                         std::to_string(actions.size()));
    ++wm.predict_calls;
    const int slot = wm.d_z + wm.d_a;
    Tensor<float> pin({wm.H * slot});
    nn::ForwardCache<float> cache;
    for (int i = 0; i < wm.H; ++i) {
        if (static_cast<int>(latents[i].size()) != wm.d_z)
            throw ShapeError("wm_predict: latent width mismatch");
        for (int j = 0; j < wm.d_z; ++j) pin[i * slot + j] = latents[i][j];
        nn::forward_cached(wm.action_enc, action_one_hot<float>(actions[i]), cache);
        for (int j = 0; j < wm.d_a; ++j) pin[i * slot + wm.d_z + j] = cache.output[j];
    }
    nn::forward_cached(wm.predictor, pin, cache);
    return cache.output.data;
}

inline Image decode(const WMHandle& wm, const LatentState& z) {
    if (!wm.decoder) throw Error("decode: this world model was built without a decoder");
    nn::ForwardCache<float> cache;
    nn::forward_cached(*wm.decoder, Tensor<float>({wm.d_z}, z), cache);
    const int hh = wm.encoder.img_h / 2, hw = wm.encoder.img_w / 2;
    Image img(wm.encoder.img_h, wm.encoder.img_w);
    const size_t plane = static_cast<size_t>(hh) * hw;
    for (int r = 0; r < wm.encoder.img_h; ++r)
        for (int c = 0; c < wm.encoder.img_w; ++c) {
            const size_t i = static_cast<size_t>(r / 2) * hw + (c / 2);
            auto* p = img.px(r, c);
            for (int ch = 0; ch < 3; ++ch) {
                float v = cache.output[ch * plane + i];
                v = std::clamp(v, 0.0f, 1.0f);
                p[ch] = static_cast<uint8_t>(std::lround(v * 255.0f));
            }
        }
    return img;
}

enum class WMRegime { frozen_encoder, co_train };

struct WMTrainConfig {
    float lr = 1e-3f;
    int batch = 64;
    int epochs = 100;
    int batches_per_epoch = 0;  // 0: one pass over all windows per epoch
    float decoder_weight = 1.0f;
    bool with_decoder = true;
    bool teacher_forcing = true;  // always on; rejected if unset
    int d_a = 8;
    int H = 3;
    uint64_t seed = 0;
    double holdout_frac = 0.1;
};

struct WMReport {
    std::vector<double> epoch_loss;  // consistency + weighted recon
    std::vector<double> epoch_consistency;
    double holdout_mse = 0;       // one-step latent MSE, teacher forced
    double persistence_mse = 0;   // baseline z_{t+1} := z_t
    std::vector<double> kstep_mse;  // open-loop error, k = 1..5
    uint64_t windows_processed = 0;
    uint64_t predictor_inputs_from_ground_truth = 0;
    uint64_t predictor_inputs_from_own_output = 0;  // stays 0: teacher forcing
    size_t skipped_short_episodes = 0;
    uint64_t encoder_hash_before = 0, encoder_hash_after = 0;

    std::string to_csv() const {
        std::string s = "epoch,loss,consistency\n";
        char buf[96];
        for (size_t i = 0; i < epoch_loss.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%zu,%.6g,%.6g\n", i, epoch_loss[i],
                          epoch_consistency[i]);
            s += buf;
        }
        return s;
    }
};

namespace detail {

struct WindowRef {
    uint32_t episode;
    uint32_t start;  // index of the oldest frame
};

}  // namespace detail

// Trains the world model on (H+1)-frame windows sampled uniformly over all
// valid positions. co_train updates the encoder jointly (the WM-R regime);
// frozen_encoder leaves it untouched. Episodes shorter than H+1 are skipped
// (counted in the report); an empty window set is an error.
inline std::pair<WMHandle, WMReport> train_world_model(const WMTrainConfig& cfg,
                                                       const EpisodeDataset& data,
                                                       const EncoderHandle& encoder,
                                                       WMRegime regime) {
    if (!cfg.teacher_forcing)
        throw ConfigError("train_world_model: teacher forcing is always on for this trainer");
    const bool co_train = regime == WMRegime::co_train;
    WMHandle wm = build_world_model(encoder, cfg.H, cfg.d_a, cfg.seed, cfg.with_decoder);
    if (co_train) wm.encoder.regime = EncoderRegime::wm_r;

    WMReport report;
    report.encoder_hash_before = encoder_hash(wm.encoder);

    const size_t n_train_ep = data.train_episode_count(cfg.holdout_frac);
    std::vector<detail::WindowRef> train_windows, holdout_windows;
    for (size_t e = 0; e < data.episodes.size(); ++e) {
        const auto& ep = data.episodes[e];
        if (ep.frames.empty())
            throw Error("train_world_model: dataset was collected without frames");
        const int n = ep.steps();
        if (n + 1 < cfg.H + 2) {  // need H+1 frames and a next frame target
            ++report.skipped_short_episodes;
            continue;
        }
        auto& pool = e < n_train_ep ? train_windows : holdout_windows;
        for (int start = 0; start + cfg.H < n + 1; ++start)
            pool.push_back({static_cast<uint32_t>(e), static_cast<uint32_t>(start)});
    }
    if (train_windows.empty()) throw Error("train_world_model: episodes too short, no windows");

    WMCore<float> core;
    core.encoder = wm.encoder.net;
    core.predictor = wm.predictor;
    core.action_enc = wm.action_enc;
    core.decoder = wm.decoder;
    core.H = cfg.H;
    core.d_z = wm.d_z;
    core.d_a = cfg.d_a;

    auto opt_pred = nn::OptimizerState<float>::adam_for(core.predictor, cfg.lr);
    auto opt_act = nn::OptimizerState<float>::adam_for(core.action_enc, cfg.lr);
    auto opt_enc = nn::OptimizerState<float>::adam_for(core.encoder, cfg.lr);
    std::optional<nn::OptimizerState<float>> opt_dec;
    if (core.decoder) opt_dec = nn::OptimizerState<float>::adam_for(*core.decoder, cfg.lr);

    Rng rng(cfg.seed + 0x3137ULL);

    const int batches = cfg.batches_per_epoch > 0
                            ? cfg.batches_per_epoch
                            : static_cast<int>((train_windows.size() + cfg.batch - 1) / cfg.batch);

    auto make_window = [&](const detail::WindowRef& ref) {
        const auto& ep = data.episodes[ref.episode];
        WMWindow<float> w;
        w.frames.reserve(cfg.H + 1);
        for (int i = 0; i <= cfg.H; ++i) w.frames.push_back(image_to_chw(ep.frames[ref.start + i]));
        w.actions.assign(ep.actions.begin() + ref.start, ep.actions.begin() + ref.start + cfg.H);
        if (core.decoder) w.target_half = image_to_chw_half(ep.frames[ref.start + cfg.H]);
        return w;
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss_sum = 0, cons_sum = 0;
        for (int b = 0; b < batches; ++b) {
            std::vector<WMWindow<float>> batch;
            batch.reserve(cfg.batch);
            for (int i = 0; i < cfg.batch; ++i) {
                const auto& ref =
                    train_windows[static_cast<size_t>(rng.uniform_int(0, train_windows.size() - 1))];
                batch.push_back(make_window(ref));
            }
            auto grads = WMGrads<float>::like(core);
            double consistency = 0, recon = 0;
            const double loss = wm_loss<float>(core, batch, cfg.decoder_weight, co_train, grads,
                                               &consistency, &recon);
            if (!std::isfinite(loss))
                throw DivergenceError("world model loss diverged at epoch " +
                                      std::to_string(epoch));
            optimizer_step(core.predictor, grads.predictor, opt_pred);
            optimizer_step(core.action_enc, grads.action_enc, opt_act);
            if (core.decoder) optimizer_step(*core.decoder, grads.decoder, *opt_dec);
            if (co_train) optimizer_step(core.encoder, grads.encoder, opt_enc);
            loss_sum += loss;
            cons_sum += consistency;
            report.windows_processed += batch.size();
            report.predictor_inputs_from_ground_truth += batch.size();  // teacher forcing
        }
        report.epoch_loss.push_back(loss_sum / batches);
        report.epoch_consistency.push_back(cons_sum / batches);
    }

    wm.encoder.net = core.encoder;
    wm.predictor = core.predictor;
    wm.action_enc = core.action_enc;
    wm.decoder = core.decoder;
    wm.enc_hash = encoder_hash(wm.encoder);
    report.encoder_hash_after = wm.enc_hash;

    // held-out one-step MSE vs the persistence baseline, and the open-loop
    // k-step curve, all with the final encoder
    const auto& eval_windows = holdout_windows.empty() ? train_windows : holdout_windows;
    constexpr int kMaxK = 5;
    std::vector<double> ksum(kMaxK, 0);
    std::vector<size_t> kcount(kMaxK, 0);
    double persist = 0;
    size_t n1 = 0;
    nn::ForwardCache<float> cache;
    auto enc = [&](const Image& img) {
        nn::forward_cached(wm.encoder.net, image_to_chw(img), cache);
        return cache.output.data;
    };
    for (const auto& ref : eval_windows) {
        const auto& ep = data.episodes[ref.episode];
        std::vector<LatentState> hist;
        std::vector<int> acts;
        for (int i = 0; i < cfg.H; ++i) {
            hist.push_back(enc(ep.frames[ref.start + i]));
            acts.push_back(ep.actions[ref.start + i]);
        }
        const auto z_last = hist.back();
        LatentState z_true_next = enc(ep.frames[ref.start + cfg.H]);
        {
            double p = 0;
            for (int j = 0; j < wm.d_z; ++j) {
                const double d = z_last[j] - z_true_next[j];
                p += d * d;
            }
            persist += p;
            ++n1;
        }
        auto cur_hist = hist;
        auto cur_acts = acts;
        for (int k = 1; k <= kMaxK; ++k) {
            const int t_next = ref.start + cfg.H + (k - 1);  // frame index being predicted
            if (t_next > ep.steps()) break;
            const auto zhat = wm_predict(wm, cur_hist, cur_acts);
            const auto z_true = enc(ep.frames[t_next]);
            double e = 0;
            for (int j = 0; j < wm.d_z; ++j) {
                const double d = zhat[j] - z_true[j];
                e += d * d;
            }
            ksum[k - 1] += e;
            ++kcount[k - 1];
            if (t_next == ep.steps()) break;  // no further action to roll forward
            cur_hist.erase(cur_hist.begin());
            cur_hist.push_back(zhat);  // open loop: feed own prediction
            cur_acts.erase(cur_acts.begin());
            cur_acts.push_back(ep.actions[t_next]);
        }
    }
    report.persistence_mse = n1 ? persist / static_cast<double>(n1) : 0;
    report.holdout_mse = kcount[0] ? ksum[0] / static_cast<double>(kcount[0]) : 0;
    for (int k = 0; k < kMaxK; ++k)
        if (kcount[k]) report.kstep_mse.push_back(ksum[k] / static_cast<double>(kcount[k]));
    return {std::move(wm), std::move(report)};
}

// --- checkpoint bundle: nets + sidecar (see docs/FORMATS.md) ---

inline void save_world_model(const WMHandle& wm, const std::string& base) {
    save_encoder(wm.encoder, base + "_encoder");
    nn::save_net(wm.predictor, base + "_predictor.nnck");
    nn::save_net(wm.action_enc, base + "_action_enc.nnck");
    if (wm.decoder) nn::save_net(*wm.decoder, base + "_decoder.nnck");
    nlohmann::json j;
    j["H"] = wm.H;
    j["d_z"] = wm.d_z;
    j["d_a"] = wm.d_a;
    j["encoder_hash"] = hex64(wm.enc_hash);
    j["has_decoder"] = wm.decoder.has_value();
    write_text_file(base + ".json", j.dump(2) + "\n");
}

inline WMHandle load_world_model(const std::string& base) {
    WMHandle wm;
    wm.encoder = load_encoder(base + "_encoder");
    wm.predictor = nn::load_net(base + "_predictor.nnck");
    wm.action_enc = nn::load_net(base + "_action_enc.nnck");
    const auto j = nlohmann::json::parse(read_text_file(base + ".json"));
    if (j.at("has_decoder").get<bool>()) wm.decoder = nn::load_net(base + "_decoder.nnck");
    wm.H = j.at("H");
    wm.d_z = j.at("d_z");
    wm.d_a = j.at("d_a");
    wm.enc_hash = encoder_hash(wm.encoder);
    return wm;
}

}  // namespace hjsafe
