#pragma once

#include <string>
#include <vector>

#include "hjsafe/checkpoint.hpp"
#include "hjsafe/parallel.hpp"
#include "hjsafe/render.hpp"

#include "json.hpp"

namespace hjsafe {

using LatentState = std::vector<float>;

enum class EncoderMode { frozen, finetune };
enum class EncoderRegime { scratch, wm_r };

struct FrozenViolationError : Error {
    using Error::Error;
};

// Vision backbone: observations -> d_z latents. A frozen handle rejects
// gradient requests from downstream trainers; the world-model trainer that
// owns the encoder during co-training passes owner_override.
struct EncoderHandle {
    nn::Net<float> net;
    EncoderMode mode = EncoderMode::frozen;
    EncoderRegime regime = EncoderRegime::scratch;
    int d_z = 64;
    int img_h = 64, img_w = 64;
};

// conv 16/32/64/64 stride 2 -> flatten -> dense d_z
inline EncoderHandle build_encoder(int img_h, int img_w, int d_z, uint64_t seed,
                                   EncoderRegime regime = EncoderRegime::scratch,
                                   EncoderMode mode = EncoderMode::frozen) {
    EncoderHandle e;
    e.img_h = img_h;
    e.img_w = img_w;
    e.d_z = d_z;
    e.regime = regime;
    e.mode = mode;
    e.net.input_shape = {3, img_h, img_w};
    for (int c : {16, 32, 64, 64}) {
        nn::add_conv2d(e.net, c, 3, 2, 1);
        nn::add_relu(e.net);
    }
    nn::add_flatten(e.net);
    nn::add_dense(e.net, d_z);
    Rng rng(seed);
    nn::init_params(e.net, rng);
    return e;
}

inline uint64_t encoder_hash(const EncoderHandle& e) { return nn::net_hash(e.net); }

inline void check_resolution(const EncoderHandle& e, const Image& o) {
    if (o.h != e.img_h || o.w != e.img_w)
        throw ShapeError("encoder expects " + std::to_string(e.img_h) + "x" +
                         std::to_string(e.img_w) + " observations, got " + std::to_string(o.h) +
                         "x" + std::to_string(o.w));
}

inline LatentState encode_chw(const EncoderHandle& e, const Tensor<float>& chw,
                              nn::ForwardCache<float>& cache) {
    nn::forward_cached(e.net, chw, cache);
    return cache.output.data;
}

inline LatentState encode(const EncoderHandle& e, const Image& o) {
    check_resolution(e, o);
    nn::ForwardCache<float> cache;
    return encode_chw(e, image_to_chw(o), cache);
}

inline std::vector<LatentState> encode_batch(const EncoderHandle& e,
                                             const std::vector<const Image*>& obs) {
    std::vector<LatentState> out(obs.size());
    parallel_for(static_cast<int64_t>(obs.size()), [&](int64_t i) {
        out[i] = encode(e, *obs[i]);
    });
    return out;
}

// Chains upstream latent gradients into encoder parameter gradients,
// accumulated over the batch into `grads` in sample order. Frozen handles
// reject downstream callers; owner_override is the world-model trainer's
// co-training path.
inline void encode_batch_with_grad(const EncoderHandle& e, const std::vector<const Image*>& obs,
                                   const std::vector<LatentState>& upstream,
                                   nn::GradientBundle<float>& grads, bool owner_override = false) {
    if (e.mode == EncoderMode::frozen && !owner_override)
        throw FrozenViolationError("encoder is frozen; downstream training may not mutate it");
    if (obs.size() != upstream.size())
        throw ShapeError("encode_batch_with_grad: batch size mismatch");
    nn::ForwardCache<float> cache;
    for (size_t i = 0; i < obs.size(); ++i) {
        check_resolution(e, *obs[i]);
        if (static_cast<int>(upstream[i].size()) != e.d_z)
            throw ShapeError("upstream gradient width mismatch");
        nn::forward_cached(e.net, image_to_chw(*obs[i]), cache);
        Tensor<float> lg({e.d_z}, upstream[i]);
        nn::backward_into(e.net, cache, lg, grads);
    }
}

// --- checkpoint + sidecar ---

inline void save_encoder(const EncoderHandle& e, const std::string& base) {
    nn::save_net(e.net, base + ".nnck");
    nlohmann::json j;
    j["regime"] = e.regime == EncoderRegime::wm_r ? "wm-r" : "scratch";
    j["mode"] = e.mode == EncoderMode::frozen ? "frozen" : "finetune";
    j["d_z"] = e.d_z;
    j["img_h"] = e.img_h;
    j["img_w"] = e.img_w;
    write_text_file(base + ".json", j.dump(2) + "\n");
}

inline EncoderHandle load_encoder(const std::string& base) {
    EncoderHandle e;
    e.net = nn::load_net(base + ".nnck");
    const auto j = nlohmann::json::parse(read_text_file(base + ".json"));
    e.regime = j.at("regime") == "wm-r" ? EncoderRegime::wm_r : EncoderRegime::scratch;
    e.mode = j.at("mode") == "frozen" ? EncoderMode::frozen : EncoderMode::finetune;
    e.d_z = j.at("d_z");
    e.img_h = j.at("img_h");
    e.img_w = j.at("img_w");
    return e;
}

}  // namespace hjsafe
