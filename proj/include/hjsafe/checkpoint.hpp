#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "hjsafe/common.hpp"
#include "hjsafe/nn.hpp"

namespace hjsafe::nn {

// "NNCK" checkpoint. Byte layout (all integers u32 LE, parameters f32 LE):
//   magic "NNCK" | version=1 | input_rank | input_shape[rank]
//   layer_count | per layer: kind, p0..p5
//     dense : p = {in, out, 0, 0, 0, 0}
//     conv2d: p = {in_c, out_c, kh, kw, stride, pad}
//     relu / flatten: p all zero
//   payload: for each parameterized layer in order, W then b, row-major f32.
// Full layout documented in docs/FORMATS.md.

template <class T>
void save_net(const Net<T>& net, std::ostream& os) {
    write_magic(os, "NNCK");
    write_pod<uint32_t>(os, 1);
    write_pod<uint32_t>(os, static_cast<uint32_t>(net.input_shape.size()));
    for (int d : net.input_shape) write_pod<uint32_t>(os, static_cast<uint32_t>(d));
    write_pod<uint32_t>(os, static_cast<uint32_t>(net.layers.size()));
    for (const auto& l : net.layers) {
        write_pod<uint32_t>(os, static_cast<uint32_t>(l.kind));
        uint32_t p[6] = {0, 0, 0, 0, 0, 0};
        if (l.kind == LayerKind::dense) {
            p[0] = static_cast<uint32_t>(l.in);
            p[1] = static_cast<uint32_t>(l.out);
        } else if (l.kind == LayerKind::conv2d) {
            p[0] = static_cast<uint32_t>(l.in_c);
            p[1] = static_cast<uint32_t>(l.out_c);
            p[2] = static_cast<uint32_t>(l.kh);
            p[3] = static_cast<uint32_t>(l.kw);
            p[4] = static_cast<uint32_t>(l.stride);
            p[5] = static_cast<uint32_t>(l.pad);
        }
        for (uint32_t v : p) write_pod<uint32_t>(os, v);
    }
    for (const auto& l : net.layers) {
        if (!l.has_params()) continue;
        for (const auto& w : l.W.data) write_pod<float>(os, static_cast<float>(w));
        for (const auto& b : l.b.data) write_pod<float>(os, static_cast<float>(b));
    }
}

template <class T>
void save_net(const Net<T>& net, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    save_net(net, out);
}

inline Net<float> load_net(std::istream& is) {
    expect_magic(is, "NNCK", "network checkpoint");
    const auto version = read_pod<uint32_t>(is);
    if (version != 1) throw IoError("unsupported NNCK version " + std::to_string(version));
    Net<float> net;
    const auto rank = read_pod<uint32_t>(is);
    for (uint32_t i = 0; i < rank; ++i)
        net.input_shape.push_back(static_cast<int>(read_pod<uint32_t>(is)));
    const auto nlayers = read_pod<uint32_t>(is);
    for (uint32_t i = 0; i < nlayers; ++i) {
        Layer<float> l;
        l.kind = static_cast<LayerKind>(read_pod<uint32_t>(is));
        uint32_t p[6];
        for (auto& v : p) v = read_pod<uint32_t>(is);
        if (l.kind == LayerKind::dense) {
            l.in = static_cast<int>(p[0]);
            l.out = static_cast<int>(p[1]);
            l.W = Tensor<float>({l.out, l.in});
            l.b = Tensor<float>({l.out});
        } else if (l.kind == LayerKind::conv2d) {
            l.in_c = static_cast<int>(p[0]);
            l.out_c = static_cast<int>(p[1]);
            l.kh = static_cast<int>(p[2]);
            l.kw = static_cast<int>(p[3]);
            l.stride = static_cast<int>(p[4]);
            l.pad = static_cast<int>(p[5]);
            l.W = Tensor<float>({l.out_c, l.in_c, l.kh, l.kw});
            l.b = Tensor<float>({l.out_c});
        }
        net.layers.push_back(std::move(l));
    }
    for (auto& l : net.layers) {
        if (!l.has_params()) continue;
        for (auto& w : l.W.data) w = read_pod<float>(is);
        for (auto& b : l.b.data) b = read_pod<float>(is);
    }
    output_shape(net);  // validates layer composition
    return net;
}

inline Net<float> load_net(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    return load_net(in);
}

// Fingerprint of the serialized checkpoint bytes.
template <class T>
uint64_t net_hash(const Net<T>& net) {
    std::ostringstream ss(std::ios::binary);
    save_net(net, ss);
    const std::string bytes = ss.str();
    return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace hjsafe::nn
