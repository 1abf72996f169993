#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "hjsafe/dubins.hpp"
#include "hjsafe/tensor.hpp"

namespace hjsafe {

// Top-down RGB observation, row-major HWC, row 0 at y_max.
struct Image {
    int h = 0, w = 0;
    std::vector<uint8_t> rgb;

    Image() = default;
    Image(int h_, int w_) : h(h_), w(w_), rgb(static_cast<size_t>(h_) * w_ * 3, 0) {}

    uint8_t* px(int r, int c) { return rgb.data() + (static_cast<size_t>(r) * w + c) * 3; }
    const uint8_t* px(int r, int c) const {
        return rgb.data() + (static_cast<size_t>(r) * w + c) * 3;
    }
    bool operator==(const Image& o) const { return h == o.h && w == o.w && rgb == o.rgb; }
};

namespace palette {
constexpr std::array<uint8_t, 3> background{235, 235, 235};
constexpr std::array<uint8_t, 3> obstacle{178, 34, 34};
constexpr std::array<uint8_t, 3> goal{46, 155, 70};
constexpr std::array<uint8_t, 3> car{30, 60, 200};
}  // namespace palette

// car triangle geometry, meters; wide base keeps the heading readable at
// 64x64 (a thin wedge rasterizes mirror-symmetrically)
constexpr double kCarApex = 0.28;
constexpr double kCarBase = 0.22;
constexpr double kCarBaseAngle = 2.35;  // rad off the heading

// Rasterizes observations. The static scene (background, obstacles, goal)
// is drawn once; render() stamps the car triangle on a copy, so the result
// is a pure function of (spec, state).
class Renderer {
public:
    explicit Renderer(const WorldSpec& spec) : spec_(spec), background_(spec.img_h, spec.img_w) {
        for (int r = 0; r < spec.img_h; ++r) {
            for (int c = 0; c < spec.img_w; ++c) {
                const double x = px_to_x(c);
                const double y = px_to_y(r);
                auto* p = background_.px(r, c);
                std::array<uint8_t, 3> col = palette::background;
                for (const auto& o : spec.obstacles)
                    if (std::hypot(x - o.cx, y - o.cy) <= o.r) col = palette::obstacle;
                const auto& g = spec.goal;
                if (std::hypot(x - g.cx, y - g.cy) <= g.r) col = palette::goal;
                p[0] = col[0];
                p[1] = col[1];
                p[2] = col[2];
            }
        }
    }

    Image render(const State& s) const {
        Image img = background_;
        const auto v = car_vertices(s);
        int r0, r1, c0, c1;
        triangle_px_bbox(v, r0, r1, c0, c1);
        for (int r = r0; r <= r1; ++r) {
            for (int c = c0; c <= c1; ++c) {
                if (point_in_triangle(px_to_x(c), px_to_y(r), v)) {
                    auto* p = img.px(r, c);
                    p[0] = palette::car[0];
                    p[1] = palette::car[1];
                    p[2] = palette::car[2];
                }
            }
        }
        return img;
    }

    // pixel bounding box of the car triangle (clamped to the image); used by
    // tests to localize state-dependent pixels
    void car_px_bbox(const State& s, int& r0, int& r1, int& c0, int& c1) const {
        triangle_px_bbox(car_vertices(s), r0, r1, c0, c1);
    }

    double px_to_x(int c) const {
        return spec_.x_min + (c + 0.5) * (spec_.x_max - spec_.x_min) / spec_.img_w;
    }
    double px_to_y(int r) const {
        return spec_.y_max - (r + 0.5) * (spec_.y_max - spec_.y_min) / spec_.img_h;
    }
    int x_to_col(double x) const {
        const int c = static_cast<int>(std::floor((x - spec_.x_min) / (spec_.x_max - spec_.x_min) *
                                                  spec_.img_w));
        return std::clamp(c, 0, spec_.img_w - 1);
    }
    int y_to_row(double y) const {
        const int r = static_cast<int>(std::floor((spec_.y_max - y) / (spec_.y_max - spec_.y_min) *
                                                  spec_.img_h));
        return std::clamp(r, 0, spec_.img_h - 1);
    }

    const WorldSpec& spec() const { return spec_; }

private:
    std::array<std::array<double, 2>, 3> car_vertices(const State& s) const {
        std::array<std::array<double, 2>, 3> v;
        v[0] = {s.x + kCarApex * std::cos(s.theta), s.y + kCarApex * std::sin(s.theta)};
        const double a1 = s.theta + kCarBaseAngle, a2 = s.theta - kCarBaseAngle;
        v[1] = {s.x + kCarBase * std::cos(a1), s.y + kCarBase * std::sin(a1)};
        v[2] = {s.x + kCarBase * std::cos(a2), s.y + kCarBase * std::sin(a2)};
        return v;
    }

    void triangle_px_bbox(const std::array<std::array<double, 2>, 3>& v, int& r0, int& r1, int& c0,
                          int& c1) const {
        double xmin = v[0][0], xmax = v[0][0], ymin = v[0][1], ymax = v[0][1];
        for (const auto& p : v) {
            xmin = std::min(xmin, p[0]);
            xmax = std::max(xmax, p[0]);
            ymin = std::min(ymin, p[1]);
            ymax = std::max(ymax, p[1]);
        }
        c0 = x_to_col(xmin);
        c1 = x_to_col(xmax);
        r0 = y_to_row(ymax);  // rows grow downward
        r1 = y_to_row(ymin);
    }

    static bool point_in_triangle(double x, double y,
                                  const std::array<std::array<double, 2>, 3>& v) {
        auto cross = [&](int i, int j) {
            return (v[j][0] - v[i][0]) * (y - v[i][1]) - (v[j][1] - v[i][1]) * (x - v[i][0]);
        };
        const double d0 = cross(0, 1), d1 = cross(1, 2), d2 = cross(2, 0);
        const bool has_neg = d0 < 0 || d1 < 0 || d2 < 0;
        const bool has_pos = d0 > 0 || d1 > 0 || d2 > 0;
        return !(has_neg && has_pos);
    }

    WorldSpec spec_;
    Image background_;
};

inline Image render(const WorldSpec& spec, const State& s) { return Renderer(spec).render(s); }

// HWC u8 -> CHW float in [0,1]; the input layout learned components consume.
inline Tensor<float> image_to_chw(const Image& img) {
    Tensor<float> t({3, img.h, img.w});
    const size_t plane = static_cast<size_t>(img.h) * img.w;
    for (int r = 0; r < img.h; ++r)
        for (int c = 0; c < img.w; ++c) {
            const auto* p = img.px(r, c);
            const size_t i = static_cast<size_t>(r) * img.w + c;
            t[i] = p[0] / 255.0f;
            t[plane + i] = p[1] / 255.0f;
            t[2 * plane + i] = p[2] / 255.0f;
        }
    return t;
}

// 2x2 box-mean downsample to CHW float; the decoder's reconstruction target.
inline Tensor<float> image_to_chw_half(const Image& img) {
    const int oh = img.h / 2, ow = img.w / 2;
    Tensor<float> t({3, oh, ow});
    const size_t plane = static_cast<size_t>(oh) * ow;
    for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                const int s =
                    img.px(2 * r, 2 * c)[ch] + img.px(2 * r, 2 * c + 1)[ch] +
                    img.px(2 * r + 1, 2 * c)[ch] + img.px(2 * r + 1, 2 * c + 1)[ch];
                t[ch * plane + static_cast<size_t>(r) * ow + c] = s / (4.0f * 255.0f);
            }
    return t;
}

// --- PPM / PGM ---

inline void write_ppm(const std::string& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write ppm: " + path);
    out << "P6\n" << img.w << " " << img.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.rgb.data()),
              static_cast<std::streamsize>(img.rgb.size()));
}

inline Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open ppm: " + path);
    std::string magic;
    int w, h, maxv;
    in >> magic >> w >> h >> maxv;
    if (magic != "P6" || maxv != 255) throw IoError("unsupported ppm: " + path);
    in.get();
    Image img(h, w);
    read_bytes(in, img.rgb.data(), img.rgb.size());
    return img;
}

inline void write_pgm(const std::string& path, int h, int w, const std::vector<uint8_t>& gray) {
    if (gray.size() != static_cast<size_t>(h) * w) throw ShapeError("pgm size mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write pgm: " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(gray.data()),
              static_cast<std::streamsize>(gray.size()));
}

}  // namespace hjsafe
