#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <vector>

#include "hjsafe/dubins.hpp"
#include "hjsafe/parallel.hpp"

namespace hjsafe {

// Discretization of (x, y, theta). x/y nodes span the arena inclusively;
// theta is periodic with nt nodes over [-pi, pi), no duplicate seam node.
struct GridSpec {
    int nx = 81, ny = 81, nt = 37;
    double x_min = -2, x_max = 2, y_min = -2, y_max = 2;

    static GridSpec for_world(const WorldSpec& w, int nx, int ny, int nt) {
        GridSpec g;
        g.nx = nx;
        g.ny = ny;
        g.nt = nt;
        g.x_min = w.x_min;
        g.x_max = w.x_max;
        g.y_min = w.y_min;
        g.y_max = w.y_max;
        g.validate();
        return g;
    }

    void validate() const {
        if (nx < 2 || ny < 2) throw ConfigError("grid: nx, ny must be >= 2");
        if (nt < 4) throw ConfigError("grid: ntheta must be >= 4");
    }

    double dx() const { return (x_max - x_min) / (nx - 1); }
    double dy() const { return (y_max - y_min) / (ny - 1); }
    double dtheta() const { return 6.283185307179586476925286766559 / nt; }
    double x_at(int i) const { return x_min + i * dx(); }
    double y_at(int j) const { return y_min + j * dy(); }
    double theta_at(int k) const { return -3.14159265358979323846 + k * dtheta(); }
    size_t nodes() const { return static_cast<size_t>(nx) * ny * nt; }
    size_t idx(int i, int j, int k) const {
        return (static_cast<size_t>(i) * ny + j) * nt + k;
    }
};

struct ValueGrid {
    GridSpec grid;
    std::vector<double> v;
    int iterations = 0;
    double residual = std::numeric_limits<double>::infinity();
    bool converged = false;
    // largest pointwise increase seen across all sweeps; the h start makes
    // the iterates non-increasing, so this stays at rounding level
    double max_increase = 0.0;
};

// Trilinear interpolation: clamped in x/y, periodic in theta.
inline double query(const ValueGrid& vg, const State& s) {
    const auto& g = vg.grid;
    double u = (s.x - g.x_min) / g.dx();
    double w = (s.y - g.y_min) / g.dy();
    u = std::clamp(u, 0.0, double(g.nx - 1));
    w = std::clamp(w, 0.0, double(g.ny - 1));
    int i0 = std::min(static_cast<int>(u), g.nx - 2);
    int j0 = std::min(static_cast<int>(w), g.ny - 2);
    const double fx = u - i0, fy = w - j0;

    double t = (wrap_angle(s.theta) + 3.14159265358979323846) / g.dtheta();
    int k0 = static_cast<int>(t);
    double ft = t - k0;
    if (k0 >= g.nt) {  // wrap_angle returns values in [-pi, pi); guard fp edge
        k0 = 0;
        ft = 0;
    }
    const int k1 = (k0 + 1) % g.nt;

    auto at = [&](int i, int j, int k) { return vg.v[g.idx(i, j, k)]; };
    double acc = 0;
    for (int di = 0; di < 2; ++di)
        for (int dj = 0; dj < 2; ++dj)
            for (int dk = 0; dk < 2; ++dk) {
                const double wgt = (di ? fx : 1 - fx) * (dj ? fy : 1 - fy) * (dk ? ft : 1 - ft);
                acc += wgt * at(i0 + di, j0 + dj, dk ? k1 : k0);
            }
    return acc;
}

using MarginFn = std::function<double(const State&)>;

// Value iteration of V(s) = min{h(s), max_a V(f(s,a))} starting from V = h,
// Jacobi sweeps with trilinear interpolation of the previous iterate.
// With the h start the iterates decrease monotonically to the fixed point.
inline ValueGrid value_iteration(const WorldSpec& spec, const GridSpec& grid, double tol,
                                 int max_iters, const MarginFn& h_fn = {}) {
    if (!(tol >= 0)) throw ConfigError("value_iteration: tol must be >= 0");
    grid.validate();
    const MarginFn margin = h_fn ? h_fn : [&spec](const State& s) {
        return signed_distance(spec, s);
    };

    const size_t n = grid.nodes();
    ValueGrid vg;
    vg.grid = grid;
    std::vector<double> h(n);
    std::vector<State> succ(n * 3);
    parallel_for(static_cast<int64_t>(n), [&](int64_t f) {
        const int k = static_cast<int>(f % grid.nt);
        const int j = static_cast<int>((f / grid.nt) % grid.ny);
        const int i = static_cast<int>(f / (static_cast<int64_t>(grid.nt) * grid.ny));
        State s;
        s.x = grid.x_at(i);
        s.y = grid.y_at(j);
        s.theta = grid.theta_at(k);
        h[f] = margin(s);
        for (int a = 0; a < kNumActions; ++a) succ[f * 3 + a] = step(spec, s, a);
    });

    vg.v = h;
    std::vector<double> next(n);
    for (int it = 0; it < max_iters; ++it) {
        parallel_for(static_cast<int64_t>(n), [&](int64_t f) {
            double best = -std::numeric_limits<double>::infinity();
            for (int a = 0; a < kNumActions; ++a) {
                const double q = query(vg, succ[f * 3 + a]);
                if (q > best) best = q;
            }
            next[f] = std::min(h[f], best);
        });
        double res = 0;
        for (size_t f = 0; f < n; ++f) {
            res = std::max(res, std::abs(next[f] - vg.v[f]));
            vg.max_increase = std::max(vg.max_increase, next[f] - vg.v[f]);
        }
        vg.v.swap(next);
        vg.iterations = it + 1;
        vg.residual = res;
        if (res <= tol) {
            vg.converged = true;
            break;
        }
    }
    return vg;
}

// mask[i*ny + j] = (V(x_i, y_j, theta) < 0)
inline std::vector<uint8_t> brs_slice(const ValueGrid& vg, double theta) {
    const auto& g = vg.grid;
    std::vector<uint8_t> mask(static_cast<size_t>(g.nx) * g.ny);
    for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.ny; ++j) {
            State s{g.x_at(i), g.y_at(j), theta};
            mask[static_cast<size_t>(i) * g.ny + j] = query(vg, s) < 0 ? 1 : 0;
        }
    return mask;
}

// Same slice sampled at an arbitrary resolution (for cross-grid comparisons).
inline std::vector<uint8_t> brs_mask_at(const ValueGrid& vg, double theta, int mx, int my) {
    std::vector<uint8_t> mask(static_cast<size_t>(mx) * my);
    const auto& g = vg.grid;
    for (int i = 0; i < mx; ++i)
        for (int j = 0; j < my; ++j) {
            State s;
            s.x = g.x_min + (g.x_max - g.x_min) * i / (mx - 1);
            s.y = g.y_min + (g.y_max - g.y_min) * j / (my - 1);
            s.theta = theta;
            mask[static_cast<size_t>(i) * my + j] = query(vg, s) < 0 ? 1 : 0;
        }
    return mask;
}

inline double mask_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    if (a.size() != b.size()) throw ShapeError("mask_iou: size mismatch");
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] && b[i]) ? 1 : 0;
        uni += (a[i] || b[i]) ? 1 : 0;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// argmax_a V(f(s, a)), ties to the lowest action id. Values within 1e-12
// count as tied so that interpolation rounding cannot flip the tie-break.
inline int oracle_safe_action(const ValueGrid& vg, const WorldSpec& spec, const State& s) {
    int best_a = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < kNumActions; ++a) {
        const double q = query(vg, step(spec, s, a));
        if (q > best + 1e-12) {
            best = q;
            best_a = a;
        }
    }
    return best_a;
}

// --- VGRD file format (see docs/FORMATS.md) ---

inline void save_value_grid(const ValueGrid& vg, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write value grid: " + path);
    write_magic(os, "VGRD");
    write_pod<uint32_t>(os, 1);
    write_pod<uint32_t>(os, static_cast<uint32_t>(vg.grid.nx));
    write_pod<uint32_t>(os, static_cast<uint32_t>(vg.grid.ny));
    write_pod<uint32_t>(os, static_cast<uint32_t>(vg.grid.nt));
    write_pod<double>(os, vg.grid.x_min);
    write_pod<double>(os, vg.grid.x_max);
    write_pod<double>(os, vg.grid.y_min);
    write_pod<double>(os, vg.grid.y_max);
    write_pod<uint32_t>(os, static_cast<uint32_t>(vg.iterations));
    write_pod<uint8_t>(os, vg.converged ? 1 : 0);
    write_pod<double>(os, vg.residual);
    for (double x : vg.v) write_pod<float>(os, static_cast<float>(x));
}

inline ValueGrid load_value_grid(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open value grid: " + path);
    expect_magic(is, "VGRD", "value grid");
    const auto version = read_pod<uint32_t>(is);
    if (version != 1) throw IoError("unsupported VGRD version " + std::to_string(version));
    ValueGrid vg;
    vg.grid.nx = static_cast<int>(read_pod<uint32_t>(is));
    vg.grid.ny = static_cast<int>(read_pod<uint32_t>(is));
    vg.grid.nt = static_cast<int>(read_pod<uint32_t>(is));
    vg.grid.x_min = read_pod<double>(is);
    vg.grid.x_max = read_pod<double>(is);
    vg.grid.y_min = read_pod<double>(is);
    vg.grid.y_max = read_pod<double>(is);
    vg.iterations = static_cast<int>(read_pod<uint32_t>(is));
    vg.converged = read_pod<uint8_t>(is) != 0;
    vg.residual = read_pod<double>(is);
    vg.v.resize(vg.grid.nodes());
    for (double& x : vg.v) x = read_pod<float>(is);
    return vg;
}

}  // namespace hjsafe
