#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "hjsafe/common.hpp"
#include "hjsafe/rng.hpp"

namespace hjsafe {

struct State {
    double x = 0, y = 0, theta = 0;
};

// Discrete turn-rate actions: 0 -> -turn_mag, 1 -> straight, 2 -> +turn_mag.
constexpr int kNumActions = 3;
constexpr int kActionRight = 0;
constexpr int kActionStraight = 1;
constexpr int kActionLeft = 2;

struct Disk {
    double cx = 0, cy = 0, r = 0;
};

struct WorldSpec {
    double x_min = -2.0, x_max = 2.0, y_min = -2.0, y_max = 2.0;
    std::vector<Disk> obstacles{{-0.75, 0.0, 0.5}, {0.75, 0.4, 0.5}};
    Disk goal{1.6, -1.4, 0.2};
    double speed = 1.0;      // m/s, constant
    double turn_mag = 1.5;   // rad/s
    double dt = 0.1;         // s
    int horizon = 120;       // steps
    int img_h = 64, img_w = 64;

    // nominal controller constants
    double d_react = 0.8;       // m, obstacle reaction distance
    double heading_gain = 2.0;  // rad/s per rad of heading error
    double repulse_gain = 1.1;  // weight of the away-from-obstacle bias

    double turn_rate(int action) const { return (action - 1) * turn_mag; }

    void validate() const {
        if (!(x_min < x_max && y_min < y_max)) throw ConfigError("world: empty arena");
        if (!(speed > 0 && turn_mag > 0 && dt > 0 && horizon > 0))
            throw ConfigError("world: speed, turn_mag, dt, horizon must be positive");
        auto inside = [&](const Disk& d) {
            return d.cx - d.r > x_min && d.cx + d.r < x_max && d.cy - d.r > y_min &&
                   d.cy + d.r < y_max;
        };
        for (const auto& o : obstacles)
            if (!inside(o)) throw ConfigError("world: obstacle not strictly inside arena");
        if (!inside(goal)) throw ConfigError("world: goal not strictly inside arena");
        for (const auto& o : obstacles) {
            const double d = std::hypot(o.cx - goal.cx, o.cy - goal.cy);
            if (d < o.r + goal.r) throw ConfigError("world: goal intersects an obstacle");
        }
        if (img_h < 8 || img_w < 8) throw ConfigError("world: image too small");
    }

    uint64_t hash() const {
        std::vector<double> v{x_min, x_max, y_min, y_max, speed, turn_mag, dt,
                              double(horizon), double(img_h), double(img_w),
                              goal.cx, goal.cy, goal.r,
                              d_react, heading_gain, repulse_gain};
        for (const auto& o : obstacles) {
            v.push_back(o.cx);
            v.push_back(o.cy);
            v.push_back(o.r);
        }
        return fnv1a64(v.data(), v.size() * sizeof(double));
    }
};

// wraps to [-pi, pi)
inline double wrap_angle(double t) {
    constexpr double two_pi = 6.283185307179586476925286766559;
    t = std::fmod(t + 3.14159265358979323846, two_pi);
    if (t < 0) t += two_pi;
    return t - 3.14159265358979323846;
}

// Exact-arc Dubins update; position clamped to the arena. `clamped` reports
// whether the raw update left the bounds (the rollout's "arena exit").
inline State step_ex(const WorldSpec& spec, const State& s, int action, bool& clamped) {
    const double u = spec.turn_rate(action);
    State n;
    if (action == kActionStraight) {
        n.x = s.x + spec.speed * spec.dt * std::cos(s.theta);
        n.y = s.y + spec.speed * spec.dt * std::sin(s.theta);
        n.theta = s.theta;
    } else {
        const double t1 = s.theta + u * spec.dt;
        n.x = s.x + (spec.speed / u) * (std::sin(t1) - std::sin(s.theta));
        n.y = s.y - (spec.speed / u) * (std::cos(t1) - std::cos(s.theta));
        n.theta = wrap_angle(t1);
    }
    clamped = false;
    if (n.x < spec.x_min) { n.x = spec.x_min; clamped = true; }
    if (n.x > spec.x_max) { n.x = spec.x_max; clamped = true; }
    if (n.y < spec.y_min) { n.y = spec.y_min; clamped = true; }
    if (n.y > spec.y_max) { n.y = spec.y_max; clamped = true; }
    return n;
}

inline State step(const WorldSpec& spec, const State& s, int action) {
    bool clamped;
    return step_ex(spec, s, action, clamped);
}

// Signed distance to the closest obstacle boundary; negative inside.
// The failure margin h of the safety problem.
inline double signed_distance(const WorldSpec& spec, const State& s) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& o : spec.obstacles) {
        const double d = std::hypot(s.x - o.cx, s.y - o.cy) - o.r;
        if (d < best) best = d;
    }
    return best;
}

inline bool in_goal(const WorldSpec& spec, const State& s) {
    return std::hypot(s.x - spec.goal.cx, s.y - spec.goal.cy) <= spec.goal.r;
}

// Heading controller toward the goal with an away-from-obstacle bias inside
// d_react; picks the discrete action closest to the commanded turn rate,
// ties broken toward straight.
inline int nominal_action(const WorldSpec& spec, const State& s) {
    double vx = spec.goal.cx - s.x;
    double vy = spec.goal.cy - s.y;
    const double gn = std::hypot(vx, vy);
    if (gn > 1e-12) {
        vx /= gn;
        vy /= gn;
    }
    const double sd = signed_distance(spec, s);
    if (sd < spec.d_react && !spec.obstacles.empty()) {
        const Disk* nearest = &spec.obstacles[0];
        double best = std::numeric_limits<double>::infinity();
        for (const auto& o : spec.obstacles) {
            const double d = std::hypot(s.x - o.cx, s.y - o.cy) - o.r;
            if (d < best) {
                best = d;
                nearest = &o;
            }
        }
        double ax = s.x - nearest->cx;
        double ay = s.y - nearest->cy;
        const double an = std::hypot(ax, ay);
        if (an > 1e-12) {
            ax /= an;
            ay /= an;
            const double w = spec.repulse_gain * (spec.d_react - sd) / spec.d_react;
            vx += w * ax;
            vy += w * ay;
            // tangential detour so a head-on approach does not stall on the
            // repulsion axis; pick the tangent pointing goal-ward
            double tx = -ay, ty = ax;
            if (tx * vx + ty * vy < 0) {
                tx = -tx;
                ty = -ty;
            }
            vx += 0.5 * w * tx;
            vy += 0.5 * w * ty;
        }
    }
    const double desired = std::atan2(vy, vx);
    const double err = wrap_angle(desired - s.theta);
    const double cmd = spec.heading_gain * err;
    int best_a = kActionStraight;
    double best_diff = std::abs(cmd - spec.turn_rate(kActionStraight));
    for (int a = 0; a < kNumActions; ++a) {
        const double diff = std::abs(cmd - spec.turn_rate(a));
        if (diff < best_diff - 1e-12) {
            best_diff = diff;
            best_a = a;
        }
    }
    return best_a;
}

// Largest obstacle clearance over the arena, from a fixed 201x201 scan.
// Used to normalize h for critic training.
inline double max_obstacle_clearance(const WorldSpec& spec) {
    double best = 0;
    constexpr int n = 201;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            State s;
            s.x = spec.x_min + (spec.x_max - spec.x_min) * i / (n - 1);
            s.y = spec.y_min + (spec.y_max - spec.y_min) * j / (n - 1);
            const double d = signed_distance(spec, s);
            if (d > best) best = d;
        }
    }
    return best;
}

// Uniform sample outside obstacles and goal.
inline State sample_free_state(const WorldSpec& spec, Rng& rng) {
    for (int tries = 0; tries < 10000; ++tries) {
        State s;
        s.x = rng.uniform(spec.x_min, spec.x_max);
        s.y = rng.uniform(spec.y_min, spec.y_max);
        s.theta = rng.uniform(-3.14159265358979323846, 3.14159265358979323846);
        if (signed_distance(spec, s) <= 0) continue;
        if (in_goal(spec, s)) continue;
        return s;
    }
    throw Error("sample_free_state: free space appears empty");
}

// Uniform over the whole arena (obstacle interiors included); used by the
// critic's training restarts so the failure region is covered.
inline State sample_arena_state(const WorldSpec& spec, Rng& rng) {
    State s;
    s.x = rng.uniform(spec.x_min, spec.x_max);
    s.y = rng.uniform(spec.y_min, spec.y_max);
    s.theta = rng.uniform(-3.14159265358979323846, 3.14159265358979323846);
    return s;
}

}  // namespace hjsafe
