#pragma once

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "hjsafe/render.hpp"

namespace hjsafe {

// One collected episode. states/frames/h have n+1 entries for n steps;
// frame k is the observation at state k, so step k's next_observation is
// frame k+1. failure_signal of step k is h[k] = signed_distance(states[k]).
struct Episode {
    std::vector<State> states;
    std::vector<Image> frames;  // empty when collected without frames
    std::vector<int> actions;
    std::vector<float> h;
    bool success = false;
    bool boundary_exit = false;
    uint64_t seed = 0;

    int steps() const { return static_cast<int>(actions.size()); }

    // failure states reached along the trajectory (the initial state is the
    // start condition, not a reached state)
    int violations() const {
        int n = 0;
        for (size_t k = 1; k < h.size(); ++k)
            if (h[k] < 0) ++n;
        return n;
    }
};

using Policy = std::function<int(const State&)>;

// Runs until goal entry, horizon, or arena exit. Violations never terminate.
inline Episode rollout(const WorldSpec& spec, const Policy& policy, const State& initial,
                       int max_steps, const Renderer* renderer = nullptr) {
    if (max_steps > spec.horizon) throw Error("rollout: max_steps exceeds the world horizon");
    Episode ep;
    ep.states.push_back(initial);
    ep.h.push_back(static_cast<float>(signed_distance(spec, initial)));
    if (renderer) ep.frames.push_back(renderer->render(initial));
    if (in_goal(spec, initial)) {
        ep.success = true;
        return ep;
    }
    State s = initial;
    for (int t = 0; t < max_steps; ++t) {
        const int a = policy(s);
        bool clamped = false;
        const State n = step_ex(spec, s, a, clamped);
        ep.actions.push_back(a);
        ep.states.push_back(n);
        ep.h.push_back(static_cast<float>(signed_distance(spec, n)));
        if (renderer) ep.frames.push_back(renderer->render(n));
        s = n;
        if (in_goal(spec, s)) {
            ep.success = true;
            break;
        }
        if (clamped) {
            ep.boundary_exit = true;
            break;
        }
    }
    return ep;
}

struct EpisodeDataset {
    WorldSpec spec;
    uint64_t seed = 0;
    std::string controller = "pid";
    float noise = 0.0f;
    std::vector<Episode> episodes;

    size_t total_steps() const {
        size_t n = 0;
        for (const auto& e : episodes) n += e.actions.size();
        return n;
    }

    size_t count_failure_states() const {
        size_t n = 0;
        for (const auto& e : episodes)
            for (float v : e.h)
                if (v < 0) ++n;
        return n;
    }

    size_t count_states() const {
        size_t n = 0;
        for (const auto& e : episodes) n += e.h.size();
        return n;
    }

    // 90/10 train/held-out split by episode
    size_t train_episode_count(double holdout_frac = 0.1) const {
        const size_t n = episodes.size();
        size_t held = static_cast<size_t>(n * holdout_frac);
        if (held == 0 && n > 1) held = 1;
        return n - held;
    }
};

// Collects episodes under the nominal controller, replacing its action with
// a uniform random one with probability `noise` per step. Per-episode seeds
// are seed + episode_index; initial states are uniform over free space.
inline EpisodeDataset collect_dataset(const WorldSpec& spec, int n_episodes, uint64_t seed,
                                      double noise, bool keep_frames = true) {
    if (n_episodes < 1) throw Error("collect_dataset: need at least one episode");
    spec.validate();
    EpisodeDataset ds;
    ds.spec = spec;
    ds.seed = seed;
    ds.noise = static_cast<float>(noise);
    Renderer renderer(spec);
    for (int i = 0; i < n_episodes; ++i) {
        Rng rng(seed + static_cast<uint64_t>(i));
        const State s0 = sample_free_state(spec, rng);
        Policy policy = [&](const State& s) {
            if (noise > 0 && rng.uniform() < noise)
                return static_cast<int>(rng.uniform_int(0, kNumActions - 1));
            return nominal_action(spec, s);
        };
        Episode ep = rollout(spec, policy, s0, spec.horizon, keep_frames ? &renderer : nullptr);
        ep.seed = seed + static_cast<uint64_t>(i);
        ds.episodes.push_back(std::move(ep));
    }
    bool has_fail = false, has_safe = false;
    for (const auto& e : ds.episodes)
        for (float v : e.h) (v < 0 ? has_fail : has_safe) = true;
    if (!has_fail || !has_safe)
        std::fprintf(stderr,
                     "warning: collected dataset contains a single failure-signal class "
                     "(has_fail=%d has_safe=%d); increase episodes or noise\n",
                     int(has_fail), int(has_safe));
    return ds;
}

// --- EPDS file format (see docs/FORMATS.md for the byte-exact layout) ---

namespace detail {

inline void write_world(std::ostream& os, const WorldSpec& w) {
    write_pod<double>(os, w.x_min);
    write_pod<double>(os, w.x_max);
    write_pod<double>(os, w.y_min);
    write_pod<double>(os, w.y_max);
    write_pod<uint32_t>(os, static_cast<uint32_t>(w.obstacles.size()));
    for (const auto& o : w.obstacles) {
        write_pod<double>(os, o.cx);
        write_pod<double>(os, o.cy);
        write_pod<double>(os, o.r);
    }
    write_pod<double>(os, w.goal.cx);
    write_pod<double>(os, w.goal.cy);
    write_pod<double>(os, w.goal.r);
    write_pod<double>(os, w.speed);
    write_pod<double>(os, w.turn_mag);
    write_pod<double>(os, w.dt);
    write_pod<uint32_t>(os, static_cast<uint32_t>(w.horizon));
    write_pod<uint32_t>(os, static_cast<uint32_t>(w.img_h));
    write_pod<uint32_t>(os, static_cast<uint32_t>(w.img_w));
    write_pod<double>(os, w.d_react);
    write_pod<double>(os, w.heading_gain);
    write_pod<double>(os, w.repulse_gain);
}

inline WorldSpec read_world(std::istream& is) {
    WorldSpec w;
    w.x_min = read_pod<double>(is);
    w.x_max = read_pod<double>(is);
    w.y_min = read_pod<double>(is);
    w.y_max = read_pod<double>(is);
    const auto n = read_pod<uint32_t>(is);
    w.obstacles.clear();
    for (uint32_t i = 0; i < n; ++i) {
        Disk o;
        o.cx = read_pod<double>(is);
        o.cy = read_pod<double>(is);
        o.r = read_pod<double>(is);
        w.obstacles.push_back(o);
    }
    w.goal.cx = read_pod<double>(is);
    w.goal.cy = read_pod<double>(is);
    w.goal.r = read_pod<double>(is);
    w.speed = read_pod<double>(is);
    w.turn_mag = read_pod<double>(is);
    w.dt = read_pod<double>(is);
    w.horizon = static_cast<int>(read_pod<uint32_t>(is));
    w.img_h = static_cast<int>(read_pod<uint32_t>(is));
    w.img_w = static_cast<int>(read_pod<uint32_t>(is));
    w.d_react = read_pod<double>(is);
    w.heading_gain = read_pod<double>(is);
    w.repulse_gain = read_pod<double>(is);
    return w;
}

}  // namespace detail

inline void save_dataset(const EpisodeDataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write dataset: " + path);
    write_magic(os, "EPDS");
    write_pod<uint32_t>(os, 1);
    detail::write_world(os, ds.spec);
    write_pod<uint64_t>(os, ds.seed);
    write_pod<uint32_t>(os, static_cast<uint32_t>(ds.controller.size()));
    write_bytes(os, ds.controller.data(), ds.controller.size());
    write_pod<float>(os, ds.noise);
    const bool has_frames = !ds.episodes.empty() && !ds.episodes.front().frames.empty();
    write_pod<uint8_t>(os, has_frames ? 1 : 0);
    write_pod<uint32_t>(os, static_cast<uint32_t>(ds.episodes.size()));

    const size_t frame_bytes = static_cast<size_t>(ds.spec.img_h) * ds.spec.img_w * 3;
    // episode payload sizes are fixed functions of the step count
    uint64_t offset = static_cast<uint64_t>(os.tellp()) +
                      ds.episodes.size() * (8 + 4 + 1 + 1 + 8);
    for (const auto& e : ds.episodes) {
        const uint64_t n = e.actions.size();
        write_pod<uint64_t>(os, offset);
        write_pod<uint32_t>(os, static_cast<uint32_t>(n));
        write_pod<uint8_t>(os, e.success ? 1 : 0);
        write_pod<uint8_t>(os, e.boundary_exit ? 1 : 0);
        write_pod<uint64_t>(os, e.seed);
        offset += (n + 1) * 24 + n + (n + 1) * 4 + (has_frames ? (n + 1) * frame_bytes : 0);
    }
    for (const auto& e : ds.episodes) {
        for (const auto& s : e.states) {
            write_pod<double>(os, s.x);
            write_pod<double>(os, s.y);
            write_pod<double>(os, s.theta);
        }
        for (int a : e.actions) write_pod<uint8_t>(os, static_cast<uint8_t>(a));
        for (float v : e.h) write_pod<float>(os, v);
        for (const auto& f : e.frames) write_bytes(os, f.rgb.data(), f.rgb.size());
    }
}

inline EpisodeDataset load_dataset(const std::string& path, bool load_frames = true) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open dataset: " + path);
    expect_magic(is, "EPDS", "episode dataset");
    const auto version = read_pod<uint32_t>(is);
    if (version != 1) throw IoError("unsupported EPDS version " + std::to_string(version));
    EpisodeDataset ds;
    ds.spec = detail::read_world(is);
    ds.seed = read_pod<uint64_t>(is);
    const auto name_len = read_pod<uint32_t>(is);
    ds.controller.resize(name_len);
    if (name_len) read_bytes(is, ds.controller.data(), name_len);
    ds.noise = read_pod<float>(is);
    const bool has_frames = read_pod<uint8_t>(is) != 0;
    const auto count = read_pod<uint32_t>(is);

    struct IndexEntry {
        uint64_t offset;
        uint32_t steps;
        uint8_t success, boundary;
        uint64_t seed;
    };
    std::vector<IndexEntry> index(count);
    for (auto& e : index) {
        e.offset = read_pod<uint64_t>(is);
        e.steps = read_pod<uint32_t>(is);
        e.success = read_pod<uint8_t>(is);
        e.boundary = read_pod<uint8_t>(is);
        e.seed = read_pod<uint64_t>(is);
    }
    const size_t frame_bytes = static_cast<size_t>(ds.spec.img_h) * ds.spec.img_w * 3;
    for (const auto& ie : index) {
        is.seekg(static_cast<std::streamoff>(ie.offset));
        Episode ep;
        ep.success = ie.success != 0;
        ep.boundary_exit = ie.boundary != 0;
        ep.seed = ie.seed;
        const uint32_t n = ie.steps;
        ep.states.resize(n + 1);
        for (auto& s : ep.states) {
            s.x = read_pod<double>(is);
            s.y = read_pod<double>(is);
            s.theta = read_pod<double>(is);
        }
        ep.actions.resize(n);
        for (auto& a : ep.actions) a = read_pod<uint8_t>(is);
        ep.h.resize(n + 1);
        for (auto& v : ep.h) v = read_pod<float>(is);
        if (has_frames && load_frames) {
            ep.frames.assign(n + 1, Image(ds.spec.img_h, ds.spec.img_w));
            for (auto& f : ep.frames) read_bytes(is, f.rgb.data(), frame_bytes);
        }
        ds.episodes.push_back(std::move(ep));
    }
    return ds;
}

}  // namespace hjsafe
