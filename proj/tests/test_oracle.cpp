#include <gtest/gtest.h>

#include "hjsafe/grid_oracle.hpp"

using namespace hjsafe;

namespace {

// Independent brute-force finite-horizon DP used as the oracle for
// value_iteration: W_0 = h, W_{T+1}(s) = min(h(s), max_a W_T(f(s,a))),
// with its own interpolation written as nested lerps.
struct TinyDp {
    const WorldSpec& spec;
    GridSpec g;
    std::vector<double> w;

    double lerp_query(const std::vector<double>& v, double x, double y, double theta) const {
        auto lerp = [](double a, double b, double f) { return a + (b - a) * f; };
        double u = std::clamp((x - g.x_min) / g.dx(), 0.0, double(g.nx - 1));
        double s = std::clamp((y - g.y_min) / g.dy(), 0.0, double(g.ny - 1));
        int i0 = std::min(int(u), g.nx - 2), j0 = std::min(int(s), g.ny - 2);
        double fx = u - i0, fy = s - j0;
        double t = (wrap_angle(theta) + 3.14159265358979323846) / g.dtheta();
        int k0 = int(t);
        double ft = t - k0;
        if (k0 >= g.nt) { k0 = 0; ft = 0; }
        int k1 = (k0 + 1) % g.nt;
        auto at = [&](int i, int j, int k) { return v[g.idx(i, j, k)]; };
        double c00 = lerp(at(i0, j0, k0), at(i0, j0, k1), ft);
        double c01 = lerp(at(i0, j0 + 1, k0), at(i0, j0 + 1, k1), ft);
        double c10 = lerp(at(i0 + 1, j0, k0), at(i0 + 1, j0, k1), ft);
        double c11 = lerp(at(i0 + 1, j0 + 1, k0), at(i0 + 1, j0 + 1, k1), ft);
        return lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fx);
    }

    explicit TinyDp(const WorldSpec& sp, const GridSpec& gs, int horizon) : spec(sp), g(gs) {
        std::vector<double> h(g.nodes());
        for (int i = 0; i < g.nx; ++i)
            for (int j = 0; j < g.ny; ++j)
                for (int k = 0; k < g.nt; ++k)
                    h[g.idx(i, j, k)] =
                        signed_distance(spec, {g.x_at(i), g.y_at(j), g.theta_at(k)});
        w = h;
        std::vector<double> next(g.nodes());
        for (int t = 0; t < horizon; ++t) {
            for (int i = 0; i < g.nx; ++i)
                for (int j = 0; j < g.ny; ++j)
                    for (int k = 0; k < g.nt; ++k) {
                        const State s{g.x_at(i), g.y_at(j), g.theta_at(k)};
                        double best = -1e300;
                        for (int a = 0; a < kNumActions; ++a) {
                            const State n = step(spec, s, a);
                            best = std::max(best, lerp_query(w, n.x, n.y, n.theta));
                        }
                        next[g.idx(i, j, k)] = std::min(h[g.idx(i, j, k)], best);
                    }
            w.swap(next);
        }
    }
};

ValueGrid constant_grid(double value, int nx = 5, int ny = 5, int nt = 4) {
    ValueGrid vg;
    vg.grid.nx = nx;
    vg.grid.ny = ny;
    vg.grid.nt = nt;
    vg.v.assign(vg.grid.nodes(), value);
    vg.converged = true;
    return vg;
}

}  // namespace

TEST(ValueIteration, NoObstaclesConstantMargin) {
    WorldSpec spec;
    spec.obstacles.clear();
    const auto grid = GridSpec::for_world(spec, 9, 9, 8);
    const auto vg = value_iteration(spec, grid, 1e-9, 50, [](const State&) { return 1.0; });
    EXPECT_TRUE(vg.converged);
    EXPECT_EQ(vg.iterations, 1);
    for (double v : vg.v) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(ValueIteration, FailureNodesStayNegative) {
    WorldSpec spec;
    const auto grid = GridSpec::for_world(spec, 17, 17, 8);
    const auto vg = value_iteration(spec, grid, 1e-4, 200);
    for (int i = 0; i < grid.nx; ++i)
        for (int j = 0; j < grid.ny; ++j)
            for (int k = 0; k < grid.nt; ++k) {
                const double h =
                    signed_distance(spec, {grid.x_at(i), grid.y_at(j), grid.theta_at(k)});
                EXPECT_LE(vg.v[grid.idx(i, j, k)], h + 1e-12);
                if (h < 0) EXPECT_LT(vg.v[grid.idx(i, j, k)], 0.0);
            }
}

TEST(ValueIteration, MatchesBruteForceDpOnTinyGrid) {
    WorldSpec spec;
    const auto grid = GridSpec::for_world(spec, 5, 5, 4);
    const TinyDp dp(spec, grid, 50);
    const auto vg = value_iteration(spec, grid, 0.0, 50);
    ASSERT_EQ(vg.v.size(), dp.w.size());
    for (size_t i = 0; i < vg.v.size(); ++i) EXPECT_NEAR(vg.v[i], dp.w[i], 1e-6);
}

TEST(ValueIteration, IteratesAreMonotoneNonIncreasing) {
    WorldSpec spec;
    const auto grid = GridSpec::for_world(spec, 33, 33, 16);
    const auto vg = value_iteration(spec, grid, 1e-4, 300);
    EXPECT_LE(vg.max_increase, 1e-12);
}

TEST(ValueIteration, ConvergedResidualMeetsBellman) {
    WorldSpec spec;
    const auto grid = GridSpec::for_world(spec, 41, 41, 19);
    const auto vg = value_iteration(spec, grid, 1e-4, 500);
    ASSERT_TRUE(vg.converged);
    EXPECT_LE(vg.residual, 1e-4);
    // recheck sup-node Bellman residual directly
    double worst = 0;
    for (int i = 0; i < grid.nx; ++i)
        for (int j = 0; j < grid.ny; ++j)
            for (int k = 0; k < grid.nt; ++k) {
                const State s{grid.x_at(i), grid.y_at(j), grid.theta_at(k)};
                double best = -1e300;
                for (int a = 0; a < kNumActions; ++a)
                    best = std::max(best, query(vg, step(spec, s, a)));
                const double target = std::min(signed_distance(spec, s), best);
                worst = std::max(worst, std::abs(vg.v[grid.idx(i, j, k)] - target));
            }
    EXPECT_LE(worst, 1e-4 + 1e-9);
}

TEST(Query, NodeAndMidpointInterpolation) {
    ValueGrid vg;
    vg.grid.nx = 3;
    vg.grid.ny = 2;
    vg.grid.nt = 4;
    vg.v.resize(vg.grid.nodes());
    Rng rng(5);
    for (auto& v : vg.v) v = rng.uniform(-1, 1);
    const auto& g = vg.grid;
    for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.ny; ++j)
            for (int k = 0; k < g.nt; ++k) {
                const State s{g.x_at(i), g.y_at(j), g.theta_at(k)};
                EXPECT_NEAR(query(vg, s), vg.v[g.idx(i, j, k)], 1e-12);
            }
    // midpoint along x, other axes on-node
    const State mid{0.5 * (g.x_at(0) + g.x_at(1)), g.y_at(1), g.theta_at(2)};
    EXPECT_NEAR(query(vg, mid), 0.5 * (vg.v[g.idx(0, 1, 2)] + vg.v[g.idx(1, 1, 2)]), 1e-12);
}

TEST(Query, ThetaPeriodicity) {
    WorldSpec spec;
    const auto grid = GridSpec::for_world(spec, 9, 9, 8);
    const auto vg = value_iteration(spec, grid, 1e-4, 100);
    Rng rng(3);
    for (int t = 0; t < 200; ++t) {
        const double x = rng.uniform(spec.x_min, spec.x_max);
        const double y = rng.uniform(spec.y_min, spec.y_max);
        const double th = rng.uniform(-3.14159265358979, 3.14159265358979);
        EXPECT_NEAR(query(vg, {x, y, th}), query(vg, {x, y, th + 6.283185307179586}), 1e-9);
        EXPECT_NEAR(query(vg, {x, y, -3.14159265358979323846}),
                    query(vg, {x, y, 3.14159265358979323846}), 1e-9);
    }
}

TEST(BrsSlice, ObstacleInteriorTrueAndPeriodic) {
    WorldSpec spec;
    const auto grid = GridSpec::for_world(spec, 33, 33, 16);
    const auto vg = value_iteration(spec, grid, 1e-4, 300);
    const auto m0 = brs_slice(vg, 0.0);
    const auto m2pi = brs_slice(vg, 6.283185307179586);
    EXPECT_EQ(m0, m2pi);
    int i_obs = 0, j_obs = 0;
    double best = 1e300;
    for (int i = 0; i < grid.nx; ++i)
        for (int j = 0; j < grid.ny; ++j) {
            const double d = std::hypot(grid.x_at(i) + 0.75, grid.y_at(j));
            if (d < best) {
                best = d;
                i_obs = i;
                j_obs = j;
            }
        }
    EXPECT_TRUE(m0[static_cast<size_t>(i_obs) * grid.ny + j_obs]);
    // far corner heading away from everything is safe
    const auto m_away = brs_slice(vg, -3.14159265358979323846 / 2);  // heading -y
    EXPECT_FALSE(m_away[static_cast<size_t>(grid.nx - 1) * grid.ny + 0]);  // corner (x_max, y_min)
}

TEST(OracleAction, TieBreaksToLowestId) {
    WorldSpec spec;
    const auto vg = constant_grid(0.37);
    EXPECT_EQ(oracle_safe_action(vg, spec, {0, 0, 0}), 0);
    EXPECT_EQ(oracle_safe_action(vg, spec, {1, -1, 2.0}), 0);
}

TEST(OracleAction, SteersAwayFromObstacleAhead) {
    WorldSpec spec;
    const auto grid = GridSpec::for_world(spec, 41, 41, 19);
    const auto vg = value_iteration(spec, grid, 1e-4, 500);
    const State s{-1.6, 0.0, 0.0};  // obstacle 1 dead ahead at 0.35 m
    const int a = oracle_safe_action(vg, spec, s);
    EXPECT_NE(a, kActionStraight);
    const double q_straight = query(vg, step(spec, s, kActionStraight));
    const double q_chosen = query(vg, step(spec, s, a));
    EXPECT_GT(q_chosen, q_straight);
}

TEST(OraclePolicy, KeepsSafeStatesSafe) {
    WorldSpec spec;
    const auto grid = GridSpec::for_world(spec, 41, 41, 19);
    const auto vg = value_iteration(spec, grid, 1e-4, 500);
    Rng rng(11);
    int tested = 0;
    constexpr double kMargin = 0.1;
    while (tested < 200) {
        const State s0 = sample_arena_state(spec, rng);
        if (query(vg, s0) <= kMargin) continue;
        ++tested;
        State s = s0;
        for (int t = 0; t < spec.horizon; ++t) {
            s = step(spec, s, oracle_safe_action(vg, spec, s));
            ASSERT_GE(signed_distance(spec, s), 0.0)
                << "violation from safe start (" << s0.x << "," << s0.y << "," << s0.theta << ")";
        }
    }
}

TEST(ValueGridIo, RoundTripAndIdempotentBytes) {
    WorldSpec spec;
    const auto grid = GridSpec::for_world(spec, 9, 9, 8);
    const auto vg = value_iteration(spec, grid, 1e-4, 100);
    const std::string p1 = testing::TempDir() + "v1.vgrd";
    const std::string p2 = testing::TempDir() + "v2.vgrd";
    save_value_grid(vg, p1);
    const auto loaded = load_value_grid(p1);
    save_value_grid(loaded, p2);
    EXPECT_EQ(hash_file(p1), hash_file(p2));
    EXPECT_EQ(loaded.grid.nx, vg.grid.nx);
    for (size_t i = 0; i < vg.v.size(); ++i)
        EXPECT_NEAR(loaded.v[i], vg.v[i], 1e-6);  // f32 payload quantization
}

TEST(Masks, IouBasics) {
    std::vector<uint8_t> a{1, 1, 0, 0};
    std::vector<uint8_t> b{1, 0, 1, 0};
    EXPECT_DOUBLE_EQ(mask_iou(a, b), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(mask_iou(a, a), 1.0);
    EXPECT_DOUBLE_EQ(mask_iou({0, 0}, {0, 0}), 1.0);
}
