#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>

#include "lightdp/pushsim.hpp"

using namespace lightdp;
using namespace lightdp::sim;

namespace {

bool states_equal(const EnvState & a, const EnvState & b) {
    return std::memcmp(&a.block, &b.block, sizeof(BlockPose)) == 0 &&
           a.agent.x == b.agent.x && a.agent.y == b.agent.y && a.step_count == b.step_count &&
           std::memcmp(a.prev_frame.data(), b.prev_frame.data(), sizeof(a.prev_frame)) == 0;
}

std::array<Vec2, 8> world_vertices(const PushSimConfig & cfg, const BlockPose & p) {
    std::array<Vec2, 8> out{};
    int k = 0;
    for (const Vec2 & v : cfg.shape.vertices()) {
        const double c = std::cos(p.theta), s = std::sin(p.theta);
        out[size_t(k++)] = {c * v.x - s * v.y + p.x, s * v.x + c * v.y + p.y};
    }
    return out;
}

}  // namespace

TEST_CASE("reset is bit-deterministic per seed") {
    PushSimConfig cfg;
    for (std::uint64_t seed : {0ull, 7ull, 123456ull}) {
        auto a = reset(cfg, seed);
        auto b = reset(cfg, seed);
        CHECK(states_equal(a, b));
    }
}

TEST_CASE("1000 seeds: initial coverage below 0.1") {
    PushSimConfig cfg;
    for (int seed = 0; seed < 1000; ++seed) {
        auto s = reset(cfg, std::uint64_t(seed));
        CHECK(coverage(cfg, s.block, s.goal) < 0.1);
    }
}

TEST_CASE("different seeds give different block poses") {
    PushSimConfig cfg;
    std::set<std::pair<long long, long long>> seen;
    for (int seed = 0; seed < 100; ++seed) {
        auto s = reset(cfg, std::uint64_t(seed));
        seen.insert({(long long)(s.block.x * 1e12), (long long)(s.block.y * 1e12)});
    }
    CHECK(seen.size() == 100);
}

TEST_CASE("no-contact action leaves everything but step_count unchanged") {
    PushSimConfig cfg;
    auto s = reset(cfg, 3);
    // command the agent to stay where it is
    const std::array<double, 2> hold{2.0 * s.agent.x - 1.0, 2.0 * s.agent.y - 1.0};
    auto s2 = step(cfg, s, hold);
    CHECK(s2.step_count == s.step_count + 1);
    CHECK(s2.block.x == s.block.x);
    CHECK(s2.block.y == s.block.y);
    CHECK(s2.block.theta == s.block.theta);
    CHECK(s2.agent.x == doctest::Approx(s.agent.x).epsilon(1e-12));
    CHECK(s2.agent.y == doctest::Approx(s.agent.y).epsilon(1e-12));
}

TEST_CASE("head-on central push translates without rotation") {
    PushSimConfig cfg;
    EnvState s;
    s.block = {0.5, 0.5, 0.0};
    s.goal = {0.5, 0.5, 0.0};
    // centroid height on the stem's left face, pushing along +x
    s.agent = {0.5 - cfg.shape.stem_w / 2 - cfg.agent_radius - 0.001, 0.5};
    s.step_count = 0;
    auto s2 = step(cfg, s, {1.0, 0.0});
    CHECK(s2.block.x > s.block.x);
    CHECK(s2.block.theta == s.block.theta);
    CHECK(s2.block.y == doctest::Approx(s.block.y).epsilon(1e-12));
}

TEST_CASE("off-center push rotates with the sign of the contact torque") {
    PushSimConfig cfg;
    // offsets chosen on the stem's left face (it spans roughly y in
    // [-0.20, 0.02] around the centroid)
    for (double offset : {0.02, -0.05, -0.09, -0.14}) {
        EnvState s;
        s.block = {0.5, 0.5, 0.0};
        s.goal = {0.5, 0.5, 0.0};
        s.agent = {0.5 - cfg.shape.stem_w / 2 - cfg.agent_radius - 0.001, 0.5 + offset};
        s.step_count = 0;
        auto s2 = step(cfg, s, {1.0, 2.0 * s.agent.y - 1.0});

        // independent contact-geometry oracle: contact on the stem's left
        // face at the agent's height, impulse along +x
        const double rx = -cfg.shape.stem_w / 2;
        const double ry = offset;
        const double torque = rx * 0.0 - ry * 1.0;  // cross((rx,ry), (1,0))
        const double dtheta = wrap_angle(s2.block.theta - s.block.theta);
        CHECK(dtheta * torque > 0.0);
    }
}

TEST_CASE("coverage: identical poses 1.0, disjoint 0.0") {
    PushSimConfig cfg;
    BlockPose a{0.5, 0.5, 0.7};
    CHECK(coverage(cfg, a, a) == 1.0);
    BlockPose far{0.15, 0.15, 0.0};
    BlockPose opposite{0.85, 0.85, 1.2};
    CHECK(coverage(cfg, far, opposite) == 0.0);
}

TEST_CASE("coverage matches the analytic rectangle-intersection oracle") {
    PushSimConfig cfg;
    const double d = cfg.shape.stem_w / 2;  // axis-aligned shift by half the stem width
    BlockPose a{0.5, 0.5, 0.0};
    BlockPose b{0.5 + d, 0.5, 0.0};
    // axis-aligned T's overlap = bar-bar + stem-stem rectangle intersections
    const double inter = (cfg.shape.bar_w - d) * cfg.shape.bar_h +
                         (cfg.shape.stem_w - d) * cfg.shape.stem_h;
    const double expect = inter / cfg.shape.area();
    CHECK(std::fabs(coverage(cfg, a, b) - expect) <= 0.01);
}

TEST_CASE("coverage is invariant under joint rigid transforms") {
    PushSimConfig cfg;
    BlockPose a{0.45, 0.52, 0.3};
    BlockPose b{0.5, 0.5, 0.1};
    const double base = coverage(cfg, a, b);
    // rotate both poses about the workspace center and translate them together
    for (double phi : {0.4, -1.1}) {
        const double c = std::cos(phi), s = std::sin(phi);
        auto xform = [&](const BlockPose & p) {
            const double dx = p.x - 0.5, dy = p.y - 0.5;
            return BlockPose{0.5 + c * dx - s * dy + 0.03, 0.5 + s * dx + c * dy - 0.02,
                             wrap_angle(p.theta + phi)};
        };
        CHECK(std::fabs(coverage(cfg, xform(a), xform(b)) - base) <= 0.01);
    }
}

TEST_CASE("rigid body: keypoint pairwise distances constant across steps") {
    PushSimConfig cfg;
    auto s = reset(cfg, 11);
    auto d0 = world_vertices(cfg, s.block);
    Rng rng(5);
    for (int t = 0; t < 40; ++t) {
        s = step(cfg, s, {rng.uniform(-1, 1), rng.uniform(-1, 1)});
        auto d1 = world_vertices(cfg, s.block);
        for (int i = 0; i < 8; ++i)
            for (int j = i + 1; j < 8; ++j) {
                const double l0 = norm(d0[size_t(i)] - d0[size_t(j)]);
                const double l1 = norm(d1[size_t(i)] - d1[size_t(j)]);
                CHECK(std::fabs(l0 - l1) <= 1e-9);
            }
    }
}

TEST_CASE("stepping is pure: same state and action give the same next state") {
    PushSimConfig cfg;
    auto s = reset(cfg, 19);
    const std::array<double, 2> a{0.3, -0.2};
    auto s1 = step(cfg, s, a);
    auto s2 = step(cfg, s, a);
    CHECK(states_equal(s1, s2));
}

TEST_CASE("observation layout and range") {
    PushSimConfig cfg;
    auto s = reset(cfg, 23);
    auto obs = observe(cfg, s);
    CHECK(int(obs.size()) == cfg.obs_dim());
    CHECK(int(obs.size()) == 40);
    for (float v : obs) {
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
    }
    // at reset both frames are identical
    for (int i = 0; i < 20; ++i) CHECK(obs[size_t(i)] == obs[size_t(20 + i)]);
}

TEST_CASE("expert keeps clear when the block is already at the goal") {
    PushSimConfig cfg;
    EnvState s;
    s.block = {0.5, 0.5, 0.0};
    s.goal = {0.5, 0.5, 0.0};
    s.agent = {0.35, 0.5};
    auto a = scripted_expert(cfg, s);
    const Vec2 target{(a[0] + 1) / 2, (a[1] + 1) / 2};
    CHECK(norm(target - Vec2{0.5, 0.5}) > 0.4);  // parks far from the block
}

TEST_CASE("expert trajectories are deterministic per seed") {
    PushSimConfig cfg;
    auto a = rollout_expert(cfg, 31, true);
    auto b = rollout_expert(cfg, 31, true);
    CHECK(a.success == b.success);
    CHECK(a.steps_used == b.steps_used);
    REQUIRE(a.actions.size() == b.actions.size());
    for (size_t i = 0; i < a.actions.size(); ++i) {
        CHECK(a.actions[i][0] == b.actions[i][0]);
        CHECK(a.actions[i][1] == b.actions[i][1]);
    }
}

TEST_CASE("expert succeeds on at least 95% of 200 seeded episodes") {
    PushSimConfig cfg;
    int succ = 0;
    for (int i = 0; i < 200; ++i) succ += rollout_expert(cfg, 1000 + std::uint64_t(i)).success;
    CHECK(double(succ) / 200.0 >= 0.95);
}

TEST_CASE("random-action policy rarely succeeds") {
    PushSimConfig cfg;
    struct RandomPolicy : Policy {
        std::vector<double> act(const Observation &, Rng & rng) override {
            std::vector<double> out(32);
            for (auto & v : out) v = rng.uniform(-1, 1);
            return out;
        }
        int horizon() const override { return 16; }
    } pol;
    auto res = evaluate(cfg, pol, 100, 500, 300, 8);
    CHECK(res.success_rate <= 0.05);
}

TEST_CASE("expert wrapped as a policy matches the per-step expert exactly") {
    PushSimConfig cfg;
    const int n = 30;
    const std::uint64_t base = 9000;
    ExpertPolicy pol(cfg, 16, 8);
    auto res = evaluate(cfg, pol, n, base, 300, 8, /*parallel=*/false);
    for (int i = 0; i < n; ++i) {
        auto direct = rollout_expert(cfg, base + std::uint64_t(i));
        CHECK(res.episodes[size_t(i)].success == direct.success);
    }
}

TEST_CASE("evaluation is bit-reproducible across runs and thread counts") {
    PushSimConfig cfg;
    struct NudgePolicy : Policy {  // deterministic, rng-consuming
        std::vector<double> act(const Observation & obs, Rng & rng) override {
            std::vector<double> out(32);
            for (size_t i = 0; i < out.size(); ++i)
                out[i] = 0.5 * obs[i % obs.size()] + 0.01 * rng.uniform(-1, 1);
            return out;
        }
        int horizon() const override { return 16; }
    } pol;
    auto a = evaluate(cfg, pol, 16, 42, 60, 8, true);
    auto b = evaluate(cfg, pol, 16, 42, 60, 8, false);
    CHECK(a.success_rate == b.success_rate);
    for (int i = 0; i < 16; ++i) {
        CHECK(a.episodes[size_t(i)].max_coverage == b.episodes[size_t(i)].max_coverage);
        CHECK(a.episodes[size_t(i)].steps_used == b.episodes[size_t(i)].steps_used);
    }
}
