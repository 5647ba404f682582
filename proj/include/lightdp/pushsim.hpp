#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "lightdp/common.hpp"
#include "lightdp/rng.hpp"

// Deterministic 2-D T-block pushing task. A disc agent pushes a rigid
// T-shaped block toward a fixed goal pose; contacts follow a quasi-static
// rule (penetration translates the block, contact torque rotates it, both
// capped per substep). Observations are the block's 9 keypoints (8 polygon
// vertices + centroid) plus the agent position, stacked over two frames and
// normalized to [-1, 1]. Everything is a pure function of (state, action,
// config); identical seeds give bit-identical rollouts.

namespace lightdp::sim {

struct Vec2 {
    double x = 0.0, y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(Vec2 a, double c) { return {a.x * c, a.y * c}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::sqrt(a.x * a.x + a.y * a.y); }
inline Vec2 perp(Vec2 a) { return {-a.y, a.x}; }

struct BlockPose {
    double x = 0.5, y = 0.5;
    double theta = 0.0;  // wrapped to (-pi, pi]
};

double wrap_angle(double a);

// T-block geometry in the block frame (centroid at the origin):
// a horizontal bar on top of a vertical stem.
struct TShape {
    double bar_w = 0.30, bar_h = 0.08;
    double stem_w = 0.08, stem_h = 0.22;

    double bar_bottom() const;                    // y of the bar's lower edge
    double area() const { return bar_w * bar_h + stem_w * stem_h; }
    double max_radius() const;                    // centroid to farthest vertex
    std::array<Vec2, 8> vertices() const;         // polygon corners, block frame
    bool contains_local(Vec2 p) const;            // point-in-T, block frame
};

struct PushSimConfig {
    TShape shape;
    double agent_radius = 0.02;
    double agent_speed = 0.035;  // max travel per env step
    int substeps = 4;
    double push_gain = 1.0;      // fraction of penetration transferred to the block
    double rot_gain = 16.0;      // torque -> angle
    double rot_cap = 0.05;       // max |dtheta| per substep
    double coverage_threshold = 0.9;
    int max_steps = 300;
    int raster = 256;            // coverage rasterization resolution
    int obs_seq_len = 2;

    // scripted expert
    double expert_pos_tol = 0.006;
    double expert_rot_tol = 0.03;
    double expert_lat_gain = 0.55;   // rotation-assist lateral offset per radian
    double expert_lat_max = 0.09;

    int obs_dim() const { return obs_seq_len * (9 * 2 + 2); }
    int action_dim() const { return 2; }
};

struct EnvState {
    BlockPose block;
    Vec2 agent;
    BlockPose goal;
    int step_count = 0;
    std::array<double, 20> prev_frame{};  // previous keypoint frame (raw coords)
};

using Observation = std::vector<float>;  // obs_dim values in [-1, 1]

// point-in-block test in world coordinates
bool contains_world(const TShape & shape, const BlockPose & pose, Vec2 p);

// closest point on the T boundary to a world-space point; `inside` marks a
// point in the interior (normal then points toward the nearest exit).
struct Closest {
    Vec2 point;
    Vec2 normal;  // unit, from the block surface toward the query point
    double dist;  // negative depth when inside
    bool inside;
};
Closest closest_point(const TShape & shape, const BlockPose & pose, Vec2 p);

// area(block T  intersect  goal T) / area(block T), both rasterized on the
// same grid
double coverage(const PushSimConfig & cfg, const BlockPose & block, const BlockPose & goal);

Observation observe(const PushSimConfig & cfg, const EnvState & s);

EnvState reset(const PushSimConfig & cfg, std::uint64_t seed);

// action: target agent position in [-1, 1]^2 (mapped to the unit workspace)
EnvState step(const PushSimConfig & cfg, const EnvState & s, const std::array<double, 2> & action);

std::array<double, 2> scripted_expert(const PushSimConfig & cfg, const EnvState & s);

struct RolloutResult {
    bool success = false;
    double max_coverage = 0.0;
    int steps_used = 0;
    std::vector<Observation> observations;          // one per executed step
    std::vector<std::array<double, 2>> actions;
};

// Per-step expert rollout (also the demonstration generator).
RolloutResult rollout_expert(const PushSimConfig & cfg, std::uint64_t seed, bool record = false);

// Policy under evaluation: produces a full action chunk from an observation.
// begin_episode gives stateful policies (the expert wrapper) the initial
// state; network policies ignore it.
class Policy {
  public:
    virtual ~Policy() = default;
    virtual void begin_episode(const EnvState & /*init*/, std::uint64_t /*seed*/) {}
    // returns horizon * action_dim values in [-1, 1]
    virtual std::vector<double> act(const Observation & obs, Rng & rng) = 0;
    virtual int horizon() const = 0;
};

struct EpisodeRecord {
    bool success = false;
    double max_coverage = 0.0;
    int steps_used = 0;
};

struct EvalResult {
    double success_rate = 0.0;
    double mean_max_coverage = 0.0;
    std::vector<EpisodeRecord> episodes;
};

// Receding-horizon closed-loop evaluation: predict a chunk, execute the
// first `exec_horizon` actions, re-observe. Episodes are sharded across
// OpenMP threads; per-episode results are deterministic and the aggregate is
// order-independent.
EvalResult evaluate(const PushSimConfig & cfg, Policy & policy, int n_episodes,
                    std::uint64_t seed_base, int max_steps, int exec_horizon,
                    bool parallel = true);

// Expert seen through the Policy interface: simulates its own state copy
// forward with the shared dynamics, so closed-loop execution reproduces the
// per-step expert rollout exactly.
class ExpertPolicy : public Policy {
  public:
    ExpertPolicy(const PushSimConfig & cfg, int horizon, int exec_horizon)
        : cfg_(cfg), horizon_(horizon), exec_(exec_horizon) {}

    void begin_episode(const EnvState & init, std::uint64_t) override { state_ = init; }

    std::vector<double> act(const Observation &, Rng &) override {
        std::vector<double> out;
        out.reserve(size_t(horizon_) * 2);
        EnvState s = state_;
        for (int t = 0; t < horizon_; ++t) {
            const auto a = scripted_expert(cfg_, s);
            out.push_back(a[0]);
            out.push_back(a[1]);
            s = step(cfg_, s, a);
            if (t + 1 == exec_) state_ = s;  // stay in sync with the executor
        }
        return out;
    }

    int horizon() const override { return horizon_; }

  private:
    PushSimConfig cfg_;
    int horizon_, exec_;
    EnvState state_;
};

}  // namespace lightdp::sim
