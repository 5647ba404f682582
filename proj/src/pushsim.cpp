#include "lightdp/pushsim.hpp"

#include <algorithm>
#include <cmath>

#include <omp.h>

namespace lightdp::sim {

double wrap_angle(double a) {
    while (a <= -M_PI) a += 2.0 * M_PI;
    while (a > M_PI) a -= 2.0 * M_PI;
    return a;
}

namespace {

inline Vec2 rotate(Vec2 p, double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    return {c * p.x - s * p.y, s * p.x + c * p.y};
}

inline Vec2 to_local(const BlockPose & pose, Vec2 world) {
    return rotate(world - Vec2{pose.x, pose.y}, -pose.theta);
}

inline Vec2 to_world(const BlockPose & pose, Vec2 local) {
    return rotate(local, pose.theta) + Vec2{pose.x, pose.y};
}

struct Rect {  // axis-aligned in the block frame
    double x0, x1, y0, y1;
    bool contains(Vec2 p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
};

std::array<Rect, 2> rects(const TShape & t) {
    const double b0 = t.bar_bottom();
    return {Rect{-t.bar_w / 2, t.bar_w / 2, b0, b0 + t.bar_h},
            Rect{-t.stem_w / 2, t.stem_w / 2, b0 - t.stem_h, b0}};
}

// closest boundary point of one rect for an OUTSIDE point
void rect_closest_outside(const Rect & r, Vec2 p, Vec2 & cp, double & dist) {
    cp = {std::clamp(p.x, r.x0, r.x1), std::clamp(p.y, r.y0, r.y1)};
    dist = norm(p - cp);
}

// smallest exit for an INSIDE point
void rect_exit(const Rect & r, Vec2 p, Vec2 & cp, Vec2 & n, double & depth) {
    const double dl = p.x - r.x0, dr = r.x1 - p.x;
    const double db = p.y - r.y0, dt = r.y1 - p.y;
    depth = dl;
    cp = {r.x0, p.y};
    n = {-1, 0};
    if (dr < depth) { depth = dr; cp = {r.x1, p.y}; n = {1, 0}; }
    if (db < depth) { depth = db; cp = {p.x, r.y0}; n = {0, -1}; }
    if (dt < depth) { depth = dt; cp = {p.x, r.y1}; n = {0, 1}; }
}

// support distance of the T along a world direction
double support(const TShape & shape, const BlockPose & pose, Vec2 dir_world) {
    const Vec2 d = rotate(dir_world, -pose.theta);
    double best = 0.0;
    for (const Vec2 & v : shape.vertices()) best = std::max(best, dot(v, d));
    return best;
}

std::array<double, 20> current_frame(const PushSimConfig & cfg, const BlockPose & block,
                                     Vec2 agent) {
    std::array<double, 20> f{};
    int k = 0;
    for (const Vec2 & kv : cfg.shape.vertices()) {
        const Vec2 w = to_world(block, kv);
        f[size_t(k++)] = w.x;
        f[size_t(k++)] = w.y;
    }
    f[16] = block.x;
    f[17] = block.y;
    f[18] = agent.x;
    f[19] = agent.y;
    return f;
}

}  // namespace

double TShape::bar_bottom() const {
    // place the centroid of bar+stem at the origin
    const double ab = bar_w * bar_h, as = stem_w * stem_h;
    return -(ab * bar_h / 2 - as * stem_h / 2) / (ab + as);
}

double TShape::max_radius() const {
    double r = 0.0;
    for (const Vec2 & v : vertices()) r = std::max(r, norm(v));
    return r;
}

std::array<Vec2, 8> TShape::vertices() const {
    const double b0 = bar_bottom();
    return {Vec2{-bar_w / 2, b0 + bar_h}, Vec2{-bar_w / 2, b0},
            Vec2{-stem_w / 2, b0},        Vec2{-stem_w / 2, b0 - stem_h},
            Vec2{stem_w / 2, b0 - stem_h}, Vec2{stem_w / 2, b0},
            Vec2{bar_w / 2, b0},          Vec2{bar_w / 2, b0 + bar_h}};
}

bool TShape::contains_local(Vec2 p) const {
    const auto rs = rects(*this);
    return rs[0].contains(p) || rs[1].contains(p);
}

bool contains_world(const TShape & shape, const BlockPose & pose, Vec2 p) {
    return shape.contains_local(to_local(pose, p));
}

Closest closest_point(const TShape & shape, const BlockPose & pose, Vec2 p) {
    const Vec2 local = to_local(pose, p);
    const auto rs = rects(shape);
    const bool in0 = rs[0].contains(local), in1 = rs[1].contains(local);

    Closest out;
    if (in0 || in1) {
        Vec2 cp0{}, n0{}, cp1{}, n1{};
        double d0 = 1e9, d1 = 1e9;
        if (in0) rect_exit(rs[0], local, cp0, n0, d0);
        if (in1) rect_exit(rs[1], local, cp1, n1, d1);
        // prefer the exit that does not land inside the other rect
        bool use0 = d0 <= d1;
        if (use0 && in1 && rs[1].contains(cp0 + n0 * 1e-9)) use0 = false;
        else if (!use0 && in0 && rs[0].contains(cp1 + n1 * 1e-9)) use0 = true;
        const Vec2 cp = use0 ? cp0 : cp1;
        const Vec2 n = use0 ? n0 : n1;
        out.point = to_world(pose, cp);
        out.normal = rotate(n, pose.theta);
        out.dist = -(use0 ? d0 : d1);
        out.inside = true;
        return out;
    }

    Vec2 cp0, cp1;
    double d0, d1;
    rect_closest_outside(rs[0], local, cp0, d0);
    rect_closest_outside(rs[1], local, cp1, d1);
    const Vec2 cp = d0 <= d1 ? cp0 : cp1;
    const double d = std::min(d0, d1);
    out.point = to_world(pose, cp);
    out.inside = false;
    out.dist = d;
    if (d > 1e-12) {
        out.normal = rotate((local - cp) * (1.0 / d), pose.theta);
    } else {
        out.normal = rotate(Vec2{0, 1}, pose.theta);  // degenerate touch
    }
    return out;
}

double coverage(const PushSimConfig & cfg, const BlockPose & block, const BlockPose & goal) {
    const int N = cfg.raster;
    const double r = cfg.shape.max_radius();
    // only pixels inside the block's bounding box can count
    const int i0 = std::max(0, int((block.x - r) * N));
    const int i1 = std::min(N - 1, int((block.x + r) * N) + 1);
    const int j0 = std::max(0, int((block.y - r) * N));
    const int j1 = std::min(N - 1, int((block.y + r) * N) + 1);
    long in_block = 0, in_both = 0;
    for (int j = j0; j <= j1; ++j) {
        const double py = (j + 0.5) / N;
        for (int i = i0; i <= i1; ++i) {
            const double px = (i + 0.5) / N;
            if (!contains_world(cfg.shape, block, {px, py})) continue;
            ++in_block;
            if (contains_world(cfg.shape, goal, {px, py})) ++in_both;
        }
    }
    if (in_block == 0) return 0.0;
    return double(in_both) / double(in_block);
}

Observation observe(const PushSimConfig & cfg, const EnvState & s) {
    Observation obs;
    obs.reserve(size_t(cfg.obs_dim()));
    // previous frame first, most-recent frame last
    for (double v : s.prev_frame) obs.push_back(float(2.0 * v - 1.0));
    for (double v : current_frame(cfg, s.block, s.agent)) obs.push_back(float(2.0 * v - 1.0));
    return obs;
}

EnvState reset(const PushSimConfig & cfg, std::uint64_t seed) {
    Rng rng(seed * 0x9E3779B97F4A7C15ull + 0xD1B54A32D192ED03ull);
    EnvState s;
    s.goal = {0.5, 0.5, 0.0};

    // sample a block pose with initial coverage < 0.1, inside the workspace
    for (int attempt = 0; attempt < 1000; ++attempt) {
        s.block.x = rng.uniform(0.22, 0.78);
        s.block.y = rng.uniform(0.22, 0.78);
        s.block.theta = wrap_angle(rng.uniform(-M_PI, M_PI));
        if (coverage(cfg, s.block, s.goal) < 0.1) break;
    }
    // agent anywhere clear of the block
    for (int attempt = 0; attempt < 1000; ++attempt) {
        s.agent.x = rng.uniform(0.05, 0.95);
        s.agent.y = rng.uniform(0.05, 0.95);
        const auto c = closest_point(cfg.shape, s.block, s.agent);
        if (!c.inside && c.dist > cfg.agent_radius + 0.02) break;
    }
    s.step_count = 0;
    s.prev_frame = current_frame(cfg, s.block, s.agent);
    return s;
}

EnvState step(const PushSimConfig & cfg, const EnvState & s0, const std::array<double, 2> & action) {
    EnvState s = s0;
    s.prev_frame = current_frame(cfg, s.block, s.agent);

    const Vec2 target{std::clamp((action[0] + 1.0) / 2.0, 0.0, 1.0),
                      std::clamp((action[1] + 1.0) / 2.0, 0.0, 1.0)};
    const double sub_speed = cfg.agent_speed / cfg.substeps;

    for (int sub = 0; sub < cfg.substeps; ++sub) {
        Vec2 d = target - s.agent;
        const double dist = norm(d);
        if (dist > 1e-12) {
            const double move = std::min(sub_speed, dist);
            s.agent = s.agent + d * (move / dist);
        }
        s.agent.x = std::clamp(s.agent.x, cfg.agent_radius, 1.0 - cfg.agent_radius);
        s.agent.y = std::clamp(s.agent.y, cfg.agent_radius, 1.0 - cfg.agent_radius);

        auto c = closest_point(cfg.shape, s.block, s.agent);
        const double pen = cfg.agent_radius - c.dist;  // dist is negative inside
        if (pen <= 0.0) continue;

        // quasi-static push: penetration translates the block along the
        // inward normal; the contact torque rotates it, capped per substep
        const Vec2 impulse = c.normal * (-pen * cfg.push_gain);
        s.block.x += impulse.x;
        s.block.y += impulse.y;
        const Vec2 lever = c.point - Vec2{s0.block.x, s0.block.y};
        const double torque = cross(lever, impulse);
        s.block.theta = wrap_angle(s.block.theta +
                                   std::clamp(cfg.rot_gain * torque, -cfg.rot_cap, cfg.rot_cap));

        // keep every keypoint inside the unit workspace (support-based, so
        // the block can sit close to a wall when its thin side faces it)
        const double sxm = support(cfg.shape, s.block, {-1, 0});
        const double sxp = support(cfg.shape, s.block, {1, 0});
        const double sym = support(cfg.shape, s.block, {0, -1});
        const double syp = support(cfg.shape, s.block, {0, 1});
        s.block.x = std::clamp(s.block.x, sxm + 0.004, 1.0 - sxp - 0.004);
        s.block.y = std::clamp(s.block.y, sym + 0.004, 1.0 - syp - 0.004);

        // expel the agent if it still overlaps after the block moved
        auto c2 = closest_point(cfg.shape, s.block, s.agent);
        if (c2.inside || c2.dist < cfg.agent_radius) {
            s.agent = c2.point + c2.normal * cfg.agent_radius;
            s.agent.x = std::clamp(s.agent.x, cfg.agent_radius, 1.0 - cfg.agent_radius);
            s.agent.y = std::clamp(s.agent.y, cfg.agent_radius, 1.0 - cfg.agent_radius);
        }
    }
    s.step_count = s0.step_count + 1;
    return s;
}

namespace {

std::array<double, 2> to_action(Vec2 target) {
    return {std::clamp(2.0 * target.x - 1.0, -1.0, 1.0),
            std::clamp(2.0 * target.y - 1.0, -1.0, 1.0)};
}

// Waypoint routing that keeps the agent from barging through the block: if
// the straight path to `dest` clips the block's bounding circle, orbit
// around it; a destination near the block is entered radially once the agent
// is on its side.
Vec2 navigate(const PushSimConfig & cfg, const EnvState & s, Vec2 dest) {
    const Vec2 c{s.block.x, s.block.y};
    const double safe = cfg.shape.max_radius() + cfg.agent_radius + 0.015;
    const Vec2 to_dest = dest - s.agent;
    const double seg_len = norm(to_dest);
    if (seg_len < 1e-9) return dest;

    const Vec2 u = to_dest * (1.0 / seg_len);
    const double t = std::clamp(dot(c - s.agent, u), 0.0, seg_len);
    const Vec2 seg_closest = s.agent + u * t;
    if (norm(c - seg_closest) >= safe) return dest;

    Vec2 radial = s.agent - c;
    double rlen = norm(radial);
    if (rlen < 1e-9) {
        radial = {1.0, 0.0};
        rlen = 1.0;
    }
    radial = radial * (1.0 / rlen);

    // final radial approach corridor for contact points near the block
    Vec2 dest_dir = dest - c;
    const double dest_r = norm(dest_dir);
    if (dest_r > 1e-9) {
        dest_dir = dest_dir * (1.0 / dest_r);
        if (dest_r < safe + 0.03 && dot(radial, dest_dir) > 0.93) return dest;
        // orbit toward the destination's side
        Vec2 tangent = perp(radial);
        if (cross(radial, dest_dir) < 0.0) tangent = tangent * -1.0;
        return c + (radial + tangent * 0.5) * (safe * 1.06);
    }
    return dest;
}

// Candidate contact faces for rotating the block: (local contact point,
// local outward face normal, torque sign of a push through that face).
struct RotContact {
    Vec2 point;
    Vec2 normal;
    int torque_sign;
};

std::array<RotContact, 6> rot_contacts(const TShape & t) {
    const double b0 = t.bar_bottom();
    const double xe = t.bar_w / 2 - 0.03;    // inset from the bar ends
    const double ylow = b0 - t.stem_h + 0.04;
    return {RotContact{{-xe, b0 + t.bar_h}, {0, 1}, +1},   // press down, left end
            RotContact{{+xe, b0 + t.bar_h}, {0, 1}, -1},   // press down, right end
            RotContact{{-xe, b0}, {0, -1}, -1},            // press up, left end
            RotContact{{+xe, b0}, {0, -1}, +1},            // press up, right end
            RotContact{{-t.stem_w / 2, ylow}, {-1, 0}, +1},  // stem low, push right
            RotContact{{+t.stem_w / 2, ylow}, {1, 0}, -1}};  // stem low, push left
}

}  // namespace

std::array<double, 2> scripted_expert(const PushSimConfig & cfg, const EnvState & s) {
    const Vec2 c{s.block.x, s.block.y};
    const Vec2 g{s.goal.x, s.goal.y};

    if (coverage(cfg, s.block, s.goal) >= cfg.coverage_threshold) {
        // task done: park in the corner farthest from the block
        Vec2 best{0.06, 0.06};
        double bd = -1.0;
        for (const Vec2 corner :
             {Vec2{0.06, 0.06}, Vec2{0.94, 0.06}, Vec2{0.06, 0.94}, Vec2{0.94, 0.94}}) {
            const double d = norm(corner - c);
            if (d > bd) {
                bd = d;
                best = corner;
            }
        }
        return to_action(best);
    }

    const Vec2 e = g - c;
    const double et = norm(e);
    const double er = wrap_angle(s.goal.theta - s.block.theta);

    const bool rotate_first = std::fabs(er) > 0.45;  // fix gross rotation before lining up
    const bool need_rotate = std::fabs(er) > cfg.expert_rot_tol;
    const bool need_translate = et > cfg.expert_pos_tol;

    if (need_translate && !rotate_first) {
        // push the block toward the goal, offsetting the contact point to
        // trim orientation on the way
        const Vec2 u = e * (1.0 / et);
        const Vec2 lat = perp(u);
        double off =
            -std::clamp(cfg.expert_lat_gain * er, -cfg.expert_lat_max, cfg.expert_lat_max);
        const double rho = support(cfg.shape, s.block, u * -1.0);
        Vec2 approach = c - u * (rho + cfg.agent_radius + 0.02) + lat * off;
        // an approach outside the workspace is unreachable; retry without the
        // rotation-assist offset, then clamp
        if (approach.x < 0.03 || approach.x > 0.97 || approach.y < 0.03 || approach.y > 0.97) {
            off = 0.0;
            approach = c - u * (rho + cfg.agent_radius + 0.02);
        }
        approach.x = std::clamp(approach.x, 0.025, 0.975);
        approach.y = std::clamp(approach.y, 0.025, 0.975);

        // already lined up behind the block? press through.
        const Vec2 rel = s.agent - approach;
        const bool on_line = std::fabs(cross(u, rel)) < 0.025 && dot(u, rel) > -0.05 &&
                             dot(u, rel) < rho + 0.14;
        if (on_line) {
            // press from the current position by the remaining error: the
            // quasi-static contact transfers agent travel to the block
            // roughly 1:1, so this self-limits at the goal
            const double press = std::min(et * 1.05 + 0.004, 0.12);
            return to_action(s.agent + u * press);
        }
        return to_action(navigate(cfg, s, approach));
    }

    if (need_rotate) {
        // choose the closest reachable contact face whose push torque has the
        // right sign
        const int want = er > 0.0 ? +1 : -1;
        Vec2 best_contact{}, best_normal{};
        double bd = 1e9;
        bool found = false;
        for (const auto & cand : rot_contacts(cfg.shape)) {
            if (cand.torque_sign != want) continue;
            const Vec2 cw = to_world(s.block, cand.point);
            const Vec2 nw = rotate(cand.normal, s.block.theta);
            const Vec2 ap = cw + nw * (cfg.agent_radius + 0.02);
            if (ap.x < 0.025 || ap.x > 0.975 || ap.y < 0.025 || ap.y > 0.975) continue;
            const double d = norm(s.agent - ap);
            if (d < bd) {
                bd = d;
                best_contact = cw;
                best_normal = nw;
                found = true;
            }
        }
        if (!found) {
            // every lever blocked by a wall: shove the block toward the center
            const Vec2 to_center = Vec2{0.5, 0.5} - c;
            const Vec2 u = to_center * (1.0 / std::max(norm(to_center), 1e-9));
            return to_action(c + u * 0.1);
        }
        const Vec2 approach = best_contact + best_normal * (cfg.agent_radius + 0.02);
        const Vec2 press_dir = best_normal * -1.0;
        const Vec2 rel = s.agent - approach;
        const bool on_line = std::fabs(cross(press_dir, rel)) < 0.025 &&
                             dot(press_dir, rel) > -0.06 && dot(press_dir, rel) < 0.06;
        if (on_line) {
            // angular error -> press distance through the torque transfer
            const double lever = norm(best_contact - c);
            const double per_unit = cfg.rot_gain * lever;
            const double press = std::min(std::fabs(er) / std::max(per_unit, 1.0) + 0.004, 0.06);
            return to_action(s.agent + press_dir * press);
        }
        return to_action(navigate(cfg, s, approach));
    }

    // aligned but coverage slightly under threshold: nudge along the residual
    if (et > 1e-9) {
        const Vec2 u = e * (1.0 / et);
        return to_action(c + u * std::min(et, 0.05));
    }
    return to_action(s.agent);
}

RolloutResult rollout_expert(const PushSimConfig & cfg, std::uint64_t seed, bool record) {
    RolloutResult out;
    EnvState s = reset(cfg, seed);
    int post_success = 0;
    for (int t = 0; t < cfg.max_steps; ++t) {
        const auto a = scripted_expert(cfg, s);
        if (record) {
            out.observations.push_back(observe(cfg, s));
            out.actions.push_back(a);
        }
        s = step(cfg, s, a);
        out.max_coverage = std::max(out.max_coverage, coverage(cfg, s.block, s.goal));
        out.steps_used = s.step_count;
        if (out.max_coverage >= cfg.coverage_threshold) {
            out.success = true;
            // record a short post-success tail so imitators learn to hold
            if (++post_success >= 6) break;
        }
    }
    return out;
}

EvalResult evaluate(const PushSimConfig & cfg, Policy & policy, int n_episodes,
                    std::uint64_t seed_base, int max_steps, int exec_horizon, bool parallel) {
    if (n_episodes < 1) throw contract_error("evaluate: n_episodes must be >= 1");
    EvalResult res;
    res.episodes.resize(size_t(n_episodes));

    // Stateful policies (the expert wrapper) keep a single state machine, so
    // callers pass parallel=false for those; network policies are read-only
    // weights and shard cleanly.
#pragma omp parallel for schedule(dynamic) if (parallel)
    for (int ep = 0; ep < n_episodes; ++ep) {
        Rng rng(seed_base + 7919u * std::uint64_t(ep) + 13u);
        EnvState s = reset(cfg, seed_base + std::uint64_t(ep));
        EpisodeRecord rec;
        policy.begin_episode(s, seed_base + std::uint64_t(ep));
        bool done = false;
        while (!done && s.step_count < max_steps) {
            std::vector<double> chunk = policy.act(observe(cfg, s), rng);
            const int n_exec = std::min(exec_horizon, int(chunk.size() / 2));
            for (int k = 0; k < n_exec; ++k) {
                s = step(cfg, s, {chunk[size_t(2 * k)], chunk[size_t(2 * k + 1)]});
                rec.max_coverage = std::max(rec.max_coverage, coverage(cfg, s.block, s.goal));
                rec.steps_used = s.step_count;
                if (rec.max_coverage >= cfg.coverage_threshold) {
                    rec.success = true;
                    done = true;
                    break;
                }
                if (s.step_count >= max_steps) {
                    done = true;
                    break;
                }
            }
        }
        res.episodes[size_t(ep)] = rec;
    }

    double succ = 0.0, cov = 0.0;
    for (const auto & r : res.episodes) {
        succ += r.success ? 1.0 : 0.0;
        cov += r.max_coverage;
    }
    res.success_rate = succ / n_episodes;
    res.mean_max_coverage = cov / n_episodes;
    return res;
}

}  // namespace lightdp::sim
