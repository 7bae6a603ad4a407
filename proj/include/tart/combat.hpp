#pragma once

// 3-DOF air-combat surrogate: point-mass own aircraft against a scripted
// opponent, with a limited number of pure-pursuit missiles and flares.
//
// World frame: x north, y east, z altitude (up). Heading is measured from +x
// toward +y, so a positive turn command turns right. Body frame: x forward,
// y right, z up.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "tart/env.hpp"
#include "tart/errors.hpp"
#include "tart/rng.hpp"

namespace tart::combat {

using Vec3 = Eigen::Vector3d;

inline constexpr int kNoop = 0;
inline constexpr int kFire = 1;
inline constexpr int kFlare = 2;
inline constexpr int kObsDim = 16;
inline constexpr double kInterceptRange = 50.0;
inline constexpr double kMissileLifetime = 30.0;
inline constexpr double kKillReward = 5.0;
inline constexpr double kTrackingScale = 0.01;
inline constexpr double kPi = std::numbers::pi;

struct CombatConfig {
  double dt = 0.1;
  double v_min = 100.0;
  double v_max = 300.0;
  double max_turn_rate = 0.35;
  double max_climb_rate = 50.0;
  double max_accel = 20.0;
  int missiles = 2;
  int flares = 4;
  double missile_speed = 600.0;
  double missile_pk = 0.7;
  double flare_rho = 0.5;
  double lock_cone = 0.35;
  int max_steps = 1000;
  double arena_radius = 10000.0;
  double opponent_fire_cooldown = 10.0;
  double min_altitude = 100.0;

  void validate() const {
    if (!(dt > 0.0)) throw ConfigError("combat dt must be > 0");
    if (!(v_min > 0.0 && v_min < v_max)) throw ConfigError("combat requires 0 < v_min < v_max");
    if (!(missile_pk > 0.0 && missile_pk <= 1.0)) throw ConfigError("combat missile_pk must be in (0, 1]");
    if (!(flare_rho > 0.0 && flare_rho < 1.0)) throw ConfigError("combat flare_rho must be in (0, 1)");
    if (missiles < 0 || flares < 0) throw ConfigError("combat resource counts must be >= 0");
    if (max_steps < 1) throw ConfigError("combat max_steps must be >= 1");
    if (!(lock_cone > 0.0)) throw ConfigError("combat lock_cone must be > 0");
    if (!(arena_radius > 0.0)) throw ConfigError("combat arena_radius must be > 0");
  }
};

struct AircraftState {
  Vec3 pos = Vec3::Zero();
  double heading = 0.0;
  double speed = 200.0;
  double climb = 0.0;

  Vec3 velocity() const { return {speed * std::cos(heading), speed * std::sin(heading), climb}; }
};

inline constexpr int kOwn = 0;
inline constexpr int kOpponent = 1;

struct MissileState {
  Vec3 pos = Vec3::Zero();
  int target = kOpponent;
  bool alive = true;
  double pk_current = 0.0;
  double age = 0.0;
};

struct CombatState {
  AircraftState own;
  AircraftState opp;
  std::vector<MissileState> missiles;
  int own_missiles = 0;
  int own_flares = 0;
  int opp_missiles = 0;
  int opp_flares = 0;
  double opp_last_fire = -1e9;  // time of the opponent's last shot
  int t = 0;
  bool own_alive = true;
  bool opp_alive = true;
};

inline ActionSpec combat_action_spec() {
  // Every branch carries the maneuver (turn, climb, throttle) in [-1, 1]^3.
  return ActionSpec::uniform(3, 3, Interval{-1.0, 1.0});
}

inline double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  return a - kPi;
}

// Angle in [0, pi] between two vectors; 0 for a zero vector.
inline double angle_between(const Vec3& a, const Vec3& b) {
  const double c = a.cross(b).norm();
  const double d = a.dot(b);
  if (c == 0.0 && d == 0.0) return 0.0;
  return std::atan2(c, d);
}

// Antenna train angle of `self` with respect to `other`.
inline double ata(const AircraftState& self, const AircraftState& other) {
  return angle_between(self.velocity(), other.pos - self.pos);
}

inline Vec3 to_body(const AircraftState& self, const Vec3& world_offset) {
  const double c = std::cos(self.heading), s = std::sin(self.heading);
  return {c * world_offset.x() + s * world_offset.y(), -s * world_offset.x() + c * world_offset.y(),
          world_offset.z()};
}

inline double clamp1(double v) { return std::clamp(v, -1.0, 1.0); }

// Forward-Euler point-mass kinematics with the soft arena boundary.
inline void integrate_aircraft(const CombatConfig& cfg, AircraftState& ac, double turn_cmd, double climb_cmd,
                               double throttle_cmd) {
  const double horiz = std::hypot(ac.pos.x(), ac.pos.y());
  if (horiz > cfg.arena_radius) {
    const double to_center = std::atan2(-ac.pos.y(), -ac.pos.x());
    turn_cmd = wrap_angle(to_center - ac.heading) >= 0.0 ? 1.0 : -1.0;
  }
  ac.heading = wrap_angle(ac.heading + cfg.max_turn_rate * turn_cmd * cfg.dt);
  ac.climb = cfg.max_climb_rate * climb_cmd;
  ac.speed = std::clamp(ac.speed + cfg.max_accel * throttle_cmd * cfg.dt, cfg.v_min, cfg.v_max);
  ac.pos += ac.velocity() * cfg.dt;
  if (ac.pos.z() < cfg.min_altitude) {
    ac.pos.z() = cfg.min_altitude;
    ac.climb = 0.0;
  }
}

struct InterceptOutcome {
  bool drawn = false;
  bool kill = false;
};

// Bernoulli(pk_current) kill draw, only inside the intercept range.
inline InterceptOutcome intercept_check(const MissileState& m, const AircraftState& target, Rng& rng) {
  InterceptOutcome out;
  if (!m.alive) return out;
  if ((target.pos - m.pos).norm() >= kInterceptRange) return out;
  out.drawn = true;
  out.kill = bernoulli(rng, m.pk_current);
  return out;
}

inline void advance_missile(const CombatConfig& cfg, MissileState& m, const AircraftState& target) {
  const Vec3 d = target.pos - m.pos;
  const double dist = d.norm();
  const double travel = cfg.missile_speed * cfg.dt;
  if (dist <= travel) m.pos = target.pos;
  else m.pos += d / dist * travel;
  m.age += cfg.dt;
}

inline bool inbound(const CombatState& s, int target) {
  for (const MissileState& m : s.missiles)
    if (m.alive && m.target == target) return true;
  return false;
}

// Scripted adversary: proportional pursuit, fires inside its lock cone once
// the cooldown has elapsed, flares with probability 0.5 per step while a
// missile is inbound. Deterministic given the state and the generator.
inline HybridAction opponent_policy(const CombatState& s, const CombatConfig& cfg, Rng& rng) {
  const AircraftState& me = s.opp;
  const AircraftState& target = s.own;
  const Vec3 rel = target.pos - me.pos;
  const double bearing = std::atan2(rel.y(), rel.x());
  const double heading_err = wrap_angle(bearing - me.heading);
  const double range = rel.norm();
  HybridAction a;
  a.params = Vec(3);
  a.params << clamp1(2.0 * heading_err), clamp1(rel.z() / 300.0), clamp1((range - 1500.0) / 1500.0);
  a.discrete = kNoop;
  const double now = s.t * cfg.dt;
  if (s.opp_flares > 0 && inbound(s, kOpponent) && bernoulli(rng, 0.5)) {
    a.discrete = kFlare;
  } else if (s.opp_missiles > 0 && ata(me, target) <= cfg.lock_cone &&
             now - s.opp_last_fire >= cfg.opponent_fire_cooldown) {
    a.discrete = kFire;
  }
  return a;
}

inline Vec observe(const CombatState& s, const CombatConfig& cfg) {
  Vec o(kObsDim);
  const AircraftState& me = s.own;
  const Vec3 rel = s.opp.pos - me.pos;
  const Vec3 body = to_body(me, rel);
  const Vec3 rel_vel = s.opp.velocity() - me.velocity();
  const double range = rel.norm();
  const double closure = range > 0.0 ? -rel.dot(rel_vel) / range : 0.0;
  o[0] = (me.speed - cfg.v_min) / (cfg.v_max - cfg.v_min);
  o[1] = wrap_angle(me.heading) / kPi;
  o[2] = me.climb / cfg.max_climb_rate;
  o[3] = body.x() / 5000.0;
  o[4] = body.y() / 5000.0;
  o[5] = body.z() / 5000.0;
  o[6] = closure / (2.0 * cfg.v_max);
  o[7] = ata(me, s.opp) / kPi;
  o[8] = angle_between(s.opp.velocity(), rel) / kPi;  // aspect angle
  o[9] = cfg.missiles > 0 ? static_cast<double>(s.own_missiles) / cfg.missiles : 0.0;
  o[10] = cfg.flares > 0 ? static_cast<double>(s.own_flares) / cfg.flares : 0.0;
  o[11] = -1.0;
  o[12] = -1.0;
  double best = 1e300;
  for (const MissileState& m : s.missiles) {
    if (!m.alive || m.target != kOwn) continue;
    const Vec3 d = m.pos - me.pos;
    if (d.norm() < best) {
      best = d.norm();
      o[11] = best / 10000.0;
      o[12] = wrap_angle(std::atan2(d.y(), d.x()) - me.heading) / kPi;
    }
  }
  o[13] = me.pos.z() / 10000.0;
  o[14] = wrap_angle(s.opp.heading - me.heading) / kPi;
  o[15] = inbound(s, kOpponent) ? 1.0 : 0.0;
  return o;
}

class CombatEnv final : public Env {
 public:
  explicit CombatEnv(CombatConfig cfg) : cfg_(cfg), spec_(combat_action_spec()) { cfg_.validate(); }

  const CombatConfig& config() const { return cfg_; }
  const CombatState& state() const { return state_; }
  CombatState& mutable_state() { return state_; }

  Vec reset(std::uint64_t seed) override {
    rng_ = make_rng(seed, 101);
    opp_rng_ = make_rng(seed, 202);
    state_ = CombatState{};
    state_.own.pos = Vec3(0.0, 0.0, 5000.0);
    state_.own.heading = 0.0;
    state_.own.speed = 200.0;
    const double range = 3000.0 + 2000.0 * uniform01(rng_);
    const double bearing = (uniform01(rng_) * 2.0 - 1.0) * kPi / 3.0;
    state_.opp.pos = Vec3(range * std::cos(bearing), range * std::sin(bearing), 5000.0 + 1000.0 * (uniform01(rng_) - 0.5));
    state_.opp.heading = (uniform01(rng_) * 2.0 - 1.0) * kPi;
    state_.opp.speed = 200.0;
    state_.own_missiles = state_.opp_missiles = cfg_.missiles;
    state_.own_flares = state_.opp_flares = cfg_.flares;
    events_.clear();
    return observe(state_, cfg_);
  }

  StepResult step(const HybridAction& raw) override {
    const HybridAction a = validate_action(spec_, raw).action;
    const HybridAction opp = opponent_policy(state_, cfg_, opp_rng_);
    events_.clear();
    bool wasted = false;
    const double now = state_.t * cfg_.dt;

    // Resource actions are resolved against the pre-step geometry.
    if (a.discrete == kFire) {
      if (state_.own_missiles > 0 && ata(state_.own, state_.opp) <= cfg_.lock_cone) {
        state_.missiles.push_back({state_.own.pos, kOpponent, true, cfg_.missile_pk, 0.0});
        --state_.own_missiles;
        events_.push_back("own_fire");
      } else {
        wasted = true;
      }
    } else if (a.discrete == kFlare) {
      if (state_.own_flares > 0) {
        apply_flare(kOwn);
        --state_.own_flares;
        events_.push_back("own_flare");
      } else {
        wasted = true;
      }
    }
    if (opp.discrete == kFire && state_.opp_missiles > 0 && ata(state_.opp, state_.own) <= cfg_.lock_cone) {
      state_.missiles.push_back({state_.opp.pos, kOwn, true, cfg_.missile_pk, 0.0});
      --state_.opp_missiles;
      state_.opp_last_fire = now;
      events_.push_back("opp_fire");
    } else if (opp.discrete == kFlare && state_.opp_flares > 0) {
      apply_flare(kOpponent);
      --state_.opp_flares;
      events_.push_back("opp_flare");
    }

    integrate_aircraft(cfg_, state_.own, a.params[0], a.params[1], a.params[2]);
    integrate_aircraft(cfg_, state_.opp, opp.params[0], opp.params[1], opp.params[2]);

    for (MissileState& m : state_.missiles) {
      if (!m.alive) continue;
      const AircraftState& target = m.target == kOwn ? state_.own : state_.opp;
      advance_missile(cfg_, m, target);
      const InterceptOutcome hit = intercept_check(m, target, rng_);
      if (hit.drawn) {
        m.alive = false;
        if (hit.kill) {
          (m.target == kOwn ? state_.own_alive : state_.opp_alive) = false;
          events_.push_back(m.target == kOwn ? "own_killed" : "opp_killed");
        } else {
          events_.push_back(m.target == kOwn ? "own_evaded" : "opp_evaded");
        }
      } else if (m.age >= kMissileLifetime) {
        m.alive = false;
        events_.push_back("missile_timeout");
      }
    }
    std::erase_if(state_.missiles, [](const MissileState& m) { return !m.alive; });

    ++state_.t;
    StepResult r;
    r.reward = tracking_reward(state_);
    if (!state_.opp_alive) r.reward += kKillReward;
    if (!state_.own_alive) r.reward -= kKillReward;
    const bool truncated = state_.t >= cfg_.max_steps;
    r.done = !state_.opp_alive || !state_.own_alive || truncated;
    r.obs = observe(state_, cfg_);
    r.info = {{"missiles", state_.own_missiles},
              {"flares", state_.own_flares},
              {"wasted_resource", wasted ? 1.0 : 0.0},
              {"opp_killed", state_.opp_alive ? 0.0 : 1.0},
              {"own_killed", state_.own_alive ? 0.0 : 1.0},
              {"truncated", truncated && state_.own_alive && state_.opp_alive ? 1.0 : 0.0}};
    return r;
  }

  static double tracking_reward(const CombatState& s) { return kTrackingScale * (1.0 - ata(s.own, s.opp) / kPi); }

  const ActionSpec& action_spec() const override { return spec_; }
  int obs_dim() const override { return kObsDim; }
  std::set<int> resource_ids() const override { return {kFire, kFlare}; }
  std::string name() const override { return "combat"; }

  nlohmann::ordered_json log_state() const override {
    const auto ac = [](const AircraftState& a) {
      return nlohmann::ordered_json{{"x", a.pos.x()}, {"y", a.pos.y()}, {"z", a.pos.z()},
                                    {"heading", a.heading}, {"speed", a.speed}, {"climb", a.climb}};
    };
    nlohmann::ordered_json missiles = nlohmann::ordered_json::array();
    for (const MissileState& m : state_.missiles)
      missiles.push_back({{"x", m.pos.x()}, {"y", m.pos.y()}, {"z", m.pos.z()}, {"target", m.target},
                          {"pk", m.pk_current}, {"age", m.age}});
    return {{"t", state_.t},
            {"own", ac(state_.own)},
            {"opp", ac(state_.opp)},
            {"missiles", missiles},
            {"own_missiles", state_.own_missiles},
            {"own_flares", state_.own_flares},
            {"opp_missiles", state_.opp_missiles},
            {"opp_flares", state_.opp_flares},
            {"events", events_}};
  }

  std::unique_ptr<Env> clone() const override { return std::make_unique<CombatEnv>(*this); }

 private:
  void apply_flare(int defender) {
    for (MissileState& m : state_.missiles)
      if (m.alive && m.target == defender) m.pk_current *= 1.0 - cfg_.flare_rho;
  }

  CombatConfig cfg_;
  ActionSpec spec_;
  CombatState state_;
  Rng rng_ = make_rng(0, 101);
  Rng opp_rng_ = make_rng(0, 202);
  std::vector<std::string> events_;
};

}  // namespace tart::combat
