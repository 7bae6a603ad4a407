#pragma once

#include <cstdint>
#include <memory>
#include <nlohmann/json.hpp>
#include <set>
#include <string>

#include "tart/pamdp.hpp"

namespace tart {

struct StepResult {
  Vec obs;
  double reward = 0.0;
  bool done = false;
  Info info;
};

// One environment instance per rollout worker; instances share nothing.
class Env {
 public:
  virtual ~Env() = default;

  virtual Vec reset(std::uint64_t seed) = 0;
  virtual StepResult step(const HybridAction& a) = 0;

  virtual const ActionSpec& action_spec() const = 0;
  virtual int obs_dim() const = 0;
  virtual std::set<int> resource_ids() const = 0;
  virtual std::string name() const = 0;

  // Snapshot of the simulator state for episode logs.
  virtual nlohmann::ordered_json log_state() const = 0;
  virtual std::unique_ptr<Env> clone() const = 0;
};

}  // namespace tart
