#include "belieflab/envs.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

namespace belieflab::envs {
namespace {

std::string accuracy_suffix(double acc) {
  std::ostringstream s;
  s << acc;
  return s.str();
}

double parse_accuracy(std::string_view text) {
  const double acc = std::stod(std::string(text));
  if (std::abs(acc - 0.8) > 1e-12 && std::abs(acc - 0.7) > 1e-12) {
    throw std::invalid_argument("tiger accuracy must be 0.8 or 0.7, got " + std::string(text));
  }
  return acc;
}

bool bernoulli(Rng& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

}  // namespace

std::string TaskFamily::id() const {
  switch (kind) {
    case FamilyKind::BernoulliBandit: return "bernoulli_bandit";
    case FamilyKind::DynamicBandit:
      switch (variant) {
        case DynamicVariant::Symmetric: return "dynamic_bandit_symmetric";
        case DynamicVariant::AsymReward: return "dynamic_bandit_asym_reward";
        case DynamicVariant::AsymTransition: return "dynamic_bandit_asym_transition";
      }
      break;
    case FamilyKind::StationaryTiger: return "stationary_tiger_" + accuracy_suffix(accuracy);
    case FamilyKind::DynamicTiger: return "dynamic_tiger_" + accuracy_suffix(accuracy);
    case FamilyKind::OracleBandit: return "oracle_bandit";
    case FamilyKind::LatentGoalCart: return "latent_goal_cart";
  }
  return "unknown";
}

TaskFamily TaskFamily::parse(std::string_view id) {
  TaskFamily f;
  if (id == "bernoulli_bandit") {
    f.kind = FamilyKind::BernoulliBandit;
  } else if (id == "dynamic_bandit_symmetric" || id == "dynamic_bandit") {
    f.kind = FamilyKind::DynamicBandit;
  } else if (id == "dynamic_bandit_asym_reward") {
    f.kind = FamilyKind::DynamicBandit;
    f.variant = DynamicVariant::AsymReward;
  } else if (id == "dynamic_bandit_asym_transition") {
    f.kind = FamilyKind::DynamicBandit;
    f.variant = DynamicVariant::AsymTransition;
  } else if (id.starts_with("stationary_tiger")) {
    f.kind = FamilyKind::StationaryTiger;
    if (id.size() > 17) f.accuracy = parse_accuracy(id.substr(17));
  } else if (id.starts_with("dynamic_tiger")) {
    f.kind = FamilyKind::DynamicTiger;
    if (id.size() > 14) f.accuracy = parse_accuracy(id.substr(14));
  } else if (id == "oracle_bandit") {
    f.kind = FamilyKind::OracleBandit;
  } else if (id == "latent_goal_cart") {
    f.kind = FamilyKind::LatentGoalCart;
  } else {
    throw std::invalid_argument("unknown task family: " + std::string(id));
  }
  return f;
}

std::vector<TaskFamily> all_families() {
  std::vector<TaskFamily> out;
  for (const char* id : {"bernoulli_bandit", "dynamic_bandit_symmetric", "dynamic_bandit_asym_reward",
                         "dynamic_bandit_asym_transition", "stationary_tiger_0.8", "stationary_tiger_0.7",
                         "dynamic_tiger_0.8", "dynamic_tiger_0.7", "oracle_bandit", "latent_goal_cart"}) {
    out.push_back(TaskFamily::parse(id));
  }
  return out;
}

FamilyConfig FamilyConfig::defaults(const TaskFamily& family) {
  FamilyConfig c;
  c.family = family;
  switch (family.kind) {
    case FamilyKind::BernoulliBandit:
      c.episode_length = 40;
      break;
    case FamilyKind::DynamicBandit:
      c.episode_length = 300;
      if (family.variant == DynamicVariant::AsymReward) c.arm_levels[1] = {0.6, 0.4};
      if (family.variant == DynamicVariant::AsymTransition) c.arm_stay[1] = 0.5;
      break;
    case FamilyKind::StationaryTiger:
      c.episode_length = 20;
      c.tiger_stay = 1.0;
      break;
    case FamilyKind::DynamicTiger:
      c.episode_length = 30;
      c.tiger_stay = 0.9;
      break;
    case FamilyKind::OracleBandit:
      c.episode_length = 6;
      break;
    case FamilyKind::LatentGoalCart:
      c.episode_length = 30;
      break;
  }
  return c;
}

int FamilyConfig::num_actions() const {
  switch (family.kind) {
    case FamilyKind::BernoulliBandit:
    case FamilyKind::DynamicBandit: return 2;
    case FamilyKind::StationaryTiger:
    case FamilyKind::DynamicTiger: return 3;
    case FamilyKind::OracleBandit: return 11;
    case FamilyKind::LatentGoalCart: return 1;
  }
  return 0;
}

int FamilyConfig::observation_dim() const {
  if (family.is_tiger()) return 3;
  if (family.kind == FamilyKind::LatentGoalCart) return 1;
  return 0;
}

TaskSpec sample_task(const FamilyConfig& config, Rng& rng) {
  TaskSpec task;
  task.config = config;
  switch (config.family.kind) {
    case FamilyKind::BernoulliBandit: {
      // Beta(1,1) is uniform on [0,1].
      std::uniform_real_distribution<double> u(0.0, 1.0);
      task.theta = {u(rng), u(rng)};
      break;
    }
    case FamilyKind::OracleBandit: {
      if (config.oracle_targets.empty()) throw std::invalid_argument("oracle bandit: empty target set");
      std::uniform_int_distribution<std::size_t> pick(0, config.oracle_targets.size() - 1);
      task.target_arm = config.oracle_targets[pick(rng)];
      if (task.target_arm < 1 || task.target_arm > 10) throw std::invalid_argument("oracle target outside 1..10");
      break;
    }
    case FamilyKind::LatentGoalCart:
      task.goal = bernoulli(rng, 0.5) ? 1 : -1;
      break;
    default:
      break;
  }
  return task;
}

std::pair<HiddenState, std::vector<double>> reset(const TaskSpec& task, Rng& rng) {
  HiddenState h;
  std::vector<double> obs;
  const auto& c = task.config;
  switch (c.family.kind) {
    case FamilyKind::DynamicBandit:
      h.arm_state = {bernoulli(rng, 0.5) ? 1 : 0, bernoulli(rng, 0.5) ? 1 : 0};
      break;
    case FamilyKind::StationaryTiger:
    case FamilyKind::DynamicTiger:
      h.tiger = bernoulli(rng, 0.5) ? kTigerRight : kTigerLeft;
      obs = {0.0, 0.0, 1.0};
      break;
    case FamilyKind::LatentGoalCart:
      h.position = 0.0;
      obs = {0.0};
      break;
    default:
      break;
  }
  return {h, obs};
}

Action validate_action(const FamilyConfig& config, const Action& action) {
  if (config.continuous_actions()) {
    if (!std::isfinite(action.value)) throw InvalidAction("cart velocity is not finite");
    Action a;
    a.value = std::clamp(action.value, config.cart.v_min, config.cart.v_max);
    return a;
  }
  if (action.index < 0 || action.index >= config.num_actions()) {
    throw InvalidAction("action index " + std::to_string(action.index) + " invalid for " + config.family.id());
  }
  return action;
}

StepResult step(const TaskSpec& task, const HiddenState& hidden, const Action& raw_action, Rng& rng) {
  const auto& c = task.config;
  if (hidden.t >= c.episode_length) throw std::logic_error("step after episode end");
  const Action action = validate_action(c, raw_action);
  StepResult out;
  out.hidden = hidden;
  out.hidden.t = hidden.t + 1;
  out.done = out.hidden.t == c.episode_length;

  switch (c.family.kind) {
    case FamilyKind::BernoulliBandit:
      out.reward = bernoulli(rng, task.theta[static_cast<std::size_t>(action.index)]) ? 1.0 : 0.0;
      break;
    case FamilyKind::DynamicBandit: {
      const auto a = static_cast<std::size_t>(action.index);
      const double p = c.arm_levels[a][static_cast<std::size_t>(hidden.arm_state[a])];
      out.reward = bernoulli(rng, p) ? 1.0 : 0.0;
      for (std::size_t arm = 0; arm < 2; ++arm) {
        if (!bernoulli(rng, c.arm_stay[arm])) out.hidden.arm_state[arm] = 1 - hidden.arm_state[arm];
      }
      break;
    }
    case FamilyKind::StationaryTiger:
    case FamilyKind::DynamicTiger: {
      if (action.index == kTigerListen) {
        const bool correct = bernoulli(rng, c.family.accuracy);
        const int heard = correct ? hidden.tiger : 1 - hidden.tiger;
        out.observation = {heard == kTigerLeft ? 1.0 : 0.0, heard == kTigerRight ? 1.0 : 0.0, 0.0};
        out.reward = c.listen_reward;
        if (!bernoulli(rng, c.tiger_stay)) out.hidden.tiger = 1 - hidden.tiger;
      } else {
        const int opened = action.index == kTigerOpenLeft ? kTigerLeft : kTigerRight;
        out.reward = opened == hidden.tiger ? c.tiger_reward : c.treasure_reward;
        out.observation = {0.0, 0.0, 1.0};
        out.hidden.tiger = bernoulli(rng, 0.5) ? kTigerRight : kTigerLeft;
      }
      break;
    }
    case FamilyKind::OracleBandit:
      if (action.index == kOracleArm) {
        out.reward = 0.1 * task.target_arm;
      } else {
        out.reward = action.index + 1 == task.target_arm ? c.target_payout : c.other_payout;
      }
      break;
    case FamilyKind::LatentGoalCart: {
      const double x = std::clamp(hidden.position + action.value * c.cart.dt, c.cart.x_min, c.cart.x_max);
      out.hidden.position = x;
      out.observation = {x};
      out.reward = -std::abs(x - task.goal) + c.cart.sigma * std::normal_distribution<double>(0.0, 1.0)(rng);
      break;
    }
  }
  return out;
}

Trajectory rollout(const TaskSpec& task, Policy& policy, Rng& rng) {
  Trajectory traj;
  traj.task = task;
  auto [hidden, obs] = reset(task, rng);
  StepRecord rec;
  rec.t = 0;
  rec.observation = std::move(obs);
  traj.steps.push_back(rec);
  traj.hidden.push_back(hidden);
  policy.begin_episode(task.config);
  for (int t = 0; t < task.config.episode_length; ++t) {
    const Action action = validate_action(task.config, policy.act(traj.steps.back(), rng));
    StepResult res = step(task, hidden, action, rng);
    hidden = res.hidden;
    StepRecord next;
    next.t = t + 1;
    next.observation = std::move(res.observation);
    next.prev_action = action;
    next.has_prev_action = true;
    next.reward = res.reward;
    next.done = res.done;
    traj.steps.push_back(std::move(next));
    traj.hidden.push_back(hidden);
  }
  return traj;
}

double discounted_return(const Trajectory& traj, double gamma) {
  double total = 0.0;
  double discount = 1.0;
  for (std::size_t i = 1; i < traj.steps.size(); ++i) {
    total += discount * traj.steps[i].reward;
    discount *= gamma;
  }
  return total;
}

std::vector<double> hidden_vector(const TaskSpec& task, const HiddenState& hidden) {
  const auto& c = task.config;
  switch (c.family.kind) {
    case FamilyKind::BernoulliBandit: return {task.theta[0], task.theta[1]};
    case FamilyKind::DynamicBandit:
      return {c.arm_levels[0][static_cast<std::size_t>(hidden.arm_state[0])],
              c.arm_levels[1][static_cast<std::size_t>(hidden.arm_state[1])]};
    case FamilyKind::StationaryTiger:
    case FamilyKind::DynamicTiger: return {static_cast<double>(hidden.tiger)};
    case FamilyKind::OracleBandit: return {static_cast<double>(task.target_arm)};
    case FamilyKind::LatentGoalCart: return {hidden.position, static_cast<double>(task.goal)};
  }
  return {};
}

void write_trajectory_log(std::ostream& out, long episode_id, const Trajectory& traj, bool with_hidden) {
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    const StepRecord& r = traj.steps[i];
    nlohmann::json line;
    line["episode_id"] = episode_id;
    line["t"] = r.t;
    line["obs"] = r.observation;
    if (!r.has_prev_action) {
      line["prev_action"] = nullptr;
    } else if (traj.task.config.continuous_actions()) {
      line["prev_action"] = r.prev_action.value;
    } else {
      line["prev_action"] = r.prev_action.index;
    }
    line["reward"] = r.reward;
    line["done"] = r.done;
    if (with_hidden) line["hidden_state"] = hidden_vector(traj.task, traj.hidden[i]);
    out << line.dump() << '\n';
  }
}

}  // namespace belieflab::envs
