#pragma once

#include "belieflab/random.hpp"

#include <array>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace belieflab::envs {

enum class FamilyKind { BernoulliBandit, DynamicBandit, StationaryTiger, DynamicTiger, OracleBandit, LatentGoalCart };
enum class DynamicVariant { Symmetric, AsymReward, AsymTransition };

/// One of the six task families. Tiger variants carry their listen accuracy.
struct TaskFamily {
  FamilyKind kind = FamilyKind::BernoulliBandit;
  DynamicVariant variant = DynamicVariant::Symmetric;
  double accuracy = 0.8;

  /// Canonical id, e.g. "dynamic_bandit_asym_reward" or "dynamic_tiger_0.7".
  [[nodiscard]] std::string id() const;
  static TaskFamily parse(std::string_view id);
  [[nodiscard]] bool is_tiger() const { return kind == FamilyKind::StationaryTiger || kind == FamilyKind::DynamicTiger; }
  [[nodiscard]] bool is_dynamic() const { return kind == FamilyKind::DynamicBandit || kind == FamilyKind::DynamicTiger; }
  friend bool operator==(const TaskFamily&, const TaskFamily&) = default;
};

/// All families as used by the experiment suite (both Tiger accuracies).
std::vector<TaskFamily> all_families();

struct CartConstants {
  double x_min = -2.0;
  double x_max = 2.0;
  double v_min = -0.5;
  double v_max = 0.5;
  double dt = 1.0;
  double sigma = 0.1;
};

/// Structural parameters of a family; everything here is known to the Bayes agent.
struct FamilyConfig {
  TaskFamily family;
  int episode_length = 40;
  double gamma = 0.95;

  // Dynamic bandit: reward probability of [arm][state]; state 0 is the first
  // (more rewarding) state. stay = probability an arm keeps its state.
  std::array<std::array<double, 2>, 2> arm_levels{{{0.9, 0.1}, {0.9, 0.1}}};
  std::array<double, 2> arm_stay{0.9, 0.9};

  // Tiger.
  double tiger_stay = 1.0;
  double listen_reward = -1.0;
  double tiger_reward = -100.0;
  double treasure_reward = 10.0;

  // Oracle bandit: admissible target arms (1-based).
  std::vector<int> oracle_targets{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  double target_payout = 5.0;
  double other_payout = 1.0;

  CartConstants cart;

  /// Values from the task definitions; episode lengths use the lower end of
  /// any published range.
  static FamilyConfig defaults(const TaskFamily& family);

  [[nodiscard]] bool continuous_actions() const { return family.kind == FamilyKind::LatentGoalCart; }
  /// Discrete action count (1 for the continuous cart).
  [[nodiscard]] int num_actions() const;
  [[nodiscard]] int observation_dim() const;
  /// Width of the previous-action input: one-hot size, or 1 for the cart.
  [[nodiscard]] int action_input_dim() const { return continuous_actions() ? 1 : num_actions(); }
};

inline constexpr int kTigerListen = 0;
inline constexpr int kTigerOpenLeft = 1;
inline constexpr int kTigerOpenRight = 2;
inline constexpr int kTigerLeft = 0;
inline constexpr int kTigerRight = 1;
inline constexpr int kOracleArm = 10;  // zero-based index of a11

/// A sampled task instance: structural config plus hidden parameters.
struct TaskSpec {
  FamilyConfig config;
  std::array<double, 2> theta{0.5, 0.5};  // Bernoulli bandit arm biases
  int target_arm = 1;                     // oracle bandit, 1-based
  int goal = 1;                           // cart, +1 or -1
};

struct HiddenState {
  int t = 0;
  std::array<int, 2> arm_state{0, 0};
  int tiger = kTigerLeft;
  double position = 0.0;
};

/// Discrete families use `index`; the cart uses `value`.
struct Action {
  int index = -1;
  double value = 0.0;
  [[nodiscard]] bool none() const { return index < 0 && value == 0.0; }
};

struct StepResult {
  HiddenState hidden;
  std::vector<double> observation;
  double reward = 0.0;
  bool done = false;
};

/// What the agent sees at step t: observation, the previous action, and the
/// reward that action produced. Record 0 is the reset record (no action).
struct StepRecord {
  int t = 0;
  std::vector<double> observation;
  Action prev_action;
  bool has_prev_action = false;
  double reward = 0.0;
  bool done = false;
};

struct Trajectory {
  TaskSpec task;
  std::vector<StepRecord> steps;     // episode_length + 1 records
  std::vector<HiddenState> hidden;   // analysis only; never fed to agents
  [[nodiscard]] std::size_t length() const { return steps.empty() ? 0 : steps.size() - 1; }
};

class InvalidAction : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

TaskSpec sample_task(const FamilyConfig& config, Rng& rng);
std::pair<HiddenState, std::vector<double>> reset(const TaskSpec& task, Rng& rng);
StepResult step(const TaskSpec& task, const HiddenState& hidden, const Action& action, Rng& rng);

/// Validates (and for the cart clamps) an action; throws InvalidAction.
Action validate_action(const FamilyConfig& config, const Action& action);

/// Agent-side policy driven by the visible record stream.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual void begin_episode(const FamilyConfig& config) = 0;
  virtual Action act(const StepRecord& latest, Rng& rng) = 0;
};

/// Simple adapter for stateless policies and tests.
class FunctionPolicy final : public Policy {
 public:
  using Fn = std::function<Action(const StepRecord&, Rng&)>;
  explicit FunctionPolicy(Fn fn) : fn_(std::move(fn)) {}
  void begin_episode(const FamilyConfig&) override {}
  Action act(const StepRecord& latest, Rng& rng) override { return fn_(latest, rng); }

 private:
  Fn fn_;
};

Trajectory rollout(const TaskSpec& task, Policy& policy, Rng& rng);

/// sum_t gamma^t r_{t+1} over the episode.
double discounted_return(const Trajectory& traj, double gamma);

/// Family-specific hidden-state vector for logs.
std::vector<double> hidden_vector(const TaskSpec& task, const HiddenState& hidden);

/// One JSON object per line: {episode_id, t, obs, prev_action, reward, done[, hidden_state]}.
void write_trajectory_log(std::ostream& out, long episode_id, const Trajectory& traj, bool with_hidden);

}  // namespace belieflab::envs
