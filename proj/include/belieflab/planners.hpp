#pragma once

#include "belieflab/belief.hpp"
#include "belieflab/envs.hpp"

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace belieflab::planners {

class NonConvergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reward-probability posterior mean under a Beta(1,1) prior.
inline double posterior_mean(int pulls, int successes) { return (successes + 1.0) / (pulls + 2.0); }

struct GittinsOptions {
  /// Index keyed on remaining steps (calibration over the remaining horizon)
  /// rather than the infinite-horizon index.
  bool finite_horizon = true;
  /// Lookahead used to approximate the infinite-horizon stopping problem.
  int calibration_depth = 300;
  int bisection_steps = 44;
};

/// Index of a Beta(k+1, n-k+1) arm for every n <= horizon, 0 <= k <= n, and
/// (when finite) every remaining-step count 1..horizon.
class GittinsTable {
 public:
  GittinsTable(double gamma, int horizon, bool finite_horizon, std::vector<double> values);

  /// `remaining` is ignored for infinite-horizon tables; it is clamped to [1, horizon].
  [[nodiscard]] double index(int pulls, int successes, int remaining) const;
  [[nodiscard]] double gamma() const { return gamma_; }
  [[nodiscard]] int horizon() const { return horizon_; }
  [[nodiscard]] bool finite_horizon() const { return finite_; }
  [[nodiscard]] const std::vector<double>& values() const { return values_; }

 private:
  [[nodiscard]] std::size_t offset(int n, int k, int r) const;
  double gamma_;
  int horizon_;
  bool finite_;
  std::vector<double> values_;
};

GittinsTable compute_gittins(double gamma, int horizon, const GittinsOptions& options = {});

/// Exact finite-horizon Bayes-optimal policy for the two-armed Bernoulli bandit
/// over count states (dense table; the time step is n1 + n2).
class DpPolicy {
 public:
  DpPolicy(int horizon, double gamma, std::vector<double> values);

  [[nodiscard]] double value(const belief::BanditCounts& c) const;
  [[nodiscard]] std::array<double, 2> q_values(const belief::BanditCounts& c) const;
  /// Lowest index on ties.
  [[nodiscard]] int action(const belief::BanditCounts& c) const;
  [[nodiscard]] int horizon() const { return horizon_; }
  [[nodiscard]] double gamma() const { return gamma_; }

 private:
  [[nodiscard]] std::size_t offset(int n1, int k1, int n2, int k2) const;
  int horizon_;
  double gamma_;
  std::vector<double> values_;
};

DpPolicy compute_bandit_dp(int horizon, double gamma, std::size_t max_states = 50'000'000);

/// Belief transition for one (point, action): reward and next belief point.
struct Successor {
  double probability = 0.0;
  double reward = 0.0;
  std::array<double, 2> point{0.0, 0.0};
  bool terminal = false;
};

/// Fully observable MDP over a 1-D or 2-D box of belief points.
class BeliefMdp {
 public:
  virtual ~BeliefMdp() = default;
  [[nodiscard]] virtual int dims() const = 0;
  [[nodiscard]] virtual std::array<double, 2> lower() const = 0;
  [[nodiscard]] virtual std::array<double, 2> upper() const = 0;
  [[nodiscard]] virtual int num_actions() const = 0;
  virtual void successors(std::array<double, 2> point, int action, std::vector<Successor>& out) const = 0;
  /// Environment action for a planning action (identity except for the cart).
  [[nodiscard]] virtual envs::Action to_env_action(int action) const { return envs::Action{action}; }
};

struct MdpOptions {
  /// Opening a Tiger door ends the episode instead of resetting the tiger.
  bool tiger_terminal_on_open = false;
  int cart_velocity_levels = 17;
  int quadrature_nodes = 8;
};

std::unique_ptr<BeliefMdp> make_belief_mdp(const envs::FamilyConfig& config, const MdpOptions& options = {});

/// Converged value table on a regular grid with multilinear interpolation.
struct BeliefGrid {
  int dims = 1;
  std::array<int, 2> resolution{1, 1};
  std::array<double, 2> lower{0.0, 0.0};
  std::array<double, 2> upper{1.0, 1.0};
  double gamma = 0.95;
  double tolerance = 1e-8;
  std::vector<double> values;
  std::vector<int> greedy;
  std::vector<double> residuals;

  [[nodiscard]] std::size_t size() const { return values.size(); }
  [[nodiscard]] double coordinate(int dim, int i) const;
  [[nodiscard]] std::array<double, 2> point(std::size_t flat) const;
  /// Corner indices and weights of the cell containing `p` (clamped to the box).
  void weights(std::array<double, 2> p, std::vector<std::pair<std::size_t, double>>& out) const;
  [[nodiscard]] double interpolate(std::array<double, 2> p) const;
};

/// Jacobi value iteration until the sup-norm Bellman residual drops below `tol`.
BeliefGrid value_iteration(const BeliefMdp& mdp, std::array<int, 2> resolution, double gamma, double tol,
                           int max_sweeps = 200'000);

/// One-step lookahead action values at an arbitrary point.
std::vector<double> q_values(const BeliefMdp& mdp, const BeliefGrid& grid, std::array<double, 2> point);

/// Interpolated Q-values closer than this count as ties; the lowest action index wins.
inline constexpr double kGridTieTolerance = 1e-3;

/// Pull the oracle arm while no target is likely, then the most probable target.
int oracle_bandit_policy(const belief::OraclePosterior& posterior);

struct OracleClosedForm {};

struct SolveOptions {
  int resolution_1d = 201;
  int resolution_2d = 101;
  int cart_position_resolution = 81;
  double tolerance = 1e-8;
  MdpOptions mdp;
  GittinsOptions gittins;
  /// Bernoulli bandit: use the exact DP table instead of the Gittins index.
  bool bandit_dp = false;
};

/// Bayes-optimal reference machine for one family.
class PlannerSolution {
 public:
  using Body = std::variant<GittinsTable, DpPolicy, BeliefGrid, OracleClosedForm>;

  PlannerSolution(envs::FamilyConfig config, Body body, SolveOptions options);

  [[nodiscard]] const envs::FamilyConfig& config() const { return config_; }
  [[nodiscard]] const Body& body() const { return body_; }
  [[nodiscard]] const SolveOptions& options() const { return options_; }
  /// Null unless the body is a BeliefGrid.
  [[nodiscard]] const BeliefMdp* mdp() const { return mdp_.get(); }

 private:
  envs::FamilyConfig config_;
  Body body_;
  SolveOptions options_;
  std::shared_ptr<const BeliefMdp> mdp_;
};

PlannerSolution solve(const envs::FamilyConfig& config, const SolveOptions& options = {});

/// Greedy Bayes action for a belief (and, for the cart, the observed position).
/// Ties go to the lowest action index.
envs::Action bayes_act(const PlannerSolution& solution, const belief::BeliefState& belief,
                       const std::vector<double>& observation);

/// Filter plus planner, driven by the visible record stream.
class BayesPolicy final : public envs::Policy {
 public:
  explicit BayesPolicy(std::shared_ptr<const PlannerSolution> solution);
  void begin_episode(const envs::FamilyConfig& config) override;
  envs::Action act(const envs::StepRecord& latest, Rng& rng) override;
  [[nodiscard]] const belief::BeliefState& belief() const { return filter_.belief(); }

 private:
  std::shared_ptr<const PlannerSolution> solution_;
  belief::Filter filter_;
};

/// Stable cache key over everything the solution depends on.
std::string solution_key(const envs::FamilyConfig& config, const SolveOptions& options);
std::string serialize_solution(const PlannerSolution& solution);
PlannerSolution deserialize_solution(const std::string& text);
/// Loads `<dir>/<family>-<hash>.json` when present, otherwise solves and writes it.
PlannerSolution solve_cached(const envs::FamilyConfig& config, const SolveOptions& options,
                             const std::filesystem::path& cache_dir, bool* cache_hit = nullptr);
std::filesystem::path solution_path(const envs::FamilyConfig& config, const SolveOptions& options,
                                    const std::filesystem::path& cache_dir);

}  // namespace belieflab::planners
