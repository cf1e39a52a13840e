#pragma once

#include "belieflab/envs.hpp"

#include <Eigen/Dense>

#include <array>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

namespace belieflab::belief {

/// Pull and success counts per arm: (n_a1, k_a1, n_a2, k_a2).
struct BanditCounts {
  std::array<int, 2> pulls{0, 0};
  std::array<int, 2> successes{0, 0};
  friend bool operator==(const BanditCounts&, const BanditCounts&) = default;
};

/// P(arm a is in its first state), per arm.
struct ArmPosteriors {
  std::array<double, 2> first{0.5, 0.5};
};

/// P(tiger behind the left door).
struct TigerBelief {
  double left = 0.5;
};

/// Posterior over the ten candidate target arms.
struct OraclePosterior {
  std::array<double, 10> p{};
};

/// P(goal = +1).
struct CartGoalBelief {
  double plus = 0.5;
};

using BeliefState = std::variant<BanditCounts, ArmPosteriors, TigerBelief, OraclePosterior, CartGoalBelief>;

/// Evidence that no hidden-state hypothesis can explain.
class ImpossibleEvidence : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

BanditCounts update_bandit_counts(BanditCounts counts, int action, double reward);

/// Correct-then-predict HMM step: b'(s') = eta * sum_s T(s'|s) L(e|s) b(s).
/// `transition(s, s')` is row-stochastic.
Eigen::VectorXd update_hmm(const Eigen::VectorXd& belief, const Eigen::MatrixXd& transition,
                           const Eigen::VectorXd& likelihood);

OraclePosterior update_oracle(const OraclePosterior& posterior, int action, double reward);

double update_cart_goal(double belief, double position, double reward, double sigma);

/// Family prior (belief before any evidence).
BeliefState prior(const envs::FamilyConfig& config);

/// Consumes one record (previous action, its reward, and the new observation).
/// The reset record leaves the belief unchanged.
BeliefState update(const envs::FamilyConfig& config, const BeliefState& belief, const envs::StepRecord& record);

/// Canonical vector encoding: counts divided by the episode length for the
/// Bernoulli bandit, raw probabilities otherwise.
std::vector<double> encode(const envs::FamilyConfig& config, const BeliefState& belief);
std::size_t encoding_dim(const envs::FamilyConfig& config);

/// Nearest valid belief for an arbitrary vector (inverse of encode on its image):
/// counts are rounded and clamped, probabilities clamped, simplices renormalized.
BeliefState decode(const envs::FamilyConfig& config, std::span<const double> v);

/// Row-stochastic 2x2 chain that keeps its state with probability `stay`.
Eigen::MatrixXd stay_matrix(double stay);

/// Exact Bayes filter as a Policy-agnostic stream consumer.
class Filter {
 public:
  explicit Filter(envs::FamilyConfig config) : config_(std::move(config)), belief_(prior(config_)) {}
  void reset() { belief_ = prior(config_); }
  void observe(const envs::StepRecord& record) { belief_ = update(config_, belief_, record); }
  [[nodiscard]] const BeliefState& belief() const { return belief_; }
  [[nodiscard]] const envs::FamilyConfig& config() const { return config_; }

 private:
  envs::FamilyConfig config_;
  BeliefState belief_;
};

}  // namespace belieflab::belief
