#include "belieflab/belief.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace belieflab::belief {

using envs::FamilyKind;

BanditCounts update_bandit_counts(BanditCounts counts, int action, double reward) {
  if (reward != 0.0 && reward != 1.0) throw std::invalid_argument("bandit reward must be 0 or 1");
  if (action < 0 || action > 1) throw std::invalid_argument("bandit action must be 0 or 1");
  const auto a = static_cast<std::size_t>(action);
  counts.pulls[a] += 1;
  counts.successes[a] += static_cast<int>(reward);
  return counts;
}

Eigen::MatrixXd stay_matrix(double stay) {
  Eigen::MatrixXd t(2, 2);
  t << stay, 1.0 - stay, 1.0 - stay, stay;
  return t;
}

Eigen::VectorXd update_hmm(const Eigen::VectorXd& belief, const Eigen::MatrixXd& transition,
                           const Eigen::VectorXd& likelihood) {
  if (belief.size() != likelihood.size() || transition.rows() != belief.size() || transition.cols() != belief.size()) {
    throw std::invalid_argument("update_hmm: dimension mismatch");
  }
  Eigen::VectorXd corrected = belief.cwiseProduct(likelihood);
  const double z = corrected.sum();
  if (!(z > 0.0)) throw ImpossibleEvidence("update_hmm: evidence has zero likelihood");
  corrected /= z;
  Eigen::VectorXd predicted = transition.transpose() * corrected;
  return predicted / predicted.sum();
}

OraclePosterior update_oracle(const OraclePosterior& posterior, int action, double reward) {
  OraclePosterior out{};
  if (action == envs::kOracleArm) {
    const double idx = reward * 10.0;
    const long target = std::lround(idx);
    if (std::abs(idx - static_cast<double>(target)) > 1e-6 || target < 1 || target > 10) {
      throw ImpossibleEvidence("oracle arm reward does not encode a target");
    }
    if (!(posterior.p[static_cast<std::size_t>(target - 1)] > 0.0)) {
      throw ImpossibleEvidence("oracle arm points at an excluded target");
    }
    out.p[static_cast<std::size_t>(target - 1)] = 1.0;
    return out;
  }
  if (action < 0 || action > 9) throw std::invalid_argument("oracle bandit action out of range");
  const auto j = static_cast<std::size_t>(action);
  if (reward == 5.0) {
    if (!(posterior.p[j] > 0.0)) throw ImpossibleEvidence("target payout from an excluded arm");
    out.p[j] = 1.0;
    return out;
  }
  if (reward != 1.0) throw ImpossibleEvidence("oracle bandit payout must be 1 or 5");
  out = posterior;
  out.p[j] = 0.0;
  double z = 0.0;
  for (double v : out.p) z += v;
  if (!(z > 0.0)) throw ImpossibleEvidence("non-target payout excludes every hypothesis");
  for (double& v : out.p) v /= z;
  return out;
}

double update_cart_goal(double belief, double position, double reward, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("cart sigma must be positive");
  if (belief <= 0.0 || belief >= 1.0) return belief;
  // Ratio of Gaussian likelihoods in log space: N(r; -|x-1|, s) / N(r; -|x+1|, s).
  const double mu_plus = -std::abs(position - 1.0);
  const double mu_minus = -std::abs(position + 1.0);
  const double log_ratio = (-(reward - mu_plus) * (reward - mu_plus) + (reward - mu_minus) * (reward - mu_minus)) /
                           (2.0 * sigma * sigma);
  const double log_odds = std::log(belief) - std::log1p(-belief) + log_ratio;
  return 1.0 / (1.0 + std::exp(-log_odds));
}

BeliefState prior(const envs::FamilyConfig& config) {
  switch (config.family.kind) {
    case FamilyKind::BernoulliBandit: return BanditCounts{};
    case FamilyKind::DynamicBandit: return ArmPosteriors{};
    case FamilyKind::StationaryTiger:
    case FamilyKind::DynamicTiger: return TigerBelief{};
    case FamilyKind::OracleBandit: {
      OraclePosterior p{};
      for (int target : config.oracle_targets) p.p[static_cast<std::size_t>(target - 1)] = 1.0;
      double z = 0.0;
      for (double v : p.p) z += v;
      for (double& v : p.p) v /= z;
      return p;
    }
    case FamilyKind::LatentGoalCart: return CartGoalBelief{};
  }
  throw std::logic_error("prior: unknown family");
}

BeliefState update(const envs::FamilyConfig& config, const BeliefState& belief, const envs::StepRecord& record) {
  if (!record.has_prev_action) return belief;
  const int a = record.prev_action.index;
  const double r = record.reward;
  switch (config.family.kind) {
    case FamilyKind::BernoulliBandit:
      return update_bandit_counts(std::get<BanditCounts>(belief), a, r);
    case FamilyKind::DynamicBandit: {
      ArmPosteriors out = std::get<ArmPosteriors>(belief);
      for (std::size_t arm = 0; arm < 2; ++arm) {
        Eigen::VectorXd b(2);
        b << out.first[arm], 1.0 - out.first[arm];
        Eigen::VectorXd lik = Eigen::VectorXd::Ones(2);
        if (static_cast<std::size_t>(a) == arm) {
          const auto& lv = config.arm_levels[arm];
          lik << (r > 0.5 ? lv[0] : 1.0 - lv[0]), (r > 0.5 ? lv[1] : 1.0 - lv[1]);
        }
        out.first[arm] = update_hmm(b, stay_matrix(config.arm_stay[arm]), lik)(0);
      }
      return out;
    }
    case FamilyKind::StationaryTiger:
    case FamilyKind::DynamicTiger: {
      if (a != envs::kTigerListen) return TigerBelief{0.5};
      const auto& tb = std::get<TigerBelief>(belief);
      Eigen::VectorXd b(2);
      b << tb.left, 1.0 - tb.left;
      const bool heard_left = record.observation.at(0) > 0.5;
      const double acc = config.family.accuracy;
      Eigen::VectorXd lik(2);
      lik << (heard_left ? acc : 1.0 - acc), (heard_left ? 1.0 - acc : acc);
      return TigerBelief{update_hmm(b, stay_matrix(config.tiger_stay), lik)(0)};
    }
    case FamilyKind::OracleBandit:
      return update_oracle(std::get<OraclePosterior>(belief), a, r);
    case FamilyKind::LatentGoalCart:
      return CartGoalBelief{update_cart_goal(std::get<CartGoalBelief>(belief).plus, record.observation.at(0), r,
                                             config.cart.sigma)};
  }
  throw std::logic_error("update: unknown family");
}

std::size_t encoding_dim(const envs::FamilyConfig& config) {
  switch (config.family.kind) {
    case FamilyKind::BernoulliBandit: return 4;
    case FamilyKind::DynamicBandit: return 2;
    case FamilyKind::OracleBandit: return 10;
    default: return 1;
  }
}

std::vector<double> encode(const envs::FamilyConfig& config, const BeliefState& belief) {
  return std::visit(
      [&](const auto& b) -> std::vector<double> {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, BanditCounts>) {
          const double h = config.episode_length;
          return {b.pulls[0] / h, b.successes[0] / h, b.pulls[1] / h, b.successes[1] / h};
        } else if constexpr (std::is_same_v<T, ArmPosteriors>) {
          return {b.first[0], b.first[1]};
        } else if constexpr (std::is_same_v<T, TigerBelief>) {
          return {b.left};
        } else if constexpr (std::is_same_v<T, OraclePosterior>) {
          return {b.p.begin(), b.p.end()};
        } else {
          return {b.plus};
        }
      },
      belief);
}

BeliefState decode(const envs::FamilyConfig& config, std::span<const double> v) {
  if (v.size() != encoding_dim(config)) throw std::invalid_argument("decode: wrong belief vector size");
  auto clamp01 = [](double x) { return std::clamp(std::isfinite(x) ? x : 0.5, 0.0, 1.0); };
  switch (config.family.kind) {
    case FamilyKind::BernoulliBandit: {
      const double h = config.episode_length;
      BanditCounts c;
      for (std::size_t arm = 0; arm < 2; ++arm) {
        const int n = std::clamp(static_cast<int>(std::lround(v[2 * arm] * h)), 0, config.episode_length);
        const int k = std::clamp(static_cast<int>(std::lround(v[2 * arm + 1] * h)), 0, n);
        c.pulls[arm] = n;
        c.successes[arm] = k;
      }
      return c;
    }
    case FamilyKind::DynamicBandit: return ArmPosteriors{{clamp01(v[0]), clamp01(v[1])}};
    case FamilyKind::StationaryTiger:
    case FamilyKind::DynamicTiger: return TigerBelief{clamp01(v[0])};
    case FamilyKind::OracleBandit: {
      OraclePosterior p{};
      double z = 0.0;
      for (std::size_t i = 0; i < 10; ++i) {
        p.p[i] = std::isfinite(v[i]) ? std::max(v[i], 0.0) : 0.0;
        z += p.p[i];
      }
      if (!(z > 0.0)) return prior(config);
      for (double& x : p.p) x /= z;
      return p;
    }
    case FamilyKind::LatentGoalCart: return CartGoalBelief{clamp01(v[0])};
  }
  throw std::logic_error("decode: unknown family");
}

}  // namespace belieflab::belief
