#include "belieflab/belief.hpp"

#include "../support/enumeration.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace belieflab;
using namespace belieflab::belief;

namespace {

envs::FamilyConfig config_for(std::string_view id) { return envs::FamilyConfig::defaults(envs::TaskFamily::parse(id)); }

envs::StepRecord record(int action, double reward, std::vector<double> obs = {}) {
  envs::StepRecord r;
  r.has_prev_action = true;
  r.prev_action.index = action;
  r.reward = reward;
  r.observation = std::move(obs);
  return r;
}

}  // namespace

TEST(BanditCounts, Examples) {
  EXPECT_EQ(update_bandit_counts({}, 0, 1.0), (BanditCounts{{1, 0}, {1, 0}}));
  EXPECT_EQ(update_bandit_counts(BanditCounts{{3, 1}, {2, 0}}, 1, 0.0), (BanditCounts{{3, 2}, {2, 0}}));
  EXPECT_THROW(update_bandit_counts({}, 0, 0.5), std::invalid_argument);
}

TEST(BanditCounts, Monotone) {
  Rng rng(1);
  BanditCounts c;
  std::bernoulli_distribution coin(0.5);
  for (int i = 0; i < 1000; ++i) {
    const auto next = update_bandit_counts(c, coin(rng) ? 1 : 0, coin(rng) ? 1.0 : 0.0);
    for (std::size_t a = 0; a < 2; ++a) {
      EXPECT_GE(next.pulls[a], c.pulls[a]);
      EXPECT_GE(next.successes[a], c.successes[a]);
      EXPECT_LE(next.successes[a], next.pulls[a]);
    }
    c = next;
  }
}

TEST(Hmm, TigerListenExample) {
  Eigen::VectorXd b(2), lik(2);
  b << 0.5, 0.5;
  lik << 0.8, 0.2;
  EXPECT_NEAR(update_hmm(b, stay_matrix(0.9), lik)(0), 0.74, 1e-15);
  const auto c = config_for("dynamic_tiger_0.8");
  auto out = update(c, prior(c), record(envs::kTigerListen, -1.0, {1, 0, 0}));
  EXPECT_NEAR(std::get<TigerBelief>(out).left, 0.74, 1e-15);
}

TEST(Hmm, DynamicBanditExample) {
  const auto c = config_for("dynamic_bandit_symmetric");
  auto out = std::get<ArmPosteriors>(update(c, prior(c), record(0, 1.0)));
  EXPECT_NEAR(out.first[0], 0.82, 1e-15);
  EXPECT_NEAR(out.first[1], 0.5, 1e-15);
}

TEST(Hmm, UninformativeEvidenceOnlyPropagates) {
  Eigen::VectorXd b(2), lik(2);
  b << 0.3, 0.7;
  lik << 0.4, 0.4;
  const Eigen::VectorXd expected = stay_matrix(0.8).transpose() * b;
  EXPECT_NEAR((update_hmm(b, stay_matrix(0.8), lik) - expected).cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(Hmm, ImpossibleEvidence) {
  Eigen::VectorXd b(2), lik(2);
  b << 1.0, 0.0;
  lik << 0.0, 1.0;
  EXPECT_THROW(update_hmm(b, stay_matrix(0.9), lik), ImpossibleEvidence);
}

TEST(Oracle, Examples) {
  const auto c = config_for("oracle_bandit");
  const auto uniform = std::get<OraclePosterior>(prior(c));
  auto p3 = update_oracle(uniform, envs::kOracleArm, 0.1 * 3);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(p3.p[i], i == 2 ? 1.0 : 0.0);

  auto p4 = update_oracle(uniform, 3, 1.0);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(p4.p[i], i == 3 ? 0.0 : 1.0 / 9.0, 1e-15);

  auto p7 = update_oracle(uniform, 6, 5.0);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(p7.p[i], i == 6 ? 1.0 : 0.0);

  // a* = 10 gives an oracle reward of exactly 1; the pulled arm disambiguates.
  auto p10 = update_oracle(uniform, envs::kOracleArm, 1.0);
  EXPECT_EQ(p10.p[9], 1.0);

  EXPECT_THROW(update_oracle(uniform, 2, 2.5), ImpossibleEvidence);
  EXPECT_THROW(update_oracle(p7, 3, 5.0), ImpossibleEvidence);
  EXPECT_THROW(update_oracle(p7, envs::kOracleArm, 0.2), ImpossibleEvidence);
}

TEST(CartGoal, Examples) {
  for (double r : {-3.0, -1.0, -0.2, 0.4}) EXPECT_NEAR(update_cart_goal(0.37, 0.0, r, 0.1), 0.37, 1e-15);
  // Closed form: the two densities differ by exp(-(1.0)^2 / (2 * 0.01)) = exp(-50).
  const double expected = 1.0 / (1.0 + std::exp(-50.0));
  EXPECT_NEAR(update_cart_goal(0.5, 0.5, -0.5, 0.1), expected, 1e-30);
  // 1 - 1.9e-22 rounds to 1 in double; the mirrored position exposes the tail.
  EXPECT_NEAR(update_cart_goal(0.5, -0.5, -0.5, 0.1), 1.9e-22, 0.05e-22);
  EXPECT_EQ(update_cart_goal(1.0, 0.7, -2.0, 0.1), 1.0);
  EXPECT_EQ(update_cart_goal(0.0, 0.7, -0.3, 0.1), 0.0);
}

TEST(Filter, MatchesEnumeration) {
  Rng rng(2024);
  for (std::string_view id : {"dynamic_bandit_symmetric", "dynamic_bandit_asym_reward", "dynamic_bandit_asym_transition",
                              "dynamic_tiger_0.8", "dynamic_tiger_0.7", "stationary_tiger_0.8"}) {
    const auto c = config_for(id);
    double worst = 0.0;
    for (int rep = 0; rep < 60; ++rep) {
      const int steps = 1 + rep % 8;
      worst = std::max(worst, oracle::filter_vs_enumeration(c, oracle::random_records(c, steps, rng)));
    }
    EXPECT_LT(worst, 1e-10) << id;
  }
}

TEST(Filter, StaysValidOverLongStreams) {
  Rng rng(5);
  for (std::string_view id : {"dynamic_bandit_asym_reward", "dynamic_tiger_0.7", "latent_goal_cart"}) {
    const auto c = config_for(id);
    BeliefState b = prior(c);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> pos(-2.0, 2.0);
    auto records = oracle::random_records(c, 10000, rng);
    for (auto r : records) {
      if (c.family.kind == envs::FamilyKind::LatentGoalCart) {
        r.observation = {pos(rng)};
        r.reward = -std::abs(r.observation[0] - 1.0) + 0.1 * noise(rng);
      }
      b = update(c, b, r);
      for (double v : encode(c, b)) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
      }
    }
  }
}

TEST(Filter, SwapSymmetry) {
  Rng rng(6);
  const auto c = config_for("dynamic_bandit_symmetric");
  const auto t = config_for("dynamic_tiger_0.8");
  for (int rep = 0; rep < 50; ++rep) {
    auto records = oracle::random_records(c, 12, rng);
    BeliefState b = prior(c), s = prior(c);
    for (auto r : records) {
      b = update(c, b, r);
      r.prev_action.index = 1 - r.prev_action.index;
      s = update(c, s, r);
    }
    EXPECT_EQ(std::get<ArmPosteriors>(b).first[0], std::get<ArmPosteriors>(s).first[1]);
    EXPECT_EQ(std::get<ArmPosteriors>(b).first[1], std::get<ArmPosteriors>(s).first[0]);

    auto trecords = oracle::random_records(t, 12, rng);
    BeliefState tb = prior(t), ts = prior(t);
    for (auto r : trecords) {
      tb = update(t, tb, r);
      std::swap(r.observation[0], r.observation[1]);
      if (r.prev_action.index != envs::kTigerListen) r.prev_action.index = 3 - r.prev_action.index;
      ts = update(t, ts, r);
    }
    EXPECT_NEAR(std::get<TigerBelief>(tb).left, 1.0 - std::get<TigerBelief>(ts).left, 1e-15);
  }
}

TEST(Encoding, RoundTrip) {
  const auto c = config_for("bernoulli_bandit");
  BanditCounts counts{{7, 3}, {4, 1}};
  const auto v = encode(c, counts);
  EXPECT_DOUBLE_EQ(v[0], 7.0 / 40.0);
  EXPECT_EQ(std::get<BanditCounts>(decode(c, v)), counts);
  std::vector<double> noisy{0.5, 0.9, -0.2, 0.1};
  const auto d = std::get<BanditCounts>(decode(c, noisy));
  EXPECT_LE(d.successes[0], d.pulls[0]);
  EXPECT_EQ(d.pulls[1], 0);

  const auto o = config_for("oracle_bandit");
  std::vector<double> raw(10, 0.0);
  raw[2] = 2.0;
  raw[4] = -1.0;
  raw[5] = 2.0;
  const auto p = std::get<OraclePosterior>(decode(o, raw));
  EXPECT_DOUBLE_EQ(p.p[2], 0.5);
  EXPECT_DOUBLE_EQ(std::accumulate(p.p.begin(), p.p.end(), 0.0), 1.0);
}
