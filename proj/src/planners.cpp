#include "belieflab/planners.hpp"

#include "belieflab/family_json.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace belieflab::planners {

using envs::FamilyKind;
using nlohmann::json;

// ---------------------------------------------------------------- Gittins

GittinsTable::GittinsTable(double gamma, int horizon, bool finite_horizon, std::vector<double> values)
    : gamma_(gamma), horizon_(horizon), finite_(finite_horizon), values_(std::move(values)) {
  const auto h = static_cast<std::size_t>(horizon + 1);
  const std::size_t expected = finite_ ? h * h * h : h * h;
  if (values_.size() != expected) throw std::invalid_argument("GittinsTable: value count does not match horizon");
}

std::size_t GittinsTable::offset(int n, int k, int r) const {
  const auto h = static_cast<std::size_t>(horizon_ + 1);
  const auto base = static_cast<std::size_t>(n) * h + static_cast<std::size_t>(k);
  return finite_ ? base * h + static_cast<std::size_t>(r) : base;
}

double GittinsTable::index(int pulls, int successes, int remaining) const {
  if (pulls < 0 || successes < 0 || successes > pulls) throw std::out_of_range("GittinsTable: invalid counts");
  if (pulls > horizon_) throw std::out_of_range("GittinsTable: pulls beyond table horizon");
  return values_[offset(pulls, successes, std::clamp(remaining, 1, horizon_))];
}

namespace {

// Value of continuing minus value of retiring at the root of the one-armed
// problem with `steps` remaining, for a Beta(a, b) arm and per-step retirement
// reward `lambda`.
double continuation_advantage(double a, double b, double lambda, int steps, double gamma, std::vector<double>& v,
                              std::vector<double>& next) {
  v.assign(static_cast<std::size_t>(steps + 2), 0.0);
  next.assign(v.size(), 0.0);
  std::vector<double> retire(static_cast<std::size_t>(steps + 1));
  double g = 1.0;
  for (int r = 0; r <= steps; ++r) {
    retire[static_cast<std::size_t>(r)] = lambda * (1.0 - g) / (1.0 - gamma);
    g *= gamma;
  }
  for (int d = steps - 1; d >= 0; --d) {
    const double ret = retire[static_cast<std::size_t>(steps - d)];
    const double denom = a + b + d;
    for (int s = 0; s <= d; ++s) {
      const double p = (a + s) / denom;
      const double cont = p * (1.0 + gamma * v[static_cast<std::size_t>(s + 1)]) + (1.0 - p) * gamma * v[static_cast<std::size_t>(s)];
      next[static_cast<std::size_t>(s)] = d == 0 ? cont - ret : std::max(ret, cont);
    }
    std::swap(v, next);
  }
  return v[0];
}

double calibrate(int n, int k, int steps, double gamma, int bisection_steps, std::vector<double>& v,
                 std::vector<double>& next) {
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < bisection_steps; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (continuation_advantage(k + 1.0, n - k + 1.0, mid, steps, gamma, v, next) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

GittinsTable compute_gittins(double gamma, int horizon, const GittinsOptions& options) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("compute_gittins: gamma must lie in (0, 1)");
  if (horizon < 1) throw std::invalid_argument("compute_gittins: horizon must be at least 1");
  const auto h = static_cast<std::size_t>(horizon + 1);
  std::vector<double> values(options.finite_horizon ? h * h * h : h * h, 0.0);
  std::vector<double> v, next;
  for (int n = 0; n <= horizon; ++n) {
    for (int k = 0; k <= n; ++k) {
      const auto base = static_cast<std::size_t>(n) * h + static_cast<std::size_t>(k);
      if (!options.finite_horizon) {
        values[base] = calibrate(n, k, options.calibration_depth, gamma, options.bisection_steps, v, next);
        continue;
      }
      // One step to go: the index is the posterior mean.
      values[base * h + 1] = posterior_mean(n, k);
      for (int r = 2; r <= horizon; ++r) {
        values[base * h + static_cast<std::size_t>(r)] = calibrate(n, k, r, gamma, options.bisection_steps, v, next);
      }
    }
  }
  return GittinsTable(gamma, horizon, options.finite_horizon, std::move(values));
}

// ---------------------------------------------------------------- exact DP

DpPolicy::DpPolicy(int horizon, double gamma, std::vector<double> values)
    : horizon_(horizon), gamma_(gamma), values_(std::move(values)) {}

std::size_t DpPolicy::offset(int n1, int k1, int n2, int k2) const {
  const auto h = static_cast<std::size_t>(horizon_ + 1);
  return ((static_cast<std::size_t>(n1) * h + static_cast<std::size_t>(k1)) * h + static_cast<std::size_t>(n2)) * h +
         static_cast<std::size_t>(k2);
}

double DpPolicy::value(const belief::BanditCounts& c) const {
  if (c.pulls[0] + c.pulls[1] >= horizon_) return 0.0;
  return values_[offset(c.pulls[0], c.successes[0], c.pulls[1], c.successes[1])];
}

std::array<double, 2> DpPolicy::q_values(const belief::BanditCounts& c) const {
  if (c.pulls[0] + c.pulls[1] >= horizon_) throw std::out_of_range("DpPolicy: no decision at the horizon");
  std::array<double, 2> q{};
  for (std::size_t a = 0; a < 2; ++a) {
    const double p = posterior_mean(c.pulls[a], c.successes[a]);
    belief::BanditCounts win = c, lose = c;
    win.pulls[a] += 1;
    win.successes[a] += 1;
    lose.pulls[a] += 1;
    q[a] = p * (1.0 + gamma_ * value(win)) + (1.0 - p) * gamma_ * value(lose);
  }
  return q;
}

int DpPolicy::action(const belief::BanditCounts& c) const {
  const auto q = q_values(c);
  return q[1] > q[0] + 1e-12 ? 1 : 0;
}

DpPolicy compute_bandit_dp(int horizon, double gamma, std::size_t max_states) {
  if (horizon < 1) throw std::invalid_argument("compute_bandit_dp: horizon must be at least 1");
  const auto h = static_cast<std::size_t>(horizon + 1);
  if (h * h * h * h > max_states) throw std::length_error("compute_bandit_dp: horizon exceeds the state budget");
  std::vector<double> values(h * h * h * h, 0.0);
  auto at = [h](int n1, int k1, int n2, int k2) {
    return ((static_cast<std::size_t>(n1) * h + static_cast<std::size_t>(k1)) * h + static_cast<std::size_t>(n2)) * h +
           static_cast<std::size_t>(k2);
  };
  for (int t = horizon - 1; t >= 0; --t) {
    const bool last = t + 1 == horizon;
    for (int n1 = 0; n1 <= t; ++n1) {
      const int n2 = t - n1;
      for (int k1 = 0; k1 <= n1; ++k1) {
        for (int k2 = 0; k2 <= n2; ++k2) {
          const double p1 = posterior_mean(n1, k1);
          const double p2 = posterior_mean(n2, k2);
          const double w1 = last ? 0.0 : values[at(n1 + 1, k1 + 1, n2, k2)];
          const double l1 = last ? 0.0 : values[at(n1 + 1, k1, n2, k2)];
          const double w2 = last ? 0.0 : values[at(n1, k1, n2 + 1, k2 + 1)];
          const double l2 = last ? 0.0 : values[at(n1, k1, n2 + 1, k2)];
          const double q1 = p1 * (1.0 + gamma * w1) + (1.0 - p1) * gamma * l1;
          const double q2 = p2 * (1.0 + gamma * w2) + (1.0 - p2) * gamma * l2;
          values[at(n1, k1, n2, k2)] = std::max(q1, q2);
        }
      }
    }
  }
  return DpPolicy(horizon, gamma, std::move(values));
}

// ---------------------------------------------------------------- belief MDPs

namespace {

envs::StepRecord evidence(int action, double reward, std::vector<double> observation = {}) {
  envs::StepRecord r;
  r.has_prev_action = true;
  r.prev_action.index = action;
  r.reward = reward;
  r.observation = std::move(observation);
  return r;
}

class TigerMdp final : public BeliefMdp {
 public:
  TigerMdp(envs::FamilyConfig config, bool terminal_on_open) : c_(std::move(config)), terminal_(terminal_on_open) {}
  int dims() const override { return 1; }
  std::array<double, 2> lower() const override { return {0.0, 0.0}; }
  std::array<double, 2> upper() const override { return {1.0, 0.0}; }
  int num_actions() const override { return 3; }

  void successors(std::array<double, 2> point, int action, std::vector<Successor>& out) const override {
    out.clear();
    const double b = point[0];
    if (action == envs::kTigerListen) {
      const double acc = c_.family.accuracy;
      const double p_left = b * acc + (1.0 - b) * (1.0 - acc);
      for (int heard = 0; heard < 2; ++heard) {
        const double p = heard == 0 ? p_left : 1.0 - p_left;
        if (p <= 0.0) continue;
        std::vector<double> obs{heard == 0 ? 1.0 : 0.0, heard == 0 ? 0.0 : 1.0, 0.0};
        const auto next = belief::update(c_, belief::TigerBelief{b}, evidence(envs::kTigerListen, c_.listen_reward, obs));
        out.push_back({p, c_.listen_reward, {std::get<belief::TigerBelief>(next).left, 0.0}, false});
      }
      return;
    }
    const double p_tiger = action == envs::kTigerOpenLeft ? b : 1.0 - b;
    const double reward = p_tiger * c_.tiger_reward + (1.0 - p_tiger) * c_.treasure_reward;
    out.push_back({1.0, reward, {0.5, 0.0}, terminal_});
  }

 private:
  envs::FamilyConfig c_;
  bool terminal_;
};

class DynamicBanditMdp final : public BeliefMdp {
 public:
  explicit DynamicBanditMdp(envs::FamilyConfig config) : c_(std::move(config)) {}
  int dims() const override { return 2; }
  std::array<double, 2> lower() const override { return {0.0, 0.0}; }
  std::array<double, 2> upper() const override { return {1.0, 1.0}; }
  int num_actions() const override { return 2; }

  void successors(std::array<double, 2> point, int action, std::vector<Successor>& out) const override {
    out.clear();
    const auto a = static_cast<std::size_t>(action);
    const auto& lv = c_.arm_levels[a];
    const double success = point[a] * lv[0] + (1.0 - point[a]) * lv[1];
    const belief::BeliefState current = belief::ArmPosteriors{{point[0], point[1]}};
    for (int r = 0; r < 2; ++r) {
      const double p = r == 1 ? success : 1.0 - success;
      if (p <= 0.0) continue;
      const auto next = std::get<belief::ArmPosteriors>(belief::update(c_, current, evidence(action, r)));
      out.push_back({p, static_cast<double>(r), {next.first[0], next.first[1]}, false});
    }
  }

 private:
  envs::FamilyConfig c_;
};

// Nodes and weights of Gauss-Hermite quadrature for a standard normal
// (Golub-Welsch on the probabilists' Hermite recurrence).
std::pair<std::vector<double>, std::vector<double>> normal_quadrature(int n) {
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(static_cast<double>(i));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  std::vector<double> nodes(static_cast<std::size_t>(n)), weights(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    nodes[static_cast<std::size_t>(i)] = eig.eigenvalues()(i);
    weights[static_cast<std::size_t>(i)] = eig.eigenvectors()(0, i) * eig.eigenvectors()(0, i);
  }
  return {nodes, weights};
}

class CartMdp final : public BeliefMdp {
 public:
  CartMdp(envs::FamilyConfig config, int levels, int nodes) : c_(std::move(config)), levels_(levels) {
    if (levels < 2) throw std::invalid_argument("cart planning needs at least two velocity levels");
    std::tie(nodes_, weights_) = normal_quadrature(nodes);
  }
  int dims() const override { return 2; }
  std::array<double, 2> lower() const override { return {0.0, c_.cart.x_min}; }
  std::array<double, 2> upper() const override { return {1.0, c_.cart.x_max}; }
  int num_actions() const override { return levels_; }

  envs::Action to_env_action(int action) const override {
    const double v = c_.cart.v_min + (c_.cart.v_max - c_.cart.v_min) * action / (levels_ - 1);
    return envs::Action{-1, v};
  }

  void successors(std::array<double, 2> point, int action, std::vector<Successor>& out) const override {
    out.clear();
    const double b = point[0];
    const double x = std::clamp(point[1] + to_env_action(action).value * c_.cart.dt, c_.cart.x_min, c_.cart.x_max);
    for (int goal : {1, -1}) {
      const double w = goal == 1 ? b : 1.0 - b;
      if (w <= 0.0) continue;
      const double mean = -std::abs(x - goal);
      for (std::size_t j = 0; j < nodes_.size(); ++j) {
        const double r = mean + c_.cart.sigma * nodes_[j];
        out.push_back({w * weights_[j], r, {belief::update_cart_goal(b, x, r, c_.cart.sigma), x}, false});
      }
    }
  }

 private:
  envs::FamilyConfig c_;
  int levels_;
  std::vector<double> nodes_;
  std::vector<double> weights_;
};

}  // namespace

std::unique_ptr<BeliefMdp> make_belief_mdp(const envs::FamilyConfig& config, const MdpOptions& options) {
  switch (config.family.kind) {
    case FamilyKind::StationaryTiger:
    case FamilyKind::DynamicTiger: return std::make_unique<TigerMdp>(config, options.tiger_terminal_on_open);
    case FamilyKind::DynamicBandit: return std::make_unique<DynamicBanditMdp>(config);
    case FamilyKind::LatentGoalCart:
      return std::make_unique<CartMdp>(config, options.cart_velocity_levels, options.quadrature_nodes);
    default: throw std::invalid_argument("no belief-grid planner for family " + config.family.id());
  }
}

// ---------------------------------------------------------------- grids

double BeliefGrid::coordinate(int dim, int i) const {
  const auto d = static_cast<std::size_t>(dim);
  if (resolution[d] == 1) return lower[d];
  return lower[d] + (upper[d] - lower[d]) * i / (resolution[d] - 1);
}

std::array<double, 2> BeliefGrid::point(std::size_t flat) const {
  const auto r1 = static_cast<std::size_t>(resolution[1]);
  return {coordinate(0, static_cast<int>(flat / r1)), coordinate(1, static_cast<int>(flat % r1))};
}

void BeliefGrid::weights(std::array<double, 2> p, std::vector<std::pair<std::size_t, double>>& out) const {
  out.clear();
  std::array<int, 2> base{0, 0};
  std::array<double, 2> frac{0.0, 0.0};
  for (std::size_t d = 0; d < 2; ++d) {
    if (resolution[d] == 1) continue;
    const double u = (std::clamp(p[d], lower[d], upper[d]) - lower[d]) / (upper[d] - lower[d]) * (resolution[d] - 1);
    base[d] = std::min(static_cast<int>(std::floor(u)), resolution[d] - 2);
    frac[d] = u - base[d];
  }
  const auto r1 = static_cast<std::size_t>(resolution[1]);
  for (int di = 0; di < (resolution[0] > 1 ? 2 : 1); ++di) {
    for (int dj = 0; dj < (resolution[1] > 1 ? 2 : 1); ++dj) {
      const double w = (di ? frac[0] : 1.0 - frac[0]) * (dj ? frac[1] : 1.0 - frac[1]);
      if (w == 0.0) continue;
      out.emplace_back(static_cast<std::size_t>(base[0] + di) * r1 + static_cast<std::size_t>(base[1] + dj), w);
    }
  }
}

double BeliefGrid::interpolate(std::array<double, 2> p) const {
  thread_local std::vector<std::pair<std::size_t, double>> w;
  weights(p, w);
  double v = 0.0;
  for (const auto& [i, wi] : w) v += wi * values[i];
  return v;
}

BeliefGrid value_iteration(const BeliefMdp& mdp, std::array<int, 2> resolution, double gamma, double tol,
                           int max_sweeps) {
  if (mdp.dims() == 1) resolution[1] = 1;
  for (int d = 0; d < mdp.dims(); ++d) {
    if (resolution[static_cast<std::size_t>(d)] < 2) throw std::invalid_argument("value_iteration: resolution below 2");
  }
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("value_iteration: gamma must lie in [0, 1)");
  BeliefGrid grid;
  grid.dims = mdp.dims();
  grid.resolution = resolution;
  grid.lower = mdp.lower();
  grid.upper = mdp.upper();
  grid.gamma = gamma;
  grid.tolerance = tol;
  const std::size_t n = static_cast<std::size_t>(resolution[0]) * static_cast<std::size_t>(resolution[1]);
  const auto actions = static_cast<std::size_t>(mdp.num_actions());

  // Sparse Bellman operator: row (state, action) -> expected reward + weighted columns.
  std::vector<double> reward(n * actions, 0.0);
  std::vector<std::size_t> start(n * actions + 1, 0);
  std::vector<std::uint32_t> cols;
  std::vector<double> weights;
  std::vector<Successor> succ;
  std::vector<std::pair<std::size_t, double>> corner;
  for (std::size_t s = 0; s < n; ++s) {
    const auto p = grid.point(s);
    for (std::size_t a = 0; a < actions; ++a) {
      const std::size_t row = s * actions + a;
      mdp.successors(p, static_cast<int>(a), succ);
      for (const auto& x : succ) {
        reward[row] += x.probability * x.reward;
        if (x.terminal) continue;
        grid.weights(x.point, corner);
        for (const auto& [col, w] : corner) {
          cols.push_back(static_cast<std::uint32_t>(col));
          weights.push_back(x.probability * w);
        }
      }
      start[row + 1] = cols.size();
    }
  }

  std::vector<double> v(n, 0.0), next(n, 0.0);
  grid.greedy.assign(n, 0);
  for (int sweep = 0;; ++sweep) {
    if (sweep >= max_sweeps) throw NonConvergence("value_iteration: residual above tolerance after max sweeps");
    double residual = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      int best_a = 0;
      for (std::size_t a = 0; a < actions; ++a) {
        const std::size_t row = s * actions + a;
        double acc = 0.0;
        for (std::size_t e = start[row]; e < start[row + 1]; ++e) acc += weights[e] * v[cols[e]];
        const double q = reward[row] + gamma * acc;
        if (q > best + 1e-12) {
          best = q;
          best_a = static_cast<int>(a);
        }
      }
      next[s] = best;
      grid.greedy[s] = best_a;
      residual = std::max(residual, std::abs(best - v[s]));
    }
    std::swap(v, next);
    if (!std::isfinite(residual)) throw NonConvergence("value_iteration: non-finite values");
    grid.residuals.push_back(residual);
    if (residual < tol) break;
  }
  grid.values = std::move(v);
  return grid;
}

std::vector<double> q_values(const BeliefMdp& mdp, const BeliefGrid& grid, std::array<double, 2> point) {
  std::vector<double> q(static_cast<std::size_t>(mdp.num_actions()), 0.0);
  std::vector<Successor> succ;
  for (int a = 0; a < mdp.num_actions(); ++a) {
    mdp.successors(point, a, succ);
    double total = 0.0;
    for (const auto& x : succ) {
      total += x.probability * (x.reward + (x.terminal ? 0.0 : grid.gamma * grid.interpolate(x.point)));
    }
    q[static_cast<std::size_t>(a)] = total;
  }
  return q;
}

int oracle_bandit_policy(const belief::OraclePosterior& posterior) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < posterior.p.size(); ++i) {
    if (posterior.p[i] > posterior.p[best]) best = i;
  }
  return posterior.p[best] >= 0.5 ? static_cast<int>(best) : envs::kOracleArm;
}

// ---------------------------------------------------------------- solutions

PlannerSolution::PlannerSolution(envs::FamilyConfig config, Body body, SolveOptions options)
    : config_(std::move(config)), body_(std::move(body)), options_(std::move(options)) {
  const auto kind = config_.family.kind;
  const bool ok = std::visit(
      [kind](const auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, GittinsTable> || std::is_same_v<T, DpPolicy>) {
          return kind == FamilyKind::BernoulliBandit;
        } else if constexpr (std::is_same_v<T, OracleClosedForm>) {
          return kind == FamilyKind::OracleBandit;
        } else {
          return kind != FamilyKind::BernoulliBandit && kind != FamilyKind::OracleBandit;
        }
      },
      body_);
  if (!ok) throw std::invalid_argument("PlannerSolution: solution type does not fit family " + config_.family.id());
  if (std::holds_alternative<BeliefGrid>(body_)) mdp_ = make_belief_mdp(config_, options_.mdp);
}

PlannerSolution solve(const envs::FamilyConfig& config, const SolveOptions& options) {
  switch (config.family.kind) {
    case FamilyKind::BernoulliBandit:
      if (options.bandit_dp) return {config, compute_bandit_dp(config.episode_length, config.gamma), options};
      return {config, compute_gittins(config.gamma, config.episode_length, options.gittins), options};
    case FamilyKind::OracleBandit: return {config, OracleClosedForm{}, options};
    case FamilyKind::StationaryTiger:
    case FamilyKind::DynamicTiger: {
      const auto mdp = make_belief_mdp(config, options.mdp);
      return {config, value_iteration(*mdp, {options.resolution_1d, 1}, config.gamma, options.tolerance), options};
    }
    case FamilyKind::DynamicBandit: {
      const auto mdp = make_belief_mdp(config, options.mdp);
      return {config,
              value_iteration(*mdp, {options.resolution_2d, options.resolution_2d}, config.gamma, options.tolerance),
              options};
    }
    case FamilyKind::LatentGoalCart: {
      const auto mdp = make_belief_mdp(config, options.mdp);
      return {config,
              value_iteration(*mdp, {options.resolution_2d, options.cart_position_resolution}, config.gamma,
                              options.tolerance),
              options};
    }
  }
  throw std::logic_error("solve: unknown family");
}

namespace {

std::array<double, 2> grid_point(const envs::FamilyConfig& c, const belief::BeliefState& b,
                                 const std::vector<double>& observation) {
  switch (c.family.kind) {
    case FamilyKind::DynamicBandit: {
      const auto& p = std::get<belief::ArmPosteriors>(b);
      return {p.first[0], p.first[1]};
    }
    case FamilyKind::StationaryTiger:
    case FamilyKind::DynamicTiger: return {std::get<belief::TigerBelief>(b).left, 0.0};
    case FamilyKind::LatentGoalCart:
      if (observation.size() != 1) throw std::invalid_argument("bayes_act: cart needs the observed position");
      return {std::get<belief::CartGoalBelief>(b).plus, observation[0]};
    default: throw std::invalid_argument("bayes_act: family has no grid solution");
  }
}

int lowest_argmax(const std::vector<double>& q) {
  const double top = *std::max_element(q.begin(), q.end());
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] >= top - kGridTieTolerance) return static_cast<int>(i);
  }
  return 0;
}

}  // namespace

envs::Action bayes_act(const PlannerSolution& solution, const belief::BeliefState& belief,
                       const std::vector<double>& observation) {
  const auto& c = solution.config();
  return std::visit(
      [&](const auto& body) -> envs::Action {
        using T = std::decay_t<decltype(body)>;
        if constexpr (std::is_same_v<T, GittinsTable>) {
          const auto& n = std::get<belief::BanditCounts>(belief);
          const int remaining = c.episode_length - n.pulls[0] - n.pulls[1];
          const double g0 = body.index(n.pulls[0], n.successes[0], remaining);
          const double g1 = body.index(n.pulls[1], n.successes[1], remaining);
          return envs::Action{g1 > g0 + 1e-12 ? 1 : 0};
        } else if constexpr (std::is_same_v<T, DpPolicy>) {
          const auto& n = std::get<belief::BanditCounts>(belief);
          if (n.pulls[0] + n.pulls[1] >= body.horizon()) {
            return envs::Action{posterior_mean(n.pulls[1], n.successes[1]) >
                                        posterior_mean(n.pulls[0], n.successes[0]) + 1e-12
                                    ? 1
                                    : 0};
          }
          return envs::Action{body.action(n)};
        } else if constexpr (std::is_same_v<T, OracleClosedForm>) {
          return envs::Action{oracle_bandit_policy(std::get<belief::OraclePosterior>(belief))};
        } else {
          const auto q = q_values(*solution.mdp(), body, grid_point(c, belief, observation));
          return solution.mdp()->to_env_action(lowest_argmax(q));
        }
      },
      solution.body());
}

BayesPolicy::BayesPolicy(std::shared_ptr<const PlannerSolution> solution)
    : solution_(std::move(solution)), filter_(solution_->config()) {}

void BayesPolicy::begin_episode(const envs::FamilyConfig& config) {
  if (!(config.family == solution_->config().family)) {
    throw std::invalid_argument("BayesPolicy: solution for " + solution_->config().family.id() + " used on " +
                                config.family.id());
  }
  filter_.reset();
}

envs::Action BayesPolicy::act(const envs::StepRecord& latest, Rng&) {
  filter_.observe(latest);
  return bayes_act(*solution_, filter_.belief(), latest.observation);
}

// ---------------------------------------------------------------- cache

namespace {

constexpr int kSolutionVersion = 1;

json options_json(const envs::FamilyConfig& config, const SolveOptions& o) {
  json j = {{"tolerance", o.tolerance}};
  switch (config.family.kind) {
    case FamilyKind::BernoulliBandit:
      j["gittins"] = {{"finite_horizon", o.gittins.finite_horizon},
                      {"calibration_depth", o.gittins.calibration_depth},
                      {"bisection_steps", o.gittins.bisection_steps}};
      j["bandit_dp"] = o.bandit_dp;
      break;
    case FamilyKind::StationaryTiger:
    case FamilyKind::DynamicTiger:
      j["resolution"] = o.resolution_1d;
      j["tiger_terminal_on_open"] = o.mdp.tiger_terminal_on_open;
      break;
    case FamilyKind::DynamicBandit: j["resolution"] = o.resolution_2d; break;
    case FamilyKind::LatentGoalCart:
      j["resolution"] = {o.resolution_2d, o.cart_position_resolution};
      j["velocity_levels"] = o.mdp.cart_velocity_levels;
      j["quadrature_nodes"] = o.mdp.quadrature_nodes;
      break;
    case FamilyKind::OracleBandit: break;
  }
  return j;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

SolveOptions options_from_json(const json& j) {
  SolveOptions o;
  o.tolerance = j.value("tolerance", o.tolerance);
  if (j.contains("gittins")) {
    const auto& g = j.at("gittins");
    o.gittins.finite_horizon = g.value("finite_horizon", true);
    o.gittins.calibration_depth = g.value("calibration_depth", o.gittins.calibration_depth);
    o.gittins.bisection_steps = g.value("bisection_steps", o.gittins.bisection_steps);
  }
  o.bandit_dp = j.value("bandit_dp", false);
  o.mdp.tiger_terminal_on_open = j.value("tiger_terminal_on_open", false);
  o.mdp.cart_velocity_levels = j.value("velocity_levels", o.mdp.cart_velocity_levels);
  o.mdp.quadrature_nodes = j.value("quadrature_nodes", o.mdp.quadrature_nodes);
  if (j.contains("resolution")) {
    const auto& r = j.at("resolution");
    if (r.is_array()) {
      o.resolution_2d = r.at(0);
      o.cart_position_resolution = r.at(1);
    } else {
      o.resolution_1d = r;
      o.resolution_2d = r;
    }
  }
  return o;
}

}  // namespace

std::string solution_key(const envs::FamilyConfig& config, const SolveOptions& options) {
  return json{{"config", envs::to_json(config)}, {"options", options_json(config, options)}}.dump();
}

std::string serialize_solution(const PlannerSolution& s) {
  json j = {{"format", "belieflab-solution"},
            {"version", kSolutionVersion},
            {"key", solution_key(s.config(), s.options())},
            {"config", envs::to_json(s.config())},
            {"options", options_json(s.config(), s.options())}};
  std::visit(
      [&j](const auto& body) {
        using T = std::decay_t<decltype(body)>;
        if constexpr (std::is_same_v<T, GittinsTable>) {
          j["kind"] = "gittins";
          j["gittins"] = {{"gamma", body.gamma()},
                          {"horizon", body.horizon()},
                          {"finite_horizon", body.finite_horizon()},
                          {"values", body.values()}};
        } else if constexpr (std::is_same_v<T, DpPolicy>) {
          throw std::invalid_argument("exact DP tables are rebuilt on demand and not cached");
        } else if constexpr (std::is_same_v<T, OracleClosedForm>) {
          j["kind"] = "oracle";
        } else {
          j["kind"] = "grid";
          j["grid"] = {{"dims", body.dims},         {"resolution", body.resolution}, {"lower", body.lower},
                       {"upper", body.upper},       {"gamma", body.gamma},           {"tolerance", body.tolerance},
                       {"values", body.values},     {"greedy", body.greedy},         {"residuals", body.residuals}};
        }
      },
      s.body());
  return j.dump();
}

PlannerSolution deserialize_solution(const std::string& text) {
  const json j = json::parse(text);
  if (j.value("format", "") != "belieflab-solution") throw std::runtime_error("not a solution file");
  if (j.value("version", 0) != kSolutionVersion) throw std::runtime_error("unsupported solution file version");
  const auto config = envs::family_config_from_json(j.at("config"));
  const auto options = options_from_json(j.at("options"));
  const std::string kind = j.at("kind");
  if (kind == "gittins") {
    const auto& g = j.at("gittins");
    return {config, GittinsTable(g.at("gamma"), g.at("horizon"), g.at("finite_horizon"), g.at("values")), options};
  }
  if (kind == "oracle") return {config, OracleClosedForm{}, options};
  if (kind != "grid") throw std::runtime_error("unknown solution kind " + kind);
  const auto& g = j.at("grid");
  BeliefGrid grid;
  g.at("dims").get_to(grid.dims);
  g.at("resolution").get_to(grid.resolution);
  g.at("lower").get_to(grid.lower);
  g.at("upper").get_to(grid.upper);
  g.at("gamma").get_to(grid.gamma);
  g.at("tolerance").get_to(grid.tolerance);
  g.at("values").get_to(grid.values);
  g.at("greedy").get_to(grid.greedy);
  g.at("residuals").get_to(grid.residuals);
  if (grid.values.size() != static_cast<std::size_t>(grid.resolution[0]) * static_cast<std::size_t>(grid.resolution[1])) {
    throw std::runtime_error("solution grid size does not match its resolution");
  }
  return {config, std::move(grid), options};
}

std::filesystem::path solution_path(const envs::FamilyConfig& config, const SolveOptions& options,
                                    const std::filesystem::path& cache_dir) {
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(solution_key(config, options))));
  return cache_dir / (config.family.id() + "-" + hex + ".json");
}

PlannerSolution solve_cached(const envs::FamilyConfig& config, const SolveOptions& options,
                             const std::filesystem::path& cache_dir, bool* cache_hit) {
  if (cache_hit) *cache_hit = false;
  if (options.bandit_dp && config.family.kind == FamilyKind::BernoulliBandit) return solve(config, options);
  const auto path = solution_path(config, options, cache_dir);
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    std::stringstream buf;
    buf << in.rdbuf();
    auto loaded = deserialize_solution(buf.str());
    if (solution_key(loaded.config(), loaded.options()) == solution_key(config, options)) {
      if (cache_hit) *cache_hit = true;
      return loaded;
    }
  }
  auto solution = solve(config, options);
  std::filesystem::create_directories(cache_dir);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    out << serialize_solution(solution);
    if (!out) throw std::runtime_error("cannot write solution cache " + tmp);
  }
  std::filesystem::rename(tmp, path);
  return solution;
}

}  // namespace belieflab::planners
