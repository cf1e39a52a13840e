#pragma once

#include "belieflab/agents.hpp"
#include "belieflab/envs.hpp"

#include <json.hpp>

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace belieflab::training {

using agents::AgentParams;
using agents::StepVars;
using numkit::Tape;
using numkit::Tensor;
using numkit::Var;

/// rl2 | predictive | no_kl (predictive without KL) | joint_rl (policy loss
/// also trains the encoder).
enum class Variant { Rl2, Predictive, NoKl, JointRl };

std::string to_string(Variant v);
Variant parse_variant(const std::string& text);

struct TrainConfig {
  envs::FamilyConfig family;
  Variant variant = Variant::Predictive;
  int hidden = 256;
  int bottleneck = 8;
  double beta_e = 0.01;
  double beta_v = 0.01;
  long n_updates = 20000;
  int batch_size = 16;
  double kl_coeff = 0.01;
  double lr_vae = 7e-5;
  double lr_policy = 5e-5;
  double lr_rl2 = 5e-5;
  double max_grad_norm = 0.5;
  double reward_input_scale = 1.0;
  long eval_every = 1000;
  int eval_episodes = 200;
  long checkpoint_every = 0;
  std::uint64_t seed = 0;

  /// Per-family defaults: the low end of each published hyperparameter range
  /// and the reduced update budgets.
  static TrainConfig defaults(const envs::FamilyConfig& family, Variant variant);

  [[nodiscard]] agents::ModelKind model_kind() const {
    return variant == Variant::Rl2 ? agents::ModelKind::Rl2 : agents::ModelKind::Predictive;
  }
  [[nodiscard]] double effective_kl() const { return variant == Variant::NoKl ? 0.0 : kl_coeff; }
  [[nodiscard]] bool detach_belief() const { return variant != Variant::JointRl; }
  [[nodiscard]] agents::Architecture architecture() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Unknown keys are rejected; missing keys take the family/variant defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Teacher-forcing data for a batch of equal-length episodes, indexed by step t.
struct BatchData {
  int steps = 0;
  int batch = 0;
  std::vector<Tensor> inputs;         // network input from record t          [B x in]
  std::vector<Tensor> taken;          // one-hot action, or raw sampled value  [B x A] / [B x 1]
  std::vector<Tensor> action_inputs;  // decoder action input (validated)     [B x a_in]
  std::vector<Tensor> rewards;        // reward of the step-t action           [B x 1]
  std::vector<Tensor> next_obs;       // observation after the step-t action   [B x O]
  std::vector<Tensor> noise;          // reparameterization noise (predictive) [B x latent]
};

/// Discounted return to episode end for each step: R_t = sum_i gamma^i r_{t+i}.
std::vector<Tensor> returns_to_go(const BatchData& data, double gamma);

/// Replays the recorded inputs through the agent on `tape`.
std::vector<StepVars> unroll(Tape& tape, const AgentParams& p, const BatchData& data, bool detach_belief);

/// Named scalar values of loss components.
using LossLog = std::map<std::string, double>;

/// Mean over steps and episodes of -log pi(a) * detach(delta) + beta_v * delta^2 / 2 - beta_e * H.
Var a2c_loss(Tape& tape, const AgentParams& p, const BatchData& data, const std::vector<StepVars>& steps,
             double beta_v, double beta_e, double gamma, LossLog* log = nullptr);

/// Negative ELBO summed over steps and averaged over episodes: reward and
/// observation reconstruction plus kl_coeff * KL(q_t || detached q_{t-1}),
/// with q_{-1} = N(0, I). The KL entry is omitted from the log when kl_coeff is 0.
Var elbo_loss(Tape& tape, const AgentParams& p, const BatchData& data, const std::vector<StepVars>& steps,
              double kl_coeff, LossLog* log = nullptr);

/// Rolls out one batch of fresh tasks in lockstep, building the graph on `tape`.
/// `episode_seeds` fixes every random draw of each episode.
BatchData collect_batch(Tape& tape, const AgentParams& p, const envs::FamilyConfig& family,
                        const std::vector<std::uint64_t>& episode_seeds, bool detach_belief,
                        std::vector<StepVars>& steps, std::vector<double>* episode_returns = nullptr);

struct EvalStats {
  double mean = 0.0;
  double sd = 0.0;
  std::vector<double> returns;
};

EvalStats summarize(std::vector<double> returns);

/// Discounted returns on fresh tasks; episode e draws from derive_rng(seed, {e}).
EvalStats evaluate(const AgentParams& p, const envs::FamilyConfig& family, int n_episodes, std::uint64_t seed,
                   bool greedy = false);
/// Same protocol for any policy (e.g. the Bayes reference).
EvalStats evaluate_policy(envs::Policy& policy, const envs::FamilyConfig& family, int n_episodes, std::uint64_t seed);

struct CurvePoint {
  long update = 0;
  double eval_mean = 0.0;
  double eval_sd = 0.0;
  LossLog losses;  // averaged over the updates since the previous point
};

nlohmann::json to_json(const CurvePoint& p);

struct TrainCallbacks {
  std::function<void(const CurvePoint&)> on_curve;
  std::function<void(long update, const AgentParams&)> on_checkpoint;
};

struct TrainResult {
  AgentParams params;
  std::vector<CurvePoint> curve;
};

/// Meta-training from a fresh initialization (or from `initial`, for transfer).
/// Throws numkit::NumericalError if any loss or gradient becomes non-finite.
TrainResult meta_train(const TrainConfig& config, const TrainCallbacks& callbacks = {},
                       const AgentParams* initial = nullptr);

}  // namespace belieflab::training
