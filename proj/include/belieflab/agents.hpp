#pragma once

#include "belieflab/envs.hpp"
#include "belieflab/numkit/parameters.hpp"
#include "belieflab/numkit/tape.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace belieflab::agents {

using numkit::ParamId;
using numkit::ParameterSet;
using numkit::Tape;
using numkit::Tensor;
using numkit::Var;

enum class ModelKind { Rl2, Predictive };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);

/// Layer sizes and input/output contracts of one agent.
struct Architecture {
  ModelKind kind = ModelKind::Rl2;
  int observation_dim = 0;
  int num_actions = 2;
  bool continuous = false;
  int hidden = 256;
  int bottleneck = 8;
  int policy_hidden = 32;
  int decoder_hidden = 32;
  /// Observation prediction head: 0 for none, else its width.
  int observation_head = 0;
  bool observation_categorical = false;
  /// Multiplier on the reward entry of the network input.
  double reward_input_scale = 1.0;

  static Architecture for_family(const envs::FamilyConfig& config, ModelKind kind, int hidden, int bottleneck);

  [[nodiscard]] int action_input_dim() const { return continuous ? 1 : num_actions; }
  [[nodiscard]] int input_dim() const { return observation_dim + action_input_dim() + 1; }
  /// Predictive latent size: half the bottleneck, rounded up.
  [[nodiscard]] int latent_dim() const { return (bottleneck + 1) / 2; }
  /// Width of the bottleneck layer output (mean and log-variance for the predictive model).
  [[nodiscard]] int bottleneck_width() const { return kind == ModelKind::Predictive ? 2 * latent_dim() : bottleneck; }
  [[nodiscard]] int policy_input_dim() const { return bottleneck_width(); }
  [[nodiscard]] int actor_dim() const { return continuous ? 1 : num_actions; }
};

/// Ids of the named parameters; optional entries exist only for some variants.
struct ParamIds {
  ParamId w_in = 0, w_rec = 0, b_rec = 0, w_bottleneck = 0, b_bottleneck = 0;
  ParamId w_policy = 0, b_policy = 0, w_actor = 0, b_actor = 0, w_critic = 0, b_critic = 0;
  std::optional<ParamId> log_std;
  std::optional<ParamId> w_reward_hidden, b_reward_hidden, w_reward_out, b_reward_out;
  std::optional<ParamId> w_obs_hidden, b_obs_hidden, w_obs_out, b_obs_out;
};

/// Learnable weights plus the architecture they were built for.
struct AgentParams {
  Architecture arch;
  ParameterSet set;
  ParamIds ids;

  [[nodiscard]] std::vector<ParamId> encoder_ids() const { return set.with_prefix("encoder."); }
  [[nodiscard]] std::vector<ParamId> decoder_ids() const { return set.with_prefix("decoder."); }
  [[nodiscard]] std::vector<ParamId> policy_ids() const { return set.with_prefix("policy."); }
};

AgentParams init_agent(const Architecture& arch, Rng& rng);
/// Every parameter zero (log-std included).
AgentParams zero_agent(const Architecture& arch);
/// Binds an existing parameter set to an architecture, checking names and shapes.
AgentParams bind_agent(const Architecture& arch, ParameterSet set);

/// Network input for one visible record: observation, previous action
/// (one-hot, or the scalar velocity), and reward. Zero action on the reset record.
void write_input(const Architecture& arch, const envs::StepRecord& record, Eigen::Ref<Tensor> row);
Tensor make_input(const Architecture& arch, const envs::StepRecord& record);
/// Decoder action input for an action actually taken.
void write_action(const Architecture& arch, const envs::Action& action, Eigen::Ref<Tensor> row);

/// Graph handles for one time step of a batch.
struct StepVars {
  Var hidden;
  Var bottleneck;  // RL2: linear bottleneck; predictive: mean || log-variance
  Var mean;        // predictive only
  Var log_var;     // predictive only
  Var actor;       // logits, or the Gaussian mean for the cart
  Var value;       // [batch x 1]
};

/// Policy and critic heads on a policy input.
struct PolicyVars {
  Var actor;
  Var value;
};

/// RL2: recurrent update, linear bottleneck, policy heads.
StepVars rl2_step(Tape& tape, const AgentParams& p, Var hidden_prev, Var input);

/// Predictive encoder: recurrent update and posterior (mean, log-variance).
/// Policy fields are left invalid.
StepVars encoder_step(Tape& tape, const AgentParams& p, Var hidden_prev, Var input);

/// mean + exp(log_var / 2) * noise; differentiable in mean and log_var.
Var reparam_sample(Tape& tape, Var mean, Var log_var, const Tensor& noise);

struct DecodeVars {
  Var reward_mean;  // [batch x 1]
  Var observation;  // logits or Gaussian mean; invalid when the family has no head
};
DecodeVars decode(Tape& tape, const AgentParams& p, Var latent, Var action_input);

/// Policy MLP (one tanh hidden layer) with actor and critic heads.
PolicyVars policy_step(Tape& tape, const AgentParams& p, Var policy_input);

/// Policy input of the predictive model: mean || variance.
Var posterior_features(Tape& tape, Var mean, Var log_var);

/// Full agent step for either model. `detach_belief` cuts the policy loss off
/// from the encoder (the predictive default).
StepVars agent_step(Tape& tape, const AgentParams& p, Var hidden_prev, Var input, bool detach_belief);

/// Output function from a given layer state (used when acting on mapped states).
PolicyVars policy_from_bottleneck(Tape& tape, const AgentParams& p, Var bottleneck);
PolicyVars policy_from_hidden(Tape& tape, const AgentParams& p, Var hidden);

/// Samples (or, when greedy, takes the mode of) the action distribution for one row.
envs::Action sample_action(const AgentParams& p, const Tensor& actor, Eigen::Index row, Rng& rng, bool greedy);

/// Log-probability of the taken action for each row, as a [batch x 1] graph node.
/// `taken` holds one-hot rows (discrete) or raw sampled values (continuous).
Var action_log_prob(Tape& tape, const AgentParams& p, Var actor, const Tensor& taken);
/// Per-row policy entropy [batch x 1].
Var policy_entropy(Tape& tape, const AgentParams& p, Var actor, Eigen::Index batch);

/// Per-episode recurrent agent acting through envs::Policy; keeps the latest
/// layer activations for state collection.
class AgentPolicy final : public envs::Policy {
 public:
  explicit AgentPolicy(std::shared_ptr<const AgentParams> params, bool greedy = false);
  void begin_episode(const envs::FamilyConfig& config) override;
  envs::Action act(const envs::StepRecord& latest, Rng& rng) override;

  [[nodiscard]] const Tensor& hidden() const { return hidden_; }
  [[nodiscard]] const Tensor& bottleneck() const { return bottleneck_; }
  [[nodiscard]] const Tensor& actor() const { return actor_; }
  [[nodiscard]] const AgentParams& params() const { return *params_; }

 private:
  std::shared_ptr<const AgentParams> params_;
  bool greedy_;
  Tensor hidden_;
  Tensor bottleneck_;
  Tensor actor_;
};

}  // namespace belieflab::agents
