#include "belieflab/agents.hpp"

#include <cmath>
#include <numbers>

namespace belieflab::agents {

using envs::FamilyKind;
using numkit::uniform_init;

std::string to_string(ModelKind kind) { return kind == ModelKind::Rl2 ? "rl2" : "predictive"; }

ModelKind parse_model_kind(const std::string& text) {
  if (text == "rl2") return ModelKind::Rl2;
  if (text == "predictive") return ModelKind::Predictive;
  throw std::invalid_argument("unknown model kind: " + text);
}

Architecture Architecture::for_family(const envs::FamilyConfig& config, ModelKind kind, int hidden, int bottleneck) {
  if (hidden < 1 || bottleneck < 1) throw std::invalid_argument("layer sizes must be positive");
  Architecture a;
  a.kind = kind;
  a.observation_dim = config.observation_dim();
  a.num_actions = config.num_actions();
  a.continuous = config.continuous_actions();
  a.hidden = hidden;
  a.bottleneck = bottleneck;
  if (config.family.is_tiger()) {
    a.observation_head = 3;
    a.observation_categorical = true;
  } else if (config.family.kind == FamilyKind::LatentGoalCart) {
    a.observation_head = 1;
  }
  return a;
}

namespace {

Tensor zeros(Eigen::Index r, Eigen::Index c) { return Tensor::Zero(r, c); }

void add_mlp(ParameterSet& s, const std::string& prefix, int in, int hidden, int out, Rng& rng, bool zero,
             std::optional<ParamId>& w1, std::optional<ParamId>& b1, std::optional<ParamId>& w2,
             std::optional<ParamId>& b2) {
  w1 = s.add(prefix + ".W_hidden", zero ? zeros(in, hidden) : uniform_init(in, hidden, in, rng));
  b1 = s.add(prefix + ".b_hidden", zeros(1, hidden));
  w2 = s.add(prefix + ".W_out", zero ? zeros(hidden, out) : uniform_init(hidden, out, hidden, rng));
  b2 = s.add(prefix + ".b_out", zeros(1, out));
}

AgentParams build(const Architecture& a, Rng* rng) {
  Rng dummy(0);
  Rng& r = rng ? *rng : dummy;
  const bool zero = rng == nullptr;
  auto w = [&](int in, int out) { return zero ? zeros(in, out) : uniform_init(in, out, in, r); };
  AgentParams p;
  p.arch = a;
  auto& s = p.set;
  auto& ids = p.ids;
  ids.w_in = s.add("encoder.W_in", w(a.input_dim(), a.hidden));
  ids.w_rec = s.add("encoder.W_rec", zero ? zeros(a.hidden, a.hidden) : uniform_init(a.hidden, a.hidden, a.hidden, r));
  ids.b_rec = s.add("encoder.b", zeros(1, a.hidden));
  ids.w_bottleneck = s.add("encoder.W_bottleneck", w(a.hidden, a.bottleneck_width()));
  ids.b_bottleneck = s.add("encoder.b_bottleneck", zeros(1, a.bottleneck_width()));
  ids.w_policy = s.add("policy.W_hidden", w(a.policy_input_dim(), a.policy_hidden));
  ids.b_policy = s.add("policy.b_hidden", zeros(1, a.policy_hidden));
  ids.w_actor = s.add("policy.W_actor", w(a.policy_hidden, a.actor_dim()));
  ids.b_actor = s.add("policy.b_actor", zeros(1, a.actor_dim()));
  ids.w_critic = s.add("policy.W_critic", w(a.policy_hidden, 1));
  ids.b_critic = s.add("policy.b_critic", zeros(1, 1));
  if (a.continuous) ids.log_std = s.add("policy.log_std", zero ? zeros(1, 1) : numkit::scalar(std::log(0.5)));
  if (a.kind == ModelKind::Predictive) {
    const int in = a.latent_dim() + a.action_input_dim();
    add_mlp(s, "decoder.reward", in, a.decoder_hidden, 1, r, zero, ids.w_reward_hidden, ids.b_reward_hidden,
            ids.w_reward_out, ids.b_reward_out);
    if (a.observation_head > 0) {
      add_mlp(s, "decoder.obs", in, a.decoder_hidden, a.observation_head, r, zero, ids.w_obs_hidden, ids.b_obs_hidden,
              ids.w_obs_out, ids.b_obs_out);
    }
  }
  return p;
}

}  // namespace

AgentParams init_agent(const Architecture& arch, Rng& rng) { return build(arch, &rng); }

AgentParams zero_agent(const Architecture& arch) { return build(arch, nullptr); }

AgentParams bind_agent(const Architecture& arch, ParameterSet set) {
  AgentParams p = zero_agent(arch);
  if (set.size() != p.set.size()) throw std::invalid_argument("bind_agent: parameter count does not match architecture");
  for (ParamId i = 0; i < p.set.size(); ++i) {
    const auto found = set.find(p.set.name(i));
    if (!found) throw std::invalid_argument("bind_agent: missing parameter " + p.set.name(i));
    const Tensor& v = set.value(*found);
    if (v.rows() != p.set.value(i).rows() || v.cols() != p.set.value(i).cols()) {
      throw std::invalid_argument("bind_agent: shape mismatch for " + p.set.name(i));
    }
    p.set.value(i) = v;
  }
  return p;
}

void write_input(const Architecture& a, const envs::StepRecord& r, Eigen::Ref<Tensor> row) {
  if (row.cols() != a.input_dim()) throw numkit::ShapeError("write_input: row width does not match architecture");
  if (static_cast<int>(r.observation.size()) != a.observation_dim) {
    throw numkit::ShapeError("write_input: observation size does not match architecture");
  }
  row.setZero();
  for (int i = 0; i < a.observation_dim; ++i) row(0, i) = r.observation[static_cast<std::size_t>(i)];
  if (r.has_prev_action) write_action(a, r.prev_action, row.middleCols(a.observation_dim, a.action_input_dim()));
  row(0, a.input_dim() - 1) = r.reward * a.reward_input_scale;
}

Tensor make_input(const Architecture& a, const envs::StepRecord& r) {
  Tensor t(1, a.input_dim());
  write_input(a, r, t);
  return t;
}

void write_action(const Architecture& a, const envs::Action& action, Eigen::Ref<Tensor> row) {
  row.setZero();
  if (a.continuous) {
    row(0, 0) = action.value;
    return;
  }
  if (action.index < 0 || action.index >= a.num_actions) throw std::invalid_argument("write_action: index out of range");
  row(0, action.index) = 1.0;
}

namespace {

Var recurrent(Tape& tape, const AgentParams& p, Var hidden_prev, Var input) {
  const auto& id = p.ids;
  Var pre = tape.add(tape.matmul(input, tape.param(p.set, id.w_in)), tape.matmul(hidden_prev, tape.param(p.set, id.w_rec)));
  return tape.tanh(tape.add_row(pre, tape.param(p.set, id.b_rec)));
}

}  // namespace

StepVars rl2_step(Tape& tape, const AgentParams& p, Var hidden_prev, Var input) {
  if (p.arch.kind != ModelKind::Rl2) throw std::invalid_argument("rl2_step: not an RL2 agent");
  StepVars s;
  s.hidden = recurrent(tape, p, hidden_prev, input);
  s.bottleneck = tape.linear(s.hidden, p.set, p.ids.w_bottleneck, p.ids.b_bottleneck);
  const auto head = policy_step(tape, p, s.bottleneck);
  s.actor = head.actor;
  s.value = head.value;
  return s;
}

StepVars encoder_step(Tape& tape, const AgentParams& p, Var hidden_prev, Var input) {
  if (p.arch.kind != ModelKind::Predictive) throw std::invalid_argument("encoder_step: not a predictive agent");
  StepVars s;
  s.hidden = recurrent(tape, p, hidden_prev, input);
  s.bottleneck = tape.linear(s.hidden, p.set, p.ids.w_bottleneck, p.ids.b_bottleneck);
  const auto latent = p.arch.latent_dim();
  s.mean = tape.slice_cols(s.bottleneck, 0, latent);
  s.log_var = tape.slice_cols(s.bottleneck, latent, latent);
  return s;
}

Var reparam_sample(Tape& tape, Var mean, Var log_var, const Tensor& noise) {
  return tape.add(mean, tape.mul(tape.exp(tape.scale(log_var, 0.5)), tape.constant(noise)));
}

namespace {

Var mlp(Tape& tape, const ParameterSet& s, Var x, ParamId w1, ParamId b1, ParamId w2, ParamId b2) {
  return tape.linear(tape.relu(tape.linear(x, s, w1, b1)), s, w2, b2);
}

}  // namespace

DecodeVars decode(Tape& tape, const AgentParams& p, Var latent, Var action_input) {
  if (p.arch.kind != ModelKind::Predictive) throw std::invalid_argument("decode: not a predictive agent");
  const auto& id = p.ids;
  Var x = tape.concat_cols({latent, action_input});
  DecodeVars d;
  d.reward_mean = mlp(tape, p.set, x, *id.w_reward_hidden, *id.b_reward_hidden, *id.w_reward_out, *id.b_reward_out);
  if (id.w_obs_hidden) d.observation = mlp(tape, p.set, x, *id.w_obs_hidden, *id.b_obs_hidden, *id.w_obs_out, *id.b_obs_out);
  return d;
}

PolicyVars policy_step(Tape& tape, const AgentParams& p, Var policy_input) {
  const auto& id = p.ids;
  Var h = tape.tanh(tape.linear(policy_input, p.set, id.w_policy, id.b_policy));
  return {tape.linear(h, p.set, id.w_actor, id.b_actor), tape.linear(h, p.set, id.w_critic, id.b_critic)};
}

Var posterior_features(Tape& tape, Var mean, Var log_var) { return tape.concat_cols({mean, tape.exp(log_var)}); }

StepVars agent_step(Tape& tape, const AgentParams& p, Var hidden_prev, Var input, bool detach_belief) {
  if (p.arch.kind == ModelKind::Rl2) return rl2_step(tape, p, hidden_prev, input);
  StepVars s = encoder_step(tape, p, hidden_prev, input);
  Var features = posterior_features(tape, s.mean, s.log_var);
  if (detach_belief) features = tape.detach(features);
  const auto head = policy_step(tape, p, features);
  s.actor = head.actor;
  s.value = head.value;
  return s;
}

PolicyVars policy_from_bottleneck(Tape& tape, const AgentParams& p, Var bottleneck) {
  if (p.arch.kind == ModelKind::Rl2) return policy_step(tape, p, bottleneck);
  const auto latent = p.arch.latent_dim();
  return policy_step(tape, p,
                     posterior_features(tape, tape.slice_cols(bottleneck, 0, latent),
                                        tape.slice_cols(bottleneck, latent, latent)));
}

PolicyVars policy_from_hidden(Tape& tape, const AgentParams& p, Var hidden) {
  return policy_from_bottleneck(tape, p, tape.linear(hidden, p.set, p.ids.w_bottleneck, p.ids.b_bottleneck));
}

envs::Action sample_action(const AgentParams& p, const Tensor& actor, Eigen::Index row, Rng& rng, bool greedy) {
  if (p.arch.continuous) {
    const double mean = actor(row, 0);
    if (greedy) return envs::Action{-1, mean};
    const double std = std::exp(p.set.value(*p.ids.log_std)(0, 0));
    return envs::Action{-1, mean + std * std::normal_distribution<double>(0.0, 1.0)(rng)};
  }
  const auto logits = actor.row(row);
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i) {
    if (logits(i) > logits(best)) best = i;
  }
  if (greedy) return envs::Action{static_cast<int>(best)};
  const Eigen::RowVectorXd w = (logits.array() - logits(best)).exp();
  double u = std::uniform_real_distribution<double>(0.0, w.sum())(rng);
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    u -= w(i);
    if (u < 0.0) return envs::Action{static_cast<int>(i)};
  }
  return envs::Action{static_cast<int>(w.size() - 1)};
}

namespace {

Var broadcast_column(Tape& tape, Var scalar_var, Eigen::Index batch) {
  return tape.matmul(tape.constant(Tensor::Ones(batch, 1)), scalar_var);
}

}  // namespace

Var action_log_prob(Tape& tape, const AgentParams& p, Var actor, const Tensor& taken) {
  if (p.arch.continuous) {
    Var log_var = broadcast_column(tape, tape.scale(tape.param(p.set, *p.ids.log_std), 2.0), taken.rows());
    return tape.gaussian_log_density(tape.constant(taken), actor, log_var);
  }
  return tape.row_sum(tape.mul(tape.log_softmax(actor), tape.constant(taken)));
}

Var policy_entropy(Tape& tape, const AgentParams& p, Var actor, Eigen::Index batch) {
  if (p.arch.continuous) {
    const double c = 0.5 * (1.0 + std::log(2.0 * std::numbers::pi));
    return broadcast_column(tape, tape.add_scalar(tape.param(p.set, *p.ids.log_std), c), batch);
  }
  return tape.scale(tape.row_sum(tape.mul(tape.softmax(actor), tape.log_softmax(actor))), -1.0);
}

AgentPolicy::AgentPolicy(std::shared_ptr<const AgentParams> params, bool greedy)
    : params_(std::move(params)), greedy_(greedy) {}

void AgentPolicy::begin_episode(const envs::FamilyConfig& config) {
  const auto& a = params_->arch;
  if (config.observation_dim() != a.observation_dim || config.num_actions() != a.num_actions ||
      config.continuous_actions() != a.continuous) {
    throw std::invalid_argument("AgentPolicy: agent does not fit family " + config.family.id());
  }
  hidden_ = Tensor::Zero(1, a.hidden);
}

envs::Action AgentPolicy::act(const envs::StepRecord& latest, Rng& rng) {
  Tape tape;
  const auto s = agent_step(tape, *params_, tape.constant(hidden_), tape.constant(make_input(params_->arch, latest)), false);
  hidden_ = tape.value(s.hidden);
  bottleneck_ = tape.value(s.bottleneck);
  actor_ = tape.value(s.actor);
  return sample_action(*params_, actor_, 0, rng, greedy_);
}

}  // namespace belieflab::agents
