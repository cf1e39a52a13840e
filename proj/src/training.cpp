#include "belieflab/training.hpp"

#include "belieflab/family_json.hpp"
#include "belieflab/numkit/adam.hpp"

#include <cmath>
#include <numbers>

namespace belieflab::training {

using envs::FamilyKind;
using nlohmann::json;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Rl2: return "rl2";
    case Variant::Predictive: return "predictive";
    case Variant::NoKl: return "no_kl";
    case Variant::JointRl: return "joint_rl";
  }
  return "?";
}

Variant parse_variant(const std::string& text) {
  if (text == "rl2") return Variant::Rl2;
  if (text == "predictive") return Variant::Predictive;
  if (text == "no_kl") return Variant::NoKl;
  if (text == "joint_rl") return Variant::JointRl;
  throw std::invalid_argument("unknown variant: " + text);
}

TrainConfig TrainConfig::defaults(const envs::FamilyConfig& family, Variant variant) {
  TrainConfig c;
  c.family = family;
  c.variant = variant;
  switch (family.family.kind) {
    case FamilyKind::BernoulliBandit:
      c.beta_e = 0.01;
      c.beta_v = 0.01;
      c.bottleneck = 8;
      c.n_updates = 20000;
      break;
    case FamilyKind::DynamicBandit:
      c.beta_e = 0.01;
      c.beta_v = 0.05;
      c.bottleneck = 8;
      c.n_updates = 20000;
      break;
    case FamilyKind::StationaryTiger:
    case FamilyKind::DynamicTiger:
      c.beta_e = 0.3;
      c.beta_v = 0.1;
      c.bottleneck = 4;
      c.n_updates = 20000;
      break;
    case FamilyKind::OracleBandit:
      c.beta_e = 0.3;
      c.beta_v = 0.01;
      c.bottleneck = 16;
      c.n_updates = 200000;
      break;
    case FamilyKind::LatentGoalCart:
      c.beta_e = 0.005;
      c.beta_v = 0.01;
      c.bottleneck = 8;
      c.n_updates = 20000;
      break;
  }
  return c;
}

agents::Architecture TrainConfig::architecture() const {
  auto a = agents::Architecture::for_family(family, model_kind(), hidden, bottleneck);
  a.reward_input_scale = reward_input_scale;
  return a;
}

json to_json(const TrainConfig& c) {
  return {{"family", envs::to_json(c.family)},
          {"variant", to_string(c.variant)},
          {"hidden", c.hidden},
          {"bottleneck", c.bottleneck},
          {"beta_e", c.beta_e},
          {"beta_v", c.beta_v},
          {"n_updates", c.n_updates},
          {"batch_size", c.batch_size},
          {"kl_coeff", c.kl_coeff},
          {"lr_vae", c.lr_vae},
          {"lr_policy", c.lr_policy},
          {"lr_rl2", c.lr_rl2},
          {"max_grad_norm", c.max_grad_norm},
          {"reward_input_scale", c.reward_input_scale},
          {"eval_every", c.eval_every},
          {"eval_episodes", c.eval_episodes},
          {"checkpoint_every", c.checkpoint_every},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  static const std::vector<std::string> known{
      "family",   "variant", "hidden",    "bottleneck",    "beta_e",       "beta_v",
      "n_updates", "batch_size", "kl_coeff", "lr_vae",     "lr_policy",    "lr_rl2",
      "max_grad_norm", "reward_input_scale", "eval_every", "eval_episodes", "checkpoint_every", "seed"};
  if (!j.is_object()) throw std::invalid_argument("train config must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::invalid_argument("unknown train config key: " + key);
    }
  }
  const auto& fam = j.at("family");
  const auto family = fam.is_string() ? envs::FamilyConfig::defaults(envs::TaskFamily::parse(fam.get<std::string>()))
                                      : envs::family_config_from_json(fam);
  TrainConfig c = TrainConfig::defaults(family, parse_variant(j.value("variant", std::string("predictive"))));
  auto read = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  read("hidden", c.hidden);
  read("bottleneck", c.bottleneck);
  read("beta_e", c.beta_e);
  read("beta_v", c.beta_v);
  read("n_updates", c.n_updates);
  read("batch_size", c.batch_size);
  read("kl_coeff", c.kl_coeff);
  read("lr_vae", c.lr_vae);
  read("lr_policy", c.lr_policy);
  read("lr_rl2", c.lr_rl2);
  read("max_grad_norm", c.max_grad_norm);
  read("reward_input_scale", c.reward_input_scale);
  read("eval_every", c.eval_every);
  read("eval_episodes", c.eval_episodes);
  read("checkpoint_every", c.checkpoint_every);
  read("seed", c.seed);
  if (c.hidden < 1 || c.bottleneck < 1) throw std::invalid_argument("layer sizes must be positive");
  if (c.n_updates < 0 || c.batch_size < 1) throw std::invalid_argument("n_updates and batch_size must be positive");
  if (c.eval_episodes < 1) throw std::invalid_argument("eval_episodes must be positive");
  for (double lr : {c.lr_vae, c.lr_policy, c.lr_rl2}) {
    if (!(lr > 0.0)) throw std::invalid_argument("learning rates must be positive");
  }
  return c;
}

std::vector<Tensor> returns_to_go(const BatchData& data, double gamma) {
  std::vector<Tensor> out(static_cast<std::size_t>(data.steps));
  Tensor acc = Tensor::Zero(data.batch, 1);
  for (int t = data.steps - 1; t >= 0; --t) {
    acc = data.rewards[static_cast<std::size_t>(t)] + gamma * acc;
    out[static_cast<std::size_t>(t)] = acc;
  }
  return out;
}

std::vector<StepVars> unroll(Tape& tape, const AgentParams& p, const BatchData& data, bool detach_belief) {
  std::vector<StepVars> steps;
  steps.reserve(static_cast<std::size_t>(data.steps));
  Var h = tape.constant(Tensor::Zero(data.batch, p.arch.hidden));
  for (int t = 0; t < data.steps; ++t) {
    steps.push_back(agents::agent_step(tape, p, h, tape.constant(data.inputs[static_cast<std::size_t>(t)]), detach_belief));
    h = steps.back().hidden;
  }
  return steps;
}

Var a2c_loss(Tape& tape, const AgentParams& p, const BatchData& data, const std::vector<StepVars>& steps,
             double beta_v, double beta_e, double gamma, LossLog* log) {
  if (static_cast<int>(steps.size()) != data.steps) throw std::invalid_argument("a2c_loss: step count mismatch");
  const auto returns = returns_to_go(data, gamma);
  std::vector<Var> pg, value, entropy;
  for (int t = 0; t < data.steps; ++t) {
    const auto ut = static_cast<std::size_t>(t);
    const auto& s = steps[ut];
    Var delta = tape.sub(tape.constant(returns[ut]), s.value);
    pg.push_back(tape.sum(tape.mul(agents::action_log_prob(tape, p, s.actor, data.taken[ut]), tape.detach(delta))));
    value.push_back(tape.sum(tape.square(delta)));
    entropy.push_back(tape.sum(agents::policy_entropy(tape, p, s.actor, data.batch)));
  }
  const double n = static_cast<double>(data.steps) * data.batch;
  Var pg_sum = tape.scale(tape.sum(tape.concat_cols(pg)), 1.0 / n);
  Var value_sum = tape.scale(tape.sum(tape.concat_cols(value)), 0.5 / n);
  Var entropy_sum = tape.scale(tape.sum(tape.concat_cols(entropy)), 1.0 / n);
  if (log) {
    (*log)["a2c_policy"] = -tape.scalar_value(pg_sum);
    (*log)["a2c_value"] = tape.scalar_value(value_sum);
    (*log)["entropy"] = tape.scalar_value(entropy_sum);
  }
  Var loss = tape.scale(pg_sum, -1.0);
  loss = tape.add(loss, tape.scale(value_sum, beta_v));
  return tape.sub(loss, tape.scale(entropy_sum, beta_e));
}

namespace {

// KL(N(mq, exp(lq)) || N(mp, exp(lp))) per row, with the prior held constant.
Var diagonal_kl(Tape& tape, Var mq, Var lq, const Tensor& mp, const Tensor& lp) {
  const Tensor inv_var = (-lp.array()).exp().matrix();
  Var ratio = tape.mul(tape.exp(lq), tape.constant(inv_var));
  Var mahal = tape.mul(tape.square(tape.sub(mq, tape.constant(mp))), tape.constant(inv_var));
  Var terms = tape.add(tape.add(ratio, mahal), tape.sub(tape.constant(lp), lq));
  return tape.scale(tape.row_sum(tape.add_scalar(terms, -1.0)), 0.5);
}

}  // namespace

Var elbo_loss(Tape& tape, const AgentParams& p, const BatchData& data, const std::vector<StepVars>& steps,
              double kl_coeff, LossLog* log) {
  if (p.arch.kind != agents::ModelKind::Predictive) throw std::invalid_argument("elbo_loss: not a predictive agent");
  if (static_cast<int>(steps.size()) != data.steps) throw std::invalid_argument("elbo_loss: step count mismatch");
  const auto latent = p.arch.latent_dim();
  Tensor prior_mean = Tensor::Zero(data.batch, latent);
  Tensor prior_log_var = Tensor::Zero(data.batch, latent);
  const Var zero_log_var = tape.constant(Tensor::Zero(data.batch, 1));
  std::vector<Var> rec_r, rec_o, kl;
  for (int t = 0; t < data.steps; ++t) {
    const auto ut = static_cast<std::size_t>(t);
    const auto& s = steps[ut];
    Var z = agents::reparam_sample(tape, s.mean, s.log_var, data.noise[ut]);
    const auto d = agents::decode(tape, p, z, tape.constant(data.action_inputs[ut]));
    rec_r.push_back(tape.sum(tape.gaussian_log_density(tape.constant(data.rewards[ut]), d.reward_mean, zero_log_var)));
    if (d.observation.valid()) {
      if (p.arch.observation_categorical) {
        rec_o.push_back(tape.sum(tape.mul(tape.log_softmax(d.observation), tape.constant(data.next_obs[ut]))));
      } else {
        rec_o.push_back(tape.sum(tape.gaussian_log_density(tape.constant(data.next_obs[ut]), d.observation,
                                                           tape.constant(Tensor::Zero(data.batch, p.arch.observation_head)))));
      }
    }
    if (kl_coeff != 0.0) kl.push_back(tape.sum(diagonal_kl(tape, s.mean, s.log_var, prior_mean, prior_log_var)));
    prior_mean = tape.value(s.mean);
    prior_log_var = tape.value(s.log_var);
  }
  const double inv_b = 1.0 / data.batch;
  Var reward_term = tape.scale(tape.sum(tape.concat_cols(rec_r)), -inv_b);
  Var loss = reward_term;
  if (log) (*log)["elbo_reward"] = tape.scalar_value(reward_term);
  if (!rec_o.empty()) {
    Var obs_term = tape.scale(tape.sum(tape.concat_cols(rec_o)), -inv_b);
    if (log) (*log)["elbo_obs"] = tape.scalar_value(obs_term);
    loss = tape.add(loss, obs_term);
  }
  if (!kl.empty()) {
    Var kl_term = tape.scale(tape.sum(tape.concat_cols(kl)), inv_b);
    if (log) (*log)["kl"] = tape.scalar_value(kl_term);
    loss = tape.add(loss, tape.scale(kl_term, kl_coeff));
  }
  return loss;
}

namespace {

struct Episode {
  Rng rng;
  Rng noise_rng;
  envs::TaskSpec task;
  envs::HiddenState hidden;
  envs::StepRecord record;
  double discounted = 0.0;
  double discount = 1.0;
};

Episode start_episode(const envs::FamilyConfig& family, std::uint64_t seed) {
  Episode e{derive_rng(seed, {}), derive_rng(seed, {1}), {}, {}, {}, 0.0, 1.0};
  e.task = envs::sample_task(family, e.rng);
  auto [hidden, obs] = envs::reset(e.task, e.rng);
  e.hidden = hidden;
  e.record.observation = std::move(obs);
  return e;
}

// Advances one episode with a chosen (unvalidated) action; returns the validated action.
envs::Action advance(Episode& e, const envs::Action& raw) {
  const auto action = envs::validate_action(e.task.config, raw);
  auto res = envs::step(e.task, e.hidden, action, e.rng);
  e.hidden = res.hidden;
  e.discounted += e.discount * res.reward;
  e.discount *= e.task.config.gamma;
  envs::StepRecord next;
  next.t = e.record.t + 1;
  next.observation = std::move(res.observation);
  next.prev_action = action;
  next.has_prev_action = true;
  next.reward = res.reward;
  next.done = res.done;
  e.record = std::move(next);
  return action;
}

}  // namespace

BatchData collect_batch(Tape& tape, const AgentParams& p, const envs::FamilyConfig& family,
                        const std::vector<std::uint64_t>& episode_seeds, bool detach_belief,
                        std::vector<StepVars>& steps, std::vector<double>* episode_returns) {
  const auto& a = p.arch;
  BatchData data;
  data.steps = family.episode_length;
  data.batch = static_cast<int>(episode_seeds.size());
  std::vector<Episode> eps;
  eps.reserve(episode_seeds.size());
  for (auto s : episode_seeds) eps.push_back(start_episode(family, s));
  steps.clear();
  Var h = tape.constant(Tensor::Zero(data.batch, a.hidden));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t = 0; t < data.steps; ++t) {
    Tensor x(data.batch, a.input_dim());
    for (int b = 0; b < data.batch; ++b) agents::write_input(a, eps[static_cast<std::size_t>(b)].record, x.row(b));
    steps.push_back(agents::agent_step(tape, p, h, tape.constant(x), detach_belief));
    h = steps.back().hidden;
    const Tensor& actor = tape.value(steps.back().actor);
    Tensor taken = Tensor::Zero(data.batch, a.actor_dim());
    Tensor action_in(data.batch, a.action_input_dim());
    Tensor rewards(data.batch, 1);
    Tensor next_obs(data.batch, a.observation_dim);
    Tensor noise(data.batch, a.kind == agents::ModelKind::Predictive ? a.latent_dim() : 0);
    for (int b = 0; b < data.batch; ++b) {
      auto& e = eps[static_cast<std::size_t>(b)];
      const auto raw = agents::sample_action(p, actor, b, e.rng, false);
      if (a.continuous) {
        taken(b, 0) = raw.value;
      } else {
        taken(b, raw.index) = 1.0;
      }
      const auto applied = advance(e, raw);
      agents::write_action(a, applied, action_in.row(b));
      rewards(b, 0) = e.record.reward;
      for (int i = 0; i < a.observation_dim; ++i) next_obs(b, i) = e.record.observation[static_cast<std::size_t>(i)];
      for (Eigen::Index i = 0; i < noise.cols(); ++i) noise(b, i) = normal(e.noise_rng);
    }
    data.inputs.push_back(std::move(x));
    data.taken.push_back(std::move(taken));
    data.action_inputs.push_back(std::move(action_in));
    data.rewards.push_back(std::move(rewards));
    data.next_obs.push_back(std::move(next_obs));
    data.noise.push_back(std::move(noise));
  }
  if (episode_returns) {
    episode_returns->clear();
    for (const auto& e : eps) episode_returns->push_back(e.discounted);
  }
  return data;
}

EvalStats summarize(std::vector<double> returns) {
  EvalStats s;
  s.returns = std::move(returns);
  if (s.returns.empty()) return s;
  double sum = 0.0;
  for (double r : s.returns) sum += r;
  s.mean = sum / static_cast<double>(s.returns.size());
  double sq = 0.0;
  for (double r : s.returns) sq += (r - s.mean) * (r - s.mean);
  s.sd = s.returns.size() > 1 ? std::sqrt(sq / static_cast<double>(s.returns.size() - 1)) : 0.0;
  return s;
}

EvalStats evaluate(const AgentParams& p, const envs::FamilyConfig& family, int n_episodes, std::uint64_t seed,
                   bool greedy) {
  if (n_episodes < 1) throw std::invalid_argument("evaluate: need at least one episode");
  constexpr int kChunk = 64;
  const auto& a = p.arch;
  std::vector<double> returns;
  returns.reserve(static_cast<std::size_t>(n_episodes));
  for (int first = 0; first < n_episodes; first += kChunk) {
    const int count = std::min(kChunk, n_episodes - first);
    std::vector<Episode> eps;
    for (int i = 0; i < count; ++i) {
      eps.push_back(start_episode(family, derive_rng(seed, {static_cast<std::uint64_t>(first + i)})()));
    }
    Tensor h = Tensor::Zero(count, a.hidden);
    Tensor x(count, a.input_dim());
    for (int t = 0; t < family.episode_length; ++t) {
      for (int b = 0; b < count; ++b) agents::write_input(a, eps[static_cast<std::size_t>(b)].record, x.row(b));
      Tape tape;
      const auto s = agents::agent_step(tape, p, tape.constant(h), tape.constant(x), false);
      h = tape.value(s.hidden);
      const Tensor& actor = tape.value(s.actor);
      for (int b = 0; b < count; ++b) {
        auto& e = eps[static_cast<std::size_t>(b)];
        advance(e, agents::sample_action(p, actor, b, e.rng, greedy));
      }
    }
    for (const auto& e : eps) returns.push_back(e.discounted);
  }
  return summarize(std::move(returns));
}

EvalStats evaluate_policy(envs::Policy& policy, const envs::FamilyConfig& family, int n_episodes, std::uint64_t seed) {
  if (n_episodes < 1) throw std::invalid_argument("evaluate_policy: need at least one episode");
  std::vector<double> returns;
  for (int e = 0; e < n_episodes; ++e) {
    Rng rng = derive_rng(derive_rng(seed, {static_cast<std::uint64_t>(e)})(), {});
    const auto task = envs::sample_task(family, rng);
    returns.push_back(envs::discounted_return(envs::rollout(task, policy, rng), family.gamma));
  }
  return summarize(std::move(returns));
}

json to_json(const CurvePoint& p) {
  json j = {{"update", p.update}, {"eval_return_mean", p.eval_mean}, {"eval_return_sd", p.eval_sd}};
  for (const auto& [k, v] : p.losses) j[k] = v;
  return j;
}

TrainResult meta_train(const TrainConfig& config, const TrainCallbacks& callbacks, const AgentParams* initial) {
  const auto arch = config.architecture();
  TrainResult result;
  if (initial) {
    result.params = agents::bind_agent(arch, initial->set);
  } else {
    Rng init = derive_rng(config.seed, {0});
    result.params = agents::init_agent(arch, init);
  }
  auto& p = result.params;

  std::vector<numkit::Adam> optimizers;
  if (config.model_kind() == agents::ModelKind::Rl2) {
    std::vector<numkit::ParamId> all(p.set.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    optimizers.emplace_back(p.set, all, numkit::AdamConfig{.learning_rate = config.lr_rl2, .max_grad_norm = config.max_grad_norm});
  } else {
    auto vae = p.encoder_ids();
    const auto dec = p.decoder_ids();
    vae.insert(vae.end(), dec.begin(), dec.end());
    optimizers.emplace_back(p.set, vae, numkit::AdamConfig{.learning_rate = config.lr_vae, .max_grad_norm = config.max_grad_norm});
    optimizers.emplace_back(p.set, p.policy_ids(),
                            numkit::AdamConfig{.learning_rate = config.lr_policy, .max_grad_norm = config.max_grad_norm});
  }

  LossLog running;
  long since = 0;
  auto emit_point = [&](long update) {
    CurvePoint pt;
    pt.update = update;
    const auto stats = evaluate(p, config.family, config.eval_episodes, derive_rng(config.seed, {2, static_cast<std::uint64_t>(update)})());
    pt.eval_mean = stats.mean;
    pt.eval_sd = stats.sd;
    for (const auto& [k, v] : running) pt.losses[k] = since > 0 ? v / static_cast<double>(since) : 0.0;
    running.clear();
    since = 0;
    result.curve.push_back(pt);
    if (callbacks.on_curve) callbacks.on_curve(pt);
  };

  std::vector<StepVars> steps;
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(config.batch_size));
  for (long u = 0; u < config.n_updates; ++u) {
    for (int b = 0; b < config.batch_size; ++b) {
      seeds[static_cast<std::size_t>(b)] =
          derive_rng(config.seed, {1, static_cast<std::uint64_t>(u), static_cast<std::uint64_t>(b)})();
    }
    Tape tape;
    const auto data = collect_batch(tape, p, config.family, seeds, config.detach_belief(), steps);
    LossLog log;
    Var loss = a2c_loss(tape, p, data, steps, config.beta_v, config.beta_e, config.family.gamma, &log);
    if (config.model_kind() == agents::ModelKind::Predictive) {
      loss = tape.add(loss, elbo_loss(tape, p, data, steps, config.effective_kl(), &log));
    }
    const auto grads = tape.backward(loss);
    for (auto& opt : optimizers) opt.step(p.set, grads);
    for (const auto& [k, v] : log) running[k] += v;
    ++since;
    const long done = u + 1;
    if (config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && callbacks.on_checkpoint) {
      callbacks.on_checkpoint(done, p);
    }
    if (config.eval_every > 0 && done % config.eval_every == 0 && done != config.n_updates) emit_point(done);
  }
  emit_point(config.n_updates);
  return result;
}

}  // namespace belieflab::training
