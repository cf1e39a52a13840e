#pragma once

// Finite-difference reference for the training losses. The losses are rebuilt
// from forward values in plain Eigen, with every stop-gradient quantity (the
// advantage in the policy term, the previous posterior in the KL) frozen at its
// value for the unperturbed parameters.

#include "belieflab/numkit/gradcheck.hpp"
#include "belieflab/training.hpp"

#include <cmath>
#include <numbers>

namespace belieflab::oracle {

using numkit::Tensor;

struct ForwardValues {
  std::vector<Tensor> actor, value, mean, log_var;
};

inline ForwardValues forward_values(const agents::AgentParams& p, const training::BatchData& d, bool detach) {
  numkit::Tape tape;
  const auto steps = training::unroll(tape, p, d, detach);
  ForwardValues v;
  for (const auto& s : steps) {
    v.actor.push_back(tape.value(s.actor));
    v.value.push_back(tape.value(s.value));
    if (s.mean.valid()) {
      v.mean.push_back(tape.value(s.mean));
      v.log_var.push_back(tape.value(s.log_var));
    }
  }
  return v;
}

inline Tensor log_softmax_rows(const Tensor& x) {
  Tensor out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    const double lse = m + std::log((x.row(r).array() - m).exp().sum());
    out.row(r) = x.row(r).array() - lse;
  }
  return out;
}

inline double gaussian_log_density(double x, double mean, double log_var) {
  return -0.5 * (std::log(2.0 * std::numbers::pi) + log_var + (x - mean) * (x - mean) * std::exp(-log_var));
}

/// Advantages R_t - V_t at the current parameters, for freezing.
inline std::vector<Tensor> advantages(const agents::AgentParams& p, const training::BatchData& d, double gamma,
                                      bool detach) {
  const auto v = forward_values(p, d, detach);
  const auto returns = training::returns_to_go(d, gamma);
  std::vector<Tensor> out;
  for (int t = 0; t < d.steps; ++t) out.push_back(returns[static_cast<std::size_t>(t)] - v.value[static_cast<std::size_t>(t)]);
  return out;
}

inline double a2c_reference(const agents::AgentParams& p, const training::BatchData& d, const std::vector<Tensor>& frozen,
                            double beta_v, double beta_e, double gamma, bool detach) {
  const auto v = forward_values(p, d, detach);
  const auto returns = training::returns_to_go(d, gamma);
  double pg = 0.0, value = 0.0, entropy = 0.0;
  for (int t = 0; t < d.steps; ++t) {
    const auto ut = static_cast<std::size_t>(t);
    for (int b = 0; b < d.batch; ++b) {
      double log_prob = 0.0, h = 0.0;
      if (p.arch.continuous) {
        const double log_std = p.set.value(*p.ids.log_std)(0, 0);
        log_prob = gaussian_log_density(d.taken[ut](b, 0), v.actor[ut](b, 0), 2.0 * log_std);
        h = log_std + 0.5 * (1.0 + std::log(2.0 * std::numbers::pi));
      } else {
        const Tensor lp = log_softmax_rows(v.actor[ut].row(b));
        log_prob = (lp.array() * d.taken[ut].row(b).array()).sum();
        h = -(lp.array().exp() * lp.array()).sum();
      }
      const double delta = returns[ut](b, 0) - v.value[ut](b, 0);
      pg += log_prob * frozen[ut](b, 0);
      value += 0.5 * delta * delta;
      entropy += h;
    }
  }
  const double n = static_cast<double>(d.steps) * d.batch;
  return (-pg + beta_v * value - beta_e * entropy) / n;
}

inline double elbo_reference(const agents::AgentParams& p, const training::BatchData& d, const ForwardValues& frozen,
                             double kl_coeff) {
  const auto v = forward_values(p, d, true);
  const auto latent = p.arch.latent_dim();
  double total = 0.0;
  for (int t = 0; t < d.steps; ++t) {
    const auto ut = static_cast<std::size_t>(t);
    const Tensor z = (v.mean[ut].array() + (0.5 * v.log_var[ut].array()).exp() * d.noise[ut].array()).matrix();
    numkit::Tape tape;
    const auto dec = agents::decode(tape, p, tape.constant(z), tape.constant(d.action_inputs[ut]));
    const Tensor& r_hat = tape.value(dec.reward_mean);
    for (int b = 0; b < d.batch; ++b) {
      total -= gaussian_log_density(d.rewards[ut](b, 0), r_hat(b, 0), 0.0);
      if (dec.observation.valid()) {
        const Tensor& o = tape.value(dec.observation);
        if (p.arch.observation_categorical) {
          total -= (log_softmax_rows(o.row(b)).array() * d.next_obs[ut].row(b).array()).sum();
        } else {
          for (Eigen::Index i = 0; i < o.cols(); ++i) total -= gaussian_log_density(d.next_obs[ut](b, i), o(b, i), 0.0);
        }
      }
      for (int i = 0; i < latent; ++i) {
        const double mp = t == 0 ? 0.0 : frozen.mean[ut - 1](b, i);
        const double lp = t == 0 ? 0.0 : frozen.log_var[ut - 1](b, i);
        const double mq = v.mean[ut](b, i);
        const double lq = v.log_var[ut](b, i);
        total += kl_coeff * 0.5 * (std::exp(lq - lp) + (mq - mp) * (mq - mp) * std::exp(-lp) - 1.0 + lp - lq);
      }
    }
  }
  return total / d.batch;
}

/// max |analytic - fd| / max(max |fd|, floor) over the listed parameters.
inline double gradient_error(const agents::AgentParams& p, const std::vector<numkit::ParamId>& ids,
                             const numkit::Gradients& grads, const std::function<double(const agents::AgentParams&)>& f,
                             double eps = 1e-6, double floor = 1e-8) {
  agents::AgentParams work = p;
  const Tensor base = numkit::flatten_parameters(p.set, ids);
  const auto wrapped = [&](const Tensor& flat) {
    numkit::unflatten_parameters(work.set, ids, flat);
    return f(work);
  };
  const Tensor fd = numkit::central_difference(wrapped, base, eps);
  const Tensor analytic = numkit::flatten_gradients(p.set, grads, ids);
  return (analytic - fd).cwiseAbs().maxCoeff() / std::max(fd.cwiseAbs().maxCoeff(), floor);
}

inline std::vector<numkit::ParamId> all_ids(const agents::AgentParams& p) {
  std::vector<numkit::ParamId> ids(p.set.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  return ids;
}

struct GradientCase {
  double a2c_error = 0.0;
  double a2c_joint_error = 0.0;
  double elbo_error = 0.0;
};

/// One random 3-step trajectory batch on a small agent; returns the relative
/// errors of the analytic gradients.
inline GradientCase check_gradients(const envs::FamilyConfig& family_in, agents::ModelKind kind, std::uint64_t seed) {
  auto family = family_in;
  family.episode_length = 3;
  auto arch = agents::Architecture::for_family(family, kind, 6, 4);
  arch.policy_hidden = 5;
  arch.decoder_hidden = 5;
  Rng rng = derive_rng(seed, {7});
  const auto p = agents::init_agent(arch, rng);
  constexpr double kBetaV = 0.5, kBetaE = 0.1, kKl = 0.3;
  const double gamma = family.gamma;

  training::BatchData data;
  {
    numkit::Tape tape;
    std::vector<agents::StepVars> steps;
    data = training::collect_batch(tape, p, family, {derive_rng(seed, {1})(), derive_rng(seed, {2})()}, true, steps);
  }
  GradientCase out;
  const bool predictive = kind == agents::ModelKind::Predictive;
  {
    numkit::Tape tape;
    const auto steps = training::unroll(tape, p, data, true);
    const auto grads = tape.backward(training::a2c_loss(tape, p, data, steps, kBetaV, kBetaE, gamma, nullptr));
    const auto frozen = advantages(p, data, gamma, true);
    const auto ids = predictive ? p.policy_ids() : all_ids(p);
    out.a2c_error = gradient_error(p, ids, grads, [&](const agents::AgentParams& q) {
      return a2c_reference(q, data, frozen, kBetaV, kBetaE, gamma, true);
    });
  }
  if (predictive) {
    {
      numkit::Tape tape;
      const auto steps = training::unroll(tape, p, data, false);
      const auto grads = tape.backward(training::a2c_loss(tape, p, data, steps, kBetaV, kBetaE, gamma, nullptr));
      const auto frozen = advantages(p, data, gamma, false);
      auto ids = p.encoder_ids();
      const auto pol = p.policy_ids();
      ids.insert(ids.end(), pol.begin(), pol.end());
      out.a2c_joint_error = gradient_error(p, ids, grads, [&](const agents::AgentParams& q) {
        return a2c_reference(q, data, frozen, kBetaV, kBetaE, gamma, false);
      });
    }
    numkit::Tape tape;
    const auto steps = training::unroll(tape, p, data, true);
    const auto grads = tape.backward(training::elbo_loss(tape, p, data, steps, kKl, nullptr));
    const auto frozen = forward_values(p, data, true);
    auto ids = p.encoder_ids();
    const auto dec = p.decoder_ids();
    ids.insert(ids.end(), dec.begin(), dec.end());
    out.elbo_error = gradient_error(p, ids, grads, [&](const agents::AgentParams& q) {
      return elbo_reference(q, data, frozen, kKl);
    });
  }
  return out;
}

}  // namespace belieflab::oracle
