#include "belieflab/sms.hpp"

#include "belieflab/numkit/adam.hpp"
#include "belieflab/numkit/parallel.hpp"
#include "belieflab/numkit/stats.hpp"

#include <algorithm>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace belieflab::sms {

using numkit::Tape;
using numkit::Var;

std::string to_string(Layer layer) {
  switch (layer) {
    case Layer::Bottleneck: return "bottleneck";
    case Layer::Recurrent: return "recurrent";
    case Layer::Belief: return "belief";
  }
  return "?";
}

Layer parse_layer(const std::string& text) {
  if (text == "bottleneck") return Layer::Bottleneck;
  if (text == "recurrent") return Layer::Recurrent;
  if (text == "belief") return Layer::Belief;
  throw std::invalid_argument("unknown layer: " + text);
}

std::string to_string(Direction d) { return d == Direction::MetaToBayes ? "metarl_to_bayes" : "bayes_to_metarl"; }

namespace {

Tensor as_row(const std::vector<double>& v) {
  Tensor t(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) t(0, static_cast<Eigen::Index>(i)) = v[i];
  return t;
}

void require_layer(bool ok, Layer layer, const char* who) {
  if (!ok) throw std::invalid_argument(std::string(who) + " has no " + to_string(layer) + " layer");
}

}  // namespace

BayesMachine::BayesMachine(std::shared_ptr<const planners::PlannerSolution> solution)
    : solution_(std::move(solution)), filter_(solution_->config()) {}

void BayesMachine::begin_episode() { filter_.reset(); }

void BayesMachine::consume(const envs::StepRecord& record) { filter_.observe(record); }

Tensor BayesMachine::state(Layer layer) const {
  require_layer(layer == Layer::Belief, layer, "Bayes machine");
  return as_row(belief::encode(config(), filter_.belief()));
}

int BayesMachine::state_dim(Layer layer) const {
  require_layer(layer == Layer::Belief, layer, "Bayes machine");
  return static_cast<int>(belief::encoding_dim(config()));
}

envs::Action BayesMachine::act(const envs::StepRecord& latest, Rng&) {
  return planners::bayes_act(*solution_, filter_.belief(), latest.observation);
}

envs::Action BayesMachine::output(Layer layer, const Tensor& s, const envs::StepRecord& latest, Rng&) {
  require_layer(layer == Layer::Belief, layer, "Bayes machine");
  if (s.rows() != 1 || s.cols() != state_dim(layer)) throw numkit::ShapeError("BayesMachine::output: bad state shape");
  const auto b = belief::decode(config(), std::span<const double>(s.data(), static_cast<std::size_t>(s.cols())));
  return planners::bayes_act(*solution_, b, latest.observation);
}

AgentMachine::AgentMachine(std::shared_ptr<const agents::AgentParams> params, envs::FamilyConfig config, bool greedy)
    : params_(std::move(params)), config_(std::move(config)), greedy_(greedy) {
  const auto& a = params_->arch;
  if (config_.observation_dim() != a.observation_dim || config_.num_actions() != a.num_actions ||
      config_.continuous_actions() != a.continuous) {
    throw std::invalid_argument("AgentMachine: agent does not fit family " + config_.family.id());
  }
}

void AgentMachine::begin_episode() { hidden_ = Tensor::Zero(1, params_->arch.hidden); }

void AgentMachine::consume(const envs::StepRecord& record) {
  Tape tape;
  const auto s = agents::agent_step(tape, *params_, tape.constant(hidden_),
                                    tape.constant(agents::make_input(params_->arch, record)), false);
  hidden_ = tape.value(s.hidden);
  bottleneck_ = tape.value(s.bottleneck);
  actor_ = tape.value(s.actor);
}

Tensor AgentMachine::state(Layer layer) const {
  require_layer(layer != Layer::Belief, layer, "agent");
  return layer == Layer::Recurrent ? hidden_ : bottleneck_;
}

int AgentMachine::state_dim(Layer layer) const {
  require_layer(layer != Layer::Belief, layer, "agent");
  return layer == Layer::Recurrent ? params_->arch.hidden : params_->arch.bottleneck_width();
}

envs::Action AgentMachine::act(const envs::StepRecord&, Rng& rng) {
  return agents::sample_action(*params_, actor_, 0, rng, greedy_);
}

envs::Action AgentMachine::output(Layer layer, const Tensor& s, const envs::StepRecord&, Rng& rng) {
  if (s.rows() != 1 || s.cols() != state_dim(layer)) throw numkit::ShapeError("AgentMachine::output: bad state shape");
  Tape tape;
  const auto head = layer == Layer::Recurrent ? agents::policy_from_hidden(tape, *params_, tape.constant(s))
                                              : agents::policy_from_bottleneck(tape, *params_, tape.constant(s));
  return agents::sample_action(*params_, tape.value(head.actor), 0, rng, greedy_);
}

const Tensor& StateDataset::layer(Layer l) const {
  switch (l) {
    case Layer::Belief: return belief;
    case Layer::Recurrent: return recurrent;
    case Layer::Bottleneck: return bottleneck;
  }
  return belief;
}

Tensor StateDataset::train(Layer l) const { return layer(l).topRows(static_cast<Eigen::Index>(n_train) * episode_length); }

Tensor StateDataset::test(Layer l) const {
  return layer(l).bottomRows(static_cast<Eigen::Index>(n_test) * episode_length);
}

StateDataset collect_states(std::shared_ptr<const planners::PlannerSolution> solution,
                            std::shared_ptr<const agents::AgentParams> agent, int n_train, int n_test,
                            std::uint64_t seed) {
  if (n_train < 1 || n_test < 0) throw std::invalid_argument("collect_states: need training trajectories");
  const auto& config = solution->config();
  BayesMachine bayes(solution);
  std::unique_ptr<AgentMachine> meta;
  if (agent) meta = std::make_unique<AgentMachine>(agent, config);

  StateDataset d;
  d.episode_length = config.episode_length;
  d.n_train = n_train;
  d.n_test = n_test;
  const Eigen::Index rows = static_cast<Eigen::Index>(d.trajectories()) * d.episode_length;
  d.belief.resize(rows, bayes.state_dim(Layer::Belief));
  if (meta) {
    d.recurrent.resize(rows, meta->state_dim(Layer::Recurrent));
    d.bottleneck.resize(rows, meta->state_dim(Layer::Bottleneck));
  }
  d.records.reserve(static_cast<std::size_t>(rows));
  d.actions.reserve(static_cast<std::size_t>(rows));
  Eigen::Index row = 0;
  for (int i = 0; i < d.trajectories(); ++i) {
    Rng rng = derive_rng(seed, {static_cast<std::uint64_t>(i)});
    const auto task = envs::sample_task(config, rng);
    auto [hidden, obs] = envs::reset(task, rng);
    envs::StepRecord record;
    record.observation = std::move(obs);
    bayes.begin_episode();
    if (meta) meta->begin_episode();
    for (int t = 0; t < d.episode_length; ++t, ++row) {
      bayes.consume(record);
      d.belief.row(row) = bayes.state(Layer::Belief);
      if (meta) {
        meta->consume(record);
        d.recurrent.row(row) = meta->state(Layer::Recurrent);
        d.bottleneck.row(row) = meta->state(Layer::Bottleneck);
      }
      const auto action = envs::validate_action(config, bayes.act(record, rng));
      d.records.push_back(record);
      d.actions.push_back(action);
      auto res = envs::step(task, hidden, action, rng);
      hidden = res.hidden;
      envs::StepRecord next;
      next.t = t + 1;
      next.observation = std::move(res.observation);
      next.prev_action = action;
      next.has_prev_action = true;
      next.reward = res.reward;
      next.done = res.done;
      record = std::move(next);
    }
  }
  return d;
}

void write_state_log(std::ostream& out, const StateDataset& d) {
  auto vec = [](const Tensor& m, Eigen::Index r) {
    return std::vector<double>(m.row(r).data(), m.row(r).data() + m.cols());
  };
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(d.records.size()); ++r) {
    const auto& rec = d.records[static_cast<std::size_t>(r)];
    const auto& act = d.actions[static_cast<std::size_t>(r)];
    nlohmann::json line;
    line["episode_id"] = r / d.episode_length;
    line["split"] = r / d.episode_length < d.n_train ? "train" : "test";
    line["t"] = rec.t;
    line["obs"] = rec.observation;
    if (!rec.has_prev_action) {
      line["prev_action"] = nullptr;
    } else if (rec.prev_action.index < 0) {
      line["prev_action"] = rec.prev_action.value;
    } else {
      line["prev_action"] = rec.prev_action.index;
    }
    line["reward"] = rec.reward;
    line["done"] = rec.done;
    line["action"] = act.index < 0 ? nlohmann::json(act.value) : nlohmann::json(act.index);
    line["action_source"] = "bayes";
    line["belief"] = vec(d.belief, r);
    if (d.recurrent.size() > 0) {
      line["recurrent"] = vec(d.recurrent, r);
      line["bottleneck"] = vec(d.bottleneck, r);
    }
    out << line.dump() << '\n';
  }
}

namespace {

constexpr int kWidths[] = {64, 128, 64};

Tensor relu(const Tensor& x) { return x.cwiseMax(0.0); }

}  // namespace

MappingNet::MappingNet(int in, int out, Rng& rng) : in_(in), out_(out) {
  if (in < 1 || out < 1) throw std::invalid_argument("MappingNet: dimensions must be positive");
  int prev = in;
  for (int i = 0; i < 4; ++i) {
    const int width = i < 3 ? kWidths[i] : out;
    params_.add("map.W" + std::to_string(i), numkit::uniform_init(prev, width, prev, rng));
    params_.add("map.b" + std::to_string(i), Tensor::Zero(1, width));
    prev = width;
  }
}

Tensor MappingNet::predict(const Tensor& x) const {
  if (x.cols() != in_) throw numkit::ShapeError("MappingNet::predict: input width " + std::to_string(x.cols()));
  Tensor h = x;
  for (numkit::ParamId i = 0; i < 4; ++i) {
    Tensor z = h * params_.value(2 * i);
    z.rowwise() += params_.value(2 * i + 1).row(0);
    h = i < 3 ? relu(z) : z;
  }
  return h;
}

double mean_squared_error(const Tensor& prediction, const Tensor& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    throw numkit::ShapeError("mean_squared_error: shape mismatch");
  }
  if (target.size() == 0) throw std::invalid_argument("mean_squared_error: empty set");
  return (prediction - target).squaredNorm() / static_cast<double>(target.size());
}

double state_dissimilarity(const MappingNet& net, const Tensor& source_test, const Tensor& target_test) {
  return mean_squared_error(net.predict(source_test), target_test);
}

MappingFit train_mapping(const Tensor& source, const Tensor& target, int episode_length, const MappingOptions& o,
                         std::uint64_t seed) {
  if (source.rows() == 0) throw std::invalid_argument("train_mapping: empty dataset");
  if (source.rows() != target.rows()) throw numkit::ShapeError("train_mapping: source/target row mismatch");
  if (episode_length < 1 || source.rows() % episode_length != 0) {
    throw std::invalid_argument("train_mapping: rows are not whole trajectories");
  }
  Rng rng = derive_rng(seed, {0});
  MappingFit fit{MappingNet(static_cast<int>(source.cols()), static_cast<int>(target.cols()), rng)};
  auto& params = fit.net.parameters();

  const auto n_traj = static_cast<int>(source.rows() / episode_length);
  int n_val = static_cast<int>(std::lround(o.validation_fraction * n_traj));
  if (n_traj > 1) n_val = std::clamp(n_val, 1, n_traj - 1);
  else n_val = 0;
  const Eigen::Index fit_rows = static_cast<Eigen::Index>(n_traj - n_val) * episode_length;
  const Tensor x_fit = source.topRows(fit_rows), y_fit = target.topRows(fit_rows);
  const Tensor x_val = n_val > 0 ? Tensor(source.bottomRows(source.rows() - fit_rows)) : x_fit;
  const Tensor y_val = n_val > 0 ? Tensor(target.bottomRows(target.rows() - fit_rows)) : y_fit;

  fit.initial_train_mse = mean_squared_error(fit.net.predict(x_fit), y_fit);
  std::vector<numkit::ParamId> ids(params.size());
  std::iota(ids.begin(), ids.end(), 0);
  numkit::Adam adam(params, ids, numkit::AdamConfig{.learning_rate = o.learning_rate});
  std::vector<Eigen::Index> order(static_cast<std::size_t>(fit_rows));
  std::iota(order.begin(), order.end(), 0);

  numkit::ParameterSet best = params;
  fit.best_validation = mean_squared_error(fit.net.predict(x_val), y_val);
  int stale = 0;
  Tensor xb, yb;
  for (int epoch = 0; epoch < o.max_epochs && stale < o.patience; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(o.batch_size)) {
      const auto n = static_cast<Eigen::Index>(std::min(order.size() - start, static_cast<std::size_t>(o.batch_size)));
      xb.resize(n, x_fit.cols());
      yb.resize(n, y_fit.cols());
      for (Eigen::Index k = 0; k < n; ++k) {
        xb.row(k) = x_fit.row(order[start + static_cast<std::size_t>(k)]);
        yb.row(k) = y_fit.row(order[start + static_cast<std::size_t>(k)]);
      }
      Tape tape;
      Var h = tape.constant(xb);
      for (numkit::ParamId i = 0; i < 4; ++i) {
        h = tape.linear(h, params, 2 * i, 2 * i + 1);
        if (i < 3) h = tape.relu(h);
      }
      Var loss = tape.mean(tape.square(tape.sub(h, tape.constant(yb))));
      adam.step(params, tape.backward(loss));
    }
    ++fit.epochs;
    const double val = mean_squared_error(fit.net.predict(x_val), y_val);
    if (val < fit.best_validation) {
      fit.best_validation = val;
      best = params;
      stale = 0;
    } else {
      ++stale;
    }
  }
  params = best;
  fit.final_train_mse = mean_squared_error(fit.net.predict(x_fit), y_fit);
  return fit;
}

OutputComparison output_dissimilarity(const MappingNet& net, Machine& source, Layer source_layer, Machine& target,
                                      Layer target_layer, int n_episodes, std::uint64_t seed) {
  if (n_episodes < 1) throw std::invalid_argument("output_dissimilarity: need at least one episode");
  const auto& config = source.config();
  if (config.family.id() != target.config().family.id()) {
    throw std::invalid_argument("output_dissimilarity: machines run different families");
  }
  auto run = [&](bool mapped, int e) {
    const auto episode = static_cast<std::uint64_t>(e);
    Rng rng = derive_rng(seed, {episode, 0});
    const auto task = envs::sample_task(config, rng);
    auto [hidden, obs] = envs::reset(task, rng);
    envs::StepRecord record;
    record.observation = std::move(obs);
    source.begin_episode();
    double total = 0.0, discount = 1.0;
    for (int t = 0; t < config.episode_length; ++t) {
      const auto step = static_cast<std::uint64_t>(t);
      Rng policy_rng = derive_rng(seed, {episode, 1, step});
      Rng env_rng = derive_rng(seed, {episode, 2, step});
      source.consume(record);
      const auto raw = mapped ? target.output(target_layer, net.predict(source.state(source_layer)), record, policy_rng)
                              : source.act(record, policy_rng);
      const auto action = envs::validate_action(config, raw);
      auto res = envs::step(task, hidden, action, env_rng);
      hidden = res.hidden;
      total += discount * res.reward;
      discount *= config.gamma;
      envs::StepRecord next;
      next.t = t + 1;
      next.observation = std::move(res.observation);
      next.prev_action = action;
      next.has_prev_action = true;
      next.reward = res.reward;
      next.done = res.done;
      record = std::move(next);
    }
    return total;
  };
  OutputComparison c;
  for (int e = 0; e < n_episodes; ++e) {
    c.mapped_returns.push_back(run(true, e));
    c.own_returns.push_back(run(false, e));
  }
  c.mapped_mean = numkit::mean(c.mapped_returns);
  c.own_mean = numkit::mean(c.own_returns);
  c.value = std::fabs(c.mapped_mean - c.own_mean);
  return c;
}

LayerMeasures compare_layers(const StateDataset& data, Machine& meta, Layer meta_layer, Machine& bayes,
                             Layer bayes_layer, const SmsOptions& o) {
  const auto tag = static_cast<std::uint64_t>(meta_layer);
  LayerMeasures m;
  const auto to_bayes =
      train_mapping(data.train(meta_layer), data.train(bayes_layer), data.episode_length, o.mapping,
                    derive_rng(o.seed, {10, tag, 0})());
  m.state_meta_to_bayes = state_dissimilarity(to_bayes.net, data.test(meta_layer), data.test(bayes_layer));
  m.output_meta_to_bayes =
      output_dissimilarity(to_bayes.net, meta, meta_layer, bayes, bayes_layer, o.n_eval, derive_rng(o.seed, {11})())
          .value;
  const auto to_meta =
      train_mapping(data.train(bayes_layer), data.train(meta_layer), data.episode_length, o.mapping,
                    derive_rng(o.seed, {10, tag, 1})());
  m.state_bayes_to_meta = state_dissimilarity(to_meta.net, data.test(bayes_layer), data.test(meta_layer));
  m.output_bayes_to_meta =
      output_dissimilarity(to_meta.net, bayes, bayes_layer, meta, meta_layer, o.n_eval, derive_rng(o.seed, {11})())
          .value;
  return m;
}

std::vector<double> SmsReport::values(const std::string& model, Layer layer, Direction direction,
                                      const std::string& measure) const {
  std::vector<double> out;
  for (const auto& r : rows) {
    if (r.model == model && r.layer == layer && r.direction == direction && r.measure == measure) out.push_back(r.value);
  }
  return out;
}

namespace {

const char* const kMeasures[] = {"state", "output"};

void summarize_rows(SmsReport& report, const std::vector<std::string>& models, const std::vector<Layer>& layers) {
  std::map<std::string, std::size_t> counts;
  for (const auto& model : models) counts[model] = report.values(model, layers.front(), Direction::MetaToBayes, "state").size();
  for (const auto& model : models) {
    for (auto layer : layers) {
      for (auto dir : {Direction::MetaToBayes, Direction::BayesToMeta}) {
        for (const char* measure : kMeasures) {
          const auto v = report.values(model, layer, dir, measure);
          const double sem = v.size() > 1 ? numkit::sem(v) : 0.0;
          report.aggregates.push_back({model, layer, dir, measure, numkit::mean(v), sem, static_cast<int>(v.size())});
        }
      }
    }
  }
  for (std::size_t a = 0; a < models.size(); ++a) {
    for (std::size_t b = a + 1; b < models.size(); ++b) {
      if (counts.at(models[a]) < 2 || counts.at(models[b]) < 2) continue;
      for (auto layer : layers) {
        for (auto dir : {Direction::MetaToBayes, Direction::BayesToMeta}) {
          for (const char* measure : kMeasures) {
            const auto t = numkit::welch_t_test(report.values(models[a], layer, dir, measure),
                                                report.values(models[b], layer, dir, measure));
            report.comparisons.push_back({models[a], models[b], layer, dir, measure, t.t, t.df, t.p});
          }
        }
      }
    }
  }
}

}  // namespace

SmsReport sms_full_report(const std::vector<ModelGroup>& groups,
                          std::shared_ptr<const planners::PlannerSolution> solution, const std::vector<Layer>& layers,
                          const SmsOptions& options) {
  if (layers.empty()) throw std::invalid_argument("sms_full_report: no layers requested");
  for (auto l : layers) {
    if (l == Layer::Belief) throw std::invalid_argument("sms_full_report: agent layers only");
  }
  std::vector<std::string> labels;
  struct Job {
    const ModelGroup* group;
    std::size_t index;
  };
  std::vector<Job> jobs;
  for (const auto& g : groups) {
    if (g.models.empty() || g.seeds.size() != g.models.size()) {
      throw std::invalid_argument("sms_full_report: group '" + g.label + "' needs seeded models");
    }
    labels.push_back(g.label);
    for (std::size_t i = 0; i < g.models.size(); ++i) jobs.push_back({&g, i});
  }
  std::vector<std::vector<ReportRow>> rows(jobs.size());
  numkit::parallel_for(jobs.size(), options.threads, [&](std::size_t j) {
    const auto& g = *jobs[j].group;
    const auto i = jobs[j].index;
    const auto data = collect_states(solution, g.models[i], options.n_train, options.n_test, options.seed);
    AgentMachine meta(g.models[i], solution->config());
    BayesMachine bayes(solution);
    for (auto layer : layers) {
      const auto m = compare_layers(data, meta, layer, bayes, Layer::Belief, options);
      const auto seed = g.seeds[i];
      rows[j].push_back({g.label, seed, layer, Direction::MetaToBayes, "state", m.state_meta_to_bayes});
      rows[j].push_back({g.label, seed, layer, Direction::MetaToBayes, "output", m.output_meta_to_bayes});
      rows[j].push_back({g.label, seed, layer, Direction::BayesToMeta, "state", m.state_bayes_to_meta});
      rows[j].push_back({g.label, seed, layer, Direction::BayesToMeta, "output", m.output_bayes_to_meta});
    }
  });
  SmsReport report;
  for (auto& r : rows) report.rows.insert(report.rows.end(), r.begin(), r.end());
  summarize_rows(report, labels, layers);
  return report;
}

void write_report_table(std::ostream& out, const SmsReport& report) {
  out << std::left << std::setw(22) << "model" << std::setw(12) << "layer" << std::setw(17) << "direction"
      << std::setw(8) << "measure" << std::right << std::setw(14) << "mean" << std::setw(14) << "sem" << std::setw(4)
      << "n" << '\n';
  for (const auto& a : report.aggregates) {
    out << std::left << std::setw(22) << a.model << std::setw(12) << to_string(a.layer) << std::setw(17)
        << to_string(a.direction) << std::setw(8) << a.measure << std::right << std::scientific << std::setprecision(5)
        << std::setw(14) << a.mean << std::setw(14) << a.sem << std::defaultfloat << std::setw(4) << a.n << '\n';
  }
  if (report.comparisons.empty()) return;
  out << '\n'
      << std::left << std::setw(22) << "model_a" << std::setw(22) << "model_b" << std::setw(12) << "layer"
      << std::setw(17) << "direction" << std::setw(8) << "measure" << std::right << std::setw(12) << "t"
      << std::setw(10) << "df" << std::setw(12) << "p" << '\n';
  for (const auto& c : report.comparisons) {
    out << std::left << std::setw(22) << c.model_a << std::setw(22) << c.model_b << std::setw(12) << to_string(c.layer)
        << std::setw(17) << to_string(c.direction) << std::setw(8) << c.measure << std::right << std::setprecision(4)
        << std::setw(12) << c.t << std::setw(10) << c.df << std::scientific << std::setw(12) << c.p
        << std::defaultfloat << '\n';
  }
}

void write_report_jsonl(std::ostream& out, const SmsReport& report) {
  for (const auto& r : report.rows) {
    out << nlohmann::json{{"kind", "seed"},       {"model", r.model},     {"seed", r.seed},
                          {"layer", to_string(r.layer)}, {"direction", to_string(r.direction)},
                          {"measure", r.measure}, {"value", r.value}}
               .dump()
        << '\n';
  }
  for (const auto& a : report.aggregates) {
    out << nlohmann::json{{"kind", "aggregate"},  {"model", a.model}, {"layer", to_string(a.layer)},
                          {"direction", to_string(a.direction)}, {"measure", a.measure},
                          {"mean", a.mean},        {"sem", a.sem},     {"n", a.n}}
               .dump()
        << '\n';
  }
  for (const auto& c : report.comparisons) {
    nlohmann::json j{{"kind", "comparison"}, {"model_a", c.model_a}, {"model_b", c.model_b},
                     {"layer", to_string(c.layer)}, {"direction", to_string(c.direction)},
                     {"measure", c.measure},   {"df", c.df},          {"p", c.p}};
    j["t"] = std::isfinite(c.t) ? nlohmann::json(c.t) : nlohmann::json(c.t > 0 ? "inf" : "-inf");
    out << j.dump() << '\n';
  }
}

}  // namespace belieflab::sms
