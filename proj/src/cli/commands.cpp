#include "belieflab/cli.hpp"

#include "belieflab/family_json.hpp"
#include "belieflab/numkit/parallel.hpp"
#include "belieflab/numkit/stats.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace belieflab::cli {

using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("bad config " + path.string() + ": " + e.what());
  }
}

/// Output files of one command, named relative to the output root.
class Artifacts {
 public:
  Artifacts(const Context& ctx, fs::path dir) : ctx_(ctx), dir_(std::move(dir)) { fs::create_directories(path()); }

  [[nodiscard]] fs::path path() const { return ctx_.out / dir_; }

  void write(const std::string& name, const std::string& text) {
    const auto p = path() / name;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + p.string());
    add(dir_ / name);
  }

  void add(const fs::path& relative) { files_.push_back(relative.generic_string()); }
  void add_tree(const fs::path& relative) {
    std::vector<std::string> found;
    for (const auto& e : fs::recursive_directory_iterator(ctx_.out / relative)) {
      if (e.is_regular_file()) found.push_back(fs::relative(e.path(), ctx_.out).generic_string());
    }
    std::sort(found.begin(), found.end());
    files_.insert(files_.end(), found.begin(), found.end());
  }
  [[nodiscard]] const std::vector<std::string>& files() const { return files_; }
  [[nodiscard]] std::string id() const { return dir_.generic_string(); }

 private:
  const Context& ctx_;
  fs::path dir_;
  std::vector<std::string> files_;
};

void record(const Context& ctx, const Artifacts& a, const std::string& command, const std::string& family,
            const std::string& variant, std::vector<std::uint64_t> seeds) {
  ManifestEntry e;
  e.id = a.id();
  e.command = command;
  e.family = family;
  e.variant = variant;
  e.seeds = std::move(seeds);
  e.config_path = ctx.config ? ctx.config->string() : "";
  e.argv = ctx.argv;
  e.artifacts = a.files();
  append_manifest(ctx.out, e);
}

json summary_json(const std::vector<double>& v) {
  return {{"mean", numkit::mean(v)}, {"sem", v.size() > 1 ? numkit::sem(v) : 0.0}, {"n", v.size()}};
}

json welch_json(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) return nullptr;
  const auto r = numkit::welch_t_test(a, b);
  json t = std::isfinite(r.t) ? json(r.t) : json(r.t > 0 ? "inf" : "-inf");
  return {{"t", t}, {"df", r.df}, {"p", r.p}};
}

json stats_json(const training::EvalStats& s) {
  return {{"mean", s.mean},
          {"sd", s.sd},
          {"sem", s.returns.size() > 1 ? s.sd / std::sqrt(static_cast<double>(s.returns.size())) : 0.0}};
}

std::string jsonl(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

std::vector<Model> load_models(const std::vector<std::string>& paths) {
  std::vector<Model> models;
  for (const auto& p : paths) models.push_back(load_model(p));
  return models;
}

const envs::FamilyConfig& shared_family(const std::vector<Model>& models) {
  if (models.empty()) throw ConfigError("no checkpoints given");
  for (const auto& m : models) {
    if (envs::to_json(m.config.family) != envs::to_json(models.front().config.family)) {
      throw ConfigError("checkpoints were trained on different task families");
    }
  }
  return models.front().config.family;
}

std::vector<sms::Layer> parse_layers(const std::vector<std::string>& names) {
  std::vector<sms::Layer> layers;
  for (const auto& n : names) {
    try {
      layers.push_back(sms::parse_layer(n));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (layers.back() == sms::Layer::Belief) throw ConfigError("agent layers are bottleneck and recurrent");
  }
  if (layers.empty()) throw ConfigError("no layers given");
  return layers;
}

/// Base training config: --config file, then the explicit overrides.
training::TrainConfig build_train_config(const Context& ctx, const std::string& family, const std::string& variant,
                                         std::optional<long> updates, const std::vector<int>& oracle_targets) {
  json j = ctx.config ? read_json(*ctx.config) : json::object();
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (!family.empty()) j["family"] = family;
  if (!j.contains("family")) throw ConfigError("no task family: pass --family or set it in the config");
  if (!variant.empty()) j["variant"] = variant;
  if (ctx.seed) j["seed"] = *ctx.seed;
  if (updates) j["n_updates"] = *updates;
  if (!oracle_targets.empty()) {
    if (j["family"].is_string()) {
      j["family"] = envs::to_json(envs::FamilyConfig::defaults(envs::TaskFamily::parse(j["family"].get<std::string>())));
    }
    j["family"]["oracle_targets"] = oracle_targets;
  }
  try {
    return training::train_config_from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string family, variant, name;
  std::optional<long> updates;
  std::vector<int> oracle_targets;
};

int cmd_train(const Context& ctx, const TrainArgs& args) {
  const auto config = build_train_config(ctx, args.family, args.variant, args.updates, args.oracle_targets);
  const auto name = args.name.empty()
                        ? config.family.family.id() + "-" + training::to_string(config.variant) + "-s" +
                              std::to_string(config.seed)
                        : args.name;
  Artifacts a(ctx, fs::path("train") / name);
  const auto model = train_into(a.path(), config);
  a.add_tree(fs::path("train") / name);
  record(ctx, a, "train", config.family.family.id(), training::to_string(config.variant), {config.seed});
  std::cout << "trained " << a.id() << " for " << model.steps << " updates\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, family, name;
  int episodes = 1000;
};

int cmd_eval(const Context& ctx, const EvalArgs& args) {
  if (args.episodes < 1) throw ConfigError("--episodes must be positive");
  const auto model = load_model(args.checkpoint);
  const auto& family = model.config.family;
  if (!args.family.empty() && envs::TaskFamily::parse(args.family) != family.family) {
    throw ConfigError("checkpoint was trained on " + family.family.id() + ", not " + args.family);
  }
  const auto seed = ctx.seed_or(0);
  const auto agent = training::evaluate(*model.params, family, args.episodes, seed);
  planners::BayesPolicy bayes(planner_for(family, ctx.solutions()));
  const auto reference = training::evaluate_policy(bayes, family, args.episodes, seed);

  const auto name = args.name.empty() ? fs::path(args.checkpoint).parent_path().filename().string() + "-s" +
                                            std::to_string(seed)
                                      : args.name;
  Artifacts a(ctx, fs::path("eval") / name);
  std::vector<json> rows;
  for (int e = 0; e < args.episodes; ++e) {
    rows.push_back({{"episode", e},
                    {"agent", agent.returns[static_cast<std::size_t>(e)]},
                    {"bayes", reference.returns[static_cast<std::size_t>(e)]}});
  }
  a.write("returns.jsonl", jsonl(rows));
  const json summary{{"checkpoint", args.checkpoint},
                     {"family", family.family.id()},
                     {"variant", training::to_string(model.config.variant)},
                     {"episodes", args.episodes},
                     {"seed", seed},
                     {"agent", stats_json(agent)},
                     {"bayes", stats_json(reference)}};
  a.write("eval.json", summary.dump(2) + "\n");
  record(ctx, a, "eval", family.family.id(), training::to_string(model.config.variant), {seed});
  std::cout << "agent " << agent.mean << " +- " << agent.sd << ", bayes " << reference.mean << " +- "
            << reference.sd << '\n';
  return 0;
}

struct SmsSizes {
  int n_train = 500;
  int n_test = 500;
  int n_eval = 500;
  int max_epochs = 500;

  [[nodiscard]] sms::SmsOptions options(const Context& ctx) const {
    if (n_train < 1 || n_test < 1 || n_eval < 1 || max_epochs < 1) throw ConfigError("SMS sizes must be positive");
    sms::SmsOptions o;
    o.n_train = n_train;
    o.n_test = n_test;
    o.n_eval = n_eval;
    o.mapping.max_epochs = max_epochs;
    o.seed = ctx.seed_or(0);
    o.threads = ctx.threads;
    return o;
  }
};

struct SmsArgs {
  std::vector<std::string> checkpoints;
  std::vector<std::string> layers{"bottleneck", "recurrent"};
  bool include_untrained = false;
  SmsSizes sizes;
  std::string name = "sms";
};

int cmd_sms(const Context& ctx, const SmsArgs& args) {
  const auto layers = parse_layers(args.layers);
  const auto models = load_models(args.checkpoints);
  const auto& family = shared_family(models);
  const auto solution = planner_for(family, ctx.solutions());

  std::vector<sms::ModelGroup> groups;
  auto group = [&](const std::string& label) -> sms::ModelGroup& {
    for (auto& g : groups) {
      if (g.label == label) return g;
    }
    groups.push_back({label, {}, {}});
    return groups.back();
  };
  std::vector<std::uint64_t> seeds;
  std::set<std::string> variants;
  for (const auto& m : models) {
    auto& g = group(training::to_string(m.config.variant));
    g.seeds.push_back(m.config.seed);
    g.models.push_back(m.params);
    seeds.push_back(m.config.seed);
    variants.insert(training::to_string(m.config.variant));
  }
  if (args.include_untrained) {
    for (const auto& m : models) {
      auto& g = group(training::to_string(m.config.variant) + "_untrained");
      g.seeds.push_back(m.config.seed);
      g.models.push_back(untrained_model(m.config).params);
    }
  }
  const auto report = sms::sms_full_report(groups, solution, layers, args.sizes.options(ctx));

  Artifacts a(ctx, fs::path("sms") / args.name);
  std::ostringstream table, lines;
  sms::write_report_table(table, report);
  sms::write_report_jsonl(lines, report);
  a.write("sms_report.txt", table.str());
  a.write("sms_report.jsonl", lines.str());
  std::string variant;
  for (const auto& v : variants) variant += (variant.empty() ? "" : ",") + v;
  record(ctx, a, "sms", family.family.id(), variant, seeds);
  std::cout << table.str();
  return 0;
}

struct SweepArgs {
  std::string family = "oracle_bandit";
  std::vector<int> dims{1, 2, 4, 8, 16, 32};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::optional<long> updates;
  int episodes = 1000;
  SmsSizes sizes;
  std::string name;
};

int cmd_sweep_bottleneck(const Context& ctx, const SweepArgs& args) {
  if (args.dims.empty() || args.seeds.empty()) throw ConfigError("need at least one dim and one seed");
  for (int d : args.dims) {
    if (d < 1) throw ConfigError("bottleneck dims must be >= 1");
  }
  if (args.episodes < 1) throw ConfigError("--episodes must be positive");
  Context base = ctx;
  base.seed.reset();
  const auto root = fs::path("sweep-bottleneck") / (args.name.empty() ? args.family : args.name);
  Artifacts a(ctx, root);

  struct Job {
    int dim;
    std::uint64_t seed;
    training::TrainConfig config;
    fs::path dir;
  };
  std::vector<Job> jobs;
  for (int d : args.dims) {
    for (auto s : args.seeds) {
      auto c = build_train_config(base, args.family, "predictive", args.updates, {});
      c.bottleneck = d;
      c.seed = s;
      jobs.push_back({d, s, c, a.path() / "models" / ("dim" + std::to_string(d) + "-s" + std::to_string(s))});
    }
  }
  std::vector<Model> models(jobs.size());
  numkit::parallel_for(jobs.size(), ctx.threads, [&](std::size_t i) { models[i] = train_into(jobs[i].dir, jobs[i].config); });

  const auto eval_seed = ctx.seed_or(0);
  std::vector<training::EvalStats> evals(jobs.size());
  numkit::parallel_for(jobs.size(), ctx.threads, [&](std::size_t i) {
    evals[i] = training::evaluate(*models[i].params, jobs[i].config.family, args.episodes, eval_seed);
  });

  const auto solution = planner_for(jobs.front().config.family, ctx.solutions());
  std::vector<sms::ModelGroup> groups;
  for (int d : args.dims) {
    sms::ModelGroup g{"dim" + std::to_string(d), {}, {}};
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].dim == d) {
        g.seeds.push_back(jobs[i].seed);
        g.models.push_back(models[i].params);
      }
    }
    groups.push_back(std::move(g));
  }
  const auto report = sms::sms_full_report(groups, solution, {sms::Layer::Bottleneck}, args.sizes.options(ctx));

  std::vector<json> rows;
  std::map<int, std::vector<double>> returns;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    rows.push_back({{"kind", "model"},
                    {"dim", jobs[i].dim},
                    {"seed", jobs[i].seed},
                    {"return_mean", evals[i].mean},
                    {"return_sd", evals[i].sd}});
    returns[jobs[i].dim].push_back(evals[i].mean);
  }
  for (int d : args.dims) {
    json row{{"kind", "dim"}, {"dim", d}, {"return", summary_json(returns[d])}};
    for (auto dir : {sms::Direction::MetaToBayes, sms::Direction::BayesToMeta}) {
      for (const char* measure : {"state", "output"}) {
        row[std::string(measure) + "_" + sms::to_string(dir)] =
            summary_json(report.values("dim" + std::to_string(d), sms::Layer::Bottleneck, dir, measure));
      }
    }
    rows.push_back(row);
  }
  for (std::size_t x = 0; x < args.dims.size(); ++x) {
    for (std::size_t y = x + 1; y < args.dims.size(); ++y) {
      rows.push_back({{"kind", "return_comparison"},
                      {"dim_a", args.dims[x]},
                      {"dim_b", args.dims[y]},
                      {"welch", welch_json(returns[args.dims[x]], returns[args.dims[y]])}});
    }
  }
  a.write("sweep.jsonl", jsonl(rows));
  std::ostringstream table, lines;
  sms::write_report_table(table, report);
  sms::write_report_jsonl(lines, report);
  a.write("sms_report.txt", table.str());
  a.write("sms_report.jsonl", lines.str());
  a.add_tree(root / "models");
  record(ctx, a, "sweep-bottleneck", jobs.front().config.family.family.id(), "predictive", args.seeds);
  for (int d : args.dims) std::cout << "dim " << d << ": return " << numkit::mean(returns[d]) << '\n';
  return 0;
}

struct GeneralizeArgs {
  std::string mode;
  std::vector<std::string> checkpoints;
  std::string test_family = "dynamic_tiger_0.8";
  int episodes = 1000;
  std::vector<int> targets{6, 7, 8, 9, 10};
  std::optional<long> updates;
  std::optional<double> threshold;
  std::string name;
};

/// Per-variant summaries and pairwise Welch tests of one scalar per model.
void compare_variants(std::vector<json>& rows, const std::string& quantity,
                      const std::map<std::string, std::vector<double>>& by_variant) {
  for (const auto& [v, values] : by_variant) {
    rows.push_back({{"kind", "group"}, {"quantity", quantity}, {"variant", v}, {"summary", summary_json(values)}});
  }
  for (auto a = by_variant.begin(); a != by_variant.end(); ++a) {
    for (auto b = std::next(a); b != by_variant.end(); ++b) {
      rows.push_back({{"kind", "comparison"},
                      {"quantity", quantity},
                      {"variant_a", a->first},
                      {"variant_b", b->first},
                      {"welch", welch_json(a->second, b->second)}});
    }
  }
}

int cmd_generalize_zero_shot(const Context& ctx, const GeneralizeArgs& args) {
  if (args.episodes < 1) throw ConfigError("--episodes must be positive");
  const auto models = load_models(args.checkpoints);
  if (models.empty()) throw ConfigError("zero_shot needs --checkpoints");
  const auto test = envs::FamilyConfig::defaults(envs::TaskFamily::parse(args.test_family));
  const auto seed = ctx.seed_or(0);
  std::vector<training::EvalStats> stats(models.size());
  for (const auto& m : models) {
    const auto arch = agents::Architecture::for_family(test, m.config.model_kind(), m.config.hidden, m.config.bottleneck);
    if (arch.input_dim() != m.params->arch.input_dim() || arch.actor_dim() != m.params->arch.actor_dim()) {
      throw ConfigError(m.path.string() + " cannot act in " + args.test_family);
    }
  }
  numkit::parallel_for(models.size(), ctx.threads, [&](std::size_t i) {
    stats[i] = training::evaluate(*models[i].params, test, args.episodes, seed);
  });
  planners::BayesPolicy bayes(planner_for(test, ctx.solutions()));
  const auto reference = training::evaluate_policy(bayes, test, args.episodes, seed);

  std::vector<json> rows;
  std::map<std::string, std::vector<double>> by_variant;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto v = training::to_string(models[i].config.variant);
    rows.push_back({{"kind", "model"},
                    {"checkpoint", models[i].path.string()},
                    {"variant", v},
                    {"seed", models[i].config.seed},
                    {"train_family", models[i].config.family.family.id()},
                    {"test_family", test.family.id()},
                    {"return", stats_json(stats[i])}});
    by_variant[v].push_back(stats[i].mean);
    seeds.push_back(models[i].config.seed);
  }
  rows.push_back({{"kind", "bayes"}, {"test_family", test.family.id()}, {"return", stats_json(reference)}});
  compare_variants(rows, "return", by_variant);

  Artifacts a(ctx, fs::path("generalize") / (args.name.empty() ? "zero_shot-" + test.family.id() : args.name));
  a.write("generalize.jsonl", jsonl(rows));
  record(ctx, a, "generalize", test.family.id(), "", seeds);
  for (const auto& [v, values] : by_variant) std::cout << v << ": " << numkit::mean(values) << '\n';
  return 0;
}

int cmd_generalize_transfer(const Context& ctx, const GeneralizeArgs& args) {
  if (args.checkpoints.empty()) throw ConfigError("transfer needs the pretrained --checkpoints");
  for (const auto& c : args.checkpoints) {
    if (!fs::exists(c)) throw ConfigError("missing pretrain checkpoint: " + c);
  }
  const auto models = load_models(args.checkpoints);
  const auto root = fs::path("generalize") / (args.name.empty() ? std::string("transfer") : args.name);
  Artifacts a(ctx, root);

  std::vector<training::TrainConfig> configs;
  for (const auto& m : models) {
    if (m.config.family.family.kind != envs::FamilyKind::OracleBandit) {
      throw ConfigError("transfer runs on the oracle bandit; " + m.path.string() + " is " + m.config.family.family.id());
    }
    auto c = m.config;
    c.family.oracle_targets = args.targets;
    if (args.updates) c.n_updates = *args.updates;
    if (c.n_updates < 1) throw ConfigError("--updates must be positive");
    configs.push_back(c);
  }
  for (int t : args.targets) {
    if (t < 1 || t > 10) throw ConfigError("oracle targets must lie in 1..10");
  }
  const auto seed = ctx.seed_or(0);
  double threshold = 0.0;
  json bayes_row;
  {
    planners::BayesPolicy bayes(planner_for(configs.front().family, ctx.solutions()));
    const auto reference = training::evaluate_policy(bayes, configs.front().family, 1000, seed);
    threshold = args.threshold.value_or(0.9 * reference.mean);
    bayes_row = {{"kind", "bayes"}, {"return", stats_json(reference)}, {"threshold", threshold}};
  }

  std::vector<std::vector<training::CurvePoint>> curves(models.size());
  std::vector<std::string> names(models.size());
  numkit::parallel_for(models.size(), ctx.threads, [&](std::size_t i) {
    names[i] = training::to_string(configs[i].variant) + "-s" + std::to_string(configs[i].seed) + "-" +
               std::to_string(i);
    auto result = training::meta_train(configs[i], {}, models[i].params.get());
    curves[i] = std::move(result.curve);
    save_model(a.path() / "models" / (names[i] + ".json"), result.params, configs[i], configs[i].n_updates);
  });

  std::vector<json> rows{bayes_row};
  std::map<std::string, std::vector<double>> auc, reach;
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < models.size(); ++i) {
    std::vector<json> curve;
    double area = 0.0;
    std::optional<long> first;
    for (const auto& p : curves[i]) {
      curve.push_back(training::to_json(p));
      area += p.eval_mean;
      if (!first && p.eval_mean >= threshold) first = p.update;
    }
    area /= static_cast<double>(std::max<std::size_t>(curves[i].size(), 1));
    a.write("curves/" + names[i] + ".jsonl", jsonl(curve));
    const auto v = training::to_string(configs[i].variant);
    // Runs that never reach the threshold count as needing one more evaluation interval.
    const double censored = static_cast<double>(configs[i].n_updates + configs[i].eval_every);
    rows.push_back({{"kind", "model"},
                    {"checkpoint", models[i].path.string()},
                    {"variant", v},
                    {"seed", configs[i].seed},
                    {"updates_to_threshold", first ? json(*first) : json(nullptr)},
                    {"mean_curve_return", area}});
    auc[v].push_back(area);
    reach[v].push_back(first ? static_cast<double>(*first) : censored);
    seeds.push_back(configs[i].seed);
  }
  compare_variants(rows, "mean_curve_return", auc);
  compare_variants(rows, "updates_to_threshold", reach);
  a.write("generalize.jsonl", jsonl(rows));
  a.add_tree(root / "models");
  record(ctx, a, "generalize", configs.front().family.family.id(), "", seeds);
  for (const auto& [v, values] : auc) std::cout << v << ": mean curve return " << numkit::mean(values) << '\n';
  return 0;
}

struct ExportArgs {
  std::string checkpoint, layer = "bottleneck", name;
  int n_traj = 200;
};

double color_of(const envs::FamilyConfig& family, const agents::AgentParams& p, const Tensor& actor) {
  const auto kind = family.family.kind;
  if (kind == envs::FamilyKind::BernoulliBandit || kind == envs::FamilyKind::DynamicBandit) {
    const double m = actor.maxCoeff();
    const double z = (actor.array() - m).exp().sum();
    return std::exp(actor(0, 1) - m) / z;
  }
  Rng unused(0);
  const auto a = agents::sample_action(p, actor, 0, unused, true);
  return family.continuous_actions() ? a.value : static_cast<double>(a.index);
}

std::pair<std::string, json> projection_files(const Projection& p, const std::vector<double>& color, int episode_length,
                                              const std::string& source, const std::string& layer) {
  std::vector<json> rows;
  for (Eigen::Index r = 0; r < p.coords.rows(); ++r) {
    const auto traj = r / episode_length;
    rows.push_back({{"trajectory", traj},
                    {"t", r % episode_length},
                    {"pc1", p.coords(r, 0)},
                    {"pc2", p.coords(r, 1)},
                    {"color", color[static_cast<std::size_t>(r)]},
                    {"highlight", traj == 0}});
  }
  std::vector<std::vector<double>> components;
  for (int k = 0; k < 2; ++k) {
    components.emplace_back(p.components.col(k).data(), p.components.col(k).data() + p.components.rows());
  }
  const json meta{{"source", source},
                  {"layer", layer},
                  {"rows", p.coords.rows()},
                  {"episode_length", episode_length},
                  {"explained_variance", p.explained},
                  {"mean", std::vector<double>(p.mean.data(), p.mean.data() + p.mean.size())},
                  {"components", components}};
  return {jsonl(rows), meta};
}

int cmd_export_states(const Context& ctx, const ExportArgs& args) {
  if (args.n_traj < 1) throw ConfigError("--n-traj must be positive");
  const auto layers = parse_layers({args.layer});
  const auto model = load_model(args.checkpoint);
  const auto& family = model.config.family;
  const auto solution = planner_for(family, ctx.solutions());
  const auto seed = ctx.seed_or(0);
  const auto data = sms::collect_states(solution, model.params, args.n_traj, 0, seed);
  const int T = data.episode_length;

  std::vector<double> agent_color, bayes_color;
  agents::AgentPolicy policy(model.params, true);
  Rng unused(0);
  for (std::size_t r = 0; r < data.records.size(); ++r) {
    if (r % static_cast<std::size_t>(T) == 0) policy.begin_episode(family);
    policy.act(data.records[r], unused);
    agent_color.push_back(color_of(family, *model.params, policy.actor()));
    const auto& b = data.actions[r];
    bayes_color.push_back(family.continuous_actions() ? b.value : static_cast<double>(b.index));
  }

  const auto name = args.name.empty() ? fs::path(args.checkpoint).parent_path().filename().string() + "-" + args.layer
                                      : args.name;
  Artifacts a(ctx, fs::path("export-states") / name);
  const auto agent = projection_files(principal_components(data.layer(layers.front())), agent_color, T,
                                      training::to_string(model.config.variant), args.layer);
  a.write("projection.jsonl", agent.first);
  a.write("projection.json", agent.second.dump(2) + "\n");
  const auto bayes =
      projection_files(principal_components(data.belief), bayes_color, T, "bayes", sms::to_string(sms::Layer::Belief));
  a.write("bayes_projection.jsonl", bayes.first);
  a.write("bayes_projection.json", bayes.second.dump(2) + "\n");
  record(ctx, a, "export-states", family.family.id(), training::to_string(model.config.variant), {seed});
  std::cout << "explained variance " << agent.second["explained_variance"].dump() << " (bayes "
            << bayes.second["explained_variance"].dump() << ")\n";
  return 0;
}

struct SolveArgs {
  std::vector<std::string> families;
};

int cmd_solve(const Context& ctx, const SolveArgs& args) {
  std::vector<envs::TaskFamily> families;
  if (args.families.empty() || (args.families.size() == 1 && args.families.front() == "all")) {
    families = envs::all_families();
  } else {
    for (const auto& f : args.families) families.push_back(envs::TaskFamily::parse(f));
  }
  Artifacts a(ctx, "solutions");
  std::string ids;
  for (const auto& f : families) {
    const auto config = envs::FamilyConfig::defaults(f);
    bool hit = false;
    planners::solve_cached(config, {}, ctx.solutions(), &hit);
    const auto path = planners::solution_path(config, {}, ctx.solutions());
    a.add(fs::relative(path, ctx.out));
    ids += (ids.empty() ? "" : ",") + f.id();
    std::cout << f.id() << (hit ? " cached " : " solved ") << path.string() << '\n';
  }
  record(ctx, a, "solve", ids, "", {});
  return 0;
}

std::vector<std::string> reproducible_args(int argc, const char* const* argv) {
  std::vector<std::string> out;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--out") {
      ++i;
      continue;
    }
    if (arg.rfind("--out=", 0) == 0) continue;
    out.push_back(arg);
  }
  return out;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Meta-learning agents versus Bayes-optimal reference machines"};
  app.require_subcommand(1);
  std::string config, out;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  app.add_option("--config", config, "JSON training config")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Base seed");
  app.add_option("--out", out, std::string("Output root (default $") + kOutputEnv + " or ./runs)");
  app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Meta-train one agent");
  train_cmd->add_option("--family", train.family, "Task family id");
  train_cmd->add_option("--variant", train.variant, "rl2 | predictive | no_kl | joint_rl");
  train_cmd->add_option("--updates", train.updates, "Number of updates");
  train_cmd->add_option("--oracle-targets", train.oracle_targets, "Admissible oracle-bandit targets")->delimiter(',');
  train_cmd->add_option("--name", train.name, "Run directory name");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint against the Bayes reference");
  eval_cmd->add_option("--checkpoint", eval.checkpoint)->required();
  eval_cmd->add_option("--episodes", eval.episodes);
  eval_cmd->add_option("--family", eval.family, "Expected task family");
  eval_cmd->add_option("--name", eval.name);

  SmsArgs sms_args;
  auto add_sizes = [](CLI::App* cmd, SmsSizes& s) {
    cmd->add_option("--n-train", s.n_train, "Training trajectories for the mappings");
    cmd->add_option("--n-test", s.n_test, "Held-out trajectories for state dissimilarity");
    cmd->add_option("--n-eval", s.n_eval, "Episodes for output dissimilarity");
    cmd->add_option("--max-epochs", s.max_epochs, "Mapping training epochs");
  };
  auto* sms_cmd = app.add_subcommand("sms", "State machine simulation report");
  sms_cmd->add_option("--checkpoints", sms_args.checkpoints)->required()->delimiter(',');
  sms_cmd->add_option("--layers", sms_args.layers)->delimiter(',');
  sms_cmd->add_flag("--include-untrained", sms_args.include_untrained, "Add each model's initial weights");
  sms_cmd->add_option("--name", sms_args.name);
  add_sizes(sms_cmd, sms_args.sizes);

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep-bottleneck", "Train and compare bottleneck sizes");
  sweep_cmd->add_option("--family", sweep.family);
  sweep_cmd->add_option("--dims", sweep.dims)->delimiter(',');
  sweep_cmd->add_option("--seeds", sweep.seeds)->delimiter(',');
  sweep_cmd->add_option("--updates", sweep.updates);
  sweep_cmd->add_option("--episodes", sweep.episodes, "Evaluation episodes per model");
  sweep_cmd->add_option("--name", sweep.name);
  add_sizes(sweep_cmd, sweep.sizes);

  GeneralizeArgs gen;
  auto* gen_cmd = app.add_subcommand("generalize", "Zero-shot evaluation or transfer training");
  gen_cmd->add_option("--mode", gen.mode)->required()->check(CLI::IsMember({"zero_shot", "transfer"}));
  gen_cmd->add_option("--checkpoints", gen.checkpoints)->delimiter(',');
  gen_cmd->add_option("--test-family", gen.test_family);
  gen_cmd->add_option("--episodes", gen.episodes);
  gen_cmd->add_option("--targets", gen.targets, "Transfer targets")->delimiter(',');
  gen_cmd->add_option("--updates", gen.updates, "Transfer updates");
  gen_cmd->add_option("--threshold", gen.threshold, "Transfer return threshold");
  gen_cmd->add_option("--name", gen.name);

  ExportArgs exp;
  auto* exp_cmd = app.add_subcommand("export-states", "Principal-component projection of agent and Bayes states");
  exp_cmd->add_option("--checkpoint", exp.checkpoint)->required();
  exp_cmd->add_option("--layer", exp.layer);
  exp_cmd->add_option("--n-traj", exp.n_traj);
  exp_cmd->add_option("--name", exp.name);

  SolveArgs solve;
  auto* solve_cmd = app.add_subcommand("solve", "Build and cache planner solutions");
  solve_cmd->add_option("--family", solve.families, "Family ids, or all")->delimiter(',');

  for (auto* cmd : app.get_subcommands({})) cmd->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  Context ctx;
  ctx.out = out.empty() ? default_output_root() : fs::path(out);
  ctx.threads = threads;
  if (!config.empty()) ctx.config = config;
  ctx.seed = seed;
  ctx.argv = reproducible_args(argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(ctx, train);
    if (eval_cmd->parsed()) return cmd_eval(ctx, eval);
    if (sms_cmd->parsed()) return cmd_sms(ctx, sms_args);
    if (sweep_cmd->parsed()) return cmd_sweep_bottleneck(ctx, sweep);
    if (gen_cmd->parsed()) {
      return gen.mode == "zero_shot" ? cmd_generalize_zero_shot(ctx, gen) : cmd_generalize_transfer(ctx, gen);
    }
    if (exp_cmd->parsed()) return cmd_export_states(ctx, exp);
    if (solve_cmd->parsed()) return cmd_solve(ctx, solve);
  } catch (const numkit::NumericalError& e) {
    std::cerr << "numerical divergence: " << e.what() << '\n';
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace belieflab::cli
