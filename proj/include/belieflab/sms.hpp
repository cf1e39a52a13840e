#pragma once

#include "belieflab/agents.hpp"
#include "belieflab/numkit/parameters.hpp"
#include "belieflab/planners.hpp"

#include <json.hpp>

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace belieflab::sms {

using numkit::Tensor;

/// Bottleneck and recurrent layers belong to agents; Belief is the Bayes machine's state.
enum class Layer { Bottleneck, Recurrent, Belief };
std::string to_string(Layer layer);
Layer parse_layer(const std::string& text);

enum class Direction { MetaToBayes, BayesToMeta };
std::string to_string(Direction d);

/// A state machine driven by the visible record stream, with an output
/// function that can act on arbitrary (e.g. mapped) states.
class Machine {
 public:
  virtual ~Machine() = default;
  virtual void begin_episode() = 0;
  virtual void consume(const envs::StepRecord& record) = 0;
  [[nodiscard]] virtual Tensor state(Layer layer) const = 0;
  [[nodiscard]] virtual int state_dim(Layer layer) const = 0;
  /// Action of the machine's own output on its current state.
  virtual envs::Action act(const envs::StepRecord& latest, Rng& rng) = 0;
  /// Output function applied to a given state of `layer` (one row).
  virtual envs::Action output(Layer layer, const Tensor& state, const envs::StepRecord& latest, Rng& rng) = 0;
  [[nodiscard]] virtual const envs::FamilyConfig& config() const = 0;
};

/// Filter plus greedy planner; its single layer is the encoded belief.
class BayesMachine final : public Machine {
 public:
  explicit BayesMachine(std::shared_ptr<const planners::PlannerSolution> solution);
  void begin_episode() override;
  void consume(const envs::StepRecord& record) override;
  [[nodiscard]] Tensor state(Layer layer) const override;
  [[nodiscard]] int state_dim(Layer layer) const override;
  envs::Action act(const envs::StepRecord& latest, Rng& rng) override;
  envs::Action output(Layer layer, const Tensor& state, const envs::StepRecord& latest, Rng& rng) override;
  [[nodiscard]] const envs::FamilyConfig& config() const override { return solution_->config(); }
  [[nodiscard]] const belief::BeliefState& belief() const { return filter_.belief(); }

 private:
  std::shared_ptr<const planners::PlannerSolution> solution_;
  belief::Filter filter_;
};

/// Recurrent agent; sampling outputs unless `greedy`.
class AgentMachine final : public Machine {
 public:
  AgentMachine(std::shared_ptr<const agents::AgentParams> params, envs::FamilyConfig config, bool greedy = false);
  void begin_episode() override;
  void consume(const envs::StepRecord& record) override;
  [[nodiscard]] Tensor state(Layer layer) const override;
  [[nodiscard]] int state_dim(Layer layer) const override;
  envs::Action act(const envs::StepRecord& latest, Rng& rng) override;
  envs::Action output(Layer layer, const Tensor& state, const envs::StepRecord& latest, Rng& rng) override;
  [[nodiscard]] const envs::FamilyConfig& config() const override { return config_; }

 private:
  std::shared_ptr<const agents::AgentParams> params_;
  envs::FamilyConfig config_;
  bool greedy_;
  Tensor hidden_;
  Tensor bottleneck_;
  Tensor actor_;
};

/// Time-aligned states of the Bayes machine and (optionally) one agent along
/// trajectories generated by the Bayes-optimal policy. Row r belongs to
/// trajectory r / episode_length; the state is the one reached after consuming
/// that step's record, i.e. the state the action was chosen from.
struct StateDataset {
  int episode_length = 0;
  int n_train = 0;
  int n_test = 0;
  std::vector<envs::StepRecord> records;
  std::vector<envs::Action> actions;  // taken by the Bayes-optimal policy
  Tensor belief;
  Tensor recurrent;  // empty without an agent
  Tensor bottleneck;

  [[nodiscard]] int trajectories() const { return n_train + n_test; }
  [[nodiscard]] const Tensor& layer(Layer l) const;
  [[nodiscard]] Tensor train(Layer l) const;
  [[nodiscard]] Tensor test(Layer l) const;
};

StateDataset collect_states(std::shared_ptr<const planners::PlannerSolution> solution,
                            std::shared_ptr<const agents::AgentParams> agent, int n_train, int n_test,
                            std::uint64_t seed);

/// One record per timestep: the trajectory log fields plus the state vectors.
void write_state_log(std::ostream& out, const StateDataset& data);

struct MappingOptions {
  int max_epochs = 500;
  int patience = 20;
  int batch_size = 64;
  double learning_rate = 1e-3;
  /// Fraction of training trajectories held out for early stopping.
  double validation_fraction = 0.1;
};

/// ReLU MLP with hidden layers 64, 128, 64 and a linear output.
class MappingNet {
 public:
  MappingNet(int in, int out, Rng& rng);
  [[nodiscard]] Tensor predict(const Tensor& x) const;
  [[nodiscard]] int input_dim() const { return in_; }
  [[nodiscard]] int output_dim() const { return out_; }
  [[nodiscard]] numkit::ParameterSet& parameters() { return params_; }
  [[nodiscard]] const numkit::ParameterSet& parameters() const { return params_; }

 private:
  int in_;
  int out_;
  numkit::ParameterSet params_;
};

struct MappingFit {
  MappingNet net;
  int epochs = 0;
  double best_validation = 0.0;
  double initial_train_mse = 0.0;
  double final_train_mse = 0.0;
};

/// Minimizes MSE from source to target rows; rows come in blocks of
/// `episode_length` per trajectory, and validation holds out whole trajectories.
MappingFit train_mapping(const Tensor& source, const Tensor& target, int episode_length, const MappingOptions& options,
                         std::uint64_t seed);

/// Mean over rows of the squared error averaged over target dimensions.
double mean_squared_error(const Tensor& prediction, const Tensor& target);
double state_dissimilarity(const MappingNet& net, const Tensor& source_test, const Tensor& target_test);

struct OutputComparison {
  double value = 0.0;
  double mapped_mean = 0.0;
  double own_mean = 0.0;
  std::vector<double> mapped_returns;
  std::vector<double> own_returns;
};

/// |mean return when the target output acts on mapped source states - mean
/// return when the source acts on its own states|. Both estimates use the
/// same per-episode seeds.
OutputComparison output_dissimilarity(const MappingNet& net, Machine& source, Layer source_layer, Machine& target,
                                      Layer target_layer, int n_episodes, std::uint64_t seed);

struct SmsOptions {
  int n_train = 500;
  int n_test = 500;
  int n_eval = 500;
  MappingOptions mapping;
  std::uint64_t seed = 0;
  /// Workers over models; results do not depend on it.
  int threads = 1;
};

/// The four measures between a meta side and a Bayes side.
struct LayerMeasures {
  double state_meta_to_bayes = 0.0;
  double output_meta_to_bayes = 0.0;
  double state_bayes_to_meta = 0.0;
  double output_bayes_to_meta = 0.0;
};

LayerMeasures compare_layers(const StateDataset& data, Machine& meta, Layer meta_layer, Machine& bayes,
                             Layer bayes_layer, const SmsOptions& options);

struct ModelGroup {
  std::string label;
  std::vector<std::uint64_t> seeds;
  std::vector<std::shared_ptr<const agents::AgentParams>> models;
};

struct ReportRow {
  std::string model;
  std::uint64_t seed = 0;
  Layer layer = Layer::Bottleneck;
  Direction direction = Direction::MetaToBayes;
  std::string measure;  // "state" | "output"
  double value = 0.0;
};

struct ReportAggregate {
  std::string model;
  Layer layer = Layer::Bottleneck;
  Direction direction = Direction::MetaToBayes;
  std::string measure;
  double mean = 0.0;
  double sem = 0.0;
  int n = 0;
};

struct ReportComparison {
  std::string model_a;
  std::string model_b;
  Layer layer = Layer::Bottleneck;
  Direction direction = Direction::MetaToBayes;
  std::string measure;
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

struct SmsReport {
  std::vector<ReportRow> rows;
  std::vector<ReportAggregate> aggregates;
  std::vector<ReportComparison> comparisons;

  [[nodiscard]] std::vector<double> values(const std::string& model, Layer layer, Direction direction,
                                           const std::string& measure) const;
};

/// All four measures for every layer of every model, aggregated per group with
/// pairwise Welch t-tests between groups of at least two models.
SmsReport sms_full_report(const std::vector<ModelGroup>& groups,
                          std::shared_ptr<const planners::PlannerSolution> solution, const std::vector<Layer>& layers,
                          const SmsOptions& options);

void write_report_table(std::ostream& out, const SmsReport& report);
void write_report_jsonl(std::ostream& out, const SmsReport& report);

}  // namespace belieflab::sms
