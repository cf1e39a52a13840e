#pragma once

#include "belieflab/planners.hpp"
#include "belieflab/sms.hpp"
#include "belieflab/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace belieflab::cli {

namespace fs = std::filesystem;
using numkit::Tensor;

/// Bad flags, unreadable inputs or inconsistent configs (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kOutputEnv = "BELIEFLAB_OUT";
/// $BELIEFLAB_OUT, or ./runs.
fs::path default_output_root();

/// Entry point of the command-line tool; returns the process exit code.
int run(int argc, const char* const* argv);

struct Context {
  fs::path out;
  int threads = 1;
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  /// Arguments that reproduce the command, without the output root.
  std::vector<std::string> argv;

  [[nodiscard]] std::uint64_t seed_or(std::uint64_t fallback) const { return seed.value_or(fallback); }
  [[nodiscard]] fs::path solutions() const { return out / "solutions"; }
};

// Models on disk: numkit checkpoint plus a sidecar with the training config.

struct Model {
  std::shared_ptr<const agents::AgentParams> params;
  training::TrainConfig config;
  long steps = 0;
  fs::path path;
};

fs::path sidecar_path(const fs::path& checkpoint);
void save_model(const fs::path& checkpoint, const agents::AgentParams& params, const training::TrainConfig& config,
                long steps);
Model load_model(const fs::path& checkpoint);
/// The weights a training run with this config starts from.
Model untrained_model(const training::TrainConfig& config);

/// Trains into `dir` (config.json, curve.jsonl, checkpoint.json and sidecar),
/// or loads the finished run already there when its config matches.
Model train_into(const fs::path& dir, const training::TrainConfig& config, bool* reused = nullptr);

std::shared_ptr<const planners::PlannerSolution> planner_for(const envs::FamilyConfig& family,
                                                             const fs::path& cache_dir);

struct ManifestEntry {
  std::string id;
  std::string command;
  std::string family;
  std::string variant;
  std::vector<std::uint64_t> seeds;
  std::string config_path;
  std::vector<std::string> argv;
  std::vector<std::string> artifacts;  // relative to the output root
};

nlohmann::json to_json(const ManifestEntry& e);
ManifestEntry manifest_entry_from_json(const nlohmann::json& j);
/// Appends one line under an exclusive lock on the manifest file.
void append_manifest(const fs::path& out, const ManifestEntry& entry);
std::vector<ManifestEntry> read_manifest(const fs::path& out);

/// Top-two principal components of the rows of `states`.
struct Projection {
  Tensor coords;       // n x 2
  Tensor components;   // d x 2, columns are unit loadings
  Eigen::RowVectorXd mean;
  std::array<double, 2> explained{0.0, 0.0};  // fractions of total variance
};

/// Exact covariance eigendecomposition; each component's largest-magnitude
/// loading is positive. A one-dimensional input gets a zero second component.
Projection principal_components(const Tensor& states);

}  // namespace belieflab::cli
