#include "belieflab/cli.hpp"

#include "belieflab/family_json.hpp"
#include "belieflab/numkit/checkpoint.hpp"

#include <Eigen/Eigenvalues>

#include <cstdlib>
#include <fcntl.h>
#include <fstream>
#include <sstream>
#include <sys/file.h>
#include <unistd.h>

namespace belieflab::cli {

using nlohmann::json;

fs::path default_output_root() {
  const char* env = std::getenv(kOutputEnv);
  return env && *env ? fs::path(env) : fs::path("runs");
}

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + tmp);
  }
  fs::rename(tmp, path);
}

}  // namespace

fs::path sidecar_path(const fs::path& checkpoint) {
  auto p = checkpoint;
  p.replace_extension(".meta.json");
  return p;
}

void save_model(const fs::path& checkpoint, const agents::AgentParams& params, const training::TrainConfig& config,
                long steps) {
  const json meta{{"family", config.family.family.id()},
                  {"variant", training::to_string(config.variant)},
                  {"bottleneck", config.bottleneck},
                  {"kl_coeff", config.effective_kl()},
                  {"detach_belief", config.detach_belief()},
                  {"steps", steps},
                  {"config", training::to_json(config)}};
  write_text(checkpoint, numkit::serialize_parameters(params.set));
  write_text(sidecar_path(checkpoint), meta.dump(2) + "\n");
}

Model load_model(const fs::path& checkpoint) {
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint not found: " + checkpoint.string());
  const auto meta_path = sidecar_path(checkpoint);
  if (!fs::exists(meta_path)) throw ConfigError("checkpoint sidecar not found: " + meta_path.string());
  Model m;
  m.path = checkpoint;
  try {
    const auto meta = json::parse(read_text(meta_path));
    m.config = training::train_config_from_json(meta.at("config"));
    m.steps = meta.at("steps").get<long>();
    m.params = std::make_shared<const agents::AgentParams>(
        agents::bind_agent(m.config.architecture(), numkit::deserialize_parameters(read_text(checkpoint))));
  } catch (const json::exception& e) {
    throw ConfigError("bad checkpoint " + checkpoint.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError("bad checkpoint " + checkpoint.string() + ": " + e.what());
  }
  return m;
}

Model untrained_model(const training::TrainConfig& config) {
  Rng init = derive_rng(config.seed, {0});
  Model m;
  m.config = config;
  m.params = std::make_shared<const agents::AgentParams>(agents::init_agent(config.architecture(), init));
  return m;
}

Model train_into(const fs::path& dir, const training::TrainConfig& config, bool* reused) {
  if (reused) *reused = false;
  const auto checkpoint = dir / "checkpoint.json";
  const auto config_json = training::to_json(config);
  if (fs::exists(checkpoint) && fs::exists(sidecar_path(checkpoint)) && fs::exists(dir / "curve.jsonl")) {
    auto m = load_model(checkpoint);
    if (training::to_json(m.config) == config_json && m.steps == config.n_updates) {
      if (reused) *reused = true;
      return m;
    }
  }
  fs::create_directories(dir);
  write_text(dir / "config.json", config_json.dump(2) + "\n");
  std::ostringstream curve;
  training::TrainCallbacks callbacks;
  callbacks.on_curve = [&](const training::CurvePoint& p) { curve << training::to_json(p).dump() << '\n'; };
  callbacks.on_checkpoint = [&](long update, const agents::AgentParams& p) {
    save_model(dir / ("checkpoint-" + std::to_string(update) + ".json"), p, config, update);
  };
  auto result = training::meta_train(config, callbacks);
  write_text(dir / "curve.jsonl", curve.str());
  save_model(checkpoint, result.params, config, config.n_updates);
  Model m;
  m.config = config;
  m.steps = config.n_updates;
  m.path = checkpoint;
  m.params = std::make_shared<const agents::AgentParams>(std::move(result.params));
  return m;
}

std::shared_ptr<const planners::PlannerSolution> planner_for(const envs::FamilyConfig& family,
                                                             const fs::path& cache_dir) {
  return std::make_shared<const planners::PlannerSolution>(planners::solve_cached(family, {}, cache_dir));
}

json to_json(const ManifestEntry& e) {
  return {{"id", e.id},       {"command", e.command},         {"family", e.family},
          {"variant", e.variant}, {"seeds", e.seeds},          {"config_path", e.config_path},
          {"argv", e.argv},   {"artifacts", e.artifacts}};
}

ManifestEntry manifest_entry_from_json(const json& j) {
  ManifestEntry e;
  j.at("id").get_to(e.id);
  j.at("command").get_to(e.command);
  j.at("family").get_to(e.family);
  j.at("variant").get_to(e.variant);
  j.at("seeds").get_to(e.seeds);
  j.at("config_path").get_to(e.config_path);
  j.at("argv").get_to(e.argv);
  j.at("artifacts").get_to(e.artifacts);
  return e;
}

void append_manifest(const fs::path& out, const ManifestEntry& entry) {
  fs::create_directories(out);
  const auto path = out / "manifest.jsonl";
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw std::runtime_error("cannot open manifest " + path.string());
  if (::flock(fd, LOCK_EX) != 0) {
    ::close(fd);
    throw std::runtime_error("cannot lock manifest " + path.string());
  }
  const auto line = to_json(entry).dump() + "\n";
  const auto written = ::write(fd, line.data(), line.size());
  ::flock(fd, LOCK_UN);
  ::close(fd);
  if (written != static_cast<ssize_t>(line.size())) throw std::runtime_error("short write to manifest");
}

std::vector<ManifestEntry> read_manifest(const fs::path& out) {
  std::vector<ManifestEntry> entries;
  std::ifstream in(out / "manifest.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) entries.push_back(manifest_entry_from_json(json::parse(line)));
  }
  return entries;
}

Projection principal_components(const Tensor& states) {
  if (states.rows() < 2) throw std::invalid_argument("principal_components: need at least two states");
  Projection p;
  p.mean = states.colwise().mean();
  const Tensor centered = states.rowwise() - p.mean;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(states.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const auto d = cov.rows();
  const double total = std::max(eig.eigenvalues().sum(), 0.0);
  p.components = Tensor::Zero(d, 2);
  for (int k = 0; k < 2 && k < d; ++k) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    p.components.col(k) = v;
    p.explained[static_cast<std::size_t>(k)] = total > 0.0 ? std::max(eig.eigenvalues()(d - 1 - k), 0.0) / total : 0.0;
  }
  p.coords = centered * p.components;
  return p;
}

}  // namespace belieflab::cli
