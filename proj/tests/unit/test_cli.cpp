#include "belieflab/cli.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace belieflab;
using namespace belieflab::cli;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("belieflab-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  int call(std::vector<std::string> args, const fs::path& out) {
    args.insert(args.begin(), {"belieflab", "--out", out.string()});
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  }

  static std::vector<nlohmann::json> lines(const fs::path& p) {
    std::vector<nlohmann::json> out;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) out.push_back(nlohmann::json::parse(line));
    return out;
  }

  fs::path root_;
};

}  // namespace

TEST(Projection, RankOneDataHasNoSecondComponent) {
  Tensor x(50, 3);
  for (int i = 0; i < 50; ++i) x.row(i) << 0.1 * i, -0.2 * i, 0.3 * i;
  const auto p = principal_components(x);
  EXPECT_NEAR(p.explained[0], 1.0, 1e-12);
  EXPECT_NEAR(p.explained[1], 0.0, 1e-12);
  EXPECT_GT(p.components(2, 0), 0.0);
  EXPECT_NEAR(p.components.col(0).norm(), 1.0, 1e-12);
  EXPECT_NEAR(std::abs(p.components(2, 0)), 3.0 / std::sqrt(14.0), 1e-12);
}

TEST(Projection, OneDimensionalStates) {
  Tensor x(4, 1);
  x << 0.1, 0.5, 0.9, 0.3;
  const auto p = principal_components(x);
  EXPECT_EQ(p.explained[1], 0.0);
  EXPECT_NEAR(p.coords(1, 0), 0.5 - 0.45, 1e-15);
  EXPECT_TRUE(p.coords.col(1).isZero());
}

TEST(Projection, MatchesEigenvectorsOfKnownCovariance) {
  // Points on an axis-aligned ellipse have covariance diag(a^2/2, b^2/2).
  const int n = 400;
  Tensor x(n, 2);
  for (int i = 0; i < n; ++i) {
    const double t = 2.0 * M_PI * i / n;
    x.row(i) << 1.0 * std::sin(t), 3.0 * std::cos(t);
  }
  const auto p = principal_components(x);
  EXPECT_NEAR(p.components(1, 0), 1.0, 1e-9);
  EXPECT_NEAR(p.components(0, 1), 1.0, 1e-9);
  EXPECT_NEAR(p.explained[0], 0.9, 1e-9);
  EXPECT_NEAR(p.explained[1], 0.1, 1e-9);
}

TEST(Projection, InvariantToRowOrderUpToSign) {
  Rng rng(3);
  std::normal_distribution<double> normal;
  Tensor x(200, 5);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng) * (1.0 + static_cast<double>(i % 5));
  Tensor y = x.colwise().reverse();
  const auto a = principal_components(x);
  const auto b = principal_components(y);
  for (int k = 0; k < 2; ++k) {
    EXPECT_NEAR(std::abs(a.components.col(k).dot(b.components.col(k))), 1.0, 1e-10);
    EXPECT_NEAR(a.explained[static_cast<std::size_t>(k)], b.explained[static_cast<std::size_t>(k)], 1e-12);
  }
  EXPECT_NEAR((a.coords.colwise().reverse() - b.coords).cwiseAbs().maxCoeff(), 0.0, 1e-9);
}

TEST_F(CliTest, ManifestIsAppendOnly) {
  ManifestEntry e{"train/x", "train", "oracle_bandit", "rl2", {1, 2}, "", {"train", "--seed", "1"}, {"a/b.json"}};
  append_manifest(root_, e);
  e.id = "train/y";
  append_manifest(root_, e);
  const auto entries = read_manifest(root_);
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0].id, "train/x");
  EXPECT_EQ(entries[1].argv, e.argv);
  EXPECT_EQ(to_json(entries[1]), to_json(e));
}

TEST_F(CliTest, ModelRoundTripAndUntrainedWeights) {
  auto config = training::TrainConfig::defaults(envs::FamilyConfig::defaults(envs::TaskFamily::parse("oracle_bandit")),
                                                training::Variant::NoKl);
  config.hidden = 8;
  config.n_updates = 3;
  config.eval_every = 3;
  config.eval_episodes = 4;
  config.seed = 5;
  bool reused = true;
  const auto trained = train_into(root_ / "run", config, &reused);
  EXPECT_FALSE(reused);
  const auto loaded = load_model(root_ / "run" / "checkpoint.json");
  EXPECT_EQ(training::to_json(loaded.config), training::to_json(config));
  EXPECT_EQ(loaded.steps, 3);
  for (std::size_t i = 0; i < loaded.params->set.size(); ++i) {
    EXPECT_EQ(loaded.params->set.value(i), trained.params->set.value(i));
  }
  const auto meta = nlohmann::json::parse(slurp(root_ / "run" / "checkpoint.meta.json"));
  EXPECT_EQ(meta.at("family"), "oracle_bandit");
  EXPECT_EQ(meta.at("kl_coeff"), 0.0);
  EXPECT_EQ(meta.at("bottleneck"), config.bottleneck);

  train_into(root_ / "run", config, &reused);
  EXPECT_TRUE(reused);
  config.n_updates = 0;
  const auto initial = training::meta_train(config);
  const auto untrained = untrained_model(config);
  for (std::size_t i = 0; i < initial.params.set.size(); ++i) {
    EXPECT_EQ(untrained.params->set.value(i), initial.params.set.value(i));
  }
  EXPECT_THROW(load_model(root_ / "none.json"), ConfigError);
}

TEST_F(CliTest, ExitCodes) {
  const auto out = root_ / "o";
  EXPECT_EQ(call({"train", "--family", "no_such_family"}, out), 2);
  EXPECT_EQ(call({"train"}, out), 2);
  EXPECT_EQ(call({"bogus"}, out), 2);
  EXPECT_EQ(call({"eval", "--checkpoint", (root_ / "missing.json").string()}, out), 2);
  EXPECT_EQ(call({"sms", "--checkpoints", (root_ / "missing.json").string()}, out), 2);
  EXPECT_EQ(call({"generalize", "--mode", "transfer", "--checkpoints", (root_ / "missing.json").string()}, out), 2);
  EXPECT_EQ(call({"generalize", "--mode", "sideways"}, out), 2);
  // A learning rate this large overflows the weights within a few updates.
  std::ofstream(root_ / "huge.json") << R"({"lr_rl2": 1e300, "max_grad_norm": 1e300})";
  EXPECT_EQ(call({"--config", (root_ / "huge.json").string(), "train", "--family", "stationary_tiger_0.8", "--variant",
                  "rl2", "--updates", "5"},
                 out),
            3);
  EXPECT_EQ(call({"--help"}, out), 0);
}

TEST_F(CliTest, TrainEvalAndReferenceReturn) {
  const auto out = root_ / "o";
  ASSERT_EQ(call({"--seed", "3", "train", "--family", "oracle_bandit", "--variant", "rl2", "--updates", "4"}, out), 0);
  const auto dir = out / "train" / "oracle_bandit-rl2-s3";
  for (const char* f : {"checkpoint.json", "checkpoint.meta.json", "config.json", "curve.jsonl"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const auto curve = lines(dir / "curve.jsonl");
  ASSERT_EQ(curve.size(), 1u);
  EXPECT_EQ(curve[0].at("update"), 4);
  EXPECT_TRUE(curve[0].contains("a2c_policy"));

  EXPECT_EQ(call({"eval", "--checkpoint", (dir / "checkpoint.json").string(), "--episodes", "0"}, out), 2);
  EXPECT_EQ(call({"eval", "--checkpoint", (dir / "checkpoint.json").string(), "--family", "bernoulli_bandit"}, out), 2);
  ASSERT_EQ(call({"eval", "--checkpoint", (dir / "checkpoint.json").string(), "--episodes", "2000"}, out), 0);
  const auto summary = nlohmann::json::parse(slurp(out / "eval" / "oracle_bandit-rl2-s3-s0" / "eval.json"));
  const double bayes = summary.at("bayes").at("mean").get<double>();
  const double sem = summary.at("bayes").at("sem").get<double>();
  EXPECT_NEAR(bayes, 22.04, 4.0 * sem + 0.01);
  EXPECT_TRUE(summary.at("agent").contains("sd"));
  EXPECT_EQ(lines(out / "eval" / "oracle_bandit-rl2-s3-s0" / "returns.jsonl").size(), 2000u);

  const auto manifest = read_manifest(out);
  ASSERT_EQ(manifest.size(), 2u);
  for (const auto& e : manifest) {
    for (const auto& a : e.artifacts) EXPECT_TRUE(fs::exists(out / a)) << a;
  }
  EXPECT_EQ(manifest[0].variant, "rl2");
  EXPECT_EQ(manifest[0].seeds, std::vector<std::uint64_t>{3});
}

TEST_F(CliTest, VariantFlagsReachTheConfig) {
  const auto out = root_ / "o";
  ASSERT_EQ(call({"train", "--family", "stationary_tiger_0.8", "--variant", "no_kl", "--updates", "1"}, out), 0);
  ASSERT_EQ(call({"train", "--family", "stationary_tiger_0.8", "--variant", "joint_rl", "--updates", "1"}, out), 0);
  const auto no_kl = load_model(out / "train" / "stationary_tiger_0.8-no_kl-s0" / "checkpoint.json");
  const auto joint = load_model(out / "train" / "stationary_tiger_0.8-joint_rl-s0" / "checkpoint.json");
  EXPECT_EQ(no_kl.config.effective_kl(), 0.0);
  EXPECT_FALSE(joint.config.detach_belief());
  EXPECT_GT(joint.config.effective_kl(), 0.0);
}

TEST_F(CliTest, RerunFromManifestIsByteIdentical) {
  const auto a = root_ / "a";
  const auto b = root_ / "b";
  ASSERT_EQ(call({"--seed", "2", "train", "--family", "stationary_tiger_0.8", "--variant", "predictive", "--updates",
                  "3"},
                 a),
            0);
  const auto ckpt = (a / "train" / "stationary_tiger_0.8-predictive-s2" / "checkpoint.json").string();
  ASSERT_EQ(call({"--threads", "2", "sms", "--checkpoints", ckpt + "," + ckpt, "--include-untrained", "--n-train", "10",
                  "--n-test", "5", "--n-eval", "10", "--max-epochs", "2"},
                 a),
            0);
  ASSERT_EQ(call({"export-states", "--checkpoint", ckpt, "--n-traj", "4"}, a), 0);
  for (const auto& e : read_manifest(a)) {
    std::vector<std::string> args = e.argv;
    ASSERT_EQ(call(args, b), 0) << e.id;
    for (const auto& f : e.artifacts) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
}

TEST_F(CliTest, ExportStatesShapeAndColors) {
  const auto out = root_ / "o";
  ASSERT_EQ(call({"train", "--family", "bernoulli_bandit", "--variant", "rl2", "--updates", "1"}, out), 0);
  const auto ckpt = (out / "train" / "bernoulli_bandit-rl2-s0" / "checkpoint.json").string();
  EXPECT_EQ(call({"export-states", "--checkpoint", ckpt, "--layer", "belief"}, out), 2);
  ASSERT_EQ(call({"export-states", "--checkpoint", ckpt, "--layer", "recurrent", "--n-traj", "7"}, out), 0);
  const auto dir = out / "export-states" / "bernoulli_bandit-rl2-s0-recurrent";
  const auto rows = lines(dir / "projection.jsonl");
  ASSERT_EQ(rows.size(), 7u * 40);
  int highlighted = 0;
  for (const auto& r : rows) {
    const double c = r.at("color").get<double>();
    EXPECT_GE(c, 0.0);
    EXPECT_LE(c, 1.0);
    highlighted += r.at("highlight").get<bool>() ? 1 : 0;
  }
  EXPECT_EQ(highlighted, 40);
  EXPECT_EQ(lines(dir / "bayes_projection.jsonl").size(), 7u * 40);
  const auto meta = nlohmann::json::parse(slurp(dir / "projection.json"));
  EXPECT_EQ(meta.at("components").size(), 2u);
  EXPECT_EQ(meta.at("components")[0].size(), 256u);
}

TEST_F(CliTest, TigerBeliefExportIsRankOne) {
  const auto out = root_ / "o";
  ASSERT_EQ(call({"train", "--family", "dynamic_tiger_0.8", "--variant", "rl2", "--updates", "1"}, out), 0);
  ASSERT_EQ(call({"export-states", "--checkpoint", (out / "train" / "dynamic_tiger_0.8-rl2-s0" / "checkpoint.json").string(),
                  "--n-traj", "10"},
                 out),
            0);
  const auto meta = nlohmann::json::parse(slurp(out / "export-states" / "dynamic_tiger_0.8-rl2-s0-bottleneck" / "bayes_projection.json"));
  EXPECT_EQ(meta.at("explained_variance")[1].get<double>(), 0.0);
  EXPECT_NEAR(meta.at("explained_variance")[0].get<double>(), 1.0, 1e-12);
}

TEST_F(CliTest, ZeroShotOnTrainingFamilyMatchesEval) {
  const auto out = root_ / "o";
  ASSERT_EQ(call({"train", "--family", "dynamic_tiger_0.7", "--variant", "rl2", "--updates", "2"}, out), 0);
  ASSERT_EQ(call({"--seed", "1", "train", "--family", "dynamic_tiger_0.7", "--variant", "rl2", "--updates", "2"}, out), 0);
  const auto c0 = (out / "train" / "dynamic_tiger_0.7-rl2-s0" / "checkpoint.json").string();
  const auto c1 = (out / "train" / "dynamic_tiger_0.7-rl2-s1" / "checkpoint.json").string();
  ASSERT_EQ(call({"generalize", "--mode", "zero_shot", "--checkpoints", c0 + "," + c1, "--test-family",
                  "dynamic_tiger_0.7", "--episodes", "50"},
                 out),
            0);
  ASSERT_EQ(call({"eval", "--checkpoint", c0, "--episodes", "50", "--name", "e0"}, out), 0);
  const auto rows = lines(out / "generalize" / "zero_shot-dynamic_tiger_0.7" / "generalize.jsonl");
  const auto eval = nlohmann::json::parse(slurp(out / "eval" / "e0" / "eval.json"));
  EXPECT_EQ(rows.at(0).at("return").at("mean"), eval.at("agent").at("mean"));
  EXPECT_EQ(rows.at(2).at("return").at("mean"), eval.at("bayes").at("mean"));
  EXPECT_EQ(call({"generalize", "--mode", "zero_shot", "--checkpoints", c0, "--test-family", "oracle_bandit"}, out), 2);
}
