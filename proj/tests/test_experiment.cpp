#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "mvlab/checkpoint.hpp"
#include "mvlab/dataset_io.hpp"
#include "mvlab/errors.hpp"
#include "mvlab/experiment.hpp"

using namespace mvlab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() /
           ("mvlab_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

// Small enough that a full run takes well under a second.
ExperimentConfig toy_config(const std::string& out_dir) {
  ExperimentConfig cfg = default_experiment();
  cfg.run_id = "toy";
  cfg.output_dir = out_dir;
  cfg.data.k = 2;
  cfg.data.d = 8;
  cfg.data.patches = 4;
  cfg.arch.k = 2;
  cfg.arch.d = 8;
  cfg.arch.patches = 4;
  cfg.arch.hidden = 8;
  cfg.n_samples = 48;
  cfg.train.n_clean = 1;
  cfg.train.n_warmup = 0;
  cfg.train.n_adv = 2;
  cfg.train.batch_size = 24;
  cfg.train.attack.steps = 2;
  cfg.train.eval_subset = 24;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("empty config json yields the documented defaults") {
  const ExperimentConfig cfg = experiment_from_json(nlohmann::json::object());
  CHECK(cfg.run_id == "run");
  CHECK(cfg.output_dir.empty());
  CHECK(cfg.n_samples == 2000);
  CHECK(cfg.data_seed == 1);
  CHECK(cfg.data.k == 5);
  CHECK(cfg.data.d == 30);
  CHECK(cfg.data.patches == 25);
  CHECK(cfg.arch.k == cfg.data.k);
  CHECK(cfg.arch.d == cfg.data.d);
  CHECK(cfg.arch.patches == cfg.data.patches);
  CHECK(cfg.arch.hidden == 40);
  CHECK(cfg.train.loss.method == Method::kCktat);
  CHECK(cfg.probes.enabled);
  CHECK(cfg.probes.threshold == 0.5);
}

TEST_CASE("json round trip is exact") {
  ExperimentConfig cfg = default_experiment();
  cfg.run_id = "roundtrip";
  cfg.data.mu = 0.25;
  cfg.data.simplified = true;
  cfg.data.patches = 4;
  cfg.arch.patches = 4;
  cfg.train.loss.method = Method::kTrades;
  cfg.train.loss.tau = 4.0;
  cfg.train.loss.beta = 2.5;
  cfg.train.attack.clamp_box = {-1.0, 1.0};
  cfg.train.attack.objective = AttackObjective::kKlVsClean;

  const nlohmann::json j1 = experiment_to_json(cfg);
  const ExperimentConfig back = experiment_from_json(j1);
  const nlohmann::json j2 = experiment_to_json(back);
  CHECK(j1 == j2);
  CHECK(back.data.simplified);
  CHECK(back.train.attack.clamp_box.has_value());
  CHECK(back.train.attack.clamp_box->second == 1.0);
  CHECK(back.train.loss.method == Method::kTrades);
}

TEST_CASE("unknown keys are rejected by dotted path") {
  auto parse = [](const nlohmann::json& j) { return experiment_from_json(j); };
  CHECK_THROWS_WITH_AS(parse({{"bogus", 1}}),
                       doctest::Contains("unknown key 'bogus'"), ConfigError);
  CHECK_THROWS_WITH_AS(parse({{"data", {{"epsilonn", 0.1}}}}),
                       doctest::Contains("data.epsilonn"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse({{"train", {{"attack", {{"epsilonn", 0.1}}}}}}),
      doctest::Contains("train.attack.epsilonn"), ConfigError);
  CHECK_THROWS_WITH_AS(parse({{"train", {{"loss", {{"temp", 2}}}}}}),
                       doctest::Contains("train.loss.temp"), ConfigError);
  CHECK_THROWS_WITH_AS(parse({{"probes", {{"threshhold", 0.4}}}}),
                       doctest::Contains("probes.threshhold"), ConfigError);
}

TEST_CASE("bad values and enum names carry their location") {
  auto parse = [](const nlohmann::json& j) { return experiment_from_json(j); };
  CHECK_THROWS_WITH_AS(parse({{"data", {{"mu", "lots"}}}}),
                       doctest::Contains("data.mu"), ConfigError);
  CHECK_THROWS_WITH_AS(parse({{"arch", {{"activation", "sigmoid"}}}}),
                       doctest::Contains("arch.activation"), ConfigError);
  CHECK_THROWS_WITH_AS(parse({{"train", {{"loss", {{"method", "adam"}}}}}}),
                       doctest::Contains("train.loss.method"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse({{"train", {{"attack", {{"objective", "fast"}}}}}}),
      doctest::Contains("train.attack.objective"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse({{"train", {{"attack", {{"clamp_box", {0.0, 1.0, 2.0}}}}}}}),
      doctest::Contains("clamp_box must be [lo, hi]"), ConfigError);
  CHECK_THROWS_AS(parse(nlohmann::json::array({1, 2})), ConfigError);
}

TEST_CASE("arch section must mirror the data geometry") {
  auto parse = [](const nlohmann::json& j) { return experiment_from_json(j); };
  CHECK_THROWS_WITH_AS(parse({{"arch", {{"k", 7}}}}),
                       doctest::Contains("conflicts with data.k"), ConfigError);
  CHECK_THROWS_WITH_AS(parse({{"arch", {{"d", 64}}}}),
                       doctest::Contains("conflicts with data.d"), ConfigError);
  CHECK_THROWS_WITH_AS(parse({{"arch", {{"patches", 9}}}}),
                       doctest::Contains("conflicts with data.patches"),
                       ConfigError);
  // Restating the same geometry is fine.
  const ExperimentConfig cfg =
      parse({{"arch", {{"k", 5}, {"d", 30}, {"patches", 25}, {"hidden", 12}}}});
  CHECK(cfg.arch.hidden == 12);
}

TEST_CASE("config validation rejects unusable run settings") {
  ExperimentConfig cfg = default_experiment();
  cfg.run_id = "a/b";
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg.run_id = "..";
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg.run_id = "";
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = default_experiment();
  cfg.n_samples = 0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg = default_experiment();
  cfg.probes.threshold = 0.0;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg.probes.threshold = 1.5;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
  cfg.probes.threshold = 1.0;
  CHECK_NOTHROW(validate(cfg));
}

TEST_CASE("overrides parse values as json and fall back to strings") {
  nlohmann::json j = nlohmann::json::object();
  apply_override(j, "train.loss.tau", "5");
  apply_override(j, "arch.activation", "relu");
  apply_override(j, "train.attack.random_start", "false");
  apply_override(j, "train.attack.clamp_box", "[-1, 1]");
  apply_override(j, "run_id", "sweep_a");

  CHECK(j["train"]["loss"]["tau"] == nlohmann::json(5));
  CHECK(j["train"]["loss"]["tau"].is_number());
  CHECK(j["arch"]["activation"] == "relu");
  CHECK(j["train"]["attack"]["random_start"] == nlohmann::json(false));
  CHECK(j["train"]["attack"]["clamp_box"] == nlohmann::json({-1, 1}));
  CHECK(j["run_id"] == "sweep_a");

  const ExperimentConfig cfg = experiment_from_json(j);
  CHECK(cfg.train.loss.tau == 5.0);
  CHECK(cfg.arch.activation == Activation::kRelu);
  CHECK_FALSE(cfg.train.attack.random_start);
  REQUIRE(cfg.train.attack.clamp_box.has_value());
  CHECK(cfg.train.attack.clamp_box->first == -1.0);

  // Overwriting an existing scalar works; descending into one does not.
  apply_override(j, "train.loss.tau", "2");
  CHECK(j["train"]["loss"]["tau"] == nlohmann::json(2));
  CHECK_THROWS_AS(apply_override(j, "run_id.x", "1"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "", "1"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "a..b", "1"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "a.", "1"), ConfigError);
}

TEST_CASE("output directory resolution order: config, env, default") {
  ExperimentConfig cfg = default_experiment();
  cfg.run_id = "r1";

  ::unsetenv("MVLAB_OUT");
  CHECK(resolved_output_dir(cfg) == "out");
  CHECK(run_dir(cfg) == fs::path("out") / "r1");

  ::setenv("MVLAB_OUT", "/tmp/mvlab_env_out", 1);
  CHECK(resolved_output_dir(cfg) == "/tmp/mvlab_env_out");

  cfg.output_dir = "explicit";
  CHECK(resolved_output_dir(cfg) == "explicit");
  ::unsetenv("MVLAB_OUT");
}

TEST_CASE("dataset construction is deterministic and honours the mode flag") {
  TempDir tmp("dataset");
  ExperimentConfig cfg = toy_config(tmp.str());
  const Dataset a = make_dataset(cfg);
  const Dataset b = make_dataset(cfg);
  REQUIRE(a.samples.size() == b.samples.size());
  const fs::path pa = tmp.path / "a.mvds";
  const fs::path pb = tmp.path / "b.mvds";
  write_dataset(pa.string(), a);
  write_dataset(pb.string(), b);
  CHECK(slurp(pa) == slurp(pb));

  cfg.data.simplified = true;
  cfg.data.patches = 2;
  cfg.arch.patches = 2;
  const Dataset simple = make_dataset(cfg);
  REQUIRE(simple.samples.size() == cfg.n_samples);
  CHECK(simple.samples[0].patches.rows() == 2);
  // A different data seed moves the bank as well as the draws.
  cfg.data_seed = 2;
  const Dataset other = make_dataset(cfg);
  CHECK(other.bank.vectors.at(0, 0) != simple.bank.vectors.at(0, 0));
}

TEST_CASE("a run writes the full artifact set and refuses to overwrite") {
  TempDir tmp("run");
  const ExperimentConfig cfg = toy_config(tmp.str());
  const RunArtifacts art = run_experiment(cfg);

  CHECK(art.dir == tmp.path / "toy");
  CHECK(fs::exists(art.config_path));
  CHECK(fs::exists(art.teacher_path));
  CHECK(fs::exists(art.student_path));
  CHECK(fs::exists(art.metrics_path));
  CHECK(fs::exists(art.probe_path));
  CHECK(fs::exists(art.dir / "teacher_metrics.csv"));
  CHECK(art.dataset_size == 48);
  CHECK(art.final_metrics.epoch == cfg.train.n_adv - 1);

  // config.json reparses to the identical json.
  const nlohmann::json stored =
      nlohmann::json::parse(slurp(art.config_path));
  CHECK(stored == experiment_to_json(cfg));

  // metrics.csv: header + one row per student epoch.
  const std::string csv = slurp(art.metrics_path);
  CHECK(csv.rfind("epoch,train_loss,clean_acc,robust_acc,", 0) == 0);
  const auto rows = std::count(csv.begin(), csv.end(), '\n');
  CHECK(rows == 1 + cfg.train.n_adv);

  // probe.json carries the run id and the probe payload.
  const nlohmann::json probe = nlohmann::json::parse(slurp(art.probe_path));
  CHECK(probe["run_id"] == "toy");
  CHECK(probe.contains("cosines"));
  CHECK(probe.contains("learned_set"));

  CHECK_THROWS_WITH_AS(run_experiment(cfg),
                       doctest::Contains("rerun with --force"), IoError);
  CHECK_NOTHROW(run_experiment(cfg, /*force=*/true));
}

TEST_CASE("an external teacher reproduces the in-run artifacts bit for bit") {
  TempDir tmp("teacher");
  ExperimentConfig cfg = toy_config(tmp.str());
  cfg.run_id = "inrun";
  const RunArtifacts first = run_experiment(cfg);

  const ModelParams teacher = load_checkpoint(first.teacher_path.string());
  ExperimentConfig cfg2 = cfg;
  cfg2.run_id = "external";
  const RunArtifacts second = run_experiment(cfg2, false, &teacher);

  CHECK(slurp(first.teacher_path) == slurp(second.teacher_path));
  CHECK(slurp(first.student_path) == slurp(second.student_path));
  // The external-teacher run trains no teacher of its own.
  CHECK_FALSE(fs::exists(second.dir / "teacher_metrics.csv"));
}

TEST_CASE("plain clean training delivers the teacher as the model") {
  TempDir tmp("clean");
  ExperimentConfig cfg = toy_config(tmp.str());
  cfg.run_id = "clean_run";
  cfg.train.loss.method = Method::kClean;
  cfg.train.n_adv = 0;
  const RunArtifacts art = run_experiment(cfg);
  CHECK(fs::exists(art.teacher_path));
  CHECK(art.student_path.empty());
  CHECK_FALSE(fs::exists(art.dir / "student.ckpt"));
  CHECK(fs::exists(art.metrics_path));
  CHECK(fs::exists(art.probe_path));
}

TEST_CASE("distillation without a teacher source is refused") {
  TempDir tmp("noteacher");
  ExperimentConfig cfg = toy_config(tmp.str());
  cfg.run_id = "no_teacher";
  cfg.train.n_clean = 0;  // nothing to distill from
  CHECK_THROWS_WITH_AS(run_experiment(cfg),
                       doctest::Contains("needs a teacher"), ConfigError);
}

TEST_CASE("probes can be disabled per run") {
  TempDir tmp("noprobe");
  ExperimentConfig cfg = toy_config(tmp.str());
  cfg.run_id = "no_probe";
  cfg.probes.enabled = false;
  const RunArtifacts art = run_experiment(cfg);
  CHECK(art.probe_path.empty());
  CHECK_FALSE(fs::exists(art.dir / "probe.json"));
}

TEST_CASE("presets expand to the documented run families") {
  ExperimentConfig base = default_experiment();
  base.run_id = "fam";
  base.output_dir = "/tmp/fam_out";

  const auto ablation = expand_preset("ablation_terms", base);
  REQUIRE(ablation.size() == 4);
  CHECK(ablation[0].run_id == "full");
  CHECK(ablation[1].run_id == "no_init");
  CHECK_FALSE(ablation[1].train.init_from_teacher);
  CHECK(ablation[2].train.loss.method == Method::kCktatNoKlTeacher);
  CHECK(ablation[3].train.loss.method == Method::kCktatNoKlSelf);
  for (const auto& c : ablation)
    CHECK(c.output_dir == (fs::path("/tmp/fam_out") / "fam").string());

  const auto taus = expand_preset("tau_sweep", base);
  REQUIRE(taus.size() == 6);
  for (int i = 0; i < 6; ++i) {
    CHECK(taus[i].run_id == "tau_" + std::to_string(i + 1));
    CHECK(taus[i].train.loss.tau == static_cast<double>(i + 1));
  }

  const auto betas = expand_preset("beta_sweep", base);
  REQUIRE(betas.size() == 8);
  CHECK(betas[0].train.loss.beta == 0.0);
  CHECK(betas[7].train.loss.beta == 7.0);

  const auto caps = expand_preset("capacity_study", base);
  REQUIRE(caps.size() == 3);
  CHECK(caps[0].arch.hidden == 16);
  CHECK(caps[1].arch.hidden == 64);
  CHECK(caps[2].arch.hidden == 256);

  const auto methods = expand_preset("method_comparison", base);
  REQUIRE(methods.size() == 4);
  CHECK(methods[0].train.loss.method == Method::kClean);
  CHECK(methods[0].train.n_adv == 0);
  CHECK(methods[1].train.loss.method == Method::kPgdAt);
  CHECK(methods[1].train.n_clean == 0);
  CHECK_FALSE(methods[1].train.init_from_teacher);
  CHECK(methods[2].train.loss.method == Method::kTrades);
  CHECK(methods[2].train.attack.objective == AttackObjective::kKlVsClean);
  CHECK(methods[3].train.loss.method == Method::kCktat);

  CHECK_THROWS_WITH_AS(expand_preset("warp_speed", base),
                       doctest::Contains("unknown preset"), ConfigError);
}

TEST_CASE("running a preset shares one teacher per architecture") {
  TempDir tmp("preset");
  ExperimentConfig base = toy_config(tmp.str());
  base.run_id = "abl";
  const nlohmann::json summary = run_preset("ablation_terms", base);

  CHECK(summary["preset"] == "ablation_terms");
  REQUIRE(summary["runs"].size() == 4);
  CHECK(fs::exists(tmp.path / "abl" / "summary.json"));
  for (const auto& row : summary["runs"]) {
    const fs::path dir(row["dir"].get<std::string>());
    CHECK(fs::exists(dir / "metrics.csv"));
    CHECK(row["final"].contains("clean_acc"));
  }

  // Same width, same data, same seed: every run got the identical teacher.
  const std::string t0 = slurp(tmp.path / "abl" / "full" / "teacher.ckpt");
  const std::string t1 = slurp(tmp.path / "abl" / "no_init" / "teacher.ckpt");
  const std::string t2 =
      slurp(tmp.path / "abl" / "no_kl_teacher" / "teacher.ckpt");
  CHECK(t0 == t1);
  CHECK(t0 == t2);

  CHECK_THROWS_WITH_AS(run_preset("ablation_terms", base),
                       doctest::Contains("rerun with --force"), IoError);
  CHECK_NOTHROW(run_preset("ablation_terms", base, /*force=*/true));
}
