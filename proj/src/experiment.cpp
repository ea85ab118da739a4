#include "mvlab/experiment.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>

#include "mvlab/checkpoint.hpp"
#include "mvlab/errors.hpp"
#include "mvlab/probes.hpp"
#include "mvlab/rng.hpp"

namespace mvlab {

namespace {

constexpr std::uint64_t kBankStream = 0x62616e6b;

// Whitelist-driven section reader: every consumed key is recorded and
// finish() rejects anything left over, naming the offending dotted path.
class JsonReader {
 public:
  JsonReader(const nlohmann::json& j, std::string scope)
      : j_(j), scope_(std::move(scope)) {
    if (!j_.is_object())
      throw ConfigError((scope_.empty() ? std::string("config") : scope_) +
                        " must be a JSON object");
  }

  template <typename T>
  bool get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return false;
    try {
      it->get_to(out);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad value for '" + path(key) + "': " + e.what());
    }
    return true;
  }

  bool get_enum(const char* key, std::string& out) { return get(key, out); }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError("unknown key '" + path(it.key().c_str()) + "'");
  }

  std::string path(const char* key) const {
    return scope_.empty() ? key : scope_ + "." + key;
  }

 private:
  const nlohmann::json& j_;
  std::string scope_;
  std::set<std::string> seen_;
};

void read_data(const nlohmann::json& j, ExperimentConfig& cfg) {
  JsonReader r(j, "data");
  r.get("k", cfg.data.k);
  r.get("d", cfg.data.d);
  r.get("patches", cfg.data.patches);
  r.get("patches_per_feature", cfg.data.patches_per_feature);
  r.get("s", cfg.data.s);
  r.get("mu", cfg.data.mu);
  r.get("gamma", cfg.data.gamma);
  r.get("rho", cfg.data.rho);
  r.get("noise_std", cfg.data.noise_std);
  r.get("main_lo", cfg.data.main_lo);
  r.get("main_hi", cfg.data.main_hi);
  r.get("simplified", cfg.data.simplified);
  r.get("n", cfg.n_samples);
  r.get("seed", cfg.data_seed);
  r.finish();
}

void read_arch(const nlohmann::json& j, ExperimentConfig& cfg) {
  JsonReader r(j, "arch");
  std::size_t k = 0, d = 0, patches = 0;
  if (r.get("k", k) && k != cfg.data.k)
    throw ConfigError("arch.k=" + std::to_string(k) +
                      " conflicts with data.k=" + std::to_string(cfg.data.k));
  if (r.get("d", d) && d != cfg.data.d)
    throw ConfigError("arch.d=" + std::to_string(d) +
                      " conflicts with data.d=" + std::to_string(cfg.data.d));
  if (r.get("patches", patches) && patches != cfg.data.patches)
    throw ConfigError("arch.patches=" + std::to_string(patches) +
                      " conflicts with data.patches=" +
                      std::to_string(cfg.data.patches));
  r.get("hidden", cfg.arch.hidden);
  std::string act;
  if (r.get_enum("activation", act)) {
    try {
      cfg.arch.activation = activation_from_name(act);
    } catch (const Error& e) {
      throw ConfigError(std::string("arch.activation: ") + e.what());
    }
  }
  r.finish();
}

void read_attack(const nlohmann::json& j, AttackConfig& atk) {
  JsonReader r(j, "train.attack");
  r.get("epsilon", atk.epsilon);
  r.get("step_size", atk.step_size);
  r.get("steps", atk.steps);
  r.get("random_start", atk.random_start);
  std::string obj;
  if (r.get_enum("objective", obj)) {
    try {
      atk.objective = attack_objective_from_name(obj);
    } catch (const Error& e) {
      throw ConfigError(std::string("train.attack.objective: ") + e.what());
    }
  }
  std::vector<double> box;
  if (r.get("clamp_box", box)) {
    if (box.size() != 2)
      throw ConfigError("train.attack.clamp_box must be [lo, hi]");
    atk.clamp_box = {box[0], box[1]};
  }
  r.finish();
}

void read_loss(const nlohmann::json& j, LossSpec& loss) {
  JsonReader r(j, "train.loss");
  std::string method;
  if (r.get_enum("method", method)) {
    try {
      loss.method = method_from_name(method);
    } catch (const Error& e) {
      throw ConfigError(std::string("train.loss.method: ") + e.what());
    }
  }
  r.get("beta", loss.beta);
  r.get("tau", loss.tau);
  r.get("kl_reverse", loss.kl_reverse);
  r.get("stop_grad_clean", loss.stop_grad_clean);
  r.get("prob_floor", loss.prob_floor);
  r.finish();
}

void read_train(const nlohmann::json& j, ExperimentConfig& cfg) {
  JsonReader r(j, "train");
  r.get("n_clean", cfg.train.n_clean);
  r.get("n_warmup", cfg.train.n_warmup);
  r.get("n_adv", cfg.train.n_adv);
  r.get("batch_size", cfg.train.batch_size);
  r.get("lr", cfg.train.lr);
  r.get("momentum", cfg.train.momentum);
  r.get("step_decay", cfg.train.step_decay);
  r.get("decay_factor", cfg.train.decay_factor);
  r.get("seed", cfg.train.seed);
  r.get("init_from_teacher", cfg.train.init_from_teacher);
  r.get("eval_subset", cfg.train.eval_subset);
  r.get("eval_attack_steps", cfg.train.eval_attack_steps);
  if (const nlohmann::json* atk = r.child("attack"))
    read_attack(*atk, cfg.train.attack);
  if (const nlohmann::json* loss = r.child("loss"))
    read_loss(*loss, cfg.train.loss);
  r.finish();
}

void read_probes(const nlohmann::json& j, ProbeConfig& p) {
  JsonReader r(j, "probes");
  r.get("enabled", p.enabled);
  r.get("threshold", p.threshold);
  r.finish();
}

}  // namespace

ExperimentConfig default_experiment() {
  ExperimentConfig cfg;
  cfg.arch.k = cfg.data.k;
  cfg.arch.d = cfg.data.d;
  cfg.arch.patches = cfg.data.patches;
  cfg.arch.hidden = 40;
  return cfg;
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg = default_experiment();
  JsonReader r(j, "");
  r.get("run_id", cfg.run_id);
  r.get("output_dir", cfg.output_dir);
  if (const nlohmann::json* data = r.child("data")) read_data(*data, cfg);
  cfg.arch.k = cfg.data.k;
  cfg.arch.d = cfg.data.d;
  cfg.arch.patches = cfg.data.patches;
  if (const nlohmann::json* arch = r.child("arch")) read_arch(*arch, cfg);
  if (const nlohmann::json* train = r.child("train")) read_train(*train, cfg);
  if (const nlohmann::json* probes = r.child("probes"))
    read_probes(*probes, cfg.probes);
  r.finish();
  validate(cfg);
  return cfg;
}

nlohmann::json experiment_to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["run_id"] = cfg.run_id;
  j["output_dir"] = cfg.output_dir;
  j["data"] = {{"k", cfg.data.k},
               {"d", cfg.data.d},
               {"patches", cfg.data.patches},
               {"patches_per_feature", cfg.data.patches_per_feature},
               {"s", cfg.data.s},
               {"mu", cfg.data.mu},
               {"gamma", cfg.data.gamma},
               {"rho", cfg.data.rho},
               {"noise_std", cfg.data.noise_std},
               {"main_lo", cfg.data.main_lo},
               {"main_hi", cfg.data.main_hi},
               {"simplified", cfg.data.simplified},
               {"n", cfg.n_samples},
               {"seed", cfg.data_seed}};
  j["arch"] = {{"k", cfg.arch.k},
               {"d", cfg.arch.d},
               {"patches", cfg.arch.patches},
               {"hidden", cfg.arch.hidden},
               {"activation", activation_name(cfg.arch.activation)}};
  nlohmann::json attack = {
      {"epsilon", cfg.train.attack.epsilon},
      {"step_size", cfg.train.attack.step_size},
      {"steps", cfg.train.attack.steps},
      {"random_start", cfg.train.attack.random_start},
      {"objective", attack_objective_name(cfg.train.attack.objective)}};
  if (cfg.train.attack.clamp_box)
    attack["clamp_box"] = {cfg.train.attack.clamp_box->first,
                           cfg.train.attack.clamp_box->second};
  j["train"] = {{"n_clean", cfg.train.n_clean},
                {"n_warmup", cfg.train.n_warmup},
                {"n_adv", cfg.train.n_adv},
                {"batch_size", cfg.train.batch_size},
                {"lr", cfg.train.lr},
                {"momentum", cfg.train.momentum},
                {"step_decay", cfg.train.step_decay},
                {"decay_factor", cfg.train.decay_factor},
                {"seed", cfg.train.seed},
                {"init_from_teacher", cfg.train.init_from_teacher},
                {"eval_subset", cfg.train.eval_subset},
                {"eval_attack_steps", cfg.train.eval_attack_steps},
                {"attack", std::move(attack)},
                {"loss",
                 {{"method", method_name(cfg.train.loss.method)},
                  {"beta", cfg.train.loss.beta},
                  {"tau", cfg.train.loss.tau},
                  {"kl_reverse", cfg.train.loss.kl_reverse},
                  {"stop_grad_clean", cfg.train.loss.stop_grad_clean},
                  {"prob_floor", cfg.train.loss.prob_floor}}}};
  j["probes"] = {{"enabled", cfg.probes.enabled},
                 {"threshold", cfg.probes.threshold}};
  return j;
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return experiment_from_json(j);
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.run_id.empty()) throw ConfigError("run_id must be nonempty");
  if (cfg.run_id.find('/') != std::string::npos ||
      cfg.run_id.find("..") != std::string::npos)
    throw ConfigError("run_id must not contain '/' or '..'");
  if (cfg.n_samples == 0) throw ConfigError("data.n must be >= 1");
  validate(cfg.data);
  validate(cfg.arch);
  validate(cfg.train);
  if (cfg.arch.k != cfg.data.k || cfg.arch.d != cfg.data.d ||
      cfg.arch.patches != cfg.data.patches)
    throw ConfigError("arch (k,d,patches) must mirror the data section");
  if (!(cfg.probes.threshold > 0.0) || cfg.probes.threshold > 1.0)
    throw ConfigError("probes.threshold must be in (0, 1]");
}

void apply_override(nlohmann::json& j, const std::string& dotted_path,
                    const std::string& value) {
  if (dotted_path.empty()) throw ConfigError("empty override path");
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted_path.find('.', start);
    const std::string key = dotted_path.substr(
        start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty())
      throw ConfigError("malformed override path '" + dotted_path + "'");
    if (dot == std::string::npos) {
      nlohmann::json parsed =
          nlohmann::json::parse(value, nullptr, /*allow_exceptions=*/false);
      (*node)[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
      return;
    }
    node = &(*node)[key];
    if (!node->is_object() && !node->is_null())
      throw ConfigError("override path '" + dotted_path +
                        "' descends into a non-object");
    start = dot + 1;
  }
}

std::string resolved_output_dir(const ExperimentConfig& cfg) {
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* env = std::getenv("MVLAB_OUT"); env && *env) return env;
  return "out";
}

std::filesystem::path run_dir(const ExperimentConfig& cfg) {
  return std::filesystem::path(resolved_output_dir(cfg)) / cfg.run_id;
}

Dataset make_dataset(const ExperimentConfig& cfg) {
  const FeatureBank bank = build_feature_bank(
      cfg.data.k, cfg.data.d, derive_seed(cfg.data_seed, kBankStream));
  if (cfg.data.simplified)
    return sample_simplified(cfg.data.k, cfg.data.mu, cfg.n_samples, bank,
                             cfg.data_seed);
  return sample_dataset(cfg.data, bank, cfg.n_samples, cfg.data_seed);
}

RunArtifacts run_experiment(const ExperimentConfig& cfg, bool force,
                            const ModelParams* external_teacher) {
  validate(cfg);
  RunArtifacts art;
  art.dir = run_dir(cfg);
  if (std::filesystem::exists(art.dir) && !force)
    throw IoError("run directory already exists (rerun with --force): " +
                  art.dir.string());
  std::filesystem::create_directories(art.dir);

  art.config_path = art.dir / "config.json";
  {
    std::ofstream out(art.config_path);
    if (!out) throw IoError("cannot write " + art.config_path.string());
    out << experiment_to_json(cfg).dump(2) << "\n";
  }

  const Dataset data = make_dataset(cfg);
  art.dataset_size = data.samples.size();

  const Method method = cfg.train.loss.method;
  const bool wants_teacher = method != Method::kClean &&
                             (cfg.train.init_from_teacher ||
                              method_needs_teacher(method));

  std::optional<TrainResult> teacher_result;
  const ModelParams* teacher = external_teacher;
  if (!teacher && (wants_teacher || method == Method::kClean)) {
    if (cfg.train.n_clean == 0 && wants_teacher)
      throw ConfigError(
          "the configured loss needs a teacher but n_clean is 0 and no "
          "teacher checkpoint was supplied");
    teacher_result = train_clean(cfg.arch, cfg.train, data);
    teacher = &teacher_result->model;
  }

  if (teacher) {
    art.teacher_path = art.dir / "teacher.ckpt";
    save_checkpoint(art.teacher_path.string(), *teacher);
  }

  art.metrics_path = art.dir / "metrics.csv";
  const ModelParams* final_model = teacher;
  std::optional<TrainResult> student_result;

  if (method == Method::kClean) {
    // Plain clean training: the teacher is the deliverable.
    if (teacher_result && !teacher_result->history.empty()) {
      write_metrics_csv(art.metrics_path.string(), teacher_result->history);
      art.final_metrics = teacher_result->history.back();
    } else {
      MetricsRecord rec =
          evaluate(*teacher, data, cfg.train.attack, cfg.train.seed);
      write_metrics_csv(art.metrics_path.string(), {rec});
      art.final_metrics = rec;
    }
  } else {
    ModelParams scratch;
    const ModelParams* teacher_arg = teacher;
    if (!teacher_arg) {
      scratch = init_model(cfg.arch, derive_seed(cfg.train.seed, 0x73637261));
      teacher_arg = &scratch;  // ignored: neither init nor distillation uses it
    }
    student_result = train_student(cfg.arch, cfg.train, data, *teacher_arg);
    final_model = &student_result->model;
    art.student_path = art.dir / "student.ckpt";
    save_checkpoint(art.student_path.string(), student_result->model);
    write_metrics_csv(art.metrics_path.string(), student_result->history);
    if (teacher_result) {
      write_metrics_csv((art.dir / "teacher_metrics.csv").string(),
                        teacher_result->history);
    }
    if (!student_result->history.empty())
      art.final_metrics = student_result->history.back();
    else
      art.final_metrics =
          evaluate(*final_model, data, cfg.train.attack, cfg.train.seed);
  }

  if (cfg.probes.enabled && final_model) {
    art.probe_path = art.dir / "probe.json";
    nlohmann::json probe =
        probe_report_json(*final_model, data.bank, data, cfg.probes.threshold);
    probe["run_id"] = cfg.run_id;
    std::ofstream out(art.probe_path);
    if (!out) throw IoError("cannot write " + art.probe_path.string());
    out << probe.dump(2) << "\n";
  }
  return art;
}

const std::vector<std::string> kPresetNames = {
    "ablation_terms", "tau_sweep", "beta_sweep", "capacity_study",
    "method_comparison"};

std::vector<ExperimentConfig> expand_preset(const std::string& name,
                                            const ExperimentConfig& base) {
  std::vector<ExperimentConfig> runs;
  ExperimentConfig sub = base;
  sub.output_dir = (run_dir(base)).string();
  sub.train.loss.method = Method::kCktat;
  sub.train.init_from_teacher = true;

  auto push = [&](const std::string& id, auto&& tweak) {
    ExperimentConfig c = sub;
    c.run_id = id;
    tweak(c);
    runs.push_back(std::move(c));
  };

  if (name == "ablation_terms") {
    push("full", [](ExperimentConfig&) {});
    push("no_init",
         [](ExperimentConfig& c) { c.train.init_from_teacher = false; });
    push("no_kl_teacher", [](ExperimentConfig& c) {
      c.train.loss.method = Method::kCktatNoKlTeacher;
    });
    push("no_kl_self", [](ExperimentConfig& c) {
      c.train.loss.method = Method::kCktatNoKlSelf;
    });
  } else if (name == "tau_sweep") {
    for (int tau = 1; tau <= 6; ++tau)
      push("tau_" + std::to_string(tau), [tau](ExperimentConfig& c) {
        c.train.loss.tau = static_cast<double>(tau);
      });
  } else if (name == "beta_sweep") {
    for (int beta = 0; beta <= 7; ++beta)
      push("beta_" + std::to_string(beta), [beta](ExperimentConfig& c) {
        c.train.loss.beta = static_cast<double>(beta);
      });
  } else if (name == "capacity_study") {
    for (std::size_t m : {16, 64, 256})
      push("m_" + std::to_string(m),
           [m](ExperimentConfig& c) { c.arch.hidden = m; });
  } else if (name == "method_comparison") {
    push("clean", [](ExperimentConfig& c) {
      c.train.loss.method = Method::kClean;
      c.train.n_adv = 0;
    });
    push("pgdat", [](ExperimentConfig& c) {
      c.train.loss.method = Method::kPgdAt;
      c.train.init_from_teacher = false;
      c.train.n_clean = 0;
    });
    push("trades", [](ExperimentConfig& c) {
      c.train.loss.method = Method::kTrades;
      c.train.init_from_teacher = false;
      c.train.n_clean = 0;
      c.train.attack.objective = AttackObjective::kKlVsClean;
    });
    push("cktat", [](ExperimentConfig&) {});
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return runs;
}

nlohmann::json run_preset(const std::string& name,
                          const ExperimentConfig& base, bool force) {
  const std::vector<ExperimentConfig> runs = expand_preset(name, base);
  const std::filesystem::path root = run_dir(base);
  if (std::filesystem::exists(root / "summary.json") && !force)
    throw IoError("preset summary already exists (rerun with --force): " +
                  (root / "summary.json").string());
  std::filesystem::create_directories(root);

  // One clean teacher per hidden width: every run of a preset shares the
  // data, seed, and clean-phase recipe.
  std::map<std::size_t, ModelParams> teachers;
  nlohmann::json summary;
  summary["preset"] = name;
  summary["base_run_id"] = base.run_id;
  summary["runs"] = nlohmann::json::array();

  for (const ExperimentConfig& cfg : runs) {
    const Method method = cfg.train.loss.method;
    const bool wants_teacher = method != Method::kClean &&
                               (cfg.train.init_from_teacher ||
                                method_needs_teacher(method));
    const ModelParams* teacher = nullptr;
    if (wants_teacher && cfg.train.n_clean > 0) {
      auto it = teachers.find(cfg.arch.hidden);
      if (it == teachers.end()) {
        const Dataset data = make_dataset(cfg);
        TrainResult t = train_clean(cfg.arch, cfg.train, data);
        it = teachers.emplace(cfg.arch.hidden, std::move(t.model)).first;
      }
      teacher = &it->second;
    }
    const RunArtifacts art = run_experiment(cfg, force, teacher);

    nlohmann::json row;
    row["run_id"] = cfg.run_id;
    row["dir"] = art.dir.string();
    row["method"] = method_name(method);
    row["tau"] = cfg.train.loss.tau;
    row["beta"] = cfg.train.loss.beta;
    row["hidden"] = cfg.arch.hidden;
    row["final"] = {{"epoch", art.final_metrics.epoch},
                    {"train_loss", art.final_metrics.train_loss},
                    {"clean_acc", art.final_metrics.clean_acc},
                    {"robust_acc", art.final_metrics.robust_acc},
                    {"clean_train_err", art.final_metrics.clean_train_err},
                    {"robust_train_err", art.final_metrics.robust_train_err},
                    {"features_learned", art.final_metrics.features_learned}};
    summary["runs"].push_back(std::move(row));
  }

  std::ofstream out(root / "summary.json");
  if (!out) throw IoError("cannot write preset summary");
  out << summary.dump(2) << "\n";
  return summary;
}

}  // namespace mvlab
