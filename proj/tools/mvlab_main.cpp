#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mvlab/checkpoint.hpp"
#include "mvlab/dataset_io.hpp"
#include "mvlab/errors.hpp"
#include "mvlab/error_model.hpp"
#include "mvlab/experiment.hpp"
#include "mvlab/graph.hpp"
#include "mvlab/probes.hpp"
#include "mvlab/rng.hpp"
#include "mvlab/trainers.hpp"

namespace {

using namespace mvlab;

// Leftover tokens are treated as dotted-path config overrides:
//   --train.loss.tau 5   or   --train.loss.tau=5
void apply_cli_overrides(nlohmann::json& config,
                         const std::vector<std::string>& extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0)
      throw ConfigError("unexpected argument '" + tok +
                        "' (overrides look like --data.mu 0.4)");
    std::string path = tok.substr(2);
    std::string value;
    const std::size_t eq = path.find('=');
    if (eq != std::string::npos) {
      value = path.substr(eq + 1);
      path = path.substr(0, eq);
    } else {
      if (i + 1 >= extras.size())
        throw ConfigError("override '" + tok + "' is missing a value");
      value = extras[++i];
    }
    apply_override(config, path, value);
  }
}

ExperimentConfig config_from_cli(const std::string& config_path,
                                 const std::vector<std::string>& extras) {
  nlohmann::json j = nlohmann::json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw IoError("cannot open config file: " + config_path);
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config parse error in " + config_path + ": " +
                        e.what());
    }
  }
  apply_cli_overrides(j, extras);
  return experiment_from_json(j);
}

void print_metrics(const MetricsRecord& rec) {
  nlohmann::json j;
  j["epoch"] = rec.epoch;
  j["train_loss"] = rec.train_loss;
  j["clean_acc"] = rec.clean_acc;
  j["robust_acc"] = rec.robust_acc;
  j["clean_train_err"] = rec.clean_train_err;
  j["robust_train_err"] = rec.robust_train_err;
  auto opt = [](double v) {
    return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
  };
  j["sv_clean_acc"] = opt(rec.sv_clean_acc);
  j["mv_clean_acc"] = opt(rec.mv_clean_acc);
  j["sv_robust_acc"] = opt(rec.sv_robust_acc);
  j["mv_robust_acc"] = opt(rec.mv_robust_acc);
  j["features_learned"] = rec.features_learned;
  std::cout << j.dump(2) << "\n";
}

int cmd_gen_data(const std::string& config_path, const std::string& out_path,
                 const std::vector<std::string>& extras) {
  const ExperimentConfig cfg = config_from_cli(config_path, extras);
  const Dataset data = make_dataset(cfg);
  write_dataset(out_path, data);
  std::cout << "samples: " << data.samples.size() << "\n"
            << "single_view: " << data.single_view_count() << "\n"
            << "dropped_off_class: " << data.dropped_off_class << "\n"
            << "checksum: " << checksum_hex(fnv1a64_file(out_path)) << "\n"
            << "file: " << out_path << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& teacher_path,
              bool force, const std::vector<std::string>& extras) {
  const ExperimentConfig cfg = config_from_cli(config_path, extras);
  ModelParams teacher;
  const ModelParams* teacher_ptr = nullptr;
  if (!teacher_path.empty()) {
    teacher = load_checkpoint(teacher_path);
    teacher_ptr = &teacher;
  }
  const RunArtifacts art = run_experiment(cfg, force, teacher_ptr);
  std::cout << "run_dir: " << art.dir.string() << "\n";
  if (!art.teacher_path.empty())
    std::cout << "teacher: " << art.teacher_path.string() << "\n";
  if (!art.student_path.empty())
    std::cout << "student: " << art.student_path.string() << "\n";
  std::cout << "metrics: " << art.metrics_path.string() << "\n";
  if (!art.probe_path.empty())
    std::cout << "probe: " << art.probe_path.string() << "\n";
  print_metrics(art.final_metrics);
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& model_path,
             const std::string& data_path,
             const std::vector<std::string>& extras) {
  const ExperimentConfig cfg = config_from_cli(config_path, extras);
  const ModelParams model = load_checkpoint(model_path);
  const Dataset data =
      data_path.empty() ? make_dataset(cfg) : read_dataset(data_path);
  const MetricsRecord rec =
      evaluate(model, data, cfg.train.attack, cfg.train.seed);
  print_metrics(rec);
  return 0;
}

int cmd_error_model(double mu, double k1, double k2, double theta, double smix,
                    const std::string& sweep, double lo, double hi,
                    std::size_t steps, const std::string& out_path) {
  ErrorModelParams params{mu, k1, k2, theta, smix};
  if (!sweep.empty()) {
    const auto rows = sweep_error_model(params, sweep, lo, hi, steps);
    std::vector<double> values(rows.size());
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] = lo + (hi - lo) * static_cast<double>(i) /
                           static_cast<double>(values.size() - 1);
    const std::string csv = error_model_csv(rows, values);
    if (out_path.empty()) {
      std::cout << csv;
    } else {
      std::ofstream out(out_path);
      if (!out) throw IoError("cannot write " + out_path);
      out << csv;
      std::cout << "rows: " << rows.size() << "\nfile: " << out_path << "\n";
    }
    return 0;
  }
  const ErrorReport rep = error_report(params);
  std::printf("a: %.12g\nb: %.12g\nc: %.12g\n", rep.terms.a, rep.terms.b,
              rep.terms.c);
  std::printf("r_robust_1: %.12g\nr_robust_2: %.12g\n", rep.r_robust_1,
              rep.r_robust_2);
  std::printf("r_clean_1: %.12g\nr_clean_2: %.12g\n", rep.r_clean_1,
              rep.r_clean_2);
  std::printf("delta_robust: %.12g\ndelta_clean: %.12g\n", rep.delta_robust,
              rep.delta_clean);
  std::printf("incentive_gap: %+.6g\n", rep.incentive_gap);
  std::printf("verdict: %s\n",
              rep.learns_feature ? "learns feature" : "no incentive");
  return 0;
}

int cmd_preset(const std::string& name, const std::string& config_path,
               bool force, int jobs, const std::vector<std::string>& extras) {
  (void)jobs;  // runs execute serially; the flag bounds nothing yet
  const ExperimentConfig base = config_from_cli(config_path, extras);
  const nlohmann::json summary = run_preset(name, base, force);
  std::cout << "preset: " << name << "\n"
            << "runs: " << summary["runs"].size() << "\n";
  for (const auto& row : summary["runs"]) {
    std::cout << "  " << row["run_id"].get<std::string>() << ": clean_acc="
              << row["final"]["clean_acc"].dump()
              << " robust_acc=" << row["final"]["robust_acc"].dump() << "\n";
  }
  std::cout << "summary: "
            << (run_dir(base) / "summary.json").string() << "\n";
  return 0;
}

int cmd_probe(const std::string& config_path, const std::string& model_path,
              const std::string& out_path,
              const std::vector<std::string>& extras) {
  const ExperimentConfig cfg = config_from_cli(config_path, extras);
  const ModelParams model = load_checkpoint(model_path);
  const Dataset data = make_dataset(cfg);
  const nlohmann::json report =
      probe_report_json(model, data.bank, data, cfg.probes.threshold);
  if (out_path.empty()) {
    std::cout << report.dump(2) << "\n";
  } else {
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot write " + out_path);
    out << report.dump(2) << "\n";
    std::cout << "file: " << out_path << "\n";
  }
  return 0;
}

int cmd_grad_check(int trials, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  const Method methods[] = {Method::kClean,  Method::kPgdAt,
                            Method::kTrades, Method::kCktat,
                            Method::kCktatNoKlTeacher,
                            Method::kCktatNoKlSelf};
  for (int t = 0; t < trials; ++t) {
    ModelArch arch;
    arch.k = 2 + rng.uniform_int(4);           // <= 5
    arch.d = 4 + rng.uniform_int(17);          // <= 20
    arch.patches = 2 + rng.uniform_int(4);
    arch.hidden = 1 + rng.uniform_int(32);     // <= 32
    arch.activation = Activation::kCubicRamp;  // smooth: exact central FD
    const ModelParams student = init_model(arch, derive_seed(seed, 2 * t));
    const ModelParams teacher = init_model(arch, derive_seed(seed, 2 * t + 1));

    Tensor clean = Tensor::matrix(arch.patches, arch.d);
    for (auto& v : clean.values) v = 0.8 * rng.normal();
    Tensor adv = clean;
    for (auto& v : adv.values) v += 0.05 * rng.normal();
    const auto label = static_cast<std::uint32_t>(rng.uniform_int(arch.k));

    LossSpec spec;
    spec.method = methods[t % 6];
    spec.beta = 0.5 + rng.uniform01() * 4.0;
    spec.tau = 1.0 + rng.uniform01() * 4.0;
    const ModelParams* tp =
        method_needs_teacher(spec.method) ? &teacher : nullptr;

    Graph g;
    ModelVars vars = declare_params(g, student, true);
    const Graph::Var loss =
        loss_graph(g, spec, arch, vars, clean, adv, label, tp);
    g.backward(loss);

    auto loss_at = [&](const ModelParams& probe) {
      Graph h;
      ModelVars pv = declare_params(h, probe, true);
      return h.value(loss_graph(h, spec, arch, pv, clean, adv, label, tp))
          .values[0];
    };
    auto check = [&](const Tensor& got, const Tensor& at, auto rebuild) {
      const Tensor fd = finite_diff_grad(
          [&](const Tensor& x) {
            ModelParams probe = student;
            rebuild(probe, x);
            return loss_at(probe);
          },
          at);
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < got.numel(); ++i) {
        num += (got.values[i] - fd.values[i]) * (got.values[i] - fd.values[i]);
        den += fd.values[i] * fd.values[i];
      }
      worst = std::max(worst, std::sqrt(num) / std::max(std::sqrt(den), 1e-12));
    };
    check(g.grad(vars.hidden), student.hidden,
          [](ModelParams& p, const Tensor& x) { p.hidden = x; });
    check(g.grad(vars.head), student.head,
          [](ModelParams& p, const Tensor& x) { p.head = x; });
    check(g.grad(vars.bias), student.bias,
          [](ModelParams& p, const Tensor& x) { p.bias = x; });
  }
  std::printf("trials: %d\nmax_rel_error: %.3g\n", trials, worst);
  if (worst > 1e-6) {
    std::fprintf(stderr, "gradient check FAILED (tolerance 1e-6)\n");
    return 3;
  }
  std::printf("gradient check passed (tolerance 1e-6)\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Synthetic multi-view laboratory: data generation, adversarial "
      "training, closed-form error analysis, and feature probes"};
  app.require_subcommand(1);
  app.allow_extras();

  std::string config_path, out_path, model_path, teacher_path, data_path;
  bool force = false;
  int jobs = 1;

  auto* gen = app.add_subcommand("gen-data", "Sample a dataset to a file");
  gen->allow_extras();
  gen->add_option("--config", config_path, "JSON experiment config");
  gen->add_option("-o,--out", out_path, "output dataset file")->required();

  auto* train = app.add_subcommand(
      "train", "Train teacher/student per config and write a run directory");
  train->allow_extras();
  train->add_option("--config", config_path, "JSON experiment config");
  train->add_option("--teacher", teacher_path,
                    "checkpoint to use as the frozen teacher");
  train->add_flag("--force", force, "overwrite an existing run directory");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->allow_extras();
  ev->add_option("--config", config_path, "JSON experiment config");
  ev->add_option("--model", model_path, "model checkpoint")->required();
  ev->add_option("--data", data_path, "dataset file (default: regenerate)");

  double mu = 0.4, k1 = 0.3, k2 = 0.8, theta = 1.0, smix = 3.0;
  double lo = 0.0, hi = 1.0;
  std::size_t steps = 11;
  std::string sweep;
  auto* em = app.add_subcommand(
      "error-model", "Closed-form robust/clean error analysis");
  em->add_option("--mu", mu, "multi-view share");
  em->add_option("--k1", k1, "first-feature attack leverage");
  em->add_option("--k2", k2, "second-feature attack leverage");
  em->add_option("--theta", theta, "logit margin");
  em->add_option("--smix", smix, "mixture response scale");
  em->add_option("--sweep", sweep, "parameter to sweep (mu|k1|k2|theta|smix)");
  em->add_option("--lo", lo, "sweep start");
  em->add_option("--hi", hi, "sweep end");
  em->add_option("--steps", steps, "sweep row count");
  em->add_option("-o,--out", out_path, "CSV destination (default stdout)");

  std::string preset_name;
  auto* pre = app.add_subcommand("preset", "Run a named experiment family");
  pre->allow_extras();
  pre->add_option("name", preset_name, "preset name")->required();
  pre->add_option("--config", config_path, "JSON experiment config");
  pre->add_flag("--force", force, "overwrite existing run directories");
  pre->add_option("--jobs", jobs, "parallel run budget (currently serial)");

  auto* probe = app.add_subcommand("probe", "Feature probes for a checkpoint");
  probe->allow_extras();
  probe->add_option("--config", config_path, "JSON experiment config");
  probe->add_option("--model", model_path, "model checkpoint")->required();
  probe->add_option("-o,--out", out_path, "JSON destination (default stdout)");

  int trials = 50;
  std::uint64_t gc_seed = 1;
  auto* gc = app.add_subcommand(
      "grad-check", "Compare backward gradients with finite differences");
  gc->add_option("--trials", trials, "number of random models");
  gc->add_option("--seed", gc_seed, "RNG seed");

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_gen_data(config_path, out_path, gen->remaining());
    if (train->parsed())
      return cmd_train(config_path, teacher_path, force, train->remaining());
    if (ev->parsed())
      return cmd_eval(config_path, model_path, data_path, ev->remaining());
    if (em->parsed())
      return cmd_error_model(mu, k1, k2, theta, smix, sweep, lo, hi, steps,
                             out_path);
    if (pre->parsed())
      return cmd_preset(preset_name, config_path, force, jobs,
                        pre->remaining());
    if (probe->parsed())
      return cmd_probe(config_path, model_path, out_path, probe->remaining());
    if (gc->parsed()) return cmd_grad_check(trials, gc_seed);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const TrainingError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 3;
  }
}
