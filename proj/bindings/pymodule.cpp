#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>
#include <vector>

#include "mvlab/attacks.hpp"
#include "mvlab/checkpoint.hpp"
#include "mvlab/dataset_io.hpp"
#include "mvlab/error_model.hpp"
#include "mvlab/errors.hpp"
#include "mvlab/experiment.hpp"
#include "mvlab/graph.hpp"
#include "mvlab/model.hpp"
#include "mvlab/multiview.hpp"
#include "mvlab/probes.hpp"
#include "mvlab/rng.hpp"
#include "mvlab/trainers.hpp"

namespace py = pybind11;
using namespace mvlab;

namespace {

// Tensors cross the boundary as nested lists; the tape itself stays native.
py::object tensor_to_py(const Tensor& t) {
  if (t.rank() == 0) return py::float_(t.values.empty() ? 0.0 : t.values[0]);
  if (t.rank() == 1) return py::cast(t.values);
  py::list rows;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    py::list row;
    for (std::size_t c = 0; c < t.cols(); ++c) row.append(t.at(r, c));
    rows.append(row);
  }
  return rows;
}

Tensor tensor_from_py(const py::handle& obj) {
  if (py::isinstance<py::float_>(obj) || py::isinstance<py::int_>(obj))
    return Tensor::scalar(obj.cast<double>());
  auto outer = obj.cast<py::sequence>();
  if (outer.size() > 0 && py::isinstance<py::sequence>(outer[0]) &&
      !py::isinstance<py::str>(outer[0])) {
    const std::size_t rows = outer.size();
    const std::size_t cols = outer[0].cast<py::sequence>().size();
    Tensor t = Tensor::matrix(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      auto row = outer[r].cast<py::sequence>();
      if (row.size() != cols)
        throw py::value_error("ragged rows in tensor literal");
      for (std::size_t c = 0; c < cols; ++c)
        t.at(r, c) = row[c].cast<double>();
    }
    return t;
  }
  return Tensor::vector(obj.cast<std::vector<double>>());
}

ErrorModelParams params_from_args(double mu, double k1, double k2, double theta,
                                  double s_mix) {
  return ErrorModelParams{mu, k1, k2, theta, s_mix};
}

py::dict report_to_dict(const ErrorReport& r) {
  py::dict d;
  d["a"] = r.terms.a;
  d["b"] = r.terms.b;
  d["c"] = r.terms.c;
  d["r_robust_1"] = r.r_robust_1;
  d["r_robust_2"] = r.r_robust_2;
  d["r_clean_1"] = r.r_clean_1;
  d["r_clean_2"] = r.r_clean_2;
  d["delta_robust"] = r.delta_robust;
  d["delta_clean"] = r.delta_clean;
  d["incentive_gap"] = r.incentive_gap;
  d["learns_feature"] = r.learns_feature;
  return d;
}

py::dict metrics_to_dict(const MetricsRecord& m) {
  py::dict d;
  d["epoch"] = m.epoch;
  d["train_loss"] = m.train_loss;
  d["clean_acc"] = m.clean_acc;
  d["robust_acc"] = m.robust_acc;
  d["clean_train_err"] = m.clean_train_err;
  d["robust_train_err"] = m.robust_train_err;
  d["sv_clean_acc"] = m.sv_clean_acc;
  d["mv_clean_acc"] = m.mv_clean_acc;
  d["sv_robust_acc"] = m.sv_robust_acc;
  d["mv_robust_acc"] = m.mv_robust_acc;
  d["features_learned"] = m.features_learned;
  return d;
}

}  // namespace

PYBIND11_MODULE(mvlab, m) {
  m.doc() = "Multi-view adversarial training laboratory";

  py::register_exception<Error>(m, "MvlabError");

  // ----- value helpers ------------------------------------------------------
  m.def("softmax", &softmax_values, py::arg("logits"), py::arg("tau") = 1.0,
        "Softmax with temperature");
  m.def("kl_divergence", &kl_divergence_values, py::arg("p"), py::arg("q"));
  m.def("cross_entropy", &cross_entropy_values, py::arg("logits"),
        py::arg("label"));
  m.def("derive_seed", &derive_seed, py::arg("base"), py::arg("key"),
        "Seed of sub-stream `key` of stream `base`");

  // ----- closed-form error model -------------------------------------------
  m.def(
      "error_report",
      [](double mu, double k1, double k2, double theta, double s_mix) {
        return report_to_dict(
            error_report(params_from_args(mu, k1, k2, theta, s_mix)));
      },
      py::arg("mu"), py::arg("k1"), py::arg("k2"), py::arg("theta"),
      py::arg("s_mix"),
      "Closed-form robust/clean training errors and the incentive gap");
  m.def(
      "sweep_error_model",
      [](double mu, double k1, double k2, double theta, double s_mix,
         const std::string& param, double lo, double hi, std::size_t steps) {
        const auto rows = sweep_error_model(
            params_from_args(mu, k1, k2, theta, s_mix), param, lo, hi, steps);
        py::list out;
        for (const auto& r : rows) out.append(report_to_dict(r));
        return out;
      },
      py::arg("mu"), py::arg("k1"), py::arg("k2"), py::arg("theta"),
      py::arg("s_mix"), py::arg("param"), py::arg("lo"), py::arg("hi"),
      py::arg("steps"));

  // ----- data ---------------------------------------------------------------
  py::class_<FeatureBank>(m, "FeatureBank")
      .def_readonly("k", &FeatureBank::k)
      .def_readonly("d", &FeatureBank::d)
      .def_property_readonly(
          "vectors", [](const FeatureBank& b) { return tensor_to_py(b.vectors); })
      .def("row", &FeatureBank::row, py::arg("class_index"), py::arg("which"));
  m.def("build_feature_bank", &build_feature_bank, py::arg("k"), py::arg("d"),
        py::arg("seed"), "Orthonormal dictionary, two directions per class");
  m.def("gram_deviation", &gram_deviation, py::arg("bank"));

  py::class_<DataPoint>(m, "DataPoint")
      .def_readonly("label", &DataPoint::label)
      .def_property_readonly(
          "view",
          [](const DataPoint& p) {
            return std::string(p.view == View::kSingle ? "single" : "multi");
          })
      .def_readonly("single_which", &DataPoint::single_which)
      .def_property_readonly(
          "patches", [](const DataPoint& p) { return tensor_to_py(p.patches); });

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("seed", &Dataset::seed)
      .def_readonly("bank", &Dataset::bank)
      .def_readonly("samples", &Dataset::samples)
      .def_property_readonly("size", &Dataset::size)
      .def_property_readonly("single_view_count", &Dataset::single_view_count);

  py::class_<DistributionConfig>(m, "DistributionConfig")
      .def(py::init<>())
      .def_readwrite("k", &DistributionConfig::k)
      .def_readwrite("d", &DistributionConfig::d)
      .def_readwrite("patches", &DistributionConfig::patches)
      .def_readwrite("patches_per_feature", &DistributionConfig::patches_per_feature)
      .def_readwrite("s", &DistributionConfig::s)
      .def_readwrite("mu", &DistributionConfig::mu)
      .def_readwrite("gamma", &DistributionConfig::gamma)
      .def_readwrite("rho", &DistributionConfig::rho)
      .def_readwrite("noise_std", &DistributionConfig::noise_std)
      .def_readwrite("main_lo", &DistributionConfig::main_lo)
      .def_readwrite("main_hi", &DistributionConfig::main_hi)
      .def_readwrite("simplified", &DistributionConfig::simplified);

  m.def("sample_dataset", &sample_dataset, py::arg("config"), py::arg("bank"),
        py::arg("n"), py::arg("seed"));
  m.def("sample_simplified", &sample_simplified, py::arg("k"), py::arg("mu"),
        py::arg("n"), py::arg("bank"), py::arg("seed"));
  m.def(
      "check_conformance",
      [](const Dataset& ds) {
        const ConformanceReport r = check_conformance(ds);
        py::dict d;
        d["ok"] = r.ok();
        d["range_violations"] = r.range_violations;
        d["disjointness_violations"] = r.disjointness_violations;
        d["placement_violations"] = r.placement_violations;
        d["bookkeeping_violations"] = r.bookkeeping_violations;
        d["single_view_fraction"] = r.single_view_fraction;
        return d;
      },
      py::arg("dataset"));
  m.def("write_dataset", &write_dataset, py::arg("path"), py::arg("dataset"));
  m.def("read_dataset", &read_dataset, py::arg("path"));

  // ----- model --------------------------------------------------------------
  py::class_<ModelArch>(m, "ModelArch")
      .def(py::init<>())
      .def_readwrite("k", &ModelArch::k)
      .def_readwrite("d", &ModelArch::d)
      .def_readwrite("patches", &ModelArch::patches)
      .def_readwrite("hidden", &ModelArch::hidden)
      .def_property(
          "activation",
          [](const ModelArch& a) { return activation_name(a.activation); },
          [](ModelArch& a, const std::string& name) {
            a.activation = activation_from_name(name);
          });

  py::class_<ModelParams>(m, "ModelParams")
      .def_readonly("arch", &ModelParams::arch)
      .def_property_readonly(
          "hidden", [](const ModelParams& p) { return tensor_to_py(p.hidden); })
      .def_property_readonly(
          "head", [](const ModelParams& p) { return tensor_to_py(p.head); })
      .def_property_readonly(
          "bias", [](const ModelParams& p) { return tensor_to_py(p.bias); })
      .def("parameter_count", &ModelParams::parameter_count);

  m.def("init_model", &init_model, py::arg("arch"), py::arg("seed"));
  m.def(
      "forward",
      [](const ModelParams& model, const py::handle& patches) {
        return forward_values(model, tensor_from_py(patches));
      },
      py::arg("model"), py::arg("patches"), "Class logits for one sample");
  m.def("save_checkpoint", &save_checkpoint, py::arg("path"), py::arg("model"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  // ----- attacks --------------------------------------------------------------
  py::class_<AttackConfig>(m, "AttackConfig")
      .def(py::init<>())
      .def_readwrite("epsilon", &AttackConfig::epsilon)
      .def_readwrite("step_size", &AttackConfig::step_size)
      .def_readwrite("steps", &AttackConfig::steps)
      .def_readwrite("random_start", &AttackConfig::random_start)
      .def_property(
          "objective",
          [](const AttackConfig& a) { return attack_objective_name(a.objective); },
          [](AttackConfig& a, const std::string& name) {
            a.objective = attack_objective_from_name(name);
          })
      .def_readwrite("clamp_box", &AttackConfig::clamp_box);

  m.def(
      "fgsm",
      [](const ModelParams& model, const AttackConfig& cfg,
         const py::handle& patches, std::uint32_t label) {
        return tensor_to_py(fgsm(model, cfg, tensor_from_py(patches), label));
      },
      py::arg("model"), py::arg("config"), py::arg("patches"), py::arg("label"));
  m.def(
      "pgd",
      [](const ModelParams& model, const AttackConfig& cfg,
         const py::handle& patches, std::uint32_t label, std::uint64_t seed) {
        return tensor_to_py(pgd(model, cfg, tensor_from_py(patches), label, seed));
      },
      py::arg("model"), py::arg("config"), py::arg("patches"), py::arg("label"),
      py::arg("seed"));

  // ----- training -------------------------------------------------------------
  py::class_<LossSpec>(m, "LossSpec")
      .def(py::init<>())
      .def_property(
          "method",
          [](const LossSpec& s) { return method_name(s.method); },
          [](LossSpec& s, const std::string& name) {
            s.method = method_from_name(name);
          })
      .def_readwrite("beta", &LossSpec::beta)
      .def_readwrite("tau", &LossSpec::tau)
      .def_readwrite("kl_reverse", &LossSpec::kl_reverse)
      .def_readwrite("stop_grad_clean", &LossSpec::stop_grad_clean)
      .def_readwrite("prob_floor", &LossSpec::prob_floor);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("n_clean", &TrainConfig::n_clean)
      .def_readwrite("n_warmup", &TrainConfig::n_warmup)
      .def_readwrite("n_adv", &TrainConfig::n_adv)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("step_decay", &TrainConfig::step_decay)
      .def_readwrite("decay_factor", &TrainConfig::decay_factor)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("attack", &TrainConfig::attack)
      .def_readwrite("loss", &TrainConfig::loss)
      .def_readwrite("init_from_teacher", &TrainConfig::init_from_teacher)
      .def_readwrite("eval_subset", &TrainConfig::eval_subset)
      .def_readwrite("eval_attack_steps", &TrainConfig::eval_attack_steps);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("model", &TrainResult::model)
      .def_property_readonly("history", [](const TrainResult& r) {
        py::list out;
        for (const auto& rec : r.history) out.append(metrics_to_dict(rec));
        return out;
      });

  m.def("train_clean", &train_clean, py::arg("arch"), py::arg("config"),
        py::arg("data"),
        py::call_guard<py::gil_scoped_release>());
  m.def("train_student", &train_student, py::arg("arch"), py::arg("config"),
        py::arg("data"), py::arg("teacher"),
        py::call_guard<py::gil_scoped_release>());
  m.def(
      "evaluate",
      [](const ModelParams& model, const Dataset& data, const AttackConfig& atk,
         std::uint64_t seed) {
        py::gil_scoped_release release;
        const MetricsRecord rec = evaluate(model, data, atk, seed);
        py::gil_scoped_acquire acquire;
        return metrics_to_dict(rec);
      },
      py::arg("model"), py::arg("data"), py::arg("attack"), py::arg("seed"));

  // ----- probes ---------------------------------------------------------------
  m.def(
      "feature_alignment",
      [](const ModelParams& model, const FeatureBank& bank, double threshold) {
        const AlignmentReport rep = feature_alignment(model, bank, threshold);
        py::dict d;
        d["cosines"] = tensor_to_py(rep.cosines);
        d["per_feature_max"] = rep.per_feature_max;
        py::list learned;
        for (const auto& f : rep.learned_set)
          learned.append(py::make_tuple(f.class_index, f.which));
        d["learned_set"] = learned;
        d["per_class_coverage"] = rep.per_class_coverage;
        d["mixture_mass"] = rep.mixture_mass;
        d["threshold"] = rep.threshold;
        return d;
      },
      py::arg("model"), py::arg("bank"), py::arg("threshold") = 0.5);
  m.def(
      "probe_report",
      [](const ModelParams& model, const FeatureBank& bank, const Dataset& data,
         double threshold) {
        return probe_report_json(model, bank, data, threshold).dump();
      },
      py::arg("model"), py::arg("bank"), py::arg("data"),
      py::arg("threshold") = 0.5,
      "Full probe report as a JSON string");

  // ----- experiment orchestration ---------------------------------------------
  m.def(
      "run_experiment",
      [](const std::string& config_json, bool force) {
        const ExperimentConfig cfg =
            experiment_from_json(nlohmann::json::parse(config_json));
        RunArtifacts art;
        {
          py::gil_scoped_release release;
          art = run_experiment(cfg, force);
        }
        py::dict d;
        d["dir"] = art.dir.string();
        d["config"] = art.config_path.string();
        d["teacher"] = art.teacher_path.string();
        d["student"] = art.student_path.string();
        d["metrics"] = art.metrics_path.string();
        d["probe"] = art.probe_path.string();
        d["final"] = metrics_to_dict(art.final_metrics);
        d["dataset_size"] = art.dataset_size;
        return d;
      },
      py::arg("config_json"), py::arg("force") = false,
      "Run one experiment from a JSON config string; returns artifact paths");
  m.def(
      "run_preset",
      [](const std::string& name, const std::string& config_json, bool force) {
        const ExperimentConfig base =
            experiment_from_json(nlohmann::json::parse(config_json));
        nlohmann::json summary;
        {
          py::gil_scoped_release release;
          summary = run_preset(name, base, force);
        }
        return summary.dump();
      },
      py::arg("name"), py::arg("config_json"), py::arg("force") = false,
      "Run a named experiment family; returns the summary as a JSON string");
  m.def("preset_names", [] { return kPresetNames; });
}
