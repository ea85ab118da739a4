#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mvlab/model.hpp"
#include "mvlab/multiview.hpp"
#include "mvlab/trainers.hpp"

namespace mvlab {

struct ProbeConfig {
  bool enabled = true;
  double threshold = 0.5;
};

// Full specification of one run: data distribution, architecture, training
// recipe, and probe settings. JSON round-trippable; unknown keys rejected.
struct ExperimentConfig {
  std::string run_id = "run";
  std::string output_dir;  // empty: $MVLAB_OUT if set, else "out"
  DistributionConfig data;
  std::size_t n_samples = 2000;
  std::uint64_t data_seed = 1;
  ModelArch arch;  // k, d, patches mirror the data section
  TrainConfig train;
  ProbeConfig probes;
};

ExperimentConfig default_experiment();
ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::json experiment_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_experiment(const std::string& path);
void validate(const ExperimentConfig& cfg);

// Sets the value at a dotted path like "train.loss.tau", creating objects
// along the way. The value text is parsed as JSON when possible and kept as a
// string otherwise.
void apply_override(nlohmann::json& j, const std::string& dotted_path,
                    const std::string& value);

std::string resolved_output_dir(const ExperimentConfig& cfg);
std::filesystem::path run_dir(const ExperimentConfig& cfg);

// Bank and samples implied by the data section; the bank seed is derived
// from the data seed, so (config, seed) fully determines the bytes.
Dataset make_dataset(const ExperimentConfig& cfg);

struct RunArtifacts {
  std::filesystem::path dir;
  std::filesystem::path config_path;
  std::filesystem::path teacher_path;   // empty when no teacher was involved
  std::filesystem::path student_path;   // empty for the plain clean method
  std::filesystem::path metrics_path;
  std::filesystem::path probe_path;     // empty when probes are disabled
  MetricsRecord final_metrics;
  std::size_t dataset_size = 0;
};

// Runs one experiment end to end and writes the run directory
// (config.json, teacher.ckpt, student.ckpt, metrics.csv, probe.json).
// An existing run directory is refused unless force is set. An external
// teacher skips clean training (presets reuse one teacher across runs).
RunArtifacts run_experiment(const ExperimentConfig& cfg, bool force = false,
                            const ModelParams* external_teacher = nullptr);

extern const std::vector<std::string> kPresetNames;

// Expands a preset into its per-run configs, nested under the base run_id.
std::vector<ExperimentConfig> expand_preset(const std::string& name,
                                            const ExperimentConfig& base);

// Runs every config of the preset (reusing teachers where architectures and
// seeds coincide) and writes <output>/<run_id>/summary.json.
nlohmann::json run_preset(const std::string& name,
                          const ExperimentConfig& base, bool force = false);

}  // namespace mvlab
