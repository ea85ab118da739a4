#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvlab/attacks.hpp"
#include "mvlab/model.hpp"
#include "mvlab/multiview.hpp"

namespace mvlab {

struct TrainConfig {
  int n_clean = 30;   // teacher epochs of plain cross-entropy
  int n_warmup = 0;   // student epochs of plain cross-entropy before attacks
  int n_adv = 30;     // student epochs under the configured loss
  std::size_t batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  bool step_decay = true;     // x decay_factor at 50% and 75% of each phase
  double decay_factor = 0.1;
  std::uint64_t seed = 1;
  AttackConfig attack;
  LossSpec loss;
  bool init_from_teacher = true;
  // Per-epoch metrics are computed on a fixed random subset of this size
  // (0 = the whole dataset) so monitoring cost stays bounded.
  std::size_t eval_subset = 512;
  int eval_attack_steps = -1;  // -1 = attack.steps
};

void validate(const TrainConfig& cfg);

// Learning rate for a 0-based epoch within a phase of `total` epochs.
double lr_at(const TrainConfig& cfg, int epoch, int total);

struct MetricsRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double clean_acc = 0.0;
  double robust_acc = 0.0;
  double clean_train_err = 0.0;   // mean 1 - p_label on clean inputs
  double robust_train_err = 0.0;  // same on attacked inputs
  // View-conditional accuracies; NaN marks an absent view subset.
  double sv_clean_acc = 0.0;
  double mv_clean_acc = 0.0;
  double sv_robust_acc = 0.0;
  double mv_robust_acc = 0.0;
  std::size_t features_learned = 0;
  double wall_time_ms = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& r);
void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRecord>& rows);

struct TrainResult {
  ModelParams model;
  std::vector<MetricsRecord> history;
};

// Clean/robust accuracy and error on `data` (optionally restricted to
// `subset` indices), with view breakdowns and the learned-feature count.
// epoch, train_loss, and wall_time_ms are left for the caller.
MetricsRecord evaluate(const ModelParams& model, const Dataset& data,
                       const AttackConfig& attack, std::uint64_t seed,
                       const std::vector<std::size_t>* subset = nullptr);

// Cross-entropy SGD for n_clean epochs from a fresh He init at cfg.seed.
TrainResult train_clean(const ModelArch& arch, const TrainConfig& cfg,
                        const Dataset& data);

// Optional warm-up epochs of plain cross-entropy, then n_adv epochs of the
// configured composite loss on attacked inputs. The student starts as an
// exact copy of the teacher when init_from_teacher is set.
TrainResult train_student(const ModelArch& arch, const TrainConfig& cfg,
                          const Dataset& data, const ModelParams& teacher);

}  // namespace mvlab
