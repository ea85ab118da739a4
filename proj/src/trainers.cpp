#include "mvlab/trainers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "mvlab/errors.hpp"
#include "mvlab/graph.hpp"
#include "mvlab/probes.hpp"
#include "mvlab/rng.hpp"

namespace mvlab {

namespace {

constexpr std::uint64_t kShuffleStream = 0x73687566;  // shuffle permutations
constexpr std::uint64_t kAttackStream = 0x61747461;   // training-time attacks
constexpr std::uint64_t kEvalStream = 0x6576616c;     // eval subset + attacks
constexpr std::uint64_t kStudentInitStream = 0x73696e69;

class SgdMomentum {
 public:
  SgdMomentum(const ModelParams& shape, double momentum)
      : momentum_(momentum),
        v_hidden_(Tensor::zeros(shape.hidden.shape)),
        v_head_(Tensor::zeros(shape.head.shape)),
        v_bias_(Tensor::zeros(shape.bias.shape)) {}

  void step(ModelParams& p, const Tensor& g_hidden, const Tensor& g_head,
            const Tensor& g_bias, double lr) {
    apply(p.hidden, v_hidden_, g_hidden, lr);
    apply(p.head, v_head_, g_head, lr);
    apply(p.bias, v_bias_, g_bias, lr);
  }

 private:
  void apply(Tensor& param, Tensor& vel, const Tensor& grad, double lr) {
    for (std::size_t i = 0; i < param.numel(); ++i) {
      vel.values[i] = momentum_ * vel.values[i] + grad.values[i];
      param.values[i] -= lr * vel.values[i];
    }
  }

  double momentum_;
  Tensor v_hidden_, v_head_, v_bias_;
};

struct GradAccumulator {
  Tensor hidden, head, bias;
  double loss_sum = 0.0;

  explicit GradAccumulator(const ModelParams& shape)
      : hidden(Tensor::zeros(shape.hidden.shape)),
        head(Tensor::zeros(shape.head.shape)),
        bias(Tensor::zeros(shape.bias.shape)) {}

  void add(const Tensor& gh, const Tensor& gd, const Tensor& gb, double loss) {
    for (std::size_t i = 0; i < hidden.numel(); ++i)
      hidden.values[i] += gh.values[i];
    for (std::size_t i = 0; i < head.numel(); ++i)
      head.values[i] += gd.values[i];
    for (std::size_t i = 0; i < bias.numel(); ++i)
      bias.values[i] += gb.values[i];
    loss_sum += loss;
  }

  void scale(double f) {
    for (auto& v : hidden.values) v *= f;
    for (auto& v : head.values) v *= f;
    for (auto& v : bias.values) v *= f;
  }
};

// One forward/backward of `spec` on a single sample; gradients land in acc.
double accumulate_sample(const LossSpec& spec, const ModelParams& student,
                         const Tensor& clean, const Tensor& adv,
                         std::uint32_t label, const ModelParams* teacher,
                         GradAccumulator& acc) {
  Graph g;
  ModelVars vars = declare_params(g, student, true);
  Graph::Var loss =
      loss_graph(g, spec, student.arch, vars, clean, adv, label, teacher);
  g.backward(loss);
  const double value = g.value(loss).values[0];
  acc.add(g.grad(vars.hidden), g.grad(vars.head), g.grad(vars.bias), value);
  return value;
}

std::vector<std::size_t> eval_subset_indices(const TrainConfig& cfg,
                                             std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (cfg.eval_subset == 0 || cfg.eval_subset >= n) return idx;
  Rng rng(derive_seed(cfg.seed, kEvalStream));
  const auto perm = rng.permutation(n);
  idx.assign(perm.begin(), perm.begin() + static_cast<long>(cfg.eval_subset));
  return idx;
}

AttackConfig eval_attack(const TrainConfig& cfg) {
  AttackConfig a = cfg.attack;
  if (cfg.eval_attack_steps >= 0) a.steps = cfg.eval_attack_steps;
  return a;
}

double ratio_or_nan(std::size_t hits, std::size_t total) {
  if (total == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(hits) / static_cast<double>(total);
}

// Shared epoch skeleton for both trainers: shuffle, batch, accumulate
// gradients, update. make_adv produces the attacked input for one sample (or
// echoes the clean input for plain cross-entropy phases).
template <typename MakeAdv>
double run_epoch(ModelParams& model, const TrainConfig& cfg,
                 const LossSpec& spec, const Dataset& data,
                 const ModelParams* teacher, SgdMomentum& opt, double lr,
                 std::uint64_t shuffle_seed, int epoch_index,
                 MakeAdv&& make_adv) {
  const std::size_t n = data.samples.size();
  Rng shuffle_rng(shuffle_seed);
  const auto order = shuffle_rng.permutation(n);

  double epoch_loss = 0.0;
  for (std::size_t start = 0; start < n; start += cfg.batch_size) {
    const std::size_t stop = std::min(start + cfg.batch_size, n);
    GradAccumulator acc(model);
    try {
      for (std::size_t pos = start; pos < stop; ++pos) {
        const DataPoint& s = data.samples[order[pos]];
        const Tensor adv = make_adv(model, s, order[pos]);
        accumulate_sample(spec, model, s.patches, adv, s.label, teacher, acc);
      }
    } catch (const InvalidInputError& e) {
      throw TrainingDivergedError("non-finite loss at epoch " +
                                  std::to_string(epoch_index) + ": " +
                                  e.what());
    }
    acc.scale(1.0 / static_cast<double>(stop - start));
    epoch_loss += acc.loss_sum;
    opt.step(model, acc.hidden, acc.head, acc.bias, lr);
  }
  return epoch_loss / static_cast<double>(n);
}

}  // namespace

void validate(const TrainConfig& cfg) {
  if (cfg.n_clean < 0 || cfg.n_warmup < 0 || cfg.n_adv < 0)
    throw InvalidParameterError("epoch counts must be >= 0");
  if (cfg.batch_size < 1)
    throw InvalidParameterError("batch_size must be >= 1");
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr))
    throw InvalidParameterError("learning rate must be finite and > 0");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0)
    throw InvalidParameterError("momentum must be in [0, 1)");
  if (!(cfg.decay_factor > 0.0) || cfg.decay_factor > 1.0)
    throw InvalidParameterError("decay_factor must be in (0, 1]");
  validate(cfg.attack);
  validate(cfg.loss);
}

double lr_at(const TrainConfig& cfg, int epoch, int total) {
  if (!cfg.step_decay || total <= 0) return cfg.lr;
  const int m1 = total / 2;
  const int m2 = (3 * total) / 4;
  double lr = cfg.lr;
  if (epoch >= m1) lr *= cfg.decay_factor;
  if (epoch >= m2) lr *= cfg.decay_factor;
  return lr;
}

std::string metrics_csv_header() {
  return "epoch,train_loss,clean_acc,robust_acc,clean_train_err,"
         "robust_train_err,sv_clean_acc,mv_clean_acc,sv_robust_acc,"
         "mv_robust_acc,features_learned,wall_time_ms";
}

std::string metrics_csv_row(const MetricsRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%zu,"
                "%.3f",
                r.epoch, r.train_loss, r.clean_acc, r.robust_acc,
                r.clean_train_err, r.robust_train_err, r.sv_clean_acc,
                r.mv_clean_acc, r.sv_robust_acc, r.mv_robust_acc,
                r.features_learned, r.wall_time_ms);
  return buf;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRecord>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open metrics file for writing: " + path);
  out << metrics_csv_header() << "\n";
  for (const auto& r : rows) out << metrics_csv_row(r) << "\n";
  if (!out) throw IoError("failed writing metrics file: " + path);
}

MetricsRecord evaluate(const ModelParams& model, const Dataset& data,
                       const AttackConfig& attack, std::uint64_t seed,
                       const std::vector<std::size_t>* subset) {
  std::vector<std::size_t> all;
  if (!subset) {
    all.resize(data.samples.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    subset = &all;
  }
  if (subset->empty())
    throw InvalidInputError("evaluate needs at least one sample");

  MetricsRecord rec;
  double clean_err_sum = 0.0, robust_err_sum = 0.0;
  std::size_t clean_hits = 0, robust_hits = 0;
  std::size_t sv_total = 0, mv_total = 0;
  std::size_t sv_clean = 0, mv_clean = 0, sv_robust = 0, mv_robust = 0;

  for (const std::size_t i : *subset) {
    const DataPoint& s = data.samples[i];
    const auto clean_probs = softmax_values(forward_values(model, s.patches));
    const bool clean_ok =
        std::max_element(clean_probs.begin(), clean_probs.end()) -
            clean_probs.begin() ==
        static_cast<long>(s.label);
    clean_err_sum += 1.0 - clean_probs[s.label];
    clean_hits += clean_ok ? 1 : 0;

    const Tensor adv = pgd(model, attack, s.patches, s.label,
                           derive_seed(derive_seed(seed, kEvalStream), i));
    const auto adv_probs = softmax_values(forward_values(model, adv));
    const bool robust_ok =
        std::max_element(adv_probs.begin(), adv_probs.end()) -
            adv_probs.begin() ==
        static_cast<long>(s.label);
    robust_err_sum += 1.0 - adv_probs[s.label];
    robust_hits += robust_ok ? 1 : 0;

    if (s.view == View::kSingle) {
      sv_total += 1;
      sv_clean += clean_ok ? 1 : 0;
      sv_robust += robust_ok ? 1 : 0;
    } else {
      mv_total += 1;
      mv_clean += clean_ok ? 1 : 0;
      mv_robust += robust_ok ? 1 : 0;
    }
  }

  const auto n = static_cast<double>(subset->size());
  rec.clean_acc = static_cast<double>(clean_hits) / n;
  rec.robust_acc = static_cast<double>(robust_hits) / n;
  rec.clean_train_err = clean_err_sum / n;
  rec.robust_train_err = robust_err_sum / n;
  rec.sv_clean_acc = ratio_or_nan(sv_clean, sv_total);
  rec.mv_clean_acc = ratio_or_nan(mv_clean, mv_total);
  rec.sv_robust_acc = ratio_or_nan(sv_robust, sv_total);
  rec.mv_robust_acc = ratio_or_nan(mv_robust, mv_total);
  rec.features_learned = feature_alignment(model, data.bank).learned_set.size();
  return rec;
}

TrainResult train_clean(const ModelArch& arch, const TrainConfig& cfg,
                        const Dataset& data) {
  validate(arch);
  validate(cfg);
  if (data.samples.empty())
    throw InvalidInputError("train_clean needs a nonempty dataset");
  if (arch.k != data.config.k || arch.d != data.config.d ||
      arch.patches != data.config.patches)
    throw ConfigError("model arch (k,d,P) does not match the dataset");

  TrainResult result;
  result.model = init_model(arch, cfg.seed);
  const auto subset = eval_subset_indices(cfg, data.samples.size());
  const AttackConfig ev_attack = eval_attack(cfg);

  LossSpec ce;
  ce.method = Method::kClean;

  SgdMomentum opt(result.model, cfg.momentum);
  for (int epoch = 0; epoch < cfg.n_clean; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double mean_loss = run_epoch(
        result.model, cfg, ce, data, nullptr, opt,
        lr_at(cfg, epoch, cfg.n_clean),
        derive_seed(derive_seed(cfg.seed, kShuffleStream), epoch), epoch,
        [](const ModelParams&, const DataPoint& s, std::size_t) {
          return s.patches;
        });
    MetricsRecord rec = evaluate(result.model, data, ev_attack,
                                 derive_seed(cfg.seed, epoch), &subset);
    rec.epoch = epoch;
    rec.train_loss = mean_loss;
    rec.wall_time_ms =
        std::chrono::duration<double, std::milli>(
            std::chrono::steady_clock::now() - t0)
            .count();
    result.history.push_back(rec);
  }
  return result;
}

TrainResult train_student(const ModelArch& arch, const TrainConfig& cfg,
                          const Dataset& data, const ModelParams& teacher) {
  validate(arch);
  validate(cfg);
  if (data.samples.empty())
    throw InvalidInputError("train_student needs a nonempty dataset");
  if (arch.k != data.config.k || arch.d != data.config.d ||
      arch.patches != data.config.patches)
    throw ConfigError("model arch (k,d,P) does not match the dataset");
  const bool teacher_used =
      cfg.init_from_teacher || method_needs_teacher(cfg.loss.method);
  if (teacher_used &&
      (teacher.arch.k != arch.k || teacher.arch.d != arch.d ||
       teacher.arch.patches != arch.patches ||
       teacher.arch.hidden != arch.hidden))
    throw ConfigError("teacher architecture does not match the student");

  TrainResult result;
  result.model = cfg.init_from_teacher
                     ? teacher
                     : init_model(arch, derive_seed(cfg.seed, kStudentInitStream));
  result.model.arch = arch;

  const auto subset = eval_subset_indices(cfg, data.samples.size());
  const AttackConfig ev_attack = eval_attack(cfg);
  const ModelParams* teacher_ptr =
      method_needs_teacher(cfg.loss.method) ? &teacher : nullptr;

  LossSpec warmup;
  warmup.method = Method::kClean;

  SgdMomentum opt(result.model, cfg.momentum);
  const int total = cfg.n_warmup + cfg.n_adv;
  const bool attacks_needed = cfg.loss.method != Method::kClean &&
                              cfg.attack.epsilon > 0.0 &&
                              (cfg.attack.steps > 0 || cfg.attack.random_start);
  const std::uint64_t attack_root = derive_seed(cfg.seed, kAttackStream);

  for (int epoch = 0; epoch < total; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const bool warm = epoch < cfg.n_warmup;
    const LossSpec& spec = warm ? warmup : cfg.loss;
    const std::uint64_t epoch_attack_seed = derive_seed(attack_root, epoch);
    auto make_adv = [&](const ModelParams& m, const DataPoint& s,
                        std::size_t index) {
      if (warm || !attacks_needed) return s.patches;
      return pgd(m, cfg.attack, s.patches, s.label,
                 derive_seed(epoch_attack_seed, index));
    };
    const double mean_loss = run_epoch(
        result.model, cfg, spec, data, warm ? nullptr : teacher_ptr, opt,
        lr_at(cfg, epoch, total),
        derive_seed(derive_seed(cfg.seed, kShuffleStream), 1000 + epoch),
        epoch, make_adv);
    MetricsRecord rec = evaluate(result.model, data, ev_attack,
                                 derive_seed(cfg.seed, 5000 + epoch), &subset);
    rec.epoch = epoch;
    rec.train_loss = mean_loss;
    rec.wall_time_ms =
        std::chrono::duration<double, std::milli>(
            std::chrono::steady_clock::now() - t0)
            .count();
    result.history.push_back(rec);
  }
  return result;
}

}  // namespace mvlab
