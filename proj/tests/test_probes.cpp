#include <doctest.h>

#include <cmath>

#include "mvlab/errors.hpp"
#include "mvlab/probes.hpp"
#include "mvlab/rng.hpp"

using namespace mvlab;

namespace {

ModelParams dictionary_model(const FeatureBank& bank,
                             const std::vector<std::size_t>& rows,
                             double head_scale = 1.0) {
  ModelParams m;
  m.arch.k = bank.k;
  m.arch.d = bank.d;
  m.arch.patches = 2;
  m.arch.hidden = rows.size();
  m.arch.activation = Activation::kRelu;
  m.hidden = Tensor::matrix(rows.size(), bank.d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < bank.d; ++j)
      m.hidden.at(i, j) = bank.vectors.at(rows[i], j);
  m.head = Tensor::matrix(bank.k, rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    m.head.at(rows[i] / 2, i) = head_scale;
  m.bias = Tensor::zeros({bank.k});
  return m;
}

}  // namespace

TEST_CASE("a dictionary row has cosine one with its feature and zero elsewhere") {
  const FeatureBank bank = build_feature_bank(3, 14, 5);
  const ModelParams m = dictionary_model(bank, {bank.row(1, 1)});
  const AlignmentReport rep = feature_alignment(m, bank);

  const std::size_t col = bank.row(1, 1);
  for (std::size_t g = 0; g < bank.feature_count(); ++g) {
    if (g == col)
      CHECK(rep.cosines.at(0, g) == doctest::Approx(1.0).epsilon(1e-10));
    else
      CHECK(std::abs(rep.cosines.at(0, g)) <= 1e-10);
  }
  REQUIRE(rep.learned_set.size() == 1);
  CHECK(rep.learned_set[0] == FeatureId{1, 1});
  CHECK(rep.per_class_coverage == std::vector<int>{0, 1, 0});
  REQUIRE(rep.dominant[0].has_value());
  CHECK(*rep.dominant[0] == col);
  CHECK(rep.mixture_mass[0] <= 1e-9);
}

TEST_CASE("random directions have the Gaussian cosine profile") {
  const std::size_t d = 100, m = 1000, k = 4;
  const FeatureBank bank = build_feature_bank(k, d, 6);
  ModelParams model;
  model.arch.k = k;
  model.arch.d = d;
  model.arch.patches = 2;
  model.arch.hidden = m;
  model.hidden = Tensor::matrix(m, d);
  Rng rng(7);
  for (auto& v : model.hidden.values) v = rng.normal();
  model.head = Tensor::matrix(k, m);
  model.bias = Tensor::zeros({k});

  const AlignmentReport rep = feature_alignment(model, bank);
  double mean_abs = 0.0;
  for (double c : rep.cosines.values) mean_abs += std::abs(c);
  mean_abs /= static_cast<double>(rep.cosines.numel());
  CHECK(mean_abs == doctest::Approx(std::sqrt(2.0 / (M_PI * d))).epsilon(0.13));

  double mean_mass = 0.0;
  for (double v : rep.mixture_mass) mean_mass += v;
  mean_mass /= static_cast<double>(m);
  // The dominant column is the argmax of 2k half-normals, so the off-dominant
  // mass sits somewhat below the naive (2k-1) * E|cos|.
  CHECK(mean_mass ==
        doctest::Approx((2.0 * k - 1) * mean_abs).epsilon(0.25));
  CHECK(rep.learned_set.empty());
  for (double c : rep.cosines.values) {
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
  }
}

TEST_CASE("zero weight rows have no dominant feature and zero mass") {
  const FeatureBank bank = build_feature_bank(2, 8, 8);
  ModelParams m = dictionary_model(bank, {bank.row(0, 1)});
  for (std::size_t j = 0; j < bank.d; ++j) m.hidden.at(0, j) = 0.0;
  const AlignmentReport rep = feature_alignment(m, bank);
  for (std::size_t g = 0; g < bank.feature_count(); ++g)
    CHECK(rep.cosines.at(0, g) == 0.0);
  CHECK(!rep.dominant[0].has_value());
  CHECK(rep.mixture_mass[0] == 0.0);
  CHECK(rep.learned_set.empty());
}

TEST_CASE("a two-feature mixture reports the minority cosine as its mass") {
  const FeatureBank bank = build_feature_bank(3, 10, 9);
  ModelParams m = dictionary_model(bank, {bank.row(1, 1)});
  for (std::size_t j = 0; j < bank.d; ++j)
    m.hidden.at(0, j) = 0.9 * bank.vectors.at(bank.row(1, 1), j) +
                        0.1 * bank.vectors.at(bank.row(2, 1), j);
  const AlignmentReport rep = feature_alignment(m, bank);
  const double norm = std::sqrt(0.82);
  CHECK(rep.cosines.at(0, bank.row(1, 1)) ==
        doctest::Approx(0.9 / norm).epsilon(1e-9));
  CHECK(rep.cosines.at(0, bank.row(2, 1)) ==
        doctest::Approx(0.1 / norm).epsilon(1e-9));
  CHECK(*rep.dominant[0] == bank.row(1, 1));
  CHECK(rep.mixture_mass[0] == doctest::Approx(0.1 / norm).epsilon(1e-6));
}

TEST_CASE("cosines are invariant to positive rescaling of a row") {
  const FeatureBank bank = build_feature_bank(2, 9, 10);
  ModelParams m = dictionary_model(bank, {bank.row(0, 2)});
  Rng rng(11);
  for (std::size_t j = 0; j < bank.d; ++j) m.hidden.at(0, j) = rng.normal();
  const AlignmentReport before = feature_alignment(m, bank);
  for (std::size_t j = 0; j < bank.d; ++j) m.hidden.at(0, j) *= 7.5;
  const AlignmentReport after = feature_alignment(m, bank);
  for (std::size_t g = 0; g < bank.feature_count(); ++g)
    CHECK(before.cosines.at(0, g) ==
          doctest::Approx(after.cosines.at(0, g)).epsilon(1e-12));
}

TEST_CASE("alignment rejects a bank of the wrong dimension") {
  const FeatureBank bank = build_feature_bank(2, 8, 12);
  const FeatureBank other = build_feature_bank(2, 10, 12);
  const ModelParams m = dictionary_model(bank, {0});
  CHECK_THROWS_AS(feature_alignment(m, other), ContractError);
  CHECK_THROWS_AS(
      mixture_mass(Tensor::matrix(2, 4),
                   std::vector<std::optional<std::size_t>>(3)),
      ContractError);
}

TEST_CASE("training errors match the closed forms on degenerate models") {
  const std::size_t k = 2, d = 8;
  const FeatureBank bank = build_feature_bank(k, d, 13);
  const Dataset data = sample_simplified(k, 0.0, 40, bank, 14);

  ModelParams zero;
  zero.arch.k = k;
  zero.arch.d = d;
  zero.arch.patches = data.config.patches;
  zero.arch.hidden = 3;
  zero.hidden = Tensor::zeros({3, d});
  zero.head = Tensor::zeros({k, 3});
  zero.bias = Tensor::zeros({k});

  AttackConfig off;
  off.epsilon = 0.0;
  const TrainingErrors uniform = training_errors(zero, data, off, 1);
  CHECK(uniform.clean_err == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(uniform.robust_err == uniform.clean_err);

  // Both features of both classes, head scaled to saturate the softmax.
  const ModelParams sharp = dictionary_model(
      bank, {bank.row(0, 1), bank.row(0, 2), bank.row(1, 1), bank.row(1, 2)},
      60.0);
  const TrainingErrors sat = training_errors(sharp, data, off, 1);
  CHECK(sat.clean_err < 1e-20);
}

TEST_CASE("perturbation energy splits exactly across the dictionary span") {
  const std::size_t k = 3, d = 40;
  const FeatureBank bank = build_feature_bank(k, d, 15);

  Tensor delta = Tensor::matrix(4, d);
  for (std::size_t j = 0; j < d; ++j)
    delta.at(2, j) = bank.vectors.at(bank.row(1, 1), j);
  PerturbationAlignment pa = perturbation_alignment(delta, bank);
  CHECK(pa.per_feature[bank.row(1, 1)] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(pa.off_span_mass <= 1e-9);
  CHECK(pa.in_span_mass == doctest::Approx(1.0).epsilon(1e-9));

  Tensor none = Tensor::matrix(4, d);
  pa = perturbation_alignment(none, bank);
  CHECK(pa.in_span_mass == 0.0);
  CHECK(pa.off_span_mass == 0.0);

  Rng rng(16);
  double in_fraction = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    Tensor rnd = Tensor::matrix(4, d);
    for (auto& v : rnd.values) v = rng.normal();
    pa = perturbation_alignment(rnd, bank);
    std::vector<double> summed(d, 0.0);
    for (std::size_t p = 0; p < 4; ++p)
      for (std::size_t j = 0; j < d; ++j) summed[j] += rnd.at(p, j);
    double total_sq = 0.0;
    for (double v : summed) total_sq += v * v;
    CHECK(pa.in_span_mass * pa.in_span_mass +
              pa.off_span_mass * pa.off_span_mass ==
          doctest::Approx(total_sq).epsilon(1e-9));
    in_fraction += pa.in_span_mass * pa.in_span_mass / total_sq;
  }
  in_fraction /= 40.0;
  CHECK(in_fraction == doctest::Approx(2.0 * k / static_cast<double>(d)).epsilon(0.45));
}

TEST_CASE("single-view accuracy is split by learned-feature membership") {
  const std::size_t k = 2, d = 10;
  const FeatureBank bank = build_feature_bank(k, d, 17);
  const Dataset data = sample_simplified(k, 0.6, 200, bank, 18);
  // Learns only the first feature of each class.
  const ModelParams m =
      dictionary_model(bank, {bank.row(0, 1), bank.row(1, 1)}, 8.0);

  const SingleViewReport rep = single_view_learning_report(m, bank, data);
  REQUIRE(rep.alignment.learned_set.size() == 2);
  CHECK(rep.alignment.per_class_coverage == std::vector<int>{1, 1});

  std::size_t sv = data.single_view_count();
  CHECK(rep.n_learned + rep.n_not_learned == sv);
  CHECK(rep.n_learned > 0);
  CHECK(rep.n_not_learned > 0);
  REQUIRE(rep.acc_learned.has_value());
  REQUIRE(rep.acc_not_learned.has_value());
  CHECK(*rep.acc_learned == 1.0);
  CHECK(*rep.acc_not_learned < 0.9);
}

TEST_CASE("probe report serializes the documented keys") {
  const std::size_t k = 2, d = 10;
  const FeatureBank bank = build_feature_bank(k, d, 19);
  const Dataset data = sample_simplified(k, 0.5, 30, bank, 20);
  const ModelParams m = dictionary_model(bank, {bank.row(0, 1)});
  const nlohmann::json j = probe_report_json(m, bank, data);

  for (const char* key :
       {"cosines", "learned_set", "per_class_coverage", "mixture_mass",
        "sv_accuracy_by_learned_status"})
    CHECK(j.contains(key));
  CHECK(j["cosines"].size() == m.arch.hidden);
  CHECK(j["cosines"][0].size() == bank.feature_count());
  CHECK(j["per_class_coverage"].size() == k);
  CHECK(j["sv_accuracy_by_learned_status"].contains("learned"));
  CHECK(j["sv_accuracy_by_learned_status"].contains("not_learned"));
  const std::string dumped = j.dump();
  CHECK(!dumped.empty());
}
