#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "itb/attribution.hpp"
#include "itb/dataset_store.hpp"
#include "itb/models.hpp"
#include "itb/rng.hpp"
#include "itb/series.hpp"
#include "json.hpp"

namespace itb {

inline constexpr double kEpsilon = 1e-8;

struct QuantileSet {
  std::vector<double> values{0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.95};
  // Strictly increasing, inside (0, 1), non-empty.
  void validate() const;
};

using Mask = std::vector<std::uint8_t>;

// Empirical quantile with linear interpolation between order statistics.
double linear_quantile(std::vector<double> values, double q);

// Elements with relevance > 0 and relevance >= the q-quantile of the strictly
// positive values; elements tied with the quantile enter by rank, from
// round(q (n - 1)) upwards in the stable sort. Empty when nothing is positive.
Mask positive_set(const RelevanceMap& relevance, double q);

std::size_t count(const Mask& mask);

// Relevance inside the mask over all positive relevance (+ eps).
double tic(const RelevanceMap& relevance, const Mask& mask, double eps = kEpsilon);
double tic(const RelevanceMap& relevance, double q, double eps = kEpsilon);

enum class Fill { NormalSample, Permute };
enum class Occlusion { NormalSample, Permute, RandomBaseline };

std::string_view fill_name(Fill f);
Fill parse_fill(std::string_view name);

// NormalSample: masked elements <- N(0, 1/(2 sqrt 3)^2).
// Permute: masked values shuffled among masked positions.
// RandomBaseline: a uniform random mask of the same size is filled with `fill`.
Series occlude(const Series& x, const Mask& mask, Occlusion method, Rng& rng, Fill fill = Fill::NormalSample);

// 1 - (occluded - expectancy) / (original - expectancy); DegenerateReference
// when |original - expectancy| <= 1e-9.
double s_e(double original, double occluded, double expectancy);

struct CurvePoint {
  double q = 0.0;
  std::size_t n_mask = 0;
  double n_r = 0.0;  // n_mask / (M T)
  double tic = 0.0;
  double s_e = 0.0;
  double occluded_score = 0.0;
};

struct SampleCurve {
  std::size_t sample = 0;
  std::size_t target = 0;
  std::size_t n_positive = 0;
  double original_score = 0.0;
  double expectancy = 0.0;
  std::vector<CurvePoint> points;  // ascending q
  std::vector<CurvePoint> random_points;  // matched-cardinality random masks, if requested
};

// Trapezoid over (0, 0), the points sorted by n_r, and (1, s_e at the
// smallest q).
double auc_se(const std::vector<CurvePoint>& points);

// Mean of dS/dTIC over adjacent quantile pairs of every curve; pairs with
// |dTIC| < 1e-6 are skipped. NoValidPairs when none remain.
double information_ratio(const std::vector<std::vector<CurvePoint>>& curves);

// raw = sum(w r over I+) / (sum(r over I+) + eps); gamma = min(1, |N_I+ - N_w| / N_I+);
// HMI = raw (1 - gamma). NoPositiveRelevance when I+ is empty.
double hmi(const RelevanceMap& relevance, const ExpertMask& expert, double eps = kEpsilon);

struct SampleEvaluationInput {
  std::size_t sample = 0;  // dataset index, keys the random streams
  std::size_t target = 0;
  double expectancy = 0.0;
};

// Occludes `x` at every quantile, rescoring once per quantile. Streams are
// keyed by (seed, sample, quantile index).
SampleCurve evaluate_sample(const Scorer& scorer, const Series& x, const RelevanceMap& relevance,
                            const SampleEvaluationInput& input, const QuantileSet& quantiles, Fill fill,
                            std::uint64_t seed, bool random_baseline = false, double eps = kEpsilon);

enum class AucMode { MeanCurve, PerSampleMean };

struct EvaluationConfig {
  QuantileSet quantiles;
  Fill fill = Fill::NormalSample;
  TargetPolicy target = TargetPolicy::TrueClass;
  bool correct_only = true;
  ExpectancyMode expectancy = ExpectancyMode::PerClass;
  bool random_baseline = true;
  AucMode auc_mode = AucMode::MeanCurve;
  double epsilon = kEpsilon;
  std::size_t min_samples = 5;
  std::uint64_t seed = 0;
  std::size_t workers = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

EvaluationConfig parse_evaluation_config(const nlohmann::json& j, EvaluationConfig base = EvaluationConfig{});

struct MeanPoint {
  double q = 0.0;
  double n_r = 0.0;
  double tic = 0.0;
  double s_e = 0.0;
  double accuracy = 0.0;       // all covered split samples, occluded at q
  double accuracy_n_r = 0.0;   // mean n_r over those samples
};

struct MethodReport {
  std::string method;
  std::string scorer_id;
  EvaluationConfig config;

  std::size_t n_split = 0;
  std::size_t n_covered = 0;
  std::size_t n_misclassified = 0;
  std::size_t n_no_positive = 0;
  std::size_t n_degenerate = 0;
  std::size_t n_evaluated = 0;
  bool insufficient_samples = false;

  double original_accuracy = 0.0;
  std::vector<MeanPoint> curve;
  double auc = 0.0;                 // per config.auc_mode
  double auc_mean_curve = 0.0;
  double auc_per_sample_mean = 0.0;
  std::optional<double> information_ratio;
  std::optional<double> hmi;
  std::optional<std::vector<MeanPoint>> random_curve;
  std::optional<double> random_auc;
  std::vector<SampleCurve> samples;

  nlohmann::json to_json(bool include_samples = false) const;
  static MethodReport from_json(const nlohmann::json& j);
};

// Scores, occludes and aggregates one relevance container over the dataset
// samples in `split` that the container covers.
MethodReport evaluate_method(const Scorer& scorer, const Dataset& data, const std::vector<std::size_t>& split,
                             const RelevanceContainer& relevance, const Expectancy& expectancy,
                             const EvaluationConfig& config);

}  // namespace itb
