#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "itb/dataset_store.hpp"
#include "itb/models.hpp"
#include "itb/rng.hpp"
#include "itb/series.hpp"
#include "json.hpp"

namespace itb {

enum class Method { ShapleySampling, KernelShap, Saliency, IntegratedGradients, Random };
enum class BaselinePolicy { Zeros, NormalNoise };
// Which logit is explained and scored: the true label or the model's prediction.
enum class TargetPolicy { TrueClass, Predicted };

std::string_view method_name(Method m);
// Accepts canonical names and the short forms shapley, kernelshap, saliency, ig, random.
Method parse_method(std::string_view name);
std::string_view baseline_name(BaselinePolicy b);
BaselinePolicy parse_baseline(std::string_view name);
std::string_view target_policy_name(TargetPolicy t);
TargetPolicy parse_target_policy(std::string_view name);

struct AttributionConfig {
  Method method = Method::ShapleySampling;
  std::size_t n_permutations = 25;
  std::size_t n_coalitions = 2048;
  std::size_t ig_steps = 50;
  BaselinePolicy baseline = BaselinePolicy::Zeros;
  // Treat the M values of one time step as a single player.
  bool group_time_steps = false;
  // Central finite differences when the scorer has no analytic gradient.
  bool allow_fd_gradient = false;
  // Upper bound on samples per score_batch call.
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  std::size_t workers = 0;

  void validate() const;
  // Everything that influences the output (no execution knobs).
  nlohmann::json to_json() const;
};

AttributionConfig parse_attribution_config(const nlohmann::json& j, AttributionConfig base = AttributionConfig{});

// Players of the attribution game: each entry lists the flat element indices
// (m * T + t) that one player switches between baseline and input.
std::vector<std::vector<std::size_t>> make_players(std::size_t channels, std::size_t steps, bool group_time_steps);

Series make_baseline(BaselinePolicy policy, std::size_t channels, std::size_t steps, std::uint64_t seed,
                     std::size_t sample_index);

struct ShapleyEstimate {
  RelevanceMap values;
  // Monte-Carlo standard error of each element's estimate.
  RelevanceMap standard_error;
};

ShapleyEstimate shapley_sampling(const Scorer& scorer, const Series& x, std::size_t cls, const Series& baseline,
                                 std::size_t n_permutations, bool group_time_steps, Rng& rng,
                                 std::size_t batch_size = 256);

// Shapley-kernel weighted least squares with the efficiency constraint
// sum(phi) = S(x) - S(baseline) imposed exactly. Enumerates every coalition
// when that needs no more than n_coalitions evaluations, otherwise samples
// coalition sizes from the kernel and pairs each draw with its complement.
RelevanceMap kernel_shap(const Scorer& scorer, const Series& x, std::size_t cls, const Series& baseline,
                         std::size_t n_coalitions, bool group_time_steps, Rng& rng, std::size_t batch_size = 256);

// Analytic gradient when the scorer provides one; otherwise central
// differences with h = 1e-3 (1 + |x_i|) if allowed, else
// MethodUnsupportedForScorer.
std::vector<double> scorer_gradient(const Scorer& scorer, std::span<const double> x, std::size_t cls,
                                    bool allow_fd, std::size_t batch_size = 256);

RelevanceMap saliency(const Scorer& scorer, const Series& x, std::size_t cls, bool allow_fd = false);

// Right-endpoint Riemann sum of the path integral from baseline to x.
RelevanceMap integrated_gradients(const Scorer& scorer, const Series& x, std::size_t cls, const Series& baseline,
                                  std::size_t steps, bool allow_fd = false);

// i.i.d. U(0, 1), strictly positive.
RelevanceMap random_relevance(std::size_t channels, std::size_t steps, Rng& rng);

// One sample with the streams derived from (config.seed, sample_index).
RelevanceMap attribute(const Scorer& scorer, const Series& x, std::size_t cls, const AttributionConfig& config,
                       std::size_t sample_index);

// Attributes dataset samples `indices` (by dataset index) for the class
// chosen by `target`. Uncovered rows stay zero.
RelevanceContainer attribute_dataset(const Scorer& scorer, const Dataset& data, const std::vector<std::size_t>& indices,
                                     TargetPolicy target, const AttributionConfig& config);

}  // namespace itb
