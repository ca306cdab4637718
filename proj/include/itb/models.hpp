#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "itb/dataset_store.hpp"
#include "itb/rng.hpp"
#include "itb/series.hpp"
#include "json.hpp"

namespace itb {

struct ScorerInfo {
  std::size_t n_classes = 0;
  std::size_t channels = 0;
  std::size_t steps = 0;
  // Maximum number of concurrent score_batch calls; 0 = unbounded.
  std::size_t max_concurrency = 0;
  std::string id;

  std::size_t sample_size() const { return channels * steps; }
};

// Row-major (batch, classes).
struct Logits {
  std::size_t batch = 0;
  std::size_t classes = 0;
  std::vector<double> values;

  double operator()(std::size_t b, std::size_t c) const { return values[b * classes + c]; }
  std::span<const double> row(std::size_t b) const { return {values.data() + b * classes, classes}; }
  std::size_t argmax(std::size_t b) const;
};

// Black-box classifier. score_batch validates shapes and then delegates to
// do_score; implementations only see well-formed input.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual const ScorerInfo& info() const = 0;

  // `inputs` holds `batch` samples back to back, each channels x steps.
  Logits score_batch(std::span<const double> inputs, std::size_t batch) const;
  double score(const Series& x, std::size_t cls) const;

 protected:
  virtual Logits do_score(std::span<const double> inputs, std::size_t batch) const = 0;
};

// Optional capability: d logit_cls / d x for one sample, channels x steps.
class GradientProvider {
 public:
  virtual ~GradientProvider() = default;
  virtual std::vector<double> gradient(std::span<const double> x, std::size_t cls) const = 0;
};

// Optional capability for walks through input space that change a few
// elements at a time. input_0 = start; input_{k+1} = input_k with the elements
// listed in changes[k] set to their values in `target`. Writes the class-`cls`
// logit of input_{k+1} to out[k].
class IncrementalScorer {
 public:
  virtual ~IncrementalScorer() = default;
  virtual void score_chain(std::span<const double> start, std::span<const double> target,
                           std::span<const std::vector<std::size_t>> changes, std::size_t cls,
                           std::span<double> out) const = 0;
};

// Numerically stable softmax of one logit row.
std::vector<double> softmax(std::span<const double> logits);

enum class ModelKind { LinearSoftmax, Mlp, WindowMlp };

std::string_view model_kind_name(ModelKind k);
ModelKind parse_model_kind(std::string_view name);

struct ModelShape {
  ModelKind kind = ModelKind::Mlp;
  std::size_t channels = 0;
  std::size_t steps = 0;
  std::size_t n_classes = 0;
  // Hidden width for Mlp and WindowMlp.
  std::size_t hidden = 64;
  // Window length along time for WindowMlp.
  std::size_t window = 7;

  std::size_t n_params() const;
  bool operator==(const ModelShape&) const = default;
};

// Reference classifiers:
//   LinearSoftmax  logits = W x + b on the flattened input.
//   Mlp            one tanh hidden layer of width `hidden` on the flattened input.
//   WindowMlp      the same tanh layer applied to every length-`window` slice of
//                  the series (all channels), averaged over positions, then a
//                  linear read-out.
class BuiltinModel final : public Scorer, public GradientProvider, public IncrementalScorer {
 public:
  BuiltinModel() = default;
  BuiltinModel(ModelShape shape, std::vector<double> params, std::string id = {});

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
  static BuiltinModel initialise(const ModelShape& shape, Rng& rng);

  const ScorerInfo& info() const override { return info_; }
  const ModelShape& shape() const { return shape_; }
  const std::vector<double>& params() const { return params_; }
  std::vector<double>& mutable_params() { return params_; }

  std::vector<double> gradient(std::span<const double> x, std::size_t cls) const override;
  void score_chain(std::span<const double> start, std::span<const double> target,
                   std::span<const std::vector<std::size_t>> changes, std::size_t cls,
                   std::span<double> out) const override;

  // Logits of one sample.
  std::vector<double> forward(std::span<const double> x) const;
  // Accumulates d(sum_c dlogits_c * logit_c)/d params into grad_params (if
  // non-empty) and d/dx into grad_x (if non-empty).
  void backward(std::span<const double> x, std::span<const double> dlogits, std::span<double> grad_params,
                std::span<double> grad_x) const;

  nlohmann::json to_json() const;
  static BuiltinModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object()) const;
  static BuiltinModel load(const std::filesystem::path& path);

  bool operator==(const BuiltinModel& o) const { return shape_ == o.shape_ && params_ == o.params_; }

 protected:
  Logits do_score(std::span<const double> inputs, std::size_t batch) const override;

 private:
  ModelShape shape_;
  std::vector<double> params_;
  ScorerInfo info_;
};

struct TrainConfig {
  ModelKind kind = ModelKind::WindowMlp;
  std::size_t hidden = 0;  // 0 = 64 for Mlp, 32 for WindowMlp
  std::size_t window = 21;
  double learning_rate = 1e-2;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  std::size_t workers = 0;

  void validate() const;
  std::size_t resolved_hidden() const;
  nlohmann::json to_json() const;
};

TrainConfig parse_train_config(const nlohmann::json& j, TrainConfig base = TrainConfig{});

struct TrainResult {
  BuiltinModel model;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
};

// Adam on mean softmax cross-entropy; keeps the weights with the lowest
// validation loss and stops after `patience` epochs without improvement.
// Deterministic given the seed, independent of `workers`.
TrainResult train(const TrainConfig& config, const Dataset& data, const std::vector<std::size_t>& train_idx,
                  const std::vector<std::size_t>& val_idx);

// Scores the given dataset samples in chunks.
Logits score_samples(const Scorer& scorer, const Dataset& data, const std::vector<std::size_t>& indices,
                     std::size_t chunk = 256);

double accuracy(const Logits& logits, const Dataset& data, const std::vector<std::size_t>& indices);
double cross_entropy(const Logits& logits, const Dataset& data, const std::vector<std::size_t>& indices);

enum class ExpectancyMode { PerClass, Global };

// Reference value E[S(X)] used by the occlusion metrics.
//   PerClass: E_c = mean over the split of logit c, one value per class.
//   Global:   mean over the split of each sample's own target logit, repeated
//             for every class.
struct Expectancy {
  ExpectancyMode mode = ExpectancyMode::PerClass;
  std::vector<double> per_class;
  double operator()(std::size_t cls) const { return per_class.at(cls); }
};

Expectancy expectancy(const Logits& logits, ExpectancyMode mode, const std::vector<std::size_t>& targets = {});
Expectancy expectancy(const Scorer& scorer, const Dataset& data, const std::vector<std::size_t>& indices,
                      ExpectancyMode mode = ExpectancyMode::PerClass);

}  // namespace itb
