#include <algorithm>
#include <cmath>
#include <numeric>

#include "itb/errors.hpp"
#include "itb/models.hpp"
#include "itb/parallel.hpp"

namespace itb {

using json = nlohmann::json;

namespace {

// Fixed so that the summation order, and hence the result, does not depend on
// the worker count.
constexpr std::size_t kGradientChunks = 8;

struct Adam {
  double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  std::size_t t = 0;

  Adam(double lr_, std::size_t n) : lr(lr_), m(n, 0.0), v(n, 0.0) {}

  void step(std::vector<double>& params, const std::vector<double>& grad) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

// Mean cross-entropy over `batch` and its parameter gradient.
double batch_gradient(const BuiltinModel& model, const Dataset& data, std::span<const std::size_t> batch,
                      std::size_t workers, std::vector<double>& grad) {
  const std::size_t n_params = model.params().size();
  const std::size_t chunks = std::min(kGradientChunks, batch.size());
  std::vector<std::vector<double>> partial(chunks, std::vector<double>(n_params, 0.0));
  std::vector<double> losses(batch.size(), 0.0);
  const std::size_t d = data.sample_size();

  parallel_for(chunks, workers, [&](std::size_t c) {
    std::vector<double> x(d);
    for (std::size_t b = c; b < batch.size(); b += chunks) {
      const auto v = data.sample_values(batch[b]);
      std::copy(v.begin(), v.end(), x.begin());
      const auto logits = model.forward(x);
      auto p = softmax(logits);
      const std::size_t y = data.labels[batch[b]];
      losses[b] = -std::log(std::max(p[y], 1e-300));
      p[y] -= 1.0;
      model.backward(x, p, partial[c], {});
    }
  });

  grad.assign(n_params, 0.0);
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& part : partial)
    for (std::size_t i = 0; i < n_params; ++i) grad[i] += part[i] * scale;
  return std::accumulate(losses.begin(), losses.end(), 0.0) * scale;
}

double split_loss(const BuiltinModel& model, const Dataset& data, const std::vector<std::size_t>& indices,
                  std::size_t workers) {
  std::vector<double> losses(indices.size());
  parallel_for(indices.size(), workers, [&](std::size_t b) {
    const auto v = data.sample_values(indices[b]);
    const std::vector<double> x(v.begin(), v.end());
    const auto p = softmax(model.forward(x));
    losses[b] = -std::log(std::max(p[data.labels[indices[b]]], 1e-300));
  });
  return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(indices.size());
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be a positive number");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (patience == 0) throw ConfigError("patience must be positive");
  if (kind == ModelKind::WindowMlp && window == 0) throw ConfigError("window must be positive");
}

std::size_t TrainConfig::resolved_hidden() const {
  if (hidden != 0) return hidden;
  return kind == ModelKind::WindowMlp ? 32 : 64;
}

json TrainConfig::to_json() const {
  return json{{"kind", model_kind_name(kind)},  {"hidden", resolved_hidden()}, {"window", window},
              {"learning_rate", learning_rate}, {"batch_size", batch_size},    {"max_epochs", max_epochs},
              {"patience", patience},           {"seed", seed}};
}

TrainConfig parse_train_config(const json& j, TrainConfig base) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "kind") base.kind = parse_model_kind(value.get<std::string>());
      else if (key == "hidden") base.hidden = value.get<std::size_t>();
      else if (key == "window") base.window = value.get<std::size_t>();
      else if (key == "learning_rate") base.learning_rate = value.get<double>();
      else if (key == "batch_size") base.batch_size = value.get<std::size_t>();
      else if (key == "max_epochs") base.max_epochs = value.get<std::size_t>();
      else if (key == "patience") base.patience = value.get<std::size_t>();
      else if (key == "seed") base.seed = value.get<std::uint64_t>();
      else if (key == "workers") base.workers = value.get<std::size_t>();
      else throw ConfigError("unknown training config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  base.validate();
  return base;
}

TrainResult train(const TrainConfig& config, const Dataset& data, const std::vector<std::size_t>& train_idx,
                  const std::vector<std::size_t>& val_idx) {
  config.validate();
  if (train_idx.empty()) throw ConfigError("training split is empty");
  if (val_idx.empty()) throw ConfigError("validation split is empty");

  ModelShape shape;
  shape.kind = config.kind;
  shape.channels = data.channels;
  shape.steps = data.steps;
  shape.n_classes = data.n_classes();
  shape.hidden = config.resolved_hidden();
  shape.window = config.window;

  Rng init_rng = make_stream(config.seed, Purpose::Training, {0});
  BuiltinModel model = BuiltinModel::initialise(shape, init_rng);

  TrainResult result;
  result.model = model;
  double best = split_loss(model, data, val_idx, config.workers);
  if (!std::isfinite(best)) throw Diverged("validation loss is not finite at initialisation");

  Adam adam(config.learning_rate, model.params().size());
  std::vector<std::size_t> order = train_idx;
  std::vector<double> grad;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng shuffle = make_stream(config.seed, Purpose::Training, {1, epoch});
    std::shuffle(order.begin(), order.end(), shuffle);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      const double loss =
          batch_gradient(model, data, std::span(order).subspan(start, n), config.workers, grad);
      if (!std::isfinite(loss)) throw Diverged("training loss became non-finite in epoch " + std::to_string(epoch));
      epoch_loss += loss * static_cast<double>(n);
      adam.step(model.mutable_params(), grad);
    }
    result.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    const double val = split_loss(model, data, val_idx, config.workers);
    if (!std::isfinite(val)) throw Diverged("validation loss became non-finite in epoch " + std::to_string(epoch));
    result.val_loss.push_back(val);
    result.epochs_run = epoch;
    if (val < best) {
      best = val;
      result.best_epoch = epoch;
      result.model = model;
    } else if (epoch - result.best_epoch >= config.patience) {
      break;
    }
  }
  // Refresh the id so it reflects the kept weights.
  result.model = BuiltinModel(result.model.shape(), result.model.params());
  return result;
}

}  // namespace itb
