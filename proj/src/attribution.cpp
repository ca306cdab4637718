#include "itb/attribution.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <iostream>
#include <numeric>

#include "itb/errors.hpp"
#include "itb/parallel.hpp"

namespace itb {

using json = nlohmann::json;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  out.erase(std::remove_if(out.begin(), out.end(), [](char c) { return c == '_' || c == '-'; }), out.end());
  return out;
}

void check_input(const Scorer& scorer, const Series& x, std::size_t cls) {
  const auto& meta = scorer.info();
  if (x.channels != meta.channels || x.steps != meta.steps)
    throw ShapeMismatch("sample is " + std::to_string(x.channels) + " x " + std::to_string(x.steps) +
                        ", scorer expects " + std::to_string(meta.channels) + " x " + std::to_string(meta.steps));
  if (cls >= meta.n_classes) throw ShapeMismatch("target class " + std::to_string(cls) + " out of range");
}

void check_baseline(const Series& x, const Series& baseline) {
  if (baseline.channels != x.channels || baseline.steps != x.steps)
    throw ShapeMismatch("baseline shape differs from the sample shape");
}

// Scores a stream of inputs in chunks of at most batch_size; `fill(k, dst)`
// writes input k into dst.
template <typename Fill>
std::vector<double> score_stream(const Scorer& scorer, std::size_t n, std::size_t cls, std::size_t batch_size,
                                 Fill&& fill) {
  const std::size_t d = scorer.info().sample_size();
  std::vector<double> out(n);
  std::vector<double> buf;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t b = std::min(batch_size, n - start);
    buf.resize(b * d);
    for (std::size_t k = 0; k < b; ++k) fill(start + k, std::span<double>(buf.data() + k * d, d));
    const Logits y = scorer.score_batch(buf, b);
    for (std::size_t k = 0; k < b; ++k) out[start + k] = y(k, cls);
  }
  return out;
}

// Spreads per-player values evenly over the player's elements.
RelevanceMap spread(const std::vector<std::vector<std::size_t>>& players, const std::vector<double>& phi,
                    std::size_t channels, std::size_t steps) {
  RelevanceMap r(channels, steps);
  for (std::size_t p = 0; p < players.size(); ++p)
    for (auto e : players[p]) r.values[e] = phi[p] / static_cast<double>(players[p].size());
  return r;
}

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::ShapleySampling:
      return "ShapleySampling";
    case Method::KernelShap:
      return "KernelShap";
    case Method::Saliency:
      return "Saliency";
    case Method::IntegratedGradients:
      return "IntegratedGradients";
    case Method::Random:
      return "Random";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  const auto n = lower(name);
  if (n == "shapleysampling" || n == "shapley") return Method::ShapleySampling;
  if (n == "kernelshap" || n == "kernel") return Method::KernelShap;
  if (n == "saliency") return Method::Saliency;
  if (n == "integratedgradients" || n == "ig") return Method::IntegratedGradients;
  if (n == "random") return Method::Random;
  throw ConfigError("unknown attribution method '" + std::string(name) + "'");
}

std::string_view baseline_name(BaselinePolicy b) { return b == BaselinePolicy::Zeros ? "zeros" : "normal_noise"; }

BaselinePolicy parse_baseline(std::string_view name) {
  const auto n = lower(name);
  if (n == "zeros" || n == "zero") return BaselinePolicy::Zeros;
  if (n == "normalnoise" || n == "normal" || n == "noise") return BaselinePolicy::NormalNoise;
  throw ConfigError("unknown baseline '" + std::string(name) + "' (expected zeros or normal_noise)");
}

std::string_view target_policy_name(TargetPolicy t) { return t == TargetPolicy::TrueClass ? "true_class" : "predicted"; }

TargetPolicy parse_target_policy(std::string_view name) {
  const auto n = lower(name);
  if (n == "trueclass" || n == "true") return TargetPolicy::TrueClass;
  if (n == "predicted" || n == "predictedclass") return TargetPolicy::Predicted;
  throw ConfigError("unknown target policy '" + std::string(name) + "' (expected true_class or predicted)");
}

void AttributionConfig::validate() const {
  if (n_permutations == 0) throw ConfigError("n_permutations must be positive");
  if (n_coalitions == 0) throw ConfigError("n_coalitions must be positive");
  if (ig_steps == 0) throw ConfigError("ig_steps must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
}

json AttributionConfig::to_json() const {
  json j{{"method", method_name(method)}, {"seed", seed}};
  switch (method) {
    case Method::ShapleySampling:
      j["n_permutations"] = n_permutations;
      break;
    case Method::KernelShap:
      j["n_coalitions"] = n_coalitions;
      break;
    case Method::IntegratedGradients:
      j["ig_steps"] = ig_steps;
      break;
    default:
      break;
  }
  if (method == Method::ShapleySampling || method == Method::KernelShap || method == Method::IntegratedGradients)
    j["baseline"] = baseline_name(baseline);
  if (method == Method::ShapleySampling || method == Method::KernelShap) j["group_time_steps"] = group_time_steps;
  if (method == Method::Saliency || method == Method::IntegratedGradients) j["allow_fd_gradient"] = allow_fd_gradient;
  return j;
}

AttributionConfig parse_attribution_config(const json& j, AttributionConfig base) {
  if (!j.is_object()) throw ConfigError("attribution config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "method") base.method = parse_method(value.get<std::string>());
      else if (key == "n_permutations") base.n_permutations = value.get<std::size_t>();
      else if (key == "n_coalitions") base.n_coalitions = value.get<std::size_t>();
      else if (key == "ig_steps") base.ig_steps = value.get<std::size_t>();
      else if (key == "baseline") base.baseline = parse_baseline(value.get<std::string>());
      else if (key == "group_time_steps") base.group_time_steps = value.get<bool>();
      else if (key == "allow_fd_gradient") base.allow_fd_gradient = value.get<bool>();
      else if (key == "batch_size") base.batch_size = value.get<std::size_t>();
      else if (key == "seed") base.seed = value.get<std::uint64_t>();
      else if (key == "workers") base.workers = value.get<std::size_t>();
      else throw ConfigError("unknown attribution config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("attribution config: ") + e.what());
  }
  base.validate();
  return base;
}

std::vector<std::vector<std::size_t>> make_players(std::size_t channels, std::size_t steps, bool group_time_steps) {
  std::vector<std::vector<std::size_t>> players;
  if (group_time_steps) {
    players.resize(steps);
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t m = 0; m < channels; ++m) players[t].push_back(m * steps + t);
  } else {
    players.resize(channels * steps);
    for (std::size_t e = 0; e < channels * steps; ++e) players[e] = {e};
  }
  return players;
}

Series make_baseline(BaselinePolicy policy, std::size_t channels, std::size_t steps, std::uint64_t seed,
                     std::size_t sample_index) {
  Series b(channels, steps);
  if (policy == BaselinePolicy::NormalNoise) {
    Rng rng = make_stream(seed, Purpose::Baseline, {sample_index});
    for (auto& v : b.values) v = normal(rng, 0.0, kNoiseStd);
  }
  return b;
}

ShapleyEstimate shapley_sampling(const Scorer& scorer, const Series& x, std::size_t cls, const Series& baseline,
                                 std::size_t n_permutations, bool group_time_steps, Rng& rng,
                                 std::size_t batch_size) {
  check_input(scorer, x, cls);
  check_baseline(x, baseline);
  if (n_permutations == 0) throw ConfigError("n_permutations must be positive");
  const auto players = make_players(x.channels, x.steps, group_time_steps);
  const std::size_t d = players.size();

  const double v_empty = scorer.score_batch(baseline.span(), 1)(0, cls);
  std::vector<double> sum(d, 0.0), sum_sq(d, 0.0);
  std::vector<std::size_t> order(d);
  std::vector<double> current;
  const auto* incremental = dynamic_cast<const IncrementalScorer*>(&scorer);
  std::vector<std::vector<std::size_t>> chain(incremental ? d : 0);

  for (std::size_t p = 0; p < n_permutations; ++p) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    // Input k reveals the first k + 1 players of the permutation.
    std::vector<double> v(d);
    if (incremental) {
      for (std::size_t k = 0; k < d; ++k) chain[k] = players[order[k]];
      incremental->score_chain(baseline.values, x.values, chain, cls, v);
    } else {
      current = baseline.values;
      v = score_stream(scorer, d, cls, batch_size, [&](std::size_t k, std::span<double> dst) {
        for (auto e : players[order[k]]) current[e] = x.values[e];
        std::copy(current.begin(), current.end(), dst.begin());
      });
    }
    double prev = v_empty;
    for (std::size_t k = 0; k < d; ++k) {
      const double delta = v[k] - prev;
      sum[order[k]] += delta;
      sum_sq[order[k]] += delta * delta;
      prev = v[k];
    }
  }

  const auto n = static_cast<double>(n_permutations);
  std::vector<double> mean(d), se(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    mean[i] = sum[i] / n;
    if (n_permutations > 1) {
      const double var = std::max(0.0, (sum_sq[i] - n * mean[i] * mean[i]) / (n - 1.0));
      se[i] = std::sqrt(var / n);
    }
  }
  return {spread(players, mean, x.channels, x.steps), spread(players, se, x.channels, x.steps)};
}

RelevanceMap kernel_shap(const Scorer& scorer, const Series& x, std::size_t cls, const Series& baseline,
                         std::size_t n_coalitions, bool group_time_steps, Rng& rng, std::size_t batch_size) {
  check_input(scorer, x, cls);
  check_baseline(x, baseline);
  const auto players = make_players(x.channels, x.steps, group_time_steps);
  const std::size_t d = players.size();
  if (n_coalitions < d + 2)
    throw ConfigError("n_coalitions (" + std::to_string(n_coalitions) + ") must be at least the number of players + 2 (" +
                      std::to_string(d + 2) + ")");

  const Logits ends = [&] {
    std::vector<double> both(baseline.values);
    both.insert(both.end(), x.values.begin(), x.values.end());
    return scorer.score_batch(both, 2);
  }();
  const double v0 = ends(0, cls);
  const double delta = ends(1, cls) - v0;
  if (d == 1) return spread(players, {delta}, x.channels, x.steps);

  const bool enumerate = d < 63 && (std::uint64_t{1} << d) - 2 <= n_coalitions;

  for (int attempt = 0; attempt < 2; ++attempt) {
    // Coalitions as rows of 0/1 player indicators, with regression weights.
    std::vector<std::vector<std::uint8_t>> masks;
    std::vector<double> weights;
    if (enumerate) {
      std::vector<double> log_fact(d + 1, 0.0);
      for (std::size_t k = 1; k <= d; ++k) log_fact[k] = log_fact[k - 1] + std::log(static_cast<double>(k));
      const std::uint64_t n_sets = std::uint64_t{1} << d;
      for (std::uint64_t s = 1; s + 1 < n_sets; ++s) {
        std::vector<std::uint8_t> z(d);
        std::size_t size = 0;
        for (std::size_t i = 0; i < d; ++i) size += (z[i] = static_cast<std::uint8_t>((s >> i) & 1u));
        const double log_binom = log_fact[d] - log_fact[size] - log_fact[d - size];
        weights.push_back(static_cast<double>(d - 1) /
                          (std::exp(log_binom) * static_cast<double>(size) * static_cast<double>(d - size)));
        masks.push_back(std::move(z));
      }
    } else {
      // Size s is drawn with probability proportional to (d - 1) / (s (d - s)),
      // i.e. the total kernel mass of that size, so every draw weighs 1.
      std::vector<double> size_mass(d - 1);
      for (std::size_t s = 1; s < d; ++s)
        size_mass[s - 1] = 1.0 / (static_cast<double>(s) * static_cast<double>(d - s));
      std::discrete_distribution<std::size_t> size_dist(size_mass.begin(), size_mass.end());
      std::vector<std::size_t> pool(d);
      for (std::size_t pair = 0; pair < n_coalitions / 2; ++pair) {
        const std::size_t s = size_dist(rng) + 1;
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        std::vector<std::uint8_t> z(d, 0);
        for (std::size_t i = 0; i < s; ++i) {
          const std::size_t j = i + std::uniform_int_distribution<std::size_t>(0, d - 1 - i)(rng);
          std::swap(pool[i], pool[j]);
          z[pool[i]] = 1;
        }
        std::vector<std::uint8_t> complement(d);
        for (std::size_t i = 0; i < d; ++i) complement[i] = static_cast<std::uint8_t>(1 - z[i]);
        masks.push_back(std::move(z));
        masks.push_back(std::move(complement));
        weights.push_back(1.0);
        weights.push_back(1.0);
      }
    }

    const std::size_t n = masks.size();
    const auto v = score_stream(scorer, n, cls, batch_size, [&](std::size_t k, std::span<double> dst) {
      std::copy(baseline.values.begin(), baseline.values.end(), dst.begin());
      for (std::size_t p = 0; p < d; ++p)
        if (masks[k][p])
          for (auto e : players[p]) dst[e] = x.values[e];
    });

    // Eliminate the last player through the efficiency constraint.
    const auto q = static_cast<Eigen::Index>(d - 1);
    Eigen::MatrixXd a(static_cast<Eigen::Index>(n), q);
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const double sw = std::sqrt(weights[i]);
      const double last = masks[i][d - 1];
      for (Eigen::Index j = 0; j < q; ++j)
        a(static_cast<Eigen::Index>(i), j) = sw * (masks[i][static_cast<std::size_t>(j)] - last);
      y(static_cast<Eigen::Index>(i)) = sw * (v[i] - v0 - last * delta);
    }
    Eigen::MatrixXd normal_matrix = Eigen::MatrixXd::Zero(q, q);
    normal_matrix.selfadjointView<Eigen::Lower>().rankUpdate(a.transpose());
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(normal_matrix.selfadjointView<Eigen::Lower>());
    const auto diag = ldlt.vectorD().cwiseAbs();
    const bool singular =
        ldlt.info() != Eigen::Success || diag.maxCoeff() <= 0.0 || diag.minCoeff() <= 1e-12 * diag.maxCoeff();
    if (singular) {
      if (enumerate) break;
      continue;
    }
    const Eigen::VectorXd beta = ldlt.solve(a.transpose() * y);
    std::vector<double> phi(d);
    double partial = 0.0;
    for (Eigen::Index j = 0; j < q; ++j) partial += (phi[static_cast<std::size_t>(j)] = beta(j));
    phi[d - 1] = delta - partial;
    return spread(players, phi, x.channels, x.steps);
  }
  throw SingularRegression("KernelSHAP regression is singular for " + std::to_string(d) + " players and " +
                           std::to_string(n_coalitions) + " coalitions, even after resampling");
}

std::vector<double> scorer_gradient(const Scorer& scorer, std::span<const double> x, std::size_t cls, bool allow_fd,
                                    std::size_t batch_size) {
  if (const auto* g = dynamic_cast<const GradientProvider*>(&scorer)) return g->gradient(x, cls);
  if (!allow_fd)
    throw MethodUnsupportedForScorer("scorer '" + scorer.info().id +
                                     "' provides no gradient; enable the finite-difference fallback to proceed");
  const std::size_t d = x.size();
  if (d > 10000)
    std::clog << "warning: finite-difference gradient over " << d << " elements costs " << 2 * d
              << " scorer evaluations\n";
  std::vector<double> h(d);
  for (std::size_t i = 0; i < d; ++i) h[i] = 1e-3 * (1.0 + std::abs(x[i]));
  const auto v = score_stream(scorer, 2 * d, cls, batch_size, [&](std::size_t k, std::span<double> dst) {
    std::copy(x.begin(), x.end(), dst.begin());
    const std::size_t i = k / 2;
    dst[i] += (k % 2 == 0 ? h[i] : -h[i]);
  });
  std::vector<double> g(d);
  for (std::size_t i = 0; i < d; ++i) g[i] = (v[2 * i] - v[2 * i + 1]) / (2.0 * h[i]);
  return g;
}

RelevanceMap saliency(const Scorer& scorer, const Series& x, std::size_t cls, bool allow_fd) {
  check_input(scorer, x, cls);
  auto g = scorer_gradient(scorer, x.span(), cls, allow_fd);
  for (auto& v : g) v = std::abs(v);
  return RelevanceMap(x.channels, x.steps, std::move(g));
}

RelevanceMap integrated_gradients(const Scorer& scorer, const Series& x, std::size_t cls, const Series& baseline,
                                  std::size_t steps, bool allow_fd) {
  check_input(scorer, x, cls);
  check_baseline(x, baseline);
  if (steps == 0) throw ConfigError("ig_steps must be positive");
  const std::size_t d = x.size();
  std::vector<double> total(d, 0.0), point(d);
  for (std::size_t k = 1; k <= steps; ++k) {
    const double alpha = static_cast<double>(k) / static_cast<double>(steps);
    for (std::size_t i = 0; i < d; ++i) point[i] = baseline.values[i] + alpha * (x.values[i] - baseline.values[i]);
    const auto g = scorer_gradient(scorer, point, cls, allow_fd);
    for (std::size_t i = 0; i < d; ++i) total[i] += g[i];
  }
  RelevanceMap r(x.channels, x.steps);
  for (std::size_t i = 0; i < d; ++i)
    r.values[i] = (x.values[i] - baseline.values[i]) * total[i] / static_cast<double>(steps);
  return r;
}

RelevanceMap random_relevance(std::size_t channels, std::size_t steps, Rng& rng) {
  RelevanceMap r(channels, steps);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& v : r.values) {
    do v = u(rng);
    while (v == 0.0);
  }
  return r;
}

RelevanceMap attribute(const Scorer& scorer, const Series& x, std::size_t cls, const AttributionConfig& config,
                       std::size_t sample_index) {
  config.validate();
  Rng rng = make_stream(config.seed, Purpose::Attribution, {sample_index, static_cast<std::uint64_t>(config.method)});
  auto baseline = [&] { return make_baseline(config.baseline, x.channels, x.steps, config.seed, sample_index); };
  switch (config.method) {
    case Method::ShapleySampling:
      return shapley_sampling(scorer, x, cls, baseline(), config.n_permutations, config.group_time_steps, rng,
                              config.batch_size)
          .values;
    case Method::KernelShap:
      return kernel_shap(scorer, x, cls, baseline(), config.n_coalitions, config.group_time_steps, rng,
                         config.batch_size);
    case Method::Saliency:
      return saliency(scorer, x, cls, config.allow_fd_gradient);
    case Method::IntegratedGradients:
      return integrated_gradients(scorer, x, cls, baseline(), config.ig_steps, config.allow_fd_gradient);
    case Method::Random:
      check_input(scorer, x, cls);
      return random_relevance(x.channels, x.steps, rng);
  }
  throw ConfigError("unhandled attribution method");
}

RelevanceContainer attribute_dataset(const Scorer& scorer, const Dataset& data, const std::vector<std::size_t>& indices,
                                     TargetPolicy target, const AttributionConfig& config) {
  config.validate();
  const auto& meta = scorer.info();
  if (meta.channels != data.channels || meta.steps != data.steps)
    throw ShapeMismatch("scorer and dataset disagree on the sample shape");
  if (meta.n_classes != data.n_classes())
    throw ShapeMismatch("scorer has " + std::to_string(meta.n_classes) + " classes, dataset has " +
                        std::to_string(data.n_classes()));
  if ((config.method == Method::Saliency || config.method == Method::IntegratedGradients) &&
      !config.allow_fd_gradient && !dynamic_cast<const GradientProvider*>(&scorer))
    throw MethodUnsupportedForScorer(std::string(method_name(config.method)) + " needs gradients, which scorer '" +
                                     meta.id + "' does not provide; enable the finite-difference fallback");
  for (auto i : indices)
    if (i >= data.size()) throw ShapeMismatch("sample index " + std::to_string(i) + " out of range");

  std::vector<std::size_t> classes(indices.size());
  if (target == TargetPolicy::TrueClass) {
    for (std::size_t k = 0; k < indices.size(); ++k) classes[k] = data.labels[indices[k]];
  } else {
    const Logits y = score_samples(scorer, data, indices);
    for (std::size_t k = 0; k < indices.size(); ++k) classes[k] = y.argmax(k);
  }

  RelevanceContainer out;
  out.method = std::string(method_name(config.method));
  out.scorer_id = meta.id;
  out.target_policy = std::string(target_policy_name(target));
  out.seed = config.seed;
  out.config = config.to_json();
  out.n = data.size();
  out.channels = data.channels;
  out.steps = data.steps;
  out.covered = indices;
  out.relevance.assign(out.n * out.sample_size(), 0.0f);

  std::size_t workers = config.workers == 0 ? default_workers() : config.workers;
  if (meta.max_concurrency > 0) workers = std::min(workers, meta.max_concurrency);
  parallel_for(indices.size(), workers, [&](std::size_t k) {
    const auto r = attribute(scorer, data.sample(indices[k]), classes[k], config, indices[k]);
    out.set_map(indices[k], r);
  });
  return out;
}

}  // namespace itb
