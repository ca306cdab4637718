#include "itb/attractors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "itb/errors.hpp"
#include "itb/parallel.hpp"

namespace itb {

using nlohmann::json;

std::string_view system_name(System s) {
  switch (s) {
    case System::Chua: return "Chua";
    case System::Duffing: return "Duffing";
    case System::Lorenz: return "Lorenz";
    case System::Rikitake: return "Rikitake";
    case System::Rossler: return "Rossler";
  }
  return "?";
}

SystemSpec system_spec(System s, double duffing_omega) {
  switch (s) {
    case System::Chua:
      return {s, {{"a", 15.6}, {"nu1", -1.143}, {"nu2", -0.714}}, "b", {25.0, 51.0},
              {{{0.6, 0.61}, {0.2, 0.21}, {0.1, 0.11}}}};
    case System::Duffing:
      return {s, {{"a", 0.1}, {"omega", duffing_omega}}, "b", {0.1, 0.65}, {{{0.6, 7.5}, {0.2, 1.5}, {0.1, 1.6}}}};
    case System::Lorenz:
      return {s, {{"sigma", 10.0}, {"beta", 8.0 / 3.0}}, "rho", {28.0, 100.0},
              {{{0.6, 1.1}, {0.2, 0.7}, {0.1, 0.6}}}};
    case System::Rikitake:
      return {s, {{"b", 3.0}, {"c", 5.0}, {"d", 0.75}}, "a", {2.0, 7.0}, {{{0.6, 1.1}, {0.2, 0.7}, {0.1, 0.6}}}};
    case System::Rossler:
      return {s, {{"a", 0.2}, {"b", 0.2}}, "c", {4.0, 18.0}, {{{0.6, 1.6}, {0.2, 1.2}, {0.1, 1.1}}}};
  }
  throw ConfigError("unknown system");
}

namespace {

struct Field {
  System id;
  double p0, p1, p2;  // fixed constants, order per system
  double param;       // sampled parameter

  State operator()(const State& s) const {
    const double x = s[0], y = s[1], z = s[2];
    switch (id) {
      case System::Chua: {
        // a (y - x - h(x)); standard circuit sign convention dy/dt = x - y + z.
        const double h = p2 * x + 0.5 * (p1 - p2) * (std::abs(x + 1.0) - std::abs(x - 1.0));
        return {p0 * (y - x - h), x - y + z, -param * y};
      }
      case System::Duffing:
        return {y, -p0 * y - x * x * x + param * std::cos(p1 * z), 1.0};
      case System::Lorenz:
        return {p0 * (y - x), x * (param - z) - y, x * y - p1 * z};
      case System::Rikitake:
        return {-param * x + y * (z + p1), -p0 * y + x * (z - p1), p2 * z - x * y};
      case System::Rossler:
        return {-(y + z), x + p0 * y, p1 + z * (x - param)};
    }
    return {0.0, 0.0, 0.0};
  }
};

Field make_field(const SystemSpec& spec, double param) {
  const auto& f = spec.fixed_params;
  switch (spec.id) {
    case System::Chua: return {spec.id, f.at("a"), f.at("nu1"), f.at("nu2"), param};
    case System::Duffing: return {spec.id, f.at("a"), f.at("omega"), 0.0, param};
    case System::Lorenz: return {spec.id, f.at("sigma"), f.at("beta"), 0.0, param};
    case System::Rikitake: return {spec.id, f.at("b"), f.at("c"), f.at("d"), param};
    case System::Rossler: return {spec.id, f.at("a"), f.at("b"), 0.0, param};
  }
  throw ConfigError("unknown system");
}

}  // namespace

State derivative(const SystemSpec& spec, const State& s, double sampled_param) {
  return make_field(spec, sampled_param)(s);
}

Series integrate_system(const SystemSpec& spec, const State& init, double sampled_param, std::size_t n_steps,
                        double dt) {
  if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  const Field field = make_field(spec, sampled_param);
  Series out(3, n_steps);
  State s = init;
  for (std::size_t k = 0; k < n_steps; ++k) {
    s = rk5_step<3>(field, s, dt);
    for (std::size_t m = 0; m < 3; ++m) {
      if (!std::isfinite(s[m]))
        throw NonFiniteState(std::string(system_name(spec.id)) + " state became non-finite at step " +
                             std::to_string(k + 1));
      out(m, k) = s[m];
    }
  }
  return out;
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::SD1: return "sd1";
    case Variant::SD2: return "sd2";
    case Variant::SD3: return "sd3";
  }
  return "?";
}

Variant parse_variant(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "sd1") return Variant::SD1;
  if (lower == "sd2") return Variant::SD2;
  if (lower == "sd3") return Variant::SD3;
  throw ConfigError("variant: expected sd1, sd2 or sd3, got '" + std::string(name) + "'");
}

void GenerationConfig::validate() const {
  auto require = [](bool ok, const char* field, const std::string& what) {
    if (!ok) throw ConfigError(std::string(field) + ": " + what);
  };
  require(n_per_class > 0, "n_per_class", "must be positive");
  require(n_integration_steps > 0, "n_integration_steps", "must be positive");
  require(downsample_factor > 0, "downsample_factor", "must be positive");
  require(n_discard < n_integration_steps, "n_discard", "must be smaller than n_integration_steps");
  require(dt > 0.0 && std::isfinite(dt), "dt", "must be positive");
  require(std::isfinite(duffing_omega), "duffing_omega", "must be finite");
  require(noise_std >= 0.0 && std::isfinite(noise_std), "noise_std", "must be non-negative");
  require(max_attempts > 0, "max_attempts", "must be positive");
  require(n_per_class * kSystems.size() <= 1u << 31, "n_per_class", "too large");
  for (auto [name, iv] : {std::pair{"transform.a", transform.a}, std::pair{"transform.b", transform.b},
                          std::pair{"transform.c", transform.c}, std::pair{"transform.d", transform.d}})
    require(iv.lo <= iv.hi && std::isfinite(iv.lo) && std::isfinite(iv.hi), name, "interval must satisfy lo <= hi");
  if (variant == Variant::SD2) {
    require(sd2_min_window > 0 && sd2_min_window <= sd2_max_window, "sd2_window", "need 0 < min <= max");
    require(sd2_max_window <= output_steps(), "sd2_window", "window longer than the series");
  }
  if (variant == Variant::SD3) require(sd3_prefix <= output_steps(), "sd3_prefix", "longer than the series");
}

std::size_t GenerationConfig::output_steps() const {
  if (n_integration_steps <= n_discard || downsample_factor == 0) return 0;
  return (n_integration_steps - n_discard + downsample_factor - 1) / downsample_factor;
}

json GenerationConfig::to_json() const {
  auto iv = [](const Interval& i) { return json::array({i.lo, i.hi}); };
  return json{{"variant", variant_name(variant)},
              {"n_per_class", n_per_class},
              {"n_integration_steps", n_integration_steps},
              {"n_discard", n_discard},
              {"downsample_factor", downsample_factor},
              {"dt", dt},
              {"duffing_omega", duffing_omega},
              {"transform", {{"a", iv(transform.a)}, {"b", iv(transform.b)}, {"c", iv(transform.c)},
                             {"d", iv(transform.d)}}},
              {"noise_std", noise_std},
              {"sd2_window", json::array({sd2_min_window, sd2_max_window})},
              {"sd3_prefix", sd3_prefix},
              {"max_attempts", max_attempts},
              {"seed", seed}};
}

GenerationConfig parse_generation_config(const json& j, GenerationConfig c) {
  static const std::set<std::string> kKeys = {"variant",       "n_per_class", "n_integration_steps", "n_discard",
                                              "downsample_factor", "dt",      "duffing_omega",      "transform",
                                              "noise_std",     "sd2_window",  "sd3_prefix",          "max_attempts",
                                              "seed",          "workers"};
  if (!j.is_object()) throw ConfigError("generation config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!kKeys.contains(key)) throw ConfigError(key + ": unknown generation config key");

  auto get = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(dst);
    } catch (const json::exception& e) {
      throw ConfigError(std::string(key) + ": " + e.what());
    }
  };
  auto get_count = [&](const char* key, std::size_t& dst) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0)
      throw ConfigError(std::string(key) + ": must be a non-negative integer");
    dst = v.get<std::size_t>();
  };
  auto get_interval = [&](const json& v, const std::string& key, Interval& dst) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      throw ConfigError(key + ": expected [lo, hi]");
    dst = {v[0].get<double>(), v[1].get<double>()};
  };

  if (j.contains("variant")) {
    if (!j.at("variant").is_string()) throw ConfigError("variant: expected a string");
    c.variant = parse_variant(j.at("variant").get<std::string>());
  }
  get_count("n_per_class", c.n_per_class);
  get_count("n_integration_steps", c.n_integration_steps);
  get_count("n_discard", c.n_discard);
  get_count("downsample_factor", c.downsample_factor);
  get("dt", c.dt);
  get("duffing_omega", c.duffing_omega);
  get("noise_std", c.noise_std);
  get_count("sd3_prefix", c.sd3_prefix);
  get_count("max_attempts", c.max_attempts);
  get("seed", c.seed);
  get_count("workers", c.workers);
  if (j.contains("sd2_window")) {
    Interval w;
    get_interval(j.at("sd2_window"), "sd2_window", w);
    if (w.lo < 0 || w.hi < 0) throw ConfigError("sd2_window: must be non-negative");
    c.sd2_min_window = static_cast<std::size_t>(w.lo);
    c.sd2_max_window = static_cast<std::size_t>(w.hi);
  }
  if (j.contains("transform")) {
    const auto& t = j.at("transform");
    if (!t.is_object()) throw ConfigError("transform: expected an object");
    for (const auto& [key, v] : t.items()) {
      Interval* dst = key == "a" ? &c.transform.a
                      : key == "b" ? &c.transform.b
                      : key == "c" ? &c.transform.c
                      : key == "d" ? &c.transform.d
                                   : nullptr;
      if (dst == nullptr) throw ConfigError("transform." + key + ": unknown key");
      get_interval(v, "transform." + key, *dst);
    }
  }
  return c;
}

TransformParams draw_transform(const TransformIntervals& iv, Rng& rng) {
  TransformParams p;
  for (std::size_t m = 0; m < 3; ++m) {
    p.a[m] = uniform(rng, iv.a.lo, iv.a.hi);
    p.b[m] = uniform(rng, iv.b.lo, iv.b.hi);
    p.c[m] = uniform(rng, iv.c.lo, iv.c.hi);
    p.d[m] = uniform(rng, iv.d.lo, iv.d.hi);
  }
  return p;
}

RawSample sample_instance(const SystemSpec& spec, const GenerationConfig& config, Rng& rng) {
  const std::size_t steps = config.output_steps();
  std::string last_error;
  for (std::size_t attempt = 0; attempt < config.max_attempts; ++attempt) {
    State init;
    for (std::size_t m = 0; m < 3; ++m) init[m] = uniform(rng, spec.init[m].lo, spec.init[m].hi);
    const double param = uniform(rng, spec.sampled_param.lo, spec.sampled_param.hi);
    Series trajectory;
    try {
      trajectory = integrate_system(spec, init, param, config.n_integration_steps, config.dt);
    } catch (const NonFiniteState& e) {
      last_error = e.what();
      continue;
    }
    RawSample out;
    out.label = static_cast<int>(spec.id);
    out.values = Series(3, steps);
    for (std::size_t m = 0; m < 3; ++m)
      for (std::size_t j = 0; j < steps; ++j)
        out.values(m, j) = trajectory(m, config.n_discard + j * config.downsample_factor);
    out.expert_weights.assign(out.values.size(), 1);
    return out;
  }
  throw GenerationFailed(std::string(system_name(spec.id)) + ": no finite trajectory after " +
                         std::to_string(config.max_attempts) + " attempts (" + last_error + ")");
}

RawSample apply_transform(RawSample sample, const TransformParams& p) {
  auto& x = sample.values;
  for (std::size_t m = 0; m < x.channels; ++m)
    for (std::size_t t = 0; t < x.steps; ++t) x(m, t) = p.a[m] + p.b[m] * std::sin(p.c[m] * x(m, t) + p.d[m]);
  return sample;
}

RawSample rescale(RawSample sample) {
  auto& x = sample.values;
  double peak = 0.0;
  for (std::size_t m = 0; m < x.channels; ++m) {
    double mean = 0.0;
    for (std::size_t t = 0; t < x.steps; ++t) mean += x(m, t);
    mean /= static_cast<double>(x.steps);
    for (std::size_t t = 0; t < x.steps; ++t) {
      x(m, t) -= mean;
      peak = std::max(peak, std::abs(x(m, t)));
    }
  }
  if (!(peak >= 1e-12)) throw DegenerateSample("sample is constant after mean removal");
  for (auto& v : x.values) v /= peak;
  return sample;
}

RawSample corrupt(RawSample sample, Variant variant, const CorruptionParams& p, Rng& rng) {
  auto& x = sample.values;
  sample.expert_weights.assign(x.size(), 1);
  auto replace = [&](std::size_t m, std::size_t start, std::size_t length) {
    for (std::size_t t = start; t < start + length; ++t) {
      x(m, t) = normal(rng, 0.0, p.noise_std);
      sample.expert_weights[m * x.steps + t] = 0;
    }
  };
  switch (variant) {
    case Variant::SD1:
      break;
    case Variant::SD3:
      if (p.prefix > x.steps)
        throw WindowTooLong("noise prefix of " + std::to_string(p.prefix) + " steps exceeds T = " +
                            std::to_string(x.steps));
      for (std::size_t m = 0; m < x.channels; ++m) replace(m, 0, p.prefix);
      break;
    case Variant::SD2:
      for (std::size_t m = 0; m < x.channels; ++m) {
        const std::size_t length = std::uniform_int_distribution<std::size_t>(p.min_window, p.max_window)(rng);
        if (length > x.steps)
          throw WindowTooLong("noise window of " + std::to_string(length) + " steps exceeds T = " +
                              std::to_string(x.steps));
        const std::size_t start = std::uniform_int_distribution<std::size_t>(0, x.steps - length)(rng);
        replace(m, start, length);
      }
      break;
  }
  return sample;
}

RawSample make_sample(const GenerationConfig& config, std::size_t class_index, std::size_t sample_index) {
  const SystemSpec spec = system_spec(kSystems.at(class_index), config.duffing_omega);
  Rng rng = make_stream(config.seed, Purpose::Generation, {class_index, sample_index});
  RawSample s = sample_instance(spec, config, rng);
  s = apply_transform(std::move(s), draw_transform(config.transform, rng));
  try {
    s = rescale(std::move(s));
  } catch (const DegenerateSample& e) {
    throw GenerationFailed(std::string(system_name(spec.id)) + " sample " + std::to_string(sample_index) + ": " +
                           e.what());
  }
  if (config.variant != Variant::SD1) {
    const CorruptionParams cp{config.noise_std, config.sd2_min_window, config.sd2_max_window, config.sd3_prefix};
    s = corrupt(std::move(s), config.variant, cp, rng);
  }
  return s;
}

Dataset generate_dataset(const GenerationConfig& config) {
  config.validate();
  const std::size_t n_classes = kSystems.size();
  const std::size_t n = n_classes * config.n_per_class;
  const std::size_t steps = config.output_steps();

  Dataset d;
  d.channels = 3;
  d.steps = steps;
  for (auto s : kSystems) d.class_names.emplace_back(system_name(s));
  d.values.resize(n * d.sample_size());
  d.labels.resize(n);
  const bool keep_weights = config.variant != Variant::SD1;
  if (keep_weights) d.expert_weights.resize(n * d.sample_size());

  parallel_for(n, config.workers, [&](std::size_t i) {
    const std::size_t c = i / config.n_per_class;
    const RawSample s = make_sample(config, c, i % config.n_per_class);
    const std::size_t off = i * d.sample_size();
    for (std::size_t k = 0; k < s.values.size(); ++k) d.values[off + k] = static_cast<float>(s.values.values[k]);
    if (keep_weights) std::copy(s.expert_weights.begin(), s.expert_weights.end(), d.expert_weights.begin() + off);
    d.labels[i] = static_cast<std::uint8_t>(c);
  });

  d.metadata = {{"generator", config.to_json()},
                {"variant", variant_name(config.variant)},
                {"seed", config.seed},
                {"chosen_defaults", json::array({"dt", "duffing_omega", "transform", "noise_std", "sd2_window"})}};
  return d;
}

}  // namespace itb
