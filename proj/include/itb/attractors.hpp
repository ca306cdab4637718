#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "itb/dataset_store.hpp"
#include "itb/rng.hpp"
#include "itb/series.hpp"
#include "json.hpp"

namespace itb {

enum class System { Chua = 0, Duffing = 1, Lorenz = 2, Rikitake = 3, Rossler = 4 };

inline constexpr std::array<System, 5> kSystems = {System::Chua, System::Duffing, System::Lorenz,
                                                   System::Rikitake, System::Rossler};

std::string_view system_name(System s);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
  bool operator==(const Interval&) const = default;
};

struct SystemSpec {
  System id;
  std::map<std::string, double> fixed_params;
  std::string sampled_param_name;
  Interval sampled_param;
  std::array<Interval, 3> init;
};

// Constants and sampling ranges of the five attractors. `duffing_omega` is the
// forcing frequency of the Duffing oscillator.
SystemSpec system_spec(System s, double duffing_omega = 1.2);

using State = std::array<double, 3>;

State derivative(const SystemSpec& spec, const State& s, double sampled_param);

// One step of the 6-stage, 5th-order explicit Runge-Kutta method with the
// Dormand-Prince fifth-order weights.
template <std::size_t N, typename F>
std::array<double, N> rk5_step(const F& f, const std::array<double, N>& y, double dt) {
  static constexpr double a21 = 1.0 / 5.0;
  static constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
  static constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
  static constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                          a54 = -212.0 / 729.0;
  static constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                          a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
  static constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0,
                          b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;

  auto axpy = [&](std::initializer_list<std::pair<double, const std::array<double, N>*>> terms) {
    std::array<double, N> out = y;
    for (const auto& [w, k] : terms)
      for (std::size_t i = 0; i < N; ++i) out[i] += dt * w * (*k)[i];
    return out;
  };
  const auto k1 = f(y);
  const auto k2 = f(axpy({{a21, &k1}}));
  const auto k3 = f(axpy({{a31, &k1}, {a32, &k2}}));
  const auto k4 = f(axpy({{a41, &k1}, {a42, &k2}, {a43, &k3}}));
  const auto k5 = f(axpy({{a51, &k1}, {a52, &k2}, {a53, &k3}, {a54, &k4}}));
  const auto k6 = f(axpy({{a61, &k1}, {a62, &k2}, {a63, &k3}, {a64, &k4}, {a65, &k5}}));
  return axpy({{b1, &k1}, {b3, &k3}, {b4, &k4}, {b5, &k5}, {b6, &k6}});
}

// Returns 3 x n_steps; column k holds the state after k + 1 steps.
// Throws NonFiniteState if the state stops being finite.
Series integrate_system(const SystemSpec& spec, const State& init, double sampled_param,
                        std::size_t n_steps, double dt);

enum class Variant { SD1, SD2, SD3 };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

struct TransformIntervals {
  Interval a{-0.5, 0.5};
  Interval b{0.5, 1.5};
  Interval c{0.5, 2.0};
  Interval d{0.0, 6.283185307179586};
  bool operator==(const TransformIntervals&) const = default;
};

struct GenerationConfig {
  Variant variant = Variant::SD1;
  std::size_t n_per_class = 500;
  std::size_t n_integration_steps = 3500;
  std::size_t n_discard = 1000;
  std::size_t downsample_factor = 10;
  double dt = 0.02;
  double duffing_omega = 1.2;
  TransformIntervals transform;
  double noise_std = kNoiseStd;
  std::size_t sd2_min_window = 50;
  std::size_t sd2_max_window = 100;
  std::size_t sd3_prefix = 100;
  std::size_t max_attempts = 10;
  std::uint64_t seed = 0;
  // Execution only; never affects the output.
  std::size_t workers = 0;

  // Throws ConfigError naming the offending field.
  void validate() const;
  std::size_t output_steps() const;

  nlohmann::json to_json() const;
};

// Keys missing from `j` keep the values of `base`; unknown keys are rejected.
GenerationConfig parse_generation_config(const nlohmann::json& j, GenerationConfig base = GenerationConfig{});

struct RawSample {
  Series values;
  int label = 0;
  ExpertMask expert_weights;
};

struct TransformParams {
  std::array<double, 3> a{}, b{}, c{}, d{};
};

struct CorruptionParams {
  double noise_std = kNoiseStd;
  std::size_t min_window = 50;
  std::size_t max_window = 100;
  std::size_t prefix = 100;
};

TransformParams draw_transform(const TransformIntervals& intervals, Rng& rng);

// Integrates one randomly initialised attractor and downsamples it. Resamples
// the initial condition on divergence, up to config.max_attempts times.
RawSample sample_instance(const SystemSpec& spec, const GenerationConfig& config, Rng& rng);

RawSample apply_transform(RawSample sample, const TransformParams& params);

// Removes each channel's mean, then divides every channel by the global max |x|.
RawSample rescale(RawSample sample);

RawSample corrupt(RawSample sample, Variant variant, const CorruptionParams& params, Rng& rng);

// Full per-sample pipeline; the stream is derived from (seed, class, index).
RawSample make_sample(const GenerationConfig& config, std::size_t class_index, std::size_t sample_index);

// Class-major: samples of Chua first, then Duffing, Lorenz, Rikitake, Rossler.
Dataset generate_dataset(const GenerationConfig& config);

}  // namespace itb
