#include <cmath>
#include <numbers>

#include "doctest.h"
#include "itb/attractors.hpp"
#include "itb/errors.hpp"
#include "oracles.hpp"

using namespace itb;

namespace {

double max_abs(const Series& s) {
  double m = 0.0;
  for (double v : s.values) m = std::max(m, std::abs(v));
  return m;
}

double channel_mean(const Series& s, std::size_t m) {
  double sum = 0.0;
  for (std::size_t t = 0; t < s.steps; ++t) sum += s(m, t);
  return sum / static_cast<double>(s.steps);
}

RawSample from_rows(std::size_t steps, const std::function<double(std::size_t, std::size_t)>& f) {
  RawSample r;
  r.values = Series(3, steps);
  for (std::size_t m = 0; m < 3; ++m)
    for (std::size_t t = 0; t < steps; ++t) r.values(m, t) = f(m, t);
  r.expert_weights.assign(r.values.size(), 1);
  return r;
}

}  // namespace

TEST_SUITE("attractors") {
  TEST_CASE("system constants") {
    const auto chua = system_spec(System::Chua);
    CHECK(chua.fixed_params.at("a") == 15.6);
    CHECK(chua.fixed_params.at("nu1") == -1.143);
    CHECK(chua.fixed_params.at("nu2") == -0.714);
    CHECK(chua.sampled_param == Interval{25, 51});
    CHECK(chua.init[0] == Interval{0.6, 0.61});

    const auto duffing = system_spec(System::Duffing);
    CHECK(duffing.fixed_params.at("a") == 0.1);
    CHECK(duffing.fixed_params.at("omega") == 1.2);
    CHECK(duffing.sampled_param == Interval{0.1, 0.65});
    CHECK(duffing.init[0] == Interval{0.6, 7.5});
    CHECK(duffing.init[2] == Interval{0.1, 1.6});

    const auto lorenz = system_spec(System::Lorenz);
    CHECK(lorenz.fixed_params.at("sigma") == 10.0);
    CHECK(lorenz.fixed_params.at("beta") == doctest::Approx(8.0 / 3.0));
    CHECK(lorenz.sampled_param == Interval{28, 100});

    const auto rikitake = system_spec(System::Rikitake);
    CHECK(rikitake.fixed_params.at("b") == 3.0);
    CHECK(rikitake.fixed_params.at("c") == 5.0);
    CHECK(rikitake.fixed_params.at("d") == 0.75);
    CHECK(rikitake.sampled_param == Interval{2, 7});

    const auto rossler = system_spec(System::Rossler);
    CHECK(rossler.fixed_params.at("a") == 0.2);
    CHECK(rossler.fixed_params.at("b") == 0.2);
    CHECK(rossler.sampled_param == Interval{4, 18});
    CHECK(rossler.init[1] == Interval{0.2, 1.2});
  }

  TEST_CASE("integrate: zero steps gives an empty 3 x 0 trajectory") {
    const auto t = integrate_system(system_spec(System::Lorenz), {1, 1, 1}, 28.0, 0, 0.02);
    CHECK(t.channels == 3);
    CHECK(t.steps == 0);
    CHECK(t.values.empty());
  }

  TEST_CASE("integrate: Duffing z channel is time") {
    const double dt = 0.02;
    const auto t = integrate_system(system_spec(System::Duffing), {1.0, 0.5, 0.0}, 0.3, 3500, dt);
    for (std::size_t k = 0; k < t.steps; ++k) REQUIRE(std::abs(t(2, k) - static_cast<double>(k + 1) * dt) < 1e-9);
  }

  TEST_CASE("integrate: first column is one step from the initial state") {
    const auto spec = system_spec(System::Rossler);
    const State init{1.0, 0.5, 0.2};
    const auto t = integrate_system(spec, init, 5.7, 1, 0.02);
    const auto step = rk5_step<3>([&](const State& s) { return derivative(spec, s, 5.7); }, init, 0.02);
    for (std::size_t m = 0; m < 3; ++m) CHECK(t(m, 0) == step[m]);
  }

  TEST_CASE("integrate: Lorenz stays bounded and tracks an adaptive reference") {
    const auto spec = system_spec(System::Lorenz);
    const double dt = 0.02;
    const auto traj = integrate_system(spec, {1, 1, 1}, 28.0, 3500, dt);
    double peak = 0.0;
    for (std::size_t m = 0; m < 3; ++m)
      for (std::size_t k = 1000; k < 3500; ++k) peak = std::max(peak, std::abs(traj(m, k)));
    CHECK(peak < 60.0);

    // Independent adaptive integrator: same bound over the retained window.
    auto f = [&](const State& s) { return derivative(spec, s, 28.0); };
    State ref{1, 1, 1};
    double ref_peak = 0.0;
    for (std::size_t k = 0; k < 3500; ++k) {
      ref = oracle::rkf45_integrate<3>(f, ref, dt, 1e-10);
      if (k >= 1000)
        for (double v : ref) ref_peak = std::max(ref_peak, std::abs(v));
    }
    CHECK(ref_peak < 60.0);
  }

  TEST_CASE("integrate: Lorenz over one time unit converges to the reference at fifth order") {
    const auto spec = system_spec(System::Lorenz);
    auto f = [&](const State& s) { return derivative(spec, s, 28.0); };
    std::vector<double> errs;
    for (double dt : {0.02, 0.01}) {
      const auto n = static_cast<std::size_t>(std::lround(1.0 / dt));
      const auto traj = integrate_system(spec, {1, 1, 1}, 28.0, n, dt);
      State ref{1, 1, 1};
      double worst = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        ref = oracle::rkf45_integrate<3>(f, ref, dt, 1e-12);
        for (std::size_t m = 0; m < 3; ++m) worst = std::max(worst, std::abs(ref[m] - traj(m, k)));
      }
      errs.push_back(worst);
    }
    CHECK(errs[0] < 1e-3);
    CHECK(errs[0] / errs[1] > std::pow(2.0, 4.5));
  }

  TEST_CASE("integrate: deterministic") {
    const auto spec = system_spec(System::Chua);
    CHECK(integrate_system(spec, {0.605, 0.205, 0.105}, 30.0, 500, 0.02) ==
          integrate_system(spec, {0.605, 0.205, 0.105}, 30.0, 500, 0.02));
  }

  TEST_CASE("integrate: Chua stays on a bounded attractor over the sampled range") {
    const auto spec = system_spec(System::Chua);
    for (double b : {25.0, 33.0, 42.0, 51.0}) {
      const auto t = integrate_system(spec, {0.6, 0.2, 0.1}, b, 3500, 0.02);
      CHECK(max_abs(t) < 10.0);
    }
  }

  TEST_CASE("integrate: divergence raises NonFiniteState") {
    CHECK_THROWS_AS(integrate_system(system_spec(System::Lorenz), {1, 1, 1}, 28.0, 2000, 1.0), NonFiniteState);
  }

  TEST_CASE("RK5 global error shrinks at fifth order") {
    std::vector<double> dts = {0.1, 0.05, 0.025}, errs;
    for (double dt : dts) {
      std::array<double, 1> y{1.0};
      const auto steps = static_cast<int>(std::lround(1.0 / dt));
      for (int k = 0; k < steps; ++k) y = rk5_step<1>([](const std::array<double, 1>& v) {
        return std::array<double, 1>{-v[0]};
      }, y, dt);
      errs.push_back(std::abs(y[0] - std::exp(-1.0)));
    }
    const double slope = oracle::loglog_slope(dts, errs);
    CHECK(slope >= 4.5);
    CHECK(slope <= 5.5);
    CHECK(errs[0] / errs[1] >= std::pow(2.0, 4.5));
  }

  TEST_CASE("sample_instance: default length is 250") {
    GenerationConfig cfg;
    Rng rng(1);
    const auto s = sample_instance(system_spec(System::Lorenz), cfg, rng);
    CHECK(s.values.channels == 3);
    CHECK(s.values.steps == 250);
    CHECK(cfg.output_steps() == (3500 - 1000) / 10);
  }

  TEST_CASE("sample_instance: identity downsampling keeps every step") {
    GenerationConfig cfg;
    cfg.n_integration_steps = 300;
    cfg.n_discard = 0;
    cfg.downsample_factor = 1;
    Rng rng(3);
    const auto s = sample_instance(system_spec(System::Rossler), cfg, rng);
    CHECK(s.values.steps == 300);
  }

  TEST_CASE("sample_instance: keeps every k-th retained step starting at the first") {
    GenerationConfig cfg;
    cfg.n_integration_steps = 60;
    cfg.n_discard = 10;
    cfg.downsample_factor = 5;
    const auto spec = system_spec(System::Rikitake);
    Rng a(9), b(9);
    const auto s = sample_instance(spec, cfg, a);
    State init;
    for (std::size_t m = 0; m < 3; ++m) init[m] = uniform(b, spec.init[m].lo, spec.init[m].hi);
    const double param = uniform(b, spec.sampled_param.lo, spec.sampled_param.hi);
    CHECK(spec.sampled_param.contains(param));
    const auto full = integrate_system(spec, init, param, 60, cfg.dt);
    REQUIRE(s.values.steps == 10);
    for (std::size_t j = 0; j < 10; ++j) CHECK(s.values(0, j) == full(0, 10 + 5 * j));
  }

  TEST_CASE("sample_instance: persistent divergence becomes GenerationFailed") {
    GenerationConfig cfg;
    cfg.dt = 1.0;
    cfg.n_integration_steps = 2000;
    Rng rng(5);
    CHECK_THROWS_AS(sample_instance(system_spec(System::Lorenz), cfg, rng), GenerationFailed);
  }

  TEST_CASE("make_sample is bit-identical for the same (seed, class, index)") {
    GenerationConfig cfg;
    cfg.seed = 42;
    cfg.variant = Variant::SD2;
    const auto a = make_sample(cfg, 2, 7);
    const auto b = make_sample(cfg, 2, 7);
    CHECK(a.values == b.values);
    CHECK(a.expert_weights == b.expert_weights);
    CHECK(make_sample(cfg, 2, 8).values != a.values);
  }

  TEST_CASE("apply_transform closed forms") {
    const auto x = from_rows(20, [](std::size_t m, std::size_t t) { return static_cast<double>(m * 7 + t) - 3.5; });
    TransformParams ones{{0, 0, 0}, {1, 1, 1}, {0, 0, 0}, {std::numbers::pi / 2, std::numbers::pi / 2, std::numbers::pi / 2}};
    for (double v : apply_transform(x, ones).values.values) CHECK(v == 1.0);

    const auto zeros = from_rows(20, [](std::size_t, std::size_t) { return 0.0; });
    TransformParams ident{{0, 0, 0}, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}};
    for (double v : apply_transform(zeros, ident).values.values) CHECK(v == 0.0);

    const std::size_t T = 64;
    const auto ramp = from_rows(T, [&](std::size_t, std::size_t t) { return 2.0 * std::numbers::pi * t / (T - 1); });
    TransformParams p{{0.1, 0.1, 0.1}, {0.5, 0.5, 0.5}, {2, 2, 2}, {1, 1, 1}};
    const auto out = apply_transform(ramp, p);
    for (std::size_t m = 0; m < 3; ++m)
      for (std::size_t t = 0; t < T; ++t) {
        const double xt = 2.0 * std::numbers::pi * t / (T - 1);
        CHECK(out.values(m, t) == doctest::Approx(0.1 + 0.5 * std::sin(2.0 * xt + 1.0)).epsilon(1e-15));
      }
  }

  TEST_CASE("rescale divides by the global max after mean removal") {
    const std::size_t T = 400;
    const auto s = from_rows(T, [&](std::size_t m, std::size_t t) {
      return static_cast<double>(m + 1) * std::sin(2.0 * std::numbers::pi * t / T);
    });
    const auto r = rescale(s);
    for (std::size_t m = 0; m < 3; ++m)
      for (std::size_t t = 0; t < T; ++t) CHECK(r.values(m, t) == doctest::Approx(s.values(m, t) / 3.0).epsilon(1e-12));
    CHECK(max_abs(r.values) == doctest::Approx(1.0).epsilon(1e-12));
    double peak2 = 0;
    for (std::size_t t = 0; t < T; ++t) peak2 = std::max(peak2, std::abs(r.values(2, t)));
    CHECK(peak2 == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("rescale is idempotent on normalised input") {
    const auto s = rescale(from_rows(50, [](std::size_t m, std::size_t t) { return std::cos(0.3 * t + m); }));
    const auto twice = rescale(s);
    for (std::size_t i = 0; i < s.values.size(); ++i) CHECK(std::abs(twice.values.values[i] - s.values.values[i]) < 1e-12);
  }

  TEST_CASE("rescale rejects constant samples") {
    CHECK_THROWS_AS(rescale(from_rows(10, [](std::size_t, std::size_t) { return 4.2; })), DegenerateSample);
  }

  TEST_CASE("rescale contract on random samples") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
      const auto r = rescale(from_rows(100, [&](std::size_t, std::size_t) { return uniform(rng, -5, 20); }));
      CHECK(std::abs(max_abs(r.values) - 1.0) <= 1e-12);
      for (std::size_t m = 0; m < 3; ++m) CHECK(std::abs(channel_mean(r.values, m)) <= 1e-12);
    }
  }

  TEST_CASE("corrupt SD3 zeroes the first 100 steps of every channel") {
    Rng rng(2);
    const auto base = rescale(from_rows(250, [](std::size_t m, std::size_t t) { return std::sin(0.1 * t * (m + 1)); }));
    const auto c = corrupt(base, Variant::SD3, {}, rng);
    for (std::size_t m = 0; m < 3; ++m) {
      std::size_t ones = 0;
      for (std::size_t t = 0; t < 250; ++t) {
        const bool kept = c.expert_weights[m * 250 + t] == 1;
        ones += kept;
        CHECK(kept == (t >= 100));
        if (kept) CHECK(c.values(m, t) == base.values(m, t));
      }
      CHECK(ones == 150);
    }
  }

  TEST_CASE("corrupt SD2 replaces one contiguous window of 50..100 steps per channel") {
    Rng rng(11);
    const auto base = rescale(from_rows(250, [](std::size_t m, std::size_t t) { return std::cos(0.05 * t + m); }));
    for (int trial = 0; trial < 100; ++trial) {
      const auto c = corrupt(base, Variant::SD2, {}, rng);
      for (std::size_t m = 0; m < 3; ++m) {
        std::size_t zeros = 0, first = 250, last = 0;
        for (std::size_t t = 0; t < 250; ++t) {
          if (c.expert_weights[m * 250 + t] == 0) {
            ++zeros;
            first = std::min(first, t);
            last = std::max(last, t);
          } else {
            REQUIRE(c.values(m, t) == base.values(m, t));
          }
        }
        CHECK(zeros >= 50);
        CHECK(zeros <= 100);
        CHECK(last - first + 1 == zeros);
      }
    }
  }

  TEST_CASE("corrupt SD1 leaves the sample untouched") {
    Rng rng(1);
    const auto base = from_rows(30, [](std::size_t m, std::size_t t) { return 0.01 * t - 0.1 * m; });
    const auto c = corrupt(base, Variant::SD1, {}, rng);
    CHECK(c.values == base.values);
    CHECK(std::all_of(c.expert_weights.begin(), c.expert_weights.end(), [](auto w) { return w == 1; }));
  }

  TEST_CASE("corrupt rejects windows longer than the series") {
    Rng rng(1);
    const auto shortie = from_rows(40, [](std::size_t, std::size_t t) { return static_cast<double>(t); });
    CHECK_THROWS_AS(corrupt(shortie, Variant::SD3, {}, rng), WindowTooLong);
    CHECK_THROWS_AS(corrupt(shortie, Variant::SD2, {}, rng), WindowTooLong);
  }

  TEST_CASE("generated samples suppress static features for every class") {
    GenerationConfig cfg;
    cfg.seed = 3;
    for (std::size_t c = 0; c < 5; ++c)
      for (std::size_t i = 0; i < 4; ++i) {
        const auto s = make_sample(cfg, c, i);
        CHECK(s.label == static_cast<int>(c));
        CHECK(std::abs(max_abs(s.values) - 1.0) <= 1e-12);
        for (std::size_t m = 0; m < 3; ++m) CHECK(std::abs(channel_mean(s.values, m)) <= 1e-12);
      }
  }

  TEST_CASE("generate_dataset: small set is class-major and reproducible") {
    GenerationConfig cfg;
    cfg.n_per_class = 2;
    cfg.seed = 99;
    const auto a = generate_dataset(cfg);
    CHECK(a.size() == 10);
    CHECK(a.channels == 3);
    CHECK(a.steps == 250);
    CHECK(a.class_names == std::vector<std::string>{"Chua", "Duffing", "Lorenz", "Rikitake", "Rossler"});
    for (std::size_t i = 0; i < 10; ++i) CHECK(a.labels[i] == i / 2);
    CHECK_FALSE(a.has_expert_weights());
    cfg.workers = 3;
    CHECK(generate_dataset(cfg) == a);
  }

  TEST_CASE("generate_dataset: defaults give (2500, 3, 250)") {
    GenerationConfig cfg;
    const auto d = generate_dataset(cfg);
    CHECK(d.size() == 2500);
    CHECK(d.values.size() == 2500u * 3u * 250u);
    for (float v : d.values) REQUIRE(std::isfinite(v));
  }

  TEST_CASE("generate_dataset: SD2 zeroes at least 150 expert weights per sample") {
    GenerationConfig cfg;
    cfg.variant = Variant::SD2;
    cfg.n_per_class = 10;
    const auto d = generate_dataset(cfg);
    REQUIRE(d.has_expert_weights());
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto w = d.expert_mask(i);
      CHECK(std::count(w.begin(), w.end(), 0) >= 150);
    }
  }

  TEST_CASE("config validation names the field") {
    GenerationConfig cfg;
    cfg.n_per_class = 0;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("n_per_class"), ConfigError);
    CHECK_THROWS_AS(parse_generation_config(nlohmann::json{{"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(parse_generation_config(nlohmann::json{{"variant", "sd9"}}), ConfigError);
    const auto c = parse_generation_config(nlohmann::json{{"variant", "sd3"}, {"dt", 0.01}, {"transform", {{"c", {1, 3}}}}});
    CHECK(c.variant == Variant::SD3);
    CHECK(c.dt == 0.01);
    CHECK(c.transform.c == Interval{1, 3});
    CHECK(c.transform.a == Interval{-0.5, 0.5});
    CHECK(parse_generation_config(c.to_json()).to_json() == c.to_json());
  }
}
