// Acceptance run: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "itb/attractors.hpp"
#include "itb/attribution.hpp"
#include "itb/cli.hpp"
#include "itb/dataset_store.hpp"
#include "itb/errors.hpp"
#include "itb/evaluation.hpp"
#include "itb/models.hpp"
#include "itb/report.hpp"
#include "oracles.hpp"
#include "scorers.hpp"
#include "tmpdir.hpp"

using namespace itb;
using namespace itb::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failed sub-checks of one criterion.
struct Checker {
  Outcome o;
  void check(bool ok, const std::string& what) {
    if (ok) return;
    if (o.pass) o.detail.clear();
    o.pass = false;
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += what;
  }
  void note(const std::string& s) {
    if (o.pass) o.detail += (o.detail.empty() ? "" : "; ") + s;
  }
};

std::string fmt(double v, int prec = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

std::vector<double> gaussian(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = normal(rng, 0.0, 1.0);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<double> exact_for(const Scorer& s, const Series& x, const Series& b, std::size_t cls) {
  return oracle::exact_shapley(x.size(), [&](const std::vector<bool>& members) {
    return coalition_value(s, x.values, b.values, members, cls);
  });
}

Outcome shapley_oracle() {
  Checker c;
  const std::size_t d = 10;
  const auto w = gaussian(d, 1), x = gaussian(d, 2);
  LinearScorer s(2, 5, {w, gaussian(d, 3)});
  const Series xs(2, 5, x), zero(2, 5);
  const auto exact = exact_for(s, xs, zero, 0);
  std::vector<double> closed(d);
  for (std::size_t i = 0; i < d; ++i) closed[i] = w[i] * x[i];
  const double err = max_abs_diff(exact, closed);
  c.check(err <= 1e-9, "exact vs w*x error " + fmt(err));

  Rng rng = make_stream(7, Purpose::Attribution, {0});
  const auto est = shapley_sampling(s, xs, 0, zero, 200, false, rng);
  std::size_t outside = 0;
  for (std::size_t i = 0; i < d; ++i)
    if (std::abs(est.values.values[i] - exact[i]) > 3.0 * est.standard_error.values[i] + 1e-12) ++outside;
  c.check(outside == 0, std::to_string(outside) + " sampled values outside 3 SE");

  // A non-additive game as well, where the standard error is not zero.
  FunctionScorer g(1, 2, 5, [](std::span<const double> z, std::size_t) {
    return std::tanh(z[0] * z[1] + z[2] - z[3] * z[4] * z[5] + 0.5 * z[6] * z[7] * z[8] + z[9]);
  });
  const auto exact_g = exact_for(g, xs, zero, 0);
  Rng rng2 = make_stream(7, Purpose::Attribution, {1});
  const auto est_g = shapley_sampling(g, xs, 0, zero, 200, false, rng2);
  std::size_t outside_g = 0;
  for (std::size_t i = 0; i < d; ++i)
    if (std::abs(est_g.values.values[i] - exact_g[i]) > 3.0 * est_g.standard_error.values[i] + 1e-12) ++outside_g;
  c.check(outside_g <= 1, std::to_string(outside_g) + "/10 nonlinear values outside 3 SE");
  c.note("exact err " + fmt(err) + ", nonlinear outside 3SE " + std::to_string(outside_g) + "/10");
  return c.o;
}

Outcome kernel_shap_oracle() {
  Checker c;
  double worst = 0.0;
  for (std::size_t d : {4, 8, 12}) {
    FunctionScorer s(2, 1, d, [](std::span<const double> z, std::size_t cls) {
      double v = 0.0;
      for (std::size_t i = 0; i < z.size(); ++i)
        v += (cls + 1.0) * std::sin(z[i] + 0.1 * static_cast<double>(i)) + 0.3 * z[i] * z[i];
      return v;
    });
    const Series x(1, d, gaussian(d, 10 + d)), b(1, d, gaussian(d, 20 + d));
    const auto exact = exact_for(s, x, b, 1);
    Rng rng = make_stream(3, Purpose::Attribution, {d});
    const std::size_t all = (std::size_t{1} << d) - 2;
    const auto phi = kernel_shap(s, x, 1, b, all, false, rng);
    worst = std::max(worst, max_abs_diff(phi.values, exact));
  }
  c.check(worst <= 1e-6, "max error " + fmt(worst));
  c.note("max error " + fmt(worst) + " over d = 4, 8, 12");
  return c.o;
}

Outcome ig_exactness() {
  Checker c;
  const std::size_t d = 24;
  const auto w = gaussian(d, 31), x = gaussian(d, 32);
  LinearScorer s(3, 8, {gaussian(d, 33), w});
  const Series xs(3, 8, x);
  double worst = 0.0;
  for (auto policy : {BaselinePolicy::Zeros, BaselinePolicy::NormalNoise}) {
    const Series b = make_baseline(policy, 3, 8, 5, 0);
    for (std::size_t k : {1, 2, 7, 50}) {
      const auto phi = integrated_gradients(s, xs, 1, b, k);
      for (std::size_t i = 0; i < d; ++i) worst = std::max(worst, std::abs(phi.values[i] - w[i] * (x[i] - b.values[i])));
    }
  }
  c.check(worst <= 1e-9, "linear error " + fmt(worst));

  Rng init(4);
  const auto model = BuiltinModel::initialise(ModelShape{ModelKind::Mlp, 3, 20, 5, 64, 7}, init);
  const Series xm(3, 20, gaussian(60, 35));
  const Series zero(3, 20);
  const auto phi = integrated_gradients(model, xm, 2, zero, 200);
  const double sum = std::accumulate(phi.values.begin(), phi.values.end(), 0.0);
  const double delta = model.score(xm, 2) - model.score(zero, 2);
  const double rel = std::abs(sum - delta) / std::max(std::abs(delta), 1e-12);
  c.check(rel <= 0.005, "MLP completeness gap " + fmt(100 * rel) + "%");
  c.note("linear error " + fmt(worst) + ", MLP completeness gap " + fmt(100 * rel) + "%");
  return c.o;
}

RelevanceMap row(std::vector<double> v) {
  const std::size_t n = v.size();
  return RelevanceMap(1, n, std::move(v));
}

CurvePoint pt(double q, double n_r, double s, double t = 0.0) { return CurvePoint{q, 0, n_r, t, s, 0.0}; }

Outcome metric_suite() {
  Checker c;
  auto close = [](double a, double b, double tol = 1e-12) { return std::abs(a - b) <= tol; };
  // positive set
  c.check(positive_set(row({1, 2, 3, 4}), 0.5) == Mask{0, 0, 1, 1}, "median mask");
  c.check(count(positive_set(row({0, -1, -2}), 0.5)) == 0, "non-positive mask");
  c.check(count(positive_set(row({0.3, 0.3, 0.3, 0.3, 0.3}), 0.05)) == 5, "uniform mask at q=0.05");
  // tic
  c.check(close(tic(row({1, 1, 1, 1}), 0.5), 0.5, 1e-8), "TIC of equal values");
  c.check(tic(row({0, 0, 0, 0}), 0.5) == 0.0, "TIC of zero relevance");
  c.check(close(tic(row({0.1, 0.2, 0.3, 0.4}), 0.7), 0.4 / (1.0 + 1e-8)), "TIC hand sum");
  {
    Rng rng(2);
    RelevanceMap r(3, 50);
    for (auto& v : r.values) v = normal(rng, 0.0, 1.0);
    double prev_t = 2.0;
    std::size_t prev_n = r.size() + 1;
    Mask prev(r.size(), 1);
    bool ok = true;
    for (double q : QuantileSet{}.values) {
      const Mask m = positive_set(r, q);
      for (std::size_t i = 0; i < m.size(); ++i) ok = ok && m[i] <= prev[i];
      const double t = tic(r, m);
      ok = ok && t <= prev_t && count(m) <= prev_n;
      prev = m;
      prev_t = t;
      prev_n = count(m);
    }
    c.check(ok, "TIC/mask monotonicity");
  }
  // occlusion
  {
    Series x(3, 40);
    Rng data(5);
    for (auto& v : x.values) v = normal(data, 0.0, 1.0);
    Rng rng(6);
    c.check(occlude(x, Mask(x.size(), 0), Occlusion::NormalSample, rng) == x, "empty mask no-op");
    auto y = occlude(x, Mask(x.size(), 1), Occlusion::Permute, rng).values;
    auto z = x.values;
    std::sort(y.begin(), y.end());
    std::sort(z.begin(), z.end());
    c.check(y == z, "permute multiset");
    const Series big(1, 100000, 3.0);
    const auto n = occlude(big, Mask(big.size(), 1), Occlusion::NormalSample, rng).values;
    const double mean = std::accumulate(n.begin(), n.end(), 0.0) / static_cast<double>(n.size());
    double var = 0.0;
    for (double v : n) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(n.size() - 1));
    c.check(std::abs(sd - 0.2887) <= 0.003, "normal fill std " + fmt(sd, 5));
  }
  // s_e
  c.check(s_e(2.0, 2.0, 0.0) == 0.0, "S_E no drop");
  c.check(s_e(2.0, 0.0, 0.0) == 1.0, "S_E full collapse");
  c.check(s_e(2.0, 0.5, 0.0) == 0.75, "S_E substitution");
  bool threw = false;
  try {
    s_e(1.0, 0.5, 1.0);
  } catch (const DegenerateReference&) {
    threw = true;
  }
  c.check(threw, "S_E degenerate reference");
  // auc
  c.check(close(auc_se({pt(0.95, 0.1, 1.0), pt(0.05, 0.9, 1.0)}), 0.95), "AUC 0.95 example");
  c.check(auc_se({pt(0.05, 0.7, 0.0), pt(0.95, 0.1, 0.0)}) == 0.0, "AUC of zero curve");
  c.check(close(auc_se({pt(0.5, 0.5, 0.5)}), 0.375), "AUC single point");
  {
    Rng rng(9);
    bool ok = true;
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> nr(10);
      for (auto& v : nr) v = uniform(rng, 0.0, 1.0);
      std::sort(nr.begin(), nr.end(), std::greater<>());
      std::vector<CurvePoint> curve;
      for (std::size_t i = 0; i < nr.size(); ++i) curve.push_back(pt(0.05 + 0.1 * i, nr[i], 1.0));
      ok = ok && close(auc_se(curve), 1.0 - nr.back() / 2.0, 1e-12);
    }
    c.check(ok, "AUC closed form 1 - N_r(q_max)/2");
  }
  // information ratio
  {
    std::vector<CurvePoint> id, twice, mixed{pt(0.1, 0, 0.0, 0.0), pt(0.2, 0, 0.1, 0.1), pt(0.3, 0, 0.4, 0.2)};
    for (double t : {0.8, 0.6, 0.4, 0.2}) {
      id.push_back(pt(0, 0, t, t));
      twice.push_back(pt(0, 0, 2 * t, t));
    }
    c.check(close(information_ratio({id}), 1.0), "IR identity");
    c.check(close(information_ratio({twice}), 2.0), "IR doubled");
    c.check(close(information_ratio({mixed}), 2.0), "IR mixed slopes");
  }
  // hmi
  {
    c.check(close(hmi(row({0, 0.4, 0.6}), ExpertMask{0, 1, 1}), 1.0, 1e-8), "HMI perfect overlap");
    c.check(hmi(row({0, 0.4, 0.6}), ExpertMask{0, 0, 0}) == 0.0, "HMI zero weights");
    std::vector<double> r(20, 0.0);
    ExpertMask w(20, 0);
    for (std::size_t i = 0; i < 10; ++i) r[i] = 0.1;
    for (std::size_t i = 5; i < 15; ++i) w[i] = 1;
    c.check(close(hmi(row(r), w), 0.5, 1e-8), "HMI half overlap");
    Rng rng(12);
    bool bounded = true;
    for (int trial = 0; trial < 500; ++trial) {
      RelevanceMap m(1, 25);
      ExpertMask e(25);
      for (auto& v : m.values) v = normal(rng, 0.0, 1.0);
      for (auto& b : e) b = static_cast<std::uint8_t>(uniform(rng, 0.0, 1.0) < 0.5);
      try {
        const double h = hmi(m, e);
        bounded = bounded && h >= 0.0 && h <= 1.0;
      } catch (const NoPositiveRelevance&) {
      }
    }
    c.check(bounded, "HMI bounds");
  }
  // evaluate_sample cardinality and constant scorer
  {
    ConstantScorer s(2, 1, 8, 1.0);
    const auto curve = evaluate_sample(s, Series(1, 8, 0.5), RelevanceMap(1, 8, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8}),
                                       {0, 0, 0.0}, QuantileSet{}, Fill::NormalSample, 1);
    bool zero = curve.points.size() == 10;
    for (const auto& p : curve.points) zero = zero && p.s_e == 0.0;
    c.check(zero, "constant scorer curve");
  }
  c.note("all stated examples hold");
  return c.o;
}

Outcome integrator_order() {
  Checker c;
  std::vector<double> dts{0.1, 0.05, 0.025}, errs;
  for (double dt : dts) {
    std::array<double, 1> y{1.0};
    const auto steps = static_cast<int>(std::lround(1.0 / dt));
    for (int k = 0; k < steps; ++k)
      y = rk5_step<1>([](const std::array<double, 1>& v) { return std::array<double, 1>{-v[0]}; }, y, dt);
    errs.push_back(std::abs(y[0] - std::exp(-1.0)));
  }
  const double slope = oracle::loglog_slope(dts, errs);
  c.check(slope >= 4.5 && slope <= 5.5, "slope " + fmt(slope, 4));
  c.note("slope " + fmt(slope, 4));
  return c.o;
}

struct Pipeline {
  bool ok = true;
  std::string error;
  std::map<std::string, double> test_accuracy;  // per dataset
  std::vector<EvaluationRun> runs;
  std::map<std::string, std::string> checksums;  // per output directory
};

int cli(std::vector<std::string> args, std::string& error) {
  args.insert(args.begin(), "itb");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != 0) error = args[1] + " exited " + std::to_string(code) + ": " + err.str();
  return code;
}

Pipeline run_pipeline(const fs::path& root) {
  Pipeline p;
  const std::string seed = "11";
  auto step = [&](std::vector<std::string> args) {
    if (!p.ok) return;
    std::string error;
    if (cli(std::move(args), error) != 0) {
      p.ok = false;
      p.error = error;
    }
  };
  for (const std::string v : {"sd1", "sd2"}) {
    const fs::path data = root / v, model = root / ("model_" + v), rel = root / ("relevance_" + v);
    step({"gen", "--variant", v, "--n-per-class", "100", "--seed", seed, "--out", data.string()});
    step({"train", "--data", data.string(), "--out", model.string(), "--seed", seed});
    step({"attribute", "--data", data.string(), "--scorer", model.string(), "--out", rel.string(), "--methods",
          "shapley,ig,kernelshap,random", "--seed", seed});
    for (const std::string occ : {"normal", "permute"})
      step({"evaluate", "--data", data.string(), "--scorer", model.string(), "--relevance", rel.string(),
            "--occlusion", occ, "--out", (root / "evaluations" / (v + "_" + occ)).string(), "--seed", seed});
    if (!p.ok) return p;
    const auto metrics = nlohmann::json::parse(read_text(model / "metrics.json"));
    p.test_accuracy[v] = metrics["accuracy"]["test"].get<double>();
  }
  step({"report", "--in", (root / "evaluations").string(), "--out", (root / "report").string()});
  if (!p.ok) return p;
  p.runs = collect_evaluations(root / "evaluations");
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) p.checksums[entry.path().filename().string()] = directory_checksum(entry.path());
  for (const auto& entry : fs::directory_iterator(root / "evaluations"))
    p.checksums["evaluations/" + entry.path().filename().string()] = directory_checksum(entry.path());
  return p;
}

Outcome end_to_end(const Pipeline& p) {
  Checker c;
  if (!p.ok) {
    c.check(false, p.error);
    return c.o;
  }
  for (const auto& [ds, acc] : p.test_accuracy) c.check(acc >= 0.90, ds + " test accuracy " + fmt(acc));
  std::string gaps;
  for (const auto& run : p.runs) {
    std::map<std::string, double> auc;
    for (const auto& m : run.methods) auc[m.method] = m.auc;
    for (const std::string m : {"ShapleySampling", "IntegratedGradients"}) {
      const double gap = auc[m] - auc["Random"];
      c.check(gap >= 0.10, run.dataset + "/" + run.occlusion + " " + m + " gap " + fmt(gap));
      gaps += (gaps.empty() ? "" : " ") + fmt(gap, 2);
    }
  }
  c.check(p.runs.size() == 4, std::to_string(p.runs.size()) + " evaluations instead of 4");
  c.note("test acc sd1 " + fmt(p.test_accuracy.at("sd1")) + " sd2 " + fmt(p.test_accuracy.at("sd2")) +
         "; AUC gaps vs Random [" + gaps + "]");
  return c.o;
}

Outcome hmi_ground_truth() {
  Checker c;
  GenerationConfig cfg;
  cfg.variant = Variant::SD3;
  cfg.n_per_class = 4;
  cfg.seed = 5;
  const Dataset d = generate_dataset(cfg);
  double worst_one = 0.0, worst_zero = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const ExpertMask w = d.expert_mask(i);
    RelevanceMap oracle(d.channels, d.steps), noise(d.channels, d.steps);
    for (std::size_t k = 0; k < w.size(); ++k) {
      oracle.values[k] = w[k] ? 1.0 : 0.0;
      noise.values[k] = w[k] ? 0.0 : 1.0;
    }
    worst_one = std::max(worst_one, std::abs(hmi(oracle, w) - 1.0));
    worst_zero = std::max(worst_zero, std::abs(hmi(noise, w)));
    // The noise region is the first 100 steps of every channel.
    std::size_t zeros = 0;
    for (std::size_t m = 0; m < d.channels; ++m)
      for (std::size_t t = 0; t < 100; ++t) zeros += w[m * d.steps + t] == 0;
    c.check(zeros == d.channels * 100, "sample " + std::to_string(i) + " expert weights");
  }
  c.check(worst_one <= 1e-9, "oracle HMI error " + fmt(worst_one));
  c.check(worst_zero == 0.0, "noise-region HMI " + fmt(worst_zero));
  c.note("oracle |HMI-1| <= " + fmt(worst_one) + ", noise-region HMI " + fmt(worst_zero));
  return c.o;
}

Outcome determinism(const Pipeline& a, const Pipeline& b) {
  Checker c;
  if (!a.ok || !b.ok) {
    c.check(false, "pipeline failed: " + (a.ok ? b.error : a.error));
    return c.o;
  }
  c.check(a.checksums.size() == b.checksums.size(), "different output sets");
  std::size_t same = 0;
  for (const auto& [dir, sum] : a.checksums) {
    const auto it = b.checksums.find(dir);
    const bool eq = it != b.checksums.end() && it->second == sum;
    c.check(eq, dir + " differs");
    same += eq;
  }
  c.note(std::to_string(same) + " output directories byte-identical");
  return c.o;
}

void report_line(int id, const std::string& name, const Outcome& o, double seconds, int& failures) {
  std::cout << "criterion " << id << " [" << (o.pass ? "PASS" : "FAIL") << "] " << name << ": " << o.detail << " ("
            << fmt(seconds, 3) << " s)" << std::endl;
  failures += !o.pass;
}

template <typename F>
void timed(int id, const std::string& name, F&& f, int& failures) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = f();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  report_line(id, name, o, std::chrono::duration<double>(Clock::now() - t0).count(), failures);
}

}  // namespace

int main() {
  int failures = 0;
  timed(1, "shapley oracle", shapley_oracle, failures);
  timed(2, "kernelshap oracle", kernel_shap_oracle, failures);
  timed(3, "integrated gradients exactness", ig_exactness, failures);
  timed(4, "metric unit suite", metric_suite, failures);
  timed(5, "integrator order", integrator_order, failures);

  TempDir tmp;
  Pipeline first;
  const auto t0 = Clock::now();
  try {
    first = run_pipeline(tmp / "run1");
  } catch (const std::exception& e) {
    first.ok = false;
    first.error = e.what();
  }
  const double first_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  Outcome e2e = end_to_end(first);
  if (first_seconds > 600.0) {
    e2e.pass = false;
    e2e.detail += "; runtime above 10 min";
  }
  report_line(6, "end-to-end ordering", e2e, first_seconds, failures);

  timed(7, "HMI ground truth", hmi_ground_truth, failures);

  const auto t1 = Clock::now();
  Pipeline second;
  try {
    second = run_pipeline(tmp / "run2");
  } catch (const std::exception& e) {
    second.ok = false;
    second.error = e.what();
  }
  report_line(8, "determinism", determinism(first, second), std::chrono::duration<double>(Clock::now() - t1).count(),
              failures);
  return failures;
}
