#include "itb/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
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

std::vector<double> positive_values(const RelevanceMap& r) {
  std::vector<double> v;
  for (double x : r.values)
    if (x > 0.0) v.push_back(x);
  return v;
}

void fill_masked(std::vector<double>& values, const std::vector<std::size_t>& positions, Fill fill, Rng& rng) {
  if (fill == Fill::NormalSample) {
    std::normal_distribution<double> noise(0.0, kNoiseStd);
    for (auto p : positions) values[p] = noise(rng);
    return;
  }
  std::vector<double> picked;
  picked.reserve(positions.size());
  for (auto p : positions) picked.push_back(values[p]);
  std::shuffle(picked.begin(), picked.end(), rng);
  for (std::size_t k = 0; k < positions.size(); ++k) values[positions[k]] = picked[k];
}

json point_json(const MeanPoint& p) {
  return json{{"q", p.q},         {"n_r", p.n_r},           {"tic", p.tic},
              {"s_e", p.s_e},     {"accuracy", p.accuracy}, {"accuracy_n_r", p.accuracy_n_r}};
}

MeanPoint point_from_json(const json& j) {
  MeanPoint p;
  p.q = j.at("q").get<double>();
  p.n_r = j.at("n_r").get<double>();
  p.tic = j.value("tic", 0.0);
  p.s_e = j.at("s_e").get<double>();
  p.accuracy = j.value("accuracy", 0.0);
  p.accuracy_n_r = j.value("accuracy_n_r", 0.0);
  return p;
}

std::vector<CurvePoint> as_curve(const std::vector<MeanPoint>& mean) {
  std::vector<CurvePoint> c;
  for (const auto& p : mean) c.push_back(CurvePoint{p.q, 0, p.n_r, p.tic, p.s_e, 0.0});
  return c;
}

// Occluded inputs for every quantile of one sample (method masks first, then
// random masks when requested), and the method-mask sizes.
struct OcclusionBatch {
  std::vector<double> inputs;
  std::vector<std::size_t> mask_sizes;
  std::vector<double> tics;
  std::size_t n_inputs = 0;
};

OcclusionBatch build_occlusions(const Series& x, const RelevanceMap& relevance, std::size_t sample,
                                const QuantileSet& quantiles, Fill fill, std::uint64_t seed, bool random_baseline,
                                double eps) {
  OcclusionBatch b;
  const std::size_t nq = quantiles.values.size();
  std::vector<Mask> masks(nq);
  for (std::size_t i = 0; i < nq; ++i) {
    masks[i] = positive_set(relevance, quantiles.values[i]);
    b.mask_sizes.push_back(count(masks[i]));
    b.tics.push_back(tic(relevance, masks[i], eps));
  }
  const Occlusion method = fill == Fill::NormalSample ? Occlusion::NormalSample : Occlusion::Permute;
  auto push = [&](const Series& s) {
    b.inputs.insert(b.inputs.end(), s.values.begin(), s.values.end());
    ++b.n_inputs;
  };
  for (std::size_t i = 0; i < nq; ++i) {
    Rng rng = make_stream(seed, Purpose::Occlusion, {sample, i});
    push(occlude(x, masks[i], method, rng, fill));
  }
  if (random_baseline)
    for (std::size_t i = 0; i < nq; ++i) {
      Rng rng = make_stream(seed, Purpose::RandomBaseline, {sample, i});
      push(occlude(x, masks[i], Occlusion::RandomBaseline, rng, fill));
    }
  return b;
}

}  // namespace

void QuantileSet::validate() const {
  if (values.empty()) throw ConfigError("quantiles must not be empty");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] > 0.0 && values[i] < 1.0)) throw ConfigError("quantiles must lie strictly inside (0, 1)");
    if (i > 0 && !(values[i] > values[i - 1])) throw ConfigError("quantiles must be strictly increasing");
  }
}

double linear_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw NoPositiveRelevance("quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Mask positive_set(const RelevanceMap& relevance, double q) {
  Mask mask(relevance.size(), 0);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < relevance.size(); ++i)
    if (relevance.values[i] > 0.0) order.push_back(i);
  if (order.empty()) return mask;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return relevance.values[a] < relevance.values[b]; });
  const double h = q * static_cast<double>(order.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, order.size() - 1);
  const double a = relevance.values[order[lo]], b = relevance.values[order[hi]];
  const double threshold = a + (h - static_cast<double>(lo)) * (b - a);
  // Elements tied with the threshold enter from rank round(h) upwards.
  const auto first_tied = static_cast<std::size_t>(std::round(h));
  for (std::size_t k = 0; k < order.size(); ++k) {
    const double v = relevance.values[order[k]];
    mask[order[k]] = static_cast<std::uint8_t>(v > threshold || (v == threshold && k >= first_tied));
  }
  return mask;
}

std::size_t count(const Mask& mask) { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }

double tic(const RelevanceMap& relevance, const Mask& mask, double eps) {
  double inside = 0.0, total = 0.0;
  for (std::size_t i = 0; i < relevance.size(); ++i) {
    const double r = relevance.values[i];
    if (r <= 0.0) continue;
    total += r;
    if (mask[i]) inside += r;
  }
  return inside / (total + eps);
}

double tic(const RelevanceMap& relevance, double q, double eps) {
  return tic(relevance, positive_set(relevance, q), eps);
}

std::string_view fill_name(Fill f) { return f == Fill::NormalSample ? "normal" : "permute"; }

Fill parse_fill(std::string_view name) {
  const auto n = lower(name);
  if (n == "normal" || n == "normalsample") return Fill::NormalSample;
  if (n == "permute" || n == "permutation") return Fill::Permute;
  throw ConfigError("unknown occlusion '" + std::string(name) + "' (expected normal or permute)");
}

Series occlude(const Series& x, const Mask& mask, Occlusion method, Rng& rng, Fill fill) {
  if (mask.size() != x.size()) throw ShapeMismatch("occlusion mask does not match the sample shape");
  Series out = x;
  std::vector<std::size_t> positions;
  if (method == Occlusion::RandomBaseline) {
    const std::size_t n = count(mask);
    std::vector<std::size_t> pool(x.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i + std::uniform_int_distribution<std::size_t>(0, pool.size() - 1 - i)(rng);
      std::swap(pool[i], pool[j]);
    }
    positions.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(positions.begin(), positions.end());
  } else {
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) positions.push_back(i);
    fill = method == Occlusion::NormalSample ? Fill::NormalSample : Fill::Permute;
  }
  if (!positions.empty()) fill_masked(out.values, positions, fill, rng);
  return out;
}

double s_e(double original, double occluded, double expectancy) {
  const double gap = original - expectancy;
  if (std::abs(gap) <= 1e-9) throw DegenerateReference("score equals the expectancy; normalised drop undefined");
  return 1.0 - (occluded - expectancy) / gap;
}

double auc_se(const std::vector<CurvePoint>& points) {
  if (points.empty()) return 0.0;
  std::vector<CurvePoint> sorted = points;
  std::sort(sorted.begin(), sorted.end(), [](const CurvePoint& a, const CurvePoint& b) {
    return a.n_r < b.n_r || (a.n_r == b.n_r && a.q > b.q);
  });
  const auto q_min = std::min_element(points.begin(), points.end(),
                                      [](const CurvePoint& a, const CurvePoint& b) { return a.q < b.q; });
  double area = 0.0, px = 0.0, py = 0.0;
  auto step = [&](double x, double y) {
    area += 0.5 * (x - px) * (y + py);
    px = x;
    py = y;
  };
  for (const auto& p : sorted) step(p.n_r, p.s_e);
  step(1.0, q_min->s_e);
  return area;
}

double information_ratio(const std::vector<std::vector<CurvePoint>>& curves) {
  double sum = 0.0;
  std::size_t pairs = 0;
  for (const auto& c : curves)
    for (std::size_t i = 0; i + 1 < c.size(); ++i) {
      const double dtic = c[i + 1].tic - c[i].tic;
      if (std::abs(dtic) < 1e-6) continue;
      sum += (c[i + 1].s_e - c[i].s_e) / dtic;
      ++pairs;
    }
  if (pairs == 0) throw NoValidPairs("no quantile pair with a TIC change above 1e-6");
  return sum / static_cast<double>(pairs);
}

double hmi(const RelevanceMap& relevance, const ExpertMask& expert, double eps) {
  if (expert.size() != relevance.size()) throw ShapeMismatch("expert weights do not match the relevance shape");
  double weighted = 0.0, total = 0.0;
  std::size_t n_pos = 0, n_expert = 0;
  for (std::size_t i = 0; i < relevance.size(); ++i) {
    if (expert[i] > 1) throw ShapeMismatch("expert weights must be binary");
    n_expert += expert[i];
    const double r = relevance.values[i];
    if (r <= 0.0) continue;
    ++n_pos;
    total += r;
    weighted += expert[i] * r;
  }
  if (n_pos == 0) throw NoPositiveRelevance("no positive relevance; HMI undefined");
  const double raw = weighted / (total + eps);
  const double delta = std::abs(static_cast<double>(n_pos) - static_cast<double>(n_expert));
  const double gamma = std::min(1.0, delta / static_cast<double>(n_pos));
  return raw * (1.0 - gamma);
}

SampleCurve evaluate_sample(const Scorer& scorer, const Series& x, const RelevanceMap& relevance,
                            const SampleEvaluationInput& input, const QuantileSet& quantiles, Fill fill,
                            std::uint64_t seed, bool random_baseline, double eps) {
  quantiles.validate();
  if (relevance.channels != x.channels || relevance.steps != x.steps)
    throw ShapeMismatch("relevance map does not match the sample shape");
  SampleCurve c;
  c.sample = input.sample;
  c.target = input.target;
  c.expectancy = input.expectancy;
  c.n_positive = positive_values(relevance).size();
  if (c.n_positive == 0) throw NoPositiveRelevance("sample " + std::to_string(input.sample) + " has no positive relevance");
  c.original_score = scorer.score_batch(x.span(), 1)(0, input.target);
  s_e(c.original_score, c.original_score, c.expectancy);  // degenerate check

  const auto b = build_occlusions(x, relevance, input.sample, quantiles, fill, seed, random_baseline, eps);
  const Logits y = scorer.score_batch(b.inputs, b.n_inputs);
  const std::size_t nq = quantiles.values.size();
  const double total = static_cast<double>(x.size());
  for (std::size_t i = 0; i < nq; ++i) {
    CurvePoint p{quantiles.values[i], b.mask_sizes[i], static_cast<double>(b.mask_sizes[i]) / total, b.tics[i], 0.0,
                 y(i, input.target)};
    p.s_e = s_e(c.original_score, p.occluded_score, c.expectancy);
    c.points.push_back(p);
    if (random_baseline) {
      CurvePoint r = p;
      r.tic = 0.0;
      r.occluded_score = y(nq + i, input.target);
      r.s_e = s_e(c.original_score, r.occluded_score, c.expectancy);
      c.random_points.push_back(r);
    }
  }
  return c;
}

void EvaluationConfig::validate() const {
  quantiles.validate();
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
}

json EvaluationConfig::to_json() const {
  return json{{"quantiles", quantiles.values},
              {"occlusion", fill_name(fill)},
              {"target_policy", target_policy_name(target)},
              {"correct_only", correct_only},
              {"expectancy", expectancy == ExpectancyMode::PerClass ? "per_class" : "global"},
              {"random_baseline", random_baseline},
              {"auc_mode", auc_mode == AucMode::MeanCurve ? "mean_curve" : "per_sample_mean"},
              {"epsilon", epsilon},
              {"min_samples", min_samples},
              {"seed", seed}};
}

EvaluationConfig parse_evaluation_config(const json& j, EvaluationConfig base) {
  if (!j.is_object()) throw ConfigError("evaluation config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "quantiles") base.quantiles.values = value.get<std::vector<double>>();
      else if (key == "occlusion") base.fill = parse_fill(value.get<std::string>());
      else if (key == "target_policy") base.target = parse_target_policy(value.get<std::string>());
      else if (key == "correct_only") base.correct_only = value.get<bool>();
      else if (key == "expectancy") {
        const auto v = lower(value.get<std::string>());
        if (v == "perclass") base.expectancy = ExpectancyMode::PerClass;
        else if (v == "global") base.expectancy = ExpectancyMode::Global;
        else throw ConfigError("expectancy must be per_class or global");
      } else if (key == "random_baseline") base.random_baseline = value.get<bool>();
      else if (key == "auc_mode") {
        const auto v = lower(value.get<std::string>());
        if (v == "meancurve") base.auc_mode = AucMode::MeanCurve;
        else if (v == "persamplemean") base.auc_mode = AucMode::PerSampleMean;
        else throw ConfigError("auc_mode must be mean_curve or per_sample_mean");
      } else if (key == "epsilon") base.epsilon = value.get<double>();
      else if (key == "min_samples") base.min_samples = value.get<std::size_t>();
      else if (key == "seed") base.seed = value.get<std::uint64_t>();
      else if (key == "workers") base.workers = value.get<std::size_t>();
      else throw ConfigError("unknown evaluation config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("evaluation config: ") + e.what());
  }
  base.validate();
  return base;
}

namespace {

enum class Status { Evaluated, Misclassified, NoPositive, Degenerate };

struct SampleResult {
  Status status = Status::Evaluated;
  bool correct = false;
  std::vector<std::uint8_t> correct_at_q;
  std::vector<double> n_r_at_q;
  SampleCurve curve;
  std::optional<double> hmi;
};

}  // namespace

MethodReport evaluate_method(const Scorer& scorer, const Dataset& data, const std::vector<std::size_t>& split,
                             const RelevanceContainer& relevance, const Expectancy& expectancy,
                             const EvaluationConfig& config) {
  config.validate();
  check_compatible(relevance, data);
  const auto& meta = scorer.info();
  if (meta.channels != data.channels || meta.steps != data.steps || meta.n_classes != data.n_classes())
    throw ShapeMismatch("scorer and dataset disagree on shape or class count");
  if (expectancy.per_class.size() != meta.n_classes) throw ShapeMismatch("expectancy has the wrong class count");

  MethodReport report;
  report.method = relevance.method;
  report.scorer_id = meta.id;
  report.config = config;
  report.n_split = split.size();

  std::vector<std::uint8_t> is_covered(data.size(), 0);
  for (auto i : relevance.covered)
    if (i < data.size()) is_covered[i] = 1;
  std::vector<std::size_t> samples;
  for (auto i : split) {
    if (i >= data.size()) throw ShapeMismatch("split index " + std::to_string(i) + " out of range");
    if (is_covered[i]) samples.push_back(i);
  }
  report.n_covered = samples.size();

  const std::size_t nq = config.quantiles.values.size();
  const double total = static_cast<double>(data.sample_size());
  std::vector<SampleResult> results(samples.size());
  std::size_t workers = config.workers == 0 ? default_workers() : config.workers;
  if (meta.max_concurrency > 0) workers = std::min(workers, meta.max_concurrency);

  parallel_for(samples.size(), workers, [&](std::size_t k) {
    const std::size_t i = samples[k];
    SampleResult& res = results[k];
    const Series x = data.sample(i);
    const RelevanceMap r = relevance.map(i);
    const Logits orig = scorer.score_batch(x.span(), 1);
    const std::size_t label = data.labels[i];
    const std::size_t pred = orig.argmax(0);
    res.correct = pred == label;
    const std::size_t target = config.target == TargetPolicy::TrueClass ? label : pred;
    const double e = expectancy(target);
    const double s_orig = orig(0, target);

    if (config.correct_only && !res.correct) res.status = Status::Misclassified;
    const std::size_t n_pos = positive_values(r).size();
    if (n_pos == 0) {
      if (res.status == Status::Evaluated) res.status = Status::NoPositive;
      res.correct_at_q.assign(nq, static_cast<std::uint8_t>(res.correct));
      res.n_r_at_q.assign(nq, 0.0);
      return;
    }
    if (res.status == Status::Evaluated && std::abs(s_orig - e) <= 1e-9) res.status = Status::Degenerate;
    const bool evaluate = res.status == Status::Evaluated;
    const bool with_random = evaluate && config.random_baseline;

    const auto b = build_occlusions(x, r, i, config.quantiles, config.fill, config.seed, with_random, config.epsilon);
    const Logits y = scorer.score_batch(b.inputs, b.n_inputs);
    for (std::size_t q = 0; q < nq; ++q) {
      res.correct_at_q.push_back(static_cast<std::uint8_t>(y.argmax(q) == label));
      res.n_r_at_q.push_back(static_cast<double>(b.mask_sizes[q]) / total);
    }
    if (!evaluate) return;

    SampleCurve& c = res.curve;
    c.sample = i;
    c.target = target;
    c.n_positive = n_pos;
    c.original_score = s_orig;
    c.expectancy = e;
    for (std::size_t q = 0; q < nq; ++q) {
      CurvePoint p{config.quantiles.values[q], b.mask_sizes[q], res.n_r_at_q[q], b.tics[q], 0.0, y(q, target)};
      p.s_e = s_e(s_orig, p.occluded_score, e);
      c.points.push_back(p);
      if (with_random) {
        CurvePoint rp = p;
        rp.tic = 0.0;
        rp.occluded_score = y(nq + q, target);
        rp.s_e = s_e(s_orig, rp.occluded_score, e);
        c.random_points.push_back(rp);
      }
    }
    if (data.has_expert_weights()) res.hmi = hmi(r, data.expert_mask(i), config.epsilon);
  });

  // Aggregation in sample order keeps results independent of scheduling.
  std::vector<MeanPoint> curve(nq), random_curve(nq);
  for (std::size_t q = 0; q < nq; ++q) curve[q].q = random_curve[q].q = config.quantiles.values[q];
  std::size_t n_correct = 0;
  double hmi_sum = 0.0;
  std::size_t hmi_n = 0;
  std::vector<std::vector<CurvePoint>> sample_curves;
  double per_sample_auc = 0.0;
  for (auto& res : results) {
    n_correct += res.correct;
    for (std::size_t q = 0; q < nq; ++q) {
      curve[q].accuracy += res.correct_at_q[q];
      curve[q].accuracy_n_r += res.n_r_at_q[q];
    }
    switch (res.status) {
      case Status::Misclassified:
        ++report.n_misclassified;
        continue;
      case Status::NoPositive:
        ++report.n_no_positive;
        continue;
      case Status::Degenerate:
        ++report.n_degenerate;
        continue;
      case Status::Evaluated:
        break;
    }
    ++report.n_evaluated;
    for (std::size_t q = 0; q < nq; ++q) {
      curve[q].n_r += res.curve.points[q].n_r;
      curve[q].tic += res.curve.points[q].tic;
      curve[q].s_e += res.curve.points[q].s_e;
      if (config.random_baseline) {
        random_curve[q].n_r += res.curve.random_points[q].n_r;
        random_curve[q].s_e += res.curve.random_points[q].s_e;
      }
    }
    per_sample_auc += auc_se(res.curve.points);
    sample_curves.push_back(res.curve.points);
    if (res.hmi) {
      hmi_sum += *res.hmi;
      ++hmi_n;
    }
    report.samples.push_back(std::move(res.curve));
  }

  const double n_cov = static_cast<double>(std::max<std::size_t>(report.n_covered, 1));
  const double n_eval = static_cast<double>(std::max<std::size_t>(report.n_evaluated, 1));
  report.original_accuracy = static_cast<double>(n_correct) / n_cov;
  for (std::size_t q = 0; q < nq; ++q) {
    curve[q].accuracy /= n_cov;
    curve[q].accuracy_n_r /= n_cov;
    curve[q].n_r /= n_eval;
    curve[q].tic /= n_eval;
    curve[q].s_e /= n_eval;
    random_curve[q].n_r /= n_eval;
    random_curve[q].s_e /= n_eval;
  }
  report.curve = curve;
  report.insufficient_samples = report.n_evaluated < config.min_samples;
  if (report.n_evaluated > 0) {
    report.auc_mean_curve = auc_se(as_curve(curve));
    report.auc_per_sample_mean = per_sample_auc / n_eval;
    try {
      report.information_ratio = information_ratio(sample_curves);
    } catch (const NoValidPairs&) {
    }
    if (hmi_n > 0) report.hmi = hmi_sum / static_cast<double>(hmi_n);
    if (config.random_baseline) {
      report.random_curve = random_curve;
      report.random_auc = auc_se(as_curve(random_curve));
    }
  }
  report.auc = config.auc_mode == AucMode::MeanCurve ? report.auc_mean_curve : report.auc_per_sample_mean;
  return report;
}

json MethodReport::to_json(bool include_samples) const {
  json curve_j = json::array();
  for (const auto& p : curve) curve_j.push_back(point_json(p));
  json j{{"method", method},
         {"scorer_id", scorer_id},
         {"config", config.to_json()},
         {"counts",
          {{"split", n_split},
           {"covered", n_covered},
           {"misclassified", n_misclassified},
           {"no_positive_relevance", n_no_positive},
           {"degenerate_reference", n_degenerate},
           {"evaluated", n_evaluated}}},
         {"insufficient_samples", insufficient_samples},
         {"original_accuracy", original_accuracy},
         {"curve", curve_j},
         {"auc", auc},
         {"auc_mean_curve", auc_mean_curve},
         {"auc_per_sample_mean", auc_per_sample_mean},
         {"information_ratio", information_ratio ? json(*information_ratio) : json(nullptr)},
         {"hmi", hmi ? json(*hmi) : json(nullptr)}};
  if (random_curve) {
    json rc = json::array();
    for (const auto& p : *random_curve) rc.push_back(json{{"q", p.q}, {"n_r", p.n_r}, {"s_e", p.s_e}});
    j["random_baseline"] = {{"curve", rc}, {"auc", *random_auc}};
  } else {
    j["random_baseline"] = nullptr;
  }
  if (include_samples) {
    json s = json::array();
    for (const auto& c : samples) {
      json pts = json::array();
      for (const auto& p : c.points)
        pts.push_back({{"q", p.q}, {"n_mask", p.n_mask}, {"n_r", p.n_r}, {"tic", p.tic}, {"s_e", p.s_e},
                       {"occluded_score", p.occluded_score}});
      s.push_back({{"sample", c.sample},
                   {"target", c.target},
                   {"n_positive", c.n_positive},
                   {"original_score", c.original_score},
                   {"expectancy", c.expectancy},
                   {"points", pts}});
    }
    j["samples"] = s;
  }
  return j;
}

MethodReport MethodReport::from_json(const json& j) {
  try {
    MethodReport r;
    r.method = j.at("method").get<std::string>();
    r.scorer_id = j.value("scorer_id", std::string{});
    r.config = parse_evaluation_config(j.at("config"));
    const auto& c = j.at("counts");
    r.n_split = c.at("split").get<std::size_t>();
    r.n_covered = c.at("covered").get<std::size_t>();
    r.n_misclassified = c.at("misclassified").get<std::size_t>();
    r.n_no_positive = c.at("no_positive_relevance").get<std::size_t>();
    r.n_degenerate = c.at("degenerate_reference").get<std::size_t>();
    r.n_evaluated = c.at("evaluated").get<std::size_t>();
    r.insufficient_samples = j.at("insufficient_samples").get<bool>();
    r.original_accuracy = j.at("original_accuracy").get<double>();
    for (const auto& p : j.at("curve")) r.curve.push_back(point_from_json(p));
    r.auc = j.at("auc").get<double>();
    r.auc_mean_curve = j.at("auc_mean_curve").get<double>();
    r.auc_per_sample_mean = j.at("auc_per_sample_mean").get<double>();
    if (!j.at("information_ratio").is_null()) r.information_ratio = j.at("information_ratio").get<double>();
    if (!j.at("hmi").is_null()) r.hmi = j.at("hmi").get<double>();
    if (j.contains("random_baseline") && !j.at("random_baseline").is_null()) {
      std::vector<MeanPoint> rc;
      for (const auto& p : j.at("random_baseline").at("curve")) rc.push_back(point_from_json(p));
      r.random_curve = rc;
      r.random_auc = j.at("random_baseline").at("auc").get<double>();
    }
    return r;
  } catch (const json::exception& e) {
    throw IoFailure(std::string("malformed method report: ") + e.what());
  }
}

}  // namespace itb
