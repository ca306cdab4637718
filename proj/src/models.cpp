#include "itb/models.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "itb/errors.hpp"

namespace itb {

using json = nlohmann::json;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

// Offsets of the parameter blocks inside the flat vector.
struct Layout {
  std::size_t in = 0;      // features per hidden unit (or per logit for linear)
  std::size_t hidden = 0;  // 0 for linear
  std::size_t positions = 1;
  std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0, total = 0;
};

Layout layout(const ModelShape& s) {
  Layout l;
  const std::size_t d = s.channels * s.steps;
  const std::size_t k = s.n_classes;
  switch (s.kind) {
    case ModelKind::LinearSoftmax:
      l.in = d;
      l.w2 = 0;
      l.b2 = k * d;
      l.total = l.b2 + k;
      return l;
    case ModelKind::Mlp:
      l.in = d;
      break;
    case ModelKind::WindowMlp:
      l.in = s.channels * s.window;
      l.positions = s.steps - s.window + 1;
      break;
  }
  l.hidden = s.hidden;
  l.w1 = 0;
  l.b1 = l.hidden * l.in;
  l.w2 = l.b1 + l.hidden;
  l.b2 = l.w2 + k * l.hidden;
  l.total = l.b2 + k;
  return l;
}

void check_shape(const ModelShape& s) {
  if (s.channels == 0 || s.steps == 0) throw ConfigError("model: channels and steps must be positive");
  if (s.n_classes < 2) throw ConfigError("model: n_classes must be at least 2");
  if (s.kind != ModelKind::LinearSoftmax && s.hidden == 0) throw ConfigError("model: hidden must be positive");
  if (s.kind == ModelKind::WindowMlp && (s.window == 0 || s.window > s.steps))
    throw ConfigError("model: window must lie in [1, steps]");
}

// Sliding windows of a channels x steps sample: row p holds x[m, p + k] at
// column m * window + k.
RowMat im2col(std::span<const double> x, const ModelShape& s) {
  const std::size_t positions = s.steps - s.window + 1;
  RowMat cols(positions, s.channels * s.window);
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t m = 0; m < s.channels; ++m)
      for (std::size_t k = 0; k < s.window; ++k) cols(p, m * s.window + k) = x[m * s.steps + p + k];
  return cols;
}

}  // namespace

std::size_t Logits::argmax(std::size_t b) const {
  const auto r = row(b);
  return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
}

Logits Scorer::score_batch(std::span<const double> inputs, std::size_t batch) const {
  const auto& meta = info();
  if (inputs.size() != batch * meta.sample_size())
    throw ShapeMismatch("score_batch: expected " + std::to_string(batch) + " x " + std::to_string(meta.channels) +
                        " x " + std::to_string(meta.steps) + " values, got " + std::to_string(inputs.size()));
  if (batch == 0) return Logits{0, meta.n_classes, {}};
  Logits out = do_score(inputs, batch);
  if (out.batch != batch || out.classes != meta.n_classes || out.values.size() != batch * meta.n_classes)
    throw ShapeMismatch("scorer returned logits of the wrong shape");
  return out;
}

double Scorer::score(const Series& x, std::size_t cls) const { return score_batch(x.span(), 1)(0, cls); }

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double top = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (auto& v : p) sum += (v = std::exp(v - top));
  for (auto& v : p) v /= sum;
  return p;
}

std::string_view model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::LinearSoftmax:
      return "LinearSoftmax";
    case ModelKind::Mlp:
      return "Mlp";
    case ModelKind::WindowMlp:
      return "WindowMlp";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "linearsoftmax" || lower == "linear") return ModelKind::LinearSoftmax;
  if (lower == "mlp") return ModelKind::Mlp;
  if (lower == "windowmlp" || lower == "window_mlp" || lower == "window-mlp") return ModelKind::WindowMlp;
  throw ConfigError("unknown model kind '" + std::string(name) + "' (expected LinearSoftmax, Mlp or WindowMlp)");
}

std::size_t ModelShape::n_params() const { return layout(*this).total; }

BuiltinModel::BuiltinModel(ModelShape shape, std::vector<double> params, std::string id)
    : shape_(shape), params_(std::move(params)) {
  check_shape(shape_);
  if (params_.size() != shape_.n_params())
    throw ShapeMismatch("model has " + std::to_string(params_.size()) + " parameters, expected " +
                        std::to_string(shape_.n_params()));
  info_.n_classes = shape_.n_classes;
  info_.channels = shape_.channels;
  info_.steps = shape_.steps;
  info_.max_concurrency = 0;
  if (id.empty()) {
    std::vector<std::uint8_t> bytes(params_.size() * sizeof(double));
    std::memcpy(bytes.data(), params_.data(), bytes.size());
    std::ostringstream os;
    os << "builtin:" << model_kind_name(shape_.kind) << ":" << std::hex << fnv1a64(bytes);
    id = os.str();
  }
  info_.id = std::move(id);
}

BuiltinModel BuiltinModel::initialise(const ModelShape& shape, Rng& rng) {
  check_shape(shape);
  const Layout l = layout(shape);
  std::vector<double> p(l.total);
  auto fill = [&](std::size_t from, std::size_t to, double fan_in) {
    const double r = 1.0 / std::sqrt(fan_in);
    for (std::size_t i = from; i < to; ++i) p[i] = uniform(rng, -r, r);
  };
  if (shape.kind == ModelKind::LinearSoftmax) {
    fill(0, l.total, static_cast<double>(l.in));
  } else {
    fill(l.w1, l.w2, static_cast<double>(l.in));
    fill(l.w2, l.total, static_cast<double>(l.hidden));
  }
  return BuiltinModel(shape, std::move(p));
}

std::vector<double> BuiltinModel::forward(std::span<const double> x) const {
  const Layout l = layout(shape_);
  const auto k = static_cast<Eigen::Index>(shape_.n_classes);
  const auto in = static_cast<Eigen::Index>(l.in);
  const auto h = static_cast<Eigen::Index>(l.hidden);
  std::vector<double> out(shape_.n_classes);
  VecMap y(out.data(), k);
  const double* p = params_.data();

  if (shape_.kind == ModelKind::LinearSoftmax) {
    y = CMatMap(p + l.w2, k, in) * CVecMap(x.data(), in) + CVecMap(p + l.b2, k);
    return out;
  }
  Eigen::VectorXd g;
  if (shape_.kind == ModelKind::Mlp) {
    g = (CMatMap(p + l.w1, h, in) * CVecMap(x.data(), in) + CVecMap(p + l.b1, h)).array().tanh();
  } else {
    const RowMat cols = im2col(x, shape_);
    RowMat z = cols * CMatMap(p + l.w1, h, in).transpose();
    z.rowwise() += CVecMap(p + l.b1, h).transpose();
    g = z.array().tanh().colwise().mean().transpose();
  }
  y = CMatMap(p + l.w2, k, h) * g + CVecMap(p + l.b2, k);
  return out;
}

void BuiltinModel::backward(std::span<const double> x, std::span<const double> dlogits, std::span<double> grad_params,
                            std::span<double> grad_x) const {
  const Layout l = layout(shape_);
  const auto k = static_cast<Eigen::Index>(shape_.n_classes);
  const auto in = static_cast<Eigen::Index>(l.in);
  const auto h = static_cast<Eigen::Index>(l.hidden);
  const double* p = params_.data();
  const CVecMap dl(dlogits.data(), k);
  const bool want_p = !grad_params.empty();
  const bool want_x = !grad_x.empty();
  double* gp = grad_params.data();

  if (shape_.kind == ModelKind::LinearSoftmax) {
    if (want_p) {
      MatMap(gp + l.w2, k, in) += dl * CVecMap(x.data(), in).transpose();
      VecMap(gp + l.b2, k) += dl;
    }
    if (want_x) VecMap(grad_x.data(), in) += CMatMap(p + l.w2, k, in).transpose() * dl;
    return;
  }

  const CMatMap w1(p + l.w1, h, in);
  const CMatMap w2(p + l.w2, k, h);
  const Eigen::VectorXd dg = w2.transpose() * dl;

  if (shape_.kind == ModelKind::Mlp) {
    const CVecMap xv(x.data(), in);
    const Eigen::VectorXd a = (w1 * xv + CVecMap(p + l.b1, h)).array().tanh();
    const Eigen::VectorXd dz = dg.array() * (1.0 - a.array().square());
    if (want_p) {
      MatMap(gp + l.w1, h, in) += dz * xv.transpose();
      VecMap(gp + l.b1, h) += dz;
      MatMap(gp + l.w2, k, h) += dl * a.transpose();
      VecMap(gp + l.b2, k) += dl;
    }
    if (want_x) VecMap(grad_x.data(), in) += w1.transpose() * dz;
    return;
  }

  const RowMat cols = im2col(x, shape_);
  RowMat z = cols * w1.transpose();
  z.rowwise() += CVecMap(p + l.b1, h).transpose();
  const RowMat a = z.array().tanh();
  const auto positions = static_cast<double>(l.positions);
  // dZ[p, j] = dg[j] / P * (1 - a[p, j]^2)
  RowMat dz = (1.0 - a.array().square()).matrix();
  dz.array().rowwise() *= (dg / positions).transpose().array();
  if (want_p) {
    MatMap(gp + l.w1, h, in) += dz.transpose() * cols;
    VecMap(gp + l.b1, h) += dz.colwise().sum().transpose();
    MatMap(gp + l.w2, k, h) += dl * a.colwise().mean();
    VecMap(gp + l.b2, k) += dl;
  }
  if (want_x) {
    const RowMat dcols = dz * w1;
    for (std::size_t q = 0; q < l.positions; ++q)
      for (std::size_t m = 0; m < shape_.channels; ++m)
        for (std::size_t j = 0; j < shape_.window; ++j)
          grad_x[m * shape_.steps + q + j] += dcols(static_cast<Eigen::Index>(q),
                                                    static_cast<Eigen::Index>(m * shape_.window + j));
  }
}

std::vector<double> BuiltinModel::gradient(std::span<const double> x, std::size_t cls) const {
  if (x.size() != info_.sample_size()) throw ShapeMismatch("gradient: input has the wrong size");
  if (cls >= shape_.n_classes) throw ShapeMismatch("gradient: class index out of range");
  std::vector<double> dl(shape_.n_classes, 0.0);
  dl[cls] = 1.0;
  std::vector<double> g(x.size(), 0.0);
  backward(x, dl, {}, g);
  return g;
}

void BuiltinModel::score_chain(std::span<const double> start, std::span<const double> target,
                               std::span<const std::vector<std::size_t>> changes, std::size_t cls,
                               std::span<double> out) const {
  const std::size_t d = info_.sample_size();
  if (start.size() != d || target.size() != d) throw ShapeMismatch("score_chain: input has the wrong size");
  if (cls >= shape_.n_classes) throw ShapeMismatch("score_chain: class index out of range");
  if (out.size() != changes.size()) throw ShapeMismatch("score_chain: output span has the wrong size");
  const Layout l = layout(shape_);
  const double* p = params_.data();
  const double* readout = p + l.w2 + cls * l.hidden;
  const double bias = p[l.b2 + cls];
  std::vector<double> x(start.begin(), start.end());

  if (shape_.kind == ModelKind::LinearSoftmax) {
    const double* w = p + l.w2 + cls * l.in;
    double s = bias;
    for (std::size_t i = 0; i < d; ++i) s += w[i] * x[i];
    for (std::size_t k = 0; k < changes.size(); ++k) {
      for (auto e : changes[k]) {
        s += w[e] * (target[e] - x[e]);
        x[e] = target[e];
      }
      out[k] = s;
    }
    return;
  }

  const std::size_t h = l.hidden;
  if (shape_.kind == ModelKind::Mlp) {
    // Hidden pre-activations are updated column by column.
    std::vector<double> z(p + l.b1, p + l.b1 + h);
    for (std::size_t j = 0; j < h; ++j)
      for (std::size_t i = 0; i < d; ++i) z[j] += p[l.w1 + j * l.in + i] * x[i];
    for (std::size_t k = 0; k < changes.size(); ++k) {
      for (auto e : changes[k]) {
        const double delta = target[e] - x[e];
        for (std::size_t j = 0; j < h; ++j) z[j] += p[l.w1 + j * l.in + e] * delta;
        x[e] = target[e];
      }
      double s = bias;
      for (std::size_t j = 0; j < h; ++j) s += readout[j] * std::tanh(z[j]);
      out[k] = s;
    }
    return;
  }

  // WindowMlp: element (m, t) only enters the windows starting at
  // max(0, t - w + 1) .. min(t, P - 1); pooled sums are patched in place.
  const std::size_t w = shape_.window, steps = shape_.steps, positions = l.positions;
  const RowMat cols = im2col(x, shape_);
  RowMat z = cols * CMatMap(p + l.w1, static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(l.in)).transpose();
  z.rowwise() += CVecMap(p + l.b1, static_cast<Eigen::Index>(h)).transpose();
  RowMat a = z.array().tanh();
  Eigen::VectorXd pooled = a.colwise().sum().transpose();
  std::vector<std::uint8_t> touched(positions, 0);
  std::vector<std::size_t> dirty;
  for (std::size_t k = 0; k < changes.size(); ++k) {
    dirty.clear();
    for (auto e : changes[k]) {
      const std::size_t m = e / steps, t = e % steps;
      const double delta = target[e] - x[e];
      x[e] = target[e];
      if (delta == 0.0) continue;
      const std::size_t first = t + 1 >= w ? t + 1 - w : 0;
      const std::size_t last = std::min(t, positions - 1);
      for (std::size_t q = first; q <= last; ++q) {
        const std::size_t col = m * w + (t - q);
        for (std::size_t j = 0; j < h; ++j)
          z(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(j)) += p[l.w1 + j * l.in + col] * delta;
        if (!touched[q]) {
          touched[q] = 1;
          dirty.push_back(q);
        }
      }
    }
    for (auto q : dirty) {
      touched[q] = 0;
      for (std::size_t j = 0; j < h; ++j) {
        const auto qi = static_cast<Eigen::Index>(q), ji = static_cast<Eigen::Index>(j);
        const double fresh = std::tanh(z(qi, ji));
        pooled(ji) += fresh - a(qi, ji);
        a(qi, ji) = fresh;
      }
    }
    double s = bias;
    for (std::size_t j = 0; j < h; ++j) s += readout[j] * pooled(static_cast<Eigen::Index>(j)) / static_cast<double>(positions);
    out[k] = s;
  }
}

Logits BuiltinModel::do_score(std::span<const double> inputs, std::size_t batch) const {
  Logits out{batch, shape_.n_classes, std::vector<double>(batch * shape_.n_classes)};
  const std::size_t d = info_.sample_size();
  for (std::size_t b = 0; b < batch; ++b) {
    const auto y = forward(inputs.subspan(b * d, d));
    std::copy(y.begin(), y.end(), out.values.begin() + static_cast<std::ptrdiff_t>(b * shape_.n_classes));
  }
  return out;
}

json BuiltinModel::to_json() const {
  return json{{"format_version", kFormatVersion},
              {"kind", "model"},
              {"model_kind", model_kind_name(shape_.kind)},
              {"channels", shape_.channels},
              {"steps", shape_.steps},
              {"n_classes", shape_.n_classes},
              {"hidden", shape_.hidden},
              {"window", shape_.window},
              {"id", info_.id},
              {"params", params_}};
}

BuiltinModel BuiltinModel::from_json(const json& j) {
  const int version = j.value("format_version", -1);
  if (version != kFormatVersion)
    throw FormatVersionMismatch("model format_version " + std::to_string(version) + ", this build reads " +
                                std::to_string(kFormatVersion));
  if (j.value("kind", std::string{}) != "model") throw ShapeMismatch("not a model file");
  try {
    ModelShape s;
    s.kind = parse_model_kind(j.at("model_kind").get<std::string>());
    s.channels = j.at("channels").get<std::size_t>();
    s.steps = j.at("steps").get<std::size_t>();
    s.n_classes = j.at("n_classes").get<std::size_t>();
    s.hidden = j.at("hidden").get<std::size_t>();
    s.window = j.at("window").get<std::size_t>();
    return BuiltinModel(s, j.at("params").get<std::vector<double>>(), j.value("id", std::string{}));
  } catch (const json::exception& e) {
    throw IoFailure(std::string("malformed model file: ") + e.what());
  }
}

void BuiltinModel::save(const std::filesystem::path& path, const json& extra) const {
  json j = to_json();
  for (const auto& [key, value] : extra.items()) j[key] = value;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_text(path, canonical_json(j));
}

BuiltinModel BuiltinModel::load(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw IoFailure(path.string() + ": " + e.what());
  }
  return from_json(j);
}

Logits score_samples(const Scorer& scorer, const Dataset& data, const std::vector<std::size_t>& indices,
                     std::size_t chunk) {
  const auto& meta = scorer.info();
  if (meta.channels != data.channels || meta.steps != data.steps)
    throw ShapeMismatch("scorer expects " + std::to_string(meta.channels) + " x " + std::to_string(meta.steps) +
                        " samples, dataset holds " + std::to_string(data.channels) + " x " +
                        std::to_string(data.steps));
  chunk = std::max<std::size_t>(chunk, 1);
  const std::size_t d = data.sample_size();
  Logits out{indices.size(), meta.n_classes, {}};
  out.values.reserve(indices.size() * meta.n_classes);
  std::vector<double> buf;
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const std::size_t n = std::min(chunk, indices.size() - start);
    buf.resize(n * d);
    for (std::size_t b = 0; b < n; ++b) {
      const auto v = data.sample_values(indices[start + b]);
      std::copy(v.begin(), v.end(), buf.begin() + static_cast<std::ptrdiff_t>(b * d));
    }
    const Logits part = scorer.score_batch(buf, n);
    out.values.insert(out.values.end(), part.values.begin(), part.values.end());
  }
  return out;
}

double accuracy(const Logits& logits, const Dataset& data, const std::vector<std::size_t>& indices) {
  if (indices.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t b = 0; b < indices.size(); ++b) hits += logits.argmax(b) == data.labels[indices[b]];
  return static_cast<double>(hits) / static_cast<double>(indices.size());
}

double cross_entropy(const Logits& logits, const Dataset& data, const std::vector<std::size_t>& indices) {
  if (indices.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto r = logits.row(b);
    const double top = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (double v : r) sum += std::exp(v - top);
    total += top + std::log(sum) - r[data.labels[indices[b]]];
  }
  return total / static_cast<double>(indices.size());
}

Expectancy expectancy(const Logits& logits, ExpectancyMode mode, const std::vector<std::size_t>& targets) {
  if (logits.batch == 0) throw InsufficientSamples("expectancy needs a non-empty split");
  Expectancy e;
  e.mode = mode;
  if (mode == ExpectancyMode::PerClass) {
    e.per_class.assign(logits.classes, 0.0);
    for (std::size_t c = 0; c < logits.classes; ++c) {
      double sum = 0.0;
      for (std::size_t b = 0; b < logits.batch; ++b) sum += logits(b, c);
      e.per_class[c] = sum / static_cast<double>(logits.batch);
    }
    return e;
  }
  if (targets.size() != logits.batch) throw ShapeMismatch("global expectancy needs one target per sample");
  double sum = 0.0;
  for (std::size_t b = 0; b < logits.batch; ++b) sum += logits(b, targets[b]);
  e.per_class.assign(logits.classes, sum / static_cast<double>(logits.batch));
  return e;
}

Expectancy expectancy(const Scorer& scorer, const Dataset& data, const std::vector<std::size_t>& indices,
                      ExpectancyMode mode) {
  const Logits logits = score_samples(scorer, data, indices);
  std::vector<std::size_t> targets;
  if (mode == ExpectancyMode::Global)
    for (auto i : indices) targets.push_back(data.labels[i]);
  return expectancy(logits, mode, targets);
}

}  // namespace itb
