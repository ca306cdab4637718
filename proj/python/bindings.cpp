#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "itb/attractors.hpp"
#include "itb/attribution.hpp"
#include "itb/cli.hpp"
#include "itb/dataset_store.hpp"
#include "itb/errors.hpp"
#include "itb/evaluation.hpp"
#include "itb/models.hpp"

namespace py = pybind11;
using namespace itb;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;

template <typename T>
py::array_t<T> to_array(const std::vector<T>& v, std::vector<py::ssize_t> shape) {
  py::array_t<T> out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Series series_from(const F64& a) {
  if (a.ndim() != 2) throw ShapeMismatch("expected a (channels, steps) array");
  return Series(a.shape(0), a.shape(1), std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> series_to(const Series& s) {
  return to_array(s.values, {static_cast<py::ssize_t>(s.channels), static_cast<py::ssize_t>(s.steps)});
}

ExpertMask mask_from(const py::array& a) {
  auto m = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>::ensure(a);
  return ExpertMask(m.data(), m.data() + m.size());
}

// Scorer backed by a Python callable mapping (batch, channels, steps) float64
// to (batch, classes) logits.
class PyScorer final : public Scorer {
 public:
  PyScorer(py::function fn, std::size_t classes, std::size_t channels, std::size_t steps, std::string id)
      : fn_(std::move(fn)) {
    info_ = {classes, channels, steps, 1, id.empty() ? "python" : std::move(id)};
  }
  const ScorerInfo& info() const override { return info_; }

 protected:
  Logits do_score(std::span<const double> inputs, std::size_t batch) const override {
    py::gil_scoped_acquire gil;
    py::array_t<double> x({static_cast<py::ssize_t>(batch), static_cast<py::ssize_t>(info_.channels),
                           static_cast<py::ssize_t>(info_.steps)});
    std::copy(inputs.begin(), inputs.end(), x.mutable_data());
    const auto y = F64::ensure(fn_(x));
    if (!y || y.size() != static_cast<py::ssize_t>(batch * info_.n_classes))
      throw ShapeMismatch("python scorer must return (batch, n_classes) logits");
    return {batch, info_.n_classes, std::vector<double>(y.data(), y.data() + y.size())};
  }

 private:
  py::function fn_;
  ScorerInfo info_;
};

py::array_t<double> score(const Scorer& s, const F64& x) {
  const auto d = s.info().sample_size();
  if (d == 0 || x.size() % static_cast<py::ssize_t>(d) != 0) throw ShapeMismatch("input size is not a multiple of M*T");
  const std::size_t batch = x.size() / d;
  Logits l;
  {
    py::gil_scoped_release release;
    l = s.score_batch({x.data(), x.data() + x.size()}, batch);
  }
  return to_array(l.values, {static_cast<py::ssize_t>(batch), static_cast<py::ssize_t>(l.classes)});
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Core of the interpretability benchmark for time series classifiers";
  m.attr("__version__") = ITB_VERSION;
  m.attr("FORMAT_VERSION") = kFormatVersion;

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ShapeMismatch>(m, "ShapeMismatch", base.ptr());
  py::register_exception<IoFailure>(m, "IoFailure", base.ptr());
  py::register_exception<FormatVersionMismatch>(m, "FormatVersionMismatch", base.ptr());
  py::register_exception<ExternalScorerFailure>(m, "ExternalScorerFailure", base.ptr());
  py::register_exception<NoPositiveRelevance>(m, "NoPositiveRelevance", base.ptr());
  py::register_exception<DegenerateReference>(m, "DegenerateReference", base.ptr());

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("channels", [](const Dataset& d) { return d.channels; })
      .def_property_readonly("steps", [](const Dataset& d) { return d.steps; })
      .def_property_readonly("class_names", [](const Dataset& d) { return d.class_names; })
      .def_property_readonly("values",
                             [](const Dataset& d) {
                               return to_array(d.values, {static_cast<py::ssize_t>(d.size()),
                                                          static_cast<py::ssize_t>(d.channels),
                                                          static_cast<py::ssize_t>(d.steps)});
                             })
      .def_property_readonly("labels", [](const Dataset& d) { return to_array(d.labels, {static_cast<py::ssize_t>(d.size())}); })
      .def_property_readonly("expert_weights",
                             [](const Dataset& d) -> py::object {
                               if (!d.has_expert_weights()) return py::none();
                               return to_array(d.expert_weights, {static_cast<py::ssize_t>(d.size()),
                                                                  static_cast<py::ssize_t>(d.channels),
                                                                  static_cast<py::ssize_t>(d.steps)});
                             })
      .def_property_readonly("metadata_json", [](const Dataset& d) { return d.metadata.dump(); })
      .def("__len__", &Dataset::size)
      .def("__eq__", [](const Dataset& a, const Dataset& b) { return a == b; });

  m.def(
      "generate_dataset",
      [](const std::string& variant, std::size_t n_per_class, std::uint64_t seed, const std::string& config_json,
         std::size_t workers) {
        GenerationConfig base;
        base.variant = parse_variant(variant);
        base.n_per_class = n_per_class;
        base.seed = seed;
        base.workers = workers;
        const GenerationConfig cfg =
            parse_generation_config(nlohmann::json::parse(config_json.empty() ? "{}" : config_json), base);
        py::gil_scoped_release release;
        return generate_dataset(cfg);
      },
      py::arg("variant") = "sd1", py::arg("n_per_class") = 500, py::arg("seed") = 0, py::arg("config_json") = "",
      py::arg("workers") = 0);
  m.def("read_dataset", &read_dataset, py::arg("path"));
  m.def("write_dataset", &write_dataset, py::arg("dataset"), py::arg("path"));
  m.def("directory_checksum", &directory_checksum, py::arg("path"));

  py::class_<RelevanceContainer>(m, "RelevanceContainer")
      .def(py::init([](const std::string& method, const F32& relevance, std::vector<std::size_t> covered,
                       std::string scorer_id, std::string target_policy, std::uint64_t seed) {
             if (relevance.ndim() != 3) throw ShapeMismatch("relevance must be (N, M, T)");
             RelevanceContainer c;
             c.method = method;
             c.scorer_id = std::move(scorer_id);
             c.target_policy = std::move(target_policy);
             c.seed = seed;
             c.n = relevance.shape(0);
             c.channels = relevance.shape(1);
             c.steps = relevance.shape(2);
             c.covered = std::move(covered);
             c.relevance.assign(relevance.data(), relevance.data() + relevance.size());
             return c;
           }),
           py::arg("method"), py::arg("relevance"), py::arg("covered"), py::arg("scorer_id") = "external",
           py::arg("target_policy") = "true_class", py::arg("seed") = 0)
      .def_readonly("method", &RelevanceContainer::method)
      .def_readonly("scorer_id", &RelevanceContainer::scorer_id)
      .def_readonly("target_policy", &RelevanceContainer::target_policy)
      .def_readonly("seed", &RelevanceContainer::seed)
      .def_readonly("covered", &RelevanceContainer::covered)
      .def_property_readonly("relevance",
                             [](const RelevanceContainer& c) {
                               return to_array(c.relevance, {static_cast<py::ssize_t>(c.n),
                                                             static_cast<py::ssize_t>(c.channels),
                                                             static_cast<py::ssize_t>(c.steps)});
                             })
      .def("__eq__", [](const RelevanceContainer& a, const RelevanceContainer& b) { return a == b; });
  m.def("read_relevance", &read_relevance, py::arg("path"));
  m.def("write_relevance", &write_relevance, py::arg("container"), py::arg("path"));
  m.def("check_compatible", &check_compatible, py::arg("relevance"), py::arg("dataset"));

  py::class_<Scorer>(m, "Scorer")
      .def_property_readonly("n_classes", [](const Scorer& s) { return s.info().n_classes; })
      .def_property_readonly("channels", [](const Scorer& s) { return s.info().channels; })
      .def_property_readonly("steps", [](const Scorer& s) { return s.info().steps; })
      .def_property_readonly("id", [](const Scorer& s) { return s.info().id; })
      .def("score", &score, py::arg("x"), "Logits for a (batch, M, T) array.");
  py::class_<PyScorer, Scorer>(m, "PythonScorer")
      .def(py::init<py::function, std::size_t, std::size_t, std::size_t, std::string>(), py::arg("fn"),
           py::arg("n_classes"), py::arg("channels"), py::arg("steps"), py::arg("id") = "");
  py::class_<BuiltinModel, Scorer>(m, "BuiltinModel")
      .def_static("load", &BuiltinModel::load, py::arg("path"))
      .def_property_readonly("kind", [](const BuiltinModel& b) { return std::string(model_kind_name(b.shape().kind)); });

  m.def(
      "attribute",
      [](const Scorer& scorer, const Dataset& data, std::vector<std::size_t> indices, const std::string& method,
         const std::string& config_json, const std::string& target) {
        AttributionConfig base;
        base.method = parse_method(method);
        const auto cfg = parse_attribution_config(nlohmann::json::parse(config_json.empty() ? "{}" : config_json), base);
        const auto policy = parse_target_policy(target);
        py::gil_scoped_release release;
        return attribute_dataset(scorer, data, indices, policy, cfg);
      },
      py::arg("scorer"), py::arg("dataset"), py::arg("indices"), py::arg("method") = "shapley",
      py::arg("config_json") = "", py::arg("target") = "true_class");

  m.def(
      "positive_set", [](const F64& r, double q) { return positive_set(series_from(r), q); }, py::arg("relevance"),
      py::arg("q"));
  m.def(
      "tic", [](const F64& r, double q) { return tic(series_from(r), q); }, py::arg("relevance"), py::arg("q"));
  m.def(
      "hmi", [](const F64& r, const py::array& w) { return hmi(series_from(r), mask_from(w)); },
      py::arg("relevance"), py::arg("expert"));
  m.def("s_e", &s_e, py::arg("original"), py::arg("occluded"), py::arg("expectancy"));
  m.def(
      "occlude",
      [](const F64& x, const py::array& mask, const std::string& fill, bool random_positions, std::uint64_t seed) {
        const Fill f = parse_fill(fill);
        const Occlusion occ = random_positions      ? Occlusion::RandomBaseline
                              : f == Fill::Permute ? Occlusion::Permute
                                                   : Occlusion::NormalSample;
        Rng rng(seed);
        return series_to(occlude(series_from(x), mask_from(mask), occ, rng, f));
      },
      py::arg("x"), py::arg("mask"), py::arg("fill") = "normal", py::arg("random_positions") = false,
      py::arg("seed") = 0);

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "itb");
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs an itb subcommand; returns (exit_code, stdout, stderr).");
}
