#include "itb/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "itb/attractors.hpp"
#include "itb/attribution.hpp"
#include "itb/dataset_store.hpp"
#include "itb/errors.hpp"
#include "itb/evaluation.hpp"
#include "itb/external_scorer.hpp"
#include "itb/models.hpp"
#include "itb/report.hpp"

namespace itb {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

constexpr const char* kRunManifest = "run_manifest.json";
constexpr const char* kModelFile = "model.json";

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 0;
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("ITB_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::logic_error&) {
    }
    throw ConfigError(std::string("ITB_SEED='") + env + "' is not an unsigned integer");
  }
  return 0;
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  } catch (const IoFailure& e) {
    throw ConfigError(e.what());
  }
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

// Collects timings while a command runs; written once at the end.
class RunManifest {
 public:
  RunManifest(std::string command, const std::vector<std::string>& args)
      : start_(Clock::now()), last_(start_) {
    j_ = {{"command", std::move(command)},
          {"argv", args},
          {"tool_version", ITB_VERSION},
          {"started_at", utc_now()},
          {"inputs", json::object()},
          {"outputs", json::object()},
          {"timings", json::object()}};
  }
  void config(const json& c) {
    const std::string text = c.dump();
    j_["config"] = c;
    j_["config_hash"] = hex64(fnv1a64({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}));
  }
  void seed(const std::string& name, std::uint64_t v) { j_["seeds"][name] = v; }
  void input(const std::string& name, const fs::path& p) { j_["inputs"][name] = fs::absolute(p).lexically_normal().string(); }
  void input_spec(const std::string& name, const std::string& spec) { j_["inputs"][name] = spec; }
  void output(const std::string& name, const fs::path& p) { j_["outputs"][name] = fs::absolute(p).lexically_normal().string(); }
  void lap(const std::string& phase) {
    const auto now = Clock::now();
    j_["timings"][phase] = std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }
  void write(const fs::path& dir) {
    j_["timings"]["total"] = std::chrono::duration<double>(Clock::now() - start_).count();
    fs::create_directories(dir);
    write_text(dir / kRunManifest, canonical_json(j_));
  }

 private:
  json j_;
  Clock::time_point start_, last_;
};

Split dataset_split(const Dataset& data, std::uint64_t seed) {
  if (auto s = stored_split(data)) return *s;
  return split_dataset(data, {0.7, 0.15, 0.15}, seed);
}

std::vector<std::size_t> select_split(const Dataset& data, const std::string& which, std::uint64_t seed,
                                      std::size_t limit) {
  std::vector<std::size_t> idx;
  if (which == "all") {
    idx.resize(data.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  } else {
    const Split s = dataset_split(data, seed);
    if (which == "train") idx = s.train;
    else if (which == "val") idx = s.val;
    else if (which == "test") idx = s.test;
    else throw ConfigError("--split must be train, val, test or all");
  }
  if (idx.empty()) throw ConfigError("split '" + which + "' of this dataset is empty");
  if (limit > 0 && idx.size() > limit) idx.resize(limit);
  return idx;
}

std::string dataset_name(const fs::path& dir) {
  auto p = dir.lexically_normal();
  if (p.filename().empty()) p = p.parent_path();
  return p.filename().string();
}

std::unique_ptr<Scorer> open_scorer(const std::string& spec, const Dataset& data, double timeout) {
  if (spec.rfind("external:", 0) == 0 || spec.rfind("cmd:", 0) == 0 || spec.rfind("tcp:", 0) == 0) {
    ExternalEndpoint e = ExternalEndpoint::parse(spec);
    e.timeout_seconds = timeout;
    return std::make_unique<ExternalScorer>(e, ExpectedShape{data.n_classes(), data.channels, data.steps});
  }
  fs::path p = spec;
  if (fs::is_directory(p)) p /= kModelFile;
  auto model = std::make_unique<BuiltinModel>(BuiltinModel::load(p));
  const auto& s = model->shape();
  if (s.channels != data.channels || s.steps != data.steps || s.n_classes != data.n_classes())
    throw ShapeMismatch("model " + p.string() + " expects (" + std::to_string(s.n_classes) + " classes, " +
                        std::to_string(s.channels) + "x" + std::to_string(s.steps) + "), dataset has (" +
                        std::to_string(data.n_classes()) + " classes, " + std::to_string(data.channels) + "x" +
                        std::to_string(data.steps) + ")");
  return model;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON config file; its keys override the flags")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Master seed (falls back to $ITB_SEED, then 0)");
  cmd->add_option("--workers", c.workers, "Worker threads (0 = all cores)");
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  Common common;
  std::string variant = "sd1";
  std::size_t n_per_class = 500;
  std::string out;
};

int cmd_gen(const GenArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  RunManifest manifest("gen", argv);
  GenerationConfig base;
  base.variant = parse_variant(a.variant);
  base.n_per_class = a.n_per_class;
  base.seed = resolve_seed(a.common.seed);
  base.workers = a.common.workers;
  const GenerationConfig cfg = parse_generation_config(load_config(a.common.config_path), base);
  cfg.validate();
  manifest.config(cfg.to_json());
  manifest.seed("generation", cfg.seed);

  Dataset d = generate_dataset(cfg);
  manifest.lap("generate");
  const Split split = split_dataset(d, {0.7, 0.15, 0.15}, cfg.seed);
  d.metadata["split"] = split.to_json();
  d.metadata["split_fractions"] = {0.7, 0.15, 0.15};
  write_dataset(d, a.out);
  manifest.lap("write");
  manifest.output("dataset", a.out);
  manifest.write(a.out);
  out << "wrote " << d.size() << " samples (" << variant_name(cfg.variant) << ", " << d.channels << "x" << d.steps
      << ") to " << a.out << "\nchecksum " << directory_checksum(a.out) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  Common common;
  std::string data, out, model = "window_mlp";
  std::size_t hidden = 0, epochs = 100, batch = 32, patience = 10, window = 21;
  double lr = 1e-2;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  RunManifest manifest("train", argv);
  TrainConfig base;
  base.kind = parse_model_kind(a.model);
  base.hidden = a.hidden;
  base.window = a.window;
  base.learning_rate = a.lr;
  base.batch_size = a.batch;
  base.max_epochs = a.epochs;
  base.patience = a.patience;
  base.seed = resolve_seed(a.common.seed);
  base.workers = a.common.workers;
  const TrainConfig cfg = parse_train_config(load_config(a.common.config_path), base);
  manifest.config(cfg.to_json());
  manifest.seed("training", cfg.seed);

  const Dataset d = read_dataset(a.data);
  manifest.input("dataset", a.data);
  const Split s = dataset_split(d, cfg.seed);
  manifest.lap("load");
  const TrainResult r = train(cfg, d, s.train, s.val);
  manifest.lap("train");

  json metrics{{"epochs_run", r.epochs_run},
               {"best_epoch", r.best_epoch},
               {"train_loss", r.train_loss},
               {"val_loss", r.val_loss}};
  for (const auto& [name, idx] : {std::pair{"train", &s.train}, {"val", &s.val}, {"test", &s.test}}) {
    if (idx->empty()) continue;
    const Logits y = score_samples(r.model, d, *idx);
    metrics["accuracy"][name] = accuracy(y, d, *idx);
    metrics["loss"][name] = cross_entropy(y, d, *idx);
  }
  manifest.lap("score");
  fs::create_directories(a.out);
  r.model.save(fs::path(a.out) / kModelFile, json{{"train_config", cfg.to_json()}, {"dataset", dataset_name(a.data)}});
  write_text(fs::path(a.out) / "metrics.json", canonical_json(metrics));
  manifest.output("model", fs::path(a.out) / kModelFile);
  manifest.output("metrics", fs::path(a.out) / "metrics.json");
  manifest.write(a.out);
  out << "trained " << model_kind_name(cfg.kind) << " for " << r.epochs_run << " epochs (best " << r.best_epoch
      << "); test accuracy " << metrics["accuracy"].value("test", 0.0) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- attribute

struct AttributeArgs {
  Common common;
  std::string data, scorer, out, methods = "shapley", split = "test", target = "true_class", baseline = "zeros";
  std::size_t n_permutations = 25, n_coalitions = 2048, ig_steps = 50, limit = 0, batch = 256;
  bool group = false, allow_fd = false;
  double timeout = 60.0;
};

int cmd_attribute(const AttributeArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  RunManifest manifest("attribute", argv);
  const json file_cfg = load_config(a.common.config_path);
  AttributionConfig base;
  base.n_permutations = a.n_permutations;
  base.n_coalitions = a.n_coalitions;
  base.ig_steps = a.ig_steps;
  base.baseline = parse_baseline(a.baseline);
  base.group_time_steps = a.group;
  base.allow_fd_gradient = a.allow_fd;
  base.batch_size = a.batch;
  base.seed = resolve_seed(a.common.seed);
  base.workers = a.common.workers;

  std::vector<Method> methods;
  for (const auto& m : split_list(a.methods)) methods.push_back(parse_method(m));
  if (methods.empty()) throw ConfigError("--methods is empty");
  const TargetPolicy target = parse_target_policy(a.target);

  const Dataset d = read_dataset(a.data);
  manifest.input("dataset", a.data);
  manifest.input_spec("scorer", a.scorer);
  const auto idx = select_split(d, a.split, base.seed, a.limit);
  const auto scorer = open_scorer(a.scorer, d, a.timeout);
  manifest.lap("load");

  json configs = json::object();
  for (Method m : methods) {
    base.method = m;
    const AttributionConfig cfg = parse_attribution_config(file_cfg, base);
    configs[std::string(method_name(m))] = cfg.to_json();
    const auto t0 = Clock::now();
    const RelevanceContainer rc = attribute_dataset(*scorer, d, idx, target, cfg);
    const fs::path dir = fs::path(a.out) / std::string(method_name(m));
    write_relevance(rc, dir);
    manifest.lap(std::string(method_name(m)));
    manifest.output(std::string(method_name(m)), dir);
    out << method_name(m) << ": " << idx.size() << " samples in "
        << std::chrono::duration<double>(Clock::now() - t0).count() << " s -> " << dir.string() << "\n";
  }
  manifest.config(json{{"methods", configs}, {"split", a.split}, {"limit", a.limit}, {"target", a.target}});
  manifest.seed("attribution", base.seed);
  manifest.write(a.out);
  return kExitOk;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  Common common;
  std::string data, scorer, relevance, out, methods, split = "test", occlusion = "normal", target = "true_class",
                                               expectancy = "per_class", auc_mode = "mean_curve", name;
  bool all_samples = false, no_random = false, include_samples = false;
  double timeout = 60.0;
};

fs::path relevance_dir(const fs::path& root, const std::string& method) {
  const fs::path direct = root / method;
  if (fs::exists(direct)) return direct;
  const fs::path canonical = root / std::string(method_name(parse_method(method)));
  if (fs::exists(canonical)) return canonical;
  throw IoFailure("no relevance container for '" + method + "' under " + root.string());
}

int cmd_evaluate(const EvaluateArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  RunManifest manifest("evaluate", argv);
  EvaluationConfig base;
  base.fill = parse_fill(a.occlusion);
  base.target = parse_target_policy(a.target);
  base.correct_only = !a.all_samples;
  base.random_baseline = !a.no_random;
  base.seed = resolve_seed(a.common.seed);
  base.workers = a.common.workers;
  base = parse_evaluation_config(json{{"expectancy", a.expectancy}, {"auc_mode", a.auc_mode}}, base);
  const EvaluationConfig cfg = parse_evaluation_config(load_config(a.common.config_path), base);
  manifest.config(cfg.to_json());
  manifest.seed("evaluation", cfg.seed);

  const Dataset d = read_dataset(a.data);
  manifest.input("dataset", a.data);
  const auto idx = select_split(d, a.split, cfg.seed, 0);
  manifest.input_spec("scorer", a.scorer);
  const auto scorer = open_scorer(a.scorer, d, a.timeout);

  std::vector<fs::path> dirs;
  const fs::path root = a.relevance;
  if (fs::exists(root / "relevance.f32")) {
    dirs.push_back(root);
  } else if (!a.methods.empty()) {
    for (const auto& m : split_list(a.methods)) dirs.push_back(relevance_dir(root, m));
  } else if (fs::is_directory(root)) {
    for (const auto& e : fs::directory_iterator(root))
      if (fs::exists(e.path() / "relevance.f32")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
  }
  if (dirs.empty()) throw ShapeMismatch("no relevance containers found at " + root.string());

  const Expectancy e = expectancy(*scorer, d, idx, cfg.expectancy);
  manifest.lap("load");

  EvaluationRun run{a.name.empty() ? dataset_name(a.data) : a.name, std::string(fill_name(cfg.fill)), {}};
  for (const auto& dir : dirs) {
    const RelevanceContainer rc = read_relevance(dir);
    manifest.input("relevance:" + rc.method, dir);
    run.methods.push_back(evaluate_method(*scorer, d, idx, rc, e, cfg));
    manifest.lap(rc.method);
  }
  write_evaluation(run, a.out, a.include_samples);
  const Ranking ranking = rank_methods({run});
  write_text(fs::path(a.out) / "ranking.csv", ranking_csv(ranking));
  manifest.output("evaluation", fs::path(a.out) / kEvaluationFile);
  manifest.output("ranking", fs::path(a.out) / "ranking.csv");
  manifest.write(a.out);

  out << std::left << std::setw(22) << "method" << std::setw(10) << "auc" << std::setw(10) << "random" << std::setw(8)
      << "n" << "rank\n";
  for (const auto& row : ranking.rows) {
    const auto it = std::find_if(run.methods.begin(), run.methods.end(),
                                 [&](const MethodReport& m) { return m.method == row.method; });
    out << std::setw(22) << row.method << std::setw(10) << std::setprecision(4) << row.average << std::setw(10)
        << (it->random_auc ? *it->random_auc : 0.0) << std::setw(8) << it->n_evaluated << row.rank
        << (it->insufficient_samples ? "  (insufficient samples)" : "") << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  std::string in, out, format = "csv";
};

int cmd_report(const ReportArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  RunManifest manifest("report", argv);
  if (a.format != "csv" && a.format != "json") throw ConfigError("--format must be csv or json");
  manifest.config(json{{"format", a.format}});
  const auto runs = collect_evaluations(a.in);
  manifest.input("evaluations", a.in);
  std::vector<fs::path> files;
  if (a.format == "csv") {
    files = write_report(runs, a.out);
  } else {
    json all = json::array();
    for (const auto& r : runs) all.push_back(r.to_json());
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "report.json", canonical_json(json{{"evaluations", all}}));
    files.push_back(fs::path(a.out) / "report.json");
  }
  for (const auto& f : files) manifest.output(f.filename().string(), f);
  manifest.write(a.out);
  out << "rendered " << runs.size() << " evaluation(s) into " << files.size() << " file(s) under " << a.out << "\n";
  return kExitOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const GenerationFailed*>(&e) || dynamic_cast<const NonFiniteState*>(&e) ||
      dynamic_cast<const DegenerateSample*>(&e) || dynamic_cast<const WindowTooLong*>(&e))
    return kExitGeneration;
  if (dynamic_cast<const ExternalScorerFailure*>(&e)) return kExitExternalScorer;
  if (dynamic_cast<const ShapeMismatch*>(&e) || dynamic_cast<const FormatVersionMismatch*>(&e) ||
      dynamic_cast<const IoFailure*>(&e) || dynamic_cast<const MethodUnsupportedForScorer*>(&e) ||
      dynamic_cast<const EmptyClassSplit*>(&e))
    return kExitShape;
  return kExitFailure;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Interpretability benchmark for time-series classifiers", "itb"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ITB_VERSION);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic attractor dataset");
  add_common(g, gen.common);
  g->add_option("--variant", gen.variant, "sd1, sd2 or sd3")->capture_default_str();
  g->add_option("--n-per-class", gen.n_per_class, "Samples per class")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a builtin model");
  add_common(t, tr.common);
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--model", tr.model, "linear, mlp or window_mlp")->capture_default_str();
  t->add_option("--hidden", tr.hidden, "Hidden units (0 = model default)")->capture_default_str();
  t->add_option("--window", tr.window, "Window length of window_mlp")->capture_default_str();
  t->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str();
  t->add_option("--batch-size", tr.batch, "Mini-batch size")->capture_default_str();
  t->add_option("--epochs", tr.epochs, "Maximum epochs")->capture_default_str();
  t->add_option("--patience", tr.patience, "Early-stopping patience")->capture_default_str();

  AttributeArgs at;
  auto* ac = app.add_subcommand("attribute", "Compute relevance maps");
  add_common(ac, at.common);
  ac->add_option("--data", at.data, "Dataset directory")->required();
  ac->add_option("--scorer", at.scorer, "Model file/directory or external:cmd:<argv> / external:tcp:<host>:<port>")
      ->required();
  ac->add_option("--out", at.out, "Output directory (one container per method)")->required();
  ac->add_option("--methods,--method", at.methods, "Comma list: shapley, kernelshap, saliency, ig, random")
      ->capture_default_str();
  ac->add_option("--split", at.split, "train, val, test or all")->capture_default_str();
  ac->add_option("--limit", at.limit, "Attribute at most this many split samples (0 = all)")->capture_default_str();
  ac->add_option("--target", at.target, "true_class or predicted")->capture_default_str();
  ac->add_option("--baseline", at.baseline, "zeros or normal_noise")->capture_default_str();
  ac->add_option("--n-permutations", at.n_permutations, "Shapley sampling permutations")->capture_default_str();
  ac->add_option("--n-coalitions", at.n_coalitions, "KernelSHAP coalition budget")->capture_default_str();
  ac->add_option("--ig-steps", at.ig_steps, "Integrated-gradients steps")->capture_default_str();
  ac->add_option("--batch-size", at.batch, "Max samples per scoring call")->capture_default_str();
  ac->add_flag("--group-time-steps", at.group, "One player per time step");
  ac->add_flag("--allow-fd-gradient", at.allow_fd, "Finite-difference gradients for scorers without gradients");
  ac->add_option("--timeout", at.timeout, "External scorer timeout in seconds")->capture_default_str();

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score relevance maps by occlusion");
  add_common(e, ev.common);
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--scorer", ev.scorer, "Model file/directory or external endpoint")->required();
  e->add_option("--relevance", ev.relevance, "Relevance container, or a directory of them")->required();
  e->add_option("--out", ev.out, "Output directory")->required();
  e->add_option("--methods", ev.methods, "Comma list of methods to evaluate (default: every container found)");
  e->add_option("--split", ev.split, "train, val, test or all")->capture_default_str();
  e->add_option("--occlusion", ev.occlusion, "normal or permute")->capture_default_str();
  e->add_option("--target", ev.target, "true_class or predicted")->capture_default_str();
  e->add_option("--expectancy", ev.expectancy, "per_class or global")->capture_default_str();
  e->add_option("--auc-mode", ev.auc_mode, "mean_curve or per_sample_mean")->capture_default_str();
  e->add_option("--name", ev.name, "Dataset label in reports (default: directory name)");
  e->add_flag("--all-samples", ev.all_samples, "Include misclassified samples");
  e->add_flag("--no-random-baseline", ev.no_random, "Skip the matched random-mask curve");
  e->add_flag("--include-samples", ev.include_samples, "Store per-sample curves");
  e->add_option("--timeout", ev.timeout, "External scorer timeout in seconds")->capture_default_str();

  ReportArgs rp;
  auto* r = app.add_subcommand("report", "Render rankings and curve tables");
  r->add_option("--in", rp.in, "Directory searched for evaluation.json files")->required();
  r->add_option("--out", rp.out, "Output directory")->required();
  r->add_option("--format", rp.format, "csv or json")->capture_default_str();

  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << ITB_VERSION << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitConfig;
  }

  try {
    if (g->parsed()) return cmd_gen(gen, args, out);
    if (t->parsed()) return cmd_train(tr, args, out);
    if (ac->parsed()) return cmd_attribute(at, args, out);
    if (e->parsed()) return cmd_evaluate(ev, args, out);
    if (r->parsed()) return cmd_report(rp, args, out);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return exit_code_for(ex);
  }
  return kExitFailure;
}

}  // namespace itb
