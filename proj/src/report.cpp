#include "itb/report.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <tuple>

#include "itb/csv.hpp"
#include "itb/dataset_store.hpp"
#include "itb/errors.hpp"

namespace itb {

namespace fs = std::filesystem;
using json = nlohmann::json;

json EvaluationRun::to_json(bool include_samples) const {
  json m = json::array();
  for (const auto& r : methods) m.push_back(r.to_json(include_samples));
  return json{{"dataset", dataset}, {"occlusion", occlusion}, {"methods", m}};
}

EvaluationRun EvaluationRun::from_json(const json& j) {
  try {
    EvaluationRun run;
    run.dataset = j.at("dataset").get<std::string>();
    run.occlusion = j.at("occlusion").get<std::string>();
    for (const auto& m : j.at("methods")) run.methods.push_back(MethodReport::from_json(m));
    return run;
  } catch (const json::exception& e) {
    throw IoFailure(std::string("malformed evaluation: ") + e.what());
  }
}

void write_evaluation(const EvaluationRun& run, const fs::path& dir, bool include_samples) {
  fs::create_directories(dir);
  write_text(dir / kEvaluationFile, canonical_json(run.to_json(include_samples)));
}

EvaluationRun read_evaluation(const fs::path& file) {
  json j;
  try {
    j = json::parse(read_text(file));
  } catch (const json::parse_error& e) {
    throw IoFailure(file.string() + ": " + e.what());
  }
  return EvaluationRun::from_json(j);
}

std::vector<EvaluationRun> collect_evaluations(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoFailure("report input '" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().filename() == kEvaluationFile) files.push_back(entry.path());
  if (files.empty()) throw ShapeMismatch("no " + std::string(kEvaluationFile) + " found under '" + dir.string() + "'");
  std::sort(files.begin(), files.end());
  std::vector<EvaluationRun> runs;
  for (const auto& f : files) runs.push_back(read_evaluation(f));
  std::stable_sort(runs.begin(), runs.end(), [](const EvaluationRun& a, const EvaluationRun& b) {
    return std::tie(a.dataset, a.occlusion) < std::tie(b.dataset, b.occlusion);
  });
  return runs;
}

Ranking rank_methods(const std::vector<EvaluationRun>& runs) {
  Ranking ranking;
  for (const auto& r : runs)
    if (std::find(ranking.datasets.begin(), ranking.datasets.end(), r.dataset) == ranking.datasets.end())
      ranking.datasets.push_back(r.dataset);
  std::sort(ranking.datasets.begin(), ranking.datasets.end());

  // (occlusion, method) -> per-dataset AUC
  std::map<std::pair<std::string, std::string>, std::vector<std::optional<double>>> table;
  for (const auto& run : runs) {
    const auto col = static_cast<std::size_t>(
        std::find(ranking.datasets.begin(), ranking.datasets.end(), run.dataset) - ranking.datasets.begin());
    for (const auto& m : run.methods) {
      auto& cells = table[{run.occlusion, m.method}];
      cells.resize(ranking.datasets.size());
      if (cells[col]) throw ShapeMismatch("duplicate result for " + m.method + " on " + run.dataset + "/" + run.occlusion);
      cells[col] = m.auc;
    }
  }
  for (auto& [key, cells] : table) {
    RankingRow row{key.first, key.second, cells, 0.0, 0};
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& c : cells)
      if (c) {
        sum += *c;
        ++n;
      }
    row.average = n > 0 ? sum / static_cast<double>(n) : 0.0;
    ranking.rows.push_back(std::move(row));
  }
  std::stable_sort(ranking.rows.begin(), ranking.rows.end(), [](const RankingRow& a, const RankingRow& b) {
    if (a.occlusion != b.occlusion) return a.occlusion < b.occlusion;
    return a.average > b.average;
  });
  for (std::size_t i = 0; i < ranking.rows.size(); ++i) {
    auto& row = ranking.rows[i];
    const bool new_group = i == 0 || ranking.rows[i - 1].occlusion != row.occlusion;
    if (new_group) row.rank = 1;
    else if (ranking.rows[i - 1].average == row.average) row.rank = ranking.rows[i - 1].rank;
    else {
      std::size_t group_start = i;
      while (group_start > 0 && ranking.rows[group_start - 1].occlusion == row.occlusion) --group_start;
      row.rank = i - group_start + 1;
    }
  }
  return ranking;
}

std::string ranking_csv(const Ranking& ranking) {
  std::vector<csv::Row> rows;
  csv::Row header{"occlusion", "method"};
  header.insert(header.end(), ranking.datasets.begin(), ranking.datasets.end());
  header.push_back("average");
  header.push_back("rank");
  rows.push_back(header);
  for (const auto& r : ranking.rows) {
    csv::Row row{r.occlusion, r.method};
    for (const auto& c : r.auc) row.push_back(c ? csv::number(*c) : "");
    row.push_back(csv::number(r.average));
    row.push_back(std::to_string(r.rank));
    rows.push_back(row);
  }
  return csv::write(rows);
}

Ranking parse_ranking_csv(const std::string& text) {
  const auto rows = csv::parse(text);
  if (rows.empty() || rows[0].size() < 4 || rows[0][0] != "occlusion" || rows[0][1] != "method" ||
      rows[0][rows[0].size() - 2] != "average" || rows[0].back() != "rank")
    throw IoFailure("ranking csv: unexpected header");
  Ranking ranking;
  ranking.datasets.assign(rows[0].begin() + 2, rows[0].end() - 2);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != rows[0].size()) throw IoFailure("ranking csv: row " + std::to_string(i) + " has the wrong width");
    RankingRow row;
    row.occlusion = r[0];
    row.method = r[1];
    for (std::size_t k = 0; k < ranking.datasets.size(); ++k)
      row.auc.push_back(r[2 + k].empty() ? std::nullopt : std::optional<double>(csv::to_double(r[2 + k])));
    row.average = csv::to_double(r[r.size() - 2]);
    row.rank = static_cast<std::size_t>(csv::to_double(r.back()));
    ranking.rows.push_back(std::move(row));
  }
  return ranking;
}

std::vector<CurveRow> curve_rows(const std::vector<EvaluationRun>& runs) {
  std::vector<CurveRow> out;
  for (const auto& run : runs)
    for (const auto& m : run.methods)
      for (const auto& p : m.curve)
        out.push_back({run.dataset, run.occlusion, m.method, p.q, p.n_r, p.tic, p.s_e, p.accuracy, p.accuracy_n_r});
  return out;
}

namespace {

const csv::Row kCurveHeader{"dataset", "occlusion", "method", "q", "n_r", "tic", "s_e", "accuracy", "accuracy_n_r"};

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') ? c : '_';
  return out;
}

fs::path write_panel(const fs::path& dir, const std::string& name, const std::string& x, const std::string& y,
                     const std::vector<std::tuple<std::string, double, double>>& points) {
  std::vector<csv::Row> rows{{"method", x, y}};
  for (const auto& [m, a, b] : points) rows.push_back({m, csv::number(a), csv::number(b)});
  const fs::path p = dir / name;
  write_text(p, csv::write(rows));
  return p;
}

}  // namespace

std::string curves_csv(const std::vector<CurveRow>& rows) {
  std::vector<csv::Row> out{kCurveHeader};
  for (const auto& r : rows)
    out.push_back({r.dataset, r.occlusion, r.method, csv::number(r.q), csv::number(r.n_r), csv::number(r.tic),
                   csv::number(r.s_e), csv::number(r.accuracy), csv::number(r.accuracy_n_r)});
  return csv::write(out);
}

std::vector<CurveRow> parse_curves_csv(const std::string& text) {
  const auto rows = csv::parse(text);
  if (rows.empty() || rows[0] != kCurveHeader) throw IoFailure("curves csv: unexpected header");
  std::vector<CurveRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != kCurveHeader.size()) throw IoFailure("curves csv: row " + std::to_string(i) + " has the wrong width");
    out.push_back({r[0], r[1], r[2], csv::to_double(r[3]), csv::to_double(r[4]), csv::to_double(r[5]),
                   csv::to_double(r[6]), csv::to_double(r[7]), csv::to_double(r[8])});
  }
  return out;
}

std::vector<fs::path> write_report(const std::vector<EvaluationRun>& runs, const fs::path& out_dir) {
  if (runs.empty()) throw ShapeMismatch("nothing to report");
  fs::create_directories(out_dir / "panels");
  std::vector<fs::path> written;

  json all = json::array();
  for (const auto& r : runs) all.push_back(r.to_json());
  const Ranking ranking = rank_methods(runs);
  json rank_j = json::array();
  for (const auto& r : ranking.rows) {
    json cells = json::object();
    for (std::size_t k = 0; k < ranking.datasets.size(); ++k)
      cells[ranking.datasets[k]] = r.auc[k] ? json(*r.auc[k]) : json(nullptr);
    rank_j.push_back({{"occlusion", r.occlusion}, {"method", r.method}, {"auc", cells}, {"average", r.average},
                      {"rank", r.rank}});
  }
  write_text(out_dir / "report.json", canonical_json(json{{"evaluations", all}, {"ranking", rank_j}}));
  written.push_back(out_dir / "report.json");
  write_text(out_dir / "ranking.csv", ranking_csv(ranking));
  written.push_back(out_dir / "ranking.csv");
  write_text(out_dir / "curves.csv", curves_csv(curve_rows(runs)));
  written.push_back(out_dir / "curves.csv");

  for (const auto& run : runs) {
    std::vector<std::tuple<std::string, double, double>> se_nr, se_tic, acc_nr;
    for (const auto& m : run.methods) {
      for (const auto& p : m.curve) {
        se_nr.emplace_back(m.method, p.n_r, p.s_e);
        se_tic.emplace_back(m.method, p.tic, p.s_e);
        acc_nr.emplace_back(m.method, p.accuracy_n_r, p.accuracy);
      }
      if (m.random_curve)
        for (const auto& p : *m.random_curve) se_nr.emplace_back(m.method + " (random mask)", p.n_r, p.s_e);
    }
    const std::string stem = sanitize(run.dataset) + "_" + sanitize(run.occlusion);
    const fs::path dir = out_dir / "panels";
    written.push_back(write_panel(dir, stem + "_se_vs_nr.csv", "n_r", "s_e", se_nr));
    written.push_back(write_panel(dir, stem + "_se_vs_tic.csv", "tic", "s_e", se_tic));
    written.push_back(write_panel(dir, stem + "_accuracy_vs_nr.csv", "n_r", "accuracy", acc_nr));
  }
  return written;
}

}  // namespace itb
