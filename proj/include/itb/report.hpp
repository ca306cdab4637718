#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "itb/evaluation.hpp"
#include "json.hpp"

namespace itb {

// Output of one evaluate invocation: every method on one dataset under one
// occlusion scheme.
struct EvaluationRun {
  std::string dataset;    // dataset identifier, usually its directory name
  std::string occlusion;  // "normal" or "permute"
  std::vector<MethodReport> methods;

  nlohmann::json to_json(bool include_samples = false) const;
  static EvaluationRun from_json(const nlohmann::json& j);
};

inline constexpr const char* kEvaluationFile = "evaluation.json";

void write_evaluation(const EvaluationRun& run, const std::filesystem::path& dir, bool include_samples = false);
EvaluationRun read_evaluation(const std::filesystem::path& file);

// Every evaluation.json below `dir`, ordered by (dataset, occlusion). Throws
// ShapeMismatch when none is found.
std::vector<EvaluationRun> collect_evaluations(const std::filesystem::path& dir);

struct RankingRow {
  std::string occlusion;
  std::string method;
  std::vector<std::optional<double>> auc;  // one per Ranking::datasets entry
  double average = 0.0;
  std::size_t rank = 0;

  bool operator==(const RankingRow&) const = default;
};

// Methods ordered by descending average AUC within each occlusion scheme;
// ties share the lowest rank ("1224").
struct Ranking {
  std::vector<std::string> datasets;
  std::vector<RankingRow> rows;

  bool operator==(const Ranking&) const = default;
};

Ranking rank_methods(const std::vector<EvaluationRun>& runs);
std::string ranking_csv(const Ranking& ranking);
Ranking parse_ranking_csv(const std::string& text);

struct CurveRow {
  std::string dataset;
  std::string occlusion;
  std::string method;
  double q = 0.0;
  double n_r = 0.0;
  double tic = 0.0;
  double s_e = 0.0;
  double accuracy = 0.0;
  double accuracy_n_r = 0.0;

  bool operator==(const CurveRow&) const = default;
};

std::vector<CurveRow> curve_rows(const std::vector<EvaluationRun>& runs);
std::string curves_csv(const std::vector<CurveRow>& rows);
std::vector<CurveRow> parse_curves_csv(const std::string& text);

// Writes report.json, ranking.csv, curves.csv and one CSV per figure panel
// under panels/ (S_E vs N_r with random-mask baselines, S_E vs TIC, accuracy
// vs N_r, per dataset and occlusion). Returns the written paths.
std::vector<std::filesystem::path> write_report(const std::vector<EvaluationRun>& runs,
                                                const std::filesystem::path& out_dir);

}  // namespace itb
