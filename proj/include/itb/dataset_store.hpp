#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "itb/series.hpp"
#include "json.hpp"

namespace itb {

inline constexpr int kFormatVersion = 1;

// In-memory form of a dataset container. Tensors keep the on-disk float32
// precision so that read(write(d)) == d holds bit for bit.
struct Dataset {
  std::size_t channels = 0;
  std::size_t steps = 0;
  std::vector<std::string> class_names;
  std::vector<float> values;                // (N, M, T)
  std::vector<std::uint8_t> labels;         // N
  std::vector<std::uint8_t> expert_weights; // (N, M, T) or empty
  nlohmann::json metadata = nlohmann::json::object();

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return channels * steps; }
  std::size_t n_classes() const { return class_names.size(); }
  bool has_expert_weights() const { return !expert_weights.empty(); }

  std::span<const float> sample_values(std::size_t i) const;
  Series sample(std::size_t i) const;
  ExpertMask expert_mask(std::size_t i) const;

  bool operator==(const Dataset&) const = default;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  nlohmann::json to_json() const;
  static Split from_json(const nlohmann::json& j);
  bool operator==(const Split&) const = default;
};

// Stratified per class using largest-remainder rounding, so each class's split
// sizes differ from exact proportionality by less than one sample.
// Every fraction must be positive: a zero fraction would leave some class with
// an empty split, which is reported as EmptyClassSplit. The same error is
// raised when a class is too small to receive a training sample.
Split split_dataset(const Dataset& dataset, std::array<double, 3> fractions, std::uint64_t seed);

// Split stored in metadata["split"], if any.
std::optional<Split> stored_split(const Dataset& dataset);

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

// Per-element relevance for a dataset, (N, M, T). Only the samples listed in
// `covered` were attributed; the remaining rows are zero.
struct RelevanceContainer {
  std::string method;
  std::string scorer_id;
  std::string target_policy;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::size_t n = 0;
  std::size_t channels = 0;
  std::size_t steps = 0;
  std::vector<std::size_t> covered;
  std::vector<float> relevance;

  std::size_t sample_size() const { return channels * steps; }
  RelevanceMap map(std::size_t i) const;
  void set_map(std::size_t i, const RelevanceMap& r);

  bool operator==(const RelevanceContainer&) const = default;
};

void write_relevance(const RelevanceContainer& container, const std::filesystem::path& dir);
RelevanceContainer read_relevance(const std::filesystem::path& dir);

// Throws ShapeMismatch if the relevance does not belong to a dataset of this shape.
void check_compatible(const RelevanceContainer& relevance, const Dataset& dataset);

// Sorted keys, two-space indent, trailing newline.
std::string canonical_json(const nlohmann::json& j);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
// Hash over every regular file in `dir` (sorted by name), excluding run manifests.
std::string directory_checksum(const std::filesystem::path& dir);

}  // namespace itb
