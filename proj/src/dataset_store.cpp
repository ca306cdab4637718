#include "itb/dataset_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "itb/errors.hpp"
#include "itb/rng.hpp"

namespace itb {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kValues = "values.f32";
constexpr const char* kLabels = "labels.u8";
constexpr const char* kExpertWeights = "expert_weights.u8";
constexpr const char* kRelevance = "relevance.f32";

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoFailure("read error on " + path.string());
  return bytes;
}

void write_bytes(const fs::path& path, const void* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw IoFailure("write error on " + path.string());
}

std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

void write_f32(const fs::path& path, const std::vector<float>& v) {
  if constexpr (std::endian::native == std::endian::little) {
    write_bytes(path, v.data(), v.size() * sizeof(float));
  } else {
    std::vector<std::uint32_t> le(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) le[i] = byteswap32(std::bit_cast<std::uint32_t>(v[i]));
    write_bytes(path, le.data(), le.size() * 4);
  }
}

std::vector<float> read_f32(const fs::path& path, std::size_t expected_count) {
  const auto bytes = read_bytes(path);
  const std::size_t expected = expected_count * 4;
  if (bytes.size() != expected)
    throw ShapeMismatch(path.filename().string() + ": expected " + std::to_string(expected) +
                        " bytes, found " + std::to_string(bytes.size()));
  std::vector<float> v(expected_count);
  std::memcpy(v.data(), bytes.data(), bytes.size());
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& f : v) f = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(f)));
  }
  return v;
}

std::vector<std::uint8_t> read_u8(const fs::path& path, std::size_t expected) {
  const auto bytes = read_bytes(path);
  if (bytes.size() != expected)
    throw ShapeMismatch(path.filename().string() + ": expected " + std::to_string(expected) +
                        " bytes, found " + std::to_string(bytes.size()));
  return {bytes.begin(), bytes.end()};
}

json read_manifest(const fs::path& dir, std::string_view kind) {
  json m;
  try {
    m = json::parse(read_text(dir / kManifest));
  } catch (const json::exception& e) {
    throw IoFailure((dir / kManifest).string() + ": " + e.what());
  }
  const int version = m.value("format_version", -1);
  if (version != kFormatVersion)
    throw FormatVersionMismatch((dir / kManifest).string() + ": format_version " + std::to_string(version) +
                                ", this build reads " + std::to_string(kFormatVersion));
  if (m.value("kind", std::string{}) != kind)
    throw ShapeMismatch((dir / kManifest).string() + ": expected a " + std::string(kind) + " container");
  return m;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoFailure("cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

std::span<const float> Dataset::sample_values(std::size_t i) const {
  return std::span<const float>(values).subspan(i * sample_size(), sample_size());
}

Series Dataset::sample(std::size_t i) const {
  const auto v = sample_values(i);
  return Series(channels, steps, std::vector<double>(v.begin(), v.end()));
}

ExpertMask Dataset::expert_mask(std::size_t i) const {
  if (!has_expert_weights()) return ExpertMask(sample_size(), 1);
  auto first = expert_weights.begin() + static_cast<std::ptrdiff_t>(i * sample_size());
  return ExpertMask(first, first + static_cast<std::ptrdiff_t>(sample_size()));
}

json Split::to_json() const { return json{{"train", train}, {"val", val}, {"test", test}}; }

Split Split::from_json(const json& j) {
  Split s;
  j.at("train").get_to(s.train);
  j.at("val").get_to(s.val);
  j.at("test").get_to(s.test);
  return s;
}

Split split_dataset(const Dataset& dataset, std::array<double, 3> fractions, std::uint64_t seed) {
  static constexpr std::array<const char*, 3> kNames = {"train", "val", "test"};
  for (std::size_t k = 0; k < 3; ++k) {
    if (!(fractions[k] > 0.0))
      throw EmptyClassSplit(std::string("split fraction for '") + kNames[k] +
                            "' must be positive; a zero fraction leaves that split empty for every class");
  }
  const double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1, got " + std::to_string(sum));

  const std::size_t n_classes =
      dataset.labels.empty() ? 0 : *std::max_element(dataset.labels.begin(), dataset.labels.end()) + 1u;
  Split split;
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < dataset.size(); ++i)
      if (dataset.labels[i] == c) members.push_back(i);
    if (members.empty()) continue;
    auto rng = make_stream(seed, Purpose::Split, {c});
    std::shuffle(members.begin(), members.end(), rng);

    const double n = static_cast<double>(members.size());
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> remainders{};
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double exact = n * fractions[k];
      counts[k] = static_cast<std::size_t>(std::floor(exact));
      remainders[k] = exact - static_cast<double>(counts[k]);
      assigned += counts[k];
    }
    std::array<std::size_t, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
    for (std::size_t r = 0; assigned < members.size(); ++r, ++assigned) ++counts[order[r % 3]];

    if (counts[0] == 0)
      throw EmptyClassSplit("class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                            " samples, too few for a non-empty training split");
    auto it = members.begin();
    split.train.insert(split.train.end(), it, it + static_cast<std::ptrdiff_t>(counts[0]));
    it += static_cast<std::ptrdiff_t>(counts[0]);
    split.val.insert(split.val.end(), it, it + static_cast<std::ptrdiff_t>(counts[1]));
    it += static_cast<std::ptrdiff_t>(counts[1]);
    split.test.insert(split.test.end(), it, members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

std::optional<Split> stored_split(const Dataset& dataset) {
  if (!dataset.metadata.contains("split")) return std::nullopt;
  return Split::from_json(dataset.metadata.at("split"));
}

void write_dataset(const Dataset& d, const fs::path& dir) {
  const std::size_t n = d.size();
  if (d.values.size() != n * d.sample_size())
    throw ShapeMismatch("dataset values hold " + std::to_string(d.values.size()) + " floats, expected " +
                        std::to_string(n * d.sample_size()));
  if (d.has_expert_weights() && d.expert_weights.size() != d.values.size())
    throw ShapeMismatch("expert weights do not match the values tensor");
  for (auto l : d.labels)
    if (l >= d.n_classes()) throw ShapeMismatch("label " + std::to_string(l) + " exceeds the class count");

  ensure_dir(dir);
  json m = {{"format_version", kFormatVersion},
            {"kind", "dataset"},
            {"n", n},
            {"m", d.channels},
            {"t", d.steps},
            {"class_names", d.class_names},
            {"has_expert_weights", d.has_expert_weights()},
            {"metadata", d.metadata}};
  write_f32(dir / kValues, d.values);
  write_bytes(dir / kLabels, d.labels.data(), d.labels.size());
  if (d.has_expert_weights()) {
    write_bytes(dir / kExpertWeights, d.expert_weights.data(), d.expert_weights.size());
  } else {
    fs::remove(dir / kExpertWeights);
  }
  write_text(dir / kManifest, canonical_json(m));
}

Dataset read_dataset(const fs::path& dir) {
  const json m = read_manifest(dir, "dataset");
  Dataset d;
  std::size_t n = 0;
  try {
    n = m.at("n").get<std::size_t>();
    d.channels = m.at("m").get<std::size_t>();
    d.steps = m.at("t").get<std::size_t>();
    m.at("class_names").get_to(d.class_names);
    d.metadata = m.at("metadata");
  } catch (const json::exception& e) {
    throw IoFailure((dir / kManifest).string() + ": " + e.what());
  }
  d.values = read_f32(dir / kValues, n * d.sample_size());
  d.labels = read_u8(dir / kLabels, n);
  for (auto l : d.labels)
    if (l >= d.n_classes())
      throw ShapeMismatch("label " + std::to_string(l) + " exceeds the " + std::to_string(d.n_classes()) +
                          " declared classes");
  if (m.value("has_expert_weights", false)) d.expert_weights = read_u8(dir / kExpertWeights, d.values.size());
  return d;
}

RelevanceMap RelevanceContainer::map(std::size_t i) const {
  auto first = relevance.begin() + static_cast<std::ptrdiff_t>(i * sample_size());
  return RelevanceMap(channels, steps, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(sample_size())));
}

void RelevanceContainer::set_map(std::size_t i, const RelevanceMap& r) {
  if (r.channels != channels || r.steps != steps) throw ShapeMismatch("relevance map shape does not match container");
  std::transform(r.values.begin(), r.values.end(),
                 relevance.begin() + static_cast<std::ptrdiff_t>(i * sample_size()),
                 [](double v) { return static_cast<float>(v); });
}

void write_relevance(const RelevanceContainer& r, const fs::path& dir) {
  if (r.relevance.size() != r.n * r.sample_size())
    throw ShapeMismatch("relevance holds " + std::to_string(r.relevance.size()) + " floats, expected " +
                        std::to_string(r.n * r.sample_size()));
  for (std::size_t i = 0; i < r.relevance.size(); ++i)
    if (!std::isfinite(r.relevance[i])) throw IoFailure("relevance element " + std::to_string(i) + " is not finite");
  ensure_dir(dir);
  json m = {{"format_version", kFormatVersion},
            {"kind", "relevance"},
            {"n", r.n},
            {"m", r.channels},
            {"t", r.steps},
            {"method", r.method},
            {"scorer_id", r.scorer_id},
            {"target_policy", r.target_policy},
            {"seed", r.seed},
            {"config", r.config},
            {"covered", r.covered}};
  write_f32(dir / kRelevance, r.relevance);
  write_text(dir / kManifest, canonical_json(m));
}

RelevanceContainer read_relevance(const fs::path& dir) {
  const json m = read_manifest(dir, "relevance");
  RelevanceContainer r;
  try {
    r.n = m.at("n").get<std::size_t>();
    r.channels = m.at("m").get<std::size_t>();
    r.steps = m.at("t").get<std::size_t>();
    r.method = m.at("method").get<std::string>();
    r.scorer_id = m.value("scorer_id", std::string{});
    r.target_policy = m.value("target_policy", std::string{});
    r.seed = m.value("seed", std::uint64_t{0});
    r.config = m.value("config", json::object());
    if (m.contains("covered")) {
      m.at("covered").get_to(r.covered);
    } else {
      r.covered.resize(r.n);
      std::iota(r.covered.begin(), r.covered.end(), std::size_t{0});
    }
  } catch (const json::exception& e) {
    throw IoFailure((dir / kManifest).string() + ": " + e.what());
  }
  r.relevance = read_f32(dir / kRelevance, r.n * r.sample_size());
  for (std::size_t i = 0; i < r.relevance.size(); ++i)
    if (!std::isfinite(r.relevance[i])) throw IoFailure("relevance element " + std::to_string(i) + " is not finite");
  for (auto i : r.covered)
    if (i >= r.n) throw ShapeMismatch("covered index " + std::to_string(i) + " out of range");
  return r;
}

void check_compatible(const RelevanceContainer& r, const Dataset& d) {
  if (r.n != d.size() || r.channels != d.channels || r.steps != d.steps)
    throw ShapeMismatch("relevance '" + r.method + "' has shape (" + std::to_string(r.n) + ", " +
                        std::to_string(r.channels) + ", " + std::to_string(r.steps) + "), dataset has (" +
                        std::to_string(d.size()) + ", " + std::to_string(d.channels) + ", " +
                        std::to_string(d.steps) + ")");
}

std::string canonical_json(const json& j) { return j.dump(2) + "\n"; }

void write_text(const fs::path& path, const std::string& text) { write_bytes(path, text.data(), text.size()); }

std::string read_text(const fs::path& path) {
  const auto bytes = read_bytes(path);
  return {bytes.begin(), bytes.end()};
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h) {
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string directory_checksum(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().filename() != "run_manifest.json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : files) {
    const auto rel = fs::relative(f, dir).generic_string();
    h = fnv1a64({reinterpret_cast<const std::uint8_t*>(rel.data()), rel.size()}, h);
    const auto bytes = read_bytes(f);
    h = fnv1a64({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()}, h);
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace itb
