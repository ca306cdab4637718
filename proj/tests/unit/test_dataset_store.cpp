#include <filesystem>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include "doctest.h"
#include "itb/attractors.hpp"
#include "itb/dataset_store.hpp"
#include "itb/errors.hpp"
#include "tmpdir.hpp"

using namespace itb;
using itb::testing::TempDir;

namespace {

Dataset tiny(std::size_t per_class = 4, bool weights = false) {
  Dataset d;
  d.channels = 2;
  d.steps = 5;
  d.class_names = {"a", "b", "c"};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      d.labels.push_back(static_cast<std::uint8_t>(c));
      for (std::size_t k = 0; k < 10; ++k) {
        d.values.push_back(static_cast<float>(c) + 0.1f * static_cast<float>(i) - 0.013f * static_cast<float>(k));
        if (weights) d.expert_weights.push_back(static_cast<std::uint8_t>(k % 3 != 0));
      }
    }
  d.metadata = {{"note", "tiny"}};
  return d;
}

void truncate_file(const std::filesystem::path& p, std::uintmax_t bytes) {
  std::filesystem::resize_file(p, std::filesystem::file_size(p) - bytes);
}

}  // namespace

TEST_SUITE("dataset_store") {
  TEST_CASE("round trip is exact") {
    TempDir tmp;
    for (bool weights : {false, true}) {
      const auto d = tiny(4, weights);
      write_dataset(d, tmp / (weights ? "w" : "nw"));
      CHECK(read_dataset(tmp / (weights ? "w" : "nw")) == d);
    }
    CHECK_FALSE(std::filesystem::exists(tmp / "nw" / "expert_weights.u8"));
  }

  TEST_CASE("round trip of a generated SD3 dataset") {
    GenerationConfig cfg;
    cfg.variant = Variant::SD3;
    cfg.n_per_class = 3;
    const auto d = generate_dataset(cfg);
    TempDir tmp;
    write_dataset(d, tmp.path());
    const auto back = read_dataset(tmp.path());
    CHECK(back == d);
    CHECK(back.metadata.at("variant") == "sd3");
  }

  TEST_CASE("values file is little-endian float32 in (N, M, T) order") {
    TempDir tmp;
    const auto d = tiny(1);
    write_dataset(d, tmp.path());
    std::ifstream in(tmp / "values.f32", std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
    REQUIRE(bytes.size() == d.values.size() * 4);
    for (std::size_t i = 0; i < d.values.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 3; b >= 0; --b) bits = (bits << 8) | bytes[4 * i + static_cast<std::size_t>(b)];
      float f;
      std::memcpy(&f, &bits, 4);
      CHECK(f == d.values[i]);
    }
  }

  TEST_CASE("manifest is canonical JSON") {
    TempDir tmp;
    write_dataset(tiny(), tmp.path());
    const auto text = read_text(tmp / "manifest.json");
    const auto j = nlohmann::json::parse(text);
    CHECK(j.at("format_version") == 1);
    CHECK(j.at("kind") == "dataset");
    CHECK(j.at("n") == 12);
    CHECK(j.at("m") == 2);
    CHECK(j.at("t") == 5);
    CHECK(text == canonical_json(j));
  }

  TEST_CASE("truncated values file names both byte counts") {
    TempDir tmp;
    write_dataset(tiny(), tmp.path());
    truncate_file(tmp / "values.f32", 4);
    const std::string expected = std::to_string(12 * 10 * 4);
    const std::string found = std::to_string(12 * 10 * 4 - 4);
    CHECK_THROWS_WITH_AS(read_dataset(tmp.path()), doctest::Contains(expected.c_str()), ShapeMismatch);
    CHECK_THROWS_WITH_AS(read_dataset(tmp.path()), doctest::Contains(found.c_str()), ShapeMismatch);
  }

  TEST_CASE("truncated labels and weights are detected") {
    TempDir tmp;
    write_dataset(tiny(4, true), tmp.path());
    truncate_file(tmp / "expert_weights.u8", 1);
    CHECK_THROWS_AS(read_dataset(tmp.path()), ShapeMismatch);
    write_dataset(tiny(4, true), tmp.path());
    truncate_file(tmp / "labels.u8", 1);
    CHECK_THROWS_AS(read_dataset(tmp.path()), ShapeMismatch);
  }

  TEST_CASE("unknown format version is rejected") {
    TempDir tmp;
    write_dataset(tiny(), tmp.path());
    auto j = nlohmann::json::parse(read_text(tmp / "manifest.json"));
    j["format_version"] = 99;
    write_text(tmp / "manifest.json", canonical_json(j));
    CHECK_THROWS_WITH_AS(read_dataset(tmp.path()), doctest::Contains("99"), FormatVersionMismatch);
  }

  TEST_CASE("labels beyond the class list are rejected") {
    TempDir tmp;
    auto d = tiny();
    d.labels[0] = 7;
    CHECK_THROWS_AS(write_dataset(d, tmp.path()), ShapeMismatch);
  }

  TEST_CASE("missing directory is an IoFailure") {
    CHECK_THROWS_AS(read_dataset("/nonexistent/itb/dataset"), IoFailure);
  }

  TEST_CASE("split of 500 per class gives 1750/375/375") {
    Dataset d;
    d.channels = 1;
    d.steps = 1;
    d.class_names = {"0", "1", "2", "3", "4"};
    for (std::size_t c = 0; c < 5; ++c)
      for (std::size_t i = 0; i < 500; ++i) d.labels.push_back(static_cast<std::uint8_t>(c));
    d.values.assign(d.labels.size(), 0.0f);
    const auto s = split_dataset(d, {0.7, 0.15, 0.15}, 0);
    CHECK(s.train.size() == 1750);
    CHECK(s.val.size() == 375);
    CHECK(s.test.size() == 375);
    for (std::size_t c = 0; c < 5; ++c) {
      auto count = [&](const std::vector<std::size_t>& v) {
        return std::count_if(v.begin(), v.end(), [&](auto i) { return d.labels[i] == c; });
      };
      CHECK(count(s.train) == 350);
      CHECK(count(s.val) == 75);
      CHECK(count(s.test) == 75);
    }
  }

  TEST_CASE("split is a stratified partition for awkward class sizes") {
    for (std::size_t per_class : {3u, 7u, 11u, 13u}) {
      const auto d = tiny(per_class);
      for (std::uint64_t seed : {0u, 1u, 2u}) {
        const auto s = split_dataset(d, {0.6, 0.25, 0.15}, seed);
        std::set<std::size_t> all;
        for (const auto* part : {&s.train, &s.val, &s.test}) {
          CHECK(std::is_sorted(part->begin(), part->end()));
          all.insert(part->begin(), part->end());
        }
        CHECK(all.size() == d.size());
        CHECK(s.train.size() + s.val.size() + s.test.size() == d.size());
        const std::array<double, 3> f{0.6, 0.25, 0.15};
        for (std::size_t c = 0; c < 3; ++c) {
          const std::array<const std::vector<std::size_t>*, 3> parts{&s.train, &s.val, &s.test};
          for (std::size_t k = 0; k < 3; ++k) {
            const auto n = std::count_if(parts[k]->begin(), parts[k]->end(), [&](auto i) { return d.labels[i] == c; });
            CHECK(std::abs(static_cast<double>(n) - f[k] * static_cast<double>(per_class)) < 1.0);
          }
        }
        CHECK(split_dataset(d, {0.6, 0.25, 0.15}, seed) == s);
      }
    }
  }

  TEST_CASE("split rejects bad fractions") {
    const auto d = tiny(5);
    CHECK_THROWS_AS(split_dataset(d, {1.0, 0.0, 0.0}, 0), EmptyClassSplit);
    CHECK_THROWS_AS(split_dataset(d, {0.5, 0.2, 0.2}, 0), ConfigError);
  }

  TEST_CASE("split rejects a class with no training sample") {
    auto d = tiny(5);
    d.labels.push_back(2);
    d.class_names.push_back("lonely");
    d.labels.back() = 3;
    d.values.resize(d.values.size() + 10, 0.0f);
    CHECK_THROWS_AS(split_dataset(d, {0.1, 0.45, 0.45}, 0), EmptyClassSplit);
  }

  TEST_CASE("split survives a metadata round trip") {
    auto d = tiny(6);
    const auto s = split_dataset(d, {0.7, 0.15, 0.15}, 4);
    d.metadata["split"] = s.to_json();
    TempDir tmp;
    write_dataset(d, tmp.path());
    const auto back = stored_split(read_dataset(tmp.path()));
    REQUIRE(back.has_value());
    CHECK(*back == s);
    CHECK_FALSE(stored_split(tiny()).has_value());
  }

  TEST_CASE("relevance container round trip and compatibility") {
    const auto d = tiny(2);
    RelevanceContainer r;
    r.method = "Saliency";
    r.scorer_id = "model-x";
    r.target_policy = "true_class";
    r.seed = 12;
    r.config = {{"ig_steps", 50}};
    r.n = d.size();
    r.channels = d.channels;
    r.steps = d.steps;
    r.relevance.assign(r.n * r.sample_size(), 0.0f);
    RelevanceMap m(2, 5);
    for (std::size_t k = 0; k < m.size(); ++k) m.values[k] = 0.25 * static_cast<double>(k) - 1.0;
    r.set_map(3, m);
    r.covered = {3};
    CHECK(r.map(3) == m);

    TempDir tmp;
    write_relevance(r, tmp.path());
    const auto back = read_relevance(tmp.path());
    CHECK(back == r);
    CHECK_NOTHROW(check_compatible(back, d));

    auto other = tiny(3);
    CHECK_THROWS_AS(check_compatible(back, other), ShapeMismatch);
    other = d;
    other.steps = 10;
    other.channels = 1;
    CHECK_THROWS_AS(check_compatible(back, other), ShapeMismatch);
  }

  TEST_CASE("relevance with non-finite entries is refused") {
    RelevanceContainer r;
    r.method = "Random";
    r.n = 1;
    r.channels = 1;
    r.steps = 2;
    r.relevance = {0.0f, std::numeric_limits<float>::quiet_NaN()};
    TempDir tmp;
    CHECK_THROWS_AS(write_relevance(r, tmp.path()), IoFailure);
  }

  TEST_CASE("relevance truncation is detected") {
    RelevanceContainer r;
    r.method = "Random";
    r.n = 2;
    r.channels = 1;
    r.steps = 3;
    r.relevance.assign(6, 0.5f);
    TempDir tmp;
    write_relevance(r, tmp.path());
    truncate_file(tmp / "relevance.f32", 4);
    CHECK_THROWS_AS(read_relevance(tmp.path()), ShapeMismatch);
  }

  TEST_CASE("directory checksum ignores run manifests and tracks content") {
    TempDir tmp;
    write_dataset(tiny(), tmp.path());
    const auto before = directory_checksum(tmp.path());
    CHECK(before.size() == 16);
    write_text(tmp / "run_manifest.json", "{\"wall\": 3}\n");
    CHECK(directory_checksum(tmp.path()) == before);
    auto d = tiny();
    d.values[0] += 1.0f;
    write_dataset(d, tmp.path());
    CHECK(directory_checksum(tmp.path()) != before);
  }
}
