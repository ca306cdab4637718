#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace itb {

// Multivariate time series stored row-major as channels x steps.
struct Series {
  std::size_t channels = 0;
  std::size_t steps = 0;
  std::vector<double> values;

  Series() = default;
  Series(std::size_t channels_, std::size_t steps_, double fill = 0.0)
      : channels(channels_), steps(steps_), values(channels_ * steps_, fill) {}
  Series(std::size_t channels_, std::size_t steps_, std::vector<double> v)
      : channels(channels_), steps(steps_), values(std::move(v)) {}

  std::size_t size() const { return values.size(); }
  double& operator()(std::size_t m, std::size_t t) { return values[m * steps + t]; }
  double operator()(std::size_t m, std::size_t t) const { return values[m * steps + t]; }
  std::span<const double> span() const { return values; }
  std::span<double> span() { return values; }

  bool operator==(const Series&) const = default;
};

using RelevanceMap = Series;

// 1 = informative element, 0 = replaced by white noise.
using ExpertMask = std::vector<std::uint8_t>;

}  // namespace itb
