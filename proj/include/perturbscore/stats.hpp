#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "perturbscore/epsilon_search.hpp"

namespace pscore {

// Tie-corrected Kendall tau-b, O(n log n).
double kendall_tau(std::span<const double> xs, std::span<const double> ys);
// Pearson correlation of average ranks.
double spearman_rho(std::span<const double> xs, std::span<const double> ys);
double pearson_r(std::span<const double> xs, std::span<const double> ys);
// 1-based ranks; tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> xs);

struct EpsilonHistogram {
  static constexpr std::size_t kBuckets = 7;
  static const std::array<const char*, kBuckets>& labels();

  std::array<std::size_t, kBuckets> counts{};
  std::size_t total = 0;      // accepted tuples
  std::size_t discarded = 0;  // overshoot + exhausted

  std::string to_text(const std::string& row_label) const;
  std::string to_csv(const std::string& row_label) const;
};

// Buckets [0,0.1], (0.1,0.2], ..., (0.5,0.6], (0.6,eps_max].
EpsilonHistogram epsilon_histogram(std::span<const DataTuple> tuples, double eps_max = 1.0);

struct CorrelationRow {
  std::string measure;
  double kendall = 0.0;
  double spearman = 0.0;
  double pearson = 0.0;
};

struct CorrelationReport {
  std::string dataset;
  std::string model;
  std::string method;
  std::size_t samples = 0;
  std::vector<CorrelationRow> rows;

  const CorrelationRow& row(const std::string& measure) const;
  std::string to_text() const;
  std::string to_csv() const;
};

CorrelationRow correlate(const std::string& measure, std::span<const double> xs, std::span<const double> ys);

struct CurvePoint {
  double x = 0.0;
  double mean = 0.0;
  std::size_t count = 0;
};

// Mean of ys grouped by distinct xs, ascending in x.
std::vector<CurvePoint> grouped_mean(std::span<const double> xs, std::span<const double> ys);

}  // namespace pscore
