#include "perturbscore/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "perturbscore/error.hpp"

namespace pscore {

namespace {

void check_pair(const char* name, std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error(ErrorCode::kInvalidArgument, std::string(name) + ": lengths differ");
  if (xs.size() < 2) throw Error(ErrorCode::kInvalidArgument, std::string(name) + ": need at least 2 samples");
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) {
      throw Error(ErrorCode::kNumeric, std::string(name) + ": non-finite sample");
    }
}

// Pairs tied within runs of equal keys, over an already sorted sequence.
template <typename It, typename Eq>
std::uint64_t tied_pairs(It first, It last, Eq eq) {
  std::uint64_t total = 0;
  for (It run = first; run != last;) {
    It next = run + 1;
    while (next != last && eq(*run, *next)) ++next;
    const auto n = static_cast<std::uint64_t>(next - run);
    total += n * (n - 1) / 2;
    run = next;
  }
  return total;
}

// Merge sort on ys counting swaps (= discordant pairs among x-untied pairs).
std::uint64_t merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::uint64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += mid - i;
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

}  // namespace

double kendall_tau(std::span<const double> xs, std::span<const double> ys) {
  check_pair("kendall_tau", xs, ys);
  const std::size_t n = xs.size();
  std::vector<std::pair<double, double>> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = {xs[i], ys[i]};
  std::sort(p.begin(), p.end());

  const auto n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
  const std::uint64_t n1 = tied_pairs(p.begin(), p.end(), [](auto& a, auto& b) { return a.first == b.first; });
  const std::uint64_t n3 = tied_pairs(p.begin(), p.end(), [](auto& a, auto& b) { return a == b; });

  std::vector<double> y(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = p[i].second;
  const std::uint64_t swaps = merge_count(y, buf, 0, n);
  const std::uint64_t n2 = tied_pairs(y.begin(), y.end(), [](double a, double b) { return a == b; });

  if (n1 == n0 || n2 == n0) throw Error(ErrorCode::kInvalidArgument, "kendall_tau: undefined for all-tied input");
  // concordant - discordant = n0 - n1 - n2 + n3 - 2 * swaps
  const double numer = static_cast<double>(n0) - static_cast<double>(n1) - static_cast<double>(n2) +
                       static_cast<double>(n3) - 2.0 * static_cast<double>(swaps);
  const double denom = std::sqrt(static_cast<double>(n0 - n1)) * std::sqrt(static_cast<double>(n0 - n2));
  return std::clamp(numer / denom, -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i + 1;
    while (j < idx.size() && xs[idx[j]] == xs[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j - 1) + 1.0;
    for (std::size_t k = i; k < j; ++k) ranks[idx[k]] = r;
    i = j;
  }
  return ranks;
}

double pearson_r(std::span<const double> xs, std::span<const double> ys) {
  check_pair("pearson_r", xs, ys);
  const auto n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::kInvalidArgument, "pearson_r: zero variance");
  return std::clamp(sxy / (std::sqrt(sxx) * std::sqrt(syy)), -1.0, 1.0);
}

double spearman_rho(std::span<const double> xs, std::span<const double> ys) {
  check_pair("spearman_rho", xs, ys);
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  try {
    return pearson_r(rx, ry);
  } catch (const Error&) {
    throw Error(ErrorCode::kInvalidArgument, "spearman_rho: undefined for all-tied input");
  }
}

// ---------------------------------------------------------------- histogram

const std::array<const char*, EpsilonHistogram::kBuckets>& EpsilonHistogram::labels() {
  static const std::array<const char*, kBuckets> kLabels = {"[0,0.1]",   "(0.1,0.2]", "(0.2,0.3]", "(0.3,0.4]",
                                                            "(0.4,0.5]", "(0.5,0.6]", "(0.6,1]"};
  return kLabels;
}

EpsilonHistogram epsilon_histogram(std::span<const DataTuple> tuples, double eps_max) {
  constexpr double kEdges[] = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  constexpr double kTol = 1e-9;
  EpsilonHistogram h;
  for (const auto& t : tuples) {
    if (!t.accepted()) {
      ++h.discarded;
      continue;
    }
    if (!(t.epsilon > 0.0) || t.epsilon > eps_max + kTol) {
      throw Error(ErrorCode::kInvalidArgument, "epsilon_histogram: accepted epsilon " + std::to_string(t.epsilon) +
                                                   " outside (0, eps_max]");
    }
    std::size_t b = 0;
    while (b < 6 && t.epsilon > kEdges[b] + kTol) ++b;
    ++h.counts[b];
    ++h.total;
  }
  return h;
}

std::string EpsilonHistogram::to_text(const std::string& row_label) const {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-24s", "range");
  os << buf;
  for (const char* l : labels()) {
    std::snprintf(buf, sizeof buf, "%11s", l);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%9s%11s\n", "TOTAL", "Discarded");
  os << buf;
  std::snprintf(buf, sizeof buf, "%-24s", row_label.c_str());
  os << buf;
  for (std::size_t c : counts) {
    std::snprintf(buf, sizeof buf, "%11zu", c);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%9zu%11zu\n", total, discarded);
  os << buf;
  return os.str();
}

std::string EpsilonHistogram::to_csv(const std::string& row_label) const {
  std::ostringstream os;
  os << "setup";
  for (const char* l : labels()) os << ",\"" << l << '"';
  os << ",total,discarded\n" << row_label;
  for (std::size_t c : counts) os << ',' << c;
  os << ',' << total << ',' << discarded << '\n';
  return os.str();
}

// ------------------------------------------------------------------ reports

CorrelationRow correlate(const std::string& measure, std::span<const double> xs, std::span<const double> ys) {
  return {measure, kendall_tau(xs, ys), spearman_rho(xs, ys), pearson_r(xs, ys)};
}

const CorrelationRow& CorrelationReport::row(const std::string& measure) const {
  for (const auto& r : rows)
    if (r.measure == measure) return r;
  throw Error(ErrorCode::kInvalidArgument, "report has no measure '" + measure + "'");
}

std::string CorrelationReport::to_text() const {
  std::ostringstream os;
  os << "dataset: " << dataset << "  model: " << model << "  method: " << method << "  samples: " << samples
     << '\n';
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-24s%10s%10s%10s\n", "measure", "kendall", "spearman", "pearson");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-24s%10.4f%10.4f%10.4f\n", r.measure.c_str(), r.kendall, r.spearman, r.pearson);
    os << buf;
  }
  return os.str();
}

std::string CorrelationReport::to_csv() const {
  std::ostringstream os;
  os << "dataset,model,method,samples,measure,kendall,spearman,pearson\n";
  char buf[64];
  for (const auto& r : rows) {
    os << dataset << ',' << model << ',' << method << ',' << samples << ',' << r.measure;
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f\n", r.kendall, r.spearman, r.pearson);
    os << buf;
  }
  return os.str();
}

std::vector<CurvePoint> grouped_mean(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error(ErrorCode::kInvalidArgument, "grouped_mean: lengths differ");
  std::map<double, std::pair<double, std::size_t>> acc;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    auto& a = acc[xs[i]];
    a.first += ys[i];
    ++a.second;
  }
  std::vector<CurvePoint> out;
  for (const auto& [x, a] : acc) out.push_back({x, a.first / static_cast<double>(a.second), a.second});
  return out;
}

}  // namespace pscore
