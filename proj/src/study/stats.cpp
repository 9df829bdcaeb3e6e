#include "latfim/study/stats.hpp"

#include "latfim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace latfim {

SampleSummary summarize(std::span<const double> x, double reference) {
  SampleSummary s;
  s.count = x.size();
  if (x.empty()) return s;
  double mean = 0.0, m2 = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean;
    mean += d / static_cast<double>(i + 1);
    m2 += d * (x[i] - mean);
    sq += (x[i] - reference) * (x[i] - reference);
  }
  const double n = static_cast<double>(x.size());
  s.mean = mean;
  s.sd = x.size() > 1 ? std::sqrt(m2 / (n - 1.0)) : 0.0;
  s.bias = mean - reference;
  s.rmsd = std::sqrt(sq / n);
  s.bias_se = s.sd / std::sqrt(n);
  return s;
}

namespace {

struct Moments {
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
};

Moments central_moments(std::span<const double> x) {
  if (x.size() < 2) throw Error(ErrorKind::domain_violation, "need at least two values", "sample");
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  Moments m;
  for (double v : x) {
    const double d = v - mean, d2 = d * d;
    m.m2 += d2;
    m.m3 += d2 * d;
    m.m4 += d2 * d2;
  }
  const double n = static_cast<double>(x.size());
  m.m2 /= n;
  m.m3 /= n;
  m.m4 /= n;
  if (!(m.m2 > 0.0)) throw Error(ErrorKind::domain_violation, "sample is constant", "sample");
  return m;
}

double quantile_sorted(const std::vector<double>& s, double p) {
  const double pos = p * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

}  // namespace

double skewness(std::span<const double> x) {
  const Moments m = central_moments(x);
  return m.m3 / std::pow(m.m2, 1.5);
}

double excess_kurtosis(std::span<const double> x) {
  const Moments m = central_moments(x);
  return m.m4 / (m.m2 * m.m2) - 3.0;
}

double silverman_bandwidth(std::span<const double> x) {
  if (x.size() < 2) throw Error(ErrorKind::domain_violation, "need at least two values", "sample");
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  const double sd = summarize(x, 0.0).sd;
  const double iqr = quantile_sorted(s, 0.75) - quantile_sorted(s, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0.0)) spread = sd;  // heavy ties in the middle half
  return 0.9 * spread * std::pow(static_cast<double>(x.size()), -0.2);
}

KernelDensity kernel_density(std::span<const double> x, std::size_t points) {
  if (points < 2) throw Error(ErrorKind::config_error, "density grid needs at least two points");
  KernelDensity k;
  k.bandwidth = silverman_bandwidth(x);
  if (!(k.bandwidth > 0.0)) throw Error(ErrorKind::domain_violation, "sample is constant", "sample");
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *lo_it - 4.0 * k.bandwidth, hi = *hi_it + 4.0 * k.bandwidth;
  k.grid = Vec::LinSpaced(static_cast<Eigen::Index>(points), lo, hi);
  k.density = Vec::Zero(k.grid.size());
  const double norm = 1.0 / (static_cast<double>(x.size()) * k.bandwidth * std::sqrt(2.0 * std::numbers::pi));
  for (Eigen::Index g = 0; g < k.grid.size(); ++g) {
    double sum = 0.0;
    for (double v : x) {
      const double u = (k.grid(g) - v) / k.bandwidth;
      sum += std::exp(-0.5 * u * u);
    }
    k.density(g) = norm * sum;
  }
  return k;
}

double trapezoid(const Vec& x, const Vec& y) {
  if (x.size() != y.size()) throw Error(ErrorKind::dimension_mismatch, "trapezoid needs equal lengths");
  double s = 0.0;
  for (Eigen::Index i = 1; i < x.size(); ++i) s += 0.5 * (x(i) - x(i - 1)) * (y(i) + y(i - 1));
  return s;
}

Proportion proportion(std::size_t hits, std::size_t total) {
  Proportion p;
  p.hits = hits;
  p.total = total;
  if (total == 0) return p;
  p.rate = static_cast<double>(hits) / static_cast<double>(total);
  p.se = std::sqrt(p.rate * (1.0 - p.rate) / static_cast<double>(total));
  return p;
}

}  // namespace latfim
