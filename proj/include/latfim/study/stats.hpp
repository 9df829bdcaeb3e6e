#pragma once

#include "latfim/types.hpp"

#include <cstddef>
#include <span>

namespace latfim {

struct SampleSummary {
  std::size_t count = 0;
  double mean = 0.0;
  double sd = 0.0;       // (count - 1) denominator; 0 for a single value
  double bias = 0.0;     // mean - reference
  double rmsd = 0.0;     // sqrt(mean((x - reference)^2))
  double bias_se = 0.0;  // sd / sqrt(count)
};

SampleSummary summarize(std::span<const double> x, double reference);

// Moment ratios with population (1/N) central moments.
double skewness(std::span<const double> x);
double excess_kurtosis(std::span<const double> x);

// 0.9 min(sd, IQR / 1.34) N^{-1/5}
double silverman_bandwidth(std::span<const double> x);

struct KernelDensity {
  Vec grid;
  Vec density;
  double bandwidth = 0.0;
};

// Gaussian kernel on an evenly spaced grid over [min - 4h, max + 4h].
// Throws DomainViolation for a constant sample (zero bandwidth).
KernelDensity kernel_density(std::span<const double> x, std::size_t points = 512);

double trapezoid(const Vec& x, const Vec& y);

struct Proportion {
  std::size_t hits = 0;
  std::size_t total = 0;
  double rate = 0.0;
  double se = 0.0;  // binomial sqrt(p (1 - p) / total)
};

Proportion proportion(std::size_t hits, std::size_t total);

}  // namespace latfim
