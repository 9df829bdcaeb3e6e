#include "latfim/models/gaussian_mixture.hpp"

#include "latfim/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace latfim {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

int label_of(const Latent& z) {
  if (z(0) == 0.0) return 0;
  if (z(0) == 1.0) return 1;
  throw Error(ErrorKind::domain_violation, "mixture label must be 0 or 1", "z");
}

double single(const IndividualRecord& rec) {
  if (rec.n_obs() != 1) throw Error(ErrorKind::dimension_mismatch, "gaussian mixture records hold one value");
  return rec.y.front();
}

// log((1 - pi) N(y; mu1, 1)) and log(pi N(y; mu2, 1)); pi may be 0 or 1.
std::pair<double, double> log_parts(double y, double mu1, double mu2, double pi) {
  const double l0 = std::log1p(-pi) - kHalfLog2Pi - 0.5 * (y - mu1) * (y - mu1);
  const double l1 = std::log(pi) - kHalfLog2Pi - 0.5 * (y - mu2) * (y - mu2);
  return {l0, l1};
}

double log_sum(double a, double b) {
  const double top = std::max(a, b);
  if (top == -std::numeric_limits<double>::infinity()) return top;
  return top + std::log(std::exp(a - top) + std::exp(b - top));
}

double observed_loglik(const Dataset& data, double mu1, double mu2, double pi) {
  double l = 0.0;
  for (const auto& rec : data.records) {
    const auto [a, b] = log_parts(single(rec), mu1, mu2, pi);
    l += log_sum(a, b);
  }
  return l;
}

}  // namespace

double GaussianMixture2Model::responsibility(double y, const Vec& theta) const {
  const auto [a, b] = log_parts(y, theta(0), theta(1), theta(2));
  if (b == -std::numeric_limits<double>::infinity()) return 0.0;
  return 1.0 / (1.0 + std::exp(a - b));
}

double GaussianMixture2Model::complete_loglik(const IndividualRecord& rec, const Latent& z, const Vec& theta) const {
  const auto [a, b] = log_parts(single(rec), theta(0), theta(1), theta(2));
  return label_of(z) == 0 ? a : b;
}

Vec GaussianMixture2Model::complete_score(const IndividualRecord& rec, const Latent& z, const Vec& theta) const {
  const double y = single(rec), pi = theta(2);
  Vec g = Vec::Zero(3);
  if (label_of(z) == 0) {
    g(0) = y - theta(0);
    g(2) = -1.0 / (1.0 - pi);
  } else {
    g(1) = y - theta(1);
    g(2) = 1.0 / pi;
  }
  return g;
}

Mat GaussianMixture2Model::complete_hessian(const IndividualRecord& rec, const Latent& z, const Vec& theta) const {
  single(rec);
  const double pi = theta(2);
  Mat h = Mat::Zero(3, 3);
  if (label_of(z) == 0) {
    h(0, 0) = -1.0;
    h(2, 2) = -1.0 / ((1.0 - pi) * (1.0 - pi));
  } else {
    h(1, 1) = -1.0;
    h(2, 2) = -1.0 / (pi * pi);
  }
  return h;
}

Latent GaussianMixture2Model::sample_conditional(const IndividualRecord& rec, const Vec& theta, Rng& rng) const {
  return Latent::Constant(1, rng.uniform() < responsibility(single(rec), theta) ? 1.0 : 0.0);
}

Latent GaussianMixture2Model::sample_latent_prior(const IndividualRecord&, const Vec& theta, Rng& rng) const {
  return Latent::Constant(1, rng.uniform() < theta(2) ? 1.0 : 0.0);
}

std::pair<IndividualRecord, Latent> GaussianMixture2Model::simulate(const Vec& theta, const IndividualDesign&,
                                                                    Rng& rng) const {
  validate(theta);
  IndividualRecord rec;
  Latent z = sample_latent_prior(rec, theta, rng);
  rec.y.push_back(rng.normal(z(0) == 0.0 ? theta(0) : theta(1), 1.0));
  return {std::move(rec), std::move(z)};
}

double GaussianMixture2Model::marginal_loglik(const IndividualRecord& rec, const Vec& theta) const {
  const auto [a, b] = log_parts(single(rec), theta(0), theta(1), theta(2));
  return log_sum(a, b);
}

Vec GaussianMixture2Model::conditional_expected_score(const IndividualRecord& rec, const Vec& theta) const {
  const double r = responsibility(single(rec), theta);
  return (1.0 - r) * complete_score(rec, Latent::Constant(1, 0.0), theta) +
         r * complete_score(rec, Latent::Constant(1, 1.0), theta);
}

Vec GaussianMixture2Model::marginal_score(const IndividualRecord& rec, const Vec& theta) const {
  return conditional_expected_score(rec, theta);
}

Mat GaussianMixture2Model::marginal_hessian(const IndividualRecord& rec, const Vec& theta) const {
  const double r = responsibility(single(rec), theta);
  Mat h = Mat::Zero(3, 3);
  Vec mean = Vec::Zero(3);
  for (int k = 0; k < 2; ++k) {
    const Latent z = Latent::Constant(1, static_cast<double>(k));
    const double w = k == 0 ? 1.0 - r : r;
    const Vec g = complete_score(rec, z, theta);
    h += w * (complete_hessian(rec, z, theta) + g * g.transpose());
    mean += w * g;
  }
  h -= mean * mean.transpose();
  return 0.5 * (h + h.transpose());
}

Vec GaussianMixture2Model::initial_estimate(const Dataset& data) const {
  validate_dataset(data);
  std::vector<double> y;
  for (const auto& rec : data.records) y.push_back(single(rec));
  std::sort(y.begin(), y.end());
  const std::size_t half = std::max<std::size_t>(1, y.size() / 2);
  double lo = 0.0, hi = 0.0;
  for (std::size_t i = 0; i < half; ++i) lo += y[i];
  for (std::size_t i = y.size() - half; i < y.size(); ++i) hi += y[i];
  Vec t(3);
  t << hi / static_cast<double>(half), lo / static_cast<double>(half), 0.5;
  return t;
}

Vec canonical_gaussian_mixture(const Vec& theta) {
  if (theta(0) >= theta(1)) return theta;
  Vec t(3);
  t << theta(1), theta(0), 1.0 - theta(2);
  return t;
}

EmResult gaussian_mixture_em(const Dataset& data, const Vec& theta0, double tol, int max_iter) {
  if (data.n() < 2) throw Error(ErrorKind::dimension_mismatch, "EM needs at least two observations");
  if (theta0.size() != 3) throw Error(ErrorKind::dimension_mismatch, "gaussian mixture expects 3 parameters");
  if (!(theta0(2) >= 0.0 && theta0(2) <= 1.0)) throw domain_violation("pi", "must lie in [0, 1]");
  if (!std::isfinite(theta0(0)) || !std::isfinite(theta0(1))) throw domain_violation("mu", "is not finite");
  GaussianMixture2Model model;
  const double n = static_cast<double>(data.n());
  EmResult out;
  out.theta = theta0;

  // A start with all mass on one component stays there: its mean is the
  // sample mean after one step.
  if (theta0(2) == 0.0 || theta0(2) == 1.0) {
    double mean = 0.0;
    for (const auto& rec : data.records) mean += single(rec);
    mean /= n;
    out.theta(theta0(2) == 0.0 ? 0 : 1) = mean;
    out.loglik_trace.push_back(observed_loglik(data, theta0(0), theta0(1), theta0(2)));
    out.loglik_trace.push_back(observed_loglik(data, out.theta(0), out.theta(1), out.theta(2)));
    out.iterations = 1;
    out.converged = true;
    return out;
  }

  Vec theta = theta0, best = theta0;
  double ll = observed_loglik(data, theta(0), theta(1), theta(2));
  double best_ll = ll;
  out.loglik_trace.push_back(ll);
  for (int it = 1; it <= max_iter; ++it) {
    double sr = 0.0, sry = 0.0, sy = 0.0;
    for (const auto& rec : data.records) {
      const double y = single(rec);
      const double r = model.responsibility(y, theta);
      sr += r;
      sry += r * y;
      sy += y;
    }
    Vec next = theta;
    if (sr < n) next(0) = (sy - sry) / (n - sr);
    if (sr > 0.0) next(1) = sry / sr;
    next(2) = sr / n;
    if (!(next(2) > 0.0 && next(2) < 1.0) || !next.allFinite())
      throw Error(ErrorKind::mstep_failure, "EM collapsed onto a single component");
    const double next_ll = observed_loglik(data, next(0), next(1), next(2));
    out.loglik_trace.push_back(next_ll);
    out.iterations = it;
    theta = next;
    if (next_ll > best_ll) {
      best_ll = next_ll;
      best = next;
    }
    const double gain = next_ll - ll;
    ll = next_ll;
    if (gain < tol) {
      out.converged = true;
      break;
    }
  }
  out.theta = canonical_gaussian_mixture(out.converged ? theta : best);
  return out;
}

}  // namespace latfim
