#include "latfim/models/lmm.hpp"

#include "latfim/errors.hpp"
#include "latfim/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace latfim {

namespace {

constexpr double kVarianceFloor = 1e-10;
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double sum_of(const std::vector<double>& y) {
  double s = 0.0;
  for (double v : y) s += v;
  return s;
}

}  // namespace

double LinearMixedModel::complete_loglik(const IndividualRecord& rec, const Latent& z, const Vec& theta) const {
  const double beta = theta(0), eta2 = theta(1), sigma2 = theta(2), zi = z(0);
  double rss = 0.0;
  for (double y : rec.y) rss += (y - beta - zi) * (y - beta - zi);
  const double J = static_cast<double>(rec.n_obs());
  return -0.5 * (J + 1.0) * kLog2Pi - 0.5 * std::log(eta2) - zi * zi / (2.0 * eta2) - 0.5 * J * std::log(sigma2) -
         rss / (2.0 * sigma2);
}

Vec LinearMixedModel::complete_score(const IndividualRecord& rec, const Latent& z, const Vec& theta) const {
  const double beta = theta(0), eta2 = theta(1), sigma2 = theta(2), zi = z(0);
  double r = 0.0, rss = 0.0;
  for (double y : rec.y) {
    r += y - beta - zi;
    rss += (y - beta - zi) * (y - beta - zi);
  }
  const double J = static_cast<double>(rec.n_obs());
  Vec g(3);
  g << r / sigma2, -0.5 / eta2 + zi * zi / (2.0 * eta2 * eta2), -0.5 * J / sigma2 + rss / (2.0 * sigma2 * sigma2);
  return g;
}

Mat LinearMixedModel::complete_hessian(const IndividualRecord& rec, const Latent& z, const Vec& theta) const {
  const double beta = theta(0), eta2 = theta(1), sigma2 = theta(2), zi = z(0);
  double r = 0.0, rss = 0.0;
  for (double y : rec.y) {
    r += y - beta - zi;
    rss += (y - beta - zi) * (y - beta - zi);
  }
  const double J = static_cast<double>(rec.n_obs());
  const double s4 = sigma2 * sigma2;
  Mat h = Mat::Zero(3, 3);
  h(0, 0) = -J / sigma2;
  h(0, 2) = h(2, 0) = -r / s4;
  h(1, 1) = 0.5 / (eta2 * eta2) - zi * zi / (eta2 * eta2 * eta2);
  h(2, 2) = 0.5 * J / s4 - rss / (s4 * sigma2);
  return h;
}

std::pair<double, double> LinearMixedModel::conditional_moments(const IndividualRecord& rec, const Vec& theta) const {
  const double beta = theta(0), eta2 = theta(1), sigma2 = theta(2);
  const double J = static_cast<double>(rec.n_obs());
  const double a = sigma2 + J * eta2;
  const double r = sum_of(rec.y) - J * beta;
  return {eta2 * r / a, eta2 * sigma2 / a};
}

Latent LinearMixedModel::sample_conditional(const IndividualRecord& rec, const Vec& theta, Rng& rng) const {
  const auto [m, v] = conditional_moments(rec, theta);
  Latent z(1);
  z(0) = rng.normal(m, std::sqrt(v));
  return z;
}

Latent LinearMixedModel::sample_latent_prior(const IndividualRecord&, const Vec& theta, Rng& rng) const {
  Latent z(1);
  z(0) = rng.normal(0.0, std::sqrt(theta(1)));
  return z;
}

Vec LinearMixedModel::default_proposal_scales(const Vec& theta) const {
  return Vec::Constant(1, std::sqrt(theta(1)));
}

std::pair<IndividualRecord, Latent> LinearMixedModel::simulate(const Vec& theta, const IndividualDesign& design,
                                                               Rng& rng) const {
  validate(theta);
  if (design.n_obs == 0) throw Error(ErrorKind::config_error, "lmm design needs at least one observation");
  IndividualRecord rec;
  rec.times = design.times;
  Latent z(1);
  z(0) = rng.normal(0.0, std::sqrt(theta(1)));
  const double sd = std::sqrt(theta(2));
  rec.y.resize(design.n_obs);
  for (auto& y : rec.y) y = theta(0) + z(0) + rng.normal(0.0, sd);
  return {std::move(rec), std::move(z)};
}

LmmMarginal lmm_analytic(const Vec& theta, const IndividualRecord& rec) {
  const double beta = theta(0), eta2 = theta(1), sigma2 = theta(2);
  if (!(eta2 >= 0.0) || !(sigma2 > 0.0) || !std::isfinite(beta))
    throw domain_violation(!std::isfinite(beta) ? "beta" : (eta2 >= 0.0 ? "sigma2" : "eta2"), "is outside its domain");
  const double J = static_cast<double>(rec.n_obs());
  const double a = sigma2 + J * eta2;
  const double ybar = sum_of(rec.y) / J;
  const double R = J * (ybar - beta);
  double W = 0.0;
  for (double y : rec.y) W += (y - ybar) * (y - ybar);
  const double s4 = sigma2 * sigma2, a2 = a * a, a3 = a2 * a;

  LmmMarginal out;
  out.loglik = -0.5 * J * kLog2Pi - 0.5 * (J - 1.0) * std::log(sigma2) - W / (2.0 * sigma2) - 0.5 * std::log(a) -
               R * R / (2.0 * J * a);
  out.score.resize(3);
  out.score << R / a, -0.5 * J / a + R * R / (2.0 * a2),
      -0.5 * (J - 1.0) / sigma2 + W / (2.0 * s4) - 0.5 / a + R * R / (2.0 * J * a2);
  Mat& h = out.hessian;
  h.resize(3, 3);
  h(0, 0) = -J / a;
  h(0, 1) = h(1, 0) = -J * R / a2;
  h(0, 2) = h(2, 0) = -R / a2;
  h(1, 1) = J * J / (2.0 * a2) - J * R * R / a3;
  h(1, 2) = h(2, 1) = J / (2.0 * a2) - R * R / a3;
  h(2, 2) = 0.5 * (J - 1.0) / s4 - W / (s4 * sigma2) + 0.5 / a2 - R * R / (J * a3);
  return out;
}

FimMatrix lmm_analytic_fim(const Vec& theta, std::size_t n_obs) {
  LinearMixedModel model;
  if (theta.size() != 3) throw Error(ErrorKind::dimension_mismatch, "lmm expects 3 parameters");
  if (!(theta(1) >= 0.0)) throw domain_violation("eta2", "must be non-negative");
  if (!(theta(2) > 0.0)) throw domain_violation("sigma2", "must be strictly positive");
  if (n_obs == 0) throw Error(ErrorKind::dimension_mismatch, "J must be at least 1");
  const double J = static_cast<double>(n_obs), sigma2 = theta(2);
  const double a = sigma2 + J * theta(1);
  Mat f = Mat::Zero(3, 3);
  f(0, 0) = J / a;
  f(1, 1) = 0.5 * (J / a) * (J / a);
  f(2, 2) = 0.5 * ((J - 1.0) / (sigma2 * sigma2) + 1.0 / (a * a));
  f(1, 2) = 0.5 * J / (a * a);
  return FimMatrix(f, Provenance::score, 1, model.param_names());
}

double LinearMixedModel::marginal_loglik(const IndividualRecord& rec, const Vec& theta) const {
  return lmm_analytic(theta, rec).loglik;
}
Vec LinearMixedModel::marginal_score(const IndividualRecord& rec, const Vec& theta) const {
  return lmm_analytic(theta, rec).score;
}
Mat LinearMixedModel::marginal_hessian(const IndividualRecord& rec, const Vec& theta) const {
  return lmm_analytic(theta, rec).hessian;
}

Vec LinearMixedModel::conditional_expected_score(const IndividualRecord& rec, const Vec& theta) const {
  const double beta = theta(0), eta2 = theta(1), sigma2 = theta(2);
  const auto [m, v] = conditional_moments(rec, theta);
  const double J = static_cast<double>(rec.n_obs());
  double r = 0.0, rss = 0.0;
  for (double y : rec.y) {
    r += y - beta - m;
    rss += (y - beta - m) * (y - beta - m);
  }
  rss += J * v;
  Vec g(3);
  g << r / sigma2, -0.5 / eta2 + (m * m + v) / (2.0 * eta2 * eta2), -0.5 * J / sigma2 + rss / (2.0 * sigma2 * sigma2);
  return g;
}

Vec LinearMixedModel::initial_estimate(const Dataset& data) const {
  validate_dataset(data);
  double total = 0.0, count = 0.0, within = 0.0, within_df = 0.0;
  std::vector<double> means;
  for (const auto& rec : data.records) {
    const double J = static_cast<double>(rec.n_obs());
    const double m = sum_of(rec.y) / J;
    means.push_back(m);
    total += m * J;
    count += J;
    for (double y : rec.y) within += (y - m) * (y - m);
    within_df += J - 1.0;
  }
  const double beta = total / count;
  double between = 0.0;
  for (double m : means) between += (m - beta) * (m - beta);
  between /= std::max<double>(1.0, static_cast<double>(means.size()) - 1.0);
  const double sigma2 = within_df > 0.0 ? std::max(within / within_df, 1e-3) : std::max(between / 2.0, 1e-3);
  const double jbar = count / static_cast<double>(data.n());
  const double eta2 = std::max(between - sigma2 / jbar, 0.1 * std::max(between, 1e-2));
  Vec t(3);
  t << beta, eta2, sigma2;
  return t;
}

Vec LinearMixedModel::stats(const IndividualRecord& rec, const Latent& z) const {
  double s2 = 0.0, s3 = 0.0;
  for (double y : rec.y) {
    s2 += (y - z(0)) * (y - z(0));
    s3 += y - z(0);
  }
  Vec s(3);
  s << z(0) * z(0), s2, s3;
  return s;
}

double LinearMixedModel::psi(const IndividualRecord& rec, const Vec& theta) const {
  const double J = static_cast<double>(rec.n_obs());
  return 0.5 * std::log(theta(1)) + 0.5 * J * std::log(theta(2)) + J * theta(0) * theta(0) / (2.0 * theta(2));
}

Vec LinearMixedModel::phi(const IndividualRecord&, const Vec& theta) const {
  Vec p(3);
  p << -0.5 / theta(1), -0.5 / theta(2), theta(0) / theta(2);
  return p;
}

Vec LinearMixedModel::dpsi(const IndividualRecord& rec, const Vec& theta) const {
  const double J = static_cast<double>(rec.n_obs());
  const double beta = theta(0), sigma2 = theta(2);
  Vec d(3);
  d << J * beta / sigma2, 0.5 / theta(1), 0.5 * J / sigma2 - J * beta * beta / (2.0 * sigma2 * sigma2);
  return d;
}

Mat LinearMixedModel::dphi(const IndividualRecord&, const Vec& theta) const {
  const double eta2 = theta(1), sigma2 = theta(2);
  Mat d = Mat::Zero(3, 3);
  d(0, 1) = 0.5 / (eta2 * eta2);
  d(1, 2) = 0.5 / (sigma2 * sigma2);
  d(2, 0) = 1.0 / sigma2;
  d(2, 2) = -theta(0) / (sigma2 * sigma2);
  return d;
}

double LinearMixedModel::base_term(const IndividualRecord& rec, const Latent&) const {
  return -0.5 * (static_cast<double>(rec.n_obs()) + 1.0) * kLog2Pi;
}

MaximizeResult LinearMixedModel::argmax_complete(const Dataset& data, std::span<const Vec> s) const {
  if (s.size() != data.n()) throw Error(ErrorKind::dimension_mismatch, "one statistic per individual expected");
  double z2 = 0.0, rss = 0.0, resid = 0.0, count = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    z2 += s[i](0);
    rss += s[i](1);
    resid += s[i](2);
    count += static_cast<double>(data.records[i].n_obs());
  }
  const double n = static_cast<double>(s.size());
  const double beta = resid / count;
  double eta2 = z2 / n;
  double sigma2 = (rss - 2.0 * beta * resid + count * beta * beta) / count;
  MaximizeResult out;
  if (!std::isfinite(eta2) || !std::isfinite(sigma2) || !std::isfinite(beta))
    throw Error(ErrorKind::mstep_failure, "non-finite sufficient statistics");
  if (eta2 < kVarianceFloor) {
    eta2 = kVarianceFloor;
    out.clamped = true;
  }
  if (sigma2 < kVarianceFloor) {
    sigma2 = kVarianceFloor;
    out.clamped = true;
  }
  out.theta.resize(3);
  out.theta << beta, eta2, sigma2;
  return out;
}

Vec LinearMixedModel::conditional_expected_stats(const IndividualRecord& rec, const Vec& theta) const {
  const auto [m, v] = conditional_moments(rec, theta);
  const double J = static_cast<double>(rec.n_obs());
  double s2 = 0.0, s3 = 0.0;
  for (double y : rec.y) {
    s2 += (y - m) * (y - m);
    s3 += y - m;
  }
  Vec s(3);
  s << m * m + v, s2 + J * v, s3;
  return s;
}

Vec lmm_marginal_mle(const Dataset& data) {
  LinearMixedModel model;
  Vec start = model.initial_estimate(data);
  // Balanced-design closed form as the starting point.
  bool balanced = true;
  for (const auto& rec : data.records) balanced = balanced && rec.n_obs() == data.records.front().n_obs();
  const double J = static_cast<double>(data.records.front().n_obs());
  if (balanced && J > 1.0) {
    double grand = 0.0, W = 0.0, B = 0.0;
    for (const auto& rec : data.records) grand += sum_of(rec.y) / J;
    grand /= static_cast<double>(data.n());
    for (const auto& rec : data.records) {
      const double m = sum_of(rec.y) / J;
      for (double y : rec.y) W += (y - m) * (y - m);
      B += (m - grand) * (m - grand);
    }
    const double sigma2 = W / (static_cast<double>(data.n()) * (J - 1.0));
    const double a = J * B / static_cast<double>(data.n());
    const double eta2 = (a - sigma2) / J;
    if (eta2 > 0.0) start << grand, eta2, sigma2;
  }
  auto value = [&](const Vec& t) {
    if (!(t(1) > 0.0 && t(2) > 0.0)) return -std::numeric_limits<double>::infinity();
    double l = 0.0;
    for (const auto& rec : data.records) l += lmm_analytic(t, rec).loglik;
    return l;
  };
  auto gradient = [&](const Vec& t) {
    Vec g = Vec::Zero(3);
    for (const auto& rec : data.records) g += lmm_analytic(t, rec).score;
    return g;
  };
  OptimOptions opts;
  opts.gradient_tol = 1e-10;
  opts.max_iterations = 1000;
  return maximize_bounded(value, gradient, start, model.param_kinds(), opts).theta;
}

}  // namespace latfim
