#include "latfim/models/poisson_mixture.hpp"

#include "latfim/errors.hpp"

#include <algorithm>
#include <cmath>

namespace latfim {

namespace {

constexpr double kProportionFloor = 1e-10;

std::size_t label_of(const Latent& z, std::size_t k) {
  const double v = z(0);
  if (!(v >= 0.0) || v >= static_cast<double>(k) || v != std::floor(v))
    throw Error(ErrorKind::domain_violation, "mixture label out of range", "z");
  return static_cast<std::size_t>(v);
}

double observation(const IndividualRecord& rec) {
  if (rec.n_obs() != 1) throw Error(ErrorKind::dimension_mismatch, "poisson mixture records hold one count");
  const double y = rec.y.front();
  if (!(y >= 0.0) || y != std::floor(y)) throw Error(ErrorKind::domain_violation, "count must be a non-negative integer", "y");
  return y;
}

}  // namespace

PoissonMixtureModel::PoissonMixtureModel(std::size_t components) : k_(components) {
  if (k_ == 0) throw Error(ErrorKind::config_error, "poisson mixture needs at least one component");
}

std::vector<std::string> PoissonMixtureModel::param_names() const {
  std::vector<std::string> names;
  for (std::size_t k = 0; k < k_; ++k) names.push_back("lambda" + std::to_string(k + 1));
  for (std::size_t k = 0; k + 1 < k_; ++k) names.push_back("alpha" + std::to_string(k + 1));
  return names;
}

std::vector<ParamKind> PoissonMixtureModel::param_kinds() const {
  std::vector<ParamKind> kinds(k_, ParamKind::positive);
  kinds.insert(kinds.end(), k_ - 1, ParamKind::proportion);
  return kinds;
}

void PoissonMixtureModel::validate(const Vec& theta) const {
  LatentModel::validate(theta);
  double used = 0.0;
  for (std::size_t k = 0; k + 1 < k_; ++k) used += theta(static_cast<Eigen::Index>(k_ + k));
  if (!(used < 1.0)) throw domain_violation("alpha" + std::to_string(k_), "implied proportion must be positive");
}

Vec PoissonMixtureModel::proportions(const Vec& theta) const {
  Vec a(static_cast<Eigen::Index>(k_));
  double used = 0.0;
  for (std::size_t k = 0; k + 1 < k_; ++k) {
    a(static_cast<Eigen::Index>(k)) = theta(static_cast<Eigen::Index>(k_ + k));
    used += a(static_cast<Eigen::Index>(k));
  }
  a(static_cast<Eigen::Index>(k_ - 1)) = 1.0 - used;
  return a;
}

Vec poisson_posterior(double y, const Vec& theta, std::size_t components) {
  const auto K = static_cast<Eigen::Index>(components);
  if (theta.size() != 2 * K - 1) throw Error(ErrorKind::dimension_mismatch, "theta length does not match K");
  Vec logw(K);
  double used = 0.0;
  for (Eigen::Index k = 0; k < K; ++k) {
    const double alpha = k + 1 < K ? theta(K + k) : 1.0 - used;
    if (k + 1 < K) used += alpha;
    const double lambda = theta(k);
    logw(k) = std::log(alpha) - lambda + y * std::log(lambda);
  }
  const double top = logw.maxCoeff();
  Vec w = (logw.array() - top).exp().matrix();
  return w / w.sum();
}

double PoissonMixtureModel::complete_loglik(const IndividualRecord& rec, const Latent& z, const Vec& theta) const {
  const double y = observation(rec);
  const std::size_t k = label_of(z, k_);
  const double lambda = theta(static_cast<Eigen::Index>(k));
  return std::log(proportions(theta)(static_cast<Eigen::Index>(k))) + y * std::log(lambda) - lambda - std::lgamma(y + 1.0);
}

Vec PoissonMixtureModel::complete_score(const IndividualRecord& rec, const Latent& z, const Vec& theta) const {
  const double y = observation(rec);
  const auto k = static_cast<Eigen::Index>(label_of(z, k_));
  const auto K = static_cast<Eigen::Index>(k_);
  const Vec a = proportions(theta);
  Vec g = Vec::Zero(theta.size());
  g(k) = y / theta(k) - 1.0;
  if (k + 1 < K) {
    g(K + k) = 1.0 / a(k);
  } else {
    for (Eigen::Index l = 0; l + 1 < K; ++l) g(K + l) = -1.0 / a(K - 1);
  }
  return g;
}

Mat PoissonMixtureModel::complete_hessian(const IndividualRecord& rec, const Latent& z, const Vec& theta) const {
  const double y = observation(rec);
  const auto k = static_cast<Eigen::Index>(label_of(z, k_));
  const auto K = static_cast<Eigen::Index>(k_);
  const Vec a = proportions(theta);
  Mat h = Mat::Zero(theta.size(), theta.size());
  h(k, k) = -y / (theta(k) * theta(k));
  if (k + 1 < K) {
    h(K + k, K + k) = -1.0 / (a(k) * a(k));
  } else {
    h.bottomRightCorner(K - 1, K - 1).setConstant(-1.0 / (a(K - 1) * a(K - 1)));
  }
  return h;
}

Latent PoissonMixtureModel::sample_conditional(const IndividualRecord& rec, const Vec& theta, Rng& rng) const {
  const Vec w = poisson_posterior(observation(rec), theta, k_);
  const double u = rng.uniform();
  double c = 0.0;
  Eigen::Index k = 0;
  for (; k + 1 < w.size(); ++k) {
    c += w(k);
    if (u < c) break;
  }
  return Latent::Constant(1, static_cast<double>(k));
}

Latent PoissonMixtureModel::sample_latent_prior(const IndividualRecord&, const Vec& theta, Rng& rng) const {
  const Vec a = proportions(theta);
  const double u = rng.uniform();
  double c = 0.0;
  Eigen::Index k = 0;
  for (; k + 1 < a.size(); ++k) {
    c += a(k);
    if (u < c) break;
  }
  return Latent::Constant(1, static_cast<double>(k));
}

std::pair<IndividualRecord, Latent> PoissonMixtureModel::simulate(const Vec& theta, const IndividualDesign&,
                                                                  Rng& rng) const {
  validate(theta);
  IndividualRecord rec;
  Latent z = sample_latent_prior(rec, theta, rng);
  rec.y.push_back(static_cast<double>(rng.poisson(theta(static_cast<Eigen::Index>(z(0))))));
  return {std::move(rec), std::move(z)};
}

double PoissonMixtureModel::marginal_loglik(const IndividualRecord& rec, const Vec& theta) const {
  const double y = observation(rec);
  const Vec a = proportions(theta);
  Vec logp(a.size());
  for (Eigen::Index k = 0; k < a.size(); ++k)
    logp(k) = std::log(a(k)) + y * std::log(theta(k)) - theta(k) - std::lgamma(y + 1.0);
  const double top = logp.maxCoeff();
  return top + std::log((logp.array() - top).exp().sum());
}

Vec PoissonMixtureModel::conditional_expected_score(const IndividualRecord& rec, const Vec& theta) const {
  const Vec w = poisson_posterior(observation(rec), theta, k_);
  Vec g = Vec::Zero(theta.size());
  for (Eigen::Index k = 0; k < w.size(); ++k) g += w(k) * complete_score(rec, Latent::Constant(1, static_cast<double>(k)), theta);
  return g;
}

Vec PoissonMixtureModel::marginal_score(const IndividualRecord& rec, const Vec& theta) const {
  return conditional_expected_score(rec, theta);
}

// Louis: H = E[H_c | y] + E[g_c g_c^T | y] - E[g_c | y] E[g_c | y]^T, exact over K labels.
Mat PoissonMixtureModel::marginal_hessian(const IndividualRecord& rec, const Vec& theta) const {
  const Vec w = poisson_posterior(observation(rec), theta, k_);
  const Eigen::Index p = theta.size();
  Mat h = Mat::Zero(p, p);
  Vec mean = Vec::Zero(p);
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    const Latent z = Latent::Constant(1, static_cast<double>(k));
    const Vec g = complete_score(rec, z, theta);
    h += w(k) * (complete_hessian(rec, z, theta) + g * g.transpose());
    mean += w(k) * g;
  }
  h -= mean * mean.transpose();
  return 0.5 * (h + h.transpose());
}

Vec PoissonMixtureModel::initial_estimate(const Dataset& data) const {
  validate_dataset(data);
  std::vector<double> y;
  for (const auto& rec : data.records) y.push_back(observation(rec));
  std::sort(y.begin(), y.end());
  const auto K = static_cast<Eigen::Index>(k_);
  Vec t(2 * K - 1);
  const std::size_t n = y.size();
  double prev = 0.0;
  for (std::size_t k = 0; k < k_; ++k) {
    const std::size_t lo = std::min(k * n / k_, n - 1);
    const std::size_t hi = std::min(n, std::max(lo + 1, (k + 1) * n / k_));
    double m = 0.0;
    for (std::size_t i = lo; i < hi; ++i) m += y[i];
    m = m / static_cast<double>(hi - lo) + 0.5;
    m = std::max(m, prev + 0.5);
    t(static_cast<Eigen::Index>(k)) = prev = m;
  }
  for (Eigen::Index k = 0; k + 1 < K; ++k) t(K + k) = 1.0 / static_cast<double>(K);
  return t;
}

Vec PoissonMixtureModel::stats(const IndividualRecord& rec, const Latent& z) const {
  const double y = observation(rec);
  const auto k = static_cast<Eigen::Index>(label_of(z, k_));
  const auto K = static_cast<Eigen::Index>(k_);
  Vec s = Vec::Zero(2 * K);
  s(k) = 1.0;
  s(K + k) = y;
  return s;
}

double PoissonMixtureModel::psi(const IndividualRecord&, const Vec&) const { return 0.0; }

Vec PoissonMixtureModel::phi(const IndividualRecord&, const Vec& theta) const {
  const auto K = static_cast<Eigen::Index>(k_);
  const Vec a = proportions(theta);
  Vec p(2 * K);
  for (Eigen::Index k = 0; k < K; ++k) {
    p(k) = std::log(a(k)) - theta(k);
    p(K + k) = std::log(theta(k));
  }
  return p;
}

Vec PoissonMixtureModel::dpsi(const IndividualRecord&, const Vec& theta) const { return Vec::Zero(theta.size()); }

Mat PoissonMixtureModel::dphi(const IndividualRecord&, const Vec& theta) const {
  const auto K = static_cast<Eigen::Index>(k_);
  const Vec a = proportions(theta);
  Mat d = Mat::Zero(2 * K, theta.size());
  for (Eigen::Index k = 0; k < K; ++k) {
    d(k, k) = -1.0;
    d(K + k, k) = 1.0 / theta(k);
    if (k + 1 < K) {
      d(k, K + k) = 1.0 / a(k);
    } else {
      for (Eigen::Index l = 0; l + 1 < K; ++l) d(k, K + l) = -1.0 / a(K - 1);
    }
  }
  return d;
}

double PoissonMixtureModel::base_term(const IndividualRecord& rec, const Latent&) const {
  return -std::lgamma(observation(rec) + 1.0);
}

MaximizeResult PoissonMixtureModel::argmax_complete(const Dataset& data, std::span<const Vec> s) const {
  if (s.size() != data.n()) throw Error(ErrorKind::dimension_mismatch, "one statistic per individual expected");
  const auto K = static_cast<Eigen::Index>(k_);
  Vec total = Vec::Zero(2 * K);
  for (const auto& si : s) total += si;
  const double n = static_cast<double>(s.size());
  MaximizeResult out;
  out.theta.resize(2 * K - 1);
  for (Eigen::Index k = 0; k < K; ++k) {
    if (!(total(k) > 0.0))
      throw Error(ErrorKind::mstep_failure, "component " + std::to_string(k + 1) + " carries no weight");
    out.theta(k) = total(K + k) / total(k);
    if (!(out.theta(k) > 0.0)) {
      out.theta(k) = kProportionFloor;
      out.clamped = true;
    }
  }
  for (Eigen::Index k = 0; k + 1 < K; ++k) {
    double a = total(k) / n;
    if (a < kProportionFloor) {
      a = kProportionFloor;
      out.clamped = true;
    }
    out.theta(K + k) = a;
  }
  return out;
}

Vec PoissonMixtureModel::conditional_expected_stats(const IndividualRecord& rec, const Vec& theta) const {
  const double y = observation(rec);
  const Vec w = poisson_posterior(y, theta, k_);
  const auto K = static_cast<Eigen::Index>(k_);
  Vec s(2 * K);
  s.head(K) = w;
  s.tail(K) = y * w;
  return s;
}

}  // namespace latfim
