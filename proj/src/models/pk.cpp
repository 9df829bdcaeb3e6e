#include "latfim/models/pk.hpp"

#include "latfim/errors.hpp"
#include "latfim/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

namespace latfim {

namespace {

constexpr double kVarianceFloor = 1e-10;
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// g(ke) = (exp(-ke t) - exp(-ka t)) / (ka - ke) and its ke-derivative, written
// with u = (ka - ke) t so that both stay finite and accurate as ka -> ke.
struct Bracket {
  double g = 0.0;
  double dg_dke = 0.0;
};

Bracket bracket(double t, double ka, double ke) {
  const double delta = ka - ke;
  const double u = delta * t;
  const double eke = std::exp(-ke * t);
  Bracket b;
  if (std::abs(u) < 0.5) {
    // (1 - e^{-u})/u = sum_m (-u)^m/(m+1)!, (1 - e^{-u} - u)/u^2 = -sum_m (-u)^m/(m+2)!
    double s1 = 0.0, t1 = 1.0, s3 = 0.0, t3 = 0.5;
    for (int m = 0; m < 25; ++m) {
      s1 += t1;
      s3 -= t3;
      t1 *= -u / static_cast<double>(m + 2);
      t3 *= -u / static_cast<double>(m + 3);
    }
    b.g = eke * t * s1;
    b.dg_dke = eke * t * t * s3;
  } else {
    const double eka = std::exp(-ka * t);
    b.g = (eke - eka) / delta;
    b.dg_dke = (eke - eka - u * eke) / (delta * delta);
  }
  return b;
}

}  // namespace

double pk_prediction(double dose, double t, double ka, double volume, double clearance) {
  if (t <= 0.0) return 0.0;
  const double ke = clearance / volume;
  if (std::abs(volume * ka - clearance) < 1e-8 * volume * ka) return dose * ka * t * std::exp(-ka * t) / volume;
  return dose * ka / volume * bracket(t, ka, ke).g;
}

PkValueAndVolumeDerivative pk_prediction_dv(double dose, double t, double ka, double volume, double clearance) {
  PkValueAndVolumeDerivative out;
  if (t <= 0.0) return out;
  const double ke = clearance / volume;
  const Bracket b = bracket(t, ka, ke);
  const double scale = dose * ka / volume;
  out.value = scale * b.g;
  // d ke / dV = -Cl / V^2
  out.d_volume = -out.value / volume - scale * b.dg_dke * clearance / (volume * volume);
  return out;
}

IndividualDesign pk_reference_design() {
  IndividualDesign d;
  d.times = {0.25, 0.5, 1.0, 2.0, 3.5, 5.0, 7.0, 9.0, 12.0, 24.0};
  d.n_obs = d.times.size();
  d.dose = 320.0;
  return d;
}

namespace {

double dose_of(const IndividualRecord& rec) {
  if (!rec.dose) throw Error(ErrorKind::dimension_mismatch, "PK record needs a dose");
  if (rec.times.size() != rec.n_obs()) throw Error(ErrorKind::dimension_mismatch, "PK record needs one time per observation");
  return *rec.dose;
}

double rss_of(const IndividualRecord& rec, double ka, double volume, double clearance) {
  const double d = dose_of(rec);
  double rss = 0.0;
  for (std::size_t j = 0; j < rec.n_obs(); ++j) {
    const double r = rec.y[j] - pk_prediction(d, rec.times[j], ka, volume, clearance);
    rss += r * r;
  }
  return rss;
}

// Latents are the logs of `mu` with variances `omega2`. Without a fixed
// volume they are (ka, V, Cl); with one they are (ka, Cl).
std::pair<IndividualRecord, Latent> simulate_pk(const Vec& mu, const Vec& omega2, double sigma2,
                                                const IndividualDesign& design, Rng& rng,
                                                std::optional<double> fixed_volume) {
  if (!design.dose || design.times.empty()) throw Error(ErrorKind::config_error, "PK design needs a dose and times");
  IndividualRecord rec;
  rec.times = design.times;
  rec.dose = design.dose;
  Latent z(mu.size());
  for (Eigen::Index k = 0; k < mu.size(); ++k) z(k) = rng.normal(std::log(mu(k)), std::sqrt(omega2(k)));
  const double ka = std::exp(z(0));
  const double volume = fixed_volume ? *fixed_volume : std::exp(z(1));
  const double clearance = fixed_volume ? std::exp(z(1)) : std::exp(z(2));
  const double sd = std::sqrt(sigma2);
  for (double t : rec.times) rec.y.push_back(pk_prediction(*rec.dose, t, ka, volume, clearance) + rng.normal(0.0, sd));
  return {std::move(rec), std::move(z)};
}

// Typical (ka, V, Cl) from the mean concentration curve: terminal slope and
// AUC give Cl and V, a grid then a quasi-Newton refinement fit all three.
Vec pooled_curve_fit(const Dataset& data) {
  validate_dataset(data);
  const IndividualRecord& ref = data.records.front();
  const double dose = dose_of(ref);
  std::vector<double> mean(ref.n_obs(), 0.0);
  double count = 0.0;
  for (const auto& rec : data.records) {
    if (rec.times != ref.times) continue;
    for (std::size_t j = 0; j < rec.n_obs(); ++j) mean[j] += rec.y[j];
    count += 1.0;
  }
  for (auto& m : mean) m /= count;
  const auto& t = ref.times;
  const std::size_t J = t.size();
  double ke = 0.1;
  if (J >= 2 && mean[J - 1] > 0.0 && mean[J - 2] > mean[J - 1])
    ke = std::log(mean[J - 2] / mean[J - 1]) / (t[J - 1] - t[J - 2]);
  double auc = 0.5 * t[0] * mean[0];
  for (std::size_t j = 1; j < J; ++j) auc += 0.5 * (t[j] - t[j - 1]) * (mean[j] + mean[j - 1]);
  if (mean[J - 1] > 0.0) auc += mean[J - 1] / ke;
  double clearance = auc > 0.0 ? dose / auc : 1.0;
  double volume = clearance / ke;

  auto rss = [&](double ka, double v, double cl) {
    double s = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      const double r = mean[j] - pk_prediction(dose, t[j], ka, v, cl);
      s += r * r;
    }
    return s;
  };
  double ka = 1.0, best = std::numeric_limits<double>::infinity();
  for (double cand = 0.05; cand < 50.0; cand *= 1.25) {
    const double r = rss(cand, volume, clearance);
    if (r < best) {
      best = r;
      ka = cand;
    }
  }
  auto value = [&](const Vec& x) {
    if (!(x.array() > 0.0).all()) return -std::numeric_limits<double>::infinity();
    return -rss(x(0), x(1), x(2));
  };
  auto gradient = [&](const Vec& x) {
    Vec g(3);
    for (int l = 0; l < 3; ++l) {
      Vec up = x, down = x;
      const double h = 1e-6 * x(l);
      up(l) += h;
      down(l) -= h;
      g(l) = (value(up) - value(down)) / (2.0 * h);
    }
    return g;
  };
  Vec x0(3);
  x0 << ka, volume, clearance;
  OptimOptions opts;
  opts.gradient_tol = 1e-8;
  opts.max_iterations = 300;
  const auto r = maximize_bounded(value, gradient, x0,
                                  {ParamKind::positive, ParamKind::positive, ParamKind::positive}, opts);
  return r.value > -best ? r.theta : x0;
}

double pooled_residual_variance(const Dataset& data, double ka, double volume, double clearance) {
  double rss = 0.0, count = 0.0;
  for (const auto& rec : data.records) {
    rss += rss_of(rec, ka, volume, clearance);
    count += static_cast<double>(rec.n_obs());
  }
  return std::max(rss / count, 1e-3);
}

}  // namespace

// ---- exponential-family model ----------------------------------------------

std::vector<ParamKind> PkNlmeModel::param_kinds() const {
  return {ParamKind::positive, ParamKind::positive, ParamKind::positive, ParamKind::variance,
          ParamKind::variance, ParamKind::variance, ParamKind::variance};
}

double PkNlmeModel::residual_sum_of_squares(const IndividualRecord& rec, const Latent& z) const {
  return rss_of(rec, std::exp(z(0)), std::exp(z(1)), std::exp(z(2)));
}

double PkNlmeModel::complete_loglik(const IndividualRecord& rec, const Latent& z, const Vec& theta) const {
  double l = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double w2 = theta(3 + k), dz = z(k) - std::log(theta(k));
    l += -0.5 * kLog2Pi - 0.5 * std::log(w2) - dz * dz / (2.0 * w2);
  }
  const double J = static_cast<double>(rec.n_obs()), s2 = theta(6);
  return l - 0.5 * J * (kLog2Pi + std::log(s2)) - residual_sum_of_squares(rec, z) / (2.0 * s2);
}

Vec PkNlmeModel::complete_score(const IndividualRecord& rec, const Latent& z, const Vec& theta) const {
  Vec g(7);
  for (int k = 0; k < 3; ++k) {
    const double w2 = theta(3 + k), dz = z(k) - std::log(theta(k));
    g(k) = dz / (w2 * theta(k));
    g(3 + k) = -0.5 / w2 + dz * dz / (2.0 * w2 * w2);
  }
  const double J = static_cast<double>(rec.n_obs()), s2 = theta(6);
  g(6) = -0.5 * J / s2 + residual_sum_of_squares(rec, z) / (2.0 * s2 * s2);
  return g;
}

Mat PkNlmeModel::complete_hessian(const IndividualRecord& rec, const Latent& z, const Vec& theta) const {
  Mat h = Mat::Zero(7, 7);
  for (int k = 0; k < 3; ++k) {
    const double mu = theta(k), w2 = theta(3 + k), dz = z(k) - std::log(mu);
    h(k, k) = -(1.0 + dz) / (w2 * mu * mu);
    h(k, 3 + k) = h(3 + k, k) = -dz / (w2 * w2 * mu);
    h(3 + k, 3 + k) = 0.5 / (w2 * w2) - dz * dz / (w2 * w2 * w2);
  }
  const double J = static_cast<double>(rec.n_obs()), s2 = theta(6);
  h(6, 6) = 0.5 * J / (s2 * s2) - residual_sum_of_squares(rec, z) / (s2 * s2 * s2);
  return h;
}

Latent PkNlmeModel::sample_latent_prior(const IndividualRecord&, const Vec& theta, Rng& rng) const {
  Latent z(3);
  for (int k = 0; k < 3; ++k) z(k) = rng.normal(std::log(theta(k)), std::sqrt(theta(3 + k)));
  return z;
}

Vec PkNlmeModel::default_proposal_scales(const Vec& theta) const {
  return 0.3 * theta.segment(3, 3).cwiseSqrt();
}

std::pair<IndividualRecord, Latent> PkNlmeModel::simulate(const Vec& theta, const IndividualDesign& design,
                                                          Rng& rng) const {
  validate(theta);
  return simulate_pk(theta.head(3), theta.segment(3, 3), theta(6), design, rng, std::nullopt);
}

Vec PkNlmeModel::initial_estimate(const Dataset& data) const {
  const Vec typical = pooled_curve_fit(data);
  Vec t(7);
  t << typical(0), typical(1), typical(2), 0.5, 0.5, 0.5,
      pooled_residual_variance(data, typical(0), typical(1), typical(2));
  return t;
}

Vec PkNlmeModel::stats(const IndividualRecord& rec, const Latent& z) const {
  Vec s(7);
  s << z(0), z(1), z(2), z(0) * z(0), z(1) * z(1), z(2) * z(2), residual_sum_of_squares(rec, z);
  return s;
}

double PkNlmeModel::psi(const IndividualRecord& rec, const Vec& theta) const {
  double p = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double m = std::log(theta(k)), w2 = theta(3 + k);
    p += 0.5 * std::log(w2) + m * m / (2.0 * w2);
  }
  return p + 0.5 * static_cast<double>(rec.n_obs()) * std::log(theta(6));
}

Vec PkNlmeModel::phi(const IndividualRecord&, const Vec& theta) const {
  Vec p(7);
  for (int k = 0; k < 3; ++k) {
    p(k) = std::log(theta(k)) / theta(3 + k);
    p(3 + k) = -0.5 / theta(3 + k);
  }
  p(6) = -0.5 / theta(6);
  return p;
}

Vec PkNlmeModel::dpsi(const IndividualRecord& rec, const Vec& theta) const {
  Vec d(7);
  for (int k = 0; k < 3; ++k) {
    const double mu = theta(k), m = std::log(mu), w2 = theta(3 + k);
    d(k) = m / (w2 * mu);
    d(3 + k) = 0.5 / w2 - m * m / (2.0 * w2 * w2);
  }
  d(6) = 0.5 * static_cast<double>(rec.n_obs()) / theta(6);
  return d;
}

Mat PkNlmeModel::dphi(const IndividualRecord&, const Vec& theta) const {
  Mat d = Mat::Zero(7, 7);
  for (int k = 0; k < 3; ++k) {
    const double mu = theta(k), w2 = theta(3 + k);
    d(k, k) = 1.0 / (w2 * mu);
    d(k, 3 + k) = -std::log(mu) / (w2 * w2);
    d(3 + k, 3 + k) = 0.5 / (w2 * w2);
  }
  d(6, 6) = 0.5 / (theta(6) * theta(6));
  return d;
}

double PkNlmeModel::base_term(const IndividualRecord& rec, const Latent&) const {
  return -0.5 * (3.0 + static_cast<double>(rec.n_obs())) * kLog2Pi;
}

MaximizeResult PkNlmeModel::argmax_complete(const Dataset& data, std::span<const Vec> s) const {
  if (s.size() != data.n()) throw Error(ErrorKind::dimension_mismatch, "one statistic per individual expected");
  Vec total = Vec::Zero(7);
  double count = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    total += s[i];
    count += static_cast<double>(data.records[i].n_obs());
  }
  if (!total.allFinite()) throw Error(ErrorKind::mstep_failure, "non-finite sufficient statistics");
  const double n = static_cast<double>(s.size());
  MaximizeResult out;
  out.theta.resize(7);
  for (int k = 0; k < 3; ++k) {
    const double m = total(k) / n;
    double w2 = total(3 + k) / n - m * m;
    if (w2 < kVarianceFloor) {
      w2 = kVarianceFloor;
      out.clamped = true;
    }
    out.theta(k) = std::exp(m);
    out.theta(3 + k) = w2;
  }
  double s2 = total(6) / count;
  if (s2 < kVarianceFloor) {
    s2 = kVarianceFloor;
    out.clamped = true;
  }
  out.theta(6) = s2;
  return out;
}

// ---- fixed-V model ------------------------------------------------------------

std::vector<ParamKind> PkFixedVModel::param_kinds() const {
  return {ParamKind::positive, ParamKind::positive, ParamKind::positive,
          ParamKind::variance, ParamKind::variance, ParamKind::variance};
}

double PkFixedVModel::residual_sum_of_squares(const IndividualRecord& rec, const Latent& z, double volume) const {
  return rss_of(rec, std::exp(z(0)), volume, std::exp(z(1)));
}

double PkFixedVModel::complete_loglik(const IndividualRecord& rec, const Latent& z, const Vec& theta) const {
  const double w2[2] = {theta(3), theta(4)}, mu[2] = {theta(0), theta(2)};
  double l = 0.0;
  for (int k = 0; k < 2; ++k) {
    const double dz = z(k) - std::log(mu[k]);
    l += -0.5 * kLog2Pi - 0.5 * std::log(w2[k]) - dz * dz / (2.0 * w2[k]);
  }
  const double J = static_cast<double>(rec.n_obs()), s2 = theta(5);
  return l - 0.5 * J * (kLog2Pi + std::log(s2)) - residual_sum_of_squares(rec, z, theta(1)) / (2.0 * s2);
}

Vec PkFixedVModel::complete_score(const IndividualRecord& rec, const Latent& z, const Vec& theta) const {
  const double d = dose_of(rec);
  const double ka = std::exp(z(0)), cl = std::exp(z(1)), volume = theta(1), s2 = theta(5);
  double rss = 0.0, dv = 0.0;
  for (std::size_t j = 0; j < rec.n_obs(); ++j) {
    const auto p = pk_prediction_dv(d, rec.times[j], ka, volume, cl);
    const double r = rec.y[j] - p.value;
    rss += r * r;
    dv += r * p.d_volume;
  }
  Vec g(6);
  const double dz0 = z(0) - std::log(theta(0)), dz1 = z(1) - std::log(theta(2));
  g(0) = dz0 / (theta(3) * theta(0));
  g(1) = dv / s2;
  g(2) = dz1 / (theta(4) * theta(2));
  g(3) = -0.5 / theta(3) + dz0 * dz0 / (2.0 * theta(3) * theta(3));
  g(4) = -0.5 / theta(4) + dz1 * dz1 / (2.0 * theta(4) * theta(4));
  g(5) = -0.5 * static_cast<double>(rec.n_obs()) / s2 + rss / (2.0 * s2 * s2);
  return g;
}

Latent PkFixedVModel::sample_latent_prior(const IndividualRecord&, const Vec& theta, Rng& rng) const {
  Latent z(2);
  z(0) = rng.normal(std::log(theta(0)), std::sqrt(theta(3)));
  z(1) = rng.normal(std::log(theta(2)), std::sqrt(theta(4)));
  return z;
}

Vec PkFixedVModel::default_proposal_scales(const Vec& theta) const {
  Vec s(2);
  s << 0.3 * std::sqrt(theta(3)), 0.3 * std::sqrt(theta(4));
  return s;
}

std::pair<IndividualRecord, Latent> PkFixedVModel::simulate(const Vec& theta, const IndividualDesign& design,
                                                            Rng& rng) const {
  validate(theta);
  Vec mu(2), omega2(2);
  mu << theta(0), theta(2);
  omega2 << theta(3), theta(4);
  return simulate_pk(mu, omega2, theta(5), design, rng, theta(1));
}

Vec PkFixedVModel::initial_estimate(const Dataset& data) const {
  const Vec typical = pooled_curve_fit(data);
  Vec t(6);
  t << typical(0), typical(1), typical(2), 0.5, 0.5,
      pooled_residual_variance(data, typical(0), typical(1), typical(2));
  return t;
}

MaximizeResult PkFixedVModel::maximize_weighted(const WeightedLatents& samples, const Dataset& data,
                                                const Vec& theta_init) const {
  const double total = samples.total_weight();
  if (samples.empty() || !(total > 0.0)) throw Error(ErrorKind::optim_failure, "maximize over an empty weighted sample set");
  const double n = static_cast<double>(data.n());
  double count = 0.0;
  for (const auto& rec : data.records) count += static_cast<double>(rec.n_obs());

  MaximizeResult out;
  out.theta = theta_init;
  // Closed-form Gaussian blocks for (log ka_i, log Cl_i).
  Vec m = Vec::Zero(2), m2 = Vec::Zero(2);
  for (std::size_t l = 0; l < samples.configs.size(); ++l)
    for (const auto& z : *samples.configs[l]) {
      m += samples.weights[l] * z;
      m2 += samples.weights[l] * z.cwiseProduct(z);
    }
  m /= total * n;
  m2 /= total * n;
  Vec w2 = m2 - m.cwiseProduct(m);
  for (int k = 0; k < 2; ++k)
    if (w2(k) < kVarianceFloor) {
      w2(k) = kVarianceFloor;
      out.clamped = true;
    }
  out.theta(0) = std::exp(m(0));
  out.theta(2) = std::exp(m(1));
  out.theta(3) = w2(0);
  out.theta(4) = w2(1);

  // V: Gauss-Newton on the weighted RSS; sigma2 is its profile maximizer.
  auto weighted_rss = [&](double volume, double* grad, double* gn_curv) {
    double rss = 0.0, g = 0.0, c = 0.0;
    for (std::size_t l = 0; l < samples.configs.size(); ++l) {
      const double w = samples.weights[l];
      const auto& cfg = *samples.configs[l];
      for (std::size_t i = 0; i < data.n(); ++i) {
        const auto& rec = data.records[i];
        const double d = dose_of(rec);
        const double ka = std::exp(cfg[i](0)), cl = std::exp(cfg[i](1));
        for (std::size_t j = 0; j < rec.n_obs(); ++j) {
          if (grad) {
            const auto p = pk_prediction_dv(d, rec.times[j], ka, volume, cl);
            const double r = rec.y[j] - p.value;
            rss += w * r * r;
            g += w * r * p.d_volume;
            c += w * p.d_volume * p.d_volume;
          } else {
            const double r = rec.y[j] - pk_prediction(d, rec.times[j], ka, volume, cl);
            rss += w * r * r;
          }
        }
      }
    }
    if (grad) *grad = g;
    if (gn_curv) *gn_curv = c;
    return rss;
  };

  double volume = theta_init(1);
  double g = 0.0, c = 0.0;
  double rss = weighted_rss(volume, &g, &c);
  auto profiled_sigma2 = [&](double r) { return std::max(r / (total * count), kVarianceFloor); };
  bool converged = false;
  for (int it = 0; it < 100; ++it) {
    const double s2 = profiled_sigma2(rss);
    // dQ/dV = sum w r dpred/dV / sigma2 at the profiled sigma2.
    const double q_scale = 1.0 + std::abs(0.5 * total * count * (std::log(s2) + 1.0));
    if (std::abs(g / s2) < 1e-7 * q_scale) {
      converged = true;
      break;
    }
    if (!(c > 0.0)) break;
    double step_log = std::clamp((g / c) / volume, -1.0, 1.0);
    bool improved = false;
    for (int half = 0; half < 40; ++half, step_log *= 0.5) {
      const double trial = volume * std::exp(step_log);
      double tg = 0.0, tc = 0.0;
      const double trial_rss = weighted_rss(trial, &tg, &tc);
      if (trial_rss <= rss) {
        volume = trial;
        rss = trial_rss;
        g = tg;
        c = tc;
        improved = true;
        break;
      }
    }
    if (!improved) {
      converged = std::abs(g / s2) < 1e-4 * q_scale;
      break;
    }
  }
  out.theta(1) = volume;
  double s2 = rss / (total * count);
  if (s2 < kVarianceFloor) {
    s2 = kVarianceFloor;
    out.clamped = true;
  }
  out.theta(5) = s2;

  // Q and its gradient from the weighted sums, at the final (rss, g).
  const double wn = total * n;
  Vec grad(6);
  double q = -0.5 * total * count * (kLog2Pi + std::log(s2)) - rss / (2.0 * s2);
  const int mean_index[2] = {0, 2};
  for (int k = 0; k < 2; ++k) {
    const double mu = out.theta(mean_index[k]), w2k = out.theta(3 + k), c0 = std::log(mu);
    const double first = wn * m(k), second = wn * m2(k);
    const double sq = second - 2.0 * c0 * first + c0 * c0 * wn;
    q += -0.5 * wn * (kLog2Pi + std::log(w2k)) - sq / (2.0 * w2k);
    grad(mean_index[k]) = (first - c0 * wn) / (w2k * mu);
    grad(3 + k) = -0.5 * wn / w2k + sq / (2.0 * w2k * w2k);
  }
  grad(1) = g / s2;
  grad(5) = -0.5 * total * count / s2 + rss / (2.0 * s2 * s2);
  out.objective = q;
  out.gradient_norm = grad.norm();
  out.converged = converged && out.gradient_norm < 1e-6 * (1.0 + std::abs(out.objective));
  return out;
}

}  // namespace latfim
