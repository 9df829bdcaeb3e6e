#include "latfim/model.hpp"

#include "latfim/csv.hpp"
#include "latfim/errors.hpp"
#include "latfim/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <istream>
#include <ostream>
#include <string>

namespace latfim {

double WeightedLatents::total_weight() const {
  double w = 0.0;
  for (double x : weights) w += x;
  return w;
}

ParamVector LatentModel::make_params(const Vec& values) const {
  ParamVector p{values, param_names(), param_kinds()};
  if (p.size() != p.names.size())
    throw Error(ErrorKind::dimension_mismatch,
                id() + " expects " + std::to_string(p.names.size()) + " parameters, got " + std::to_string(p.size()));
  return p;
}

void LatentModel::validate(const Vec& theta) const {
  const auto names = param_names();
  const auto kinds = param_kinds();
  if (static_cast<std::size_t>(theta.size()) != names.size())
    throw Error(ErrorKind::dimension_mismatch,
                id() + " expects " + std::to_string(names.size()) + " parameters, got " + std::to_string(theta.size()));
  for (std::size_t l = 0; l < names.size(); ++l) {
    const double v = theta(static_cast<Eigen::Index>(l));
    if (!std::isfinite(v)) throw domain_violation(names[l], "is not finite");
    switch (kinds[l]) {
      case ParamKind::location: break;
      case ParamKind::positive:
      case ParamKind::variance:
        if (!(v > 0.0)) throw domain_violation(names[l], "must be strictly positive");
        break;
      case ParamKind::proportion:
        if (!(v > 0.0 && v < 1.0)) throw domain_violation(names[l], "must lie in (0, 1)");
        break;
    }
  }
}

Mat LatentModel::complete_hessian(const IndividualRecord&, const Latent&, const Vec&) const {
  throw Error(ErrorKind::dimension_mismatch, id() + " does not provide a complete-data Hessian");
}

Latent LatentModel::sample_conditional(const IndividualRecord&, const Vec&, Rng&) const {
  throw Error(ErrorKind::provider_failure, id() + " has no exact conditional sampler");
}

Vec LatentModel::default_proposal_scales(const Vec&) const { return Vec::Constant(static_cast<Eigen::Index>(latent_dim()), 0.5); }

double LatentModel::marginal_loglik(const IndividualRecord&, const Vec&) const {
  throw Error(ErrorKind::provider_failure, id() + " has no closed-form marginal likelihood");
}

Vec LatentModel::marginal_score(const IndividualRecord&, const Vec&) const {
  throw Error(ErrorKind::provider_failure, id() + " has no closed-form marginal score");
}

Mat LatentModel::marginal_hessian(const IndividualRecord&, const Vec&) const {
  throw Error(ErrorKind::provider_failure, id() + " has no closed-form marginal Hessian");
}

Vec LatentModel::conditional_expected_score(const IndividualRecord&, const Vec&) const {
  throw Error(ErrorKind::provider_failure, id() + " has no closed-form conditional expectation");
}

MaximizeResult LatentModel::maximize_weighted(const WeightedLatents& samples, const Dataset& data,
                                              const Vec& theta_init) const {
  auto value = [&](const Vec& theta) {
    try {
      validate(theta);
    } catch (const Error&) {
      return -std::numeric_limits<double>::infinity();
    }
    return weighted_loglik(*this, data, samples, theta);
  };
  auto gradient = [&](const Vec& theta) { return weighted_score(*this, data, samples, theta); };
  OptimResult r = maximize_bounded(value, gradient, theta_init, param_kinds());
  MaximizeResult out;
  out.theta = r.theta;
  out.objective = r.value;
  out.gradient_norm = r.gradient_norm;
  out.converged = r.converged;
  return out;
}

Vec ExpoFamilyModel::conditional_expected_stats(const IndividualRecord&, const Vec&) const {
  throw Error(ErrorKind::provider_failure, id() + " has no closed-form conditional statistics");
}

double ExpoFamilyModel::expo_loglik(const IndividualRecord& rec, const Latent& z, const Vec& theta) const {
  return -psi(rec, theta) + stats(rec, z).dot(phi(rec, theta)) + base_term(rec, z);
}

Vec ExpoFamilyModel::expo_score(const IndividualRecord& rec, const Latent& z, const Vec& theta) const {
  return -dpsi(rec, theta) + dphi(rec, theta).transpose() * stats(rec, z);
}

MaximizeResult ExpoFamilyModel::maximize_weighted(const WeightedLatents& samples, const Dataset& data,
                                                  const Vec&) const {
  const double total = samples.total_weight();
  if (samples.empty() || !(total > 0.0))
    throw Error(ErrorKind::optim_failure, "maximize over an empty weighted sample set");
  std::vector<Vec> s(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) {
    s[i] = Vec::Zero(static_cast<Eigen::Index>(stat_dim(data.records[i])));
    for (std::size_t l = 0; l < samples.configs.size(); ++l)
      s[i] += samples.weights[l] * stats(data.records[i], (*samples.configs[l])[i]);
    s[i] /= total;
  }
  MaximizeResult out = argmax_complete(data, s);
  out.objective = weighted_loglik(*this, data, samples, out.theta);
  out.gradient_norm = weighted_score(*this, data, samples, out.theta).norm();
  return out;
}

void validate_params(const LatentModel& model, const ParamVector& theta) {
  const auto names = model.param_names();
  if (theta.size() != names.size() || theta.names.size() != names.size())
    throw Error(ErrorKind::dimension_mismatch, model.id() + " expects " + std::to_string(names.size()) +
                                                   " parameters, got " + std::to_string(theta.size()));
  model.validate(theta.values);
}

SimulatedData simulate_dataset(const LatentModel& model, const ParamVector& theta,
                               const std::vector<IndividualDesign>& design, std::uint64_t seed) {
  validate_params(model, theta);
  if (design.empty()) throw Error(ErrorKind::config_error, "design has no individuals");
  SimulatedData out;
  out.data.records.reserve(design.size());
  out.latent_truth.reserve(design.size());
  for (std::size_t i = 0; i < design.size(); ++i) {
    Rng rng(seed, {0x51u, i});
    auto [rec, z] = model.simulate(theta.values, design[i], rng);
    out.data.records.push_back(std::move(rec));
    out.latent_truth.push_back(std::move(z));
  }
  return out;
}

Vec finite_diff_score(const LatentModel& model, const IndividualRecord& rec, const Latent& z, const Vec& theta,
                      double relative_step) {
  if (!(relative_step > 0.0)) throw Error(ErrorKind::config_error, "finite-difference step must be positive");
  model.validate(theta);
  const auto names = model.param_names();
  Vec g(theta.size());
  for (Eigen::Index l = 0; l < theta.size(); ++l) {
    double h = relative_step * std::max(1.0, std::abs(theta(l)));
    bool done = false;
    for (int shrink = 0; shrink < 30 && !done; ++shrink, h *= 0.5) {
      Vec up = theta, down = theta;
      up(l) += h;
      down(l) -= h;
      try {
        model.validate(up);
        model.validate(down);
      } catch (const Error&) {
        continue;
      }
      g(l) = (model.complete_loglik(rec, z, up) - model.complete_loglik(rec, z, down)) / (2.0 * h);
      done = true;
    }
    if (!done) throw domain_violation(names[static_cast<std::size_t>(l)], "is too close to the domain boundary for finite differences");
  }
  return g;
}

double weighted_loglik(const LatentModel& model, const Dataset& data, const WeightedLatents& samples,
                       const Vec& theta) {
  double q = 0.0;
  for (std::size_t l = 0; l < samples.configs.size(); ++l) {
    double inner = 0.0;
    for (std::size_t i = 0; i < data.n(); ++i)
      inner += model.complete_loglik(data.records[i], (*samples.configs[l])[i], theta);
    q += samples.weights[l] * inner;
  }
  return q;
}

Vec weighted_score(const LatentModel& model, const Dataset& data, const WeightedLatents& samples, const Vec& theta) {
  Vec g = Vec::Zero(theta.size());
  for (std::size_t l = 0; l < samples.configs.size(); ++l)
    for (std::size_t i = 0; i < data.n(); ++i)
      g += samples.weights[l] * model.complete_score(data.records[i], (*samples.configs[l])[i], theta);
  return g;
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  CsvWriter w(out);
  w.row({"individual", "obs_index", "time", "dose", "y"});
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto& r = data.records[i];
    for (std::size_t j = 0; j < r.n_obs(); ++j) {
      w.field(i + 1).field(j + 1);
      if (r.times.empty()) w.empty(); else w.field(r.times[j]);
      if (r.dose) w.field(*r.dose); else w.empty();
      w.field(r.y[j]);
      w.end_row();
    }
  }
}

Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::io_error, "empty dataset file");
  const auto header = split_csv_line(line);
  const std::vector<std::string> expected{"individual", "obs_index", "time", "dose", "y"};
  if (header != expected) throw Error(ErrorKind::io_error, "dataset header must be individual,obs_index,time,dose,y");
  Dataset data;
  long current = -1;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw Error(ErrorKind::io_error, "line " + std::to_string(lineno) + ": expected 5 fields");
    try {
      const long id = std::stol(f[0]);
      if (id != current) {
        if (id < current) throw Error(ErrorKind::io_error, "rows must be individual-major");
        data.records.emplace_back();
        current = id;
      }
      auto& rec = data.records.back();
      if (!f[2].empty()) rec.times.push_back(std::stod(f[2]));
      if (!f[3].empty()) rec.dose = std::stod(f[3]);
      rec.y.push_back(std::stod(f[4]));
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::io_error, "line " + std::to_string(lineno) + ": malformed number");
    }
  }
  validate_dataset(data);
  return data;
}

}  // namespace latfim
