#pragma once

#include "latfim/rng.hpp"
#include "latfim/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace latfim {

enum class SamplerKind { exact, metropolis };

// Read-only view of a weighted set of latent configurations, i.e. the
// representation of the objective Q(theta) = sum_l w_l sum_i log f(y_i, z_i^l; theta).
struct WeightedLatents {
  std::vector<const LatentConfiguration*> configs;
  std::vector<double> weights;

  double total_weight() const;
  bool empty() const { return configs.empty(); }
};

struct MaximizeResult {
  Vec theta;
  double objective = 0.0;
  double gradient_norm = 0.0;
  bool converged = true;
  bool clamped = false;  // a variance hit its floor
};

// Contract every latent-variable model implements. All methods are pure
// functions of their arguments (plus an explicitly passed Rng).
class LatentModel {
 public:
  virtual ~LatentModel() = default;

  virtual std::string id() const = 0;
  virtual std::vector<std::string> param_names() const = 0;
  virtual std::vector<ParamKind> param_kinds() const = 0;
  std::size_t dim() const { return param_names().size(); }
  ParamVector make_params(const Vec& values) const;

  // Throws DomainViolation naming the first offending component.
  virtual void validate(const Vec& theta) const;

  virtual std::size_t latent_dim() const = 0;

  virtual double complete_loglik(const IndividualRecord& rec, const Latent& z, const Vec& theta) const = 0;
  virtual Vec complete_score(const IndividualRecord& rec, const Latent& z, const Vec& theta) const = 0;
  virtual bool has_complete_hessian() const { return false; }
  virtual Mat complete_hessian(const IndividualRecord& rec, const Latent& z, const Vec& theta) const;

  virtual SamplerKind sampler() const = 0;
  // Exact draw from p(z | y; theta). Only for SamplerKind::exact.
  virtual Latent sample_conditional(const IndividualRecord& rec, const Vec& theta, Rng& rng) const;
  virtual Latent sample_latent_prior(const IndividualRecord& rec, const Vec& theta, Rng& rng) const = 0;
  // Starting random-walk scales for MH, one per latent coordinate.
  virtual Vec default_proposal_scales(const Vec& theta) const;

  virtual std::pair<IndividualRecord, Latent> simulate(const Vec& theta, const IndividualDesign& design,
                                                       Rng& rng) const = 0;

  // Analytic observed-data quantities, for models that have them.
  virtual bool has_marginal() const { return false; }
  virtual double marginal_loglik(const IndividualRecord& rec, const Vec& theta) const;
  virtual Vec marginal_score(const IndividualRecord& rec, const Vec& theta) const;
  virtual Mat marginal_hessian(const IndividualRecord& rec, const Vec& theta) const;

  // E[d/dtheta log f(y, Z; theta) | y] in closed form, for models that have it.
  virtual bool has_conditional_expectation() const { return false; }
  virtual Vec conditional_expected_score(const IndividualRecord& rec, const Vec& theta) const;

  // Data-driven starting point for iterative fits.
  virtual Vec initial_estimate(const Dataset& data) const = 0;

  // argmax_theta of sum_l w_l sum_i log f(y_i, z_i^l; theta). The default is a
  // quasi-Newton search in unconstrained coordinates; models override with
  // closed-form blocks where they exist.
  virtual MaximizeResult maximize_weighted(const WeightedLatents& samples, const Dataset& data,
                                           const Vec& theta_init) const;
};

// Curved exponential family specialization:
//   log f_i(y_i, z_i; theta) = -psi_i(theta) + <S_i(z_i), phi_i(theta)> + c_i(y_i, z_i).
// c_i is theta-free and vanishes from every score.
class ExpoFamilyModel : public LatentModel {
 public:
  virtual std::size_t stat_dim(const IndividualRecord& rec) const = 0;
  virtual Vec stats(const IndividualRecord& rec, const Latent& z) const = 0;
  virtual double psi(const IndividualRecord& rec, const Vec& theta) const = 0;
  virtual Vec phi(const IndividualRecord& rec, const Vec& theta) const = 0;
  virtual Vec dpsi(const IndividualRecord& rec, const Vec& theta) const = 0;
  // m_i x p Jacobian of phi_i.
  virtual Mat dphi(const IndividualRecord& rec, const Vec& theta) const = 0;
  virtual double base_term(const IndividualRecord& rec, const Latent& z) const = 0;

  // theta_hat(s): maximizer of sum_i [-psi_i(theta) + <s_i, phi_i(theta)>].
  virtual MaximizeResult argmax_complete(const Dataset& data, std::span<const Vec> s) const = 0;

  virtual bool has_conditional_stats() const { return false; }
  virtual Vec conditional_expected_stats(const IndividualRecord& rec, const Vec& theta) const;

  // Complete log-likelihood and score through the exponential-family form.
  double expo_loglik(const IndividualRecord& rec, const Latent& z, const Vec& theta) const;
  Vec expo_score(const IndividualRecord& rec, const Latent& z, const Vec& theta) const;

  // Weighted statistics, then theta_hat.
  MaximizeResult maximize_weighted(const WeightedLatents& samples, const Dataset& data,
                                   const Vec& theta_init) const override;
};

// ---- model-core operations -------------------------------------------------

// Checks dimension and domain; throws DimensionMismatch / DomainViolation.
void validate_params(const LatentModel& model, const ParamVector& theta);

struct SimulatedData {
  Dataset data;
  // Latent truth; kept for tests, never read by estimators.
  std::vector<Latent> latent_truth;
};

SimulatedData simulate_dataset(const LatentModel& model, const ParamVector& theta,
                               const std::vector<IndividualDesign>& design, std::uint64_t seed);

// Default step h_l = 1e-5 * max(1, |theta_l|).
Vec finite_diff_score(const LatentModel& model, const IndividualRecord& rec, const Latent& z,
                      const Vec& theta, double relative_step = 1e-5);

// Objective Q and its gradient for a weighted latent set.
double weighted_loglik(const LatentModel& model, const Dataset& data, const WeightedLatents& samples,
                       const Vec& theta);
Vec weighted_score(const LatentModel& model, const Dataset& data, const WeightedLatents& samples,
                   const Vec& theta);

// Dataset CSV: individual, obs_index, time, dose, y (individual-major).
void write_dataset_csv(std::ostream& out, const Dataset& data);
Dataset read_dataset_csv(std::istream& in);

}  // namespace latfim
