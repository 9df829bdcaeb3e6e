#pragma once

#include "latfim/model.hpp"

namespace latfim {

// Two unit-variance Gaussian components:
//   y ~ (1 - pi) N(mu1, 1) + pi N(mu2, 1),  theta = (mu1, mu2, pi).
// Label z = 0 selects mu1, z = 1 selects mu2 (probability pi).
class GaussianMixture2Model final : public LatentModel {
 public:
  std::string id() const override { return "gaussian_mixture2"; }
  std::vector<std::string> param_names() const override { return {"mu1", "mu2", "pi"}; }
  std::vector<ParamKind> param_kinds() const override {
    return {ParamKind::location, ParamKind::location, ParamKind::proportion};
  }
  std::size_t latent_dim() const override { return 1; }

  double complete_loglik(const IndividualRecord& rec, const Latent& z, const Vec& theta) const override;
  Vec complete_score(const IndividualRecord& rec, const Latent& z, const Vec& theta) const override;
  bool has_complete_hessian() const override { return true; }
  Mat complete_hessian(const IndividualRecord& rec, const Latent& z, const Vec& theta) const override;

  SamplerKind sampler() const override { return SamplerKind::exact; }
  Latent sample_conditional(const IndividualRecord& rec, const Vec& theta, Rng& rng) const override;
  Latent sample_latent_prior(const IndividualRecord& rec, const Vec& theta, Rng& rng) const override;
  std::pair<IndividualRecord, Latent> simulate(const Vec& theta, const IndividualDesign& design,
                                               Rng& rng) const override;

  bool has_marginal() const override { return true; }
  double marginal_loglik(const IndividualRecord& rec, const Vec& theta) const override;
  Vec marginal_score(const IndividualRecord& rec, const Vec& theta) const override;
  Mat marginal_hessian(const IndividualRecord& rec, const Vec& theta) const override;

  bool has_conditional_expectation() const override { return true; }
  Vec conditional_expected_score(const IndividualRecord& rec, const Vec& theta) const override;

  Vec initial_estimate(const Dataset& data) const override;

  // P(z = 1 | y)
  double responsibility(double y, const Vec& theta) const;
};

struct EmResult {
  Vec theta;
  std::vector<double> loglik_trace;  // observed log-likelihood at each iterate
  int iterations = 0;
  bool converged = false;  // false: MaxIterReached, theta is the best iterate
};

// EM until the log-likelihood gain drops below tol. pi0 = 1 is accepted as the
// degenerate single-component start. The result is put in canonical order
// mu1 >= mu2 (label swap with pi -> 1 - pi).
EmResult gaussian_mixture_em(const Dataset& data, const Vec& theta0, double tol = 1e-8, int max_iter = 2000);

Vec canonical_gaussian_mixture(const Vec& theta);

}  // namespace latfim
