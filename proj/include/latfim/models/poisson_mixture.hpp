#pragma once

#include "latfim/model.hpp"

namespace latfim {

// y_i | z_i = k ~ Poisson(lambda_k), P(z_i = k) = alpha_k, alpha_K = 1 - sum alpha_k.
// theta = (lambda_1..lambda_K, alpha_1..alpha_{K-1}); labels z in {0..K-1}.
class PoissonMixtureModel final : public ExpoFamilyModel {
 public:
  explicit PoissonMixtureModel(std::size_t components = 3);

  std::size_t components() const { return k_; }
  std::string id() const override { return "poisson_mixture"; }
  std::vector<std::string> param_names() const override;
  std::vector<ParamKind> param_kinds() const override;
  void validate(const Vec& theta) const override;
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

  // S = (1{z=k})_k followed by (y 1{z=k})_k; psi = 0.
  std::size_t stat_dim(const IndividualRecord&) const override { return 2 * k_; }
  Vec stats(const IndividualRecord& rec, const Latent& z) const override;
  double psi(const IndividualRecord& rec, const Vec& theta) const override;
  Vec phi(const IndividualRecord& rec, const Vec& theta) const override;
  Vec dpsi(const IndividualRecord& rec, const Vec& theta) const override;
  Mat dphi(const IndividualRecord& rec, const Vec& theta) const override;
  double base_term(const IndividualRecord& rec, const Latent& z) const override;
  MaximizeResult argmax_complete(const Dataset& data, std::span<const Vec> s) const override;
  bool has_conditional_stats() const override { return true; }
  Vec conditional_expected_stats(const IndividualRecord& rec, const Vec& theta) const override;

  // Full proportion vector (alpha_1..alpha_K).
  Vec proportions(const Vec& theta) const;

 private:
  std::size_t k_;
};

// Posterior class probabilities w_k proportional to alpha_k e^{-lambda_k} lambda_k^y / y!.
Vec poisson_posterior(double y, const Vec& theta, std::size_t components);

}  // namespace latfim
