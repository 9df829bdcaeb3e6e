#pragma once

#include "latfim/fim.hpp"
#include "latfim/model.hpp"

namespace latfim {

// y_ij = beta + z_i + eps_ij, z_i ~ N(0, eta2), eps_ij ~ N(0, sigma2).
// theta = (beta, eta2, sigma2); scalar latent z_i; exact Gaussian conditional.
class LinearMixedModel final : public ExpoFamilyModel {
 public:
  std::string id() const override { return "lmm"; }
  std::vector<std::string> param_names() const override { return {"beta", "eta2", "sigma2"}; }
  std::vector<ParamKind> param_kinds() const override {
    return {ParamKind::location, ParamKind::variance, ParamKind::variance};
  }
  std::size_t latent_dim() const override { return 1; }

  double complete_loglik(const IndividualRecord& rec, const Latent& z, const Vec& theta) const override;
  Vec complete_score(const IndividualRecord& rec, const Latent& z, const Vec& theta) const override;
  bool has_complete_hessian() const override { return true; }
  Mat complete_hessian(const IndividualRecord& rec, const Latent& z, const Vec& theta) const override;

  SamplerKind sampler() const override { return SamplerKind::exact; }
  Latent sample_conditional(const IndividualRecord& rec, const Vec& theta, Rng& rng) const override;
  Latent sample_latent_prior(const IndividualRecord& rec, const Vec& theta, Rng& rng) const override;
  Vec default_proposal_scales(const Vec& theta) const override;
  std::pair<IndividualRecord, Latent> simulate(const Vec& theta, const IndividualDesign& design,
                                               Rng& rng) const override;

  bool has_marginal() const override { return true; }
  double marginal_loglik(const IndividualRecord& rec, const Vec& theta) const override;
  Vec marginal_score(const IndividualRecord& rec, const Vec& theta) const override;
  Mat marginal_hessian(const IndividualRecord& rec, const Vec& theta) const override;

  bool has_conditional_expectation() const override { return true; }
  Vec conditional_expected_score(const IndividualRecord& rec, const Vec& theta) const override;

  Vec initial_estimate(const Dataset& data) const override;

  // S = (z^2, sum_j (y_j - z)^2, sum_j (y_j - z))
  std::size_t stat_dim(const IndividualRecord&) const override { return 3; }
  Vec stats(const IndividualRecord& rec, const Latent& z) const override;
  double psi(const IndividualRecord& rec, const Vec& theta) const override;
  Vec phi(const IndividualRecord& rec, const Vec& theta) const override;
  Vec dpsi(const IndividualRecord& rec, const Vec& theta) const override;
  Mat dphi(const IndividualRecord& rec, const Vec& theta) const override;
  double base_term(const IndividualRecord& rec, const Latent& z) const override;
  MaximizeResult argmax_complete(const Dataset& data, std::span<const Vec> s) const override;
  bool has_conditional_stats() const override { return true; }
  Vec conditional_expected_stats(const IndividualRecord& rec, const Vec& theta) const override;

  // Gaussian conditional z | y: mean and variance.
  std::pair<double, double> conditional_moments(const IndividualRecord& rec, const Vec& theta) const;
};

struct LmmMarginal {
  double loglik = 0.0;
  Vec score;
  Mat hessian;
};

// Closed forms through V = sigma2 I + eta2 11^T (Sherman-Morrison).
LmmMarginal lmm_analytic(const Vec& theta, const IndividualRecord& rec);
// Per-individual expected information for J observations.
FimMatrix lmm_analytic_fim(const Vec& theta, std::size_t n_obs);
// Maximum of the marginal likelihood (closed-form start, then quasi-Newton).
Vec lmm_marginal_mle(const Dataset& data);

}  // namespace latfim
