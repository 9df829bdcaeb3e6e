#pragma once

#include "latfim/model.hpp"

namespace latfim {

// One-compartment oral-absorption concentration
//   d ka / (V ka - Cl) [exp(-Cl t / V) - exp(-ka t)],
// evaluated in a form that is continuous through V ka = Cl.
double pk_prediction(double dose, double t, double ka, double volume, double clearance);

struct PkValueAndVolumeDerivative {
  double value = 0.0;
  double d_volume = 0.0;
};
PkValueAndVolumeDerivative pk_prediction_dv(double dose, double t, double ka, double volume, double clearance);

// Single dose d = 320, times 0.25 .. 24 h.
IndividualDesign pk_reference_design();

// Exponential-family PK model. theta = (ka, V, Cl, omega2_ka, omega2_V, omega2_Cl, sigma2);
// latent phi_i = (log ka_i, log V_i, log Cl_i) ~ N(log(ka, V, Cl), diag(omega2)).
class PkNlmeModel final : public ExpoFamilyModel {
 public:
  std::string id() const override { return "pk_nlme"; }
  std::vector<std::string> param_names() const override {
    return {"ka", "V", "Cl", "omega2_ka", "omega2_V", "omega2_Cl", "sigma2"};
  }
  std::vector<ParamKind> param_kinds() const override;
  std::size_t latent_dim() const override { return 3; }

  double complete_loglik(const IndividualRecord& rec, const Latent& z, const Vec& theta) const override;
  Vec complete_score(const IndividualRecord& rec, const Latent& z, const Vec& theta) const override;
  bool has_complete_hessian() const override { return true; }
  Mat complete_hessian(const IndividualRecord& rec, const Latent& z, const Vec& theta) const override;

  SamplerKind sampler() const override { return SamplerKind::metropolis; }
  Latent sample_latent_prior(const IndividualRecord& rec, const Vec& theta, Rng& rng) const override;
  Vec default_proposal_scales(const Vec& theta) const override;
  std::pair<IndividualRecord, Latent> simulate(const Vec& theta, const IndividualDesign& design,
                                               Rng& rng) const override;

  Vec initial_estimate(const Dataset& data) const override;

  // S = (phi, phi * phi, RSS)
  std::size_t stat_dim(const IndividualRecord&) const override { return 7; }
  Vec stats(const IndividualRecord& rec, const Latent& z) const override;
  double psi(const IndividualRecord& rec, const Vec& theta) const override;
  Vec phi(const IndividualRecord& rec, const Vec& theta) const override;
  Vec dpsi(const IndividualRecord& rec, const Vec& theta) const override;
  Mat dphi(const IndividualRecord& rec, const Vec& theta) const override;
  double base_term(const IndividualRecord& rec, const Latent& z) const override;
  MaximizeResult argmax_complete(const Dataset& data, std::span<const Vec> s) const override;

  double residual_sum_of_squares(const IndividualRecord& rec, const Latent& z) const;
};

// Same model with V a fixed effect: theta = (ka, V, Cl, omega2_ka, omega2_Cl, sigma2),
// latent (log ka_i, log Cl_i). Not an exponential family.
class PkFixedVModel final : public LatentModel {
 public:
  std::string id() const override { return "pk_nlme_fixed_v"; }
  std::vector<std::string> param_names() const override {
    return {"ka", "V", "Cl", "omega2_ka", "omega2_Cl", "sigma2"};
  }
  std::vector<ParamKind> param_kinds() const override;
  std::size_t latent_dim() const override { return 2; }

  double complete_loglik(const IndividualRecord& rec, const Latent& z, const Vec& theta) const override;
  Vec complete_score(const IndividualRecord& rec, const Latent& z, const Vec& theta) const override;

  SamplerKind sampler() const override { return SamplerKind::metropolis; }
  Latent sample_latent_prior(const IndividualRecord& rec, const Vec& theta, Rng& rng) const override;
  Vec default_proposal_scales(const Vec& theta) const override;
  std::pair<IndividualRecord, Latent> simulate(const Vec& theta, const IndividualDesign& design,
                                               Rng& rng) const override;

  Vec initial_estimate(const Dataset& data) const override;

  // Closed form for (ka, Cl, omega2_ka, omega2_Cl); V by a safeguarded
  // Gauss-Newton search on the weighted residual sum of squares with sigma2
  // profiled out.
  MaximizeResult maximize_weighted(const WeightedLatents& samples, const Dataset& data,
                                   const Vec& theta_init) const override;

  double residual_sum_of_squares(const IndividualRecord& rec, const Latent& z, double volume) const;
};

}  // namespace latfim
