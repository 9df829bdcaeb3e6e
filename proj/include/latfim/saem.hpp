#pragma once

#include "latfim/fim.hpp"
#include "latfim/model.hpp"
#include "latfim/rng.hpp"
#include "latfim/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace latfim {

// gamma_k = burn_value for k <= burn_in, (k - burn_in)^(-exponent) afterwards.
struct StepSchedule {
  int burn_in = 1000;
  double burn_value = 0.95;
  double exponent = 0.6;

  void validate() const;
};

double step_size(int k, const StepSchedule& schedule);

enum class SimulationMode {
  sample,                   // exact draw or MH chain, per the model's sampler
  conditional_expectation,  // inject E[S_i | y_i; theta] (deterministic EM); needs closed forms
};

struct SaemConfig {
  StepSchedule schedule;
  int iterations = 3000;
  int mh_transitions = 5;
  Vec proposal_scales;  // empty: model defaults
  bool adapt_proposals = true;
  std::uint64_t seed = 1;
  bool averaging = false;
  bool louis = false;  // run the SA Louis recursions alongside
  SimulationMode mode = SimulationMode::sample;
  int record_every = 1;
  std::optional<Vec> theta0;
  // General (non-exponential) algorithm only.
  double prune_epsilon = 1e-6;
  std::size_t capacity = 500;

  void validate() const;
};

struct IterationRecord {
  int iteration = 0;
  double gamma = 0.0;
  Vec theta;
  Vec fim_diag;
  Vec avg_fim_diag;    // empty unless averaging is on and active
  Vec louis_diag;      // empty unless louis is on
  double pruned_mass = 0.0;
};

// Metropolis chain state shared by both SAEM variants: persistent latent
// values, per-coordinate proposal scales (adapted during burn-in only) and
// acceptance counters.
class LatentSampler {
 public:
  // z^0 is drawn from the prior latent law at theta0.
  LatentSampler(const LatentModel& model, const Dataset& data, const Vec& theta0, const SaemConfig& config);

  // Simulation step of iteration k at theta: updates and returns z^k.
  const LatentConfiguration& draw(const Dataset& data, const Vec& theta, int k);

  const LatentConfiguration& current() const { return z_; }
  const Vec& proposal_scales() const { return scales_; }
  double acceptance_rate() const;

 private:
  const LatentModel& model_;
  SaemConfig config_;
  LatentConfiguration z_;
  Vec scales_;
  long long accepted_total_ = 0, proposed_total_ = 0;
  long long accepted_window_ = 0, proposed_window_ = 0;
};

struct MhStep {
  Latent z;
  bool accepted = false;
};

// One random-walk Metropolis step targeting p(z | y; theta).
MhStep mh_transition(const LatentModel& model, const IndividualRecord& rec, const Latent& z, const Vec& theta,
                     const Vec& proposal_scales, Rng& rng);

struct SaemState {
  int k = 0;
  Vec theta;
  std::vector<Vec> s;        // s_i^k
  std::vector<Vec> s_bar;    // running mean of s over post-burn-in iterations
  int averaged_count = 0;
  // Louis recursions: G_i ~ E[H + g g^T | y_i], D_i ~ E[g | y_i].
  std::vector<Mat> louis_g;
  std::vector<Vec> louis_d;
  bool clamped = false;
  std::vector<IterationRecord> trajectory;
};

// -dpsi_i(theta) + dphi_i(theta)^T s_i
Vec individual_delta(const ExpoFamilyModel& model, const IndividualRecord& rec, const Vec& s_i, const Vec& theta);

// Phi_n(s): (1/n) sum_i Delta_i(theta_hat(s)) Delta_i(theta_hat(s))^T. Returns
// theta_hat(s) through `theta_out` when non-null.
FimMatrix delta_fim(const ExpoFamilyModel& model, const Dataset& data, std::span<const Vec> s,
                    Provenance provenance = Provenance::sa_byproduct, Vec* theta_out = nullptr);

// Initial state: theta0 (config or model default), s^0 = S(z^0) with z^0 drawn
// from the prior latent law at theta0.
SaemState init_saem(const ExpoFamilyModel& model, const Dataset& data, const SaemConfig& config,
                    LatentSampler& sampler);

// Simulation, stochastic approximation and maximisation steps of one iteration.
void saem_iteration(SaemState& state, const ExpoFamilyModel& model, const Dataset& data, const SaemConfig& config,
                    LatentSampler& sampler);

struct SaemDiagnostics {
  double acceptance_rate = 1.0;
  Vec theta_tail_sd;  // sd of the last 10% of the theta trajectory
  bool clamped = false;
};

struct SaemResult {
  ParamVector theta;
  FimMatrix fim;
  std::optional<FimMatrix> fim_averaged;
  std::optional<ParamVector> theta_averaged;
  std::optional<FimMatrix> louis;
  std::vector<IterationRecord> trajectory;
  SaemDiagnostics diagnostics;
};

SaemResult run_saem(const ExpoFamilyModel& model, const Dataset& data, const SaemConfig& config);

// Observed FIM through SA Louis recursions run alongside SAEM.
FimMatrix louis_observed_fim_sa(const ExpoFamilyModel& model, const Dataset& data, SaemConfig config);

// Long-chain Monte Carlo of E[g | y_i] and E[H + g g^T | y_i] at a fixed theta,
// giving conditional-score and Louis observed FIM references.
struct ConditionalFimReference {
  FimMatrix score;
  std::optional<FimMatrix> observed;
  std::vector<Vec> expected_scores;
};

// `observed` is left empty for models without a complete-data Hessian.
ConditionalFimReference mc_conditional_fim(const LatentModel& model, const Dataset& data, const Vec& theta,
                                           std::size_t draws, std::uint64_t seed, int thin = 5,
                                           int burn_in = 2000, int threads = 1);

// iteration, gamma, theta_1..theta_p, fim_diag_1..fim_diag_p, then optional
// avg_fim_diag_*, louis_diag_*, pruned_mass columns.
void write_trajectory_csv(std::ostream& out, const std::vector<IterationRecord>& trajectory, bool pruned_mass = false);

}  // namespace latfim
