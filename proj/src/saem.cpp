#include "latfim/saem.hpp"

#include "latfim/csv.hpp"
#include "latfim/errors.hpp"
#include "latfim/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace latfim {

namespace {

// Stream tags, kept distinct so no two purposes share a random stream.
constexpr std::uint64_t kInitTag = 0x1A;
constexpr std::uint64_t kDrawTag = 0x5A;
constexpr std::uint64_t kReferenceTag = 0xC0;

constexpr int kAdaptWindow = 50;

}  // namespace

void StepSchedule::validate() const {
  if (burn_in < 0) throw Error(ErrorKind::config_error, "burn_in must be non-negative");
  if (!(burn_value > 0.0 && burn_value <= 1.0)) throw Error(ErrorKind::config_error, "burn-in step must lie in (0, 1]");
  if (!(exponent > 0.5 && exponent <= 1.0)) throw Error(ErrorKind::config_error, "step exponent must lie in (1/2, 1]");
}

double step_size(int k, const StepSchedule& schedule) {
  if (k < 1) throw Error(ErrorKind::config_error, "iterations are numbered from 1");
  if (k <= schedule.burn_in) return schedule.burn_value;
  return std::pow(static_cast<double>(k - schedule.burn_in), -schedule.exponent);
}

void SaemConfig::validate() const {
  schedule.validate();
  if (iterations < 1) throw Error(ErrorKind::config_error, "iterations must be at least 1");
  if (mh_transitions < 1) throw Error(ErrorKind::config_error, "mh_transitions must be at least 1");
  if (record_every < 1) throw Error(ErrorKind::config_error, "record_every must be at least 1");
  if (!(prune_epsilon >= 0.0 && prune_epsilon < 1.0)) throw Error(ErrorKind::config_error, "prune_epsilon must lie in [0, 1)");
  if (capacity < 1) throw Error(ErrorKind::config_error, "buffer capacity must be at least 1");
  if ((proposal_scales.array() < 0.0).any()) throw Error(ErrorKind::config_error, "proposal scales must be non-negative");
  if (louis && mode != SimulationMode::sample)
    throw Error(ErrorKind::config_error, "Louis recursions need sampled latent variables");
}

// ---- sampler ------------------------------------------------------------------

MhStep mh_transition(const LatentModel& model, const IndividualRecord& rec, const Latent& z, const Vec& theta,
                     const Vec& proposal_scales, Rng& rng) {
  if (proposal_scales.size() != z.size()) throw Error(ErrorKind::dimension_mismatch, "one proposal scale per latent coordinate");
  Latent proposal = z;
  for (Eigen::Index d = 0; d < z.size(); ++d) proposal(d) += proposal_scales(d) * rng.normal();
  const double log_ratio = model.complete_loglik(rec, proposal, theta) - model.complete_loglik(rec, z, theta);
  const double u = rng.uniform();
  if (std::isfinite(log_ratio) && (log_ratio >= 0.0 || std::log(u) < log_ratio)) return {proposal, true};
  return {z, false};
}

LatentSampler::LatentSampler(const LatentModel& model, const Dataset& data, const Vec& theta0, const SaemConfig& config)
    : model_(model), config_(config) {
  model.validate(theta0);
  scales_ = config.proposal_scales.size() > 0 ? config.proposal_scales : model.default_proposal_scales(theta0);
  if (static_cast<std::size_t>(scales_.size()) != model.latent_dim())
    throw Error(ErrorKind::dimension_mismatch, "one proposal scale per latent coordinate");
  z_.reserve(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) {
    Rng rng(config.seed, {kInitTag, i});
    z_.push_back(model.sample_latent_prior(data.records[i], theta0, rng));
  }
}

const LatentConfiguration& LatentSampler::draw(const Dataset& data, const Vec& theta, int k) {
  const auto kk = static_cast<std::uint64_t>(k);
  if (model_.sampler() == SamplerKind::exact) {
    for (std::size_t i = 0; i < data.n(); ++i) {
      Rng rng(config_.seed, {kDrawTag, kk, i});
      z_[i] = model_.sample_conditional(data.records[i], theta, rng);
    }
    return z_;
  }
  for (std::size_t i = 0; i < data.n(); ++i) {
    Rng rng(config_.seed, {kDrawTag, kk, i});
    for (int t = 0; t < config_.mh_transitions; ++t) {
      MhStep step = mh_transition(model_, data.records[i], z_[i], theta, scales_, rng);
      z_[i] = std::move(step.z);
      accepted_window_ += step.accepted;
      ++proposed_window_;
    }
  }
  // Scales move only during burn-in, so the chain is time-homogeneous afterwards.
  if (config_.adapt_proposals && k <= config_.schedule.burn_in && k % kAdaptWindow == 0 && proposed_window_ > 0) {
    const double rate = static_cast<double>(accepted_window_) / static_cast<double>(proposed_window_);
    if (rate < 0.3) scales_ *= 0.8;
    if (rate > 0.5) scales_ *= 1.25;
  }
  if (k % kAdaptWindow == 0 || k == config_.iterations) {
    accepted_total_ += accepted_window_;
    proposed_total_ += proposed_window_;
    accepted_window_ = proposed_window_ = 0;
  }
  return z_;
}

double LatentSampler::acceptance_rate() const {
  const long long acc = accepted_total_ + accepted_window_, prop = proposed_total_ + proposed_window_;
  return prop == 0 ? 1.0 : static_cast<double>(acc) / static_cast<double>(prop);
}

// ---- exponential-family SAEM ----------------------------------------------------

Vec individual_delta(const ExpoFamilyModel& model, const IndividualRecord& rec, const Vec& s_i, const Vec& theta) {
  return -model.dpsi(rec, theta) + model.dphi(rec, theta).transpose() * s_i;
}

FimMatrix delta_fim(const ExpoFamilyModel& model, const Dataset& data, std::span<const Vec> s, Provenance provenance,
                    Vec* theta_out) {
  const Vec theta = model.argmax_complete(data, s).theta;
  std::vector<Vec> deltas;
  deltas.reserve(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) deltas.push_back(individual_delta(model, data.records[i], s[i], theta));
  if (theta_out) *theta_out = theta;
  const FimMatrix f = score_outer_fim(deltas, model.param_names());
  return FimMatrix(f.matrix(), provenance, f.n(), f.names());
}

namespace {

void record_iteration(SaemState& state, const ExpoFamilyModel& model, const Dataset& data, const SaemConfig& config,
                      double gamma) {
  if (state.k % config.record_every != 0 && state.k != config.iterations) return;
  IterationRecord rec;
  rec.iteration = state.k;
  rec.gamma = gamma;
  rec.theta = state.theta;
  rec.fim_diag = delta_fim(model, data, state.s).matrix().diagonal();
  if (config.averaging && state.averaged_count > 0)
    rec.avg_fim_diag = delta_fim(model, data, state.s_bar).matrix().diagonal();
  if (config.louis) {
    Mat obs = Mat::Zero(state.theta.size(), state.theta.size());
    for (std::size_t i = 0; i < data.n(); ++i)
      obs -= state.louis_g[i] - state.louis_d[i] * state.louis_d[i].transpose();
    rec.louis_diag = obs.diagonal() / static_cast<double>(data.n());
  }
  state.trajectory.push_back(std::move(rec));
}

}  // namespace

SaemState init_saem(const ExpoFamilyModel& model, const Dataset& data, const SaemConfig& config,
                    LatentSampler& sampler) {
  SaemState state;
  state.theta = config.theta0 ? *config.theta0 : model.initial_estimate(data);
  model.validate(state.theta);
  const auto& z = sampler.current();
  for (std::size_t i = 0; i < data.n(); ++i) state.s.push_back(model.stats(data.records[i], z[i]));
  state.s_bar.assign(data.n(), Vec());
  if (config.louis) {
    const auto p = state.theta.size();
    state.louis_g.assign(data.n(), Mat::Zero(p, p));
    state.louis_d.assign(data.n(), Vec::Zero(p));
    if (!model.has_complete_hessian()) throw Error(ErrorKind::config_error, model.id() + " has no complete-data Hessian");
  }
  return state;
}

void saem_iteration(SaemState& state, const ExpoFamilyModel& model, const Dataset& data, const SaemConfig& config,
                    LatentSampler& sampler) {
  const int k = state.k + 1;
  const double gamma = step_size(k, config.schedule);
  const Vec theta_prev = state.theta;

  if (config.mode == SimulationMode::conditional_expectation) {
    for (std::size_t i = 0; i < data.n(); ++i)
      state.s[i] = (1.0 - gamma) * state.s[i] + gamma * model.conditional_expected_stats(data.records[i], theta_prev);
  } else {
    const auto& z = sampler.draw(data, theta_prev, k);
    for (std::size_t i = 0; i < data.n(); ++i) {
      const auto& rec = data.records[i];
      state.s[i] = (1.0 - gamma) * state.s[i] + gamma * model.stats(rec, z[i]);
      if (config.louis) {
        const Vec g = model.complete_score(rec, z[i], theta_prev);
        state.louis_g[i] = (1.0 - gamma) * state.louis_g[i] + gamma * (model.complete_hessian(rec, z[i], theta_prev) + g * g.transpose());
        state.louis_d[i] = (1.0 - gamma) * state.louis_d[i] + gamma * g;
      }
    }
  }

  const MaximizeResult m = model.argmax_complete(data, state.s);
  if (!m.theta.allFinite()) throw Error(ErrorKind::mstep_failure, "M-step produced non-finite parameters");
  state.theta = m.theta;
  state.clamped = state.clamped || m.clamped;
  state.k = k;

  if (config.averaging && k > config.schedule.burn_in) {
    ++state.averaged_count;
    const double inv = 1.0 / static_cast<double>(state.averaged_count);
    for (std::size_t i = 0; i < data.n(); ++i) {
      if (state.averaged_count == 1) state.s_bar[i] = state.s[i];
      else state.s_bar[i] += (state.s[i] - state.s_bar[i]) * inv;
    }
  }
  record_iteration(state, model, data, config, gamma);
}

namespace {

Vec tail_sd(const std::vector<IterationRecord>& traj) {
  if (traj.empty()) return {};
  const std::size_t start = traj.size() - std::max<std::size_t>(1, traj.size() / 10);
  const Eigen::Index p = traj.back().theta.size();
  Vec mean = Vec::Zero(p), m2 = Vec::Zero(p);
  double count = 0.0;
  for (std::size_t t = start; t < traj.size(); ++t) {
    count += 1.0;
    const Vec d = traj[t].theta - mean;
    mean += d / count;
    m2 += d.cwiseProduct(traj[t].theta - mean);
  }
  return count > 1.0 ? Vec((m2 / (count - 1.0)).cwiseSqrt()) : Vec(Vec::Zero(p));
}

}  // namespace

SaemResult run_saem(const ExpoFamilyModel& model, const Dataset& data, const SaemConfig& config) {
  config.validate();
  validate_dataset(data);
  const Vec theta0 = config.theta0 ? *config.theta0 : model.initial_estimate(data);
  SaemConfig cfg = config;
  cfg.theta0 = theta0;
  LatentSampler sampler(model, data, theta0, cfg);
  SaemState state = init_saem(model, data, cfg, sampler);
  for (int k = 1; k <= cfg.iterations; ++k) saem_iteration(state, model, data, cfg, sampler);

  SaemResult result;
  Vec theta_hat;
  result.fim = delta_fim(model, data, state.s, Provenance::sa_byproduct, &theta_hat);
  result.theta = model.make_params(theta_hat);
  if (cfg.averaging && state.averaged_count > 0) {
    Vec theta_avg;
    result.fim_averaged = delta_fim(model, data, state.s_bar, Provenance::sa_byproduct, &theta_avg);
    result.theta_averaged = model.make_params(theta_avg);
  }
  if (cfg.louis) {
    const Eigen::Index p = theta_hat.size();
    Mat obs = Mat::Zero(p, p);
    // Mean of G_i - D_i D_i^T, accumulated as a running mean.
    for (std::size_t i = 0; i < data.n(); ++i)
      obs += (-(state.louis_g[i] - state.louis_d[i] * state.louis_d[i].transpose()) - obs) / static_cast<double>(i + 1);
    result.louis = FimMatrix(obs, Provenance::louis_sa, data.n(), model.param_names());
  }
  result.diagnostics.acceptance_rate = sampler.acceptance_rate();
  result.diagnostics.clamped = state.clamped;
  result.diagnostics.theta_tail_sd = tail_sd(state.trajectory);
  result.trajectory = std::move(state.trajectory);
  return result;
}

FimMatrix louis_observed_fim_sa(const ExpoFamilyModel& model, const Dataset& data, SaemConfig config) {
  config.louis = true;
  config.mode = SimulationMode::sample;
  return *run_saem(model, data, config).louis;
}

// ---- Monte Carlo reference at fixed theta -------------------------------------------

ConditionalFimReference mc_conditional_fim(const LatentModel& model, const Dataset& data, const Vec& theta,
                                           std::size_t draws, std::uint64_t seed, int thin, int burn_in,
                                           int threads) {
  model.validate(theta);
  if (draws == 0 || thin < 1 || burn_in < 0) throw Error(ErrorKind::config_error, "invalid Monte Carlo settings");
  const Eigen::Index p = theta.size();
  const bool hessian = model.has_complete_hessian();
  std::vector<Vec> mean_g(data.n());
  std::vector<Mat> mean_louis(data.n());
  parallel_for(data.n(), threads, [&](std::size_t i) {
    const auto& rec = data.records[i];
    Rng rng(seed, {kReferenceTag, i});
    Vec g_acc = Vec::Zero(p);
    Mat l_acc = Mat::Zero(hessian ? p : 0, hessian ? p : 0);
    auto accumulate = [&](const Latent& z, double count) {
      const Vec g = model.complete_score(rec, z, theta);
      g_acc += (g - g_acc) / count;
      if (hessian) l_acc += (model.complete_hessian(rec, z, theta) + g * g.transpose() - l_acc) / count;
    };
    if (model.sampler() == SamplerKind::exact) {
      for (std::size_t d = 1; d <= draws; ++d) accumulate(model.sample_conditional(rec, theta, rng), static_cast<double>(d));
    } else {
      Latent z = model.sample_latent_prior(rec, theta, rng);
      Vec scales = model.default_proposal_scales(theta);
      long long acc = 0, prop = 0;
      for (int b = 1; b <= burn_in; ++b) {
        const MhStep step = mh_transition(model, rec, z, theta, scales, rng);
        z = step.z;
        acc += step.accepted;
        ++prop;
        if (b % kAdaptWindow == 0) {
          const double rate = static_cast<double>(acc) / static_cast<double>(prop);
          if (rate < 0.3) scales *= 0.8;
          if (rate > 0.5) scales *= 1.25;
          acc = prop = 0;
        }
      }
      for (std::size_t d = 1; d <= draws; ++d) {
        for (int t = 0; t < thin; ++t) z = mh_transition(model, rec, z, theta, scales, rng).z;
        accumulate(z, static_cast<double>(d));
      }
    }
    mean_g[i] = std::move(g_acc);
    mean_louis[i] = std::move(l_acc);
  });
  ConditionalFimReference out{score_outer_fim(mean_g, model.param_names()), std::nullopt, mean_g};
  out.score = FimMatrix(out.score.matrix(), Provenance::mc_reference, data.n(), model.param_names());
  if (hessian) {
    Mat obs = Mat::Zero(p, p);
    for (std::size_t i = 0; i < data.n(); ++i)
      obs += (-(mean_louis[i] - mean_g[i] * mean_g[i].transpose()) - obs) / static_cast<double>(i + 1);
    out.observed = FimMatrix(obs, Provenance::mc_reference, data.n(), model.param_names());
  }
  return out;
}

void write_trajectory_csv(std::ostream& out, const std::vector<IterationRecord>& trajectory, bool pruned_mass) {
  CsvWriter w(out);
  if (trajectory.empty()) {
    w.row({"iteration", "gamma"});
    return;
  }
  const auto& first = trajectory.front();
  const auto& last = trajectory.back();
  const Eigen::Index p = first.theta.size();
  const bool avg = std::any_of(trajectory.begin(), trajectory.end(), [](const auto& r) { return r.avg_fim_diag.size() > 0; });
  const bool louis = last.louis_diag.size() > 0;
  w.field("iteration").field("gamma");
  for (Eigen::Index l = 0; l < p; ++l) w.field("theta_" + std::to_string(l + 1));
  for (Eigen::Index l = 0; l < p; ++l) w.field("fim_diag_" + std::to_string(l + 1));
  if (avg)
    for (Eigen::Index l = 0; l < p; ++l) w.field("avg_fim_diag_" + std::to_string(l + 1));
  if (louis)
    for (Eigen::Index l = 0; l < p; ++l) w.field("louis_diag_" + std::to_string(l + 1));
  if (pruned_mass) w.field("pruned_mass");
  w.end_row();
  for (const auto& r : trajectory) {
    w.field(r.iteration).field(r.gamma);
    for (Eigen::Index l = 0; l < p; ++l) w.field(r.theta(l));
    for (Eigen::Index l = 0; l < p; ++l) w.field(r.fim_diag(l));
    if (avg)
      for (Eigen::Index l = 0; l < p; ++l) {
        if (r.avg_fim_diag.size() > 0) w.field(r.avg_fim_diag(l));
        else w.empty();
      }
    if (louis)
      for (Eigen::Index l = 0; l < p; ++l) w.field(r.louis_diag(l));
    if (pruned_mass) w.field(r.pruned_mass);
    w.end_row();
  }
}

}  // namespace latfim
